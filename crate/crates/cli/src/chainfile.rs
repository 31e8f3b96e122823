//! Binary chain files.
//!
//! Layout, all integers little-endian:
//!
//! | bytes | field |
//! |---|---|
//! | 0..8 | magic `DBCHAIN\0` |
//! | 8..12 | format version (u32) |
//! | 12..16 | flags (u32, reserved, zero) |
//! | 16..64 | `n_w`, `n_kept`, `seed`, `burn_in`, `accepted`, `kv_len` (u64 each) |
//!
//! followed by `kv_len` bytes of `key=value` lines, `n_kept · n_w` f64
//! samples in row order, and a SHA-256 of everything before it.

use std::path::Path;

use deskbayes::linalg::Matrix;
use deskbayes::Chain;
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const MAGIC: &[u8; 8] = b"DBCHAIN\0";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 64;
const DIGEST_LEN: usize = 32;

const RESERVED: [&str; 3] = ["divergences", "grad_evals", "step_size"];

pub fn encode_chain(chain: &Chain) -> Vec<u8> {
    let mut kv = String::new();
    for (k, v) in &chain.config {
        if !RESERVED.contains(&k.as_str()) {
            kv.push_str(&format!("{k}={v}\n"));
        }
    }
    kv.push_str(&format!("divergences={}\n", chain.divergences));
    kv.push_str(&format!("grad_evals={}\n", chain.grad_evals));
    kv.push_str(&format!("step_size={:?}\n", chain.step_size));

    let mut out = Vec::with_capacity(HEADER_LEN + kv.len() + chain.samples.as_slice().len() * 8 + DIGEST_LEN);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    let fields = [
        chain.dim() as u64,
        chain.n_kept() as u64,
        chain.seed,
        chain.burn_in as u64,
        chain.accepted as u64,
        kv.len() as u64,
    ];
    for v in fields {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(kv.as_bytes());
    for &x in chain.samples.as_slice() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

fn corrupt(path: &Path, msg: impl std::fmt::Display) -> CliError {
    CliError::Validation(format!("{}: {msg}", path.display()))
}

/// Decodes a chain file. Energy errors are not stored and come back empty.
pub fn decode_chain(bytes: &[u8], path: &Path) -> Result<Chain, CliError> {
    if bytes.len() < 8 || &bytes[..8] != MAGIC {
        return Err(corrupt(path, "unrecognised format"));
    }
    if bytes.len() < HEADER_LEN + DIGEST_LEN {
        return Err(corrupt(path, "integrity check failed: file is truncated"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let version = u32_at(8);
    if version != VERSION {
        return Err(corrupt(path, format!("format version {version}, expected {VERSION}")));
    }
    let (n_w, n_kept, seed, burn_in, accepted, kv_len) =
        (u64_at(16), u64_at(24), u64_at(32), u64_at(40), u64_at(48), u64_at(56));
    let body = n_w
        .checked_mul(n_kept)
        .and_then(|n| n.checked_mul(8))
        .and_then(|n| n.checked_add(kv_len))
        .and_then(|n| n.checked_add((HEADER_LEN + DIGEST_LEN) as u64));
    if body != Some(bytes.len() as u64) {
        return Err(corrupt(path, "integrity check failed: length does not match header"));
    }
    let split = bytes.len() - DIGEST_LEN;
    if Sha256::digest(&bytes[..split]).as_slice() != &bytes[split..] {
        return Err(corrupt(path, "integrity check failed: checksum mismatch"));
    }
    let kv_end = HEADER_LEN + kv_len as usize;
    let kv = std::str::from_utf8(&bytes[HEADER_LEN..kv_end]).map_err(|_| corrupt(path, "config block is not UTF-8"))?;
    let mut config = Vec::new();
    let (mut divergences, mut grad_evals, mut step_size) = (0, 0, f64::NAN);
    for line in kv.lines() {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| corrupt(path, format!("bad config line `{line}`")))?;
        let bad = || corrupt(path, format!("bad value for {k}"));
        match k {
            "divergences" => divergences = v.parse().map_err(|_| bad())?,
            "grad_evals" => grad_evals = v.parse().map_err(|_| bad())?,
            "step_size" => step_size = v.parse().map_err(|_| bad())?,
            _ => config.push((k.to_string(), v.to_string())),
        }
    }
    let samples: Vec<f64> = bytes[kv_end..split]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Chain {
        samples: Matrix::from_vec(n_kept as usize, n_w as usize, samples),
        accepted: accepted as usize,
        burn_in: burn_in as usize,
        seed,
        config,
        energy_errors: Vec::new(),
        divergences,
        grad_evals,
        step_size,
    })
}

pub fn save_chain(chain: &Chain, path: &Path) -> Result<(), CliError> {
    std::fs::write(path, encode_chain(chain)).map_err(|e| CliError::io(path, e))
}

pub fn load_chain(path: &Path) -> Result<Chain, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    decode_chain(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain() -> Chain {
        Chain {
            samples: Matrix::from_vec(3, 2, vec![1.0, 2.0, 3.0, -4.5, 5.0, 6.25]),
            accepted: 2,
            burn_in: 10,
            seed: u64::MAX - 3,
            config: vec![("kernel".into(), "hmc".into()), ("n_leapfrog".into(), "10".into())],
            energy_errors: Vec::new(),
            divergences: 1,
            grad_evals: 33,
            step_size: 0.125,
        }
    }

    #[test]
    fn roundtrip() {
        let c = chain();
        let bytes = encode_chain(&c);
        assert_eq!(decode_chain(&bytes, Path::new("t")).unwrap(), c);
    }

    #[test]
    fn rejects_damage() {
        let bytes = encode_chain(&chain());
        let p = Path::new("t");
        assert!(decode_chain(b"", p).unwrap_err().to_string().contains("unrecognised"));
        assert!(decode_chain(b"PK\x03\x04rest", p)
            .unwrap_err()
            .to_string()
            .contains("unrecognised"));
        assert!(decode_chain(&bytes[..bytes.len() - 9], p)
            .unwrap_err()
            .to_string()
            .contains("integrity"));
        let mut flipped = bytes.clone();
        flipped[HEADER_LEN + 3] ^= 1;
        assert!(decode_chain(&flipped, p).unwrap_err().to_string().contains("integrity"));
        let mut v2 = bytes;
        v2[8] = 2;
        assert!(decode_chain(&v2, p).unwrap_err().to_string().contains("version"));
    }
}
