//! CSV readers for training data and calibration inputs.

use std::path::Path;

use deskbayes::linalg::Matrix;
use deskbayes::Dataset;

use crate::error::CliError;

fn invalid(path: &Path, msg: impl std::fmt::Display) -> CliError {
    CliError::Validation(format!("{}: {msg}", path.display()))
}

/// Numeric table with named columns.
struct Table {
    header: Vec<String>,
    rows: Vec<Vec<f64>>,
}

fn read_table(path: &Path) -> Result<Table, CliError> {
    let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| invalid(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.is_empty() || header.iter().all(String::is_empty) {
        return Err(invalid(path, "missing header row"));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| invalid(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != header.len() {
            return Err(invalid(
                path,
                format!("line {line}: {} fields, header has {}", rec.len(), header.len()),
            ));
        }
        let mut row = Vec::with_capacity(rec.len());
        for (field, name) in rec.iter().zip(&header) {
            let v: f64 = field
                .parse()
                .map_err(|_| invalid(path, format!("line {line}: column {name}: `{field}` is not a number")))?;
            if !v.is_finite() {
                return Err(invalid(path, format!("line {line}: column {name}: non-finite value")));
            }
            row.push(v);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(invalid(path, "no data rows"));
    }
    Ok(Table { header, rows })
}

/// Loads a dataset whose columns are named `x_*` (inputs) and `y_*`
/// (targets), each group kept in header order.
pub fn load_dataset_csv(path: &Path) -> Result<Dataset, CliError> {
    let t = read_table(path)?;
    let xs: Vec<usize> = (0..t.header.len()).filter(|&i| t.header[i].starts_with("x_")).collect();
    let ys: Vec<usize> = (0..t.header.len()).filter(|&i| t.header[i].starts_with("y_")).collect();
    if let Some(bad) = t.header.iter().find(|h| !h.starts_with("x_") && !h.starts_with("y_")) {
        return Err(invalid(path, format!("column `{bad}` is neither x_* nor y_*")));
    }
    if xs.is_empty() {
        return Err(invalid(path, "no x_ columns"));
    }
    if ys.is_empty() {
        return Err(invalid(path, "no y_ columns"));
    }
    let pick = |cols: &[usize]| {
        let data: Vec<f64> = t.rows.iter().flat_map(|r| cols.iter().map(move |&c| r[c])).collect();
        Matrix::from_vec(t.rows.len(), cols.len(), data)
    };
    Dataset::new(pick(&xs), pick(&ys)).map_err(|e| invalid(path, e))
}

/// Loads `prob,label` rows; labels must be 0 or 1 and probabilities in [0, 1].
pub fn load_probabilities_csv(path: &Path) -> Result<(Vec<f64>, Vec<bool>), CliError> {
    let t = read_table(path)?;
    let col = |name: &str| {
        t.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| invalid(path, format!("missing `{name}` column")))
    };
    let (pc, lc) = (col("prob")?, col("label")?);
    let mut probs = Vec::with_capacity(t.rows.len());
    let mut labels = Vec::with_capacity(t.rows.len());
    for (i, r) in t.rows.iter().enumerate() {
        let (p, l) = (r[pc], r[lc]);
        if !(0.0..=1.0).contains(&p) {
            return Err(invalid(path, format!("row {}: probability {p} outside [0, 1]", i + 1)));
        }
        if l != 0.0 && l != 1.0 {
            return Err(invalid(path, format!("row {}: label {l} is not 0 or 1", i + 1)));
        }
        probs.push(p);
        labels.push(l == 1.0);
    }
    Ok((probs, labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn columns_split_by_prefix() {
        let f = write("x_a,y_0,x_b\n1,2,3\n4,5,6\n");
        let d = load_dataset_csv(f.path()).unwrap();
        assert_eq!(d.inputs.row(1), &[4.0, 6.0]);
        assert_eq!(d.targets.row(0), &[2.0]);
    }

    #[test]
    fn bad_rows_report_line() {
        let f = write("x_0,y_0\n1,2\n1,abc\n");
        let e = load_dataset_csv(f.path()).unwrap_err().to_string();
        assert!(e.contains("line 3"), "{e}");
        let f = write("x_0,y_0\n1,2,3\n");
        assert!(load_dataset_csv(f.path()).unwrap_err().to_string().contains("line 2"));
        let f = write("x_0,y_0\n1,NaN\n");
        assert!(load_dataset_csv(f.path()).is_err());
    }

    #[test]
    fn empty_and_targetless_rejected() {
        assert!(load_dataset_csv(write("x_0,y_0\n").path())
            .unwrap_err()
            .to_string()
            .contains("no data rows"));
        assert!(load_dataset_csv(write("x_0,x_1\n1,2\n").path())
            .unwrap_err()
            .to_string()
            .contains("no y_"));
    }

    #[test]
    fn probabilities() {
        let (p, l) = load_probabilities_csv(write("prob,label\n0.2,0\n0.9,1\n").path()).unwrap();
        assert_eq!(p, vec![0.2, 0.9]);
        assert_eq!(l, vec![false, true]);
        assert!(load_probabilities_csv(write("prob,label\n1.2,0\n").path()).is_err());
        assert!(load_probabilities_csv(write("prob,label\n0.2,2\n").path()).is_err());
    }
}
