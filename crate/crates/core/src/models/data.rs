use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::ModelError;
use crate::linalg::Matrix;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MinibatchSchedule {
    pub size: usize,
    pub shuffle_seed: u64,
}

/// Supervised training pairs, one row per data element.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<S> {
    pub inputs: Matrix<S>,
    pub targets: Matrix<S>,
    pub minibatch: Option<MinibatchSchedule>,
}

impl<S: Scalar> Dataset<S> {
    pub fn new(inputs: Matrix<S>, targets: Matrix<S>) -> Result<Self, ModelError> {
        let d = Self {
            inputs,
            targets,
            minibatch: None,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn with_minibatch(mut self, schedule: MinibatchSchedule) -> Result<Self, ModelError> {
        self.minibatch = Some(schedule);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.inputs.rows() != self.targets.rows() {
            return Err(ModelError::Config(format!(
                "{} input rows but {} target rows",
                self.inputs.rows(),
                self.targets.rows()
            )));
        }
        if let Some(mb) = self.minibatch {
            if mb.size == 0 || mb.size > self.len() {
                return Err(ModelError::Config(format!(
                    "minibatch size {} not in 1..={}",
                    mb.size,
                    self.len()
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Copy with rows reordered by `order`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        let pick = |m: &Matrix<S>| {
            let rows: Vec<Vec<S>> = order.iter().map(|&i| m.row(i).to_vec()).collect();
            if rows.is_empty() {
                Matrix::zeros(0, m.cols())
            } else {
                Matrix::from_rows(&rows)
            }
        };
        Self {
            inputs: pick(&self.inputs),
            targets: pick(&self.targets),
            minibatch: self.minibatch,
        }
    }
}

/// Epoch-based minibatch index stream: each epoch is a fresh permutation,
/// cut into consecutive batches; a trailing partial batch is dropped.
#[derive(Clone, Debug)]
pub struct MinibatchStream {
    n: usize,
    size: usize,
    order: Vec<usize>,
    cursor: usize,
    rng: ChaCha8Rng,
}

impl MinibatchStream {
    pub fn new(n: usize, schedule: MinibatchSchedule) -> Self {
        assert!(schedule.size >= 1 && schedule.size <= n, "minibatch size out of range");
        let mut s = Self {
            n,
            size: schedule.size,
            order: (0..n).collect(),
            cursor: n,
            rng: ChaCha8Rng::seed_from_u64(schedule.shuffle_seed),
        };
        s.reshuffle();
        s
    }

    fn reshuffle(&mut self) {
        self.order = (0..self.n).collect();
        self.order.shuffle(&mut self.rng);
        self.cursor = 0;
    }

    pub fn next_batch(&mut self) -> &[usize] {
        if self.cursor + self.size > self.n {
            self.reshuffle();
        }
        let b = &self.order[self.cursor..self.cursor + self.size];
        self.cursor += self.size;
        b
    }
}
