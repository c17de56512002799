use serde::{Deserialize, Serialize};

use crate::linalg::Matrix;
use crate::{Error, Result};

/// Per-frequency signals recorded over training steps.
///
/// Row `t` holds the signals at `steps[t]`; column `i` is frequency `i + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalTrajectory {
    n_freq: usize,
    steps: Vec<usize>,
    values: Vec<f64>,
}

impl SignalTrajectory {
    pub fn new(n_freq: usize) -> Self {
        SignalTrajectory {
            n_freq,
            steps: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Build from step indices and a `T×N_c` matrix.
    pub fn from_matrix(steps: Vec<usize>, x: &Matrix) -> Result<Self> {
        if steps.len() != x.rows() {
            return Err(Error::domain(format!(
                "{} steps for a trajectory of {} rows",
                steps.len(),
                x.rows()
            )));
        }
        let mut traj = SignalTrajectory::new(x.cols());
        for (i, &s) in steps.iter().enumerate() {
            traj.push(s, x.row(i))?;
        }
        Ok(traj)
    }

    /// Append one record. Steps must be strictly increasing and values finite.
    pub fn push(&mut self, step: usize, signals: &[f64]) -> Result<()> {
        if signals.len() != self.n_freq {
            return Err(Error::domain(format!(
                "expected {} signals, got {}",
                self.n_freq,
                signals.len()
            )));
        }
        if let Some(&last) = self.steps.last() {
            if step <= last {
                return Err(Error::domain(format!("step {step} does not follow {last}")));
            }
        }
        if let Some(x) = signals.iter().find(|x| !x.is_finite()) {
            return Err(Error::numeric(format!("non-finite signal {x} at step {step}")));
        }
        self.steps.push(step);
        self.values.extend_from_slice(signals);
        Ok(())
    }

    pub fn n_freq(&self) -> usize {
        self.n_freq
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn steps(&self) -> &[usize] {
        &self.steps
    }

    /// Signals at record index `t`.
    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.n_freq..(t + 1) * self.n_freq]
    }

    pub fn first(&self) -> Option<&[f64]> {
        (!self.is_empty()).then(|| self.row(0))
    }

    pub fn last(&self) -> Option<&[f64]> {
        (!self.is_empty()).then(|| self.row(self.len() - 1))
    }

    /// Record index of a step.
    pub fn index_of(&self, step: usize) -> Option<usize> {
        self.steps.binary_search(&step).ok()
    }

    /// Signals at a recorded step.
    pub fn at_step(&self, step: usize) -> Option<&[f64]> {
        self.index_of(step).map(|t| self.row(t))
    }

    /// Time series of frequency `k` (1-based).
    pub fn series(&self, k: usize) -> Vec<f64> {
        (0..self.len()).map(|t| self.row(t)[k - 1]).collect()
    }

    pub fn as_matrix(&self) -> Matrix {
        Matrix::from_vec(self.len(), self.n_freq, self.values.clone())
    }

    /// Records with `lo <= step <= hi`.
    pub fn window(&self, lo: usize, hi: usize) -> SignalTrajectory {
        let mut out = SignalTrajectory::new(self.n_freq);
        for t in 0..self.len() {
            let s = self.steps[t];
            if s >= lo && s <= hi {
                out.steps.push(s);
                out.values.extend_from_slice(self.row(t));
            }
        }
        out
    }
}
