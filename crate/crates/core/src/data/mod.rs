//! Datasets: synthetic toy tasks, delimited tabular files, and the on-disk
//! dataset format with its key-value sidecar.

mod io;
mod tabular;
mod toy;

pub use io::{read_dataset, read_sidecar, sidecar_path, write_dataset, Sidecar};
pub use tabular::{load_tabular, split_indices, ColumnStats, TabularDataset, TRAIN_FRACTION};
pub use toy::{ToyTask, EVAL_CONDITIONS, HALF_GAUSSIAN_SCALE, TOY_RANGE};

use crate::error::{DdnError, Result};

/// Row-major features and targets.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    input_dim: usize,
    target_dim: usize,
    features: Vec<f64>,
    targets: Vec<f64>,
}

impl Dataset {
    pub fn new(input_dim: usize, target_dim: usize, features: Vec<f64>, targets: Vec<f64>) -> Result<Self> {
        if input_dim == 0 || target_dim == 0 {
            return Err(DdnError::dim("datasets need at least one feature and one target"));
        }
        if features.len() % input_dim != 0
            || targets.len() % target_dim != 0
            || features.len() / input_dim != targets.len() / target_dim
        {
            return Err(DdnError::dim("feature and target row counts differ"));
        }
        if features.iter().chain(&targets).any(|v| !v.is_finite()) {
            return Err(DdnError::Numeric("dataset contains non-finite values".into()));
        }
        Ok(Self {
            input_dim,
            target_dim,
            features,
            targets,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn target_dim(&self) -> usize {
        self.target_dim
    }

    pub fn len(&self) -> usize {
        self.features.len() / self.input_dim
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn x(&self, row: usize) -> &[f64] {
        &self.features[row * self.input_dim..(row + 1) * self.input_dim]
    }

    pub fn y(&self, row: usize) -> &[f64] {
        &self.targets[row * self.target_dim..(row + 1) * self.target_dim]
    }

    pub fn subset(&self, rows: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(rows.len() * self.input_dim);
        let mut targets = Vec::with_capacity(rows.len() * self.target_dim);
        for &r in rows {
            features.extend_from_slice(self.x(r));
            targets.extend_from_slice(self.y(r));
        }
        Dataset {
            input_dim: self.input_dim,
            target_dim: self.target_dim,
            features,
            targets,
        }
    }

    /// Per-dimension `(min, max)` of the targets.
    pub fn target_bounds(&self) -> Vec<(f64, f64)> {
        (0..self.target_dim)
            .map(|j| {
                self.targets
                    .iter()
                    .skip(j)
                    .step_by(self.target_dim)
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
            })
            .collect()
    }

    /// `(floor(min) - 1, ceil(max) + 1)` per target dimension.
    pub fn padded_ranges(&self) -> Vec<(f64, f64)> {
        self.target_bounds()
            .into_iter()
            .map(|(lo, hi)| (lo.floor() - 1.0, hi.ceil() + 1.0))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_and_ranges() {
        let d = Dataset::new(1, 2, vec![0.1, 0.2, 0.3], vec![1.5, -2.0, 0.0, 3.2, -0.4, 0.9]).unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.y(1), &[0.0, 3.2]);
        assert_eq!(d.padded_ranges(), vec![(-2.0, 3.0), (-3.0, 5.0)]);
        assert_eq!(d.subset(&[2, 0]).features(), &[0.3, 0.1]);
        assert!(Dataset::new(1, 2, vec![0.1], vec![1.0]).is_err());
        assert!(Dataset::new(1, 1, vec![f64::NAN], vec![1.0]).is_err());
    }
}
