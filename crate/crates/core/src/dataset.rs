//! Embedding dataset container: per-sample global and local features plus
//! observed labels and optional ground truth (evaluation only).

use crate::error::{Error, Result};
use crate::matrix::{Matrix, Vector};

/// One sample's features: a global `d`-vector and an `L x d` patch map.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleFeatures {
    pub global: Vector,
    pub local: Matrix,
}

impl SampleFeatures {
    pub fn new(global: Vector, local: Matrix) -> Result<Self> {
        if local.cols() != global.len() {
            return Err(Error::DimensionMismatch {
                left: (1, global.len()),
                right: local.shape(),
            });
        }
        if local.rows() == 0 {
            return Err(Error::ValidationError {
                message: "local feature map needs at least one patch".to_string(),
            });
        }
        Ok(Self { global, local })
    }
}

/// A dataset of `D` samples over `num_classes` classes.
///
/// `truth` carries ground-truth labels for evaluation and never feeds
/// training; `labels` are the observed (possibly noisy) labels.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingDataset {
    pub num_classes: usize,
    pub dim: usize,
    pub patches: usize,
    pub samples: Vec<SampleFeatures>,
    pub labels: Vec<usize>,
    pub truth: Option<Vec<usize>>,
}

impl EmbeddingDataset {
    pub fn new(
        num_classes: usize,
        dim: usize,
        patches: usize,
        samples: Vec<SampleFeatures>,
        labels: Vec<usize>,
        truth: Option<Vec<usize>>,
    ) -> Result<Self> {
        let ds = Self {
            num_classes,
            dim,
            patches,
            samples,
            labels,
            truth,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Checks geometry and label ranges for the whole dataset.
    pub fn validate(&self) -> Result<()> {
        if self.labels.len() != self.samples.len() {
            return Err(Error::LengthMismatch {
                left: self.labels.len(),
                right: self.samples.len(),
            });
        }
        if let Some(truth) = &self.truth {
            if truth.len() != self.samples.len() {
                return Err(Error::LengthMismatch {
                    left: truth.len(),
                    right: self.samples.len(),
                });
            }
            if let Some(&bad) = truth.iter().find(|l| **l >= self.num_classes) {
                return Err(Error::LabelOutOfRange {
                    label: bad,
                    num_classes: self.num_classes,
                });
            }
        }
        if let Some(&bad) = self.labels.iter().find(|l| **l >= self.num_classes) {
            return Err(Error::LabelOutOfRange {
                label: bad,
                num_classes: self.num_classes,
            });
        }
        for (i, s) in self.samples.iter().enumerate() {
            if s.global.len() != self.dim || s.local.shape() != (self.patches, self.dim) {
                return Err(Error::ValidationError {
                    message: format!(
                        "sample {i} geometry {:?}/{} does not match dataset ({}, {})",
                        s.local.shape(),
                        s.global.len(),
                        self.patches,
                        self.dim
                    ),
                });
            }
        }
        Ok(())
    }

    /// Stacks the global features into a `D x d` matrix.
    pub fn globals_matrix(&self) -> Matrix {
        let mut data = Vec::with_capacity(self.len() * self.dim);
        for s in &self.samples {
            data.extend_from_slice(s.global.as_slice());
        }
        Matrix::from_vec(self.len(), self.dim, data).expect("finite by construction")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(dim: usize, patches: usize) -> SampleFeatures {
        SampleFeatures::new(
            Vector::filled(dim, 1.0),
            Matrix::filled(patches, dim, 1.0),
        )
        .unwrap()
    }

    #[test]
    fn rejects_label_out_of_range() {
        let err = EmbeddingDataset::new(2, 3, 2, vec![sample(3, 2)], vec![2], None).unwrap_err();
        assert!(matches!(err, Error::LabelOutOfRange { label: 2, .. }));
    }

    #[test]
    fn rejects_geometry_mismatch() {
        let err =
            EmbeddingDataset::new(2, 4, 2, vec![sample(3, 2)], vec![0], None).unwrap_err();
        assert!(matches!(err, Error::ValidationError { .. }));
    }

    #[test]
    fn accepts_consistent_dataset() {
        let ds = EmbeddingDataset::new(
            2,
            3,
            2,
            vec![sample(3, 2), sample(3, 2)],
            vec![0, 1],
            Some(vec![0, 0]),
        )
        .unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.globals_matrix().shape(), (2, 3));
    }
}
