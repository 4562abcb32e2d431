//! Datasets: IDX-format MNIST loading and synthetic multi-term tasks.

mod idx;
mod synthetic;

pub use idx::{
    load_mnist_pair, read_idx_images, read_idx_labels, write_idx_images, write_idx_labels,
};
pub use synthetic::{make_unbalanced_quadratics, SyntheticTask};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Labeled classification data: inputs scaled to [0,1], labels in
/// `[0, num_classes)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub inputs: Matrix,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub split: Split,
}

impl Dataset {
    pub fn new(inputs: Matrix, labels: Vec<usize>, num_classes: usize, split: Split) -> Result<Self> {
        if inputs.rows() == 0 {
            return Err(Error::InvalidConfig("empty dataset".into()));
        }
        if inputs.rows() != labels.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} input rows but {} labels",
                inputs.rows(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::InvalidConfig(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        if !inputs.data().iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("dataset inputs".into()));
        }
        Ok(Dataset {
            inputs,
            labels,
            num_classes,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.inputs.cols()
    }
}
