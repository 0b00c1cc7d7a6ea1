//! Per-modality item feature matrices, stored on disk as CMF1.

use std::path::Path;

use super::Modality;
use crate::cmf;
use crate::dense::DenseMatrix;
use crate::error::{Error, Result};

/// Frozen item feature matrix for one content modality. Row i holds the
/// features of item index i in the paired interaction table.
#[derive(Clone, Debug)]
pub struct FeatureMatrix {
    pub modality: Modality,
    pub matrix: DenseMatrix,
}

impl FeatureMatrix {
    pub fn new(modality: Modality, matrix: DenseMatrix) -> Self {
        Self { modality, matrix }
    }

    pub fn rows(&self) -> usize {
        self.matrix.rows()
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }
}

pub fn load_features(path: &Path, expected_items: usize, modality: Modality) -> Result<FeatureMatrix> {
    let matrix = cmf::read_matrix(path)?;
    if matrix.rows() != expected_items {
        return Err(Error::Alignment(format!(
            "{}: {} feature rows but the dataset has {} items",
            path.display(),
            matrix.rows(),
            expected_items
        )));
    }
    if !matrix.all_finite() {
        return Err(Error::Data(format!(
            "{}: feature matrix contains NaN or infinite values",
            path.display()
        )));
    }
    Ok(FeatureMatrix { modality, matrix })
}

pub fn save_features(path: &Path, features: &FeatureMatrix) -> Result<()> {
    cmf::write_matrix(path, &features.matrix)
}
