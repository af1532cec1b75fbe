//! Multi-domain datasets: the rotating synthetic generator, IDX ingestion and
//! labeled-pool bookkeeping.

mod idx;
mod pool;
mod rotating;

pub use idx::{
    load_idx, read_idx_images, read_idx_labels, rotate_image, write_idx_images, write_idx_labels, IdxDataset,
};
pub use pool::{init_pool, LabeledPool};
pub use rotating::{gen_rotating, rotated_idx_domains, BaseShape, RotatingSpec};

use ndarray::{Array2, ArrayView1, ArrayView2};

use crate::error::{MudalError, Result};

/// One original domain: train samples (labels hidden behind [`LabeledPool`])
/// and a test split.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainData {
    pub train_x: Array2<f64>,
    train_y: Vec<usize>,
    pub test_x: Array2<f64>,
    pub test_y: Vec<usize>,
    /// Rotation applied to each train / test sample, in degrees.
    pub train_angles: Vec<f64>,
    pub test_angles: Vec<f64>,
}

impl DomainData {
    pub fn new(train_x: Array2<f64>, train_y: Vec<usize>, test_x: Array2<f64>, test_y: Vec<usize>) -> Result<Self> {
        let (nt, ne) = (train_x.nrows(), test_x.nrows());
        Self::with_angles(train_x, train_y, test_x, test_y, vec![0.0; nt], vec![0.0; ne])
    }

    pub fn with_angles(
        train_x: Array2<f64>,
        train_y: Vec<usize>,
        test_x: Array2<f64>,
        test_y: Vec<usize>,
        train_angles: Vec<f64>,
        test_angles: Vec<f64>,
    ) -> Result<Self> {
        if train_x.nrows() != train_y.len() || test_x.nrows() != test_y.len() {
            return Err(MudalError::shape("DomainData", "one label per row", "ragged split"));
        }
        if train_angles.len() != train_y.len() || test_angles.len() != test_y.len() {
            return Err(MudalError::shape("DomainData", "one angle per row", "ragged angles"));
        }
        if train_x.ncols() != test_x.ncols() {
            return Err(MudalError::shape("DomainData", train_x.ncols(), test_x.ncols()));
        }
        Ok(Self {
            train_x,
            train_y,
            test_x,
            test_y,
            train_angles,
            test_angles,
        })
    }

    pub fn n_train(&self) -> usize {
        self.train_y.len()
    }

    pub fn n_test(&self) -> usize {
        self.test_y.len()
    }
}

/// `N` domains sharing one feature space and one label space.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiDomainDataset {
    domains: Vec<DomainData>,
    feature_dim: usize,
    n_classes: usize,
}

impl MultiDomainDataset {
    pub fn new(domains: Vec<DomainData>, n_classes: usize) -> Result<Self> {
        let first = domains
            .first()
            .ok_or_else(|| MudalError::invalid("a dataset needs at least one domain"))?;
        let feature_dim = first.train_x.ncols();
        for (i, d) in domains.iter().enumerate() {
            if d.train_x.ncols() != feature_dim {
                return Err(MudalError::shape(
                    "MultiDomainDataset",
                    feature_dim,
                    format!("domain {i}: {}", d.train_x.ncols()),
                ));
            }
            if d.train_y.iter().chain(&d.test_y).any(|&y| y >= n_classes) {
                return Err(MudalError::invalid(format!(
                    "domain {i} has a label outside 0..{n_classes}"
                )));
            }
            if d.n_train() == 0 {
                return Err(MudalError::invalid(format!("domain {i} has no training data")));
            }
        }
        Ok(Self {
            domains,
            feature_dim,
            n_classes,
        })
    }

    pub fn n_domains(&self) -> usize {
        self.domains.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn domain(&self, i: usize) -> &DomainData {
        &self.domains[i]
    }

    pub fn domains(&self) -> &[DomainData] {
        &self.domains
    }

    pub fn train_features(&self, i: usize) -> ArrayView2<'_, f64> {
        self.domains[i].train_x.view()
    }

    pub fn train_row(&self, i: usize, idx: usize) -> ArrayView1<'_, f64> {
        self.domains[i].train_x.row(idx)
    }

    /// The annotator: true label of train sample `idx` in domain `i`.
    /// Training code only sees labels that went through [`LabeledPool::reveal`].
    pub fn annotate(&self, i: usize, idx: usize) -> usize {
        self.domains[i].train_y[idx]
    }

    /// Gather train rows of domain `i`.
    pub fn gather_train(&self, i: usize, indices: &[usize]) -> Array2<f64> {
        self.domains[i].train_x.select(ndarray::Axis(0), indices)
    }
}
