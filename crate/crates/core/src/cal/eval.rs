use ndarray::ArrayView2;

use super::bundle::ModelBundle;
use crate::data::MultiDomainDataset;
use crate::error::{MudalError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub per_domain: Vec<f64>,
    /// Unweighted mean of `per_domain`.
    pub average: f64,
}

pub fn accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(MudalError::shape("accuracy", truth.len(), pred.len()));
    }
    if truth.is_empty() {
        return Err(MudalError::invalid("accuracy of an empty set"));
    }
    Ok(pred.iter().zip(truth).filter(|(a, b)| a == b).count() as f64 / truth.len() as f64)
}

/// Accuracy of `h ∘ e` on `x`.
pub fn accuracy_on(bundle: &ModelBundle, x: ArrayView2<f64>, y: &[usize]) -> Result<f64> {
    accuracy(&bundle.predict(x)?, y)
}

/// Per-domain and average test accuracy.
pub fn evaluate(bundle: &ModelBundle, dataset: &MultiDomainDataset) -> Result<Evaluation> {
    let per_domain = dataset
        .domains()
        .iter()
        .map(|d| accuracy_on(bundle, d.test_x.view(), &d.test_y))
        .collect::<Result<Vec<_>>>()?;
    let average = per_domain.iter().sum::<f64>() / per_domain.len() as f64;
    Ok(Evaluation { per_domain, average })
}
