//! Central finite-difference oracle for the analytic gradients of [`DenseNet`].

use ndarray::{Array2, ArrayView2};

use super::loss::{sigmoid_bce, softmax_ce};
use super::net::DenseNet;
use crate::error::{MudalError, Result};

/// A batch of samples; labels are optional (absent for unlabeled pools).
#[derive(Clone, Debug)]
pub struct Batch {
    pub features: Array2<f64>,
    pub labels: Option<Vec<usize>>,
    pub domain_ids: Vec<usize>,
    pub weights: Vec<f64>,
}

impl Batch {
    pub fn new(
        features: Array2<f64>,
        labels: Option<Vec<usize>>,
        domain_ids: Vec<usize>,
        weights: Vec<f64>,
    ) -> Result<Self> {
        let b = features.nrows();
        if b == 0 {
            return Err(MudalError::invalid("batch must contain at least one sample"));
        }
        if labels.as_ref().is_some_and(|l| l.len() != b) || domain_ids.len() != b || weights.len() != b {
            return Err(MudalError::shape(
                "Batch::new",
                format!("{b} rows everywhere"),
                "ragged batch",
            ));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(MudalError::invalid("batch weights must be finite and >= 0"));
        }
        Ok(Self {
            features,
            labels,
            domain_ids,
            weights,
        })
    }

    /// Uniformly weighted batch from a single domain.
    pub fn labeled(features: Array2<f64>, labels: Vec<usize>) -> Result<Self> {
        let b = features.nrows();
        Self::new(features, Some(labels), vec![0; b], vec![1.0; b])
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Maps network output and batch to `(loss, d loss / d output)`.
pub type LossFn<'a> = dyn Fn(ArrayView2<f64>, &Batch) -> Result<(f64, Array2<f64>)> + 'a;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12)
}

/// `½ Σ output²` averaged over the batch.
pub fn squared_loss() -> Box<LossFn<'static>> {
    Box::new(|out, batch| {
        let b = batch.len() as f64;
        let loss = out.iter().map(|v| 0.5 * v * v).sum::<f64>() / b;
        Ok((loss, out.mapv(|v| v / b)))
    })
}

/// Weighted softmax cross-entropy at `temperature` against `batch.labels`.
pub fn ce_loss(temperature: f64) -> Box<LossFn<'static>> {
    Box::new(move |out, batch| {
        let labels = batch
            .labels
            .as_deref()
            .ok_or_else(|| MudalError::invalid("ce_loss needs labels"))?;
        let r = softmax_ce(out, labels, temperature, &batch.weights)?;
        Ok((r.loss, r.grad))
    })
}

/// Weighted BCE on a single-logit output; labels are read as 0/1 targets.
pub fn bce_loss() -> Box<LossFn<'static>> {
    Box::new(|out, batch| {
        let labels = batch
            .labels
            .as_deref()
            .ok_or_else(|| MudalError::invalid("bce_loss needs labels"))?;
        if out.ncols() != 1 {
            return Err(MudalError::shape("bce_loss", "1 logit", out.ncols()));
        }
        let targets: Vec<f64> = labels.iter().map(|&y| if y > 0 { 1.0 } else { 0.0 }).collect();
        let r = sigmoid_bce(out.column(0), &targets, &batch.weights)?;
        Ok((r.loss, r.grad.insert_axis(ndarray::Axis(1))))
    })
}

fn loss_at(net: &DenseNet, batch: &Batch, loss_fn: &LossFn) -> Result<f64> {
    let out = net.predict(batch.features.view())?;
    Ok(loss_fn(out.view(), batch)?.0)
}

/// Max relative error between backprop parameter gradients and central
/// differences with step `eps`.
pub fn grad_check(net: &DenseNet, batch: &Batch, loss_fn: &LossFn, eps: f64) -> Result<f64> {
    let trace = net.forward(batch.features.view())?;
    let (_, out_grad) = loss_fn(trace.output().view(), batch)?;
    let analytic = net.backward(&trace, out_grad.view())?.flat_params();

    let base = net.params_flat();
    let mut probe = net.clone();
    let mut params = base.clone();
    let mut worst: f64 = 0.0;
    for k in 0..base.len() {
        params[k] = base[k] + eps;
        probe.set_params_flat(&params)?;
        let up = loss_at(&probe, batch, loss_fn)?;
        params[k] = base[k] - eps;
        probe.set_params_flat(&params)?;
        let down = loss_at(&probe, batch, loss_fn)?;
        params[k] = base[k];
        worst = worst.max(relative_error(analytic[k], (up - down) / (2.0 * eps)));
    }
    Ok(worst)
}

/// Same as [`grad_check`] but for the gradient w.r.t. the batch features.
pub fn grad_check_input(net: &DenseNet, batch: &Batch, loss_fn: &LossFn, eps: f64) -> Result<f64> {
    let trace = net.forward(batch.features.view())?;
    let (_, out_grad) = loss_fn(trace.output().view(), batch)?;
    let analytic = net.backward(&trace, out_grad.view())?.input;
    let mut probe = batch.clone();
    let mut worst: f64 = 0.0;
    for idx in ndarray::indices(batch.features.dim()) {
        let x0 = batch.features[idx];
        probe.features[idx] = x0 + eps;
        let up = loss_at(net, &probe, loss_fn)?;
        probe.features[idx] = x0 - eps;
        let down = loss_at(net, &probe, loss_fn)?;
        probe.features[idx] = x0;
        worst = worst.max(relative_error(analytic[idx], (up - down) / (2.0 * eps)));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Activation;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn batch(rng: &mut ChaCha8Rng, b: usize, d: usize, classes: usize) -> Batch {
        let x = Array2::from_shape_fn((b, d), |_| rng.random_range(-1.5..1.5));
        let y = (0..b).map(|_| rng.random_range(0..classes)).collect();
        let w = (0..b).map(|_| rng.random_range(0.1..2.0)).collect();
        Batch::new(x, Some(y), vec![0; b], w).unwrap()
    }

    #[test]
    fn linear_net_squared_loss_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = DenseNet::mlp(&[4, 3], Activation::Identity, Activation::Identity, &mut rng).unwrap();
        let b = batch(&mut rng, 6, 4, 3);
        assert!(grad_check(&net, &b, &*squared_loss(), 1e-6).unwrap() < 1e-7);
    }

    #[test]
    fn relu_net_with_tempered_ce() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = DenseNet::mlp(&[3, 8, 8, 4], Activation::Relu, Activation::Identity, &mut rng).unwrap();
        let b = batch(&mut rng, 5, 3, 4);
        assert!(grad_check(&net, &b, &*ce_loss(0.5), 1e-6).unwrap() < 1e-5);
        assert!(grad_check_input(&net, &b, &*ce_loss(0.5), 1e-6).unwrap() < 1e-5);
    }

    #[test]
    fn leaky_discriminator_with_bce() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = DenseNet::mlp(&[5, 8, 8, 1], Activation::LeakyRelu, Activation::Identity, &mut rng).unwrap();
        let b = batch(&mut rng, 7, 5, 2);
        assert!(grad_check(&net, &b, &*bce_loss(), 1e-6).unwrap() < 1e-5);
    }

    #[test]
    fn sigmoid_hidden_layers() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = DenseNet::mlp(&[2, 6, 1], Activation::Sigmoid, Activation::Identity, &mut rng).unwrap();
        let b = batch(&mut rng, 4, 2, 2);
        assert!(grad_check(&net, &b, &*bce_loss(), 1e-6).unwrap() < 1e-5);
    }

    #[test]
    fn ragged_batch_is_rejected() {
        let x = Array2::zeros((3, 2));
        assert!(Batch::new(x, Some(vec![0, 1]), vec![0; 3], vec![1.0; 3]).is_err());
    }
}
