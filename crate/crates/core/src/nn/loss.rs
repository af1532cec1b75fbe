use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use super::net::sigmoid;
use crate::error::{MudalError, Result};

#[derive(Clone, Debug)]
pub struct CeOutput {
    /// Weighted mean cross-entropy.
    pub loss: f64,
    /// d loss / d logits.
    pub grad: Array2<f64>,
    /// Row-wise softmax of `logits / T`.
    pub probs: Array2<f64>,
}

#[derive(Clone, Debug)]
pub struct BceOutput {
    pub loss: f64,
    pub grad: Array1<f64>,
}

/// Row-wise softmax of `logits / temperature`, max-shifted for stability.
pub fn softmax_with_temperature(logits: ArrayView2<f64>, temperature: f64) -> Array2<f64> {
    let mut out = logits.mapv(|v| v / temperature);
    for mut row in out.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    out
}

fn check_weights(weights: &[f64], batch: usize, ctx: &'static str) -> Result<f64> {
    if weights.len() != batch {
        return Err(MudalError::shape(ctx, format!("{batch} weights"), weights.len()));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(MudalError::invalid(format!("{ctx}: weights must be finite and >= 0")));
    }
    Ok(weights.iter().sum())
}

/// Weighted *sum* of per-sample cross-entropies (no normalisation); the
/// gradient is that of the sum. Zero weights are allowed.
pub(crate) fn softmax_ce_sum(
    logits: ArrayView2<f64>,
    labels: &[usize],
    temperature: f64,
    weights: &[f64],
) -> Result<CeOutput> {
    let (b, c) = logits.dim();
    if labels.len() != b {
        return Err(MudalError::shape("softmax_ce", format!("{b} labels"), labels.len()));
    }
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(MudalError::invalid(format!(
            "temperature must be > 0, got {temperature}"
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
        return Err(MudalError::invalid(format!("label {bad} out of range for {c} classes")));
    }
    check_weights(weights, b, "softmax_ce")?;
    let probs = softmax_with_temperature(logits, temperature);
    let mut loss = 0.0;
    let mut grad = probs.clone();
    for (i, (&y, &w)) in labels.iter().zip(weights).enumerate() {
        // log p_y computed from the shifted logits to avoid log(0)
        let row = logits.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max) / temperature;
        let lse = row.iter().map(|&v| (v / temperature - max).exp()).sum::<f64>().ln() + max;
        loss += w * (lse - logits[[i, y]] / temperature);
        grad[[i, y]] -= 1.0;
        grad.row_mut(i).mapv_inplace(|g| g * w / temperature);
    }
    Ok(CeOutput { loss, grad, probs })
}

/// Weighted mean softmax cross-entropy at temperature `T`.
///
/// `loss = Σ_b w_b · CE_b / Σ_b w_b`, gradient rows `w_b (p_b − e_{y_b}) / (T Σ w)`.
pub fn softmax_ce(logits: ArrayView2<f64>, labels: &[usize], temperature: f64, weights: &[f64]) -> Result<CeOutput> {
    let total = check_weights(weights, logits.nrows(), "softmax_ce")?;
    if total <= 0.0 {
        return Err(MudalError::invalid("softmax_ce: all weights are zero"));
    }
    let mut out = softmax_ce_sum(logits, labels, temperature, weights)?;
    out.loss /= total;
    out.grad /= total;
    Ok(out)
}

pub(crate) fn sigmoid_bce_sum(logits: ArrayView1<f64>, targets: &[f64], weights: &[f64]) -> Result<BceOutput> {
    let b = logits.len();
    if targets.len() != b {
        return Err(MudalError::shape("sigmoid_bce", format!("{b} targets"), targets.len()));
    }
    if targets.iter().any(|&t| t != 0.0 && t != 1.0) {
        return Err(MudalError::invalid("sigmoid_bce: targets must be 0 or 1"));
    }
    check_weights(weights, b, "sigmoid_bce")?;
    let mut loss = 0.0;
    let mut grad = Array1::zeros(b);
    for i in 0..b {
        let x = logits[i];
        let (t, w) = (targets[i], weights[i]);
        // max(x,0) - x t + ln(1 + e^{-|x|})
        loss += w * (x.max(0.0) - x * t + (-x.abs()).exp().ln_1p());
        grad[i] = w * (sigmoid(x) - t);
    }
    Ok(BceOutput { loss, grad })
}

/// Weighted mean binary cross-entropy on logits.
pub fn sigmoid_bce(logits: ArrayView1<f64>, targets: &[f64], weights: &[f64]) -> Result<BceOutput> {
    let total = check_weights(weights, logits.len(), "sigmoid_bce")?;
    if total <= 0.0 {
        return Err(MudalError::invalid("sigmoid_bce: all weights are zero"));
    }
    let mut out = sigmoid_bce_sum(logits, targets, weights)?;
    out.loss /= total;
    out.grad /= total;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Axis};

    #[test]
    fn equal_logits_give_uniform_probabilities() {
        let out = softmax_ce(array![[0.3, 0.3, 0.3, 0.3]].view(), &[2], 1.0, &[1.0]).unwrap();
        for p in out.probs.iter() {
            assert!((p - 0.25).abs() < 1e-15);
        }
        assert!((out.loss - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn lower_temperature_sharpens() {
        let logits = array![[2.0, 1.0]];
        let warm = softmax_with_temperature(logits.view(), 1.0);
        let cold = softmax_with_temperature(logits.view(), 0.01);
        assert!(cold[[0, 0]] > warm[[0, 0]]);
    }

    #[test]
    fn weighted_ce_matches_scalar_oracle() {
        let logits = array![[1.0, 2.0, 0.0], [0.5, 0.5, 3.0]];
        let labels = [1usize, 0];
        let w = [1.0, 3.0];
        let t = 0.7;
        let ce = |row: [f64; 3], y: usize| {
            let z: f64 = row.iter().map(|v| (v / t).exp()).sum();
            -((row[y] / t).exp() / z).ln()
        };
        let expected = (1.0 * ce([1.0, 2.0, 0.0], 1) + 3.0 * ce([0.5, 0.5, 3.0], 0)) / 4.0;
        let out = softmax_ce(logits.view(), &labels, t, &w).unwrap();
        assert!((out.loss - expected).abs() < 1e-12);
    }

    #[test]
    fn rows_sum_to_one_and_uniform_weight_gradients_sum_to_zero() {
        let logits = array![[5.0, -2.0, 0.1], [100.0, 99.0, -50.0], [0.0, 0.0, 1e-3]];
        let out = softmax_ce(logits.view(), &[0, 2, 1], 0.5, &[1.0; 3]).unwrap();
        for s in out.probs.sum_axis(Axis(1)) {
            assert!((s - 1.0).abs() < 1e-9);
        }
        for s in out.grad.sum_axis(Axis(1)) {
            assert!(s.abs() < 1e-9);
        }
    }

    #[test]
    fn zero_weights_are_rejected() {
        assert!(softmax_ce(array![[1.0, 0.0]].view(), &[0], 1.0, &[0.0]).is_err());
        assert!(sigmoid_bce(array![0.0].view(), &[1.0], &[0.0]).is_err());
    }

    #[test]
    fn out_of_range_label_is_rejected() {
        assert!(softmax_ce(array![[1.0, 0.0]].view(), &[2], 1.0, &[1.0]).is_err());
    }

    #[test]
    fn bce_reference_values() {
        let zero = sigmoid_bce(array![0.0].view(), &[1.0], &[1.0]).unwrap();
        assert!((zero.loss - 2f64.ln()).abs() < 1e-15);
        let sure = sigmoid_bce(array![50.0].view(), &[1.0], &[1.0]).unwrap();
        assert!(sure.loss < 1e-20);
    }

    #[test]
    fn weighted_bce_matches_scalar_oracle() {
        let x = [0.3, -2.0, 4.0];
        let t = [1.0, 0.0, 0.0];
        let w = [2.0, 1.0, 0.5];
        let per = |x: f64, t: f64| {
            let p = 1.0 / (1.0 + (-x).exp());
            -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
        };
        let expected = (2.0 * per(0.3, 1.0) + per(-2.0, 0.0) + 0.5 * per(4.0, 0.0)) / 3.5;
        let out = sigmoid_bce(Array1::from(x.to_vec()).view(), &t, &w).unwrap();
        assert!((out.loss - expected).abs() < 1e-12);
    }
}
