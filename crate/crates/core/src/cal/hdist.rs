//! Empirical domain distance between an original domain and its surrogate:
//!
//! `d̂ = 2 (1 − [err_O(f) + Σ_j α_j err_{L_j}(f)])`, clamped to `[0, 2]`,
//! where `err_O` is the fraction of original samples called "surrogate" and
//! `err_{L_j}` the fraction of labeled samples called "original" at threshold
//! 0.5. The minimum over `f` is only approximated by whichever discriminator
//! is supplied, so `d̂` is an estimate.

use ndarray::{concatenate, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::bundle::ModelBundle;
use crate::error::{MudalError, Result};
use crate::nn::{adam_step, sigmoid_bce, Activation, AdamConfig, AdamState, DenseNet};
use crate::rng::stream;

fn check_inputs(orig: &ArrayView2<f64>, labeled: &[ArrayView2<f64>], alpha_row: &[f64]) -> Result<()> {
    if orig.nrows() == 0 {
        return Err(MudalError::invalid("h-distance: empty original sample"));
    }
    if labeled.len() != alpha_row.len() {
        return Err(MudalError::shape("h-distance", alpha_row.len(), labeled.len()));
    }
    if labeled.iter().zip(alpha_row).all(|(l, &a)| l.nrows() == 0 || a == 0.0) {
        return Err(MudalError::invalid("h-distance: surrogate has no weighted samples"));
    }
    Ok(())
}

/// `d̂` from precomputed decisions: `orig_logits` for the original sample and
/// `lab_logits[j]` for each labeled domain, all under the same code.
pub fn h_distance_from_logits(orig_logits: &[f64], lab_logits: &[Vec<f64>], alpha_row: &[f64]) -> f64 {
    let frac = |v: &[f64], surrogate: bool| {
        if v.is_empty() {
            0.0
        } else {
            v.iter().filter(|&&l| (l < 0.0) == surrogate).count() as f64 / v.len() as f64
        }
    };
    let err_o = frac(orig_logits, true);
    let err_l: f64 = lab_logits.iter().zip(alpha_row).map(|(l, a)| a * frac(l, false)).sum();
    (2.0 * (1.0 - (err_o + err_l))).clamp(0.0, 2.0)
}

/// `d̂` for original domain `i` under the bundle's own conditional
/// discriminator.
pub fn estimate_h_distance(
    bundle: &ModelBundle,
    i: usize,
    orig: ArrayView2<f64>,
    labeled: &[ArrayView2<f64>],
    alpha_row: &[f64],
) -> Result<f64> {
    check_inputs(&orig, labeled, alpha_row)?;
    let lo = bundle.disc_logits(bundle.encode(orig)?.view(), i)?;
    let ll = labeled
        .iter()
        .map(|x| {
            if x.nrows() == 0 {
                Ok(Vec::new())
            } else {
                bundle.disc_logits(bundle.encode(*x)?.view(), i)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(h_distance_from_logits(&lo, &ll, alpha_row))
}

/// Settings of a freshly trained probe discriminator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    pub hidden: usize,
    pub steps: usize,
    pub lr: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            hidden: 32,
            steps: 300,
            lr: 1e-2,
        }
    }
}

/// Train a `[D, h, h, 1]` leaky-ReLU discriminator by full-batch Adam on the
/// balanced weighted BCE (original side and surrogate side each weigh one
/// half), then report `d̂` on the same samples.
pub fn probe_h_distance(
    orig: ArrayView2<f64>,
    labeled: &[ArrayView2<f64>],
    alpha_row: &[f64],
    cfg: &ProbeConfig,
    seed: u64,
) -> Result<f64> {
    check_inputs(&orig, labeled, alpha_row)?;
    let mut rng = stream(seed, "probe", 0);
    let d = orig.ncols();
    let mut net = DenseNet::mlp(
        &[d, cfg.hidden, cfg.hidden, 1],
        Activation::LeakyRelu,
        Activation::Identity,
        &mut rng,
    )?;
    let mut views = vec![orig];
    let mut targets = vec![1.0; orig.nrows()];
    let mut weights = vec![0.5 / orig.nrows() as f64; orig.nrows()];
    for (x, &a) in labeled.iter().zip(alpha_row) {
        if x.nrows() == 0 {
            continue;
        }
        views.push(*x);
        targets.extend(std::iter::repeat_n(0.0, x.nrows()));
        weights.extend(std::iter::repeat_n(0.5 * a / x.nrows() as f64, x.nrows()));
    }
    let x: Array2<f64> = concatenate(Axis(0), &views).map_err(|e| MudalError::shape("probe", d, e.to_string()))?;
    let mut state = AdamState::for_net(&net, AdamConfig::default());
    for _ in 0..cfg.steps {
        let tr = net.forward(x.view())?;
        let bce = sigmoid_bce(tr.output().column(0), &targets, &weights)?;
        if !bce.loss.is_finite() {
            return Err(MudalError::NonFinite("probe discriminator loss".into()));
        }
        let g = net.backward(&tr, bce.grad.insert_axis(Axis(1)).view())?;
        adam_step(&mut net, &g, &mut state, cfg.lr)?;
    }
    let lo = net.predict(orig)?.column(0).to_vec();
    let ll = labeled
        .iter()
        .map(|x| {
            Ok(if x.nrows() == 0 {
                Vec::new()
            } else {
                net.predict(*x)?.column(0).to_vec()
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(h_distance_from_logits(&lo, &ll, alpha_row))
}
