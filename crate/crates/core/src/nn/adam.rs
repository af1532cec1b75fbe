use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::net::{DenseNet, Gradients};
use crate::error::{MudalError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment accumulators laid out exactly like the network's
/// parameters.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    first: Vec<(Array2<f64>, Array1<f64>)>,
    second: Vec<(Array2<f64>, Array1<f64>)>,
    step: u64,
}

impl AdamState {
    pub fn for_net(net: &DenseNet, config: AdamConfig) -> Self {
        let zeros = || {
            net.layers()
                .iter()
                .map(|l| (Array2::zeros(l.weight().raw_dim()), Array1::zeros(l.bias().len())))
                .collect::<Vec<_>>()
        };
        Self {
            config,
            first: zeros(),
            second: zeros(),
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn shapes(&self) -> Vec<((usize, usize), usize)> {
        self.first.iter().map(|(w, b)| (w.dim(), b.len())).collect()
    }
}

/// One Adam update on a flat parameter slice. `t` is the 1-based step index
/// used for bias correction.
pub fn adam_update(
    params: &mut [f64],
    grads: &[f64],
    first: &mut [f64],
    second: &mut [f64],
    t: u64,
    config: &AdamConfig,
    lr: f64,
) {
    let bc1 = 1.0 - config.beta1.powi(t as i32);
    let bc2 = 1.0 - config.beta2.powi(t as i32);
    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(first.iter_mut())
        .zip(second.iter_mut())
    {
        *m = config.beta1 * *m + (1.0 - config.beta1) * g;
        *v = config.beta2 * *v + (1.0 - config.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= lr * m_hat / (v_hat.sqrt() + config.eps);
    }
}

/// Apply one Adam step to `net`. A gradient containing NaN/Inf aborts the
/// step before anything is modified.
pub fn adam_step(net: &mut DenseNet, grads: &Gradients, state: &mut AdamState, lr: f64) -> Result<()> {
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(MudalError::invalid(format!("learning rate must be positive, got {lr}")));
    }
    if grads.layers.len() != net.layers().len() || state.first.len() != net.layers().len() {
        return Err(MudalError::shape(
            "adam_step",
            format!("{} layers", net.layers().len()),
            format!(
                "{} gradient layers / {} state layers",
                grads.layers.len(),
                state.first.len()
            ),
        ));
    }
    for (k, (l, g)) in net.layers().iter().zip(&grads.layers).enumerate() {
        if l.weight().dim() != g.weight.dim() || l.bias().len() != g.bias.len() {
            return Err(MudalError::shape(
                "adam_step",
                format!("layer {k} {:?}", l.weight().dim()),
                format!("{:?}", g.weight.dim()),
            ));
        }
        if g.weight.iter().chain(g.bias.iter()).any(|v| !v.is_finite()) {
            return Err(MudalError::NonFinite(format!("gradient of layer {k}")));
        }
    }
    state.step += 1;
    let t = state.step;
    let cfg = state.config;
    let layers = net.layers_mut();
    for (k, layer) in layers.iter_mut().enumerate() {
        let (m_w, m_b) = &mut state.first[k];
        let (v_w, v_b) = &mut state.second[k];
        // backward may hand back transposed products; the update walks
        // parameters and gradients in the same row-major order
        let g_w = grads.layers[k].weight.as_standard_layout();
        let g_b = grads.layers[k].bias.as_standard_layout();
        adam_update(
            layer.weight.as_slice_mut().expect("contiguous weights"),
            g_w.as_slice().expect("standard layout"),
            m_w.as_slice_mut().unwrap(),
            v_w.as_slice_mut().unwrap(),
            t,
            &cfg,
            lr,
        );
        adam_update(
            layer.bias.as_slice_mut().unwrap(),
            g_b.as_slice().expect("standard layout"),
            m_b.as_slice_mut().unwrap(),
            v_b.as_slice_mut().unwrap(),
            t,
            &cfg,
            lr,
        );
    }
    if !net.all_finite() {
        return Err(MudalError::NonFinite("parameters after Adam step".into()));
    }
    Ok(())
}
