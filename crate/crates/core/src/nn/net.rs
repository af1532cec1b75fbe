use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MudalError, Result};

/// Slope of the negative half of [`Activation::LeakyRelu`].
pub const LEAKY_SLOPE: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    LeakyRelu,
    Sigmoid,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::LeakyRelu => {
                if x > 0.0 {
                    x
                } else {
                    LEAKY_SLOPE * x
                }
            }
            Activation::Sigmoid => sigmoid(x),
            Activation::Identity => x,
        }
    }

    /// Derivative given the pre-activation and the activated value.
    /// Subgradient at 0 is 0 for relu (and the leaky slope for leaky relu).
    #[inline]
    pub fn derivative(self, pre: f64, post: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu => {
                if pre > 0.0 {
                    1.0
                } else {
                    LEAKY_SLOPE
                }
            }
            Activation::Sigmoid => post * (1.0 - post),
            Activation::Identity => 1.0,
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// A fully connected layer `y = act(W x + b)` with `W` stored as `out × in`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub(crate) weight: Array2<f64>,
    pub(crate) bias: Array1<f64>,
    pub(crate) activation: Activation,
}

impl Dense {
    pub fn new(weight: Array2<f64>, bias: Array1<f64>, activation: Activation) -> Result<Self> {
        if weight.nrows() != bias.len() {
            return Err(MudalError::shape(
                "Dense::new",
                format!("bias of length {}", weight.nrows()),
                format!("bias of length {}", bias.len()),
            ));
        }
        if weight.iter().chain(bias.iter()).any(|v| !v.is_finite()) {
            return Err(MudalError::NonFinite("Dense::new parameters".into()));
        }
        Ok(Self {
            weight: weight.as_standard_layout().into_owned(),
            bias,
            activation,
        })
    }

    /// Uniform initialisation: He bound for rectifiers, Glorot bound otherwise.
    /// Biases start at zero.
    pub fn init<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut R) -> Self {
        let bound = match activation {
            Activation::Relu | Activation::LeakyRelu => (6.0 / in_dim as f64).sqrt(),
            Activation::Sigmoid | Activation::Identity => (6.0 / (in_dim + out_dim) as f64).sqrt(),
        };
        let weight = Array2::from_shape_fn((out_dim, in_dim), |_| rng.random_range(-bound..bound));
        Self {
            weight,
            bias: Array1::zeros(out_dim),
            activation,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn weight(&self) -> &Array2<f64> {
        &self.weight
    }

    pub fn bias(&self) -> &Array1<f64> {
        &self.bias
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn num_params(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

/// Ordered stack of dense layers.
///
/// Every mutation bumps an internal revision counter; traces record the
/// revision they were produced at so that `backward` can refuse a trace whose
/// network has since changed.
#[derive(Clone, Debug)]
pub struct DenseNet {
    layers: Vec<Dense>,
    revision: u64,
}

impl PartialEq for DenseNet {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

/// Everything `backward` needs: the input and each layer's pre/post activations.
#[derive(Clone, Debug)]
pub struct ActivationTrace {
    pub input: Array2<f64>,
    pub pre: Vec<Array2<f64>>,
    pub post: Vec<Array2<f64>>,
    revision: u64,
}

impl ActivationTrace {
    pub fn output(&self) -> &Array2<f64> {
        self.post.last().unwrap_or(&self.input)
    }

    /// Input of the final layer (the "penultimate features").
    pub fn last_hidden(&self) -> &Array2<f64> {
        if self.post.len() >= 2 {
            &self.post[self.post.len() - 2]
        } else {
            &self.input
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrad {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Parameter gradients of a [`DenseNet`] plus the gradient w.r.t. its input.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
    pub input: Array2<f64>,
}

impl Gradients {
    pub fn zeros_like(net: &DenseNet, batch: usize) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weight: Array2::zeros(l.weight.raw_dim()),
                    bias: Array1::zeros(l.bias.len()),
                })
                .collect(),
            input: Array2::zeros((batch, net.input_dim())),
        }
    }

    /// Accumulate parameter gradients (input gradients are left untouched).
    pub fn add_params(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight += &b.weight;
            a.bias += &b.bias;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            l.weight *= factor;
            l.bias *= factor;
        }
        self.input *= factor;
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend(l.weight.iter().copied());
            out.extend(l.bias.iter().copied());
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
            && self.input.iter().all(|v| v.is_finite())
    }
}

impl DenseNet {
    pub fn new(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(MudalError::invalid("a network needs at least one layer"));
        }
        for (k, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(MudalError::shape(
                    "DenseNet::new",
                    format!("layer {} input width {}", k + 1, pair[0].out_dim()),
                    format!("{}", pair[1].in_dim()),
                ));
            }
        }
        Ok(Self { layers, revision: 0 })
    }

    /// Build an MLP `dims[0] → dims[1] → … → dims[last]`; hidden layers use
    /// `hidden`, the final layer uses `output`.
    pub fn mlp<R: Rng + ?Sized>(dims: &[usize], hidden: Activation, output: Activation, rng: &mut R) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(MudalError::invalid(format!(
                "MLP needs at least two positive widths, got {dims:?}"
            )));
        }
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|k| {
                let act = if k + 1 == n { output } else { hidden };
                Dense::init(dims[k], dims[k + 1], act, rng)
            })
            .collect();
        Self::new(layers)
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn revision(&self) -> u64 {
        self.revision
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Dense::num_params).sum()
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<ActivationTrace> {
        if x.ncols() != self.input_dim() {
            return Err(MudalError::shape(
                "forward",
                format!("{} input features", self.input_dim()),
                format!("{} (batch of {})", x.ncols(), x.nrows()),
            ));
        }
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post = Vec::with_capacity(self.layers.len());
        let mut current = x.to_owned();
        for layer in &self.layers {
            let z = current.dot(&layer.weight.t()) + &layer.bias;
            let act = layer.activation;
            let a = z.mapv(|v| act.apply(v));
            pre.push(z);
            current = a.clone();
            post.push(a);
        }
        if post.last().is_some_and(|o| o.iter().any(|v| !v.is_finite())) {
            return Err(MudalError::NonFinite("forward output".into()));
        }
        Ok(ActivationTrace {
            input: x.to_owned(),
            pre,
            post,
            revision: self.revision,
        })
    }

    /// Output only, no trace retained.
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.input_dim() {
            return Err(MudalError::shape(
                "predict",
                format!("{} input features", self.input_dim()),
                format!("{}", x.ncols()),
            ));
        }
        let mut current = x.to_owned();
        for layer in &self.layers {
            let act = layer.activation;
            current = (current.dot(&layer.weight.t()) + &layer.bias).mapv(|v| act.apply(v));
        }
        Ok(current)
    }

    pub fn backward(&self, trace: &ActivationTrace, output_grad: ArrayView2<f64>) -> Result<Gradients> {
        if trace.revision != self.revision || trace.pre.len() != self.layers.len() {
            return Err(MudalError::StaleTrace {
                trace: trace.revision,
                net: self.revision,
            });
        }
        let out = trace.output();
        if output_grad.dim() != out.dim() {
            return Err(MudalError::shape(
                "backward",
                format!("{:?}", out.dim()),
                format!("{:?}", output_grad.dim()),
            ));
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut upstream = output_grad.to_owned();
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let act = layer.activation;
            let mut delta = upstream;
            ndarray::Zip::from(&mut delta)
                .and(&trace.pre[k])
                .and(&trace.post[k])
                .for_each(|d, &p, &a| *d *= act.derivative(p, a));
            let layer_input = if k == 0 { &trace.input } else { &trace.post[k - 1] };
            let weight = delta.t().dot(layer_input);
            let bias = delta.sum_axis(Axis(0));
            upstream = delta.dot(&layer.weight);
            grads.push(LayerGrad { weight, bias });
        }
        grads.reverse();
        let g = Gradients {
            layers: grads,
            input: upstream,
        };
        if !g.is_finite() {
            return Err(MudalError::NonFinite("backward gradients".into()));
        }
        Ok(g)
    }

    /// Parameters in canonical order: per layer, weights row-major then bias.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend(l.weight.iter().copied());
            out.extend(l.bias.iter().copied());
        }
        out
    }

    pub fn set_params_flat(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(MudalError::shape("set_params_flat", self.num_params(), params.len()));
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(MudalError::NonFinite("set_params_flat".into()));
        }
        let mut it = params.iter().copied();
        for l in &mut self.layers {
            l.weight.iter_mut().for_each(|w| *w = it.next().unwrap());
            l.bias.iter_mut().for_each(|b| *b = it.next().unwrap());
        }
        self.touch();
        Ok(())
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Dense] {
        self.touch();
        &mut self.layers
    }

    fn touch(&mut self) {
        self.revision += 1;
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }
}
