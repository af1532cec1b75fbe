use ndarray::{concatenate, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MudalError, Result};
use crate::nn::{Activation, DenseNet};

/// How the conditional discriminator is told which domain it is judging.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DomainCode {
    #[default]
    OneHot,
    /// Single input `i / N`.
    Scalar,
}

impl DomainCode {
    pub fn width(self, n_domains: usize) -> usize {
        match self {
            DomainCode::OneHot => n_domains,
            DomainCode::Scalar => 1,
        }
    }

    pub fn encode(self, i: usize, n_domains: usize) -> Vec<f64> {
        match self {
            DomainCode::OneHot => (0..n_domains).map(|k| if k == i { 1.0 } else { 0.0 }).collect(),
            DomainCode::Scalar => vec![i as f64 / n_domains as f64],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BundleShape {
    pub input_dim: usize,
    pub n_classes: usize,
    pub n_domains: usize,
    /// Width of encoder hidden layer and classifier trunk.
    pub hidden: usize,
    /// Encoder output width `Z`.
    pub latent: usize,
    pub disc_hidden: usize,
    pub code: DomainCode,
}

/// Encoder `e`, shared classifier `h = head ∘ trunk`, domain heads
/// `h_i = head_i ∘ trunk`, and the conditional discriminator `f`.
///
/// The trunk is stored once, so `h` and every `h_i` agree on all
/// non-final parameters by construction.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelBundle {
    pub encoder: DenseNet,
    pub trunk: DenseNet,
    pub head: DenseNet,
    pub domain_heads: Vec<DenseNet>,
    pub discriminator: Option<DenseNet>,
    pub shape: BundleShape,
}

/// Borrowed view of one classifier: the shared trunk plus a final layer.
#[derive(Clone, Copy, Debug)]
pub struct ClassifierView<'a> {
    pub trunk: &'a DenseNet,
    pub last: &'a DenseNet,
}

impl ClassifierView<'_> {
    pub fn logits(&self, z: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.last.predict(self.trunk.predict(z)?.view())
    }
}

impl ModelBundle {
    pub fn new<R: Rng + ?Sized>(shape: BundleShape, with_discriminator: bool, rng: &mut R) -> Result<Self> {
        let BundleShape {
            input_dim: d,
            n_classes: c,
            n_domains: n,
            hidden: h,
            latent: z,
            disc_hidden: dh,
            code,
        } = shape;
        if n == 0 || c < 2 {
            return Err(MudalError::invalid("bundle needs N >= 1 domains and C >= 2 classes"));
        }
        let encoder = DenseNet::mlp(&[d, h, z], Activation::Relu, Activation::Relu, rng)?;
        let trunk = DenseNet::mlp(&[z, h], Activation::Relu, Activation::Relu, rng)?;
        let head = DenseNet::mlp(&[h, c], Activation::Identity, Activation::Identity, rng)?;
        let domain_heads = (0..n)
            .map(|_| DenseNet::mlp(&[h, c], Activation::Identity, Activation::Identity, rng))
            .collect::<Result<Vec<_>>>()?;
        let discriminator = if with_discriminator {
            Some(DenseNet::mlp(
                &[z + code.width(n), dh, dh, 1],
                Activation::LeakyRelu,
                Activation::Identity,
                rng,
            )?)
        } else {
            None
        };
        Ok(Self {
            encoder,
            trunk,
            head,
            domain_heads,
            discriminator,
            shape,
        })
    }

    pub fn n_domains(&self) -> usize {
        self.shape.n_domains
    }

    pub fn code(&self, i: usize) -> Vec<f64> {
        self.shape.code.encode(i, self.shape.n_domains)
    }

    pub fn classifier(&self) -> ClassifierView<'_> {
        ClassifierView {
            trunk: &self.trunk,
            last: &self.head,
        }
    }

    pub fn domain_classifier(&self, i: usize) -> ClassifierView<'_> {
        ClassifierView {
            trunk: &self.trunk,
            last: &self.domain_heads[i],
        }
    }

    /// `h` and every `h_i` reference identical trunk parameters.
    pub fn shared_trunk_consistent(&self) -> bool {
        let shared = self.classifier().trunk.params_flat();
        (0..self.n_domains()).all(|i| self.domain_classifier(i).trunk.params_flat() == shared)
    }

    pub fn encode(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.encoder.predict(x)
    }

    /// Logits of `h ∘ e`.
    pub fn logits(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.classifier().logits(self.encode(x)?.view())
    }

    /// Argmax class of `h ∘ e`, ties to the lowest index.
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Vec<usize>> {
        Ok(argmax_rows(self.logits(x)?.view()))
    }

    /// Append the code of domain `i` to every latent row.
    pub fn with_code(&self, z: ArrayView2<f64>, i: usize) -> Array2<f64> {
        append_code(z, &self.code(i))
    }

    /// Discriminator logits `f(z, i)`; positive means "original domain".
    pub fn disc_logits(&self, z: ArrayView2<f64>, i: usize) -> Result<Vec<f64>> {
        let f = self
            .discriminator
            .as_ref()
            .ok_or(MudalError::MissingDiscriminator("disc_logits"))?;
        Ok(f.predict(self.with_code(z, i).view())?.column(0).to_vec())
    }

    pub fn all_finite(&self) -> bool {
        self.encoder.all_finite()
            && self.trunk.all_finite()
            && self.head.all_finite()
            && self.domain_heads.iter().all(DenseNet::all_finite)
            && self.discriminator.as_ref().is_none_or(DenseNet::all_finite)
    }
}

pub(crate) fn append_code(z: ArrayView2<f64>, code: &[f64]) -> Array2<f64> {
    let codes = Array2::from_shape_fn((z.nrows(), code.len()), |(_, k)| code[k]);
    concatenate(Axis(1), &[z, codes.view()]).expect("matching row counts")
}

pub fn argmax_rows(m: ArrayView2<f64>) -> Vec<usize> {
    m.rows()
        .into_iter()
        .map(|r| {
            let mut best = 0;
            for (k, &v) in r.iter().enumerate() {
                if v > r[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn shape(code: DomainCode) -> BundleShape {
        BundleShape {
            input_dim: 2,
            n_classes: 3,
            n_domains: 4,
            hidden: 8,
            latent: 5,
            disc_hidden: 6,
            code,
        }
    }

    #[test]
    fn discriminator_width_follows_code() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = ModelBundle::new(shape(DomainCode::OneHot), true, &mut rng).unwrap();
        assert_eq!(b.discriminator.as_ref().unwrap().input_dim(), 5 + 4);
        let s = ModelBundle::new(shape(DomainCode::Scalar), true, &mut rng).unwrap();
        assert_eq!(s.discriminator.as_ref().unwrap().input_dim(), 5 + 1);
        assert_eq!(DomainCode::Scalar.encode(2, 4), vec![0.5]);
        assert_eq!(DomainCode::OneHot.encode(2, 4), vec![0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(
            argmax_rows(ndarray::array![[1.0, 1.0, 0.0], [0.0, 2.0, 2.0]].view()),
            vec![0, 1]
        );
    }

    #[test]
    fn missing_discriminator_is_reported() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = ModelBundle::new(shape(DomainCode::OneHot), false, &mut rng).unwrap();
        let z = Array2::zeros((2, 5));
        assert!(matches!(
            b.disc_logits(z.view(), 0),
            Err(MudalError::MissingDiscriminator(_))
        ));
    }
}
