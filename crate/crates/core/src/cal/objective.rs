//! The three objective terms and their gradients.
//!
//! With `α_j` the column means of `α`:
//!
//! ```text
//! V_h = Σ_j α_j · mean_{L_j} CE(h(e(x)), y)
//! V_d = 1/(2N) Σ_i [ mean_{O_i} BCE(f(e(x), i), 1) + Σ_j α_ij · mean_{L_j} BCE(f(e(x), i), 0) ]
//! V_λ = 1/N Σ_i Σ_j α_ij · mean_{L_j} CE(h_i(e(x)), y)
//! T   = V_h − λ_d V_d + V_λ
//! ```
//!
//! Expectations over surrogates are taken by per-sample weights rather than
//! by sampling from the mixture.

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};

use super::bundle::{append_code, argmax_rows, ModelBundle};
use crate::error::{MudalError, Result};
use crate::nn::{sigmoid_bce_sum, softmax_ce_sum, Gradients};
use crate::simplex::SimilarityMatrix;

/// One stratified minibatch: a sub-batch from every original domain and
/// from every labeled domain (possibly empty).
#[derive(Clone, Debug)]
pub struct StepBatch {
    pub orig: Vec<Array2<f64>>,
    pub labeled: Vec<Array2<f64>>,
    pub labels: Vec<Vec<usize>>,
}

impl StepBatch {
    pub fn n_domains(&self) -> usize {
        self.orig.len()
    }

    fn validate(&self, bundle: &ModelBundle, alpha: &SimilarityMatrix) -> Result<()> {
        let n = bundle.n_domains();
        if self.orig.len() != n || self.labeled.len() != n || self.labels.len() != n || alpha.n_domains() != n {
            return Err(MudalError::shape(
                "StepBatch",
                format!("{n} domains"),
                format!(
                    "{} original / {} labeled / α of {}",
                    self.orig.len(),
                    self.labeled.len(),
                    alpha.n_domains()
                ),
            ));
        }
        for (j, (x, y)) in self.labeled.iter().zip(&self.labels).enumerate() {
            if x.nrows() != y.len() {
                return Err(MudalError::shape(
                    "StepBatch",
                    format!("{} labels in domain {j}", x.nrows()),
                    y.len(),
                ));
            }
        }
        Ok(())
    }
}

/// Which terms enter the objective and how the encoder sees them.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TermSelection {
    pub lambda_d: f64,
    pub use_vd: bool,
    pub use_vlambda: bool,
    /// Propagate `−λ_d ∇_e V_d` into the encoder.
    pub vd_into_encoder: bool,
}

impl TermSelection {
    pub fn full(lambda_d: f64) -> Self {
        Self {
            lambda_d,
            use_vd: true,
            use_vlambda: true,
            vd_into_encoder: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct ObjectiveValue {
    pub vh: f64,
    pub vd: f64,
    pub vlambda: f64,
    /// `V_h − λ_d V_d + V_λ` over the selected terms.
    pub total: f64,
}

/// Gradients of `T` for `e`, the trunk, `h`'s head and the `h_i` heads, and of
/// `V_d` for the discriminator (which descends `V_d`, i.e. ascends `T`).
#[derive(Clone, Debug)]
pub struct BundleGrads {
    pub encoder: Gradients,
    pub trunk: Gradients,
    pub head: Gradients,
    pub domain_heads: Vec<Gradients>,
    pub discriminator: Option<Gradients>,
}

/// Evaluate the selected objective terms, and optionally their gradients.
pub fn objective(
    bundle: &ModelBundle,
    batch: &StepBatch,
    alpha: &SimilarityMatrix,
    sel: &TermSelection,
    with_grads: bool,
) -> Result<(ObjectiveValue, Option<BundleGrads>)> {
    batch.validate(bundle, alpha)?;
    let n = bundle.n_domains();
    let nf = n as f64;
    let alpha_cols = alpha.column_importance();
    let use_vd = sel.use_vd && bundle.discriminator.is_some();
    if sel.use_vd && !use_vd && sel.lambda_d != 0.0 {
        return Err(MudalError::MissingDiscriminator("objective with V_d"));
    }

    // encoder over [O_0 .. O_{N-1}, L_0 .. L_{N-1}]
    let d = bundle.encoder.input_dim();
    let mut blocks: Vec<ArrayView2<f64>> = Vec::with_capacity(2 * n);
    let mut orig_off = Vec::with_capacity(n);
    let mut lab_off = Vec::with_capacity(n);
    let mut row = 0;
    for x in &batch.orig {
        if x.ncols() != d {
            return Err(MudalError::shape("objective", d, x.ncols()));
        }
        orig_off.push(row);
        row += x.nrows();
        blocks.push(x.view());
    }
    let lab_start = row;
    for x in &batch.labeled {
        lab_off.push(row);
        row += x.nrows();
        blocks.push(x.view());
    }
    let total_rows = row;
    let x_all = concatenate(Axis(0), &blocks).map_err(|e| MudalError::invalid(format!("stacking batch: {e}")))?;
    let enc = bundle.encoder.forward(x_all.view())?;
    let z_all = enc.output();
    let zdim = z_all.ncols();
    let z_lab = z_all.slice(s![lab_start.., ..]);
    let n_lab = total_rows - lab_start;

    let mut value = ObjectiveValue::default();
    let mut grad_z = Array2::<f64>::zeros((total_rows, zdim));

    // classifiers on the labeled rows
    let lab_domain: Vec<usize> = (0..n)
        .flat_map(|j| std::iter::repeat_n(j, batch.labeled[j].nrows()))
        .collect();
    let labels: Vec<usize> = batch.labels.iter().flatten().copied().collect();
    let mut trunk_grads = None;
    let mut head_grads = None;
    let mut dhead_grads = Vec::new();
    if n_lab > 0 {
        for j in 0..n {
            if batch.labeled[j].nrows() == 0 && alpha_cols[j] > 0.0 {
                log::warn!("labeled domain {j} is empty; its classification terms contribute 0");
            }
        }
        let trunk_tr = bundle.trunk.forward(z_lab)?;
        let feats = trunk_tr.output();
        let mut grad_feats = Array2::<f64>::zeros(feats.raw_dim());

        let w_h: Vec<f64> = lab_domain
            .iter()
            .map(|&j| alpha_cols[j] / batch.labeled[j].nrows() as f64)
            .collect();
        let head_tr = bundle.head.forward(feats.view())?;
        let ce = softmax_ce_sum(head_tr.output().view(), &labels, 1.0, &w_h)?;
        value.vh = ce.loss;
        if with_grads {
            let g = bundle.head.backward(&head_tr, ce.grad.view())?;
            grad_feats += &g.input;
            head_grads = Some(g);
        }

        if sel.use_vlambda {
            for i in 0..n {
                let w_i: Vec<f64> = lab_domain
                    .iter()
                    .map(|&j| alpha.get(i, j) / (nf * batch.labeled[j].nrows() as f64))
                    .collect();
                let tr = bundle.domain_heads[i].forward(feats.view())?;
                let ce = softmax_ce_sum(tr.output().view(), &labels, 1.0, &w_i)?;
                value.vlambda += ce.loss;
                if with_grads {
                    let g = bundle.domain_heads[i].backward(&tr, ce.grad.view())?;
                    grad_feats += &g.input;
                    dhead_grads.push(g);
                }
            }
        }
        if with_grads {
            let g = bundle.trunk.backward(&trunk_tr, grad_feats.view())?;
            grad_z.slice_mut(s![lab_start.., ..]).assign(&g.input);
            trunk_grads = Some(g);
        }
    }

    // conditional discriminator
    let mut disc_grads = None;
    if use_vd {
        let f = bundle.discriminator.as_ref().expect("checked above");
        let mut rows: Vec<Array2<f64>> = Vec::with_capacity(n + n * n);
        let mut targets = Vec::new();
        let mut weights = Vec::new();
        for i in 0..n {
            let no = batch.orig[i].nrows();
            if no == 0 {
                return Err(MudalError::invalid(format!("original domain {i} has an empty batch")));
            }
            let zi = z_all.slice(s![orig_off[i]..orig_off[i] + no, ..]);
            rows.push(append_code(zi, &bundle.code(i)));
            targets.extend(std::iter::repeat_n(1.0, no));
            weights.extend(std::iter::repeat_n(1.0 / (2.0 * nf * no as f64), no));
        }
        for i in 0..n {
            let code = bundle.code(i);
            for j in 0..n {
                let nl = batch.labeled[j].nrows();
                if nl == 0 {
                    continue;
                }
                let zj = z_all.slice(s![lab_off[j]..lab_off[j] + nl, ..]);
                rows.push(append_code(zj, &code));
                targets.extend(std::iter::repeat_n(0.0, nl));
                weights.extend(std::iter::repeat_n(alpha.get(i, j) / (2.0 * nf * nl as f64), nl));
            }
        }
        let views: Vec<ArrayView2<f64>> = rows.iter().map(|r| r.view()).collect();
        let din = concatenate(Axis(0), &views).expect("same width");
        let tr = f.forward(din.view())?;
        let bce = sigmoid_bce_sum(tr.output().column(0), &targets, &weights)?;
        value.vd = bce.loss;
        if with_grads {
            let g = f.backward(&tr, bce.grad.insert_axis(Axis(1)).view())?;
            if sel.vd_into_encoder && sel.lambda_d != 0.0 {
                let coef = -sel.lambda_d;
                let gz = g.input.slice(s![.., ..zdim]);
                let mut r = 0;
                for i in 0..n {
                    let no = batch.orig[i].nrows();
                    let mut dst = grad_z.slice_mut(s![orig_off[i]..orig_off[i] + no, ..]);
                    dst.scaled_add(coef, &gz.slice(s![r..r + no, ..]));
                    r += no;
                }
                for _i in 0..n {
                    for j in 0..n {
                        let nl = batch.labeled[j].nrows();
                        if nl == 0 {
                            continue;
                        }
                        let mut dst = grad_z.slice_mut(s![lab_off[j]..lab_off[j] + nl, ..]);
                        dst.scaled_add(coef, &gz.slice(s![r..r + nl, ..]));
                        r += nl;
                    }
                }
            }
            disc_grads = Some(g);
        }
    }

    value.total = value.vh + value.vlambda - if use_vd { sel.lambda_d * value.vd } else { 0.0 };
    if !(value.vh.is_finite() && value.vd.is_finite() && value.vlambda.is_finite()) {
        return Err(MudalError::NonFinite(format!("objective terms {value:?}")));
    }
    if !with_grads {
        return Ok((value, None));
    }
    let encoder = bundle.encoder.backward(&enc, grad_z.view())?;
    let zero = |net: &crate::nn::DenseNet| Gradients::zeros_like(net, 0);
    let grads = BundleGrads {
        encoder,
        trunk: trunk_grads.unwrap_or_else(|| zero(&bundle.trunk)),
        head: head_grads.unwrap_or_else(|| zero(&bundle.head)),
        domain_heads: if dhead_grads.is_empty() {
            bundle.domain_heads.iter().map(zero).collect()
        } else {
            dhead_grads
        },
        discriminator: disc_grads,
    };
    Ok((value, Some(grads)))
}

/// Per-domain `V_h` with uniform `α`: helper for the weight-algebra checks.
pub fn compute_vh(bundle: &ModelBundle, batch: &StepBatch, alpha: &SimilarityMatrix) -> Result<f64> {
    let sel = TermSelection {
        lambda_d: 0.0,
        use_vd: false,
        use_vlambda: false,
        vd_into_encoder: false,
    };
    Ok(objective(bundle, batch, alpha, &sel, false)?.0.vh)
}

pub fn compute_vd(bundle: &ModelBundle, batch: &StepBatch, alpha: &SimilarityMatrix) -> Result<f64> {
    let sel = TermSelection {
        lambda_d: 1.0,
        use_vd: true,
        use_vlambda: false,
        vd_into_encoder: false,
    };
    Ok(objective(bundle, batch, alpha, &sel, false)?.0.vd)
}

pub fn compute_vlambda(bundle: &ModelBundle, batch: &StepBatch, alpha: &SimilarityMatrix) -> Result<f64> {
    let sel = TermSelection {
        lambda_d: 0.0,
        use_vd: false,
        use_vlambda: true,
        vd_into_encoder: false,
    };
    Ok(objective(bundle, batch, alpha, &sel, false)?.0.vlambda)
}

/// 0/1 statistics of the frozen networks on one batch; everything the
/// α-update and the empirical distance need.
#[derive(Clone, Debug, PartialEq)]
pub struct ZeroOneStats {
    /// Misclassification rate of `h` on `L_j`.
    pub err_h: Vec<f64>,
    /// `err_heads[i][j]`: misclassification rate of `h_i` on `L_j`.
    pub err_heads: Vec<Vec<f64>>,
    /// Fraction of `O_i` the discriminator calls "surrogate".
    pub disc_err_orig: Vec<f64>,
    /// `disc_err_lab[i][j]`: fraction of `L_j` called "original" under code `i`.
    pub disc_err_lab: Vec<Vec<f64>>,
}

impl ZeroOneStats {
    /// Coefficients of the α-dependent part of `T` computed with 0/1 losses:
    /// `c_ij = (err_h[j] + [err_heads[i][j]]) / N − λ_d/(2N) · disc_err_lab[i][j]`.
    pub fn alpha_coefficients(&self, sel: &TermSelection) -> Vec<Vec<f64>> {
        let n = self.err_h.len();
        let nf = n as f64;
        (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| {
                        let mut c = self.err_h[j] / nf;
                        if sel.use_vlambda {
                            c += self.err_heads[i][j] / nf;
                        }
                        if sel.use_vd && !self.disc_err_lab.is_empty() {
                            c -= sel.lambda_d / (2.0 * nf) * self.disc_err_lab[i][j];
                        }
                        c
                    })
                    .collect()
            })
            .collect()
    }

    /// `V_h^{0/1}`, `V_λ^{0/1}` and `V_d^{0/1}` at a given `α`.
    pub fn terms(&self, alpha: &SimilarityMatrix) -> (f64, f64, f64) {
        let n = self.err_h.len();
        let nf = n as f64;
        let cols = alpha.column_importance();
        let vh: f64 = cols.iter().zip(&self.err_h).map(|(a, e)| a * e).sum();
        let mut vl = 0.0;
        let mut vd = 0.0;
        for i in 0..n {
            for j in 0..n {
                vl += alpha.get(i, j) * self.err_heads[i][j] / nf;
                if !self.disc_err_lab.is_empty() {
                    vd += alpha.get(i, j) * self.disc_err_lab[i][j] / (2.0 * nf);
                }
            }
            if !self.disc_err_orig.is_empty() {
                vd += self.disc_err_orig[i] / (2.0 * nf);
            }
        }
        (vh, vl, vd)
    }
}

fn error_rate(pred: &[usize], truth: &[usize]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    pred.iter().zip(truth).filter(|(a, b)| a != b).count() as f64 / truth.len() as f64
}

pub fn zero_one_stats(bundle: &ModelBundle, batch: &StepBatch) -> Result<ZeroOneStats> {
    let n = bundle.n_domains();
    let mut err_h = vec![0.0; n];
    let mut err_heads = vec![vec![0.0; n]; n];
    let mut z_lab = Vec::with_capacity(n);
    for j in 0..n {
        let z = bundle.encode(batch.labeled[j].view())?;
        if z.nrows() > 0 {
            let feats = bundle.trunk.predict(z.view())?;
            err_h[j] = error_rate(
                &argmax_rows(bundle.head.predict(feats.view())?.view()),
                &batch.labels[j],
            );
            for i in 0..n {
                let p = argmax_rows(bundle.domain_heads[i].predict(feats.view())?.view());
                err_heads[i][j] = error_rate(&p, &batch.labels[j]);
            }
        }
        z_lab.push(z);
    }
    let (mut disc_err_orig, mut disc_err_lab) = (Vec::new(), Vec::new());
    if bundle.discriminator.is_some() {
        for i in 0..n {
            let zo = bundle.encode(batch.orig[i].view())?;
            let lo = bundle.disc_logits(zo.view(), i)?;
            disc_err_orig.push(frac(&lo, |v| v < 0.0));
            let row = (0..n)
                .map(|j| {
                    if z_lab[j].nrows() == 0 {
                        return Ok(0.0);
                    }
                    let l = bundle.disc_logits(z_lab[j].view(), i)?;
                    Ok(frac(&l, |v| v >= 0.0))
                })
                .collect::<Result<Vec<_>>>()?;
            disc_err_lab.push(row);
        }
    }
    Ok(ZeroOneStats {
        err_h,
        err_heads,
        disc_err_orig,
        disc_err_lab,
    })
}

fn frac(v: &[f64], pred: impl Fn(f64) -> bool) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().filter(|&&x| pred(x)).count() as f64 / v.len() as f64
    }
}
