//! Numerical side of the error bound: the Hoeffding complexity term, a
//! brute-force check that it is minimised at `β = α`, and the empirical bound
//! components of a trained model.
//!
//! The VC dimension is a user-set proxy, so the bound is only meaningful for
//! comparing runs with the same settings; it is never a certificate.

use ndarray::ArrayView2;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::cal::{argmax_rows, estimate_h_distance, labeled_sets, probe_h_distance, ModelBundle, ProbeConfig, Variant};
use crate::data::{LabeledPool, MultiDomainDataset};
use crate::error::{MudalError, Result};
use crate::par::Exec;
use crate::rng::stream;
use crate::simplex::{project_simplex, SimilarityMatrix};
use crate::table::{sig9, CsvTable};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundParams {
    /// VC-dimension proxy `d`.
    pub vc_dim: f64,
    pub delta: f64,
    /// Total labeled count `M`.
    pub total_labels: usize,
}

impl Default for BoundParams {
    fn default() -> Self {
        Self {
            vc_dim: 1.0,
            delta: 0.05,
            total_labels: 1,
        }
    }
}

impl BoundParams {
    fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(MudalError::invalid(format!("δ must lie in (0, 1), got {}", self.delta)));
        }
        if !(self.vc_dim > 0.0 && self.vc_dim.is_finite()) {
            return Err(MudalError::invalid(format!(
                "VC proxy must be positive, got {}",
                self.vc_dim
            )));
        }
        if self.total_labels == 0 {
            return Err(MudalError::invalid("bound needs M >= 1"));
        }
        Ok(())
    }
}

/// `Σ_j α_j² / β_j`; cells with `α_j = 0` contribute nothing.
pub fn budget_ratio(alpha_cols: &[f64], beta: &[f64]) -> Result<f64> {
    if alpha_cols.len() != beta.len() {
        return Err(MudalError::shape("budget_ratio", alpha_cols.len(), beta.len()));
    }
    let mut s = 0.0;
    for (j, (&a, &b)) in alpha_cols.iter().zip(beta).enumerate() {
        if a == 0.0 {
            continue;
        }
        if b <= 0.0 {
            return Err(MudalError::invalid(format!(
                "β_{j} = {b} with α_{j} = {a}: the bound diverges"
            )));
        }
        s += a * a / b;
    }
    Ok(s)
}

/// `2 √( (Σ_j α_j²/β_j) (2d log(2(M+1)) + log(4/δ)) / M )`.
pub fn hoeffding_term(alpha_cols: &[f64], beta: &[f64], params: &BoundParams) -> Result<f64> {
    params.validate()?;
    let ratio = budget_ratio(alpha_cols, beta)?;
    let m = params.total_labels as f64;
    let inner = 2.0 * params.vc_dim * (2.0 * (m + 1.0)).ln() + (4.0 / params.delta).ln();
    Ok(2.0 * (ratio * inner / m).sqrt())
}

#[derive(Clone, Debug, PartialEq)]
pub struct BetaCheck {
    pub beta_star: Vec<f64>,
    /// `‖β* − α‖∞`.
    pub gap: f64,
    pub min_value: f64,
    /// `Σ_j α_j² / α_j`, which is `Σ_j α_j`.
    pub value_at_alpha: f64,
}

/// Largest `N` searched exhaustively.
pub const GRID_MAX_DOMAINS: usize = 4;

fn compositions(total: usize, parts: usize, prefix: &mut Vec<usize>, out: &mut dyn FnMut(&[usize])) {
    if parts == 1 {
        prefix.push(total);
        out(prefix);
        prefix.pop();
        return;
    }
    for v in 0..=total {
        prefix.push(v);
        compositions(total - v, parts - 1, prefix, out);
        prefix.pop();
    }
}

/// Minimise `Σ_j α_j²/β_j` over the simplex grid of step `grid_step`,
/// skipping cells with `β_j = 0 < α_j`. Exhaustive for `N ≤ 4`; larger `N`
/// uses [`verify_optimal_beta_descent`].
pub fn verify_optimal_beta(alpha_cols: &[f64], grid_step: f64, exec: Exec) -> Result<BetaCheck> {
    let n = alpha_cols.len();
    check_simplex(alpha_cols)?;
    if n > GRID_MAX_DOMAINS {
        return verify_optimal_beta_descent(alpha_cols, 16, 0);
    }
    if !(grid_step > 0.0 && grid_step <= 1.0) {
        return Err(MudalError::invalid(format!(
            "grid step must lie in (0, 1], got {grid_step}"
        )));
    }
    let k = (1.0 / grid_step).round() as usize;
    if ((k as f64) * grid_step - 1.0).abs() > 1e-9 {
        return Err(MudalError::invalid(format!("grid step {grid_step} does not divide 1")));
    }
    if k < n {
        return Err(MudalError::invalid(format!(
            "grid step {grid_step} has no interior point for N = {n}"
        )));
    }
    // split the search on the first coordinate
    let firsts: Vec<usize> = (0..=k).collect();
    let best = exec
        .map(firsts, |v0| {
            let mut best: Option<(f64, Vec<usize>)> = None;
            let mut visit = |rest: &[usize]| {
                let mut cell = Vec::with_capacity(n);
                cell.push(v0);
                cell.extend_from_slice(rest);
                let beta: Vec<f64> = cell.iter().map(|&c| c as f64 / k as f64).collect();
                if let Ok(v) = budget_ratio(alpha_cols, &beta) {
                    if best.as_ref().is_none_or(|(b, _)| v < *b) {
                        best = Some((v, cell));
                    }
                }
            };
            if n == 1 {
                if v0 == k {
                    visit(&[]);
                }
            } else {
                compositions(k - v0, n - 1, &mut Vec::new(), &mut visit);
            }
            best
        })
        .into_iter()
        .flatten()
        .fold(None::<(f64, Vec<usize>)>, |acc, cand| match acc {
            Some(a) if a.0 <= cand.0 => Some(a),
            _ => Some(cand),
        })
        .ok_or_else(|| MudalError::invalid("no admissible grid cell"))?;
    let beta_star: Vec<f64> = best.1.iter().map(|&c| c as f64 / k as f64).collect();
    Ok(summarise(alpha_cols, beta_star, best.0))
}

fn summarise(alpha_cols: &[f64], beta_star: Vec<f64>, min_value: f64) -> BetaCheck {
    let gap = beta_star
        .iter()
        .zip(alpha_cols)
        .map(|(b, a)| (b - a).abs())
        .fold(0.0, f64::max);
    let value_at_alpha = alpha_cols.iter().filter(|&&a| a > 0.0).sum();
    BetaCheck {
        beta_star,
        gap,
        min_value,
        value_at_alpha,
    }
}

fn check_simplex(v: &[f64]) -> Result<()> {
    if v.is_empty() || v.iter().any(|x| !x.is_finite() || *x < 0.0) || (v.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(MudalError::invalid(format!("{v:?} is not on the simplex")));
    }
    Ok(())
}

/// Random-restart projected gradient descent on `Σ_j α_j²/β_j` for larger
/// `N`. Reports the best point found.
pub fn verify_optimal_beta_descent(alpha_cols: &[f64], restarts: usize, seed: u64) -> Result<BetaCheck> {
    check_simplex(alpha_cols)?;
    let n = alpha_cols.len();
    let floor = 1e-6;
    let mut rng = stream(seed, "beta-descent", 0);
    let mut best: Option<(f64, Vec<f64>)> = None;
    for _ in 0..restarts.max(1) {
        let raw: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 0.05).collect();
        let s: f64 = raw.iter().sum();
        let mut beta: Vec<f64> = raw.iter().map(|v| v / s).collect();
        let mut value = budget_ratio(alpha_cols, &beta)?;
        let mut eta = 0.1;
        for _ in 0..5000 {
            let grad: Vec<f64> = alpha_cols.iter().zip(&beta).map(|(a, b)| -(a * a) / (b * b)).collect();
            let cand: Vec<f64> = project_simplex(&beta.iter().zip(&grad).map(|(b, g)| b - eta * g).collect::<Vec<_>>())
                .into_iter()
                .map(|b| b.max(floor))
                .collect();
            let s: f64 = cand.iter().sum();
            let cand: Vec<f64> = cand.iter().map(|b| b / s).collect();
            let v = budget_ratio(alpha_cols, &cand)?;
            if v < value {
                beta = cand;
                value = v;
                eta *= 1.1;
            } else {
                eta *= 0.5;
                if eta < 1e-14 {
                    break;
                }
            }
        }
        if best.as_ref().is_none_or(|(b, _)| value < *b) {
            best = Some((value, beta));
        }
    }
    let (v, b) = best.expect("at least one restart");
    Ok(summarise(alpha_cols, b, v))
}

/// Components of the empirical bound; `total` is their exact sum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    /// `Σ_j α_j ε̂_{L_j}(h)` with 0/1 loss.
    pub weighted_err: f64,
    pub hoeffding: f64,
    /// `(1/2N) Σ_i d̂_i`.
    pub mean_hdist: f64,
    /// `(1/N) Σ_ij α_ij ε̂_{L_j}(h_i)`, the trainable stand-in for the
    /// per-domain optimal joint errors.
    pub vlambda_proxy: f64,
    pub total: f64,
    /// Per original domain `d̂_i`.
    pub hdist: Vec<f64>,
}

/// Where the domain distances come from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum HDistSource {
    /// The model's own conditional discriminator.
    Bundle,
    /// A fresh probe discriminator per domain on the frozen encoder features,
    /// which works for every variant.
    Probe(ProbeConfig, u64),
}

fn zero_one_error(pred: &[usize], truth: &[usize]) -> f64 {
    if truth.is_empty() {
        0.0
    } else {
        pred.iter().zip(truth).filter(|(a, b)| a != b).count() as f64 / truth.len() as f64
    }
}

pub fn empirical_bound(
    bundle: &ModelBundle,
    dataset: &MultiDomainDataset,
    pool: &LabeledPool,
    alpha: &SimilarityMatrix,
    params: &BoundParams,
    source: HDistSource,
) -> Result<BoundReport> {
    let n = dataset.n_domains();
    if alpha.n_domains() != n {
        return Err(MudalError::shape("empirical_bound", n, alpha.n_domains()));
    }
    let total = pool.total_labeled();
    if total == 0 {
        return Err(MudalError::invalid("empirical bound with no labels"));
    }
    let beta: Vec<f64> = (0..n).map(|j| pool.n_labeled(j) as f64 / total as f64).collect();
    let cols = alpha.column_importance();
    let (lab_x, lab_y) = labeled_sets(dataset, pool);

    let mut err_h = vec![0.0; n];
    let mut err_heads = vec![vec![0.0; n]; n];
    for j in 0..n {
        if lab_y[j].is_empty() {
            continue;
        }
        let z = bundle.encode(lab_x[j].view())?;
        let feats = bundle.trunk.predict(z.view())?;
        err_h[j] = zero_one_error(&argmax_rows(bundle.head.predict(feats.view())?.view()), &lab_y[j]);
        for (i, row) in err_heads.iter_mut().enumerate() {
            let p = argmax_rows(bundle.domain_heads[i].predict(feats.view())?.view());
            row[j] = zero_one_error(&p, &lab_y[j]);
        }
    }
    let weighted_err: f64 = cols.iter().zip(&err_h).map(|(a, e)| a * e).sum();
    let vlambda_proxy: f64 = (0..n)
        .map(|i| (0..n).map(|j| alpha.get(i, j) * err_heads[i][j]).sum::<f64>())
        .sum::<f64>()
        / n as f64;
    let hoeffding = hoeffding_term(
        &cols,
        &beta,
        &BoundParams {
            total_labels: total,
            ..*params
        },
    )?;

    let lab_views: Vec<ArrayView2<f64>> = lab_x.iter().map(|x| x.view()).collect();
    let hdist = match source {
        HDistSource::Bundle => (0..n)
            .map(|i| estimate_h_distance(bundle, i, dataset.train_features(i), &lab_views, alpha.row(i)))
            .collect::<Result<Vec<_>>>()?,
        HDistSource::Probe(cfg, seed) => {
            let z_lab = lab_x
                .iter()
                .map(|x| bundle.encode(x.view()))
                .collect::<Result<Vec<_>>>()?;
            let zl: Vec<ArrayView2<f64>> = z_lab.iter().map(|z| z.view()).collect();
            (0..n)
                .map(|i| {
                    let zo = bundle.encode(dataset.train_features(i))?;
                    probe_h_distance(zo.view(), &zl, alpha.row(i), &cfg, seed.wrapping_add(i as u64))
                })
                .collect::<Result<Vec<_>>>()?
        }
    };
    let mean_hdist = hdist.iter().sum::<f64>() / (2.0 * n as f64);
    Ok(BoundReport {
        weighted_err,
        hoeffding,
        mean_hdist,
        vlambda_proxy,
        total: weighted_err + hoeffding + mean_hdist + vlambda_proxy,
        hdist,
    })
}

/// Side-by-side bound components of several variants, tightest first. Purely
/// diagnostic: stochastic training need not reproduce the theoretical order.
pub fn bound_ordering_diag(reports: &[(Variant, BoundReport)]) -> Result<String> {
    if reports.is_empty() {
        return Err(MudalError::invalid("no bound reports to order"));
    }
    let mut order: Vec<usize> = (0..reports.len()).collect();
    order.sort_by(|&a, &b| reports[a].1.total.total_cmp(&reports[b].1.total).then(a.cmp(&b)));
    let mut t = CsvTable::new(&[
        "rank",
        "variant",
        "weighted_err",
        "hoeffding",
        "mean_hdist",
        "vlambda_proxy",
        "total",
    ]);
    for (rank, &k) in order.iter().enumerate() {
        let (v, r) = &reports[k];
        t.push(&[
            (rank + 1).to_string(),
            v.to_string(),
            sig9(r.weighted_err),
            sig9(r.hoeffding),
            sig9(r.mean_hdist),
            sig9(r.vlambda_proxy),
            sig9(r.total),
        ]);
    }
    Ok(t.into_string())
}
