//! Instance-level query strategies. Strategies are pure: they return indices
//! into the candidate list and never touch the pool.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::cal::{argmax_rows, ModelBundle};
use crate::error::{MudalError, Result};
use crate::nn::{sigmoid, softmax_with_temperature};
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    #[default]
    Random,
    Margin,
    Badge,
    /// BADGE embeddings at a softmax temperature, scaled by the
    /// discriminator's outlier score.
    Grads,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::Random, Strategy::Margin, Strategy::Badge, Strategy::Grads];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Random => "random",
            Strategy::Margin => "margin",
            Strategy::Badge => "badge",
            Strategy::Grads => "grads",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = MudalError;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| MudalError::Config(format!("unknown strategy {s:?} (random | margin | badge | grads)")))
    }
}

/// A batch query over candidate rows `x`; `domains[r]` is the original
/// domain of row `r` (all equal for a per-domain query). Selections are
/// positions into these rows.
#[derive(Clone, Copy, Debug)]
pub struct QueryRequest<'a> {
    pub x: ArrayView2<'a, f64>,
    pub domains: &'a [usize],
    pub k: usize,
    pub temperature: f64,
}

impl QueryRequest<'_> {
    fn validate(&self) -> Result<()> {
        if self.domains.len() != self.x.nrows() {
            return Err(MudalError::shape("QueryRequest", self.x.nrows(), self.domains.len()));
        }
        if self.k > self.x.nrows() {
            return Err(MudalError::invalid(format!(
                "query of {} from {} unlabeled candidates",
                self.k,
                self.x.nrows()
            )));
        }
        Ok(())
    }
}

/// Dispatch to a strategy. Output has exactly `k` distinct positions.
pub fn select(strategy: Strategy, bundle: &ModelBundle, req: &QueryRequest, rng: &mut Rng) -> Result<Vec<usize>> {
    req.validate()?;
    match strategy {
        Strategy::Random => select_random(req.x.nrows(), req.k, rng),
        Strategy::Margin => select_margin(bundle, req.x, req.k),
        Strategy::Badge => {
            let emb = badge_embeddings(bundle, req.x, 1.0)?;
            kmeanspp_select(emb.view(), req.k, rng)
        }
        Strategy::Grads => grads_select(bundle, req, rng),
    }
}

/// `k` positions out of `n`, uniform without replacement, ascending.
pub fn select_random(n: usize, k: usize, rng: &mut Rng) -> Result<Vec<usize>> {
    if k > n {
        return Err(MudalError::invalid(format!("cannot draw {k} of {n}")));
    }
    let mut out = rand::seq::index::sample(rng, n, k).into_vec();
    out.sort_unstable();
    Ok(out)
}

/// Top-1 minus top-2 probability per row.
pub fn margins(probs: ArrayView2<f64>) -> Vec<f64> {
    probs
        .rows()
        .into_iter()
        .map(|r| {
            let (mut a, mut b) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
            for &p in r {
                if p > a {
                    b = a;
                    a = p;
                } else if p > b {
                    b = p;
                }
            }
            if b.is_finite() {
                a - b
            } else {
                a
            }
        })
        .collect()
}

/// Positions of the `k` smallest margins, ties by position.
pub fn smallest_k(scores: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    order.truncate(k);
    order
}

pub fn select_margin(bundle: &ModelBundle, x: ArrayView2<f64>, k: usize) -> Result<Vec<usize>> {
    if k > x.nrows() {
        return Err(MudalError::invalid(format!("cannot pick {k} of {}", x.nrows())));
    }
    let probs = softmax_with_temperature(bundle.logits(x)?.view(), 1.0);
    Ok(smallest_k(&margins(probs.view()), k))
}

/// Classifier probabilities at temperature `T` and the penultimate features
/// (the input of the final layer of `h`).
pub fn probs_and_features(
    bundle: &ModelBundle,
    x: ArrayView2<f64>,
    temperature: f64,
) -> Result<(Array2<f64>, Array2<f64>)> {
    let z = bundle.encode(x)?;
    let feats = bundle.trunk.predict(z.view())?;
    let logits = bundle.head.predict(feats.view())?;
    Ok((softmax_with_temperature(logits.view(), temperature), feats))
}

/// Last-layer gradient embeddings `(p − e_ŷ) ⊗ z`, flattened class-major
/// (row `c` of the final weight matrix first).
pub fn gradient_embeddings(probs: ArrayView2<f64>, feats: ArrayView2<f64>) -> Array2<f64> {
    let (b, c) = probs.dim();
    let h = feats.ncols();
    let yhat = argmax_rows(probs);
    let mut out = Array2::zeros((b, c * h));
    for r in 0..b {
        for k in 0..c {
            let g = probs[[r, k]] - if k == yhat[r] { 1.0 } else { 0.0 };
            for q in 0..h {
                out[[r, k * h + q]] = g * feats[[r, q]];
            }
        }
    }
    out
}

pub fn badge_embeddings(bundle: &ModelBundle, x: ArrayView2<f64>, temperature: f64) -> Result<Array2<f64>> {
    let (p, z) = probs_and_features(bundle, x, temperature)?;
    Ok(gradient_embeddings(p.view(), z.view()))
}

/// `sigmoid(f(e(x), code(domain)))` per row: the outlier score.
pub fn outlier_scores(bundle: &ModelBundle, x: ArrayView2<f64>, domains: &[usize]) -> Result<Vec<f64>> {
    if bundle.discriminator.is_none() {
        return Err(MudalError::MissingDiscriminator("GraDS outlier scores"));
    }
    let z = bundle.encode(x)?;
    let mut scores = vec![0.0; x.nrows()];
    let mut distinct: Vec<usize> = domains.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    for i in distinct {
        let rows: Vec<usize> = (0..domains.len()).filter(|&r| domains[r] == i).collect();
        let logits = bundle.disc_logits(z.select(Axis(0), &rows).view(), i)?;
        for (&r, l) in rows.iter().zip(logits) {
            scores[r] = sigmoid(l);
        }
    }
    Ok(scores)
}

pub fn scale_rows(mut emb: Array2<f64>, scores: &[f64]) -> Array2<f64> {
    for (mut row, &s) in emb.rows_mut().into_iter().zip(scores) {
        row *= s;
    }
    emb
}

pub fn grads_embeddings(bundle: &ModelBundle, req: &QueryRequest) -> Result<Array2<f64>> {
    let scores = outlier_scores(bundle, req.x, req.domains)?;
    Ok(scale_rows(badge_embeddings(bundle, req.x, req.temperature)?, &scores))
}

pub fn grads_select(bundle: &ModelBundle, req: &QueryRequest, rng: &mut Rng) -> Result<Vec<usize>> {
    req.validate()?;
    let emb = grads_embeddings(bundle, req)?;
    kmeanspp_select(emb.view(), req.k, rng)
}

fn sq_dist(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-means++ seeding; the seeds are the selection, in the order chosen.
/// The first is uniform, each next is drawn with probability proportional
/// to its squared distance to the nearest chosen point. If every remaining
/// point coincides with a chosen one the draw falls back to uniform over the
/// unchosen rows.
pub fn kmeanspp_select(vectors: ArrayView2<f64>, k: usize, rng: &mut Rng) -> Result<Vec<usize>> {
    let n = vectors.nrows();
    if k > n {
        return Err(MudalError::invalid(format!("k-means++ asked for {k} of {n} points")));
    }
    if k == 0 {
        return Ok(Vec::new());
    }
    if vectors.iter().any(|v| !v.is_finite()) {
        return Err(MudalError::NonFinite("k-means++ input".into()));
    }
    let mut chosen = Vec::with_capacity(k);
    let mut taken = vec![false; n];
    let first = rng.random_range(0..n);
    chosen.push(first);
    taken[first] = true;
    let mut d2: Vec<f64> = (0..n).map(|r| sq_dist(vectors.row(r), vectors.row(first))).collect();
    d2[first] = 0.0;
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let u = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (r, &d) in d2.iter().enumerate() {
                if d > 0.0 {
                    acc += d;
                    pick = Some(r);
                    if acc > u {
                        break;
                    }
                }
            }
            pick.expect("positive total")
        } else {
            let free: Vec<usize> = (0..n).filter(|&r| !taken[r]).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen.push(next);
        taken[next] = true;
        for r in 0..n {
            if taken[r] {
                d2[r] = 0.0;
            } else {
                d2[r] = d2[r].min(sq_dist(vectors.row(r), vectors.row(next)));
            }
        }
    }
    Ok(chosen)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use ndarray::array;

    #[test]
    fn margin_arithmetic() {
        let m = margins(array![[0.6, 0.3, 0.1], [0.25, 0.25, 0.5]].view());
        assert!((m[0] - 0.3).abs() < 1e-15);
        assert!((m[1] - 0.25).abs() < 1e-15);
        assert_eq!(smallest_k(&[0.3, 0.1, 0.1, 0.9], 2), vec![1, 2]);
    }

    #[test]
    fn one_hot_probability_gives_zero_embedding() {
        let e = gradient_embeddings(array![[0.0, 1.0]].view(), array![[2.0, 3.0]].view());
        assert!(e.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_class_hand_case() {
        let e = gradient_embeddings(array![[0.7, 0.3]].view(), array![[1.0, 0.0]].view());
        let want = [-0.3, 0.0, 0.3, 0.0];
        for (a, b) in e.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn kmeanspp_edge_cases() {
        let v = array![[0.0], [0.0], [1.0]];
        let mut rng = stream(0, "t", 0);
        assert_eq!(kmeanspp_select(v.view(), 0, &mut rng).unwrap(), Vec::<usize>::new());
        assert!(kmeanspp_select(v.view(), 4, &mut rng).is_err());
        let all = kmeanspp_select(v.view(), 3, &mut rng).unwrap();
        let mut s = all.clone();
        s.sort_unstable();
        assert_eq!(s, vec![0, 1, 2]);
        assert_eq!(select_random(5, 5, &mut rng).unwrap(), vec![0, 1, 2, 3, 4]);
    }
}
