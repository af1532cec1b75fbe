//! Similarity matrix, Euclidean simplex projection and budget assignment
//! across domains.

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{MudalError, Result};
use crate::table::{sig9, CsvTable};

const ROW_SUM_TOL: f64 = 1e-9;

/// Euclidean projection of `v` onto the probability simplex
/// `{w : w ≥ 0, Σ w = 1}` by the sort-and-threshold rule.
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    debug_assert!(v.iter().all(|x| x.is_finite()), "project_simplex on non-finite input");
    if v.is_empty() {
        return Vec::new();
    }
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (k, &u) in sorted.iter().enumerate() {
        cumsum += u;
        let t = (cumsum - 1.0) / (k + 1) as f64;
        if u - t > 0.0 {
            theta = t;
        }
    }
    let mut w: Vec<f64> = v.iter().map(|&x| (x - theta).max(0.0)).collect();
    // a final renormalisation removes the last ulp of drift in the sum
    let s: f64 = w.iter().sum();
    if s > 0.0 {
        w.iter_mut().for_each(|x| *x /= s);
    }
    w
}

/// Row-stochastic `N × N` matrix; row `i` holds the mixture weights of the
/// surrogate for original domain `i` over the labeled domains.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityMatrix {
    alpha: Array2<f64>,
}

impl SimilarityMatrix {
    pub fn new(alpha: Array2<f64>) -> Result<Self> {
        Self::with_tolerance(alpha, ROW_SUM_TOL)
    }

    pub fn with_tolerance(alpha: Array2<f64>, tol: f64) -> Result<Self> {
        let (r, c) = alpha.dim();
        if r != c || r == 0 {
            return Err(MudalError::shape(
                "SimilarityMatrix",
                "non-empty square matrix",
                format!("{r}×{c}"),
            ));
        }
        for (i, row) in alpha.rows().into_iter().enumerate() {
            if row.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(MudalError::invalid(format!(
                    "similarity row {i} has a negative or non-finite entry"
                )));
            }
            let s = row.sum();
            if (s - 1.0).abs() > tol {
                return Err(MudalError::invalid(format!("similarity row {i} sums to {s}")));
            }
        }
        Ok(Self { alpha })
    }

    pub fn uniform(n: usize) -> Self {
        Self {
            alpha: Array2::from_elem((n, n), 1.0 / n as f64),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self { alpha: Array2::eye(n) }
    }

    pub fn n_domains(&self) -> usize {
        self.alpha.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.alpha[[i, j]]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.n_domains();
        &self.alpha.as_slice().expect("standard layout")[i * n..(i + 1) * n]
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.alpha
    }

    /// Replace row `i` with the projection of `values` onto the simplex.
    pub fn set_row_projected(&mut self, i: usize, values: &[f64]) {
        let p = project_simplex(values);
        self.alpha.row_mut(i).iter_mut().zip(p).for_each(|(a, b)| *a = b);
    }

    /// Column means `α_j = (1/N) Σ_i α_{i,j}`.
    pub fn column_importance(&self) -> Vec<f64> {
        column_importance(self)
    }

    /// Rows are surrogate domains, columns labeled domains.
    pub fn to_csv(&self) -> String {
        let n = self.n_domains();
        let mut header = vec!["surrogate".to_string()];
        header.extend((0..n).map(|j| format!("labeled_{j}")));
        let mut t = CsvTable::new(&header);
        for i in 0..n {
            let mut row = vec![i.to_string()];
            row.extend(self.row(i).iter().map(|&v| sig9(v)));
            t.push(&row);
        }
        t.into_string()
    }

    /// Parse the output of [`to_csv`](Self::to_csv); rows must sum to one
    /// within `tol` after the text round-trip.
    pub fn from_csv(text: &str, tol: f64) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| MudalError::invalid("empty similarity CSV"))?;
        let n = header.split(',').count().saturating_sub(1);
        let mut data = Vec::with_capacity(n * n);
        let mut rows = 0;
        for line in lines {
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != n + 1 {
                return Err(MudalError::invalid(format!(
                    "similarity CSV row has {} cells",
                    cells.len()
                )));
            }
            for c in &cells[1..] {
                data.push(
                    c.trim()
                        .parse::<f64>()
                        .map_err(|e| MudalError::invalid(format!("bad similarity value {c:?}: {e}")))?,
                );
            }
            rows += 1;
        }
        let alpha = Array2::from_shape_vec((rows, n), data)
            .map_err(|e| MudalError::invalid(format!("similarity CSV shape: {e}")))?;
        Self::with_tolerance(alpha, tol)
    }
}

pub fn column_importance(alpha: &SimilarityMatrix) -> Vec<f64> {
    alpha.alpha.mean_axis(Axis(0)).expect("non-empty matrix").to_vec()
}

/// Round non-negative reals summing to `m` to integers summing to `m`:
/// floor everything, then hand out the remaining units by descending
/// fractional part, ties to the lower index.
pub fn largest_remainder_round(fractions: &[f64], m: usize) -> Result<Vec<usize>> {
    if fractions.iter().any(|f| !f.is_finite() || *f < 0.0) {
        return Err(MudalError::invalid(
            "largest_remainder_round: entries must be finite and >= 0",
        ));
    }
    let total: f64 = fractions.iter().sum();
    if (total - m as f64).abs() > 1e-6 * (m as f64).max(1.0) {
        return Err(MudalError::invalid(format!(
            "largest_remainder_round: entries sum to {total}, expected {m}"
        )));
    }
    // snap values that are integers up to roundoff so they never receive a unit
    let snapped: Vec<f64> = fractions
        .iter()
        .map(|&f| if (f - f.round()).abs() < 1e-9 { f.round() } else { f })
        .collect();
    let mut out: Vec<usize> = snapped.iter().map(|f| f.floor() as usize).collect();
    let assigned: usize = out.iter().sum();
    if assigned > m {
        return Err(MudalError::invalid("largest_remainder_round: floors exceed the total"));
    }
    let mut order: Vec<usize> = (0..snapped.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = snapped[a] - snapped[a].floor();
        let fb = snapped[b] - snapped[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &j in order.iter().take(m - assigned) {
        out[j] += 1;
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BudgetMode {
    /// Move the cumulative shares β toward the current column importances α.
    #[default]
    TargetTracking,
    /// Increment by `(α^(r) − α^(r−1)) · m`, clamped and renormalised.
    PaperLiteral,
}

/// Label-count bookkeeping across rounds.
#[derive(Clone, Debug, PartialEq)]
pub struct BudgetLedger {
    pub m0: usize,
    pub m: usize,
    initial: Vec<usize>,
    increments: Vec<Vec<usize>>,
}

impl BudgetLedger {
    /// `initial[j]` is the round-0 labeled count of domain `j`.
    pub fn new(m0: usize, m: usize, initial: Vec<usize>) -> Result<Self> {
        if initial.iter().sum::<usize>() != m0 {
            return Err(MudalError::Budget(format!(
                "initial counts {initial:?} do not add up to m0 = {m0}"
            )));
        }
        Ok(Self {
            m0,
            m,
            initial,
            increments: Vec::new(),
        })
    }

    pub fn n_domains(&self) -> usize {
        self.initial.len()
    }

    /// Number of query rounds recorded so far.
    pub fn rounds(&self) -> usize {
        self.increments.len()
    }

    pub fn increments(&self, round: usize) -> Option<&[usize]> {
        round
            .checked_sub(1)
            .and_then(|r| self.increments.get(r))
            .map(Vec::as_slice)
    }

    /// Record the per-domain increments of the next round. The increments
    /// must add up to `m` unless `allow_short` (pool exhaustion).
    pub fn record(&mut self, increments: Vec<usize>, allow_short: bool) -> Result<()> {
        if increments.len() != self.n_domains() {
            return Err(MudalError::shape(
                "BudgetLedger::record",
                self.n_domains(),
                increments.len(),
            ));
        }
        let s: usize = increments.iter().sum();
        if s > self.m || (!allow_short && s != self.m) {
            return Err(MudalError::Budget(format!(
                "round increments sum to {s}, expected {}",
                self.m
            )));
        }
        self.increments.push(increments);
        Ok(())
    }

    /// Cumulative labeled count of each domain after `round`.
    pub fn labeled_after(&self, round: usize) -> Vec<usize> {
        let mut c = self.initial.clone();
        for inc in self.increments.iter().take(round) {
            c.iter_mut().zip(inc).for_each(|(a, b)| *a += b);
        }
        c
    }

    pub fn labeled(&self) -> Vec<usize> {
        self.labeled_after(self.rounds())
    }

    pub fn total_after(&self, round: usize) -> usize {
        self.labeled_after(round).iter().sum()
    }

    /// `β_j^(r)`: domain `j`'s share of everything labeled through round `r`.
    pub fn beta(&self, round: usize) -> Vec<f64> {
        let c = self.labeled_after(round);
        let total: usize = c.iter().sum();
        c.iter().map(|&x| x as f64 / total as f64).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Assignment {
    pub increments: Vec<usize>,
    /// Negative raw targets were zeroed or a capacity cap was hit.
    pub clamped: bool,
}

/// Split the next round's `m` labels across domains.
///
/// Target tracking: raw target `α_j (m0 + r m) − labeled_j`. Paper-literal:
/// `(α_j − α_j^prev) m`. Both then go through clamp at zero, capacity cap,
/// proportional rescale to `m`, and largest-remainder rounding.
pub fn assign_budget(
    mode: BudgetMode,
    alpha_cols: &[f64],
    previous_alpha_cols: Option<&[f64]>,
    ledger: &BudgetLedger,
    capacities: &[usize],
) -> Result<Assignment> {
    let n = ledger.n_domains();
    if alpha_cols.len() != n || capacities.len() != n {
        return Err(MudalError::shape(
            "assign_budget",
            n,
            format!("{}/{}", alpha_cols.len(), capacities.len()),
        ));
    }
    let m = ledger.m;
    let cap_total: usize = capacities.iter().sum();
    if cap_total < m {
        return Err(MudalError::Budget(format!(
            "only {cap_total} unlabeled points left for a round budget of {m}"
        )));
    }
    let round = ledger.rounds() + 1;
    let raw: Vec<f64> = match mode {
        BudgetMode::TargetTracking => {
            let horizon = (ledger.m0 + round * m) as f64;
            let labeled = ledger.labeled();
            alpha_cols
                .iter()
                .zip(&labeled)
                .map(|(&a, &l)| a * horizon - l as f64)
                .collect()
        }
        BudgetMode::PaperLiteral => {
            let prev = previous_alpha_cols
                .ok_or_else(|| MudalError::Budget("paper-literal mode needs the previous round's α".into()))?;
            if prev.len() != n {
                return Err(MudalError::shape("assign_budget", n, prev.len()));
            }
            alpha_cols.iter().zip(prev).map(|(&a, &p)| (a - p) * m as f64).collect()
        }
    };
    let mut clamped = raw.iter().any(|&r| r < 0.0);
    let positive: Vec<f64> = raw.iter().map(|&r| r.max(0.0)).collect();
    let (shares, capped) = capped_proportional(&positive, capacities, m);
    clamped |= capped;
    let increments = largest_remainder_round(&shares, m)?;
    debug_assert!(increments.iter().zip(capacities).all(|(a, c)| a <= c));
    if clamped {
        log::debug!("budget round {round}: clamped raw targets {raw:?} -> {increments:?}");
    }
    Ok(Assignment { increments, clamped })
}

/// Real-valued allocation of `m` units proportional to `weights`, never
/// exceeding `caps`. Saturated entries are frozen and the rest rescaled.
/// When no positive weight remains unsaturated the leftover is spread in
/// proportion to remaining capacity.
fn capped_proportional(weights: &[f64], caps: &[usize], m: usize) -> (Vec<f64>, bool) {
    let n = weights.len();
    let mut alloc = vec![0.0; n];
    let mut frozen = vec![false; n];
    let mut capped = false;
    for (j, &c) in caps.iter().enumerate() {
        if c == 0 {
            frozen[j] = true;
            capped |= weights[j] > 0.0;
        }
    }
    loop {
        let fixed: f64 = (0..n).filter(|&j| frozen[j]).map(|j| alloc[j]).sum();
        let remaining = m as f64 - fixed;
        let mut w_sum: f64 = (0..n).filter(|&j| !frozen[j]).map(|j| weights[j]).sum();
        let mut w: Vec<f64> = weights.to_vec();
        if w_sum <= 0.0 {
            // fall back to spare capacity
            for j in 0..n {
                w[j] = if frozen[j] { 0.0 } else { caps[j] as f64 - alloc[j] };
            }
            w_sum = w.iter().sum();
            if remaining > 0.0 {
                capped = true;
            }
        }
        if w_sum <= 0.0 || remaining <= 0.0 {
            break;
        }
        let mut overflow = false;
        for j in 0..n {
            if !frozen[j] {
                alloc[j] = remaining * w[j] / w_sum;
                if alloc[j] > caps[j] as f64 {
                    alloc[j] = caps[j] as f64;
                    frozen[j] = true;
                    overflow = true;
                }
            }
        }
        if !overflow {
            break;
        }
        capped = true;
    }
    (alloc, capped)
}

/// Even split `m / N`; requires `N | m`.
pub fn separate_budget(n: usize, m: usize) -> Result<Vec<usize>> {
    if n == 0 || !m.is_multiple_of(n) {
        return Err(MudalError::Budget(format!(
            "separate assignment needs N | m (N = {n}, m = {m})"
        )));
    }
    Ok(vec![m / n; n])
}
