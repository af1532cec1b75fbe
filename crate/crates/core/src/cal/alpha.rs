//! Projected-gradient updates of the similarity matrix.
//!
//! With the networks frozen the α-dependent part of the 0/1 objective is
//! linear in every row, `Σ_j c_ij α_ij`, so a row step is
//! `α_i ← P_Δ(α_i − η c_i)`, halving `η` until the row value does not grow.

use super::bundle::ModelBundle;
use super::objective::{zero_one_stats, StepBatch, TermSelection};
use crate::error::{MudalError, Result};
use crate::simplex::{project_simplex, SimilarityMatrix};

const MAX_HALVINGS: usize = 40;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// One guarded projected step on a single row. Returns the new row; the
/// linear value `c · row` never increases.
pub fn alpha_row_step(row: &[f64], coeffs: &[f64], lr: f64) -> Vec<f64> {
    let lo = coeffs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = coeffs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo <= f64::EPSILON * hi.abs().max(lo.abs()).max(1.0) {
        return row.to_vec();
    }
    let old = dot(coeffs, row);
    let mut eta = lr;
    for _ in 0..MAX_HALVINGS {
        let moved: Vec<f64> = row.iter().zip(coeffs).map(|(a, c)| a - eta * c).collect();
        let cand = project_simplex(&moved);
        if dot(coeffs, &cand) <= old {
            return cand;
        }
        eta *= 0.5;
    }
    row.to_vec()
}

/// Step every row of `alpha` against its coefficient row.
pub fn alpha_step_with_coefficients(alpha: &mut SimilarityMatrix, coeffs: &[Vec<f64>], lr: f64) -> Result<()> {
    let n = alpha.n_domains();
    if coeffs.len() != n || coeffs.iter().any(|c| c.len() != n) {
        return Err(MudalError::shape(
            "alpha_step",
            format!("{n}x{n} coefficients"),
            coeffs.len(),
        ));
    }
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(MudalError::invalid(format!(
            "α learning rate must be positive, got {lr}"
        )));
    }
    if coeffs.iter().flatten().any(|c| !c.is_finite()) {
        return Err(MudalError::NonFinite("α coefficients".into()));
    }
    for (i, c) in coeffs.iter().enumerate() {
        let next = alpha_row_step(alpha.row(i), c, lr);
        alpha.set_row_projected(i, &next);
    }
    Ok(())
}

/// Frozen-network α step on one minibatch: 0/1 coefficients from the
/// current `h`, `h_i` and `f`, then a guarded projected step per row.
pub fn alpha_step(
    bundle: &ModelBundle,
    alpha: &mut SimilarityMatrix,
    batch: &StepBatch,
    sel: &TermSelection,
    lr: f64,
) -> Result<()> {
    let stats = zero_one_stats(bundle, batch)?;
    alpha_step_with_coefficients(alpha, &stats.alpha_coefficients(sel), lr)
}

/// The α-dependent part `Σ_ij c_ij α_ij` of the linearised objective.
pub fn linear_alpha_value(alpha: &SimilarityMatrix, coeffs: &[Vec<f64>]) -> f64 {
    coeffs.iter().enumerate().map(|(i, c)| dot(c, alpha.row(i))).sum()
}

/// Exact minimum of the linear objective over the product of simplices:
/// each row puts all its mass on its smallest coefficient.
pub fn vertex_minimum(coeffs: &[Vec<f64>]) -> f64 {
    coeffs
        .iter()
        .map(|c| c.iter().copied().fold(f64::INFINITY, f64::min))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_coefficients_leave_row_alone() {
        let row = [0.2, 0.5, 0.3];
        assert_eq!(alpha_row_step(&row, &[0.7, 0.7, 0.7], 5.0), row.to_vec());
    }

    #[test]
    fn dominant_domain_gains_weight() {
        let row = [1.0 / 3.0; 3];
        let next = alpha_row_step(&row, &[0.1, 0.4, 0.4], 0.5);
        assert!(next[0] > row[0]);
        assert!((next.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn repeated_steps_reach_the_vertex() {
        let coeffs = vec![vec![0.3, 0.1, 0.2], vec![0.0, 0.5, 0.25], vec![0.4, 0.4, 0.1]];
        let mut a = SimilarityMatrix::uniform(3);
        for _ in 0..50 {
            alpha_step_with_coefficients(&mut a, &coeffs, 1.0).unwrap();
        }
        assert!((linear_alpha_value(&a, &coeffs) - vertex_minimum(&coeffs)).abs() < 1e-12);
        assert_eq!(a.get(0, 1), 1.0);
    }
}
