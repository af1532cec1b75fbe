use mudal::simplex::{
    assign_budget, largest_remainder_round, project_simplex, BudgetLedger, BudgetMode, SimilarityMatrix,
};
use ndarray::array;

#[test]
fn projection_matches_fine_grid_search() {
    let v = [1.2, -0.3, 0.1];
    let w = project_simplex(&v);
    let dist = |p: [f64; 3]| p.iter().zip(&v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    let steps = 1000;
    let mut best = (f64::INFINITY, [0.0; 3]);
    for a in 0..=steps {
        for b in 0..=steps - a {
            let p = [
                a as f64 / steps as f64,
                b as f64 / steps as f64,
                (steps - a - b) as f64 / steps as f64,
            ];
            let d = dist(p);
            if d < best.0 {
                best = (d, p);
            }
        }
    }
    for k in 0..3 {
        assert!(
            (w[k] - best.1[k]).abs() <= 1e-3,
            "coordinate {k}: {} vs {}",
            w[k],
            best.1[k]
        );
    }
}

#[test]
fn column_importance_is_the_column_mean() {
    let a = SimilarityMatrix::new(array![[0.5, 0.3, 0.2], [0.1, 0.8, 0.1], [0.25, 0.25, 0.5]]).unwrap();
    let cols = a.column_importance();
    let expect = [
        (0.5 + 0.1 + 0.25) / 3.0,
        (0.3 + 0.8 + 0.25) / 3.0,
        (0.2 + 0.1 + 0.5) / 3.0,
    ];
    for j in 0..3 {
        assert!((cols[j] - expect[j]).abs() < 1e-15);
    }
}

#[test]
fn target_tracking_hand_trace() {
    // targets (0.8, 0.2) * 20 - (5, 5) = (11, -1) -> clamp (11, 0) -> rescale to 10
    let ledger = BudgetLedger::new(10, 10, vec![5, 5]).unwrap();
    let a = assign_budget(BudgetMode::TargetTracking, &[0.8, 0.2], None, &ledger, &[100, 100]).unwrap();
    assert_eq!(a.increments, vec![10, 0]);
    assert!(a.clamped);
}

/// Integer vectors summing to `m` closest to `x` in L1, by enumeration.
fn closest_roundings(x: &[f64], m: usize) -> (f64, Vec<Vec<usize>>) {
    let mut best = (f64::INFINITY, Vec::new());
    let mut cur = vec![0usize; x.len()];
    fn rec(k: usize, left: usize, x: &[f64], cur: &mut Vec<usize>, best: &mut (f64, Vec<Vec<usize>>)) {
        if k + 1 == x.len() {
            cur[k] = left;
            let d: f64 = x.iter().zip(cur.iter()).map(|(a, &b)| (a - b as f64).abs()).sum();
            if d < best.0 - 1e-12 {
                *best = (d, vec![cur.clone()]);
            } else if (d - best.0).abs() <= 1e-12 {
                best.1.push(cur.clone());
            }
            return;
        }
        for v in 0..=left {
            cur[k] = v;
            rec(k + 1, left - v, x, cur, best);
        }
    }
    rec(0, m, x, &mut cur, &mut best);
    best
}

#[test]
fn largest_remainder_is_a_closest_rounding() {
    let x = [1.7, 2.6, 0.7];
    let (_, optima) = closest_roundings(&x, 5);
    assert_eq!(optima, vec![vec![2, 2, 1]]);
    assert_eq!(largest_remainder_round(&x, 5).unwrap(), vec![2, 2, 1]);

    for x in [[0.4, 3.3, 1.3], [2.5, 2.5, 0.0], [0.9, 0.9, 3.2]] {
        let r = largest_remainder_round(&x, 5).unwrap();
        let (d, optima) = closest_roundings(&x, 5);
        let got: f64 = x.iter().zip(&r).map(|(a, &b)| (a - b as f64).abs()).sum();
        assert!((got - d).abs() <= 1e-12, "{x:?} -> {r:?}, optima {optima:?}");
    }
}

#[test]
fn similarity_csv_reload_keeps_rows_stochastic() {
    let a = SimilarityMatrix::new(array![
        [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
        [0.1, 0.7, 0.2],
        [0.0, 0.0, 1.0]
    ])
    .unwrap();
    let back = SimilarityMatrix::from_csv(&a.to_csv(), 1e-6).unwrap();
    for i in 0..3 {
        assert!((back.row(i).iter().sum::<f64>() - 1.0).abs() <= 1e-6);
        for j in 0..3 {
            assert!((back.get(i, j) - a.get(i, j)).abs() < 1e-8);
        }
    }
}
