use mudal::cal::{BundleShape, DomainCode, ModelBundle};
use mudal::nn::softmax_with_temperature;
use mudal::query::{
    badge_embeddings, gradient_embeddings, margins, select, select_margin, select_random, QueryRequest, Strategy,
};
use mudal::rng::stream;
use ndarray::{array, Array2};
use rand::Rng as _;

fn bundle(seed: u64) -> ModelBundle {
    let shape = BundleShape {
        input_dim: 2,
        n_classes: 4,
        n_domains: 2,
        hidden: 8,
        latent: 6,
        disc_hidden: 6,
        code: DomainCode::OneHot,
    };
    ModelBundle::new(shape, true, &mut stream(seed, "query-bundle", 0)).unwrap()
}

fn pool(seed: u64, n: usize) -> Array2<f64> {
    let mut rng = stream(seed, "query-pool", 0);
    Array2::from_shape_fn((n, 2), |_| rng.random_range(-3.0..3.0))
}

#[test]
fn margin_selection_matches_full_sort() {
    let b = bundle(1);
    let x = pool(1, 20);
    let probs = softmax_with_temperature(b.logits(x.view()).unwrap().view(), 1.0);
    let mut scored: Vec<(f64, usize)> = probs
        .rows()
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            let mut v = r.to_vec();
            v.sort_by(|a, b| b.total_cmp(a));
            (v[0] - v[1], i)
        })
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let expect: Vec<usize> = scored[..5].iter().map(|s| s.1).collect();
    assert_eq!(select_margin(&b, x.view(), 5).unwrap(), expect);
}

#[test]
fn two_class_embedding_by_hand() {
    let emb = gradient_embeddings(array![[0.7, 0.3]].view(), array![[1.0, 0.0]].view());
    for (got, want) in emb.row(0).iter().zip([-0.3, 0.0, 0.3, 0.0]) {
        assert!((got - want).abs() < 1e-15);
    }
}

#[test]
fn sharpening_favours_uncertain_samples() {
    let b = bundle(3);
    let x = pool(3, 60);
    let probs = softmax_with_temperature(b.logits(x.view()).unwrap().view(), 1.0);
    let m = margins(probs.view());
    let low = (0..60).min_by(|&a, &c| m[a].total_cmp(&m[c])).unwrap();
    let high = (0..60).max_by(|&a, &c| m[a].total_cmp(&m[c])).unwrap();
    let norm = |e: &Array2<f64>, r: usize| e.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
    let e1 = badge_embeddings(&b, x.view(), 1.0).unwrap();
    let e05 = badge_embeddings(&b, x.view(), 0.5).unwrap();
    let ratio1 = norm(&e1, low) / norm(&e1, high);
    let ratio05 = norm(&e05, low) / norm(&e05, high);
    assert!(ratio05 > ratio1, "T = 0.5 ratio {ratio05} vs T = 1 ratio {ratio1}");
}

#[test]
fn random_selection_is_distinct_and_sorted() {
    let mut rng = stream(4, "query-random", 0);
    let picks = select_random(50, 12, &mut rng).unwrap();
    assert_eq!(picks.len(), 12);
    assert!(picks.windows(2).all(|w| w[0] < w[1]));
    assert!(select_random(5, 6, &mut rng).is_err());
}

#[test]
fn every_strategy_returns_k_distinct_rows() {
    let b = bundle(5);
    let x = pool(5, 30);
    let domains: Vec<usize> = (0..30).map(|r| r % 2).collect();
    for s in [Strategy::Random, Strategy::Margin, Strategy::Badge, Strategy::Grads] {
        let req = QueryRequest {
            x: x.view(),
            domains: &domains,
            k: 7,
            temperature: 0.5,
        };
        let mut picks = select(s, &b, &req, &mut stream(5, "query-all", 0)).unwrap();
        picks.sort_unstable();
        picks.dedup();
        assert_eq!(picks.len(), 7, "{s}");
        assert!(picks.iter().all(|&p| p < 30));
    }
}
