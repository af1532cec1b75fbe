use std::f64::consts::PI;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::idx::{rotate_image, IdxDataset};
use super::{DomainData, MultiDomainDataset};
use crate::error::{MudalError, Result};
use crate::rng::{stream, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BaseShape {
    /// `C` isotropic blobs centred on the unit circle at angles `2πc/C`.
    #[default]
    GaussianBlobs,
    /// `C` interleaved half-moon arcs (the two-moons layout continued
    /// sideways), recentred on the origin.
    TwoMoonsK,
    /// `C` isotropic blobs on the positive x-axis at radii `1 + 0.6c`.
    /// Rotation moves them along concentric arcs, so the class is a function
    /// of the radius and the labeling rule agrees across all rotations.
    RadialBlobs,
}

/// Radial distance between neighbouring class centres of `RadialBlobs`.
const RADIAL_GAP: f64 = 0.6;

/// Most moons the interleaved layout keeps apart.
const MAX_MOONS: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RotatingSpec {
    pub n_domains: usize,
    pub train_per_domain: usize,
    pub test_per_domain: usize,
    pub n_classes: usize,
    /// Total rotation range in degrees, split into `n_domains` equal
    /// contiguous sub-ranges.
    pub angle_range_deg: f64,
    pub base_shape: BaseShape,
    pub noise: f64,
    pub seed: u64,
}

impl Default for RotatingSpec {
    fn default() -> Self {
        Self {
            n_domains: 6,
            train_per_domain: 400,
            test_per_domain: 200,
            n_classes: 4,
            angle_range_deg: 180.0,
            base_shape: BaseShape::GaussianBlobs,
            noise: 0.15,
            seed: 0,
        }
    }
}

impl RotatingSpec {
    /// Half-open rotation sub-range `[lo, hi)` of domain `i` in degrees.
    pub fn sub_range(&self, i: usize) -> (f64, f64) {
        let w = self.angle_range_deg / self.n_domains as f64;
        (i as f64 * w, (i + 1) as f64 * w)
    }

    fn validate(&self) -> Result<()> {
        if self.n_domains == 0 {
            return Err(MudalError::invalid("n_domains must be >= 1"));
        }
        if self.train_per_domain == 0 {
            return Err(MudalError::invalid("train_per_domain must be >= 1"));
        }
        if self.n_classes < 2 {
            return Err(MudalError::invalid("n_classes must be >= 2"));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite())
            || !self.angle_range_deg.is_finite()
            || self.angle_range_deg < 0.0
        {
            return Err(MudalError::invalid("noise and angle range must be finite and >= 0"));
        }
        match self.base_shape {
            BaseShape::GaussianBlobs => {
                // neighbouring centres must sit at least 4σ apart
                let gap = 2.0 * (PI / self.n_classes as f64).sin();
                if gap < 4.0 * self.noise {
                    return Err(MudalError::invalid(format!(
                        "{} blobs with σ = {} are not distinguishable (centre gap {gap:.3})",
                        self.n_classes, self.noise
                    )));
                }
            }
            BaseShape::RadialBlobs => {
                if RADIAL_GAP < 4.0 * self.noise {
                    return Err(MudalError::invalid(format!(
                        "radial blobs {RADIAL_GAP} apart are not distinguishable with σ = {}",
                        self.noise
                    )));
                }
            }
            BaseShape::TwoMoonsK => {
                if self.n_classes > MAX_MOONS {
                    return Err(MudalError::invalid(format!(
                        "two_moons_k supports at most {MAX_MOONS} classes, got {}",
                        self.n_classes
                    )));
                }
            }
        }
        Ok(())
    }

    /// Un-rotated sample of class `c`.
    fn base_point(&self, c: usize, rng: &mut Rng, normal: &Normal<f64>) -> [f64; 2] {
        let (x, y) = match self.base_shape {
            BaseShape::GaussianBlobs => {
                let a = 2.0 * PI * c as f64 / self.n_classes as f64;
                (a.cos(), a.sin())
            }
            BaseShape::RadialBlobs => (1.0 + RADIAL_GAP * c as f64, 0.0),
            BaseShape::TwoMoonsK => {
                let t = rng.random_range(0.0..PI);
                let k = self.n_classes as f64;
                // moon c: arc centred at (c, 0.25·(-1)^c), opening up for odd c
                let (cx, cy, flip) = if c.is_multiple_of(2) {
                    (c as f64, 0.25, 1.0)
                } else {
                    (c as f64, -0.25, -1.0)
                };
                (t.cos() + cx - (k - 1.0) / 2.0, flip * t.sin() + cy)
            }
        };
        [x + normal.sample(rng), y + normal.sample(rng)]
    }

    fn split(&self, n: usize, rng: &mut Rng, domain: usize) -> (Array2<f64>, Vec<usize>, Vec<f64>) {
        let normal = Normal::new(0.0, self.noise).expect("validated noise");
        let mut labels: Vec<usize> = (0..n).map(|k| k % self.n_classes).collect();
        labels.shuffle(rng);
        let (lo, hi) = self.sub_range(domain);
        let mut x = Array2::zeros((n, 2));
        let mut angles = Vec::with_capacity(n);
        for (k, &c) in labels.iter().enumerate() {
            let p = self.base_point(c, rng, &normal);
            let deg = if hi > lo { rng.random_range(lo..hi) } else { lo };
            let (s, co) = deg.to_radians().sin_cos();
            x[[k, 0]] = co * p[0] - s * p[1];
            x[[k, 1]] = s * p[0] + co * p[1];
            angles.push(deg);
        }
        (x, labels, angles)
    }
}

/// Generate `N` rotated copies of a 2-D base shape; domain `i` rotates each
/// sample by an angle drawn uniformly from its sub-range. Deterministic given
/// the spec's seed.
pub fn gen_rotating(spec: &RotatingSpec) -> Result<MultiDomainDataset> {
    spec.validate()?;
    let domains = (0..spec.n_domains)
        .map(|i| {
            let mut rng = stream(spec.seed, "rotating", i as u64);
            let (train_x, train_y, train_a) = spec.split(spec.train_per_domain, &mut rng, i);
            let (test_x, test_y, test_a) = spec.split(spec.test_per_domain, &mut rng, i);
            DomainData::with_angles(train_x, train_y, test_x, test_y, train_a, test_a)
        })
        .collect::<Result<Vec<_>>>()?;
    MultiDomainDataset::new(domains, spec.n_classes)
}

/// Rotated-digit domains from an IDX dataset: images are shuffled, dealt to
/// domains without overlap, and each is rotated by an angle drawn from its
/// domain's sub-range of `[0, angle_range_deg)`.
pub fn rotated_idx_domains(
    raw: &IdxDataset,
    n_domains: usize,
    angle_range_deg: f64,
    train_per_domain: usize,
    test_per_domain: usize,
    seed: u64,
) -> Result<MultiDomainDataset> {
    let per = train_per_domain + test_per_domain;
    if n_domains == 0 || per == 0 {
        return Err(MudalError::invalid(
            "need at least one domain and one sample per domain",
        ));
    }
    if raw.len() < n_domains * per {
        return Err(MudalError::invalid(format!(
            "IDX set has {} images, {} requested",
            raw.len(),
            n_domains * per
        )));
    }
    let mut order: Vec<usize> = (0..raw.len()).collect();
    order.shuffle(&mut stream(seed, "idx-deal", 0));
    let width = angle_range_deg / n_domains as f64;
    let n_classes = raw.labels.iter().copied().max().unwrap_or(0) + 1;
    let mut domains = Vec::with_capacity(n_domains);
    for i in 0..n_domains {
        let mut rng = stream(seed, "idx-rotate", i as u64);
        let chunk = &order[i * per..(i + 1) * per];
        let mut take = |ids: &[usize]| {
            let mut x = Array2::zeros((ids.len(), raw.rows * raw.cols));
            let mut y = Vec::with_capacity(ids.len());
            let mut a = Vec::with_capacity(ids.len());
            for (k, &id) in ids.iter().enumerate() {
                let deg = if width > 0.0 {
                    rng.random_range(i as f64 * width..(i + 1) as f64 * width)
                } else {
                    0.0
                };
                let img = rotate_image(raw.images.row(id), raw.rows, raw.cols, deg);
                x.row_mut(k).assign(&img);
                y.push(raw.labels[id]);
                a.push(deg);
            }
            (x, y, a)
        };
        let (tx, ty, ta) = take(&chunk[..train_per_domain]);
        let (ex, ey, ea) = take(&chunk[train_per_domain..]);
        domains.push(DomainData::with_angles(tx, ty, ex, ey, ta, ea)?);
    }
    MultiDomainDataset::new(domains, n_classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> RotatingSpec {
        RotatingSpec {
            train_per_domain: 60,
            test_per_domain: 20,
            ..RotatingSpec::default()
        }
    }

    #[test]
    fn domain_angles_lie_in_their_sub_range() {
        let s = spec();
        let ds = gen_rotating(&s).unwrap();
        // third domain of six over 180 degrees
        let d = ds.domain(2);
        assert_eq!(s.sub_range(2), (60.0, 90.0));
        assert!(d
            .train_angles
            .iter()
            .chain(&d.test_angles)
            .all(|&a| (60.0..90.0).contains(&a)));
    }

    #[test]
    fn generation_is_bitwise_deterministic() {
        let a = gen_rotating(&spec()).unwrap();
        let b = gen_rotating(&spec()).unwrap();
        assert_eq!(a, b);
        let c = gen_rotating(&RotatingSpec { seed: 1, ..spec() }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn labels_are_balanced_and_rotation_invariant() {
        let s = spec();
        let ds = gen_rotating(&s).unwrap();
        for i in 0..ds.n_domains() {
            let d = ds.domain(i);
            let mut counts = vec![0usize; s.n_classes];
            for k in 0..d.n_train() {
                counts[ds.annotate(i, k)] += 1;
            }
            let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
            assert!(hi - lo <= 1, "{counts:?}");
            // undo the rotation and check the point sits nearest its class centre
            for k in 0..d.n_train() {
                let (sn, cs) = (-d.train_angles[k]).to_radians().sin_cos();
                let (x, y) = (d.train_x[[k, 0]], d.train_x[[k, 1]]);
                let (bx, by) = (cs * x - sn * y, sn * x + cs * y);
                let nearest = (0..s.n_classes)
                    .min_by(|&a, &b| {
                        let da = centre_dist(a, s.n_classes, bx, by);
                        let db = centre_dist(b, s.n_classes, bx, by);
                        da.total_cmp(&db)
                    })
                    .unwrap();
                let dist = centre_dist(ds.annotate(i, k), s.n_classes, bx, by);
                assert!(nearest == ds.annotate(i, k) || dist < 4.0 * s.noise);
            }
        }
    }

    fn centre_dist(c: usize, n: usize, x: f64, y: f64) -> f64 {
        let a = 2.0 * PI * c as f64 / n as f64;
        ((x - a.cos()).powi(2) + (y - a.sin()).powi(2)).sqrt()
    }

    #[test]
    fn single_domain_is_allowed() {
        let ds = gen_rotating(&RotatingSpec { n_domains: 1, ..spec() }).unwrap();
        assert_eq!(ds.n_domains(), 1);
        assert!(ds.domain(0).train_angles.iter().all(|&a| (0.0..180.0).contains(&a)));
    }

    #[test]
    fn crowded_blobs_are_rejected() {
        let err = gen_rotating(&RotatingSpec {
            n_classes: 20,
            ..spec()
        })
        .unwrap_err();
        assert!(matches!(err, MudalError::InvalidArgument(_)));
        assert!(gen_rotating(&RotatingSpec {
            n_classes: 5,
            base_shape: BaseShape::TwoMoonsK,
            ..spec()
        })
        .is_err());
    }

    #[test]
    fn radial_classes_follow_radius() {
        let s = RotatingSpec {
            base_shape: BaseShape::RadialBlobs,
            noise: 0.1,
            ..spec()
        };
        let ds = gen_rotating(&s).unwrap();
        for i in 0..ds.n_domains() {
            let d = ds.domain(i);
            for k in 0..d.n_train() {
                let r = d.train_x.row(k).dot(&d.train_x.row(k)).sqrt();
                let nearest = ((r - 1.0) / RADIAL_GAP).round().clamp(0.0, 3.0) as usize;
                assert!(
                    nearest == ds.annotate(i, k)
                        || (r - 1.0 - RADIAL_GAP * ds.annotate(i, k) as f64).abs() < 4.0 * s.noise
                );
            }
        }
        assert!(gen_rotating(&RotatingSpec { noise: 0.2, ..s }).is_err());
    }

    #[test]
    fn moons_generate() {
        let ds = gen_rotating(&RotatingSpec {
            n_classes: 3,
            base_shape: BaseShape::TwoMoonsK,
            noise: 0.1,
            ..spec()
        })
        .unwrap();
        assert_eq!(ds.n_classes(), 3);
        assert_eq!(ds.feature_dim(), 2);
    }
}
