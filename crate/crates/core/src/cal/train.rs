//! One round of CAL training. Per minibatch, in order:
//!
//! 1. discriminator step (ascent on `T`, i.e. descent on `V_d`);
//! 2. α step with 0/1 coefficients from the freshly updated `f`;
//! 3. optional second discriminator step;
//! 4. descent of `e`, `h` and the `h_i` on `T`.
//!
//! All networks are re-initialised at the start of a round unless warm
//! starting is requested, and α starts uniform.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::bundle::{BundleShape, DomainCode, ModelBundle};
use super::objective::{objective, zero_one_stats, BundleGrads, StepBatch, TermSelection};
use crate::cal::alpha::alpha_step;
use crate::data::{LabeledPool, MultiDomainDataset};
use crate::error::{MudalError, Result};
use crate::nn::{adam_step, AdamConfig, AdamState, DenseNet, Gradients};
use crate::rng::{stream, Rng};
use crate::simplex::SimilarityMatrix;
use crate::table::{sig9, CsvTable};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Similarity learning, feature alignment and the per-domain heads.
    #[default]
    Cal,
    /// As `Cal`, but `V_d` never reaches the encoder.
    CalAlpha,
    /// α frozen at uniform and no per-domain heads.
    CalFa,
    /// `V_h` only, uniform α, no discriminator.
    Vanilla,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Cal, Variant::CalAlpha, Variant::CalFa, Variant::Vanilla];

    pub fn has_discriminator(self) -> bool {
        self != Variant::Vanilla
    }

    pub fn learns_alpha(self) -> bool {
        matches!(self, Variant::Cal | Variant::CalAlpha)
    }

    pub fn selection(self, lambda_d: f64) -> TermSelection {
        match self {
            Variant::Cal => TermSelection::full(lambda_d),
            Variant::CalAlpha => TermSelection {
                vd_into_encoder: false,
                ..TermSelection::full(lambda_d)
            },
            Variant::CalFa => TermSelection {
                use_vlambda: false,
                ..TermSelection::full(lambda_d)
            },
            Variant::Vanilla => TermSelection {
                lambda_d: 0.0,
                use_vd: false,
                use_vlambda: false,
                vd_into_encoder: false,
            },
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Cal => "cal",
            Variant::CalAlpha => "cal_alpha",
            Variant::CalFa => "cal_fa",
            Variant::Vanilla => "vanilla",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = MudalError;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s) || v.name().replace('_', "-").eq_ignore_ascii_case(s))
            .ok_or_else(|| MudalError::Config(format!("unknown variant {s:?} (cal | cal_alpha | cal_fa | vanilla)")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Set from the experiment's method; not part of the `[train]` table.
    #[serde(skip)]
    pub variant: Variant,
    pub lambda_d: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_alpha: f64,
    /// Softmax temperature used by GraDS.
    pub temperature: f64,
    /// Update the discriminator a second time before the encoder step.
    pub extra_disc_step: bool,
    /// One-hot domain codes for the discriminator; scalar `i/N` otherwise.
    pub onehot_codes: bool,
    pub warm_start: bool,
    pub hidden: usize,
    pub latent: usize,
    pub disc_hidden: usize,
    /// Discriminator steps by plain gradient descent with step halving until
    /// `V_d` does not increase, instead of Adam.
    pub disc_line_search: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Cal,
            lambda_d: 1.0,
            epochs: 50,
            batch_size: 32,
            lr: 3e-3,
            lr_alpha: 0.002,
            temperature: 0.5,
            extra_disc_step: false,
            onehot_codes: true,
            warm_start: false,
            hidden: 32,
            latent: 16,
            disc_hidden: 32,
            disc_line_search: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v > 0.0 && v.is_finite();
        if !(self.lambda_d >= 0.0 && self.lambda_d.is_finite()) {
            return Err(MudalError::Config(format!(
                "lambda_d must be >= 0, got {}",
                self.lambda_d
            )));
        }
        if !pos(self.lr) || !pos(self.lr_alpha) || !pos(self.temperature) {
            return Err(MudalError::Config("lr, lr_alpha and temperature must be > 0".into()));
        }
        if self.batch_size == 0 || self.hidden == 0 || self.latent == 0 || self.disc_hidden == 0 {
            return Err(MudalError::Config("batch size and network widths must be >= 1".into()));
        }
        Ok(())
    }

    pub fn shape(&self, dataset: &MultiDomainDataset) -> BundleShape {
        BundleShape {
            input_dim: dataset.feature_dim(),
            n_classes: dataset.n_classes(),
            n_domains: dataset.n_domains(),
            hidden: self.hidden,
            latent: self.latent,
            disc_hidden: self.disc_hidden,
            code: if self.onehot_codes {
                DomainCode::OneHot
            } else {
                DomainCode::Scalar
            },
        }
    }
}

/// Objective terms on the full data at the end of an epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectiveSnapshot {
    pub epoch: usize,
    pub vh: f64,
    pub vd: f64,
    pub vlambda: f64,
    pub total: f64,
    pub vh01: f64,
    pub vlambda01: f64,
    /// `1 − (err_O + Σ_j α_ij err_{L_j}) / 2` per original domain; empty
    /// without a discriminator.
    pub disc_accuracy: Vec<f64>,
}

pub fn snapshots_to_csv(history: &[ObjectiveSnapshot], n_domains: usize) -> String {
    let mut header: Vec<String> = ["epoch", "V_h", "V_d", "V_lambda", "T", "V_h_01", "V_lambda_01"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((0..n_domains).map(|i| format!("disc_acc_{i}")));
    let mut t = CsvTable::new(&header);
    for s in history {
        let mut row = vec![s.epoch.to_string()];
        row.extend([s.vh, s.vd, s.vlambda, s.total, s.vh01, s.vlambda01].map(sig9));
        row.extend((0..n_domains).map(|i| s.disc_accuracy.get(i).map_or_else(String::new, |&v| sig9(v))));
        t.push(&row);
    }
    t.into_string()
}

#[derive(Clone, Debug)]
pub struct RoundOutcome {
    pub bundle: ModelBundle,
    pub alpha: SimilarityMatrix,
    pub history: Vec<ObjectiveSnapshot>,
}

/// Cycles through a shuffled index list, reshuffling after each pass.
struct Cycler {
    order: Vec<usize>,
    pos: usize,
}

impl Cycler {
    fn new(items: Vec<usize>, rng: &mut Rng) -> Self {
        let mut order = items;
        order.shuffle(rng);
        Self { order, pos: 0 }
    }

    fn take(&mut self, k: usize, rng: &mut Rng) -> Vec<usize> {
        let k = k.min(self.order.len());
        let mut out = Vec::with_capacity(k);
        while out.len() < k {
            if self.pos == self.order.len() {
                self.order.shuffle(rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

/// Labeled features and labels per domain, gathered once per round.
pub fn labeled_sets(dataset: &MultiDomainDataset, pool: &LabeledPool) -> (Vec<Array2<f64>>, Vec<Vec<usize>>) {
    (0..dataset.n_domains())
        .map(|j| (dataset.gather_train(j, pool.labeled(j)), pool.labels(j).to_vec()))
        .unzip()
}

struct Optimizers {
    encoder: AdamState,
    trunk: AdamState,
    head: AdamState,
    domain_heads: Vec<AdamState>,
    disc: Option<AdamState>,
}

impl Optimizers {
    fn new(b: &ModelBundle) -> Self {
        let c = AdamConfig::default();
        Self {
            encoder: AdamState::for_net(&b.encoder, c),
            trunk: AdamState::for_net(&b.trunk, c),
            head: AdamState::for_net(&b.head, c),
            domain_heads: b.domain_heads.iter().map(|h| AdamState::for_net(h, c)).collect(),
            disc: b.discriminator.as_ref().map(|f| AdamState::for_net(f, c)),
        }
    }
}

fn disc_selection(lambda_d: f64) -> TermSelection {
    TermSelection {
        lambda_d: lambda_d.max(f64::MIN_POSITIVE),
        use_vd: true,
        use_vlambda: false,
        vd_into_encoder: false,
    }
}

fn vd_grads(bundle: &ModelBundle, batch: &StepBatch, alpha: &SimilarityMatrix) -> Result<(f64, Gradients)> {
    let (v, g) = objective(bundle, batch, alpha, &disc_selection(1.0), true)?;
    let g = g
        .and_then(|g| g.discriminator)
        .ok_or(MudalError::MissingDiscriminator("discriminator step"))?;
    Ok((v.vd, g))
}

/// One discriminator update by Adam.
pub fn disc_step_adam(
    bundle: &mut ModelBundle,
    batch: &StepBatch,
    alpha: &SimilarityMatrix,
    state: &mut AdamState,
    lr: f64,
) -> Result<f64> {
    let (vd, g) = vd_grads(bundle, batch, alpha)?;
    let f = bundle.discriminator.as_mut().expect("checked by vd_grads");
    adam_step(f, &g, state, lr)?;
    Ok(vd)
}

/// One discriminator update by gradient descent with step halving; `V_d` on
/// this batch never increases. Returns `(before, after)`.
pub fn disc_step_line_search(
    bundle: &mut ModelBundle,
    batch: &StepBatch,
    alpha: &SimilarityMatrix,
    initial_step: f64,
) -> Result<(f64, f64)> {
    let (before, g) = vd_grads(bundle, batch, alpha)?;
    let start = bundle.discriminator.as_ref().expect("checked").params_flat();
    let grad = g.flat_params();
    let mut eta = initial_step;
    for _ in 0..40 {
        let cand: Vec<f64> = start.iter().zip(&grad).map(|(p, g)| p - eta * g).collect();
        bundle.discriminator.as_mut().expect("checked").set_params_flat(&cand)?;
        let after = objective(bundle, batch, alpha, &disc_selection(1.0), false)?.0.vd;
        if after <= before {
            return Ok((before, after));
        }
        eta *= 0.5;
    }
    bundle
        .discriminator
        .as_mut()
        .expect("checked")
        .set_params_flat(&start)?;
    Ok((before, before))
}

fn apply(net: &mut DenseNet, g: &Gradients, state: &mut AdamState, lr: f64) -> Result<()> {
    adam_step(net, g, state, lr)
}

fn model_step(
    bundle: &mut ModelBundle,
    grads: &BundleGrads,
    opt: &mut Optimizers,
    sel: &TermSelection,
    lr: f64,
) -> Result<()> {
    apply(&mut bundle.encoder, &grads.encoder, &mut opt.encoder, lr)?;
    apply(&mut bundle.trunk, &grads.trunk, &mut opt.trunk, lr)?;
    apply(&mut bundle.head, &grads.head, &mut opt.head, lr)?;
    if sel.use_vlambda {
        for ((h, g), s) in bundle
            .domain_heads
            .iter_mut()
            .zip(&grads.domain_heads)
            .zip(&mut opt.domain_heads)
        {
            apply(h, g, s, lr)?;
        }
    }
    Ok(())
}

/// Full-data snapshot of the objective.
pub fn snapshot(
    bundle: &ModelBundle,
    full: &StepBatch,
    alpha: &SimilarityMatrix,
    sel: &TermSelection,
    epoch: usize,
) -> Result<ObjectiveSnapshot> {
    let eval_sel = TermSelection {
        use_vd: bundle.discriminator.is_some(),
        use_vlambda: true,
        ..*sel
    };
    let (v, _) = objective(bundle, full, alpha, &eval_sel, false)?;
    let stats = zero_one_stats(bundle, full)?;
    let (vh01, vl01, _) = stats.terms(alpha);
    let n = alpha.n_domains();
    let disc_accuracy = if stats.disc_err_orig.is_empty() {
        Vec::new()
    } else {
        (0..n)
            .map(|i| {
                let err_l: f64 = (0..n).map(|j| alpha.get(i, j) * stats.disc_err_lab[i][j]).sum();
                1.0 - (stats.disc_err_orig[i] + err_l) / 2.0
            })
            .collect()
    };
    let vd = if sel.use_vd { v.vd } else { 0.0 };
    let vlambda = if sel.use_vlambda { v.vlambda } else { 0.0 };
    Ok(ObjectiveSnapshot {
        epoch,
        vh: v.vh,
        vd: v.vd,
        vlambda: v.vlambda,
        total: v.vh + vlambda - sel.lambda_d * vd,
        vh01,
        vlambda01: vl01,
        disc_accuracy,
    })
}

/// Train one round. `seed` fixes initialisation and minibatch order;
/// `warm` is used only when `cfg.warm_start` is set.
pub fn train_round(
    dataset: &MultiDomainDataset,
    pool: &LabeledPool,
    cfg: &TrainConfig,
    seed: u64,
    warm: Option<&ModelBundle>,
) -> Result<RoundOutcome> {
    cfg.validate()?;
    let n = dataset.n_domains();
    if pool.n_domains() != n {
        return Err(MudalError::shape("train_round", n, pool.n_domains()));
    }
    if pool.total_labeled() == 0 {
        return Err(MudalError::invalid("train_round needs at least one labeled sample"));
    }
    let variant = cfg.variant;
    let sel = variant.selection(cfg.lambda_d);
    let mut init_rng = stream(seed, "init", 0);
    let mut bundle = match (cfg.warm_start, warm) {
        (true, Some(b))
            if b.shape == cfg.shape(dataset) && b.discriminator.is_some() == variant.has_discriminator() =>
        {
            b.clone()
        }
        _ => ModelBundle::new(cfg.shape(dataset), variant.has_discriminator(), &mut init_rng)?,
    };
    let mut opt = Optimizers::new(&bundle);
    let mut alpha = SimilarityMatrix::uniform(n);

    let (lab_x, lab_y) = labeled_sets(dataset, pool);
    let full = StepBatch {
        orig: dataset.domains().iter().map(|d| d.train_x.clone()).collect(),
        labeled: lab_x.clone(),
        labels: lab_y.clone(),
    };

    let mut rng = stream(seed, "batches", 0);
    let mut orig_cyc: Vec<Cycler> = (0..n)
        .map(|i| Cycler::new((0..dataset.domain(i).n_train()).collect(), &mut rng))
        .collect();
    let mut lab_cyc: Vec<Cycler> = (0..n)
        .map(|j| Cycler::new((0..lab_y[j].len()).collect(), &mut rng))
        .collect();
    let b = cfg.batch_size;
    // one epoch is one pass over the largest original domain
    let max_train = dataset.domains().iter().map(|d| d.n_train()).max().unwrap_or(0);
    let steps = max_train.div_ceil(b).max(1);

    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        for _ in 0..steps {
            let mut batch = StepBatch {
                orig: Vec::with_capacity(n),
                labeled: Vec::with_capacity(n),
                labels: Vec::with_capacity(n),
            };
            for i in 0..n {
                let idx = orig_cyc[i].take(b, &mut rng);
                batch.orig.push(dataset.gather_train(i, &idx));
            }
            for j in 0..n {
                let pos = lab_cyc[j].take(b, &mut rng);
                batch.labeled.push(lab_x[j].select(ndarray::Axis(0), &pos));
                batch.labels.push(pos.iter().map(|&p| lab_y[j][p]).collect());
            }

            if variant.has_discriminator() {
                disc_update(&mut bundle, &batch, &alpha, &mut opt, cfg)?;
                if variant.learns_alpha() {
                    alpha_step(&bundle, &mut alpha, &batch, &sel, cfg.lr_alpha)?;
                }
                if cfg.extra_disc_step {
                    disc_update(&mut bundle, &batch, &alpha, &mut opt, cfg)?;
                }
            }
            let (_, grads) = objective(&bundle, &batch, &alpha, &sel, true)?;
            model_step(&mut bundle, &grads.expect("requested"), &mut opt, &sel, cfg.lr)?;
            if !bundle.all_finite() {
                return Err(MudalError::NonFinite(format!("parameters after epoch {epoch}")));
            }
        }
        let snap = snapshot(&bundle, &full, &alpha, &sel, epoch)?;
        log::debug!(
            "epoch {epoch}: V_h {:.4} V_d {:.4} V_λ {:.4}",
            snap.vh,
            snap.vd,
            snap.vlambda
        );
        history.push(snap);
    }
    Ok(RoundOutcome { bundle, alpha, history })
}

fn disc_update(
    bundle: &mut ModelBundle,
    batch: &StepBatch,
    alpha: &SimilarityMatrix,
    opt: &mut Optimizers,
    cfg: &TrainConfig,
) -> Result<()> {
    if cfg.disc_line_search {
        disc_step_line_search(bundle, batch, alpha, 1.0)?;
    } else {
        let state = opt
            .disc
            .as_mut()
            .ok_or(MudalError::MissingDiscriminator("discriminator step"))?;
        disc_step_adam(bundle, batch, alpha, state, cfg.lr)?;
    }
    Ok(())
}
