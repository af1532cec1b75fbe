use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cal::{TrainConfig, Variant};
use crate::data::{gen_rotating, load_idx, rotated_idx_domains, MultiDomainDataset, RotatingSpec};
use crate::error::{MudalError, Result};
use crate::query::Strategy;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetConfig {
    Rotating(RotatingSpec),
    Idx(IdxPlan),
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig::Rotating(RotatingSpec::default())
    }
}

/// Rotated domains cut from an IDX image/label pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdxPlan {
    pub images: PathBuf,
    pub labels: PathBuf,
    #[serde(default = "IdxPlan::default_domains")]
    pub n_domains: usize,
    #[serde(default = "IdxPlan::default_range")]
    pub angle_range_deg: f64,
    pub train_per_domain: usize,
    pub test_per_domain: usize,
    #[serde(default)]
    pub seed: u64,
}

impl IdxPlan {
    fn default_domains() -> usize {
        6
    }

    fn default_range() -> f64 {
        180.0
    }
}

impl DatasetConfig {
    pub fn n_domains(&self) -> usize {
        match self {
            DatasetConfig::Rotating(s) => s.n_domains,
            DatasetConfig::Idx(p) => p.n_domains,
        }
    }

    /// Relative IDX paths are taken relative to `base`.
    pub fn build(&self, base: Option<&Path>) -> Result<MultiDomainDataset> {
        match self {
            DatasetConfig::Rotating(spec) => gen_rotating(spec),
            DatasetConfig::Idx(p) => {
                let resolve = |q: &Path| match base {
                    Some(b) if q.is_relative() => b.join(q),
                    _ => q.to_path_buf(),
                };
                let raw = load_idx(resolve(&p.images), resolve(&p.labels))?;
                rotated_idx_domains(
                    &raw,
                    p.n_domains,
                    p.angle_range_deg,
                    p.train_per_domain,
                    p.test_per_domain,
                    p.seed,
                )
            }
        }
    }
}

/// How each round's budget is split across domains.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AssignmentMode {
    /// Track `β → α` on the cumulative counts.
    #[default]
    CalOptimal,
    /// `m / N` per domain.
    Separate,
    /// Ignore domains: the strategy ranks the pooled unlabeled set.
    Joint,
    /// Increments from the change in `α` between rounds.
    PaperLiteral,
}

impl AssignmentMode {
    pub const ALL: [AssignmentMode; 4] = [
        AssignmentMode::CalOptimal,
        AssignmentMode::Separate,
        AssignmentMode::Joint,
        AssignmentMode::PaperLiteral,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AssignmentMode::CalOptimal => "cal_optimal",
            AssignmentMode::Separate => "separate",
            AssignmentMode::Joint => "joint",
            AssignmentMode::PaperLiteral => "paper_literal",
        }
    }
}

impl fmt::Display for AssignmentMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AssignmentMode {
    type Err = MudalError;

    fn from_str(s: &str) -> Result<Self> {
        AssignmentMode::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s) || m.name().replace('_', "-").eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                MudalError::Config(format!(
                    "unknown mode {s:?} (cal_optimal | separate | joint | paper_literal)"
                ))
            })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MethodConfig {
    pub variant: Variant,
    pub strategy: Strategy,
    pub seeds: Vec<u64>,
}

impl Default for MethodConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Cal,
            strategy: Strategy::Grads,
            seeds: vec![1, 2, 3],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BudgetConfig {
    pub mode: AssignmentMode,
    pub m0: usize,
    pub m: usize,
    pub rounds: usize,
}

impl Default for BudgetConfig {
    fn default() -> Self {
        Self {
            mode: AssignmentMode::CalOptimal,
            m0: 60,
            m: 60,
            rounds: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Compute the empirical bound each round (trains one probe
    /// discriminator per domain).
    pub bounds: bool,
    pub vc_dim: f64,
    pub delta: f64,
    pub probe_steps: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("mudal-out"),
            bounds: true,
            vc_dim: 1.0,
            delta: 0.05,
            probe_steps: 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub method: MethodConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub budget: BudgetConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| MudalError::Config(e.to_string()))?;
        cfg.train.variant = cfg.method.variant;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| MudalError::Config(e.to_string()))
    }

    /// Keep the variant copies in sync after changing `method.variant`.
    pub fn set_variant(&mut self, v: Variant) {
        self.method.variant = v;
        self.train.variant = v;
    }

    // negated comparisons also reject NaN
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        let n = self.dataset.n_domains();
        let b = &self.budget;
        if n < 1 {
            return Err(MudalError::Config("dataset needs at least one domain".into()));
        }
        if b.m0 == 0 {
            return Err(MudalError::Config("m0 must be >= 1".into()));
        }
        if matches!(b.mode, AssignmentMode::CalOptimal | AssignmentMode::Separate)
            && (b.m0 < n || (b.rounds > 0 && b.m < n))
        {
            return Err(MudalError::Config(format!(
                "m0 and m must be >= N = {n} in {} mode",
                b.mode
            )));
        }
        if b.mode == AssignmentMode::Separate && !b.m.is_multiple_of(n) {
            return Err(MudalError::Config(format!(
                "separate mode needs N | m (N = {n}, m = {})",
                b.m
            )));
        }
        if self.method.strategy == Strategy::Grads && !self.method.variant.has_discriminator() {
            return Err(MudalError::Config(
                "the grads strategy needs a variant with a discriminator".into(),
            ));
        }
        if self.method.seeds.is_empty() {
            return Err(MudalError::Config("at least one seed is required".into()));
        }
        if !(self.output.delta > 0.0 && self.output.delta < 1.0) || !(self.output.vc_dim > 0.0) {
            return Err(MudalError::Config(
                "bound settings need 0 < delta < 1 and vc_dim > 0".into(),
            ));
        }
        Ok(())
    }
}

/// Read and validate a config file.
pub fn parse_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| MudalError::Config(format!("cannot read {}: {e}", path.display())))?;
    ExperimentConfig::from_toml_str(&text)
}
