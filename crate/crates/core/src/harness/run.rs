use std::path::Path;

use ndarray::{concatenate, Array2, ArrayView2, Axis};

use super::config::{AssignmentMode, ExperimentConfig};
use crate::bound::{empirical_bound, BoundParams, BoundReport, HDistSource};
use crate::cal::{evaluate, train_round, Evaluation, ModelBundle, ObjectiveSnapshot, ProbeConfig, RoundOutcome};
use crate::data::{init_pool, LabeledPool, MultiDomainDataset};
use crate::error::{MudalError, Result};
use crate::par::Exec;
use crate::query::{select, QueryRequest, Strategy};
use crate::rng::{derive_seed, stream};
use crate::simplex::{assign_budget, separate_budget, BudgetLedger, BudgetMode, SimilarityMatrix};

/// Everything recorded about one round of one seed.
#[derive(Clone, Debug)]
pub struct RoundMetrics {
    pub round: usize,
    pub accuracy: Evaluation,
    /// α at the end of this round's training.
    pub alpha: SimilarityMatrix,
    /// Labels added per domain before this round's training (empty at round 0).
    pub increments: Vec<usize>,
    /// Whether budget assignment had to clamp or cap.
    pub clamped: bool,
    /// Cumulative labeled count per domain.
    pub labeled: Vec<usize>,
    /// Training-set indices labeled in this round, per domain (the initial
    /// pool at round 0).
    pub revealed: Vec<Vec<usize>>,
    pub bound: Option<BoundReport>,
    pub history: Vec<ObjectiveSnapshot>,
}

#[derive(Clone, Debug)]
pub struct SeedRun {
    pub seed: u64,
    pub rounds: Vec<RoundMetrics>,
    /// Why the run stopped early, if it did.
    pub truncated: Option<String>,
}

impl SeedRun {
    pub fn total_revealed(&self) -> usize {
        self.rounds.last().map_or(0, |r| r.labeled.iter().sum())
    }

    /// Mean over rounds of the average test accuracy.
    pub fn mean_accuracy(&self) -> f64 {
        self.rounds.iter().map(|r| r.accuracy.average).sum::<f64>() / self.rounds.len().max(1) as f64
    }
}

#[derive(Clone, Debug)]
pub struct RunResults {
    pub config: ExperimentConfig,
    pub runs: Vec<SeedRun>,
}

impl RunResults {
    pub fn mean_accuracy(&self) -> f64 {
        self.runs.iter().map(SeedRun::mean_accuracy).sum::<f64>() / self.runs.len().max(1) as f64
    }
}

fn train_and_measure(
    cfg: &ExperimentConfig,
    dataset: &MultiDomainDataset,
    pool: &LabeledPool,
    seed: u64,
    round: usize,
    previous: Option<&ModelBundle>,
) -> Result<(RoundOutcome, Evaluation, Option<BoundReport>)> {
    let out = train_round(
        dataset,
        pool,
        &cfg.train,
        derive_seed(seed, "round", round as u64),
        previous,
    )?;
    let eval = evaluate(&out.bundle, dataset)?;
    let bound = if cfg.output.bounds {
        let params = BoundParams {
            vc_dim: cfg.output.vc_dim,
            delta: cfg.output.delta,
            total_labels: pool.total_labeled(),
        };
        let probe = ProbeConfig {
            steps: cfg.output.probe_steps,
            ..ProbeConfig::default()
        };
        let source = HDistSource::Probe(probe, derive_seed(seed, "probe", round as u64));
        Some(empirical_bound(
            &out.bundle,
            dataset,
            pool,
            &out.alpha,
            &params,
            source,
        )?)
    } else {
        None
    };
    Ok((out, eval, bound))
}

fn query_domain(
    strategy: Strategy,
    bundle: &ModelBundle,
    dataset: &MultiDomainDataset,
    pool: &LabeledPool,
    j: usize,
    k: usize,
    temperature: f64,
    seed: u64,
) -> Result<Vec<usize>> {
    if k == 0 {
        return Ok(Vec::new());
    }
    let cand = pool.unlabeled(j);
    let x = dataset.gather_train(j, &cand);
    let domains = vec![j; cand.len()];
    let req = QueryRequest {
        x: x.view(),
        domains: &domains,
        k,
        temperature,
    };
    let picked = select(strategy, bundle, &req, &mut stream(seed, "query", j as u64))?;
    Ok(picked.into_iter().map(|p| cand[p]).collect())
}

/// Pool every domain's unlabeled set and let the strategy pick `k` of them.
fn query_joint(
    strategy: Strategy,
    bundle: &ModelBundle,
    dataset: &MultiDomainDataset,
    pool: &LabeledPool,
    k: usize,
    temperature: f64,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    let n = dataset.n_domains();
    let mut owners = Vec::new();
    let mut blocks: Vec<Array2<f64>> = Vec::with_capacity(n);
    for j in 0..n {
        let cand = pool.unlabeled(j);
        blocks.push(dataset.gather_train(j, &cand));
        owners.extend(cand.into_iter().map(|idx| (j, idx)));
    }
    let views: Vec<ArrayView2<f64>> = blocks.iter().map(|b| b.view()).collect();
    let x = concatenate(Axis(0), &views).map_err(|e| MudalError::invalid(e.to_string()))?;
    let domains: Vec<usize> = owners.iter().map(|&(j, _)| j).collect();
    let req = QueryRequest {
        x: x.view(),
        domains: &domains,
        k,
        temperature,
    };
    let picked = select(strategy, bundle, &req, &mut stream(seed, "query-joint", 0))?;
    let mut per = vec![Vec::new(); n];
    for p in picked {
        let (j, idx) = owners[p];
        per[j].push(idx);
    }
    Ok(per)
}

/// The full round loop for one seed.
pub fn run_seed(cfg: &ExperimentConfig, dataset: &MultiDomainDataset, seed: u64) -> Result<SeedRun> {
    let n = dataset.n_domains();
    let b = &cfg.budget;
    let mut pool = init_pool(dataset, b.m0, seed)?;
    let mut ledger = BudgetLedger::new(b.m0, b.m, (0..n).map(|j| pool.n_labeled(j)).collect())?;

    let (mut current, eval, bound) = train_and_measure(cfg, dataset, &pool, seed, 0, None)?;
    log::info!("seed {seed} round 0: accuracy {:.4}", eval.average);
    let mut rounds = vec![RoundMetrics {
        round: 0,
        accuracy: eval,
        alpha: current.alpha.clone(),
        increments: Vec::new(),
        clamped: false,
        labeled: ledger.labeled(),
        revealed: (0..n).map(|j| pool.labeled(j).to_vec()).collect(),
        bound,
        history: std::mem::take(&mut current.history),
    }];
    let mut previous_cols = SimilarityMatrix::uniform(n).column_importance();
    let mut truncated = None;

    for r in 1..=b.rounds {
        let capacities: Vec<usize> = (0..n).map(|j| pool.n_unlabeled(j)).collect();
        let spare: usize = capacities.iter().sum();
        if spare < b.m {
            truncated = Some(format!(
                "round {r}: {spare} unlabeled samples left, round budget {}",
                b.m
            ));
            break;
        }
        let query_seed = derive_seed(seed, "round-query", r as u64);
        let cols = current.alpha.column_importance();
        let (picks, clamped) = match b.mode {
            AssignmentMode::Joint => (
                query_joint(
                    cfg.method.strategy,
                    &current.bundle,
                    dataset,
                    &pool,
                    b.m,
                    cfg.train.temperature,
                    query_seed,
                )?,
                false,
            ),
            mode => {
                let (inc, clamped) = match mode {
                    AssignmentMode::Separate => {
                        let inc = separate_budget(n, b.m)?;
                        if let Some(j) = (0..n).find(|&j| capacities[j] < inc[j]) {
                            truncated = Some(format!(
                                "round {r}: domain {j} has only {} unlabeled samples",
                                capacities[j]
                            ));
                            break;
                        }
                        (inc, false)
                    }
                    AssignmentMode::CalOptimal => {
                        let a = assign_budget(BudgetMode::TargetTracking, &cols, None, &ledger, &capacities)?;
                        (a.increments, a.clamped)
                    }
                    AssignmentMode::PaperLiteral => {
                        let a = assign_budget(
                            BudgetMode::PaperLiteral,
                            &cols,
                            Some(&previous_cols),
                            &ledger,
                            &capacities,
                        )?;
                        (a.increments, a.clamped)
                    }
                    AssignmentMode::Joint => unreachable!(),
                };
                if clamped {
                    log::info!("seed {seed} round {r}: budget assignment clamped to {inc:?}");
                }
                let picks = (0..n)
                    .map(|j| {
                        query_domain(
                            cfg.method.strategy,
                            &current.bundle,
                            dataset,
                            &pool,
                            j,
                            inc[j],
                            cfg.train.temperature,
                            derive_seed(query_seed, "domain", j as u64),
                        )
                    })
                    .collect::<Result<Vec<_>>>()?;
                (picks, clamped)
            }
        };
        let increments: Vec<usize> = picks.iter().map(Vec::len).collect();
        for (j, idx) in picks.iter().enumerate() {
            pool.reveal(dataset, j, idx)?;
        }
        ledger.record(increments.clone(), false)?;
        previous_cols = cols;

        let (mut next, eval, bound) = train_and_measure(cfg, dataset, &pool, seed, r, Some(&current.bundle))?;
        log::info!(
            "seed {seed} round {r}: accuracy {:.4}, increments {increments:?}",
            eval.average
        );
        rounds.push(RoundMetrics {
            round: r,
            accuracy: eval,
            alpha: next.alpha.clone(),
            increments,
            clamped,
            labeled: ledger.labeled(),
            revealed: picks,
            bound,
            history: std::mem::take(&mut next.history),
        });
        current = next;
    }
    if let Some(t) = &truncated {
        log::warn!("seed {seed} stopped early: {t}");
    }
    Ok(SeedRun {
        seed,
        rounds,
        truncated,
    })
}

/// Run every seed of `cfg` on one dataset. Seeds are independent tasks;
/// results come back in seed-list order.
pub fn run_experiment(cfg: &ExperimentConfig, dataset: &MultiDomainDataset, exec: Exec) -> Result<RunResults> {
    cfg.validate()?;
    let runs = exec.try_map(cfg.method.seeds.clone(), |s| run_seed(cfg, dataset, s))?;
    Ok(RunResults {
        config: cfg.clone(),
        runs,
    })
}

/// Build the dataset, run, and write all outputs to `cfg.output.dir`.
pub fn run_and_export(cfg: &ExperimentConfig, config_dir: Option<&Path>, exec: Exec) -> Result<RunResults> {
    let dataset = cfg.dataset.build(config_dir)?;
    let results = run_experiment(cfg, &dataset, exec)?;
    super::export::export_outputs(&results, &cfg.output.dir)?;
    Ok(results)
}
