use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mudal::bound::{hoeffding_term, verify_optimal_beta, BoundParams};
use mudal::cal::{BundleShape, DomainCode, ModelBundle, Variant};
use mudal::harness::{parse_config, run_and_export, AssignmentMode};
use mudal::nn::{bce_loss, ce_loss, grad_check, squared_loss, Batch, DenseNet};
use mudal::par::Exec;
use mudal::query::Strategy;
use mudal::rng::stream;
use mudal::MudalError;
use ndarray::Array2;
use rand::Rng as _;

/// Central-difference step. The per-entry relative error is round-off
/// limited (error ∝ 1/step) on gradient entries below ~1e-6, which leaky
/// units produce routinely; 1e-5 keeps that floor under the tolerance.
const FD_STEP: f64 = 1e-5;

#[derive(Parser)]
#[command(name = "mudal", version, about = "Multi-domain active learning lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a TOML config.
    Run {
        config: PathBuf,
        /// Comma-separated seeds, overriding the config.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        variant: Option<String>,
        #[arg(long)]
        strategy: Option<String>,
        #[arg(long)]
        mode: Option<String>,
        /// Run seeds one after another.
        #[arg(long)]
        sequential: bool,
    },
    /// Numerical checks of the budget bound.
    VerifyTheory {
        #[arg(long, default_value_t = 0.01)]
        grid_step: f64,
    },
    /// Finite-difference checks of every network and loss used in training.
    Gradcheck,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            seeds,
            out,
            variant,
            strategy,
            mode,
            sequential,
        } => run(config, seeds, out, variant, strategy, mode, sequential),
        Command::VerifyTheory { grid_step } => verify_theory(grid_step),
        Command::Gradcheck => gradcheck(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                MudalError::Config(_) => 2,
                MudalError::NonFinite(_) => 3,
                _ => 1,
            })
        }
    }
}

fn run(
    config: PathBuf,
    seeds: Option<Vec<u64>>,
    out: Option<PathBuf>,
    variant: Option<String>,
    strategy: Option<String>,
    mode: Option<String>,
    sequential: bool,
) -> mudal::Result<()> {
    let mut cfg = parse_config(&config)?;
    if let Some(s) = seeds {
        cfg.method.seeds = s;
    }
    if let Some(o) = out {
        cfg.output.dir = o;
    }
    if let Some(v) = variant {
        cfg.set_variant(v.parse::<Variant>()?);
    }
    if let Some(s) = strategy {
        cfg.method.strategy = s.parse::<Strategy>()?;
    }
    if let Some(m) = mode {
        cfg.budget.mode = m.parse::<AssignmentMode>()?;
    }
    cfg.validate()?;
    let exec = if sequential { Exec::Sequential } else { Exec::Parallel };
    let results = run_and_export(&cfg, config.parent(), exec)?;
    for run in &results.runs {
        println!(
            "seed {}: mean accuracy over rounds {:.4}{}",
            run.seed,
            run.mean_accuracy(),
            if run.truncated.is_some() { " (truncated)" } else { "" }
        );
    }
    println!("wrote {}", cfg.output.dir.display());
    Ok(())
}

fn verify_theory(grid_step: f64) -> mudal::Result<()> {
    let mut rng = stream(0, "verify-theory", 0);
    let mut worst_gap: f64 = 0.0;
    let mut worst_one: f64 = 0.0;
    for trial in 0..50 {
        let n = 2 + trial % 3;
        let raw: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 1e-3).collect();
        let s: f64 = raw.iter().sum();
        let alpha: Vec<f64> = raw.iter().map(|v| v / s).collect();
        let c = verify_optimal_beta(&alpha, grid_step, Exec::Parallel)?;
        worst_gap = worst_gap.max(c.gap);
        worst_one = worst_one.max((c.value_at_alpha - 1.0).abs());
        if c.min_value < 1.0 - 1e-12 {
            return Err(MudalError::InvalidArgument(format!(
                "grid value {} below 1 at {:?}",
                c.min_value, c.beta_star
            )));
        }
    }
    println!(
        "optimal budget: max |β* − α|∞ = {worst_gap:.4} (grid step {grid_step}), max |Σα²/α − 1| = {worst_one:.1e}"
    );
    let p = BoundParams {
        vc_dim: 1.0,
        delta: 0.05,
        total_labels: 100,
    };
    let h = hoeffding_term(&[0.5, 0.5], &[0.5, 0.5], &p)?;
    let expect = 2.0 * ((2.0 * 202f64.ln() + 80f64.ln()) / 100.0).sqrt();
    println!("hoeffding term at β = α, d = 1, δ = 0.05, M = 100: {h:.12} (closed form {expect:.12})");
    let skewed = hoeffding_term(&[0.8, 0.2], &[0.5, 0.5], &p)?;
    println!("hoeffding term at α = (0.8, 0.2), β = (0.5, 0.5): {skewed:.12}");
    if worst_gap > grid_step + 1e-12 {
        return Err(MudalError::InvalidArgument(format!(
            "grid minimiser {worst_gap} away from α"
        )));
    }
    Ok(())
}

fn gradcheck() -> mudal::Result<()> {
    let shape = BundleShape {
        input_dim: 3,
        n_classes: 4,
        n_domains: 3,
        hidden: 8,
        latent: 5,
        disc_hidden: 6,
        code: DomainCode::OneHot,
    };
    let mut worst: f64 = 0.0;
    for seed in 0..10u64 {
        let mut rng = stream(seed, "gradcheck", 0);
        let b = ModelBundle::new(shape, true, &mut rng)?;
        let mut nets: Vec<(&DenseNet, bool)> = vec![(&b.encoder, false), (&b.trunk, false), (&b.head, true)];
        nets.extend(b.domain_heads.iter().map(|h| (h, true)));
        nets.push((b.discriminator.as_ref().expect("built with f"), false));
        for (net, classifier) in nets {
            // zero-initialised biases can sit a unit exactly on a ReLU kink,
            // where central differences and the subgradient disagree
            let mut net = net.clone();
            let jittered: Vec<f64> = net
                .params_flat()
                .iter()
                .map(|p| p + rng.random_range(-0.1..0.1))
                .collect();
            net.set_params_flat(&jittered)?;
            for weighted in [false, true] {
                let classes = if classifier { net.output_dim() } else { 2 };
                let x = Array2::from_shape_fn((6, net.input_dim()), |_| rng.random_range(-1.0..1.0));
                let y = (0..6).map(|k| (k * 7 + 3) % classes).collect();
                let w = (0..6)
                    .map(|_| if weighted { rng.random_range(0.1..2.0) } else { 1.0 })
                    .collect();
                let data = Batch::new(x, Some(y), vec![0; 6], w)?;
                let err = if classifier {
                    grad_check(&net, &data, &ce_loss(1.0), FD_STEP)?.max(grad_check(
                        &net,
                        &data,
                        &ce_loss(0.5),
                        FD_STEP,
                    )?)
                } else if net.output_dim() == 1 {
                    grad_check(&net, &data, &bce_loss(), FD_STEP)?
                } else {
                    grad_check(&net, &data, &squared_loss(), FD_STEP)?
                };
                worst = worst.max(err);
            }
        }
    }
    println!("max relative gradient error over 10 seeds: {worst:.3e}");
    if worst >= 1e-4 {
        return Err(MudalError::NonFinite(format!("gradient check failed: {worst:.3e}")));
    }
    Ok(())
}
