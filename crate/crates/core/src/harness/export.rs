use std::fs;
use std::path::Path;

use super::run::RunResults;
use crate::cal::snapshots_to_csv;
use crate::error::Result;
use crate::table::{sig9, CsvTable};

pub const METRICS_HEADER: [&str; 9] = [
    "variant",
    "strategy",
    "mode",
    "seed",
    "round",
    "domain",
    "accuracy",
    "labeled",
    "increment",
];
pub const BOUNDS_HEADER: [&str; 8] = [
    "variant",
    "seed",
    "round",
    "weighted_err",
    "hoeffding",
    "mean_hdist",
    "vlambda_proxy",
    "total",
];

/// One row per seed × round × domain plus one `avg` row per seed × round.
pub fn metrics_csv(results: &RunResults) -> String {
    let c = &results.config;
    let mut t = CsvTable::new(&METRICS_HEADER);
    let tag = [
        c.method.variant.to_string(),
        c.method.strategy.to_string(),
        c.budget.mode.to_string(),
    ];
    for run in &results.runs {
        for r in &run.rounds {
            let inc = |j: usize| r.increments.get(j).copied().unwrap_or(0);
            for (j, acc) in r.accuracy.per_domain.iter().enumerate() {
                let mut row = tag.to_vec();
                row.extend([
                    run.seed.to_string(),
                    r.round.to_string(),
                    j.to_string(),
                    sig9(*acc),
                    r.labeled[j].to_string(),
                    inc(j).to_string(),
                ]);
                t.push(&row);
            }
            let mut row = tag.to_vec();
            row.extend([
                run.seed.to_string(),
                r.round.to_string(),
                "avg".to_string(),
                sig9(r.accuracy.average),
                r.labeled.iter().sum::<usize>().to_string(),
                r.increments.iter().sum::<usize>().to_string(),
            ]);
            t.push(&row);
        }
    }
    t.into_string()
}

pub fn bounds_csv(results: &RunResults) -> String {
    let v = results.config.method.variant.to_string();
    let mut t = CsvTable::new(&BOUNDS_HEADER);
    for run in &results.runs {
        for r in &run.rounds {
            if let Some(b) = &r.bound {
                t.push(&[
                    v.clone(),
                    run.seed.to_string(),
                    r.round.to_string(),
                    sig9(b.weighted_err),
                    sig9(b.hoeffding),
                    sig9(b.mean_hdist),
                    sig9(b.vlambda_proxy),
                    sig9(b.total),
                ]);
            }
        }
    }
    t.into_string()
}

/// Per-domain distance estimates and budget bookkeeping.
pub fn domains_csv(results: &RunResults) -> String {
    let mut t = CsvTable::new(&["seed", "round", "domain", "alpha_col", "beta", "hdist", "clamped"]);
    for run in &results.runs {
        for r in &run.rounds {
            let cols = r.alpha.column_importance();
            let total: usize = r.labeled.iter().sum();
            for j in 0..cols.len() {
                let hd = r.bound.as_ref().map_or_else(String::new, |b| sig9(b.hdist[j]));
                t.push(&[
                    run.seed.to_string(),
                    r.round.to_string(),
                    j.to_string(),
                    sig9(cols[j]),
                    sig9(r.labeled[j] as f64 / total as f64),
                    hd,
                    u8::from(r.clamped).to_string(),
                ]);
            }
        }
    }
    t.into_string()
}

pub fn status_text(results: &RunResults) -> String {
    let mut s = String::new();
    for run in &results.runs {
        let state = match &run.truncated {
            Some(why) => format!("truncated: {why}"),
            None => "complete".to_string(),
        };
        s.push_str(&format!(
            "seed {} revealed {} {state}\n",
            run.seed,
            run.total_revealed()
        ));
    }
    s
}

/// Write every output file under `dir`: merged `metrics.csv`, `bounds.csv`,
/// `domains.csv`, `status.txt`, `config.resolved`, and per seed
/// `seed_<s>/alpha_round_<r>.csv` and `seed_<s>/objective_round_<r>.csv`.
pub fn export_outputs(results: &RunResults, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    for run in &results.runs {
        let sd = dir.join(format!("seed_{}", run.seed));
        fs::create_dir_all(&sd)?;
        for r in &run.rounds {
            fs::write(sd.join(format!("alpha_round_{}.csv", r.round)), r.alpha.to_csv())?;
            fs::write(
                sd.join(format!("objective_round_{}.csv", r.round)),
                snapshots_to_csv(&r.history, r.alpha.n_domains()),
            )?;
        }
    }
    fs::write(dir.join("metrics.csv"), metrics_csv(results))?;
    fs::write(dir.join("bounds.csv"), bounds_csv(results))?;
    fs::write(dir.join("domains.csv"), domains_csv(results))?;
    fs::write(dir.join("status.txt"), status_text(results))?;
    fs::write(dir.join("config.resolved"), results.config.to_toml_string()?)?;
    Ok(())
}
