//! CSV files written for each invocation.
//!
//! Layout of an output directory:
//!
//! - `runs.csv`: one row per run ([`RunRecord`] columns).
//! - `summary.csv`: `agent,function,metric,mean,std,n`.
//! - `histograms.csv`: `agent,function,seed,stage,bin_index,bin_left,count`.
//! - `histograms_mean.csv`: the same bins averaged over seeds.
//! - `config.echo`: the resolved configuration.
//! - `trees/`: optional `depth,a,b,visits,total_reward` dumps.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::{ExperimentConfig, HarnessError};
use crate::evo::SemanticFallback;
use crate::mcts::SearchTree;
use crate::metrics::{self, RunRecord};

pub const RUNS_FILE: &str = "runs.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const HISTOGRAM_FILE: &str = "histograms.csv";
pub const MEAN_HISTOGRAM_FILE: &str = "histograms_mean.csv";
pub const CONFIG_FILE: &str = "config.echo";

fn write_csv<T: Serialize>(
    path: &Path,
    rows: impl IntoIterator<Item = T>,
) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Resolved configuration as `key=value` lines. Scheduling and paths are
/// left out so serial and parallel runs echo identically.
pub fn config_echo(cfg: &ExperimentConfig) -> String {
    let join = |items: Vec<String>| items.join(",");
    let fallback = match cfg.evo.fallback {
        SemanticFallback::Literal => "literal",
        SemanticFallback::BestOffspring => "best",
    };
    let lines = [
        format!(
            "functions={}",
            join(cfg.functions.iter().map(|f| f.to_string()).collect())
        ),
        format!(
            "agents={}",
            join(cfg.agents.iter().map(|a| a.label()).collect())
        ),
        format!("iterations={}", cfg.iterations),
        format!("runs={}", cfg.runs),
        format!("base_seed={}", cfg.base_seed),
        format!("bins={}", cfg.bins),
        format!("branching={}", cfg.fop.branching),
        format!("threshold={}", cfg.fop.threshold),
        format!("lambda={}", cfg.evo.lambda),
        format!("generations={}", cfg.evo.generations),
        format!("fitness_iters={}", cfg.evo.fitness_iters),
        format!("fitness_budget={}", cfg.evo.fitness_budget()),
        format!("alpha={}", cfg.evo.alpha),
        format!("beta={}", cfg.evo.beta),
        format!("c_init={}", cfg.evo.c_init),
        format!("semantic_fallback={fallback}"),
    ];
    let mut out = lines.join("\n");
    out.push('\n');
    if let Some(expr) = cfg.agents.iter().find_map(|a| match a {
        super::AgentSpec::Fixed { expr } => Some(expr),
        _ => None,
    }) {
        out.push_str(&format!("policy_expr={expr}\n"));
    }
    out
}

/// Writes every CSV for a finished batch into `dir`.
pub fn write_outputs(
    dir: &Path,
    cfg: &ExperimentConfig,
    records: &[RunRecord],
) -> Result<(), HarnessError> {
    fs::create_dir_all(dir)?;
    write_csv(&dir.join(RUNS_FILE), records)?;
    write_csv(&dir.join(SUMMARY_FILE), metrics::summarize(records)?)?;
    write_csv(
        &dir.join(HISTOGRAM_FILE),
        records.iter().flat_map(metrics::histogram_rows),
    )?;
    write_csv(
        &dir.join(MEAN_HISTOGRAM_FILE),
        metrics::mean_histograms(records)?,
    )?;
    fs::write(dir.join(CONFIG_FILE), config_echo(cfg))?;
    Ok(())
}

pub fn tree_dump_path(dir: &Path, record: &RunRecord) -> PathBuf {
    let agent = record.agent.replace(':', "_");
    dir.join("trees")
        .join(format!("{agent}_{}_{}.csv", record.function, record.seed))
}

pub fn dump_tree(dir: &Path, record: &RunRecord, tree: &SearchTree) -> Result<(), HarnessError> {
    let path = tree_dump_path(dir, record);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut w = BufWriter::new(File::create(path)?);
    tree.dump(&mut w)?;
    w.flush()?;
    Ok(())
}

/// Reads `runs.csv` back; histograms are not part of that file.
pub fn read_runs(path: &Path) -> Result<Vec<RunRecord>, HarnessError> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize()
        .map(|row| row.map_err(HarnessError::from))
        .collect()
}
