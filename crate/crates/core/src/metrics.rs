//! Tree metrics, staged node-location histograms and aggregation over runs.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mcts::{SearchTree, StageSnapshot, TreeNode};

/// Histogram resolution used unless overridden.
pub const DEFAULT_BINS: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("cannot summarise an empty set of records")]
    EmptyGroup,
}

/// Expansions per iteration. Every iteration counts, including any spent
/// scoring evolved policies.
pub fn expansion_rate(tree: &SearchTree) -> f64 {
    if tree.iterations_done() == 0 {
        return 0.0;
    }
    tree.expansions_done() as f64 / tree.iterations_done() as f64
}

/// Nodes of the final tree whose state is terminal.
pub fn terminal_states_reached(tree: &SearchTree) -> usize {
    let cfg = tree.config();
    tree.nodes()
        .iter()
        .filter(|n| n.state.is_terminal(cfg))
        .count()
}

/// Counts node centers in `bins` equal bins over `[0, 1]`; the last bin is
/// right-closed.
pub fn histogram(nodes: &[TreeNode], bins: usize) -> Vec<u64> {
    assert!(bins >= 1, "need at least one bin");
    let mut counts = vec![0u64; bins];
    for n in nodes {
        let c = n.state.center();
        let i = ((c * bins as f64) as usize).min(bins - 1);
        counts[i] += 1;
    }
    counts
}

/// One histogram per recorded stage snapshot, built from the nodes that
/// existed at that point.
pub fn stage_histograms(tree: &SearchTree, bins: usize) -> Vec<Vec<u64>> {
    tree.snapshots()
        .iter()
        .map(|s: &StageSnapshot| histogram(&tree.nodes()[..s.node_count], bins))
        .collect()
}

/// Everything one seeded run reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub agent: String,
    pub function: String,
    pub seed: u64,
    pub expansion_rate: f64,
    pub terminal_states: u64,
    pub most_visited_x: f64,
    pub most_visited_value: f64,
    pub best_reward_x: f64,
    pub best_reward_value: f64,
    pub node_count: u64,
    pub fitness_iterations: u64,
    pub search_iterations: u64,
    pub evolved_policy: Option<String>,
    /// Stage × bin counts; written to the histogram file, not the run row.
    #[serde(skip)]
    pub histograms: Vec<Vec<u64>>,
}

impl RunRecord {
    /// Scalar metrics in summary order.
    pub fn scalar_metrics(&self) -> [(&'static str, f64); 6] {
        [
            ("expansion_rate", self.expansion_rate),
            ("terminal_states", self.terminal_states as f64),
            ("most_visited_value", self.most_visited_value),
            ("best_reward_value", self.best_reward_value),
            ("most_visited_x", self.most_visited_x),
            ("best_reward_x", self.best_reward_x),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub agent: String,
    pub function: String,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramRow {
    pub agent: String,
    pub function: String,
    pub seed: u64,
    pub stage: usize,
    pub bin_index: usize,
    pub bin_left: f64,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanHistogramRow {
    pub agent: String,
    pub function: String,
    pub stage: usize,
    pub bin_index: usize,
    pub bin_left: f64,
    pub mean_count: f64,
    pub n: usize,
}

/// Mean and population standard deviation. Values are summed in sorted
/// order so the result does not depend on input order.
pub fn mean_std(values: &[f64]) -> Result<(f64, f64), MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::EmptyGroup);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mean = sorted.iter().sum::<f64>() / n;
    let mut sq: Vec<f64> = sorted.iter().map(|v| (v - mean).powi(2)).collect();
    sq.sort_by(f64::total_cmp);
    let var = sq.iter().sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}

fn group(records: &[RunRecord]) -> BTreeMap<(&str, &str), Vec<&RunRecord>> {
    let mut groups: BTreeMap<(&str, &str), Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        groups
            .entry((r.agent.as_str(), r.function.as_str()))
            .or_default()
            .push(r);
    }
    groups
}

/// Per (agent, function) mean ± population std of every scalar metric.
pub fn summarize(records: &[RunRecord]) -> Result<Vec<SummaryRow>, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::EmptyGroup);
    }
    let mut rows = Vec::new();
    for ((agent, function), group) in group(records) {
        let names = group[0].scalar_metrics().map(|(name, _)| name);
        for (k, metric) in names.into_iter().enumerate() {
            let values: Vec<f64> = group.iter().map(|r| r.scalar_metrics()[k].1).collect();
            let (mean, std) = mean_std(&values)?;
            rows.push(SummaryRow {
                agent: agent.to_string(),
                function: function.to_string(),
                metric: metric.to_string(),
                mean,
                std,
                n: values.len(),
            });
        }
    }
    Ok(rows)
}

/// Per-seed histogram rows.
pub fn histogram_rows(record: &RunRecord) -> Vec<HistogramRow> {
    let mut rows = Vec::new();
    for (stage, counts) in record.histograms.iter().enumerate() {
        let bins = counts.len();
        for (bin_index, &count) in counts.iter().enumerate() {
            rows.push(HistogramRow {
                agent: record.agent.clone(),
                function: record.function.clone(),
                seed: record.seed,
                stage,
                bin_index,
                bin_left: bin_index as f64 / bins as f64,
                count,
            });
        }
    }
    rows
}

/// Histograms averaged over the seeds of each (agent, function) group.
pub fn mean_histograms(records: &[RunRecord]) -> Result<Vec<MeanHistogramRow>, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::EmptyGroup);
    }
    let mut rows = Vec::new();
    for ((agent, function), group) in group(records) {
        let stages = group.iter().map(|r| r.histograms.len()).min().unwrap_or(0);
        for stage in 0..stages {
            let bins = group[0].histograms[stage].len();
            for bin_index in 0..bins {
                let values: Vec<f64> = group
                    .iter()
                    .map(|r| r.histograms[stage][bin_index] as f64)
                    .collect();
                let (mean, _) = mean_std(&values)?;
                rows.push(MeanHistogramRow {
                    agent: agent.to_string(),
                    function: function.to_string(),
                    stage,
                    bin_index,
                    bin_left: bin_index as f64 / bins as f64,
                    mean_count: mean,
                    n: values.len(),
                });
            }
        }
    }
    Ok(rows)
}
