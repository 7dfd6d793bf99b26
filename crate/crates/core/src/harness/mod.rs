//! Experiment harness: agents, seeded runs, batches and CSV output.

pub mod cli;
pub mod output;

use std::f64::consts::SQRT_2;
use std::fmt;
use std::panic::{self, AssertUnwindSafe};
use std::path::PathBuf;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::evo::{evolve_policy, EvoConfig, SelectionMode};
use crate::expr::{Expr, CONSTANT_SET};
use crate::fop::{FopConfig, FunctionId};
use crate::mcts::{SearchTree, StagePlan};
use crate::metrics::{self, RunRecord};

/// Tree-search iterations for UCT agents.
pub const DEFAULT_ITERATIONS: u64 = 5000;
pub const DEFAULT_RUNS: usize = 30;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("run failed for agent {agent}, function {function}, seed {seed}: {message}")]
    RunFailed {
        agent: String,
        function: FunctionId,
        seed: u64,
        message: String,
    },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Metrics(#[from] metrics::MetricsError),
}

/// A selection-policy strategy under test.
#[derive(Debug, Clone, PartialEq)]
pub enum AgentSpec {
    /// UCT with a fixed exploration constant.
    Uct { c: f64 },
    /// Online-evolved policy followed by `search_iterations` of tree search.
    Evolved {
        mode: SelectionMode,
        search_iterations: u64,
    },
    /// A user-supplied policy expression used for every iteration.
    Fixed { expr: Expr },
}

fn constant_label(c: f64) -> String {
    if c == SQRT_2 {
        "sqrt2".into()
    } else {
        format!("{c}")
    }
}

impl AgentSpec {
    pub fn label(&self) -> String {
        match self {
            AgentSpec::Uct { c } => format!("uct:{}", constant_label(*c)),
            AgentSpec::Evolved {
                mode: SelectionMode::Plain,
                search_iterations,
            } => format!("ea:{search_iterations}"),
            AgentSpec::Evolved {
                mode: SelectionMode::Semantic,
                search_iterations,
            } => format!("siea:{search_iterations}"),
            AgentSpec::Fixed { .. } => "expr".into(),
        }
    }

    /// The nine agents of the full comparison.
    pub fn default_set() -> Vec<AgentSpec> {
        let mut agents: Vec<AgentSpec> =
            CONSTANT_SET.iter().map(|&c| AgentSpec::Uct { c }).collect();
        for mode in [SelectionMode::Plain, SelectionMode::Semantic] {
            for search_iterations in [2570, 5000] {
                agents.push(AgentSpec::Evolved {
                    mode,
                    search_iterations,
                });
            }
        }
        agents
    }
}

impl fmt::Display for AgentSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl FromStr for AgentSpec {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = |why: &str| HarnessError::Config(format!("agent '{s}': {why}"));
        let (kind, arg) = s
            .trim()
            .split_once(':')
            .ok_or_else(|| bad("expected kind:value, e.g. uct:sqrt2 or ea:2570"))?;
        match kind {
            "uct" => {
                let c = match arg {
                    "sqrt2" => SQRT_2,
                    other => other.parse::<f64>().map_err(|_| bad("bad constant"))?,
                };
                if !CONSTANT_SET.contains(&c) {
                    return Err(bad("constant must be one of 0.5, 1, sqrt2, 2, 3"));
                }
                Ok(AgentSpec::Uct { c })
            }
            "ea" | "siea" => {
                let search_iterations: u64 = arg.parse().map_err(|_| bad("bad iteration count"))?;
                let mode = if kind == "ea" {
                    SelectionMode::Plain
                } else {
                    SelectionMode::Semantic
                };
                Ok(AgentSpec::Evolved {
                    mode,
                    search_iterations,
                })
            }
            _ => Err(bad("unknown agent kind")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub functions: Vec<FunctionId>,
    pub agents: Vec<AgentSpec>,
    /// Iterations for UCT and fixed-policy agents.
    pub iterations: u64,
    pub runs: usize,
    pub base_seed: u64,
    pub bins: usize,
    pub fop: FopConfig,
    pub evo: EvoConfig,
    pub out_dir: PathBuf,
    /// Worker threads; 0 uses every core.
    pub jobs: usize,
    pub dump_trees: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            functions: FunctionId::ALL.to_vec(),
            agents: AgentSpec::default_set(),
            iterations: DEFAULT_ITERATIONS,
            runs: DEFAULT_RUNS,
            base_seed: 0,
            bins: metrics::DEFAULT_BINS,
            fop: FopConfig::default(),
            evo: EvoConfig::default(),
            out_dir: PathBuf::from("results"),
            jobs: 0,
            dump_trees: false,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let err = |m: String| Err(HarnessError::Config(m));
        if self.runs == 0 {
            return err("runs must be at least 1".into());
        }
        if self.functions.is_empty() {
            return err("no functions selected".into());
        }
        if self.agents.is_empty() {
            return err("no agents selected".into());
        }
        if self.iterations == 0 {
            return err("iterations must be at least 1".into());
        }
        if self.bins == 0 {
            return err("bins must be at least 1".into());
        }
        self.evo
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        for agent in &self.agents {
            if let AgentSpec::Evolved {
                search_iterations, ..
            } = agent
            {
                if *search_iterations < self.fop.branching as u64 {
                    return err(format!(
                        "agent {agent}: search budget must cover expanding the root's {} children",
                        self.fop.branching
                    ));
                }
            }
        }
        Ok(())
    }

    /// Total iterations an agent's run performs.
    pub fn budget(&self, agent: &AgentSpec) -> u64 {
        match agent {
            AgentSpec::Evolved {
                search_iterations, ..
            } => self.evo.fitness_budget() + search_iterations,
            _ => self.iterations,
        }
    }
}

/// Independent RNG stream for one (seed, agent, function) cell.
pub fn run_rng(seed: u64, agent: &AgentSpec, function: FunctionId) -> ChaCha8Rng {
    let digest = Sha256::digest(format!("{seed}|{}|{function}", agent.label()).as_bytes());
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

/// Runs one agent on one function and returns the record and the final tree.
pub fn run_one_with_tree(
    cfg: &ExperimentConfig,
    agent: &AgentSpec,
    function: FunctionId,
    seed: u64,
) -> Result<(RunRecord, SearchTree), HarnessError> {
    let mut rng = run_rng(seed, agent, function);
    let total = cfg.budget(agent);
    let stages = StagePlan::thirds(total);
    let (tree, fitness_iterations, evolved_policy) = match agent {
        AgentSpec::Uct { c } => {
            let policy = Expr::ucb1_seed(*c).map_err(|e| HarnessError::Config(e.to_string()))?;
            let mut tree = SearchTree::new(function, cfg.fop, policy).with_stages(stages);
            tree.run_iterations(total, &mut rng, |_| {});
            (tree, 0, None)
        }
        AgentSpec::Fixed { expr } => {
            let mut tree = SearchTree::new(function, cfg.fop, expr.clone()).with_stages(stages);
            tree.run_iterations(total, &mut rng, |_| {});
            (tree, 0, None)
        }
        AgentSpec::Evolved {
            mode,
            search_iterations,
        } => {
            let seed_policy =
                Expr::ucb1_seed(cfg.evo.c_init).map_err(|e| HarnessError::Config(e.to_string()))?;
            let mut tree = SearchTree::new(function, cfg.fop, seed_policy).with_stages(stages);
            let mut searched = 0;
            while !tree.root_fully_expanded() {
                tree.iterate(&mut rng);
                searched += 1;
            }
            let evolution = evolve_policy(&mut tree, &cfg.evo, *mode, &mut rng)
                .map_err(|e| HarnessError::Config(e.to_string()))?;
            tree.policy = evolution.policy;
            tree.run_iterations(search_iterations - searched, &mut rng, |_| {});
            let text = tree.policy.to_text();
            (tree, evolution.report.fitness_iterations, Some(text))
        }
    };
    let most_visited = tree.recommend_most_visited(&mut rng);
    let best_reward = tree.recommend_best_reward(&mut rng);
    let record = RunRecord {
        agent: agent.label(),
        function: function.label().to_string(),
        seed,
        expansion_rate: metrics::expansion_rate(&tree),
        terminal_states: metrics::terminal_states_reached(&tree) as u64,
        most_visited_x: most_visited.x,
        most_visited_value: most_visited.value,
        best_reward_x: best_reward.x,
        best_reward_value: best_reward.value,
        node_count: tree.node_count() as u64,
        fitness_iterations,
        search_iterations: tree.iterations_done() - fitness_iterations,
        evolved_policy,
        histograms: metrics::stage_histograms(&tree, cfg.bins),
    };
    Ok((record, tree))
}

pub fn run_one(
    cfg: &ExperimentConfig,
    agent: &AgentSpec,
    function: FunctionId,
    seed: u64,
) -> Result<RunRecord, HarnessError> {
    run_one_with_tree(cfg, agent, function, seed).map(|(record, _)| record)
}

/// Every (agent, function, seed) cell of a batch, in canonical order.
pub fn batch_cells(cfg: &ExperimentConfig) -> Vec<(usize, FunctionId, u64)> {
    let mut cells = Vec::new();
    for (a, _) in cfg.agents.iter().enumerate() {
        for &f in &cfg.functions {
            for run in 0..cfg.runs as u64 {
                cells.push((a, f, cfg.base_seed + run));
            }
        }
    }
    cells
}

fn panic_message(payload: Box<dyn std::any::Any + Send>) -> String {
    if let Some(s) = payload.downcast_ref::<&str>() {
        s.to_string()
    } else if let Some(s) = payload.downcast_ref::<String>() {
        s.clone()
    } else {
        "panic".into()
    }
}

/// Runs the whole cross product, in parallel when `cfg.jobs != 1`.
/// Records come back in canonical order regardless of scheduling.
/// `on_tree` sees each finished tree (used for debug dumps).
pub fn run_batch_with(
    cfg: &ExperimentConfig,
    on_tree: impl Fn(&RunRecord, &SearchTree) -> Result<(), HarnessError> + Sync,
) -> Result<Vec<RunRecord>, HarnessError> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    let cells = batch_cells(cfg);
    let results: Vec<Result<RunRecord, HarnessError>> = pool.install(|| {
        cells
            .par_iter()
            .map(|&(a, function, seed)| {
                let agent = &cfg.agents[a];
                let outcome = panic::catch_unwind(AssertUnwindSafe(|| {
                    let (record, tree) = run_one_with_tree(cfg, agent, function, seed)?;
                    on_tree(&record, &tree)?;
                    Ok(record)
                }));
                outcome.unwrap_or_else(|payload| {
                    Err(HarnessError::RunFailed {
                        agent: agent.label(),
                        function,
                        seed,
                        message: panic_message(payload),
                    })
                })
            })
            .collect()
    });
    results.into_iter().collect()
}

pub fn run_batch(cfg: &ExperimentConfig) -> Result<Vec<RunRecord>, HarnessError> {
    run_batch_with(cfg, |_, _| Ok(()))
}
