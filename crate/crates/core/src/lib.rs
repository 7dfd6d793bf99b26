//! Monte Carlo Tree Search with pluggable selection policies on 1-D
//! function-optimisation landscapes.
//!
//! - [`expr`]: GP expression trees used as selection policies (UCT included).
//! - [`fop`]: interval states, binary partitioning and the five landscapes.
//! - [`mcts`]: the statistical tree, the four-step loop and recommendations.
//! - [`evo`]: (1, λ) online evolution of the policy, with and without
//!   semantic parent selection.
//! - [`metrics`]: expansion rate, terminal states, histograms, summaries.
//! - [`harness`]: seeded runs, batches, CSV output and the CLI.

pub mod evo;
pub mod expr;
pub mod fop;
pub mod harness;
pub mod mcts;
pub mod metrics;

pub use evo::{evolve_policy, EvoConfig, SelectionMode};
pub use expr::{EvalContext, Expr};
pub use fop::{FopConfig, FopState, FunctionId};
pub use harness::{run_batch, run_one, AgentSpec, ExperimentConfig};
pub use mcts::SearchTree;
pub use metrics::RunRecord;
