//! Command-line flags.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, ValueEnum};

use super::{AgentSpec, ExperimentConfig, HarnessError};
use crate::evo::SemanticFallback;
use crate::expr::Expr;
use crate::fop::FunctionId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FallbackArg {
    /// Random offspring when no tie resolves through the similarity window.
    Literal,
    /// Random offspring among the fittest.
    Best,
}

/// Compare UCT and online-evolved MCTS selection policies on 1-D landscapes.
///
/// With no flags, runs the full comparison: 9 agents x 5 functions x 30 runs.
#[derive(Debug, Parser)]
#[command(name = "evo-mcts", version)]
pub struct Cli {
    /// Comma-separated functions, f1..f5.
    #[arg(long, value_delimiter = ',')]
    pub functions: Option<Vec<String>>,
    /// Comma-separated agents: uct:<c> with c in {0.5,1,sqrt2,2,3}, ea:<n>, siea:<n>
    /// where n is the tree-search budget after evolution.
    #[arg(long, value_delimiter = ',')]
    pub agents: Option<Vec<String>>,
    /// Independent runs per (agent, function).
    #[arg(long, default_value_t = super::DEFAULT_RUNS)]
    pub runs: usize,
    /// Base seed; run i uses seed + i.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Histogram bins over [0, 1].
    #[arg(long, default_value_t = crate::metrics::DEFAULT_BINS)]
    pub bins: usize,
    /// Lower bound of the semantic similarity window.
    #[arg(long, default_value_t = 5.0, allow_negative_numbers = true)]
    pub alpha: f64,
    /// Upper bound of the semantic similarity window.
    #[arg(long, default_value_t = 10.0, allow_negative_numbers = true)]
    pub beta: f64,
    /// Output directory.
    #[arg(long, default_value = "results")]
    pub out: PathBuf,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
    /// Also write every final tree under <out>/trees/.
    #[arg(long)]
    pub dump_trees: bool,
    /// Iterations for UCT and fixed-policy agents.
    #[arg(long, default_value_t = super::DEFAULT_ITERATIONS)]
    pub iterations: u64,
    /// Run a fixed policy given in prefix notation, e.g. "(+ Q (psqrt Nc))".
    #[arg(long)]
    pub policy_expr: Option<String>,
    /// Semantic selection behaviour when the similarity window does not decide.
    #[arg(long, value_enum, default_value = "literal")]
    pub semantic_fallback: FallbackArg,
}

impl Cli {
    pub fn into_config(self) -> Result<ExperimentConfig, HarnessError> {
        let mut cfg = ExperimentConfig::default();
        if let Some(fs) = self.functions {
            cfg.functions = fs
                .iter()
                .map(|f| {
                    f.parse::<FunctionId>()
                        .map_err(|e| HarnessError::Config(e.to_string()))
                })
                .collect::<Result<_, _>>()?;
        }
        let fixed = match &self.policy_expr {
            Some(text) => Some(AgentSpec::Fixed {
                expr: Expr::parse_text(text)
                    .map_err(|e| HarnessError::Config(format!("--policy-expr: {e}")))?,
            }),
            None => None,
        };
        match (self.agents, fixed) {
            (Some(list), fixed) => {
                cfg.agents = list.iter().map(|a| a.parse()).collect::<Result<_, _>>()?;
                cfg.agents.extend(fixed);
            }
            (None, Some(fixed)) => cfg.agents = vec![fixed],
            (None, None) => {}
        }
        cfg.runs = self.runs;
        cfg.base_seed = self.seed;
        cfg.bins = self.bins;
        cfg.evo.alpha = self.alpha;
        cfg.evo.beta = self.beta;
        cfg.evo.fallback = match self.semantic_fallback {
            FallbackArg::Literal => SemanticFallback::Literal,
            FallbackArg::Best => SemanticFallback::BestOffspring,
        };
        cfg.out_dir = self.out;
        cfg.jobs = self.jobs;
        cfg.dump_trees = self.dump_trees;
        cfg.iterations = self.iterations;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug)]
pub enum CliOutcome {
    Run(ExperimentConfig),
    /// `--help` or `--version` text; exit successfully.
    Info(String),
}

/// Parses `argv` (including the program name) into a validated config.
pub fn cli_parse<I, T>(argv: I) -> Result<CliOutcome, HarnessError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match Cli::try_parse_from(argv) {
        Ok(cli) => cli.into_config().map(CliOutcome::Run),
        Err(e) => match e.kind() {
            clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                Ok(CliOutcome::Info(e.to_string()))
            }
            _ => Err(HarnessError::Config(e.to_string())),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::SQRT_2;

    fn parse(args: &[&str]) -> Result<ExperimentConfig, HarnessError> {
        let argv = std::iter::once("evo-mcts").chain(args.iter().copied());
        match cli_parse(argv)? {
            CliOutcome::Run(cfg) => Ok(cfg),
            CliOutcome::Info(text) => panic!("unexpected info: {text}"),
        }
    }

    #[test]
    fn no_flags_is_the_full_preset() {
        let cfg = parse(&[]).unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.agents.len(), 9);
        assert_eq!(cfg.functions.len(), 5);
        assert_eq!(cfg.runs, 30);
    }

    #[test]
    fn single_cell() {
        let cfg = parse(&["--agents", "uct:sqrt2", "--functions", "f1"]).unwrap();
        assert_eq!(cfg.agents, vec![AgentSpec::Uct { c: SQRT_2 }]);
        assert_eq!(cfg.functions, vec![FunctionId::F1]);
    }

    #[test]
    fn full_flag_set() {
        let cfg = parse(&[
            "--functions",
            "f2,f5",
            "--agents",
            "uct:0.5,uct:1,uct:sqrt2,uct:2,uct:3,ea:2570,ea:5000,siea:2570,siea:5000",
            "--runs",
            "3",
            "--seed",
            "42",
            "--bins",
            "50",
            "--alpha",
            "0.1",
            "--beta",
            "0.9",
            "--out",
            "/tmp/x",
            "--jobs",
            "2",
            "--dump-trees",
            "--semantic-fallback",
            "best",
        ])
        .unwrap();
        assert_eq!(cfg.agents, AgentSpec::default_set());
        assert_eq!(cfg.runs, 3);
        assert_eq!(cfg.base_seed, 42);
        assert_eq!(cfg.bins, 50);
        assert_eq!((cfg.evo.alpha, cfg.evo.beta), (0.1, 0.9));
        assert_eq!(cfg.jobs, 2);
        assert!(cfg.dump_trees);
        assert_eq!(cfg.evo.fallback, SemanticFallback::BestOffspring);
    }

    #[test]
    fn policy_expr_agent() {
        let cfg = parse(&["--policy-expr", "(+ Q (psqrt Nc))"]).unwrap();
        assert_eq!(cfg.agents.len(), 1);
        assert_eq!(cfg.agents[0].label(), "expr");
        let cfg = parse(&["--agents", "uct:1", "--policy-expr", "Q"]).unwrap();
        assert_eq!(cfg.agents.len(), 2);
        assert!(parse(&["--policy-expr", "(+ Q"]).is_err());
    }

    #[test]
    fn usage_errors() {
        assert!(parse(&["--runs", "0"]).is_err());
        assert!(parse(&["--bogus"]).is_err());
        assert!(parse(&["--functions", "f9"]).is_err());
        assert!(parse(&["--agents", "uct:0.7"]).is_err());
        assert!(parse(&["--bins", "0"]).is_err());
    }

    #[test]
    fn help_is_not_an_error() {
        let out = cli_parse(["evo-mcts", "--help"]).unwrap();
        assert!(matches!(out, CliOutcome::Info(text) if text.contains("--agents")));
    }
}
