//! Online evolution of the selection policy inside a running search.
//!
//! A (1, λ) evolution strategy mutates the current parent expression, scores
//! each offspring by driving `S` real iterations of the shared tree with it,
//! and picks the next parent either by fitness alone or by fitness plus
//! sampling-semantics distance to the parent.

use std::f64::consts::SQRT_2;
use std::sync::Once;

use log::warn;
use rand::Rng;
use thiserror::Error;

use crate::expr::Expr;
use crate::mcts::SearchTree;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvoError {
    #[error("semantics lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("invalid evolution config: {0}")]
    Config(String),
}

/// How the next parent is chosen from the offspring.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionMode {
    /// Best fitness (EA-MCTS).
    Plain,
    /// Fitness ties resolved by semantic similarity (SIEA-MCTS).
    Semantic,
}

/// What semantic selection does when it cannot use the similarity window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SemanticFallback {
    /// Uniformly random offspring, fitness ignored.
    #[default]
    Literal,
    /// Uniformly random offspring among those with the best fitness.
    BestOffspring,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvoConfig {
    pub lambda: usize,
    pub generations: usize,
    /// Iterations per fitness evaluation (S).
    pub fitness_iters: usize,
    pub alpha: f64,
    pub beta: f64,
    pub c_init: f64,
    pub fallback: SemanticFallback,
}

impl Default for EvoConfig {
    fn default() -> Self {
        Self {
            lambda: 4,
            generations: 20,
            fitness_iters: 30,
            alpha: 5.0,
            beta: 10.0,
            c_init: SQRT_2,
            fallback: SemanticFallback::Literal,
        }
    }
}

impl EvoConfig {
    /// Parent population size; the strategy is always (1, λ).
    pub const MU: usize = 1;

    pub fn validate(&self) -> Result<(), EvoError> {
        if self.lambda == 0 {
            return Err(EvoError::Config("lambda must be at least 1".into()));
        }
        if self.fitness_iters == 0 {
            return Err(EvoError::Config(
                "fitness iterations must be at least 1".into(),
            ));
        }
        if !(self.alpha.is_finite() && self.beta.is_finite()) {
            return Err(EvoError::Config("alpha and beta must be finite".into()));
        }
        Expr::ucb1_seed(self.c_init).map_err(|e| EvoError::Config(e.to_string()))?;
        Ok(())
    }

    /// Shared-tree iterations one evolution consumes: `S * (1 + G * λ)`.
    pub fn fitness_budget(&self) -> u64 {
        (self.fitness_iters * (1 + self.generations * self.lambda)) as u64
    }
}

/// Per-iteration rewards recorded while a policy drove the search.
#[derive(Debug, Clone, PartialEq)]
pub struct Semantics(pub Vec<f64>);

impl Semantics {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.0.iter().sum::<f64>() / self.0.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluatedPolicy {
    pub expr: Expr,
    /// Mean of `semantics`.
    pub fitness: f64,
    pub semantics: Semantics,
}

/// Sampling semantics distance: mean absolute difference.
pub fn ssd(p: &Semantics, q: &Semantics) -> Result<f64, EvoError> {
    if p.len() != q.len() {
        return Err(EvoError::LengthMismatch(p.len(), q.len()));
    }
    let total: f64 = p.0.iter().zip(&q.0).map(|(a, b)| (a - b).abs()).sum();
    Ok(total / p.len() as f64)
}

/// Semantic similarity: `alpha < ssd(p, q) < beta`.
pub fn ssi(p: &Semantics, q: &Semantics, alpha: f64, beta: f64) -> Result<bool, EvoError> {
    let d = ssd(p, q)?;
    Ok(alpha < d && d < beta)
}

/// True when no distance in `[0, max_ssd]` can fall strictly inside
/// `(alpha, beta)`, i.e. the similarity predicate is constantly false.
pub fn semantic_window_is_degenerate(alpha: f64, beta: f64, max_ssd: f64) -> bool {
    !(alpha < max_ssd && beta > 0.0 && alpha < beta)
}

/// Runs `iters` shared-tree iterations with `expr` as the selection policy.
/// The tree keeps every update.
pub fn fitness_eval<R: Rng + ?Sized>(
    expr: Expr,
    tree: &mut SearchTree,
    iters: usize,
    rng: &mut R,
) -> EvaluatedPolicy {
    let rewards: Vec<f64> = (0..iters)
        .map(|_| tree.iterate_with(&expr, rng).reward)
        .collect();
    let semantics = Semantics(rewards);
    EvaluatedPolicy {
        expr,
        fitness: semantics.mean(),
        semantics,
    }
}

fn best_indices(offspring: &[EvaluatedPolicy]) -> (f64, Vec<usize>) {
    let best = offspring
        .iter()
        .map(|o| o.fitness)
        .fold(f64::NEG_INFINITY, f64::max);
    let idx = offspring
        .iter()
        .enumerate()
        .filter(|(_, o)| o.fitness == best)
        .map(|(i, _)| i)
        .collect();
    (best, idx)
}

/// Index of a fittest offspring; exact ties broken uniformly.
pub fn plain_select<R: Rng + ?Sized>(offspring: &[EvaluatedPolicy], rng: &mut R) -> usize {
    assert!(
        !offspring.is_empty(),
        "selection needs at least one offspring"
    );
    let (_, best) = best_indices(offspring);
    best[rng.random_range(0..best.len())]
}

/// Which branch of semantic selection produced the choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SemanticBranch {
    /// Only one offspring had the best fitness.
    UniqueBest,
    /// Several tied but none were inside the similarity window.
    NoneInWindow,
    /// Tied offspring in the window; the one nearest `alpha` won.
    ClosestToAlpha,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SemanticChoice {
    pub index: usize,
    pub branch: SemanticBranch,
}

/// Semantic parent selection.
///
/// With several offspring tied at the best fitness, those whose distance to
/// the parent lies in `(alpha, beta)` compete and the one closest to `alpha`
/// wins. Every other case falls back according to `fallback`.
pub fn semantic_select<R: Rng + ?Sized>(
    offspring: &[EvaluatedPolicy],
    parent: &EvaluatedPolicy,
    alpha: f64,
    beta: f64,
    fallback: SemanticFallback,
    rng: &mut R,
) -> Result<SemanticChoice, EvoError> {
    assert!(
        !offspring.is_empty(),
        "selection needs at least one offspring"
    );
    let (_, tied) = best_indices(offspring);
    let fall_back = |rng: &mut R| match fallback {
        SemanticFallback::Literal => rng.random_range(0..offspring.len()),
        SemanticFallback::BestOffspring => tied[rng.random_range(0..tied.len())],
    };
    if tied.len() == 1 {
        return Ok(SemanticChoice {
            index: fall_back(rng),
            branch: SemanticBranch::UniqueBest,
        });
    }
    let mut closest: Option<(usize, f64)> = None;
    for &i in &tied {
        let d = ssd(&offspring[i].semantics, &parent.semantics)?;
        if alpha < d && d < beta {
            let gap = (d - alpha).abs();
            if closest.is_none_or(|(_, g)| gap < g) {
                closest = Some((i, gap));
            }
        }
    }
    Ok(match closest {
        Some((index, _)) => SemanticChoice {
            index,
            branch: SemanticBranch::ClosestToAlpha,
        },
        None => SemanticChoice {
            index: fall_back(rng),
            branch: SemanticBranch::NoneInWindow,
        },
    })
}

static DEGENERATE_WARNING: Once = Once::new();

/// Counters describing one evolution run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvolutionReport {
    pub fitness_iterations: u64,
    pub offspring_evaluated: usize,
    /// Generations where several offspring shared the best fitness.
    pub tied_generations: usize,
    /// Generations decided by the similarity window.
    pub window_selections: usize,
    /// The similarity window cannot be hit with rewards in `[0, 1]`.
    pub window_degenerate: bool,
    /// Parent fitness after each generation, starting with the seed.
    pub parent_fitness: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evolution {
    pub policy: Expr,
    pub report: EvolutionReport,
}

/// Evolves a selection policy on `tree`, starting from the UCB1 seed.
///
/// The root must already be fully expanded. Consumes exactly
/// [`EvoConfig::fitness_budget`] iterations of the shared tree.
pub fn evolve_policy<R: Rng + ?Sized>(
    tree: &mut SearchTree,
    cfg: &EvoConfig,
    mode: SelectionMode,
    rng: &mut R,
) -> Result<Evolution, EvoError> {
    cfg.validate()?;
    debug_assert!(
        tree.root_fully_expanded(),
        "evolution starts once the root is expanded"
    );
    let start = tree.iterations_done();
    let mut report = EvolutionReport::default();
    if mode == SelectionMode::Semantic {
        // rewards are 0/1, so distances never exceed 1
        report.window_degenerate = semantic_window_is_degenerate(cfg.alpha, cfg.beta, 1.0);
        if report.window_degenerate {
            DEGENERATE_WARNING.call_once(|| {
                warn!(
                    "semantic window ({}, {}) is unreachable for rewards in [0, 1]; \
                 similarity never holds and selection always falls back",
                    cfg.alpha, cfg.beta
                )
            });
        }
    }

    let seed = Expr::ucb1_seed(cfg.c_init).expect("validated");
    let mut parent = fitness_eval(seed, tree, cfg.fitness_iters, rng);
    report.parent_fitness.push(parent.fitness);

    for _ in 0..cfg.generations {
        let mut offspring: Vec<EvaluatedPolicy> = (0..cfg.lambda)
            .map(|_| {
                let child = parent.expr.subtree_mutate(rng);
                fitness_eval(child, tree, cfg.fitness_iters, rng)
            })
            .collect();
        report.offspring_evaluated += offspring.len();
        let (_, tied) = best_indices(&offspring);
        if tied.len() > 1 {
            report.tied_generations += 1;
        }
        let next = match mode {
            SelectionMode::Plain => plain_select(&offspring, rng),
            SelectionMode::Semantic => {
                let choice =
                    semantic_select(&offspring, &parent, cfg.alpha, cfg.beta, cfg.fallback, rng)?;
                if choice.branch == SemanticBranch::ClosestToAlpha {
                    report.window_selections += 1;
                }
                choice.index
            }
        };
        parent = offspring.swap_remove(next);
        report.parent_fitness.push(parent.fitness);
    }

    report.fitness_iterations = tree.iterations_done() - start;
    debug_assert_eq!(report.fitness_iterations, cfg.fitness_budget());
    if report.window_degenerate {
        debug_assert_eq!(report.window_selections, 0);
    }
    Ok(Evolution {
        policy: parent.expr,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::MAX_DEPTH;
    use crate::fop::{FopConfig, FunctionId};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn evaluated(fitness: f64, semantics: Vec<f64>) -> EvaluatedPolicy {
        EvaluatedPolicy {
            expr: Expr::ucb1_seed(1.0).unwrap(),
            fitness,
            semantics: Semantics(semantics),
        }
    }

    fn expanded_tree(f: FunctionId, seed: u64) -> (SearchTree, ChaCha8Rng) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tree = SearchTree::new(f, FopConfig::default(), Expr::ucb1_seed(SQRT_2).unwrap());
        while !tree.root_fully_expanded() {
            tree.iterate(&mut rng);
        }
        (tree, rng)
    }

    #[test]
    fn ssd_examples() {
        let s = |v: &[f64]| Semantics(v.to_vec());
        assert_eq!(ssd(&s(&[1., 2., 3.]), &s(&[1., 2., 3.])).unwrap(), 0.0);
        assert_eq!(ssd(&s(&[0., 0.]), &s(&[10., 20.])).unwrap(), 15.0);
        assert_eq!(
            ssd(&s(&[0.]), &s(&[0., 1.])),
            Err(EvoError::LengthMismatch(1, 2))
        );
        assert!(ssi(&s(&[0.]), &s(&[1.]), 5.0, 10.0).is_ok());
        assert!(ssi(&s(&[0.]), &s(&[]), 5.0, 10.0).is_err());
    }

    #[test]
    fn ssi_is_strict() {
        let s = |v: f64| Semantics(vec![v]);
        assert!(ssi(&s(0.0), &s(7.0), 5.0, 10.0).unwrap());
        assert!(!ssi(&s(0.0), &s(0.0), 5.0, 10.0).unwrap());
        assert!(!ssi(&s(0.0), &s(5.0), 5.0, 10.0).unwrap());
        assert!(!ssi(&s(0.0), &s(10.0), 5.0, 10.0).unwrap());
    }

    #[test]
    fn degenerate_window_detection() {
        assert!(semantic_window_is_degenerate(5.0, 10.0, 1.0));
        assert!(!semantic_window_is_degenerate(0.05, 0.5, 1.0));
        assert!(semantic_window_is_degenerate(0.5, 0.2, 1.0));
        assert!(!semantic_window_is_degenerate(5.0, 10.0, 30.0));
    }

    #[test]
    fn plain_select_breaks_ties_uniformly() {
        let offspring: Vec<_> = [0.2, 0.9, 0.9, 0.1]
            .iter()
            .map(|&f| evaluated(f, vec![f]))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let n = 10_000;
        let mut counts = [0usize; 4];
        for _ in 0..n {
            counts[plain_select(&offspring, &mut rng)] += 1;
        }
        assert_eq!(counts[0] + counts[3], 0);
        let freq = counts[1] as f64 / n as f64;
        assert!((freq - 0.5).abs() < 0.02, "{counts:?}");
        assert_eq!(plain_select(&offspring[..1], &mut rng), 0);
    }

    #[test]
    fn semantic_select_unique_best_is_random_by_default() {
        let parent = evaluated(0.5, vec![0.0; 3]);
        let offspring: Vec<_> = [0.1, 0.2, 0.3, 0.4]
            .iter()
            .map(|&f| evaluated(f, vec![f; 3]))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut seen = [false; 4];
        for _ in 0..200 {
            let c = semantic_select(
                &offspring,
                &parent,
                5.0,
                10.0,
                SemanticFallback::Literal,
                &mut rng,
            )
            .unwrap();
            assert_eq!(c.branch, SemanticBranch::UniqueBest);
            seen[c.index] = true;
        }
        assert!(seen.iter().all(|&s| s));
        for _ in 0..50 {
            let c = semantic_select(
                &offspring,
                &parent,
                5.0,
                10.0,
                SemanticFallback::BestOffspring,
                &mut rng,
            )
            .unwrap();
            assert_eq!(c.index, 3);
        }
    }

    #[test]
    fn semantic_select_prefers_distance_closest_to_alpha() {
        let parent = evaluated(0.0, vec![0.0]);
        let offspring = vec![
            evaluated(1.0, vec![9.0]),
            evaluated(1.0, vec![6.0]),
            evaluated(0.5, vec![5.5]),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c = semantic_select(
            &offspring,
            &parent,
            5.0,
            10.0,
            SemanticFallback::Literal,
            &mut rng,
        )
        .unwrap();
        assert_eq!(
            c,
            SemanticChoice {
                index: 1,
                branch: SemanticBranch::ClosestToAlpha
            }
        );
        // a single tied offspring in the window is enough
        let offspring = vec![evaluated(1.0, vec![20.0]), evaluated(1.0, vec![9.0])];
        let c = semantic_select(
            &offspring,
            &parent,
            5.0,
            10.0,
            SemanticFallback::Literal,
            &mut rng,
        )
        .unwrap();
        assert_eq!(c.index, 1);
    }

    #[test]
    fn semantic_select_out_of_window_falls_back() {
        let parent = evaluated(0.0, vec![0.0]);
        let offspring = vec![
            evaluated(1.0, vec![0.2]),
            evaluated(1.0, vec![0.4]),
            evaluated(0.0, vec![0.0]),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut seen = [0usize; 3];
        for _ in 0..300 {
            let c = semantic_select(
                &offspring,
                &parent,
                5.0,
                10.0,
                SemanticFallback::Literal,
                &mut rng,
            )
            .unwrap();
            assert_eq!(c.branch, SemanticBranch::NoneInWindow);
            seen[c.index] += 1;
        }
        assert!(seen.iter().all(|&n| n > 0), "{seen:?}");
        for _ in 0..100 {
            let c = semantic_select(
                &offspring,
                &parent,
                5.0,
                10.0,
                SemanticFallback::BestOffspring,
                &mut rng,
            )
            .unwrap();
            assert!(c.index < 2);
        }
    }

    #[test]
    fn fitness_eval_updates_the_shared_tree() {
        let (mut tree, mut rng) = expanded_tree(FunctionId::F1, 4);
        let before = tree.iterations_done();
        let e = fitness_eval(Expr::ucb1_seed(1.0).unwrap(), &mut tree, 30, &mut rng);
        assert_eq!(e.semantics.len(), 30);
        assert_eq!(tree.iterations_done(), before + 30);
        assert!((e.fitness - e.semantics.mean()).abs() < 1e-12);
        assert!(e.semantics.0.iter().all(|&r| r == 0.0 || r == 1.0));
    }

    #[test]
    fn zero_generations_returns_the_seed() {
        let (mut tree, mut rng) = expanded_tree(FunctionId::F2, 6);
        let cfg = EvoConfig {
            generations: 0,
            ..EvoConfig::default()
        };
        let evo = evolve_policy(&mut tree, &cfg, SelectionMode::Plain, &mut rng).unwrap();
        assert_eq!(evo.policy, Expr::ucb1_seed(SQRT_2).unwrap());
        assert_eq!(evo.report.fitness_iterations, 30);
    }

    #[test]
    fn default_budget_is_2430() {
        let cfg = EvoConfig::default();
        assert_eq!(cfg.fitness_budget(), 2430);
        for mode in [SelectionMode::Plain, SelectionMode::Semantic] {
            let (mut tree, mut rng) = expanded_tree(FunctionId::F4, 7);
            let before = tree.iterations_done();
            let evo = evolve_policy(&mut tree, &cfg, mode, &mut rng).unwrap();
            assert_eq!(tree.iterations_done() - before, 2430);
            assert_eq!(evo.report.fitness_iterations, 2430);
            assert_eq!(evo.report.offspring_evaluated, 80);
            assert_eq!(evo.report.parent_fitness.len(), 21);
            assert!(evo.policy.depth() <= MAX_DEPTH);
        }
    }

    #[test]
    fn default_window_is_degenerate_and_never_selects() {
        for seed in 0..5 {
            let (mut tree, mut rng) = expanded_tree(FunctionId::F1, seed);
            let evo = evolve_policy(
                &mut tree,
                &EvoConfig::default(),
                SelectionMode::Semantic,
                &mut rng,
            )
            .unwrap();
            assert!(evo.report.window_degenerate);
            assert_eq!(evo.report.window_selections, 0);
        }
    }

    #[test]
    fn rescaled_window_is_exercised() {
        let cfg = EvoConfig {
            alpha: 0.0,
            beta: 1.0,
            ..EvoConfig::default()
        };
        let mut hits = 0;
        for seed in 0..5 {
            let (mut tree, mut rng) = expanded_tree(FunctionId::F2, seed);
            let evo = evolve_policy(&mut tree, &cfg, SelectionMode::Semantic, &mut rng).unwrap();
            assert!(!evo.report.window_degenerate);
            hits += evo.report.window_selections;
        }
        assert!(hits > 0);
    }

    #[test]
    fn invalid_config_is_rejected() {
        let (mut tree, mut rng) = expanded_tree(FunctionId::F1, 8);
        let cfg = EvoConfig {
            lambda: 0,
            ..EvoConfig::default()
        };
        assert!(evolve_policy(&mut tree, &cfg, SelectionMode::Plain, &mut rng).is_err());
        let cfg = EvoConfig {
            c_init: 0.7,
            ..EvoConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
