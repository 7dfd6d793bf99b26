//! Statistical tree and the select / expand / rollout / backpropagate loop.

use std::io::{self, Write};

use rand::Rng;

use crate::expr::{EvalContext, Expr};
use crate::fop::{sample_reward, FopConfig, FopState, FunctionId};

pub type NodeId = usize;

pub const ROOT: NodeId = 0;

#[derive(Debug, Clone)]
pub struct TreeNode {
    pub state: FopState,
    /// Edges from the root.
    pub depth: u32,
    pub parent: Option<NodeId>,
    pub visits: u64,
    pub total_reward: f64,
    /// In expansion order.
    pub children: Vec<NodeId>,
    untried: Vec<usize>,
}

impl TreeNode {
    fn new(state: FopState, depth: u32, parent: Option<NodeId>, cfg: &FopConfig) -> Self {
        Self {
            state,
            depth,
            parent,
            visits: 0,
            total_reward: 0.0,
            children: Vec::new(),
            untried: (0..state.action_count(cfg)).collect(),
        }
    }

    /// Mean reward; `None` before the first visit.
    pub fn mean_reward(&self) -> Option<f64> {
        (self.visits > 0).then(|| self.total_reward / self.visits as f64)
    }

    pub fn untried_actions(&self) -> &[usize] {
        &self.untried
    }

    pub fn is_expandable(&self) -> bool {
        !self.untried.is_empty()
    }
}

/// Node count and counters captured when the iteration count hits a stage mark.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageSnapshot {
    pub stage: usize,
    pub iteration: u64,
    pub node_count: usize,
    pub expansions: u64,
}

/// Iteration counts (absolute, 1-based) at which snapshots are taken.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct StagePlan {
    marks: Vec<u64>,
}

impl StagePlan {
    pub fn new(mut marks: Vec<u64>) -> Self {
        marks.sort_unstable();
        marks.dedup();
        Self { marks }
    }

    /// 1/3, 2/3 and all of `total`, rounded to the nearest iteration.
    pub fn thirds(total: u64) -> Self {
        let at = |k: f64| ((total as f64) * k / 3.0).round() as u64;
        Self::new(vec![at(1.0), at(2.0), total])
    }

    pub fn marks(&self) -> &[u64] {
        &self.marks
    }
}

/// What one call to [`SearchTree::iterate`] did.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationOutcome {
    pub reward: f64,
    /// The node the rollout started from.
    pub origin: NodeId,
    pub expanded: bool,
}

/// A recommended leaf of the statistical tree and the true function value
/// at its center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Recommendation {
    pub node: NodeId,
    pub x: f64,
    pub value: f64,
}

#[derive(Debug, Clone)]
pub struct SearchTree {
    nodes: Vec<TreeNode>,
    function: FunctionId,
    cfg: FopConfig,
    /// Selection policy installed for ordinary search iterations.
    pub policy: Expr,
    iterations_done: u64,
    expansions_done: u64,
    stages: StagePlan,
    snapshots: Vec<StageSnapshot>,
}

impl SearchTree {
    pub fn new(function: FunctionId, cfg: FopConfig, policy: Expr) -> Self {
        Self {
            nodes: vec![TreeNode::new(FopState::root(), 0, None, &cfg)],
            function,
            cfg,
            policy,
            iterations_done: 0,
            expansions_done: 0,
            stages: StagePlan::default(),
            snapshots: Vec::new(),
        }
    }

    pub fn with_stages(mut self, stages: StagePlan) -> Self {
        self.stages = stages;
        self
    }

    pub fn function(&self) -> FunctionId {
        self.function
    }

    pub fn config(&self) -> &FopConfig {
        &self.cfg
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &TreeNode {
        &self.nodes[id]
    }

    pub fn root(&self) -> &TreeNode {
        &self.nodes[ROOT]
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn iterations_done(&self) -> u64 {
        self.iterations_done
    }

    pub fn expansions_done(&self) -> u64 {
        self.expansions_done
    }

    pub fn snapshots(&self) -> &[StageSnapshot] {
        &self.snapshots
    }

    pub fn root_fully_expanded(&self) -> bool {
        !self.root().is_expandable()
    }

    /// Descends from the root by `policy` through fully expanded,
    /// non-terminal nodes. Stops at the first expandable or terminal node.
    pub fn select<R: Rng + ?Sized>(&self, policy: &Expr, rng: &mut R) -> Vec<NodeId> {
        let mut path = vec![ROOT];
        let mut current = ROOT;
        loop {
            let node = &self.nodes[current];
            if node.is_expandable() || node.state.is_terminal(&self.cfg) {
                return path;
            }
            debug_assert!(!node.children.is_empty());
            let mut best = ROOT;
            let mut best_value = f64::NEG_INFINITY;
            let mut ties = 0u32;
            for &child_id in &node.children {
                let child = &self.nodes[child_id];
                let ctx = EvalContext::new(
                    child.mean_reward().unwrap_or(0.0),
                    node.visits,
                    child.visits,
                );
                let value = policy.evaluate(&ctx);
                if ties == 0 || value > best_value {
                    best = child_id;
                    best_value = value;
                    ties = 1;
                } else if value == best_value {
                    ties += 1;
                    if rng.random_range(0..ties) == 0 {
                        best = child_id;
                    }
                }
            }
            path.push(best);
            current = best;
        }
    }

    /// Adds one child for a uniformly chosen untried action. Terminal nodes
    /// yield `None` and the tree is unchanged.
    pub fn expand<R: Rng + ?Sized>(&mut self, id: NodeId, rng: &mut R) -> Option<NodeId> {
        let cfg = self.cfg;
        let node = &mut self.nodes[id];
        if node.untried.is_empty() {
            return None;
        }
        let pick = rng.random_range(0..node.untried.len());
        let action = node.untried.swap_remove(pick);
        let state = node.state.child(action, &cfg);
        let depth = node.depth + 1;
        let child_id = self.nodes.len();
        self.nodes[id].children.push(child_id);
        self.nodes.push(TreeNode::new(state, depth, Some(id), &cfg));
        self.expansions_done += 1;
        Some(child_id)
    }

    pub fn backpropagate(&mut self, path: &[NodeId], reward: f64) {
        for &id in path {
            let node = &mut self.nodes[id];
            node.visits += 1;
            node.total_reward += reward;
        }
    }

    /// One full MCTS iteration driven by `policy`.
    pub fn iterate_with<R: Rng + ?Sized>(
        &mut self,
        policy: &Expr,
        rng: &mut R,
    ) -> IterationOutcome {
        let mut path = self.select(policy, rng);
        let leaf = *path.last().expect("path contains the root");
        let (origin, expanded) = match self.expand(leaf, rng) {
            Some(child) => {
                path.push(child);
                (child, true)
            }
            None => (leaf, false),
        };
        let reward = rollout(self.function, &self.nodes[origin].state, &self.cfg, rng);
        self.backpropagate(&path, reward);
        self.iterations_done += 1;
        if self.stages.marks.contains(&self.iterations_done) {
            self.snapshots.push(StageSnapshot {
                stage: self.snapshots.len(),
                iteration: self.iterations_done,
                node_count: self.nodes.len(),
                expansions: self.expansions_done,
            });
        }
        IterationOutcome {
            reward,
            origin,
            expanded,
        }
    }

    /// One iteration with the installed policy.
    pub fn iterate<R: Rng + ?Sized>(&mut self, rng: &mut R) -> IterationOutcome {
        let policy = self.policy.clone();
        self.iterate_with(&policy, rng)
    }

    /// Runs `n` iterations with the installed policy. `on_stage` sees every
    /// snapshot taken during the call.
    pub fn run_iterations<R: Rng + ?Sized>(
        &mut self,
        n: u64,
        rng: &mut R,
        mut on_stage: impl FnMut(&StageSnapshot),
    ) {
        let policy = self.policy.clone();
        for _ in 0..n {
            let before = self.snapshots.len();
            self.iterate_with(&policy, rng);
            if self.snapshots.len() > before {
                on_stage(self.snapshots.last().expect("snapshot just pushed"));
            }
        }
    }

    fn descend_by<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        score: impl Fn(&TreeNode) -> Option<f64>,
    ) -> Recommendation {
        let mut current = ROOT;
        loop {
            let mut best = None;
            let mut best_score = f64::NEG_INFINITY;
            let mut ties = 0u32;
            for &child_id in &self.nodes[current].children {
                let Some(s) = score(&self.nodes[child_id]) else {
                    continue;
                };
                if best.is_none() || s > best_score {
                    best = Some(child_id);
                    best_score = s;
                    ties = 1;
                } else if s == best_score {
                    ties += 1;
                    if rng.random_range(0..ties) == 0 {
                        best = Some(child_id);
                    }
                }
            }
            match best {
                Some(next) => current = next,
                None => break,
            }
        }
        let x = self.nodes[current].state.center();
        let value = self
            .function
            .eval(x)
            .expect("state centers lie inside [0, 1]");
        Recommendation {
            node: current,
            x,
            value,
        }
    }

    /// Greedy descent by visit count down to a leaf of the statistical tree.
    pub fn recommend_most_visited<R: Rng + ?Sized>(&self, rng: &mut R) -> Recommendation {
        self.descend_by(rng, |n| Some(n.visits as f64))
    }

    /// Greedy descent by mean reward; unvisited children are skipped.
    pub fn recommend_best_reward<R: Rng + ?Sized>(&self, rng: &mut R) -> Recommendation {
        self.descend_by(rng, TreeNode::mean_reward)
    }

    /// Writes `depth,a,b,visits,total_reward` records, one node per line.
    pub fn dump<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "depth,a,b,visits,total_reward")?;
        for n in &self.nodes {
            writeln!(
                out,
                "{},{},{},{},{}",
                n.depth, n.state.a, n.state.b, n.visits, n.total_reward
            )?;
        }
        Ok(())
    }
}

/// Uniform random descent to a terminal state, then one Bernoulli reward.
pub fn rollout<R: Rng + ?Sized>(
    function: FunctionId,
    state: &FopState,
    cfg: &FopConfig,
    rng: &mut R,
) -> f64 {
    let mut s = *state;
    while !s.is_terminal(cfg) {
        s = s.child(rng.random_range(0..cfg.branching), cfg);
    }
    sample_reward(function, &s, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{Terminal, CONSTANT_SET};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::SQRT_2;

    fn uct_tree(f: FunctionId, c: f64) -> SearchTree {
        SearchTree::new(f, FopConfig::default(), Expr::ucb1_seed(c).unwrap())
    }

    #[test]
    fn fresh_tree_selects_root() {
        let tree = uct_tree(FunctionId::F1, SQRT_2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(tree.select(&tree.policy, &mut rng), vec![ROOT]);
        assert_eq!(tree.root().untried_actions().len(), 2);
    }

    #[test]
    fn expansion_adds_one_child() {
        let mut tree = uct_tree(FunctionId::F1, SQRT_2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let child = tree.expand(ROOT, &mut rng).unwrap();
        assert_eq!(child, 1);
        assert_eq!(tree.root().untried_actions().len(), 1);
        assert_eq!(tree.expansions_done(), 1);
        assert_eq!(tree.node(child).visits, 0);
        assert_eq!(tree.node(child).depth, 1);
    }

    #[test]
    fn terminal_nodes_do_not_expand() {
        let cfg = FopConfig::new(2, 0.3).unwrap();
        let mut tree = SearchTree::new(FunctionId::F1, cfg, Expr::ucb1_seed(1.0).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = tree.expand(ROOT, &mut rng).unwrap();
        let b = tree.expand(a, &mut rng).unwrap();
        // width 0.25 < 0.3
        assert!(tree.node(b).state.is_terminal(&cfg));
        assert_eq!(tree.expand(b, &mut rng), None);
        assert_eq!(tree.expansions_done(), 2);
    }

    #[test]
    fn three_iterations_build_three_nodes() {
        let mut tree = uct_tree(FunctionId::F2, SQRT_2);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..3 {
            assert!(tree.iterate(&mut rng).expanded);
        }
        assert_eq!(tree.node_count(), 4);
        assert_eq!(tree.expansions_done(), 3);
        assert_eq!(tree.root().children.len(), 2);
        assert_eq!(tree.root().visits, 3);
    }

    #[test]
    fn selection_prefers_less_visited_child() {
        let mut tree = uct_tree(FunctionId::F1, SQRT_2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = tree.expand(ROOT, &mut rng).unwrap();
        let b = tree.expand(ROOT, &mut rng).unwrap();
        for _ in 0..5 {
            tree.backpropagate(&[ROOT, a], 0.0);
        }
        tree.backpropagate(&[ROOT, b], 0.0);
        // Q = 0 for both: sqrt2*sqrt(2 ln6/5) = 1.197 vs sqrt2*sqrt(2 ln6) = 2.677
        let path = tree.select(&tree.policy, &mut rng);
        assert_eq!(path, vec![ROOT, b]);
    }

    #[test]
    fn exact_ties_break_uniformly() {
        let mut tree = uct_tree(FunctionId::F1, SQRT_2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = tree.expand(ROOT, &mut rng).unwrap();
        let b = tree.expand(ROOT, &mut rng).unwrap();
        tree.backpropagate(&[ROOT, a], 1.0);
        tree.backpropagate(&[ROOT, b], 1.0);
        let n = 10_000;
        let picks_a = (0..n)
            .filter(|_| tree.select(&tree.policy, &mut rng)[1] == a)
            .count();
        let freq = picks_a as f64 / n as f64;
        assert!((freq - 0.5).abs() <= 0.02, "{freq}");
    }

    #[test]
    fn rollout_reaches_depth_17() {
        let cfg = FopConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut s = FopState::root();
        let mut steps = 0;
        while !s.is_terminal(&cfg) {
            s = s.child(rng.random_range(0..2), &cfg);
            steps += 1;
        }
        assert_eq!(steps, 17);
        // from a terminal state the reward comes from that state directly
        let peak = FopState {
            a: 0.5 - 2f64.powi(-18),
            b: 0.5 + 2f64.powi(-18),
        };
        assert!(peak.is_terminal(&cfg));
        assert_eq!(rollout(FunctionId::F1, &peak, &cfg, &mut rng), 1.0);
    }

    #[test]
    fn backpropagation_updates_path() {
        let mut tree = uct_tree(FunctionId::F1, SQRT_2);
        tree.backpropagate(&[ROOT], 1.0);
        assert_eq!(tree.root().visits, 1);
        assert_eq!(tree.root().total_reward, 1.0);
    }

    fn check_invariants(tree: &SearchTree) {
        let mut own_rollouts = 0;
        for node in tree.nodes() {
            assert!(node.total_reward >= 0.0 && node.total_reward <= node.visits as f64);
            let child_sum: u64 = node.children.iter().map(|&c| tree.node(c).visits).sum();
            assert!(node.visits >= child_sum);
            own_rollouts += node.visits - child_sum;
        }
        assert_eq!(own_rollouts, tree.iterations_done());
        assert_eq!(tree.root().visits, tree.iterations_done());
        assert_eq!(tree.expansions_done() as usize, tree.node_count() - 1);
        assert!(tree.iterations_done() >= tree.expansions_done());
    }

    #[test]
    fn visit_conservation_on_small_runs() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for (i, f) in FunctionId::ALL.into_iter().enumerate() {
            for c in CONSTANT_SET {
                let mut tree = uct_tree(f, c);
                tree.run_iterations(50 + 40 * i as u64, &mut rng, |_| {});
                check_invariants(&tree);
            }
        }
        // a shallow problem forces terminal selections
        let cfg = FopConfig::new(2, 0.1).unwrap();
        let mut tree = SearchTree::new(FunctionId::F5, cfg, Expr::ucb1_seed(0.5).unwrap());
        tree.run_iterations(500, &mut rng, |_| {});
        check_invariants(&tree);
        assert!(tree.expansions_done() < 500);
        assert!(tree.node_count() <= 31);
        assert!(tree.nodes().iter().any(|n| n.state.is_terminal(&cfg)));
    }

    #[test]
    fn single_iteration() {
        let mut tree = uct_tree(FunctionId::F1, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        tree.run_iterations(1, &mut rng, |_| {});
        assert_eq!(tree.expansions_done(), 1);
        assert_eq!(tree.root().visits, 1);
    }

    #[test]
    fn stage_hooks_fire_at_thirds() {
        let mut tree = uct_tree(FunctionId::F1, 1.0).with_stages(StagePlan::thirds(5000));
        assert_eq!(StagePlan::thirds(5000).marks(), &[1667, 3333, 5000]);
        assert_eq!(StagePlan::thirds(7430).marks(), &[2477, 4953, 7430]);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut seen = Vec::new();
        tree.run_iterations(5000, &mut rng, |s| seen.push(*s));
        assert_eq!(seen.len(), 3);
        assert_eq!(seen, tree.snapshots());
        assert_eq!(seen[0].iteration, 1667);
        assert_eq!(seen[2].node_count, tree.node_count());
        assert!(seen.windows(2).all(|w| w[0].node_count <= w[1].node_count));
    }

    #[test]
    fn recommendation_on_single_child_tree() {
        let mut tree = uct_tree(FunctionId::F1, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        tree.iterate(&mut rng);
        let child = tree.root().children[0];
        let mv = tree.recommend_most_visited(&mut rng);
        let br = tree.recommend_best_reward(&mut rng);
        assert_eq!(mv.node, child);
        assert_eq!(br.node, child);
        assert_eq!(mv.x, tree.node(child).state.center());
        assert_eq!(mv.value, FunctionId::F1.eval(mv.x).unwrap());
    }

    #[test]
    fn best_reward_skips_unvisited_children() {
        let mut tree = uct_tree(FunctionId::F1, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = tree.expand(ROOT, &mut rng).unwrap();
        tree.backpropagate(&[ROOT, a], 0.0);
        let _unvisited = tree.expand(ROOT, &mut rng).unwrap();
        assert_eq!(tree.recommend_best_reward(&mut rng).node, a);
        assert_eq!(tree.recommend_most_visited(&mut rng).node, a);
    }

    #[test]
    fn runs_are_deterministic() {
        let run = || {
            let mut tree = uct_tree(FunctionId::F3, 0.5);
            let mut rng = ChaCha8Rng::seed_from_u64(77);
            tree.run_iterations(2000, &mut rng, |_| {});
            let mut dump = Vec::new();
            tree.dump(&mut dump).unwrap();
            (dump, tree.recommend_most_visited(&mut rng))
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn dump_format() {
        let mut tree = uct_tree(FunctionId::F1, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        tree.iterate(&mut rng);
        let mut out = Vec::new();
        tree.dump(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "depth,a,b,visits,total_reward");
        assert!(lines[1].starts_with("0,0,1,1,"));
        assert_eq!(lines.len(), 3);
    }

    #[test]
    fn constant_policy_still_descends() {
        let mut tree = SearchTree::new(
            FunctionId::F2,
            FopConfig::default(),
            Expr::leaf(Terminal::Const(1.0)),
        );
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        tree.run_iterations(300, &mut rng, |_| {});
        check_invariants(&tree);
    }
}
