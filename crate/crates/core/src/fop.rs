//! The function-optimisation environment.
//!
//! A state is a sub-interval of `[0, 1]`; its actions split it into
//! `branching` equal parts. States narrower than the threshold are terminal,
//! and a terminal state pays a Bernoulli reward with success probability
//! `f(center)`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use thiserror::Error;

/// Values that leave `[0, 1]` by less than this are rounding noise.
const RANGE_SLACK: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FopError {
    #[error("x = {0} lies outside the domain [0, 1]")]
    Domain(f64),
    #[error("{function}({x}) = {value} lies outside [0, 1]")]
    Range {
        function: FunctionId,
        x: f64,
        value: f64,
    },
    #[error("unknown function '{0}', expected one of f1..f5")]
    UnknownFunction(String),
    #[error("state [{0}, {1}] is terminal and has no children")]
    TerminalState(f64, f64),
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FunctionId {
    F1,
    F2,
    F3,
    F4,
    F5,
}

impl FunctionId {
    pub const ALL: [FunctionId; 5] = [
        FunctionId::F1,
        FunctionId::F2,
        FunctionId::F3,
        FunctionId::F4,
        FunctionId::F5,
    ];

    pub fn label(self) -> &'static str {
        match self {
            FunctionId::F1 => "f1",
            FunctionId::F2 => "f2",
            FunctionId::F3 => "f3",
            FunctionId::F4 => "f4",
            FunctionId::F5 => "f5",
        }
    }

    /// Unchecked formula; callers guarantee `x ∈ [0, 1]`.
    fn raw(self, x: f64) -> f64 {
        match self {
            FunctionId::F1 => (PI * x).sin(),
            FunctionId::F2 => 0.5 * (13.0 * x).sin() * (27.0 * x).sin() + 0.5,
            FunctionId::F3 => {
                let mut arg = 1.0 / x.powi(5);
                // x = 0 (or underflow of x^5) is never a state center
                if !arg.is_finite() {
                    arg = f64::MAX;
                }
                let offset = if x < 0.5 { 0.5 } else { 7.0 / 20.0 };
                offset + 0.5 * arg.sin().abs()
            }
            FunctionId::F4 => 0.5 * x + (-0.7 * x + 1.0) * (5.0 * PI * x).sin().powi(4),
            FunctionId::F5 => 0.5 * x + (-0.7 * x + 1.0) * (5.0 * PI * x).sin().powi(80),
        }
    }

    /// Evaluates the landscape at `x`.
    pub fn eval(self, x: f64) -> Result<f64, FopError> {
        if !(0.0..=1.0).contains(&x) {
            return Err(FopError::Domain(x));
        }
        let value = self.raw(x);
        if (-RANGE_SLACK..=1.0 + RANGE_SLACK).contains(&value) {
            Ok(value.clamp(0.0, 1.0))
        } else {
            Err(FopError::Range {
                function: self,
                x,
                value,
            })
        }
    }

    /// Grid search over `[0, 1]` at `resolution`, refined around the best
    /// cell down to 1e-9. Returns `(x*, f*)`.
    pub fn global_optimum(self, resolution: f64) -> (f64, f64) {
        assert!(
            resolution > 0.0 && resolution <= 1e-6,
            "oracle resolution must be in (0, 1e-6]"
        );
        let f = |x: f64| self.eval(x).expect("grid point inside the domain");
        let steps = (1.0 / resolution).ceil() as u64;
        let mut best = (0.0, f(0.0));
        for i in 1..=steps {
            let x = (i as f64 / steps as f64).min(1.0);
            let v = f(x);
            if v > best.1 {
                best = (x, v);
            }
        }
        let mut step = 1.0 / steps as f64;
        while step > 1e-9 {
            let lo = (best.0 - step).max(0.0);
            let hi = (best.0 + step).min(1.0);
            let fine = step / 10.0;
            let mut x = lo;
            while x <= hi {
                let v = f(x);
                if v > best.1 {
                    best = (x, v);
                }
                x += fine;
            }
            step = fine;
        }
        best
    }
}

impl fmt::Display for FunctionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for FunctionId {
    type Err = FopError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "f1" => Ok(FunctionId::F1),
            "f2" => Ok(FunctionId::F2),
            "f3" => Ok(FunctionId::F3),
            "f4" => Ok(FunctionId::F4),
            "f5" => Ok(FunctionId::F5),
            _ => Err(FopError::UnknownFunction(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FopConfig {
    pub branching: usize,
    pub threshold: f64,
}

impl Default for FopConfig {
    fn default() -> Self {
        Self {
            branching: 2,
            threshold: 1e-5,
        }
    }
}

impl FopConfig {
    pub fn new(branching: usize, threshold: f64) -> Result<Self, FopError> {
        if branching < 2 {
            return Err(FopError::Config(format!("branching {branching} < 2")));
        }
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(FopError::Config(format!(
                "threshold {threshold} outside (0, 1)"
            )));
        }
        Ok(Self {
            branching,
            threshold,
        })
    }
}

/// A closed interval `[a, b] ⊆ [0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FopState {
    pub a: f64,
    pub b: f64,
}

impl FopState {
    pub fn root() -> Self {
        Self { a: 0.0, b: 1.0 }
    }

    pub fn width(&self) -> f64 {
        self.b - self.a
    }

    pub fn center(&self) -> f64 {
        (self.a + self.b) / 2.0
    }

    pub fn is_terminal(&self, cfg: &FopConfig) -> bool {
        self.width() < cfg.threshold
    }

    /// The `k`-th of `cfg.branching` equal sub-intervals, left to right.
    /// The last child reuses `self.b` so the partition covers the parent exactly.
    pub fn child(&self, k: usize, cfg: &FopConfig) -> FopState {
        debug_assert!(k < cfg.branching);
        let w = self.width() / cfg.branching as f64;
        let a = self.a + k as f64 * w;
        let b = if k + 1 == cfg.branching {
            self.b
        } else {
            self.a + (k + 1) as f64 * w
        };
        FopState { a, b }
    }

    pub fn children(&self, cfg: &FopConfig) -> Result<Vec<FopState>, FopError> {
        if self.is_terminal(cfg) {
            return Err(FopError::TerminalState(self.a, self.b));
        }
        Ok((0..cfg.branching).map(|k| self.child(k, cfg)).collect())
    }

    /// Number of actions available here: zero for terminal states.
    pub fn action_count(&self, cfg: &FopConfig) -> usize {
        if self.is_terminal(cfg) {
            0
        } else {
            cfg.branching
        }
    }
}

/// Bernoulli draw with success probability `f(center(state))`.
pub fn sample_reward<R: Rng + ?Sized>(fid: FunctionId, state: &FopState, rng: &mut R) -> f64 {
    let p = fid
        .eval(state.center())
        .expect("state centers lie inside [0, 1]");
    if rng.random::<f64>() < p {
        1.0
    } else {
        0.0
    }
}
