//! The countable-state renewal chain that drives every coded process.
//!
//! States are the non-negative integers. `0 -> 1 -> 2` deterministically;
//! from any `s >= 2` the chain resets to `0` or climbs to `s + 1` with
//! probability one half each. The stationary law is
//! `pi(0) = pi(1) = 1/4` and `pi(s) = 2^-s` for `s >= 2`.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default cap on the number of paths produced by [`enumerate_paths_to_hit`].
pub const DEFAULT_ENUMERATION_BUDGET: usize = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChainError {
    #[error("path length must be at least 1")]
    EmptyPath,
    #[error("illegal transition {from} -> {to} at index {index}")]
    IllegalTransition { index: usize, from: u64, to: u64 },
    #[error("hitting level k must be at least 1")]
    InvalidLevel,
    #[error("mass tolerance {0} outside (0, 1)")]
    InvalidTolerance(f64),
    #[error(
        "enumeration budget of {budget} paths exhausted for k={k} with residual mass {residual:.3e}"
    )]
    BudgetExceeded { k: u64, budget: usize, residual: f64 },
}

/// A state of the chain.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ChainState(pub u64);

impl ChainState {
    pub const ZERO: ChainState = ChainState(0);

    pub fn value(self) -> u64 {
        self.0
    }

    /// Whether `next` is a legal successor of `self`.
    pub fn can_step_to(self, next: ChainState) -> bool {
        match self.0 {
            0 => next.0 == 1,
            1 => next.0 == 2,
            s => next.0 == 0 || Some(next.0) == s.checked_add(1),
        }
    }
}

impl From<u64> for ChainState {
    fn from(v: u64) -> Self {
        ChainState(v)
    }
}

impl fmt::Display for ChainState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A dyadic rational `mantissa * 2^-exponent`.
///
/// Every path probability of the chain is a power of one half, so these stay
/// exact. Sums that would overflow fall back to `f64` at the call site.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dyadic {
    pub mantissa: u64,
    pub exponent: u32,
}

impl Dyadic {
    pub const ONE: Dyadic = Dyadic { mantissa: 1, exponent: 0 };

    /// `2^-exponent`.
    pub fn half_pow(exponent: u32) -> Self {
        Dyadic { mantissa: 1, exponent }
    }

    pub fn checked_mul(self, other: Dyadic) -> Option<Dyadic> {
        Some(Dyadic {
            mantissa: self.mantissa.checked_mul(other.mantissa)?,
            exponent: self.exponent.checked_add(other.exponent)?,
        })
    }

    pub fn to_f64(self) -> f64 {
        self.mantissa as f64 * (-(self.exponent as f64)).exp2()
    }
}

/// A finite trajectory of the chain; consecutive states are legal transitions.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<u64>", into = "Vec<u64>")]
pub struct ChainPath {
    states: Vec<ChainState>,
}

impl ChainPath {
    pub fn new(states: Vec<ChainState>) -> Result<Self, ChainError> {
        if states.is_empty() {
            return Err(ChainError::EmptyPath);
        }
        for (i, w) in states.windows(2).enumerate() {
            if !w[0].can_step_to(w[1]) {
                return Err(ChainError::IllegalTransition {
                    index: i + 1,
                    from: w[0].0,
                    to: w[1].0,
                });
            }
        }
        Ok(ChainPath { states })
    }

    pub fn from_values(values: &[u64]) -> Result<Self, ChainError> {
        Self::new(values.iter().copied().map(ChainState).collect())
    }

    pub fn states(&self) -> &[ChainState] {
        &self.states
    }

    pub fn values(&self) -> Vec<u64> {
        self.states.iter().map(|s| s.0).collect()
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn first(&self) -> ChainState {
        self.states[0]
    }

    pub fn last(&self) -> ChainState {
        self.states[self.states.len() - 1]
    }

    pub fn max_state(&self) -> ChainState {
        self.states.iter().copied().max().unwrap_or(ChainState::ZERO)
    }

    /// Product of transition probabilities along the path.
    pub fn transition_probability(&self) -> Dyadic {
        let random_steps = self.states[..self.states.len() - 1]
            .iter()
            .filter(|s| s.0 >= 2)
            .count();
        Dyadic::half_pow(random_steps as u32)
    }
}

impl TryFrom<Vec<u64>> for ChainPath {
    type Error = ChainError;

    fn try_from(values: Vec<u64>) -> Result<Self, Self::Error> {
        ChainPath::from_values(&values)
    }
}

impl From<ChainPath> for Vec<u64> {
    fn from(path: ChainPath) -> Self {
        path.values()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WeightedPath {
    pub path: ChainPath,
    pub probability: Dyadic,
}

/// Stationary probability of state `s`.
pub fn stationary_prob(s: ChainState) -> f64 {
    match s.0 {
        0 | 1 => 0.25,
        v => (-(v as f64)).exp2(),
    }
}

/// Draw from the stationary law. The geometric tail is sampled by inverse CDF,
/// so arbitrarily large states are reachable.
pub fn stationary_sample<R: Rng + ?Sized>(rng: &mut R) -> ChainState {
    let u: f64 = rng.gen();
    if u < 0.25 {
        ChainState(0)
    } else if u < 0.5 {
        ChainState(1)
    } else {
        // Given s >= 2, s - 2 is geometric: P(s - 2 = m) = 2^-(m+1).
        let v: f64 = 1.0 - rng.gen::<f64>(); // (0, 1]
        let m = (-v.log2()).floor();
        ChainState(2 + m as u64)
    }
}

pub fn step<R: Rng + ?Sized>(s: ChainState, rng: &mut R) -> ChainState {
    match s.0 {
        0 => ChainState(1),
        1 => ChainState(2),
        v => {
            if rng.gen::<bool>() {
                ChainState(0)
            } else {
                ChainState(v.checked_add(1).expect("chain state overflowed u64"))
            }
        }
    }
}

pub fn simulate_path<R: Rng + ?Sized>(
    initial: ChainState,
    length: usize,
    rng: &mut R,
) -> Result<ChainPath, ChainError> {
    if length == 0 {
        return Err(ChainError::EmptyPath);
    }
    let mut states = Vec::with_capacity(length);
    let mut s = initial;
    states.push(s);
    for _ in 1..length {
        s = step(s, rng);
        states.push(s);
    }
    Ok(ChainPath { states })
}

/// First index at which the path occupies state `2k`.
pub fn hitting_time(path: &ChainPath, k: u64) -> Option<usize> {
    let target = ChainState(2 * k);
    path.states.iter().position(|&s| s == target)
}

/// Enumerate paths from state 0 to the first visit of `2k`, most probable
/// first, until at most `mass_tol` probability is left unaccounted for.
///
/// Such a path is a sequence of excursions `0, 1, ..., h, 0` with
/// `2 <= h <= 2k - 1` (probability `2^-(h-1)` each) followed by the final
/// climb `0, 1, ..., 2k` (probability `2^-(2k-2)`).
pub fn enumerate_paths_to_hit(
    k: u64,
    mass_tol: f64,
) -> Result<(Vec<WeightedPath>, f64), ChainError> {
    enumerate_paths_to_hit_with_budget(k, mass_tol, DEFAULT_ENUMERATION_BUDGET)
}

pub fn enumerate_paths_to_hit_with_budget(
    k: u64,
    mass_tol: f64,
    budget: usize,
) -> Result<(Vec<WeightedPath>, f64), ChainError> {
    let mut out = Vec::new();
    let residual = visit_paths_to_hit(k, mass_tol, budget, |p| out.push(p))?;
    Ok((out, residual))
}

/// Streaming form of [`enumerate_paths_to_hit_with_budget`]: calls `visit`
/// on each path in decreasing-probability order and returns the residual mass.
pub fn visit_paths_to_hit<F: FnMut(WeightedPath)>(
    k: u64,
    mass_tol: f64,
    budget: usize,
    visit: F,
) -> Result<f64, ChainError> {
    match visit_paths_to_hit_partial(k, mass_tol, budget, visit)? {
        (residual, true) => Ok(residual),
        (residual, false) => Err(ChainError::BudgetExceeded { k, budget, residual }),
    }
}

/// Like [`visit_paths_to_hit`] but stops quietly at the budget. Returns the
/// residual mass and whether the mass target was reached.
pub fn visit_paths_to_hit_partial<F: FnMut(WeightedPath)>(
    k: u64,
    mass_tol: f64,
    budget: usize,
    mut visit: F,
) -> Result<(f64, bool), ChainError> {
    if k == 0 {
        return Err(ChainError::InvalidLevel);
    }
    if !(mass_tol > 0.0 && mass_tol < 1.0) {
        return Err(ChainError::InvalidTolerance(mass_tol));
    }
    let top = 2 * k;
    // Excursion weights (h - 1) range over 1..=max_part.
    let max_part = top - 2;
    let final_climb = (top - 2) as u32;
    let mut accumulated = 0.0f64;
    let mut produced = 0usize;
    let mut extra = 0u64;
    loop {
        let prob = Dyadic::half_pow(final_climb + extra as u32);
        let p = prob.to_f64();
        let mut parts = Vec::new();
        let mut done = false;
        let mut over_budget = false;
        for_each_composition(extra, max_part, &mut parts, &mut |parts: &[u64]| {
            if produced >= budget {
                over_budget = true;
                return false;
            }
            visit(WeightedPath {
                path: excursions_to_path(parts, top),
                probability: prob,
            });
            produced += 1;
            accumulated += p;
            if 1.0 - accumulated <= mass_tol {
                done = true;
            }
            !done
        });
        // k = 1 has only the deterministic climb.
        if done || max_part == 0 {
            return Ok(((1.0 - accumulated).max(0.0), true));
        }
        if over_budget {
            return Ok((1.0 - accumulated, false));
        }
        extra += 1;
    }
}

/// Calls `f` on every composition of `total` into parts in `1..=max_part`,
/// in lexicographic order.
/// Stops early once `f` returns `false`; returns whether it ran to the end.
fn for_each_composition<F: FnMut(&[u64]) -> bool>(
    total: u64,
    max_part: u64,
    parts: &mut Vec<u64>,
    f: &mut F,
) -> bool {
    if total == 0 {
        return f(parts);
    }
    for p in 1..=max_part.min(total) {
        parts.push(p);
        let go_on = for_each_composition(total - p, max_part, parts, f);
        parts.pop();
        if !go_on {
            return false;
        }
    }
    true
}

fn excursions_to_path(parts: &[u64], top: u64) -> ChainPath {
    let mut states = Vec::new();
    for &p in parts {
        states.extend((0..=p + 1).map(ChainState));
    }
    states.extend((0..=top).map(ChainState));
    ChainPath { states }
}
