//! Exact conditional next-bit probabilities for coded processes.
//!
//! The hidden chain state is filtered forward bit by bit. Before the first
//! `0,0,1` the posterior has infinite support; states above every zero-valued
//! exception all emit `1` and keep the geometric shape of the stationary law,
//! so they are carried as one lumped tail component.

use std::collections::BTreeMap;

use rand::Rng;
use thiserror::Error;

use crate::chain::{stationary_sample, step, ChainState};
use crate::coding::{last_reset_index, CodingFunction};

/// Normalization tolerance for posteriors.
pub const MASS_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("observation at position {0} has probability zero under this coding")]
    Impossible(usize),
    #[error("history has no 0,0,1 reset pattern")]
    NoReset,
    #[error("history known to depth {known} but depth {needed} requested")]
    TooShallow { known: usize, needed: usize },
    #[error("mass tolerance {0} outside [1e-30, 1)")]
    BadTolerance(f64),
}

/// Geometric block of states `start, start + 1, ...` with masses
/// `mass * 2^-(m+1)` on `start + m`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tail {
    pub start: u64,
    pub mass: f64,
}

/// Conditional law of the current hidden state given the bits seen so far.
#[derive(Clone, Debug, PartialEq)]
pub struct Posterior {
    atoms: BTreeMap<u64, f64>,
    tail: Option<Tail>,
}

impl Posterior {
    pub fn point(s: ChainState) -> Self {
        Posterior {
            atoms: BTreeMap::from([(s.0, 1.0)]),
            tail: None,
        }
    }

    pub fn atoms(&self) -> impl Iterator<Item = (ChainState, f64)> + '_ {
        self.atoms.iter().map(|(&s, &m)| (ChainState(s), m))
    }

    pub fn tail(&self) -> Option<Tail> {
        self.tail
    }

    /// Posterior mass of a single state, including its share of the tail.
    pub fn mass_of(&self, s: ChainState) -> f64 {
        let atom = self.atoms.get(&s.0).copied().unwrap_or(0.0);
        let tail = match self.tail {
            Some(t) if s.0 >= t.start => {
                let m = s.0 - t.start;
                t.mass * (-((m + 1) as f64)).exp2()
            }
            _ => 0.0,
        };
        atom + tail
    }

    pub fn total_mass(&self) -> f64 {
        self.atoms.values().sum::<f64>() + self.tail.map_or(0.0, |t| t.mass)
    }

    /// The state carrying all the mass, if there is one.
    pub fn point_state(&self) -> Option<ChainState> {
        if self.tail.is_some() || self.atoms.len() != 1 {
            return None;
        }
        self.atoms.keys().next().map(|&s| ChainState(s))
    }

    /// Move tail states that `f` maps to 0 (or that sit below them) into atoms.
    fn split_tail(&mut self, f: &CodingFunction) {
        let Some(limit) = f.max_zero_state() else { return };
        while let Some(t) = self.tail {
            if t.start > limit {
                break;
            }
            *self.atoms.entry(t.start).or_insert(0.0) += t.mass / 2.0;
            self.tail = Some(Tail {
                start: t.start + 1,
                mass: t.mass / 2.0,
            });
        }
    }

    /// Fold atoms directly below the tail back into it when they continue
    /// its geometric shape, so equal laws share one representation.
    fn absorb_into_tail(&mut self, f: &CodingFunction) {
        let floor = f.max_zero_state().map_or(2, |z| z + 1).max(2);
        while let Some(t) = self.tail {
            let Some(below) = t.start.checked_sub(1).filter(|&b| b >= floor) else { break };
            match self.atoms.get(&below) {
                Some(&m) if (m - t.mass).abs() <= 1e-15 * t.mass => {
                    self.atoms.remove(&below);
                    self.tail = Some(Tail { start: below, mass: t.mass + m });
                }
                _ => break,
            }
        }
    }

    fn normalize(&mut self) -> f64 {
        let total = self.total_mass();
        if total > 0.0 {
            for m in self.atoms.values_mut() {
                *m /= total;
            }
            if let Some(t) = self.tail.as_mut() {
                t.mass /= total;
            }
        }
        total
    }
}

/// Stationary law of the hidden state, shaped for filtering under `f`.
pub fn prior_posterior(f: &CodingFunction) -> Posterior {
    let mut p = Posterior {
        atoms: BTreeMap::from([(0, 0.25), (1, 0.25)]),
        tail: Some(Tail { start: 2, mass: 0.5 }),
    };
    p.split_tail(f);
    p
}

/// One exact Bayes update: advance the chain, then condition on `bit`.
pub fn filter_step(post: &Posterior, f: &CodingFunction, bit: u8) -> Result<Posterior, OracleError> {
    let mut next = Posterior {
        atoms: BTreeMap::new(),
        tail: None,
    };
    let mut add = |s: u64, m: f64| {
        if m > 0.0 {
            *next.atoms.entry(s).or_insert(0.0) += m;
        }
    };
    for (&s, &m) in &post.atoms {
        match s {
            0 => add(1, m),
            1 => add(2, m),
            _ => {
                add(0, m / 2.0);
                add(s + 1, m / 2.0);
            }
        }
    }
    if let Some(t) = post.tail {
        add(0, t.mass / 2.0);
        next.tail = Some(Tail {
            start: t.start + 1,
            mass: t.mass / 2.0,
        });
    }
    next.split_tail(f);

    next.atoms.retain(|&s, _| f.apply(ChainState(s)) == bit);
    if bit == 0 {
        next.tail = None;
    }
    next.absorb_into_tail(f);
    if next.normalize() <= 0.0 {
        return Err(OracleError::Impossible(0));
    }
    Ok(next)
}

/// `P(next bit = 1 | hidden state = s)`.
fn next_one_prob(f: &CodingFunction, s: u64) -> f64 {
    match s {
        0 => f.apply(ChainState(1)) as f64,
        1 => f.apply(ChainState(2)) as f64,
        v => 0.5 * f.apply(ChainState(v + 1)) as f64,
    }
}

pub fn cond_prob_next(post: &Posterior, f: &CodingFunction) -> f64 {
    let atoms: f64 = post.atoms.iter().map(|(&s, &m)| m * next_one_prob(f, s)).sum();
    // Tail states lie above every zero exception, so both successors of the
    // climb emit 1 and only the reset emits 0.
    let tail = post.tail.map_or(0.0, |t| 0.5 * t.mass);
    (atoms + tail).clamp(0.0, 1.0)
}

/// Posterior after observing `bits` from the stationary start.
pub fn posterior_after(f: &CodingFunction, bits: &[u8]) -> Result<Posterior, OracleError> {
    let mut post: Option<Posterior> = None;
    for (i, &b) in bits.iter().enumerate() {
        post = Some(match post {
            // X_0 = f(M_0): condition the stationary law without stepping.
            None => condition_prior(f, b).map_err(|_| OracleError::Impossible(i))?,
            Some(p) => filter_step(&p, f, b).map_err(|_| OracleError::Impossible(i))?,
        });
    }
    Ok(post.unwrap_or_else(|| prior_posterior(f)))
}

fn condition_prior(f: &CodingFunction, bit: u8) -> Result<Posterior, OracleError> {
    let mut p = prior_posterior(f);
    p.atoms.retain(|&s, _| f.apply(ChainState(s)) == bit);
    if bit == 0 {
        p.tail = None;
    }
    if p.normalize() <= 0.0 {
        return Err(OracleError::Impossible(0));
    }
    Ok(p)
}

/// `P(X_{n+1} = 1 | X_0..X_n = bits)` under the stationary law of `f(M)`.
pub fn cond_prob_history(f: &CodingFunction, bits: &[u8]) -> Result<f64, OracleError> {
    let post = posterior_after(f, bits)?;
    if bits.is_empty() {
        // No observation yet: the next bit is X_0 itself.
        return Ok(stationary_one_prob(f));
    }
    Ok(cond_prob_next(&post, f))
}

/// Conditional probability after every prefix `bits[..=t]`.
pub fn cond_prob_trace(f: &CodingFunction, bits: &[u8]) -> Result<Vec<f64>, OracleError> {
    let mut out = Vec::with_capacity(bits.len());
    let mut post: Option<Posterior> = None;
    for (i, &b) in bits.iter().enumerate() {
        let p = match &post {
            None => condition_prior(f, b),
            Some(p) => filter_step(p, f, b),
        }
        .map_err(|_| OracleError::Impossible(i))?;
        out.push(cond_prob_next(&p, f));
        post = Some(p);
    }
    Ok(out)
}

fn stationary_one_prob(f: &CodingFunction) -> f64 {
    let p = prior_posterior(f);
    let atoms: f64 = p
        .atoms
        .iter()
        .map(|(&s, &m)| m * f.apply(ChainState(s)) as f64)
        .sum();
    atoms + p.tail.map_or(0.0, |t| t.mass)
}

/// Closed interval of probabilities.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProbInterval {
    pub lo: f64,
    pub hi: f64,
}

impl ProbInterval {
    pub fn contains(&self, p: f64, slack: f64) -> bool {
        p >= self.lo - slack && p <= self.hi + slack
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    /// Distance from `p` to the interval (0 when inside).
    pub fn violation(&self, p: f64) -> f64 {
        (self.lo - p).max(p - self.hi).max(0.0)
    }
}

/// Independent check of [`cond_prob_history`] by direct path enumeration.
///
/// Initial states above a cap are discarded (mass at most `mass_tol`) and
/// the result is the interval of ratios compatible with the discarded mass.
/// All path masses are summed exactly as dyadic integers.
pub fn brute_force_cond_prob(
    f: &CodingFunction,
    bits: &[u8],
    mass_tol: f64,
) -> Result<ProbInterval, OracleError> {
    if !(1e-30..1.0).contains(&mass_tol) {
        return Err(OracleError::BadTolerance(mass_tol));
    }
    let cap = ((1.0 / mass_tol).log2().ceil() as u32).max(2);
    // Units of 2^-scale; every path mass is 2^-(s0 + random steps).
    let scale = cap + bits.len() as u32 + 3;
    assert!(scale < 127, "history too long for exact enumeration");

    let mut num: u128 = 0;
    let mut den: u128 = 0;
    for s0 in 0..=cap as u64 {
        let e0 = if s0 < 2 { 2 } else { s0 as u32 };
        if bits.is_empty() {
            den += 1u128 << (scale - e0);
            if f.apply(ChainState(s0)) == 1 {
                num += 1u128 << (scale - e0);
            }
            continue;
        }
        if f.apply(ChainState(s0)) != bits[0] {
            continue;
        }
        walk(f, bits, 1, s0, e0, scale, &mut num, &mut den);
    }
    if den == 0 {
        return Err(OracleError::Impossible(bits.len().saturating_sub(1)));
    }
    let discarded = 1u128 << (scale - cap);
    let (num, den, d) = (num as f64, den as f64, discarded as f64);
    Ok(ProbInterval {
        lo: num / (den + d),
        hi: ((num + d) / (den + d)).min(1.0),
    })
}

#[allow(clippy::too_many_arguments)]
fn walk(
    f: &CodingFunction,
    bits: &[u8],
    pos: usize,
    s: u64,
    e: u32,
    scale: u32,
    num: &mut u128,
    den: &mut u128,
) {
    let succ: &[(u64, u32)] = &match s {
        0 => [(1, 0), (u64::MAX, 0)],
        1 => [(2, 0), (u64::MAX, 0)],
        v => [(0, 1), (v + 1, 1)],
    };
    if pos == bits.len() {
        *den += 1u128 << (scale - e);
        for &(t, de) in succ.iter().filter(|(t, _)| *t != u64::MAX) {
            if f.apply(ChainState(t)) == 1 {
                *num += 1u128 << (scale - e - de);
            }
        }
        return;
    }
    for &(t, de) in succ.iter().filter(|(t, _)| *t != u64::MAX) {
        if f.apply(ChainState(t)) == bits[pos] {
            walk(f, bits, pos + 1, t, e + de, scale, num, den);
        }
    }
}

/// A one-sided past `(..., x_-1, x_0)`, known to a finite depth.
///
/// `bits` is stored oldest first, so `x_0` is the last element.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct History {
    bits: Vec<u8>,
}

impl History {
    pub fn new(bits: Vec<u8>) -> Self {
        History { bits }
    }

    pub fn known_depth(&self) -> usize {
        self.bits.len()
    }

    /// `x_{-i}`.
    pub fn lag(&self, i: usize) -> Option<u8> {
        self.bits.len().checked_sub(i + 1).map(|j| self.bits[j])
    }
}

/// Truncated weighted Hamming distance on pasts, with the truncation bound.
pub fn d_star(x: &History, y: &History, depth: usize) -> Result<(f64, f64), OracleError> {
    let known = x.known_depth().min(y.known_depth());
    if known < depth {
        return Err(OracleError::TooShallow { known, needed: depth });
    }
    let d = (0..depth)
        .filter(|&i| x.lag(i) != y.lag(i))
        .map(|i| (-((i + 1) as f64)).exp2())
        .sum();
    Ok((d, (-(depth as f64)).exp2()))
}

/// Largest change in the conditional probability when random positive-
/// probability pasts are prepended before the last `0,0,1` in `bits`.
pub fn continuity_probe<R: Rng + ?Sized>(
    f: &CodingFunction,
    bits: &[u8],
    n_prefixes: usize,
    rng: &mut R,
) -> Result<f64, OracleError> {
    let reset = last_reset_index(bits).ok_or(OracleError::NoReset)?;
    let suffix = &bits[reset - 2..];
    let baseline = cond_prob_history(f, suffix)?;
    let mut worst = (cond_prob_history(f, bits)? - baseline).abs();
    for _ in 0..n_prefixes {
        let prefix = random_prefix(f, rng);
        let mut joined = prefix;
        joined.extend_from_slice(suffix);
        let p = cond_prob_history(f, &joined)?;
        worst = worst.max((p - baseline).abs());
    }
    Ok(worst)
}

/// Encoded stationary trajectory whose last state can reset to 0.
fn random_prefix<R: Rng + ?Sized>(f: &CodingFunction, rng: &mut R) -> Vec<u8> {
    let mut s = stationary_sample(rng);
    let mut out = vec![f.apply(s)];
    let min_len = rng.gen_range(1..=24);
    while out.len() < min_len || s.0 < 2 {
        s = step(s, rng);
        out.push(f.apply(s));
    }
    out
}
