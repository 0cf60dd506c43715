//! Level-by-level construction of a process that defeats a given estimator
//! at a given schedule of stopping times.
//!
//! Level `j` starts from the coding built so far. It finds a hitting level
//! `N` (beyond the previous one) at which the hitting time `psi_N` of state
//! `2N` coincides with a stopping time with probability above 1/8. Those
//! outcomes are split by whether the prediction there is `>= 1/4` (B+) or
//! `< 1/4` (B-). The odd state `2N + 1` is then coded so the true
//! next-bit probability at `psi_N`, which is `0.5 * f(2N + 1)`, sits at
//! least 1/4 away from the prediction on the heavier side.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::{stationary_sample, step, visit_paths_to_hit_partial, ChainError, ChainState};
use crate::coding::CodingFunction;
use crate::predictors::{Estimator, Session, StoppingRule};
use crate::report::prob_str;
use crate::rng::{self, derive_seed, Rng};
use crate::stats::{wilson, Estimate};

/// Threshold on the coincidence probability that selects `N`.
pub const A_THRESHOLD: f64 = 1.0 / 8.0;
/// Prediction threshold separating B+ (`h >= 1/4`) from B- (`h < 1/4`).
pub const H_THRESHOLD: f64 = 0.25;
/// Guaranteed mass of the heavier side.
pub const I_GUARANTEE: f64 = 1.0 / 16.0;

const TAG_FIND: u64 = 0xA;
const TAG_SPLIT: u64 = 0xB;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ForgeError {
    #[error(
        "no level N in {from}..={cap} had P(A) confidently above 1/8; either the stopping rule \
         does not eventually stop at every step on Markov sources or the N cap is too small \
         (best lower bound {best_lo:.4} at N={best_n})"
    )]
    NoLevelFound {
        from: u64,
        cap: u64,
        best_n: u64,
        best_lo: f64,
    },
    #[error("trial exceeded {0} chain steps before hitting the target state")]
    ChainCapExceeded(u64),
    #[error("inconsistent level estimates: {0}")]
    Inconsistent(String),
    #[error("at least 100 samples are required, got {0}")]
    TooFewSamples(u64),
    #[error("confidence {0} outside (0.5, 1)")]
    BadConfidence(f64),
    #[error("level count must be at least 1")]
    NoLevels,
    #[error(transparent)]
    Chain(#[from] ChainError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForgeConfig {
    pub seed: u64,
    /// Monte-Carlo trials per estimate.
    pub samples: u64,
    pub confidence: f64,
    /// Largest `N` tried when searching for a level.
    pub n_cap: u64,
    /// Use exact path enumeration instead of sampling when `2N` is at most this.
    pub exact_threshold: u64,
    /// Path budget for exact mode.
    pub exact_budget: usize,
    /// Per-trial safety cap on simulated chain steps.
    pub max_chain_steps: u64,
}

impl Default for ForgeConfig {
    fn default() -> Self {
        ForgeConfig {
            seed: 0,
            samples: 100_000,
            confidence: 0.99,
            n_cap: 12,
            exact_threshold: 4,
            exact_budget: crate::chain::DEFAULT_ENUMERATION_BUDGET,
            max_chain_steps: 1 << 26,
        }
    }
}

impl ForgeConfig {
    pub fn validate(&self) -> Result<(), ForgeError> {
        if self.samples < 100 {
            return Err(ForgeError::TooFewSamples(self.samples));
        }
        if !(self.confidence > 0.5 && self.confidence < 1.0) {
            return Err(ForgeError::BadConfidence(self.confidence));
        }
        Ok(())
    }

    fn exact_for(&self, k: u64) -> bool {
        2 * k <= self.exact_threshold
    }
}

/// Outcome of one draw of the stationary chain against the session.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrialOutcome {
    pub started_at_zero: bool,
    pub hit_time: Option<usize>,
    /// The hitting time is one of the stopping times.
    pub in_a: bool,
    pub h_at_stop: Option<f64>,
    pub n_at_stop: Option<usize>,
}

impl TrialOutcome {
    fn miss() -> Self {
        TrialOutcome {
            started_at_zero: false,
            hit_time: None,
            in_a: false,
            h_at_stop: None,
            n_at_stop: None,
        }
    }

    pub fn side(&self) -> Option<Side> {
        self.h_at_stop.map(Side::of)
    }
}

/// Which half of the coincidence event a prediction falls in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    #[serde(rename = "B+")]
    BPlus,
    #[serde(rename = "B-")]
    BMinus,
}

impl Side {
    pub fn of(h: f64) -> Side {
        if h >= H_THRESHOLD {
            Side::BPlus
        } else {
            Side::BMinus
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Side::BPlus => "B+",
            Side::BMinus => "B-",
        }
    }
}

/// Draw `M_0` from the stationary law; when it is 0, run the coded chain
/// through the session up to the first visit of `2k`.
pub fn sample_trial(
    f: &CodingFunction,
    k: u64,
    e: &dyn Estimator,
    r: &dyn StoppingRule,
    rng: &mut Rng,
) -> Result<TrialOutcome, ForgeError> {
    run_trial(f, k, e, r, rng, ForgeConfig::default().max_chain_steps, None)
}

/// Trial that also records the emitted block when `block` is given.
pub fn run_trial(
    f: &CodingFunction,
    k: u64,
    e: &dyn Estimator,
    r: &dyn StoppingRule,
    rng: &mut Rng,
    max_steps: u64,
    mut block: Option<&mut Vec<u8>>,
) -> Result<TrialOutcome, ForgeError> {
    if let Some(b) = block.as_deref_mut() {
        b.clear();
    }
    if stationary_sample(rng) != ChainState::ZERO {
        return Ok(TrialOutcome::miss());
    }
    let target = ChainState(2 * k);
    let mut session = Session::new(e, r);
    let mut s = ChainState::ZERO;
    let mut t: u64 = 0;
    loop {
        let bit = f.apply(s);
        if let Some(b) = block.as_deref_mut() {
            b.push(bit);
        }
        let stop = session.push(bit);
        if s == target {
            return Ok(TrialOutcome {
                started_at_zero: true,
                hit_time: Some(t as usize),
                in_a: stop.is_some(),
                h_at_stop: stop.map(|s| s.h),
                n_at_stop: stop.map(|s| s.n),
            });
        }
        t += 1;
        if t > max_steps {
            return Err(ForgeError::ChainCapExceeded(max_steps));
        }
        s = step(s, rng);
    }
}

/// Monte-Carlo estimate of `P(predicate)` over independent samples, with a
/// Wilson interval. Sample `i` uses stream `i` of `seed`.
pub fn estimate_event_prob<T, S, P>(
    sampler: S,
    predicate: P,
    samples: u64,
    confidence: f64,
    seed: u64,
) -> Result<Estimate, ForgeError>
where
    S: Fn(&mut Rng) -> Result<T, ForgeError> + Sync,
    P: Fn(&T) -> bool + Sync,
{
    if samples < 100 {
        return Err(ForgeError::TooFewSamples(samples));
    }
    let hit = |i: u64| -> Result<u64, ForgeError> {
        let mut r = rng::stream(seed, i);
        Ok(predicate(&sampler(&mut r)?) as u64)
    };
    let hits = sum_over(samples, hit)?;
    Ok(wilson(hits, samples, confidence))
}

#[cfg(feature = "parallel")]
fn sum_over<F>(n: u64, f: F) -> Result<u64, ForgeError>
where
    F: Fn(u64) -> Result<u64, ForgeError> + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).try_reduce(|| 0, |a, b| Ok(a + b))
}

#[cfg(not(feature = "parallel"))]
fn sum_over<F>(n: u64, f: F) -> Result<u64, ForgeError>
where
    F: Fn(u64) -> Result<u64, ForgeError>,
{
    (0..n).map(f).sum()
}

/// Counts of the coincidence event and its two halves.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tally {
    pub trials: u64,
    pub a: u64,
    pub b_plus: u64,
    pub b_minus: u64,
    /// Smallest prediction seen on B+.
    pub min_h_plus: f64,
    /// Largest prediction seen on B-.
    pub max_h_minus: f64,
}

impl Tally {
    fn empty() -> Self {
        Tally {
            trials: 0,
            a: 0,
            b_plus: 0,
            b_minus: 0,
            min_h_plus: f64::INFINITY,
            max_h_minus: f64::NEG_INFINITY,
        }
    }

    fn record(mut self, o: &TrialOutcome) -> Self {
        self.trials += 1;
        if let Some(h) = o.h_at_stop.filter(|_| o.in_a) {
            self.a += 1;
            match Side::of(h) {
                Side::BPlus => {
                    self.b_plus += 1;
                    self.min_h_plus = self.min_h_plus.min(h);
                }
                Side::BMinus => {
                    self.b_minus += 1;
                    self.max_h_minus = self.max_h_minus.max(h);
                }
            }
        }
        self
    }

    fn merge(self, o: Tally) -> Tally {
        Tally {
            trials: self.trials + o.trials,
            a: self.a + o.a,
            b_plus: self.b_plus + o.b_plus,
            b_minus: self.b_minus + o.b_minus,
            min_h_plus: self.min_h_plus.min(o.min_h_plus),
            max_h_minus: self.max_h_minus.max(o.max_h_minus),
        }
    }
}

/// Monte-Carlo tally of trials at level `k`.
pub fn tally_trials(
    f: &CodingFunction,
    k: u64,
    e: &dyn Estimator,
    r: &dyn StoppingRule,
    samples: u64,
    seed: u64,
    max_steps: u64,
) -> Result<Tally, ForgeError> {
    let one = |i: u64| -> Result<Tally, ForgeError> {
        let mut g = rng::stream(seed, i);
        let o = run_trial(f, k, e, r, &mut g, max_steps, None)?;
        Ok(Tally::empty().record(&o))
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..samples)
            .into_par_iter()
            .map(one)
            .try_reduce(Tally::empty, |a, b| Ok(a.merge(b)))
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..samples).try_fold(Tally::empty(), |acc, i| Ok(acc.merge(one(i)?)))
    }
}

/// Probabilities of A, B+ and B- at one level, with intervals.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LevelProbs {
    pub p_a: Estimate,
    pub p_b_plus: Estimate,
    pub p_b_minus: Estimate,
    /// `min |h - truth|` on each side under the bit that would select it.
    pub min_gap_plus: Option<f64>,
    pub min_gap_minus: Option<f64>,
    /// Trials drawn, or paths enumerated in exact mode.
    pub samples_used: u64,
    pub exact: bool,
}

impl LevelProbs {
    fn from_tally(t: &Tally, confidence: f64) -> Self {
        LevelProbs {
            p_a: wilson(t.a, t.trials, confidence),
            p_b_plus: wilson(t.b_plus, t.trials, confidence),
            p_b_minus: wilson(t.b_minus, t.trials, confidence),
            min_gap_plus: (t.b_plus > 0).then(|| (t.min_h_plus - truth_at_stop(0)).abs()),
            min_gap_minus: (t.b_minus > 0).then(|| (truth_at_stop(1) - t.max_h_minus).abs()),
            samples_used: t.trials,
            exact: false,
        }
    }
}

/// Exact probabilities by enumerating hitting paths from state 0.
///
/// `P(M_0 = 0) = 1/4` scales every path. Mass left unenumerated widens the
/// upper ends of the intervals.
pub fn exact_level_probs(
    f: &CodingFunction,
    k: u64,
    e: &dyn Estimator,
    r: &dyn StoppingRule,
    budget: usize,
) -> Result<LevelProbs, ForgeError> {
    let (mut a, mut bp, mut bm) = (0.0f64, 0.0f64, 0.0f64);
    let mut min_h_plus = f64::INFINITY;
    let mut max_h_minus = f64::NEG_INFINITY;
    let mut paths = 0u64;
    let (residual, _) = visit_paths_to_hit_partial(k, 1e-12, budget, |wp| {
        paths += 1;
        let mut session = Session::new(e, r);
        let mut last = None;
        for &s in wp.path.states() {
            last = session.push(f.apply(s));
        }
        if let Some(stop) = last {
            let p = wp.probability.to_f64();
            a += p;
            match Side::of(stop.h) {
                Side::BPlus => {
                    bp += p;
                    min_h_plus = min_h_plus.min(stop.h);
                }
                Side::BMinus => {
                    bm += p;
                    max_h_minus = max_h_minus.max(stop.h);
                }
            }
        }
    })?;
    let interval = |m: f64| Estimate {
        est: 0.25 * (m + residual / 2.0),
        lo: 0.25 * m,
        hi: 0.25 * (m + residual),
    };
    Ok(LevelProbs {
        p_a: interval(a),
        p_b_plus: interval(bp),
        p_b_minus: interval(bm),
        min_gap_plus: (bp > 0.0).then(|| (min_h_plus - truth_at_stop(0)).abs()),
        min_gap_minus: (bm > 0.0).then(|| (truth_at_stop(1) - max_h_minus).abs()),
        samples_used: paths,
        exact: true,
    })
}

fn level_probs(
    f: &CodingFunction,
    k: u64,
    e: &dyn Estimator,
    r: &dyn StoppingRule,
    cfg: &ForgeConfig,
    seed: u64,
) -> Result<LevelProbs, ForgeError> {
    if cfg.exact_for(k) {
        exact_level_probs(f, k, e, r, cfg.exact_budget)
    } else {
        let t = tally_trials(f, k, e, r, cfg.samples, seed, cfg.max_chain_steps)?;
        Ok(LevelProbs::from_tally(&t, cfg.confidence))
    }
}

/// First `N > n_min` whose coincidence probability is confidently above 1/8,
/// evaluated on the process coded by `f_prev`.
pub fn find_level_index(
    f_prev: &CodingFunction,
    e: &dyn Estimator,
    r: &dyn StoppingRule,
    n_min: u64,
    cfg: &ForgeConfig,
    level: u64,
) -> Result<(u64, Estimate), ForgeError> {
    cfg.validate()?;
    let mut best = (n_min + 1, f64::NEG_INFINITY);
    for n in n_min + 1..=cfg.n_cap {
        let seed = derive_seed(cfg.seed, &[level, n, TAG_FIND]);
        let probs = level_probs(f_prev, n, e, r, cfg, seed)?;
        if probs.p_a.lo > A_THRESHOLD {
            return Ok((n, probs.p_a));
        }
        if probs.p_a.lo > best.1 {
            best = (n, probs.p_a.lo);
        }
    }
    Err(ForgeError::NoLevelFound {
        from: n_min + 1,
        cap: cfg.n_cap,
        best_n: best.0,
        best_lo: best.1.max(0.0),
    })
}

/// Estimate `P(B+)` and `P(B-)` at level `N` on fresh randomness.
pub fn split_b(
    f: &CodingFunction,
    n: u64,
    e: &dyn Estimator,
    r: &dyn StoppingRule,
    cfg: &ForgeConfig,
    seed: u64,
) -> Result<LevelProbs, ForgeError> {
    level_probs(f, n, e, r, cfg, seed)
}

/// Bit 1 (making B- the failure side) when `P(B-) >= P(B+)`, else bit 0.
pub fn choose_malicious_bit(p_b_plus: f64, p_b_minus: f64) -> (u8, Side) {
    if p_b_minus >= p_b_plus {
        (1, Side::BMinus)
    } else {
        (0, Side::BPlus)
    }
}

/// True `P(X_{psi_N + 1} = 1 | X_0..X_{psi_N})` on `M_0 = 0`, given the bit
/// coded at `2N + 1`.
pub fn truth_at_stop(bit: u8) -> f64 {
    0.5 * bit as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelRecord {
    pub j: u64,
    #[serde(rename = "N")]
    pub n: u64,
    #[serde(rename = "p_A")]
    pub p_a: Estimate,
    #[serde(rename = "p_B_plus")]
    pub p_b_plus: Estimate,
    #[serde(rename = "p_B_minus")]
    pub p_b_minus: Estimate,
    pub malicious_bit: u8,
    #[serde(rename = "I_side")]
    pub i_side: Side,
    #[serde(rename = "p_I")]
    pub p_i: Estimate,
    #[serde(with = "prob_str")]
    pub truth_at_stop: f64,
    /// Smallest `|h - truth|` among the forge's own samples on the chosen side.
    #[serde(with = "prob_str::option")]
    pub min_gap: Option<f64>,
    pub samples_used: u64,
    pub exact: bool,
}

/// Mutable state of the construction between levels.
#[derive(Clone, Debug)]
pub struct ForgeState {
    pub coding: CodingFunction,
    /// `N` of the previous level; starts at 1.
    pub n_prev: u64,
    pub levels: Vec<LevelRecord>,
}

impl Default for ForgeState {
    fn default() -> Self {
        ForgeState {
            coding: CodingFunction::default(),
            n_prev: 1,
            levels: Vec::new(),
        }
    }
}

/// One inductive step: choose `N`, split the coincidence event, code `2N + 1`.
pub fn build_level(
    state: &mut ForgeState,
    e: &dyn Estimator,
    r: &dyn StoppingRule,
    cfg: &ForgeConfig,
) -> Result<LevelRecord, ForgeError> {
    let j = state.levels.len() as u64 + 1;
    let (n, p_a) = find_level_index(&state.coding, e, r, state.n_prev, cfg, j)?;
    let split = split_b(
        &state.coding,
        n,
        e,
        r,
        cfg,
        derive_seed(cfg.seed, &[j, n, TAG_SPLIT]),
    )?;
    let (bit, side) = choose_malicious_bit(split.p_b_plus.est, split.p_b_minus.est);
    let (p_i, min_gap) = match side {
        Side::BPlus => (split.p_b_plus, split.min_gap_plus),
        Side::BMinus => (split.p_b_minus, split.min_gap_minus),
    };
    if split.p_b_plus.est < I_GUARANTEE && split.p_b_minus.est < I_GUARANTEE && p_a.lo > A_THRESHOLD
    {
        return Err(ForgeError::Inconsistent(format!(
            "level {j}: P(A) lower bound {:.4} > 1/8 but P(B+) = {:.4} and P(B-) = {:.4} are both \
             below 1/16",
            p_a.lo, split.p_b_plus.est, split.p_b_minus.est
        )));
    }
    if p_i.hi < I_GUARANTEE {
        return Err(ForgeError::Inconsistent(format!(
            "level {j}: chosen side upper bound {:.4} below 1/16",
            p_i.hi
        )));
    }
    if bit == 0 {
        state
            .coding
            .set_exception(2 * n + 1, 0)
            .expect("2N + 1 is odd and at least 5");
    }
    let record = LevelRecord {
        j,
        n,
        p_a,
        p_b_plus: split.p_b_plus,
        p_b_minus: split.p_b_minus,
        malicious_bit: bit,
        i_side: side,
        p_i,
        truth_at_stop: truth_at_stop(bit),
        min_gap,
        samples_used: split.samples_used,
        exact: split.exact,
    };
    state.n_prev = n;
    state.levels.push(record.clone());
    Ok(record)
}

/// Settings echoed into every report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub seed: u64,
    pub levels: u64,
    pub samples: u64,
    pub confidence: f64,
    pub predictor: String,
    pub stop_rule: String,
    pub n_cap: u64,
    pub exact_threshold: u64,
    pub exact_budget: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForgeResult {
    pub config: ConfigEcho,
    pub levels: Vec<LevelRecord>,
    /// Truncation of the limiting coding after the last level.
    pub coding: CodingFunction,
}

/// Run `levels` inductive steps from the base coding.
pub fn forge(
    levels: u64,
    e: &dyn Estimator,
    r: &dyn StoppingRule,
    cfg: &ForgeConfig,
) -> Result<ForgeResult, ForgeError> {
    if levels == 0 {
        return Err(ForgeError::NoLevels);
    }
    cfg.validate()?;
    let mut state = ForgeState::default();
    for _ in 0..levels {
        build_level(&mut state, e, r, cfg)?;
    }
    Ok(ForgeResult {
        config: ConfigEcho {
            seed: cfg.seed,
            levels,
            samples: cfg.samples,
            confidence: cfg.confidence,
            predictor: e.name(),
            stop_rule: r.name(),
            n_cap: cfg.n_cap,
            exact_threshold: cfg.exact_threshold,
            exact_budget: cfg.exact_budget,
        },
        levels: state.levels,
        coding: state.coding,
    })
}
