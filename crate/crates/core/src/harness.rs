//! Experiment orchestration: fresh-sample verification of forged levels,
//! oracle probe suites and report serialization.

use std::path::PathBuf;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::{simulate_path, stationary_sample, step, ChainState};
use crate::coding::CodingFunction;
use crate::forge::{
    forge, run_trial, truth_at_stop, ForgeConfig, ForgeError, ForgeResult, Side, I_GUARANTEE,
};
use crate::oracle::{
    brute_force_cond_prob, cond_prob_history, continuity_probe, filter_step, posterior_after,
    OracleError, Posterior,
};
use crate::predictors::{Estimator, ParseIdError, PredictorId, RuleId, StoppingRule};
use crate::report::{fmt_prob, prob_str};
use crate::rng::{self, derive_seed};
use crate::stats::{wilson, Estimate};

const TAG_VERIFY: u64 = 0x5E;
const TAG_PROBE: u64 = 0x9B;

/// Smallest admissible gap between prediction and truth on a failure event.
pub const MIN_GAP: f64 = 0.25;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Forge(#[from] ForgeError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Id(#[from] ParseIdError),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("level index {index} out of range ({count} levels)")]
    NoSuchLevel { index: usize, count: usize },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Json,
    Csv,
}

impl std::str::FromStr for Format {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(Format::Json),
            "csv" => Ok(Format::Csv),
            other => Err(HarnessError::Config(format!("unknown format {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub levels: u64,
    pub samples: u64,
    pub confidence: f64,
    pub predictor: PredictorId,
    pub rule: RuleId,
    pub n_cap: u64,
    pub exact_threshold: u64,
    pub out: Option<PathBuf>,
    pub format: Format,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let f = ForgeConfig::default();
        ExperimentConfig {
            seed: 0,
            levels: 2,
            samples: f.samples,
            confidence: f.confidence,
            predictor: PredictorId::Kt(2),
            rule: RuleId::Always,
            n_cap: f.n_cap,
            exact_threshold: f.exact_threshold,
            out: None,
            format: Format::Json,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.samples < 100 {
            return Err(HarnessError::Config(format!("samples must be >= 100, got {}", self.samples)));
        }
        if self.levels < 1 {
            return Err(HarnessError::Config("levels must be >= 1".into()));
        }
        if !(self.confidence > 0.5 && self.confidence < 1.0) {
            return Err(HarnessError::Config(format!(
                "confidence must lie in (0.5, 1), got {}",
                self.confidence
            )));
        }
        Ok(())
    }

    pub fn forge_config(&self) -> ForgeConfig {
        ForgeConfig {
            seed: self.seed,
            samples: self.samples,
            confidence: self.confidence,
            n_cap: self.n_cap,
            exact_threshold: self.exact_threshold,
            ..ForgeConfig::default()
        }
    }

    pub fn run_forge(&self) -> Result<ForgeResult, HarnessError> {
        self.validate()?;
        let e = self.predictor.build();
        let r = self.rule.build();
        Ok(forge(self.levels, e.as_ref(), r.as_ref(), &self.forge_config())?)
    }
}

/// Fresh-sample re-check of one forged level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyLevel {
    pub j: u64,
    #[serde(rename = "N")]
    pub n: u64,
    pub malicious_bit: u8,
    #[serde(rename = "I_side")]
    pub i_side: Side,
    #[serde(rename = "p_A")]
    pub p_a: Estimate,
    #[serde(rename = "p_B_plus")]
    pub p_b_plus: Estimate,
    #[serde(rename = "p_B_minus")]
    pub p_b_minus: Estimate,
    #[serde(rename = "p_I")]
    pub p_i: Estimate,
    #[serde(rename = "p_I_forge")]
    pub p_i_forge: Estimate,
    #[serde(with = "prob_str")]
    pub truth_at_stop: f64,
    /// Occurrences of the failure event in the fresh sample.
    pub i_count: u64,
    pub a_count: u64,
    #[serde(with = "prob_str::option")]
    pub min_gap: Option<f64>,
    /// Failure-event trials whose gap fell below 1/4.
    pub gap_violations: u64,
    /// Largest `|oracle - 0.5 * bit|` over coincidence trials.
    #[serde(with = "prob_str")]
    pub truth_max_error: f64,
    pub samples: u64,
    /// No failure events seen although the forge bounded `P(I)` above 1/16.
    pub inconsistent: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyEcho {
    pub seed: u64,
    pub samples: u64,
    pub confidence: f64,
    pub forge_seed: u64,
    pub predictor: String,
    pub stop_rule: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub config: VerifyEcho,
    pub levels: Vec<VerifyLevel>,
    #[serde(with = "prob_str")]
    pub continuity_max_deviation: f64,
    #[serde(with = "prob_str")]
    pub oracle_max_violation: f64,
    pub coding: CodingFunction,
}

impl VerifyReport {
    pub fn has_inconsistency(&self) -> bool {
        self.levels.iter().any(|l| l.inconsistent || l.gap_violations > 0)
    }
}

#[derive(Clone, Copy, Debug)]
struct VerifyTally {
    trials: u64,
    a: u64,
    b_plus: u64,
    b_minus: u64,
    i: u64,
    min_gap: f64,
    gap_violations: u64,
    truth_err: f64,
}

impl VerifyTally {
    fn empty() -> Self {
        VerifyTally {
            trials: 0,
            a: 0,
            b_plus: 0,
            b_minus: 0,
            i: 0,
            min_gap: f64::INFINITY,
            gap_violations: 0,
            truth_err: 0.0,
        }
    }

    fn merge(self, o: Self) -> Self {
        VerifyTally {
            trials: self.trials + o.trials,
            a: self.a + o.a,
            b_plus: self.b_plus + o.b_plus,
            b_minus: self.b_minus + o.b_minus,
            i: self.i + o.i,
            min_gap: self.min_gap.min(o.min_gap),
            gap_violations: self.gap_violations + o.gap_violations,
            truth_err: self.truth_err.max(o.truth_err),
        }
    }
}

/// Re-sample level `index` of `result` on the final coding with randomness
/// derived from `seed` only.
pub fn verify_level(
    result: &ForgeResult,
    index: usize,
    e: &dyn Estimator,
    r: &dyn StoppingRule,
    samples: u64,
    confidence: f64,
    seed: u64,
) -> Result<VerifyLevel, HarnessError> {
    let level = result.levels.get(index).ok_or(HarnessError::NoSuchLevel {
        index,
        count: result.levels.len(),
    })?;
    if samples < 100 {
        return Err(HarnessError::Config(format!("samples must be >= 100, got {samples}")));
    }
    let f = &result.coding;
    let truth = truth_at_stop(level.malicious_bit);
    let stream_seed = derive_seed(seed, &[TAG_VERIFY, level.j]);
    let max_steps = ForgeConfig::default().max_chain_steps;

    let one = |i: u64| -> Result<VerifyTally, HarnessError> {
        let mut g = rng::stream(stream_seed, i);
        let mut block = Vec::new();
        let o = run_trial(f, level.n, e, r, &mut g, max_steps, Some(&mut block))?;
        let mut t = VerifyTally::empty();
        t.trials = 1;
        let Some(h) = o.h_at_stop.filter(|_| o.in_a) else { return Ok(t) };
        t.a = 1;
        let side = Side::of(h);
        match side {
            Side::BPlus => t.b_plus = 1,
            Side::BMinus => t.b_minus = 1,
        }
        let oracle = cond_prob_history(f, &block)?;
        t.truth_err = (oracle - truth).abs();
        if side == level.i_side {
            t.i = 1;
            let gap = (h - truth).abs();
            t.min_gap = gap;
            t.gap_violations = (gap < MIN_GAP) as u64;
        }
        Ok(t)
    };
    let tally = tally_verify(samples, one)?;

    let p_i = wilson(tally.i, tally.trials, confidence);
    Ok(VerifyLevel {
        j: level.j,
        n: level.n,
        malicious_bit: level.malicious_bit,
        i_side: level.i_side,
        p_a: wilson(tally.a, tally.trials, confidence),
        p_b_plus: wilson(tally.b_plus, tally.trials, confidence),
        p_b_minus: wilson(tally.b_minus, tally.trials, confidence),
        p_i,
        p_i_forge: level.p_i,
        truth_at_stop: truth,
        i_count: tally.i,
        a_count: tally.a,
        min_gap: (tally.i > 0).then_some(tally.min_gap),
        gap_violations: tally.gap_violations,
        truth_max_error: tally.truth_err,
        samples: tally.trials,
        inconsistent: tally.i == 0 && level.p_i.lo > I_GUARANTEE,
    })
}

#[cfg(feature = "parallel")]
fn tally_verify<F>(samples: u64, one: F) -> Result<VerifyTally, HarnessError>
where
    F: Fn(u64) -> Result<VerifyTally, HarnessError> + Sync + Send,
{
    use rayon::prelude::*;
    (0..samples)
        .into_par_iter()
        .map(one)
        .try_reduce(VerifyTally::empty, |a, b| Ok(a.merge(b)))
}

#[cfg(not(feature = "parallel"))]
fn tally_verify<F>(samples: u64, one: F) -> Result<VerifyTally, HarnessError>
where
    F: Fn(u64) -> Result<VerifyTally, HarnessError>,
{
    (0..samples).try_fold(VerifyTally::empty(), |acc, i| Ok(acc.merge(one(i)?)))
}

/// Verify every level and run the global probes on the final coding.
pub fn verify(
    result: &ForgeResult,
    samples: u64,
    confidence: f64,
    seed: u64,
) -> Result<VerifyReport, HarnessError> {
    let e = result.config.predictor.parse::<PredictorId>()?.build();
    let r = result.config.stop_rule.parse::<RuleId>()?.build();
    let levels = (0..result.levels.len())
        .map(|i| verify_level(result, i, e.as_ref(), r.as_ref(), samples, confidence, seed))
        .collect::<Result<Vec<_>, _>>()?;
    let mut g = rng::from_seed(derive_seed(seed, &[TAG_PROBE]));
    let continuity = continuity_suite(&result.coding, 20, 100, &mut g)?;
    let oracle = oracle_equivalence(&result.coding, 10, 1e-9)?;
    Ok(VerifyReport {
        config: VerifyEcho {
            seed,
            samples,
            confidence,
            forge_seed: result.config.seed,
            predictor: result.config.predictor.clone(),
            stop_rule: result.config.stop_rule.clone(),
        },
        levels,
        continuity_max_deviation: continuity,
        oracle_max_violation: oracle.max_violation,
        coding: result.coding.clone(),
    })
}

/// Calls `visit` with every positive-probability history of length
/// `1..=max_len` and its posterior, shortest first within each branch.
pub fn for_each_history<F>(f: &CodingFunction, max_len: usize, mut visit: F) -> Result<(), HarnessError>
where
    F: FnMut(&[u8], &Posterior) -> Result<(), HarnessError>,
{
    fn go<F>(
        f: &CodingFunction,
        bits: &mut Vec<u8>,
        post: &Posterior,
        max_len: usize,
        visit: &mut F,
    ) -> Result<(), HarnessError>
    where
        F: FnMut(&[u8], &Posterior) -> Result<(), HarnessError>,
    {
        visit(bits, post)?;
        if bits.len() == max_len {
            return Ok(());
        }
        for b in [0u8, 1] {
            if let Ok(next) = filter_step(post, f, b) {
                bits.push(b);
                go(f, bits, &next, max_len, visit)?;
                bits.pop();
            }
        }
        Ok(())
    }
    for b in [0u8, 1] {
        if let Ok(post) = posterior_after(f, &[b]) {
            let mut bits = vec![b];
            go(f, &mut bits, &post, max_len, &mut visit)?;
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleCheck {
    pub histories: u64,
    pub violations: u64,
    #[serde(with = "prob_str")]
    pub max_violation: f64,
    #[serde(with = "prob_str")]
    pub max_interval_width: f64,
}

/// Float slack when testing the filter against the exact interval.
pub const ORACLE_SLACK: f64 = 1e-12;

/// Compare the filter with brute-force enumeration on every
/// positive-probability history up to `max_len` bits.
pub fn oracle_equivalence(
    f: &CodingFunction,
    max_len: usize,
    tol: f64,
) -> Result<OracleCheck, HarnessError> {
    let mut check = OracleCheck {
        histories: 0,
        violations: 0,
        max_violation: 0.0,
        max_interval_width: 0.0,
    };
    for_each_history(f, max_len, |bits, _| {
        let p = cond_prob_history(f, bits)?;
        let iv = brute_force_cond_prob(f, bits, tol)?;
        check.histories += 1;
        check.max_interval_width = check.max_interval_width.max(iv.width());
        if !iv.contains(p, ORACLE_SLACK) {
            check.violations += 1;
        }
        check.max_violation = check.max_violation.max(iv.violation(p));
        Ok(())
    })?;
    Ok(check)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarkovCheck {
    pub order: usize,
    pub histories: u64,
    pub violations: u64,
    #[serde(with = "prob_str")]
    pub max_difference: f64,
    /// Smallest window with no violations on the same histories.
    pub minimal_window: Option<usize>,
}

/// Histories of length `len` whose conditional probability differs from
/// the one given only their last `window` bits.
fn window_violations(f: &CodingFunction, window: usize, len: usize) -> Result<(u64, u64, f64), HarnessError> {
    let (mut histories, mut violations, mut max_d) = (0, 0, 0.0f64);
    for_each_history(f, len, |bits, _| {
        if bits.len() != len {
            return Ok(());
        }
        let full = cond_prob_history(f, bits)?;
        let short = cond_prob_history(f, &bits[len - window..])?;
        let d = (full - short).abs();
        histories += 1;
        max_d = max_d.max(d);
        violations += (d > 1e-12) as u64;
        Ok(())
    })?;
    Ok((histories, violations, max_d))
}

/// Exhaustively compare full-history conditional probabilities with those
/// given only the last `order_bound` bits, over histories of length
/// `order_bound + extra`.
pub fn markov_order_check(f: &CodingFunction, extra: usize) -> Result<MarkovCheck, HarnessError> {
    let k = f.order_bound();
    let len = k + extra;
    let (histories, violations, max_difference) = window_violations(f, k, len)?;
    let mut minimal_window = None;
    for w in 1..=len {
        if w == k && violations == 0 || w != k && window_violations(f, w, len)?.1 == 0 {
            minimal_window = Some(w);
            break;
        }
    }
    Ok(MarkovCheck {
        order: k,
        histories,
        violations,
        max_difference,
        minimal_window,
    })
}

/// Continuity probe over `n_suffixes` random blocks that start at a reset.
pub fn continuity_suite(
    f: &CodingFunction,
    n_suffixes: usize,
    n_prefixes: usize,
    rng: &mut rng::Rng,
) -> Result<f64, HarnessError> {
    let mut worst = 0.0f64;
    for _ in 0..n_suffixes {
        let len = rng.gen_range(3..=24);
        let path = simulate_path(ChainState::ZERO, len, rng).expect("len >= 3");
        let bits = f.encode(&path);
        worst = worst.max(continuity_probe(f, &bits, n_prefixes, rng)?);
    }
    Ok(worst)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeEntry {
    pub coding: CodingFunction,
    pub oracle: OracleCheck,
    pub markov: MarkovCheck,
    #[serde(with = "prob_str")]
    pub continuity_max_deviation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub seed: u64,
    pub max_len: usize,
    pub entries: Vec<ProbeEntry>,
}

impl ProbeReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| {
            e.oracle.violations == 0 && e.markov.violations == 0 && e.continuity_max_deviation <= 1e-12
        })
    }
}

/// The default probe codings: the base coding and one zero exception at 5, 7, 9.
pub fn default_probe_codings() -> Vec<CodingFunction> {
    let mut v = vec![CodingFunction::default()];
    for s in [5, 7, 9] {
        v.push(CodingFunction::with_exceptions([(s, 0)]).expect("odd state"));
    }
    v
}

pub fn run_probes(
    codings: &[CodingFunction],
    max_len: usize,
    seed: u64,
) -> Result<ProbeReport, HarnessError> {
    let mut g = rng::from_seed(derive_seed(seed, &[TAG_PROBE]));
    let entries = codings
        .iter()
        .map(|f| {
            Ok(ProbeEntry {
                coding: f.clone(),
                oracle: oracle_equivalence(f, max_len, 1e-9)?,
                markov: markov_order_check(f, 4)?,
                continuity_max_deviation: continuity_suite(f, 20, 100, &mut g)?,
            })
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    Ok(ProbeReport {
        seed,
        max_len,
        entries,
    })
}

/// Stationary trajectory of the coded process as CSV rows `t,state,bit`.
pub fn simulate_csv(f: &CodingFunction, length: usize, seed: u64) -> Result<Vec<u8>, HarnessError> {
    let mut g = rng::from_seed(seed);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["t", "state", "bit"])?;
    let mut s = stationary_sample(&mut g);
    for t in 0..length {
        if t > 0 {
            s = step(s, &mut g);
        }
        w.write_record([t.to_string(), s.0.to_string(), f.apply(s).to_string()])?;
    }
    Ok(w.into_inner().expect("in-memory writer"))
}

pub const CSV_HEADER: [&str; 15] = [
    "j",
    "N",
    "p_A",
    "p_A_lo",
    "p_A_hi",
    "p_B_plus",
    "p_B_minus",
    "malicious_bit",
    "I_side",
    "p_I",
    "p_I_lo",
    "p_I_hi",
    "truth",
    "min_gap",
    "samples",
];

/// A report with one CSV row per level.
pub trait LevelRows {
    fn rows(&self) -> Vec<[String; 15]>;
}

#[allow(clippy::too_many_arguments)]
fn row(
    j: u64,
    n: u64,
    p_a: &Estimate,
    p_b_plus: &Estimate,
    p_b_minus: &Estimate,
    bit: u8,
    side: Side,
    p_i: &Estimate,
    truth: f64,
    min_gap: Option<f64>,
    samples: u64,
) -> [String; 15] {
    [
        j.to_string(),
        n.to_string(),
        fmt_prob(p_a.est),
        fmt_prob(p_a.lo),
        fmt_prob(p_a.hi),
        fmt_prob(p_b_plus.est),
        fmt_prob(p_b_minus.est),
        bit.to_string(),
        side.as_str().to_string(),
        fmt_prob(p_i.est),
        fmt_prob(p_i.lo),
        fmt_prob(p_i.hi),
        fmt_prob(truth),
        min_gap.map(fmt_prob).unwrap_or_default(),
        samples.to_string(),
    ]
}

impl LevelRows for ForgeResult {
    fn rows(&self) -> Vec<[String; 15]> {
        self.levels
            .iter()
            .map(|l| {
                row(
                    l.j,
                    l.n,
                    &l.p_a,
                    &l.p_b_plus,
                    &l.p_b_minus,
                    l.malicious_bit,
                    l.i_side,
                    &l.p_i,
                    l.truth_at_stop,
                    l.min_gap,
                    l.samples_used,
                )
            })
            .collect()
    }
}

impl LevelRows for VerifyReport {
    fn rows(&self) -> Vec<[String; 15]> {
        self.levels
            .iter()
            .map(|l| {
                row(
                    l.j,
                    l.n,
                    &l.p_a,
                    &l.p_b_plus,
                    &l.p_b_minus,
                    l.malicious_bit,
                    l.i_side,
                    &l.p_i,
                    l.truth_at_stop,
                    l.min_gap,
                    l.samples,
                )
            })
            .collect()
    }
}

/// Serialize a report as pretty JSON or as one CSV row per level.
pub fn write_report<R: Serialize + LevelRows>(report: &R, format: Format) -> Result<Vec<u8>, HarnessError> {
    match format {
        Format::Json => {
            let mut out = serde_json::to_vec_pretty(report).expect("reports serialize");
            out.push(b'\n');
            Ok(out)
        }
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(CSV_HEADER)?;
            for r in report.rows() {
                w.write_record(&r)?;
            }
            Ok(w.into_inner().expect("in-memory writer"))
        }
    }
}
