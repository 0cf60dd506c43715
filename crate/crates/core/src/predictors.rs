//! Estimators and stopping rules as incremental interfaces over bit prefixes.
//!
//! An [`Estimator`] sees the bits one at a time and predicts the probability
//! that the next bit is 1. A [`StoppingRule`] sees the same bits and decides
//! after each one whether to stop there; the stop indices form the strictly
//! increasing sequence of stopping times. Because a rule only ever receives
//! the bits observed so far, every decision is measurable by construction.
//!
//! Rules are expected to stop at every step eventually on finite-order
//! Markov sources. That cannot be checked from finitely many runs; the forge
//! reports a diagnostic when a rule never lines up with a hitting time.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

/// Longest context supported by the counting estimators.
pub const MAX_ORDER: usize = 32;

pub trait Estimator: Send + Sync {
    /// Forget everything observed.
    fn reset(&mut self);
    fn observe(&mut self, bit: u8);
    /// Predicted probability that the next bit is 1.
    fn predict(&self) -> f64;
    fn box_clone(&self) -> Box<dyn Estimator>;
    fn name(&self) -> String;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Decision {
    Stop,
    Continue,
}

pub trait StoppingRule: Send + Sync {
    fn reset(&mut self);
    /// Called with each bit in order; decides whether to stop at its index.
    fn observe(&mut self, bit: u8) -> Decision;
    fn box_clone(&self) -> Box<dyn StoppingRule>;
    fn name(&self) -> String;
}

impl Clone for Box<dyn Estimator> {
    fn clone(&self) -> Self {
        self.box_clone()
    }
}

impl Clone for Box<dyn StoppingRule> {
    fn clone(&self) -> Self {
        self.box_clone()
    }
}

/// Rolling context of the last `order` bits.
#[derive(Clone, Debug)]
struct Context {
    order: usize,
    bits: u64,
    seen: usize,
}

impl Context {
    fn new(order: usize) -> Self {
        assert!(order <= MAX_ORDER, "order {order} exceeds {MAX_ORDER}");
        Context { order, bits: 0, seen: 0 }
    }

    fn mask(&self) -> u64 {
        if self.order == 0 {
            0
        } else {
            (1u64 << self.order) - 1
        }
    }

    fn push(&mut self, bit: u8) {
        self.bits = ((self.bits << 1) | bit as u64) & self.mask();
        self.seen += 1;
    }

    fn full(&self) -> bool {
        self.seen >= self.order
    }
}

/// Block-frequency predictor of fixed order with add-half smoothing.
///
/// Only full contexts are counted; before `order` bits have been seen the
/// prediction is 1/2.
#[derive(Clone, Debug)]
pub struct EmpiricalMarkov {
    ctx: Context,
    counts: HashMap<u64, [u64; 2]>,
}

pub fn empirical_markov_predictor(order: usize) -> EmpiricalMarkov {
    EmpiricalMarkov {
        ctx: Context::new(order),
        counts: HashMap::new(),
    }
}

impl Estimator for EmpiricalMarkov {
    fn reset(&mut self) {
        self.ctx = Context::new(self.ctx.order);
        self.counts.clear();
    }

    fn observe(&mut self, bit: u8) {
        if self.ctx.full() {
            self.counts.entry(self.ctx.bits).or_default()[bit as usize] += 1;
        }
        self.ctx.push(bit);
    }

    fn predict(&self) -> f64 {
        if !self.ctx.full() {
            return 0.5;
        }
        let [c0, c1] = self.counts.get(&self.ctx.bits).copied().unwrap_or_default();
        (c1 as f64 + 0.5) / ((c0 + c1) as f64 + 1.0)
    }

    fn box_clone(&self) -> Box<dyn Estimator> {
        Box::new(self.clone())
    }

    fn name(&self) -> String {
        format!("empirical:{}", self.ctx.order)
    }
}

/// Krichevsky-Trofimov estimator per context, with the past padded by zeros.
#[derive(Clone, Debug)]
pub struct Kt {
    ctx: Context,
    counts: HashMap<u64, [u64; 2]>,
}

pub fn kt_predictor(order: usize) -> Kt {
    Kt {
        ctx: Context::new(order),
        counts: HashMap::new(),
    }
}

impl Estimator for Kt {
    fn reset(&mut self) {
        self.ctx = Context::new(self.ctx.order);
        self.counts.clear();
    }

    fn observe(&mut self, bit: u8) {
        self.counts.entry(self.ctx.bits).or_default()[bit as usize] += 1;
        self.ctx.push(bit);
    }

    fn predict(&self) -> f64 {
        let [c0, c1] = self.counts.get(&self.ctx.bits).copied().unwrap_or_default();
        (c1 as f64 + 0.5) / ((c0 + c1) as f64 + 1.0)
    }

    fn box_clone(&self) -> Box<dyn Estimator> {
        Box::new(self.clone())
    }

    fn name(&self) -> String {
        format!("kt:{}", self.ctx.order)
    }
}

/// Ignores the data.
#[derive(Clone, Debug)]
pub struct Constant(pub f64);

impl Estimator for Constant {
    fn reset(&mut self) {}

    fn observe(&mut self, _bit: u8) {}

    fn predict(&self) -> f64 {
        self.0
    }

    fn box_clone(&self) -> Box<dyn Estimator> {
        Box::new(self.clone())
    }

    fn name(&self) -> String {
        format!("const:{}", self.0)
    }
}

/// `lambda_n = n`.
#[derive(Clone, Debug, Default)]
pub struct AlwaysStop;

pub fn always_stop_rule() -> AlwaysStop {
    AlwaysStop
}

impl StoppingRule for AlwaysStop {
    fn reset(&mut self) {}

    fn observe(&mut self, _bit: u8) -> Decision {
        Decision::Stop
    }

    fn box_clone(&self) -> Box<dyn StoppingRule> {
        Box::new(self.clone())
    }

    fn name(&self) -> String {
        "always".into()
    }
}

/// Stops at every `t >= t0` and never before.
#[derive(Clone, Debug)]
pub struct Delayed {
    t0: usize,
    t: usize,
}

pub fn delayed_rule(t0: usize) -> Delayed {
    Delayed { t0, t: 0 }
}

impl StoppingRule for Delayed {
    fn reset(&mut self) {
        self.t = 0;
    }

    fn observe(&mut self, _bit: u8) -> Decision {
        let t = self.t;
        self.t += 1;
        if t >= self.t0 {
            Decision::Stop
        } else {
            Decision::Continue
        }
    }

    fn box_clone(&self) -> Box<dyn StoppingRule> {
        Box::new(self.clone())
    }

    fn name(&self) -> String {
        format!("delayed:{}", self.t0)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseIdError {
    #[error("unknown predictor {0:?} (expected kt:<order>, empirical:<order> or const:<p>)")]
    UnknownPredictor(String),
    #[error("unknown stopping rule {0:?} (expected always or delayed:<t0>)")]
    UnknownRule(String),
    #[error("bad parameter in {0:?}")]
    BadParameter(String),
}

/// Predictor selection string: `kt:<order>`, `empirical:<order>`, `const:<p>`.
#[derive(Clone, Debug, PartialEq)]
pub enum PredictorId {
    Kt(usize),
    Empirical(usize),
    Constant(f64),
}

impl PredictorId {
    pub fn build(&self) -> Box<dyn Estimator> {
        match *self {
            PredictorId::Kt(k) => Box::new(kt_predictor(k)),
            PredictorId::Empirical(k) => Box::new(empirical_markov_predictor(k)),
            PredictorId::Constant(p) => Box::new(Constant(p)),
        }
    }
}

impl FromStr for PredictorId {
    type Err = ParseIdError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ParseIdError::BadParameter(s.to_string());
        let (kind, arg) = s
            .split_once(':')
            .ok_or_else(|| ParseIdError::UnknownPredictor(s.to_string()))?;
        let order = || {
            arg.parse::<usize>()
                .ok()
                .filter(|&k| k <= MAX_ORDER)
                .ok_or_else(bad)
        };
        match kind {
            "kt" => Ok(PredictorId::Kt(order()?)),
            "empirical" => Ok(PredictorId::Empirical(order()?)),
            "const" => {
                let p: f64 = arg.parse().map_err(|_| bad())?;
                if (0.0..=1.0).contains(&p) {
                    Ok(PredictorId::Constant(p))
                } else {
                    Err(bad())
                }
            }
            _ => Err(ParseIdError::UnknownPredictor(s.to_string())),
        }
    }
}

impl fmt::Display for PredictorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PredictorId::Kt(k) => write!(f, "kt:{k}"),
            PredictorId::Empirical(k) => write!(f, "empirical:{k}"),
            PredictorId::Constant(p) => write!(f, "const:{p}"),
        }
    }
}

/// Stopping-rule selection string: `always`, `delayed:<t0>`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RuleId {
    Always,
    Delayed(usize),
}

impl RuleId {
    pub fn build(&self) -> Box<dyn StoppingRule> {
        match *self {
            RuleId::Always => Box::new(always_stop_rule()),
            RuleId::Delayed(t0) => Box::new(delayed_rule(t0)),
        }
    }
}

impl FromStr for RuleId {
    type Err = ParseIdError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "always" {
            return Ok(RuleId::Always);
        }
        match s.split_once(':') {
            Some(("delayed", arg)) => arg
                .parse()
                .map(RuleId::Delayed)
                .map_err(|_| ParseIdError::BadParameter(s.to_string())),
            _ => Err(ParseIdError::UnknownRule(s.to_string())),
        }
    }
}

impl fmt::Display for RuleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RuleId::Always => write!(f, "always"),
            RuleId::Delayed(t0) => write!(f, "delayed:{t0}"),
        }
    }
}

/// One stop: the `n`-th stopping time `lambda` and the prediction made there.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StopRecord {
    pub n: usize,
    pub lambda: usize,
    pub h: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SessionTrace {
    pub stops: Vec<StopRecord>,
    pub prefix_len: usize,
}

/// Streaming session: feeds bits to fresh copies of an estimator and a rule.
pub struct Session {
    estimator: Box<dyn Estimator>,
    rule: Box<dyn StoppingRule>,
    t: usize,
    n: usize,
}

impl Session {
    pub fn new(estimator: &dyn Estimator, rule: &dyn StoppingRule) -> Self {
        let mut estimator = estimator.box_clone();
        let mut rule = rule.box_clone();
        estimator.reset();
        rule.reset();
        Session {
            estimator,
            rule,
            t: 0,
            n: 0,
        }
    }

    /// Observe the next bit; returns the stop record if the rule stops here.
    pub fn push(&mut self, bit: u8) -> Option<StopRecord> {
        self.estimator.observe(bit);
        let decision = self.rule.observe(bit);
        let t = self.t;
        self.t += 1;
        match decision {
            Decision::Stop => {
                let rec = StopRecord {
                    n: self.n,
                    lambda: t,
                    h: self.estimator.predict(),
                };
                self.n += 1;
                Some(rec)
            }
            Decision::Continue => None,
        }
    }
}

pub fn run_session(bits: &[u8], e: &dyn Estimator, r: &dyn StoppingRule) -> SessionTrace {
    let mut session = Session::new(e, r);
    let stops = bits.iter().filter_map(|&b| session.push(b)).collect();
    SessionTrace {
        stops,
        prefix_len: bits.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn predict_after(e: &dyn Estimator, bits: &[u8]) -> f64 {
        let mut e = e.box_clone();
        e.reset();
        bits.iter().for_each(|&b| e.observe(b));
        e.predict()
    }

    /// Independent recount over the raw prefix.
    fn naive_empirical(order: usize, bits: &[u8]) -> f64 {
        if bits.len() < order {
            return 0.5;
        }
        let ctx = &bits[bits.len() - order..];
        let (mut c0, mut c1) = (0.0, 0.0);
        for t in order..bits.len() {
            if &bits[t - order..t] == ctx {
                if bits[t] == 1 {
                    c1 += 1.0
                } else {
                    c0 += 1.0
                }
            }
        }
        (c1 + 0.5) / (c0 + c1 + 1.0)
    }

    #[test]
    fn empirical_examples() {
        assert_eq!(predict_after(&empirical_markov_predictor(1), &[1, 1, 1, 1]), 0.875);
        assert_eq!(predict_after(&empirical_markov_predictor(0), &[]), 0.5);
        assert_eq!(predict_after(&empirical_markov_predictor(2), &[1]), 0.5);
    }

    #[test]
    fn kt_examples() {
        assert_eq!(predict_after(&kt_predictor(2), &[]), 0.5);
        // Context (1,1) followed by 1 twice; zero padding gives contexts
        // 00, 01, 11, 11 for the four observations.
        assert_eq!(predict_after(&kt_predictor(2), &[1, 1, 1, 1]), 2.5 / 3.0);
        assert_eq!(predict_after(&kt_predictor(0), &[1, 1, 0]), 2.5 / 4.0);
    }

    #[test]
    fn rule_examples() {
        let mut always = always_stop_rule();
        assert_eq!(always.observe(0), Decision::Stop);
        let mut d = delayed_rule(5);
        let decisions: Vec<_> = (0..7).map(|_| d.observe(1)).collect();
        assert_eq!(decisions[3], Decision::Continue);
        assert_eq!(decisions[5], Decision::Stop);
        let trace = run_session(&[0; 8], &Constant(0.5), &delayed_rule(5));
        assert_eq!(trace.stops[0].lambda, 5);
        let trace = run_session(&[0, 0, 1, 1], &Constant(0.5), &always_stop_rule());
        assert_eq!(trace.stops.iter().map(|s| s.lambda).collect::<Vec<_>>(), vec![0, 1, 2, 3]);
        assert_eq!(trace.stops[2].n, 2);
        let trace = run_session(&[0, 0, 1, 1], &Constant(0.5), &delayed_rule(2));
        assert_eq!(trace.stops.iter().map(|s| s.lambda).collect::<Vec<_>>(), vec![2, 3]);
    }

    #[test]
    fn id_strings() {
        assert_eq!("kt:2".parse::<PredictorId>().unwrap(), PredictorId::Kt(2));
        assert_eq!("empirical:1".parse::<PredictorId>().unwrap(), PredictorId::Empirical(1));
        assert_eq!("const:0.5".parse::<PredictorId>().unwrap(), PredictorId::Constant(0.5));
        assert!("kt:x".parse::<PredictorId>().is_err());
        assert!("kt:99".parse::<PredictorId>().is_err());
        assert!("const:2".parse::<PredictorId>().is_err());
        assert!("lz".parse::<PredictorId>().is_err());
        assert_eq!("always".parse::<RuleId>().unwrap(), RuleId::Always);
        assert_eq!("delayed:5".parse::<RuleId>().unwrap(), RuleId::Delayed(5));
        assert!("sometimes".parse::<RuleId>().is_err());
        for s in ["kt:3", "empirical:0", "const:0.25"] {
            assert_eq!(s.parse::<PredictorId>().unwrap().to_string(), s);
            assert_eq!(s.parse::<PredictorId>().unwrap().build().name(), s);
        }
        assert_eq!(RuleId::Delayed(4).build().name(), "delayed:4");
    }

    fn estimators() -> Vec<Box<dyn Estimator>> {
        vec![
            Box::new(kt_predictor(0)),
            Box::new(kt_predictor(3)),
            Box::new(empirical_markov_predictor(1)),
            Box::new(empirical_markov_predictor(4)),
        ]
    }

    proptest! {
        #[test]
        fn empirical_matches_recount(order in 0usize..5, bits in prop::collection::vec(0u8..2, 0..60)) {
            let got = predict_after(&empirical_markov_predictor(order), &bits);
            prop_assert!((got - naive_empirical(order, &bits)).abs() < 1e-15);
        }

        #[test]
        fn sessions_are_deterministic_and_in_range(
            bits in prop::collection::vec(0u8..2, 0..80),
            t0 in 0usize..10,
        ) {
            for e in estimators() {
                let a = run_session(&bits, e.as_ref(), &delayed_rule(t0));
                let b = run_session(&bits, e.as_ref(), &delayed_rule(t0));
                prop_assert_eq!(&a, &b);
                for (i, s) in a.stops.iter().enumerate() {
                    prop_assert!(s.h > 0.0 && s.h < 1.0);
                    prop_assert_eq!(s.n, i);
                    prop_assert_eq!(s.h, predict_after(e.as_ref(), &bits[..=s.lambda]));
                }
                prop_assert!(a.stops.windows(2).all(|w| w[0].lambda < w[1].lambda));
            }
        }

        #[test]
        fn stops_ignore_future_bits(
            bits in prop::collection::vec(0u8..2, 1..60),
            tail in prop::collection::vec(0u8..2, 0..30),
            cut in 0usize..60,
        ) {
            let cut = cut.min(bits.len() - 1);
            let mut other = bits[..=cut].to_vec();
            other.extend(&tail);
            for e in estimators() {
                let a = run_session(&bits, e.as_ref(), &always_stop_rule());
                let b = run_session(&other, e.as_ref(), &always_stop_rule());
                prop_assert_eq!(&a.stops[..=cut], &b.stops[..=cut]);
            }
        }
    }
}
