//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.
//!
//! Run with `cargo test -p stopforge --test acceptance`.

use std::collections::HashMap;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use stopforge::chain::{stationary_sample, step, visit_paths_to_hit_partial, ChainState, DEFAULT_ENUMERATION_BUDGET};
use stopforge::coding::{base_coding, CodingFunction};
use stopforge::forge::{forge, ForgeConfig, ForgeResult, A_THRESHOLD, I_GUARANTEE};
use stopforge::harness::{
    continuity_suite, default_probe_codings, for_each_history, markov_order_check, oracle_equivalence,
    verify, write_report, Format, VerifyReport,
};
use stopforge::oracle::cond_prob_history;
use stopforge::predictors::{PredictorId, RuleId};
use stopforge::rng::{self, derive_seed};

// Tolerances and budgets, fixed here so they cannot drift.
const STATIONARY_SAMPLES: u64 = 1_000_000;
const STATIONARY_MAX_STATE: u64 = 10;
const STATIONARY_TIME: Duration = Duration::from_secs(5);
const ENUM_MASS_TOL: f64 = 1e-9;
const ENUM_TRIALS: u64 = 1_000_000;
/// Paths below this probability get too few Monte-Carlo hits to compare.
const ENUM_MIN_COMPARED: f64 = 1.0 / 1024.0;
const ENUM_TIME: Duration = Duration::from_secs(30);
const ORACLE_MAX_LEN: usize = 12;
const ORACLE_TOL: f64 = 1e-9;
const ORACLE_TIME: Duration = Duration::from_secs(120);
const EXACT_TOL: f64 = 1e-12;
const MARKOV_EXTRA: usize = 4;
const FORGE_LEVELS: u64 = 2;
const VERIFY_SAMPLES: u64 = 200_000;
const VERIFY_CONFIDENCE: f64 = 0.99;
const I_SLACK: f64 = 0.01;
const PAIR_TIME: Duration = Duration::from_secs(300);
const SE_BOUND: f64 = 3.0;
const CONTINUITY_SUFFIXES: usize = 20;
const CONTINUITY_PREFIXES: usize = 100;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

/// `|observed - expected|` in binomial standard errors.
fn z_score(hits: u64, trials: u64, p: f64) -> f64 {
    let n = trials as f64;
    let se = (p * (1.0 - p) / n).sqrt();
    (hits as f64 / n - p).abs() / se
}

fn stationary_law() -> Outcome {
    let start = Instant::now();
    let mut g = rng::from_seed(101);
    let mut counts = vec![0u64; STATIONARY_MAX_STATE as usize + 1];
    for _ in 0..STATIONARY_SAMPLES {
        let s = stationary_sample(&mut g).0;
        if s <= STATIONARY_MAX_STATE {
            counts[s as usize] += 1;
        }
    }
    let elapsed = start.elapsed();
    let worst = (0..=STATIONARY_MAX_STATE)
        .map(|i| {
            let p = if i < 2 { 0.25 } else { 0.5f64.powi(i as i32) };
            z_score(counts[i as usize], STATIONARY_SAMPLES, p)
        })
        .fold(0.0, f64::max);
    outcome(
        worst <= SE_BOUND && elapsed < STATIONARY_TIME,
        format!("max deviation {worst:.2} SE over states 0..=10, {elapsed:.2?}"),
    )
}

fn exact_enumeration() -> Outcome {
    let start = Instant::now();
    let mut pass = true;
    let mut parts = Vec::new();
    for k in 1..=3u64 {
        let mut probs: HashMap<Vec<u64>, f64> = HashMap::new();
        let mut mass = 0.0;
        let (residual, reached) = visit_paths_to_hit_partial(k, ENUM_MASS_TOL, DEFAULT_ENUMERATION_BUDGET, |w| {
            let p = w.probability.to_f64();
            mass += p;
            if p >= ENUM_MIN_COMPARED {
                probs.insert(w.path.values(), p);
            }
        })
        .expect("valid level and tolerance");
        let mass_ok = reached && 1.0 - mass <= ENUM_MASS_TOL;

        let target = ChainState(2 * k);
        let mut hits: HashMap<Vec<u64>, u64> = HashMap::new();
        let seed = derive_seed(202, &[k]);
        for i in 0..ENUM_TRIALS {
            let mut g = rng::stream(seed, i);
            let mut s = ChainState::ZERO;
            let mut path = vec![0u64];
            while s != target {
                s = step(s, &mut g);
                path.push(s.0);
            }
            if probs.contains_key(&path) {
                *hits.entry(path).or_default() += 1;
            }
        }
        let worst = probs
            .iter()
            .map(|(path, &p)| z_score(hits.get(path).copied().unwrap_or(0), ENUM_TRIALS, p))
            .fold(0.0, f64::max);
        let freq_ok = worst <= SE_BOUND;
        pass &= mass_ok && freq_ok;
        parts.push(format!(
            "k={k}: mass {} (residual {residual:.2e}), {} paths compared, max {worst:.2} SE",
            if mass_ok { "ok" } else { "SHORT" },
            probs.len()
        ));
    }
    let elapsed = start.elapsed();
    pass &= elapsed < ENUM_TIME;
    parts.push(format!("{elapsed:.2?}"));
    outcome(pass, parts.join("; "))
}

fn oracle_equivalence_suite() -> Outcome {
    let start = Instant::now();
    let mut violations = 0;
    let mut histories = 0;
    for f in default_probe_codings() {
        let c = oracle_equivalence(&f, ORACLE_MAX_LEN, ORACLE_TOL).expect("oracle runs");
        violations += c.violations;
        histories += c.histories;
    }
    let elapsed = start.elapsed();
    outcome(
        violations == 0 && elapsed < ORACLE_TIME,
        format!("{histories} histories over 4 codings, {violations} violations, {elapsed:.2?}"),
    )
}

fn case_analysis() -> Outcome {
    let f = base_coding();
    let (mut n, mut worst) = (0u64, 0.0f64);
    for_each_history(&f, ORACLE_MAX_LEN, |bits, _| {
        let p = cond_prob_history(&f, bits)?;
        let expected = match bits {
            [.., 0, 0] => Some(1.0),
            [.., 1, 0] => Some(0.0),
            _ if bits.iter().all(|&b| b == 1) => Some(0.5),
            _ => None,
        };
        if let Some(e) = expected {
            n += 1;
            worst = worst.max((p - e).abs());
        }
        Ok(())
    })
    .expect("histories enumerate");
    outcome(worst <= EXACT_TOL, format!("{n} histories, max error {worst:.1e}"))
}

fn markov_order() -> Outcome {
    let f = CodingFunction::with_exceptions([(5, 0)]).expect("odd state");
    let m = markov_order_check(&f, MARKOV_EXTRA).expect("check runs");
    outcome(
        m.violations == 0,
        format!(
            "order_bound {}: {} of {} histories differ (max {:.3}); smallest valid window {:?}",
            m.order, m.violations, m.histories, m.max_difference, m.minimal_window
        ),
    )
}

struct PairRun {
    name: String,
    result: ForgeResult,
    report: VerifyReport,
    elapsed: Duration,
}

fn run_pair(predictor: &str, seed: u64) -> PairRun {
    let start = Instant::now();
    let e = predictor.parse::<PredictorId>().expect("predictor id").build();
    let r = RuleId::Always.build();
    let cfg = ForgeConfig {
        seed,
        ..ForgeConfig::default()
    };
    let result = forge(FORGE_LEVELS, e.as_ref(), r.as_ref(), &cfg).expect("forge succeeds");
    let report = verify(&result, VERIFY_SAMPLES, VERIFY_CONFIDENCE, derive_seed(seed, &[1])).expect("verify runs");
    PairRun {
        name: format!("{predictor}+always"),
        result,
        report,
        elapsed: start.elapsed(),
    }
}

fn level_guarantee(runs: &[PairRun]) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for run in runs {
        let a_ok = run.result.levels.iter().all(|l| l.p_a.lo > A_THRESHOLD);
        let i_ok = run.report.levels.iter().all(|l| l.p_i.lo > I_GUARANTEE - I_SLACK);
        let t_ok = run.elapsed < PAIR_TIME;
        pass &= a_ok && i_ok && t_ok && run.result.levels.len() == FORGE_LEVELS as usize;
        let ns: Vec<_> = run.result.levels.iter().map(|l| l.n).collect();
        let min_i = run.report.levels.iter().map(|l| l.p_i.lo).fold(1.0, f64::min);
        parts.push(format!("{} N={ns:?} min p_I lo {min_i:.4} {:.1?}", run.name, run.elapsed));
    }
    outcome(pass, parts.join("; "))
}

fn gap_certainty(runs: &[PairRun]) -> Outcome {
    let mut pass = true;
    let mut occurrences = 0;
    for l in runs.iter().flat_map(|r| &r.report.levels) {
        occurrences += l.i_count;
        pass &= l.gap_violations == 0 && l.min_gap.map_or(l.i_count == 0, |g| g >= 0.25);
    }
    outcome(pass, format!("{occurrences} failure-event trials checked"))
}

fn truth_formula(runs: &[PairRun]) -> Outcome {
    let worst = runs
        .iter()
        .flat_map(|r| &r.report.levels)
        .map(|l| l.truth_max_error)
        .fold(0.0, f64::max);
    let trials: u64 = runs.iter().flat_map(|r| &r.report.levels).map(|l| l.a_count).sum();
    outcome(worst <= EXACT_TOL, format!("{trials} coincidence trials, max error {worst:.1e}"))
}

fn continuity(runs: &[PairRun]) -> Outcome {
    let mut g = rng::from_seed(909);
    let mut codings = default_probe_codings();
    codings.extend(runs.iter().map(|r| r.result.coding.clone()));
    let worst = codings
        .iter()
        .map(|f| continuity_suite(f, CONTINUITY_SUFFIXES, CONTINUITY_PREFIXES, &mut g).expect("probe runs"))
        .fold(0.0, f64::max);
    outcome(worst <= EXACT_TOL, format!("{} codings, max deviation {worst:.1e}", codings.len()))
}

fn reproducibility() -> Outcome {
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().expect("pool");
        pool.install(|| {
            let e = PredictorId::Kt(2).build();
            let r = RuleId::Always.build();
            let cfg = ForgeConfig {
                seed: 77,
                samples: 20_000,
                ..ForgeConfig::default()
            };
            let result = forge(2, e.as_ref(), r.as_ref(), &cfg).expect("forge succeeds");
            let report = verify(&result, 20_000, 0.99, 78).expect("verify runs");
            (
                write_report(&result, Format::Json).expect("json"),
                write_report(&report, Format::Json).expect("json"),
            )
        })
    };
    let a = run(1);
    let b = run(4);
    outcome(a == b, format!("{} + {} bytes, 1 vs 4 threads", a.0.len(), a.1.len()))
}

fn main() -> ExitCode {
    let mut results: Vec<(&str, Outcome)> = vec![
        ("1 stationary law", stationary_law()),
        ("2 exact enumeration", exact_enumeration()),
        ("3 oracle equivalence", oracle_equivalence_suite()),
        ("4 case analysis", case_analysis()),
        ("5 Markov order", markov_order()),
    ];
    let runs: Vec<PairRun> = ["kt:2", "empirical:1", "const:0.5", "const:0"]
        .iter()
        .enumerate()
        .map(|(i, p)| run_pair(p, 600 + i as u64))
        .collect();
    results.push(("6 forge level guarantee", level_guarantee(&runs)));
    results.push(("7 gap certainty", gap_certainty(&runs)));
    results.push(("8 truth formula", truth_formula(&runs)));
    results.push(("9 continuity", continuity(&runs)));
    results.push(("10 reproducibility", reproducibility()));

    let mut failed = 0;
    for (name, o) in &results {
        println!("{} criterion {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += !o.pass as usize;
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
