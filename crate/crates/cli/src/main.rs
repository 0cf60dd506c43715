use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};
use stopforge::coding::{base_coding, CodingFunction};
use stopforge::forge::{ForgeError, ForgeResult};
use stopforge::harness::{
    self, default_probe_codings, run_probes, simulate_csv, write_report, ExperimentConfig, Format,
    HarnessError, ORACLE_SLACK,
};
use stopforge::predictors::{PredictorId, RuleId};

#[derive(Parser, Debug)]
#[command(name = "stopforge", version, about = "Forge and verify adversarial processes for stopping-time predictors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build levels of the adversarial coding and write the forge report.
    Forge(ForgeArgs),
    /// Re-check a forge report on fresh samples.
    Verify(VerifyArgs),
    /// Run the oracle-equivalence, Markov-order and continuity probes.
    Probe(ProbeArgs),
    /// Sample the stationary chain and its coded bits as CSV.
    Simulate(SimulateArgs),
}

#[derive(Args, Debug)]
struct Output {
    /// Output file (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Output format.
    #[arg(long, default_value = "json", value_parser = ["json", "csv"])]
    format: String,
}

#[derive(Args, Debug)]
struct ForgeArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 2)]
    levels: u64,
    #[arg(long, default_value_t = 100_000)]
    samples: u64,
    #[arg(long, default_value_t = 0.99)]
    confidence: f64,
    /// kt:<order>, empirical:<order> or const:<p>.
    #[arg(long, default_value = "kt:2")]
    predictor: PredictorId,
    /// always or delayed:<t0>.
    #[arg(long, default_value = "always")]
    stop_rule: RuleId,
    #[arg(long, default_value_t = 12)]
    n_cap: u64,
    /// Levels with 2N at most this use exact path enumeration.
    #[arg(long, default_value_t = 4)]
    exact_threshold: u64,
    #[command(flatten)]
    output: Output,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    /// Forge report (JSON).
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 200_000)]
    samples: u64,
    #[arg(long, default_value_t = 0.99)]
    confidence: f64,
    #[command(flatten)]
    output: Output,
}

#[derive(Args, Debug)]
struct ProbeArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Longest history checked against brute-force enumeration.
    #[arg(long, default_value_t = 12)]
    max_len: usize,
    /// Coding file to probe instead of the default set.
    #[arg(long)]
    coding: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1000)]
    length: usize,
    /// Coding file (base coding when omitted).
    #[arg(long)]
    coding: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// A run that completed but whose diagnostics contradict the construction.
#[derive(Debug)]
struct Violation(String);

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Violation {}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Err(e) = init_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::from(2);
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<Violation>().is_some() {
        return 1;
    }
    let forge = e.downcast_ref::<ForgeError>().or(match e.downcast_ref::<HarnessError>() {
        Some(HarnessError::Forge(f)) => Some(f),
        _ => None,
    });
    match forge {
        Some(ForgeError::NoLevelFound { .. } | ForgeError::Inconsistent(_) | ForgeError::ChainCapExceeded(_)) => 1,
        _ => 2,
    }
}

fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var("FORGE_THREADS") else { return Ok(()) };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| anyhow!("FORGE_THREADS must be a positive integer, got {v:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .context("building thread pool")
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Forge(a) => forge(a),
        Command::Verify(a) => verify(a),
        Command::Probe(a) => probe(a),
        Command::Simulate(a) => simulate(a),
    }
}

fn forge(a: ForgeArgs) -> Result<()> {
    let format: Format = a.output.format.parse()?;
    let cfg = ExperimentConfig {
        seed: a.seed,
        levels: a.levels,
        samples: a.samples,
        confidence: a.confidence,
        predictor: a.predictor,
        rule: a.stop_rule,
        n_cap: a.n_cap,
        exact_threshold: a.exact_threshold,
        out: a.output.out,
        format,
    };
    let result = cfg.run_forge()?;
    emit(cfg.out.as_deref(), &write_report(&result, format)?)
}

fn verify(a: VerifyArgs) -> Result<()> {
    let format: Format = a.output.format.parse()?;
    let result: ForgeResult = read_json(&a.input)?;
    if a.samples < 100 {
        return Err(HarnessError::Config(format!("samples must be >= 100, got {}", a.samples)).into());
    }
    if !(a.confidence > 0.5 && a.confidence < 1.0) {
        return Err(HarnessError::Config(format!("confidence must lie in (0.5, 1), got {}", a.confidence)).into());
    }
    let report = harness::verify(&result, a.samples, a.confidence, a.seed)?;
    emit(a.output.out.as_deref(), &write_report(&report, format)?)?;

    let mut problems = Vec::new();
    for l in &report.levels {
        if l.gap_violations > 0 {
            problems.push(format!("level {}: {} failure events with gap below 1/4", l.j, l.gap_violations));
        }
        if l.inconsistent {
            problems.push(format!("level {}: no failure events although the forge bounded P(I) above 1/16", l.j));
        }
        if l.truth_max_error > 1e-12 {
            problems.push(format!("level {}: truth at stop off by {:e}", l.j, l.truth_max_error));
        }
    }
    if report.continuity_max_deviation > 1e-12 {
        problems.push(format!("continuity deviation {:e}", report.continuity_max_deviation));
    }
    if report.oracle_max_violation > ORACLE_SLACK {
        problems.push(format!("oracle interval violation {:e}", report.oracle_max_violation));
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(Violation(problems.join("; ")).into())
    }
}

fn probe(a: ProbeArgs) -> Result<()> {
    let codings = match &a.coding {
        Some(p) => vec![read_json::<CodingFunction>(p)?],
        None => default_probe_codings(),
    };
    let report = run_probes(&codings, a.max_len, a.seed)?;
    let mut out = serde_json::to_vec_pretty(&report)?;
    out.push(b'\n');
    emit(a.out.as_deref(), &out)?;
    if report.passed() {
        Ok(())
    } else {
        Err(Violation("probe suite reported violations".into()).into())
    }
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let coding = match &a.coding {
        Some(p) => read_json(p)?,
        None => base_coding(),
    };
    emit(a.out.as_deref(), &simulate_csv(&coding, a.length, a.seed)?)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        anyhow!("{}: field `{field}`: {}", path.display(), e.inner())
    })
}

fn emit(out: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match out {
        Some(p) => fs::write(p, bytes).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(bytes)?;
            stdout.flush()?;
            Ok(())
        }
    }
}
