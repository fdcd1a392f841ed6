//! `evade`: command-line front end for the survival sweeps, oracles and
//! exports of evade-core.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use evade_core::dynamics::{dump, ParticleRealization, SimulationWindow};
use evade_core::evasion::strategy_percolation_follower;
use evade_core::field::{chi_seed_of, compute_blocked_field, compute_vacancy_field, write_fields_csv, FORMAT_VERSION};
use evade_core::harness::{
    estimate_c_hat, estimate_lambda_det, geometric_grid, run_lemma_suite, run_survival, write_csv, write_json,
    ExperimentConfig, LemmaConfig, Strategy,
};
use evade_core::model::{verify_cone_disjointness, Mode, ModelParams};

#[derive(Parser, Debug)]
#[command(name = "evade", version, about = "Monte Carlo laboratory for a target evading mobile Poisson particles")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    flags: Flags,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Survival probability of a strategy, optionally over a lambda grid
    Survival,
    /// Coupled follower survival across a lambda grid
    Phase,
    /// Bisection bracket of the follower survival threshold at fixed depth
    LambdaDet,
    /// Run the lemma oracles (intensity, entry counts, chi tail)
    Lemma,
    /// Export vacancy and blocked fields of one realization
    Percolation,
    /// Exhaustive cone disjointness check
    ConeCheck,
    /// Write a realization to a binary dump, or summarise one with --input
    Dump,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Format {
    Csv,
    Json,
}

/// Flags shared by every subcommand. The config file uses the same keys.
#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
struct Flags {
    /// Particle intensity per site (or per unit volume)
    #[arg(long, global = true, allow_hyphen_values = true)]
    lambda: Option<f64>,
    /// Target speed bound S
    #[arg(long, global = true, allow_hyphen_values = true)]
    speed: Option<f64>,
    /// Dimension d >= 2
    #[arg(long, global = true)]
    dim: Option<usize>,
    /// Particle model
    #[arg(long, global = true, value_parser = ["lattice", "continuum"])]
    model: Option<String>,
    /// stationary | drift | greedy | percolation
    #[arg(long, global = true)]
    strategy: Option<String>,
    /// Percolation depth (levels of the oriented lattice)
    #[arg(long, global = true)]
    depth: Option<u64>,
    /// Survival horizon [default: depth / speed]
    #[arg(long, global = true, allow_hyphen_values = true)]
    horizon: Option<f64>,
    /// Monte Carlo trials per grid point
    #[arg(long, global = true)]
    trials: Option<u64>,
    /// Master seed [default: $EVADE_SEED, else 0]
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Geometric lambda grid a:b:n
    #[arg(long, global = true, value_name = "A:B:N")]
    #[serde(alias = "lambda_grid")]
    lambda_grid: Option<String>,
    /// Share realizations across the lambda grid by thinning
    #[arg(long, global = true)]
    #[serde(default)]
    coupled: bool,
    /// Output file [default: stdout]
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// Output format
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// Continuum time step
    #[arg(long, global = true, allow_hyphen_values = true)]
    #[serde(alias = "step_dt")]
    step_dt: Option<f64>,
    /// Worker threads [default: all cores]
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Largest apex level for cone-check
    #[arg(long, global = true)]
    xmax: Option<u64>,
    /// Largest cell level for cone-check
    #[arg(long, global = true)]
    jmax: Option<u64>,
    /// Apex time samples per cell interval for cone-check
    #[arg(long, global = true)]
    #[serde(alias = "t_samples")]
    t_samples: Option<usize>,
    /// Phantom entry constant for blocked fields [default: estimated]
    #[arg(long, global = true, allow_hyphen_values = true)]
    #[serde(alias = "c_hat")]
    c_hat: Option<f64>,
    /// Survival threshold for lambda-det
    #[arg(long, global = true, allow_hyphen_values = true)]
    theta: Option<f64>,
    /// Bracket width for lambda-det
    #[arg(long, global = true, allow_hyphen_values = true)]
    tol: Option<f64>,
    /// Lower end of the lambda-det search interval
    #[arg(long, global = true, allow_hyphen_values = true)]
    lo: Option<f64>,
    /// Upper end of the lambda-det search interval
    #[arg(long, global = true, allow_hyphen_values = true)]
    hi: Option<f64>,
    /// Also write the follower trajectory CSV (percolation)
    #[arg(long, global = true)]
    trajectory: Option<PathBuf>,
    /// Realization dump to summarise (dump)
    #[arg(long, global = true)]
    input: Option<PathBuf>,
    /// JSON config file with the same keys; flags win
    #[arg(long, global = true)]
    #[serde(skip)]
    config: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<evade_core::Error> for Failure {
    fn from(e: evade_core::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

fn usage(msg: impl std::fmt::Display) -> Failure {
    Failure::Usage(msg.to_string())
}

macro_rules! prefer {
    ($a:ident, $b:ident; $($f:ident),*) => { $( $a.$f = $a.$f.take().or($b.$f.take()); )* };
}

/// Flags over config file over defaults.
fn resolve(mut flags: Flags, command: Command) -> Result<Flags, Failure> {
    if let Some(path) = flags.config.clone() {
        let text = std::fs::read_to_string(&path).map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut file: Flags =
            serde_json::from_str(&text).map_err(|e| usage(format!("bad config {}: {e}", path.display())))?;
        prefer!(flags, file; lambda, speed, dim, model, strategy, depth, horizon, trials, seed, lambda_grid,
            output, format, step_dt, threads, xmax, jmax, t_samples, c_hat, theta, tol, lo, hi, trajectory, input);
        flags.coupled |= file.coupled;
    }
    if flags.seed.is_none() {
        flags.seed = Some(match std::env::var("EVADE_SEED") {
            Ok(s) => s.trim().parse().map_err(|_| usage(format!("EVADE_SEED must be an unsigned integer, got {s:?}")))?,
            Err(_) => 0,
        });
    }
    let d = |v: &mut Option<f64>, x: f64| {
        v.get_or_insert(x);
    };
    d(&mut flags.lambda, 0.1);
    d(&mut flags.speed, 1.0);
    d(&mut flags.step_dt, 0.01);
    flags.dim.get_or_insert(2);
    flags.model.get_or_insert_with(|| "lattice".into());
    flags.strategy.get_or_insert_with(|| "percolation".into());
    flags.depth.get_or_insert(20);
    flags.trials.get_or_insert(100);
    flags.format.get_or_insert(Format::Csv);
    match command {
        Command::ConeCheck => {
            flags.xmax.get_or_insert(20);
            flags.jmax.get_or_insert(40);
            flags.t_samples.get_or_insert(16);
        }
        Command::LambdaDet => {
            d(&mut flags.theta, 0.5);
            d(&mut flags.tol, 0.01);
            d(&mut flags.lo, 0.001);
            d(&mut flags.hi, 10.0);
        }
        Command::Phase => {
            flags.lambda_grid.get_or_insert_with(|| "0.01:2:8".into());
        }
        _ => {}
    }
    Ok(flags)
}

fn params_of(f: &Flags) -> Result<ModelParams, Failure> {
    let mode: Mode = f.model.as_deref().unwrap_or("lattice").parse().map_err(usage)?;
    let p = ModelParams::new(f.lambda.unwrap(), f.speed.unwrap(), f.dim.unwrap(), mode).map_err(usage)?;
    let p = p.with_step_dt(f.step_dt.unwrap());
    p.validate().map_err(usage)?;
    Ok(p)
}

fn parse_grid(text: &str) -> Result<Vec<f64>, Failure> {
    let parts: Vec<&str> = text.split(':').collect();
    let bad = || usage(format!("--lambda-grid expects a:b:n, got {text:?}"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let a: f64 = parts[0].parse().map_err(|_| bad())?;
    let b: f64 = parts[1].parse().map_err(|_| bad())?;
    let n: usize = parts[2].parse().map_err(|_| bad())?;
    geometric_grid(a, b, n).map_err(usage)
}

fn experiment(f: &Flags, params: ModelParams) -> Result<ExperimentConfig, Failure> {
    let strategy: Strategy = f.strategy.as_deref().unwrap().parse().map_err(usage)?;
    let mut cfg = ExperimentConfig::new(params, strategy, f.depth.unwrap(), f.trials.unwrap(), f.seed.unwrap());
    cfg.horizon = f.horizon;
    cfg.coupled = f.coupled;
    cfg.grid = f.lambda_grid.as_deref().map(parse_grid).transpose()?;
    cfg.validate().map_err(usage)?;
    Ok(cfg)
}

fn open_output(path: Option<&Path>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("cannot create {}", p.display()))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

#[derive(Serialize)]
struct FieldExport<'a> {
    format_version: u32,
    vacancy: &'a evade_core::field::VacancyField,
    blocked: &'a evade_core::field::BlockedField,
    path_found: bool,
}

#[derive(Serialize)]
struct DumpSummary<'a> {
    format_version: u32,
    params: &'a ModelParams,
    window: &'a SimulationWindow,
    seed: u64,
    particles: usize,
    discretized: bool,
}

#[derive(Serialize)]
struct ConeOutcome<'a> {
    format_version: u32,
    report: &'a evade_core::model::ConeReport,
}

fn run(command: Command, f: &Flags) -> Result<ExitCode, Failure> {
    let params = params_of(f)?;
    let format = f.format.unwrap();
    match command {
        Command::Survival | Command::Phase => {
            let mut cfg = experiment(f, params)?;
            if command == Command::Phase {
                cfg.coupled = true;
            }
            let result = run_survival(&cfg)?;
            let mut out = open_output(f.output.as_deref())?;
            match format {
                Format::Csv => write_csv(&result, &mut out)?,
                Format::Json => write_json(&result, &mut out)?,
            }
            out.flush().map_err(anyhow::Error::from)?;
            if let Some(v) = result.monotonicity_violations {
                eprintln!("monotonicity violations: {v}");
            }
        }
        Command::LambdaDet => {
            let cfg = experiment(f, params)?;
            let est = estimate_lambda_det(&cfg, f.lo.unwrap(), f.hi.unwrap(), f.theta.unwrap(), f.tol.unwrap())?;
            let mut out = open_output(f.output.as_deref())?;
            match format {
                Format::Csv => {
                    writeln!(out, "speed,depth,theta,lambda_lo,lambda_hi,evaluations,format_version").map_err(anyhow::Error::from)?;
                    writeln!(
                        out,
                        "{},{},{},{},{},{},{FORMAT_VERSION}",
                        est.speed,
                        est.depth,
                        est.theta,
                        est.lo,
                        est.hi,
                        est.evaluations.len()
                    )
                    .map_err(anyhow::Error::from)?;
                }
                Format::Json => write_json(&est, &mut out)?,
            }
            out.flush().map_err(anyhow::Error::from)?;
            eprintln!("{}", est.label);
        }
        Command::Lemma => {
            let mut cfg = LemmaConfig::defaults(params, f.seed.unwrap());
            cfg.trials = f.trials.unwrap().max(2);
            let suite = run_lemma_suite(&cfg)?;
            let mut out = open_output(f.output.as_deref())?;
            match format {
                Format::Csv => {
                    let w = |out: &mut dyn Write, s: String| writeln!(out, "{s},{FORMAT_VERSION}").map_err(anyhow::Error::from);
                    w(&mut out, "oracle,k,statistic,pass".into())?;
                    for r in &suite.psi {
                        w(&mut out, format!("psi_intensity,{},{},{}", r.k, r.worst_excess, r.pass))?;
                    }
                    for r in &suite.n_count {
                        w(&mut out, format!("n_count,{},{},{}", r.k, r.c_hat, r.pass))?;
                    }
                    let rate = suite.chi.fit.as_ref().map_or(f64::NAN, |t| t.rate);
                    w(&mut out, format!("chi_tail,,{rate},{}", suite.chi_pass))?;
                }
                Format::Json => write_json(&suite, &mut out)?,
            }
            out.flush().map_err(anyhow::Error::from)?;
        }
        Command::Percolation => {
            let depth = f.depth.unwrap();
            let window = SimulationWindow::for_depth(&params, depth)?;
            let r = ParticleRealization::sample(&params, &window, f.seed.unwrap())?;
            let c_hat = match f.c_hat {
                Some(c) if c >= 0.0 => c,
                Some(c) => return Err(usage(format!("--c-hat must be >= 0, got {c}"))),
                None => estimate_c_hat(&params, f.seed.unwrap())?,
            };
            let vacancy = compute_vacancy_field(&r, depth, None)?;
            let blocked = compute_blocked_field(&r, chi_seed_of(r.seed()), depth, c_hat)?;
            let traj = strategy_percolation_follower(&r, depth)?;
            eprintln!("c_hat {c_hat}, vacant path to depth {depth}: {}", traj.is_some());
            let mut out = open_output(f.output.as_deref())?;
            match format {
                Format::Csv => write_fields_csv(&vacancy, Some(&blocked), &mut out)?,
                Format::Json => write_json(
                    &FieldExport { format_version: FORMAT_VERSION, vacancy: &vacancy, blocked: &blocked, path_found: traj.is_some() },
                    &mut out,
                )?,
            }
            out.flush().map_err(anyhow::Error::from)?;
            if let (Some(path), Some(t)) = (&f.trajectory, &traj) {
                let mut w = open_output(Some(path))?;
                t.write_csv(&mut w)?;
                w.flush().map_err(anyhow::Error::from)?;
            }
        }
        Command::ConeCheck => {
            let (xmax, jmax) = (f.xmax.unwrap(), f.jmax.unwrap());
            if xmax > jmax {
                return Err(usage(format!("--xmax {xmax} exceeds --jmax {jmax}")));
            }
            let report = verify_cone_disjointness(&params, xmax, jmax, f.t_samples.unwrap())?;
            let mut out = open_output(f.output.as_deref())?;
            match format {
                Format::Csv => {
                    if report.pass {
                        writeln!(out, "pass").map_err(anyhow::Error::from)?;
                    } else {
                        writeln!(out, "fail {:?}", report.counterexample).map_err(anyhow::Error::from)?;
                    }
                }
                Format::Json => write_json(&ConeOutcome { format_version: FORMAT_VERSION, report: &report }, &mut out)?,
            }
            out.flush().map_err(anyhow::Error::from)?;
            eprintln!("{} checks, delta {}", report.checks, report.delta);
            if !report.pass {
                return Ok(ExitCode::from(1));
            }
        }
        Command::Dump => {
            if let Some(input) = &f.input {
                let r = dump::load(input).with_context(|| format!("cannot load {}", input.display()))?;
                let mut out = open_output(f.output.as_deref())?;
                write_json(
                    &DumpSummary {
                        format_version: FORMAT_VERSION,
                        params: r.params(),
                        window: r.window(),
                        seed: r.seed(),
                        particles: r.len(),
                        discretized: r.is_discretized(),
                    },
                    &mut out,
                )?;
                out.flush().map_err(anyhow::Error::from)?;
            } else {
                let path = f.output.as_deref().ok_or_else(|| usage("dump needs --output (or --input to read one)"))?;
                let window = SimulationWindow::for_depth(&params, f.depth.unwrap())?;
                let r = ParticleRealization::sample(&params, &window, f.seed.unwrap())?;
                dump::save(&r, path)?;
                eprintln!("wrote {} particles to {}", r.len(), path.display());
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn command_name(c: Command) -> &'static str {
    match c {
        Command::Survival => "survival",
        Command::Phase => "phase",
        Command::LambdaDet => "lambda-det",
        Command::Lemma => "lemma",
        Command::Percolation => "percolation",
        Command::ConeCheck => "cone-check",
        Command::Dump => "dump",
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let outcome = resolve(cli.flags, cli.command).and_then(|f| {
        eprintln!("evade {} config: {}", command_name(cli.command), serde_json::to_string(&f).expect("flags serialize"));
        if let Some(n) = f.threads {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| usage(format!("--threads: {e}")))?;
        }
        run(cli.command, &f)
    });
    match outcome {
        Ok(code) => code,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
