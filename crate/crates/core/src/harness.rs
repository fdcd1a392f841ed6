//! Trial orchestration: survival sweeps, threshold bisection, the lemma
//! suite and result files.

use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{ParticleRealization, SimulationWindow};
use crate::error::{Error, Result};
use crate::evasion::{
    check_admissible, detection_time, strategy_drift, strategy_greedy, strategy_percolation_follower,
    strategy_stationary, SpeedNorm, Trajectory,
};
use crate::field::FORMAT_VERSION;
use crate::influence::{censored_fraction, fit_exponential_tail_range, sample_chi, TailFit};
use crate::lemmas::{c_hat_spread, lemma_n_count, lemma_psi_intensity, NCountReport, PsiReport};
use crate::model::ModelParams;
use crate::rng;
use crate::stats::Proportion;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Stationary,
    Drift,
    Greedy,
    #[serde(alias = "percolation")]
    PercolationFollower,
}

impl std::str::FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stationary" => Ok(Self::Stationary),
            "drift" => Ok(Self::Drift),
            "greedy" => Ok(Self::Greedy),
            "percolation" | "percolation_follower" | "percolation-follower" => Ok(Self::PercolationFollower),
            _ => Err(Error::InvalidParameter(format!("unknown strategy '{s}'"))),
        }
    }
}

/// Axis swept by a grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridAxis {
    Lambda,
    Speed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub params: ModelParams,
    pub strategy: Strategy,
    pub depth: u64,
    /// Survival horizon; defaults to `depth / S`.
    pub horizon: Option<f64>,
    pub trials: u64,
    pub seed: u64,
    /// Grid values; a single point at the model's own value when absent.
    pub grid: Option<Vec<f64>>,
    pub grid_axis: GridAxis,
    /// Share trial realizations across a lambda grid by thinning.
    pub coupled: bool,
    /// Drift speed; defaults to `S`.
    pub drift_speed: Option<f64>,
    /// Greedy lookahead; defaults to `1 / S`.
    pub lookahead: Option<f64>,
    pub speed_norm: SpeedNorm,
}

impl ExperimentConfig {
    pub fn new(params: ModelParams, strategy: Strategy, depth: u64, trials: u64, seed: u64) -> Self {
        Self {
            params,
            strategy,
            depth,
            horizon: None,
            trials,
            seed,
            grid: None,
            grid_axis: GridAxis::Lambda,
            coupled: false,
            drift_speed: None,
            lookahead: None,
            speed_norm: SpeedNorm::L1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if self.trials < 1 {
            return Err(Error::InvalidParameter("trials must be >= 1".into()));
        }
        if let Some(g) = &self.grid {
            if g.is_empty() {
                return Err(Error::InvalidParameter("grid is empty".into()));
            }
            let up = g.windows(2).all(|w| w[0] < w[1]);
            let down = g.windows(2).all(|w| w[0] > w[1]);
            if !(up || down) {
                return Err(Error::InvalidParameter("grid must be strictly monotone".into()));
            }
            for &v in g {
                let p = match self.grid_axis {
                    GridAxis::Lambda => self.params.with_lambda(v),
                    GridAxis::Speed => self.params.with_speed(v),
                };
                p.validate()?;
            }
        }
        if let Some(h) = self.horizon {
            if !(h >= 0.0) || !h.is_finite() {
                return Err(Error::InvalidParameter(format!("horizon must be finite and >= 0, got {h}")));
            }
        }
        Ok(())
    }

    pub fn grid_values(&self) -> Vec<f64> {
        self.grid.clone().unwrap_or_else(|| {
            vec![match self.grid_axis {
                GridAxis::Lambda => self.params.lambda,
                GridAxis::Speed => self.params.speed,
            }]
        })
    }

    fn params_at(&self, v: f64) -> ModelParams {
        match self.grid_axis {
            GridAxis::Lambda => self.params.with_lambda(v),
            GridAxis::Speed => self.params.with_speed(v),
        }
    }

    fn horizon_for(&self, p: &ModelParams) -> f64 {
        self.horizon.unwrap_or(self.depth as f64 / p.speed)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub grid_value: f64,
    pub estimate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub trials: u64,
    /// Trials in which the strategy produced no trajectory.
    pub failures: u64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub format_version: u32,
    pub config: ExperimentConfig,
    pub rows: Vec<ResultRow>,
    /// Coupled lambda grids: trials surviving at some intensity but not at a smaller one.
    pub monotonicity_violations: Option<u64>,
    /// Emitted follower trajectories that failed the speed check or were detected.
    pub soundness_violations: u64,
    pub discretized: bool,
    pub code_version: String,
    pub wall_time_s: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Outcome {
    survived: bool,
    failed: bool,
    unsound: bool,
}

/// Depths tried before the full depth when following vacant paths.
const STAGES: [u64; 4] = [4, 8, 16, 32];

fn run_strategy(cfg: &ExperimentConfig, r: &ParticleRealization, horizon: f64) -> Result<Outcome> {
    let p = r.params();
    let radius = p.detection_radius();
    let traj: Option<Trajectory> = match cfg.strategy {
        Strategy::Stationary => Some(strategy_stationary(p.dim, p.speed)),
        Strategy::Drift => Some(strategy_drift(p, cfg.drift_speed.unwrap_or(p.speed), horizon)?),
        Strategy::Greedy => Some(strategy_greedy(r, cfg.lookahead.unwrap_or(1.0 / p.speed), horizon)?),
        Strategy::PercolationFollower => strategy_percolation_follower(r, cfg.depth)?,
    };
    let Some(traj) = traj else {
        return Ok(Outcome { survived: false, failed: true, unsound: false });
    };
    let det = detection_time(&traj, r, horizon, radius)?;
    let unsound = cfg.strategy == Strategy::PercolationFollower
        && (det.detected || !check_admissible(&traj, p.speed, cfg.speed_norm).admissible);
    Ok(Outcome { survived: !det.detected, failed: false, unsound })
}

/// Window large enough for the strategy to reach `horizon` (and `depth`).
fn window_for(cfg: &ExperimentConfig, p: &ModelParams, depth: u64, horizon: f64) -> Result<SimulationWindow> {
    let reach = match cfg.strategy {
        Strategy::Stationary => 0.0,
        Strategy::Drift | Strategy::Greedy => (horizon * p.speed).ceil() + 1.0,
        Strategy::PercolationFollower => depth as f64,
    };
    let w = SimulationWindow::for_depth(p, depth)?;
    let t = w.horizon.max(horizon);
    let r = reach.max(depth as f64);
    SimulationWindow::for_region(p, r + p.detection_radius(), t)
}

/// Outcomes of one trial at every grid point sharing one realization
/// thinned from the largest intensity.
fn coupled_trial(cfg: &ExperimentConfig, lambdas: &[f64], trial_seed: u64) -> Result<Vec<Outcome>> {
    let top = lambdas.iter().copied().fold(0.0, f64::max);
    let top_params = cfg.params.with_lambda(top);
    let horizon = cfg.horizon_for(&top_params);
    let mut alive: Vec<bool> = vec![true; lambdas.len()];
    let mut out: Vec<Option<Outcome>> = vec![None; lambdas.len()];
    if cfg.strategy == Strategy::PercolationFollower {
        for &stage in STAGES.iter().filter(|&&s| s < cfg.depth) {
            let w = window_for(cfg, &top_params, stage, 0.0)?;
            let full = ParticleRealization::sample(&top_params, &w, trial_seed)?;
            let mut staged = cfg.clone();
            staged.depth = stage;
            for (i, &l) in lambdas.iter().enumerate() {
                if !alive[i] {
                    continue;
                }
                if strategy_percolation_follower(&full.thinned(l)?, stage)?.is_none() {
                    alive[i] = false;
                    out[i] = Some(Outcome { survived: false, failed: true, unsound: false });
                }
            }
            if !alive.iter().any(|&a| a) {
                break;
            }
        }
    }
    if alive.iter().any(|&a| a) {
        let w = window_for(cfg, &top_params, cfg.depth, horizon)?;
        let full = ParticleRealization::sample(&top_params, &w, trial_seed)?;
        for (i, &l) in lambdas.iter().enumerate() {
            if alive[i] {
                out[i] = Some(run_strategy(cfg, &full.thinned(l)?, horizon)?);
            }
        }
    }
    Ok(out.into_iter().map(|o| o.expect("every grid point decided")).collect())
}

/// Survival fraction of the configured strategy at every grid point.
pub fn run_survival(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let start = Instant::now();
    let grid = cfg.grid_values();
    let coupled = cfg.coupled && cfg.grid_axis == GridAxis::Lambda;
    // outcomes[g][t]
    let outcomes: Vec<Vec<Outcome>> = if coupled {
        let rows: Vec<Vec<Outcome>> = (0..cfg.trials)
            .into_par_iter()
            .map(|t| coupled_trial(cfg, &grid, rng::trial_seed(cfg.seed, t)))
            .collect::<Result<_>>()?;
        (0..grid.len()).map(|g| rows.iter().map(|r| r[g]).collect()).collect()
    } else {
        grid.iter()
            .enumerate()
            .map(|(g, &v)| {
                let mut point = cfg.clone();
                point.params = cfg.params_at(v);
                let seed = grid_seed(cfg, g);
                (0..cfg.trials)
                    .into_par_iter()
                    .map(|t| {
                        let lambdas = [point.params.lambda];
                        Ok(coupled_trial(&point, &lambdas, rng::trial_seed(seed, t))?[0])
                    })
                    .collect::<Result<Vec<Outcome>>>()
            })
            .collect::<Result<_>>()?
    };
    let mut rows = Vec::new();
    for (g, &v) in grid.iter().enumerate() {
        let o = &outcomes[g];
        let prop = Proportion::new(o.iter().filter(|x| x.survived).count() as u64, cfg.trials)?;
        rows.push(ResultRow {
            grid_value: v,
            estimate: prop.estimate,
            ci_low: prop.ci_low,
            ci_high: prop.ci_high,
            trials: cfg.trials,
            failures: o.iter().filter(|x| x.failed).count() as u64,
            seed: if coupled { cfg.seed } else { grid_seed(cfg, g) },
        });
    }
    let monotonicity_violations = coupled.then(|| {
        (0..cfg.trials as usize)
            .filter(|&t| {
                (0..grid.len()).any(|a| {
                    (0..grid.len()).any(|b| grid[a] < grid[b] && outcomes[b][t].survived && !outcomes[a][t].survived)
                })
            })
            .count() as u64
    });
    Ok(ExperimentResult {
        format_version: FORMAT_VERSION,
        config: cfg.clone(),
        rows,
        monotonicity_violations,
        soundness_violations: outcomes.iter().flatten().filter(|o| o.unsound).count() as u64,
        discretized: cfg.params.mode == crate::model::Mode::Continuum,
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

/// Seed of grid point `g` in an uncoupled sweep. Lambda sweeps reuse the
/// master seed so that neighbouring points see thinned copies of each other.
fn grid_seed(cfg: &ExperimentConfig, g: usize) -> u64 {
    match cfg.grid_axis {
        GridAxis::Lambda => cfg.seed,
        GridAxis::Speed => rng::mix(cfg.seed, g as u64),
    }
}

/// `n` geometrically spaced values from `a` to `b`.
pub fn geometric_grid(a: f64, b: f64, n: usize) -> Result<Vec<f64>> {
    if !(a > 0.0 && b > 0.0) || n == 0 || !a.is_finite() || !b.is_finite() {
        return Err(Error::InvalidParameter(format!("geometric grid needs a, b > 0 and n >= 1, got {a}:{b}:{n}")));
    }
    if n == 1 {
        return Ok(vec![a]);
    }
    if a == b {
        return Err(Error::InvalidParameter("geometric grid endpoints must differ".into()));
    }
    let r = (b / a).ln() / (n - 1) as f64;
    Ok((0..n).map(|i| if i + 1 == n { b } else { a * (r * i as f64).exp() }).collect())
}

/// Bisection for the point where a non-increasing `f` falls below `theta`:
/// returns `[lo, hi]` with `f(lo) >= theta > f(hi)` and `hi - lo <= tol`.
pub fn bisect_crossing(mut f: impl FnMut(f64) -> Result<f64>, lo: f64, hi: f64, theta: f64, tol: f64) -> Result<(f64, f64)> {
    if !(lo < hi) || !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!("need lo < hi and tol > 0, got [{lo}, {hi}], {tol}")));
    }
    if f(lo)? < theta || f(hi)? >= theta {
        return Err(Error::NoCrossing { threshold: theta, lo, hi });
    }
    let (mut a, mut b) = (lo, hi);
    while b - a > tol {
        let mid = if a > 0.0 && b / a > 4.0 { (a * b).sqrt() } else { 0.5 * (a + b) };
        if f(mid)? >= theta {
            a = mid;
        } else {
            b = mid;
        }
    }
    Ok((a, b))
}

/// Bracket for the intensity at which follower survival to a fixed depth
/// crosses `theta`. A finite-depth, strategy-specific proxy for the
/// detection threshold; it is not the threshold itself.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaDetEstimate {
    pub speed: f64,
    pub depth: u64,
    pub theta: f64,
    pub lo: f64,
    pub hi: f64,
    pub evaluations: Vec<(f64, f64)>,
    pub label: String,
}

pub fn estimate_lambda_det(cfg: &ExperimentConfig, lo: f64, hi: f64, theta: f64, tol: f64) -> Result<LambdaDetEstimate> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(Error::InvalidParameter(format!("theta must lie in (0,1), got {theta}")));
    }
    let mut follower = cfg.clone();
    follower.strategy = Strategy::PercolationFollower;
    follower.grid = None;
    follower.grid_axis = GridAxis::Lambda;
    let mut evaluations = Vec::new();
    let (a, b) = bisect_crossing(
        |l| {
            let mut c = follower.clone();
            c.params = follower.params.with_lambda(l);
            let s = run_survival(&c)?.rows[0].estimate;
            evaluations.push((l, s));
            Ok(s)
        },
        lo,
        hi,
        theta,
        tol,
    )?;
    Ok(LambdaDetEstimate {
        speed: cfg.params.speed,
        depth: cfg.depth,
        theta,
        lo: a,
        hi: b,
        evaluations,
        label: format!("finite-depth (depth {}) percolation-follower proxy, not the true threshold", cfg.depth),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LemmaConfig {
    pub params: ModelParams,
    pub psi_levels: Vec<u64>,
    pub n_levels: Vec<u64>,
    pub trials: u64,
    pub chi_trials: usize,
    pub chi_horizon: f64,
    pub fit_range: (f64, f64),
    pub seed: u64,
}

impl LemmaConfig {
    pub fn defaults(params: ModelParams, seed: u64) -> Self {
        let chi_horizon = crate::influence::default_chi_horizon(params.mode);
        Self {
            params,
            psi_levels: vec![1, 5],
            n_levels: vec![5, 10, 20],
            trials: 10_000,
            chi_trials: 100_000,
            chi_horizon,
            fit_range: (5.0, 20.0),
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChiReport {
    pub samples: usize,
    pub censored_fraction: f64,
    pub fit: Option<TailFit>,
    pub error: Option<String>,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LemmaSuite {
    pub format_version: u32,
    pub psi: Vec<PsiReport>,
    pub n_count: Vec<NCountReport>,
    pub c_hat_mean: f64,
    pub c_hat_max_deviation: f64,
    pub chi: ChiReport,
    pub psi_pass: bool,
    pub n_pass: bool,
    pub chi_pass: bool,
}

pub fn run_lemma_suite(cfg: &LemmaConfig) -> Result<LemmaSuite> {
    cfg.params.validate()?;
    let psi = if cfg.params.mode == crate::model::Mode::Lattice {
        cfg.psi_levels
            .iter()
            .enumerate()
            .map(|(i, &k)| lemma_psi_intensity(&cfg.params, k, cfg.trials, rng::mix(cfg.seed, i as u64)))
            .collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    let n_count = cfg
        .n_levels
        .iter()
        .enumerate()
        .map(|(i, &k)| lemma_n_count(&cfg.params, k, cfg.trials, rng::mix(cfg.seed, 100 + i as u64)))
        .collect::<Result<Vec<_>>>()?;
    let (c_hat_mean, c_hat_max_deviation) = c_hat_spread(&n_count);
    let chi = if cfg.params.lambda == 0.0 {
        // no particles: every region is empty
        ChiReport { samples: 0, censored_fraction: 0.0, fit: None, error: None, pass: true }
    } else {
        let samples = sample_chi(&cfg.params, cfg.chi_trials, cfg.chi_horizon, rng::mix(cfg.seed, 200))?;
        let cf = censored_fraction(&samples);
        let values: Vec<f64> = samples.iter().filter(|s| !s.censored).map(|s| s.chi).collect();
        match fit_exponential_tail_range(&values, cfg.fit_range.0, cfg.fit_range.1) {
            Ok(fit) => {
                let pass = fit.looks_exponential() && cf < 0.01;
                ChiReport { samples: samples.len(), censored_fraction: cf, fit: Some(fit), error: None, pass }
            }
            Err(e) => ChiReport { samples: samples.len(), censored_fraction: cf, fit: None, error: Some(e.to_string()), pass: false },
        }
    };
    let n_pass = n_count.iter().all(|r| r.pass) && (cfg.params.lambda == 0.0 || c_hat_max_deviation <= 0.2);
    Ok(LemmaSuite {
        format_version: FORMAT_VERSION,
        psi_pass: psi.iter().all(|r| r.pass),
        psi,
        n_count,
        c_hat_mean,
        c_hat_max_deviation,
        chi_pass: chi.pass,
        chi,
        n_pass,
    })
}

/// Constant used for phantom entries when no estimate is supplied.
pub fn estimate_c_hat(params: &ModelParams, seed: u64) -> Result<f64> {
    if params.lambda == 0.0 {
        return Ok(0.0);
    }
    Ok(lemma_n_count(params, 5, 1000, seed)?.c_hat)
}

pub const CSV_HEADER: &str = "grid_value,estimate,ci_low,ci_high,trials,failures,seed,format_version";

pub fn write_csv(result: &ExperimentResult, mut out: impl Write) -> Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in &result.rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.grid_value, r.estimate, r.ci_low, r.ci_high, r.trials, r.failures, r.seed, result.format_version
        )?;
    }
    Ok(())
}

pub fn write_json<T: Serialize>(value: &T, mut out: impl Write) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| Error::Format(e.to_string()))?;
    writeln!(out)?;
    Ok(())
}
