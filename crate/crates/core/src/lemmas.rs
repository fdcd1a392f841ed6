//! Monte Carlo oracles for the intensity of surviving particles and for the
//! Poisson domination of per-site entry counts.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{ParticleRealization, SimulationWindow};
use crate::error::{Error, Result};
use crate::influence::first_hits;
use crate::model::{planar_level, ModelParams};
use crate::rng;
use crate::stats::{correlation, poisson_tail, Moments};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeStat {
    pub site: (i64, i64),
    pub mean: f64,
    pub std_error: f64,
}

/// Counts, at time `k / S`, of particles that never entered a cell of a
/// level below `k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PsiReport {
    pub k: u64,
    pub lambda: f64,
    pub trials: u64,
    pub probes: Vec<ProbeStat>,
    /// Largest `mean - lambda - 3 SE` over the probe box (pass when `<= 0`).
    pub worst_excess: f64,
    /// A site too far away to have been thinned.
    pub far_probe: ProbeStat,
    pub far_within_noise: bool,
    pub correlation: f64,
    pub correlation_ok: bool,
    pub pass: bool,
}

fn probe_sites(radius: u64) -> Vec<(i64, i64)> {
    (0..=radius).flat_map(planar_level).collect()
}

/// Distance beyond which reaching the cells of levels `< k` before `k / S`
/// needs more than `m` jumps with negligible probability.
fn far_distance(params: &ModelParams, k: u64) -> i64 {
    let mean = k as f64 * params.jump_rate / params.speed;
    let mut m = mean.ceil() as i64 + 1;
    while crate::stats::poisson_tail_bound(mean, m as f64) > 1e-12 {
        m += 1;
    }
    k as i64 + m
}

pub fn lemma_psi_intensity(params: &ModelParams, k: u64, trials: u64, seed: u64) -> Result<PsiReport> {
    if k < 1 || trials < 2 {
        return Err(Error::InvalidParameter("need k >= 1 and trials >= 2".into()));
    }
    let d = params.dim;
    let far = far_distance(params, k);
    let window = SimulationWindow::for_region(params, far as f64, params.level_start(k))?;
    let probes = probe_sites(k + 1);
    let pair = [(k as i64 + 1, 0), (-(k as i64) - 1, 0)];
    let pair_idx: Vec<usize> = pair.iter().map(|s| probes.iter().position(|p| p == s).unwrap()).collect();
    let rows: Vec<(Vec<u32>, u32)> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let r = ParticleRealization::sample(params, &window, rng::trial_seed(seed, t))?;
            let mut killed = vec![false; r.len()];
            for h in first_hits(&r, k - 1)? {
                killed[h.particle] = true;
            }
            let mut counts = vec![0u32; probes.len()];
            let mut far_count = 0;
            let time = params.level_start(k);
            for (pos, dead) in r.positions_at(time).iter().zip(&killed) {
                if *dead || pos[2..d].iter().any(|&c| c != 0.0) {
                    continue;
                }
                let (x, y) = (pos[0] as i64, pos[1] as i64);
                if (x, y) == (far, 0) {
                    far_count += 1;
                }
                if let Some(i) = probes.iter().position(|&s| s == (x, y)) {
                    counts[i] += 1;
                }
            }
            Ok((counts, far_count))
        })
        .collect::<Result<_>>()?;
    let stat = |site, vals: &mut dyn Iterator<Item = f64>| {
        let mut m = Moments::default();
        vals.for_each(|v| m.push(v));
        ProbeStat { site, mean: m.mean(), std_error: m.std_error() }
    };
    let probe_stats: Vec<ProbeStat> = probes
        .iter()
        .enumerate()
        .map(|(i, &s)| stat(s, &mut rows.iter().map(|r| r.0[i] as f64)))
        .collect();
    let lambda = params.lambda;
    let worst_excess = probe_stats
        .iter()
        .map(|p| p.mean - lambda - 3.0 * p.std_error)
        .fold(f64::NEG_INFINITY, f64::max);
    let far_probe = stat((far, 0), &mut rows.iter().map(|r| r.1 as f64));
    let far_within_noise = (far_probe.mean - lambda).abs() <= 3.0 * far_probe.std_error.max((lambda / trials as f64).sqrt());
    let a: Vec<f64> = rows.iter().map(|r| r.0[pair_idx[0]] as f64).collect();
    let b: Vec<f64> = rows.iter().map(|r| r.0[pair_idx[1]] as f64).collect();
    let corr = correlation(&a, &b);
    let correlation_ok = corr.abs() <= 3.0 / (trials as f64).sqrt();
    Ok(PsiReport {
        k,
        lambda,
        trials,
        probes: probe_stats,
        worst_excess,
        far_probe,
        far_within_noise,
        correlation: corr,
        correlation_ok,
        pass: worst_excess <= 0.0 && far_within_noise && correlation_ok,
    })
}

/// Statistics of `N_i` pooled over sites of `J_k` related by a lattice symmetry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassStat {
    /// `(min(|x|,|y|), max(|x|,|y|))`.
    pub class: (u64, u64),
    pub samples: u64,
    pub mean: f64,
    pub std_error: f64,
    /// Empirical `P(N_i >= m)` for `m = 1..=5`.
    pub tail: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailCheck {
    pub m: u64,
    pub worst_empirical: f64,
    pub poisson: f64,
    pub slack: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NCountReport {
    pub k: u64,
    pub lambda: f64,
    pub trials: u64,
    pub classes: Vec<ClassStat>,
    /// Largest class mean divided by lambda.
    pub c_hat: f64,
    pub tail: Vec<TailCheck>,
    /// A particle first entered two cells of `J_k` at the same instant.
    pub simultaneous_entries: u64,
    pub pass: bool,
}

pub const TAIL_THRESHOLDS: u64 = 5;

/// Counts `N_i`, `i` in `J_k`: particles whose first entry into any cell of
/// levels `0..=k` is into the cell of `i`.
pub fn lemma_n_count(params: &ModelParams, k: u64, trials: u64, seed: u64) -> Result<NCountReport> {
    if k < 1 || trials < 2 {
        return Err(Error::InvalidParameter("need k >= 1 and trials >= 2".into()));
    }
    let window = SimulationWindow::for_depth(params, k)?;
    let sites = planar_level(k);
    let rows: Vec<(Vec<u32>, u64)> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let r = ParticleRealization::sample(params, &window, rng::trial_seed(seed, t))?;
            let mut counts = vec![0u32; sites.len()];
            let mut simultaneous = 0;
            for h in first_hits(&r, k)? {
                let min_level = h.sites.iter().map(|s| s.0.unsigned_abs() + s.1.unsigned_abs()).min();
                if min_level != Some(k) {
                    continue;
                }
                if h.sites.len() > 1 {
                    simultaneous += 1;
                }
                for s in &h.sites {
                    counts[sites.binary_search(s).expect("level site")] += 1;
                }
            }
            Ok((counts, simultaneous))
        })
        .collect::<Result<_>>()?;
    let mut pooled: BTreeMap<(u64, u64), Vec<u32>> = BTreeMap::new();
    for (i, &(x, y)) in sites.iter().enumerate() {
        let (a, b) = (x.unsigned_abs(), y.unsigned_abs());
        let e = pooled.entry((a.min(b), a.max(b))).or_default();
        e.extend(rows.iter().map(|r| r.0[i]));
    }
    let classes: Vec<ClassStat> = pooled
        .into_iter()
        .map(|(class, v)| {
            let mut m = Moments::default();
            v.iter().for_each(|&c| m.push(c as f64));
            let n = v.len() as f64;
            let tail = (1..=TAIL_THRESHOLDS).map(|t| v.iter().filter(|&&c| c as u64 >= t).count() as f64 / n).collect();
            ClassStat { class, samples: v.len() as u64, mean: m.mean(), std_error: m.std_error(), tail }
        })
        .collect();
    let lambda = params.lambda;
    let max_mean = classes.iter().map(|c| c.mean).fold(0.0, f64::max);
    let c_hat = if lambda > 0.0 { max_mean / lambda } else { 0.0 };
    let tail: Vec<TailCheck> = (1..=TAIL_THRESHOLDS)
        .map(|m| {
            let poisson = poisson_tail(c_hat * lambda, m);
            let mut worst = 0.0;
            let mut pass = true;
            let mut worst_slack = 0.0;
            for c in &classes {
                let p = c.tail[(m - 1) as usize];
                let se = (p * (1.0 - p) / c.samples as f64).sqrt();
                if p - 3.0 * se > poisson {
                    pass = false;
                }
                if p >= worst {
                    worst = p;
                    worst_slack = 3.0 * se;
                }
            }
            TailCheck { m, worst_empirical: worst, poisson, slack: worst_slack, pass }
        })
        .collect();
    let pass = tail.iter().all(|t| t.pass) && c_hat.is_finite();
    Ok(NCountReport {
        k,
        lambda,
        trials,
        classes,
        c_hat,
        tail,
        simultaneous_entries: rows.iter().map(|r| r.1).sum(),
        pass,
    })
}

/// Spread of `c_hat` across reports: `(mean, largest relative deviation)`.
pub fn c_hat_spread(reports: &[NCountReport]) -> (f64, f64) {
    let mean = reports.iter().map(|r| r.c_hat).sum::<f64>() / reports.len().max(1) as f64;
    let dev = reports
        .iter()
        .map(|r| if mean > 0.0 { (r.c_hat - mean).abs() / mean } else { 0.0 })
        .fold(0.0, f64::max);
    (mean, dev)
}
