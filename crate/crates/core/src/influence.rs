//! Last exit from the space-time cone, influence radii and first entries
//! of particles into the cells of the oriented lattice.

use std::ops::ControlFlow;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::brownian::{BrownianPath, PathVisitor, FINE_PER_COARSE};
use crate::dynamics::lattice::{sample_walk, walk_residences, Jump};
use crate::dynamics::{ContinuumRealization, LatticeRealization, ParticleRealization};
use crate::error::{Error, Result};
use crate::model::{l2_dist, ModelParams, Mode, Site, TIME_SLACK};
use crate::rng;
use crate::stats::least_squares;

/// Horizon used for independent χ draws on the lattice.
pub const LATTICE_CHI_HORIZON: f64 = 200.0;
/// Horizon used for independent χ draws in the continuum.
pub const CONTINUUM_CHI_HORIZON: f64 = 400.0;
/// Residual above which a log-survival fit is flagged as non-exponential.
pub const TAIL_RESIDUAL_LIMIT: f64 = 0.5;

pub fn default_chi_horizon(mode: Mode) -> f64 {
    match mode {
        Mode::Lattice => LATTICE_CHI_HORIZON,
        Mode::Continuum => CONTINUUM_CHI_HORIZON,
    }
}

/// Last time `tau` a path is outside the cone `‖x‖ < δ s` and the largest
/// distance `chi` from its start over `[0, tau]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChiSample {
    pub tau: f64,
    pub chi: f64,
    /// Still outside the cone at the horizon; `tau` is then the horizon.
    pub censored: bool,
}

/// τ and χ from residences `(distance, start, end)` in time order. The last
/// residence is open-ended; the one before the horizon is cut there.
fn tau_chi_of(res: &[(f64, f64, f64)], delta: f64, horizon: f64) -> ChiSample {
    let mut tau: f64 = 0.0;
    let mut censored = false;
    for (i, &(r, a, b)) in res.iter().enumerate() {
        let exit = r / delta;
        if i + 1 == res.len() && exit > horizon {
            censored = true;
            tau = horizon;
        } else if a <= exit {
            let until = if i + 1 == res.len() { exit } else { b.min(exit) };
            tau = tau.max(until);
        }
    }
    let chi = res.iter().filter(|r| r.1 <= tau).map(|r| r.0).fold(0.0, f64::max);
    ChiSample { tau, chi, censored }
}

/// τ and χ of a walk started at the origin, observed until `horizon`.
pub fn tau_chi(jumps: &[Jump], dim: usize, delta: f64, horizon: f64) -> Result<ChiSample> {
    if !(delta > 0.0) {
        return Err(Error::InvalidParameter(format!("cone slope must be > 0, got {delta}")));
    }
    let origin = vec![0i64; dim];
    Ok(tau_chi_relative(&origin, jumps, &origin, 0.0, delta, horizon))
}

/// τ and χ of the walk `(origin, jumps)` relative to `(apex, t0)`, over `[t0, t0 + horizon]`.
fn tau_chi_relative(origin: &[i64], jumps: &[Jump], apex: &[i64], t0: f64, delta: f64, horizon: f64) -> ChiSample {
    let mut res = Vec::new();
    let end = t0 + horizon;
    let _ = walk_residences(origin, jumps, end, |r| {
        if r.end >= t0 && r.start <= end {
            let d2: i64 = r.pos.iter().zip(apex).map(|(p, q)| (p - q) * (p - q)).sum();
            res.push(((d2 as f64).sqrt(), r.start.max(t0) - t0, r.end.min(end) - t0));
        }
        ControlFlow::Continue(())
    });
    tau_chi_of(&res, delta, horizon)
}

struct LastOutside<'a> {
    apex: &'a [f64],
    n0: u64,
    dt: f64,
    delta: f64,
    found: Option<u64>,
}

impl PathVisitor for LastOutside<'_> {
    fn relevant(&mut self, t_a: f64, _: f64, c: &[f64], r: f64) -> bool {
        l2_dist(c, self.apex) + r >= self.delta * (t_a - self.n0 as f64 * self.dt) - 1e-12
    }

    fn visit(&mut self, n: u64, _: f64, pos: &[f64]) -> ControlFlow<()> {
        let s = (n - self.n0) as f64 * self.dt;
        if l2_dist(pos, self.apex) >= self.delta * s {
            self.found = Some(n);
            return ControlFlow::Break(());
        }
        ControlFlow::Continue(())
    }
}

struct FarthestPoint<'a> {
    apex: &'a [f64],
    best: f64,
}

impl PathVisitor for FarthestPoint<'_> {
    fn relevant(&mut self, _: f64, _: f64, c: &[f64], r: f64) -> bool {
        l2_dist(c, self.apex) + r > self.best
    }

    fn visit(&mut self, _: u64, _: f64, pos: &[f64]) -> ControlFlow<()> {
        self.best = self.best.max(l2_dist(pos, self.apex));
        ControlFlow::Continue(())
    }
}

/// τ and χ of a Brownian path relative to its grid point `n0`, on the grid.
pub fn tau_chi_brownian(path: &BrownianPath, n0: u64, delta: f64, horizon: f64) -> Result<ChiSample> {
    if !(delta > 0.0) {
        return Err(Error::InvalidParameter(format!("cone slope must be > 0, got {delta}")));
    }
    let dt = path.dt();
    let apex = path.point(n0);
    let n_end = (n0 + (horizon / dt + TIME_SLACK).floor() as u64).min(path.last_index());
    let (t0, t_end) = (path.time_of(n0), path.time_of(n_end));
    let mut exit = LastOutside { apex: &apex, n0, dt, delta, found: None };
    let _ = path.descend(t0, t_end, true, &mut exit);
    let n_tau = exit.found.unwrap_or(n0);
    let censored = n_tau == n_end && n_end > n0;
    let tau = (n_tau - n0) as f64 * dt;
    // coarse points in [n0, n_tau] are grid points: a lower bound that prunes early
    let d = path.dim();
    let best = (n0.div_ceil(FINE_PER_COARSE)..=n_tau / FINE_PER_COARSE)
        .map(|c| l2_dist(&path.coarse_points()[c as usize * d..(c as usize + 1) * d], &apex))
        .fold(0.0, f64::max);
    let mut far = FarthestPoint { apex: &apex, best };
    let _ = path.descend(t0, path.time_of(n_tau), false, &mut far);
    Ok(ChiSample { tau, chi: far.best, censored })
}

/// One χ draw for a fresh particle, keyed by `key`.
pub fn chi_draw(params: &ModelParams, key: u64, horizon: f64) -> Result<ChiSample> {
    let d = params.dim;
    match params.mode {
        Mode::Lattice => tau_chi(&sample_walk(key, d, params.jump_rate, horizon), d, params.delta(), horizon),
        Mode::Continuum => {
            let path = BrownianPath::sample(key, &vec![0.0; d], params.step_dt, horizon);
            tau_chi_brownian(&path, 0, params.delta(), horizon)
        }
    }
}

/// Independent τ/χ samples of walks (or Brownian paths) run to `horizon`.
pub fn sample_chi(params: &ModelParams, trials: usize, horizon: f64, seed: u64) -> Result<Vec<ChiSample>> {
    params.validate()?;
    if trials == 0 {
        return Err(Error::InvalidParameter("trials must be >= 1".into()));
    }
    let base = rng::mix(seed, rng::TAG_CHI);
    (0..trials as u64)
        .into_par_iter()
        .map(|t| chi_draw(params, rng::mix(base, t), horizon))
        .collect()
}

pub fn censored_fraction(samples: &[ChiSample]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples.iter().filter(|s| s.censored).count() as f64 / samples.len() as f64
}

/// Least-squares fit `log P(X >= x) ≈ log(prefactor) - rate * x`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailFit {
    pub rate: f64,
    pub prefactor: f64,
    pub residual: f64,
    pub points: usize,
    pub x_min: f64,
    pub x_max: f64,
}

impl TailFit {
    pub fn looks_exponential(&self) -> bool {
        self.rate > 0.0 && self.residual <= TAIL_RESIDUAL_LIMIT
    }
}

pub fn fit_exponential_tail(samples: &[f64], x_min: f64) -> Result<TailFit> {
    fit_exponential_tail_range(samples, x_min, f64::INFINITY)
}

/// Fit over distinct sample values in `[x_min, x_max]` whose empirical
/// survival is at least `10 / n`.
pub fn fit_exponential_tail_range(samples: &[f64], x_min: f64, x_max: f64) -> Result<TailFit> {
    let n = samples.len();
    let above = samples.iter().filter(|&&x| x >= x_min).count();
    if above < 100 {
        return Err(Error::InsufficientTail(format!(
            "{above} samples at or above {x_min}, need 100"
        )));
    }
    let mut sorted: Vec<f64> = samples.iter().copied().filter(|x| x.is_finite()).collect();
    sorted.sort_by(f64::total_cmp);
    let floor = 10.0 / n as f64;
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    let mut i = 0;
    while i < sorted.len() {
        let v = sorted[i];
        let surv = (sorted.len() - i) as f64 / n as f64;
        if v >= x_min && v <= x_max && surv >= floor {
            xs.push(v);
            ys.push(surv.ln());
        }
        while i < sorted.len() && sorted[i] == v {
            i += 1;
        }
    }
    if xs.len() < 2 {
        return Err(Error::DegenerateFit(format!("{} distinct tail values", xs.len())));
    }
    let (a, b) = least_squares(&xs, &ys)
        .ok_or_else(|| Error::DegenerateFit("tail values do not spread".into()))?;
    let residual = xs.iter().zip(&ys).map(|(x, y)| (y - a - b * x).abs()).fold(0.0, f64::max);
    Ok(TailFit {
        rate: -b,
        prefactor: a.exp(),
        residual,
        points: xs.len(),
        x_min: xs[0],
        x_max: xs[xs.len() - 1],
    })
}

/// Neighbourhood a site's entering particles (real or dominating) can reach
/// before settling into their cones.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InfluenceRegion {
    pub center: Site,
    /// Largest χ over the dominating particles.
    pub l: f64,
    /// Extra radius around the centre: 0 on the lattice, 10 in the continuum.
    pub margin: f64,
    /// Entry time and χ of each dominating particle; phantoms carry `NaN` times.
    pub hits: Vec<(f64, f64)>,
    pub m: usize,
}

impl InfluenceRegion {
    pub fn is_empty(&self) -> bool {
        self.m == 0
    }

    /// Radius of the ball `B`.
    pub fn radius(&self) -> f64 {
        self.margin + self.l
    }

    /// Half side of the square `Q`.
    pub fn half_side(&self) -> f64 {
        self.radius()
    }

    pub fn circumradius(&self) -> f64 {
        std::f64::consts::SQRT_2 * self.half_side()
    }

    pub fn ball_contains(&self, x: i64, y: i64) -> bool {
        if self.is_empty() {
            return false;
        }
        let (cx, cy) = self.center.plane().unwrap_or((0, 0));
        let (dx, dy) = ((x - cx) as f64, (y - cy) as f64);
        dx * dx + dy * dy <= self.radius() * self.radius()
    }

    pub fn square_contains(&self, x: i64, y: i64) -> bool {
        if self.is_empty() {
            return false;
        }
        let (cx, cy) = self.center.plane().unwrap_or((0, 0));
        let h = self.half_side();
        ((x - cx) as f64).abs() <= h && ((y - cy) as f64).abs() <= h
    }

    /// Integer bounds `(x_lo, x_hi, y_lo, y_hi)` of `Q`.
    pub fn square_bounds(&self) -> Option<(i64, i64, i64, i64)> {
        if self.is_empty() {
            return None;
        }
        let (cx, cy) = self.center.plane()?;
        let h = self.half_side().floor() as i64;
        Some((cx - h, cx + h, cy - h, cy + h))
    }
}

/// Region at `center` from real entries `hits` plus `m_dominating - hits.len()`
/// independent χ draws keyed by `(seed, center, phantom index)`.
pub fn build_influence_region(
    center: &Site,
    hits: &[(f64, f64)],
    m_dominating: usize,
    params: &ModelParams,
    seed: u64,
) -> Result<InfluenceRegion> {
    if m_dominating < hits.len() {
        return Err(Error::InvalidParameter(format!(
            "dominating count {m_dominating} below {} real entries",
            hits.len()
        )));
    }
    let mut all = hits.to_vec();
    let base = rng::mix(rng::mix(seed, rng::TAG_PHANTOM), rng::coords_key(&center.coords));
    let horizon = default_chi_horizon(params.mode);
    for j in 0..(m_dominating - hits.len()) as u64 {
        all.push((f64::NAN, chi_draw(params, rng::mix(base, j), horizon)?.chi));
    }
    let l = all.iter().map(|h| h.1).fold(0.0, f64::max);
    Ok(InfluenceRegion { center: center.clone(), l, margin: params.influence_margin(), hits: all, m: m_dominating })
}

/// Earliest instant a particle lies in some cell of levels `0..=depth`,
/// with every cell it lies in at that instant.
#[derive(Clone, Debug, PartialEq)]
pub struct FirstHit {
    pub particle: usize,
    pub time: f64,
    /// Grid index of the hit (continuum only).
    pub grid_index: Option<u64>,
    pub sites: Vec<(i64, i64)>,
}

fn lattice_first_hit(r: &LatticeRealization, k: usize, depth: u64) -> Option<FirstHit> {
    let p = r.params();
    let mut hit: Option<FirstHit> = None;
    let _ = r.for_each_residence(k, |res| {
        if let Some(h) = &hit {
            if res.start > h.time {
                return ControlFlow::Break(());
            }
        }
        if !res.in_plane {
            return ControlFlow::Continue(());
        }
        let l = res.planar_l1();
        if l > depth {
            return ControlFlow::Continue(());
        }
        let (ts, te) = (p.level_start(l), p.level_end(l));
        if res.start <= te && res.end >= ts {
            let t = res.start.max(ts);
            let site = (res.pos[0], res.pos[1]);
            match &mut hit {
                None => hit = Some(FirstHit { particle: k, time: t, grid_index: None, sites: vec![site] }),
                Some(h) if t == h.time => h.sites.push(site),
                _ => {}
            }
        }
        ControlFlow::Continue(())
    });
    hit
}

/// Planar sites of levels containing time `t` (at most `depth`) within
/// `radius` of `pos`.
pub(crate) fn cells_near(pos: &[f64], t: f64, params: &ModelParams, depth: u64, radius: f64, out: &mut Vec<(i64, i64)>) {
    let trailing: f64 = pos[2..].iter().map(|c| c * c).sum();
    if trailing > radius * radius {
        return;
    }
    let ts = t * params.speed;
    let k_hi = (ts + TIME_SLACK).floor();
    if k_hi < 0.0 {
        return;
    }
    let k_hi = k_hi as u64;
    let k_lo = if (ts - k_hi as f64).abs() <= TIME_SLACK && k_hi > 0 { k_hi - 1 } else { k_hi };
    let r2 = radius * radius - trailing;
    let (x0, x1) = ((pos[0] - radius).ceil() as i64, (pos[0] + radius).floor() as i64);
    let (y0, y1) = ((pos[1] - radius).ceil() as i64, (pos[1] + radius).floor() as i64);
    for x in x0..=x1 {
        for y in y0..=y1 {
            let l = x.unsigned_abs() + y.unsigned_abs();
            if l < k_lo || l > k_hi.min(depth) {
                continue;
            }
            let (dx, dy) = (x as f64 - pos[0], y as f64 - pos[1]);
            if dx * dx + dy * dy <= r2 {
                out.push((x, y));
            }
        }
    }
}

/// Whether a ball `(c, r)` observed during `[t_a, t_b]` can come within
/// `radius` of a cell of levels `0..=depth` active then.
pub(crate) fn cells_plausible(c: &[f64], r: f64, t_a: f64, t_b: f64, params: &ModelParams, depth: u64, radius: f64) -> bool {
    let reach = r + radius;
    let trailing: f64 = c[2..].iter().map(|v| v * v).sum::<f64>().sqrt();
    if trailing > reach {
        return false;
    }
    let k_a = (t_a * params.speed - TIME_SLACK).floor() - 1.0;
    let k_b = ((t_b * params.speed + TIME_SLACK).floor()).min(depth as f64);
    if k_b < 0.0 || k_a > depth as f64 {
        return false;
    }
    let l1 = c[0].abs() + c[1].abs();
    let slack = std::f64::consts::SQRT_2 * reach;
    l1 >= k_a - slack && l1 <= k_b + slack
}

/// Grid index, time and sites of a first entry.
type Entry = (u64, f64, Vec<(i64, i64)>);

struct FirstCell<'a> {
    params: &'a ModelParams,
    depth: u64,
    radius: f64,
    found: Option<Entry>,
    scratch: Vec<(i64, i64)>,
}

impl PathVisitor for FirstCell<'_> {
    fn relevant(&mut self, t_a: f64, t_b: f64, c: &[f64], r: f64) -> bool {
        cells_plausible(c, r, t_a, t_b, self.params, self.depth, self.radius)
    }

    fn visit(&mut self, n: u64, t: f64, pos: &[f64]) -> ControlFlow<()> {
        self.scratch.clear();
        cells_near(pos, t, self.params, self.depth, self.radius, &mut self.scratch);
        if self.scratch.is_empty() {
            return ControlFlow::Continue(());
        }
        self.found = Some((n, t, std::mem::take(&mut self.scratch)));
        ControlFlow::Break(())
    }
}

fn continuum_first_hit(r: &ContinuumRealization, k: usize, depth: u64) -> Option<FirstHit> {
    let p = r.params();
    let mut v = FirstCell { params: p, depth, radius: p.cell_radius(), found: None, scratch: Vec::new() };
    let horizon = p.level_end(depth).min(r.window().horizon);
    let _ = r.path(k).descend(0.0, horizon, false, &mut v);
    v.found.map(|(n, t, sites)| FirstHit { particle: k, time: t, grid_index: Some(n), sites })
}

/// First entries of every particle into cells of levels `0..=depth`.
pub fn first_hits(realization: &ParticleRealization, depth: u64) -> Result<Vec<FirstHit>> {
    let p = realization.params();
    let w = realization.window();
    if w.horizon + 1e-9 < p.level_end(depth) {
        return Err(Error::OutsideWindow(format!(
            "horizon {} does not cover level {depth}",
            w.horizon
        )));
    }
    let reach = depth as f64 + p.cell_radius();
    if w.half_extent[0] + 1e-9 < reach || w.half_extent[1] + 1e-9 < reach {
        return Err(Error::OutsideWindow(format!("window does not cover level {depth}")));
    }
    Ok(match realization {
        ParticleRealization::Lattice(r) => (0..r.len()).filter_map(|k| lattice_first_hit(r, k, depth)).collect(),
        ParticleRealization::Continuum(r) => (0..r.len()).filter_map(|k| continuum_first_hit(r, k, depth)).collect(),
    })
}

/// χ of the particle of `hit` relative to each of its hit sites (lattice)
/// or to its hit point (continuum), over `chi_horizon` after the hit.
pub fn hit_chis(realization: &ParticleRealization, hit: &FirstHit, chi_horizon: f64) -> Result<Vec<ChiSample>> {
    let p = realization.params();
    let delta = p.delta();
    match realization {
        ParticleRealization::Lattice(r) => {
            let k = hit.particle;
            let end = hit.time + chi_horizon;
            let jumps = r.jumps_until(k, end);
            let horizon = if r.is_extendable() { chi_horizon } else { (r.window().horizon - hit.time).max(0.0) };
            Ok(hit
                .sites
                .iter()
                .map(|&(x, y)| {
                    let apex = Site::planar(x, y, p.dim).coords;
                    tau_chi_relative(r.origin(k), &jumps, &apex, hit.time, delta, horizon)
                })
                .collect())
        }
        ParticleRealization::Continuum(r) => {
            let n0 = hit.grid_index.ok_or_else(|| Error::InvalidParameter("continuum hit without grid index".into()))?;
            let path = r.path_until(hit.particle, hit.time + chi_horizon);
            let s = tau_chi_brownian(&path, n0, delta, chi_horizon)?;
            Ok(vec![s; hit.sites.len()])
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::SimulationWindow;
    use proptest::prelude::*;

    fn j(time: f64, axis: u8, step: i8) -> Jump {
        Jump { time, axis, step }
    }

    #[test]
    fn reference_walks() {
        let s = tau_chi(&[], 2, 0.25, 50.0).unwrap();
        assert_eq!((s.tau, s.chi, s.censored), (0.0, 0.0, false));
        let s = tau_chi(&[j(1.0, 0, 1)], 2, 0.25, 50.0).unwrap();
        assert_eq!((s.tau, s.chi), (4.0, 1.0));
        let s = tau_chi(&[j(1.0, 0, 1), j(2.0, 0, 1)], 2, 0.25, 50.0).unwrap();
        assert_eq!((s.tau, s.chi), (8.0, 2.0));
        let s = tau_chi(&[j(1.0, 0, 1)], 2, 0.25, 3.0).unwrap();
        assert!(s.censored);
        assert_eq!(s.tau, 3.0);
        assert!(tau_chi(&[], 2, 0.0, 1.0).is_err());
    }

    /// Scan of a fine time grid: τ is the last grid time outside the cone.
    fn grid_scan(jumps: &[Jump], delta: f64, horizon: f64, step: f64) -> (f64, f64) {
        let n = (horizon / step).round() as usize;
        let pos_at = |t: f64| {
            let mut p = [0i64; 2];
            for jj in jumps.iter().take_while(|jj| jj.time <= t) {
                p[jj.axis as usize] += jj.step as i64;
            }
            ((p[0] * p[0] + p[1] * p[1]) as f64).sqrt()
        };
        let mut tau: f64 = 0.0;
        for i in 0..=n {
            let t = i as f64 * step;
            if pos_at(t) >= delta * t {
                tau = t;
            }
        }
        let mut chi: f64 = 0.0;
        for i in 0..=n {
            let t = i as f64 * step;
            if t <= tau + step {
                chi = chi.max(pos_at(t));
            }
        }
        (tau, chi)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn matches_grid_scan(times in prop::collection::vec(0.01f64..6.0, 0..8), dirs in prop::collection::vec(0usize..4, 8)) {
            let mut ts = times.clone();
            ts.sort_by(f64::total_cmp);
            ts.dedup();
            let jumps: Vec<Jump> = ts.iter().zip(&dirs).map(|(&t, &d)| j(t, (d / 2) as u8, if d % 2 == 0 { 1 } else { -1 })).collect();
            let delta = 0.5;
            let horizon = 40.0;
            let s = tau_chi(&jumps, 2, delta, horizon).unwrap();
            prop_assert!(!s.censored);
            let (tau, chi) = grid_scan(&jumps, delta, horizon, 1e-3);
            prop_assert!((s.tau - tau).abs() <= 1e-3 + 1e-9, "{} vs {}", s.tau, tau);
            prop_assert!((s.chi - chi).abs() < 1e-9 || s.chi >= chi, "{} vs {}", s.chi, chi);
        }

        #[test]
        fn wider_cone_never_increases(seed in any::<u64>(), d1 in 0.05f64..1.0, extra in 0.0f64..1.0) {
            let jumps = sample_walk(seed, 2, 1.0, 60.0);
            let a = tau_chi(&jumps, 2, d1, 60.0).unwrap();
            let b = tau_chi(&jumps, 2, d1 + extra, 60.0).unwrap();
            prop_assert!(b.tau <= a.tau && b.chi <= a.chi);
        }
    }

    #[test]
    fn huge_cone_swallows_everything() {
        let p = ModelParams::lattice(0.1, 1e9, 2).unwrap();
        let s = sample_chi(&p, 500, 50.0, 3).unwrap();
        assert!(s.iter().all(|c| c.tau < 1e-6 && !c.censored));
        assert_eq!(sample_chi(&p, 1, 50.0, 9).unwrap(), sample_chi(&p, 1, 50.0, 9).unwrap());
    }

    #[test]
    fn brownian_tau_chi_matches_scan() {
        for k in 0..50u64 {
            let path = BrownianPath::sample(rng::mix(70, k), &[0.0, 0.0], 0.01, 30.0);
            let s = tau_chi_brownian(&path, 0, 0.5, 30.0).unwrap();
            let n_end = 3000u64;
            let mut tau_n = 0;
            for n in 0..=n_end {
                if path.point(n).iter().map(|v| v * v).sum::<f64>().sqrt() >= 0.5 * n as f64 * 0.01 {
                    tau_n = n;
                }
            }
            let chi = (0..=tau_n).map(|n| path.point(n).iter().map(|v| v * v).sum::<f64>().sqrt()).fold(0.0, f64::max);
            assert_eq!(s.tau, tau_n as f64 * 0.01);
            assert!((s.chi - chi).abs() < 1e-12);
            assert_eq!(s.censored, tau_n == n_end);
        }
    }

    #[test]
    fn brownian_tau_chi_long_horizon() {
        let delta = 1.0 / (4.0 * 2f64.sqrt());
        for k in 0..4u64 {
            let path = BrownianPath::sample(rng::mix(71, k), &[0.0, 0.0], 0.01, 150.0);
            let s = tau_chi_brownian(&path, 0, delta, 150.0).unwrap();
            let norm = |n: u64| path.point(n).iter().map(|v| v * v).sum::<f64>().sqrt();
            let tau_n = (0..=15_000u64).filter(|&n| norm(n) >= delta * n as f64 * 0.01).max().unwrap_or(0);
            let chi = (0..=tau_n).map(norm).fold(0.0, f64::max);
            assert_eq!(s.tau, tau_n as f64 * 0.01);
            assert!((s.chi - chi).abs() < 1e-12);
        }
    }

    #[test]
    fn exponential_fit_recovers_rate() {
        let xs: Vec<f64> = (0..100_000u64).map(|k| -rng::unit_open(rng::mix(5, k)).ln() / 2.0).collect();
        let f = fit_exponential_tail(&xs, 0.0).unwrap();
        assert!((1.8..=2.2).contains(&f.rate), "{f:?}");
        assert!(f.looks_exponential());
    }

    #[test]
    fn pareto_fit_is_flagged() {
        let xs: Vec<f64> = (0..100_000u64).map(|k| rng::unit_open(rng::mix(6, k)).powf(-1.0 / 1.5)).collect();
        let f = fit_exponential_tail(&xs, 1.0).unwrap();
        assert!(!f.looks_exponential(), "{f:?}");
    }

    #[test]
    fn degenerate_fits_rejected() {
        assert!(matches!(fit_exponential_tail(&[3.0; 500], 1.0), Err(Error::DegenerateFit(_))));
        assert!(matches!(fit_exponential_tail(&[3.0; 50], 1.0), Err(Error::InsufficientTail(_))));
    }

    #[test]
    fn region_geometry() {
        let p = ModelParams::lattice(0.1, 1.0, 2).unwrap();
        let c = Site::planar(3, 1, 2);
        assert!(build_influence_region(&c, &[], 0, &p, 1).unwrap().is_empty());
        let r = build_influence_region(&c, &[(1.0, 1.2), (2.0, 2.3)], 2, &p, 1).unwrap();
        assert_eq!(r.square_bounds(), Some((1, 5, -1, 3)));
        assert!((r.circumradius() - 3.2527).abs() < 1e-4);
        for x in -3..10 {
            for y in -6..8 {
                if r.ball_contains(x, y) {
                    assert!(r.square_contains(x, y));
                }
            }
        }
        let small = build_influence_region(&c, &[(1.0, 0.4)], 1, &p, 1).unwrap();
        assert_eq!(small.square_bounds(), Some((3, 3, 1, 1)));
        assert!(build_influence_region(&c, &[(1.0, 0.4)], 0, &p, 1).is_err());
        let with_phantoms = build_influence_region(&c, &[(1.0, 0.4)], 4, &p, 1).unwrap();
        assert_eq!(with_phantoms.hits.len(), 4);
        assert!(with_phantoms.hits[1..].iter().all(|h| h.0.is_nan()));
    }

    #[test]
    fn particles_stay_in_cone_after_tau() {
        let p = ModelParams::lattice(0.3, 1.0, 2).unwrap();
        let w = SimulationWindow::for_depth(&p, 8).unwrap();
        let delta = p.delta();
        for seed in 0..20 {
            let r = ParticleRealization::sample(&p, &w, seed).unwrap();
            let lat = r.as_lattice().unwrap();
            for h in first_hits(&r, 8).unwrap() {
                let chis = hit_chis(&r, &h, 200.0).unwrap();
                let jumps = lat.jumps_until(h.particle, h.time + 200.0);
                for (&(x, y), s) in h.sites.iter().zip(&chis) {
                    if s.censored {
                        continue;
                    }
                    let _ = walk_residences(lat.origin(h.particle), &jumps, h.time + 200.0, |res| {
                        // strictly after tau every residence is inside the cone
                        let from = res.start.max(h.time + s.tau);
                        if res.end > from + 1e-9 {
                            let (dx, dy) = ((res.pos[0] - x) as f64, (res.pos[1] - y) as f64);
                            assert!((dx * dx + dy * dy).sqrt() <= delta * (from - h.time) + 1e-9);
                        }
                        ControlFlow::Continue(())
                    });
                }
            }
        }
    }

    #[test]
    fn first_hits_are_earliest() {
        let p = ModelParams::lattice(0.5, 1.0, 2).unwrap();
        let w = SimulationWindow::for_depth(&p, 6).unwrap();
        for seed in 0..30 {
            let r = ParticleRealization::sample(&p, &w, seed).unwrap();
            let lat = r.as_lattice().unwrap();
            let hits = first_hits(&r, 6).unwrap();
            for h in &hits {
                for &(x, y) in &h.sites {
                    let l = (x.abs() + y.abs()) as u64;
                    assert!(h.time >= p.level_start(l) - 1e-12 && h.time <= p.level_end(l) + 1e-12);
                }
                // no earlier instant in any cell
                let _ = lat.for_each_residence(h.particle, |res| {
                    if res.in_plane && res.planar_l1() <= 6 {
                        let l = res.planar_l1();
                        if res.start <= p.level_end(l) && res.end >= p.level_start(l) {
                            assert!(res.start.max(p.level_start(l)) >= h.time);
                        }
                    }
                    ControlFlow::Continue(())
                });
            }
        }
    }
}
