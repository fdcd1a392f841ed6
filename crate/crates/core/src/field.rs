//! Vacancy indicators of space-time cells, the blocked-square field that
//! they dominate, and oriented vacant paths across levels.

use std::io::Write;
use std::ops::ControlFlow;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::brownian::PathVisitor;
use crate::dynamics::{ParticleRealization, SimulationWindow};
use crate::error::{Error, Result};
use crate::influence::{
    build_influence_region, cells_near, cells_plausible, default_chi_horizon, first_hits, hit_chis, InfluenceRegion,
};
use crate::model::{for_each_planar_successor, ModelParams, Site};
use crate::rng::{self, arrival_marks};
use crate::stats::Proportion;

/// Version tag written into every exported file.
pub const FORMAT_VERSION: u32 = 1;

/// Boolean values on the planar diamond `|x| + |y| <= depth`, stored in
/// the enclosing square.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diamond {
    pub depth: u64,
    values: Vec<bool>,
}

impl Diamond {
    pub fn filled(depth: u64, value: bool) -> Self {
        let side = 2 * depth as usize + 1;
        Self { depth, values: vec![value; side * side] }
    }

    pub fn from_fn(depth: u64, mut f: impl FnMut(i64, i64) -> bool) -> Self {
        let mut d = Self::filled(depth, false);
        for (x, y) in d.sites() {
            let v = f(x, y);
            d.set(x, y, v);
        }
        d
    }

    fn index(&self, x: i64, y: i64) -> Option<usize> {
        let r = self.depth as i64;
        if x.unsigned_abs() + y.unsigned_abs() > self.depth {
            return None;
        }
        let side = 2 * r + 1;
        Some(((x + r) * side + (y + r)) as usize)
    }

    pub fn get(&self, x: i64, y: i64) -> Option<bool> {
        self.index(x, y).map(|i| self.values[i])
    }

    pub fn set(&mut self, x: i64, y: i64, v: bool) {
        if let Some(i) = self.index(x, y) {
            self.values[i] = v;
        }
    }

    /// Sites level by level, lexicographic inside a level.
    pub fn sites(&self) -> impl Iterator<Item = (i64, i64)> {
        (0..=self.depth).flat_map(crate::model::planar_level)
    }
}

/// `E_i` for every planar site up to `depth`: true when no particle touches
/// the cell of `i` during its time interval.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VacancyField {
    pub depth: u64,
    pub dim: usize,
    pub seed: u64,
    pub lambda: f64,
    pub vacant: Diamond,
}

impl VacancyField {
    pub fn all_vacant(depth: u64, dim: usize) -> Self {
        Self { depth, dim, seed: 0, lambda: 0.0, vacant: Diamond::filled(depth, true) }
    }

    pub fn from_fn(depth: u64, dim: usize, f: impl FnMut(i64, i64) -> bool) -> Self {
        Self { depth, dim, seed: 0, lambda: 0.0, vacant: Diamond::from_fn(depth, f) }
    }

    pub fn get(&self, x: i64, y: i64) -> Option<bool> {
        self.vacant.get(x, y)
    }
}

fn check_covers(window: &SimulationWindow, params: &ModelParams, depth: u64) -> Result<()> {
    let reach = depth as f64 + params.cell_radius();
    let ok = window.horizon + 1e-9 >= params.level_end(depth)
        && window.half_extent[0] + 1e-9 >= reach
        && window.half_extent[1] + 1e-9 >= reach
        && window.half_extent[2..].iter().all(|h| *h + 1e-9 >= params.cell_radius());
    if ok {
        Ok(())
    } else {
        Err(Error::OutsideWindow(format!("window does not certify cells up to level {depth}")))
    }
}

struct MarkCells<'a> {
    params: &'a ModelParams,
    depth: u64,
    radius: f64,
    field: &'a mut Diamond,
    scratch: Vec<(i64, i64)>,
}

impl PathVisitor for MarkCells<'_> {
    fn relevant(&mut self, t_a: f64, t_b: f64, c: &[f64], r: f64) -> bool {
        cells_plausible(c, r, t_a, t_b, self.params, self.depth, self.radius)
    }

    fn visit(&mut self, _: u64, t: f64, pos: &[f64]) -> ControlFlow<()> {
        self.scratch.clear();
        cells_near(pos, t, self.params, self.depth, self.radius, &mut self.scratch);
        for &(x, y) in &self.scratch {
            self.field.set(x, y, false);
        }
        ControlFlow::Continue(())
    }
}

/// Exact vacancy indicators from the realization, for levels `0..=depth`.
/// Sites with a coordinate beyond `radius_cap` are reported occupied.
pub fn compute_vacancy_field(realization: &ParticleRealization, depth: u64, radius_cap: Option<i64>) -> Result<VacancyField> {
    let p = realization.params();
    check_covers(realization.window(), p, depth)?;
    let mut vacant = Diamond::filled(depth, true);
    match realization {
        ParticleRealization::Lattice(r) => {
            let t_max = p.level_end(depth);
            for k in 0..r.len() {
                let _ = r.for_each_residence(k, |res| {
                    if res.start > t_max {
                        return ControlFlow::Break(());
                    }
                    let l = res.planar_l1();
                    if res.in_plane && l <= depth && res.start <= p.level_end(l) && res.end >= p.level_start(l) {
                        vacant.set(res.pos[0], res.pos[1], false);
                    }
                    ControlFlow::Continue(())
                });
            }
        }
        ParticleRealization::Continuum(r) => {
            let mut v = MarkCells { params: p, depth, radius: p.cell_radius(), field: &mut vacant, scratch: Vec::new() };
            for path in r.paths() {
                let _ = path.descend(0.0, p.level_end(depth), false, &mut v);
            }
        }
    }
    if let Some(cap) = radius_cap {
        for (x, y) in vacant.sites().collect::<Vec<_>>() {
            if x.abs() > cap || y.abs() > cap {
                vacant.set(x, y, false);
            }
        }
    }
    Ok(VacancyField { depth, dim: p.dim, seed: realization.seed(), lambda: p.lambda, vacant })
}

/// Sites from which an open oriented path continues to `depth`.
fn good_sites(open: &Diamond, depth: u64) -> Diamond {
    let mut good = Diamond::filled(depth, false);
    for k in (0..=depth).rev() {
        for (x, y) in crate::model::planar_level(k) {
            if open.get(x, y) != Some(true) {
                continue;
            }
            let mut ok = k == depth;
            if !ok {
                for_each_planar_successor(x, y, |a, b| ok |= good.get(a, b) == Some(true));
            }
            good.set(x, y, ok);
        }
    }
    good
}

/// Oriented path through open sites from the origin to level `depth`,
/// taking the lexicographically smallest viable successor at each step.
pub fn find_open_path(open: &Diamond, depth: u64) -> Option<Vec<(i64, i64)>> {
    if depth > open.depth {
        return None;
    }
    let good = good_sites(open, depth);
    if good.get(0, 0) != Some(true) {
        return None;
    }
    let mut path = vec![(0, 0)];
    let (mut x, mut y) = (0, 0);
    for _ in 0..depth {
        let mut best: Option<(i64, i64)> = None;
        for_each_planar_successor(x, y, |a, b| {
            if good.get(a, b) == Some(true) && best.is_none_or(|s| (a, b) < s) {
                best = Some((a, b));
            }
        });
        (x, y) = best.expect("a good site has a good successor");
        path.push((x, y));
    }
    Some(path)
}

pub fn find_oriented_vacant_path(field: &VacancyField, depth: u64) -> Option<Vec<Site>> {
    find_open_path(&field.vacant, depth)
        .map(|p| p.into_iter().map(|(x, y)| Site::planar(x, y, field.dim)).collect())
}

/// Number of open sites per level reachable from the origin by open oriented paths.
pub fn reachable_counts(open: &Diamond, depth: u64) -> Vec<usize> {
    let mut reach = Diamond::filled(open.depth, false);
    let mut counts = Vec::new();
    if open.get(0, 0) == Some(true) {
        reach.set(0, 0, true);
    }
    for k in 0..=depth.min(open.depth) {
        let level = crate::model::planar_level(k);
        counts.push(level.iter().filter(|&&(x, y)| reach.get(x, y) == Some(true)).count());
        for (x, y) in level {
            if reach.get(x, y) == Some(true) {
                for_each_planar_successor(x, y, |a, b| {
                    if open.get(a, b) == Some(true) {
                        reach.set(a, b, true);
                    }
                });
            }
        }
    }
    counts
}

/// `Y` indicators built from influence regions of particle entries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockedField {
    pub depth: u64,
    pub c_hat: f64,
    /// `Y_i = 0` iff `i` lies in the square of a region at a level `<= |i|_1`.
    pub open: Diamond,
    /// `Y_i = 0` iff `i` lies in the square of a region on its own level.
    pub open_level: Diamond,
    /// Non-empty regions only.
    pub regions: Vec<InfluenceRegion>,
}

impl BlockedField {
    pub fn get(&self, x: i64, y: i64) -> Option<bool> {
        self.open.get(x, y)
    }

    pub fn get_level(&self, x: i64, y: i64) -> Option<bool> {
        self.open_level.get(x, y)
    }
}

/// Builds `Y` from the realization's first entries into cells up to `depth`,
/// each region dominated by `N_i` real entries plus a Poisson(`c_hat * lambda`)
/// number of phantom entries with independent χ draws.
pub fn compute_blocked_field(realization: &ParticleRealization, chi_seed: u64, depth: u64, c_hat: f64) -> Result<BlockedField> {
    let p = realization.params();
    if !(c_hat >= 0.0) || !c_hat.is_finite() {
        return Err(Error::InvalidParameter(format!("c_hat must be finite and >= 0, got {c_hat}")));
    }
    check_covers(realization.window(), p, depth)?;
    let chi_horizon = default_chi_horizon(p.mode).max(realization.window().horizon);
    let side = 2 * depth as usize + 1;
    let mut real: Vec<Vec<(f64, f64)>> = vec![Vec::new(); side * side];
    let idx = |x: i64, y: i64| ((x + depth as i64) as usize) * side + (y + depth as i64) as usize;
    for hit in first_hits(realization, depth)? {
        let chis = hit_chis(realization, &hit, chi_horizon)?;
        for (&(x, y), s) in hit.sites.iter().zip(&chis) {
            real[idx(x, y)].push((hit.time, s.chi));
        }
    }
    let phantom_mean = c_hat * p.lambda;
    let count_seed = rng::mix(chi_seed, rng::TAG_PHANTOM_COUNT);
    let mut regions = Vec::new();
    for (x, y) in Diamond::filled(depth, false).sites() {
        let site = Site::planar(x, y, p.dim);
        let phantoms = arrival_marks(rng::mix(count_seed, rng::coords_key(&site.coords)), phantom_mean).count();
        let hits = &real[idx(x, y)];
        let m = hits.len() + phantoms;
        if m > 0 {
            regions.push(build_influence_region(&site, hits, m, p, chi_seed)?);
        }
    }
    let mut open = Diamond::filled(depth, true);
    let mut open_level = Diamond::filled(depth, true);
    for r in &regions {
        let (x0, x1, y0, y1) = r.square_bounds().expect("non-empty region");
        let level = r.center.l1();
        for x in x0.max(-(depth as i64))..=x1.min(depth as i64) {
            for y in y0.max(-(depth as i64))..=y1.min(depth as i64) {
                let l = x.unsigned_abs() + y.unsigned_abs();
                if l > depth || l < level {
                    continue;
                }
                open.set(x, y, false);
                if l == level {
                    open_level.set(x, y, false);
                }
            }
        }
    }
    Ok(BlockedField { depth, c_hat, open, open_level, regions })
}

/// Per-level frequencies of open sites.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelMarginal {
    pub level: u64,
    pub vacant: Proportion,
    pub unblocked: Proportion,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VacancyMarginal {
    pub lambda: f64,
    pub depth: u64,
    pub trials: u64,
    pub levels: Vec<LevelMarginal>,
    /// Smallest per-site frequency of `E_i = 1`.
    pub p_hat_vacant: f64,
    /// Smallest per-site frequency of `Y_i = 1`.
    pub p_hat_unblocked: f64,
    /// Sites where `Y_i = 1` but `E_i = 0`, summed over trials.
    pub coupling_violations: u64,
}

fn trial_realization(params: &ModelParams, window: &SimulationWindow, seed: u64, t: u64) -> Result<ParticleRealization> {
    ParticleRealization::sample(params, window, rng::trial_seed(seed, t))
}

/// Seed of the χ draws attached to trial realization seed `s`.
pub fn chi_seed_of(realization_seed: u64) -> u64 {
    rng::mix(realization_seed, rng::TAG_CHI)
}

pub fn estimate_vacancy_marginal(params: &ModelParams, depth: u64, trials: u64, seed: u64, c_hat: f64) -> Result<VacancyMarginal> {
    if trials < 1 {
        return Err(Error::InvalidParameter("trials must be >= 1".into()));
    }
    let window = SimulationWindow::for_depth(params, depth)?;
    let sites: Vec<(i64, i64)> = Diamond::filled(depth, false).sites().collect();
    let per_trial: Vec<(Vec<bool>, Vec<bool>)> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let r = trial_realization(params, &window, seed, t)?;
            let e = compute_vacancy_field(&r, depth, None)?;
            let y = compute_blocked_field(&r, chi_seed_of(r.seed()), depth, c_hat)?;
            Ok((
                sites.iter().map(|&(x, y0)| e.get(x, y0) == Some(true)).collect(),
                sites.iter().map(|&(x, y0)| y.get(x, y0) == Some(true)).collect(),
            ))
        })
        .collect::<Result<_>>()?;
    let mut e_count = vec![0u64; sites.len()];
    let mut y_count = vec![0u64; sites.len()];
    let mut violations = 0;
    for (e, y) in &per_trial {
        for i in 0..sites.len() {
            e_count[i] += e[i] as u64;
            y_count[i] += y[i] as u64;
            violations += (y[i] && !e[i]) as u64;
        }
    }
    let mut levels = Vec::new();
    for k in 0..=depth {
        let (mut e, mut y, mut n) = (0, 0, 0);
        for (i, &(x, y0)) in sites.iter().enumerate() {
            if (x.abs() + y0.abs()) as u64 == k {
                e += e_count[i];
                y += y_count[i];
                n += trials;
            }
        }
        levels.push(LevelMarginal { level: k, vacant: Proportion::new(e, n)?, unblocked: Proportion::new(y, n)? });
    }
    let min_freq = |c: &[u64]| c.iter().map(|&v| v as f64 / trials as f64).fold(1.0, f64::min);
    Ok(VacancyMarginal {
        lambda: params.lambda,
        depth,
        trials,
        levels,
        p_hat_vacant: min_freq(&e_count),
        p_hat_unblocked: min_freq(&y_count),
        coupling_violations: violations,
    })
}

/// Fraction of realizations admitting an oriented vacant path to `depth`.
pub fn estimate_path_probability(params: &ModelParams, depth: u64, trials: u64, seed: u64) -> Result<Proportion> {
    let g = estimate_path_probability_coupled(params, &[params.lambda], depth, trials, seed)?;
    Ok(g.estimates[0])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoupledPathEstimate {
    pub lambdas: Vec<f64>,
    pub estimates: Vec<Proportion>,
    /// Trials where a path exists at some intensity but not at a smaller one.
    pub monotonicity_violations: u64,
}

/// Path existence over an intensity grid, every trial sampled once at the
/// largest intensity and thinned to the others.
pub fn estimate_path_probability_coupled(
    params: &ModelParams,
    lambdas: &[f64],
    depth: u64,
    trials: u64,
    seed: u64,
) -> Result<CoupledPathEstimate> {
    if lambdas.is_empty() || trials < 1 {
        return Err(Error::InvalidParameter("need a non-empty grid and trials >= 1".into()));
    }
    let top = lambdas.iter().copied().fold(0.0, f64::max);
    let top_params = params.with_lambda(top);
    let window = SimulationWindow::for_depth(&top_params, depth)?;
    let rows: Vec<Vec<bool>> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let full = trial_realization(&top_params, &window, seed, t)?;
            lambdas
                .iter()
                .map(|&l| {
                    let r = full.thinned(l)?;
                    Ok(find_oriented_vacant_path(&compute_vacancy_field(&r, depth, None)?, depth).is_some())
                })
                .collect::<Result<Vec<bool>>>()
        })
        .collect::<Result<_>>()?;
    let mut violations = 0;
    for row in &rows {
        let bad = (0..lambdas.len())
            .any(|a| (0..lambdas.len()).any(|b| lambdas[a] < lambdas[b] && row[b] && !row[a]));
        violations += bad as u64;
    }
    let estimates = (0..lambdas.len())
        .map(|i| Proportion::new(rows.iter().filter(|r| r[i]).count() as u64, trials))
        .collect::<Result<_>>()?;
    Ok(CoupledPathEstimate { lambdas: lambdas.to_vec(), estimates, monotonicity_violations: violations })
}

/// Path probability for i.i.d. Bernoulli(`p`) open sites on the same lattice.
pub fn iid_path_probability(p: f64, depth: u64, trials: u64, seed: u64) -> Result<Proportion> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidParameter(format!("site probability {p} outside [0,1]")));
    }
    let hits = (0..trials)
        .into_par_iter()
        .filter(|&t| {
            let s = rng::trial_seed(seed, t);
            let open = Diamond::from_fn(depth, |x, y| rng::unit_open(rng::mix(s, rng::coords_key(&[x, y]))) <= p);
            find_open_path(&open, depth).is_some()
        })
        .count();
    Proportion::new(hits as u64, trials)
}

/// Sparse CSV of the fields: one row per site, `Y` empty when absent.
pub fn write_fields_csv(vacancy: &VacancyField, blocked: Option<&BlockedField>, mut out: impl Write) -> Result<()> {
    writeln!(out, "x,y,E,Y,format_version")?;
    for (x, y) in vacancy.vacant.sites() {
        let e = vacancy.get(x, y).unwrap_or(false) as u8;
        let yv = blocked.and_then(|b| b.get(x, y)).map(|v| (v as u8).to_string()).unwrap_or_default();
        writeln!(out, "{x},{y},{e},{yv},{FORMAT_VERSION}")?;
    }
    Ok(())
}
