//! Target trajectories, the speed class check, detection times and
//! evasion strategies.

use std::io::Write;
use std::ops::ControlFlow;

use serde::{Deserialize, Serialize};

use crate::dynamics::brownian::PathVisitor;
use crate::dynamics::lattice::walk_residences;
use crate::dynamics::ParticleRealization;
use crate::error::{Error, Result};
use crate::field::{compute_vacancy_field, find_oriented_vacant_path, FORMAT_VERSION};
use crate::model::{l2_dist, ModelParams};

/// Norm used by the speed constraint.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpeedNorm {
    #[default]
    L1,
    L2,
}

/// Piecewise-constant nearest-neighbour path, right-continuous at jumps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub start: Vec<i64>,
    /// `(jump time, site after the jump)`.
    pub moves: Vec<(f64, Vec<i64>)>,
    /// Declared speed bound.
    pub speed: f64,
}

impl Trajectory {
    pub fn stationary(start: Vec<i64>, speed: f64) -> Self {
        Self { start, moves: Vec::new(), speed }
    }

    pub fn dim(&self) -> usize {
        self.start.len()
    }

    pub fn position_at(&self, t: f64) -> &[i64] {
        let n = self.moves.partition_point(|m| m.0 <= t);
        if n == 0 {
            &self.start
        } else {
            &self.moves[n - 1].1
        }
    }

    /// Closed residences `(site, start, end)` up to `horizon`.
    pub fn residences(&self, horizon: f64) -> Vec<(&[i64], f64, f64)> {
        let mut out = Vec::new();
        let mut site: &[i64] = &self.start;
        let mut a = 0.0;
        for (t, next) in &self.moves {
            if *t > horizon {
                break;
            }
            out.push((site, a, *t));
            site = next;
            a = *t;
        }
        out.push((site, a, horizon.max(a)));
        out
    }

    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "time,x,y,format_version")?;
        writeln!(out, "0,{},{},{FORMAT_VERSION}", self.start[0], self.start[1])?;
        for (t, s) in &self.moves {
            writeln!(out, "{t},{},{},{FORMAT_VERSION}", s[0], s[1])?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Violation {
    /// Move `index` is not a unit step (continuity condition).
    NotNearestNeighbour { index: usize },
    /// Move `index` happens at or before the previous one.
    NonIncreasingTime { index: usize },
    /// Moves `first..=last` displace the target further than allowed.
    TooFast { first: usize, last: usize, displacement: f64, allowed: f64 },
}

impl Violation {
    pub fn is_continuity(&self) -> bool {
        !matches!(self, Violation::TooFast { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Admissibility {
    pub admissible: bool,
    pub violation: Option<Violation>,
}

/// Checks nearest-neighbour continuity and the speed bound: over every
/// window opening just before jump `m` and closing at jump `n >= m`, the
/// displacement may not exceed `S (t_n - t_m) + 1`.
pub fn check_admissible(traj: &Trajectory, speed: f64, norm: SpeedNorm) -> Admissibility {
    let fail = |v| Admissibility { admissible: false, violation: Some(v) };
    let mut prev: &[i64] = &traj.start;
    let mut last_t = f64::NEG_INFINITY;
    for (i, (t, s)) in traj.moves.iter().enumerate() {
        if !(*t > last_t) || *t < 0.0 {
            return fail(Violation::NonIncreasingTime { index: i });
        }
        let l1: i64 = prev.iter().zip(s).map(|(a, b)| (a - b).abs()).sum();
        if l1 != 1 || s.len() != prev.len() {
            return fail(Violation::NotNearestNeighbour { index: i });
        }
        prev = s;
        last_t = *t;
    }
    let n = traj.moves.len();
    for m in 0..n {
        let before: &[i64] = if m == 0 { &traj.start } else { &traj.moves[m - 1].1 };
        let t_m = traj.moves[m].0;
        for k in m..n {
            // unit steps: the displacement is at most the number of jumps
            let slack = speed * (traj.moves[k].0 - t_m) + 1.0;
            if (n - m) as f64 <= slack {
                break;
            }
            if ((k - m + 1) as f64) <= slack {
                continue;
            }
            let after = &traj.moves[k].1;
            let disp = match norm {
                SpeedNorm::L1 => before.iter().zip(after).map(|(a, b)| (a - b).abs() as f64).sum::<f64>(),
                SpeedNorm::L2 => before.iter().zip(after).map(|(a, b)| ((a - b) * (a - b)) as f64).sum::<f64>().sqrt(),
            };
            if disp > slack + 1e-9 {
                return fail(Violation::TooFast { first: m, last: k, displacement: disp, allowed: slack });
            }
        }
    }
    Admissibility { admissible: true, violation: None }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionOutcome {
    pub detected: bool,
    /// Detection time, or the horizon when undetected.
    pub time: f64,
    pub particle: Option<usize>,
    /// Evaluated on the time grid only (continuum).
    pub discretized: bool,
    /// The requested horizon exceeded the window and was cut to it.
    pub clipped: bool,
}

struct NearTarget<'a> {
    res: &'a [(&'a [i64], f64, f64)],
    radius: f64,
    found: Option<f64>,
}

impl NearTarget<'_> {
    fn min_dist(&self, c: &[f64], t_a: f64, t_b: f64) -> f64 {
        let mut best = f64::INFINITY;
        for (s, a, b) in self.res {
            if *a <= t_b && *b >= t_a {
                let d2: f64 = s.iter().zip(c).map(|(&x, y)| (x as f64 - y).powi(2)).sum();
                best = best.min(d2.sqrt());
            }
        }
        best
    }
}

impl PathVisitor for NearTarget<'_> {
    fn relevant(&mut self, t_a: f64, t_b: f64, c: &[f64], r: f64) -> bool {
        if self.found.is_some_and(|f| t_a >= f) {
            return false;
        }
        self.min_dist(c, t_a, t_b) <= r + self.radius
    }

    fn visit(&mut self, _: u64, t: f64, pos: &[f64]) -> ControlFlow<()> {
        if self.min_dist(pos, t, t) <= self.radius {
            self.found = Some(t);
            return ControlFlow::Break(());
        }
        ControlFlow::Continue(())
    }
}

/// First time a particle coincides with the target (lattice) or comes within
/// `radius` of it (continuum, on the grid). Intervals are closed on both sides.
pub fn detection_time(traj: &Trajectory, realization: &ParticleRealization, horizon: f64, radius: f64) -> Result<DetectionOutcome> {
    let w = realization.window();
    let clipped = horizon > w.horizon + 1e-12;
    let horizon = horizon.min(w.horizon);
    let res = traj.residences(horizon);
    for (s, _, _) in &res {
        let pt: Vec<f64> = s.iter().map(|&c| c as f64 + c.signum() as f64 * radius).collect();
        if !w.certifies(&pt) {
            return Err(Error::OutsideWindow(format!("target visits {s:?}")));
        }
    }
    let mut best: Option<(f64, usize)> = None;
    match realization {
        ParticleRealization::Lattice(r) => {
            for k in 0..r.len() {
                let mut i = 0;
                let _ = walk_residences(r.origin(k), r.jumps(k), w.horizon, |p| {
                    if p.start > horizon || best.is_some_and(|b| p.start >= b.0) {
                        return ControlFlow::Break(());
                    }
                    while i < res.len() && res[i].2 < p.start {
                        i += 1;
                    }
                    let mut j = i;
                    while j < res.len() && res[j].1 <= p.end {
                        if res[j].0 == p.pos {
                            let t = res[j].1.max(p.start);
                            if best.is_none_or(|b| t < b.0) {
                                best = Some((t, k));
                            }
                            return ControlFlow::Break(());
                        }
                        j += 1;
                    }
                    ControlFlow::Continue(())
                });
            }
        }
        ParticleRealization::Continuum(r) => {
            for (k, path) in r.paths().iter().enumerate() {
                let limit = best.map_or(horizon, |b| b.0);
                let mut v = NearTarget { res: &res, radius, found: None };
                let _ = path.descend(0.0, limit, false, &mut v);
                if let Some(t) = v.found {
                    if best.is_none_or(|b| t < b.0) {
                        best = Some((t, k));
                    }
                }
            }
        }
    }
    Ok(DetectionOutcome {
        detected: best.is_some(),
        time: best.map_or(horizon, |b| b.0),
        particle: best.map(|b| b.1),
        discretized: realization.is_discretized(),
        clipped,
    })
}

pub fn strategy_stationary(dim: usize, speed: f64) -> Trajectory {
    Trajectory::stationary(vec![0; dim], speed)
}

/// Jumps along `+e1` every `1 / v` time units until `horizon`.
pub fn strategy_drift(params: &ModelParams, v: f64, horizon: f64) -> Result<Trajectory> {
    if v > params.speed || v < 0.0 {
        return Err(Error::InvalidParameter(format!("drift speed {v} outside [0, {}]", params.speed)));
    }
    let mut t = strategy_stationary(params.dim, params.speed);
    if v > 0.0 {
        let mut k = 1u64;
        while k as f64 / v <= horizon {
            let mut s = vec![0; params.dim];
            s[0] = k as i64;
            t.moves.push((k as f64 / v, s));
            k += 1;
        }
    }
    Ok(t)
}

/// Follows an oriented vacant path through the cells of levels `0..=depth`,
/// jumping to the next site exactly when the next level's interval opens.
/// Returns `None` when no such path exists.
pub fn strategy_percolation_follower(realization: &ParticleRealization, depth: u64) -> Result<Option<Trajectory>> {
    let p = realization.params();
    let field = compute_vacancy_field(realization, depth, None)?;
    Ok(find_oriented_vacant_path(&field, depth).map(|path| Trajectory {
        start: path[0].coords.clone(),
        moves: path[1..]
            .iter()
            .enumerate()
            .map(|(k, s)| (p.level_start(k as u64 + 1), s.coords.clone()))
            .collect(),
        speed: p.speed,
    }))
}

/// At every multiple of `1 / S` moves to the neighbour (or stays) that is
/// farthest from the particles over the next `lookahead` time units.
pub fn strategy_greedy(realization: &ParticleRealization, lookahead: f64, horizon: f64) -> Result<Trajectory> {
    if !(lookahead >= 0.0) {
        return Err(Error::InvalidParameter(format!("lookahead must be >= 0, got {lookahead}")));
    }
    let p = realization.params();
    let d = p.dim;
    let mut traj = strategy_stationary(d, p.speed);
    let mut here = vec![0i64; d];
    let end = horizon.min(realization.window().horizon);
    let mut k = 1u64;
    while p.level_start(k) <= end {
        let t = p.level_start(k);
        let samples: Vec<f64> = if lookahead > 0.0 {
            (0..=4).map(|i| (t + lookahead * i as f64 / 4.0).min(realization.window().horizon)).collect()
        } else {
            vec![t]
        };
        let clouds: Vec<Vec<Vec<f64>>> = samples.iter().map(|&s| realization.positions_at(s)).collect();
        let score = |site: &[i64]| {
            let s: Vec<f64> = site.iter().map(|&c| c as f64).collect();
            clouds.iter().flatten().map(|q| l2_dist(q, &s)).fold(f64::INFINITY, f64::min)
        };
        let mut best = (score(&here), here.clone());
        let mut options = Vec::new();
        for axis in 0..d {
            for step in [-1, 1] {
                let mut n = here.clone();
                n[axis] += step;
                options.push(n);
            }
        }
        options.sort();
        for n in options {
            let s = score(&n);
            if s > best.0 {
                best = (s, n);
            }
        }
        if best.1 != here {
            here = best.1;
            traj.moves.push((t, here.clone()));
        }
        k += 1;
    }
    Ok(traj)
}
