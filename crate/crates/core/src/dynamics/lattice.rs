//! Poisson clouds on `Z^d` moving as continuous-time simple random walks.

use std::ops::ControlFlow;

use rand::Rng;
use rand_distr::Exp1;

use super::window::SimulationWindow;
use crate::error::{Error, Result};
use crate::model::{ModelParams, Mode, Site, MAX_DIM};
use crate::rng::{self, ArrivalSampler};

/// One nearest-neighbour step of a walk.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jump {
    pub time: f64,
    pub axis: u8,
    pub step: i8,
}

/// A maximal time interval `[start, end]` spent at one site. Intervals are
/// closed: a particle counts as present at both ends.
#[derive(Clone, Copy, Debug)]
pub struct Residence<'a> {
    pub pos: &'a [i64],
    pub start: f64,
    pub end: f64,
    /// All coordinates beyond the first two are zero.
    pub in_plane: bool,
}

impl Residence<'_> {
    pub fn planar_l1(&self) -> u64 {
        self.pos[0].unsigned_abs() + self.pos[1].unsigned_abs()
    }
}

/// Walks a jump list from `origin`, reporting each residence up to `horizon`.
pub(crate) fn walk_residences(
    origin: &[i64],
    jumps: &[Jump],
    horizon: f64,
    mut f: impl FnMut(Residence<'_>) -> ControlFlow<()>,
) -> ControlFlow<()> {
    let d = origin.len();
    let mut buf = [0i64; MAX_DIM];
    buf[..d].copy_from_slice(origin);
    let mut off_plane = buf[2..d].iter().filter(|&&c| c != 0).count();
    let mut start = 0.0;
    for j in jumps {
        f(Residence { pos: &buf[..d], start, end: j.time, in_plane: off_plane == 0 })?;
        let a = j.axis as usize;
        let before = buf[a];
        buf[a] += j.step as i64;
        if a >= 2 {
            match (before == 0, buf[a] == 0) {
                (true, false) => off_plane += 1,
                (false, true) => off_plane -= 1,
                _ => {}
            }
        }
        start = j.time;
    }
    f(Residence { pos: &buf[..d], start, end: horizon.max(start), in_plane: off_plane == 0 })
}

/// Samples one walk history with exponential holding times of the given rate.
pub(crate) fn sample_walk(key: u64, dim: usize, rate: f64, horizon: f64) -> Vec<Jump> {
    let mut rng = rng::stream(key);
    let mut out = Vec::new();
    let mut t = 0.0;
    loop {
        let hold: f64 = rng.sample(Exp1);
        t += hold / rate;
        if t > horizon {
            return out;
        }
        let dir = rng.random_range(0..2 * dim);
        out.push(Jump { time: t, axis: (dir / 2) as u8, step: if dir % 2 == 0 { 1 } else { -1 } });
    }
}

/// A finite realization of the particle system on `Z^d`.
///
/// Particle `j` born at site `x` carries an arrival mark on the intensity
/// axis and a walk stream key, both functions of `(seed, x, j)` only. The
/// realization at a smaller intensity is the subset with smaller marks.
#[derive(Clone, Debug, PartialEq)]
pub struct LatticeRealization {
    pub(crate) params: ModelParams,
    pub(crate) window: SimulationWindow,
    pub(crate) seed: u64,
    pub(crate) evolved: bool,
    /// Histories come from the keyed streams and may be regrown past the horizon.
    pub(crate) extendable: bool,
    pub(crate) origins: Vec<i64>,
    pub(crate) marks: Vec<f64>,
    pub(crate) keys: Vec<u64>,
    pub(crate) offsets: Vec<usize>,
    pub(crate) jumps: Vec<Jump>,
}

impl LatticeRealization {
    /// Independent Poisson(lambda) counts on every site of the buffered box.
    pub fn sample_initial_cloud(params: &ModelParams, window: &SimulationWindow, seed: u64) -> Result<Self> {
        params.validate()?;
        if params.mode != Mode::Lattice {
            return Err(Error::WrongMode { expected: "lattice" });
        }
        let d = params.dim;
        let half: Vec<i64> = window.sampling_half_extent().iter().map(|h| h.floor() as i64).collect();
        let sampler = ArrivalSampler::new(params.lambda);
        let arrival_seed = rng::mix(seed, rng::TAG_ARRIVAL);
        let walk_seed = rng::mix(seed, rng::TAG_WALK);

        let mut out = Self::empty(params, window, seed);
        if params.lambda > 0.0 {
            let mut site: Vec<i64> = half.iter().map(|h| -h).collect();
            'outer: loop {
                let site_key = rng::coords_key(&site);
                for (j, mark) in sampler.marks(rng::mix(arrival_seed, site_key)).enumerate() {
                    out.origins.extend_from_slice(&site);
                    out.marks.push(mark);
                    out.keys.push(rng::mix(rng::mix(walk_seed, site_key), j as u64));
                    out.offsets.push(0);
                }
                // odometer over the box, last axis fastest
                let mut axis = d;
                loop {
                    if axis == 0 {
                        break 'outer;
                    }
                    axis -= 1;
                    if site[axis] < half[axis] {
                        site[axis] += 1;
                        break;
                    }
                    site[axis] = -half[axis];
                }
            }
        }
        Ok(out)
    }

    /// Attaches an independent walk history up to the window horizon to every particle.
    pub fn evolve_lattice_walks(mut self) -> Self {
        let (d, rate, horizon) = (self.params.dim, self.params.jump_rate, self.window.horizon);
        self.offsets.clear();
        self.offsets.push(0);
        self.jumps.clear();
        for &key in &self.keys {
            self.jumps.extend(sample_walk(key, d, rate, horizon));
            self.offsets.push(self.jumps.len());
        }
        self.evolved = true;
        self
    }

    /// Cloud plus walks.
    pub fn sample(params: &ModelParams, window: &SimulationWindow, seed: u64) -> Result<Self> {
        Ok(Self::sample_initial_cloud(params, window, seed)?.evolve_lattice_walks())
    }

    /// Hand-built realization; checks the jump-history invariants.
    pub fn from_particles(
        params: &ModelParams,
        window: &SimulationWindow,
        particles: Vec<(Vec<i64>, Vec<Jump>)>,
    ) -> Result<Self> {
        params.validate()?;
        let mut out = Self::empty(params, window, 0);
        out.evolved = true;
        out.extendable = false;
        out.offsets = vec![0];
        for (k, (origin, jumps)) in particles.into_iter().enumerate() {
            if origin.len() != params.dim {
                return Err(Error::InvalidParameter(format!("particle {k} has wrong dimension")));
            }
            let mut last = 0.0;
            for j in &jumps {
                if j.time <= last || j.time > window.horizon {
                    return Err(Error::InvalidParameter(format!(
                        "particle {k}: jump times must increase strictly inside (0, horizon]"
                    )));
                }
                if j.axis as usize >= params.dim || j.step.abs() != 1 {
                    return Err(Error::InvalidParameter(format!("particle {k}: jump is not a unit step")));
                }
                last = j.time;
            }
            out.origins.extend_from_slice(&origin);
            out.marks.push(0.0);
            out.keys.push(k as u64);
            out.jumps.extend(jumps);
            out.offsets.push(out.jumps.len());
        }
        Ok(out)
    }

    fn empty(params: &ModelParams, window: &SimulationWindow, seed: u64) -> Self {
        Self {
            params: params.clone(),
            window: window.clone(),
            seed,
            evolved: false,
            extendable: true,
            origins: Vec::new(),
            marks: Vec::new(),
            keys: Vec::new(),
            offsets: vec![0],
            jumps: Vec::new(),
        }
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn window(&self) -> &SimulationWindow {
        &self.window
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.marks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.marks.is_empty()
    }

    pub fn origin(&self, k: usize) -> &[i64] {
        let d = self.params.dim;
        &self.origins[k * d..(k + 1) * d]
    }

    pub fn jumps(&self, k: usize) -> &[Jump] {
        if self.evolved {
            &self.jumps[self.offsets[k]..self.offsets[k + 1]]
        } else {
            &[]
        }
    }

    pub fn key(&self, k: usize) -> u64 {
        self.keys[k]
    }

    pub fn is_extendable(&self) -> bool {
        self.extendable
    }

    /// Jump history of particle `k` up to `horizon`, regrown from its stream
    /// when `horizon` exceeds the window. Hand-built particles stay frozen.
    pub fn jumps_until(&self, k: usize, horizon: f64) -> Vec<Jump> {
        if self.extendable && horizon > self.window.horizon {
            sample_walk(self.keys[k], self.params.dim, self.params.jump_rate, horizon)
        } else {
            self.jumps(k).iter().take_while(|j| j.time <= horizon).copied().collect()
        }
    }

    pub fn mark(&self, k: usize) -> f64 {
        self.marks[k]
    }

    pub fn total_jumps(&self) -> usize {
        self.jumps.len()
    }

    pub fn for_each_residence(
        &self,
        k: usize,
        f: impl FnMut(Residence<'_>) -> ControlFlow<()>,
    ) -> ControlFlow<()> {
        walk_residences(self.origin(k), self.jumps(k), self.window.horizon, f)
    }

    /// Sub-realization at intensity `lambda <= self.lambda`: keeps particles
    /// whose arrival mark is at most `lambda`. Each particle survives
    /// independently with probability `lambda / self.lambda`.
    pub fn thinned(&self, lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0) || lambda > self.params.lambda {
            return Err(Error::InvalidParameter(format!(
                "thinning target {lambda} must lie in [0, {}]",
                self.params.lambda
            )));
        }
        let mut out = Self::empty(&self.params.with_lambda(lambda), &self.window, self.seed);
        out.evolved = self.evolved;
        out.extendable = self.extendable;
        for k in 0..self.len() {
            if self.marks[k] <= lambda {
                out.origins.extend_from_slice(self.origin(k));
                out.marks.push(self.marks[k]);
                out.keys.push(self.keys[k]);
                out.jumps.extend_from_slice(self.jumps(k));
                out.offsets.push(out.jumps.len());
            }
        }
        Ok(out)
    }

    /// Particle positions at `time` (right-continuous at jump instants).
    pub fn positions_at(&self, time: f64) -> Vec<Vec<i64>> {
        (0..self.len())
            .map(|k| {
                let mut p = self.origin(k).to_vec();
                for j in self.jumps(k).iter().take_while(|j| j.time <= time) {
                    p[j.axis as usize] += j.step as i64;
                }
                p
            })
            .collect()
    }

    fn check_query(&self, site: &[f64], t0: f64, t1: f64) -> Result<()> {
        if !self.window.certifies(site) {
            return Err(Error::OutsideWindow(format!("site {site:?}")));
        }
        if t0 > t1 || t0 < 0.0 || t1 > self.window.horizon + 1e-12 {
            return Err(Error::OutsideWindow(format!(
                "interval [{t0}, {t1}] not inside [0, {}]",
                self.window.horizon
            )));
        }
        Ok(())
    }

    /// Whether any particle sits on `site` at some instant of `[t0, t1]`.
    pub fn occupancy(&self, site: &Site, t0: f64, t1: f64) -> Result<bool> {
        self.check_query(&site.to_f64(), t0, t1)?;
        let target = site.coords.as_slice();
        for k in 0..self.len() {
            let mut found = false;
            let _ = self.for_each_residence(k, |r| {
                if r.start > t1 {
                    return ControlFlow::Break(());
                }
                if r.end >= t0 && r.pos == target {
                    found = true;
                    return ControlFlow::Break(());
                }
                ControlFlow::Continue(())
            });
            if found {
                return Ok(true);
            }
        }
        Ok(false)
    }
}
