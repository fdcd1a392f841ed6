//! Poisson clouds in `R^d` moving as independent Brownian motions.

use std::ops::ControlFlow;

use super::brownian::{BrownianPath, PathVisitor};
use super::window::SimulationWindow;
use crate::error::{Error, Result};
use crate::model::{l2_dist, ModelParams, Mode};
use crate::rng::{self, ArrivalSampler};

/// A finite continuum realization. The cloud is sampled cube by cube over
/// the unit cubes meeting the buffered box; particle `j` of cube `z` has
/// its arrival mark, position and path keyed by `(seed, z, j)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ContinuumRealization {
    pub(crate) params: ModelParams,
    pub(crate) window: SimulationWindow,
    pub(crate) seed: u64,
    pub(crate) extendable: bool,
    pub(crate) origins: Vec<f64>,
    pub(crate) marks: Vec<f64>,
    pub(crate) keys: Vec<u64>,
    pub(crate) paths: Vec<BrownianPath>,
}

impl ContinuumRealization {
    /// Homogeneous Poisson point process of intensity lambda on the buffered box.
    pub fn sample_initial_cloud(params: &ModelParams, window: &SimulationWindow, seed: u64) -> Result<Self> {
        params.validate()?;
        if params.mode != Mode::Continuum {
            return Err(Error::WrongMode { expected: "continuum" });
        }
        let d = params.dim;
        let half = window.sampling_half_extent();
        let lo: Vec<i64> = half.iter().map(|h| (-h).floor() as i64).collect();
        let hi: Vec<i64> = half.iter().map(|h| h.ceil() as i64 - 1).collect();
        let sampler = ArrivalSampler::new(params.lambda);
        let arrival_seed = rng::mix(seed, rng::TAG_ARRIVAL);
        let pos_seed = rng::mix(seed, rng::TAG_POSITION);
        let walk_seed = rng::mix(seed, rng::TAG_WALK);
        let mut out = Self {
            params: params.clone(),
            window: window.clone(),
            seed,
            extendable: true,
            origins: Vec::new(),
            marks: Vec::new(),
            keys: Vec::new(),
            paths: Vec::new(),
        };
        if params.lambda <= 0.0 {
            return Ok(out);
        }
        let mut cube = lo.clone();
        'outer: loop {
            let cube_key = rng::coords_key(&cube);
            for (j, mark) in sampler.marks(rng::mix(arrival_seed, cube_key)).enumerate() {
                let pk = rng::mix(rng::mix(pos_seed, cube_key), j as u64);
                for (k, &z) in cube.iter().enumerate() {
                    // (0,1] shifted to [0,1)
                    out.origins.push(z as f64 + 1.0 - rng::unit_open(rng::mix(pk, k as u64)));
                }
                out.marks.push(mark);
                out.keys.push(rng::mix(rng::mix(walk_seed, cube_key), j as u64));
            }
            let mut axis = d;
            loop {
                if axis == 0 {
                    break 'outer;
                }
                axis -= 1;
                if cube[axis] < hi[axis] {
                    cube[axis] += 1;
                    break;
                }
                cube[axis] = lo[axis];
            }
        }
        Ok(out)
    }

    /// Attaches a Brownian path on the grid of step `step_dt` to every particle.
    pub fn evolve_brownian(mut self, step_dt: f64) -> Result<Self> {
        self.params = self.params.clone().with_step_dt(step_dt);
        self.params.validate()?;
        let d = self.params.dim;
        let horizon = self.window.horizon;
        self.paths = (0..self.keys.len())
            .map(|k| BrownianPath::sample(self.keys[k], &self.origins[k * d..(k + 1) * d], step_dt, horizon))
            .collect();
        Ok(self)
    }

    pub fn sample(params: &ModelParams, window: &SimulationWindow, seed: u64) -> Result<Self> {
        Self::sample_initial_cloud(params, window, seed)?.evolve_brownian(params.step_dt)
    }

    /// Hand-built realization from explicit paths.
    pub fn from_paths(params: &ModelParams, window: &SimulationWindow, paths: Vec<BrownianPath>) -> Result<Self> {
        params.validate()?;
        let mut origins = Vec::new();
        for p in &paths {
            if p.dim() != params.dim {
                return Err(Error::InvalidParameter("path dimension differs from model".into()));
            }
            origins.extend_from_slice(p.origin());
        }
        let params = params.clone().with_step_dt(paths.first().map_or(params.step_dt, |p| p.dt()));
        Ok(Self {
            params,
            window: window.clone(),
            seed: 0,
            extendable: false,
            origins,
            marks: vec![0.0; paths.len()],
            keys: paths.iter().map(|p| p.key()).collect(),
            paths,
        })
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

    pub fn is_evolved(&self) -> bool {
        self.paths.len() == self.marks.len()
    }

    pub fn origin(&self, k: usize) -> &[f64] {
        let d = self.params.dim;
        &self.origins[k * d..(k + 1) * d]
    }

    pub fn mark(&self, k: usize) -> f64 {
        self.marks[k]
    }

    pub fn key(&self, k: usize) -> u64 {
        self.keys[k]
    }

    pub fn path(&self, k: usize) -> &BrownianPath {
        &self.paths[k]
    }

    /// Path of particle `k` covering `[0, horizon]` when it can be regrown.
    pub fn path_until(&self, k: usize, horizon: f64) -> std::borrow::Cow<'_, BrownianPath> {
        let p = &self.paths[k];
        if self.extendable && horizon > p.time_of(p.last_index()) {
            std::borrow::Cow::Owned(BrownianPath::sample(self.keys[k], self.origin(k), p.dt(), horizon))
        } else {
            std::borrow::Cow::Borrowed(p)
        }
    }

    pub fn paths(&self) -> &[BrownianPath] {
        &self.paths
    }

    pub fn thinned(&self, lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0) || lambda > self.params.lambda {
            return Err(Error::InvalidParameter(format!(
                "thinning target {lambda} must lie in [0, {}]",
                self.params.lambda
            )));
        }
        let keep: Vec<usize> = (0..self.len()).filter(|&k| self.marks[k] <= lambda).collect();
        Ok(Self {
            params: self.params.with_lambda(lambda),
            window: self.window.clone(),
            seed: self.seed,
            extendable: self.extendable,
            origins: keep.iter().flat_map(|&k| self.origin(k).iter().copied()).collect(),
            marks: keep.iter().map(|&k| self.marks[k]).collect(),
            keys: keep.iter().map(|&k| self.keys[k]).collect(),
            paths: if self.is_evolved() { keep.iter().map(|&k| self.paths[k].clone()).collect() } else { Vec::new() },
        })
    }

    /// Positions at the grid time nearest to `time`.
    pub fn positions_at(&self, time: f64) -> Vec<Vec<f64>> {
        if !self.is_evolved() {
            return (0..self.len()).map(|k| self.origin(k).to_vec()).collect();
        }
        self.paths.iter().map(|p| p.position_near(time)).collect()
    }

    /// Whether some particle is within `radius` of `center` at a grid time in `[t0, t1]`.
    pub fn occupancy(&self, center: &[f64], radius: f64, t0: f64, t1: f64) -> Result<bool> {
        let corners: Vec<f64> = center.iter().map(|c| c.abs() + radius).collect();
        if !self.window.certifies(&corners) {
            return Err(Error::OutsideWindow(format!("ball at {center:?} radius {radius}")));
        }
        if t0 > t1 || t0 < 0.0 || t1 > self.window.horizon + 1e-12 {
            return Err(Error::OutsideWindow(format!("interval [{t0}, {t1}]")));
        }
        if !self.is_evolved() {
            return Err(Error::InvalidParameter("realization has no paths".into()));
        }
        let mut v = BallHit { center, radius, hit: false };
        for p in &self.paths {
            let _ = p.descend(t0, t1, false, &mut v);
            if v.hit {
                return Ok(true);
            }
        }
        Ok(false)
    }
}

struct BallHit<'a> {
    center: &'a [f64],
    radius: f64,
    hit: bool,
}

impl PathVisitor for BallHit<'_> {
    fn relevant(&mut self, _: f64, _: f64, c: &[f64], r: f64) -> bool {
        l2_dist(c, self.center) <= r + self.radius
    }

    fn visit(&mut self, _: u64, _: f64, pos: &[f64]) -> ControlFlow<()> {
        if l2_dist(pos, self.center) <= self.radius {
            self.hit = true;
            return ControlFlow::Break(());
        }
        ControlFlow::Continue(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup(lambda: f64, r: f64, horizon: f64) -> (ModelParams, SimulationWindow) {
        let p = ModelParams::continuum(lambda, 1.0, 2).unwrap();
        let w = SimulationWindow::for_region(&p, r, horizon).unwrap();
        (p, w)
    }

    #[test]
    fn empty_cloud() {
        let (p, w) = setup(0.0, 3.0, 2.0);
        let r = ContinuumRealization::sample(&p, &w, 5).unwrap();
        assert!(r.is_empty());
        assert!(!r.occupancy(&[0.0, 0.0], 1.0, 0.0, 2.0).unwrap());
        let r = r.evolve_brownian(0.05).unwrap();
        assert!(r.is_empty());
    }

    #[test]
    fn intensity_matches_volume() {
        let p = ModelParams::continuum(0.4, 1.0, 2).unwrap();
        let w = SimulationWindow { buffer_radius: 0.0, ..SimulationWindow::for_region(&p, 2.0, 0.0).unwrap() };
        // sampling box [-3.33, 3.33]^2 is covered by the 8x8 cubes from -4 to 4
        let cubes = 64.0;
        let mut m = crate::stats::Moments::default();
        for s in 0..5_000 {
            m.push(ContinuumRealization::sample_initial_cloud(&p, &w, s).unwrap().len() as f64);
        }
        assert!((m.mean() - 0.4 * cubes).abs() < 3.0 * m.std_error(), "{}", m.mean());
    }

    #[test]
    fn thinning_and_reproducibility() {
        let (p, w) = setup(0.3, 3.0, 2.0);
        let a = ContinuumRealization::sample(&p, &w, 8).unwrap();
        assert_eq!(a, ContinuumRealization::sample(&p, &w, 8).unwrap());
        let thin = a.thinned(0.1).unwrap();
        let direct = ContinuumRealization::sample(&p.with_lambda(0.1), &w, 8).unwrap();
        assert_eq!(thin.paths, direct.paths);
        assert_eq!(thin.origins, direct.origins);
    }

    #[test]
    fn occupancy_agrees_with_positions() {
        let (p, w) = setup(0.5, 3.0, 2.0);
        let r = ContinuumRealization::sample(&p.with_step_dt(0.05), &w, 12).unwrap();
        for n in [0u64, 7, 20, 40] {
            let t = n as f64 * 0.05;
            let pos = r.positions_at(t);
            for c in [[0.0, 0.0], [1.5, -2.0], [-3.0, 0.5]] {
                let expect = pos.iter().any(|q| l2_dist(q, &c) <= 1.0);
                assert_eq!(r.occupancy(&c, 1.0, t, t).unwrap(), expect);
            }
        }
        assert!(r.occupancy(&[4.0, 0.0], 1.0, 0.0, 1.0).is_err());
    }
}
