//! Brownian paths on a uniform time grid.
//!
//! A path stores exact Gaussian positions at coarse times `c * 128 * dt`;
//! the grid points in between are filled in on demand by a Lévy midpoint
//! construction whose normals are hashed from `(key, coarse index, node,
//! coordinate)`. Every grid point is therefore an exact Brownian marginal
//! and reproducible without being stored. Descents prune subintervals whose
//! bridge cannot plausibly reach the region of interest; the pruning radius
//! holds except with probability `BRIDGE_ESCAPE` per pruned subinterval.

use std::ops::ControlFlow;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::model::TIME_SLACK;
use crate::rng::{self, hashed_normal, mix};

/// Grid steps per stored coarse interval (a power of two).
pub const FINE_PER_COARSE: u64 = 128;
/// Probability that a pruned bridge leaves its bounding ball.
pub const BRIDGE_ESCAPE: f64 = 1e-15;

/// Receives grid points during a descent.
pub trait PathVisitor {
    /// Whether any grid point with time in `[t_a, t_b]`, all of which lie
    /// within `radius` of `center`, might be of interest.
    fn relevant(&mut self, t_a: f64, t_b: f64, center: &[f64], radius: f64) -> bool;
    fn visit(&mut self, index: u64, time: f64, pos: &[f64]) -> ControlFlow<()>;
}

/// Per-coordinate multiplier `sqrt(ln(2d/eta)/2)` of the bridge sup bound.
pub(crate) fn bridge_tail_factor(dim: usize) -> f64 {
    ((2.0 * dim as f64 / BRIDGE_ESCAPE).ln() / 2.0).sqrt()
}

#[derive(Clone, Debug, PartialEq)]
pub struct BrownianPath {
    key: u64,
    dim: usize,
    dt: f64,
    /// Positions at coarse times, `(n_coarse + 1) * dim` values.
    coarse: Vec<f64>,
}

impl BrownianPath {
    /// Path started at `origin`, covering at least `[0, horizon]`.
    pub fn sample(key: u64, origin: &[f64], dt: f64, horizon: f64) -> Self {
        let dim = origin.len();
        let n_fine = (horizon / dt - TIME_SLACK).ceil().max(0.0) as u64;
        let n_coarse = n_fine.div_ceil(FINE_PER_COARSE);
        let sd = (FINE_PER_COARSE as f64 * dt).sqrt();
        let mut rng = rng::stream(mix(key, rng::TAG_WALK));
        let mut coarse = Vec::with_capacity((n_coarse as usize + 1) * dim);
        coarse.extend_from_slice(origin);
        for c in 0..n_coarse as usize {
            for k in 0..dim {
                let z: f64 = rng.sample(StandardNormal);
                coarse.push(coarse[c * dim + k] + sd * z);
            }
        }
        Self { key, dim, dt, coarse }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn key(&self) -> u64 {
        self.key
    }

    pub fn origin(&self) -> &[f64] {
        &self.coarse[..self.dim]
    }

    pub fn coarse_points(&self) -> &[f64] {
        &self.coarse
    }

    pub(crate) fn from_coarse(key: u64, dim: usize, dt: f64, coarse: Vec<f64>) -> Self {
        Self { key, dim, dt, coarse }
    }

    fn n_coarse(&self) -> u64 {
        (self.coarse.len() / self.dim - 1) as u64
    }

    /// Index of the last grid point.
    pub fn last_index(&self) -> u64 {
        self.n_coarse() * FINE_PER_COARSE
    }

    pub fn time_of(&self, index: u64) -> f64 {
        index as f64 * self.dt
    }

    fn coarse_at(&self, c: u64) -> &[f64] {
        let c = c as usize;
        &self.coarse[c * self.dim..(c + 1) * self.dim]
    }

    fn bridge_mid(&self, c: u64, mid: u64, lo: &[f64], hi: &[f64], span: u64, out: &mut [f64]) {
        let sd = (span as f64 * self.dt / 4.0).sqrt();
        let node = mix(mix(mix(self.key, rng::TAG_BRIDGE), c), mid);
        for k in 0..self.dim {
            out[k] = 0.5 * (lo[k] + hi[k]) + sd * hashed_normal(mix(node, k as u64));
        }
    }

    /// Position at grid point `index`.
    pub fn point(&self, index: u64) -> Vec<f64> {
        assert!(index <= self.last_index(), "grid index beyond stored path");
        let c = index / FINE_PER_COARSE;
        let r = index % FINE_PER_COARSE;
        if r == 0 {
            return self.coarse_at(c).to_vec();
        }
        let mut lo_v = self.coarse_at(c).to_vec();
        let mut hi_v = self.coarse_at(c + 1).to_vec();
        let mut mid_v = vec![0.0; self.dim];
        let (mut lo, mut hi) = (0u64, FINE_PER_COARSE);
        loop {
            let mid = (lo + hi) / 2;
            self.bridge_mid(c, mid, &lo_v, &hi_v, hi - lo, &mut mid_v);
            if mid == r {
                return mid_v;
            }
            if r < mid {
                hi = mid;
                std::mem::swap(&mut hi_v, &mut mid_v);
            } else {
                lo = mid;
                std::mem::swap(&mut lo_v, &mut mid_v);
            }
        }
    }

    /// Position at the grid time nearest to `time`.
    pub fn position_near(&self, time: f64) -> Vec<f64> {
        let n = ((time / self.dt).round().max(0.0) as u64).min(self.last_index());
        self.point(n)
    }

    /// Visits grid points with times in `[t_lo, t_hi]` in time order
    /// (or reverse order), skipping subintervals the visitor declares irrelevant.
    pub fn descend<V: PathVisitor>(&self, t_lo: f64, t_hi: f64, reverse: bool, v: &mut V) -> ControlFlow<()> {
        let last = self.last_index();
        let n_lo = (t_lo / self.dt - TIME_SLACK).ceil().max(0.0) as u64;
        let n_hi_f = (t_hi / self.dt + TIME_SLACK).floor();
        if n_hi_f < 0.0 || n_lo > last {
            return ControlFlow::Continue(());
        }
        let n_hi = (n_hi_f as u64).min(last);
        if n_lo > n_hi {
            return ControlFlow::Continue(());
        }
        let tail = bridge_tail_factor(self.dim) * (self.dim as f64).sqrt();
        let mut ctx = Descent { path: self, n_lo, n_hi, tail, center: vec![0.0; self.dim] };
        let c_first = n_lo / FINE_PER_COARSE;
        let c_last = n_hi.div_ceil(FINE_PER_COARSE).min(self.n_coarse());
        if !reverse {
            for c in c_first..c_last {
                ctx.coarse_interval(c, false, v)?;
            }
            if c_last * FINE_PER_COARSE <= n_hi && c_last * FINE_PER_COARSE >= n_lo {
                ctx.endpoint(c_last, v)?;
            }
        } else {
            if c_last * FINE_PER_COARSE <= n_hi && c_last * FINE_PER_COARSE >= n_lo {
                ctx.endpoint(c_last, v)?;
            }
            for c in (c_first..c_last).rev() {
                ctx.coarse_interval(c, true, v)?;
            }
        }
        ControlFlow::Continue(())
    }
}

struct Descent<'a> {
    path: &'a BrownianPath,
    n_lo: u64,
    n_hi: u64,
    tail: f64,
    center: Vec<f64>,
}

impl Descent<'_> {
    fn endpoint<V: PathVisitor>(&mut self, c: u64, v: &mut V) -> ControlFlow<()> {
        let n = c * FINE_PER_COARSE;
        let t = self.path.time_of(n);
        let p = self.path.coarse_at(c);
        if v.relevant(t, t, p, 0.0) {
            v.visit(n, t, p)?;
        }
        ControlFlow::Continue(())
    }

    /// Interval `c` owns its left endpoint and its interior grid points.
    fn coarse_interval<V: PathVisitor>(&mut self, c: u64, reverse: bool, v: &mut V) -> ControlFlow<()> {
        let lo = self.path.coarse_at(c).to_vec();
        let hi = self.path.coarse_at(c + 1).to_vec();
        if !self.plausible(c * FINE_PER_COARSE, (c + 1) * FINE_PER_COARSE, &lo, &hi, v) {
            return ControlFlow::Continue(());
        }
        let base = c * FINE_PER_COARSE;
        if !reverse && base >= self.n_lo {
            self.endpoint(c, v)?;
        }
        self.node(c, 0, FINE_PER_COARSE, &lo, &hi, reverse, v)?;
        if reverse && base >= self.n_lo {
            self.endpoint(c, v)?;
        }
        ControlFlow::Continue(())
    }

    fn plausible<V: PathVisitor>(&mut self, a: u64, b: u64, lo: &[f64], hi: &[f64], v: &mut V) -> bool {
        if b < self.n_lo || a > self.n_hi {
            return false;
        }
        let mut half2 = 0.0;
        for k in 0..lo.len() {
            self.center[k] = 0.5 * (lo[k] + hi[k]);
            half2 += (0.5 * (hi[k] - lo[k])).powi(2);
        }
        let h = (b - a) as f64 * self.path.dt;
        let radius = half2.sqrt() + self.tail * h.sqrt();
        let ta = self.path.time_of(a.max(self.n_lo));
        let tb = self.path.time_of(b.min(self.n_hi));
        let center = std::mem::take(&mut self.center);
        let keep = v.relevant(ta, tb, &center, radius);
        self.center = center;
        keep
    }

    /// Visits grid points strictly inside `(lo, hi)` (offsets in interval `c`).
    #[allow(clippy::too_many_arguments)]
    fn node<V: PathVisitor>(
        &mut self,
        c: u64,
        lo: u64,
        hi: u64,
        p_lo: &[f64],
        p_hi: &[f64],
        reverse: bool,
        v: &mut V,
    ) -> ControlFlow<()> {
        if hi - lo < 2 {
            return ControlFlow::Continue(());
        }
        let base = c * FINE_PER_COARSE;
        if !self.plausible(base + lo, base + hi, p_lo, p_hi, v) {
            return ControlFlow::Continue(());
        }
        let mid = (lo + hi) / 2;
        let mut p_mid = vec![0.0; p_lo.len()];
        self.path.bridge_mid(c, mid, p_lo, p_hi, hi - lo, &mut p_mid);
        let n_mid = base + mid;
        let visit_mid = |s: &mut Self, v: &mut V| {
            if n_mid >= s.n_lo && n_mid <= s.n_hi {
                let t = s.path.time_of(n_mid);
                if v.relevant(t, t, &p_mid, 0.0) {
                    return v.visit(n_mid, t, &p_mid);
                }
            }
            ControlFlow::Continue(())
        };
        if !reverse {
            self.node(c, lo, mid, p_lo, &p_mid, false, v)?;
            visit_mid(self, v)?;
            self.node(c, mid, hi, &p_mid, p_hi, false, v)
        } else {
            self.node(c, mid, hi, &p_mid, p_hi, true, v)?;
            visit_mid(self, v)?;
            self.node(c, lo, mid, p_lo, &p_mid, true, v)
        }
    }
}
