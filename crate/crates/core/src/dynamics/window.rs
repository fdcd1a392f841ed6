use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelParams, Mode};
use crate::stats::poisson_tail_bound;

/// Default probability budget for omitted particles mattering in one trial.
pub const DEFAULT_EPSILON: f64 = 1e-6;

/// Finite space-time window over which a realization is simulated.
///
/// Queries are certified inside the axis-aligned box `[-h_k, h_k]` (one
/// half-extent per axis) up to `horizon`. Particles are sampled in the box
/// enlarged by `buffer_radius` on every axis; the buffer is the smallest one
/// for which the expected number of omitted particles able to reach the
/// certified box before `horizon` is below `epsilon_truncation`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationWindow {
    pub half_extent: Vec<f64>,
    pub horizon: f64,
    pub buffer_radius: f64,
    pub epsilon_truncation: f64,
}

impl SimulationWindow {
    pub fn new(params: &ModelParams, half_extent: Vec<f64>, horizon: f64, epsilon: f64) -> Result<Self> {
        params.validate()?;
        if half_extent.len() != params.dim {
            return Err(Error::InvalidParameter(format!(
                "window has {} axes, model has dimension {}",
                half_extent.len(),
                params.dim
            )));
        }
        if !(horizon >= 0.0) || !horizon.is_finite() {
            return Err(Error::InvalidParameter(format!("horizon must be >= 0, got {horizon}")));
        }
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(Error::InvalidParameter(format!("epsilon must lie in (0,1), got {epsilon}")));
        }
        if half_extent.iter().any(|h| !(*h >= 0.0)) {
            return Err(Error::InvalidParameter("negative half extent".into()));
        }
        let buffer_radius = match params.mode {
            Mode::Lattice => {
                let h: Vec<i64> = half_extent.iter().map(|h| h.floor() as i64).collect();
                lattice_buffer(params.lambda, &h, horizon * params.jump_rate, epsilon) as f64
            }
            Mode::Continuum => continuum_buffer(params.lambda, &half_extent, horizon, epsilon) as f64,
        };
        Ok(Self { half_extent, horizon, buffer_radius, epsilon_truncation: epsilon })
    }

    /// Window certifying every cell of levels `0..=depth` (plus the continuum
    /// detection shell) until `(depth + 1) / S`.
    pub fn for_depth(params: &ModelParams, depth: u64) -> Result<Self> {
        Self::for_region(params, depth as f64, params.level_end(depth))
    }

    /// Window certifying planar sites with `|x|, |y| <= planar_radius` until `horizon`.
    pub fn for_region(params: &ModelParams, planar_radius: f64, horizon: f64) -> Result<Self> {
        let margin = params.cell_radius();
        let half: Vec<f64> = (0..params.dim)
            .map(|k| if k < 2 { planar_radius + margin } else { margin })
            .collect();
        Self::new(params, half, horizon, DEFAULT_EPSILON)
    }

    pub fn with_extra_buffer(&self, extra: f64) -> Self {
        Self { buffer_radius: self.buffer_radius + extra, ..self.clone() }
    }

    /// Whether a point lies in the certified box (with a tiny slack).
    pub fn certifies(&self, point: &[f64]) -> bool {
        point.len() == self.half_extent.len()
            && point.iter().zip(&self.half_extent).all(|(p, h)| p.abs() <= h + 1e-9)
    }

    pub fn sampling_half_extent(&self) -> Vec<f64> {
        self.half_extent.iter().map(|h| h + self.buffer_radius).collect()
    }
}

/// Exact counts of integer points at l1 distance `m` from the box
/// `prod [-h_k, h_k]`, for `m = 0..=m_max`.
fn l1_shell_counts(half: &[i64], m_max: usize) -> Vec<f64> {
    let mut acc = vec![0.0; m_max + 1];
    acc[0] = 1.0;
    for &h in half {
        let mut next = vec![0.0; m_max + 1];
        for (m, &c) in acc.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            next[m] += c * (2 * h + 1) as f64;
            for a in 1..=(m_max - m) {
                next[m + a] += 2.0 * c;
            }
        }
        acc = next;
    }
    acc
}

/// Smallest buffer `b` with `sum_{m > b} lambda * #shell(m) * P(Poisson(mu) >= m) < eps`.
pub(crate) fn lattice_buffer(lambda: f64, half: &[i64], mean_jumps: f64, eps: f64) -> i64 {
    if lambda <= 0.0 || mean_jumps <= 0.0 {
        return 0;
    }
    let mut m_max = (mean_jumps * 3.0 + 64.0) as usize;
    loop {
        let tail_term = poisson_tail_bound(mean_jumps, m_max as f64);
        if tail_term < 1e-40 {
            break;
        }
        m_max *= 2;
    }
    let counts = l1_shell_counts(half, m_max);
    let terms: Vec<f64> = (0..=m_max)
        .map(|m| lambda * counts[m] * poisson_tail_bound(mean_jumps, m as f64))
        .collect();
    let mut suffix = 0.0;
    let mut b = m_max;
    // suffix over m > b
    while b > 0 {
        let s = suffix + terms[b];
        if s >= eps {
            break;
        }
        suffix = s;
        b -= 1;
    }
    b as i64
}

/// Smallest integer buffer `b` with
/// `sum_{m >= b} lambda * vol(shell m) * 2d exp(-m^2 / 2T) < eps`, where the
/// shell holds points at sup-distance in `[m, m+1)` from the box.
pub(crate) fn continuum_buffer(lambda: f64, half: &[f64], horizon: f64, eps: f64) -> i64 {
    if lambda <= 0.0 || horizon <= 0.0 {
        return 0;
    }
    let d = half.len() as f64;
    let vol = |r: f64| half.iter().map(|h| 2.0 * (h + r)).product::<f64>();
    let term = |m: f64| {
        let shell = vol(m + 1.0) - vol(m);
        lambda * shell * 2.0 * d * (-(m * m) / (2.0 * horizon)).exp()
    };
    let mut m_max = (horizon.sqrt() * 20.0 + 16.0).ceil() as i64;
    while term(m_max as f64) > 1e-40 {
        m_max *= 2;
    }
    let mut suffix = 0.0;
    let mut b = m_max;
    while b > 0 {
        let s = suffix + term((b - 1) as f64);
        if s >= eps {
            break;
        }
        suffix = s;
        b -= 1;
    }
    b
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shell_counts_match_enumeration() {
        let half = [2i64, 0, 1];
        let counts = l1_shell_counts(&half, 6);
        let mut brute = [0.0; 7];
        for x in -10i64..=10 {
            for y in -10i64..=10 {
                for z in -10i64..=10 {
                    let dist = [(x, 2), (y, 0), (z, 1)]
                        .iter()
                        .map(|&(v, h)| (v.abs() - h).max(0))
                        .sum::<i64>() as usize;
                    if dist <= 6 {
                        brute[dist] += 1.0;
                    }
                }
            }
        }
        assert_eq!(counts, brute.to_vec());
    }

    #[test]
    fn buffers_grow_with_horizon_and_intensity() {
        let h = [10i64, 10];
        let b1 = lattice_buffer(0.1, &h, 10.0, 1e-6);
        let b2 = lattice_buffer(0.1, &h, 40.0, 1e-6);
        let b3 = lattice_buffer(2.0, &h, 40.0, 1e-6);
        assert!(b1 > 10 && b1 < b2 && b2 <= b3, "{b1} {b2} {b3}");
        assert_eq!(lattice_buffer(0.0, &h, 40.0, 1e-6), 0);
        let c1 = continuum_buffer(0.1, &[5.0, 5.0], 10.0, 1e-6);
        let c2 = continuum_buffer(0.1, &[5.0, 5.0], 40.0, 1e-6);
        assert!(c1 > 0 && c1 < c2);
    }

    #[test]
    fn buffer_meets_budget() {
        let h = [20i64, 20];
        let mu = 21.0;
        let b = lattice_buffer(0.5, &h, mu, 1e-6);
        let counts = l1_shell_counts(&h, 400);
        let tail: f64 = ((b + 1) as usize..=400)
            .map(|m| 0.5 * counts[m] * poisson_tail_bound(mu, m as f64))
            .sum();
        assert!(tail < 1e-6);
        let tail_smaller: f64 = (b as usize..=400)
            .map(|m| 0.5 * counts[m] * poisson_tail_bound(mu, m as f64))
            .sum();
        assert!(tail_smaller >= 1e-6);
    }

    #[test]
    fn depth_window_shape() {
        let p = ModelParams::lattice(0.1, 1.0, 3).unwrap();
        let w = SimulationWindow::for_depth(&p, 5).unwrap();
        assert_eq!(w.half_extent, vec![5.0, 5.0, 0.0]);
        assert_eq!(w.horizon, 6.0);
        assert!(w.certifies(&[5.0, -5.0, 0.0]));
        assert!(!w.certifies(&[5.0, -5.0, 1.0]));
        let c = ModelParams::continuum(0.1, 1.0, 2).unwrap();
        let w = SimulationWindow::for_depth(&c, 5).unwrap();
        assert!((w.half_extent[0] - (5.0 + 4.0 / 3.0)).abs() < 1e-12);
    }
}
