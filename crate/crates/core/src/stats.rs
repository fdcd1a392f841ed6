//! Small statistics toolkit shared by the oracles and the harness.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

/// Wilson score interval for `successes` out of `trials`.
pub fn wilson_interval(successes: u64, trials: u64, z: f64) -> Result<(f64, f64)> {
    if trials == 0 {
        return Err(Error::InvalidParameter("wilson interval needs trials >= 1".into()));
    }
    if successes > trials {
        return Err(Error::InvalidParameter(format!(
            "successes {successes} exceed trials {trials}"
        )));
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    let mut lo = (center - half).max(0.0);
    let mut hi = (center + half).min(1.0);
    if successes == 0 {
        lo = 0.0;
    }
    if successes == trials {
        hi = 1.0;
    }
    Ok((lo, hi))
}

/// A binomial proportion with its 95% Wilson interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Proportion {
    pub successes: u64,
    pub trials: u64,
    pub estimate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl Proportion {
    pub fn new(successes: u64, trials: u64) -> Result<Self> {
        let (ci_low, ci_high) = wilson_interval(successes, trials, Z95)?;
        Ok(Self {
            successes,
            trials,
            estimate: successes as f64 / trials as f64,
            ci_low,
            ci_high,
        })
    }

    /// True when the two 95% intervals share at least one point.
    pub fn overlaps(&self, other: &Proportion) -> bool {
        self.ci_low <= other.ci_high && other.ci_low <= self.ci_high
    }
}

/// Running mean and variance (Welford).
#[derive(Clone, Copy, Debug, Default)]
pub struct Moments {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance; zero for fewer than two samples.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub fn std_error(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            (self.variance() / self.n as f64).sqrt()
        }
    }
}

/// Pearson correlation of paired samples; zero when either side is constant.
pub fn correlation(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len().min(ys.len());
    if n < 2 {
        return 0.0;
    }
    let mx = xs[..n].iter().sum::<f64>() / n as f64;
    let my = ys[..n].iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs[..n].iter().zip(&ys[..n]) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx).powi(2);
        syy += (y - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        0.0
    } else {
        sxy / (sxx * syy).sqrt()
    }
}

/// `P(Poisson(mean) >= m)`.
pub fn poisson_tail(mean: f64, m: u64) -> f64 {
    if m == 0 {
        return 1.0;
    }
    if mean <= 0.0 {
        return 0.0;
    }
    // 1 - P(X <= m-1), summed in log space for stability.
    let mut term = (-mean).exp();
    let mut cdf = term;
    for k in 1..m {
        term *= mean / k as f64;
        cdf += term;
    }
    (1.0 - cdf).max(0.0)
}

/// Chernoff bound `P(Poisson(mean) >= m) <= e^{-mean} (e mean / m)^m` for `m > mean`.
pub fn poisson_tail_bound(mean: f64, m: f64) -> f64 {
    if mean <= 0.0 {
        return if m <= 0.0 { 1.0 } else { 0.0 };
    }
    if m <= mean {
        return 1.0;
    }
    (-mean + m * (1.0 + (mean / m).ln())).exp()
}

/// Ordinary least squares `y = a + b x`; returns `(a, b)`.
pub fn least_squares(xs: &[f64], ys: &[f64]) -> Option<(f64, f64)> {
    let n = xs.len();
    if n < 2 || ys.len() != n {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx <= 0.0 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let b = sxy / sxx;
    Some((my - b * mx, b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn wilson_half() {
        let (lo, hi) = wilson_interval(5, 10, 1.96).unwrap();
        assert_abs_diff_eq!(lo, 0.2366, epsilon = 1e-3);
        assert_abs_diff_eq!(hi, 0.7634, epsilon = 1e-3);
    }

    #[test]
    fn wilson_boundaries() {
        assert_eq!(wilson_interval(0, 10, Z95).unwrap().0, 0.0);
        assert_eq!(wilson_interval(10, 10, Z95).unwrap().1, 1.0);
        assert!(wilson_interval(1, 0, Z95).is_err());
        assert!(wilson_interval(3, 2, Z95).is_err());
    }

    #[test]
    fn poisson_tail_matches_direct_sum() {
        let mean: f64 = 1.3;
        let direct: f64 = (3..60)
            .map(|k| (-mean).exp() * mean.powi(k) / (1..=k).map(f64::from).product::<f64>())
            .sum();
        assert_abs_diff_eq!(poisson_tail(mean, 3), direct, epsilon = 1e-12);
        assert_eq!(poisson_tail(0.0, 1), 0.0);
        assert_eq!(poisson_tail(2.0, 0), 1.0);
    }

    #[test]
    fn chernoff_dominates_exact() {
        for m in 3..40u64 {
            assert!(poisson_tail_bound(2.5, m as f64) >= poisson_tail(2.5, m) - 1e-15);
        }
    }

    #[test]
    fn moments_and_fit() {
        let mut m = Moments::default();
        for x in [1.0, 2.0, 3.0, 4.0] {
            m.push(x);
        }
        assert_abs_diff_eq!(m.mean(), 2.5);
        assert_abs_diff_eq!(m.variance(), 5.0 / 3.0, epsilon = 1e-12);
        let (a, b) = least_squares(&[0.0, 1.0, 2.0], &[1.0, 3.0, 5.0]).unwrap();
        assert_abs_diff_eq!(a, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(b, 2.0, epsilon = 1e-12);
        assert!(least_squares(&[1.0, 1.0], &[0.0, 1.0]).is_none());
    }
}
