//! Geometry and time structure: sites of the plane `H_d = Z^2 x {0}`,
//! cells `K_i = i x T_i`, levels `J_k`, and the space-time cone.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Radius of a continuum cell `B(i, 4/3) x T_i`.
pub const CONTINUUM_CELL_RADIUS: f64 = 4.0 / 3.0;
/// Detection radius in the continuum model.
pub const CONTINUUM_DETECTION_RADIUS: f64 = 1.0;
/// Extra radius added to continuum regions of influence, `B(i, 10 + L)`.
pub const CONTINUUM_INFLUENCE_MARGIN: f64 = 10.0;
/// Sites closer than this to a continuum apex site are exempt from the cone check.
pub const CONTINUUM_EXCLUSION_RADIUS: f64 = 5.0;
/// Largest supported lattice dimension.
pub const MAX_DIM: usize = 16;
/// Slack used when deciding whether a grid time lies in a closed interval.
pub(crate) const TIME_SLACK: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Lattice,
    Continuum,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Lattice => "lattice",
            Mode::Continuum => "continuum",
        })
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lattice" => Ok(Mode::Lattice),
            "continuum" => Ok(Mode::Continuum),
            other => Err(Error::InvalidParameter(format!("unknown mode {other:?}"))),
        }
    }
}

fn default_rate() -> f64 {
    1.0
}

fn default_step_dt() -> f64 {
    0.01
}

/// Model parameters: particle intensity, target speed bound, dimension and mode.
///
/// `jump_rate` (total walk jump rate) and `step_dt` (continuum time grid)
/// are simulation knobs with defaults 1 and 0.01.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub lambda: f64,
    pub speed: f64,
    pub dim: usize,
    pub mode: Mode,
    #[serde(default = "default_rate")]
    pub jump_rate: f64,
    #[serde(default = "default_step_dt")]
    pub step_dt: f64,
}

impl ModelParams {
    pub fn new(lambda: f64, speed: f64, dim: usize, mode: Mode) -> Result<Self> {
        let p = Self {
            lambda,
            speed,
            dim,
            mode,
            jump_rate: default_rate(),
            step_dt: default_step_dt(),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn lattice(lambda: f64, speed: f64, dim: usize) -> Result<Self> {
        Self::new(lambda, speed, dim, Mode::Lattice)
    }

    pub fn continuum(lambda: f64, speed: f64, dim: usize) -> Result<Self> {
        Self::new(lambda, speed, dim, Mode::Continuum)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return bad(format!("lambda must be finite and >= 0, got {}", self.lambda));
        }
        if !(self.speed > 0.0) || !self.speed.is_finite() {
            return bad(format!("speed must be finite and > 0, got {}", self.speed));
        }
        if self.dim < 2 || self.dim > MAX_DIM {
            return bad(format!("dimension must lie in 2..={MAX_DIM}, got {}", self.dim));
        }
        if !(self.jump_rate > 0.0) || !self.jump_rate.is_finite() {
            return bad(format!("jump rate must be > 0, got {}", self.jump_rate));
        }
        if !(self.step_dt > 0.0) || !self.step_dt.is_finite() {
            return bad(format!("step_dt must be > 0, got {}", self.step_dt));
        }
        Ok(())
    }

    pub fn with_lambda(&self, lambda: f64) -> Self {
        Self { lambda, ..self.clone() }
    }

    pub fn with_speed(&self, speed: f64) -> Self {
        Self { speed, ..self.clone() }
    }

    pub fn with_jump_rate(mut self, rate: f64) -> Self {
        self.jump_rate = rate;
        self
    }

    pub fn with_step_dt(mut self, dt: f64) -> Self {
        self.step_dt = dt;
        self
    }

    /// Cone slope `S / (4 sqrt d)`.
    pub fn delta(&self) -> f64 {
        self.speed / (4.0 * (self.dim as f64).sqrt())
    }

    /// Start of the time interval of level `k`.
    pub fn level_start(&self, k: u64) -> f64 {
        k as f64 / self.speed
    }

    /// End of the time interval of level `k`.
    pub fn level_end(&self, k: u64) -> f64 {
        (k + 1) as f64 / self.speed
    }

    /// Spatial radius of a cell: 0 on the lattice, 4/3 in the continuum.
    pub fn cell_radius(&self) -> f64 {
        match self.mode {
            Mode::Lattice => 0.0,
            Mode::Continuum => CONTINUUM_CELL_RADIUS,
        }
    }

    pub fn detection_radius(&self) -> f64 {
        match self.mode {
            Mode::Lattice => 0.0,
            Mode::Continuum => CONTINUUM_DETECTION_RADIUS,
        }
    }

    /// Additive margin of the region of influence (`B(i, margin + L)`).
    pub fn influence_margin(&self) -> f64 {
        match self.mode {
            Mode::Lattice => 0.0,
            Mode::Continuum => CONTINUUM_INFLUENCE_MARGIN,
        }
    }
}

/// A point of `Z^d`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Site {
    pub coords: Vec<i64>,
}

impl Site {
    pub fn new(coords: Vec<i64>) -> Self {
        Self { coords }
    }

    pub fn origin(dim: usize) -> Self {
        Self { coords: vec![0; dim] }
    }

    /// The site `(x, y, 0, ..., 0)` of `H_d`.
    pub fn planar(x: i64, y: i64, dim: usize) -> Self {
        let mut coords = vec![0; dim.max(2)];
        coords[0] = x;
        coords[1] = y;
        Self { coords }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn l1(&self) -> u64 {
        self.coords.iter().map(|c| c.unsigned_abs()).sum()
    }

    pub fn in_hyperplane(&self) -> bool {
        self.coords.iter().skip(2).all(|&c| c == 0)
    }

    /// First two coordinates when the site lies in `H_d`.
    pub fn plane(&self) -> Option<(i64, i64)> {
        self.in_hyperplane()
            .then(|| (self.coords[0], self.coords.get(1).copied().unwrap_or(0)))
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.coords.iter().map(|&c| c as f64).collect()
    }
}

impl std::fmt::Display for Site {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("(")?;
        for (k, c) in self.coords.iter().enumerate() {
            if k > 0 {
                f.write_str(",")?;
            }
            write!(f, "{c}")?;
        }
        f.write_str(")")
    }
}

/// Spatial footprint of a cell.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Extent {
    Point,
    Ball(f64),
}

/// Space-time cell `K_i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub site: Site,
    pub t_start: f64,
    pub t_end: f64,
    pub extent: Extent,
}

/// Builds `K_i` for a site of `H_d`. Endpoints are computed as `k / S`
/// so shared instants of consecutive levels compare equal.
pub fn cell_of(site: &Site, params: &ModelParams) -> Result<Cell> {
    if !site.in_hyperplane() || site.dim() != params.dim {
        return Err(Error::OutsideHyperplane(site.coords.clone()));
    }
    let k = site.l1();
    Ok(Cell {
        site: site.clone(),
        t_start: params.level_start(k),
        t_end: params.level_end(k),
        extent: match params.mode {
            Mode::Lattice => Extent::Point,
            Mode::Continuum => Extent::Ball(CONTINUUM_CELL_RADIUS),
        },
    })
}

/// Planar coordinates of `J_k` in lexicographic order.
pub fn planar_level(k: u64) -> Vec<(i64, i64)> {
    let k = k as i64;
    let mut out = Vec::with_capacity((4 * k).max(1) as usize);
    for x in -k..=k {
        let r = k - x.abs();
        out.push((x, -r));
        if r != 0 {
            out.push((x, r));
        }
    }
    out
}

/// Enumerates `J_k = { x in H_d : |x|_1 = k }`, optionally clipped to
/// `|coordinate| <= radius_cap`.
pub fn level_sites(k: u64, dim: usize, radius_cap: Option<i64>) -> Vec<Site> {
    planar_level(k)
        .into_iter()
        .filter(|&(x, y)| radius_cap.is_none_or(|c| x.abs() <= c && y.abs() <= c))
        .map(|(x, y)| Site::planar(x, y, dim))
        .collect()
}

/// Calls `f` on every planar neighbour with l1 norm one larger.
#[inline]
pub fn for_each_planar_successor(x: i64, y: i64, mut f: impl FnMut(i64, i64)) {
    if x >= 0 {
        f(x + 1, y);
    }
    if x <= 0 {
        f(x - 1, y);
    }
    if y >= 0 {
        f(x, y + 1);
    }
    if y <= 0 {
        f(x, y - 1);
    }
}

/// Lattice neighbours of `site` inside `H_d` whose l1 norm is one larger.
/// Returns an empty list for sites outside `H_d`.
pub fn oriented_successors(site: &Site) -> Vec<Site> {
    let Some((x, y)) = site.plane() else {
        return Vec::new();
    };
    let mut out = Vec::with_capacity(4);
    for_each_planar_successor(x, y, |a, b| out.push(Site::planar(a, b, site.dim())));
    out.sort();
    out
}

/// The open cone `{(y, s) : s > t0, |y - x0|_2 < delta (s - t0)}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cone {
    pub apex: Vec<f64>,
    pub apex_time: f64,
    pub delta: f64,
}

impl Cone {
    pub fn new(apex: Vec<f64>, apex_time: f64, delta: f64) -> Result<Self> {
        if !(delta > 0.0) {
            return Err(Error::InvalidParameter(format!("cone slope must be > 0, got {delta}")));
        }
        Ok(Self { apex, apex_time, delta })
    }

    pub fn contains(&self, point: &[f64], time: f64) -> bool {
        time > self.apex_time && l2_dist(point, &self.apex) < self.delta * (time - self.apex_time)
    }
}

/// Euclidean distance between equal-length points.
#[inline]
pub fn l2_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Cone convenience wrapper matching the free-function form of the API.
pub fn cone_contains(cone: &Cone, point: &[f64], time: f64) -> bool {
    cone.contains(point, time)
}

/// A point of `K_j` found inside a shifted cone.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConeViolation {
    pub apex_site: Vec<i64>,
    pub apex_point: Vec<f64>,
    pub apex_time: f64,
    pub site: Vec<i64>,
    pub time: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConeReport {
    pub pass: bool,
    pub mode: Mode,
    pub delta: f64,
    pub checks: u64,
    pub counterexample: Option<ConeViolation>,
}

/// Exhaustively checks that for every apex site `x` with `|x|_1 <= x_norm_max`
/// and every sampled apex time `t` in `T_x`, the cone `C_{x,t}` misses every
/// cell `K_j` with `j != x` and `|j|_1 <= j_norm_max`.
///
/// In continuum mode the apex point ranges over a sample of `B(x, 4/3)`
/// (centre, axis extremes, planar diagonals), cells are balls `B(j, 4/3)`,
/// and only sites with `|j - x|_2 > 5` are checked.
pub fn verify_cone_disjointness(
    params: &ModelParams,
    x_norm_max: u64,
    j_norm_max: u64,
    t_samples: usize,
) -> Result<ConeReport> {
    verify_cone_disjointness_with_slope(params, params.delta(), x_norm_max, j_norm_max, t_samples)
}

/// As [`verify_cone_disjointness`] with an explicit cone slope.
pub fn verify_cone_disjointness_with_slope(
    params: &ModelParams,
    delta: f64,
    x_norm_max: u64,
    j_norm_max: u64,
    t_samples: usize,
) -> Result<ConeReport> {
    params.validate()?;
    if x_norm_max > j_norm_max {
        return Err(Error::InvalidParameter(format!(
            "x_norm_max {x_norm_max} exceeds j_norm_max {j_norm_max}"
        )));
    }
    if !(delta > 0.0) {
        return Err(Error::InvalidParameter(format!("cone slope must be > 0, got {delta}")));
    }
    let d = params.dim;
    let targets: Vec<(i64, i64, f64)> = (0..=j_norm_max)
        .flat_map(planar_level)
        .map(|(x, y)| (x, y, params.level_end(x.unsigned_abs() + y.unsigned_abs())))
        .collect();

    let apex_offsets = apex_offsets(params);
    let mut checks = 0u64;
    for k in 0..=x_norm_max {
        let (t0, t1) = (params.level_start(k), params.level_end(k));
        for (ax, ay) in planar_level(k) {
            for s in 0..t_samples.max(1) {
                let t = if t_samples <= 1 {
                    t0
                } else if s + 1 == t_samples {
                    t1
                } else {
                    t0 + (t1 - t0) * s as f64 / (t_samples - 1) as f64
                };
                for off in &apex_offsets {
                    let px = ax as f64 + off[0];
                    let py = ay as f64 + off[1];
                    let perp2: f64 = off[2..].iter().map(|v| v * v).sum();
                    for &(jx, jy, j_end) in &targets {
                        if (jx, jy) == (ax, ay) {
                            continue;
                        }
                        if params.mode == Mode::Continuum {
                            let di = (((jx - ax) as f64).powi(2) + ((jy - ay) as f64).powi(2)).sqrt();
                            if di <= CONTINUUM_EXCLUSION_RADIUS {
                                continue;
                            }
                        }
                        checks += 1;
                        if j_end <= t {
                            continue;
                        }
                        let r = ((jx as f64 - px).powi(2) + (jy as f64 - py).powi(2) + perp2).sqrt();
                        // closest point of the cell's spatial extent to the apex
                        let gap = (r - params.cell_radius()).max(0.0);
                        if gap < delta * (j_end - t) {
                            let mut apex_point = vec![0.0; d];
                            apex_point[0] = px;
                            apex_point[1] = py;
                            apex_point[2..].copy_from_slice(&off[2..]);
                            return Ok(ConeReport {
                                pass: false,
                                mode: params.mode,
                                delta,
                                checks,
                                counterexample: Some(ConeViolation {
                                    apex_site: Site::planar(ax, ay, d).coords,
                                    apex_point,
                                    apex_time: t,
                                    site: Site::planar(jx, jy, d).coords,
                                    time: j_end,
                                }),
                            });
                        }
                    }
                }
            }
        }
    }
    Ok(ConeReport { pass: true, mode: params.mode, delta, checks, counterexample: None })
}

fn apex_offsets(params: &ModelParams) -> Vec<Vec<f64>> {
    let d = params.dim;
    match params.mode {
        Mode::Lattice => vec![vec![0.0; d]],
        Mode::Continuum => {
            let r = CONTINUUM_CELL_RADIUS;
            let mut out = vec![vec![0.0; d]];
            for axis in 0..d {
                for sign in [-1.0, 1.0] {
                    let mut v = vec![0.0; d];
                    v[axis] = sign * r;
                    out.push(v);
                }
            }
            let h = r / std::f64::consts::SQRT_2;
            for (sx, sy) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
                let mut v = vec![0.0; d];
                v[0] = sx * h;
                v[1] = sy * h;
                out.push(v);
            }
            out
        }
    }
}

#[cfg(test)]
mod tests {

    #[test]
    fn l2_dist_is_euclidean() {
        assert_eq!(l2_dist(&[0.0, 0.0], &[3.0, 4.0]), 5.0);
        assert_eq!(l2_dist(&[1.0, 1.0, 1.0], &[1.0, 1.0, 1.0]), 0.0);
    }

    use super::*;

    fn lat(s: f64, d: usize) -> ModelParams {
        ModelParams::lattice(0.1, s, d).unwrap()
    }

    #[test]
    fn cell_intervals() {
        let c = cell_of(&Site::new(vec![2, 1, 0, 0]), &lat(1.0, 4)).unwrap();
        assert_eq!((c.t_start, c.t_end), (3.0, 4.0));
        let c = cell_of(&Site::origin(2), &lat(2.0, 2)).unwrap();
        assert_eq!((c.t_start, c.t_end), (0.0, 0.5));
        let c = cell_of(&Site::new(vec![-3, 2]), &lat(0.5, 2)).unwrap();
        assert_eq!((c.t_start, c.t_end), (10.0, 12.0));
        assert_eq!(
            cell_of(&Site::new(vec![0, 0, 1]), &lat(1.0, 3)),
            Err(Error::OutsideHyperplane(vec![0, 0, 1]))
        );
    }

    #[test]
    fn consecutive_cells_share_an_instant() {
        for s in [0.3, 0.7, 1.0, 3.0] {
            let p = lat(s, 2);
            for k in 0..200u64 {
                assert_eq!(p.level_end(k), p.level_start(k + 1));
                let a = cell_of(&Site::planar(k as i64, 0, 2), &p).unwrap();
                assert!((a.t_end - a.t_start - 1.0 / s).abs() < 1e-12 * (k + 1) as f64 / s);
            }
        }
    }

    #[test]
    fn levels() {
        assert_eq!(level_sites(0, 3, None), vec![Site::origin(3)]);
        let l1 = level_sites(1, 2, None);
        assert_eq!(l1.len(), 4);
        for s in [[1, 0], [-1, 0], [0, 1], [0, -1]] {
            assert!(l1.contains(&Site::new(s.to_vec())));
        }
        // brute force enumeration of |x|_1 = 3 in Z^2
        let mut brute = vec![];
        for x in -3i64..=3 {
            for y in -3i64..=3 {
                if x.abs() + y.abs() == 3 {
                    brute.push(Site::planar(x, y, 5));
                }
            }
        }
        brute.sort();
        let l3 = level_sites(3, 5, None);
        assert_eq!(l3.len(), 12);
        assert_eq!(l3, brute);
        assert!(l3.iter().all(|s| s.coords[2..].iter().all(|&c| c == 0)));
        // only the four corners (±2, ±2) survive the cap
        assert_eq!(level_sites(4, 2, Some(2)).len(), 4);
    }

    #[test]
    fn successors() {
        let s = |v: &[i64]| Site::new(v.to_vec());
        let mut want = vec![s(&[1, 0]), s(&[-1, 0]), s(&[0, 1]), s(&[0, -1])];
        want.sort();
        assert_eq!(oriented_successors(&s(&[0, 0])), want);
        assert_eq!(oriented_successors(&s(&[2, 1])), vec![s(&[2, 2]), s(&[3, 1])]);
        let mut want = vec![s(&[3, 0]), s(&[2, 1]), s(&[2, -1])];
        want.sort();
        assert_eq!(oriented_successors(&s(&[2, 0])), want);
        for k in 0..6 {
            for site in level_sites(k, 3, None) {
                let succ = oriented_successors(&site);
                assert!((2..=4).contains(&succ.len()));
                assert!(succ.iter().all(|n| n.l1() == k + 1 && n.in_hyperplane()));
            }
        }
    }

    #[test]
    fn cone_membership_is_strict() {
        let c = Cone::new(vec![0.0, 0.0], 0.0, 0.25).unwrap();
        assert!(c.contains(&[1.0, 0.0], 5.0));
        assert!(!c.contains(&[1.0, 0.0], 4.0));
        assert!(!c.contains(&[0.0, 0.0], 0.0));
        assert!(Cone::new(vec![0.0], 0.0, 0.0).is_err());
    }

    #[test]
    fn cone_check_small() {
        for (d, s) in [(2, 1.0), (3, 2.0), (2, 0.5)] {
            let r = verify_cone_disjointness(&lat(s, d), 6, 12, 5).unwrap();
            assert!(r.pass, "{r:?}");
            assert!(r.checks > 0);
        }
        let c = ModelParams::continuum(0.1, 1.0, 2).unwrap();
        assert!(verify_cone_disjointness(&c, 4, 10, 4).unwrap().pass);
        assert!(verify_cone_disjointness(&lat(1.0, 2), 5, 3, 2).is_err());
    }

    #[test]
    fn inflated_slope_is_caught() {
        // The worst lattice ratio (1 + |v|_1) / |v|_2 is 3/sqrt(2) at v = (1,1),
        // so slopes above S sqrt(2)/3 must fail.
        let p = lat(1.0, 2);
        let ok = verify_cone_disjointness_with_slope(&p, 0.47, 4, 8, 8).unwrap();
        assert!(ok.pass);
        let bad = verify_cone_disjointness_with_slope(&p, 0.48, 4, 8, 8).unwrap();
        assert!(!bad.pass);
        let cx = bad.counterexample.unwrap();
        let cone = Cone::new(Site::new(cx.apex_site.clone()).to_f64(), cx.apex_time, 0.48).unwrap();
        // the reported point is a genuine member of both sets
        assert!(cone.contains(&Site::new(cx.site.clone()).to_f64(), cx.time));
    }
}
