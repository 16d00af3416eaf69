//! One-dimensional metric-measure spaces: a periodic stand-in for the line and
//! a graded half-line carrying the Bessel measure `x^{2λ} dx`.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GridKind {
    LinePeriodic,
    Halfline,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DomainParams {
    Periodic { period: f64 },
    Halfline { lambda: f64, right: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Metric {
    Periodic { period: f64 },
    Absolute,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Measure {
    Lebesgue,
    /// `x^{2λ} dx` on the half-line.
    Bessel { lambda: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingPlan {
    pub centers: usize,
    pub radii: Vec<f64>,
    pub dilations: Vec<f64>,
    /// Separations are `2^k r` for these `k`.
    pub separation_powers: Vec<i32>,
    pub max_radius: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DoublingConstants {
    pub n_hat: f64,
    pub d_hat: f64,
    pub plan: SamplingPlan,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayIntegral {
    pub lhs: f64,
    pub volume: f64,
    pub bound_ratio: f64,
}

/// Contiguous (modulo wraparound) run of grid indices.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BallIndices {
    pub start: usize,
    pub len: usize,
    n: usize,
}

impl BallIndices {
    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len).map(move |k| (self.start + k) % self.n)
    }

    pub fn to_vec(&self) -> Vec<usize> {
        self.iter().collect()
    }

    pub fn contains(&self, i: usize) -> bool {
        (i + self.n - self.start) % self.n < self.len
    }
}

#[derive(Clone, Debug)]
pub struct Grid {
    kind: GridKind,
    domain: DomainParams,
    points: Vec<f64>,
    quad_weights: Vec<f64>,
    edges: Vec<f64>,
    metric: Metric,
    measure: Measure,
    mass_scale: f64,
    doubling: OnceLock<DoublingConstants>,
}

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind
            && self.domain == other.domain
            && self.points == other.points
            && self.quad_weights == other.quad_weights
            && self.mass_scale == other.mass_scale
    }
}

/// Smallest half-line cell as a fraction of `R`.
pub const HALFLINE_MIN_CELL: f64 = 1e-3;

pub fn make_grid(kind: GridKind, size: usize, params: DomainParams) -> Result<Grid> {
    if size < 8 {
        return Err(Error::InvalidDomain(format!("size {size} < 8")));
    }
    match (kind, params) {
        (GridKind::LinePeriodic, DomainParams::Periodic { period }) => {
            if !(period > 0.0 && period.is_finite()) {
                return Err(Error::InvalidDomain(format!("period {period} must be positive")));
            }
            let h = period / size as f64;
            let points: Vec<f64> = (0..size).map(|i| -0.5 * period + i as f64 * h).collect();
            let edges = (0..=size).map(|i| -0.5 * period + (i as f64 - 0.5) * h).collect();
            Ok(Grid {
                kind,
                domain: params,
                points,
                quad_weights: vec![h; size],
                edges,
                metric: Metric::Periodic { period },
                measure: Measure::Lebesgue,
                mass_scale: 1.0,
                doubling: OnceLock::new(),
            })
        }
        (GridKind::Halfline, DomainParams::Halfline { lambda, right }) => {
            if !(right > 0.0 && right.is_finite()) {
                return Err(Error::InvalidDomain(format!("right endpoint {right} must be positive")));
            }
            if !(lambda >= 0.0 && lambda.is_finite()) {
                return Err(Error::InvalidDomain(format!("Bessel parameter {lambda} must be >= 0")));
            }
            let edges = graded_edges(size, right);
            let points: Vec<f64> = edges.windows(2).map(|e| 0.5 * (e[0] + e[1])).collect();
            let prim = |x: f64| bessel_primitive(lambda, x);
            let quad_weights = edges.windows(2).map(|e| prim(e[1]) - prim(e[0])).collect();
            let measure = if lambda == 0.0 { Measure::Lebesgue } else { Measure::Bessel { lambda } };
            Ok(Grid {
                kind,
                domain: params,
                points,
                quad_weights,
                edges,
                metric: Metric::Absolute,
                measure,
                mass_scale: 1.0,
                doubling: OnceLock::new(),
            })
        }
        _ => Err(Error::InvalidDomain(format!("{kind:?} does not accept {params:?}"))),
    }
}

/// Cell edges `0 = e_0 < ... < e_N = R`, geometric with the smallest cell near
/// `HALFLINE_MIN_CELL * R`; uniform once that would not cover `R`.
fn graded_edges(size: usize, right: f64) -> Vec<f64> {
    let h0 = HALFLINE_MIN_CELL * right;
    if size as f64 * h0 >= right {
        return (0..=size).map(|i| right * i as f64 / size as f64).collect();
    }
    let target = right / h0;
    let n = size as i32;
    let total = |q: f64| (q.powi(n) - 1.0) / (q - 1.0);
    let (mut lo, mut hi) = (1.0 + 1e-12, 2.0);
    while total(hi) < target {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if total(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let q = 0.5 * (lo + hi);
    let mut edges = Vec::with_capacity(size + 1);
    let mut x = 0.0;
    let mut h = h0;
    edges.push(0.0);
    for _ in 0..size {
        x += h;
        h *= q;
        edges.push(x);
    }
    // Absorb the bisection residue proportionally.
    let s = right / edges[size];
    for e in &mut edges {
        *e *= s;
    }
    edges[size] = right;
    edges
}

fn bessel_primitive(lambda: f64, x: f64) -> f64 {
    let a = 2.0 * lambda + 1.0;
    x.powf(a) / a
}

impl Grid {
    pub fn kind(&self) -> GridKind {
        self.kind
    }

    pub fn domain(&self) -> DomainParams {
        self.domain
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn quad_weights(&self) -> &[f64] {
        &self.quad_weights
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn measure(&self) -> Measure {
        self.measure
    }

    pub fn mass_scale(&self) -> f64 {
        self.mass_scale
    }

    pub fn bessel_lambda(&self) -> f64 {
        match self.measure {
            Measure::Bessel { lambda } => lambda,
            Measure::Lebesgue => 0.0,
        }
    }

    pub fn period(&self) -> Option<f64> {
        match self.domain {
            DomainParams::Periodic { period } => Some(period),
            DomainParams::Halfline { .. } => None,
        }
    }

    pub fn right(&self) -> Option<f64> {
        match self.domain {
            DomainParams::Halfline { right, .. } => Some(right),
            DomainParams::Periodic { .. } => None,
        }
    }

    /// `n` in `V(x, λr) ≲ λ^n V(x, r)` for the continuum model.
    pub fn nominal_dimension(&self) -> f64 {
        2.0 * self.bessel_lambda() + 1.0
    }

    /// `D` in `V(y, r) ≲ (1 + ρ/r)^D V(x, r)` for the continuum model.
    pub fn nominal_translation_exponent(&self) -> f64 {
        2.0 * self.bessel_lambda()
    }

    /// Same grid with `μ` multiplied by `c > 0`.
    pub fn with_mass_scale(&self, c: f64) -> Result<Grid> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::InvalidDomain(format!("mass scale {c} must be positive")));
        }
        let mut g = self.clone();
        g.mass_scale = self.mass_scale * c;
        g.quad_weights = self.quad_weights.iter().map(|w| w * c).collect();
        g.doubling = OnceLock::new();
        Ok(g)
    }

    pub fn dist(&self, a: f64, b: f64) -> f64 {
        match self.metric {
            Metric::Absolute => (a - b).abs(),
            Metric::Periodic { period } => {
                let d = (a - b).abs() % period;
                d.min(period - d)
            }
        }
    }

    /// Closed-form `μ(B(x, r))`.
    pub fn volume(&self, x: f64, r: f64) -> f64 {
        let v = match self.domain {
            DomainParams::Periodic { period } => (2.0 * r).min(period),
            DomainParams::Halfline { lambda, right } => {
                let hi = (x + r).min(right);
                let lo = (x - r).max(0.0);
                if hi <= lo {
                    0.0
                } else {
                    bessel_primitive(lambda, hi) - bessel_primitive(lambda, lo)
                }
            }
        };
        v * self.mass_scale
    }

    /// Indices `i` with `ρ(x, points[i]) < r`.
    pub fn ball_indices(&self, x: f64, r: f64) -> BallIndices {
        let n = self.len();
        match self.domain {
            DomainParams::Periodic { period } => {
                if r >= 0.5 * period {
                    return BallIndices { start: 0, len: n, n };
                }
                let h = period / n as f64;
                let u = (x + 0.5 * period) / h;
                let wrap = |k: i64| k.rem_euclid(n as i64) as usize;
                let inside = |k: i64| self.dist(x, self.points[wrap(k)]) < r;
                let mut lo = (u - r / h).floor() as i64;
                let mut hi = (u + r / h).ceil() as i64;
                while lo <= hi && !inside(lo) {
                    lo += 1;
                }
                while hi >= lo && !inside(hi) {
                    hi -= 1;
                }
                while hi - lo + 1 < n as i64 && inside(lo - 1) {
                    lo -= 1;
                }
                while hi - lo + 1 < n as i64 && inside(hi + 1) {
                    hi += 1;
                }
                let len = (hi - lo + 1).max(0) as usize;
                BallIndices { start: if len == 0 { 0 } else { wrap(lo) }, len: len.min(n), n }
            }
            DomainParams::Halfline { .. } => {
                let lo = self.points.partition_point(|&p| p <= x - r);
                let hi = self.points.partition_point(|&p| p < x + r);
                BallIndices { start: lo.min(n - 1), len: hi.saturating_sub(lo), n }
            }
        }
    }

    /// `Σ_{y ∈ B(points[i], r)} w_y`, the grid's own ball mass.
    pub fn discrete_volume(&self, i: usize, r: f64) -> f64 {
        self.ball_indices(self.points[i], r).iter().map(|k| self.quad_weights[k]).sum()
    }

    pub fn integrate(&self, values: &[f64]) -> Result<f64> {
        if values.len() != self.len() {
            return Err(Error::LengthMismatch { expected: self.len(), got: values.len() });
        }
        let terms: Vec<f64> = values.iter().zip(&self.quad_weights).map(|(v, w)| v * w).collect();
        Ok(crate::par::pairwise_sum(&terms))
    }

    fn max_radius(&self) -> f64 {
        match self.domain {
            DomainParams::Periodic { period } => 0.25 * period,
            DomainParams::Halfline { right, .. } => 0.25 * right,
        }
    }

    fn min_spacing(&self) -> f64 {
        self.edges.windows(2).map(|e| e[1] - e[0]).fold(f64::INFINITY, f64::min)
    }

    /// Empirical `(n, D)` from closed-form volume ratios.
    pub fn estimate_doubling(&self) -> DoublingConstants {
        self.doubling.get_or_init(|| self.compute_doubling()).clone()
    }

    fn compute_doubling(&self) -> DoublingConstants {
        let r_max = self.max_radius();
        let mut radii = Vec::new();
        let mut r = self.min_spacing();
        while r <= r_max {
            radii.push(r);
            r *= 2.0;
        }
        let n = self.len();
        let stride = (n / 32).max(1);
        let mut centers: Vec<f64> = (0..n).step_by(stride).map(|i| self.points[i]).collect();
        if centers.last() != self.points.last() {
            centers.push(self.points[n - 1]);
        }
        let dilations = vec![2.0, 4.0, 8.0];
        let powers: Vec<i32> = (3..12).collect();

        let mut n_hat: f64 = 0.0;
        for &x in &centers {
            for &r in &radii {
                for &lam in &dilations {
                    if lam * r > r_max {
                        continue;
                    }
                    let v0 = self.volume(x, r);
                    let v1 = self.volume(x, lam * r);
                    if v0 > 0.0 {
                        n_hat = n_hat.max((v1 / v0).ln() / lam.ln());
                    }
                }
            }
        }

        let upper = match self.domain {
            DomainParams::Periodic { period } => f64::INFINITY.min(0.5 * period),
            DomainParams::Halfline { right, .. } => right,
        };
        let mut d_hat: f64 = 0.0;
        for &x in &centers {
            for &r in &radii {
                let v0 = self.volume(x, r);
                if v0 <= 0.0 {
                    continue;
                }
                let mut prev: Option<(f64, f64)> = None;
                for &k in &powers {
                    let d = r * 2f64.powi(k);
                    let y = x + d;
                    let in_range = match self.domain {
                        DomainParams::Periodic { .. } => d <= upper,
                        DomainParams::Halfline { .. } => y + r <= upper,
                    };
                    if !in_range {
                        break;
                    }
                    let lv = (self.volume(y, r) / v0).ln();
                    let lu = (1.0 + d / r).ln();
                    if let Some((pu, pv)) = prev {
                        d_hat = d_hat.max((lv - pv) / (lu - pu));
                    }
                    prev = Some((lu, lv));
                }
            }
        }
        DoublingConstants {
            n_hat,
            d_hat: d_hat.max(0.0),
            plan: SamplingPlan {
                centers: centers.len(),
                radii,
                dilations,
                separation_powers: powers,
                max_radius: r_max,
            },
        }
    }

    /// `∫ (1 + ρ(x,y)/t)^{-N} dμ(y)` against `V(x, t)`.
    pub fn decay_integral_check(&self, x: f64, t: f64, exponent: f64) -> Result<DecayIntegral> {
        if t <= 0.0 {
            return Err(Error::ScaleNonpositive(t));
        }
        let n_hat = self.estimate_doubling().n_hat;
        if exponent <= n_hat {
            return Err(Error::ExponentTooSmall { exponent, bound: n_hat });
        }
        let vals: Vec<f64> =
            self.points.iter().map(|&y| (1.0 + self.dist(x, y) / t).powf(-exponent)).collect();
        let lhs = self.integrate(&vals)?;
        let volume = self.volume(x, t);
        Ok(DecayIntegral { lhs, volume, bound_ratio: lhs / volume })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn torus(n: usize, period: f64) -> Grid {
        make_grid(GridKind::LinePeriodic, n, DomainParams::Periodic { period }).unwrap()
    }

    fn halfline(n: usize, lambda: f64, right: f64) -> Grid {
        make_grid(GridKind::Halfline, n, DomainParams::Halfline { lambda, right }).unwrap()
    }

    #[test]
    fn construction_errors() {
        assert!(make_grid(GridKind::LinePeriodic, 4, DomainParams::Periodic { period: 1.0 }).is_err());
        assert!(make_grid(GridKind::LinePeriodic, 16, DomainParams::Periodic { period: 0.0 }).is_err());
        assert!(make_grid(GridKind::Halfline, 16, DomainParams::Halfline { lambda: 0.0, right: -1.0 })
            .is_err());
        assert!(make_grid(GridKind::Halfline, 16, DomainParams::Periodic { period: 1.0 }).is_err());
    }

    #[test]
    fn uniform_torus_weights() {
        let g = torus(64, 32.0);
        assert!(g.quad_weights().iter().all(|&w| w == 0.5));
        assert_eq!(g.points()[32], 0.0);
    }

    #[test]
    fn halfline_masses() {
        let g = halfline(128, 0.0, 10.0);
        assert!((g.quad_weights().iter().sum::<f64>() - 10.0).abs() < 1e-12 * 10.0);
        assert!(g.points()[0] > 0.0);
        let g = halfline(128, 1.0, 2.0);
        assert!((g.quad_weights().iter().sum::<f64>() - 8.0 / 3.0).abs() < 1e-10);
        let smallest = g.edges()[1] - g.edges()[0];
        assert!((smallest / 2.0 - HALFLINE_MIN_CELL).abs() < 1e-4);
    }

    #[test]
    fn closed_form_volumes() {
        let g = torus(64, 32.0);
        assert_eq!(g.volume(0.0, 1.0), 2.0);
        assert_eq!(g.volume(3.0, 20.0), 32.0);
        let h = halfline(64, 1.0, 10.0);
        assert!((h.volume(3.0, 1.0) - 56.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn ball_examples() {
        let g = torus(64, 32.0);
        let x = g.points()[10];
        assert_eq!(g.ball_indices(x, 0.75).to_vec(), vec![9, 10, 11]);
        assert_eq!(g.ball_indices(x, 0.2).to_vec(), vec![10]);
        assert_eq!(g.ball_indices(x, 16.0).len, 64);
        let wrap = g.ball_indices(g.points()[0], 0.75).to_vec();
        assert_eq!(wrap, vec![63, 0, 1]);
    }

    #[test]
    fn integrate_examples() {
        let h = halfline(100, 0.0, 10.0);
        assert!((h.integrate(&vec![1.0; 100]).unwrap() - 10.0).abs() < 1e-12);
        assert!(h.integrate(&[1.0]).is_err());
        let g = torus(64, 32.0);
        let w = std::f64::consts::PI / 16.0;
        let odd: Vec<f64> = g.points().iter().map(|&x| (w * x).sin() + 0.5 * (3.0 * w * x).sin()).collect();
        assert!(g.integrate(&odd).unwrap().abs() < 1e-12);
    }

    #[test]
    fn ball_indicator_vs_volume() {
        for g in [torus(256, 32.0), halfline(256, 1.0, 10.0)] {
            let x = g.points()[g.len() / 3];
            let r = 1.3;
            let b = g.ball_indices(x, r);
            let ind: Vec<f64> = (0..g.len()).map(|i| if b.contains(i) { 1.0 } else { 0.0 }).collect();
            let approx = g.integrate(&ind).unwrap();
            let cell = g.quad_weights().iter().cloned().fold(0.0, f64::max);
            assert!((approx - g.volume(x, r)).abs() <= cell, "{approx} vs {}", g.volume(x, r));
        }
    }

    #[test]
    fn doubling_estimates() {
        let d = torus(64, 32.0).estimate_doubling();
        assert!((d.n_hat - 1.0).abs() < 0.05 && d.d_hat <= 0.05, "{d:?}");
        let b = halfline(128, 1.0, 10.0);
        let d = b.estimate_doubling();
        assert!((d.n_hat - 3.0).abs() < 0.1, "{d:?}");
        assert!(d.d_hat <= d.n_hat + 0.1 && d.d_hat > 1.5);
        let scaled = b.with_mass_scale(7.5).unwrap().estimate_doubling();
        assert!((scaled.n_hat - d.n_hat).abs() < 1e-12);
    }

    #[test]
    fn decay_integral_line() {
        let g = torus(4096, 32.0);
        let t = 1.0;
        let r = g.decay_integral_check(0.0, t, 2.0).unwrap();
        // Exact on the torus: 2t(1 - 1/(1 + T/(2t))).
        let exact = 1.0 - 1.0 / (1.0 + 16.0 / t);
        assert!((r.bound_ratio - exact).abs() < 1e-4, "{r:?}");
        assert!(matches!(g.decay_integral_check(0.0, t, 1.0), Err(Error::ExponentTooSmall { .. })));
        let sharp = torus(64, 32.0).decay_integral_check(0.0, 1.0, 400.0).unwrap();
        assert!(sharp.bound_ratio <= 1.0);
    }

    #[test]
    fn decay_integral_bessel_refines() {
        let ratio = |n| {
            let g = halfline(n, 1.0, 10.0);
            g.decay_integral_check(1.0, 0.5, 4.0).unwrap().bound_ratio
        };
        let (a, b) = (ratio(128), ratio(256));
        assert!(((a - b) / b).abs() < 0.1, "{a} {b}");
    }
}
