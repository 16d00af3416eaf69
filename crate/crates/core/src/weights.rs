//! Product Muckenhoupt weights, the strong maximal function and the maximal
//! inequalities used by the equivalence proofs.

use std::collections::{BTreeMap, VecDeque};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::Field2;
use crate::geometry::{make_grid, DomainParams, Grid, GridKind};
use crate::par::{pairwise_sum, Exec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum AxisWeight {
    Constant,
    /// `|x|^a`, centered at 0 (the periodic distance to 0 on the torus).
    Power { a: f64 },
    Tabulated { values: Vec<f64> },
}

/// Config-level weight descriptor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum WeightSpec {
    Constant,
    Power { a1: f64, a2: f64 },
}

impl WeightSpec {
    pub fn label(&self) -> String {
        match self {
            WeightSpec::Constant => "constant".into(),
            WeightSpec::Power { a1, a2 } => format!("power({a1},{a2})"),
        }
    }

    pub fn build(&self, g1: &Grid, g2: &Grid) -> Result<ProductWeight> {
        match *self {
            WeightSpec::Constant => ProductWeight::new(g1, g2, AxisWeight::Constant, AxisWeight::Constant),
            WeightSpec::Power { a1, a2 } => make_power_weight(g1, g2, a1, a2),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApCharacteristic {
    pub p: f64,
    /// `+∞` when some rectangle average diverges.
    pub value: f64,
    pub divergent: bool,
    /// Values on the grid and three successive refinements (descriptor weights).
    pub refinement: Vec<f64>,
    /// Interval lengths (in cells) of the rectangle family.
    pub family_lengths: Vec<usize>,
}

#[derive(Debug)]
pub struct ProductWeight {
    axes: [AxisWeight; 2],
    grids: [Grid; 2],
    axis_values: [Vec<f64>; 2],
    values: Field2,
    factor: f64,
    ap_cache: Mutex<BTreeMap<u64, ApCharacteristic>>,
}

impl Clone for ProductWeight {
    fn clone(&self) -> Self {
        ProductWeight {
            axes: self.axes.clone(),
            grids: self.grids.clone(),
            axis_values: self.axis_values.clone(),
            values: self.values.clone(),
            factor: self.factor,
            ap_cache: Mutex::new(self.ap_cache.lock().unwrap().clone()),
        }
    }
}

pub fn make_power_weight(g1: &Grid, g2: &Grid, a1: f64, a2: f64) -> Result<ProductWeight> {
    let ax = |a: f64| if a == 0.0 { AxisWeight::Constant } else { AxisWeight::Power { a } };
    ProductWeight::new(g1, g2, ax(a1), ax(a2))
}

fn origin_distance(g: &Grid, x: f64) -> f64 {
    match g.kind() {
        GridKind::LinePeriodic => g.dist(x, 0.0),
        GridKind::Halfline => x.abs(),
    }
}

/// `∫_{l}^{r} |x|^b dx` on the real line, `+∞` when not integrable.
fn abs_power_integral(l: f64, r: f64, b: f64) -> f64 {
    if l >= r {
        return 0.0;
    }
    if l < 0.0 && r > 0.0 {
        return abs_power_integral(l, 0.0, b) + abs_power_integral(0.0, r, b);
    }
    let (lo, hi) = if r <= 0.0 { (-r, -l) } else { (l, r) };
    if lo == 0.0 && b <= -1.0 {
        return f64::INFINITY;
    }
    if b == -1.0 {
        (hi / lo).ln()
    } else {
        (hi.powf(b + 1.0) - lo.powf(b + 1.0)) / (b + 1.0)
    }
}

/// `∫_{cell} dist(x,0)^b dμ(x)` for every cell.
fn cell_power_integrals(g: &Grid, b: f64) -> Vec<f64> {
    let e = g.edges();
    let c = g.mass_scale();
    match g.domain() {
        DomainParams::Periodic { period } => (0..g.len())
            .map(|i| {
                let (l, r) = (e[i], e[i + 1]);
                let half = 0.5 * period;
                let v = if l < -half {
                    abs_power_integral(l + period, half, b) + abs_power_integral(-half, r, b)
                } else if r > half {
                    abs_power_integral(l, half, b) + abs_power_integral(-half, r - period, b)
                } else {
                    abs_power_integral(l, r, b)
                };
                c * v
            })
            .collect(),
        DomainParams::Halfline { lambda, .. } => {
            let s = b + 2.0 * lambda + 1.0;
            (0..g.len())
                .map(|i| {
                    let (l, r) = (e[i], e[i + 1]);
                    let v = if l == 0.0 && s <= 0.0 {
                        f64::INFINITY
                    } else if s == 0.0 {
                        (r / l).ln()
                    } else {
                        (r.powf(s) - l.powf(s)) / s
                    };
                    c * v
                })
                .collect()
        }
    }
}

/// `sup_{cell} dist(x,0)^b`.
fn cell_power_sup(g: &Grid, b: f64) -> Vec<f64> {
    let e = g.edges();
    (0..g.len())
        .map(|i| {
            let (l, r) = (e[i], e[i + 1]);
            let touches_origin = match g.kind() {
                GridKind::LinePeriodic => l <= 0.0 && r >= 0.0,
                GridKind::Halfline => l == 0.0,
            };
            let near = if touches_origin { 0.0 } else { origin_distance(g, l).min(origin_distance(g, r)) };
            let far = match g.domain() {
                DomainParams::Periodic { period } if l < -0.5 * period || r > 0.5 * period => 0.5 * period,
                _ => origin_distance(g, l).max(origin_distance(g, r)),
            };
            if b >= 0.0 {
                far.powf(b)
            } else if near == 0.0 {
                f64::INFINITY
            } else {
                near.powf(b)
            }
        })
        .collect()
}

fn axis_samples(g: &Grid, axis: &AxisWeight) -> Result<Vec<f64>> {
    match axis {
        AxisWeight::Constant => Ok(vec![1.0; g.len()]),
        AxisWeight::Tabulated { values } => {
            if values.len() != g.len() {
                return Err(Error::LengthMismatch { expected: g.len(), got: values.len() });
            }
            if values.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
                return Err(Error::InvalidDomain("tabulated weight must be positive".into()));
            }
            Ok(values.clone())
        }
        &AxisWeight::Power { a } => {
            let e = g.edges();
            let ints = cell_power_integrals(g, a);
            Ok((0..g.len())
                .map(|i| {
                    let (l, r) = (e[i], e[i + 1]);
                    let holds_origin = match g.kind() {
                        GridKind::LinePeriodic => l < 0.0 && r > 0.0,
                        GridKind::Halfline => l == 0.0,
                    };
                    if !holds_origin {
                        origin_distance(g, g.points()[i]).powf(a)
                    } else if ints[i].is_finite() {
                        ints[i] / g.quad_weights()[i]
                    } else {
                        // Not locally integrable: fall back to a quarter-cell sample.
                        (0.25 * (r - l)).powf(a)
                    }
                })
                .collect())
        }
    }
}

impl ProductWeight {
    pub fn new(g1: &Grid, g2: &Grid, w1: AxisWeight, w2: AxisWeight) -> Result<Self> {
        let v1 = axis_samples(g1, &w1)?;
        let v2 = axis_samples(g2, &w2)?;
        let values = Field2::tensor(&v1, &v2);
        Ok(ProductWeight {
            axes: [w1, w2],
            grids: [g1.clone(), g2.clone()],
            axis_values: [v1, v2],
            values,
            factor: 1.0,
            ap_cache: Mutex::new(BTreeMap::new()),
        })
    }

    pub fn constant(g1: &Grid, g2: &Grid) -> Self {
        Self::new(g1, g2, AxisWeight::Constant, AxisWeight::Constant).expect("constant weight")
    }

    pub fn values(&self) -> &Field2 {
        &self.values
    }

    pub fn axes(&self) -> &[AxisWeight; 2] {
        &self.axes
    }

    pub fn grids(&self) -> (&Grid, &Grid) {
        (&self.grids[0], &self.grids[1])
    }

    /// `c·w` for `c > 0`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::InvalidDomain(format!("weight factor {c} must be positive")));
        }
        let mut out = self.clone();
        out.factor *= c;
        out.values = self.values.scale(c);
        out.ap_cache = Mutex::new(BTreeMap::new());
        Ok(out)
    }

    fn refined(&self, factor: usize) -> Option<ProductWeight> {
        if self.axes.iter().any(|a| matches!(a, AxisWeight::Tabulated { .. })) {
            return None;
        }
        let g = |g: &Grid| {
            make_grid(g.kind(), g.len() * factor, g.domain()).and_then(|r| r.with_mass_scale(g.mass_scale())).ok()
        };
        let (g1, g2) = (g(&self.grids[0])?, g(&self.grids[1])?);
        ProductWeight::new(&g1, &g2, self.axes[0].clone(), self.axes[1].clone()).ok()?.scaled(self.factor).ok()
    }

    /// Per-cell `∫ w dμ`, `∫ w^{-1/(p-1)} dμ` (or `sup w^{-1}` at `p = 1`) and `μ`.
    fn axis_cells(&self, axis: usize, p: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let g = &self.grids[axis];
        let mass = g.quad_weights().to_vec();
        match &self.axes[axis] {
            AxisWeight::Constant => {
                let dual = if p == 1.0 { vec![1.0; g.len()] } else { mass.clone() };
                (mass.clone(), dual, mass)
            }
            AxisWeight::Tabulated { values } => {
                let w: Vec<f64> = values.iter().zip(&mass).map(|(v, m)| v * m).collect();
                let dual = if p == 1.0 {
                    values.iter().map(|v| 1.0 / v).collect()
                } else {
                    values.iter().zip(&mass).map(|(v, m)| v.powf(-1.0 / (p - 1.0)) * m).collect()
                };
                (w, dual, mass)
            }
            &AxisWeight::Power { a } => {
                let w = cell_power_integrals(g, a);
                let dual =
                    if p == 1.0 { cell_power_sup(g, -a) } else { cell_power_integrals(g, -a / (p - 1.0)) };
                (w, dual, mass)
            }
        }
    }

    /// Supremum of the rectangle quantity on this grid only.
    fn characteristic_here(&self, p: f64) -> (f64, Vec<usize>) {
        let mut total = 1.0;
        let mut lengths = Vec::new();
        for axis in 0..2 {
            let (mut w, mut dual, mass) = self.axis_cells(axis, p);
            if axis == 0 && self.factor != 1.0 {
                let c = self.factor;
                let cd = if p == 1.0 { 1.0 / c } else { c.powf(-1.0 / (p - 1.0)) };
                w.iter_mut().for_each(|v| *v *= c);
                dual.iter_mut().for_each(|v| *v *= cd);
            }
            let g = &self.grids[axis];
            let fam = family_lengths(g.len());
            let circular = g.kind() == GridKind::LinePeriodic;
            let mut sup: f64 = 0.0;
            for &len in &fam {
                for s in interval_starts(g.len(), len, circular) {
                    let idx = (0..len).map(|k| (s + k) % g.len());
                    let (mut sw, mut sd, mut sm, mut dmax) = (0.0, 0.0, 0.0, 0.0f64);
                    for i in idx {
                        sw += w[i];
                        sd += dual[i];
                        sm += mass[i];
                        dmax = dmax.max(dual[i]);
                    }
                    let q = if p == 1.0 { sw / sm * dmax } else { sw / sm * (sd / sm).powf(p - 1.0) };
                    sup = sup.max(if q.is_nan() { f64::INFINITY } else { q });
                }
            }
            total *= sup;
            if axis == 0 {
                lengths = fam;
            }
        }
        (total, lengths)
    }
}

/// Interval lengths in cells: every length up to [`FINE_LENGTHS`], then powers of two.
pub fn family_lengths(n: usize) -> Vec<usize> {
    let mut v: Vec<usize> = (1..=FINE_LENGTHS.min(n)).collect();
    let mut l = 2 * FINE_LENGTHS;
    while l <= n {
        v.push(l);
        l *= 2;
    }
    v
}

pub const FINE_LENGTHS: usize = 8;

fn interval_starts(n: usize, len: usize, circular: bool) -> std::ops::Range<usize> {
    if circular {
        if len >= n {
            0..1
        } else {
            0..n
        }
    } else {
        0..(n + 1 - len.min(n))
    }
}

/// Supremum over the [`family_lengths`] intervals at every start position (per axis;
/// product weights make the rectangle quantity separable). Divergent when some
/// average is infinite, or when the value grows by more than 1.5x at each of
/// three successive refinements.
pub fn ap_characteristic(weight: &ProductWeight, p: f64) -> Result<ApCharacteristic> {
    if !(p >= 1.0) {
        return Err(Error::InvalidP(p));
    }
    if let Some(hit) = weight.ap_cache.lock().unwrap().get(&p.to_bits()) {
        return Ok(hit.clone());
    }
    let (value, family_lengths) = weight.characteristic_here(p);
    let mut refinement = vec![value];
    let mut divergent = !value.is_finite();
    if !divergent {
        for factor in [2, 4, 8] {
            match weight.refined(factor) {
                Some(w) => refinement.push(w.characteristic_here(p).0),
                None => break,
            }
        }
        if refinement.len() == 4 {
            divergent = refinement.windows(2).all(|v| !(v[1] <= 1.5 * v[0]));
        }
    }
    let out = ApCharacteristic { p, value, divergent, refinement, family_lengths };
    weight.ap_cache.lock().unwrap().insert(p.to_bits(), out.clone());
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticalIndex {
    /// `+∞` when no grid exponent gives a finite characteristic.
    pub q_w: f64,
    pub bracket: (f64, f64),
    pub resolution: f64,
}

pub const DEFAULT_P_GRID: [f64; 8] = [1.0, 1.25, 1.5, 2.0, 3.0, 4.0, 6.0, 8.0];

pub fn critical_index(weight: &ProductWeight, p_grid: &[f64]) -> Result<CriticalIndex> {
    let resolution = 0.05;
    let member = |p: f64| ap_characteristic(weight, p).map(|a| !a.divergent);
    let mut prev: Option<f64> = None;
    for &p in p_grid {
        if member(p)? {
            let Some(mut lo) = prev else {
                return Ok(CriticalIndex { q_w: p, bracket: (p, p), resolution });
            };
            let mut hi = p;
            while hi - lo > resolution {
                let mid = 0.5 * (lo + hi);
                if member(mid)? {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            return Ok(CriticalIndex { q_w: hi, bracket: (lo, hi), resolution });
        }
        prev = Some(p);
    }
    let last = p_grid.last().copied().unwrap_or(f64::INFINITY);
    Ok(CriticalIndex { q_w: f64::INFINITY, bracket: (last, f64::INFINITY), resolution })
}

/// `(ΣΣ |f|^p w dμ₁ dμ₂)^{1/p}`.
pub fn weighted_lp_norm(field: &Field2, weight: &ProductWeight, p: f64) -> Result<f64> {
    if !(p > 0.0) {
        return Err(Error::InvalidP(p));
    }
    let (g1, g2) = weight.grids();
    if field.dims() != (g1.len(), g2.len()) {
        return Err(Error::GridMismatch(format!("field {:?} vs weight grids", field.dims())));
    }
    let (q1, q2) = (g1.quad_weights(), g2.quad_weights());
    let w = weight.values();
    let mut terms = Vec::with_capacity(field.n1() * field.n2());
    for i in 0..field.n1() {
        for j in 0..field.n2() {
            terms.push(field.get(i, j).abs().powf(p) * w.get(i, j) * q1[i] * q2[j]);
        }
    }
    Ok(pairwise_sum(&terms).powf(1.0 / p))
}

/// `out[x] = max { v[s] : interval [s, s+len) contains x }`.
fn window_max(v: &[f64], len: usize, circular: bool) -> Vec<f64> {
    let n = v.len();
    let len = len.min(n);
    if circular && len == n {
        let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        return vec![m; n];
    }
    let mut out = vec![f64::NEG_INFINITY; n];
    // Starts s with x - len < s <= x; circular arrays are unrolled once.
    let ext: Vec<(i64, f64)> = if circular {
        (-(len as i64) + 1..n as i64).map(|s| (s, v[s.rem_euclid(n as i64) as usize])).collect()
    } else {
        (0..=(n - len) as i64).map(|s| (s, v[s as usize])).collect()
    };
    let mut dq: VecDeque<usize> = VecDeque::new();
    let mut k = 0;
    for x in 0..n as i64 {
        while k < ext.len() && ext[k].0 <= x {
            while let Some(&b) = dq.back() {
                if ext[b].1 <= ext[k].1 {
                    dq.pop_back();
                } else {
                    break;
                }
            }
            dq.push_back(k);
            k += 1;
        }
        while let Some(&f) = dq.front() {
            if ext[f].0 <= x - len as i64 {
                dq.pop_front();
            } else {
                break;
            }
        }
        if let Some(&f) = dq.front() {
            out[x as usize] = ext[f].1;
        }
    }
    out
}

/// Interval sums `Σ_{k<len} v[s+k]` for every start `s` (non-circular starts
/// beyond `n - len` are left at 0).
fn interval_sums(v: &[f64], len: usize, circular: bool) -> Vec<f64> {
    let n = v.len();
    let mut prefix = vec![0.0; 2 * n + 1];
    for k in 0..2 * n {
        prefix[k + 1] = prefix[k] + v[k % n];
    }
    (0..n)
        .map(|s| if circular || s + len <= n { prefix[s + len.min(n)] - prefix[s] } else { 0.0 })
        .collect()
}

/// Strong maximal function over products of [`family_lengths`] intervals at every
/// start position.
pub fn strong_maximal(field: &Field2, g1: &Grid, g2: &Grid, exec: Exec) -> Result<Field2> {
    let (n1, n2) = field.dims();
    if (n1, n2) != (g1.len(), g2.len()) {
        return Err(Error::GridMismatch(format!("field {:?} vs grids ({}, {})", field.dims(), g1.len(), g2.len())));
    }
    let (q1, q2) = (g1.quad_weights(), g2.quad_weights());
    let c1 = g1.kind() == GridKind::LinePeriodic;
    let c2 = g2.kind() == GridKind::LinePeriodic;
    let mass = Field2::from_fn(n1, n2, |i, j| field.get(i, j).abs() * q1[i] * q2[j]);
    let lens1 = family_lengths(n1);
    let lens2 = family_lengths(n2);
    let partials = exec.map(lens1.len(), |a| {
        let l1 = lens1[a];
        let m1 = interval_sums(q1, l1, c1);
        // Column sums over axis-1 intervals of length l1.
        let mut col = Field2::zeros(n1, n2);
        for j in 0..n2 {
            let v: Vec<f64> = (0..n1).map(|i| mass.get(i, j)).collect();
            let s = interval_sums(&v, l1, c1);
            for i in 0..n1 {
                col.set(i, j, s[i]);
            }
        }
        let mut best = Field2::from_fn(n1, n2, |_, _| 0.0);
        for &l2 in &lens2 {
            let m2 = interval_sums(q2, l2, c2);
            let mut avg = Field2::zeros(n1, n2);
            for s1 in 0..n1 {
                if !c1 && s1 + l1 > n1 {
                    continue;
                }
                let s = interval_sums(col.row(s1), l2, c2);
                for s2 in 0..n2 {
                    if !c2 && s2 + l2 > n2 {
                        continue;
                    }
                    avg.set(s1, s2, s[s2] / (m1[s1] * m2[s2]));
                }
            }
            // Max over starts containing each point: rows then columns.
            let mut rows = Field2::zeros(n1, n2);
            for s1 in 0..n1 {
                let r = window_max(avg.row(s1), l2, c2);
                rows.as_mut_slice()[s1 * n2..(s1 + 1) * n2].copy_from_slice(&r);
            }
            for j in 0..n2 {
                let v: Vec<f64> = (0..n1).map(|i| rows.get(i, j)).collect();
                let r = window_max(&v, l1, c1);
                for i in 0..n1 {
                    if r[i] > best.get(i, j) {
                        best.set(i, j, r[i]);
                    }
                }
            }
        }
        best
    });
    let mut out = Field2::zeros(n1, n2);
    for p in partials {
        for (o, v) in out.as_mut_slice().iter_mut().zip(p.as_slice()) {
            *o = o.max(*v);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmfxReport {
    pub max_ratio: f64,
    pub samples: usize,
}

/// Empirical constant in
/// `∫∫ |f(y)| / Π V(y_i,t_i)(1+ρ_i/t_i)^{N_i} dμ ≤ C M_s f(x)` over every
/// grid point and the given scale pairs.
pub fn smfx_domination_check(
    field: &Field2,
    g1: &Grid,
    g2: &Grid,
    scales: &[(f64, f64)],
    exponents: (f64, f64),
    exec: Exec,
) -> Result<SmfxReport> {
    let d1 = g1.estimate_doubling();
    let d2 = g2.estimate_doubling();
    for (ne, d) in [(exponents.0, &d1), (exponents.1, &d2)] {
        if ne <= d.n_hat + d.d_hat {
            return Err(Error::ExponentTooSmall { exponent: ne, bound: d.n_hat + d.d_hat });
        }
    }
    let ms = strong_maximal(field, g1, g2, exec)?;
    let kernel = |g: &Grid, t: f64, ne: f64| {
        let x = g.points();
        let q = g.quad_weights();
        let n = g.len();
        Field2::from_fn(n, n, |i, k| q[k] / (g.volume(x[k], t) * (1.0 + g.dist(x[i], x[k]) / t).powf(ne)))
    };
    let absf = field.map(f64::abs);
    let ratios = exec.map(scales.len(), |s| {
        let (t1, t2) = scales[s];
        let k1 = kernel(g1, t1, exponents.0);
        let k2 = kernel(g2, t2, exponents.1);
        let lhs = contract(&k1, &absf, &k2);
        let mut r: f64 = 0.0;
        for (a, b) in lhs.as_slice().iter().zip(ms.as_slice()) {
            if *b > 0.0 {
                r = r.max(a / b);
            }
        }
        r
    });
    Ok(SmfxReport { max_ratio: ratios.iter().cloned().fold(0.0, f64::max), samples: scales.len() * field.as_slice().len() })
}

/// `K1 · F · K2ᵀ` for square row-major kernels.
pub(crate) fn contract(k1: &Field2, f: &Field2, k2: &Field2) -> Field2 {
    let (n1, n2) = f.dims();
    let mut tmp = Field2::zeros(n1, n2);
    for i in 0..n1 {
        for (l, &kv) in k1.row(i).iter().enumerate() {
            if kv != 0.0 {
                let src = f.row(l);
                let dst = &mut tmp.as_mut_slice()[i * n2..(i + 1) * n2];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += kv * s;
                }
            }
        }
    }
    let mut out = Field2::zeros(n1, n2);
    for i in 0..n1 {
        let row = tmp.row(i);
        for j in 0..n2 {
            out.set(i, j, k2.row(j).iter().zip(row).map(|(a, b)| a * b).sum());
        }
    }
    out
}

/// One resolution of a family for [`fs_maximal_check`].
#[derive(Clone, Debug)]
pub struct FsLevel<'a> {
    pub fields: &'a [Field2],
    pub weight: &'a ProductWeight,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FsReport {
    pub ratios: Vec<f64>,
    pub drift: f64,
    pub unstable: bool,
    pub q_w: f64,
}

fn lq_lp_norm(fields: &[Field2], weight: &ProductWeight, p: f64, q: Option<f64>) -> Result<f64> {
    let (n1, n2) = fields[0].dims();
    let inner = Field2::from_fn(n1, n2, |i, j| match q {
        None => fields.iter().fold(0.0f64, |m, f| m.max(f.get(i, j).abs())),
        Some(q) => fields.iter().map(|f| f.get(i, j).abs().powf(q)).sum::<f64>().powf(1.0 / q),
    });
    weighted_lp_norm(&inner, weight, p)
}

/// `‖{M_s f_j}‖_{L^p_w(ℓ^q)} / ‖{f_j}‖_{L^p_w(ℓ^q)}` per level; `q = None`
/// is `ℓ^∞`. Flags drift above 25% between consecutive levels.
pub fn fs_maximal_check(levels: &[FsLevel<'_>], p: f64, q: Option<f64>, exec: Exec) -> Result<FsReport> {
    if levels.is_empty() || levels.iter().any(|l| l.fields.is_empty()) {
        return Err(Error::EmptyCorpus);
    }
    if !(p > 1.0 && p.is_finite()) {
        return Err(Error::HypothesisViolated(format!("p = {p} must lie in (1, ∞)")));
    }
    if let Some(q) = q {
        if !(q > 1.0) {
            return Err(Error::HypothesisViolated(format!("q = {q} must exceed 1")));
        }
    }
    let q_w = critical_index(levels[0].weight, &DEFAULT_P_GRID)?.q_w;
    if p <= q_w {
        return Err(Error::HypothesisViolated(format!("p = {p} <= q_w = {q_w}")));
    }
    let mut ratios = Vec::new();
    for level in levels {
        let (g1, g2) = level.weight.grids();
        let maxed: Vec<Field2> =
            level.fields.iter().map(|f| strong_maximal(f, g1, g2, exec)).collect::<Result<_>>()?;
        let den = lq_lp_norm(level.fields, level.weight, p, q)?;
        ratios.push(lq_lp_norm(&maxed, level.weight, p, q)? / den);
    }
    let drift = ratios.windows(2).map(|r| crate::stats::rel_change(r[1], r[0])).fold(0.0, f64::max);
    Ok(FsReport { ratios, drift, unstable: drift > 0.25, q_w })
}
