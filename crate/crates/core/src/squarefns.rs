//! Product square functions over a discrete scale ladder: the `g`-function,
//! the area function `S`, `g*_{λ₁,λ₂}`, Peetre maximal functions and their
//! vertical norms, plus the scale convolution used in the maximal estimates.
//!
//! Two paths compute the same quantities. [`ScaleField`] materializes
//! `Φ₁(t₁√L₁)⊗Φ₂(t₂√L₂)f` for every scale pair and is meant for small grids
//! and inspection. [`SquareEngine`] streams over scale pairs with band-sparse
//! spectral synthesis and accumulates all functionals at once.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::Field2;
use crate::geometry::{Grid, GridKind};
use crate::multipliers::MultiplierProfile;
use crate::par::{pairwise_sum, tree_reduce, Exec};
use crate::spectral::SpectralModel;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleLadder {
    pub j_min: i32,
    pub j_max: i32,
    pub samples_per_octave: usize,
    t: Vec<f64>,
    log_weights: Vec<f64>,
    octave: Vec<i32>,
}

/// `t = 2^{-j}·2^{(i+1/2)/S}` for `j ∈ [j_min, j_max]`, `i < S`, ascending,
/// with midpoint weights `ln 2 / S` for `dt/t`.
pub fn make_ladder(j_min: i32, j_max: i32, samples_per_octave: usize) -> Result<ScaleLadder> {
    if j_min > j_max {
        return Err(Error::EmptyRange(format!("j_min {j_min} > j_max {j_max}")));
    }
    if samples_per_octave == 0 {
        return Err(Error::EmptyRange("samples_per_octave = 0".into()));
    }
    let s = samples_per_octave as f64;
    let mut t = Vec::new();
    let mut octave = Vec::new();
    for j in (j_min..=j_max).rev() {
        for i in 0..samples_per_octave {
            t.push(2f64.powi(-j) * 2f64.powf((i as f64 + 0.5) / s));
            octave.push(j);
        }
    }
    let log_weights = vec![std::f64::consts::LN_2 / s; t.len()];
    Ok(ScaleLadder { j_min, j_max, samples_per_octave, t, log_weights, octave })
}

impl ScaleLadder {
    pub fn t(&self) -> &[f64] {
        &self.t
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    /// Dyadic index `j` of each sample (`t ∈ 2^{-j}[1,2]`).
    pub fn octaves(&self) -> &[i32] {
        &self.octave
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn octave_count(&self) -> usize {
        (self.j_max - self.j_min + 1) as usize
    }
}

fn check_lambda(l: f64) -> Result<()> {
    if l > 0.0 && l.is_finite() {
        Ok(())
    } else {
        Err(Error::NonpositiveLambda(l))
    }
}

/// Per-axis, per-scale tables: balls, discrete volumes and optional `g*` and
/// Peetre kernels. Row-major `N×N` matrices.
#[derive(Clone, Debug)]
struct AxisTables {
    n: usize,
    mass: Vec<f64>,
    balls: Vec<Vec<(usize, usize)>>,
    vd: Vec<Vec<f64>>,
    gstar: Option<Vec<Vec<f64>>>,
    gstar_t: Option<Vec<Vec<f64>>>,
    peetre: Option<Vec<Vec<f64>>>,
    circular: bool,
}

impl AxisTables {
    fn new(grid: &Grid, ts: &[f64], gstar_exp: Option<f64>, peetre_exp: Option<f64>) -> Self {
        let n = grid.len();
        let x = grid.points();
        let mass = grid.quad_weights().to_vec();
        let mut balls = Vec::with_capacity(ts.len());
        let mut vd = Vec::with_capacity(ts.len());
        for &t in ts {
            let b: Vec<(usize, usize)> = x
                .iter()
                .map(|&xi| {
                    let bi = grid.ball_indices(xi, t);
                    (bi.start, bi.len)
                })
                .collect();
            vd.push(b.iter().map(|&(s, l)| (0..l).map(|k| mass[(s + k) % n]).sum::<f64>()).collect::<Vec<f64>>());
            balls.push(b);
        }
        let dist: Vec<f64> = (0..n * n).map(|k| grid.dist(x[k / n], x[k % n])).collect();
        let gstar = gstar_exp.map(|e| {
            ts.iter()
                .zip(&vd)
                .map(|(&t, v)| (0..n * n).map(|k| mass[k % n] * (1.0 + dist[k] / t).powf(-e) / v[k / n]).collect())
                .collect()
        });
        let peetre = peetre_exp
            .map(|e| ts.iter().map(|&t| dist.iter().map(|d| (1.0 + d / t).powf(-e)).collect()).collect());
        let gstar_t = gstar.as_ref().map(|ks: &Vec<Vec<f64>>| {
            ks.iter().map(|k| (0..n * n).map(|i| k[(i % n) * n + i / n]).collect()).collect()
        });
        let circular = grid.kind() == GridKind::LinePeriodic;
        AxisTables { n, mass, balls, vd, gstar, gstar_t, peetre, circular }
    }
}

/// Ball averages along axis 2 (each row).
fn ball_avg_rows(a: &Field2, tab: &AxisTables, ti: usize, out: &mut Field2, scale: f64) {
    let n2 = tab.n;
    let mut prefix = vec![0.0; 2 * n2 + 1];
    for i in 0..a.n1() {
        let row = a.row(i);
        for k in 0..2 * n2 {
            prefix[k + 1] = prefix[k] + tab.mass[k % n2] * row[k % n2];
        }
        let dst = &mut out.as_mut_slice()[i * n2..(i + 1) * n2];
        for (x, d) in dst.iter_mut().enumerate() {
            let (s, l) = tab.balls[ti][x];
            *d += scale * (prefix[s + l] - prefix[s]) / tab.vd[ti][x];
        }
    }
}

/// Ball averages along axis 1 (each column).
fn ball_avg_cols(a: &Field2, tab: &AxisTables, ti: usize, out: &mut Field2, scale: f64) {
    let (n1, n2) = a.dims();
    let mut prefix = vec![0.0; (2 * n1 + 1) * n2];
    for k in 0..2 * n1 {
        let m = tab.mass[k % n1];
        let src = a.row(k % n1);
        let (head, tail) = prefix.split_at_mut((k + 1) * n2);
        let prev = &head[k * n2..];
        for ((d, p), s) in tail[..n2].iter_mut().zip(prev).zip(src) {
            *d = p + m * s;
        }
    }
    for x in 0..n1 {
        let (s, l) = tab.balls[ti][x];
        let c = scale / tab.vd[ti][x];
        let dst = &mut out.as_mut_slice()[x * n2..(x + 1) * n2];
        for j in 0..n2 {
            dst[j] += c * (prefix[(s + l) * n2 + j] - prefix[s * n2 + j]);
        }
    }
}

/// `out += scale · A Kᵀ` (kernel along axis 2), with `kt = Kᵀ` row-major.
fn contract_rows(a: &Field2, kt: &[f64], out: &mut Field2, scale: f64) {
    let (n1, n2) = a.dims();
    for i in 0..n1 {
        let mut acc = vec![0.0; n2];
        for (y, &v) in a.row(i).iter().enumerate() {
            if v != 0.0 {
                for (d, k) in acc.iter_mut().zip(&kt[y * n2..(y + 1) * n2]) {
                    *d += v * k;
                }
            }
        }
        for (d, s) in out.as_mut_slice()[i * n2..(i + 1) * n2].iter_mut().zip(&acc) {
            *d += scale * s;
        }
    }
}

/// `out += scale · K A` (kernel along axis 1).
fn contract_cols(a: &Field2, k: &[f64], out: &mut Field2, scale: f64) {
    let (n1, n2) = a.dims();
    for x in 0..n1 {
        let kr = &k[x * n1..(x + 1) * n1];
        let mut acc = vec![0.0; n2];
        for (y, &kv) in kr.iter().enumerate() {
            for (d, s) in acc.iter_mut().zip(a.row(y)) {
                *d += kv * s;
            }
        }
        for (d, s) in out.as_mut_slice()[x * n2..(x + 1) * n2].iter_mut().zip(&acc) {
            *d += scale * s;
        }
    }
}

/// `out[i][x] = max_y a[i][y]·W[x][y]` for nonnegative `a`, scanning `y`
/// outward from `x` and stopping once the weight times the row maximum
/// cannot beat the running best. Relies on `W[x][·]` decreasing with index
/// offset on each side, which holds on both grid kinds.
fn max_scan_rows(a: &Field2, w: &[f64], circular: bool) -> Field2 {
    let (n1, n2) = a.dims();
    let mut out = Field2::zeros(n1, n2);
    let reach = if circular { n2 / 2 } else { n2 - 1 };
    for i in 0..n1 {
        let row = a.row(i);
        let top = row.iter().fold(0.0f64, |m, v| m.max(*v));
        if top == 0.0 {
            continue;
        }
        let dst = &mut out.as_mut_slice()[i * n2..(i + 1) * n2];
        for (x, d) in dst.iter_mut().enumerate() {
            let wr = &w[x * n2..(x + 1) * n2];
            let mut best = row[x] * wr[x];
            for off in 1..=reach {
                let left = if circular { Some((x + n2 - off) % n2) } else { x.checked_sub(off) };
                let right = if circular || x + off < n2 { Some((x + off) % n2) } else { None };
                let wl = left.map_or(0.0, |y| wr[y]);
                let wrt = right.map_or(0.0, |y| wr[y]);
                if wl.max(wrt) * top <= best {
                    break;
                }
                if let Some(y) = left {
                    best = best.max(row[y] * wl);
                }
                if let Some(y) = right {
                    best = best.max(row[y] * wrt);
                }
            }
            *d = best;
        }
    }
    out
}

/// `max_{y₁,y₂} |V(y)|·W₁(x₁,y₁)·W₂(x₂,y₂)` via two separable passes.
fn peetre_pass(v: &Field2, w1: &[f64], w2: &[f64], circular: [bool; 2]) -> Field2 {
    let stage = max_scan_rows(&v.map(f64::abs), w2, circular[1]);
    max_scan_rows(&stage.transpose(), w1, circular[0]).transpose()
}

fn sqrt_field(mut f: Field2) -> Field2 {
    f.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0).sqrt());
    f
}

fn check_dims(f: &Field2, g1: &Grid, g2: &Grid) -> Result<()> {
    if f.dims() != (g1.len(), g2.len()) {
        return Err(Error::GridMismatch(format!("field {:?} vs grids ({}, {})", f.dims(), g1.len(), g2.len())));
    }
    Ok(())
}

/// `Φ₁(t₁√L₁)⊗Φ₂(t₂√L₂)f` for every ladder pair, stored `[t₁][t₂]`.
#[derive(Clone, Debug)]
pub struct ScaleField {
    pub labels: (String, String),
    ladder: ScaleLadder,
    grids: [Grid; 2],
    dims: [f64; 2],
    values: Vec<Field2>,
}

impl ScaleField {
    pub fn ladder(&self) -> &ScaleLadder {
        &self.ladder
    }

    pub fn get(&self, a: usize, b: usize) -> &Field2 {
        &self.values[a * self.ladder.len() + b]
    }

    pub fn values(&self) -> &[Field2] {
        &self.values
    }

    fn with_values(&self, values: Vec<Field2>) -> ScaleField {
        ScaleField { labels: self.labels.clone(), ladder: self.ladder.clone(), grids: self.grids.clone(), dims: self.dims, values }
    }
}

pub fn multiplier_field(
    m1: &SpectralModel,
    m2: &SpectralModel,
    p1: &MultiplierProfile,
    p2: &MultiplierProfile,
    ladder: &ScaleLadder,
    f: &Field2,
    exec: Exec,
) -> Result<ScaleField> {
    check_dims(f, m1.grid(), m2.grid())?;
    let (n1, n2) = f.dims();
    let ts = ladder.t();
    let ft = f.transpose();
    let per_t1 = exec.map(ts.len(), |a| -> Result<Vec<Field2>> {
        // Axis 1 on every column, then axis 2 on every row for each t₂.
        let mut cols = Field2::zeros(n2, n1);
        for j in 0..n2 {
            let c = m1.apply_multiplier(p1, ts[a], ft.row(j))?;
            cols.as_mut_slice()[j * n1..(j + 1) * n1].copy_from_slice(&c);
        }
        let h = cols.transpose();
        ts.iter()
            .map(|&t2| {
                let mut out = Field2::zeros(n1, n2);
                for i in 0..n1 {
                    let r = m2.apply_multiplier(p2, t2, h.row(i))?;
                    out.as_mut_slice()[i * n2..(i + 1) * n2].copy_from_slice(&r);
                }
                Ok(out)
            })
            .collect()
    });
    let mut values = Vec::with_capacity(ts.len() * ts.len());
    for v in per_t1 {
        values.extend(v?);
    }
    Ok(ScaleField {
        labels: (p1.label().to_string(), p2.label().to_string()),
        ladder: ladder.clone(),
        grids: [m1.grid().clone(), m2.grid().clone()],
        dims: [m1.nominal_dimension(), m2.nominal_dimension()],
        values,
    })
}

fn weighted_sum(sf: &ScaleField, mut term: impl FnMut(usize, usize, &Field2) -> Field2) -> Field2 {
    let w = sf.ladder.log_weights();
    let m = sf.ladder.len();
    let parts: Vec<Field2> = (0..m * m)
        .map(|k| {
            let (a, b) = (k / m, k % m);
            term(a, b, &sf.values[k]).scale(w[a] * w[b])
        })
        .collect();
    tree_reduce(parts, |mut x, y| {
        x.axpy(1.0, &y);
        x
    })
    .expect("nonempty ladder")
}

pub fn g_function(sf: &ScaleField) -> Field2 {
    sqrt_field(weighted_sum(sf, |_, _, v| v.map(|x| x * x)))
}

pub fn area_function(sf: &ScaleField) -> Field2 {
    let ts = sf.ladder.t();
    let t1 = AxisTables::new(&sf.grids[0], ts, None, None);
    let t2 = AxisTables::new(&sf.grids[1], ts, None, None);
    sqrt_field(weighted_sum(sf, |a, b, v| {
        let sq = v.map(|x| x * x);
        let mut rows = Field2::zeros(sq.n1(), sq.n2());
        ball_avg_rows(&sq, &t2, b, &mut rows, 1.0);
        let mut out = Field2::zeros(sq.n1(), sq.n2());
        ball_avg_cols(&rows, &t1, a, &mut out, 1.0);
        out
    }))
}

pub fn gstar_function(sf: &ScaleField, lambda1: f64, lambda2: f64) -> Result<Field2> {
    check_lambda(lambda1)?;
    check_lambda(lambda2)?;
    let ts = sf.ladder.t();
    let t1 = AxisTables::new(&sf.grids[0], ts, Some(sf.dims[0] * lambda1), None);
    let t2 = AxisTables::new(&sf.grids[1], ts, Some(sf.dims[1] * lambda2), None);
    let (k1, k2) = (t1.gstar.as_ref().unwrap(), t2.gstar_t.as_ref().unwrap());
    Ok(sqrt_field(weighted_sum(sf, |a, b, v| {
        let sq = v.map(|x| x * x);
        let mut rows = Field2::zeros(sq.n1(), sq.n2());
        contract_rows(&sq, &k2[b], &mut rows, 1.0);
        let mut out = Field2::zeros(sq.n1(), sq.n2());
        contract_cols(&rows, &k1[a], &mut out, 1.0);
        out
    })))
}

pub fn peetre_field(sf: &ScaleField, lambda1: f64, lambda2: f64, exec: Exec) -> Result<ScaleField> {
    check_lambda(lambda1)?;
    check_lambda(lambda2)?;
    let ts = sf.ladder.t();
    let t1 = AxisTables::new(&sf.grids[0], ts, None, Some(lambda1));
    let t2 = AxisTables::new(&sf.grids[1], ts, None, Some(lambda2));
    let (w1, w2) = (t1.peetre.as_ref().unwrap(), t2.peetre.as_ref().unwrap());
    let m = ts.len();
    let circ = [t1.circular, t2.circular];
    let values = exec.map(m * m, |k| peetre_pass(&sf.values[k], &w1[k / m], &w2[k % m], circ));
    Ok(sf.with_values(values))
}

pub fn vertical_peetre_norm(peetre: &ScaleField) -> Field2 {
    g_function(peetre)
}

/// What the streaming engine accumulates besides `g`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FunctionalRequest {
    pub area: bool,
    /// `(λ₁, λ₂)` for `g*`.
    pub gstar: Option<(f64, f64)>,
    /// `(λ₁', λ₂')` for the vertical Peetre norm.
    pub peetre: Option<(f64, f64)>,
    /// Tally pointwise chain violations.
    pub checked: bool,
}

impl Default for FunctionalRequest {
    fn default() -> Self {
        FunctionalRequest { area: true, gstar: None, peetre: None, checked: false }
    }
}

/// Pointwise chain violations (slack `1e-9` relative).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ChainTally {
    pub points: usize,
    /// `Peetre_t(x) ≥ |V_t(x)|` per scale pair.
    pub peetre_below_value: usize,
    /// `g ≤ vertical Peetre`.
    pub g_above_peetre: usize,
    /// `S ≤ 2^{(n₁λ₁+n₂λ₂)/2} g*`.
    pub area_above_gstar: usize,
    /// `S ≤ 2^{λ₁'+λ₂'} vertical Peetre`.
    pub area_above_peetre: usize,
}

impl ChainTally {
    pub fn total(&self) -> usize {
        self.peetre_below_value + self.g_above_peetre + self.area_above_gstar + self.area_above_peetre
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Functionals {
    pub g: Field2,
    pub area: Option<Field2>,
    pub gstar: Option<Field2>,
    pub peetre: Option<Field2>,
    pub chain: Option<ChainTally>,
}

const CHAIN_SLACK: f64 = 1e-9;
const BAND_REL_TOL: f64 = 1e-13;

/// Streaming evaluator for a fixed pair of models, profiles, ladder and
/// exponents. Axis tables are built once and shared across inputs.
#[derive(Clone, Debug)]
pub struct SquareEngine<'a> {
    models: [&'a SpectralModel; 2],
    profiles: [&'a MultiplierProfile; 2],
    ladder: ScaleLadder,
    request: FunctionalRequest,
    tables: [AxisTables; 2],
    basis: [Vec<f64>; 2],
}

impl<'a> SquareEngine<'a> {
    pub fn new(
        models: [&'a SpectralModel; 2],
        profiles: [&'a MultiplierProfile; 2],
        ladder: &ScaleLadder,
        request: FunctionalRequest,
    ) -> Result<Self> {
        for (l1, l2) in [request.gstar, request.peetre].into_iter().flatten() {
            check_lambda(l1)?;
            check_lambda(l2)?;
        }
        let ts = ladder.t();
        let table = |axis: usize| {
            let m = models[axis];
            let pick = |o: Option<(f64, f64)>| o.map(|l| if axis == 0 { l.0 } else { l.1 });
            AxisTables::new(
                m.grid(),
                ts,
                pick(request.gstar).map(|l| l * m.nominal_dimension()),
                pick(request.peetre),
            )
        };
        // Row-major copies of the eigenbases.
        let basis = |m: &SpectralModel| {
            let e = m.basis();
            let n = m.len();
            (0..n * n).map(|k| e[(k / n, k % n)]).collect::<Vec<f64>>()
        };
        Ok(SquareEngine {
            models,
            profiles,
            ladder: ladder.clone(),
            request,
            tables: [table(0), table(1)],
            basis: [basis(models[0]), basis(models[1])],
        })
    }

    pub fn ladder(&self) -> &ScaleLadder {
        &self.ladder
    }

    pub fn request(&self) -> FunctionalRequest {
        self.request
    }

    /// Spectral coefficients `C = E₁ᵀW₁ F W₂E₂`.
    pub fn coefficients(&self, f: &Field2) -> Result<Field2> {
        let (g1, g2) = (self.models[0].grid(), self.models[1].grid());
        check_dims(f, g1, g2)?;
        let (n1, n2) = f.dims();
        let mut rows = Field2::zeros(n1, n2);
        for i in 0..n1 {
            let c = self.models[1].forward(f.row(i))?;
            rows.as_mut_slice()[i * n2..(i + 1) * n2].copy_from_slice(&c);
        }
        let t = rows.transpose();
        let mut out = Field2::zeros(n2, n1);
        for k in 0..n2 {
            let c = self.models[0].forward(t.row(k))?;
            out.as_mut_slice()[k * n1..(k + 1) * n1].copy_from_slice(&c);
        }
        Ok(out.transpose())
    }

    pub fn evaluate(&self, f: &Field2, exec: Exec) -> Result<Functionals> {
        let c = self.coefficients(f)?;
        let (n1, n2) = f.dims();
        let cmax = c.max_abs();
        let band = |n: usize, row_major: bool| -> Vec<usize> {
            (0..n)
                .filter(|&k| {
                    let m = if row_major {
                        c.row(k).iter().fold(0.0f64, |a, v| a.max(v.abs()))
                    } else {
                        (0..c.n1()).fold(0.0f64, |a, i| a.max(c.get(i, k).abs()))
                    };
                    m > BAND_REL_TOL * cmax
                })
                .collect()
        };
        let (b1, b2) = (band(n1, true), band(n2, false));
        let ts = self.ladder.t();
        let lw = self.ladder.log_weights();
        let zero = || Functionals {
            g: Field2::zeros(n1, n2),
            area: self.request.area.then(|| Field2::zeros(n1, n2)),
            gstar: self.request.gstar.map(|_| Field2::zeros(n1, n2)),
            peetre: self.request.peetre.map(|_| Field2::zeros(n1, n2)),
            chain: self.request.checked.then(ChainTally::default),
        };
        if b1.is_empty() || b2.is_empty() {
            return Ok(self.finish(zero()));
        }
        let k2n = b2.len();
        let (e1, e2) = (&self.basis[0], &self.basis[1]);
        // E₂ restricted to the band, stored [k₂][x₂].
        let e2b: Vec<f64> = b2.iter().flat_map(|&k| (0..n2).map(move |x| e2[x * n2 + k])).collect();
        let sqrt1 = self.models[0].sqrt_eigenvalues();
        let sqrt2 = self.models[1].sqrt_eigenvalues();
        let parts = exec.map(ts.len(), |a| {
            let mut acc = zero();
            let phi1: Vec<f64> = b1.iter().map(|&k| self.profiles[0].eval(ts[a] * sqrt1[k])).collect();
            // P[x₁][k₂] = Σ_{k₁} E₁[x₁,k₁] Φ₁ C[k₁,k₂].
            let mut p = vec![0.0; n1 * k2n];
            for x in 0..n1 {
                let dst = &mut p[x * k2n..(x + 1) * k2n];
                for (i, &k1) in b1.iter().enumerate() {
                    let coef = e1[x * n1 + k1] * phi1[i];
                    if coef == 0.0 {
                        continue;
                    }
                    let crow = c.row(k1);
                    for (d, &k2) in dst.iter_mut().zip(&b2) {
                        *d += coef * crow[k2];
                    }
                }
            }
            let mut g_row = Field2::zeros(n1, n2);
            let mut s_row = acc.area.as_ref().map(|_| Field2::zeros(n1, n2));
            let mut gs_row = acc.gstar.as_ref().map(|_| Field2::zeros(n1, n2));
            let mut v = Field2::zeros(n1, n2);
            for (b, &t2) in ts.iter().enumerate() {
                let phi2: Vec<f64> = b2.iter().map(|&k| self.profiles[1].eval(t2 * sqrt2[k])).collect();
                for x in 0..n1 {
                    let dst = &mut v.as_mut_slice()[x * n2..(x + 1) * n2];
                    dst.iter_mut().for_each(|d| *d = 0.0);
                    for k in 0..k2n {
                        let coef = p[x * k2n + k] * phi2[k];
                        if coef == 0.0 {
                            continue;
                        }
                        for (d, e) in dst.iter_mut().zip(&e2b[k * n2..(k + 1) * n2]) {
                            *d += coef * e;
                        }
                    }
                }
                let sq = v.map(|x| x * x);
                g_row.axpy(lw[b], &sq);
                if let Some(s) = s_row.as_mut() {
                    ball_avg_rows(&sq, &self.tables[1], b, s, lw[b]);
                }
                if let Some(gs) = gs_row.as_mut() {
                    contract_rows(&sq, &self.tables[1].gstar_t.as_ref().unwrap()[b], gs, lw[b]);
                }
                if let Some(pe) = acc.peetre.as_mut() {
                    let w1 = &self.tables[0].peetre.as_ref().unwrap()[a];
                    let w2 = &self.tables[1].peetre.as_ref().unwrap()[b];
                    let pt = peetre_pass(&v, w1, w2, [self.tables[0].circular, self.tables[1].circular]);
                    if let Some(ch) = acc.chain.as_mut() {
                        ch.peetre_below_value += pt
                            .as_slice()
                            .iter()
                            .zip(v.as_slice())
                            .filter(|(p, v)| **p < v.abs() * (1.0 - CHAIN_SLACK))
                            .count();
                    }
                    pe.axpy(lw[a] * lw[b], &pt.map(|x| x * x));
                }
            }
            acc.g.axpy(lw[a], &g_row);
            if let (Some(s), Some(out)) = (s_row, acc.area.as_mut()) {
                ball_avg_cols(&s, &self.tables[0], a, out, lw[a]);
            }
            if let (Some(gs), Some(out)) = (gs_row, acc.gstar.as_mut()) {
                contract_cols(&gs, &self.tables[0].gstar.as_ref().unwrap()[a], out, lw[a]);
            }
            acc
        });
        let sum = tree_reduce(parts, |mut x, y| {
            x.g.axpy(1.0, &y.g);
            for (a, b) in [(&mut x.area, &y.area), (&mut x.gstar, &y.gstar), (&mut x.peetre, &y.peetre)] {
                if let (Some(a), Some(b)) = (a.as_mut(), b.as_ref()) {
                    a.axpy(1.0, b);
                }
            }
            if let (Some(a), Some(b)) = (x.chain.as_mut(), y.chain.as_ref()) {
                a.peetre_below_value += b.peetre_below_value;
            }
            x
        })
        .expect("nonempty ladder");
        Ok(self.finish(sum))
    }

    fn finish(&self, acc: Functionals) -> Functionals {
        let mut out = Functionals {
            g: sqrt_field(acc.g),
            area: acc.area.map(sqrt_field),
            gstar: acc.gstar.map(sqrt_field),
            peetre: acc.peetre.map(sqrt_field),
            chain: acc.chain,
        };
        if let Some(ch) = out.chain.as_mut() {
            ch.points = out.g.as_slice().len();
            let above = |lhs: &Field2, rhs: &Field2, c: f64| {
                lhs.as_slice().iter().zip(rhs.as_slice()).filter(|(l, r)| **l > c * **r * (1.0 + CHAIN_SLACK) + 1e-300).count()
            };
            let n = [self.models[0].nominal_dimension(), self.models[1].nominal_dimension()];
            if let Some(p) = out.peetre.as_ref() {
                ch.g_above_peetre = above(&out.g, p, 1.0);
                if let (Some(s), Some((l1, l2))) = (out.area.as_ref(), self.request.peetre) {
                    ch.area_above_peetre = above(s, p, 2f64.powf(l1 + l2));
                }
            }
            if let (Some(s), Some(gs), Some((l1, l2))) = (out.area.as_ref(), out.gstar.as_ref(), self.request.gstar) {
                ch.area_above_gstar = above(s, gs, 2f64.powf(0.5 * (n[0] * l1 + n[1] * l2)));
            }
        }
        out
    }
}

/// Fraction of `∫∫|Φ₁⊗Φ₂ f|² dt/t` outside the ladder, per axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailReport {
    pub fraction: [f64; 2],
    pub budget: f64,
    pub certified: bool,
}

pub const TAIL_BUDGET: f64 = 1e-3;

/// `∫₀^∞ |Φ(s)|² ds/s` by midpoint quadrature in `ln s`.
pub fn profile_log_energy(profile: &MultiplierProfile) -> f64 {
    let (lo, hi, n) = (-40.0f64, 40.0f64, 32_000);
    let h = (hi - lo) / n as f64;
    let terms: Vec<f64> = (0..n).map(|i| profile.eval((lo + (i as f64 + 0.5) * h).exp()).powi(2) * h).collect();
    pairwise_sum(&terms)
}

pub fn tail_energy(engine: &SquareEngine<'_>, f: &Field2) -> Result<TailReport> {
    let c = engine.coefficients(f)?;
    let mut fraction = [0.0; 2];
    for axis in 0..2 {
        let model = engine.models[axis];
        let prof = engine.profiles[axis];
        let total = profile_log_energy(prof);
        let r = model.sqrt_eigenvalues();
        let (mut num, mut den) = (0.0, 0.0);
        for k in 0..model.len() {
            let e: f64 = if axis == 0 {
                c.row(k).iter().map(|v| v * v).sum()
            } else {
                (0..c.n1()).map(|i| c.get(i, k).powi(2)).sum()
            };
            if e == 0.0 || r[k] == 0.0 {
                continue;
            }
            let inside: f64 = engine
                .ladder
                .t()
                .iter()
                .zip(engine.ladder.log_weights())
                .map(|(&t, &w)| w * prof.eval(t * r[k]).powi(2))
                .sum();
            num += e * (1.0 - inside / total).max(0.0);
            den += e;
        }
        fraction[axis] = if !total.is_finite() {
            f64::INFINITY
        } else if den == 0.0 {
            0.0
        } else {
            num / den
        };
    }
    let certified = fraction.iter().all(|&v| v <= TAIL_BUDGET);
    Ok(TailReport { fraction, budget: TAIL_BUDGET, certified })
}

/// `h_{j} = Σ_k 2^{-|k₁-j₁|σ₁} 2^{-|k₂-j₂|σ₂} g_k` over a finite index box,
/// `seq[j₁][j₂]`.
pub fn ry_convolve(seq: &[Vec<Field2>], sigma1: f64, sigma2: f64) -> Result<Vec<Vec<Field2>>> {
    for s in [sigma1, sigma2] {
        if !(s > 0.0) {
            return Err(Error::NonpositiveSigma(s));
        }
    }
    let m1 = seq.len();
    let m2 = seq.first().map_or(0, Vec::len);
    if m1 == 0 || m2 == 0 || seq.iter().any(|r| r.len() != m2) {
        return Err(Error::EmptyRange("scale sequence must be a nonempty box".into()));
    }
    let (n1, n2) = seq[0][0].dims();
    let decay = |d: usize, s: f64| 2f64.powf(-(d as f64) * s);
    // Separable: convolve along j₂, then along j₁.
    let mut stage: Vec<Vec<Field2>> = Vec::with_capacity(m1);
    for row in seq {
        stage.push(
            (0..m2)
                .map(|j| {
                    let mut acc = Field2::zeros(n1, n2);
                    for (k, g) in row.iter().enumerate() {
                        acc.axpy(decay(j.abs_diff(k), sigma2), g);
                    }
                    acc
                })
                .collect(),
        );
    }
    Ok((0..m1)
        .map(|j1| {
            (0..m2)
                .map(|j2| {
                    let mut acc = Field2::zeros(n1, n2);
                    for (k1, row) in stage.iter().enumerate() {
                        acc.axpy(decay(j1.abs_diff(k1), sigma1), &row[j2]);
                    }
                    acc
                })
                .collect()
        })
        .collect())
}

/// `(Σ_{m∈ℤ} 2^{-|m|σ₁})(Σ_{m∈ℤ} 2^{-|m|σ₂})`.
pub fn ry_young_constant(sigma1: f64, sigma2: f64) -> f64 {
    let one = |s: f64| {
        let r = 2f64.powf(-s);
        (1.0 + r) / (1.0 - r)
    };
    one(sigma1) * one(sigma2)
}
