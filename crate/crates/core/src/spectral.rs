//! Model operators with exact finite-dimensional functional calculus.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Grid, GridKind};
use crate::multipliers::MultiplierProfile;
use crate::stats::log_log_slope;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "operator", rename_all = "kebab-case")]
pub enum ModelTag {
    Laplacian,
    Bessel { lambda: f64 },
    BesselSchrodinger { lambda: f64 },
}

impl fmt::Display for ModelTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelTag::Laplacian => write!(f, "laplacian"),
            ModelTag::Bessel { lambda } => write!(f, "bessel({lambda})"),
            ModelTag::BesselSchrodinger { lambda } => write!(f, "bessel-schrodinger({lambda})"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Backend {
    FourierTorus,
    DenseEigen,
}

#[derive(Clone)]
struct FftPlans {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    /// `|ξ|` per FFT bin.
    freqs: Vec<f64>,
}

#[derive(Clone)]
pub struct SpectralModel {
    grid: Grid,
    tag: ModelTag,
    backend: Backend,
    eigenvalues: Vec<f64>,
    sqrt_eigs: Vec<f64>,
    /// Columns are eigenfunctions, orthonormal for the weighted inner product.
    basis: DMatrix<f64>,
    generator: Option<DMatrix<f64>>,
    fft: Option<FftPlans>,
}

impl fmt::Debug for SpectralModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SpectralModel")
            .field("tag", &self.tag)
            .field("backend", &self.backend)
            .field("size", &self.grid.len())
            .finish()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelColumn {
    pub source: usize,
    pub t: f64,
    pub values: Vec<f64>,
}

pub fn build_operator(grid: &Grid, tag: ModelTag) -> Result<SpectralModel> {
    let incompatible = |reason: &str| Error::IncompatibleModel { model: tag.to_string(), reason: reason.into() };
    match tag {
        ModelTag::Laplacian => {
            if grid.kind() != GridKind::LinePeriodic {
                return Err(incompatible("laplacian needs a periodic grid"));
            }
            Ok(build_torus(grid))
        }
        ModelTag::Bessel { lambda } => {
            if grid.kind() != GridKind::Halfline {
                return Err(incompatible("bessel needs a half-line grid"));
            }
            if (grid.bessel_lambda() - lambda).abs() > 1e-15 {
                return Err(incompatible("grid measure parameter differs from the operator's"));
            }
            build_dense(grid, tag)
        }
        ModelTag::BesselSchrodinger { .. } => {
            if grid.kind() != GridKind::Halfline || grid.bessel_lambda() != 0.0 {
                return Err(incompatible("bessel-schrodinger needs a Lebesgue half-line grid"));
            }
            build_dense(grid, tag)
        }
    }
}

fn build_torus(grid: &Grid) -> SpectralModel {
    let n = grid.len();
    let period = grid.period().expect("periodic grid");
    let c = grid.mass_scale();
    let two_pi = 2.0 * std::f64::consts::PI;
    let x = grid.points();
    let mut eigenvalues = Vec::with_capacity(n);
    let mut basis = DMatrix::zeros(n, n);
    let norm0 = 1.0 / (period * c).sqrt();
    let norm = (2.0 / (period * c)).sqrt();
    for i in 0..n {
        basis[(i, 0)] = norm0;
    }
    eigenvalues.push(0.0);
    let mut col = 1;
    for k in 1..n.div_ceil(2) {
        let xi = two_pi * k as f64 / period;
        for i in 0..n {
            basis[(i, col)] = norm * (xi * x[i]).cos();
            basis[(i, col + 1)] = norm * (xi * x[i]).sin();
        }
        eigenvalues.push(xi * xi);
        eigenvalues.push(xi * xi);
        col += 2;
    }
    if n % 2 == 0 {
        let xi = std::f64::consts::PI * n as f64 / period;
        for i in 0..n {
            basis[(i, col)] = norm0 * if i % 2 == 0 { 1.0 } else { -1.0 } * (xi * x[0]).cos().signum();
        }
        eigenvalues.push(xi * xi);
    }
    let mut planner = FftPlanner::new();
    let freqs = (0..n)
        .map(|k| {
            let kk = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
            two_pi * kk.abs() / period
        })
        .collect();
    let fft = FftPlans { forward: planner.plan_fft_forward(n), inverse: planner.plan_fft_inverse(n), freqs };
    SpectralModel {
        grid: grid.clone(),
        tag: ModelTag::Laplacian,
        backend: Backend::FourierTorus,
        sqrt_eigs: eigenvalues.iter().map(|v: &f64| v.sqrt()).collect(),
        eigenvalues,
        basis,
        generator: None,
        fft: Some(fft),
    }
}

/// Conservative finite differences: flux `e^{2λ}(u_{i+1} - u_i)/(x_{i+1} - x_i)`
/// through each cell edge, Dirichlet at `R` and, where the edge weight at 0 is
/// nonzero, at 0.
fn stiffness(grid: &Grid, tag: ModelTag) -> (Vec<f64>, Vec<f64>) {
    let n = grid.len();
    let x = grid.points();
    let e = grid.edges();
    let c = grid.mass_scale();
    let (weight_exp, potential) = match tag {
        ModelTag::Bessel { lambda } => (2.0 * lambda, 0.0),
        ModelTag::BesselSchrodinger { lambda } => (0.0, lambda * lambda - lambda),
        ModelTag::Laplacian => unreachable!(),
    };
    let edge_w = |y: f64| if weight_exp == 0.0 { 1.0 } else { y.powf(weight_exp) };
    // conductance[k] couples point k-1 and k; k = 0 and k = n are boundary edges.
    let mut cond = vec![0.0; n + 1];
    cond[0] = c * edge_w(e[0]) / (x[0] - e[0]);
    for k in 1..n {
        cond[k] = c * edge_w(e[k]) / (x[k] - x[k - 1]);
    }
    cond[n] = c * edge_w(e[n]) / (e[n] - x[n - 1]);
    let w = grid.quad_weights();
    let diag_extra: Vec<f64> = (0..n).map(|i| potential * w[i] / (x[i] * x[i])).collect();
    (cond, diag_extra)
}

fn build_dense(grid: &Grid, tag: ModelTag) -> Result<SpectralModel> {
    let n = grid.len();
    let w = grid.quad_weights();
    let (cond, extra) = stiffness(grid, tag);
    let mut a = DMatrix::zeros(n, n);
    for i in 0..n {
        a[(i, i)] = (cond[i] + cond[i + 1] + extra[i]) / w[i];
        if i > 0 {
            a[(i, i - 1)] = -cond[i] / w[i];
        }
        if i + 1 < n {
            a[(i, i + 1)] = -cond[i + 1] / w[i];
        }
    }
    let sw: Vec<f64> = w.iter().map(|v| v.sqrt()).collect();
    let s = DMatrix::from_fn(n, n, |i, j| sw[i] * a[(i, j)] / sw[j]);
    let scale = s.amax();
    let asym = (&s - s.transpose()).amax();
    if asym > 1e-8 * scale {
        return Err(Error::EigenFailure(format!("symmetrized matrix asymmetric by {asym:e}")));
    }
    let sym = (&s + s.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]).then(i.cmp(&j)));
    let max = eig.eigenvalues.amax();
    let mut eigenvalues = Vec::with_capacity(n);
    let mut basis = DMatrix::zeros(n, n);
    for (col, &k) in order.iter().enumerate() {
        let mut v = eig.eigenvalues[k];
        if v < -1e-10 * max {
            return Err(Error::EigenFailure(format!("negative eigenvalue {v:e}")));
        }
        v = v.max(0.0);
        eigenvalues.push(v);
        // Fix the sign so the largest entry is positive.
        let q = eig.eigenvectors.column(k);
        let pivot = q.iter().cloned().fold(0.0f64, |m, y| if y.abs() > m.abs() { y } else { m });
        let sgn = if pivot < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            basis[(i, col)] = sgn * q[i] / sw[i];
        }
    }
    Ok(SpectralModel {
        grid: grid.clone(),
        tag,
        backend: Backend::DenseEigen,
        sqrt_eigs: eigenvalues.iter().map(|v| v.sqrt()).collect(),
        eigenvalues,
        basis,
        generator: Some(a),
        fft: None,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum DecayMode {
    Single { exponents: Vec<f64> },
    Composed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SingleDecayFit {
    pub scale: f64,
    pub exponent: f64,
    pub constant: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComposedDecayFit {
    pub ratios: Vec<f64>,
    pub peaks: Vec<f64>,
    pub alpha: f64,
    /// Odd vanishing index `m` of the inner profile; the bound is `(t/s)^{m+1}`.
    pub m: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayReport {
    pub single: Vec<SingleDecayFit>,
    pub composed: Option<ComposedDecayFit>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianFit {
    /// `c` in `exp(-ρ²/(ct))`.
    pub c: f64,
    pub constant: f64,
    pub constant_unweighted: f64,
}

impl SpectralModel {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn tag(&self) -> ModelTag {
        self.tag
    }

    pub fn backend(&self) -> Backend {
        self.backend
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn sqrt_eigenvalues(&self) -> &[f64] {
        &self.sqrt_eigs
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    /// Homogeneous dimension used in `g*` weights.
    pub fn nominal_dimension(&self) -> f64 {
        self.grid.nominal_dimension()
    }

    fn check_len(&self, f: &[f64]) -> Result<()> {
        if f.len() != self.len() {
            return Err(Error::LengthMismatch { expected: self.len(), got: f.len() });
        }
        Ok(())
    }

    /// Spectral coefficients `Eᵀ W f`.
    pub fn forward(&self, f: &[f64]) -> Result<Vec<f64>> {
        self.check_len(f)?;
        let w = self.grid.quad_weights();
        let wf: Vec<f64> = f.iter().zip(w).map(|(a, b)| a * b).collect();
        Ok((0..self.len()).map(|k| self.basis.column(k).iter().zip(&wf).map(|(e, v)| e * v).sum()).collect())
    }

    pub fn inverse(&self, c: &[f64]) -> Result<Vec<f64>> {
        self.check_len(c)?;
        let n = self.len();
        let mut out = vec![0.0; n];
        for (k, &ck) in c.iter().enumerate() {
            if ck != 0.0 {
                for (o, e) in out.iter_mut().zip(self.basis.column(k).iter()) {
                    *o += ck * e;
                }
            }
        }
        Ok(out)
    }

    /// Multiplies spectral coefficients by `m(√μ_k)`.
    fn apply_symbol(&self, f: &[f64], symbol: impl Fn(f64) -> f64) -> Result<Vec<f64>> {
        self.check_len(f)?;
        if let Some(p) = &self.fft {
            let n = self.len();
            let mut buf: Vec<Complex64> = f.iter().map(|&v| Complex64::new(v, 0.0)).collect();
            p.forward.process(&mut buf);
            for (b, &xi) in buf.iter_mut().zip(&p.freqs) {
                *b *= symbol(xi);
            }
            p.inverse.process(&mut buf);
            return Ok(buf.iter().map(|z| z.re / n as f64).collect());
        }
        let mut c = self.forward(f)?;
        for (ck, &r) in c.iter_mut().zip(&self.sqrt_eigs) {
            *ck *= symbol(r);
        }
        self.inverse(&c)
    }

    /// `Φ(t√L) f`.
    pub fn apply_multiplier(&self, profile: &MultiplierProfile, t: f64, f: &[f64]) -> Result<Vec<f64>> {
        if t <= 0.0 {
            return Err(Error::ScaleNonpositive(t));
        }
        self.apply_symbol(f, |r| profile.eval(t * r))
    }

    /// `e^{-tL} f`.
    pub fn apply_heat(&self, t: f64, f: &[f64]) -> Result<Vec<f64>> {
        if t <= 0.0 {
            return Err(Error::ScaleNonpositive(t));
        }
        self.apply_symbol(f, |r| (-t * r * r).exp())
    }

    /// `L f`: the finite-difference matrix for dense models, `ξ²` on the torus.
    pub fn apply_generator(&self, f: &[f64]) -> Result<Vec<f64>> {
        self.check_len(f)?;
        match &self.generator {
            Some(a) => Ok((a * nalgebra::DVector::from_column_slice(f)).as_slice().to_vec()),
            None => self.apply_symbol(f, |r| r * r),
        }
    }

    /// Spectral symbol `Φ(t√μ_k)` in basis order.
    pub fn symbol(&self, profile: &MultiplierProfile, t: f64) -> Vec<f64> {
        self.sqrt_eigs.iter().map(|&r| profile.eval(t * r)).collect()
    }

    /// Matrix of `Φ(t√L)` acting on point values.
    pub fn operator_matrix(&self, profile: &MultiplierProfile, t: f64) -> Result<DMatrix<f64>> {
        let k = self.kernel_matrix(profile, t)?;
        let w = self.grid.quad_weights();
        Ok(DMatrix::from_fn(self.len(), self.len(), |i, j| k[(i, j)] * w[j]))
    }

    /// `K(x_i, y_j)`, the operator matrix with the delta normalization.
    pub fn kernel_matrix(&self, profile: &MultiplierProfile, t: f64) -> Result<DMatrix<f64>> {
        if t <= 0.0 {
            return Err(Error::ScaleNonpositive(t));
        }
        Ok(self.kernel_from_symbol(&self.symbol(profile, t)))
    }

    fn kernel_from_symbol(&self, sym: &[f64]) -> DMatrix<f64> {
        let mut scaled = self.basis.clone();
        for (k, &s) in sym.iter().enumerate() {
            scaled.column_mut(k).scale_mut(s);
        }
        scaled * self.basis.transpose()
    }

    fn column_from_symbol(&self, source: usize, t: f64, sym: impl Fn(f64) -> f64) -> KernelColumn {
        let n = self.len();
        let mut values = vec![0.0; n];
        for k in 0..n {
            let c = sym(self.sqrt_eigs[k]) * self.basis[(source, k)];
            if c != 0.0 {
                for (v, e) in values.iter_mut().zip(self.basis.column(k).iter()) {
                    *v += c * e;
                }
            }
        }
        KernelColumn { source, t, values }
    }

    /// `p_t(·, y_source)`.
    pub fn heat_kernel_column(&self, t: f64, source: usize) -> Result<KernelColumn> {
        if t <= 0.0 {
            return Err(Error::ScaleNonpositive(t));
        }
        Ok(self.column_from_symbol(source, t, |r| (-t * r * r).exp()))
    }

    pub fn multiplier_kernel_column(
        &self,
        profile: &MultiplierProfile,
        t: f64,
        source: usize,
    ) -> Result<KernelColumn> {
        if t <= 0.0 {
            return Err(Error::ScaleNonpositive(t));
        }
        Ok(self.column_from_symbol(source, t, |r| profile.eval(t * r)))
    }

    /// Fitted `(C, c)` in `|p_t(x,y)| ≤ C V(x,√t)^{-1} exp(-ρ²/(ct))`: the
    /// smallest `c` from a fixed ladder whose constant stays within twice the
    /// unweighted one. Pairs farther apart than a quarter of the domain are
    /// skipped.
    pub fn gaussian_fit(&self, times: &[f64]) -> Result<GaussianFit> {
        let ladder = [1.0, 2.0, 3.0, 4.0, 6.0, 8.0, 12.0, 16.0];
        let reach = 0.25 * self.grid.period().or(self.grid.right()).unwrap_or(f64::INFINITY);
        let x = self.grid.points();
        let n = self.len();
        let mut best = vec![0.0f64; ladder.len()];
        let mut unweighted: f64 = 0.0;
        for &t in times {
            if t <= 0.0 {
                return Err(Error::ScaleNonpositive(t));
            }
            let sym: Vec<f64> = self.sqrt_eigs.iter().map(|r| (-t * r * r).exp()).collect();
            let k = self.kernel_from_symbol(&sym);
            for i in 0..n {
                let v = self.grid.volume(x[i], t.sqrt());
                for j in 0..n {
                    let base = k[(i, j)].abs() * v;
                    let rho = self.grid.dist(x[i], x[j]);
                    if rho > reach {
                        continue;
                    }
                    unweighted = unweighted.max(base);
                    for (b, &c) in best.iter_mut().zip(&ladder) {
                        *b = b.max(base * (rho * rho / (c * t)).exp());
                    }
                }
            }
        }
        let pick = ladder
            .iter()
            .zip(&best)
            .find(|(_, &b)| b <= 2.0 * unweighted)
            .map(|(&c, &b)| (c, b))
            .unwrap_or((f64::INFINITY, unweighted));
        Ok(GaussianFit { c: pick.0, constant: pick.1, constant_unweighted: unweighted })
    }
}

/// Largest odd `m ≤ ν - 1` for a profile vanishing to order `ν`.
pub fn odd_vanishing_index(order: u32) -> Option<u32> {
    if order < 2 {
        return None;
    }
    let m = order - 1;
    Some(if m % 2 == 1 { m } else { m - 1 })
}

/// Kernel decay diagnostics. `scale_pairs` are `(s, t)`; single mode uses the
/// distinct `t` values with `outer`.
pub fn decay_check(
    model: &SpectralModel,
    outer: &MultiplierProfile,
    inner: &MultiplierProfile,
    scale_pairs: &[(f64, f64)],
    mode: &DecayMode,
) -> Result<DecayReport> {
    for &(s, t) in scale_pairs {
        if s <= 0.0 {
            return Err(Error::ScaleNonpositive(s));
        }
        if t <= 0.0 {
            return Err(Error::ScaleNonpositive(t));
        }
    }
    match mode {
        DecayMode::Single { exponents } => {
            let mut ts: Vec<f64> = scale_pairs.iter().map(|p| p.1).collect();
            ts.sort_by(f64::total_cmp);
            ts.dedup();
            let grid = model.grid();
            let x = grid.points();
            let mut single = Vec::new();
            for &t in &ts {
                let k = model.kernel_matrix(outer, t)?;
                for &ne in exponents {
                    let mut c: f64 = 0.0;
                    for i in 0..model.len() {
                        let v = grid.volume(x[i], t);
                        for j in 0..model.len() {
                            let rho = grid.dist(x[i], x[j]);
                            c = c.max(k[(i, j)].abs() * v * (1.0 + rho / t).powf(ne));
                        }
                    }
                    single.push(SingleDecayFit { scale: t, exponent: ne, constant: c });
                }
            }
            Ok(DecayReport { single, composed: None })
        }
        DecayMode::Composed => {
            let m = odd_vanishing_index(inner.vanishing_order()).ok_or_else(|| Error::InsufficientVanishing {
                label: inner.label().to_string(),
                order: inner.vanishing_order(),
                required: 2,
            })?;
            let mut ratios = Vec::new();
            let mut peaks = Vec::new();
            let w = model.grid().quad_weights();
            for &(s, t) in scale_pairs {
                if t > s {
                    return Err(Error::ScaleOrderViolation { s, t });
                }
                let prod = model.operator_matrix(outer, s)? * model.operator_matrix(inner, t)?;
                let mut peak: f64 = 0.0;
                for j in 0..model.len() {
                    for i in 0..model.len() {
                        peak = peak.max((prod[(i, j)] / w[j]).abs());
                    }
                }
                ratios.push(t / s);
                peaks.push(peak);
            }
            let alpha = if ratios.len() >= 2 { log_log_slope(&ratios, &peaks) } else { f64::NAN };
            Ok(DecayReport { single: Vec::new(), composed: Some(ComposedDecayFit { ratios, peaks, alpha, m }) })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{make_grid, DomainParams};
    use crate::multipliers::make_profile;

    fn torus(n: usize) -> SpectralModel {
        let g = make_grid(GridKind::LinePeriodic, n, DomainParams::Periodic { period: 32.0 }).unwrap();
        build_operator(&g, ModelTag::Laplacian).unwrap()
    }

    fn bessel(n: usize, lambda: f64, right: f64) -> SpectralModel {
        let g = make_grid(GridKind::Halfline, n, DomainParams::Halfline { lambda, right }).unwrap();
        build_operator(&g, ModelTag::Bessel { lambda }).unwrap()
    }

    #[test]
    fn torus_spectrum() {
        let m = torus(64);
        let e = m.eigenvalues();
        assert_eq!(e[0], 0.0);
        let first = (2.0 * std::f64::consts::PI / 32.0).powi(2);
        assert!((e[1] - first).abs() < 1e-15 && (e[2] - first).abs() < 1e-15);
        assert!(e.windows(2).all(|p| p[0] <= p[1]));
    }

    #[test]
    fn compatibility() {
        let g = make_grid(GridKind::Halfline, 32, DomainParams::Halfline { lambda: 1.0, right: 5.0 }).unwrap();
        assert!(matches!(build_operator(&g, ModelTag::Laplacian), Err(Error::IncompatibleModel { .. })));
        assert!(build_operator(&g, ModelTag::Bessel { lambda: 0.5 }).is_err());
        assert!(build_operator(&g, ModelTag::BesselSchrodinger { lambda: 1.0 }).is_err());
        let t = make_grid(GridKind::LinePeriodic, 32, DomainParams::Periodic { period: 8.0 }).unwrap();
        assert!(build_operator(&t, ModelTag::Bessel { lambda: 0.0 }).is_err());
    }

    #[test]
    fn fft_and_dense_paths_agree() {
        let m = torus(32);
        let heat = make_profile("lp-heat").unwrap();
        let f: Vec<f64> = m.grid().points().iter().map(|&x| (-(x - 1.0).powi(2)).exp() + 0.1 * x.sin()).collect();
        let a = m.apply_multiplier(&heat, 0.7, &f).unwrap();
        let mut c = m.forward(&f).unwrap();
        for (ck, &r) in c.iter_mut().zip(m.sqrt_eigenvalues()) {
            *ck *= heat.eval(0.7 * r);
        }
        let b = m.inverse(&c).unwrap();
        let err = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(err < 1e-12, "{err}");
    }

    #[test]
    fn single_mode_is_eigenfunction() {
        let m = torus(64);
        let heat = make_profile("heat").unwrap();
        let xi = 2.0 * std::f64::consts::PI * 3.0 / 32.0;
        let f: Vec<f64> = m.grid().points().iter().map(|&x| (xi * x).cos()).collect();
        let t = 0.8;
        let out = m.apply_multiplier(&heat, t, &f).unwrap();
        let factor = (-t * t * xi * xi).exp();
        for (o, v) in out.iter().zip(&f) {
            assert!((o - factor * v).abs() < 1e-13);
        }
        assert!(m.apply_multiplier(&heat, 0.0, &f).is_err());
        let ones = vec![1.0; 64];
        let same = m.apply_multiplier(&heat, 3.0, &ones).unwrap();
        assert!(same.iter().all(|v| (v - 1.0).abs() < 1e-13));
    }

    #[test]
    fn dirichlet_spectra() {
        let right = 10.0;
        let rel_err = |n: usize, tag: ModelTag, lambda: f64| {
            let g = make_grid(GridKind::Halfline, n, DomainParams::Halfline { lambda, right }).unwrap();
            let m = build_operator(&g, tag).unwrap();
            (1..=5)
                .map(|j| {
                    let exact = (j as f64 * std::f64::consts::PI / right).powi(2);
                    ((m.eigenvalues()[j - 1] - exact) / exact).abs()
                })
                .fold(0.0, f64::max)
        };
        let b0 = rel_err(128, ModelTag::Bessel { lambda: 0.0 }, 0.0);
        let b1 = rel_err(256, ModelTag::Bessel { lambda: 0.0 }, 0.0);
        assert!(b0 < 1e-2 && b1 < b0 / 2.5, "{b0} {b1}");
        let s = rel_err(128, ModelTag::BesselSchrodinger { lambda: 1.0 }, 0.0);
        assert!((s - b0).abs() < 1e-12, "{s} {b0}");
    }

    #[test]
    fn bessel_heat_symmetric() {
        let m = bessel(96, 1.0, 10.0);
        let k = m.kernel_matrix(&make_profile("heat").unwrap(), 0.5).unwrap();
        let asym = (&k - k.transpose()).amax() / k.amax();
        assert!(asym < 1e-8, "{asym}");
    }

    #[test]
    fn torus_heat_kernel() {
        let m = torus(128);
        let t = 1.0 / (4.0 * std::f64::consts::PI);
        let col = m.heat_kernel_column(t, 64).unwrap();
        assert!((col.values[64] - 1.0).abs() < 0.01, "{}", col.values[64]);
        let mass = m.grid().integrate(&col.values).unwrap();
        assert!((mass - 1.0).abs() < 1e-6);
    }

    #[test]
    fn heat_profile_matches_semigroup() {
        let m = bessel(64, 1.0, 8.0);
        let heat = make_profile("heat").unwrap();
        let a = m.multiplier_kernel_column(&heat, 0.6, 10).unwrap();
        let b = m.heat_kernel_column(0.36, 10).unwrap();
        let err = a.values.iter().zip(&b.values).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        let peak = b.values.iter().fold(0.0f64, |p, v| p.max(v.abs()));
        assert!(err <= 1e-10 * peak);
    }

    #[test]
    fn lp_heat_column_has_zero_mass() {
        let m = torus(64);
        let col = m.multiplier_kernel_column(&make_profile("lp-heat").unwrap(), 1.5, 20).unwrap();
        let peak = col.values.iter().fold(0.0f64, |p, v| p.max(v.abs()));
        assert!(m.grid().integrate(&col.values).unwrap().abs() < 1e-8 * peak);
    }

    #[test]
    fn composed_decay_exponent() {
        let m = torus(64);
        let outer = make_profile("heat").unwrap();
        let inner = make_profile("lp-heat-2").unwrap();
        let s = 2.0;
        let pairs: Vec<(f64, f64)> = (1..=6).map(|i| (s, s * 2f64.powi(-i))).collect();
        let r = decay_check(&m, &outer, &inner, &pairs, &DecayMode::Composed).unwrap();
        let c = r.composed.unwrap();
        assert_eq!(c.m, 3);
        assert!(c.alpha >= 3.7, "{}", c.alpha);
        assert!(matches!(
            decay_check(&m, &outer, &inner, &[(1.0, 2.0)], &DecayMode::Composed),
            Err(Error::ScaleOrderViolation { .. })
        ));
        let heat_inner = decay_check(&m, &outer, &outer, &pairs, &DecayMode::Composed);
        assert!(matches!(heat_inner, Err(Error::InsufficientVanishing { .. })));
    }

    #[test]
    fn gaussian_fit_on_torus() {
        let fit = torus(64).gaussian_fit(&[1.0, 2.0, 4.0]).unwrap();
        assert_eq!(fit.c, 4.0);
        let refined = torus(128).gaussian_fit(&[1.0, 2.0, 4.0]).unwrap();
        assert_eq!(refined.c, 4.0);
        assert!(((fit.constant - refined.constant) / refined.constant).abs() < 0.1);
    }
}
