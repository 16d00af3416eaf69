//! Even multiplier profiles, the Tauberian class, and Calderón partitions.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::SpectralModel;

pub type Evaluator = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Orders above this are reported as "at least" and not certified.
pub const MAX_CERTIFIED_ORDER: u32 = 8;

const EVEN_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Seminorm {
    pub order: u32,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub label: String,
    pub evenness_residual: f64,
    pub epsilon: Option<f64>,
    pub annulus_min: f64,
    pub vanishing_order: u32,
    pub vanishing_certified: bool,
    pub phi0: f64,
    pub class_a: bool,
    /// Class A and `Φ(0) = 0`.
    pub admissible: bool,
    pub seminorms: Vec<Seminorm>,
}

#[derive(Clone)]
pub struct MultiplierProfile {
    label: String,
    eval: Evaluator,
    report: ValidationReport,
}

impl fmt::Debug for MultiplierProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MultiplierProfile").field("label", &self.label).field("report", &self.report).finish()
    }
}

impl MultiplierProfile {
    /// Validated profile from an arbitrary evaluator.
    pub fn custom(label: impl Into<String>, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Result<Self> {
        Self::from_evaluator(label.into(), Arc::new(f))
    }

    fn from_evaluator(label: String, eval: Evaluator) -> Result<Self> {
        let report = inspect(&label, eval.as_ref());
        if report.evenness_residual >= EVEN_TOL {
            return Err(Error::NotEven { label, residual: report.evenness_residual });
        }
        if let Some(order) = blowup_order(eval.as_ref()) {
            return Err(Error::NotDecaying { label, order });
        }
        Ok(MultiplierProfile { label, eval, report })
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        (self.eval)(x)
    }

    pub fn evaluator(&self) -> Evaluator {
        self.eval.clone()
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn tauberian_epsilon(&self) -> Option<f64> {
        self.report.epsilon
    }

    pub fn vanishing_order(&self) -> u32 {
        self.report.vanishing_order
    }

    pub fn phi0(&self) -> f64 {
        self.report.phi0
    }

    pub fn report(&self) -> &ValidationReport {
        &self.report
    }

    /// Pointwise product `Φ·Ψ`.
    pub fn product(&self, other: &MultiplierProfile) -> Result<MultiplierProfile> {
        let (a, b) = (self.eval.clone(), other.eval.clone());
        Self::from_evaluator(format!("{}*{}", self.label, other.label), Arc::new(move |x| a(x) * b(x)))
    }

    /// `λ ↦ Φ(cλ)`.
    pub fn dilate(&self, c: f64) -> Result<MultiplierProfile> {
        let a = self.eval.clone();
        Self::from_evaluator(format!("{}(x{})", self.label, c), Arc::new(move |x| a(c * x)))
    }

    /// `c·Φ`.
    pub fn scaled(&self, c: f64) -> Result<MultiplierProfile> {
        let a = self.eval.clone();
        Self::from_evaluator(format!("{}*{}", c, self.label), Arc::new(move |x| c * a(x)))
    }
}

pub fn builtin_tags() -> Vec<&'static str> {
    vec!["heat", "lp-heat", "lp-heat-<m>", "omega", "gamma"]
}

/// Built-in profiles: `heat` e^{-λ²}, `lp-heat` λ²e^{-λ²}, `lp-heat-m`
/// λ^{2m}e^{-λ²}, and the bumps `omega` / `gamma` at ε = 1.
pub fn make_profile(tag: &str) -> Result<MultiplierProfile> {
    match tag {
        "heat" => MultiplierProfile::custom(tag, |x| (-x * x).exp()),
        "lp-heat" => MultiplierProfile::custom(tag, |x| x * x * (-x * x).exp()),
        "omega" => MultiplierProfile::custom(tag, |x| omega_bump(1.0, x)),
        "gamma" => MultiplierProfile::custom(tag, |x| gamma_bump(1.0, x)),
        _ => {
            let m: i32 = tag
                .strip_prefix("lp-heat-")
                .and_then(|s| s.parse().ok())
                .filter(|&m| (1..=16).contains(&m))
                .ok_or_else(|| Error::UnknownBuiltin(tag.to_string()))?;
            MultiplierProfile::custom(tag, move |x| (x * x).powi(m) * (-x * x).exp())
        }
    }
}

/// `exp(-1/(1-(λ/2ε)²))` on `|λ| < 2ε`.
pub fn omega_bump(eps: f64, x: f64) -> f64 {
    let u = x / (2.0 * eps);
    if u.abs() >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - u * u)).exp()
    }
}

/// Product of one-sided bumps, positive exactly on `ε/2 < |λ| < 2ε`.
pub fn gamma_bump(eps: f64, x: f64) -> f64 {
    let a = x.abs();
    if a <= 0.5 * eps || a >= 2.0 * eps {
        0.0
    } else {
        (-eps / (a - 0.5 * eps)).exp() * (-eps / (2.0 * eps - a)).exp()
    }
}

fn log_samples(lo: f64, hi: f64, n: usize) -> impl Iterator<Item = f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(move |i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
}

fn inspect(label: &str, f: &(dyn Fn(f64) -> f64 + Send + Sync)) -> ValidationReport {
    let evenness_residual = log_samples(1e-3, 1e3, 241)
        .chain((0..=200).map(|i| 0.05 * i as f64))
        .map(|x| (f(x) - f(-x)).abs())
        .fold(0.0, f64::max);
    let (order, certified) = vanishing_order_of(f);
    let (epsilon, annulus_min) = best_epsilon(f);
    let phi0 = f(0.0);
    let seminorms = [0u32, 2, 4, 6]
        .iter()
        .map(|&k| Seminorm {
            order: k,
            value: log_samples(1e-3, 1e3, 601)
                .chain(std::iter::once(0.0))
                .map(|x| (1.0 + x).powi(k as i32) * f(x).abs())
                .fold(0.0, f64::max),
        })
        .collect();
    let class_a = evenness_residual < EVEN_TOL && epsilon.is_some();
    ValidationReport {
        label: label.to_string(),
        evenness_residual,
        epsilon,
        annulus_min,
        vanishing_order: order,
        vanishing_certified: certified,
        phi0,
        class_a,
        admissible: class_a && phi0 == 0.0,
        seminorms,
    }
}

/// First seminorm order whose sup over `[1e2, 1e3]` more than doubles the sup
/// over `[1e1, 1e2]`.
fn blowup_order(f: &(dyn Fn(f64) -> f64 + Send + Sync)) -> Option<u32> {
    for k in [0u32, 2, 4, 6] {
        let sup = |lo: f64, hi: f64| {
            log_samples(lo, hi, 200).map(|x| (1.0 + x).powi(k as i32) * f(x).abs()).fold(0.0, f64::max)
        };
        let (near, far) = (sup(1e1, 1e2), sup(1e2, 1e3));
        if !far.is_finite() || (far > 2.0 * near && far > 1e-200) {
            return Some(k);
        }
    }
    None
}

/// Largest `ν` with `Φ^{(k)}(0) = 0` for `k < ν`, read off a Chebyshev
/// interpolant on `[-h, h]`.
fn vanishing_order_of(f: &(dyn Fn(f64) -> f64 + Send + Sync)) -> (u32, bool) {
    const M: usize = 33;
    const DEG: usize = 16;
    let h = 0.25;
    let nodes: Vec<f64> =
        (0..M).map(|j| (std::f64::consts::PI * (j as f64 + 0.5) / M as f64).cos()).collect();
    let vals: Vec<f64> = nodes.iter().map(|&u| f(h * u)).collect();
    let scale = vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return (MAX_CERTIFIED_ORDER, false);
    }
    // Chebyshev coefficients.
    let mut cheb = vec![0.0; DEG + 1];
    for (k, c) in cheb.iter_mut().enumerate() {
        let s: f64 = nodes
            .iter()
            .zip(&vals)
            .map(|(&u, &v)| v * (k as f64 * u.acos()).cos())
            .sum();
        *c = 2.0 * s / M as f64;
    }
    cheb[0] *= 0.5;
    // Monomial coefficients in u via the T_k recurrence.
    let mut mono = vec![0.0; DEG + 1];
    let mut t_prev = vec![0.0; DEG + 1];
    let mut t_cur = vec![0.0; DEG + 1];
    t_prev[0] = 1.0;
    t_cur[1] = 1.0;
    for (k, &c) in cheb.iter().enumerate() {
        let tk = if k == 0 { &t_prev } else { &t_cur };
        for i in 0..=DEG {
            mono[i] += c * tk[i];
        }
        if k >= 1 {
            let mut next = vec![0.0; DEG + 1];
            for i in 0..DEG {
                next[i + 1] += 2.0 * t_cur[i];
            }
            for i in 0..=DEG {
                next[i] -= t_prev[i];
            }
            t_prev = std::mem::replace(&mut t_cur, next);
        }
    }
    for (k, m) in mono.iter().enumerate().take(MAX_CERTIFIED_ORDER as usize) {
        if m.abs() > 1e-8 * scale {
            return (k as u32, true);
        }
    }
    (MAX_CERTIFIED_ORDER, false)
}

/// Dyadic `ε = 2^k`, `|k| ≤ 10`, maximizing `min |Φ|` on `(ε/2, 2ε)`.
fn best_epsilon(f: &(dyn Fn(f64) -> f64 + Send + Sync)) -> (Option<f64>, f64) {
    let peak = log_samples(1e-4, 1e4, 801).map(|x| f(x).abs()).fold(0.0, f64::max);
    let mut best: (Option<f64>, f64) = (None, 0.0);
    for k in -10..=10 {
        let eps = 2f64.powi(k);
        let m = (0..256)
            .map(|j| 0.5 * eps * 4f64.powf((j as f64 + 0.5) / 256.0))
            .map(|x| f(x).abs())
            .fold(f64::INFINITY, f64::min);
        if m > best.1 && m > 1e-14 * peak {
            best = (Some(eps), m);
        }
    }
    best
}

pub fn validate_class_a(profile: &MultiplierProfile) -> ValidationReport {
    profile.report.clone()
}

/// Reports on an arbitrary evaluator without constructing a profile.
pub fn validate_evaluator(label: &str, f: impl Fn(f64) -> f64 + Send + Sync) -> ValidationReport {
    let mut r = inspect(label, &f);
    if blowup_order(&f).is_some() {
        r.class_a = false;
        r.admissible = false;
    }
    r
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PartitionKind {
    Inhomogeneous,
    Homogeneous,
}

/// Profiles `(Ψ, Υ, Θ)` with `ΨΥ + Σ_{k≥1} Φ(2^{-k}·)Θ(2^{-k}·) = 1`, or for
/// the homogeneous kind `Σ_{k∈ℤ} Φ(2^{-k}·)Θ(2^{-k}·) = 1` off the origin.
///
/// `Θ = Γ/Ξ` where `Ξ(λ) = Σ_{k∈ℤ} Φ(2^{-k}λ)Γ(2^{-k}λ)` is invariant under
/// `λ → 2λ`; on the annulus at most three terms are nonzero, so `Θ` and `Υ`
/// are evaluated exactly rather than tabulated.
#[derive(Clone, Debug)]
pub struct CalderonPartition {
    pub kind: PartitionKind,
    pub epsilon: f64,
    pub phi: MultiplierProfile,
    pub psi: Option<MultiplierProfile>,
    pub upsilon: Option<MultiplierProfile>,
    pub theta: MultiplierProfile,
}

/// `k` with `Γ(2^{-k}λ) ≠ 0` possible, i.e. `ε/2 < 2^{-k}|λ| < 2ε`.
fn annulus_ks(eps: f64, x: f64) -> std::ops::RangeInclusive<i32> {
    let a = x.abs();
    if a == 0.0 {
        #[allow(clippy::reversed_empty_ranges)]
        return 1..=0;
    }
    let lo = (a / (2.0 * eps)).log2().floor() as i32;
    let hi = (2.0 * a / eps).log2().ceil() as i32;
    lo..=hi
}

fn xi(phi: &Evaluator, eps: f64, x: f64) -> f64 {
    annulus_ks(eps, x)
        .map(|k| {
            let y = x * 2f64.powi(-k);
            let g = gamma_bump(eps, y);
            if g == 0.0 {
                0.0
            } else {
                phi(y) * g
            }
        })
        .sum()
}

pub fn build_calderon(profile: &MultiplierProfile, kind: PartitionKind) -> Result<CalderonPartition> {
    let eps = profile
        .tauberian_epsilon()
        .ok_or_else(|| Error::NoTauberianAnnulus(profile.label().to_string()))?;
    if kind == PartitionKind::Homogeneous && profile.vanishing_order() < 1 {
        return Err(Error::InsufficientVanishing {
            label: profile.label().to_string(),
            order: profile.vanishing_order(),
            required: 1,
        });
    }
    let phi = profile.evaluator();
    // One dyadic period of Ξ determines all of it.
    let mut xi_max: f64 = 0.0;
    let mut xi_min = (f64::INFINITY, eps);
    for j in 0..2048 {
        let x = eps * 2f64.powf(j as f64 / 2048.0);
        let v = xi(&phi, eps, x).abs();
        xi_max = xi_max.max(v);
        if v < xi_min.0 {
            xi_min = (v, x);
        }
    }
    if !(xi_min.0 > 1e-14 * xi_max) {
        return Err(Error::TauberianGapUncovered(xi_min.1));
    }

    let phi_t = phi.clone();
    let theta_eval = move |x: f64| {
        let g = gamma_bump(eps, x);
        if g == 0.0 {
            0.0
        } else {
            g / xi(&phi_t, eps, x)
        }
    };
    let theta = MultiplierProfile::custom(format!("theta[{}]", profile.label()), theta_eval.clone())?;

    let (psi, upsilon) = match kind {
        PartitionKind::Homogeneous => (None, None),
        PartitionKind::Inhomogeneous => {
            let psi = make_profile("heat")?;
            if (-4.0 * eps * eps).exp() < 1e-250 {
                return Err(Error::TauberianGapUncovered(2.0 * eps));
            }
            let phi_u = phi.clone();
            let upsilon = MultiplierProfile::custom(format!("upsilon[{}]", profile.label()), move |x: f64| {
                if x.abs() >= 2.0 * eps {
                    return 0.0;
                }
                let tail: f64 = annulus_ks(eps, x)
                    .filter(|&k| k >= 1)
                    .map(|k| {
                        let y = x * 2f64.powi(-k);
                        phi_u(y) * theta_eval(y)
                    })
                    .sum();
                (1.0 - tail) / (-x * x).exp()
            })?;
            (Some(psi), Some(upsilon))
        }
    };
    Ok(CalderonPartition { kind, epsilon: eps, phi: profile.clone(), psi, upsilon, theta })
}

impl CalderonPartition {
    fn term(&self, k: i32, x: f64) -> f64 {
        let y = x * 2f64.powi(-k);
        let th = self.theta.eval(y);
        if th == 0.0 {
            0.0
        } else {
            self.phi.eval(y) * th
        }
    }

    /// Left side of the partition identity. `k_max` truncates the dyadic sum
    /// from above; `None` keeps every contributing term.
    pub fn identity_sum(&self, x: f64, k_max: Option<i32>) -> f64 {
        let ks = annulus_ks(self.epsilon, x);
        let cap = k_max.unwrap_or(i32::MAX);
        match self.kind {
            PartitionKind::Homogeneous => ks.filter(|&k| k <= cap).map(|k| self.term(k, x)).sum(),
            PartitionKind::Inhomogeneous => {
                let head = self.psi.as_ref().unwrap().eval(x) * self.upsilon.as_ref().unwrap().eval(x);
                head + ks.filter(|&k| k >= 1 && k <= cap).map(|k| self.term(k, x)).sum::<f64>()
            }
        }
    }

    pub fn partition_residual(&self, samples: &[f64]) -> f64 {
        self.residual_truncated(samples, None)
    }

    pub fn residual_truncated(&self, samples: &[f64], k_max: Option<i32>) -> f64 {
        samples.iter().map(|&x| (self.identity_sum(x, k_max) - 1.0).abs()).fold(0.0, f64::max)
    }

    /// Operator form of the identity at base scale `t`, as a sum of separate
    /// multiplier applications.
    pub fn reconstruct(&self, model: &SpectralModel, t: f64, f: &[f64]) -> Result<Vec<f64>> {
        if t <= 0.0 {
            return Err(Error::ScaleNonpositive(t));
        }
        let roots: Vec<f64> = model.sqrt_eigenvalues().iter().cloned().filter(|&r| r > 0.0).collect();
        let (lo, hi) = roots.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &r| (a.min(r), b.max(r)));
        let mut out = vec![0.0; f.len()];
        if roots.is_empty() {
            return Ok(out);
        }
        let k_first = *annulus_ks(self.epsilon, t * lo).start();
        let k_last = *annulus_ks(self.epsilon, t * hi).end();
        let prod = self.phi.product(&self.theta)?;
        let k_start = match self.kind {
            PartitionKind::Homogeneous => k_first,
            PartitionKind::Inhomogeneous => {
                let head = self.psi.as_ref().unwrap().product(self.upsilon.as_ref().unwrap())?;
                let v = model.apply_multiplier(&head, t, f)?;
                out.iter_mut().zip(&v).for_each(|(o, a)| *o += a);
                k_first.max(1)
            }
        };
        for k in k_start..=k_last {
            let v = model.apply_multiplier(&prod, t * 2f64.powi(-k), f)?;
            out.iter_mut().zip(&v).for_each(|(o, a)| *o += a);
        }
        Ok(out)
    }
}
