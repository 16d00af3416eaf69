//! Equivalence experiments: corpora of band-limited test functions, ratio
//! statistics between square-function norms, the lemma inequality suite, the
//! sub-mean estimate and Hardy norms.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::Field2;
use crate::geometry::{Grid, GridKind};
use crate::multipliers::MultiplierProfile;
use crate::par::Exec;
use crate::spectral::SpectralModel;
use crate::squarefns::{FunctionalRequest, Functionals, ScaleLadder, SquareEngine};
use crate::stats::rel_change;
use crate::weights::{critical_index, weighted_lp_norm, ProductWeight, DEFAULT_P_GRID};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorpusFamily {
    SingleModes,
    RandomBandLimited,
    LocalizedBumps,
    Mixtures,
}

impl CorpusFamily {
    pub const ALL: [CorpusFamily; 4] =
        [CorpusFamily::SingleModes, CorpusFamily::RandomBandLimited, CorpusFamily::LocalizedBumps, CorpusFamily::Mixtures];

    pub fn tag(self) -> &'static str {
        match self {
            CorpusFamily::SingleModes => "single-modes",
            CorpusFamily::RandomBandLimited => "random-band-limited",
            CorpusFamily::LocalizedBumps => "localized-bumps",
            CorpusFamily::Mixtures => "mixtures",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSpec {
    pub families: Vec<CorpusFamily>,
    pub count: usize,
    /// Inclusive frequency-index band `[lo, hi]` on both axes.
    #[serde(default = "default_band")]
    pub band: (usize, usize),
}

fn default_band() -> (usize, usize) {
    (2, 4)
}

/// One test function as spectral coefficients `(mode₁, mode₂, c)`; the same
/// description samples consistently on refined grids.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub label: String,
    pub family: CorpusFamily,
    pub terms: Vec<(usize, usize, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub seed: u64,
    pub band: (usize, usize),
    pub entries: Vec<CorpusEntry>,
}

/// Basis columns carrying frequency index `k`: the cosine/sine pair on the
/// torus, the `k`-th eigenfunction otherwise.
fn modes_of(model: &SpectralModel, k: usize) -> Vec<usize> {
    match model.grid().kind() {
        GridKind::LinePeriodic => vec![2 * k - 1, 2 * k],
        GridKind::Halfline => vec![k - 1],
    }
}

fn check_band(model: &SpectralModel, band: (usize, usize)) -> Result<()> {
    let n = model.len();
    if band.0 == 0 || band.0 > band.1 || 2 * band.1 >= n {
        return Err(Error::BandLimitExceeded { band: band.1, size: n });
    }
    Ok(())
}

pub fn generate_corpus(m1: &SpectralModel, m2: &SpectralModel, spec: &CorpusSpec, seed: u64) -> Result<Corpus> {
    check_band(m1, spec.band)?;
    check_band(m2, spec.band)?;
    if spec.count == 0 || spec.families.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let ks: Vec<usize> = (spec.band.0..=spec.band.1).collect();
    let modes1: Vec<usize> = ks.iter().flat_map(|&k| modes_of(m1, k)).collect();
    let modes2: Vec<usize> = ks.iter().flat_map(|&k| modes_of(m2, k)).collect();
    let periodic = [m1.grid().kind() == GridKind::LinePeriodic, m2.grid().kind() == GridKind::LinePeriodic];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Per-axis profile of a unit mass at `c`, projected onto the band.
    let packet = |model: &SpectralModel, periodic: bool, c: f64| -> Vec<(usize, f64)> {
        ks.iter()
            .flat_map(|&k| {
                let cols = modes_of(model, k);
                if periodic {
                    let xi = 2.0 * std::f64::consts::PI * k as f64 / model.grid().period().unwrap();
                    vec![(cols[0], (xi * c).cos()), (cols[1], (xi * c).sin())]
                } else {
                    let x = model.grid().points();
                    let i = x.partition_point(|&p| p < c).min(x.len() - 1);
                    let e = model.basis();
                    // Sign-normalized by the column's value at its largest entry.
                    vec![(cols[0], e[(i, cols[0])] / e.column(cols[0]).amax())]
                }
            })
            .collect()
    };
    let mut entries = Vec::with_capacity(spec.count);
    for idx in 0..spec.count {
        let family = spec.families[idx % spec.families.len()];
        let mut terms: Vec<(usize, usize, f64)> = match family {
            CorpusFamily::SingleModes => {
                vec![(modes1[rng.gen_range(0..modes1.len())], modes2[rng.gen_range(0..modes2.len())], 1.0)]
            }
            CorpusFamily::RandomBandLimited => modes1
                .iter()
                .flat_map(|&a| modes2.iter().map(move |&b| (a, b)))
                .map(|(a, b)| (a, b, rng.gen_range(-1.0..1.0)))
                .collect(),
            CorpusFamily::LocalizedBumps => {
                let span = |m: &SpectralModel| match m.grid().domain() {
                    crate::geometry::DomainParams::Periodic { period } => (-0.5 * period, 0.5 * period),
                    crate::geometry::DomainParams::Halfline { right, .. } => (0.1 * right, 0.9 * right),
                };
                let (lo1, hi1) = span(m1);
                let (lo2, hi2) = span(m2);
                let c1 = rng.gen_range(lo1..hi1);
                let c2 = rng.gen_range(lo2..hi2);
                let p1 = packet(m1, periodic[0], c1);
                let p2 = packet(m2, periodic[1], c2);
                p1.iter().flat_map(|&(a, u)| p2.iter().map(move |&(b, v)| (a, b, u * v))).collect()
            }
            CorpusFamily::Mixtures => {
                let count = rng.gen_range(3..=5);
                let mut out = Vec::new();
                for _ in 0..count {
                    let amp = rng.gen_range(0.2..1.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                    let axis = |m: &SpectralModel, periodic: bool, rng: &mut ChaCha8Rng| -> Vec<(usize, f64)> {
                        let k = ks[rng.gen_range(0..ks.len())];
                        let cols = modes_of(m, k);
                        if periodic {
                            let ph = rng.gen_range(0.0..2.0 * std::f64::consts::PI);
                            vec![(cols[0], ph.cos()), (cols[1], -ph.sin())]
                        } else {
                            vec![(cols[0], 1.0)]
                        }
                    };
                    let u = axis(m1, periodic[0], &mut rng);
                    let v = axis(m2, periodic[1], &mut rng);
                    for &(a, x) in &u {
                        for &(b, y) in &v {
                            out.push((a, b, amp * x * y));
                        }
                    }
                }
                out
            }
        };
        // Merge duplicates and normalize to unit L² norm.
        let mut merged: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for (a, b, c) in terms.drain(..) {
            *merged.entry((a, b)).or_insert(0.0) += c;
        }
        let norm = merged.values().map(|c| c * c).sum::<f64>().sqrt();
        let terms: Vec<(usize, usize, f64)> = if norm > 0.0 {
            merged.into_iter().filter(|(_, c)| *c != 0.0).map(|((a, b), c)| (a, b, c / norm)).collect()
        } else {
            vec![(modes1[0], modes2[0], 1.0)]
        };
        entries.push(CorpusEntry { label: format!("{}-{idx}", family.tag()), family, terms });
    }
    Ok(Corpus { seed, band: spec.band, entries })
}

impl CorpusEntry {
    pub fn sample(&self, m1: &SpectralModel, m2: &SpectralModel) -> Result<Field2> {
        let (n1, n2) = (m1.len(), m2.len());
        let (e1, e2) = (m1.basis(), m2.basis());
        let mut f = Field2::zeros(n1, n2);
        for &(a, b, c) in &self.terms {
            if a >= n1 || b >= n2 {
                return Err(Error::BandLimitExceeded { band: a.max(b), size: n1.min(n2) });
            }
            for i in 0..n1 {
                let u = c * e1[(i, a)];
                let row = &mut f.as_mut_slice()[i * n2..(i + 1) * n2];
                for (j, r) in row.iter_mut().enumerate() {
                    *r += u * e2[(j, b)];
                }
            }
        }
        Ok(f)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Functional {
    #[serde(rename = "g")]
    G,
    #[serde(rename = "S")]
    Area,
    #[serde(rename = "g*")]
    GStar,
    #[serde(rename = "peetre-vertical")]
    Peetre,
}

impl Functional {
    pub const ALL: [Functional; 4] = [Functional::G, Functional::Area, Functional::GStar, Functional::Peetre];

    pub fn tag(self) -> &'static str {
        match self {
            Functional::G => "g",
            Functional::Area => "S",
            Functional::GStar => "g*",
            Functional::Peetre => "peetre-vertical",
        }
    }

    pub fn pick(self, f: &Functionals) -> Option<&Field2> {
        match self {
            Functional::G => Some(&f.g),
            Functional::Area => f.area.as_ref(),
            Functional::GStar => f.gstar.as_ref(),
            Functional::Peetre => f.peetre.as_ref(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EntryFunctionals {
    pub label: String,
    pub values: Functionals,
}

pub fn evaluate_corpus(
    engine: &SquareEngine<'_>,
    corpus: &Corpus,
    m1: &SpectralModel,
    m2: &SpectralModel,
    exec: Exec,
) -> Result<Vec<EntryFunctionals>> {
    exec.map(corpus.entries.len(), |i| {
        let e = &corpus.entries[i];
        let f = e.sample(m1, m2)?;
        Ok(EntryFunctionals { label: e.label.clone(), values: engine.evaluate(&f, Exec::Sequential)? })
    })
    .into_iter()
    .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioReport {
    pub numerator: Functional,
    pub denominator: Functional,
    pub p: f64,
    /// `None` where either norm vanishes.
    pub ratios: Vec<Option<f64>>,
    pub c_low: f64,
    pub c_high: f64,
    pub excluded: Vec<String>,
}

impl RatioReport {
    pub fn spread(&self) -> f64 {
        self.c_high / self.c_low
    }
}

const ZERO_NORM: f64 = 1e-300;

pub fn lp_norm_of(entry: &EntryFunctionals, which: Functional, weight: &ProductWeight, p: f64) -> Result<Option<f64>> {
    match which.pick(&entry.values) {
        Some(f) => Ok(Some(weighted_lp_norm(f, weight, p)?)),
        None => Ok(None),
    }
}

pub fn ratio_experiment(
    evals: &[EntryFunctionals],
    a: Functional,
    b: Functional,
    weight: &ProductWeight,
    p: f64,
) -> Result<RatioReport> {
    if evals.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut ratios = Vec::with_capacity(evals.len());
    let mut excluded = Vec::new();
    for e in evals {
        let (na, nb) = match (lp_norm_of(e, a, weight, p)?, lp_norm_of(e, b, weight, p)?) {
            (Some(x), Some(y)) => (x, y),
            _ => return Err(Error::HypothesisViolated(format!("functional {} or {} not computed", a.tag(), b.tag()))),
        };
        if na <= ZERO_NORM || nb <= ZERO_NORM {
            excluded.push(e.label.clone());
            ratios.push(None);
        } else {
            ratios.push(Some(na / nb));
        }
    }
    let vals: Vec<f64> = ratios.iter().flatten().copied().collect();
    let c_low = vals.iter().copied().fold(f64::INFINITY, f64::min);
    let c_high = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(RatioReport { numerator: a, denominator: b, p, ratios, c_low, c_high, excluded })
}

/// Two-sided version: `ratio_experiment` against an independent evaluation
/// list (same entries, different engine).
pub fn cross_ratio(
    num: &[EntryFunctionals],
    a: Functional,
    den: &[EntryFunctionals],
    b: Functional,
    weight: &ProductWeight,
    p: f64,
) -> Result<RatioReport> {
    if num.is_empty() || num.len() != den.len() {
        return Err(Error::EmptyCorpus);
    }
    let mut ratios = Vec::new();
    let mut excluded = Vec::new();
    for (x, y) in num.iter().zip(den) {
        let na = lp_norm_of(x, a, weight, p)?.ok_or_else(|| Error::HypothesisViolated(format!("{} missing", a.tag())))?;
        let nb = lp_norm_of(y, b, weight, p)?.ok_or_else(|| Error::HypothesisViolated(format!("{} missing", b.tag())))?;
        if na <= ZERO_NORM || nb <= ZERO_NORM {
            excluded.push(x.label.clone());
            ratios.push(None);
        } else {
            ratios.push(Some(na / nb));
        }
    }
    let vals: Vec<f64> = ratios.iter().flatten().copied().collect();
    Ok(RatioReport {
        numerator: a,
        denominator: b,
        p,
        c_low: vals.iter().copied().fold(f64::INFINITY, f64::min),
        c_high: vals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        ratios,
        excluded,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HypothesisRecord {
    pub p: f64,
    pub weight: String,
    pub q_w: f64,
    pub profiles: (String, String),
    /// Nominal `n_i` and `D_i` of each axis.
    pub n: [f64; 2],
    pub d: [f64; 2],
    /// Estimated `n̂_i`, `D̂_i`.
    pub n_hat: [f64; 2],
    pub d_hat: [f64; 2],
    pub lambda: (f64, f64),
    /// `2 q_w / min(p, 2)`.
    pub lambda_bound: f64,
    pub lambda_ok: bool,
    pub lambda_prime: (f64, f64),
    /// `(n_i + D_i) q_w / min(p, 2)`.
    pub lambda_prime_bound: [f64; 2],
    pub lambda_prime_ok: bool,
}

pub fn hypothesis_record(
    m: [&SpectralModel; 2],
    profiles: [&MultiplierProfile; 2],
    weight: &ProductWeight,
    weight_label: &str,
    p: f64,
    lambda: (f64, f64),
    lambda_prime: (f64, f64),
) -> Result<HypothesisRecord> {
    let q_w = critical_index(weight, &DEFAULT_P_GRID)?.q_w;
    let mp = p.min(2.0);
    let n = [m[0].grid().nominal_dimension(), m[1].grid().nominal_dimension()];
    let d = [m[0].grid().nominal_translation_exponent(), m[1].grid().nominal_translation_exponent()];
    let dc = [m[0].grid().estimate_doubling(), m[1].grid().estimate_doubling()];
    let lambda_bound = 2.0 * q_w / mp;
    let lambda_prime_bound = [(n[0] + d[0]) * q_w / mp, (n[1] + d[1]) * q_w / mp];
    Ok(HypothesisRecord {
        p,
        weight: weight_label.to_string(),
        q_w,
        profiles: (profiles[0].label().to_string(), profiles[1].label().to_string()),
        n,
        d,
        n_hat: [dc[0].n_hat, dc[1].n_hat],
        d_hat: [dc[0].d_hat, dc[1].d_hat],
        lambda,
        lambda_bound,
        lambda_ok: lambda.0 > lambda_bound && lambda.1 > lambda_bound,
        lambda_prime,
        lambda_prime_bound,
        lambda_prime_ok: lambda_prime.0 > lambda_prime_bound[0] && lambda_prime.1 > lambda_prime_bound[1],
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntryNorms {
    pub label: String,
    pub norms: BTreeMap<Functional, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairStat {
    pub a: Functional,
    pub b: Functional,
    pub c_low: f64,
    pub c_high: f64,
    pub spread: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub hypotheses: HypothesisRecord,
    pub entries: Vec<EntryNorms>,
    pub pairs: Vec<PairStat>,
    pub excluded: Vec<String>,
    /// `‖S(f)‖_{L^p_w}` per entry.
    pub hardy: Vec<f64>,
}

/// All four norms of the equivalence theorem per entry, with pairwise ratio
/// ranges over the corpus.
pub fn theorem_suite(evals: &[EntryFunctionals], weight: &ProductWeight, hyp: HypothesisRecord) -> Result<EquivalenceReport> {
    if evals.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let p = hyp.p;
    let mut entries = Vec::new();
    let mut excluded = Vec::new();
    for e in evals {
        let mut norms = BTreeMap::new();
        for f in Functional::ALL {
            let v = lp_norm_of(e, f, weight, p)?
                .ok_or_else(|| Error::HypothesisViolated(format!("{} not computed", f.tag())))?;
            norms.insert(f, v);
        }
        if norms.values().any(|&v| v <= ZERO_NORM) {
            excluded.push(e.label.clone());
        }
        entries.push(EntryNorms { label: e.label.clone(), norms });
    }
    let mut pairs = Vec::new();
    for (i, &a) in Functional::ALL.iter().enumerate() {
        for &b in &Functional::ALL[i + 1..] {
            let r: Vec<f64> = entries
                .iter()
                .filter(|e| !excluded.contains(&e.label))
                .map(|e| e.norms[&a] / e.norms[&b])
                .collect();
            let c_low = r.iter().copied().fold(f64::INFINITY, f64::min);
            let c_high = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            pairs.push(PairStat { a, b, c_low, c_high, spread: c_high / c_low });
        }
    }
    let hardy = entries.iter().map(|e| e.norms[&Functional::Area]).collect();
    Ok(EquivalenceReport { hypotheses: hyp, entries, pairs, excluded, hardy })
}

/// Relative change of each pair spread between two resolutions.
pub fn spread_drift(coarse: &EquivalenceReport, fine: &EquivalenceReport) -> Vec<f64> {
    coarse.pairs.iter().zip(&fine.pairs).map(|(c, f)| rel_change(f.spread, c.spread)).collect()
}

/// Exponents for the lemma inequality suite.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InequalityParams {
    /// `λ` of `g*` and of the pointwise area/Peetre bound.
    pub lambda: (f64, f64),
    /// `λ'` of the vertical Peetre norm compared against `g`.
    pub lambda_prime: (f64, f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LemmaCheck {
    pub name: String,
    pub statement: String,
    pub p: f64,
    pub weight: String,
    pub max_ratio: f64,
    pub min_ratio: f64,
    /// Relative change of `max_ratio` between the two resolutions.
    pub drift: f64,
    /// Per-entry ratios at the finer resolution (`None` when excluded).
    pub ratios: Vec<Option<f64>>,
    /// Pointwise violations, for checks with an explicit constant.
    pub violations: Option<usize>,
    pub excluded: Vec<String>,
}

/// Models and weights of the inequality suite at one resolution.
pub struct SuiteLevel<'a> {
    pub models: [&'a SpectralModel; 2],
    pub weights: &'a [(String, ProductWeight)],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InequalityReport {
    pub params: InequalityParams,
    pub checks: Vec<LemmaCheck>,
}

impl InequalityReport {
    pub fn hard_failures(&self) -> usize {
        // Every (weight, p) row repeats the same pointwise count.
        self.checks.iter().filter_map(|c| c.violations).max().unwrap_or(0)
    }
}

pub const LEMMA_CHECKS: [&str; 5] =
    ["gstar-le-area", "area-le-peetre", "peetre-generator-change", "peetre-le-g", "peetre-le-gstar"];

struct LevelEvals {
    base: Vec<EntryFunctionals>,
    prime: Vec<EntryFunctionals>,
    prime_alt: Vec<EntryFunctionals>,
    shifted: Vec<EntryFunctionals>,
    chain: usize,
}

/// The five lemma inequalities at two resolutions for every weight and `p`.
/// `alt` is the second generator for the change-of-generator comparison.
#[allow(clippy::too_many_arguments)]
pub fn inequality_suite(
    corpus: &Corpus,
    levels: [SuiteLevel<'_>; 2],
    profiles: [&MultiplierProfile; 2],
    alt: [&MultiplierProfile; 2],
    ladder: &ScaleLadder,
    params: InequalityParams,
    ps: &[f64],
    exec: Exec,
) -> Result<InequalityReport> {
    let (l1, l2) = params.lambda;
    let (lp1, lp2) = params.lambda_prime;
    let mut evals = Vec::new();
    for level in &levels {
        let [m1, m2] = level.models;
        let n = [m1.grid().nominal_dimension(), m2.grid().nominal_dimension()];
        let d = [m1.grid().nominal_translation_exponent(), m2.grid().nominal_translation_exponent()];
        let run = |prof: [&MultiplierProfile; 2], req: FunctionalRequest| -> Result<Vec<EntryFunctionals>> {
            let eng = SquareEngine::new([m1, m2], prof, ladder, req)?;
            evaluate_corpus(&eng, corpus, m1, m2, exec)
        };
        // g, S, g*_λ and Peetre_λ with the explicit pointwise chain.
        let base = run(
            profiles,
            FunctionalRequest { area: true, gstar: Some((l1, l2)), peetre: Some((l1, l2)), checked: true },
        )?;
        let chain = base.iter().map(|e| e.values.chain.as_ref().map_or(0, |c| c.area_above_peetre)).sum();
        let prime_req = FunctionalRequest { area: false, gstar: None, peetre: Some((lp1, lp2)), checked: false };
        let prime = run(profiles, prime_req)?;
        let prime_alt = run(alt, prime_req)?;
        let shifted = run(
            profiles,
            FunctionalRequest {
                area: false,
                gstar: Some((2.0 * l1 / n[0], 2.0 * l2 / n[1])),
                peetre: Some((l1 + d[0] / 2.0, l2 + d[1] / 2.0)),
                checked: false,
            },
        )?;
        evals.push(LevelEvals { base, prime, prime_alt, shifted, chain });
    }
    let statements = [
        format!("|g*_({l1},{l2})| <= C |S|"),
        format!("S <= 2^(lambda1+lambda2) peetre_({l1},{l2}) pointwise"),
        format!("|peetre_({lp1},{lp2})[phi]| ~ |peetre_({lp1},{lp2})[alt]|"),
        format!("|peetre_({lp1},{lp2})| <= C |g|"),
        "|peetre_(lambda+D/2)| <= C |g*_(2 lambda/n)|".to_string(),
    ];
    let ratios_at = |ev: &LevelEvals, w: &ProductWeight, p: f64| -> Result<[Vec<RatioReport>; 5]> {
        Ok([
            vec![ratio_experiment(&ev.base, Functional::GStar, Functional::Area, w, p)?],
            vec![ratio_experiment(&ev.base, Functional::Area, Functional::Peetre, w, p)?],
            vec![
                cross_ratio(&ev.prime, Functional::Peetre, &ev.prime_alt, Functional::Peetre, w, p)?,
                cross_ratio(&ev.prime_alt, Functional::Peetre, &ev.prime, Functional::Peetre, w, p)?,
            ],
            vec![cross_ratio(&ev.prime, Functional::Peetre, &ev.base, Functional::G, w, p)?],
            vec![ratio_experiment(&ev.shifted, Functional::Peetre, Functional::GStar, w, p)?],
        ])
    };
    let hi = |rs: &[RatioReport]| rs.iter().map(|r| r.c_high).fold(f64::NEG_INFINITY, f64::max);
    let lo = |rs: &[RatioReport]| rs.iter().map(|r| r.c_low).fold(f64::INFINITY, f64::min);
    let mut checks = Vec::new();
    for (wi, (label, _)) in levels[1].weights.iter().enumerate() {
        for &p in ps {
            let coarse = ratios_at(&evals[0], &levels[0].weights[wi].1, p)?;
            let fine = ratios_at(&evals[1], &levels[1].weights[wi].1, p)?;
            for (i, (c, f)) in coarse.iter().zip(&fine).enumerate() {
                let mut excluded: Vec<String> = f.iter().chain(c).flat_map(|r| r.excluded.clone()).collect();
                excluded.sort();
                excluded.dedup();
                checks.push(LemmaCheck {
                    name: LEMMA_CHECKS[i].to_string(),
                    statement: statements[i].clone(),
                    p,
                    weight: label.clone(),
                    max_ratio: hi(f),
                    min_ratio: lo(f),
                    drift: rel_change(hi(f), hi(c)),
                    ratios: f[0].ratios.clone(),
                    violations: (i == 1).then_some(evals[0].chain + evals[1].chain),
                    excluded,
                });
            }
        }
    }
    Ok(InequalityReport { params, checks })
}

/// Parameters of the sub-mean estimate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SubmeanParams {
    pub r: f64,
    pub sigma: f64,
    pub lambda: (f64, f64),
    pub j_pairs: Vec<(i32, i32)>,
    pub t_samples: Vec<f64>,
    pub x_per_axis: usize,
    /// Number of `k` steps summed beyond `j` on each axis.
    pub k_depth: usize,
}

impl Default for SubmeanParams {
    fn default() -> Self {
        SubmeanParams {
            r: 2.0,
            sigma: 1.0,
            lambda: (3.0, 3.0),
            j_pairs: vec![(-2, -2), (-1, 0), (0, 1)],
            t_samples: vec![1.25, 1.75],
            x_per_axis: 8,
            k_depth: 12,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubmeanSample {
    pub x: (usize, usize),
    pub t: (f64, f64),
    pub j: (i32, i32),
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubmeanReport {
    /// Smallest `C` with `LHS <= C RHS` on every sample.
    pub constant: f64,
    pub worst: Option<SubmeanSample>,
    pub samples: usize,
    /// Largest share of a truncated `k`-sum carried by its last shell.
    pub tail_fraction: f64,
    pub tail_ok: bool,
}

/// Sample lattice indices along an axis of length `n`.
pub fn lattice(n: usize, count: usize) -> Vec<usize> {
    let count = count.min(n).max(1);
    (0..count).map(|i| (i * n + n / 2) / count).collect()
}

/// Peetre value at one scale pair and point, brute force over the grid.
fn peetre_at(v: &Field2, g: [&Grid; 2], x: (usize, usize), t: (f64, f64), lambda: (f64, f64)) -> f64 {
    let (p1, p2) = (g[0].points(), g[1].points());
    let w1: Vec<f64> = p1.iter().map(|&y| (1.0 + g[0].dist(p1[x.0], y) / t.0).powf(-lambda.0)).collect();
    let w2: Vec<f64> = p2.iter().map(|&y| (1.0 + g[1].dist(p2[x.1], y) / t.1).powf(-lambda.1)).collect();
    let mut best = 0.0f64;
    for (i, a) in w1.iter().enumerate() {
        for (b, val) in w2.iter().zip(v.row(i)) {
            best = best.max(val.abs() * a * b);
        }
    }
    best
}

fn tensor_apply(
    m: [&SpectralModel; 2],
    prof: [&MultiplierProfile; 2],
    t: (f64, f64),
    f: &Field2,
) -> Result<Field2> {
    let (n1, n2) = f.dims();
    let mut rows = Field2::zeros(n1, n2);
    for i in 0..n1 {
        let r = m[1].apply_multiplier(prof[1], t.1, f.row(i))?;
        rows.as_mut_slice()[i * n2..(i + 1) * n2].copy_from_slice(&r);
    }
    let tr = rows.transpose();
    let mut out = Field2::zeros(n2, n1);
    for j in 0..n2 {
        let c = m[0].apply_multiplier(prof[0], t.0, tr.row(j))?;
        out.as_mut_slice()[j * n1..(j + 1) * n1].copy_from_slice(&c);
    }
    Ok(out.transpose())
}

/// `∫_{cell j} dμ(z) / (V(z,s)(1+ρ(x,z)/s)^e)` per cell. Cells closer to `x`
/// than a few multiples of `s` are subdivided, so scales far below the grid
/// spacing keep the correct kernel mass.
fn cell_kernel(grid: &Grid, x: f64, s: f64, e: f64) -> Vec<f64> {
    let edges = grid.edges();
    let centres = grid.points();
    (0..grid.len())
        .map(|j| {
            let (a, b) = (edges[j], edges[j + 1]);
            let h = b - a;
            let gap = (grid.dist(x, centres[j]) - 0.5 * h).max(0.0);
            let sub = ((8.0 * h / (s + gap)).ceil() as usize).clamp(1, 1 << 16);
            let hs = h / sub as f64;
            (0..sub)
                .map(|k| {
                    let z = a + (k as f64 + 0.5) * hs;
                    grid.volume(z, 0.5 * hs) / (grid.volume(z, s) * (1.0 + grid.dist(x, z) / s).powf(e))
                })
                .sum()
        })
        .collect()
}

/// Empirical constant of the sub-mean estimate
/// `(Peetre_λ[Φ(2^{-j}t√L)]f(x))^r ≲ Σ_{k≥j} 2^{(j-k)σ} ∬ |Φ(2^{-k}t√L)f(z)|^r / Π V(z_i, 2^{-k_i}t_i)(1+2^{k_i}ρ_i/t_i)^{λ_i r} dμ(z)`.
pub fn submean_check(
    m: [&SpectralModel; 2],
    prof: [&MultiplierProfile; 2],
    f: &Field2,
    params: &SubmeanParams,
    exec: Exec,
) -> Result<SubmeanReport> {
    if !(params.r > 0.0) || !(params.sigma > 0.0) {
        return Err(Error::HypothesisViolated(format!("r = {} and sigma = {} must be positive", params.r, params.sigma)));
    }
    let g = [m[0].grid(), m[1].grid()];
    for (axis, l) in [params.lambda.0, params.lambda.1].into_iter().enumerate() {
        let d_hat = g[axis].estimate_doubling().d_hat;
        if l <= d_hat / 2.0 {
            return Err(Error::HypothesisViolated(format!("lambda_{} = {l} <= D_hat/2 = {}", axis + 1, d_hat / 2.0)));
        }
    }
    if params.t_samples.iter().any(|t| !(1.0..=2.0).contains(t)) {
        return Err(Error::HypothesisViolated("t samples must lie in [1, 2]".into()));
    }
    let xs = [lattice(f.n1(), params.x_per_axis), lattice(f.n2(), params.x_per_axis)];
    let r = params.r;
    let mut jobs = Vec::new();
    for &j in &params.j_pairs {
        for &t1 in &params.t_samples {
            for &t2 in &params.t_samples {
                jobs.push((j, (t1, t2)));
            }
        }
    }
    let kernel = |grid: &Grid, xs: &[usize], s: f64, lam: f64| -> Vec<Vec<f64>> {
        xs.iter().map(|&i| cell_kernel(grid, grid.points()[i], s, lam * r)).collect()
    };
    let results = exec.map(jobs.len(), |ji| -> Result<(Vec<SubmeanSample>, f64)> {
        let ((j1, j2), (t1, t2)) = jobs[ji];
        let s = (2f64.powi(-j1) * t1, 2f64.powi(-j2) * t2);
        let v = tensor_apply(m, prof, s, f)?;
        let mut rhs = vec![vec![0.0; xs[1].len()]; xs[0].len()];
        let mut shell = vec![vec![0.0; xs[1].len()]; xs[0].len()];
        let depth = params.k_depth;
        for d1 in 0..=depth {
            for d2 in 0..=depth {
                let (k1, k2) = (j1 + d1 as i32, j2 + d2 as i32);
                let sk = (2f64.powi(-k1) * t1, 2f64.powi(-k2) * t2);
                let u = tensor_apply(m, prof, sk, f)?.map(|x| x.abs().powf(r));
                let a = kernel(g[0], &xs[0], sk.0, params.lambda.0);
                let b = kernel(g[1], &xs[1], sk.1, params.lambda.1);
                let coef = 2f64.powf(-(d1 as f64) * params.sigma - (d2 as f64) * params.sigma);
                // Row contraction with axis-2 kernel then axis-1.
                let mut half = vec![vec![0.0; xs[1].len()]; u.n1()];
                for z1 in 0..u.n1() {
                    let row = u.row(z1);
                    for (c, kb) in b.iter().enumerate() {
                        half[z1][c] = row.iter().zip(kb).map(|(x, y)| x * y).sum();
                    }
                }
                for (a_i, ka) in a.iter().enumerate() {
                    for c in 0..xs[1].len() {
                        let val: f64 = ka.iter().enumerate().map(|(z1, k)| k * half[z1][c]).sum();
                        let term = coef * val;
                        rhs[a_i][c] += term;
                        if d1 == depth || d2 == depth {
                            shell[a_i][c] += term;
                        }
                    }
                }
            }
        }
        let mut samples = Vec::new();
        let mut tail: f64 = 0.0;
        for (a_i, &x1) in xs[0].iter().enumerate() {
            for (c, &x2) in xs[1].iter().enumerate() {
                let lhs = peetre_at(&v, g, (x1, x2), s, params.lambda).powf(r);
                if rhs[a_i][c] > 0.0 {
                    tail = tail.max(shell[a_i][c] / rhs[a_i][c]);
                }
                samples.push(SubmeanSample { x: (x1, x2), t: (t1, t2), j: (j1, j2), lhs, rhs: rhs[a_i][c] });
            }
        }
        Ok((samples, tail))
    });
    let mut constant: f64 = 0.0;
    let mut worst = None;
    let mut count = 0;
    let mut tail_fraction: f64 = 0.0;
    for res in results {
        let (samples, tail) = res?;
        tail_fraction = tail_fraction.max(tail);
        for smp in samples {
            count += 1;
            if smp.rhs > 0.0 && smp.lhs / smp.rhs > constant {
                constant = smp.lhs / smp.rhs;
                worst = Some(smp);
            } else if smp.rhs == 0.0 && smp.lhs > 0.0 {
                constant = f64::INFINITY;
                worst = Some(smp);
            }
        }
    }
    Ok(SubmeanReport { constant, worst, samples: count, tail_fraction, tail_ok: tail_fraction <= 1e-3 })
}

/// `‖S(f)‖_{L^p_w}` for admissible profiles.
#[allow(clippy::too_many_arguments)]
pub fn hardy_norm(
    m: [&SpectralModel; 2],
    prof: [&MultiplierProfile; 2],
    ladder: &ScaleLadder,
    f: &Field2,
    weight: &ProductWeight,
    p: f64,
    exec: Exec,
) -> Result<f64> {
    for pr in prof {
        let rep = pr.report();
        if !rep.admissible {
            let reason = if rep.phi0 != 0.0 {
                format!("Phi(0) = {} is not zero", rep.phi0)
            } else {
                "Tauberian condition or class-A validation failed".to_string()
            };
            return Err(Error::ProfileNotAdmissible { label: pr.label().to_string(), reason });
        }
    }
    let eng = SquareEngine::new(m, prof, ladder, FunctionalRequest::default())?;
    let out = eng.evaluate(f, exec)?;
    weighted_lp_norm(out.area.as_ref().expect("area requested"), weight, p)
}
