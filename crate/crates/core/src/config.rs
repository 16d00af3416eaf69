//! Experiment configuration: a versioned JSON document with unknown keys
//! rejected at every level.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{make_grid, DomainParams, GridKind};
use crate::lab::{CorpusFamily, CorpusSpec, InequalityParams, SubmeanParams};
use crate::multipliers::{builtin_tags, make_profile, MultiplierProfile};
use crate::spectral::{build_operator, ModelTag, SpectralModel};
use crate::squarefns::{make_ladder, ScaleLadder};
use crate::weights::WeightSpec;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OperatorKind {
    Laplacian,
    Bessel,
    BesselSchrodinger,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisConfig {
    pub kind: GridKind,
    pub size: usize,
    pub operator: OperatorKind,
    /// Torus period.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub period: Option<f64>,
    /// Half-line right endpoint.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub right: Option<f64>,
    /// Bessel parameter.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
}

impl AxisConfig {
    pub fn build(&self, size: usize) -> Result<SpectralModel> {
        let missing = |what: &str| Error::ConfigInvalid(format!("models: {what} is required for {:?}", self.kind));
        let domain = match self.kind {
            GridKind::LinePeriodic => DomainParams::Periodic { period: self.period.ok_or_else(|| missing("period"))? },
            GridKind::Halfline => DomainParams::Halfline {
                lambda: self.lambda.ok_or_else(|| missing("lambda"))?,
                right: self.right.ok_or_else(|| missing("right"))?,
            },
        };
        let grid = make_grid(self.kind, size, domain)?;
        let tag = match self.operator {
            OperatorKind::Laplacian => ModelTag::Laplacian,
            OperatorKind::Bessel => ModelTag::Bessel { lambda: self.lambda.ok_or_else(|| missing("lambda"))? },
            OperatorKind::BesselSchrodinger => {
                ModelTag::BesselSchrodinger { lambda: self.lambda.ok_or_else(|| missing("lambda"))? }
            }
        };
        build_operator(&grid, tag)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfilesConfig {
    pub primary: [String; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comparison: Option<[String; 2]>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LadderConfig {
    pub j_min: i32,
    pub j_max: i32,
    pub samples_per_octave: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExponentsConfig {
    pub p: Vec<f64>,
    pub lambda: [f64; 2],
    pub lambda_prime: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    pub families: Vec<CorpusFamily>,
    pub count: usize,
    pub seed: u64,
    #[serde(default = "default_band")]
    pub band: (usize, usize),
}

fn default_band() -> (usize, usize) {
    (2, 4)
}

impl CorpusConfig {
    pub fn spec(&self) -> CorpusSpec {
        CorpusSpec { families: self.families.clone(), count: self.count, band: self.band }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IdentitiesCheck {
    pub gstar_lambda: [f64; 2],
    pub g_tolerance: f64,
    pub area_tolerance: f64,
    pub gstar_tolerance: f64,
}

impl Default for IdentitiesCheck {
    fn default() -> Self {
        IdentitiesCheck { gstar_lambda: [3.0, 3.0], g_tolerance: 0.02, area_tolerance: 0.02, gstar_tolerance: 0.03 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecayCheck {
    pub outer: String,
    pub inner: String,
    pub s: f64,
    /// Ratios `t/s = 2^{-1} .. 2^{-octaves}`.
    pub octaves: u32,
    pub slack: f64,
}

impl Default for DecayCheck {
    fn default() -> Self {
        DecayCheck { outer: "heat".into(), inner: "lp-heat-2".into(), s: 2.0, octaves: 6, slack: 0.3 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PartitionCheck {
    pub samples: usize,
    pub tolerance: f64,
    pub reconstruction_tolerance: f64,
    pub base_scale: f64,
}

impl Default for PartitionCheck {
    fn default() -> Self {
        PartitionCheck { samples: 10_000, tolerance: 1e-8, reconstruction_tolerance: 1e-6, base_scale: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WeightsCheck {
    pub exponents: Vec<f64>,
    pub p: Vec<f64>,
}

impl Default for WeightsCheck {
    fn default() -> Self {
        WeightsCheck { exponents: vec![-1.5, -0.5, 0.0, 0.5, 1.0, 3.0], p: vec![1.2, 2.0, 4.0] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RefinementCheck {
    /// Grid sizes of the fine level are `refine` times the configured ones.
    pub refine: usize,
    pub max_spread: f64,
    pub max_drift: f64,
}

impl Default for RefinementCheck {
    fn default() -> Self {
        RefinementCheck { refine: 2, max_spread: 10.0, max_drift: 0.2 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SubmeanCheck {
    pub entries: usize,
    pub refine: usize,
    pub max_drift: f64,
    pub params: SubmeanParams,
}

impl Default for SubmeanCheck {
    fn default() -> Self {
        SubmeanCheck { entries: 2, refine: 2, max_drift: 0.25, params: SubmeanParams::default() }
    }
}

/// Enabled suites; absent entries are skipped.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChecksConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decay: Option<DecayCheck>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partition: Option<PartitionCheck>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<WeightsCheck>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub identities: Option<IdentitiesCheck>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theorem_suite: Option<RefinementCheck>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inequality_suite: Option<RefinementCheck>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub submean: Option<SubmeanCheck>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: Option<String>,
    pub formats: Vec<Format>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: None, formats: vec![Format::Json] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub models: [AxisConfig; 2],
    pub profiles: ProfilesConfig,
    pub ladder: LadderConfig,
    #[serde(default = "default_weights")]
    pub weights: Vec<WeightSpec>,
    pub exponents: ExponentsConfig,
    pub corpus: CorpusConfig,
    pub checks: ChecksConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

fn default_weights() -> Vec<WeightSpec> {
    vec![WeightSpec::Constant]
}

/// Parses and validates; diagnostics carry the serde line/column or the
/// offending field path.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::ConfigInvalid(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| Error::IoFailure { path: path.display().to_string(), source })?;
    parse_config(&text)
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::ConfigInvalid(msg.into())
}

fn profile(tag: &str, field: &str) -> Result<MultiplierProfile> {
    make_profile(tag).map_err(|_| invalid(format!("{field}: unknown profile {tag:?}; built-ins are {:?}", builtin_tags())))
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(invalid(format!("schema_version: expected {SCHEMA_VERSION}, got {}", self.schema_version)));
        }
        for (i, m) in self.models.iter().enumerate() {
            m.build(m.size).map_err(|e| invalid(format!("models[{i}]: {e}")))?;
        }
        for (i, tag) in self.profiles.primary.iter().enumerate() {
            profile(tag, &format!("profiles.primary[{i}]"))?;
        }
        if let Some(cmp) = &self.profiles.comparison {
            for (i, tag) in cmp.iter().enumerate() {
                profile(tag, &format!("profiles.comparison[{i}]"))?;
            }
        }
        self.ladder()?;
        if self.exponents.p.is_empty() || self.exponents.p.iter().any(|&p| !(p > 0.0 && p.is_finite())) {
            return Err(invalid("exponents.p: need at least one finite p > 0"));
        }
        let lam = self.exponents.lambda.iter().chain(&self.exponents.lambda_prime);
        if lam.clone().any(|&l| !(l > 0.0)) {
            return Err(invalid("exponents.lambda / lambda_prime: must be positive"));
        }
        if self.weights.is_empty() {
            return Err(invalid("weights: at least one weight is required"));
        }
        if self.corpus.count == 0 || self.corpus.families.is_empty() {
            return Err(invalid("corpus: count and families must be nonempty"));
        }
        let c = &self.checks;
        if let Some(d) = &c.decay {
            profile(&d.outer, "checks.decay.outer")?;
            profile(&d.inner, "checks.decay.inner")?;
            if !(d.s > 0.0) || d.octaves < 2 {
                return Err(invalid("checks.decay: need s > 0 and at least two octaves"));
            }
        }
        if let Some(w) = &c.weights {
            if w.p.iter().any(|&p| !(p >= 1.0)) {
                return Err(invalid("checks.weights.p: A_p classes need p >= 1"));
            }
        }
        for (name, r) in [("theorem_suite", &c.theorem_suite), ("inequality_suite", &c.inequality_suite)] {
            if let Some(r) = r {
                if r.refine < 2 {
                    return Err(invalid(format!("checks.{name}.refine: must be at least 2")));
                }
            }
        }
        if c.inequality_suite.is_some() && self.profiles.comparison.is_none() {
            return Err(invalid("checks.inequality_suite: profiles.comparison is required"));
        }
        if let Some(s) = &c.submean {
            if s.refine < 2 || s.entries == 0 {
                return Err(invalid("checks.submean: need refine >= 2 and entries >= 1"));
            }
        }
        Ok(())
    }

    pub fn ladder(&self) -> Result<ScaleLadder> {
        let l = self.ladder;
        make_ladder(l.j_min, l.j_max, l.samples_per_octave).map_err(|e| invalid(format!("ladder: {e}")))
    }

    pub fn models_at(&self, refine: usize) -> Result<[SpectralModel; 2]> {
        Ok([self.models[0].build(self.models[0].size * refine)?, self.models[1].build(self.models[1].size * refine)?])
    }

    pub fn primary_profiles(&self) -> Result<[MultiplierProfile; 2]> {
        Ok([profile(&self.profiles.primary[0], "profiles.primary[0]")?, profile(&self.profiles.primary[1], "profiles.primary[1]")?])
    }

    pub fn comparison_profiles(&self) -> Result<Option<[MultiplierProfile; 2]>> {
        match &self.profiles.comparison {
            Some([a, b]) => Ok(Some([profile(a, "profiles.comparison[0]")?, profile(b, "profiles.comparison[1]")?])),
            None => Ok(None),
        }
    }

    pub fn inequality_params(&self) -> InequalityParams {
        let e = &self.exponents;
        InequalityParams { lambda: (e.lambda[0], e.lambda[1]), lambda_prime: (e.lambda_prime[0], e.lambda_prime[1]) }
    }
}
