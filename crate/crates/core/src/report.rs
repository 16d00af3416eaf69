//! Experiment orchestration and persistent reports.
//!
//! Suites run in name order; each is internally parallel through [`Exec`]
//! with ordered reductions, so the report body does not depend on the worker
//! count. Only the `timing` block varies between runs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{ExperimentConfig, Format, IdentitiesCheck, RefinementCheck, SCHEMA_VERSION};
use crate::error::{Error, Result};
use crate::geometry::{DomainParams, GridKind};
use crate::lab::{
    evaluate_corpus, generate_corpus, hypothesis_record, inequality_suite, spread_drift, submean_check,
    theorem_suite, Corpus, EquivalenceReport, Functional, SuiteLevel,
};
use crate::multipliers::{build_calderon, make_profile, PartitionKind};
use crate::par::{with_threads, Exec};
use crate::spectral::{decay_check, DecayMode, SpectralModel};
use crate::squarefns::{profile_log_energy, tail_energy, FunctionalRequest, SquareEngine};
use crate::stats::rel_change;
use crate::weights::{ap_characteristic, critical_index, make_power_weight, weighted_lp_norm, ProductWeight, DEFAULT_P_GRID};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Pass,
    Flag,
    Fail,
}

impl Status {
    pub fn tag(self) -> &'static str {
        match self {
            Status::Pass => "pass",
            Status::Flag => "flag",
            Status::Fail => "fail",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub entry: String,
    pub value: f64,
    pub ratio: Option<f64>,
    pub drift: Option<f64>,
    pub status: Status,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub status: Status,
    pub rows: Vec<Row>,
    pub details: Value,
}

impl CheckResult {
    fn new(rows: Vec<Row>, details: Value) -> Self {
        let status = rows.iter().map(|r| r.status).max().unwrap_or(Status::Pass);
        CheckResult { status, rows, details }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub version: String,
    pub precision: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub config: ExperimentConfig,
    pub environment: Environment,
    pub checks: BTreeMap<String, CheckResult>,
    /// Seconds per suite.
    pub timing: BTreeMap<String, f64>,
}

impl RunReport {
    pub fn hard_failure(&self) -> bool {
        self.checks.values().any(|c| c.status == Status::Fail)
    }

    /// 0 without hard failures, 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.hard_failure() {
            2
        } else {
            0
        }
    }

    fn value(&self) -> Value {
        serde_json::to_value(self).expect("report serializes")
    }

    /// Canonical JSON: sorted keys, shortest round-trip floats, LF newlines.
    pub fn to_json(&self) -> String {
        canonical(&self.value())
    }

    /// Canonical JSON without the `timing` block.
    pub fn body_json(&self) -> String {
        let mut v = self.value();
        v.as_object_mut().expect("object").remove("timing");
        canonical(&v)
    }
}

fn canonical(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("value serializes");
    s.push('\n');
    s
}

fn row(entry: impl Into<String>, value: f64, ratio: Option<f64>, drift: Option<f64>, status: Status) -> Row {
    Row { entry: entry.into(), value, ratio, drift, status }
}

pub fn run_experiment_path(path: &Path, threads: Option<usize>) -> Result<RunReport> {
    let cfg = crate::config::load_config(path)?;
    run_experiment(&cfg, threads)
}

/// Runs every enabled suite. Errors are configuration or I/O problems; check
/// outcomes are recorded in the report.
pub fn run_experiment(cfg: &ExperimentConfig, threads: Option<usize>) -> Result<RunReport> {
    cfg.validate()?;
    with_threads(threads, || run_inner(cfg))
}

fn run_inner(cfg: &ExperimentConfig) -> Result<RunReport> {
    let exec = Exec::Parallel;
    let models = cfg.models_at(1)?;
    let corpus = generate_corpus(&models[0], &models[1], &cfg.corpus.spec(), cfg.corpus.seed)?;
    let mut checks = BTreeMap::new();
    let mut timing = BTreeMap::new();
    let c = &cfg.checks;
    let mut stage = |name: &str, f: &mut dyn FnMut() -> Result<CheckResult>| -> Result<()> {
        let start = Instant::now();
        let res = f()?;
        timing.insert(name.to_string(), start.elapsed().as_secs_f64());
        checks.insert(name.to_string(), res);
        Ok(())
    };
    if let Some(d) = &c.decay {
        stage("decay", &mut || decay_suite(cfg, &models, d))?;
    }
    if let Some(i) = &c.identities {
        stage("identities", &mut || identities_suite(cfg, &models, &corpus, i, exec))?;
    }
    if let Some(r) = &c.inequality_suite {
        stage("inequality-suite", &mut || inequality_stage(cfg, &corpus, r, exec))?;
    }
    if let Some(p) = &c.partition {
        stage("partition", &mut || partition_suite(cfg, &models, &corpus, p))?;
    }
    if let Some(s) = &c.submean {
        stage("submean", &mut || submean_stage(cfg, &corpus, s, exec))?;
    }
    if let Some(r) = &c.theorem_suite {
        stage("theorem-suite", &mut || theorem_stage(cfg, &corpus, r, exec))?;
    }
    if let Some(w) = &c.weights {
        stage("weights", &mut || weights_suite(cfg, &models, w))?;
    }
    Ok(RunReport {
        schema_version: SCHEMA_VERSION,
        config: cfg.clone(),
        environment: Environment { version: env!("CARGO_PKG_VERSION").to_string(), precision: "f64".into() },
        checks,
        timing,
    })
}

fn axis_label(i: usize, m: &SpectralModel) -> String {
    format!("axis{}:{}", i + 1, m.tag())
}

fn decay_suite(cfg: &ExperimentConfig, models: &[SpectralModel; 2], d: &crate::config::DecayCheck) -> Result<CheckResult> {
    let outer = make_profile(&d.outer)?;
    let inner = make_profile(&d.inner)?;
    let pairs: Vec<(f64, f64)> = (1..=d.octaves).map(|i| (d.s, d.s * 2f64.powi(-(i as i32)))).collect();
    let mut rows = Vec::new();
    let mut details = Vec::new();
    for (i, m) in models.iter().enumerate() {
        if i == 1 && cfg.models[1] == cfg.models[0] {
            continue;
        }
        let rep = decay_check(m, &outer, &inner, &pairs, &DecayMode::Composed)?;
        let fit = rep.composed.expect("composed mode");
        let bound = fit.m as f64 + 1.0 - d.slack;
        let ok = fit.alpha >= bound;
        rows.push(row(axis_label(i, m), fit.alpha, None, None, if ok { Status::Pass } else { Status::Fail }));
        details.push(json!({ "axis": i + 1, "fit": fit, "required": bound }));
    }
    Ok(CheckResult::new(rows, Value::Array(details)))
}

/// Closed-form `‖g*‖₂/‖g‖₂` factor of an axis, where one exists.
fn gstar_factor(m: &SpectralModel, lambda: f64) -> Option<f64> {
    let e = m.grid().nominal_dimension() * lambda;
    (m.grid().kind() == GridKind::LinePeriodic && e > 1.0).then(|| (1.0 / (e - 1.0)).sqrt())
}

fn identities_suite(
    cfg: &ExperimentConfig,
    models: &[SpectralModel; 2],
    corpus: &Corpus,
    id: &IdentitiesCheck,
    exec: Exec,
) -> Result<CheckResult> {
    let profiles = cfg.primary_profiles()?;
    let ladder = cfg.ladder()?;
    let lam = (id.gstar_lambda[0], id.gstar_lambda[1]);
    let req = FunctionalRequest { area: true, gstar: Some(lam), peetre: None, checked: false };
    let [m1, m2] = models;
    let eng = SquareEngine::new([m1, m2], [&profiles[0], &profiles[1]], &ladder, req)?;
    let w = ProductWeight::constant(m1.grid(), m2.grid());
    let g_expect = (profile_log_energy(&profiles[0]) * profile_log_energy(&profiles[1])).sqrt();
    let line = [m1, m2].iter().all(|m| m.grid().kind() == GridKind::LinePeriodic);
    let area_expect = line.then_some(1.0);
    let gstar_expect = match (gstar_factor(m1, lam.0), gstar_factor(m2, lam.1)) {
        (Some(a), Some(b)) => Some(a * b),
        _ => None,
    };
    let evals = evaluate_corpus(&eng, corpus, m1, m2, exec)?;
    let mut rows = Vec::new();
    let mut uncertified = Vec::new();
    for (e, ev) in corpus.entries.iter().zip(&evals) {
        let f = e.sample(m1, m2)?;
        let fnorm = weighted_lp_norm(&f, &w, 2.0)?;
        let tail = tail_energy(&eng, &f)?;
        if !tail.certified {
            uncertified.push(e.label.clone());
        }
        let norm = |which: Functional| weighted_lp_norm(which.pick(&ev.values).expect("requested"), &w, 2.0);
        let (g, s, gs) = (norm(Functional::G)?, norm(Functional::Area)?, norm(Functional::GStar)?);
        let judge = |measured: f64, expect: Option<f64>, tol: f64| -> (Option<f64>, Status) {
            match expect {
                Some(x) => {
                    let r = measured / x;
                    let st = if (r - 1.0).abs() > tol {
                        Status::Fail
                    } else if !tail.certified {
                        Status::Flag
                    } else {
                        Status::Pass
                    };
                    (Some(r), st)
                }
                None => (None, Status::Flag),
            }
        };
        for (name, measured, expect, tol) in [
            ("g/f", g / fnorm, Some(g_expect), id.g_tolerance),
            ("S/g", s / g, area_expect, id.area_tolerance),
            ("g*/g", gs / g, gstar_expect, id.gstar_tolerance),
        ] {
            let (ratio, st) = judge(measured, expect, tol);
            rows.push(row(format!("{} {name}", e.label), measured, ratio, None, st));
        }
    }
    let details = json!({
        "expected": { "g/f": g_expect, "S/g": area_expect, "g*/g": gstar_expect },
        "tail_uncertified": uncertified,
    });
    Ok(CheckResult::new(rows, details))
}

fn partition_suite(
    cfg: &ExperimentConfig,
    models: &[SpectralModel; 2],
    corpus: &Corpus,
    p: &crate::config::PartitionCheck,
) -> Result<CheckResult> {
    let profiles = cfg.primary_profiles()?;
    let samples: Vec<f64> = (0..p.samples)
        .map(|i| {
            let u = if p.samples == 1 { 0.5 } else { i as f64 / (p.samples - 1) as f64 };
            10f64.powf(-3.0 + 6.0 * u)
        })
        .collect();
    let mut rows = Vec::new();
    let mut details = Vec::new();
    for (axis, (m, prof)) in models.iter().zip(&profiles).enumerate() {
        // One mean-zero slice per axis from the first corpus entry.
        let f = corpus.entries[0].sample(&models[0], &models[1])?;
        let slice: Vec<f64> = if axis == 0 { (0..f.n1()).map(|i| f.get(i, 0)).collect() } else { f.row(0).to_vec() };
        let norm = slice.iter().zip(m.grid().quad_weights()).map(|(v, q)| v * v * q).sum::<f64>().sqrt();
        for kind in [PartitionKind::Inhomogeneous, PartitionKind::Homogeneous] {
            let label = format!("{} {}", axis_label(axis, m), if kind == PartitionKind::Homogeneous { "homogeneous" } else { "inhomogeneous" });
            let part = match build_calderon(prof, kind) {
                Ok(part) => part,
                Err(e) => {
                    rows.push(row(label, f64::NAN, None, None, Status::Fail));
                    details.push(json!({ "axis": axis + 1, "kind": kind, "error": e.to_string() }));
                    continue;
                }
            };
            let residual = part.partition_residual(&samples);
            let rec = part.reconstruct(m, p.base_scale, &slice)?;
            let err = rec
                .iter()
                .zip(&slice)
                .zip(m.grid().quad_weights())
                .map(|((a, b), q)| (a - b).powi(2) * q)
                .sum::<f64>()
                .sqrt();
            let rel = if norm > 0.0 { err / norm } else { err };
            let ok = residual < p.tolerance && rel < p.reconstruction_tolerance;
            rows.push(row(label, residual, Some(rel), None, if ok { Status::Pass } else { Status::Fail }));
            details.push(json!({ "axis": axis + 1, "kind": kind, "residual": residual, "reconstruction": rel }));
        }
    }
    Ok(CheckResult::new(rows, Value::Array(details)))
}

fn weights_suite(cfg: &ExperimentConfig, models: &[SpectralModel; 2], w: &crate::config::WeightsCheck) -> Result<CheckResult> {
    let mut rows = Vec::new();
    let mut cells = Vec::new();
    let g1 = models[0].grid();
    let line = match g1.domain() {
        DomainParams::Periodic { .. } => Some(g1.clone()),
        DomainParams::Halfline { .. } => None,
    };
    if let Some(g) = &line {
        for &a in &w.exponents {
            let weight = make_power_weight(g, g, a, 0.0)?;
            for &p in &w.p {
                let ch = ap_characteristic(&weight, p)?;
                let member = -1.0 < a && a < p - 1.0;
                let st = if member == !ch.divergent { Status::Pass } else { Status::Fail };
                rows.push(row(format!("|x|^{a} A_{p}"), ch.value, None, None, st));
                cells.push(json!({ "a": a, "p": p, "value": ch.value, "divergent": ch.divergent, "rule": member }));
            }
        }
    }
    let mut critical = Vec::new();
    for spec in &cfg.weights {
        let weight = spec.build(models[0].grid(), models[1].grid())?;
        let ci = critical_index(&weight, &DEFAULT_P_GRID)?;
        rows.push(row(format!("{} q_w", spec.label()), ci.q_w, None, None, Status::Pass));
        critical.push(json!({ "weight": spec.label(), "critical": ci }));
    }
    let details = json!({
        "classification": cells,
        "classification_skipped": line.is_none(),
        "critical_indices": critical,
    });
    Ok(CheckResult::new(rows, details))
}

fn build_weights(cfg: &ExperimentConfig, m: &[SpectralModel; 2]) -> Result<Vec<(String, ProductWeight)>> {
    cfg.weights.iter().map(|s| Ok((s.label(), s.build(m[0].grid(), m[1].grid())?))).collect()
}

fn theorem_stage(cfg: &ExperimentConfig, corpus: &Corpus, r: &RefinementCheck, exec: Exec) -> Result<CheckResult> {
    let profiles = cfg.primary_profiles()?;
    let ladder = cfg.ladder()?;
    let e = &cfg.exponents;
    let lam = (e.lambda[0], e.lambda[1]);
    let lam_p = (e.lambda_prime[0], e.lambda_prime[1]);
    let req = FunctionalRequest { area: true, gstar: Some(lam), peetre: Some(lam_p), checked: true };
    let mut per_level: Vec<Vec<EquivalenceReport>> = Vec::new();
    let mut chain = 0;
    let mut chain_points = 0;
    for refine in [1, r.refine] {
        let models = cfg.models_at(refine)?;
        let [m1, m2] = &models;
        let eng = SquareEngine::new([m1, m2], [&profiles[0], &profiles[1]], &ladder, req)?;
        let evals = evaluate_corpus(&eng, corpus, m1, m2, exec)?;
        for ev in &evals {
            if let Some(t) = &ev.values.chain {
                chain += t.total();
                chain_points += t.points;
            }
        }
        let mut reps = Vec::new();
        for (label, w) in build_weights(cfg, &models)? {
            for &p in &e.p {
                let hyp = hypothesis_record([m1, m2], [&profiles[0], &profiles[1]], &w, &label, p, lam, lam_p)?;
                reps.push(theorem_suite(&evals, &w, hyp)?);
            }
        }
        per_level.push(reps);
    }
    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    for (coarse, fine) in per_level[0].iter().zip(&per_level[1]) {
        let drifts = spread_drift(coarse, fine);
        let h = &fine.hypotheses;
        let tag = format!("{} p={}", h.weight, h.p);
        for (pair, &drift) in fine.pairs.iter().zip(&drifts) {
            let ok = pair.spread < r.max_spread && drift < r.max_drift && pair.spread.is_finite();
            let st = if ok { Status::Pass } else { Status::Flag };
            for en in &fine.entries {
                let (a, b) = (en.norms[&pair.a], en.norms[&pair.b]);
                let ratio = (b > 0.0 && !fine.excluded.contains(&en.label)).then(|| a / b);
                rows.push(row(format!("{tag} {}/{} {}", pair.a.tag(), pair.b.tag(), en.label), a, ratio, Some(drift), st));
            }
            summaries.push(json!({
                "weight": h.weight, "p": h.p, "pair": [pair.a.tag(), pair.b.tag()],
                "c_low": pair.c_low, "c_high": pair.c_high, "spread": pair.spread,
                "coarse_spread": coarse.pairs.iter().find(|c| c.a == pair.a && c.b == pair.b).map(|c| c.spread),
                "drift": drift,
            }));
        }
    }
    if chain > 0 {
        rows.push(row("pointwise chain", chain as f64, None, None, Status::Fail));
    }
    let hypotheses: Vec<_> = per_level[1].iter().map(|r| &r.hypotheses).collect();
    let hardy: Vec<_> = per_level[1].iter().map(|r| json!({ "weight": r.hypotheses.weight, "p": r.hypotheses.p, "norms": r.hardy })).collect();
    let excluded: Vec<_> = per_level[1].iter().flat_map(|r| r.excluded.clone()).collect();
    let details = json!({
        "pairs": summaries,
        "hypotheses": hypotheses,
        "hardy": hardy,
        "excluded": excluded,
        "chain_violations": chain,
        "chain_points": chain_points,
    });
    Ok(CheckResult::new(rows, details))
}

fn inequality_stage(cfg: &ExperimentConfig, corpus: &Corpus, r: &RefinementCheck, exec: Exec) -> Result<CheckResult> {
    let profiles = cfg.primary_profiles()?;
    let alt = cfg.comparison_profiles()?.ok_or_else(|| Error::ConfigInvalid("profiles.comparison is required".into()))?;
    let ladder = cfg.ladder()?;
    let coarse = cfg.models_at(1)?;
    let fine = cfg.models_at(r.refine)?;
    let (wc, wf) = (build_weights(cfg, &coarse)?, build_weights(cfg, &fine)?);
    let rep = inequality_suite(
        corpus,
        [
            SuiteLevel { models: [&coarse[0], &coarse[1]], weights: &wc },
            SuiteLevel { models: [&fine[0], &fine[1]], weights: &wf },
        ],
        [&profiles[0], &profiles[1]],
        [&alt[0], &alt[1]],
        &ladder,
        cfg.inequality_params(),
        &cfg.exponents.p,
        exec,
    )?;
    let rows = rep
        .checks
        .iter()
        .map(|c| {
            let st = if c.violations.unwrap_or(0) > 0 {
                Status::Fail
            } else if c.drift < r.max_drift && c.max_ratio.is_finite() {
                Status::Pass
            } else {
                Status::Flag
            };
            row(format!("{} {} p={}", c.name, c.weight, c.p), c.max_ratio, Some(c.min_ratio), Some(c.drift), st)
        })
        .collect();
    Ok(CheckResult::new(rows, serde_json::to_value(&rep).expect("serializes")))
}

fn submean_stage(cfg: &ExperimentConfig, corpus: &Corpus, s: &crate::config::SubmeanCheck, exec: Exec) -> Result<CheckResult> {
    let profiles = cfg.primary_profiles()?;
    let coarse = cfg.models_at(1)?;
    let fine = cfg.models_at(s.refine)?;
    let mut rows = Vec::new();
    let mut details = Vec::new();
    for e in corpus.entries.iter().take(s.entries) {
        let run = |m: &[SpectralModel; 2]| -> Result<_> {
            let f = e.sample(&m[0], &m[1])?;
            submean_check([&m[0], &m[1]], [&profiles[0], &profiles[1]], &f, &s.params, exec)
        };
        let (a, b) = match (run(&coarse), run(&fine)) {
            (Ok(a), Ok(b)) => (a, b),
            (Err(Error::HypothesisViolated(msg)), _) | (_, Err(Error::HypothesisViolated(msg))) => {
                rows.push(row(e.label.clone(), f64::NAN, None, None, Status::Flag));
                details.push(json!({ "entry": e.label, "hypothesis_violated": msg }));
                continue;
            }
            (Err(err), _) | (_, Err(err)) => return Err(err),
        };
        let drift = rel_change(b.constant, a.constant);
        let st = if !b.constant.is_finite() {
            Status::Fail
        } else if drift < s.max_drift && b.tail_ok {
            Status::Pass
        } else {
            Status::Flag
        };
        rows.push(row(e.label.clone(), b.constant, None, Some(drift), st));
        details.push(json!({ "entry": e.label, "coarse": a, "fine": b, "drift": drift }));
    }
    Ok(CheckResult::new(rows, Value::Array(details)))
}

pub const CSV_HEADER: [&str; 6] = ["check", "entry", "value", "ratio", "drift", "status"];

fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:?}")
    } else {
        String::new()
    }
}

/// Writes `report.json` and/or `report.csv` into `dir`.
pub fn write_report(report: &RunReport, dir: &Path, formats: &[Format]) -> Result<Vec<PathBuf>> {
    let io = |path: &Path| {
        let path = path.display().to_string();
        move |source: std::io::Error| Error::IoFailure { path, source }
    };
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    let mut formats = formats.to_vec();
    formats.sort();
    formats.dedup();
    let mut written = Vec::new();
    for f in formats {
        match f {
            Format::Json => {
                let path = dir.join("report.json");
                std::fs::write(&path, report.to_json()).map_err(io(&path))?;
                written.push(path);
            }
            Format::Csv => {
                let path = dir.join("report.csv");
                let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
                let csv_err = |e: csv::Error| Error::IoFailure { path: path.display().to_string(), source: e.into() };
                w.write_record(CSV_HEADER).map_err(csv_err)?;
                for (name, check) in &report.checks {
                    for r in &check.rows {
                        w.write_record([
                            name.as_str(),
                            &r.entry,
                            &num(r.value),
                            &r.ratio.map(num).unwrap_or_default(),
                            &r.drift.map(num).unwrap_or_default(),
                            r.status.tag(),
                        ])
                        .map_err(csv_err)?;
                    }
                }
                let bytes = w.into_inner().map_err(|e| Error::IoFailure { path: path.display().to_string(), source: e.into_error() })?;
                std::fs::write(&path, bytes).map_err(io(&path))?;
                written.push(path);
            }
        }
    }
    Ok(written)
}

/// Names a config may reference.
pub fn builtins() -> Value {
    json!({
        "profiles": crate::multipliers::builtin_tags(),
        "models": ["laplacian", "bessel", "bessel-schrodinger"],
        "grids": ["line-periodic", "halfline"],
        "weights": ["constant", "power"],
        "corpus_families": crate::lab::CorpusFamily::ALL.iter().map(|f| f.tag()).collect::<Vec<_>>(),
        "checks": ["decay", "identities", "inequality_suite", "partition", "submean", "theorem_suite", "weights"],
    })
}
