//! JSON documents: problems, barrier coefficients and run reports.
//!
//! Every document carries a versioned `schema` string. Problem documents
//! are checked section by section so that diagnostics name the offending
//! section, entry and (for syntax errors) line and column.

use std::collections::BTreeMap;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::engine::{IterationRecord, RunConfig, RunReport, Status, Timings};
use crate::expr::{parse, Expr};
use crate::model::{
    HyperBox, ModeBox, ModeDef, ModelError, Monomial, ParamVector, Problem, ResetInverse,
    ResetRule, Template,
};
use crate::verify::{ConditionReport, Verdict, VerifyReport};

pub const PROBLEM_SCHEMA: &str = "simbarrier/problem/1";
pub const BARRIER_SCHEMA: &str = "simbarrier/barrier/1";
pub const REPORT_SCHEMA: &str = "simbarrier/report/1";
pub const VERIFY_SCHEMA: &str = "simbarrier/verify/1";

#[derive(Clone, Debug, Error, PartialEq)]
pub enum DocumentError {
    #[error("line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{section}: required section missing")]
    Missing { section: String },
    #[error("{section}: {message}")]
    Invalid { section: String, message: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn invalid(section: impl Into<String>, message: impl ToString) -> DocumentError {
    DocumentError::Invalid {
        section: section.into(),
        message: message.to_string(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisturbanceDoc {
    pub variables: Vec<String>,
    #[serde(rename = "box")]
    pub region: HyperBox,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeDoc {
    pub name: String,
    pub omega: HyperBox,
    pub flow: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InverseDoc {
    pub map: Vec<String>,
    pub guard: HyperBox,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResetDoc {
    pub source: String,
    pub guard: HyperBox,
    pub target: String,
    pub map: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inverse: Option<InverseDoc>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionDoc {
    pub mode: String,
    pub boxes: Vec<HyperBox>,
}

/// `"linear"`, `"quadratic-2d"`, a monomial list shared by all modes, or
/// a per-mode map of monomial lists.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TemplateDoc {
    Shorthand(String),
    Monomials(Vec<String>),
    PerMode(BTreeMap<String, Vec<String>>),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TolerancesDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rtol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub atol: Option<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bloat: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub starts: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iter: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerances: Option<TolerancesDoc>,
}

impl RunDoc {
    pub fn apply(&self, cfg: &mut RunConfig) {
        if let Some(v) = self.sigma {
            cfg.sigma = v;
        }
        if let Some(v) = self.bloat {
            cfg.bloat = v;
        }
        if let Some(v) = self.starts {
            cfg.starts = v;
        }
        if let Some(v) = self.max_iter {
            cfg.max_iter = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.delta_min {
            cfg.delta_min = v;
        }
        if let Some(t) = self.tolerances {
            if let Some(v) = t.rtol {
                cfg.tolerances.rtol = v;
            }
            if let Some(v) = t.atol {
                cfg.tolerances.atol = v;
            }
        }
    }

    fn check(&self) -> Result<(), DocumentError> {
        let positive = |name: &str, v: Option<f64>| match v {
            Some(v) if !(v.is_finite() && v > 0.0) => {
                Err(invalid("run", format!("`{name}` must be positive, got {v}")))
            }
            _ => Ok(()),
        };
        positive("sigma", self.sigma)?;
        positive("delta_min", self.delta_min)?;
        if let Some(b) = self.bloat {
            if !(b.is_finite() && b >= 1.0) {
                return Err(invalid("run", format!("`bloat` must be at least 1, got {b}")));
            }
        }
        if self.starts == Some(0) {
            return Err(invalid("run", "`starts` must be at least 1"));
        }
        if let Some(t) = self.tolerances {
            positive("tolerances.rtol", t.rtol)?;
            positive("tolerances.atol", t.atol)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemDocument {
    pub schema: String,
    #[serde(default)]
    pub name: String,
    pub variables: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub disturbances: Option<DisturbanceDoc>,
    pub modes: Vec<ModeDoc>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub resets: Vec<ResetDoc>,
    pub init: Vec<RegionDoc>,
    #[serde(rename = "unsafe")]
    pub unsafe_set: Vec<RegionDoc>,
    pub template: TemplateDoc,
    #[serde(default)]
    pub run: RunDoc,
}

/// A problem ready for the engine.
#[derive(Clone, Debug)]
pub struct Loaded {
    pub problem: Problem,
    pub template: Template,
    pub run: RunConfig,
}

fn syntax(e: serde_json::Error) -> DocumentError {
    DocumentError::Syntax {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    }
}

fn section<T: DeserializeOwned>(obj: &mut serde_json::Map<String, Value>, key: &str) -> Result<Option<T>, DocumentError> {
    match obj.remove(key) {
        None => Ok(None),
        Some(v) => serde_json::from_value(v).map(Some).map_err(|e| invalid(key, e)),
    }
}

fn required<T: DeserializeOwned>(obj: &mut serde_json::Map<String, Value>, key: &str) -> Result<T, DocumentError> {
    section(obj, key)?.ok_or_else(|| DocumentError::Missing {
        section: key.to_string(),
    })
}

fn check_schema(found: &str, expected: &str) -> Result<(), DocumentError> {
    if found == expected {
        Ok(())
    } else {
        Err(invalid(
            "schema",
            format!("expected `{expected}`, found `{found}`"),
        ))
    }
}

fn object(text: &str) -> Result<serde_json::Map<String, Value>, DocumentError> {
    match serde_json::from_str::<Value>(text).map_err(syntax)? {
        Value::Object(m) => Ok(m),
        _ => Err(invalid("document", "expected a JSON object")),
    }
}

impl ProblemDocument {
    pub fn from_json(text: &str) -> Result<Self, DocumentError> {
        let mut obj = object(text)?;
        let schema: String = required(&mut obj, "schema")?;
        check_schema(&schema, PROBLEM_SCHEMA)?;
        let doc = ProblemDocument {
            schema,
            name: section(&mut obj, "name")?.unwrap_or_default(),
            variables: required(&mut obj, "variables")?,
            disturbances: section(&mut obj, "disturbances")?,
            modes: required(&mut obj, "modes")?,
            resets: section(&mut obj, "resets")?.unwrap_or_default(),
            init: required(&mut obj, "init")?,
            unsafe_set: required(&mut obj, "unsafe")?,
            template: required(&mut obj, "template")?,
            run: section(&mut obj, "run")?.unwrap_or_default(),
        };
        if let Some(key) = obj.keys().next() {
            return Err(invalid(key.as_str(), "unknown section"));
        }
        Ok(doc)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("problem documents serialize")
    }

    /// Builds and validates the problem, its template and run settings.
    pub fn build(&self) -> Result<Loaded, DocumentError> {
        let state = self.variables.clone();
        if state.is_empty() {
            return Err(invalid("variables", "at least one state variable is required"));
        }
        let (dist_vars, dist_box) = match &self.disturbances {
            Some(d) => (d.variables.clone(), d.region.clone()),
            None => (vec![], HyperBox::new(vec![])),
        };
        let mut all = state.clone();
        all.extend(dist_vars.iter().cloned());
        for (i, v) in all.iter().enumerate() {
            if all[..i].contains(v) {
                return Err(invalid("variables", format!("duplicate variable `{v}`")));
            }
        }
        if self.modes.is_empty() {
            return Err(invalid("modes", "at least one mode is required"));
        }
        let names: Vec<String> = self.modes.iter().map(|m| m.name.clone()).collect();
        for (i, v) in names.iter().enumerate() {
            if names[..i].contains(v) {
                return Err(invalid("modes", format!("duplicate mode `{v}`")));
            }
        }
        let mode_index = |sec: &str, name: &str| {
            names
                .iter()
                .position(|m| m == name)
                .ok_or_else(|| invalid(sec, format!("unknown mode `{name}`")))
        };
        let exprs = |sec: String, list: &[String], vars: &[String]| -> Result<Vec<Expr>, DocumentError> {
            list.iter()
                .enumerate()
                .map(|(i, s)| parse(s, vars).map_err(|e| invalid(format!("{sec}[{i}]"), e)))
                .collect()
        };

        let mut modes = Vec::new();
        for (k, m) in self.modes.iter().enumerate() {
            let flow = exprs(format!("modes[{k}].flow"), &m.flow, &all)?;
            modes.push(ModeDef::new(m.name.clone(), m.omega.clone(), flow));
        }
        let mut resets = Vec::new();
        for (k, r) in self.resets.iter().enumerate() {
            let sec = format!("resets[{k}]");
            let source = mode_index(&sec, &r.source)?;
            let target = mode_index(&sec, &r.target)?;
            let map = exprs(format!("{sec}.map"), &r.map, &state)?;
            let inverse = match &r.inverse {
                Some(inv) => Some(ResetInverse {
                    map: exprs(format!("{sec}.inverse.map"), &inv.map, &state)?,
                    guard: inv.guard.clone(),
                }),
                None => None,
            };
            resets.push(ResetRule::new(source, r.guard.clone(), target, map, inverse));
        }
        let regions = |sec: &str, list: &[RegionDoc]| -> Result<Vec<ModeBox>, DocumentError> {
            let mut out = Vec::new();
            for (k, r) in list.iter().enumerate() {
                let mode = mode_index(&format!("{sec}[{k}]"), &r.mode)?;
                out.extend(r.boxes.iter().map(|b| ModeBox {
                    mode,
                    region: b.clone(),
                }));
            }
            Ok(out)
        };
        let problem = Problem {
            name: self.name.clone(),
            state_vars: state.clone(),
            dist_vars,
            dist_box,
            modes,
            resets,
            initial: regions("init", &self.init)?,
            unsafe_set: regions("unsafe", &self.unsafe_set)?,
        };
        problem.validate()?;
        let template = build_template(&self.template, &names, &state)?;
        self.run.check()?;
        let mut run = RunConfig::default();
        self.run.apply(&mut run);
        Ok(Loaded {
            problem,
            template,
            run,
        })
    }
}

/// Parses and builds a problem document.
pub fn load_problem(text: &str) -> Result<Loaded, DocumentError> {
    ProblemDocument::from_json(text)?.build()
}

pub fn linear_monomials(n: usize) -> Vec<Monomial> {
    let mut list = vec![Monomial::constant(n)];
    for i in 0..n {
        let mut e = vec![0; n];
        e[i] = 1;
        list.push(Monomial(e));
    }
    list
}

fn build_template(doc: &TemplateDoc, modes: &[String], state: &[String]) -> Result<Template, DocumentError> {
    let n = state.len();
    let parse_list = |sec: &str, list: &[String]| -> Result<Vec<Monomial>, DocumentError> {
        list.iter()
            .map(|m| Monomial::parse(m, state).map_err(|e| invalid(sec, e)))
            .collect()
    };
    let lists = match doc {
        TemplateDoc::Shorthand(s) => {
            let list = match s.as_str() {
                "linear" => linear_monomials(n),
                "quadratic-2d" if n == 2 => Template::quadratic_2d(1).monomials(0).to_vec(),
                "quadratic-2d" => {
                    return Err(invalid("template", format!("`quadratic-2d` needs 2 state variables, got {n}")))
                }
                other => return Err(invalid("template", format!("unknown shorthand `{other}`"))),
            };
            vec![list; modes.len()]
        }
        TemplateDoc::Monomials(list) => vec![parse_list("template", list)?; modes.len()],
        TemplateDoc::PerMode(map) => {
            if let Some(extra) = map.keys().find(|k| !modes.contains(k)) {
                return Err(invalid("template", format!("unknown mode `{extra}`")));
            }
            modes
                .iter()
                .map(|m| match map.get(m) {
                    Some(list) => parse_list(&format!("template.{m}"), list),
                    None => Err(invalid("template", format!("no monomials for mode `{m}`"))),
                })
                .collect::<Result<_, _>>()?
        }
    };
    Ok(Template::new(modes, lists)?)
}

/// Per-mode monomial to coefficient map.
pub type Coefficients = BTreeMap<String, BTreeMap<String, f64>>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BarrierDocument {
    pub schema: String,
    pub barrier: Coefficients,
}

impl BarrierDocument {
    pub fn from_json(text: &str) -> Result<Self, DocumentError> {
        let mut obj = object(text)?;
        let schema: String = required(&mut obj, "schema")?;
        check_schema(&schema, BARRIER_SCHEMA)?;
        let barrier = required(&mut obj, "barrier")?;
        if let Some(key) = obj.keys().next() {
            return Err(invalid(key.as_str(), "unknown section"));
        }
        Ok(BarrierDocument { schema, barrier })
    }

    pub fn new(prob: &Problem, t: &Template, p: &ParamVector) -> Self {
        BarrierDocument {
            schema: BARRIER_SCHEMA.to_string(),
            barrier: coefficients(prob, t, p),
        }
    }

    /// Template spanned by the listed monomials (plus the constant) and
    /// the matching parameter vector.
    pub fn params(&self, prob: &Problem) -> Result<(Template, ParamVector), DocumentError> {
        let names: Vec<String> = prob.modes.iter().map(|m| m.name.clone()).collect();
        if let Some(extra) = self.barrier.keys().find(|k| !names.contains(k)) {
            return Err(invalid("barrier", format!("unknown mode `{extra}`")));
        }
        let n = prob.n();
        let mut lists = Vec::new();
        let mut p = Vec::new();
        for m in &names {
            let coeffs = self
                .barrier
                .get(m)
                .ok_or_else(|| invalid("barrier", format!("no coefficients for mode `{m}`")))?;
            let mut list: Vec<Monomial> = Vec::new();
            let mut block: Vec<f64> = Vec::new();
            for (text, &c) in coeffs {
                if !c.is_finite() {
                    return Err(invalid(format!("barrier.{m}"), format!("non-finite coefficient for `{text}`")));
                }
                let mono = Monomial::parse(text, &prob.state_vars).map_err(|e| invalid(format!("barrier.{m}"), e))?;
                match list.iter().position(|x| *x == mono) {
                    Some(i) => block[i] += c,
                    None => {
                        list.push(mono);
                        block.push(c);
                    }
                }
            }
            if !list.iter().any(Monomial::is_constant) {
                list.push(Monomial::constant(n));
                block.push(0.0);
            }
            lists.push(list);
            p.extend(block);
        }
        Ok((Template::new(&names, lists)?, ParamVector(p)))
    }
}

pub fn coefficients(prob: &Problem, t: &Template, p: &ParamVector) -> Coefficients {
    prob.modes
        .iter()
        .enumerate()
        .map(|(m, def)| {
            let block = t.block(m);
            let map = t
                .monomials(m)
                .iter()
                .zip(&p.0[block])
                .map(|(mono, &c)| (mono.render(&prob.state_vars), c))
                .collect();
            (def.name.clone(), map)
        })
        .collect()
}

/// Human-readable polynomial with 12 significant digits per coefficient.
pub fn expression(prob: &Problem, t: &Template, p: &ParamVector, mode: usize) -> String {
    let mut out = String::new();
    for (mono, &c) in t.monomials(mode).iter().zip(&p.0[t.block(mode)]) {
        if c == 0.0 {
            continue;
        }
        let sign = if c < 0.0 { "-" } else { "+" };
        let mag = format!("{:.11e}", c.abs());
        let term = if mono.is_constant() {
            mag
        } else {
            format!("{mag}*{}", mono.render(&prob.state_vars))
        };
        if out.is_empty() {
            if c < 0.0 {
                out.push('-');
            }
        } else {
            out.push_str(&format!(" {sign} "));
        }
        out.push_str(&term);
    }
    if out.is_empty() {
        out.push('0');
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolInfo {
    pub name: String,
    pub version: String,
}

impl ToolInfo {
    pub fn current() -> Self {
        ToolInfo {
            name: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub schema: String,
    pub tool: ToolInfo,
    pub problem: String,
    pub seed: u64,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub barrier: Option<Coefficients>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expression: Option<BTreeMap<String, String>>,
    pub delta: Option<f64>,
    pub iterations: usize,
    pub segments: usize,
    pub timings: Timings,
    pub verdict: Option<Verdict>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub verification: Vec<ConditionReport>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
    pub history: Vec<IterationRecord>,
}

fn report_notes(prob: &Problem) -> Vec<String> {
    let mut notes = vec![format!(
        "transversality counter-examples are sought on the band |V| <= {:e}",
        crate::falsify::FalsifyConfig::default().level_tol
    )];
    if prob.name.starts_with("scalable-") {
        notes.push(
            "scalable family instance of dimension 2l + 1; the suite runs l = 1..4 in place of l = 100"
                .into(),
        );
    }
    notes
}

impl ReportDocument {
    pub fn new(prob: &Problem, t: &Template, cfg: &RunConfig, r: &RunReport) -> Self {
        let (barrier, expr) = match (&r.status, &r.p) {
            (Status::BarrierFound, Some(p)) => (
                Some(coefficients(prob, t, p)),
                Some(
                    prob.modes
                        .iter()
                        .enumerate()
                        .map(|(m, d)| (d.name.clone(), expression(prob, t, p, m)))
                        .collect(),
                ),
            ),
            _ => (None, None),
        };
        ReportDocument {
            schema: REPORT_SCHEMA.to_string(),
            tool: ToolInfo::current(),
            problem: prob.name.clone(),
            seed: cfg.seed,
            status: r.status,
            barrier,
            expression: expr,
            delta: r.delta,
            iterations: r.iterations,
            segments: r.segments,
            timings: r.timings,
            verdict: r.verification.as_ref().map(|v| v.verdict.clone()),
            verification: r
                .verification
                .as_ref()
                .map(|v| v.conditions.clone())
                .unwrap_or_default(),
            notes: report_notes(prob),
            history: r.history.clone(),
        }
    }

    pub fn barrier_document(&self) -> Option<BarrierDocument> {
        self.barrier.clone().map(|barrier| BarrierDocument {
            schema: BARRIER_SCHEMA.to_string(),
            barrier,
        })
    }

    pub fn from_json(text: &str) -> Result<Self, DocumentError> {
        let doc: ReportDocument = serde_json::from_str(text).map_err(syntax)?;
        check_schema(&doc.schema, REPORT_SCHEMA)?;
        Ok(doc)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyDocument {
    pub schema: String,
    pub tool: ToolInfo,
    pub problem: String,
    pub verdict: Verdict,
    pub conditions: Vec<ConditionReport>,
    pub seconds: f64,
}

impl VerifyDocument {
    pub fn new(prob: &Problem, r: &VerifyReport) -> Self {
        VerifyDocument {
            schema: VERIFY_SCHEMA.to_string(),
            tool: ToolInfo::current(),
            problem: prob.name.clone(),
            verdict: r.verdict.clone(),
            conditions: r.conditions.clone(),
            seconds: r.seconds,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }
}
