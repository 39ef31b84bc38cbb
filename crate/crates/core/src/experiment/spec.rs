//! Experiment spec files: strict JSON with every problem reported at once.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::datagen::Scenario;
use crate::dist::FiniteDistribution;
use crate::error::{Result, RmacError};
use crate::mechanisms::{Mechanism, MechanismSpec};
use crate::oracle::DEFAULT_BUDGET;
use crate::solver::{Mode, RfpConfig};
use crate::space::Space;
use crate::valuation::ValuationSpec;

pub const SCHEMA_VERSION: u64 = 1;

/// One problem found in a spec file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpecIssue {
    /// JSON path such as `scenario.original.reserve` or `epsilons[1]`.
    pub path: String,
    /// Best-effort line of the offending key.
    pub line: Option<usize>,
    pub message: String,
}

pub fn render_issues(issues: &[SpecIssue]) -> String {
    let mut out = format!("{} problem(s) in experiment spec", issues.len());
    for i in issues {
        let at = i.line.map_or(String::new(), |l| format!(" (line {l})"));
        let path = if i.path.is_empty() { "<root>" } else { &i.path };
        out.push_str(&format!("\n  {path}{at}: {}", i.message));
    }
    out
}

/// Type distribution as written in spec files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TypeDistributionConfig {
    Uniform,
    /// A single type, named by its grid value or label.
    PointMass { value: Value },
    /// One weight per type in type-space order.
    Weights { weights: Vec<f64> },
}

impl TypeDistributionConfig {
    pub fn resolve(&self, types: &Space) -> Result<FiniteDistribution> {
        match self {
            TypeDistributionConfig::Uniform => Ok(FiniteDistribution::uniform(types.len())),
            TypeDistributionConfig::Weights { weights } => {
                if weights.len() != types.len() {
                    return Err(RmacError::InvalidDistribution(format!(
                        "{} weights for {} types",
                        weights.len(),
                        types.len()
                    )));
                }
                FiniteDistribution::new(weights.clone())
            }
            TypeDistributionConfig::PointMass { value } => {
                let index = match (value, types) {
                    (Value::Number(x), Space::Grid(g)) => x.as_f64().and_then(|x| g.index_of(x)),
                    (Value::String(s), Space::Labels(l)) => l.index_of(s),
                    _ => None,
                };
                let index = index.ok_or_else(|| RmacError::InvalidDistribution(format!("{value} is not a type")))?;
                FiniteDistribution::point_mass(types.len(), index)
            }
        }
    }
}

/// Solver settings a spec may override; the rest keep their defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverOverrides {
    pub max_iters: Option<usize>,
    pub conv_tol: Option<f64>,
    pub conv_window: Option<usize>,
    pub mc_samples: Option<usize>,
    pub cert_tol: Option<f64>,
    pub trace: Option<bool>,
}

impl SolverOverrides {
    pub fn config(&self, epsilon: f64, mode: Mode, valuation: ValuationSpec, seed: u64) -> RfpConfig {
        let mut cfg = RfpConfig::new(epsilon, mode, valuation, seed);
        if let Some(x) = self.max_iters {
            cfg.max_iters = x;
        }
        if let Some(x) = self.conv_tol {
            cfg.conv_tol = x;
        }
        if let Some(x) = self.conv_window {
            cfg.conv_window = x;
        }
        if let Some(x) = self.mc_samples {
            cfg.mc_samples = x;
        }
        cfg.cert_tol = self.cert_tol;
        cfg.trace = self.trace.unwrap_or(false);
        cfg
    }
}

/// A counterfactual game and the tag that names it in outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    pub tag: String,
    pub mechanism: MechanismSpec,
}

/// Default tag: the kind, plus the reserve for auctions.
pub fn default_tag(m: &MechanismSpec) -> String {
    if m.kind.is_auction() {
        format!("{}_r{}", m.kind.name(), m.reserve)
    } else {
        m.kind.name().to_string()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    /// `counterfactual` holds the first variant.
    pub scenario: Scenario,
    pub variants: Vec<Variant>,
    pub epsilons: Vec<f64>,
    pub modes: Vec<Mode>,
    pub replicates: usize,
    pub base_seed: u64,
    pub valuation: ValuationSpec,
    pub solver: SolverOverrides,
    pub outputs: Option<PathBuf>,
    pub oracle_budget: u128,
}

impl ExperimentSpec {
    pub fn cells_per_replicate(&self) -> usize {
        self.variants.len() * self.epsilons.len() * self.modes.len()
    }
}

const TOP: &[&str] = &[
    "schema_version",
    "scenario",
    "counterfactuals",
    "epsilons",
    "modes",
    "replicates",
    "base_seed",
    "valuation",
    "solver",
    "outputs",
    "oracle_budget",
];
const SCENARIO: &[&str] = &["name", "original", "counterfactual", "type_distribution", "n_data"];
const VARIANT: &[&str] = &["tag", "mechanism"];

/// Line of the deepest key of `path` that can be found in `text`.
fn locate(text: &str, path: &str) -> Option<usize> {
    let mut offset = 0;
    let mut found = None;
    for seg in path.split('.') {
        let key = seg.split('[').next().unwrap_or(seg);
        if key.is_empty() {
            continue;
        }
        let needle = format!("\"{key}\"");
        let mut from = offset;
        let hit = loop {
            let Some(i) = text[from..].find(&needle) else { break None };
            let end = from + i + needle.len();
            if text[end..].trim_start().starts_with(':') {
                break Some(end);
            }
            from = end;
        };
        match hit {
            Some(end) => {
                offset = end;
                found = Some(end);
            }
            None => break,
        }
    }
    found.map(|o| text[..o].matches('\n').count() + 1)
}

fn join(path: &str, key: &str) -> String {
    if path.is_empty() {
        key.to_string()
    } else {
        format!("{path}.{key}")
    }
}

fn file_safe(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
}

struct Checker<'a> {
    text: &'a str,
    issues: Vec<SpecIssue>,
}

impl Checker<'_> {
    fn issue(&mut self, path: &str, message: impl Into<String>) {
        self.issues.push(SpecIssue { path: path.to_string(), line: locate(self.text, path), message: message.into() });
    }

    /// Checks keys of an object; returns it when `v` is one.
    fn object<'v>(&mut self, v: &'v Value, path: &str, allowed: &[&str], required: &[&str]) -> Option<&'v Map<String, Value>> {
        let Some(map) = v.as_object() else {
            self.issue(path, "expected an object");
            return None;
        };
        for k in map.keys() {
            if !allowed.contains(&k.as_str()) {
                self.issue(&join(path, k), format!("unknown field `{k}`; expected one of: {}", allowed.join(", ")));
            }
        }
        for r in required {
            if !map.contains_key(*r) {
                self.issue(&join(path, r), format!("missing required field `{r}`"));
            }
        }
        Some(map)
    }

    fn typed<T: DeserializeOwned>(&mut self, v: Option<&Value>, path: &str) -> Option<T> {
        let v = v?;
        match serde_json::from_value(v.clone()) {
            Ok(x) => Some(x),
            Err(e) => {
                self.issue(path, e.to_string());
                None
            }
        }
    }

    fn mechanism(&mut self, v: Option<&Value>, path: &str) -> Option<MechanismSpec> {
        let spec: MechanismSpec = self.typed(v, path)?;
        match Mechanism::new(spec.clone()) {
            Ok(_) => Some(spec),
            Err(e) => {
                self.issue(path, e.to_string());
                None
            }
        }
    }
}

pub fn parse_spec(path: &Path) -> Result<ExperimentSpec> {
    let text = std::fs::read_to_string(path).map_err(|e| RmacError::Io(format!("{}: {e}", path.display())))?;
    parse_spec_str(&text)
}

/// Parses and validates a spec, collecting every problem found.
pub fn parse_spec_str(text: &str) -> Result<ExperimentSpec> {
    let root: Value = serde_json::from_str(text).map_err(|e| {
        RmacError::InvalidSpec(vec![SpecIssue {
            path: String::new(),
            line: Some(e.line()),
            message: format!("malformed JSON: {e}"),
        }])
    })?;
    let mut c = Checker { text, issues: Vec::new() };
    let Some(top) = c.object(&root, "", TOP, &["schema_version", "scenario", "epsilons", "modes", "valuation"]) else {
        return Err(RmacError::InvalidSpec(c.issues));
    };

    match top.get("schema_version").map(Value::as_u64) {
        Some(Some(SCHEMA_VERSION)) | None => {}
        Some(_) => c.issue("schema_version", format!("schema_version must be {SCHEMA_VERSION}")),
    }

    // Scenario and counterfactual variants.
    let mut original = None;
    let mut name = None;
    let mut n_data = None;
    let mut dist_cfg = Some(TypeDistributionConfig::Uniform);
    let mut own_counterfactual = None;
    if let Some(sc) = top.get("scenario") {
        if let Some(map) = c.object(sc, "scenario", SCENARIO, &["name", "original", "n_data"]) {
            name = c.typed::<String>(map.get("name"), "scenario.name");
            if let Some(n) = &name {
                if !file_safe(n) {
                    c.issue("scenario.name", "name may only use letters, digits, '_', '-' and '.'");
                }
            }
            original = c.mechanism(map.get("original"), "scenario.original");
            own_counterfactual = c.mechanism(map.get("counterfactual"), "scenario.counterfactual");
            n_data = c.typed::<usize>(map.get("n_data"), "scenario.n_data");
            if n_data.is_some_and(|n| n < 2) {
                c.issue("scenario.n_data", "n_data must be at least 2");
            }
            if map.contains_key("type_distribution") {
                dist_cfg = c.typed(map.get("type_distribution"), "scenario.type_distribution");
            }
        }
    }
    let mut variants = Vec::new();
    let mut variants_ok = true;
    match top.get("counterfactuals") {
        Some(Value::Array(list)) => {
            if list.is_empty() {
                c.issue("counterfactuals", "counterfactuals must not be empty");
            }
            for (i, v) in list.iter().enumerate() {
                let path = format!("counterfactuals[{i}]");
                let Some(map) = c.object(v, &path, VARIANT, &["mechanism"]) else {
                    variants_ok = false;
                    continue;
                };
                let mech = c.mechanism(map.get("mechanism"), &format!("{path}.mechanism"));
                let tag = if map.contains_key("tag") { c.typed::<String>(map.get("tag"), &format!("{path}.tag")) } else { None };
                match mech {
                    Some(m) => variants.push(Variant { tag: tag.unwrap_or_else(|| default_tag(&m)), mechanism: m }),
                    None => variants_ok = false,
                }
            }
        }
        Some(_) => {
            c.issue("counterfactuals", "expected an array of {tag, mechanism} objects");
            variants_ok = false;
        }
        None => match own_counterfactual.clone() {
            Some(m) => variants.push(Variant { tag: default_tag(&m), mechanism: m }),
            None => {
                if top.get("scenario").and_then(|s| s.get("counterfactual")).is_none() {
                    c.issue("scenario.counterfactual", "give scenario.counterfactual or a counterfactuals list");
                }
                variants_ok = false;
            }
        },
    }
    for (i, v) in variants.iter().enumerate() {
        if !file_safe(&v.tag) {
            c.issue(&format!("counterfactuals[{i}].tag"), format!("tag {:?} may only use letters, digits, '_', '-' and '.'", v.tag));
        }
        if variants[..i].iter().any(|w| w.tag == v.tag) {
            c.issue(&format!("counterfactuals[{i}].tag"), format!("duplicate tag {:?}", v.tag));
        }
        if let Some(o) = &original {
            if o.type_space != v.mechanism.type_space {
                c.issue(&format!("counterfactuals[{i}].mechanism"), "type space differs from scenario.original");
            }
        }
    }

    // Sweep.
    let epsilons: Option<Vec<f64>> = c.typed(top.get("epsilons"), "epsilons");
    if let Some(eps) = &epsilons {
        if eps.is_empty() {
            c.issue("epsilons", "epsilons must not be empty");
        }
        for (i, &e) in eps.iter().enumerate() {
            if !(e >= 0.0) || !e.is_finite() {
                c.issue(&format!("epsilons[{i}]"), format!("epsilon must be finite and >= 0, got {e}"));
            }
            if i > 0 && !(e > eps[i - 1]) {
                c.issue(&format!("epsilons[{i}]"), format!("epsilons must be sorted ascending without repeats ({} then {e})", eps[i - 1]));
            }
        }
    }
    let modes: Option<Vec<Mode>> = c.typed(top.get("modes"), "modes");
    if let Some(ms) = &modes {
        if ms.is_empty() {
            c.issue("modes", "modes must not be empty");
        }
        for (i, m) in ms.iter().enumerate() {
            if ms[..i].contains(m) {
                c.issue(&format!("modes[{i}]"), format!("duplicate mode {}", m.name()));
            }
        }
    }
    let replicates = if top.contains_key("replicates") { c.typed::<usize>(top.get("replicates"), "replicates") } else { Some(1) };
    if replicates == Some(0) {
        c.issue("replicates", "replicates must be at least 1");
    }
    let base_seed = if top.contains_key("base_seed") { c.typed::<u64>(top.get("base_seed"), "base_seed") } else { Some(0) };
    let valuation: Option<ValuationSpec> = match top.get("valuation") {
        Some(v) => c.typed(Some(v), "valuation"),
        None => None,
    };
    if let Some(v) = &valuation {
        for (i, var) in variants.iter().enumerate() {
            if let Ok(m) = Mechanism::new(var.mechanism.clone()) {
                if let Err(e) = v.check(&m) {
                    c.issue(&format!("counterfactuals[{i}].mechanism"), e.to_string());
                }
            }
        }
        if v.change {
            if let Some(Ok(g)) = original.clone().map(Mechanism::new) {
                if let Err(e) = v.check(&g) {
                    c.issue("valuation", format!("a change valuation also needs the original game: {e}"));
                }
            }
        }
    }
    let solver: Option<SolverOverrides> =
        if top.contains_key("solver") { c.typed(top.get("solver"), "solver") } else { Some(SolverOverrides::default()) };
    if let (Some(s), Some(v)) = (&solver, &valuation) {
        if let Err(e) = s.config(0.0, Mode::Point, *v, 0).validate() {
            c.issue("solver", e.to_string());
        }
    }
    let outputs = if top.contains_key("outputs") { c.typed::<PathBuf>(top.get("outputs"), "outputs").map(Some) } else { Some(None) };
    let oracle_budget =
        if top.contains_key("oracle_budget") { c.typed::<u128>(top.get("oracle_budget"), "oracle_budget") } else { Some(DEFAULT_BUDGET) };

    let type_distribution = match (&original, &dist_cfg) {
        (Some(o), Some(d)) => match d.resolve(&o.type_space) {
            Ok(d) => Some(d),
            Err(e) => {
                c.issue("scenario.type_distribution", e.to_string());
                None
            }
        },
        _ => None,
    };

    if !c.issues.is_empty() {
        return Err(RmacError::InvalidSpec(c.issues));
    }
    let bad = || RmacError::InvalidSpec(vec![SpecIssue { path: String::new(), line: None, message: "incomplete spec".into() }]);
    if !variants_ok || variants.is_empty() {
        return Err(bad());
    }
    let scenario = Scenario {
        name: name.ok_or_else(bad)?,
        original: original.ok_or_else(bad)?,
        counterfactual: variants[0].mechanism.clone(),
        type_distribution: type_distribution.ok_or_else(bad)?,
        n_data: n_data.ok_or_else(bad)?,
    };
    scenario.validate()?;
    Ok(ExperimentSpec {
        scenario,
        variants,
        epsilons: epsilons.ok_or_else(bad)?,
        modes: modes.ok_or_else(bad)?,
        replicates: replicates.ok_or_else(bad)?,
        base_seed: base_seed.ok_or_else(bad)?,
        valuation: valuation.ok_or_else(bad)?,
        solver: solver.ok_or_else(bad)?,
        outputs: outputs.ok_or_else(bad)?,
        oracle_budget: oracle_budget.ok_or_else(bad)?,
    })
}
