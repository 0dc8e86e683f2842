//! Strict parsing of experiment configuration documents.
//!
//! Every violation is reported with the dotted path of the offending field, and parsing
//! keeps going after the first problem so one run shows all of them.

use std::collections::BTreeMap;
use std::fmt;

use forcedvi::disc_tq::QuadRule;
use forcedvi::systems::{self, BUILTIN, OPTIONAL};
use forcedvi::SolverSettings;
use serde::Serialize;
use serde_json::{Map, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Simulate,
    Order,
    Exactness,
    Correspond,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::Simulate => "simulate",
            ExperimentKind::Order => "order",
            ExperimentKind::Exactness => "exactness",
            ExperimentKind::Correspond => "correspond",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "simulate" => ExperimentKind::Simulate,
            "order" => ExperimentKind::Order,
            "exactness" => ExperimentKind::Exactness,
            "correspond" => ExperimentKind::Correspond,
            _ => return None,
        })
    }

    fn uses_grid(self) -> bool {
        matches!(self, ExperimentKind::Order | ExperimentKind::Correspond)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum DiscretizationKind {
    #[serde(rename = "linear")]
    Linear,
    #[serde(rename = "exact")]
    Exact,
    #[serde(rename = "truncated_exact")]
    TruncatedExact,
    #[serde(rename = "custom-quadrature")]
    CustomQuadrature,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaChoice {
    OneSided,
    Symmetric,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleChoice {
    Auto,
    Analytic,
    Numeric,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SystemConfig {
    pub name: String,
    pub params: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiscretizationConfig {
    pub kind: DiscretizationKind,
    pub order_r: Option<usize>,
    pub alpha: AlphaChoice,
    pub rule: Option<String>,
}

impl DiscretizationConfig {
    /// Quadrature rule used by the linear and custom-quadrature kinds.
    pub fn quad_rule(&self) -> QuadRule {
        self.rule.as_deref().and_then(parse_rule).unwrap_or(QuadRule::Midpoint)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    pub h: Option<f64>,
    pub h_grid: Option<Vec<f64>>,
    #[serde(rename = "N")]
    pub n_steps: Option<usize>,
    pub q0: Vec<f64>,
    pub v0: Vec<f64>,
    pub oracle: OracleChoice,
    pub global_horizon: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub system: SystemConfig,
    pub discretization: DiscretizationConfig,
    pub solver: SolverSettings,
    pub experiment: ExperimentSpec,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SchemaError {
    pub violations: Vec<Violation>,
}

impl SchemaError {
    pub fn single(path: &str, message: impl Into<String>) -> Self {
        Self { violations: vec![Violation { path: path.into(), message: message.into() }] }
    }

    pub fn mentions(&self, path: &str) -> bool {
        self.violations.iter().any(|v| v.path == path)
    }
}

impl fmt::Display for SchemaError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            let path = if v.path.is_empty() { "<root>" } else { &v.path };
            write!(f, "{path}: {}", v.message)?;
        }
        Ok(())
    }
}

impl std::error::Error for SchemaError {}

fn parse_rule(s: &str) -> Option<QuadRule> {
    match s {
        "rectangle" => Some(QuadRule::Rectangle),
        "trapezoid" => Some(QuadRule::Trapezoid),
        "midpoint" => Some(QuadRule::Midpoint),
        _ => {
            let k: usize = s.strip_prefix("gauss")?.parse().ok()?;
            (1..=20).contains(&k).then_some(QuadRule::Gauss(k))
        }
    }
}

fn join(path: &str, key: &str) -> String {
    if path.is_empty() {
        key.to_string()
    } else {
        format!("{path}.{key}")
    }
}

#[derive(Default)]
struct Checker {
    violations: Vec<Violation>,
}

impl Checker {
    fn fail(&mut self, path: &str, message: impl Into<String>) {
        self.violations.push(Violation { path: path.to_string(), message: message.into() });
    }

    fn object<'a>(&mut self, v: &'a Value, path: &str, allowed: &[&str]) -> Option<&'a Map<String, Value>> {
        let Some(map) = v.as_object() else {
            self.fail(path, "expected an object");
            return None;
        };
        for key in map.keys() {
            if !allowed.contains(&key.as_str()) {
                self.fail(&join(path, key), "unknown key");
            }
        }
        Some(map)
    }

    fn required<'a>(&mut self, map: &'a Map<String, Value>, path: &str, key: &str) -> Option<&'a Value> {
        let v = map.get(key);
        if v.is_none() {
            self.fail(&join(path, key), "missing required field");
        }
        v
    }

    fn number(&mut self, v: &Value, path: &str) -> Option<f64> {
        match v.as_f64() {
            Some(x) if x.is_finite() => Some(x),
            _ => {
                self.fail(path, "expected a finite number");
                None
            }
        }
    }

    fn positive(&mut self, v: &Value, path: &str) -> Option<f64> {
        let x = self.number(v, path)?;
        if x > 0.0 {
            Some(x)
        } else {
            self.fail(path, "must be positive");
            None
        }
    }

    fn integer(&mut self, v: &Value, path: &str, min: u64) -> Option<usize> {
        match v.as_u64() {
            Some(x) if x >= min => Some(x as usize),
            _ => {
                self.fail(path, format!("expected an integer >= {min}"));
                None
            }
        }
    }

    fn string<'a>(&mut self, v: &'a Value, path: &str) -> Option<&'a str> {
        let s = v.as_str();
        if s.is_none() {
            self.fail(path, "expected a string");
        }
        s
    }

    fn vector(&mut self, v: &Value, path: &str) -> Option<Vec<f64>> {
        match v {
            Value::Array(items) => {
                let out: Vec<Option<f64>> =
                    items.iter().enumerate().map(|(i, x)| self.number(x, &format!("{path}[{i}]"))).collect();
                out.into_iter().collect()
            }
            _ => self.number(v, path).map(|x| vec![x]),
        }
    }
}

/// Parses and validates a configuration document.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, SchemaError> {
    let root: Value = serde_json::from_str(text).map_err(|e| SchemaError::single("", format!("invalid JSON: {e}")))?;
    let mut c = Checker::default();
    let Some(top) = c.object(&root, "", &["system", "discretization", "solver", "experiment"]) else {
        return Err(SchemaError { violations: c.violations });
    };

    let system = c.required(top, "", "system").and_then(|v| parse_system(&mut c, v));
    let experiment_value = c.required(top, "", "experiment");
    let kind = experiment_value.and_then(|v| v.as_object()).and_then(|m| m.get("kind")).and_then(Value::as_str).and_then(ExperimentKind::parse);

    let discretization = match top.get("discretization") {
        Some(v) => parse_discretization(&mut c, v, system.as_ref()),
        None if kind == Some(ExperimentKind::Exactness) => {
            Some(DiscretizationConfig { kind: DiscretizationKind::Exact, order_r: None, alpha: AlphaChoice::OneSided, rule: None })
        }
        None => {
            c.fail("discretization", "missing required field");
            None
        }
    };
    let solver = match top.get("solver") {
        Some(v) => parse_solver(&mut c, v),
        None => Some(SolverSettings::default()),
    };
    let dim = system.as_ref().and_then(|s| systems::by_name(&s.name, &s.params).ok()).map(|s| s.dim());
    let experiment = experiment_value.and_then(|v| parse_experiment(&mut c, v, dim));

    match (system, discretization, solver, experiment) {
        (Some(system), Some(discretization), Some(solver), Some(experiment)) if c.violations.is_empty() => {
            Ok(ExperimentConfig { system, discretization, solver, experiment })
        }
        _ => Err(SchemaError { violations: c.violations }),
    }
}

fn parse_system(c: &mut Checker, v: &Value) -> Option<SystemConfig> {
    let path = "system";
    let map = c.object(v, path, &["name", "params"])?;
    let name = c.required(map, path, "name").and_then(|n| c.string(n, "system.name"))?.to_string();
    let Some(required) = BUILTIN.iter().find(|(n, _)| *n == name).map(|(_, r)| *r) else {
        let known: Vec<&str> = BUILTIN.iter().map(|(n, _)| *n).collect();
        c.fail("system.name", format!("unknown system `{name}`; expected one of {}", known.join(", ")));
        return None;
    };
    let before = c.violations.len();
    let mut params = BTreeMap::new();
    match map.get("params") {
        Some(pv) => {
            if let Some(pm) = pv.as_object() {
                for (key, value) in pm {
                    let p = format!("system.params.{key}");
                    let known = required.contains(&key.as_str()) || OPTIONAL.iter().any(|(n, k, _)| *n == name && k == key);
                    if !known {
                        c.fail(&p, format!("unknown parameter for `{name}`"));
                    } else if let Some(x) = c.number(value, &p) {
                        params.insert(key.clone(), x);
                    }
                }
                for key in required {
                    if !pm.contains_key(*key) {
                        c.fail(&format!("system.params.{key}"), "missing required parameter");
                    }
                }
            } else {
                c.fail("system.params", "expected an object");
            }
        }
        None => {
            for key in required {
                c.fail(&format!("system.params.{key}"), "missing required parameter");
            }
        }
    }
    if c.violations.len() > before {
        return None;
    }
    if let Err(e) = systems::by_name(&name, &params) {
        c.fail("system", e.to_string());
        return None;
    }
    Some(SystemConfig { name, params })
}

fn parse_discretization(c: &mut Checker, v: &Value, system: Option<&SystemConfig>) -> Option<DiscretizationConfig> {
    let path = "discretization";
    let map = c.object(v, path, &["kind", "order_r", "alpha", "rule"])?;
    let before = c.violations.len();
    let kind = c.required(map, path, "kind").and_then(|k| c.string(k, "discretization.kind")).and_then(|k| {
        let kind = match k {
            "linear" => DiscretizationKind::Linear,
            "exact" => DiscretizationKind::Exact,
            "truncated_exact" => DiscretizationKind::TruncatedExact,
            "custom-quadrature" => DiscretizationKind::CustomQuadrature,
            _ => {
                c.fail("discretization.kind", "expected one of linear, exact, truncated_exact, custom-quadrature");
                return None;
            }
        };
        Some(kind)
    });
    let order_r = map.get("order_r").and_then(|r| c.integer(r, "discretization.order_r", 1));
    let alpha = match map.get("alpha") {
        None => Some(AlphaChoice::OneSided),
        Some(a) => match c.string(a, "discretization.alpha") {
            Some("one_sided") => Some(AlphaChoice::OneSided),
            Some("symmetric") => Some(AlphaChoice::Symmetric),
            Some(_) => {
                c.fail("discretization.alpha", "expected one_sided or symmetric");
                None
            }
            None => None,
        },
    };
    let rule = match map.get("rule") {
        None => None,
        Some(r) => c.string(r, "discretization.rule").and_then(|s| {
            if parse_rule(s).is_none() {
                c.fail("discretization.rule", "expected rectangle, trapezoid, midpoint or gauss1..gauss20");
                None
            } else {
                Some(s.to_string())
            }
        }),
    };
    let kind = kind?;
    match kind {
        DiscretizationKind::CustomQuadrature if !map.contains_key("rule") => {
            c.fail("discretization.rule", "required for custom-quadrature");
        }
        DiscretizationKind::Linear | DiscretizationKind::Exact | DiscretizationKind::TruncatedExact if map.contains_key("rule") => {
            c.fail("discretization.rule", "only valid for custom-quadrature");
        }
        _ => {}
    }
    if kind == DiscretizationKind::TruncatedExact {
        if !map.contains_key("order_r") {
            c.fail("discretization.order_r", "required for truncated_exact");
        }
        if alpha == Some(AlphaChoice::Symmetric) {
            c.fail("discretization.alpha", "truncated_exact is defined for the one-sided pair only");
        }
        if let Some(sys) = system {
            if sys.name != "damped_particle" {
                c.fail("discretization.kind", "truncated_exact is only available for damped_particle");
            }
        }
    }
    if c.violations.len() > before {
        return None;
    }
    Some(DiscretizationConfig { kind, order_r, alpha: alpha?, rule })
}

fn parse_solver(c: &mut Checker, v: &Value) -> Option<SolverSettings> {
    let path = "solver";
    let map = c.object(v, path, &["newton_tol", "newton_max_iter", "fd_step_scale", "quad_tol", "ode_tol"])?;
    let before = c.violations.len();
    let mut s = SolverSettings::default();
    for (key, slot) in [
        ("newton_tol", &mut s.newton_tol),
        ("fd_step_scale", &mut s.fd_step_scale),
        ("quad_tol", &mut s.quad_tol),
        ("ode_tol", &mut s.ode_tol),
    ] {
        if let Some(x) = map.get(key).and_then(|x| c.positive(x, &join(path, key))) {
            *slot = x;
        }
    }
    if let Some(n) = map.get("newton_max_iter").and_then(|x| c.integer(x, "solver.newton_max_iter", 1)) {
        s.newton_max_iter = n;
    }
    (c.violations.len() == before).then_some(s)
}

fn parse_experiment(c: &mut Checker, v: &Value, dim: Option<usize>) -> Option<ExperimentSpec> {
    let path = "experiment";
    let map = c.object(v, path, &["kind", "h", "h_grid", "N", "initial_state", "oracle", "global_horizon"])?;
    let before = c.violations.len();
    let kind = c.required(map, path, "kind").and_then(|k| c.string(k, "experiment.kind")).and_then(|k| {
        let parsed = ExperimentKind::parse(k);
        if parsed.is_none() {
            c.fail("experiment.kind", "expected one of simulate, order, exactness, correspond");
        }
        parsed
    })?;

    let (mut h, mut h_grid, mut n_steps) = (None, None, None);
    if kind.uses_grid() {
        for key in ["h", "N"] {
            if map.contains_key(key) {
                c.fail(&join(path, key), format!("not used by the {} experiment; give h_grid", kind.as_str()));
            }
        }
        h_grid = c.required(map, path, "h_grid").and_then(|g| parse_grid(c, g));
    } else {
        if map.contains_key("h_grid") {
            c.fail("experiment.h_grid", format!("not used by the {} experiment; give h", kind.as_str()));
        }
        h = c.required(map, path, "h").and_then(|x| c.positive(x, "experiment.h"));
        n_steps = c.required(map, path, "N").and_then(|x| c.integer(x, "experiment.N", 2));
    }
    let global_horizon = match map.get("global_horizon") {
        Some(_) if kind != ExperimentKind::Order => {
            c.fail("experiment.global_horizon", "only valid for the order experiment");
            None
        }
        Some(x) => c.positive(x, "experiment.global_horizon"),
        None => None,
    };
    let oracle = match map.get("oracle") {
        None => Some(OracleChoice::Auto),
        Some(o) => match c.string(o, "experiment.oracle") {
            Some("auto") => Some(OracleChoice::Auto),
            Some("analytic") => Some(OracleChoice::Analytic),
            Some("numeric") => Some(OracleChoice::Numeric),
            Some(_) => {
                c.fail("experiment.oracle", "expected auto, analytic or numeric");
                None
            }
            None => None,
        },
    };
    let state = c.required(map, path, "initial_state").and_then(|s| {
        let sp = "experiment.initial_state";
        let m = c.object(s, sp, &["q", "v"])?;
        let q = c.required(m, sp, "q").and_then(|x| c.vector(x, "experiment.initial_state.q"));
        let v = c.required(m, sp, "v").and_then(|x| c.vector(x, "experiment.initial_state.v"));
        let (q, v) = (q?, v?);
        if let Some(n) = dim {
            for (key, len) in [("q", q.len()), ("v", v.len())] {
                if len != n {
                    c.fail(&format!("{sp}.{key}"), format!("expected {n} component(s), got {len}"));
                }
            }
        }
        Some((q, v))
    });
    if c.violations.len() > before {
        return None;
    }
    let (q0, v0) = state?;
    Some(ExperimentSpec { kind, h, h_grid, n_steps, q0, v0, oracle: oracle?, global_horizon })
}

fn parse_grid(c: &mut Checker, v: &Value) -> Option<Vec<f64>> {
    let path = "experiment.h_grid";
    let Value::Array(items) = v else {
        c.fail(path, "expected an array of step sizes");
        return None;
    };
    if items.is_empty() {
        c.fail(path, "must not be empty");
        return None;
    }
    let grid: Vec<f64> = items
        .iter()
        .enumerate()
        .map(|(i, x)| c.positive(x, &format!("{path}[{i}]")))
        .collect::<Option<Vec<f64>>>()?;
    if grid.windows(2).any(|w| w[1] >= w[0]) {
        c.fail(path, "step sizes must be strictly decreasing");
        return None;
    }
    Some(grid)
}

#[cfg(test)]
mod tests {
    use super::*;

    const ORDER: &str = r#"{
        "system": {"name": "damped_particle", "params": {"alpha": 1.0}},
        "discretization": {"kind": "truncated_exact", "order_r": 2},
        "experiment": {"kind": "order", "h_grid": [0.2, 0.1, 0.05, 0.025], "initial_state": {"q": 0.0, "v": 1.0}}
    }"#;

    #[test]
    fn minimal_order_config_parses() {
        let cfg = parse_config(ORDER).unwrap();
        assert_eq!(cfg.experiment.kind, ExperimentKind::Order);
        assert_eq!(cfg.discretization.order_r, Some(2));
        assert_eq!(cfg.experiment.h_grid.as_ref().unwrap().len(), 4);
        assert_eq!(cfg.solver, SolverSettings::default());
    }

    #[test]
    fn missing_parameter_is_reported_by_path() {
        let text = ORDER.replace(r#""alpha": 1.0"#, "");
        let err = parse_config(&text).unwrap_err();
        assert!(err.mentions("system.params.alpha"), "{err}");
    }

    #[test]
    fn scalar_grid_is_rejected() {
        let text = ORDER.replace("[0.2, 0.1, 0.05, 0.025]", "0.1");
        let err = parse_config(&text).unwrap_err();
        assert!(err.mentions("experiment.h_grid"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected_everywhere() {
        let text = ORDER.replace(r#""order_r": 2"#, r#""order_r": 2, "colour": "red""#).replace(r#""kind": "order""#, r#""kind": "order", "extra": 1"#);
        let err = parse_config(&text).unwrap_err();
        assert!(err.mentions("discretization.colour"));
        assert!(err.mentions("experiment.extra"));
    }

    #[test]
    fn truncated_exact_needs_the_particle() {
        let text = ORDER.replace(r#""name": "damped_particle", "params": {"alpha": 1.0}"#, r#""name": "forced_oscillator", "params": {"stiffness": 1.0, "damping": 0.1}"#);
        assert!(parse_config(&text).unwrap_err().mentions("discretization.kind"));
    }

    #[test]
    fn exactness_defaults_to_exact_discretization() {
        let text = r#"{"system": {"name": "damped_particle", "params": {"alpha": 1.0}},
            "experiment": {"kind": "exactness", "h": 0.25, "N": 8, "initial_state": {"q": [0.0], "v": [1.0]}}}"#;
        let cfg = parse_config(text).unwrap();
        assert_eq!(cfg.discretization.kind, DiscretizationKind::Exact);
    }

    #[test]
    fn solver_overrides_and_bad_values() {
        let text = ORDER.replace(r#""experiment""#, r#""solver": {"newton_tol": 1e-11, "ode_tol": -1}, "experiment""#);
        let err = parse_config(&text).unwrap_err();
        assert!(err.mentions("solver.ode_tol"));
        let ok = ORDER.replace(r#""experiment""#, r#""solver": {"newton_tol": 1e-11}, "experiment""#);
        assert_eq!(parse_config(&ok).unwrap().solver.newton_tol, 1e-11);
    }

    #[test]
    fn rules() {
        assert_eq!(parse_rule("gauss3"), Some(QuadRule::Gauss(3)));
        assert_eq!(parse_rule("gauss0"), None);
        assert_eq!(parse_rule("simpson"), None);
    }

    #[test]
    fn invalid_json() {
        assert!(parse_config("{").unwrap_err().mentions(""));
    }
}
