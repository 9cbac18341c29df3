//! Scenario files: a strict JSON description of a kernel, a condenser and
//! the solver and sweep settings used to run experiments on it.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diagnostics::NODE_CAP;
use crate::energy::ContextOptions;
use crate::geometry::{generate_nodes, Shape, ShapeSpec};
use crate::kernel::KernelSpec;
use crate::measures::{Atom, Condenser, Plate, Sign, SignedMeasure, ValidationFailure};
use crate::solver::{Mode, SolveOptions};
use crate::tolerances::{DEFAULT_SIGMA, GAP_REL, RIDGE_CAP, RIDGE_START};

pub const SPEC_VERSION: &str = "1";

/// One problem found while checking a scenario.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Issue {
    pub code: String,
    /// JSON path of the offending value, e.g. `$.a[1]`.
    pub path: String,
    pub message: String,
}

impl Issue {
    fn new(code: &str, path: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            code: code.to_string(),
            path: path.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} at {}: {}", self.code, self.path, self.message)
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}", format_issues(.0))]
    Invalid(Vec<Issue>),
}

impl ScenarioError {
    pub fn issues(&self) -> &[Issue] {
        match self {
            ScenarioError::Invalid(v) => v,
            ScenarioError::Io { .. } => &[],
        }
    }
}

fn format_issues(issues: &[Issue]) -> String {
    issues.iter().map(Issue::to_string).collect::<Vec<_>>().join("; ")
}

/// Density `g`: either `"constant:<c>"` or one list of values per plate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GSpec {
    Named(String),
    PerPlate(Vec<Vec<f64>>),
}

impl Default for GSpec {
    fn default() -> Self {
        GSpec::Named("constant:1".into())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlateSpec {
    pub shape: Shape,
    /// `1` or `-1`.
    pub sign: Sign,
    /// Required except for rotational bodies, which default to their ring layout.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node_count: Option<usize>,
    /// Defaults to the scenario seed plus the plate index.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default)]
    pub unbounded: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncation_radius: Option<f64>,
}

fn default_gap_tol() -> f64 {
    GAP_REL
}

fn default_sigma() -> f64 {
    DEFAULT_SIGMA
}

fn default_ridge_cap() -> f64 {
    RIDGE_CAP
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default = "default_gap_tol")]
    pub gap_tol: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iters: Option<usize>,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    #[serde(default = "default_ridge_cap")]
    pub ridge_cap: f64,
    #[serde(default = "default_true")]
    pub polish: bool,
    #[serde(default)]
    pub mode: Mode,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            gap_tol: GAP_REL,
            max_iters: None,
            sigma: DEFAULT_SIGMA,
            ridge_cap: RIDGE_CAP,
            polish: true,
            mode: Mode::Full,
        }
    }
}

fn default_node_cap() -> usize {
    NODE_CAP
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub radii: Vec<f64>,
    /// Defaults to the first radius.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window_radius: Option<f64>,
    #[serde(default = "default_node_cap")]
    pub node_cap: usize,
    /// Values of `a_ell` for the solvable-cone scan; empty skips the scan.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub a_ell_grid: Vec<f64>,
}

fn spec_version() -> String {
    SPEC_VERSION.to_string()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default = "spec_version")]
    pub spec_version: String,
    pub kernel: KernelSpec,
    pub plates: Vec<PlateSpec>,
    #[serde(default)]
    pub chi: Vec<Atom>,
    pub a: Vec<f64>,
    #[serde(default)]
    pub g: GSpec,
    #[serde(default = "default_true")]
    pub g_bounded: bool,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
    /// Plate examined by `diagnose`, `sweep` and auxiliary solves. Defaults
    /// to the unbounded plate, else the last negative plate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ell: Option<usize>,
    /// Plate used by `project` and `equilibrium`.
    #[serde(default)]
    pub target_plate: usize,
    #[serde(default)]
    pub seed: u64,
}

/// Reads, parses and validates a scenario file.
pub fn parse_scenario(path: &Path) -> Result<Scenario, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Scenario::parse(&text)
}

fn plate_path(i: usize) -> String {
    format!("$.plates[{i}]")
}

fn failure_path(f: &ValidationFailure) -> String {
    match *f {
        ValidationFailure::NoPlates => "$.plates".into(),
        ValidationFailure::PlateEmpty { plate } => plate_path(plate),
        ValidationFailure::DimensionMismatch { plate } => format!("{}.shape", plate_path(plate)),
        ValidationFailure::ALengthMismatch { .. } => "$.a".into(),
        ValidationFailure::APositiveViolated { plate } => format!("$.a[{plate}]"),
        ValidationFailure::GShapeMismatch { plate } => format!("$.g[{plate}]"),
        ValidationFailure::GInfNotPositive { plate, node } => format!("$.g[{plate}][{node}]"),
        ValidationFailure::PlatesNotSeparated { negative, .. } => plate_path(negative),
        ValidationFailure::ChiNotFinite { atom }
        | ValidationFailure::ChiPlusMeetsNegativePlates { atom, .. }
        | ValidationFailure::ChiMinusMeetsPositivePlates { atom, .. } => format!("$.chi[{atom}]"),
        ValidationFailure::UnboundedPlateNotNegative { plate } => format!("{}.unbounded", plate_path(plate)),
    }
}

impl Scenario {
    /// Parses without semantic checks; unknown fields are still rejected.
    pub fn parse_raw(text: &str) -> Result<Self, ScenarioError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let path = if path == "." { "$".to_string() } else { format!("$.{path}") };
            ScenarioError::Invalid(vec![Issue::new("schema", path, e.inner().to_string())])
        })
    }

    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        Self::parse_raw(text)?.validated()
    }

    /// Checks the scenario and fills plate defaults (node counts, seeds) so
    /// that the result re-parses to the same condenser.
    pub fn validated(mut self) -> Result<Self, ScenarioError> {
        let mut issues = Vec::new();
        if self.spec_version != SPEC_VERSION {
            issues.push(Issue::new(
                "unsupported_spec_version",
                "$.spec_version",
                format!("expected \"{SPEC_VERSION}\", found \"{}\"", self.spec_version),
            ));
        }
        if let Err(e) = self.kernel.check() {
            issues.push(Issue::new("invalid_kernel", "$.kernel", e.to_string()));
        }
        let s = &self.solver;
        if !(s.gap_tol > 0.0 && s.gap_tol.is_finite()) {
            issues.push(Issue::new("invalid_option", "$.solver.gap_tol", "must be positive"));
        }
        if !(s.sigma > 0.0 && s.sigma.is_finite()) {
            issues.push(Issue::new("invalid_option", "$.solver.sigma", "must be positive"));
        }
        if !(s.ridge_cap >= RIDGE_START && s.ridge_cap.is_finite()) {
            issues.push(Issue::new(
                "invalid_option",
                "$.solver.ridge_cap",
                format!("must be at least {RIDGE_START:e}"),
            ));
        }
        if s.max_iters == Some(0) {
            issues.push(Issue::new("invalid_option", "$.solver.max_iters", "must be positive"));
        }
        let seed = self.seed;
        for (i, p) in self.plates.iter_mut().enumerate() {
            if let Some(r) = p.truncation_radius {
                if !p.unbounded {
                    issues.push(Issue::new(
                        "truncation_without_unbounded",
                        format!("{}.truncation_radius", plate_path(i)),
                        "only unbounded plates carry a truncation radius",
                    ));
                }
                if let Shape::RotationalBody { truncation_radius, .. } = &mut p.shape {
                    *truncation_radius = r;
                }
            }
            if p.unbounded && p.truncation_radius.is_none() {
                match p.shape {
                    Shape::RotationalBody { truncation_radius, .. } => p.truncation_radius = Some(truncation_radius),
                    _ => issues.push(Issue::new(
                        "truncation_radius_missing",
                        plate_path(i),
                        "unbounded plates need a truncation radius",
                    )),
                }
            }
            if p.node_count.is_none() {
                p.node_count = p.shape.natural_node_count();
            }
            if p.node_count.is_none() {
                issues.push(Issue::new(
                    "node_count_missing",
                    format!("{}.node_count", plate_path(i)),
                    "required for this shape",
                ));
            }
            p.seed.get_or_insert(seed.wrapping_add(i as u64));
        }
        if let Some(sw) = &self.sweep {
            if sw.radii.is_empty()
                || sw.radii.iter().any(|r| !r.is_finite())
                || sw.radii.windows(2).any(|w| w[1] <= w[0])
            {
                issues.push(Issue::new(
                    "radii_not_increasing",
                    "$.sweep.radii",
                    "radii must be finite and strictly increasing",
                ));
            }
        }
        if let Some(ell) = self.ell {
            if ell >= self.plates.len() {
                issues.push(Issue::new("plate_index", "$.ell", format!("plate {ell} does not exist")));
            }
        }
        if self.target_plate >= self.plates.len().max(1) {
            issues.push(Issue::new(
                "plate_index",
                "$.target_plate",
                format!("plate {} does not exist", self.target_plate),
            ));
        }
        if !issues.is_empty() {
            return Err(ScenarioError::Invalid(issues));
        }
        self.condenser()?;
        Ok(self)
    }

    fn plates(&self) -> Result<Vec<Plate>, ScenarioError> {
        let mut issues = Vec::new();
        let mut plates = Vec::with_capacity(self.plates.len());
        for (i, p) in self.plates.iter().enumerate() {
            let spec = ShapeSpec::new(
                p.shape.clone(),
                p.node_count.unwrap_or(0),
                p.seed.unwrap_or(self.seed.wrapping_add(i as u64)),
            );
            match generate_nodes(&spec, self.kernel.dim) {
                Ok(nodes) => {
                    let mut plate = Plate::new(nodes, p.sign);
                    plate.shape = Some(spec);
                    plate.truncation_radius = if p.unbounded { p.truncation_radius } else { None };
                    plates.push(plate);
                }
                Err(e) => issues.push(Issue::new("invalid_shape", format!("{}.shape", plate_path(i)), e.to_string())),
            }
        }
        if issues.is_empty() {
            Ok(plates)
        } else {
            Err(ScenarioError::Invalid(issues))
        }
    }

    fn g_values(&self, plates: &[Plate]) -> Result<Vec<Vec<f64>>, ScenarioError> {
        match &self.g {
            GSpec::PerPlate(v) => Ok(v.clone()),
            GSpec::Named(name) => {
                let c = name
                    .strip_prefix("constant:")
                    .and_then(|c| c.trim().parse::<f64>().ok())
                    .ok_or_else(|| {
                        ScenarioError::Invalid(vec![Issue::new(
                            "g_unrecognized",
                            "$.g",
                            format!("expected \"constant:<value>\" or per-plate lists, found \"{name}\""),
                        )])
                    })?;
                Ok(plates.iter().map(|p| vec![c; p.nodes.len()]).collect())
            }
        }
    }

    /// Builds and validates the condenser described by the scenario.
    pub fn condenser(&self) -> Result<Condenser, ScenarioError> {
        let plates = self.plates()?;
        let g = self.g_values(&plates)?;
        let mut c = Condenser::new(plates, self.a.clone())
            .with_g(g)
            .with_chi(SignedMeasure::new(self.chi.clone()));
        c.g_bounded = self.g_bounded;
        c.validate().map_err(|f| {
            ScenarioError::Invalid(vec![Issue::new(f.code(), failure_path(&f), f.to_string())])
        })?;
        Ok(c)
    }

    pub fn context_options(&self) -> ContextOptions {
        ContextOptions {
            sigma: self.solver.sigma,
            ridge_cap: self.solver.ridge_cap,
            ..Default::default()
        }
    }

    pub fn solve_options(&self) -> SolveOptions {
        SolveOptions {
            gap_tol_rel: self.solver.gap_tol,
            max_iters: self.solver.max_iters,
            polish: self.solver.polish,
            ..Default::default()
        }
    }

    /// The plate `ell`: explicit, else the unique unbounded plate, else the
    /// last negative plate.
    pub fn ell(&self) -> Option<usize> {
        if self.ell.is_some() {
            return self.ell;
        }
        let unbounded: Vec<usize> = (0..self.plates.len()).filter(|&i| self.plates[i].unbounded).collect();
        if unbounded.len() == 1 {
            return Some(unbounded[0]);
        }
        (0..self.plates.len()).rev().find(|&i| self.plates[i].sign == Sign::Negative)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "kernel": {"alpha": 2.0, "dim": 3},
        "plates": [
            {"shape": {"kind": "sphere_shell", "center": [0, 0, 0], "radius": 1}, "sign": 1, "node_count": 12},
            {"shape": {"kind": "sphere_shell", "center": [4, 0, 0], "radius": 1}, "sign": -1, "node_count": 12}
        ],
        "a": [1.0, 1.0]
    }"#;

    fn with(patch: impl FnOnce(&mut serde_json::Value)) -> String {
        let mut v: serde_json::Value = serde_json::from_str(MINIMAL).unwrap();
        patch(&mut v);
        v.to_string()
    }

    fn single_issue(text: &str) -> Issue {
        match Scenario::parse(text) {
            Err(ScenarioError::Invalid(v)) => v[0].clone(),
            other => panic!("expected a validation error, got {other:?}"),
        }
    }

    #[test]
    fn minimal_scenario_gets_defaults() {
        let s = Scenario::parse(MINIMAL).unwrap();
        assert_eq!(s.g, GSpec::Named("constant:1".into()));
        assert_eq!(s.solver.sigma, 0.5);
        assert_eq!(s.solver.gap_tol, 1e-9);
        assert_eq!(s.spec_version, "1");
        assert_eq!(s.plates[1].seed, Some(1));
        let c = s.condenser().unwrap();
        assert!(c.g_values.iter().flatten().all(|&g| g == 1.0));
    }

    #[test]
    fn zero_charge_is_reported_at_its_path() {
        let issue = single_issue(&with(|v| v["a"][1] = 0.0.into()));
        assert_eq!(issue.code, "a_positive_violated");
        assert_eq!(issue.path, "$.a[1]");
    }

    #[test]
    fn chi_plus_on_negative_plate_is_rejected() {
        let s = Scenario::parse(MINIMAL).unwrap();
        let node = s.condenser().unwrap().plates[1].nodes[3].clone();
        let text = with(|v| v["chi"] = serde_json::json!([{"position": node, "weight": 0.5}]));
        let issue = single_issue(&text);
        assert_eq!(issue.code, "chi_plus_meets_negative_plates");
        assert_eq!(issue.path, "$.chi[0]");
    }

    #[test]
    fn unknown_fields_are_rejected_with_a_path() {
        let issue = single_issue(&with(|v| v["plates"][0]["colour"] = "red".into()));
        assert_eq!(issue.code, "schema");
        assert!(issue.path.starts_with("$.plates[0]"), "{}", issue.path);
        let issue = single_issue(&with(|v| v["solver"] = serde_json::json!({"gap_toll": 1e-9})));
        assert_eq!(issue.path, "$.solver.gap_toll");
    }

    #[test]
    fn g_forms() {
        let c = Scenario::parse(&with(|v| v["g"] = "constant:2.5".into())).unwrap().condenser().unwrap();
        assert_eq!(c.g_inf(), 2.5);
        let issue = single_issue(&with(|v| v["g"] = "linear".into()));
        assert_eq!(issue.code, "g_unrecognized");
        let lists = serde_json::json!([vec![1.0; 12], vec![0.0; 12]]);
        let issue = single_issue(&with(|v| v["g"] = lists));
        assert_eq!(issue.code, "g_inf_not_positive");
        assert_eq!(issue.path, "$.g[1][0]");
    }

    #[test]
    fn echo_reparses_to_the_same_condenser() {
        let text = r#"{
            "kernel": {"alpha": 2.0, "dim": 3},
            "plates": [
                {"shape": {"kind": "ball", "center": [-1.5, 0, 0], "radius": 0.5}, "sign": 1, "node_count": 30},
                {"shape": {"kind": "rotational_body", "q": 1, "profile": {"kind": "power", "s": 1},
                           "truncation_radius": 5}, "sign": -1, "unbounded": true}
            ],
            "chi": [{"position": [0, 3, 0], "weight": 0.25}],
            "a": [1.0, 2.0],
            "seed": 7,
            "sweep": {"radii": [5, 10]}
        }"#;
        let s = Scenario::parse(text).unwrap();
        let echo = serde_json::to_string(&s).unwrap();
        let back = Scenario::parse(&echo).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.condenser().unwrap(), s.condenser().unwrap());
        assert_eq!(s.ell(), Some(1));
        assert!(s.condenser().unwrap().plates[1].is_unbounded());
    }

    #[test]
    fn structural_problems_are_collected() {
        let text = with(|v| {
            v["kernel"]["alpha"] = 3.5.into();
            v["plates"][0]["node_count"] = serde_json::Value::Null;
        });
        match Scenario::parse(&text) {
            Err(ScenarioError::Invalid(v)) => {
                let codes: Vec<&str> = v.iter().map(|i| i.code.as_str()).collect();
                assert_eq!(codes, ["invalid_kernel", "node_count_missing"]);
            }
            other => panic!("{other:?}"),
        }
    }
}
