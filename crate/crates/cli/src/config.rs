//! Run configurations: TOML files, presets, includes and command-line overrides.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use spsgf_core::dynamics::{Algorithm, AlgorithmParams, NetworkState};
use spsgf_core::graph::GraphSpec;
use spsgf_core::integrate::IntegratorConfig;
use spsgf_core::problem::{resource_initial_x, ProblemSpec, SeparableProblem};

use crate::error::{CliError, Result};

/// Default sweep grid over the timescale parameter.
pub const DEFAULT_TAU_GRID: [f64; 3] = [0.1, 1.0, 10.0];

/// Feasibility tolerance for the initial point of the anytime flows.
const FEASIBILITY_TOL: f64 = 1e-9;

const EXAMPLE_PRESET: &str = r#"
algorithm = "sp-sgf"
checks = []
seed = 0

[problem]
family = "resource-allocation"

[graph]
family = "line"
num_vertices = 13

[params]
tau = 1.0
epsilon = 1e-4
alpha = 1.0

[integrator]
scheme = "explicit-euler"
dt = 1e-3
horizon = 50.0
record_every = 10

[initial]
preset = "paper-example"
"#;

const DEFAULTS: &str = r#"
algorithm = "sp-sgf"
output = "spsgf-out"
checks = []
seed = 0

[params]
tau = 1.0
epsilon = 1e-4
alpha = 1.0

[integrator]
scheme = "explicit-euler"
dt = 1e-3
horizon = 50.0
record_every = 1

[initial]
"#;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    PaperExample,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckKind {
    Anytime,
    Convergence,
    Equilibrium,
    Sensitivity,
    Licq,
}

impl CheckKind {
    pub const ALL: [CheckKind; 5] = [
        CheckKind::Anytime,
        CheckKind::Convergence,
        CheckKind::Equilibrium,
        CheckKind::Sensitivity,
        CheckKind::Licq,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CheckKind::Anytime => "anytime",
            CheckKind::Convergence => "convergence",
            CheckKind::Equilibrium => "equilibrium",
            CheckKind::Sensitivity => "sensitivity",
            CheckKind::Licq => "licq",
        }
    }
}

impl std::str::FromStr for CheckKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        CheckKind::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| format!("unknown check '{s}'"))
    }
}

/// Initial condition: a named preset, explicit blocks, or a preset with some
/// blocks overridden. Blocks that are not given start at zero, except the
/// decision variable which has no default.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<Preset>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    #[serde(default = "default_taus")]
    pub tau: Vec<f64>,
    /// Empty means the run's own algorithm.
    #[serde(default)]
    pub algorithms: Vec<Algorithm>,
}

fn default_taus() -> Vec<f64> {
    DEFAULT_TAU_GRID.to_vec()
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            tau: default_taus(),
            algorithms: Vec::new(),
        }
    }
}

/// Fully resolved configuration. This is what a manifest stores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub algorithm: Algorithm,
    pub problem: ProblemSpec,
    pub graph: GraphSpec,
    pub params: AlgorithmParams,
    pub integrator: IntegratorConfig,
    pub initial: InitialSpec,
    pub output: PathBuf,
    #[serde(default)]
    pub checks: Vec<CheckKind>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
}

/// Values given on the command line; they win over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub preset: Option<Preset>,
    pub algorithm: Option<Algorithm>,
    pub tau: Option<f64>,
    pub epsilon: Option<f64>,
    pub alpha: Option<f64>,
    pub dt: Option<f64>,
    pub horizon: Option<f64>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub field: String,
    pub message: String,
    pub severity: Severity,
}

impl Violation {
    fn error(field: &str, message: impl Into<String>) -> Self {
        Violation {
            field: field.into(),
            message: message.into(),
            severity: Severity::Error,
        }
    }

    fn warning(field: &str, message: impl Into<String>) -> Self {
        Violation {
            field: field.into(),
            message: message.into(),
            severity: Severity::Warning,
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{tag}: {}", self.message)
    }
}

fn preset_table(preset: Preset) -> toml::Table {
    match preset {
        Preset::PaperExample => EXAMPLE_PRESET.parse().expect("built-in preset parses"),
    }
}

/// Recursively overlays `top` onto `base`.
fn merge(base: &mut toml::Table, top: toml::Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Replaces `problem = { include = "file.toml" }` by the contents of that file.
fn resolve_include(table: &mut toml::Table, dir: &Path) -> Result<()> {
    let Some(toml::Value::Table(problem)) = table.get_mut("problem") else {
        return Ok(());
    };
    let Some(include) = problem.remove("include") else {
        return Ok(());
    };
    let rel = include
        .as_str()
        .ok_or_else(|| CliError::Config("problem.include must be a path string".into()))?;
    let path = dir.join(rel);
    let mut included: toml::Table = read(&path)?
        .parse()
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    merge(&mut included, std::mem::take(problem));
    *problem = included;
    Ok(())
}

/// Reads a TOML config or the `config` section of a run manifest.
fn load_file(path: &Path) -> Result<toml::Table> {
    let text = read(path)?;
    if path.extension().is_some_and(|e| e == "json") {
        let manifest: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let config = manifest.get("config").cloned().unwrap_or(manifest);
        let config: SimConfig = serde_json::from_value(config)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        return toml::Table::try_from(config).map_err(|e| CliError::Config(e.to_string()));
    }
    let mut table: toml::Table = text
        .parse()
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    resolve_include(&mut table, path.parent().unwrap_or(Path::new(".")))?;
    Ok(table)
}

/// Builds the merged configuration table: defaults, then preset, then file.
pub fn load_table(path: Option<&Path>, preset: Option<Preset>) -> Result<toml::Table> {
    let mut table: toml::Table = DEFAULTS.parse().expect("defaults parse");
    let file = path.map(load_file).transpose()?;
    let preset = match (preset, file.as_ref().and_then(|f| f.get("preset"))) {
        (Some(p), _) => Some(p),
        (None, Some(v)) => Some(
            v.clone()
                .try_into::<Preset>()
                .map_err(|e| CliError::Config(format!("preset: {e}")))?,
        ),
        (None, None) => None,
    };
    if let Some(p) = preset {
        merge(&mut table, preset_table(p));
    }
    if let Some(mut f) = file {
        f.remove("preset");
        merge(&mut table, f);
    }
    Ok(table)
}

impl SimConfig {
    pub fn from_table(table: toml::Table) -> Result<Self> {
        table
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.message().to_string()))
    }

    /// Loads and resolves a configuration; does not validate it.
    pub fn load(path: Option<&Path>, ov: &Overrides) -> Result<Self> {
        let mut cfg = SimConfig::from_table(load_table(path, ov.preset)?)?;
        cfg.apply(ov);
        Ok(cfg)
    }

    pub fn apply(&mut self, ov: &Overrides) {
        if let Some(a) = ov.algorithm {
            self.algorithm = a;
        }
        if let Some(t) = ov.tau {
            self.params.tau = t;
        }
        if let Some(e) = ov.epsilon {
            self.params.epsilon = e;
        }
        if let Some(a) = ov.alpha {
            self.params.alpha = a;
        }
        if let Some(d) = ov.dt {
            self.integrator.dt = d;
        }
        if let Some(h) = ov.horizon {
            self.integrator.horizon = h;
        }
        if let Some(o) = &ov.out {
            self.output = o.clone();
        }
        if let Some(s) = ov.seed {
            self.seed = s;
        }
    }

    pub fn build_problem(&self) -> Result<SeparableProblem> {
        Ok(self.problem.build(&self.graph)?)
    }

    pub fn initial_x(&self) -> Result<Vec<f64>> {
        match (&self.initial.x, self.initial.preset) {
            (Some(x), _) => Ok(x.clone()),
            (None, Some(Preset::PaperExample)) => Ok(resource_initial_x()),
            (None, None) => Err(CliError::Config(
                "initial.x is required unless initial.preset is set".into(),
            )),
        }
    }

    pub fn initial_state(&self, problem: &SeparableProblem) -> Result<NetworkState> {
        let mut s = NetworkState::initial(self.algorithm, problem, &self.initial_x()?)?;
        let blocks = [
            (&self.initial.v, &mut s.v),
            (&self.initial.y, &mut s.y),
            (&self.initial.z, &mut s.z),
            (&self.initial.lambda, &mut s.lambda),
            (&self.initial.mu, &mut s.mu),
        ];
        for (given, slot) in blocks {
            if let Some(g) = given {
                *slot = g.clone();
            }
        }
        s.check_dims(self.algorithm, problem)?;
        Ok(s)
    }

    /// Field-level problems with this configuration. Never fails; an empty
    /// list of errors means the configuration can be run.
    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let positive = |v: f64| v.is_finite() && v > 0.0;
        let p = &self.params;
        for (name, v) in [("tau", p.tau), ("epsilon", p.epsilon), ("alpha", p.alpha)] {
            if !positive(v) {
                out.push(Violation::error(
                    &format!("params.{name}"),
                    format!("params.{name} must be > 0"),
                ));
            }
        }
        let ic = &self.integrator;
        if !positive(ic.dt) {
            out.push(Violation::error(
                "integrator.dt",
                "integrator.dt must be > 0",
            ));
        }
        if !ic.horizon.is_finite() || ic.horizon <= ic.dt {
            out.push(Violation::error(
                "integrator.horizon",
                "integrator.horizon must be finite and exceed integrator.dt",
            ));
        }
        if ic.record_every == 0 {
            out.push(Violation::error(
                "integrator.record_every",
                "integrator.record_every must be >= 1",
            ));
        } else if positive(ic.dt) && ic.horizon.is_finite() {
            let steps = ic.horizon / ic.dt;
            if (steps - steps.round()).abs() > 1e-9 * steps.max(1.0) {
                out.push(Violation::error(
                    "integrator.horizon",
                    "integrator.horizon must be an integer multiple of integrator.dt",
                ));
            } else if !(steps.round() as usize).is_multiple_of(ic.record_every) {
                out.push(Violation::error(
                    "integrator.record_every",
                    "integrator.record_every must divide horizon/dt",
                ));
            }
        }
        if let Some(sweep) = &self.sweep {
            if sweep.tau.is_empty() || sweep.tau.iter().any(|t| !positive(*t)) {
                out.push(Violation::error(
                    "sweep.tau",
                    "sweep.tau must be a non-empty list of values > 0",
                ));
            }
        }
        let problem = match self.build_problem() {
            Ok(p) => p,
            Err(e) => {
                out.push(Violation::error("problem", format!("problem: {e}")));
                return out;
            }
        };
        if !problem.graph().is_connected() {
            out.push(Violation::error("graph", "graph must be connected"));
        }
        let state = match self.initial_state(&problem) {
            Ok(s) => s,
            Err(e) => {
                out.push(Violation::error("initial", format!("initial: {e}")));
                return out;
            }
        };
        if state.lambda.iter().any(|l| *l < 0.0 || !l.is_finite()) {
            out.push(Violation::error(
                "initial.lambda",
                "initial.lambda entries must be >= 0",
            ));
        }
        if !state.is_finite() {
            out.push(Violation::error("initial", "initial state must be finite"));
        }
        if matches!(self.algorithm, Algorithm::SpSgf | Algorithm::CentralizedSgf) {
            match problem.is_feasible(&state.x, FEASIBILITY_TOL) {
                Ok(true) => {}
                Ok(false) => out.push(Violation::warning(
                    "initial.x",
                    format!(
                        "initial.x is not feasible; {} is only guaranteed to stay feasible from a feasible start",
                        self.algorithm
                    ),
                )),
                Err(e) => out.push(Violation::error("initial.x", format!("initial.x: {e}"))),
            }
        }
        out
    }

    pub fn errors(&self) -> Vec<Violation> {
        self.violations()
            .into_iter()
            .filter(|v| v.severity == Severity::Error)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn preset() -> SimConfig {
        SimConfig::load(
            None,
            &Overrides {
                preset: Some(Preset::PaperExample),
                ..Default::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn example_preset_is_clean() {
        let cfg = preset();
        assert_eq!(cfg.algorithm, Algorithm::SpSgf);
        assert_eq!(cfg.params.epsilon, 1e-4);
        assert!(cfg.violations().is_empty(), "{:?}", cfg.violations());
    }

    #[test]
    fn zero_tau_is_reported() {
        let mut cfg = preset();
        cfg.params.tau = 0.0;
        let v = cfg.violations();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].message, "params.tau must be > 0");
    }

    #[test]
    fn infeasible_start_is_a_warning() {
        let mut cfg = preset();
        let mut x = resource_initial_x();
        x[1] = -5.0;
        cfg.initial.x = Some(x);
        let v = cfg.violations();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].severity, Severity::Warning);
        cfg.algorithm = Algorithm::Sp;
        assert!(cfg.violations().is_empty());
    }

    #[test]
    fn record_every_must_divide() {
        let mut cfg = preset();
        cfg.integrator.record_every = 7;
        assert_eq!(cfg.errors()[0].field, "integrator.record_every");
    }

    #[test]
    fn file_overrides_preset_and_cli_overrides_file() {
        let dir = std::env::temp_dir().join(format!("spsgf-config-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("c.toml");
        std::fs::write(&path, "preset = \"paper-example\"\n[params]\ntau = 3.0\n").unwrap();
        let cfg = SimConfig::load(Some(&path), &Overrides::default()).unwrap();
        assert_eq!(cfg.params.tau, 3.0);
        assert_eq!(cfg.params.alpha, 1.0);
        let ov = Overrides {
            tau: Some(5.0),
            ..Default::default()
        };
        assert_eq!(SimConfig::load(Some(&path), &ov).unwrap().params.tau, 5.0);
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn resolved_config_round_trips_through_json() {
        let cfg = preset();
        let json = serde_json::to_string(&cfg).unwrap();
        let back: SimConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(cfg, back);
    }
}
