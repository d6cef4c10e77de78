//! Flat JSON experiment configs.
//!
//! A config is a single JSON object whose keys are dotted paths such as
//! `problem.drift` or `qlearn.epsilon`. Every key is optional except
//! `experiment`; unknown keys are rejected. Diagnostics carry the line of the
//! offending key when it appears in the file.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use lqlab_core::hjb::{CoefficientForm, Differencing, SchemeConfig};
use lqlab_core::linfa::{FaTrainConfig, StepSize};
use lqlab_core::monotone::DEFAULT_DIVERGENCE_THRESHOLD;
use lqlab_core::qlearn::{LearningRate, QLearnConfig};
use lqlab_core::{lq, DiscreteMdp, Grid1D, LqProblem};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub struct ConfigError {
    pub source_name: String,
    pub line: Option<usize>,
    pub field: String,
    pub reason: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(
                f,
                "{}:{}: {}: {}",
                self.source_name, line, self.field, self.reason
            ),
            None => write!(f, "{}: {}: {}", self.source_name, self.field, self.reason),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    HjbVi,
    HjbPi,
    QLearn,
    Linfa,
    Probe,
    Sweep,
}

impl Kind {
    pub const ALL: [Kind; 6] = [
        Kind::HjbVi,
        Kind::HjbPi,
        Kind::QLearn,
        Kind::Linfa,
        Kind::Probe,
        Kind::Sweep,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Kind::HjbVi => "hjb-vi",
            Kind::HjbPi => "hjb-pi",
            Kind::QLearn => "qlearn",
            Kind::Linfa => "linfa",
            Kind::Probe => "probe",
            Kind::Sweep => "sweep",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GridSpec {
    Nodes(usize),
    Spacing(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RateSpec {
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schedule {
    Constant,
    PerVisit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaMode {
    BoundScaled,
    Constant,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub experiment: Kind,
    pub param: Option<String>,
    pub values: Vec<f64>,
}

/// A fully resolved config. Defaults are filled in.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: Kind,
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    pub problem: LqProblem,
    pub grid: GridSpec,
    pub relaxation_rate: RateSpec,
    pub scheme: SchemeConfig,
    pub initial_policy: f64,
    pub mdp_dt: f64,
    pub mdp_state_nodes: usize,
    pub mdp_action_nodes: usize,
    pub learning_rate: f64,
    pub schedule: Schedule,
    pub epsilon: f64,
    pub n_episodes: usize,
    pub episode_len: usize,
    pub fa_mode: FaMode,
    pub fa_lr: f64,
    pub fa_fraction: f64,
    pub fa_steps: usize,
    pub fa_log_every: usize,
    pub monitor_threshold: f64,
    pub probe_pairs: usize,
    pub sweep: Option<SweepSpec>,
}

/// Raw key-value view of a config file with line lookup for diagnostics.
#[derive(Debug, Clone)]
pub struct RawConfig {
    pub source_name: String,
    text: String,
    pub entries: Map<String, Value>,
}

/// Numeric keys a sweep may vary.
pub const NUMERIC_KEYS: &[&str] = &[
    "seed",
    "problem.drift",
    "problem.discount_rate",
    "problem.state_cost",
    "problem.control_cost",
    "problem.control_gain",
    "problem.x_min",
    "problem.x_max",
    "problem.u_min",
    "problem.u_max",
    "grid.n_nodes",
    "grid.dx",
    "scheme.relaxation_rate",
    "scheme.theta",
    "scheme.theta_v",
    "scheme.theta_u",
    "scheme.max_iters",
    "scheme.max_policy_evals",
    "scheme.max_policy_improvements",
    "policy.initial",
    "mdp.dt",
    "mdp.state_nodes",
    "mdp.action_nodes",
    "qlearn.learning_rate",
    "qlearn.epsilon",
    "qlearn.n_episodes",
    "qlearn.episode_len",
    "linfa.lr",
    "linfa.fraction",
    "linfa.n_steps",
    "linfa.log_every",
    "monitor.threshold",
    "probe.n_pairs",
];

const OTHER_KEYS: &[&str] = &[
    "experiment",
    "output_dir",
    "scheme.differencing",
    "scheme.coefficient_form",
    "qlearn.schedule",
    "linfa.mode",
    "sweep.experiment",
    "sweep.param",
    "sweep.values",
];

impl RawConfig {
    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let name = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
            source_name: name.clone(),
            line: None,
            field: "<file>".into(),
            reason: e.to_string(),
        })?;
        Self::from_str(&name, &text)
    }

    pub fn from_str(source_name: &str, text: &str) -> Result<Self, ConfigError> {
        let value: Value = serde_json::from_str(text).map_err(|e| ConfigError {
            source_name: source_name.into(),
            line: Some(e.line()),
            field: "<json>".into(),
            reason: e.to_string(),
        })?;
        let Value::Object(entries) = value else {
            return Err(ConfigError {
                source_name: source_name.into(),
                line: Some(1),
                field: "<json>".into(),
                reason: "top level must be an object".into(),
            });
        };
        Ok(Self {
            source_name: source_name.into(),
            text: text.into(),
            entries,
        })
    }

    /// 1-based line of the first occurrence of `"key"` as an object key.
    pub fn line_of(&self, key: &str) -> Option<usize> {
        let quoted = format!("\"{key}\"");
        let mut from = 0;
        while let Some(pos) = self.text[from..].find(&quoted) {
            let at = from + pos;
            let rest = self.text[at + quoted.len()..].trim_start();
            if rest.starts_with(':') {
                return Some(self.text[..at].matches('\n').count() + 1);
            }
            from = at + quoted.len();
        }
        None
    }

    pub fn error(&self, field: &str, reason: impl Into<String>) -> ConfigError {
        ConfigError {
            source_name: self.source_name.clone(),
            line: self.line_of(field),
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// Overrides a numeric key, as a sweep does.
    pub fn set_number(&mut self, key: &str, value: f64) -> Result<(), ConfigError> {
        if !NUMERIC_KEYS.contains(&key) {
            return Err(self.error(key, "not a numeric config field"));
        }
        let v = serde_json::Number::from_f64(value)
            .ok_or_else(|| self.error(key, "value must be finite"))?;
        self.entries.insert(key.into(), Value::Number(v));
        Ok(())
    }

    pub fn resolve(&self) -> Result<ExperimentConfig, ConfigError> {
        for key in self.entries.keys() {
            if !NUMERIC_KEYS.contains(&key.as_str()) && !OTHER_KEYS.contains(&key.as_str()) {
                return Err(self.error(key, "unknown key"));
            }
        }
        let r = Reader { raw: self };
        let experiment = r
            .kind("experiment")?
            .ok_or_else(|| self.error("experiment", "missing required key"))?;

        let mut problem = LqProblem::new(0.5, 1.0).expect("default problem is valid");
        problem.drift = r.number("problem.drift", problem.drift)?;
        problem.discount_rate = r.number("problem.discount_rate", problem.discount_rate)?;
        problem.state_cost = r.number("problem.state_cost", problem.state_cost)?;
        problem.control_cost = r.number("problem.control_cost", problem.control_cost)?;
        problem.control_gain = r.number("problem.control_gain", problem.control_gain)?;
        problem.x_min = r.number("problem.x_min", problem.x_min)?;
        problem.x_max = r.number("problem.x_max", problem.x_max)?;
        problem.u_min = r.number("problem.u_min", problem.u_min)?;
        problem.u_max = r.number("problem.u_max", problem.u_max)?;

        let grid = match (
            self.entries.contains_key("grid.n_nodes"),
            self.entries.contains_key("grid.dx"),
        ) {
            (true, true) => {
                return Err(self.error("grid.dx", "give either grid.n_nodes or grid.dx, not both"))
            }
            (true, false) => GridSpec::Nodes(r.integer("grid.n_nodes", 0)? as usize),
            (false, _) => GridSpec::Spacing(r.number("grid.dx", 0.01)?),
        };

        let relaxation_rate = match self.entries.get("scheme.relaxation_rate") {
            None => RateSpec::Auto,
            Some(Value::String(s)) if s == "auto" => RateSpec::Auto,
            Some(_) => RateSpec::Fixed(r.number("scheme.relaxation_rate", 0.0).map_err(|_| {
                self.error("scheme.relaxation_rate", "expected a number or \"auto\"")
            })?),
        };
        let differencing = match r.string("scheme.differencing")?.as_deref() {
            None | Some("upwind") => Differencing::Upwind,
            Some("downwind") => Differencing::Downwind,
            Some("central") => Differencing::Central,
            Some(other) => {
                return Err(self.error(
                    "scheme.differencing",
                    format!("expected upwind, downwind or central, got {other:?}"),
                ))
            }
        };
        let coefficient_form = match r.string("scheme.coefficient_form")?.as_deref() {
            None | Some("consistent") => CoefficientForm::Consistent,
            Some("literal") => CoefficientForm::Literal,
            Some(other) => {
                return Err(self.error(
                    "scheme.coefficient_form",
                    format!("expected consistent or literal, got {other:?}"),
                ))
            }
        };
        let mut scheme = SchemeConfig::new(1.0, differencing);
        scheme.coefficient_form = coefficient_form;
        scheme.theta = r.number("scheme.theta", scheme.theta)?;
        scheme.theta_v = r.number("scheme.theta_v", scheme.theta_v)?;
        scheme.theta_u = r.number("scheme.theta_u", scheme.theta_u)?;
        scheme.max_iters = r.integer("scheme.max_iters", scheme.max_iters as u64)? as usize;
        scheme.max_policy_evals =
            r.integer("scheme.max_policy_evals", scheme.max_policy_evals as u64)? as usize;
        scheme.max_policy_improvements = r.integer(
            "scheme.max_policy_improvements",
            scheme.max_policy_improvements as u64,
        )? as usize;
        let monitor_threshold = r.number("monitor.threshold", DEFAULT_DIVERGENCE_THRESHOLD)?;
        scheme.divergence_threshold = monitor_threshold;

        let schedule = match r.string("qlearn.schedule")?.as_deref() {
            None | Some("constant") => Schedule::Constant,
            Some("per-visit") => Schedule::PerVisit,
            Some(other) => {
                return Err(self.error(
                    "qlearn.schedule",
                    format!("expected constant or per-visit, got {other:?}"),
                ))
            }
        };
        let fa_mode = match r.string("linfa.mode")?.as_deref() {
            None | Some("bound-scaled") => FaMode::BoundScaled,
            Some("constant") => FaMode::Constant,
            Some(other) => {
                return Err(self.error(
                    "linfa.mode",
                    format!("expected bound-scaled or constant, got {other:?}"),
                ))
            }
        };

        let sweep = if experiment == Kind::Sweep {
            let base = r.kind("sweep.experiment")?.ok_or_else(|| {
                self.error("sweep.experiment", "required when experiment is sweep")
            })?;
            if base == Kind::Sweep {
                return Err(self.error("sweep.experiment", "a sweep cannot run sweeps"));
            }
            Some(SweepSpec {
                experiment: base,
                param: r.string("sweep.param")?,
                values: r.numbers("sweep.values")?,
            })
        } else {
            for key in ["sweep.experiment", "sweep.param", "sweep.values"] {
                if self.entries.contains_key(key) {
                    return Err(self.error(key, "only allowed when experiment is sweep"));
                }
            }
            None
        };

        let cfg = ExperimentConfig {
            experiment,
            seed: r.integer("seed", 0)?,
            output_dir: r.string("output_dir")?.map(PathBuf::from),
            problem,
            grid,
            relaxation_rate,
            scheme,
            initial_policy: r.number("policy.initial", 1.0)?,
            mdp_dt: r.number("mdp.dt", lq::DEFAULT_DT)?,
            mdp_state_nodes: r.integer("mdp.state_nodes", lq::DEFAULT_STATE_NODES as u64)? as usize,
            mdp_action_nodes: r.integer("mdp.action_nodes", lq::DEFAULT_ACTION_NODES as u64)?
                as usize,
            learning_rate: r.number("qlearn.learning_rate", 0.8)?,
            schedule,
            epsilon: r.number("qlearn.epsilon", 0.1)?,
            n_episodes: r.integer("qlearn.n_episodes", 5000)? as usize,
            episode_len: r.integer("qlearn.episode_len", 50)? as usize,
            fa_mode,
            fa_lr: r.number("linfa.lr", 0.01)?,
            fa_fraction: r.number("linfa.fraction", 0.5)?,
            fa_steps: r.integer("linfa.n_steps", 100_000)? as usize,
            fa_log_every: r.integer("linfa.log_every", 1000)? as usize,
            monitor_threshold,
            probe_pairs: r.integer("probe.n_pairs", 1000)? as usize,
            sweep,
        };
        cfg.validate().map_err(|e| {
            let field = if e.field.ends_with("divergence_threshold") {
                "monitor.threshold"
            } else {
                e.field
            };
            self.error(field, e.reason)
        })?;
        Ok(cfg)
    }
}

struct Reader<'a> {
    raw: &'a RawConfig,
}

impl Reader<'_> {
    fn number(&self, key: &str, default: f64) -> Result<f64, ConfigError> {
        match self.raw.entries.get(key) {
            None => Ok(default),
            Some(v) => v
                .as_f64()
                .ok_or_else(|| self.raw.error(key, format!("expected a number, got {v}"))),
        }
    }

    fn integer(&self, key: &str, default: u64) -> Result<u64, ConfigError> {
        match self.raw.entries.get(key) {
            None => Ok(default),
            Some(v) => match v.as_u64() {
                Some(n) => Ok(n),
                // Sweeps write integers as floats.
                None => match v.as_f64() {
                    Some(f) if f >= 0.0 && f.fract() == 0.0 && f < u64::MAX as f64 => Ok(f as u64),
                    _ => Err(self
                        .raw
                        .error(key, format!("expected a nonnegative integer, got {v}"))),
                },
            },
        }
    }

    fn string(&self, key: &str) -> Result<Option<String>, ConfigError> {
        match self.raw.entries.get(key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.clone())),
            Some(v) => Err(self.raw.error(key, format!("expected a string, got {v}"))),
        }
    }

    fn numbers(&self, key: &str) -> Result<Vec<f64>, ConfigError> {
        match self.raw.entries.get(key) {
            None => Ok(Vec::new()),
            Some(Value::Array(items)) => items
                .iter()
                .map(|v| {
                    v.as_f64()
                        .ok_or_else(|| self.raw.error(key, format!("expected numbers, got {v}")))
                })
                .collect(),
            Some(v) => Err(self
                .raw
                .error(key, format!("expected an array of numbers, got {v}"))),
        }
    }

    fn kind(&self, key: &str) -> Result<Option<Kind>, ConfigError> {
        match self.string(key)? {
            None => Ok(None),
            Some(s) => Kind::parse(&s).map(Some).ok_or_else(|| {
                let names: Vec<&str> = Kind::ALL.iter().map(|k| k.name()).collect();
                self.raw.error(
                    key,
                    format!(
                        "unknown experiment {s:?}; expected one of {}",
                        names.join(", ")
                    ),
                )
            }),
        }
    }
}

impl ExperimentConfig {
    /// Kind of the experiment a run actually executes.
    pub fn base_kind(&self) -> Kind {
        match &self.sweep {
            Some(s) => s.experiment,
            None => self.experiment,
        }
    }

    pub fn hjb_grid(&self) -> Result<Grid1D, lqlab_core::ConfigError> {
        let p = &self.problem;
        match self.grid {
            GridSpec::Nodes(n) => Grid1D::new(p.x_min, p.x_max, n),
            GridSpec::Spacing(dx) => Grid1D::with_spacing(p.x_min, p.x_max, dx),
        }
    }

    pub fn scheme_config(&self, grid: &Grid1D) -> SchemeConfig {
        let mut cfg = self.scheme;
        cfg.relaxation_rate = match self.relaxation_rate {
            RateSpec::Auto => lqlab_core::hjb::monotone_relaxation_rate(&self.problem, grid),
            RateSpec::Fixed(g) => g,
        };
        cfg
    }

    pub fn mdp(&self) -> Result<DiscreteMdp, lqlab_core::ConfigError> {
        DiscreteMdp::from_problem(
            self.problem,
            self.mdp_dt,
            self.mdp_state_nodes,
            self.mdp_action_nodes,
        )
    }

    pub fn qlearn_config(&self) -> QLearnConfig {
        QLearnConfig {
            learning_rate: match self.schedule {
                Schedule::Constant => LearningRate::Constant(self.learning_rate),
                Schedule::PerVisit => LearningRate::PerVisit,
            },
            epsilon: self.epsilon,
            n_episodes: self.n_episodes,
            episode_len: self.episode_len,
            seed: self.seed,
            divergence_threshold: self.monitor_threshold,
        }
    }

    pub fn fa_config(&self) -> FaTrainConfig {
        let step = match self.fa_mode {
            FaMode::BoundScaled => StepSize::BoundScaled(self.fa_fraction),
            FaMode::Constant => StepSize::Constant(self.fa_lr),
        };
        let mut cfg = FaTrainConfig::new(step, self.fa_steps, self.seed);
        cfg.log_every = self.fa_log_every;
        cfg.divergence_threshold = self.monitor_threshold;
        cfg
    }

    /// Checks every sub-config the experiment uses.
    pub fn validate(&self) -> Result<(), lqlab_core::ConfigError> {
        self.problem.validate()?;
        match self.base_kind() {
            Kind::HjbVi | Kind::HjbPi | Kind::Probe => {
                let grid = self.hjb_grid()?;
                self.scheme_config(&grid).validate(&self.problem)?;
                lqlab_core::hjb::check_control_bounds(&self.problem)?;
                if self.base_kind() == Kind::HjbPi
                    && !(self.problem.u_min..=self.problem.u_max).contains(&self.initial_policy)
                {
                    return Err(lqlab_core::ConfigError::new(
                        "policy.initial",
                        "must lie in the control box",
                    ));
                }
                if self.base_kind() == Kind::Probe && self.probe_pairs == 0 {
                    return Err(lqlab_core::ConfigError::new(
                        "probe.n_pairs",
                        "must be >= 1",
                    ));
                }
            }
            Kind::QLearn => {
                self.mdp()?;
                self.qlearn_config().validate()?;
            }
            Kind::Linfa => {
                self.mdp()?;
                self.fa_config().validate()?;
            }
            Kind::Sweep => unreachable!("base kind is never sweep"),
        }
        Ok(())
    }

    /// Canonical key-value form: every key with its resolved value, sorted.
    /// The output directory is left out since it does not affect results.
    pub fn canonical(&self) -> BTreeMap<&'static str, Value> {
        let mut m = BTreeMap::new();
        let num = |v: f64| Value::from(v);
        let p = &self.problem;
        m.insert("experiment", Value::from(self.experiment.name()));
        m.insert("seed", Value::from(self.seed));
        m.insert("problem.drift", num(p.drift));
        m.insert("problem.discount_rate", num(p.discount_rate));
        m.insert("problem.state_cost", num(p.state_cost));
        m.insert("problem.control_cost", num(p.control_cost));
        m.insert("problem.control_gain", num(p.control_gain));
        m.insert("problem.x_min", num(p.x_min));
        m.insert("problem.x_max", num(p.x_max));
        m.insert("problem.u_min", num(p.u_min));
        m.insert("problem.u_max", num(p.u_max));
        match self.grid {
            GridSpec::Nodes(n) => m.insert("grid.n_nodes", Value::from(n)),
            GridSpec::Spacing(dx) => m.insert("grid.dx", num(dx)),
        };
        m.insert(
            "scheme.relaxation_rate",
            match self.relaxation_rate {
                RateSpec::Auto => Value::from("auto"),
                RateSpec::Fixed(g) => num(g),
            },
        );
        let s = &self.scheme;
        m.insert(
            "scheme.differencing",
            Value::from(match s.differencing {
                Differencing::Upwind => "upwind",
                Differencing::Downwind => "downwind",
                Differencing::Central => "central",
            }),
        );
        m.insert(
            "scheme.coefficient_form",
            Value::from(match s.coefficient_form {
                CoefficientForm::Consistent => "consistent",
                CoefficientForm::Literal => "literal",
            }),
        );
        m.insert("scheme.theta", num(s.theta));
        m.insert("scheme.theta_v", num(s.theta_v));
        m.insert("scheme.theta_u", num(s.theta_u));
        m.insert("scheme.max_iters", Value::from(s.max_iters));
        m.insert("scheme.max_policy_evals", Value::from(s.max_policy_evals));
        m.insert(
            "scheme.max_policy_improvements",
            Value::from(s.max_policy_improvements),
        );
        m.insert("policy.initial", num(self.initial_policy));
        m.insert("mdp.dt", num(self.mdp_dt));
        m.insert("mdp.state_nodes", Value::from(self.mdp_state_nodes));
        m.insert("mdp.action_nodes", Value::from(self.mdp_action_nodes));
        m.insert("qlearn.learning_rate", num(self.learning_rate));
        m.insert(
            "qlearn.schedule",
            Value::from(match self.schedule {
                Schedule::Constant => "constant",
                Schedule::PerVisit => "per-visit",
            }),
        );
        m.insert("qlearn.epsilon", num(self.epsilon));
        m.insert("qlearn.n_episodes", Value::from(self.n_episodes));
        m.insert("qlearn.episode_len", Value::from(self.episode_len));
        m.insert(
            "linfa.mode",
            Value::from(match self.fa_mode {
                FaMode::BoundScaled => "bound-scaled",
                FaMode::Constant => "constant",
            }),
        );
        m.insert("linfa.lr", num(self.fa_lr));
        m.insert("linfa.fraction", num(self.fa_fraction));
        m.insert("linfa.n_steps", Value::from(self.fa_steps));
        m.insert("linfa.log_every", Value::from(self.fa_log_every));
        m.insert("monitor.threshold", num(self.monitor_threshold));
        m.insert("probe.n_pairs", Value::from(self.probe_pairs));
        if let Some(sw) = &self.sweep {
            m.insert("sweep.experiment", Value::from(sw.experiment.name()));
            if let Some(param) = &sw.param {
                m.insert("sweep.param", Value::from(param.as_str()));
            }
            m.insert("sweep.values", Value::from(sw.values.clone()));
        }
        m
    }

    /// SHA-256 of the canonical form, hex encoded.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(&self.canonical()).expect("canonical config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    /// `--out`, then `output_dir`, then `<root>/<experiment>-<hash prefix>`
    /// where root comes from the caller (normally `LQLAB_OUT`).
    pub fn output_dir(&self, out: Option<&Path>, root: &Path) -> PathBuf {
        match (out, &self.output_dir) {
            (Some(dir), _) => dir.to_path_buf(),
            (None, Some(dir)) => dir.clone(),
            (None, None) => root.join(format!("{}-{}", self.experiment.name(), &self.hash()[..12])),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn resolve(text: &str) -> Result<ExperimentConfig, ConfigError> {
        RawConfig::from_str("cfg.json", text)?.resolve()
    }

    #[test]
    fn minimal_config_takes_defaults() {
        let cfg = resolve(r#"{"experiment": "hjb-vi"}"#).unwrap();
        assert_eq!(cfg.grid, GridSpec::Spacing(0.01));
        assert_eq!(cfg.relaxation_rate, RateSpec::Auto);
        assert_eq!(cfg.mdp_action_nodes, 41);
        assert_eq!(cfg.problem.drift, 0.5);
    }

    #[test]
    fn unknown_key_is_reported_with_line() {
        let err =
            resolve("{\n  \"experiment\": \"qlearn\",\n  \"qlearn.epsilonn\": 0.2\n}").unwrap_err();
        assert_eq!(err.line, Some(3));
        assert_eq!(err.field, "qlearn.epsilonn");
        assert_eq!(err.to_string(), "cfg.json:3: qlearn.epsilonn: unknown key");
    }

    #[test]
    fn invalid_epsilon_names_the_field() {
        let err =
            resolve("{\n\"experiment\": \"qlearn\",\n\"qlearn.epsilon\": 1.5\n}").unwrap_err();
        assert_eq!(err.field, "qlearn.epsilon");
        assert_eq!(err.line, Some(3));
    }

    #[test]
    fn syntax_errors_carry_a_line() {
        let err = resolve("{\n\"experiment\": \"qlearn\",\n\"seed\": }").unwrap_err();
        assert_eq!(err.line, Some(3));
    }

    #[test]
    fn type_mismatch_is_rejected() {
        let err = resolve(r#"{"experiment": "qlearn", "qlearn.n_episodes": 2.5}"#).unwrap_err();
        assert_eq!(err.field, "qlearn.n_episodes");
        let err =
            resolve(r#"{"experiment": "hjb-vi", "scheme.relaxation_rate": "fast"}"#).unwrap_err();
        assert_eq!(err.field, "scheme.relaxation_rate");
    }

    #[test]
    fn hash_ignores_key_order_and_output_dir() {
        let a = resolve(r#"{"experiment": "qlearn", "seed": 3, "qlearn.epsilon": 0.2}"#).unwrap();
        let b = resolve(
            r#"{"qlearn.epsilon": 0.2, "output_dir": "x", "seed": 3, "experiment": "qlearn"}"#,
        )
        .unwrap();
        assert_eq!(a.hash(), b.hash());
        let c = resolve(r#"{"experiment": "qlearn", "seed": 4, "qlearn.epsilon": 0.2}"#).unwrap();
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn explicit_defaults_hash_like_omitted_ones() {
        let a = resolve(r#"{"experiment": "hjb-vi"}"#).unwrap();
        let b = resolve(
            r#"{"experiment": "hjb-vi", "grid.dx": 0.01, "scheme.relaxation_rate": "auto"}"#,
        )
        .unwrap();
        assert_eq!(a.hash(), b.hash());
    }

    #[test]
    fn grid_keys_are_exclusive() {
        let err =
            resolve(r#"{"experiment": "hjb-vi", "grid.dx": 0.1, "grid.n_nodes": 41}"#).unwrap_err();
        assert_eq!(err.field, "grid.dx");
    }

    #[test]
    fn sweep_needs_a_base_experiment() {
        let err = resolve(r#"{"experiment": "sweep"}"#).unwrap_err();
        assert_eq!(err.field, "sweep.experiment");
        let cfg = resolve(r#"{"experiment": "sweep", "sweep.experiment": "qlearn", "sweep.param": "qlearn.learning_rate", "sweep.values": [0.8, 1.3]}"#).unwrap();
        assert_eq!(cfg.base_kind(), Kind::QLearn);
    }

    #[test]
    fn set_number_rejects_non_numeric_keys() {
        let mut raw = RawConfig::from_str("c", r#"{"experiment": "qlearn"}"#).unwrap();
        assert!(raw.set_number("scheme.differencing", 1.0).is_err());
        raw.set_number("mdp.state_nodes", 41.0).unwrap();
        assert_eq!(raw.resolve().unwrap().mdp_state_nodes, 41);
    }

    #[test]
    fn monitor_threshold_errors_use_config_key() {
        let err = resolve(r#"{"experiment": "qlearn", "monitor.threshold": -1}"#).unwrap_err();
        assert_eq!(err.field, "monitor.threshold");
    }
}
