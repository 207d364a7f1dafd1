//! Line-oriented experiment configuration.
//!
//! ```text
//! # global keys
//! seed = 7
//! n_states = 20
//! n_actions = 100
//! gamma = 0.999
//! max_iter = 20000
//!
//! [method]
//! id = L2
//! divergence = euclidean      # euclidean | kl | tsallis
//! schedule = exponential      # constant | exponential
//! eta0 = 1
//! growth = inv_gamma          # number | inv_gamma | theory
//! regularized = false
//! ```

use std::path::PathBuf;

use crate::bregman::DivergenceSpec;
use crate::engine::{ScheduleKind, DEFAULT_ETA_CAP, DEFAULT_VALUE_GAP_TOL};
use crate::mdp::DEFAULT_TIE_TOL;

use super::ExperimentError;

/// Reserved id of the value-iteration baseline.
pub const BASELINE_ID: &str = "VI";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RhoMode {
    /// All-ones weighting normalised to the uniform distribution.
    Uniform,
}

/// How the exponential growth factor is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Growth {
    Value(f64),
    /// `1/γ`.
    InverseGamma,
    /// `ϑ_ρ/(ϑ_ρ − 1)`, the smallest factor carrying the linear-rate guarantee.
    Theory,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodConfig {
    pub id: String,
    pub divergence: DivergenceSpec,
    pub schedule: ScheduleKind,
    pub eta0: f64,
    pub growth: Growth,
    pub regularized: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tolerances {
    /// Early stop on the value gap; `None` runs to `max_iter`.
    pub value_gap_tol: Option<f64>,
    pub tie_tol: f64,
    pub eta_cap: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            value_gap_tol: Some(DEFAULT_VALUE_GAP_TOL),
            tie_tol: DEFAULT_TIE_TOL,
            eta_cap: DEFAULT_ETA_CAP,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub n_states: usize,
    pub n_actions: usize,
    pub gamma: f64,
    pub rho_mode: RhoMode,
    pub methods: Vec<MethodConfig>,
    pub max_iter: usize,
    pub tolerances: Tolerances,
    pub stop_on_support_match: bool,
    /// Write wall-clock times into the trajectories. Off keeps outputs byte-reproducible.
    pub timing: bool,
    pub output_path: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_states: 20,
            n_actions: 100,
            gamma: 0.999,
            rho_mode: RhoMode::Uniform,
            methods: Vec::new(),
            max_iter: 1000,
            tolerances: Tolerances::default(),
            stop_on_support_match: false,
            timing: false,
            output_path: PathBuf::from("out"),
        }
    }
}

struct PendingMethod {
    line: usize,
    id: Option<String>,
    divergence: Option<String>,
    q: Option<f64>,
    schedule: ScheduleKind,
    eta0: f64,
    growth: Growth,
    regularized: bool,
}

impl PendingMethod {
    fn new(line: usize) -> Self {
        Self {
            line,
            id: None,
            divergence: None,
            q: None,
            schedule: ScheduleKind::Exponential,
            eta0: 1.0,
            growth: Growth::InverseGamma,
            regularized: false,
        }
    }

    fn finish(self) -> Result<MethodConfig, ExperimentError> {
        let line = self.line;
        let id = self
            .id
            .ok_or_else(|| ExperimentError::parse(line, "[method] block without an id"))?;
        let divergence = match self.divergence.as_deref() {
            Some("euclidean") | Some("l2") => DivergenceSpec::euclidean(),
            Some("kl") => DivergenceSpec::kl(),
            Some("tsallis") => {
                let q = self
                    .q
                    .ok_or_else(|| ExperimentError::invalid(&id, "q", "tsallis needs q"))?;
                DivergenceSpec::tsallis(q).map_err(|e| ExperimentError::invalid(&id, "q", e.to_string()))?
            }
            Some(other) => {
                return Err(ExperimentError::invalid(
                    &id,
                    "divergence",
                    format!("unknown divergence `{other}`"),
                ))
            }
            None => return Err(ExperimentError::invalid(&id, "divergence", "missing")),
        };
        if !(self.eta0 > 0.0) || !self.eta0.is_finite() {
            return Err(ExperimentError::invalid(&id, "eta0", "must be positive"));
        }
        if let Growth::Value(g) = self.growth {
            if !(g >= 1.0) || !g.is_finite() {
                return Err(ExperimentError::invalid(&id, "growth", "must be at least 1"));
            }
        }
        if self.regularized && divergence.q.is_some() {
            return Err(ExperimentError::invalid(
                &id,
                "regularized",
                "not supported for tsallis",
            ));
        }
        Ok(MethodConfig {
            id,
            divergence,
            schedule: self.schedule,
            eta0: self.eta0,
            growth: self.growth,
            regularized: self.regularized,
        })
    }
}

fn number<T: std::str::FromStr>(line: usize, key: &str, value: &str) -> Result<T, ExperimentError> {
    value
        .parse()
        .map_err(|_| ExperimentError::parse(line, format!("`{key}`: cannot parse `{value}`")))
}

fn boolean(line: usize, key: &str, value: &str) -> Result<bool, ExperimentError> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(ExperimentError::parse(
            line,
            format!("`{key}`: expected true or false, got `{value}`"),
        )),
    }
}

impl ExperimentConfig {
    /// Parses the key = value format; errors carry the offending line number.
    pub fn parse(text: &str) -> Result<Self, ExperimentError> {
        let mut config = Self::default();
        let mut current: Option<PendingMethod> = None;
        let mut finished = Vec::new();

        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            if content == "[method]" {
                if let Some(m) = current.take() {
                    finished.push(m.finish()?);
                }
                current = Some(PendingMethod::new(line));
                continue;
            }
            if content.starts_with('[') {
                return Err(ExperimentError::parse(line, format!("unknown section `{content}`")));
            }
            let (key, value) = content
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| ExperimentError::parse(line, format!("expected `key = value`, got `{content}`")))?;

            if let Some(method) = current.as_mut() {
                match key {
                    "id" => {
                        if value.is_empty() || !value.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)) {
                            return Err(ExperimentError::parse(line, format!("invalid method id `{value}`")));
                        }
                        method.id = Some(value.to_string());
                    }
                    "divergence" => method.divergence = Some(value.to_string()),
                    "q" => method.q = Some(number(line, key, value)?),
                    "schedule" => {
                        method.schedule = match value {
                            "constant" => ScheduleKind::Constant,
                            "exponential" => ScheduleKind::Exponential,
                            _ => return Err(ExperimentError::parse(line, format!("unknown schedule `{value}`"))),
                        }
                    }
                    "eta0" => method.eta0 = number(line, key, value)?,
                    "growth" => {
                        method.growth = match value {
                            "inv_gamma" => Growth::InverseGamma,
                            "theory" => Growth::Theory,
                            _ => Growth::Value(number(line, key, value)?),
                        }
                    }
                    "regularized" => method.regularized = boolean(line, key, value)?,
                    _ => return Err(ExperimentError::parse(line, format!("unknown method key `{key}`"))),
                }
                continue;
            }

            match key {
                "seed" => config.seed = number(line, key, value)?,
                "n_states" => config.n_states = number(line, key, value)?,
                "n_actions" => config.n_actions = number(line, key, value)?,
                "gamma" => config.gamma = number(line, key, value)?,
                "rho" => {
                    config.rho_mode = match value {
                        "uniform" | "ones" => RhoMode::Uniform,
                        _ => return Err(ExperimentError::parse(line, format!("unsupported rho `{value}`"))),
                    }
                }
                "max_iter" => config.max_iter = number(line, key, value)?,
                "value_gap_tol" => {
                    config.tolerances.value_gap_tol = if value == "none" {
                        None
                    } else {
                        Some(number(line, key, value)?)
                    }
                }
                "tie_tol" => config.tolerances.tie_tol = number(line, key, value)?,
                "eta_cap" => config.tolerances.eta_cap = number(line, key, value)?,
                "stop_on_support_match" => config.stop_on_support_match = boolean(line, key, value)?,
                "timing" => config.timing = boolean(line, key, value)?,
                "output_path" => config.output_path = PathBuf::from(value),
                _ => return Err(ExperimentError::parse(line, format!("unknown key `{key}`"))),
            }
        }
        if let Some(m) = current.take() {
            finished.push(m.finish()?);
        }
        config.methods = finished;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.methods.is_empty() {
            return Err(ExperimentError::invalid(
                "config",
                "methods",
                "at least one [method] block is required",
            ));
        }
        if self.n_states == 0 || self.n_actions == 0 {
            return Err(ExperimentError::invalid(
                "config",
                "n_states/n_actions",
                "must be positive",
            ));
        }
        if !(0.0..1.0).contains(&self.gamma) || self.gamma == 0.0 {
            return Err(ExperimentError::invalid("config", "gamma", "must lie in (0, 1)"));
        }
        if !(self.tolerances.tie_tol > 0.0) {
            return Err(ExperimentError::invalid("config", "tie_tol", "must be positive"));
        }
        if !(self.tolerances.eta_cap > 0.0) {
            return Err(ExperimentError::invalid("config", "eta_cap", "must be positive"));
        }
        let mut seen = std::collections::HashSet::new();
        for m in &self.methods {
            if m.id == BASELINE_ID {
                return Err(ExperimentError::invalid(
                    &m.id,
                    "id",
                    "reserved for the value-iteration baseline",
                ));
            }
            if !seen.insert(m.id.as_str()) {
                return Err(ExperimentError::invalid(&m.id, "id", "duplicate method id"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "
seed = 3
n_states = 4
n_actions = 5
gamma = 0.9   # discount
max_iter = 10
value_gap_tol = none

[method]
id = L2
divergence = euclidean
growth = theory

[method]
id = TS
divergence = tsallis
q = 0.5
schedule = constant
eta0 = 2
";

    #[test]
    fn parses_globals_and_methods() {
        let c = ExperimentConfig::parse(SAMPLE).unwrap();
        assert_eq!(
            (c.seed, c.n_states, c.n_actions, c.gamma, c.max_iter),
            (3, 4, 5, 0.9, 10)
        );
        assert_eq!(c.tolerances.value_gap_tol, None);
        assert_eq!(c.methods.len(), 2);
        assert_eq!(c.methods[0].growth, Growth::Theory);
        assert_eq!(c.methods[0].schedule, ScheduleKind::Exponential);
        assert_eq!(c.methods[1].divergence.q, Some(0.5));
        assert_eq!(c.methods[1].schedule, ScheduleKind::Constant);
        assert_eq!(c.methods[1].eta0, 2.0);
    }

    #[test]
    fn errors_name_line_or_field() {
        let err = ExperimentConfig::parse("seed = x\n[method]\nid=a\ndivergence=kl\n").unwrap_err();
        assert!(err.to_string().contains("line 1"), "{err}");
        let err = ExperimentConfig::parse("seed = 1\n\n[method]\nid=a\ndivergence=foo\n").unwrap_err();
        assert!(err.to_string().contains("divergence"), "{err}");
        let err = ExperimentConfig::parse("seed = 1\n").unwrap_err();
        assert!(err.to_string().contains("method"), "{err}");
        let err = ExperimentConfig::parse("[method]\nid=VI\ndivergence=kl\n").unwrap_err();
        assert!(err.to_string().contains("reserved"), "{err}");
        let err = ExperimentConfig::parse("[method]\nid=a\ndivergence=tsallis\nq=2\nregularized=true\n").unwrap_err();
        assert!(err.to_string().contains("regularized"), "{err}");
        let err = ExperimentConfig::parse("bogus = 1\n").unwrap_err();
        assert!(err.to_string().contains("line 1"), "{err}");
    }
}
