//! Configuration-driven experiments: one random MDP, several PMD variants and a
//! value-iteration baseline, written out as per-method trajectory CSVs plus a summary.

mod config;
mod csv_io;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

pub use config::{ExperimentConfig, Growth, MethodConfig, RhoMode, Tolerances, BASELINE_ID};
pub use csv_io::{read_trajectories, summarize, CsvRow, MethodDigest, Summary, COLUMNS};

use crate::bregman::{DivergenceKind, DivergenceSpec};
use crate::diagnostics::{self, BoundContext, CheckReport, CheckScope, StopPrediction};
use crate::engine::{self, IterateRecord, Reference, Regularization, RunConfig, Schedule, ScheduleKind};
use crate::mdp::{self, Mdp, OptimalStructure, StateDistribution};

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{scope}: field `{field}`: {message}")]
    Invalid {
        scope: String,
        field: String,
        message: String,
    },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Csv { path: PathBuf, message: String },
    #[error(transparent)]
    Core(#[from] crate::Error),
}

impl ExperimentError {
    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Self::Parse {
            line,
            message: message.into(),
        }
    }

    pub(crate) fn invalid(scope: &str, field: &str, message: impl Into<String>) -> Self {
        Self::Invalid {
            scope: scope.to_string(),
            field: field.to_string(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Everything known about one finished method.
#[derive(Debug, Clone)]
pub struct MethodOutcome {
    pub id: String,
    pub divergence: String,
    pub schedule: String,
    pub regularized: bool,
    pub records: Vec<IterateRecord>,
    pub report: CheckReport,
    /// Explicit finite-stop bound, squared Euclidean unregularised runs only.
    pub prediction: Option<StopPrediction>,
    pub csv_path: PathBuf,
}

impl MethodOutcome {
    pub fn final_value_gap(&self) -> f64 {
        self.records.last().map_or(f64::NAN, |r| r.value_gap)
    }

    pub fn stop_iteration(&self) -> Option<usize> {
        self.records.iter().find(|r| r.support_match).map(|r| r.k)
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentSummary {
    pub seed: u64,
    pub delta_gap: f64,
    pub log_inv_gamma: f64,
    pub r_rho: f64,
    pub theta_rho: f64,
    /// Methods in declaration order, the baseline last.
    pub methods: Vec<MethodOutcome>,
    pub text: String,
    pub summary_path: PathBuf,
}

impl ExperimentSummary {
    pub fn violations(&self) -> usize {
        self.methods.iter().map(|m| m.report.violations()).sum()
    }

    pub fn method(&self, id: &str) -> Option<&MethodOutcome> {
        self.methods.iter().find(|m| m.id == id)
    }
}

fn resolve_schedule(method: &MethodConfig, gamma: f64, theta_rho: f64, cap: f64) -> Schedule {
    let schedule = match method.schedule {
        ScheduleKind::Constant => Schedule::constant(method.eta0),
        ScheduleKind::Exponential => {
            let growth = match method.growth {
                Growth::Value(g) => g,
                Growth::InverseGamma => 1.0 / gamma,
                Growth::Theory => Schedule::theory_growth(theta_rho),
            };
            Schedule::exponential(method.eta0, growth)
        }
    };
    schedule.with_cap(cap)
}

fn run_method(
    config: &ExperimentConfig,
    mdp: &Mdp,
    reference: &Reference,
    method: &MethodConfig,
) -> Result<MethodOutcome, ExperimentError> {
    let schedule = resolve_schedule(
        method,
        mdp.gamma(),
        reference.mismatch.theta_rho,
        config.tolerances.eta_cap,
    );
    let mut run = RunConfig::new(method.divergence, schedule, mdp.n_states(), mdp.n_actions());
    run.rho = reference.rho.clone();
    run.max_iter = config.max_iter;
    run.value_gap_tol = config.tolerances.value_gap_tol;
    run.stop_on_support_match = config.stop_on_support_match;
    if method.regularized {
        run.regularization = Regularization::Adaptive;
    }
    let trajectory = engine::run_pmd_with(mdp, &run, reference)?;
    let ctx = BoundContext::new(mdp, reference, &method.divergence, &schedule, &run.init_policy)?;
    let (scope, bound_schedule) = if method.regularized {
        (CheckScope::chains_only(), None)
    } else {
        (CheckScope::pmd(&method.divergence, &schedule), Some(&schedule))
    };
    let report = diagnostics::check_trajectory(&ctx, scope, &trajectory.records);
    let prediction = (method.divergence.kind == DivergenceKind::Euclidean && !method.regularized)
        .then(|| diagnostics::predicted_stop_k_euclidean(&ctx, &schedule));

    let outcome = MethodOutcome {
        id: method.id.clone(),
        divergence: method.divergence.label(),
        schedule: schedule.label().to_string(),
        regularized: method.regularized,
        records: trajectory.records,
        report,
        prediction,
        csv_path: config.output_path.join(format!("{}.csv", method.id)),
    };
    let bounds: Vec<Option<f64>> = outcome
        .records
        .iter()
        .map(|r| bound_schedule.and_then(|s| diagnostics::value_bound(&ctx, s, r.k)))
        .collect();
    csv_io::write_trajectory(config, &outcome, &bounds)?;
    Ok(outcome)
}

fn run_baseline(config: &ExperimentConfig, mdp: &Mdp, reference: &Reference) -> Result<MethodOutcome, ExperimentError> {
    let trajectory = engine::run_value_iteration(mdp, &reference.rho, config.max_iter, reference)?;
    let spec = DivergenceSpec::euclidean();
    let schedule = Schedule::constant(1.0);
    let uniform = mdp::Policy::uniform(mdp.n_states(), mdp.n_actions());
    let ctx = BoundContext::new(mdp, reference, &spec, &schedule, &uniform)?;
    let report = diagnostics::check_trajectory(&ctx, CheckScope::chains_only(), &trajectory.records);
    let outcome = MethodOutcome {
        id: BASELINE_ID.to_string(),
        divergence: "none".to_string(),
        schedule: "none".to_string(),
        regularized: false,
        records: trajectory.records,
        report,
        prediction: None,
        csv_path: config.output_path.join(format!("{BASELINE_ID}.csv")),
    };
    let bounds = vec![None; outcome.records.len()];
    csv_io::write_trajectory(config, &outcome, &bounds)?;
    Ok(outcome)
}

/// Runs every configured method plus value iteration and writes `<id>.csv` and
/// `summary.txt` under `config.output_path`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentSummary, ExperimentError> {
    config.validate()?;
    let mdp = Mdp::random(config.seed, config.n_states, config.n_actions, config.gamma)?;
    let rho = match config.rho_mode {
        RhoMode::Uniform => StateDistribution::uniform(config.n_states),
    };
    let (v_star, q_star) = mdp::solve_optimal(&mdp, mdp::DEFAULT_SOLVE_TOL)?;
    let structure = mdp::optimal_structure(v_star, q_star, config.tolerances.tie_tol)?;
    let reference = Reference::from_structure(&mdp, &rho, structure)?;

    std::fs::create_dir_all(&config.output_path).map_err(|e| ExperimentError::io(&config.output_path, e))?;

    let mut methods = config
        .methods
        .par_iter()
        .map(|m| run_method(config, &mdp, &reference, m))
        .collect::<Result<Vec<_>, _>>()?;
    methods.push(run_baseline(config, &mdp, &reference)?);

    let mut summary = ExperimentSummary {
        seed: config.seed,
        delta_gap: reference.structure.delta_gap,
        log_inv_gamma: (1.0 / config.gamma).ln(),
        r_rho: reference.mismatch.r_rho,
        theta_rho: reference.mismatch.theta_rho,
        methods,
        text: String::new(),
        summary_path: config.output_path.join("summary.txt"),
    };
    summary.text = render_summary(config, &reference.structure, &summary);
    std::fs::write(&summary.summary_path, &summary.text).map_err(|e| ExperimentError::io(&summary.summary_path, e))?;
    Ok(summary)
}

fn render_summary(config: &ExperimentConfig, structure: &OptimalStructure, s: &ExperimentSummary) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "seed = {}", s.seed);
    let _ = writeln!(
        out,
        "geometry = {} states x {} actions, gamma = {}",
        config.n_states, config.n_actions, config.gamma
    );
    let _ = writeln!(out, "rho = ones over states, normalized to the uniform distribution");
    let _ = writeln!(out, "delta = {:.6e}", s.delta_gap);
    if !structure.gap_is_reliable() {
        let _ = writeln!(
            out,
            "warning: delta below {:.0e}; optimal action sets may be unstable",
            mdp::RELIABLE_GAP
        );
    }
    let _ = writeln!(out, "ln(1/gamma) = {:.6e}", s.log_inv_gamma);
    let _ = writeln!(out, "r_rho = {:.6e}", s.r_rho);
    let _ = writeln!(out, "theta_rho = {:.6e}", s.theta_rho);
    let _ = writeln!(out, "dummy states = {}", structure.dummy_states.len());
    for m in &s.methods {
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "[{}] divergence={} schedule={} regularized={}",
            m.id, m.divergence, m.schedule, m.regularized
        );
        let _ = writeln!(out, "  iterations = {}", m.records.len().saturating_sub(1));
        let _ = writeln!(out, "  final value gap = {:.6e}", m.final_value_gap());
        match m.stop_iteration() {
            Some(k) => {
                let _ = writeln!(out, "  support match at k = {k}");
            }
            None => {
                let _ = writeln!(out, "  support match: not reached");
            }
        }
        match m.prediction {
            Some(StopPrediction::Within(k)) => {
                let _ = writeln!(out, "  predicted stop K = {k}");
            }
            Some(StopPrediction::NotGuaranteed) => {
                let _ = writeln!(out, "  predicted stop K: not guaranteed");
            }
            None => {}
        }
        let max_kkt = m.records.iter().map(|r| r.max_kkt_residual).fold(0.0, f64::max);
        let _ = writeln!(out, "  max kkt residual = {max_kkt:.3e}");
        let r = &m.report;
        let _ = writeln!(
            out,
            "  violations: value_bound={} q_chain={} policy_chain={} log_ratio={} kkt={}",
            r.value_bound, r.q_chain, r.policy_chain, r.log_ratio, r.kkt
        );
    }
    let _ = writeln!(out);
    let _ = writeln!(out, "total violations = {}", s.violations());
    out
}
