//! The synchronous policy mirror descent loop and a value-iteration baseline.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};

use crate::bregman::{self, DivergenceKind, DivergenceSpec};
use crate::error::{input, Error, Result};
use crate::mdp::{
    self, evaluate_q, evaluate_values, mismatch_coefficients, Mdp, MismatchCoefficients, OptimalStructure, Policy,
    StateDistribution,
};

/// Step sizes are capped here so `η Q` stays finite under exponential growth.
pub const DEFAULT_ETA_CAP: f64 = 1e12;
/// Default stopping threshold on `V_ρ(π) − V*_ρ`.
pub const DEFAULT_VALUE_GAP_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleKind {
    Constant,
    Exponential,
}

/// Step-size schedule `η_k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub kind: ScheduleKind,
    pub eta0: f64,
    /// Per-iteration growth factor, exponential schedules only.
    pub growth: f64,
    pub eta_cap: f64,
}

impl Schedule {
    pub fn constant(eta0: f64) -> Self {
        Self {
            kind: ScheduleKind::Constant,
            eta0,
            growth: 1.0,
            eta_cap: DEFAULT_ETA_CAP,
        }
    }

    pub fn exponential(eta0: f64, growth: f64) -> Self {
        Self {
            kind: ScheduleKind::Exponential,
            eta0,
            growth,
            eta_cap: DEFAULT_ETA_CAP,
        }
    }

    /// The growth factor `ϑ/(ϑ − 1)` required for the linear-rate guarantee.
    pub fn theory_growth(theta_rho: f64) -> f64 {
        theta_rho / (theta_rho - 1.0)
    }

    pub fn with_cap(self, eta_cap: f64) -> Self {
        Self { eta_cap, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta0 > 0.0) || !self.eta0.is_finite() {
            return input(format!("eta0 must be positive and finite, got {}", self.eta0));
        }
        if self.kind == ScheduleKind::Exponential && !(self.growth >= 1.0) {
            return input(format!("exponential growth must be at least 1, got {}", self.growth));
        }
        if !(self.eta_cap > 0.0) {
            return input(format!("eta cap must be positive, got {}", self.eta_cap));
        }
        Ok(())
    }

    /// `η_k`.
    pub fn eta(&self, k: usize) -> f64 {
        match self.kind {
            ScheduleKind::Constant => self.eta0,
            ScheduleKind::Exponential => {
                let k = i32::try_from(k).unwrap_or(i32::MAX);
                (self.eta0 * self.growth.powi(k)).min(self.eta_cap)
            }
        }
    }

    pub fn label(&self) -> &'static str {
        match self.kind {
            ScheduleKind::Constant => "constant",
            ScheduleKind::Exponential => "exponential",
        }
    }
}

/// Free-standing alias of [`Schedule::eta`].
pub fn schedule_eta(schedule: &Schedule, k: usize) -> f64 {
    schedule.eta(k)
}

/// Regularisation towards the initial policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Regularization {
    Off,
    /// `τ_k` chosen each step so that `1 + η_k τ_k = 1/γ`.
    Adaptive,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub divergence: DivergenceSpec,
    pub schedule: Schedule,
    pub rho: StateDistribution,
    pub init_policy: Policy,
    pub regularization: Regularization,
    pub max_iter: usize,
    pub stop_on_support_match: bool,
    /// Stop once `V_ρ(π) − V*_ρ` falls to this level; `None` disables the test.
    pub value_gap_tol: Option<f64>,
    /// Keep every iterate's policy in the returned trajectory.
    pub keep_policies: bool,
}

impl RunConfig {
    /// Uniform `ρ`, uniform initial policy (log-domain for KL), no regularisation.
    pub fn new(divergence: DivergenceSpec, schedule: Schedule, n_states: usize, n_actions: usize) -> Self {
        let init_policy = if divergence.kind == DivergenceKind::Kl {
            Policy::uniform_log(n_states, n_actions)
        } else {
            Policy::uniform(n_states, n_actions)
        };
        Self {
            divergence,
            schedule,
            rho: StateDistribution::uniform(n_states),
            init_policy,
            regularization: Regularization::Off,
            max_iter: 1000,
            stop_on_support_match: false,
            value_gap_tol: Some(DEFAULT_VALUE_GAP_TOL),
            keep_policies: false,
        }
    }

    pub fn validate(&self, mdp: &Mdp) -> Result<()> {
        self.schedule.validate()?;
        if self.init_policy.n_states() != mdp.n_states() || self.init_policy.n_actions() != mdp.n_actions() {
            return input("initial policy shape does not match the MDP");
        }
        if self.rho.len() != mdp.n_states() {
            return input("ρ length does not match the MDP");
        }
        if self.divergence.boundary_blowup
            && (0..mdp.n_states()).any(|s| (0..mdp.n_actions()).any(|a| self.init_policy.is_zero(s, a)))
        {
            return Err(Error::Domain(format!(
                "{} needs an initial policy in the relative interior",
                self.divergence.label()
            )));
        }
        if self.regularization == Regularization::Adaptive {
            if self.divergence.kind == DivergenceKind::Tsallis {
                return Err(Error::Unsupported("regularised Tsallis step".into()));
            }
            if mdp.gamma() == 0.0 {
                return input("adaptive regularisation needs γ > 0");
            }
        }
        Ok(())
    }
}

/// Quantities of the optimal solution every recorded iterate is compared against.
#[derive(Debug, Clone)]
pub struct Reference {
    pub structure: OptimalStructure,
    pub mismatch: MismatchCoefficients,
    pub rho: StateDistribution,
    /// `V*_ρ`.
    pub v_star_rho: f64,
}

impl Reference {
    pub fn new(mdp: &Mdp, rho: &StateDistribution) -> Result<Self> {
        let structure = OptimalStructure::solve(mdp)?;
        Self::from_structure(mdp, rho, structure)
    }

    pub fn from_structure(mdp: &Mdp, rho: &StateDistribution, structure: OptimalStructure) -> Result<Self> {
        let mismatch = mismatch_coefficients(mdp, rho, &structure.optimal_policy(), &structure)?;
        let v_star_rho = rho.expect(&structure.v_star);
        Ok(Self {
            structure,
            mismatch,
            rho: rho.clone(),
            v_star_rho,
        })
    }
}

/// Diagnostics of one iterate.
#[derive(Debug, Clone, PartialEq)]
pub struct IterateRecord {
    pub k: usize,
    /// Step size used to leave this iterate; `None` for value iteration.
    pub eta_k: Option<f64>,
    /// `V_ρ(π_k) − V*_ρ`.
    pub value_gap: f64,
    /// `max_s V_s(π_k) − V*_s`.
    pub max_state_gap: f64,
    /// `max_{s,a} Q_{s,a}(π_k) − Q*_{s,a}`.
    pub q_gap_max: f64,
    /// `‖π_k − Π*‖_∞`.
    pub policy_distance: f64,
    /// Every state puts zero mass outside its optimal action set.
    pub support_match: bool,
    /// Largest KKT residual of the step that produced this iterate (0 at `k = 0`).
    pub max_kkt_residual: f64,
    /// `Σ_s d_ρ(π*)_s D(π*_s, π_{k,s})` when defined.
    pub d_star: Option<f64>,
    /// Largest `ln(π_{s,a} / π_{s,b})` over non-dummy states, `a ∉ A_s*`, `b ∈ A_s*`.
    pub max_log_ratio: Option<f64>,
    /// Elapsed time since the run started.
    pub wall_time: Duration,
}

/// Records of a run plus, optionally, every iterate.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub records: Vec<IterateRecord>,
    pub policies: Vec<Policy>,
    pub final_policy: Policy,
}

impl Trajectory {
    /// First iterate at which the support matched the optimal action sets.
    pub fn support_match_iteration(&self) -> Option<usize> {
        self.records.iter().find(|r| r.support_match).map(|r| r.k)
    }
}

/// `max_s 2 Σ_{a ∉ A_s*} π_{s,a}`: the L1 cost of moving all suboptimal mass onto `A_s*`.
pub fn policy_distance(policy: &Policy, structure: &OptimalStructure) -> f64 {
    (0..policy.n_states())
        .map(|s| {
            let row = policy.prob_row(s);
            2.0 * (0..row.len())
                .filter(|&a| !structure.is_optimal_action(s, a))
                .map(|a| row[a])
                .sum::<f64>()
        })
        .fold(0.0, f64::max)
}

fn support_matches(policy: &Policy, structure: &OptimalStructure) -> bool {
    (0..policy.n_states())
        .all(|s| (0..policy.n_actions()).all(|a| structure.is_optimal_action(s, a) || policy.is_zero(s, a)))
}

fn max_log_ratio(policy: &Policy, structure: &OptimalStructure) -> Option<f64> {
    let mut best: Option<f64> = None;
    for s in (0..policy.n_states()).filter(|&s| !structure.is_dummy(s)) {
        for a in (0..policy.n_actions()).filter(|&a| !structure.is_optimal_action(s, a)) {
            for &b in &structure.optimal_actions[s] {
                let r = policy.log_ratio(s, a, b);
                best = Some(best.map_or(r, |x| x.max(r)));
            }
        }
    }
    best
}

/// `Σ_s d_ρ(π*)_s D(π*_s, π_s)` with the lexicographic optimal policy; `None`
/// where the divergence is undefined (boundary rows under a blow-up generator).
pub fn weighted_divergence_to_optimal(spec: &DivergenceSpec, policy: &Policy, reference: &Reference) -> Option<f64> {
    let weights = reference.mismatch.d_rho_pi_star.weights();
    let actions = reference.structure.lexicographic_actions();
    let n_actions = policy.n_actions();
    let mut total = 0.0;
    for (s, &b) in actions.iter().enumerate() {
        let mut vertex = vec![0.0; n_actions];
        vertex[b] = 1.0;
        let d = if policy.is_log_domain() && spec.kind == DivergenceKind::Kl {
            bregman::kl_from_logits(&vertex, policy.raw_row(s)).ok()?
        } else {
            bregman::divergence_value(spec, &vertex, &policy.prob_row(s)).ok()?
        };
        total += weights[s] * d;
    }
    total.is_finite().then_some(total)
}

struct Evaluation {
    v: DVector<f64>,
    q: DMatrix<f64>,
}

fn evaluate(mdp: &Mdp, policy: &Policy) -> Result<Evaluation> {
    let v = evaluate_values(mdp, policy)?;
    let q = evaluate_q(mdp, &v)?;
    Ok(Evaluation { v, q })
}

#[allow(clippy::too_many_arguments)]
fn record(
    k: usize,
    eta_k: Option<f64>,
    policy: &Policy,
    eval: &Evaluation,
    spec: Option<&DivergenceSpec>,
    kkt: f64,
    reference: &Reference,
    started: Instant,
) -> IterateRecord {
    let structure = &reference.structure;
    let value_gap = reference.rho.expect(&eval.v) - reference.v_star_rho;
    let max_state_gap = (&eval.v - &structure.v_star).max();
    let q_gap_max = (&eval.q - &structure.q_star).max();
    IterateRecord {
        k,
        eta_k,
        value_gap,
        max_state_gap,
        q_gap_max,
        policy_distance: policy_distance(policy, structure),
        support_match: support_matches(policy, structure),
        max_kkt_residual: kkt,
        d_star: spec.and_then(|spec| weighted_divergence_to_optimal(spec, policy, reference)),
        max_log_ratio: max_log_ratio(policy, structure),
        wall_time: started.elapsed(),
    }
}

fn to_direct(policy: &Policy) -> Result<Policy> {
    if policy.is_log_domain() {
        Policy::from_probs(policy.n_states(), policy.n_actions(), policy.probs())
    } else {
        Ok(policy.clone())
    }
}

fn log_row(policy: &Policy, s: usize) -> Vec<f64> {
    if policy.is_log_domain() {
        policy.raw_row(s).to_vec()
    } else {
        policy.raw_row(s).iter().map(|p| p.ln()).collect()
    }
}

/// One synchronous step from precomputed action values; returns the new policy and
/// the largest per-state KKT residual.
fn step_from_q(
    policy: &Policy,
    q: &DMatrix<f64>,
    spec: &DivergenceSpec,
    eta: f64,
    reg: Option<(f64, &Policy)>,
) -> Result<(Policy, f64)> {
    let (ns, na) = (policy.n_states(), policy.n_actions());
    let eta_tau = reg.map_or(0.0, |(tau, _)| eta * tau);
    let mut worst: f64 = 0.0;

    if spec.kind == DivergenceKind::Kl && policy.is_log_domain() {
        let mut next = policy.clone();
        for (s, row) in next.raw_rows_mut().enumerate() {
            let g: Vec<f64> = q.row(s).iter().map(|x| eta * x).collect();
            let prev = policy.raw_row(s);
            let (stepped, centre) = match reg {
                Some((_, pi0)) if eta_tau > 0.0 => {
                    let centre = log_row(pi0, s);
                    (bregman::kl_regularized_step_logits(prev, &g, eta_tau, &centre)?, centre)
                }
                _ => (bregman::kl_step_logits(prev, &g)?, prev.to_vec()),
            };
            let report = bregman::kkt_check_logits(prev, &stepped, &g, eta_tau, &centre);
            worst = worst.max(report.residual);
            row.copy_from_slice(&stepped);
        }
        if (0..ns).any(|s| next.raw_row(s).iter().any(|l| !l.is_finite())) {
            return Err(Error::Numerical("log-weights overflowed".into()));
        }
        return Ok((next, worst));
    }

    let policy = to_direct(policy)?;
    let mut probs = Vec::with_capacity(ns * na);
    for s in 0..ns {
        let g: Vec<f64> = q.row(s).iter().map(|x| eta * x).collect();
        let prev = policy.raw_row(s);
        let (stepped, report) = match reg {
            Some((_, pi0)) if eta_tau > 0.0 => {
                let centre = pi0.prob_row(s);
                let stepped = bregman::regularized_mirror_step(spec, prev, &g, eta_tau, &centre)?;
                let report = bregman::kkt_check_regularized(spec, prev, &stepped, &g, eta_tau, &centre);
                (stepped, report)
            }
            _ => {
                let stepped = bregman::mirror_step(spec, prev, &g)?;
                let report = bregman::kkt_check(spec, prev, &stepped, &g);
                (stepped, report)
            }
        };
        worst = worst.max(report.residual);
        probs.extend(stepped);
    }
    Ok((Policy::from_probs(ns, na, probs)?, worst))
}

/// One synchronous PMD step: `Q(π)` is computed once, then every row is updated
/// with `η Q_s(π)`. `reg = Some((τ, π0))` selects the regularised update.
pub fn pmd_step(
    mdp: &Mdp,
    policy: &Policy,
    spec: &DivergenceSpec,
    eta: f64,
    reg: Option<(f64, &Policy)>,
) -> Result<Policy> {
    pmd_step_certified(mdp, policy, spec, eta, reg).map(|(p, _)| p)
}

/// [`pmd_step`] plus the largest per-state KKT residual of the step.
pub fn pmd_step_certified(
    mdp: &Mdp,
    policy: &Policy,
    spec: &DivergenceSpec,
    eta: f64,
    reg: Option<(f64, &Policy)>,
) -> Result<(Policy, f64)> {
    if !(eta >= 0.0) || !eta.is_finite() {
        return input(format!("step size must be non-negative and finite, got {eta}"));
    }
    let eval = evaluate(mdp, policy)?;
    step_from_q(policy, &eval.q, spec, eta, reg)
}

/// Runs PMD, solving for the optimal reference first.
pub fn run_pmd(mdp: &Mdp, config: &RunConfig) -> Result<Trajectory> {
    let reference = Reference::new(mdp, &config.rho)?;
    run_pmd_with(mdp, config, &reference)
}

/// Runs PMD against a precomputed reference. Records `k = 0, 1, …` until
/// `max_iter`, the value-gap threshold, or (if requested) a support match.
pub fn run_pmd_with(mdp: &Mdp, config: &RunConfig, reference: &Reference) -> Result<Trajectory> {
    config.validate(mdp)?;
    let started = Instant::now();
    let spec = &config.divergence;
    let mut policy = if spec.kind == DivergenceKind::Kl {
        config.init_policy.clone()
    } else {
        to_direct(&config.init_policy)?
    };
    let pi0 = policy.clone();
    let mut records = Vec::new();
    let mut policies = Vec::new();
    let mut kkt = 0.0;

    for k in 0.. {
        let eta = config.schedule.eta(k);
        let eval = evaluate(mdp, &policy)?;
        let rec = record(k, Some(eta), &policy, &eval, Some(spec), kkt, reference, started);
        let done = k >= config.max_iter
            || config.value_gap_tol.is_some_and(|tol| rec.value_gap <= tol)
            || (config.stop_on_support_match && rec.support_match);
        records.push(rec);
        if config.keep_policies {
            policies.push(policy.clone());
        }
        if done {
            break;
        }
        let reg = match config.regularization {
            Regularization::Off => None,
            Regularization::Adaptive => Some(((1.0 / mdp.gamma() - 1.0) / eta, &pi0)),
        };
        let (next, residual) = step_from_q(&policy, &eval.q, spec, eta, reg)?;
        policy = next;
        kkt = residual;
    }
    Ok(Trajectory {
        records,
        policies,
        final_policy: policy,
    })
}

/// Synchronous min-Bellman sweeps from `V = 0`; record `k` describes the greedy
/// policy of the `k`-th value iterate.
pub fn run_value_iteration(
    mdp: &Mdp,
    rho: &StateDistribution,
    max_iter: usize,
    reference: &Reference,
) -> Result<Trajectory> {
    if rho.len() != mdp.n_states() {
        return input("ρ length does not match the MDP");
    }
    let started = Instant::now();
    let mut v = DVector::zeros(mdp.n_states());
    let mut records = Vec::with_capacity(max_iter + 1);
    let mut policy = Policy::uniform(mdp.n_states(), mdp.n_actions());
    for k in 0..=max_iter {
        let (tv, greedy) = mdp::bellman_sweep(mdp, &v)?;
        policy = Policy::deterministic(mdp.n_actions(), &greedy)?;
        let eval = evaluate(mdp, &policy)?;
        records.push(record(k, None, &policy, &eval, None, 0.0, reference, started));
        v = tv;
    }
    Ok(Trajectory {
        records,
        policies: Vec::new(),
        final_policy: policy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn schedule_examples() {
        assert_eq!(Schedule::constant(1.0).eta(12345), 1.0);
        let exp = Schedule::exponential(1.0, 1.0 / 0.999);
        assert_abs_diff_eq!(exp.eta(1000), (1.0f64 / 0.999).powi(1000), epsilon = 1e-12);
        assert_abs_diff_eq!(exp.eta(1000), 2.7197, epsilon = 1e-4);
        let theory = Schedule::exponential(1.0, Schedule::theory_growth(10.0));
        assert_abs_diff_eq!(theory.eta(1) / theory.eta(0), 10.0 / 9.0, epsilon = 1e-15);
        let capped = Schedule::exponential(1.0, 2.0).with_cap(100.0);
        assert_eq!(capped.eta(50), 100.0);
        assert!(Schedule::constant(0.0).validate().is_err());
        assert!(Schedule::exponential(1.0, 0.5).validate().is_err());
    }

    #[test]
    fn zero_step_and_single_action_are_fixed_points() {
        let mdp = Mdp::random(5, 3, 4, 0.9).unwrap();
        let policy = Policy::from_probs(
            3,
            4,
            vec![0.1, 0.2, 0.3, 0.4, 0.25, 0.25, 0.25, 0.25, 0.7, 0.1, 0.1, 0.1],
        )
        .unwrap();
        for spec in [
            DivergenceSpec::euclidean(),
            DivergenceSpec::kl(),
            DivergenceSpec::tsallis(2.0).unwrap(),
        ] {
            let next = pmd_step(&mdp, &policy, &spec, 0.0, None).unwrap();
            for (a, b) in next.probs().iter().zip(policy.probs()) {
                assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
            }
        }
        let one = Mdp::new(1, 1, &[1.0], &[0.5], 0.9).unwrap();
        let p = pmd_step(&one, &Policy::uniform(1, 1), &DivergenceSpec::euclidean(), 10.0, None).unwrap();
        assert_eq!(p.probs(), vec![1.0]);
    }

    #[test]
    fn distance_examples() {
        let mdp = Mdp::new(1, 2, &[1.0, 1.0], &[0.0, 0.3], 0.0).unwrap();
        let structure = OptimalStructure::solve(&mdp).unwrap();
        let p = Policy::from_probs(1, 2, vec![0.9, 0.1]).unwrap();
        assert_abs_diff_eq!(policy_distance(&p, &structure), 0.2, epsilon = 1e-15);
        assert_eq!(policy_distance(&structure.optimal_policy(), &structure), 0.0);
        assert!(support_matches(&structure.optimal_policy(), &structure));
        assert!(!support_matches(&p, &structure));
    }

    #[test]
    fn max_iter_zero_records_initial_policy() {
        let mdp = Mdp::random(2, 3, 2, 0.9).unwrap();
        let mut config = RunConfig::new(DivergenceSpec::kl(), Schedule::constant(1.0), 3, 2);
        config.max_iter = 0;
        let t = run_pmd(&mdp, &config).unwrap();
        assert_eq!(t.records.len(), 1);
        assert_eq!(t.records[0].k, 0);
        assert_eq!(t.records[0].max_kkt_residual, 0.0);
    }

    #[test]
    fn boundary_start_rejected_for_kl() {
        let mdp = Mdp::random(2, 2, 2, 0.9).unwrap();
        let mut config = RunConfig::new(DivergenceSpec::kl(), Schedule::constant(1.0), 2, 2);
        config.init_policy = Policy::deterministic(2, &[0, 1]).unwrap();
        assert!(matches!(run_pmd(&mdp, &config), Err(Error::Domain(_))));
    }

    #[test]
    fn regularised_tsallis_rejected() {
        let mdp = Mdp::random(2, 2, 2, 0.9).unwrap();
        let mut config = RunConfig::new(DivergenceSpec::tsallis(2.0).unwrap(), Schedule::constant(1.0), 2, 2);
        config.regularization = Regularization::Adaptive;
        assert!(matches!(run_pmd(&mdp, &config), Err(Error::Unsupported(_))));
    }

    #[test]
    fn single_state_value_iteration_is_exact_after_one_sweep() {
        let mdp = Mdp::new(1, 2, &[1.0, 1.0], &[0.4, 0.2], 0.9).unwrap();
        let rho = StateDistribution::uniform(1);
        let reference = Reference::new(&mdp, &rho).unwrap();
        let t = run_value_iteration(&mdp, &rho, 3, &reference).unwrap();
        assert_eq!(t.records.len(), 4);
        assert!(t.records[1..].iter().all(|r| r.value_gap.abs() <= 1e-12));
    }
}
