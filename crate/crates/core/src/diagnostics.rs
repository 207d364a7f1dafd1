//! Closed-form convergence bounds and stopping predictions, and a checker that
//! evaluates them along recorded trajectories.
//!
//! The value-gap envelopes are pushed through the mismatch ratio `r_ρ` to give
//! the action-value envelope `A_k`, which in turn drives the policy-level
//! statements: the predicted finite stopping iteration for bounded-gradient
//! generators and the telescoped log-ratio bound for KL.

use crate::bregman::{DivergenceKind, DivergenceSpec};
use crate::engine::{self, IterateRecord, Reference, Schedule, ScheduleKind};
use crate::error::{input, Result};
use crate::mdp::{Mdp, Policy};

/// Absolute slack on analytic bound checks.
pub const BOUND_ABS_TOL: f64 = 1e-6;
/// Relative slack on analytic bound checks.
pub const BOUND_REL_TOL: f64 = 1e-9;
/// Slack on the proposition chains, which compare two measured quantities.
pub const CHAIN_TOL: f64 = 1e-9;
/// Largest accepted KKT residual of a step.
pub const KKT_TOL: f64 = 1e-8;

/// Constants the bounds are evaluated with.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundContext {
    pub gamma: f64,
    pub eta0: f64,
    pub growth: f64,
    /// `Σ_s d_ρ(π*)_s D(π*_s, π⁰_s)`.
    pub d0_star: f64,
    pub r_rho: f64,
    pub theta_rho: f64,
    pub delta_gap: f64,
    /// Gradient bound of the generator; 1 for the squared Euclidean distance.
    pub m: f64,
    pub log_a: f64,
}

impl BoundContext {
    /// Gathers the constants of one run. `D_0*` is measured on `init_policy`.
    pub fn new(
        mdp: &Mdp,
        reference: &Reference,
        spec: &DivergenceSpec,
        schedule: &Schedule,
        init_policy: &Policy,
    ) -> Result<Self> {
        let d0_star = engine::weighted_divergence_to_optimal(spec, init_policy, reference)
            .ok_or_else(|| crate::Error::Domain("D_0* undefined for this initial policy".into()))?;
        Ok(Self {
            gamma: mdp.gamma(),
            eta0: schedule.eta0,
            growth: schedule.growth,
            d0_star,
            r_rho: reference.mismatch.r_rho,
            theta_rho: reference.mismatch.theta_rho,
            delta_gap: reference.structure.delta_gap,
            m: spec.gradient_bound_m.unwrap_or(f64::INFINITY),
            log_a: (mdp.n_actions() as f64).ln(),
        })
    }

    /// Whether the exponential growth meets `η_{k+1} ≥ ϑ/(ϑ−1) η_k`.
    pub fn linear_rate_applies(&self) -> bool {
        growth_suffices(self.theta_rho, self.growth)
    }
}

fn growth_suffices(theta_rho: f64, growth: f64) -> bool {
    theta_rho > 1.0 && growth >= Schedule::theory_growth(theta_rho)
}

/// Sublinear value-gap bound for constant steps:
/// `(1/(k+1)) (D_0*/(η(1−γ)) + 1/(1−γ)²)`.
pub fn bound_sublinear(ctx: &BoundContext, eta: f64, k: usize) -> f64 {
    let horizon = 1.0 / (1.0 - ctx.gamma);
    (ctx.d0_star / eta * horizon + horizon * horizon) / (k as f64 + 1.0)
}

/// Linear value-gap bound for exponential steps:
/// `(1 − 1/ϑ)^k (1/(1−γ) + D_0*/(η_0 γ))`.
pub fn bound_linear(ctx: &BoundContext, k: usize) -> f64 {
    let rate = 1.0 - 1.0 / ctx.theta_rho;
    let k = i32::try_from(k).unwrap_or(i32::MAX);
    rate.powi(k) * (1.0 / (1.0 - ctx.gamma) + ctx.d0_star / (ctx.eta0 * ctx.gamma))
}

/// Last iterate index whose preceding steps all followed the uncapped schedule.
fn last_uncapped(schedule: &Schedule) -> usize {
    if schedule.kind == ScheduleKind::Constant || schedule.growth <= 1.0 {
        return usize::MAX;
    }
    let steps = (schedule.eta_cap / schedule.eta0).ln() / schedule.growth.ln();
    if steps.is_finite() && steps >= 0.0 {
        steps.floor() as usize + 1
    } else {
        usize::MAX
    }
}

/// The value-gap envelope applicable to an unregularised run at iterate `k`.
///
/// Constant schedules use the sublinear bound, exponential schedules meeting the
/// growth condition the linear bound. Once the step-size cap binds, the growth
/// condition no longer holds; PMD values are monotonically non-increasing for
/// any positive step, so the bound reached at the last uncapped iterate is carried
/// forward. Returns `None` when no guarantee applies.
pub fn value_bound(ctx: &BoundContext, schedule: &Schedule, k: usize) -> Option<f64> {
    match schedule.kind {
        ScheduleKind::Constant => Some(bound_sublinear(ctx, schedule.eta0, k)),
        ScheduleKind::Exponential if growth_suffices(ctx.theta_rho, schedule.growth) => {
            Some(bound_linear(ctx, k.min(last_uncapped(schedule))))
        }
        ScheduleKind::Exponential => None,
    }
}

/// `γ r_ρ (V_ρ(π) − V*_ρ)`.
pub fn q_gap_from_value_gap(ctx: &BoundContext, value_gap: f64) -> f64 {
    ctx.gamma * ctx.r_rho * value_gap
}

/// `A_0, …, A_{len−1}`: the value envelope converted to an action-value envelope.
pub fn a_sequence(ctx: &BoundContext, schedule: &Schedule, len: usize) -> Option<Vec<f64>> {
    (0..len)
        .map(|k| value_bound(ctx, schedule, k).map(|b| q_gap_from_value_gap(ctx, b)))
        .collect()
}

/// `‖π − Π*‖_∞ / (1 − γ)²`.
pub fn policy_to_value_bound(ctx: &BoundContext, policy_distance: f64) -> f64 {
    policy_distance / ((1.0 - ctx.gamma) * (1.0 - ctx.gamma))
}

/// Outcome of the finite-stop prediction for the squared Euclidean distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopPrediction {
    /// The support matches the optimal sets no later than iterate `K + 1`.
    Within(u64),
    /// The hypotheses of the explicit bound fail (e.g. constant `η < 8/Δ`).
    NotGuaranteed,
}

/// Explicit `K` after which squared-Euclidean PMD sits in `Π*`.
///
/// Constant steps need `η ≥ 8/Δ` and give
/// `K = ⌈(2 r_ρ/Δ)(1/(η(1−γ)) + 1/(1−γ)²)⌉`. Exponential steps with growth at
/// least `ϑ/(ϑ−1)` give `K = ⌈ϑ ln((4 + η_0 γ r_ρ (1/(1−γ) + 1/(η_0 γ))) / (η_0 Δ))⌉`,
/// using `D_0* ≤ 1` for this generator.
pub fn predicted_stop_k_euclidean(ctx: &BoundContext, schedule: &Schedule) -> StopPrediction {
    if ctx.delta_gap == f64::INFINITY {
        return StopPrediction::Within(0);
    }
    let delta = ctx.delta_gap;
    if !(delta > 0.0) || !ctx.r_rho.is_finite() {
        return StopPrediction::NotGuaranteed;
    }
    let horizon = 1.0 / (1.0 - ctx.gamma);
    let k = match schedule.kind {
        ScheduleKind::Constant => {
            let eta = schedule.eta0;
            if eta < 8.0 / delta {
                return StopPrediction::NotGuaranteed;
            }
            (2.0 * ctx.r_rho / delta) * (horizon / eta + horizon * horizon)
        }
        ScheduleKind::Exponential => {
            if !growth_suffices(ctx.theta_rho, schedule.growth) {
                return StopPrediction::NotGuaranteed;
            }
            let eta0 = schedule.eta0;
            let envelope = eta0 * ctx.gamma * ctx.r_rho * (horizon + 1.0 / (eta0 * ctx.gamma));
            ctx.theta_rho * ((4.0 + envelope) / (eta0 * delta)).ln()
        }
    };
    // Round-off must not push an exact integer up by one.
    StopPrediction::Within((k * (1.0 - 1e-12)).ceil().max(0.0) as u64)
}

/// Upper bound on `ln(π_{s,a}^{(k)} / π_{s,b}^{(k)})` for `a ∉ A_s*`, `b ∈ A_s*`
/// under KL steps from the uniform policy:
/// `−(Σ_{i<k} η_i Δ − Σ_{i<k} η_i A_i)`.
pub fn kl_logratio_bound(ctx: &BoundContext, schedule: &Schedule, k: usize, a_sequence: &[f64]) -> Result<f64> {
    if a_sequence.len() < k {
        return input(format!("need {k} envelope terms, got {}", a_sequence.len()));
    }
    let (progress, slack) = (0..k).fold((0.0, 0.0), |(p, s), i| {
        let eta = schedule.eta(i);
        (p + eta * ctx.delta_gap, s + eta * a_sequence[i])
    });
    Ok(-(progress - slack))
}

/// `measured ≤ bound` up to the absolute and relative slack of analytic checks.
pub fn within_bound(measured: f64, bound: f64) -> bool {
    measured <= bound + BOUND_ABS_TOL + BOUND_REL_TOL * bound.abs()
}

/// Violation counts of one trajectory.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CheckReport {
    pub iterates: usize,
    /// Iterates whose value gap exceeds the applicable envelope.
    pub value_bound: usize,
    /// Largest `value_gap − bound` seen (may be negative).
    pub worst_value_excess: f64,
    /// Iterates violating `q_gap_max ≤ γ r_ρ value_gap`.
    pub q_chain: usize,
    /// Iterates violating `max_s V_s − V*_s ≤ ‖π − Π*‖_∞/(1−γ)²`.
    pub policy_chain: usize,
    /// Iterates whose largest suboptimal log-ratio exceeds the telescoped bound.
    pub log_ratio: usize,
    /// Steps whose KKT residual exceeds the accepted level.
    pub kkt: usize,
}

impl CheckReport {
    pub fn violations(&self) -> usize {
        self.value_bound + self.q_chain + self.policy_chain + self.log_ratio + self.kkt
    }
}

/// Which statements apply to a trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckScope<'a> {
    /// The unregularised schedule, when value envelopes apply.
    pub schedule: Option<&'a Schedule>,
    /// Check telescoped log-ratios (unregularised KL from the uniform policy).
    pub log_ratios: bool,
}

impl<'a> CheckScope<'a> {
    /// Statements valid for an unregularised PMD run with `spec` started from the uniform policy.
    pub fn pmd(spec: &DivergenceSpec, schedule: &'a Schedule) -> Self {
        Self {
            schedule: Some(schedule),
            log_ratios: spec.kind == DivergenceKind::Kl,
        }
    }

    /// Only the proposition chains and KKT residuals.
    pub fn chains_only() -> Self {
        Self {
            schedule: None,
            log_ratios: false,
        }
    }
}

/// Evaluates every applicable bound on every record.
pub fn check_trajectory(ctx: &BoundContext, scope: CheckScope<'_>, records: &[IterateRecord]) -> CheckReport {
    let mut report = CheckReport {
        iterates: records.len(),
        worst_value_excess: f64::NEG_INFINITY,
        ..CheckReport::default()
    };
    let envelope = scope
        .schedule
        .filter(|_| scope.log_ratios)
        .and_then(|s| a_sequence(ctx, s, records.iter().map(|r| r.k).max().unwrap_or(0)));
    for rec in records {
        if let Some(bound) = scope.schedule.and_then(|s| value_bound(ctx, s, rec.k)) {
            report.worst_value_excess = report.worst_value_excess.max(rec.value_gap - bound);
            if !within_bound(rec.value_gap, bound) {
                report.value_bound += 1;
            }
        }
        if rec.q_gap_max > q_gap_from_value_gap(ctx, rec.value_gap) + CHAIN_TOL {
            report.q_chain += 1;
        }
        if rec.max_state_gap > policy_to_value_bound(ctx, rec.policy_distance) + CHAIN_TOL {
            report.policy_chain += 1;
        }
        if let (Some(schedule), Some(envelope), Some(ratio)) = (scope.schedule, &envelope, rec.max_log_ratio) {
            let bound = kl_logratio_bound(ctx, schedule, rec.k, envelope).expect("envelope covers every record");
            if !within_bound(ratio, bound) {
                report.log_ratio += 1;
            }
        }
        if !(rec.max_kkt_residual <= KKT_TOL) {
            report.kkt += 1;
        }
    }
    report
}

/// `policy_distance · k^exponent` for `k ≥ 1`, used to check rate plateaus.
pub fn scaled_distances(records: &[IterateRecord], exponent: f64) -> Vec<(usize, f64)> {
    records
        .iter()
        .filter(|r| r.k >= 1)
        .map(|r| (r.k, r.policy_distance * (r.k as f64).powf(exponent)))
        .collect()
}
