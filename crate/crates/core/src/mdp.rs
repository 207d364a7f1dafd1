//! Finite discounted MDPs, exact policy evaluation and optimal structure.
//!
//! Costs are minimised throughout: `V*` is the componentwise minimum over
//! policies and the optimal action set of a state is the argmin of `Q*`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{input, Error, Result};

const ROW_SUM_TOL: f64 = 1e-12;
const SOLVE_RESIDUAL_TOL: f64 = 1e-9;

/// Default tolerance deciding membership in the optimal action set.
pub const DEFAULT_TIE_TOL: f64 = 1e-9;
/// Default accuracy requested from [`solve_optimal`].
pub const DEFAULT_SOLVE_TOL: f64 = 1e-12;
/// Below this measured gap the optimal-action sets are reported as unreliable.
pub const RELIABLE_GAP: f64 = 1e-6;
/// Largest number of deterministic policies [`brute_force_optimal`] will enumerate.
pub const BRUTE_FORCE_LIMIT: u64 = 1_000_000;

/// A finite discounted MDP `(S, A, P, R, γ)` with `R` interpreted as a cost.
#[derive(Debug, Clone, PartialEq)]
pub struct Mdp {
    n_states: usize,
    n_actions: usize,
    /// Row `s * |A| + a` holds `P(· | s, a)`.
    transition: DMatrix<f64>,
    cost: DMatrix<f64>,
    gamma: f64,
}

impl Mdp {
    /// Builds an MDP from a row-major `[s][a][s']` transition tensor and a row-major
    /// `[s][a]` cost matrix.
    pub fn new(n_states: usize, n_actions: usize, transition: &[f64], cost: &[f64], gamma: f64) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return input("MDP needs at least one state and one action");
        }
        if transition.len() != n_states * n_actions * n_states {
            return input(format!(
                "transition tensor has {} entries, expected {}",
                transition.len(),
                n_states * n_actions * n_states
            ));
        }
        if cost.len() != n_states * n_actions {
            return input(format!(
                "cost matrix has {} entries, expected {}",
                cost.len(),
                n_states * n_actions
            ));
        }
        if !(0.0..1.0).contains(&gamma) {
            return input(format!("discount {gamma} outside [0, 1)"));
        }
        for (row_idx, row) in transition.chunks(n_states).enumerate() {
            if row.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
                return input(format!("negative or non-finite probability in row {row_idx}"));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return input(format!(
                    "transition row (s={}, a={}) sums to {sum}",
                    row_idx / n_actions,
                    row_idx % n_actions
                ));
            }
        }
        if let Some(c) = cost.iter().find(|c| !(0.0..=1.0).contains(*c)) {
            return input(format!("cost entry {c} outside [0, 1]"));
        }
        Ok(Self {
            n_states,
            n_actions,
            transition: DMatrix::from_row_slice(n_states * n_actions, n_states, transition),
            cost: DMatrix::from_row_slice(n_states, n_actions, cost),
            gamma,
        })
    }

    /// Random instance: costs and transition weights drawn i.i.d. from `Unif(0, 1)`,
    /// then every transition row is normalised. Transition weights are drawn first,
    /// in `[s][a][s']` order, followed by the costs in `[s][a]` order.
    pub fn random(seed: u64, n_states: usize, n_actions: usize, gamma: f64) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return input("MDP needs at least one state and one action");
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut transition = Vec::with_capacity(n_states * n_actions * n_states);
        for _ in 0..n_states * n_actions {
            let mut row: Vec<f64> = (0..n_states).map(|_| rng.random::<f64>()).collect();
            let mut sum: f64 = row.iter().sum();
            if sum == 0.0 {
                row.iter_mut().for_each(|p| *p = 1.0);
                sum = n_states as f64;
            }
            transition.extend(row.into_iter().map(|p| p / sum));
        }
        let cost: Vec<f64> = (0..n_states * n_actions).map(|_| rng.random::<f64>()).collect();
        Self::new(n_states, n_actions, &transition, &cost, gamma)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn cost(&self, s: usize, a: usize) -> f64 {
        self.cost[(s, a)]
    }

    pub fn transition_prob(&self, s: usize, a: usize, next: usize) -> f64 {
        self.transition[(s * self.n_actions + a, next)]
    }

    /// The same dynamics with another discount factor.
    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&gamma) {
            return input(format!("discount {gamma} outside [0, 1)"));
        }
        Ok(Self { gamma, ..self.clone() })
    }

    fn check_policy(&self, policy: &Policy) -> Result<()> {
        if policy.n_states() != self.n_states || policy.n_actions() != self.n_actions {
            return input(format!(
                "policy is {}x{}, MDP is {}x{}",
                policy.n_states(),
                policy.n_actions(),
                self.n_states,
                self.n_actions
            ));
        }
        Ok(())
    }

    /// `P(π)` and `r(π)` for a probability matrix given row-major.
    fn induced_chain(&self, probs: &[f64]) -> (DMatrix<f64>, DVector<f64>) {
        let (ns, na) = (self.n_states, self.n_actions);
        let mut p_pi = DMatrix::zeros(ns, ns);
        let mut r_pi = DVector::zeros(ns);
        for s in 0..ns {
            for a in 0..na {
                let w = probs[s * na + a];
                if w == 0.0 {
                    continue;
                }
                r_pi[s] += w * self.cost[(s, a)];
                let row = self.transition.row(s * na + a);
                for next in 0..ns {
                    p_pi[(s, next)] += w * row[next];
                }
            }
        }
        (p_pi, r_pi)
    }
}

/// How a [`Policy`] stores its rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Representation {
    /// Rows are probability vectors.
    Direct,
    /// Rows are log-probabilities up to a per-row constant; the row maximum is kept at 0.
    LogDomain,
}

/// A stationary stochastic policy, one distribution over actions per state.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    n_states: usize,
    n_actions: usize,
    values: Vec<f64>,
    repr: Representation,
}

impl Policy {
    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_states,
            n_actions,
            values: vec![1.0 / n_actions as f64; n_states * n_actions],
            repr: Representation::Direct,
        }
    }

    pub fn uniform_log(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_states,
            n_actions,
            values: vec![0.0; n_states * n_actions],
            repr: Representation::LogDomain,
        }
    }

    /// Row-major probability matrix. Every row must lie in the simplex.
    pub fn from_probs(n_states: usize, n_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != n_states * n_actions || n_actions == 0 {
            return input(format!(
                "policy has {} entries, expected {}x{}",
                probs.len(),
                n_states,
                n_actions
            ));
        }
        for (s, row) in probs.chunks(n_actions).enumerate() {
            if row.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
                return input(format!("policy row {s} has a negative or non-finite entry"));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return input(format!("policy row {s} sums to {sum}"));
            }
        }
        Ok(Self {
            n_states,
            n_actions,
            values: probs,
            repr: Representation::Direct,
        })
    }

    /// Row-major log-weights; each row is shifted so its maximum is 0.
    pub fn from_logits(n_states: usize, n_actions: usize, mut logits: Vec<f64>) -> Result<Self> {
        if logits.len() != n_states * n_actions || n_actions == 0 {
            return input(format!(
                "policy has {} entries, expected {}x{}",
                logits.len(),
                n_states,
                n_actions
            ));
        }
        if logits.iter().any(|l| !l.is_finite()) {
            return Err(Error::Domain("log-domain policy requires finite log-weights".into()));
        }
        for row in logits.chunks_mut(n_actions) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            row.iter_mut().for_each(|l| *l -= max);
        }
        Ok(Self {
            n_states,
            n_actions,
            values: logits,
            repr: Representation::LogDomain,
        })
    }

    /// Deterministic policy choosing `actions[s]` in state `s`.
    pub fn deterministic(n_actions: usize, actions: &[usize]) -> Result<Self> {
        let mut probs = vec![0.0; actions.len() * n_actions];
        for (s, &a) in actions.iter().enumerate() {
            if a >= n_actions {
                return input(format!("action {a} out of range in state {s}"));
            }
            probs[s * n_actions + a] = 1.0;
        }
        Ok(Self {
            n_states: actions.len(),
            n_actions,
            values: probs,
            repr: Representation::Direct,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn representation(&self) -> Representation {
        self.repr
    }

    pub fn is_log_domain(&self) -> bool {
        self.repr == Representation::LogDomain
    }

    /// Raw stored row: probabilities or log-weights depending on the representation.
    pub fn raw_row(&self, s: usize) -> &[f64] {
        &self.values[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub(crate) fn raw_rows_mut(&mut self) -> std::slice::ChunksMut<'_, f64> {
        self.values.chunks_mut(self.n_actions)
    }

    /// Probability row of state `s`.
    pub fn prob_row(&self, s: usize) -> Vec<f64> {
        let row = self.raw_row(s);
        match self.repr {
            Representation::Direct => row.to_vec(),
            Representation::LogDomain => softmax(row),
        }
    }

    /// Row-major probability matrix.
    pub fn probs(&self) -> Vec<f64> {
        match self.repr {
            Representation::Direct => self.values.clone(),
            Representation::LogDomain => (0..self.n_states).flat_map(|s| self.prob_row(s)).collect(),
        }
    }

    /// `ln(π_{s,a} / π_{s,b})`, exact in the log domain.
    pub fn log_ratio(&self, s: usize, a: usize, b: usize) -> f64 {
        let row = self.raw_row(s);
        match self.repr {
            Representation::Direct => row[a].ln() - row[b].ln(),
            Representation::LogDomain => row[a] - row[b],
        }
    }

    /// Whether `π_{s,a}` is exactly zero. Log-domain rows never have zero entries.
    pub fn is_zero(&self, s: usize, a: usize) -> bool {
        match self.repr {
            Representation::Direct => self.raw_row(s)[a] == 0.0,
            Representation::LogDomain => false,
        }
    }
}

/// Normalised exponentials of a log-weight row.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = weights.iter().sum();
    weights.into_iter().map(|w| w / sum).collect()
}

/// `ln Σ exp(l)` computed stably.
pub fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln()
}

/// A probability distribution over states.
#[derive(Debug, Clone, PartialEq)]
pub struct StateDistribution {
    weights: Vec<f64>,
}

impl StateDistribution {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return input("state distribution is empty");
        }
        if weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
            return input("state distribution has a negative or non-finite weight");
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOL {
            return input(format!("state distribution sums to {sum}"));
        }
        Ok(Self { weights })
    }

    pub fn uniform(n_states: usize) -> Self {
        Self {
            weights: vec![1.0 / n_states as f64; n_states],
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// `Σ_s ρ_s v_s`.
    pub fn expect(&self, v: &DVector<f64>) -> f64 {
        self.weights.iter().zip(v.iter()).map(|(w, x)| w * x).sum()
    }
}

fn solve_checked(a: DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let x = a
        .clone()
        .lu()
        .solve(b)
        .ok_or_else(|| Error::Numerical("singular policy-evaluation system".into()))?;
    let residual = (&a * &x - b).amax();
    if !(residual <= SOLVE_RESIDUAL_TOL) {
        return Err(Error::Numerical(format!("linear solve residual {residual:e}")));
    }
    Ok(x)
}

/// `V(π) = (I − γ P(π))⁻¹ r(π)`.
pub fn evaluate_values(mdp: &Mdp, policy: &Policy) -> Result<DVector<f64>> {
    mdp.check_policy(policy)?;
    evaluate_probs(mdp, &policy.probs())
}

fn evaluate_probs(mdp: &Mdp, probs: &[f64]) -> Result<DVector<f64>> {
    let (p_pi, r_pi) = mdp.induced_chain(probs);
    let n = mdp.n_states;
    let system = DMatrix::identity(n, n) - p_pi * mdp.gamma;
    solve_checked(system, &r_pi)
}

/// `Q = R + γ P V` as an `|S| × |A|` matrix.
pub fn evaluate_q(mdp: &Mdp, v: &DVector<f64>) -> Result<DMatrix<f64>> {
    if v.len() != mdp.n_states {
        return input(format!(
            "value vector has {} entries, MDP has {} states",
            v.len(),
            mdp.n_states
        ));
    }
    let pv = &mdp.transition * v;
    Ok(DMatrix::from_fn(mdp.n_states, mdp.n_actions, |s, a| {
        mdp.cost[(s, a)] + mdp.gamma * pv[s * mdp.n_actions + a]
    }))
}

/// Discounted state-visitation distribution `d_ρ(π) = (1 − γ) ρᵀ (I − γ P(π))⁻¹`.
pub fn visitation_distribution(mdp: &Mdp, policy: &Policy, rho: &StateDistribution) -> Result<StateDistribution> {
    mdp.check_policy(policy)?;
    if rho.len() != mdp.n_states {
        return input(format!("ρ has {} entries, MDP has {} states", rho.len(), mdp.n_states));
    }
    let (p_pi, _) = mdp.induced_chain(&policy.probs());
    let n = mdp.n_states;
    let system = (DMatrix::identity(n, n) - p_pi * mdp.gamma).transpose();
    let x = solve_checked(system, &DVector::from_column_slice(rho.weights()))?;
    let mut weights: Vec<f64> = x.iter().map(|w| ((1.0 - mdp.gamma) * w).max(0.0)).collect();
    let sum: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= sum);
    StateDistribution::new(weights)
}

/// One synchronous min-Bellman sweep; returns `T v` and the lexicographically first greedy actions.
pub fn bellman_sweep(mdp: &Mdp, v: &DVector<f64>) -> Result<(DVector<f64>, Vec<usize>)> {
    let q = evaluate_q(mdp, v)?;
    let greedy = greedy_actions(&q);
    let tv = DVector::from_fn(mdp.n_states, |s, _| q[(s, greedy[s])]);
    Ok((tv, greedy))
}

fn greedy_actions(q: &DMatrix<f64>) -> Vec<usize> {
    (0..q.nrows())
        .map(|s| {
            let mut best = 0;
            for a in 1..q.ncols() {
                if q[(s, a)] < q[(s, best)] {
                    best = a;
                }
            }
            best
        })
        .collect()
}

fn deterministic_probs(n_actions: usize, actions: &[usize]) -> Vec<f64> {
    let mut probs = vec![0.0; actions.len() * n_actions];
    for (s, &a) in actions.iter().enumerate() {
        probs[s * n_actions + a] = 1.0;
    }
    probs
}

/// Optimal values and action values.
///
/// Value iteration warms up the estimate, Howard policy iteration then finishes
/// exactly, and the returned `V*` is the exact evaluation of the final greedy
/// policy. The min-Bellman residual of the result is verified against
/// `tol (1 − γ) / (2γ)`, floored at the round-off level of a dense solve.
pub fn solve_optimal(mdp: &Mdp, tol: f64) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if !(tol > 0.0) {
        return input(format!("solve tolerance must be positive, got {tol}"));
    }
    let gamma = mdp.gamma;
    let target = if gamma == 0.0 {
        f64::INFINITY
    } else {
        tol * (1.0 - gamma) / (2.0 * gamma)
    };

    let mut v = DVector::zeros(mdp.n_states);
    for _ in 0..1000 {
        let (tv, _) = bellman_sweep(mdp, &v)?;
        let res = (&tv - &v).amax();
        v = tv;
        if res <= target || res <= 1e-6 {
            break;
        }
    }

    let q = evaluate_q(mdp, &v)?;
    let mut actions = greedy_actions(&q);
    let mut converged = false;
    for _ in 0..10_000 {
        let v_pi = evaluate_probs(mdp, &deterministic_probs(mdp.n_actions, &actions))?;
        let q = evaluate_q(mdp, &v_pi)?;
        let mut changed = false;
        for s in 0..mdp.n_states {
            let current = q[(s, actions[s])];
            let slack = 1e-13 * (1.0 + current.abs());
            let best = (0..mdp.n_actions).fold(actions[s], |best, a| if q[(s, a)] < q[(s, best)] { a } else { best });
            if q[(s, best)] < current - slack {
                actions[s] = best;
                changed = true;
            }
        }
        if !changed {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Numerical("policy iteration did not stabilise".into()));
    }

    // Refine with the lexicographically first greedy action among exact ties.
    let v_pi = evaluate_probs(mdp, &deterministic_probs(mdp.n_actions, &actions))?;
    let q = evaluate_q(mdp, &v_pi)?;
    let refined: Vec<usize> = (0..mdp.n_states)
        .map(|s| {
            let min = q.row(s).min();
            (0..mdp.n_actions).find(|&a| q[(s, a)] <= min).unwrap_or(actions[s])
        })
        .collect();
    let v_star = evaluate_probs(mdp, &deterministic_probs(mdp.n_actions, &refined))?;
    let q_star = evaluate_q(mdp, &v_star)?;

    let residual = (0..mdp.n_states)
        .map(|s| (q_star.row(s).min() - v_star[s]).abs())
        .fold(0.0, f64::max);
    let floor = 1e-11 * (1.0 + v_star.amax());
    if residual > target.max(floor) {
        return Err(Error::Numerical(format!(
            "Bellman residual {residual:e} above {target:e}"
        )));
    }
    Ok((v_star, q_star))
}

/// Componentwise minimum of `V(π)` over all deterministic policies.
pub fn brute_force_optimal(mdp: &Mdp) -> Result<DVector<f64>> {
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    let count = (na as u64)
        .checked_pow(ns as u32)
        .filter(|&c| c <= BRUTE_FORCE_LIMIT)
        .ok_or_else(|| Error::TooLarge(format!("{na}^{ns} deterministic policies")))?;

    let mut actions = vec![0usize; ns];
    let mut values = Vec::with_capacity(count as usize);
    for _ in 0..count {
        values.push(evaluate_probs(mdp, &deterministic_probs(na, &actions))?);
        for slot in actions.iter_mut() {
            *slot += 1;
            if *slot < na {
                break;
            }
            *slot = 0;
        }
    }
    let best = DVector::from_fn(ns, |s, _| values.iter().map(|v| v[s]).fold(f64::INFINITY, f64::min));
    let attained = values.iter().map(|v| (v - &best).amax()).fold(f64::INFINITY, f64::min);
    if attained > 1e-10 * (1.0 + best.amax()) {
        return Err(Error::Numerical(format!(
            "no single deterministic policy attains the componentwise minimum (gap {attained:e})"
        )));
    }
    Ok(best)
}

/// `V*`, `Q*`, the optimal action sets, dummy states and the optimal advantage gap.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimalStructure {
    pub v_star: DVector<f64>,
    pub q_star: DMatrix<f64>,
    /// Sorted action indices per state.
    pub optimal_actions: Vec<Vec<usize>>,
    /// States where every action is optimal.
    pub dummy_states: Vec<usize>,
    /// Smallest suboptimality margin; `+∞` when every state is a dummy state.
    pub delta_gap: f64,
    pub tie_tolerance: f64,
}

impl OptimalStructure {
    /// Solves the MDP with the default tolerances and extracts the structure.
    pub fn solve(mdp: &Mdp) -> Result<Self> {
        let (v_star, q_star) = solve_optimal(mdp, DEFAULT_SOLVE_TOL)?;
        optimal_structure(v_star, q_star, DEFAULT_TIE_TOL)
    }

    pub fn n_states(&self) -> usize {
        self.q_star.nrows()
    }

    pub fn n_actions(&self) -> usize {
        self.q_star.ncols()
    }

    pub fn is_optimal_action(&self, s: usize, a: usize) -> bool {
        self.optimal_actions[s].binary_search(&a).is_ok()
    }

    pub fn is_dummy(&self, s: usize) -> bool {
        self.optimal_actions[s].len() == self.n_actions()
    }

    /// Lexicographically smallest optimal action per state.
    pub fn lexicographic_actions(&self) -> Vec<usize> {
        self.optimal_actions.iter().map(|set| set[0]).collect()
    }

    /// The deterministic optimal policy used wherever a concrete `π*` is needed.
    pub fn optimal_policy(&self) -> Policy {
        let actions = self.lexicographic_actions();
        Policy {
            n_states: actions.len(),
            n_actions: self.n_actions(),
            values: deterministic_probs(self.n_actions(), &actions),
            repr: Representation::Direct,
        }
    }

    /// Whether the measured gap is large enough for the action sets to be trusted.
    pub fn gap_is_reliable(&self) -> bool {
        self.delta_gap >= RELIABLE_GAP
    }
}

/// Extracts `A_s*`, `S_d` and `Δ` from optimal values.
pub fn optimal_structure(v_star: DVector<f64>, q_star: DMatrix<f64>, tie_tol: f64) -> Result<OptimalStructure> {
    if !(tie_tol > 0.0) {
        return input(format!("tie tolerance must be positive, got {tie_tol}"));
    }
    if v_star.len() != q_star.nrows() {
        return input("V* and Q* disagree on the number of states");
    }
    let n_actions = q_star.ncols();
    let mut optimal_actions = Vec::with_capacity(q_star.nrows());
    let mut dummy_states = Vec::new();
    let mut delta_gap = f64::INFINITY;
    for s in 0..q_star.nrows() {
        let min = q_star.row(s).min();
        let set: Vec<usize> = (0..n_actions).filter(|&a| q_star[(s, a)] <= min + tie_tol).collect();
        if set.len() == n_actions {
            dummy_states.push(s);
        } else {
            for a in (0..n_actions).filter(|a| set.binary_search(a).is_err()) {
                delta_gap = delta_gap.min(q_star[(s, a)] - min);
            }
        }
        optimal_actions.push(set);
    }
    Ok(OptimalStructure {
        v_star,
        q_star,
        optimal_actions,
        dummy_states,
        delta_gap,
        tie_tolerance: tie_tol,
    })
}

/// Distribution-mismatch quantities entering the convergence bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct MismatchCoefficients {
    /// `max_{s,a,s'} P(s'|s,a) / ρ_{s'}`.
    pub r_rho: f64,
    /// `(1 / (1 − γ)) max_s d_ρ(π*)_s / ρ_s`.
    pub theta_rho: f64,
    pub d_rho_pi_star: StateDistribution,
}

/// Computes `r_ρ` and `ϑ_ρ`; `pi_star` must be supported on the optimal action sets.
pub fn mismatch_coefficients(
    mdp: &Mdp,
    rho: &StateDistribution,
    pi_star: &Policy,
    structure: &OptimalStructure,
) -> Result<MismatchCoefficients> {
    mdp.check_policy(pi_star)?;
    for s in 0..mdp.n_states {
        let row = pi_star.prob_row(s);
        if (0..mdp.n_actions).any(|a| row[a] > 0.0 && !structure.is_optimal_action(s, a)) {
            return input(format!("π* puts mass on a suboptimal action in state {s}"));
        }
    }
    let weights = rho.weights();
    let mut r_rho: f64 = 0.0;
    for row in 0..mdp.n_states * mdp.n_actions {
        for (next, &w) in weights.iter().enumerate() {
            let p = mdp.transition[(row, next)];
            if p > 0.0 {
                r_rho = r_rho.max(if w > 0.0 { p / w } else { f64::INFINITY });
            }
        }
    }
    let d_rho_pi_star = visitation_distribution(mdp, pi_star, rho)?;
    let max_ratio = d_rho_pi_star
        .weights()
        .iter()
        .zip(weights)
        .filter(|(d, _)| **d > 0.0)
        .map(|(d, w)| if *w > 0.0 { d / w } else { f64::INFINITY })
        .fold(0.0, f64::max);
    Ok(MismatchCoefficients {
        r_rho,
        theta_rho: max_ratio / (1.0 - mdp.gamma),
        d_rho_pi_star,
    })
}
