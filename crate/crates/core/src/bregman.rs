//! Bregman generators, per-state proximal steps and their optimality certificates.
//!
//! Every step solves `argmin_{p ∈ Δ} ⟨g, p⟩ + D(p, π)` for one policy row, with
//! `g = η Q_s`. Steps are invariant to adding a constant to `g`, so `g` is
//! shifted to have minimum zero before use; this keeps the arithmetic on the
//! scale of the action-value differences rather than of `η Q` itself.

use crate::error::{input, Error, Result};
use crate::mdp::softmax;

const TSALLIS_MAX_BISECTIONS: usize = 200;
const TSALLIS_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DivergenceKind {
    /// `h(p) = ½‖p‖²`.
    Euclidean,
    /// `h(p) = Σ p ln p`.
    Kl,
    /// `h(p) = (Σ p^q − 1) / (q − 1)`.
    Tsallis,
}

/// Which generator `h` and the constants the convergence theory needs from it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DivergenceSpec {
    pub kind: DivergenceKind,
    /// Entropic index, Tsallis only.
    pub q: Option<f64>,
    /// `sup |∇_a h(p)|` over the simplex, when finite.
    pub gradient_bound_m: Option<f64>,
    /// `∇h` blows up on the relative boundary of the simplex.
    pub boundary_blowup: bool,
    /// Cocoercivity constant of `∇h` on the simplex, when known.
    pub cocoercivity_l: Option<f64>,
}

impl DivergenceSpec {
    pub fn euclidean() -> Self {
        Self {
            kind: DivergenceKind::Euclidean,
            q: None,
            gradient_bound_m: Some(1.0),
            boundary_blowup: false,
            cocoercivity_l: Some(1.0),
        }
    }

    pub fn kl() -> Self {
        Self {
            kind: DivergenceKind::Kl,
            q: None,
            gradient_bound_m: None,
            boundary_blowup: true,
            cocoercivity_l: None,
        }
    }

    pub fn tsallis(q: f64) -> Result<Self> {
        if !(q > 0.0) || q == 1.0 || !q.is_finite() {
            return input(format!("Tsallis index must be positive and different from 1, got {q}"));
        }
        let finite = q > 1.0;
        Ok(Self {
            kind: DivergenceKind::Tsallis,
            q: Some(q),
            // ∇_a h = q p^{q-1} / (q - 1) ranges over [0, q / (q - 1)] when q > 1.
            gradient_bound_m: finite.then(|| q / (q - 1.0)),
            boundary_blowup: !finite,
            // Hessian diag(q p^{q-2}) is bounded by q on the simplex only for q ≥ 2.
            cocoercivity_l: (q >= 2.0).then_some(q),
        })
    }

    /// Short label used in file names and tables, e.g. `l2`, `kl`, `tsallis-q0.5`.
    pub fn label(&self) -> String {
        match self.kind {
            DivergenceKind::Euclidean => "l2".to_string(),
            DivergenceKind::Kl => "kl".to_string(),
            DivergenceKind::Tsallis => format!("tsallis-q{}", self.q.unwrap_or(f64::NAN)),
        }
    }

    fn tsallis_q(&self) -> f64 {
        self.q.expect("Tsallis spec always carries q")
    }

    /// `h(p)`.
    pub fn generator(&self, p: &[f64]) -> f64 {
        match self.kind {
            DivergenceKind::Euclidean => 0.5 * p.iter().map(|x| x * x).sum::<f64>(),
            DivergenceKind::Kl => p.iter().filter(|&&x| x > 0.0).map(|x| x * x.ln()).sum(),
            DivergenceKind::Tsallis => {
                let q = self.tsallis_q();
                (p.iter().map(|x| x.powf(q)).sum::<f64>() - 1.0) / (q - 1.0)
            }
        }
    }

    /// `∂h/∂p_a`; `-∞` where the gradient blows up.
    pub fn gradient_component(&self, x: f64) -> f64 {
        match self.kind {
            DivergenceKind::Euclidean => x,
            DivergenceKind::Kl => {
                if x > 0.0 {
                    x.ln() + 1.0
                } else {
                    f64::NEG_INFINITY
                }
            }
            DivergenceKind::Tsallis => {
                let q = self.tsallis_q();
                if x > 0.0 || q > 1.0 {
                    q * x.powf(q - 1.0) / (q - 1.0)
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }

    pub fn gradient(&self, p: &[f64]) -> Vec<f64> {
        p.iter().map(|&x| self.gradient_component(x)).collect()
    }

    fn require_interior(&self, row: &[f64], what: &str) -> Result<()> {
        if self.boundary_blowup && row.iter().any(|&x| !(x > 0.0)) {
            return Err(Error::Domain(format!(
                "{what} must lie in the relative interior for {}",
                self.label()
            )));
        }
        Ok(())
    }
}

fn check_finite(x: &[f64], what: &str) -> Result<()> {
    if x.is_empty() {
        return input(format!("{what} is empty"));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return input(format!("{what} has a non-finite entry"));
    }
    Ok(())
}

fn check_lengths(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return input(format!("length mismatch: {} vs {}", a.len(), b.len()));
    }
    Ok(())
}

fn shifted(g: &[f64]) -> Vec<f64> {
    let min = g.iter().copied().fold(f64::INFINITY, f64::min);
    g.iter().map(|x| x - min).collect()
}

fn renormalize(mut p: Vec<f64>) -> Vec<f64> {
    let sum: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= sum);
    p
}

/// Euclidean projection onto the probability simplex, `(x + α1)_+` with the
/// threshold found by the sort-based procedure. Coordinates landing exactly on
/// the threshold get weight zero.
pub fn project_simplex(x: &[f64]) -> Result<Vec<f64>> {
    check_finite(x, "projection argument")?;
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let centred: Vec<f64> = x.iter().map(|v| v - max).collect();
    let mut sorted = centred.clone();
    sorted.sort_unstable_by(|a, b| b.total_cmp(a));

    let mut cumulative = 0.0;
    let mut threshold = 0.0;
    for (j, &u) in sorted.iter().enumerate() {
        cumulative += u;
        let candidate = (cumulative - 1.0) / (j + 1) as f64;
        if u - candidate > 0.0 {
            threshold = candidate;
        } else {
            break;
        }
    }
    Ok(renormalize(centred.iter().map(|v| (v - threshold).max(0.0)).collect()))
}

/// `D(p, p_ref) = h(p) − h(p_ref) − ⟨∇h(p_ref), p − p_ref⟩`.
pub fn divergence_value(spec: &DivergenceSpec, p: &[f64], p_ref: &[f64]) -> Result<f64> {
    check_lengths(p, p_ref)?;
    check_finite(p, "p")?;
    check_finite(p_ref, "reference point")?;
    spec.require_interior(p_ref, "reference point")?;
    let value = match spec.kind {
        DivergenceKind::Euclidean => 0.5 * p.iter().zip(p_ref).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(),
        DivergenceKind::Kl => p
            .iter()
            .zip(p_ref)
            .filter(|(a, _)| **a > 0.0)
            .map(|(a, b)| a * (a / b).ln())
            .sum(),
        DivergenceKind::Tsallis => {
            let grad = spec.gradient(p_ref);
            spec.generator(p)
                - spec.generator(p_ref)
                - grad
                    .iter()
                    .zip(p.iter().zip(p_ref))
                    .map(|(g, (a, b))| g * (a - b))
                    .sum::<f64>()
        }
    };
    Ok(value.max(0.0))
}

/// `KL(p ‖ softmax(logits))`, evaluated without forming the reference probabilities.
pub fn kl_from_logits(p: &[f64], logits: &[f64]) -> Result<f64> {
    check_lengths(p, logits)?;
    let lse = crate::mdp::log_sum_exp(logits);
    let value: f64 = p
        .iter()
        .zip(logits)
        .filter(|(a, _)| **a > 0.0)
        .map(|(a, l)| a * (a.ln() - (l - lse)))
        .sum();
    Ok(value.max(0.0))
}

/// Exact minimiser of `⟨g, p⟩ + D(p, π_row)` over the simplex.
pub fn mirror_step(spec: &DivergenceSpec, pi_row: &[f64], g: &[f64]) -> Result<Vec<f64>> {
    check_lengths(pi_row, g)?;
    check_finite(g, "step direction")?;
    check_finite(pi_row, "policy row")?;
    spec.require_interior(pi_row, "policy row")?;
    let g = shifted(g);
    match spec.kind {
        DivergenceKind::Euclidean => {
            let x: Vec<f64> = pi_row.iter().zip(&g).map(|(p, d)| p - d).collect();
            project_simplex(&x)
        }
        DivergenceKind::Kl => {
            let logits: Vec<f64> = pi_row.iter().zip(&g).map(|(p, d)| p.ln() - d).collect();
            Ok(softmax(&logits))
        }
        DivergenceKind::Tsallis => {
            let target: Vec<f64> = spec.gradient(pi_row).iter().zip(&g).map(|(h, d)| h - d).collect();
            tsallis_inverse_gradient(spec.tsallis_q(), &target)
        }
    }
}

/// KL step on a log-weight row: `l − g`, shifted so the row maximum is zero.
pub fn kl_step_logits(logits: &[f64], g: &[f64]) -> Result<Vec<f64>> {
    check_lengths(logits, g)?;
    check_finite(g, "step direction")?;
    let g = shifted(g);
    Ok(max_shift(logits.iter().zip(&g).map(|(l, d)| l - d).collect()))
}

/// Regularised KL step on log-weights:
/// `((l − g) + ητ ln π0) / (1 + ητ)`, shifted so the row maximum is zero.
pub fn kl_regularized_step_logits(logits: &[f64], g: &[f64], eta_tau: f64, pi0_logits: &[f64]) -> Result<Vec<f64>> {
    check_lengths(logits, g)?;
    check_lengths(logits, pi0_logits)?;
    check_finite(g, "step direction")?;
    if !(eta_tau >= 0.0) {
        return input(format!("regularisation weight must be non-negative, got {eta_tau}"));
    }
    let g = shifted(g);
    let scale = 1.0 / (1.0 + eta_tau);
    Ok(max_shift(
        logits
            .iter()
            .zip(&g)
            .zip(pi0_logits)
            .map(|((l, d), l0)| ((l - d) + eta_tau * l0) * scale)
            .collect(),
    ))
}

fn max_shift(mut row: Vec<f64>) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    row.iter_mut().for_each(|l| *l -= max);
    row
}

/// Exact minimiser of `⟨g, p⟩ + ητ D(p, π0) + D(p, π_row)` over the simplex.
pub fn regularized_mirror_step(
    spec: &DivergenceSpec,
    pi_row: &[f64],
    g: &[f64],
    eta_tau: f64,
    pi0_row: &[f64],
) -> Result<Vec<f64>> {
    if spec.kind == DivergenceKind::Tsallis {
        return Err(Error::Unsupported("regularised Tsallis step".into()));
    }
    if eta_tau == 0.0 {
        return mirror_step(spec, pi_row, g);
    }
    if !(eta_tau > 0.0) || !eta_tau.is_finite() {
        return input(format!("regularisation weight must be non-negative, got {eta_tau}"));
    }
    check_lengths(pi_row, g)?;
    check_lengths(pi_row, pi0_row)?;
    check_finite(g, "step direction")?;
    spec.require_interior(pi_row, "policy row")?;
    spec.require_interior(pi0_row, "regularisation centre")?;
    let g = shifted(g);
    let scale = 1.0 / (1.0 + eta_tau);
    match spec.kind {
        DivergenceKind::Euclidean => {
            let x: Vec<f64> = pi_row
                .iter()
                .zip(&g)
                .zip(pi0_row)
                .map(|((p, d), c)| (p - d + eta_tau * c) * scale)
                .collect();
            project_simplex(&x)
        }
        DivergenceKind::Kl => {
            let logits: Vec<f64> = pi_row
                .iter()
                .zip(&g)
                .zip(pi0_row)
                .map(|((p, d), c)| (p.ln() - d + eta_tau * c.ln()) * scale)
                .collect();
            Ok(softmax(&logits))
        }
        DivergenceKind::Tsallis => unreachable!(),
    }
}

/// Solves `∇h(p) = target + c·1` on the support of `p ∈ Δ` for the Tsallis
/// generator, bisecting on the scalar multiplier `c`.
fn tsallis_inverse_gradient(q: f64, target: &[f64]) -> Result<Vec<f64>> {
    let n = target.len() as f64;
    let top = target.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let y: Vec<f64> = target.iter().map(|t| t - top).collect();
    let coeff = (q - 1.0) / q;
    let exponent = 1.0 / (q - 1.0);
    let weights = |c: f64| -> Vec<f64> {
        y.iter()
            .map(|&yi| {
                let z = coeff * (yi + c);
                if z > 0.0 {
                    z.powf(exponent)
                } else {
                    0.0
                }
            })
            .collect()
    };
    // The row sum is increasing in c. For q > 1 coordinates clip at zero below
    // their threshold; for q < 1 every coordinate stays positive and the top one
    // diverges as c approaches zero.
    let (mut lo, mut hi) = if q > 1.0 {
        (0.0, q / (q - 1.0))
    } else {
        (-q * n.powf(1.0 - q) / (1.0 - q), -q / (1.0 - q))
    };
    let mut best = weights(hi);
    for _ in 0..TSALLIS_MAX_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        if !(lo < mid && mid < hi) {
            break;
        }
        let p = weights(mid);
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() <= TSALLIS_SUM_TOL {
            best = p;
            break;
        }
        if sum < 1.0 {
            lo = mid;
        } else {
            hi = mid;
            best = p;
        }
    }
    let sum: f64 = best.iter().sum();
    if !((sum - 1.0).abs() <= 1e-9) {
        return Err(Error::Numerical(format!(
            "Tsallis normalisation did not converge (row sum {sum})"
        )));
    }
    Ok(renormalize(best))
}

/// Normal-cone certificate of a computed step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktReport {
    /// `max(multiplier_spread, offsupport_violation)`.
    pub residual: f64,
    /// Max minus min of the normal-cone vector over the support, relative to `scale`.
    pub multiplier_spread: f64,
    /// Largest excess of an off-support component over the support level, relative to `scale`.
    pub offsupport_violation: f64,
    /// `1 + max |term|` over the support, used to make the residual scale-free.
    pub scale: f64,
}

impl KktReport {
    fn infeasible() -> Self {
        Self {
            residual: f64::INFINITY,
            multiplier_spread: f64::INFINITY,
            offsupport_violation: f64::INFINITY,
            scale: 1.0,
        }
    }
}

fn certify(normal: &[f64], on_support: &[bool], magnitude: f64) -> KktReport {
    if normal.iter().zip(on_support).any(|(w, &s)| s && !w.is_finite()) {
        return KktReport::infeasible();
    }
    let scale = 1.0 + magnitude;
    let support = normal.iter().zip(on_support).filter(|(_, &s)| s).map(|(w, _)| *w);
    let (min, max) = support.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), w| (lo.min(w), hi.max(w)));
    if !min.is_finite() {
        return KktReport::infeasible();
    }
    let off_max = normal
        .iter()
        .zip(on_support)
        .filter(|(_, &s)| !s)
        .map(|(w, _)| *w)
        .fold(f64::NEG_INFINITY, f64::max);
    let spread = (max - min) / scale;
    let violation = if off_max.is_nan() {
        f64::INFINITY
    } else {
        (off_max - min).max(0.0) / scale
    };
    KktReport {
        residual: spread.max(violation),
        multiplier_spread: spread,
        offsupport_violation: violation,
        scale,
    }
}

fn support_magnitude(terms: &[&[f64]], on_support: &[bool]) -> f64 {
    terms
        .iter()
        .flat_map(|t| t.iter().zip(on_support).filter(|(_, &s)| s).map(|(x, _)| x.abs()))
        .filter(|x| x.is_finite())
        .fold(0.0, f64::max)
}

/// Certifies that `pi_next` is the proximal step from `pi_prev` along `g`.
///
/// Forms `w = ∇h(π_prev) − ∇h(π_next) − g`; the step is optimal iff `w` is in the
/// normal cone of the simplex at `π_next`: equal on the support, no larger off it.
/// An undefined gradient at `π_prev` yields an infinite residual.
pub fn kkt_check(spec: &DivergenceSpec, pi_prev: &[f64], pi_next: &[f64], g: &[f64]) -> KktReport {
    kkt_check_regularized(spec, pi_prev, pi_next, g, 0.0, pi_prev)
}

/// KKT certificate for the regularised step:
/// `w = ∇h(π_prev) + ητ ∇h(π0) − g − (1 + ητ) ∇h(π_next)`.
pub fn kkt_check_regularized(
    spec: &DivergenceSpec,
    pi_prev: &[f64],
    pi_next: &[f64],
    g: &[f64],
    eta_tau: f64,
    pi0: &[f64],
) -> KktReport {
    if pi_prev.len() != pi_next.len() || g.len() != pi_next.len() || pi0.len() != pi_next.len() {
        return KktReport::infeasible();
    }
    let g = shifted(g);
    let grad_prev = spec.gradient(pi_prev);
    let grad_centre = spec.gradient(pi0);
    // Under a blowup generator, zero and subnormal entries can only come from
    // underflow, and `∇h` cannot be evaluated there. They are certified one-sidedly:
    // the exact minimiser's entry must lie below the smallest normal float.
    let underflow = |p: f64| spec.boundary_blowup && p < f64::MIN_POSITIVE;
    let grad_next: Vec<f64> = pi_next
        .iter()
        .map(|&p| spec.gradient_component(if underflow(p) { f64::MIN_POSITIVE } else { p }))
        .collect();
    let normal: Vec<f64> = (0..g.len())
        .map(|a| {
            let centre = if eta_tau == 0.0 { 0.0 } else { eta_tau * grad_centre[a] };
            grad_prev[a] + centre - g[a] - (1.0 + eta_tau) * grad_next[a]
        })
        .collect();
    let on_support: Vec<bool> = pi_next.iter().map(|&p| p > 0.0 && !underflow(p)).collect();
    if grad_prev.iter().any(|x| !x.is_finite()) {
        return KktReport::infeasible();
    }
    let magnitude = support_magnitude(&[&grad_prev, &grad_next, &g], &on_support);
    certify(&normal, &on_support, magnitude)
}

/// KKT certificate for KL steps stored as log-weights; every coordinate is in the support.
pub fn kkt_check_logits(
    prev_logits: &[f64],
    next_logits: &[f64],
    g: &[f64],
    eta_tau: f64,
    pi0_logits: &[f64],
) -> KktReport {
    if prev_logits.len() != next_logits.len() || g.len() != next_logits.len() {
        return KktReport::infeasible();
    }
    let g = shifted(g);
    let normal: Vec<f64> = (0..g.len())
        .map(|a| {
            let centre = if eta_tau == 0.0 { 0.0 } else { eta_tau * pi0_logits[a] };
            prev_logits[a] + centre - g[a] - (1.0 + eta_tau) * next_logits[a]
        })
        .collect();
    let on_support = vec![true; g.len()];
    let magnitude = support_magnitude(&[prev_logits, next_logits, &g], &on_support);
    certify(&normal, &on_support, magnitude)
}
