//! Full PMD runs against hand-derived and brute-force references.

use approx::assert_abs_diff_eq;
use pmd_core::bregman::mirror_step;
use pmd_core::engine::{self, pmd_step, run_pmd, run_value_iteration, Reference};
use pmd_core::mdp::{evaluate_q, evaluate_values};
use pmd_core::{DivergenceSpec, Mdp, OptimalStructure, Policy, RunConfig, Schedule, StateDistribution};

fn two_state() -> Mdp {
    let transition = [1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0];
    Mdp::new(2, 2, &transition, &[0.0, 1.0, 0.5, 0.0], 0.9).unwrap()
}

#[test]
fn large_step_on_two_states_jumps_to_the_optimum() {
    let mdp = two_state();
    // Q of the uniform policy: V solves (1 − 0.45) V0 − 0.45 V1 = 0.5, −0.45 V0 + (1 − 0.45) V1 = 0.25.
    let det = 0.55 * 0.55 - 0.45 * 0.45;
    let v0 = (0.5 * 0.55 + 0.45 * 0.25) / det;
    let v1 = (0.55 * 0.25 + 0.45 * 0.5) / det;
    let q = [[0.9 * v0, 1.0 + 0.9 * v1], [0.5 + 0.9 * v1, 0.9 * v0]];
    let greedy: Vec<usize> = q.iter().map(|row| if row[0] <= row[1] { 0 } else { 1 }).collect();
    assert_eq!(greedy, vec![0, 1]);

    for spec in [DivergenceSpec::euclidean(), DivergenceSpec::tsallis(2.0).unwrap()] {
        let next = pmd_step(&mdp, &Policy::uniform(2, 2), &spec, 1e6, None).unwrap();
        assert_eq!(next.prob_row(0), vec![1.0, 0.0]);
        assert_eq!(next.prob_row(1), vec![0.0, 1.0]);
    }
    let kl = pmd_step(&mdp, &Policy::uniform_log(2, 2), &DivergenceSpec::kl(), 1e3, None).unwrap();
    assert!(kl.prob_row(0)[0] > 1.0 - 1e-12 && kl.prob_row(1)[1] > 1.0 - 1e-12);
}

#[test]
fn updates_are_synchronous() {
    let mdp = Mdp::random(8, 4, 5, 0.9).unwrap();
    let probs: Vec<f64> = (0..20).map(|i| 1.0 + (i % 7) as f64).collect();
    let probs: Vec<f64> = probs
        .chunks(5)
        .flat_map(|row| {
            let s: f64 = row.iter().sum();
            row.iter().map(move |x| x / s).collect::<Vec<_>>()
        })
        .collect();
    let policy = Policy::from_probs(4, 5, probs).unwrap();
    let q = evaluate_q(&mdp, &evaluate_values(&mdp, &policy).unwrap()).unwrap();
    for spec in [
        DivergenceSpec::euclidean(),
        DivergenceSpec::kl(),
        DivergenceSpec::tsallis(0.5).unwrap(),
    ] {
        let next = pmd_step(&mdp, &policy, &spec, 2.5, None).unwrap();
        for s in 0..4 {
            let g: Vec<f64> = (0..5).map(|a| 2.5 * q[(s, a)]).collect();
            let row = mirror_step(&spec, &policy.prob_row(s), &g).unwrap();
            for (x, y) in next.prob_row(s).iter().zip(&row) {
                assert_abs_diff_eq!(x, y, epsilon = 1e-12);
            }
        }
    }
}

#[test]
fn value_iteration_greedy_gap_contracts() {
    let mdp = Mdp::random(3, 5, 4, 0.9).unwrap();
    let rho = StateDistribution::uniform(5);
    let reference = Reference::new(&mdp, &rho).unwrap();
    let v_norm = reference.structure.v_star.amax();
    let traj = run_value_iteration(&mdp, &rho, 60, &reference).unwrap();
    assert_eq!(traj.records.len(), 61);
    for rec in &traj.records {
        let bound = 2.0 * 0.9f64.powi(rec.k as i32 + 1) * v_norm / (1.0 - 0.9);
        assert!(
            rec.max_state_gap <= bound + 1e-12,
            "k={} gap={} bound={}",
            rec.k,
            rec.max_state_gap,
            bound
        );
    }
    assert_eq!(traj.records.last().unwrap().value_gap, 0.0);
}

#[test]
fn value_iterates_contract_by_gamma() {
    let mdp = Mdp::random(12, 6, 3, 0.9).unwrap();
    let v_star = OptimalStructure::solve(&mdp).unwrap().v_star;
    let mut v = nalgebra::DVector::zeros(6);
    let mut err = (&v - &v_star).amax();
    for _ in 0..50 {
        v = pmd_core::mdp::bellman_sweep(&mdp, &v).unwrap().0;
        let next = (&v - &v_star).amax();
        assert!(next <= 0.9 * err + 1e-12);
        err = next;
    }
}

/// MDP whose first two actions coincide, so `A_s*` is a tie wherever action 0 is optimal.
fn tied_mdp() -> Mdp {
    let base = Mdp::random(31, 3, 3, 0.9).unwrap();
    let mut transition = Vec::new();
    let mut cost = Vec::new();
    for s in 0..3 {
        for a in 0..3 {
            let src = if a == 1 { 0 } else { a };
            for t in 0..3 {
                transition.push(base.transition_prob(s, src, t));
            }
            cost.push(base.cost(s, src));
        }
    }
    Mdp::new(3, 3, &transition, &cost, 0.9).unwrap()
}

#[test]
fn policy_distance_matches_grid_search() {
    let mdp = tied_mdp();
    let structure = OptimalStructure::solve(&mdp).unwrap();
    assert!(structure.optimal_actions.iter().any(|set| set.len() == 2));
    let probs = vec![0.2, 0.5, 0.3, 0.6, 0.1, 0.3, 0.05, 0.05, 0.9];
    let policy = Policy::from_probs(3, 3, probs.clone()).unwrap();
    let grid = 2000;
    let mut worst: f64 = 0.0;
    for s in 0..3 {
        let set = &structure.optimal_actions[s];
        let row = &probs[s * 3..s * 3 + 3];
        let mut best = f64::INFINITY;
        let candidates: Vec<Vec<f64>> = if set.len() == 3 {
            vec![row.to_vec()]
        } else if set.len() == 1 {
            let mut p = vec![0.0; 3];
            p[set[0]] = 1.0;
            vec![p]
        } else {
            (0..=grid)
                .map(|i| {
                    let t = i as f64 / grid as f64;
                    let mut p = vec![0.0; 3];
                    p[set[0]] = t;
                    p[set[1]] = 1.0 - t;
                    p
                })
                .collect()
        };
        for c in candidates {
            best = best.min(row.iter().zip(&c).map(|(a, b)| (a - b).abs()).sum());
        }
        worst = worst.max(best);
    }
    assert_abs_diff_eq!(engine::policy_distance(&policy, &structure), worst, epsilon = 1e-3);
}

#[test]
fn values_never_increase_along_a_run() {
    let mdp = Mdp::random(41, 5, 8, 0.9).unwrap();
    for spec in [
        DivergenceSpec::euclidean(),
        DivergenceSpec::kl(),
        DivergenceSpec::tsallis(0.5).unwrap(),
    ] {
        for schedule in [Schedule::constant(0.5), Schedule::exponential(0.5, 1.2)] {
            let mut config = RunConfig::new(spec, schedule, 5, 8);
            config.max_iter = 80;
            config.value_gap_tol = None;
            let traj = run_pmd(&mdp, &config).unwrap();
            for pair in traj.records.windows(2) {
                assert!(pair[1].value_gap <= pair[0].value_gap + 1e-12, "{}", spec.label());
            }
        }
    }
}

#[test]
fn runs_are_deterministic() {
    let mdp = Mdp::random(42, 5, 8, 0.9).unwrap();
    let mut config = RunConfig::new(DivergenceSpec::kl(), Schedule::exponential(1.0, 1.1), 5, 8);
    config.max_iter = 50;
    let strip = |t: engine::Trajectory| {
        t.records
            .into_iter()
            .map(|mut r| {
                r.wall_time = Default::default();
                r
            })
            .collect::<Vec<_>>()
    };
    assert_eq!(
        strip(run_pmd(&mdp, &config).unwrap()),
        strip(run_pmd(&mdp, &config).unwrap())
    );
}

#[test]
fn zero_iterations_record_only_the_start() {
    let mdp = Mdp::random(43, 4, 3, 0.9).unwrap();
    let mut config = RunConfig::new(DivergenceSpec::euclidean(), Schedule::constant(1.0), 4, 3);
    config.max_iter = 0;
    let traj = run_pmd(&mdp, &config).unwrap();
    assert_eq!(traj.records.len(), 1);
    assert_eq!(traj.records[0].k, 0);
    assert_eq!(traj.records[0].eta_k, Some(1.0));
}

#[test]
fn stop_on_support_match_halts_the_run() {
    let mdp = Mdp::random(44, 5, 8, 0.9).unwrap();
    let mut config = RunConfig::new(DivergenceSpec::euclidean(), Schedule::exponential(1.0, 1.5), 5, 8);
    config.max_iter = 500;
    config.value_gap_tol = None;
    config.stop_on_support_match = true;
    let traj = run_pmd(&mdp, &config).unwrap();
    let last = traj.records.last().unwrap();
    assert!(last.support_match);
    assert_eq!(traj.support_match_iteration(), Some(last.k));
    assert_eq!(last.value_gap, 0.0);
}

#[test]
fn regularised_runs_are_certified() {
    let mdp = Mdp::random(45, 5, 8, 0.9).unwrap();
    for spec in [DivergenceSpec::euclidean(), DivergenceSpec::kl()] {
        let mut config = RunConfig::new(spec, Schedule::exponential(1.0, 1.0 / 0.9), 5, 8);
        config.max_iter = 150;
        config.value_gap_tol = None;
        config.regularization = engine::Regularization::Adaptive;
        let traj = run_pmd(&mdp, &config).unwrap();
        assert!(traj.records.iter().all(|r| r.max_kkt_residual <= 1e-8));
        assert!(traj.records.last().unwrap().value_gap < 1e-6);
    }
}
