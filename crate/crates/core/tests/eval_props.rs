use marfe_core::estimate::EstimatedDynamics;
use marfe_core::eval::{
    build_p_beta_hat, build_p_two_beta, l1, occupancy_discrepancy, policy_value_discrepancy,
    reward_batch, reward_free_gap, sample_policies, TruncatedDynamics,
};
use marfe_core::keydyn::{make_key_dynamics, KEY_STATE};
use marfe_core::marfe::{run_marfe, MarfeConfig};
use marfe_core::mdp::{random_mdp, Dynamics, Policy, RewardFunction, TabularMdp};
use marfe_core::planning::{occupancy, optimal_policy, policy_value};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// `sum_h sum_s q_h(s) sum_a pi(a|s) r_h(s,a)`.
fn value_from_occupancy(mdp: &impl Dynamics, pi: &Policy, r: &RewardFunction) -> f64 {
    let q = occupancy(pi, mdp).unwrap();
    let mut v = 0.0;
    for h in 0..mdp.horizon() {
        for s in 0..mdp.num_states() {
            for a in 0..mdp.num_actions() {
                v += q.get(h, s) * pi.prob(h, s, a) * r.get(h, s, a);
            }
        }
    }
    v
}

#[test]
fn value_is_occupancy_weighted_reward() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for seed in 0..10 {
        let mdp = random_mdp(4, 3, 4, seed, 0.7).unwrap();
        let r = RewardFunction::random(4, 3, 4, &mut rng);
        for pi in sample_policies(4, 3, 4, 10, seed) {
            let direct = policy_value(&pi, &mdp, &r).unwrap();
            assert!((direct - value_from_occupancy(&mdp, &pi, &r)).abs() < 1e-12);
        }
    }
}

#[test]
fn value_difference_is_bounded_by_occupancy_difference() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for seed in 0..10 {
        let a = random_mdp(3, 2, 4, seed, 1.0).unwrap();
        let b = random_mdp(3, 2, 4, seed + 100, 1.0).unwrap();
        let r = RewardFunction::random(3, 2, 4, &mut rng);
        let policies = sample_policies(3, 2, 4, 20, seed);
        let per_step: Vec<f64> = (0..4)
            .map(|h| occupancy_discrepancy(&a, &b, &policies, h).unwrap())
            .collect();
        let worst = per_step.iter().copied().fold(0.0, f64::max);
        for pi in &policies {
            let diff = (policy_value(pi, &a, &r).unwrap() - policy_value(pi, &b, &r).unwrap()).abs();
            assert!(diff <= 4.0 * worst + 1e-12);
        }
        assert_eq!(per_step[0], 0.0);
    }
}

#[test]
fn simulation_bound_holds() {
    // |V_A - V_B| <= sum_h E_{q^A_h}[ ||A_h(s,a) - B_h(s,a)||_1 ] * (H - h - 1).
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for seed in 0..10 {
        let a = random_mdp(3, 2, 4, seed, 0.5).unwrap();
        let b = random_mdp(3, 2, 4, seed + 50, 0.5).unwrap();
        let r = RewardFunction::random(3, 2, 4, &mut rng);
        for pi in sample_policies(3, 2, 4, 10, seed) {
            let q = occupancy(&pi, &a).unwrap();
            let mut bound = 0.0;
            for h in 0..4 {
                for s in 0..3 {
                    for act in 0..2 {
                        let w = q.get(h, s) * pi.prob(h, s, act);
                        bound += w * l1(a.row(h, s, act), b.row(h, s, act)) * (3 - h) as f64;
                    }
                }
            }
            let diff = (policy_value(&pi, &a, &r).unwrap() - policy_value(&pi, &b, &r).unwrap()).abs();
            assert!(diff <= bound + 1e-12, "{diff} > {bound}");
        }
    }
}

#[test]
fn planning_gap_is_at_most_twice_the_uniform_discrepancy() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for seed in 0..10 {
        let truth = random_mdp(2, 2, 3, seed, 1.0).unwrap();
        let other = random_mdp(2, 2, 3, seed + 7, 1.0).unwrap();
        let r = RewardFunction::random(2, 2, 3, &mut rng);
        let d = policy_value_discrepancy(&truth, &other, &r, 0, 0).unwrap();
        assert!(d.exhaustive);
        assert_eq!(d.policies_checked, 64);
        let planned = optimal_policy(&other, &r).unwrap().policy;
        let gap = optimal_policy(&truth, &r).unwrap().value - policy_value(&planned, &truth, &r).unwrap();
        assert!(gap <= 2.0 * d.max + 1e-12);
    }
}

#[test]
fn sampled_discrepancy_includes_both_optima() {
    let a = random_mdp(4, 3, 4, 0, 1.0).unwrap();
    let b = random_mdp(4, 3, 4, 1, 1.0).unwrap();
    let r = RewardFunction::random(4, 3, 4, &mut ChaCha8Rng::seed_from_u64(4));
    let d = policy_value_discrepancy(&a, &b, &r, 10, 5).unwrap();
    assert!(!d.exhaustive);
    assert_eq!(d.policies_checked, 12);
    let opt_a = optimal_policy(&a, &r).unwrap();
    let at_opt = (opt_a.value - policy_value(&opt_a.policy, &b, &r).unwrap()).abs();
    assert!(d.max >= at_opt);
}

#[test]
fn truncation_by_estimate_never_adds_occupancy() {
    let mdp = random_mdp(4, 2, 4, 6, 0.3).unwrap();
    let run = run_marfe(&mdp, &MarfeConfig::for_accuracy(400, 0.5, 0.1, 4, 4, 6)).unwrap();
    let trunc = build_p_beta_hat(&mdp, &run.estimate).unwrap();
    assert_eq!(trunc.retained_sets(), run.estimate.active_sets());
    let r = RewardFunction::random(4, 2, 4, &mut ChaCha8Rng::seed_from_u64(6));
    for pi in sample_policies(4, 2, 4, 50, 1) {
        let qt = occupancy(&pi, &trunc).unwrap();
        let q = occupancy(&pi, &mdp).unwrap();
        for h in 0..=4 {
            for s in 0..4 {
                assert!(qt.get(h, s) <= q.get(h, s) + 1e-12);
            }
        }
        assert!(policy_value(&pi, &trunc, &r).unwrap() <= policy_value(&pi, &mdp, &r).unwrap() + 1e-12);
    }
}

#[test]
fn tiny_beta_truncation_changes_nothing_reachable() {
    let mdp = random_mdp(3, 2, 3, 2, 1.0).unwrap();
    let p2 = build_p_two_beta(&mdp, 1e-9).unwrap();
    assert_eq!(p2.retained(0), &[0]);
    assert_eq!(p2.retained(1), &[0, 1, 2]);
    assert_eq!(p2.retained(2), &[0, 1, 2]);
    for reward in reward_batch(3, 2, 3, 5, 0) {
        for pi in Policy::enumerate_deterministic(3, 2, 3).take(200) {
            let a = policy_value(&pi, &mdp, &reward.reward).unwrap();
            let b = policy_value(&pi, &p2, &reward.reward).unwrap();
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn low_probability_branch_is_pruned() {
    // From state 0, the only action lands in 1 with 0.3 and in 2 with 0.7.
    let mdp = TabularMdp::from_fn(3, 1, 2, 0, |h, s, _, n| match (h, s, n) {
        (0, 0, 1) => 0.3,
        (0, 0, 2) => 0.7,
        (0, 0, _) => 0.0,
        (_, _, 0) => 1.0,
        _ => 0.0,
    })
    .unwrap();
    let p2 = build_p_two_beta(&mdp, 0.2).unwrap();
    assert_eq!(p2.retained(0), &[0]);
    assert_eq!(p2.retained(1), &[2]);
    assert_eq!(p2.row(1, 1, 0), &[0.0, 0.0, 0.0, 1.0]);
    assert_eq!(p2.row(1, 2, 0), &[1.0, 0.0, 0.0, 0.0]);
    let q = occupancy(&Policy::uniform(3, 1, 2), &p2).unwrap();
    assert!((q.get(2, 0) - 0.7).abs() < 1e-15);
    assert!((q.sink_mass(2) - 0.3).abs() < 1e-15);
    // Just below the branch probability the branch survives.
    assert_eq!(build_p_two_beta(&mdp, 0.149).unwrap().retained(1), &[1, 2]);
}

#[test]
fn key_state_always_survives_truncation() {
    let inst = make_key_dynamics(6, 3, &[0, 2, 1, 1, 0, 2]).unwrap();
    for beta in [1e-6, 0.1, 0.3, 0.49] {
        let p2 = build_p_two_beta(&inst.mdp, beta).unwrap();
        for h in 0..6 {
            assert!(p2.retained(h).contains(&KEY_STATE));
        }
    }
    assert!(build_p_two_beta(&inst.mdp, 0.0).is_err());
    assert!(build_p_two_beta(&inst.mdp, 1.0).is_err());
}

#[test]
fn exact_estimate_has_zero_gap() {
    let mdp = random_mdp(3, 2, 3, 9, 1.0).unwrap();
    let exact = EstimatedDynamics::from_mdp(&mdp);
    let report = reward_free_gap(&mdp, &exact, &reward_batch(3, 2, 3, 20, 1)).unwrap();
    assert_eq!(report.gaps.len(), 23);
    assert!(report.max_gap.abs() < 1e-12);
    let full = TruncatedDynamics::new(&mdp, vec![vec![0, 1, 2]; 3]).unwrap();
    assert!(reward_free_gap(&mdp, &full, &reward_batch(3, 2, 3, 5, 2)).unwrap().max_gap.abs() < 1e-12);
}

#[test]
fn occupancy_triangle_bound() {
    use marfe_core::planning::transition_matrix;
    for seed in 0..10 {
        let a = random_mdp(4, 2, 4, seed, 0.8).unwrap();
        let b = random_mdp(4, 2, 4, seed + 30, 0.8).unwrap();
        for pi in sample_policies(4, 2, 4, 5, seed).into_iter().chain([Policy::uniform(4, 2, 4)]) {
            let (qa, qb) = (occupancy(&pi, &a).unwrap(), occupancy(&pi, &b).unwrap());
            for h in 0..4 {
                let (ma, mb) = (transition_matrix(&a, h, &pi).unwrap(), transition_matrix(&b, h, &pi).unwrap());
                let pushed_a = ma.left_mul(qa.step(h));
                let pushed_b = mb.left_mul(qa.step(h));
                let lhs = l1(qa.step(h + 1), qb.step(h + 1));
                let rhs = l1(&pushed_a, &pushed_b) + l1(qa.step(h), qb.step(h));
                assert!(lhs <= rhs + 1e-12);
            }
        }
    }
}
