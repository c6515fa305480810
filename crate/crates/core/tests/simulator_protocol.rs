use marfe_core::error::{Error, Result};
use marfe_core::estimate::EstimatedDynamics;
use marfe_core::eval::confidence_radius;
use marfe_core::keydyn::{make_key_dynamics, KEY_STATE};
use marfe_core::marfe::{LayeredExplorer, RowGate};
use marfe_core::mdp::{random_mdp, Dynamics, Policy, TabularMdp};
use marfe_core::rng::RngPlan;
use marfe_core::simulator::{
    count_transitions, run_phase, run_protocol, Explorer, PhaseLog, PhasePlan, ProtocolContext,
};

/// Keeps a copy of everything the protocol hands it.
#[derive(Default)]
struct Recorder {
    contexts: Vec<ProtocolContext>,
    histories: Vec<usize>,
    agents_per_phase: usize,
}

impl Explorer for Recorder {
    fn plan_phase(&mut self, ctx: &ProtocolContext, history: &[PhaseLog]) -> Result<PhasePlan> {
        self.contexts.push(*ctx);
        self.histories.push(history.len());
        Ok(PhasePlan::single(
            Policy::uniform(ctx.num_states, ctx.num_actions, ctx.horizon),
            self.agents_per_phase,
        ))
    }

    fn estimate(&mut self, ctx: &ProtocolContext, history: &[PhaseLog]) -> Result<EstimatedDynamics> {
        self.contexts.push(*ctx);
        self.histories.push(history.len());
        EstimatedDynamics::uniform(ctx.num_states, ctx.num_actions, ctx.horizon, ctx.initial_state)
    }
}

#[test]
fn explorer_sees_shape_and_history_only() {
    let mdp = random_mdp(3, 2, 3, 4, 1.0).unwrap();
    let mut rec = Recorder {
        agents_per_phase: 10,
        ..Recorder::default()
    };
    let run = run_protocol(&mdp, &mut rec, 4, 10, &RngPlan::new(1)).unwrap();
    assert_eq!(rec.histories, vec![0, 1, 2, 3, 4]);
    for (i, ctx) in rec.contexts.iter().enumerate() {
        assert_eq!(
            (ctx.num_states, ctx.num_actions, ctx.horizon, ctx.initial_state, ctx.agents, ctx.phases, ctx.phase),
            (3, 2, 3, 0, 10, 4, i)
        );
    }
    // The pass-through estimate is returned untouched.
    let uniform = EstimatedDynamics::uniform(3, 2, 3, 0).unwrap();
    assert_eq!(run.estimate.kernel(), uniform.kernel());
    assert_eq!(run.logs.len(), 4);
}

#[test]
fn too_many_agents_is_a_protocol_error() {
    let mdp = random_mdp(2, 2, 2, 0, 1.0).unwrap();
    let mut rec = Recorder {
        agents_per_phase: 11,
        ..Recorder::default()
    };
    assert!(matches!(
        run_protocol(&mdp, &mut rec, 1, 10, &RngPlan::new(0)),
        Err(Error::Protocol(_))
    ));
    assert!(matches!(
        run_protocol(&mdp, &mut rec, 0, 10, &RngPlan::new(0)),
        Err(Error::Config(_))
    ));
}

#[test]
fn equal_seeds_give_identical_logs() {
    let mdp = random_mdp(4, 2, 4, 2, 1.0).unwrap();
    let a = run_protocol(&mdp, &mut LayeredExplorer::marfe(0.01), 4, 300, &RngPlan::new(5)).unwrap();
    let b = run_protocol(&mdp, &mut LayeredExplorer::marfe(0.01), 4, 300, &RngPlan::new(5)).unwrap();
    assert_eq!(a.logs, b.logs);
    assert_eq!(a.estimate.kernel(), b.estimate.kernel());
    let c = run_protocol(&mdp, &mut LayeredExplorer::new(RowGate::Count { threshold: 1 }), 4, 300, &RngPlan::new(6)).unwrap();
    assert_ne!(a.logs, c.logs);
}

#[test]
fn counts_are_consistent_with_trajectories() {
    let mdp = random_mdp(3, 3, 4, 9, 0.5).unwrap();
    let log = run_phase(&mdp, &PhasePlan::single(Policy::uniform(3, 3, 4), 500), &RngPlan::new(2), 0).unwrap();
    assert!(log.is_consistent());
    assert_eq!(count_transitions(&log.trajectories), log.counts);
    assert_eq!(log.agents(), 500);
    assert!(log.trajectories.iter().all(|t| t.states[0] == 0));
}

#[test]
fn key_policy_agents_stay_in_the_key_state() {
    let inst = make_key_dynamics(5, 3, &[1, 2, 0, 0, 1]).unwrap();
    let log = run_phase(&inst.mdp, &PhasePlan::single(inst.key_policy(), 40), &RngPlan::new(0), 0).unwrap();
    assert!(log.trajectories.iter().all(|t| t.states.iter().all(|&s| s == KEY_STATE)));
}

#[test]
fn empirical_frequencies_within_confidence_radius() {
    let mdp = random_mdp(3, 2, 2, 11, 1.0).unwrap();
    let pi = Policy::open_loop(3, 2, &[1, 0]).unwrap();
    let m = 100_000;
    let log = run_phase(&mdp, &PhasePlan::single(pi, m), &RngPlan::new(3), 0).unwrap();
    let step = log.step_counts(0);
    let l1: f64 = (0..3)
        .map(|n| {
            let c = step.get(&(0, 1, n)).copied().unwrap_or(0);
            (c as f64 / m as f64 - mdp.prob(0, 0, 1, n)).abs()
        })
        .sum();
    assert!(l1 <= confidence_radius(m as u64, 3, 1e-3).unwrap(), "l1 = {l1}");
}

#[test]
fn paired_agents_draw_independently() {
    let coin = TabularMdp::from_fn(2, 1, 1, 0, |_, _, _, _| 0.5).unwrap();
    let pi = Policy::uniform(2, 1, 1);
    let n = 10_000;
    let (mut sx, mut sy, mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for episode in 0..n {
        let log = run_phase(&coin, &PhasePlan::single(pi.clone(), 2), &RngPlan::new(77), episode).unwrap();
        let x = log.trajectories[0].states[1] as f64;
        let y = log.trajectories[1].states[1] as f64;
        sx += x;
        sy += y;
        sxy += x * y;
        sxx += x * x;
        syy += y * y;
    }
    let nf = n as f64;
    let cov = sxy / nf - (sx / nf) * (sy / nf);
    let corr = cov / ((sxx / nf - (sx / nf).powi(2)) * (syy / nf - (sy / nf).powi(2))).sqrt();
    assert!(corr.abs() < 0.05, "correlation {corr}");
}

#[test]
fn deterministic_mdp_gives_identical_trajectories() {
    let mdp = TabularMdp::from_fn(4, 2, 5, 0, |h, s, a, n| {
        if (s + a + h) % 4 == n { 1.0 } else { 0.0 }
    })
    .unwrap();
    let log = run_phase(&mdp, &PhasePlan::single(Policy::uniform(4, 2, 5), 64), &RngPlan::new(1), 0).unwrap();
    let det = Policy::open_loop(4, 2, &[0, 1, 1, 0, 1]).unwrap();
    let log2 = run_phase(&mdp, &PhasePlan::single(det, 64), &RngPlan::new(1), 0).unwrap();
    assert!(log2.trajectories.windows(2).all(|w| w[0] == w[1]));
    assert!(log.is_consistent());
    assert_eq!(mdp.horizon(), 5);
}
