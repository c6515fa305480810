//! The phased cooperative protocol: in each phase every agent runs its assigned
//! policy for one episode against the true MDP, on its own random stream, and
//! the explorer sees only the resulting trajectories.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::{EstimatedDynamics, StepCounts};
use crate::mdp::{sample_index, Dynamics, Policy, TabularMdp, Trajectory};
use crate::rng::RngPlan;

/// Overrides the policy at one `(timestep, state)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForcedAction {
    pub timestep: usize,
    pub state: usize,
    pub action: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    /// Index into [`PhasePlan::policies`].
    pub policy: usize,
    pub forced: Option<ForcedAction>,
}

/// What an explorer asks for in one phase: agent `j` runs `assignments[j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhasePlan {
    pub policies: Vec<Policy>,
    pub assignments: Vec<Assignment>,
}

impl PhasePlan {
    /// Every agent runs the same policy.
    pub fn single(policy: Policy, agents: usize) -> Self {
        Self {
            policies: vec![policy],
            assignments: vec![
                Assignment {
                    policy: 0,
                    forced: None
                };
                agents
            ],
        }
    }
}

/// Transition counts keyed by `(h, s, a, s')`.
pub type Counts = BTreeMap<(usize, usize, usize, usize), u64>;

/// Audit record of one phase.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseLog {
    pub phase_index: usize,
    pub policies: Vec<Policy>,
    pub assignments: Vec<Assignment>,
    pub trajectories: Vec<Trajectory>,
    pub counts: Counts,
}

impl PhaseLog {
    pub fn agents(&self) -> usize {
        self.trajectories.len()
    }

    /// Counts rebuilt from the trajectories.
    pub fn recount(&self) -> Counts {
        count_transitions(&self.trajectories)
    }

    pub fn is_consistent(&self) -> bool {
        self.trajectories.len() == self.assignments.len()
            && self.trajectories.iter().all(Trajectory::is_well_formed)
            && self.recount() == self.counts
    }

    /// `N_h(s, a, s')` for one timestep.
    pub fn step_counts(&self, h: usize) -> StepCounts {
        self.counts
            .range((h, 0, 0, 0)..=(h, usize::MAX, usize::MAX, usize::MAX))
            .map(|(&(_, s, a, n), &c)| ((s, a, n), c))
            .collect()
    }

    /// Number of agents whose state at timestep `h` is `state`.
    pub fn occupants(&self, h: usize, state: usize) -> usize {
        self.trajectories
            .iter()
            .filter(|t| t.states[h] == state)
            .count()
    }
}

pub fn count_transitions(trajectories: &[Trajectory]) -> Counts {
    let mut counts = Counts::new();
    for t in trajectories {
        for h in 0..t.horizon() {
            let (s, a, n) = t.transition(h);
            *counts.entry((h, s, a, n)).or_insert(0) += 1;
        }
    }
    counts
}

fn rollout(
    mdp: &TabularMdp,
    policy: &Policy,
    forced: Option<ForcedAction>,
    rng: &mut impl Rng,
) -> Trajectory {
    let horizon = mdp.horizon();
    let mut states = Vec::with_capacity(horizon + 1);
    let mut actions = Vec::with_capacity(horizon);
    let mut s = mdp.initial_state();
    states.push(s);
    for h in 0..horizon {
        let a = match forced {
            Some(f) if f.timestep == h && f.state == s => f.action,
            _ => policy.sample_action(h, s, rng),
        };
        s = sample_index(mdp.row(h, s, a), rng.random::<f64>());
        actions.push(a);
        states.push(s);
    }
    Trajectory { states, actions }
}

/// Runs one phase. Agents execute in parallel; the result depends only on
/// `(rng.master_seed, phase_index, agent index)`.
pub fn run_phase(
    mdp: &TabularMdp,
    plan: &PhasePlan,
    rng: &RngPlan,
    phase_index: usize,
) -> Result<PhaseLog> {
    if plan.assignments.is_empty() {
        return Err(Error::Protocol("phase plan assigns no agents".into()));
    }
    for p in &plan.policies {
        p.check_compatible(mdp)?;
    }
    for (j, asg) in plan.assignments.iter().enumerate() {
        if asg.policy >= plan.policies.len() {
            return Err(Error::Protocol(format!(
                "agent {j} assigned policy {} but the plan has {}",
                asg.policy,
                plan.policies.len()
            )));
        }
        if let Some(f) = asg.forced {
            if f.timestep >= mdp.horizon()
                || f.state >= mdp.num_states()
                || f.action >= mdp.num_actions()
            {
                return Err(Error::dims(format!(
                    "agent {j} forced action {f:?} is outside the MDP"
                )));
            }
        }
    }
    let trajectories: Vec<Trajectory> = plan
        .assignments
        .par_iter()
        .enumerate()
        .map(|(j, asg)| {
            let mut stream = rng.stream(phase_index, j);
            rollout(mdp, &plan.policies[asg.policy], asg.forced, &mut stream)
        })
        .collect();
    let counts = count_transitions(&trajectories);
    Ok(PhaseLog {
        phase_index,
        policies: plan.policies.clone(),
        assignments: plan.assignments.clone(),
        trajectories,
        counts,
    })
}

/// Everything an explorer may know about the environment: its shape, the
/// start state, and the protocol budget. No rewards, no transitions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ProtocolContext {
    pub num_states: usize,
    pub num_actions: usize,
    pub horizon: usize,
    pub initial_state: usize,
    /// Agents available per phase.
    pub agents: usize,
    /// Total number of phases.
    pub phases: usize,
    /// Current phase, or `phases` when the final estimate is requested.
    pub phase: usize,
}

/// A reward-free exploration strategy driven by [`run_protocol`].
pub trait Explorer {
    /// Assignments for phase `ctx.phase`; `history` holds all earlier phases.
    fn plan_phase(&mut self, ctx: &ProtocolContext, history: &[PhaseLog]) -> Result<PhasePlan>;

    /// Final estimate after all phases.
    fn estimate(&mut self, ctx: &ProtocolContext, history: &[PhaseLog]) -> Result<EstimatedDynamics>;
}

#[derive(Debug, Clone)]
pub struct ProtocolRun {
    pub estimate: EstimatedDynamics,
    pub logs: Vec<PhaseLog>,
}

/// Runs `phases` phases of at most `agents` agents each.
pub fn run_protocol(
    mdp: &TabularMdp,
    explorer: &mut dyn Explorer,
    phases: usize,
    agents: usize,
    rng: &RngPlan,
) -> Result<ProtocolRun> {
    if phases == 0 {
        return Err(Error::Config(vec!["number of phases must be at least 1".into()]));
    }
    if agents == 0 {
        return Err(Error::Config(vec!["number of agents must be at least 1".into()]));
    }
    let mut ctx = ProtocolContext {
        num_states: mdp.num_states(),
        num_actions: mdp.num_actions(),
        horizon: mdp.horizon(),
        initial_state: mdp.initial_state(),
        agents,
        phases,
        phase: 0,
    };
    let mut logs: Vec<PhaseLog> = Vec::with_capacity(phases);
    for phase in 0..phases {
        ctx.phase = phase;
        let plan = explorer.plan_phase(&ctx, &logs)?;
        if plan.assignments.len() > agents {
            return Err(Error::Protocol(format!(
                "phase {phase} requests {} agents but only {agents} exist",
                plan.assignments.len()
            )));
        }
        logs.push(run_phase(mdp, &plan, rng, phase)?);
    }
    ctx.phase = phases;
    let estimate = explorer.estimate(&ctx, &logs)?;
    Ok(ProtocolRun { estimate, logs })
}
