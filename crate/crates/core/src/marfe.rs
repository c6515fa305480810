//! Layer-wise multi-agent reward-free exploration (MARFE).
//!
//! Phase `i` estimates the step-`i` transitions only. Using the estimate of
//! steps `0..i`, it computes for every state the policy that reaches it at
//! step `i` with maximum probability, keeps the states whose maximum reach
//! probability is at least `beta` (the active set), splits the agents into one
//! group per active `(s, a)`, and sends each group along its state's max-reach
//! policy with action `a` forced at `(i, s)`. Rows of active states become
//! empirical means; everything else is routed to the sink.

use std::collections::BTreeMap;
use std::ops::Range;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimate::{EstimatedDynamics, StepCounts, StepEstimate};
use crate::mdp::{Dynamics, Policy, TabularMdp};
use crate::planning::max_reach_policy;
use crate::rng::RngPlan;
use crate::simulator::{
    run_protocol, Assignment, Explorer, ForcedAction, PhaseLog, PhasePlan, ProtocolContext,
};

/// `beta = epsilon / (2 H^2 S)`.
pub fn default_beta(epsilon: f64, num_states: usize, horizon: usize) -> f64 {
    epsilon / (2.0 * (horizon * horizon * num_states) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MarfeConfig {
    /// Agents per phase.
    pub agents: usize,
    pub beta: f64,
    /// Failure probability; used only by diagnostics and bounds.
    pub delta: f64,
    pub seed: u64,
}

impl MarfeConfig {
    /// Configuration with `beta` set from the target accuracy.
    pub fn for_accuracy(
        agents: usize,
        epsilon: f64,
        delta: f64,
        num_states: usize,
        horizon: usize,
        seed: u64,
    ) -> Self {
        Self {
            agents,
            beta: default_beta(epsilon, num_states, horizon),
            delta,
            seed,
        }
    }

    /// `alpha = beta / (3H)`, reported for diagnostics.
    pub fn alpha(&self, horizon: usize) -> f64 {
        self.beta / (3.0 * horizon as f64)
    }

    pub fn validate(&self, num_states: usize, num_actions: usize) -> Result<()> {
        let mut bad = Vec::new();
        if !(self.beta > 0.0 && self.beta < 1.0) {
            bad.push(format!("beta must lie in (0, 1), got {}", self.beta));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            bad.push(format!("delta must lie in (0, 1), got {}", self.delta));
        }
        let need = num_states * num_actions;
        if self.agents < need {
            bad.push(format!(
                "m = {} is below S*A = {need} (short by {})",
                self.agents,
                need - self.agents
            ));
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad))
        }
    }
}

/// Result of the reachability pass at one timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct ActiveSet {
    pub timestep: usize,
    /// States with reach probability at least `beta`, ascending.
    pub states: Vec<usize>,
    /// Max-reach policy for every real state.
    pub policies: Vec<Policy>,
    /// Maximum reach probability for every real state.
    pub reach: Vec<f64>,
}

/// Max-reach policies and the active set at step `timestep`, computed on the
/// steps `0..timestep` of `partial`. Step 0 yields `{s0}` with probability 1.
pub fn compute_active_set(
    partial: &EstimatedDynamics,
    timestep: usize,
    beta: f64,
) -> Result<ActiveSet> {
    let (s_n, h_n) = (partial.num_states(), partial.horizon());
    if timestep >= h_n {
        return Err(Error::Domain(format!("timestep {timestep} outside [0, {h_n})")));
    }
    let mut policies = Vec::with_capacity(s_n);
    let mut reach = Vec::with_capacity(s_n);
    for s in 0..s_n {
        let r = max_reach_policy(partial, timestep, s)?;
        reach.push(r.value);
        policies.push(r.policy);
    }
    let states = (0..s_n).filter(|&s| reach[s] >= beta).collect();
    Ok(ActiveSet {
        timestep,
        states,
        policies,
        reach,
    })
}

/// The agents sent to one `(state, action)` pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AgentGroup {
    pub state: usize,
    pub action: usize,
    pub agents: Range<usize>,
}

impl AgentGroup {
    pub fn len(&self) -> usize {
        self.agents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agents.is_empty()
    }
}

/// Splits `0..agents` into contiguous groups, one per `(s, a)` with `s` taken
/// from `states` in order and `a` ascending. Sizes differ by at most one; the
/// leftover agents go one each to the first groups.
pub fn partition_agents(
    agents: usize,
    states: &[usize],
    num_actions: usize,
) -> Result<Vec<AgentGroup>> {
    let groups = states.len() * num_actions;
    if groups == 0 {
        return Ok(Vec::new());
    }
    if agents < groups {
        return Err(Error::AgentDeficit {
            required: groups,
            available: agents,
        });
    }
    let base = agents / groups;
    let extra = agents % groups;
    let mut out = Vec::with_capacity(groups);
    let mut start = 0;
    for (g, (s, a)) in states
        .iter()
        .flat_map(|&s| (0..num_actions).map(move |a| (s, a)))
        .enumerate()
    {
        let size = base + usize::from(g < extra);
        out.push(AgentGroup {
            state: s,
            action: a,
            agents: start..start + size,
        });
        start += size;
    }
    debug_assert_eq!(start, agents);
    Ok(out)
}

/// Active `(h, s, a)` whose empirical row had no samples and was routed to the sink.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ZeroVisit {
    pub timestep: usize,
    pub state: usize,
    pub action: usize,
}

/// Which rows of a phase keep their empirical estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum RowGate {
    /// Active states only (reach probability at least `beta`); any positive count is kept.
    Reach { beta: f64 },
    /// Every state is explored; a row is kept when it has at least `threshold` samples.
    Count { threshold: u64 },
}

/// Step-`timestep` rows from the phase's counts.
///
/// Kept rows are `N(s,a,s') / N(s,a)`. Rows of states outside `active`, and
/// rows with too few samples (zero, or below the count threshold), are one-hot
/// at the sink. The returned counts cover the kept rows only.
pub fn build_phase_estimate(
    log: &PhaseLog,
    active: &[usize],
    num_states: usize,
    num_actions: usize,
    timestep: usize,
    min_count: u64,
) -> (StepEstimate, Vec<ZeroVisit>) {
    let sink = num_states;
    let all = log.step_counts(timestep);
    let mut rows = vec![sink_row(num_states); num_states * num_actions];
    let mut kept = StepCounts::new();
    let mut zero = Vec::new();
    for &s in active {
        for a in 0..num_actions {
            let n: u64 = all
                .range((s, a, 0)..=(s, a, usize::MAX))
                .map(|(_, &c)| c)
                .sum();
            if n == 0 {
                zero.push(ZeroVisit {
                    timestep,
                    state: s,
                    action: a,
                });
                continue;
            }
            if n < min_count.max(1) {
                continue;
            }
            let row = &mut rows[s * num_actions + a];
            row[sink] = 0.0;
            for (&(_, _, next), &c) in all.range((s, a, 0)..=(s, a, usize::MAX)) {
                row[next] = c as f64 / n as f64;
                kept.insert((s, a, next), c);
            }
        }
    }
    (
        StepEstimate {
            rows,
            active: active.to_vec(),
            counts: kept,
        },
        zero,
    )
}

fn sink_row(num_states: usize) -> Vec<f64> {
    let mut r = vec![0.0; num_states + 1];
    r[num_states] = 1.0;
    r
}

/// Size of each agent group in one phase.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseGroups {
    pub phase: usize,
    pub active_states: Vec<usize>,
    pub reach: Vec<f64>,
    pub groups: Vec<AgentGroup>,
}

/// The layered explorer behind both MARFE and the count-threshold baseline.
/// Runs exactly `H` phases.
#[derive(Debug, Clone)]
pub struct LayeredExplorer {
    gate: RowGate,
    partial: Option<EstimatedDynamics>,
    pending_active: Vec<usize>,
    phases: Vec<PhaseGroups>,
    warnings: Vec<ZeroVisit>,
}

impl LayeredExplorer {
    pub fn new(gate: RowGate) -> Self {
        Self {
            gate,
            partial: None,
            pending_active: Vec::new(),
            phases: Vec::new(),
            warnings: Vec::new(),
        }
    }

    pub fn marfe(beta: f64) -> Self {
        Self::new(RowGate::Reach { beta })
    }

    pub fn gate(&self) -> RowGate {
        self.gate
    }

    pub fn phase_groups(&self) -> &[PhaseGroups] {
        &self.phases
    }

    pub fn warnings(&self) -> &[ZeroVisit] {
        &self.warnings
    }

    fn absorb(&mut self, log: &PhaseLog, timestep: usize) {
        let partial = self.partial.as_mut().expect("initialized in plan_phase");
        let (s_n, a_n) = (partial.num_states(), partial.num_actions());
        let min_count = match self.gate {
            RowGate::Reach { .. } => 1,
            RowGate::Count { threshold } => threshold,
        };
        let (step, zero) =
            build_phase_estimate(log, &self.pending_active, s_n, a_n, timestep, min_count);
        if matches!(self.gate, RowGate::Reach { .. }) {
            for z in &zero {
                log::warn!(
                    "active (h={}, s={}, a={}) received no samples; routed to sink",
                    z.timestep,
                    z.state,
                    z.action
                );
            }
            self.warnings.extend(zero);
        }
        partial.set_step(timestep, step);
    }

    fn check_context(&self, ctx: &ProtocolContext) -> Result<()> {
        if ctx.phases != ctx.horizon {
            return Err(Error::Config(vec![format!(
                "layered exploration runs exactly H = {} phases, got {}",
                ctx.horizon, ctx.phases
            )]));
        }
        let need = ctx.num_states * ctx.num_actions;
        if ctx.agents < need {
            return Err(Error::Config(vec![format!(
                "m = {} is below S*A = {need} (short by {})",
                ctx.agents,
                need - ctx.agents
            )]));
        }
        if let RowGate::Count { threshold: 0 } = self.gate {
            return Err(Error::Config(vec!["count threshold must be at least 1".into()]));
        }
        Ok(())
    }
}

impl Explorer for LayeredExplorer {
    fn plan_phase(&mut self, ctx: &ProtocolContext, history: &[PhaseLog]) -> Result<PhasePlan> {
        let i = ctx.phase;
        if i == 0 {
            self.check_context(ctx)?;
            let mut partial = EstimatedDynamics::all_sink(
                ctx.num_states,
                ctx.num_actions,
                ctx.horizon,
                ctx.initial_state,
            )?;
            partial.set_beta(match self.gate {
                RowGate::Reach { beta } => Some(beta),
                RowGate::Count { .. } => None,
            });
            self.partial = Some(partial);
            self.phases.clear();
            self.warnings.clear();
        } else {
            self.absorb(&history[i - 1], i - 1);
        }
        let partial = self.partial.as_ref().expect("initialized above");
        let beta = match self.gate {
            RowGate::Reach { beta } => beta,
            RowGate::Count { .. } => f64::NEG_INFINITY,
        };
        let active = compute_active_set(partial, i, beta)?;
        let groups = partition_agents(ctx.agents, &active.states, ctx.num_actions)?;

        let mut policy_index = BTreeMap::new();
        let mut policies = Vec::new();
        let mut assignments = vec![
            Assignment {
                policy: 0,
                forced: None
            };
            ctx.agents
        ];
        for g in &groups {
            let idx = *policy_index.entry(g.state).or_insert_with(|| {
                policies.push(active.policies[g.state].clone());
                policies.len() - 1
            });
            for j in g.agents.clone() {
                assignments[j] = Assignment {
                    policy: idx,
                    forced: Some(ForcedAction {
                        timestep: i,
                        state: g.state,
                        action: g.action,
                    }),
                };
            }
        }
        if policies.is_empty() {
            // Nothing is active: the phase still runs, but its samples are unused.
            policies.push(active.policies[ctx.initial_state].clone());
        }
        self.pending_active = active.states.clone();
        self.phases.push(PhaseGroups {
            phase: i,
            active_states: active.states,
            reach: active.reach,
            groups,
        });
        Ok(PhasePlan {
            policies,
            assignments,
        })
    }

    fn estimate(&mut self, ctx: &ProtocolContext, history: &[PhaseLog]) -> Result<EstimatedDynamics> {
        let last = ctx
            .phases
            .checked_sub(1)
            .ok_or_else(|| Error::Protocol("no phases were run".into()))?;
        if self.partial.is_none() || history.len() != ctx.phases {
            return Err(Error::Protocol("estimate requested before all phases ran".into()));
        }
        self.absorb(&history[last], last);
        Ok(self.partial.clone().expect("checked above"))
    }
}

/// Full audit of one MARFE (or count-threshold) run.
#[derive(Debug, Clone)]
pub struct MarfeRun {
    pub estimate: EstimatedDynamics,
    pub logs: Vec<PhaseLog>,
    pub phases: Vec<PhaseGroups>,
    pub warnings: Vec<ZeroVisit>,
}

pub(crate) fn run_layered(
    mdp: &TabularMdp,
    gate: RowGate,
    agents: usize,
    seed: u64,
) -> Result<MarfeRun> {
    let mut explorer = LayeredExplorer::new(gate);
    let run = run_protocol(mdp, &mut explorer, mdp.horizon(), agents, &RngPlan::new(seed))?;
    Ok(MarfeRun {
        estimate: run.estimate,
        logs: run.logs,
        phases: explorer.phases,
        warnings: explorer.warnings,
    })
}

/// Runs MARFE against `mdp` for exactly `H` phases.
pub fn run_marfe(mdp: &TabularMdp, config: &MarfeConfig) -> Result<MarfeRun> {
    config.validate(mdp.num_states(), mdp.num_actions())?;
    run_layered(mdp, RowGate::Reach { beta: config.beta }, config.agents, config.seed)
}

/// The sufficient agent count `89 S^5 H^6 A (ln(1/delta') + 2S) / eps^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AgentBound {
    /// Ceiling of the bound; kept as `f64` because it overflows integers quickly.
    pub agents: f64,
    /// `delta' = delta / (S H A supp)`.
    pub delta_prime: f64,
    /// The upper bound on `m` used inside `delta'`.
    pub support: f64,
}

fn bound_for_support(s: f64, a: f64, h: f64, epsilon: f64, delta: f64, support: f64) -> (f64, f64) {
    let delta_prime = delta / (s * h * a * support);
    let m = 89.0 * s.powi(5) * h.powi(6) * a * ((1.0 / delta_prime).ln() + 2.0 * s)
        / (epsilon * epsilon);
    (m.ceil(), delta_prime)
}

/// `delta'` depends on an upper bound of `m` itself; this resolves it with one
/// fixed-point pass: first with support 1, then with the resulting `m`.
pub fn sufficient_agent_bound(
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    epsilon: f64,
    delta: f64,
) -> Result<AgentBound> {
    let mut bad = Vec::new();
    if num_states == 0 || num_actions == 0 || horizon == 0 {
        bad.push("S, A and H must be at least 1".to_string());
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        bad.push(format!("epsilon must lie in (0, 1), got {epsilon}"));
    }
    if !(delta > 0.0 && delta < 1.0) {
        bad.push(format!("delta must lie in (0, 1), got {delta}"));
    }
    if !bad.is_empty() {
        return Err(Error::Domain(bad.join("; ")));
    }
    let (s, a, h) = (num_states as f64, num_actions as f64, horizon as f64);
    let (first, _) = bound_for_support(s, a, h, epsilon, delta, 1.0);
    let (agents, delta_prime) = bound_for_support(s, a, h, epsilon, delta, first);
    Ok(AgentBound {
        agents,
        delta_prime,
        support: first,
    })
}
