//! Reference explorers: the count-threshold construction and uniform-random agents.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimate::{EstimatedDynamics, StepCounts};
use crate::marfe::{run_layered, MarfeRun, RowGate};
use crate::mdp::{Dynamics, Policy, TabularMdp};
use crate::rng::RngPlan;
use crate::simulator::{run_protocol, Explorer, PhaseLog, PhasePlan, ProtocolContext, ProtocolRun};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct NaiveConfig {
    pub agents: usize,
    /// Minimum samples for a row to keep its empirical estimate.
    pub count_threshold: u64,
    pub seed: u64,
}

/// Same max-reach routing as MARFE but over every state with no reachability
/// gate; a row keeps its empirical mean only with at least `count_threshold`
/// samples. Runs `H` phases.
pub fn run_naive(mdp: &TabularMdp, config: &NaiveConfig) -> Result<MarfeRun> {
    let mut bad = Vec::new();
    if config.count_threshold == 0 {
        bad.push("count threshold must be at least 1".to_string());
    }
    let need = mdp.num_states() * mdp.num_actions();
    if config.agents < need {
        bad.push(format!(
            "m = {} is below S*A = {need} (short by {})",
            config.agents,
            need - config.agents
        ));
    }
    if !bad.is_empty() {
        return Err(Error::Config(bad));
    }
    run_layered(
        mdp,
        RowGate::Count {
            threshold: config.count_threshold,
        },
        config.agents,
        config.seed,
    )
}

/// Every agent plays uniformly random actions in every phase. The estimate
/// pools all phases: row `(h, s, a)` is the empirical mean of every observed
/// step-`h` transition from `(s, a)`, or the sink when unobserved. A state is
/// active at `h` when some agent visited it at `h`.
#[derive(Debug, Clone, Default)]
pub struct UniformExplorer;

impl Explorer for UniformExplorer {
    fn plan_phase(&mut self, ctx: &ProtocolContext, _history: &[PhaseLog]) -> Result<PhasePlan> {
        Ok(PhasePlan::single(
            Policy::uniform(ctx.num_states, ctx.num_actions, ctx.horizon),
            ctx.agents,
        ))
    }

    fn estimate(&mut self, ctx: &ProtocolContext, history: &[PhaseLog]) -> Result<EstimatedDynamics> {
        pooled_estimate(ctx, history)
    }
}

/// Empirical rows pooled over every log; unobserved rows go to the sink.
pub fn pooled_estimate(ctx: &ProtocolContext, history: &[PhaseLog]) -> Result<EstimatedDynamics> {
    let (s_n, a_n, h_n) = (ctx.num_states, ctx.num_actions, ctx.horizon);
    let mut counts = vec![StepCounts::new(); h_n];
    let mut visited = vec![vec![false; s_n]; h_n];
    for log in history {
        for (&(h, s, a, next), &c) in &log.counts {
            *counts[h].entry((s, a, next)).or_insert(0) += c;
            visited[h][s] = true;
        }
    }
    let base = EstimatedDynamics::all_sink(s_n, a_n, h_n, ctx.initial_state)?;
    let mut transitions = base.kernel().as_slice().to_vec();
    let row_len = s_n + 1;
    for (h, step) in counts.iter().enumerate() {
        for s in 0..s_n {
            for a in 0..a_n {
                let n: u64 = step.range((s, a, 0)..=(s, a, usize::MAX)).map(|(_, &c)| c).sum();
                if n == 0 {
                    continue;
                }
                let o = ((h * row_len + s) * a_n + a) * row_len;
                let row = &mut transitions[o..o + row_len];
                row.fill(0.0);
                for (&(_, _, next), &c) in step.range((s, a, 0)..=(s, a, usize::MAX)) {
                    row[next] = c as f64 / n as f64;
                }
            }
        }
    }
    let active = visited
        .iter()
        .map(|v| (0..s_n).filter(|&s| v[s]).collect())
        .collect();
    EstimatedDynamics::from_parts(s_n, a_n, h_n, ctx.initial_state, transitions, active, counts, None)
}

/// Runs [`UniformExplorer`] for `phases` phases of `agents` agents.
pub fn run_uniform(mdp: &TabularMdp, agents: usize, phases: usize, seed: u64) -> Result<ProtocolRun> {
    run_protocol(mdp, &mut UniformExplorer, phases, agents, &RngPlan::new(seed))
}
