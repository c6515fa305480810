//! Key dynamics: the two-state lock used for the phase/agent lower bound.
//!
//! State 0 is the informative state `s*` and state 1 an absorbing dead end.
//! From `s*` at step `h`, only the key action `key[h]` stays in `s*`; every
//! other action falls into the dead end for the rest of the episode.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimate::EstimatedDynamics;
use crate::mdp::{Policy, RewardFunction, TabularMdp};
use crate::planning::{optimal_policy, policy_value};
use crate::rng::RngPlan;
use crate::simulator::{run_protocol, Explorer, PhaseLog, PhasePlan, ProtocolContext};

/// Index of `s*`.
pub const KEY_STATE: usize = 0;
/// Index of the absorbing dead-end state.
pub const DEAD_STATE: usize = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct KeyInstance {
    pub key: Vec<usize>,
    pub mdp: TabularMdp,
}

impl KeyInstance {
    pub fn horizon(&self) -> usize {
        self.key.len()
    }

    pub fn num_actions(&self) -> usize {
        self.mdp.kernel().num_actions()
    }

    /// The open-loop policy that plays the key.
    pub fn key_policy(&self) -> Policy {
        Policy::open_loop(2, self.num_actions(), &self.key).expect("key entries are valid actions")
    }
}

pub fn make_key_dynamics(horizon: usize, num_actions: usize, key: &[usize]) -> Result<KeyInstance> {
    if key.len() != horizon {
        return Err(Error::InvalidSize(format!(
            "key has length {}, expected H = {horizon}",
            key.len()
        )));
    }
    if let Some((h, &a)) = key.iter().enumerate().find(|(_, &a)| a >= num_actions) {
        return Err(Error::Domain(format!(
            "key action {a} at step {h} outside [0, {num_actions})"
        )));
    }
    let mdp = TabularMdp::from_fn(2, num_actions, horizon, KEY_STATE, |h, s, a, next| {
        let stays = s == KEY_STATE && a == key[h];
        let target = if stays { KEY_STATE } else { DEAD_STATE };
        if next == target {
            1.0
        } else {
            0.0
        }
    })?;
    Ok(KeyInstance {
        key: key.to_vec(),
        mdp,
    })
}

/// Uniformly random key.
pub fn random_key(horizon: usize, num_actions: usize, rng: &mut impl Rng) -> Vec<usize> {
    (0..horizon).map(|_| rng.random_range(0..num_actions)).collect()
}

pub fn make_random_key_dynamics(horizon: usize, num_actions: usize, seed: u64) -> Result<KeyInstance> {
    if num_actions == 0 {
        return Err(Error::InvalidSize("A must be at least 1".into()));
    }
    let key = random_key(horizon, num_actions, &mut ChaCha8Rng::seed_from_u64(seed));
    make_key_dynamics(horizon, num_actions, &key)
}

/// The `index`-th action sequence in lexicographic order (last step fastest).
pub fn sequence_at(index: usize, horizon: usize, num_actions: usize) -> Vec<usize> {
    let mut seq = vec![0; horizon];
    let mut rest = index;
    for slot in seq.iter_mut().rev() {
        *slot = rest % num_actions;
        rest /= num_actions;
    }
    seq
}

/// `A^H`, or `None` on overflow.
pub fn sequence_count(horizon: usize, num_actions: usize) -> Option<usize> {
    num_actions.checked_pow(u32::try_from(horizon).ok()?)
}

/// `r_h(s, a) = 1` iff `h = H-1`, `s = s*` and `a = key[H-1]`.
pub fn r_key(instance: &KeyInstance) -> RewardFunction {
    let last = instance.horizon() - 1;
    let key_last = instance.key[last];
    RewardFunction::from_fn(2, instance.num_actions(), instance.horizon(), |h, s, a| {
        if h == last && s == KEY_STATE && a == key_last {
            1.0
        } else {
            0.0
        }
    })
    .expect("indicator rewards are in range")
}

/// Assigns agent `i` the `i`-th open-loop action sequence. With `A^H` agents
/// exactly one of them walks the key, which identifies the dynamics.
#[derive(Debug, Clone)]
pub struct ExhaustiveExplorer {
    horizon: usize,
    num_actions: usize,
}

pub fn exhaustive_single_phase(horizon: usize, num_actions: usize) -> Result<ExhaustiveExplorer> {
    if horizon == 0 || num_actions == 0 {
        return Err(Error::InvalidSize("H and A must be at least 1".into()));
    }
    sequence_count(horizon, num_actions)
        .ok_or_else(|| Error::Domain(format!("A^H overflows for A={num_actions}, H={horizon}")))?;
    Ok(ExhaustiveExplorer {
        horizon,
        num_actions,
    })
}

impl Explorer for ExhaustiveExplorer {
    fn plan_phase(&mut self, ctx: &ProtocolContext, _history: &[PhaseLog]) -> Result<PhasePlan> {
        if ctx.num_states != 2 || ctx.horizon != self.horizon || ctx.num_actions != self.num_actions {
            return Err(Error::dims(format!(
                "exhaustive learner built for key dynamics with H={}, A={}; got S={}, H={}, A={}",
                self.horizon, self.num_actions, ctx.num_states, ctx.horizon, ctx.num_actions
            )));
        }
        let needed = sequence_count(self.horizon, self.num_actions).expect("checked at construction");
        if ctx.agents < needed {
            return Err(Error::AgentDeficit {
                required: needed,
                available: ctx.agents,
            });
        }
        let policies = (0..needed)
            .map(|i| Policy::open_loop(2, self.num_actions, &sequence_at(i, self.horizon, self.num_actions)))
            .collect::<Result<Vec<_>>>()?;
        let assignments = (0..needed)
            .map(|i| crate::simulator::Assignment {
                policy: i,
                forced: None,
            })
            .collect();
        Ok(PhasePlan {
            policies,
            assignments,
        })
    }

    fn estimate(&mut self, _ctx: &ProtocolContext, history: &[PhaseLog]) -> Result<EstimatedDynamics> {
        let first = history
            .first()
            .ok_or_else(|| Error::Protocol("no phase was run".into()))?;
        let survivor = first
            .trajectories
            .iter()
            .find(|t| t.states.iter().all(|&s| s == KEY_STATE))
            .ok_or_else(|| Error::Protocol("no agent stayed in s* for the whole episode".into()))?;
        let instance = make_key_dynamics(self.horizon, self.num_actions, &survivor.actions)?;
        Ok(EstimatedDynamics::from_mdp(&instance.mdp))
    }
}

/// Which keys a lower-bound experiment runs against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum KeySource {
    /// All `A^H` keys, each run with the same master seed.
    Exhaustive,
    /// Uniform random keys, one fresh seed per trial.
    Random { trials: usize },
}

/// `|G_h|` for every trial, phase and timestep `h` in `0..=H`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SurvivorCurve {
    pub horizon: usize,
    pub num_actions: usize,
    pub phases: usize,
    pub agents: usize,
    /// `counts[trial][phase][h]`.
    pub counts: Vec<Vec<Vec<usize>>>,
}

impl SurvivorCurve {
    pub fn trials(&self) -> usize {
        self.counts.len()
    }

    /// Mean `|G_h|` over trials.
    pub fn mean(&self, phase: usize, h: usize) -> f64 {
        let total: usize = self.counts.iter().map(|t| t[phase][h]).sum();
        total as f64 / self.trials() as f64
    }

    /// Fraction of trials with `|G_h| = 0`.
    pub fn empty_fraction(&self, phase: usize, h: usize) -> f64 {
        let empty = self.counts.iter().filter(|t| t[phase][h] == 0).count();
        empty as f64 / self.trials() as f64
    }

    /// Counts are nonincreasing in `h` and bounded by `m` everywhere.
    pub fn is_monotone(&self) -> bool {
        self.counts.iter().flatten().all(|row| {
            row.iter().all(|&c| c <= self.agents) && row.windows(2).all(|w| w[1] <= w[0])
        })
    }
}

fn keys_for(source: KeySource, horizon: usize, num_actions: usize, seed: u64) -> Result<Vec<(Vec<usize>, RngPlan)>> {
    let root = RngPlan::new(seed);
    match source {
        KeySource::Exhaustive => {
            let n = sequence_count(horizon, num_actions)
                .ok_or_else(|| Error::Domain("A^H overflows".into()))?;
            Ok((0..n)
                .map(|i| (sequence_at(i, horizon, num_actions), root))
                .collect())
        }
        KeySource::Random { trials } => Ok((0..trials)
            .map(|t| {
                let mut key_rng = ChaCha8Rng::seed_from_u64(root.derive(2 * t as u64).master_seed);
                (random_key(horizon, num_actions, &mut key_rng), root.derive(2 * t as u64 + 1))
            })
            .collect()),
    }
}

/// Runs the explorer on each key instance and records how many agents are
/// still in `s*` at every step of every phase.
pub fn survivor_experiment<F>(
    make_explorer: F,
    horizon: usize,
    num_actions: usize,
    phases: usize,
    agents: usize,
    keys: KeySource,
    seed: u64,
) -> Result<SurvivorCurve>
where
    F: Fn() -> Box<dyn Explorer> + Sync,
{
    if phases == 0 {
        return Err(Error::Config(vec!["number of phases must be at least 1".into()]));
    }
    let trials = keys_for(keys, horizon, num_actions, seed)?;
    let counts = trials
        .par_iter()
        .map(|(key, plan)| {
            let instance = make_key_dynamics(horizon, num_actions, key)?;
            let mut explorer = make_explorer();
            let run = run_protocol(&instance.mdp, explorer.as_mut(), phases, agents, plan)?;
            Ok(run
                .logs
                .iter()
                .map(|log| (0..=horizon).map(|h| log.occupants(h, KEY_STATE)).collect())
                .collect())
        })
        .collect::<Result<Vec<Vec<Vec<usize>>>>>()?;
    Ok(SurvivorCurve {
        horizon,
        num_actions,
        phases,
        agents,
        counts,
    })
}

/// One cell of the phase/agent trade-off grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridRow {
    pub phases: usize,
    pub agents: usize,
    pub num_actions: usize,
    pub horizon: usize,
    pub failure_rate: f64,
    pub trials: usize,
    /// Normal-approximation 95% half-width, `1.96 sqrt(p (1-p) / trials)`.
    pub ci_halfwidth: f64,
}

pub const GRID_HEADER: [&str; 7] = ["rho", "m", "A", "H", "failure_rate", "trials", "ci_halfwidth"];

/// Value below which the planned policy counts as a failure.
pub const FAILURE_VALUE: f64 = 0.9;

/// True when planning on the estimate for `r_key` gets value below
/// [`FAILURE_VALUE`] on the true instance.
pub fn key_failure(instance: &KeyInstance, estimate: &EstimatedDynamics) -> Result<bool> {
    let reward = r_key(instance);
    let planned = optimal_policy(estimate, &reward)?;
    Ok(policy_value(&planned.policy, &instance.mdp, &reward)? < FAILURE_VALUE)
}

/// For every `(rho, m)` cell, the fraction of random-key trials on which the
/// explorer fails. All cells share the same keys and per-trial seeds.
pub fn value_gap_vs_phase_budget<F>(
    make_explorer: F,
    phase_budgets: &[usize],
    agent_counts: &[usize],
    num_actions: usize,
    horizon: usize,
    trials: usize,
    seed: u64,
) -> Result<Vec<GridRow>>
where
    F: Fn(usize) -> Box<dyn Explorer> + Sync,
{
    if trials == 0 {
        return Err(Error::Config(vec!["trials must be at least 1".into()]));
    }
    let keys = keys_for(KeySource::Random { trials }, horizon, num_actions, seed)?;
    let mut rows = Vec::new();
    for &phases in phase_budgets {
        for &agents in agent_counts {
            let failures = keys
                .par_iter()
                .map(|(key, plan)| {
                    let instance = make_key_dynamics(horizon, num_actions, key)?;
                    let mut explorer = make_explorer(phases);
                    let run = run_protocol(&instance.mdp, explorer.as_mut(), phases, agents, plan)?;
                    key_failure(&instance, &run.estimate)
                })
                .collect::<Result<Vec<bool>>>()?
                .into_iter()
                .filter(|&f| f)
                .count();
            let p = failures as f64 / trials as f64;
            rows.push(GridRow {
                phases,
                agents,
                num_actions,
                horizon,
                failure_rate: p,
                trials,
                ci_halfwidth: 1.96 * (p * (1.0 - p) / trials as f64).sqrt(),
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{validate_mdp, Dynamics};
    use crate::planning::{occupancy, transition_matrix};

    #[test]
    fn table_entries() {
        let inst = make_key_dynamics(3, 2, &[0, 1, 0]).unwrap();
        assert_eq!(inst.mdp.prob(1, KEY_STATE, 1, KEY_STATE), 1.0);
        assert_eq!(inst.mdp.prob(1, KEY_STATE, 0, DEAD_STATE), 1.0);
        for h in 0..3 {
            for a in 0..2 {
                assert_eq!(inst.mdp.row(h, DEAD_STATE, a), &[0.0, 1.0]);
            }
        }
        assert!(validate_mdp(&inst.mdp).is_empty());
    }

    #[test]
    fn key_errors() {
        assert!(make_key_dynamics(3, 2, &[0, 1]).is_err());
        assert!(make_key_dynamics(2, 2, &[0, 2]).is_err());
    }

    #[test]
    fn seeded_keys_repeat() {
        let a = make_random_key_dynamics(6, 3, 11).unwrap();
        let b = make_random_key_dynamics(6, 3, 11).unwrap();
        assert_eq!(a.key, b.key);
    }

    #[test]
    fn key_policy_stays_put() {
        let inst = make_key_dynamics(4, 3, &[2, 0, 1, 1]).unwrap();
        let pi = inst.key_policy();
        let m = transition_matrix(&inst.mdp, 2, &pi).unwrap();
        assert_eq!(m.row(KEY_STATE), &[1.0, 0.0]);
        let occ = occupancy(&pi, &inst.mdp).unwrap();
        assert!((0..=4).all(|h| occ.get(h, KEY_STATE) == 1.0));
    }

    #[test]
    fn r_key_shape() {
        let inst = make_key_dynamics(4, 3, &[2, 0, 1, 1]).unwrap();
        let r = r_key(&inst);
        assert_eq!(r.as_slice().iter().sum::<f64>(), 1.0);
        assert_eq!(r.get(3, KEY_STATE, 1), 1.0);
        assert_eq!(policy_value(&inst.key_policy(), &inst.mdp, &r).unwrap(), 1.0);
        let deviate = Policy::open_loop(2, 3, &[2, 1, 1, 1]).unwrap();
        assert_eq!(policy_value(&deviate, &inst.mdp, &r).unwrap(), 0.0);
    }

    #[test]
    fn sequences_enumerate_lexicographically() {
        assert_eq!(sequence_at(0, 3, 2), vec![0, 0, 0]);
        assert_eq!(sequence_at(5, 3, 2), vec![1, 0, 1]);
        assert_eq!(sequence_at(7, 2, 3), vec![2, 1]);
        assert_eq!(sequence_count(8, 2), Some(256));
    }

    #[test]
    fn exhaustive_learner_deficit() {
        let inst = make_key_dynamics(4, 2, &[1, 0, 1, 1]).unwrap();
        let mut ex = exhaustive_single_phase(4, 2).unwrap();
        let err = run_protocol(&inst.mdp, &mut ex, 1, 15, &RngPlan::new(0));
        assert!(matches!(err, Err(Error::AgentDeficit { required: 16, available: 15 })));
        let run = run_protocol(&inst.mdp, &mut ex, 1, 16, &RngPlan::new(0)).unwrap();
        assert!(run.estimate.matches_exactly(&inst.mdp));
    }
}
