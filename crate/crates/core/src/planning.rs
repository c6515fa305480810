//! Exact dynamic programming over tabular dynamics: per-step transition
//! matrices, occupancy measures, policy values, optimal and max-reach policies.
//!
//! All routines accept sink-augmented dynamics. The sink earns no reward, is
//! never a reach target, and is dropped from reported occupancies.
//! Argmax ties resolve to the lowest action index.

use crate::error::{Error, Result};
use crate::mdp::{Dynamics, Policy, RewardFunction};

/// Row-stochastic matrix over all states (sink included when present).
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    size: usize,
    data: Vec<f64>,
}

impl TransitionMatrix {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let size = rows.len();
        if rows.iter().any(|r| r.len() != size) {
            return Err(Error::dims("transition matrix must be square"));
        }
        Ok(Self {
            size,
            data: rows.concat(),
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.size + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.size..(i + 1) * self.size]
    }

    /// Row vector times matrix, `v M`.
    pub fn left_mul(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.size, "vector length must match matrix size");
        let mut out = vec![0.0; self.size];
        for (i, &vi) in v.iter().enumerate() {
            if vi == 0.0 {
                continue;
            }
            for (o, &m) in out.iter_mut().zip(self.row(i)) {
                *o += vi * m;
            }
        }
        out
    }
}

/// `M[s, s'] = sum_a P_h(s' | s, a) pi_h(a | s)`.
pub fn transition_matrix(
    dynamics: &impl Dynamics,
    h: usize,
    policy: &Policy,
) -> Result<TransitionMatrix> {
    policy.check_compatible(dynamics)?;
    if h >= dynamics.horizon() {
        return Err(Error::Domain(format!(
            "timestep {h} outside [0, {})",
            dynamics.horizon()
        )));
    }
    let n = dynamics.total_states();
    let mut data = vec![0.0; n * n];
    for s in 0..n {
        let out = &mut data[s * n..(s + 1) * n];
        for a in 0..dynamics.num_actions() {
            let w = policy.prob(h, s, a);
            if w == 0.0 {
                continue;
            }
            for (o, &p) in out.iter_mut().zip(dynamics.row(h, s, a)) {
                *o += w * p;
            }
        }
    }
    Ok(TransitionMatrix { size: n, data })
}

/// Per-timestep state visitation probabilities `q_h(s)` for `h` in `0..=H`,
/// over real states only.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyTable {
    horizon: usize,
    num_states: usize,
    q: Vec<f64>,
    sink_mass: Vec<f64>,
}

impl OccupancyTable {
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn get(&self, h: usize, s: usize) -> f64 {
        self.q[h * self.num_states + s]
    }

    /// `q_h(.)` over real states.
    pub fn step(&self, h: usize) -> &[f64] {
        &self.q[h * self.num_states..(h + 1) * self.num_states]
    }

    /// Mass at the sink at step `h` (zero for non-augmented dynamics).
    pub fn sink_mass(&self, h: usize) -> f64 {
        self.sink_mass[h]
    }

    pub fn total(&self, h: usize) -> f64 {
        self.step(h).iter().sum()
    }

    /// `q_h(s, a) = q_h(s) pi_h(a | s)`.
    pub fn state_action(&self, policy: &Policy, h: usize, s: usize, a: usize) -> f64 {
        self.get(h, s) * policy.prob(h, s, a)
    }
}

pub fn occupancy(policy: &Policy, dynamics: &impl Dynamics) -> Result<OccupancyTable> {
    policy.check_compatible(dynamics)?;
    let horizon = dynamics.horizon();
    let s_real = dynamics.num_states();
    let n = dynamics.total_states();
    let mut current = vec![0.0; n];
    current[dynamics.initial_state()] = 1.0;
    let mut q = Vec::with_capacity((horizon + 1) * s_real);
    let mut sink_mass = Vec::with_capacity(horizon + 1);
    for h in 0..=horizon {
        q.extend_from_slice(&current[..s_real]);
        sink_mass.push(if n > s_real { current[s_real] } else { 0.0 });
        if h < horizon {
            current = transition_matrix(dynamics, h, policy)?.left_mul(&current);
        }
    }
    Ok(OccupancyTable {
        horizon,
        num_states: s_real,
        q,
        sink_mass,
    })
}

fn check_reward(dynamics: &impl Dynamics, reward: &RewardFunction) -> Result<()> {
    if reward.horizon() != dynamics.horizon()
        || reward.num_states() != dynamics.num_states()
        || reward.num_actions() != dynamics.num_actions()
    {
        return Err(Error::dims(format!(
            "reward is (H={}, S={}, A={}) but dynamics are (H={}, S={}, A={})",
            reward.horizon(),
            reward.num_states(),
            reward.num_actions(),
            dynamics.horizon(),
            dynamics.num_states(),
            dynamics.num_actions()
        )));
    }
    Ok(())
}

/// `V = sum_h sum_s q_h(s) sum_a pi_h(a|s) r_h(s, a)`.
pub fn policy_value(
    policy: &Policy,
    dynamics: &impl Dynamics,
    reward: &RewardFunction,
) -> Result<f64> {
    check_reward(dynamics, reward)?;
    let occ = occupancy(policy, dynamics)?;
    let mut value = 0.0;
    for h in 0..dynamics.horizon() {
        for (s, &q) in occ.step(h).iter().enumerate() {
            if q == 0.0 {
                continue;
            }
            let expected: f64 = (0..dynamics.num_actions())
                .map(|a| policy.prob(h, s, a) * reward.get(h, s, a))
                .sum();
            value += q * expected;
        }
    }
    Ok(value)
}

/// Value and the policy attaining it.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueResult {
    pub value: f64,
    pub policy: Policy,
}

/// Backward induction over `h = H-1, ..., 0`.
///
/// `terminal` is the value vector at step `H` (or the reach target step),
/// `reward` supplies the per-step reward, and `last_step` is exclusive.
fn backward_induction(
    dynamics: &impl Dynamics,
    last_step: usize,
    terminal: Vec<f64>,
    reward: impl Fn(usize, usize, usize) -> f64,
) -> ValueResult {
    let s_real = dynamics.num_states();
    let n = dynamics.total_states();
    let horizon = dynamics.horizon();
    let mut actions = vec![0usize; horizon * s_real];
    let mut next_value = terminal;
    let mut value = vec![0.0; n];
    for h in (0..last_step).rev() {
        for s in 0..n {
            let mut best = f64::NEG_INFINITY;
            let mut best_a = 0;
            let num_actions = if s < s_real { dynamics.num_actions() } else { 1 };
            for a in 0..num_actions {
                let r = if s < s_real { reward(h, s, a) } else { 0.0 };
                let q = r + dot(dynamics.row(h, s, a), &next_value);
                if q > best {
                    best = q;
                    best_a = a;
                }
            }
            value[s] = best;
            if s < s_real {
                actions[h * s_real + s] = best_a;
            }
        }
        std::mem::swap(&mut value, &mut next_value);
    }
    let policy = Policy::deterministic(s_real, dynamics.num_actions(), horizon, actions)
        .expect("backward induction yields in-range actions");
    ValueResult {
        value: next_value[dynamics.initial_state()],
        policy,
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Optimal deterministic policy and its value `V*`.
pub fn optimal_policy(dynamics: &impl Dynamics, reward: &RewardFunction) -> Result<ValueResult> {
    check_reward(dynamics, reward)?;
    let terminal = vec![0.0; dynamics.total_states()];
    Ok(backward_induction(
        dynamics,
        dynamics.horizon(),
        terminal,
        |h, s, a| reward.get(h, s, a),
    ))
}

/// Policy maximizing `q_h(target | pi)`; the value is that probability.
/// Actions from step `h` onward are 0.
pub fn max_reach_policy(dynamics: &impl Dynamics, h: usize, target: usize) -> Result<ValueResult> {
    if h >= dynamics.horizon() {
        return Err(Error::Domain(format!(
            "reach timestep {h} outside [0, {})",
            dynamics.horizon()
        )));
    }
    if target >= dynamics.num_states() {
        return Err(Error::Domain(if Some(target) == dynamics.sink() {
            "the sink state cannot be a reach target".to_string()
        } else {
            format!("target state {target} outside [0, {})", dynamics.num_states())
        }));
    }
    let mut terminal = vec![0.0; dynamics.total_states()];
    terminal[target] = 1.0;
    Ok(backward_induction(dynamics, h, terminal, |_, _, _| 0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{random_mdp, TabularMdp};

    #[test]
    fn identity_dynamics_give_identity_matrix() {
        let mdp =
            TabularMdp::from_fn(3, 2, 2, 1, |_, s, _, n| if s == n { 1.0 } else { 0.0 }).unwrap();
        let pi = Policy::uniform(3, 2, 2);
        let m = transition_matrix(&mdp, 1, &pi).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(m.get(i, j), if i == j { 1.0 } else { 0.0 });
            }
        }
        let occ = occupancy(&pi, &mdp).unwrap();
        assert_eq!(occ.step(2), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let mdp = random_mdp(3, 2, 2, 0, 1.0).unwrap();
        let pi = Policy::uniform(2, 2, 2);
        assert!(matches!(occupancy(&pi, &mdp), Err(Error::DimensionMismatch(_))));
        let r = RewardFunction::zeros(3, 3, 2);
        assert!(matches!(
            optimal_policy(&mdp, &r),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn zero_reward() {
        let mdp = random_mdp(3, 2, 3, 4, 1.0).unwrap();
        let r = RewardFunction::zeros(3, 2, 3);
        let best = optimal_policy(&mdp, &r).unwrap();
        assert_eq!(best.value, 0.0);
        assert_eq!(policy_value(&Policy::uniform(3, 2, 3), &mdp, &r).unwrap(), 0.0);
    }

    #[test]
    fn reach_initial_state_at_step_zero() {
        let mdp = random_mdp(3, 2, 3, 4, 1.0).unwrap();
        assert_eq!(max_reach_policy(&mdp, 0, 0).unwrap().value, 1.0);
        assert_eq!(max_reach_policy(&mdp, 0, 2).unwrap().value, 0.0);
        assert!(max_reach_policy(&mdp, 3, 0).is_err());
        assert!(max_reach_policy(&mdp, 1, 3).is_err());
    }

    #[test]
    fn optimal_value_matches_returned_policy() {
        let mdp = random_mdp(4, 3, 5, 11, 0.5).unwrap();
        let mut rng = rand::rng();
        let r = RewardFunction::random(4, 3, 5, &mut rng);
        let best = optimal_policy(&mdp, &r).unwrap();
        let v = policy_value(&best.policy, &mdp, &r).unwrap();
        assert!((best.value - v).abs() < 1e-12);
        assert!(best.value <= 5.0 && best.value >= 0.0);
    }

    #[test]
    fn ties_take_lowest_action() {
        // Every action is identical, so every argmax must be action 0.
        let mdp = TabularMdp::from_fn(2, 3, 2, 0, |_, _, _, n| if n == 1 { 1.0 } else { 0.0 })
            .unwrap();
        let r = RewardFunction::from_fn(2, 3, 2, |_, s, _| s as f64).unwrap();
        let best = optimal_policy(&mdp, &r).unwrap();
        assert!(best.policy.action_table().unwrap().iter().all(|&a| a == 0));
        let reach = max_reach_policy(&mdp, 1, 1).unwrap();
        assert_eq!(reach.value, 1.0);
        assert!(reach.policy.action_table().unwrap().iter().all(|&a| a == 0));
    }
}
