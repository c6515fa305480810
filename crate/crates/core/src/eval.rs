//! Reward-free quality metrics and truncated-dynamics oracles.
//!
//! Norms over occupancy vectors exclude the sink coordinate.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimate::EstimatedDynamics;
use crate::mdp::{Dynamics, Kernel, Policy, RewardFunction, TabularMdp};
use crate::planning::{max_reach_policy, occupancy, optimal_policy, policy_value};

/// The true dynamics restricted to per-step retained states; every other
/// state (and the sink) moves to the sink.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedDynamics {
    num_states: usize,
    initial_state: usize,
    kernel: Kernel,
    retained: Vec<Vec<usize>>,
}

impl TruncatedDynamics {
    /// `retained[h]` lists the states whose step-`h` rows follow `mdp`.
    pub fn new(mdp: &TabularMdp, retained: Vec<Vec<usize>>) -> Result<Self> {
        let (s_n, a_n, h_n) = (mdp.num_states(), mdp.num_actions(), mdp.horizon());
        if retained.len() != h_n {
            return Err(Error::dims(format!(
                "{} retained sets for horizon {h_n}",
                retained.len()
            )));
        }
        let mut kernel = Kernel::all_to(h_n, s_n + 1, a_n, s_n);
        let mut clean = Vec::with_capacity(h_n);
        for (h, mut set) in retained.into_iter().enumerate() {
            set.sort_unstable();
            set.dedup();
            if let Some(&bad) = set.iter().find(|&&s| s >= s_n) {
                return Err(Error::dims(format!("retained state {bad} at h={h} is not a real state")));
            }
            for &s in &set {
                for a in 0..a_n {
                    let row = kernel.row_mut(h, s, a);
                    row[..s_n].copy_from_slice(mdp.row(h, s, a));
                    row[s_n] = 0.0;
                }
            }
            clean.push(set);
        }
        Ok(Self {
            num_states: s_n,
            initial_state: mdp.initial_state(),
            kernel,
            retained: clean,
        })
    }

    pub fn retained(&self, h: usize) -> &[usize] {
        &self.retained[h]
    }

    pub fn retained_sets(&self) -> &[Vec<usize>] {
        &self.retained
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }
}

impl Dynamics for TruncatedDynamics {
    fn horizon(&self) -> usize {
        self.kernel.horizon()
    }
    fn num_states(&self) -> usize {
        self.num_states
    }
    fn num_actions(&self) -> usize {
        self.kernel.num_actions()
    }
    fn initial_state(&self) -> usize {
        self.initial_state
    }
    fn has_sink(&self) -> bool {
        true
    }
    fn row(&self, h: usize, s: usize, a: usize) -> &[f64] {
        self.kernel.row(h, s, a)
    }
}

fn check_same_shape(a: &impl Dynamics, b: &impl Dynamics) -> Result<()> {
    if a.horizon() != b.horizon()
        || a.num_states() != b.num_states()
        || a.num_actions() != b.num_actions()
        || a.initial_state() != b.initial_state()
    {
        return Err(Error::dims(format!(
            "dynamics disagree: (H={}, S={}, A={}, s0={}) vs (H={}, S={}, A={}, s0={})",
            a.horizon(),
            a.num_states(),
            a.num_actions(),
            a.initial_state(),
            b.horizon(),
            b.num_states(),
            b.num_actions(),
            b.initial_state()
        )));
    }
    Ok(())
}

/// True rows on the estimate's active sets, sink elsewhere.
pub fn build_p_beta_hat(mdp: &TabularMdp, estimate: &EstimatedDynamics) -> Result<TruncatedDynamics> {
    check_same_shape(mdp, estimate)?;
    TruncatedDynamics::new(mdp, estimate.active_sets().to_vec())
}

/// True dynamics truncated, step by step, to the states whose maximum reach
/// probability under the already-truncated earlier steps is at least `2 beta`.
pub fn build_p_two_beta(mdp: &TabularMdp, beta: f64) -> Result<TruncatedDynamics> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::Domain(format!("beta must lie in (0, 1), got {beta}")));
    }
    let h_n = mdp.horizon();
    let mut truncated = TruncatedDynamics::new(mdp, vec![Vec::new(); h_n])?;
    for h in 0..h_n {
        let mut keep = Vec::new();
        for s in 0..mdp.num_states() {
            if max_reach_policy(&truncated, h, s)?.value >= 2.0 * beta {
                keep.push(s);
            }
        }
        let mut sets = truncated.retained.clone();
        sets[h] = keep;
        truncated = TruncatedDynamics::new(mdp, sets)?;
    }
    Ok(truncated)
}

/// `sqrt((ln(1/delta) + 2S) / (2n))`: with probability at least `1 - delta`
/// the L1 error of an `n`-sample empirical distribution over `S` outcomes is
/// below this radius.
pub fn confidence_radius(n: u64, num_states: usize, delta: f64) -> Result<f64> {
    confidence_radius_random(n, num_states, delta, 1.0)
}

/// Variant for a random sample count whose support has `support` values:
/// `sqrt((ln(support/delta) + 2S) / (2n))`.
pub fn confidence_radius_random(n: u64, num_states: usize, delta: f64, support: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::Domain("sample count must be at least 1".into()));
    }
    if num_states == 0 {
        return Err(Error::Domain("S must be at least 1".into()));
    }
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::Domain(format!("delta must lie in (0, 1], got {delta}")));
    }
    if !(support >= 1.0 && support.is_finite()) {
        return Err(Error::Domain(format!("support size must be at least 1, got {support}")));
    }
    Ok((((support / delta).ln() + 2.0 * num_states as f64) / (2.0 * n as f64)).sqrt())
}

/// Per-reward reward-free gaps `V*_{P,r} - V^{pi_r}_{P,r}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapReport {
    pub labels: Vec<String>,
    pub optimal_values: Vec<f64>,
    pub achieved_values: Vec<f64>,
    pub gaps: Vec<f64>,
    pub max_gap: f64,
    pub mean_gap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledReward {
    pub label: String,
    pub reward: RewardFunction,
}

/// `count` uniform random rewards followed by three structured ones: an
/// indicator at `(H-1, s=0, a=0)`, a terminal-only ramp, and the constant 1.
pub fn reward_batch(
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    count: usize,
    seed: u64,
) -> Vec<LabeledReward> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<LabeledReward> = (0..count)
        .map(|i| LabeledReward {
            label: format!("random-{i}"),
            reward: RewardFunction::random(num_states, num_actions, horizon, &mut rng),
        })
        .collect();
    let structured = [
        ("indicator", RewardFunction::from_fn(num_states, num_actions, horizon, |h, s, a| {
            f64::from(u8::from(h + 1 == horizon && s == 0 && a == 0))
        })),
        ("terminal", RewardFunction::from_fn(num_states, num_actions, horizon, |h, s, _| {
            if h + 1 == horizon {
                (s + 1) as f64 / num_states as f64
            } else {
                0.0
            }
        })),
        ("constant", RewardFunction::from_fn(num_states, num_actions, horizon, |_, _, _| 1.0)),
    ];
    for (label, r) in structured {
        out.push(LabeledReward {
            label: label.to_string(),
            reward: r.expect("structured rewards are in range"),
        });
    }
    out
}

/// For each reward, plans on the estimate and measures the loss on the truth.
pub fn reward_free_gap(
    mdp: &TabularMdp,
    estimate: &impl Dynamics,
    rewards: &[LabeledReward],
) -> Result<GapReport> {
    check_same_shape(mdp, estimate)?;
    let mut report = GapReport {
        labels: Vec::with_capacity(rewards.len()),
        optimal_values: Vec::with_capacity(rewards.len()),
        achieved_values: Vec::with_capacity(rewards.len()),
        gaps: Vec::with_capacity(rewards.len()),
        max_gap: 0.0,
        mean_gap: 0.0,
    };
    for LabeledReward { label, reward } in rewards {
        let planned = optimal_policy(estimate, reward)?;
        let best = optimal_policy(mdp, reward)?.value;
        let achieved = policy_value(&planned.policy, mdp, reward)?;
        let gap = best - achieved;
        debug_assert!(gap >= -1e-9, "optimal value must dominate, gap {gap}");
        report.labels.push(label.clone());
        report.optimal_values.push(best);
        report.achieved_values.push(achieved);
        report.gaps.push(gap);
    }
    if !report.gaps.is_empty() {
        report.max_gap = report.gaps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        report.mean_gap = report.gaps.iter().sum::<f64>() / report.gaps.len() as f64;
    }
    Ok(report)
}

/// Number of deterministic policies up to which discrepancies are exhaustive.
pub const EXHAUSTIVE_POLICY_LIMIT: u64 = 4096;

pub fn deterministic_policy_count(num_states: usize, num_actions: usize, horizon: usize) -> Option<u64> {
    (num_actions as u64).checked_pow(u32::try_from(num_states * horizon).ok()?)
}

pub fn sample_policies(
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    count: usize,
    seed: u64,
) -> Vec<Policy> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| Policy::random_deterministic(num_states, num_actions, horizon, &mut rng))
        .collect()
}

/// Largest value difference found, and whether it is the exact maximum over
/// deterministic policies or a sampled lower bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Discrepancy {
    pub max: f64,
    pub exhaustive: bool,
    pub policies_checked: usize,
}

/// `max_pi |V^pi_A - V^pi_B|` over deterministic policies: exhaustive when
/// there are at most [`EXHAUSTIVE_POLICY_LIMIT`] of them, otherwise over
/// `sample_size` random policies plus the optimal policies of both dynamics.
pub fn policy_value_discrepancy(
    dyn_a: &impl Dynamics,
    dyn_b: &impl Dynamics,
    reward: &RewardFunction,
    sample_size: usize,
    seed: u64,
) -> Result<Discrepancy> {
    check_same_shape(dyn_a, dyn_b)?;
    let (s_n, a_n, h_n) = (dyn_a.num_states(), dyn_a.num_actions(), dyn_a.horizon());
    let exhaustive = deterministic_policy_count(s_n, a_n, h_n)
        .is_some_and(|n| n <= EXHAUSTIVE_POLICY_LIMIT);
    let policies: Vec<Policy> = if exhaustive {
        Policy::enumerate_deterministic(s_n, a_n, h_n).collect()
    } else {
        let mut p = sample_policies(s_n, a_n, h_n, sample_size, seed);
        p.push(optimal_policy(dyn_a, reward)?.policy);
        p.push(optimal_policy(dyn_b, reward)?.policy);
        p
    };
    let mut max: f64 = 0.0;
    for pi in &policies {
        let d = (policy_value(pi, dyn_a, reward)? - policy_value(pi, dyn_b, reward)?).abs();
        max = max.max(d);
    }
    Ok(Discrepancy {
        max,
        exhaustive,
        policies_checked: policies.len(),
    })
}

/// `max_pi ||q_h^A(.|pi) - q_h^B(.|pi)||_1` over the given policies.
pub fn occupancy_discrepancy(
    dyn_a: &impl Dynamics,
    dyn_b: &impl Dynamics,
    policies: &[Policy],
    h: usize,
) -> Result<f64> {
    check_same_shape(dyn_a, dyn_b)?;
    if h > dyn_a.horizon() {
        return Err(Error::Domain(format!("timestep {h} beyond horizon {}", dyn_a.horizon())));
    }
    let mut max: f64 = 0.0;
    for pi in policies {
        let qa = occupancy(pi, dyn_a)?;
        let qb = occupancy(pi, dyn_b)?;
        max = max.max(l1(qa.step(h), qb.step(h)));
    }
    Ok(max)
}

pub fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// `S^{2 beta}_h` is contained in the estimate's active set at every step.
pub fn set_inclusion_holds(p_two_beta: &TruncatedDynamics, estimate: &EstimatedDynamics) -> bool {
    (0..p_two_beta.horizon()).all(|h| {
        p_two_beta
            .retained(h)
            .iter()
            .all(|&s| estimate.is_active(h, s))
    })
}
