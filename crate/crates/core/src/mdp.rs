//! Tabular episodic MDPs, rewards, policies and trajectories.
//!
//! Transition tensors are stored flat in `(h, s, a, s')` order. Dynamics that
//! carry a sink state place it at index `num_states()`, one past the last real
//! state; rewards and policies are always indexed by real states only.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Violation};

/// Row-sum tolerance accepted for any transition or policy row.
pub const ROW_TOLERANCE: f64 = 1e-9;

/// Read access to an episodic transition kernel, possibly sink-augmented.
pub trait Dynamics: Sync {
    fn horizon(&self) -> usize;
    /// Number of real states, excluding any sink.
    fn num_states(&self) -> usize;
    fn num_actions(&self) -> usize;
    fn initial_state(&self) -> usize;
    fn has_sink(&self) -> bool;
    /// Next-state distribution of length [`Dynamics::total_states`].
    fn row(&self, h: usize, s: usize, a: usize) -> &[f64];

    fn total_states(&self) -> usize {
        self.num_states() + usize::from(self.has_sink())
    }

    fn sink(&self) -> Option<usize> {
        self.has_sink().then(|| self.num_states())
    }
}

/// Dense `(h, s, a, s')` probability tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    horizon: usize,
    num_states: usize,
    num_actions: usize,
    probs: Vec<f64>,
}

impl Kernel {
    pub fn zeros(horizon: usize, num_states: usize, num_actions: usize) -> Self {
        Self {
            horizon,
            num_states,
            num_actions,
            probs: vec![0.0; horizon * num_states * num_actions * num_states],
        }
    }

    pub fn from_vec(
        horizon: usize,
        num_states: usize,
        num_actions: usize,
        probs: Vec<f64>,
    ) -> Result<Self> {
        let expected = horizon * num_states * num_actions * num_states;
        if probs.len() != expected {
            return Err(Error::dims(format!(
                "transition tensor has {} entries, expected {expected} for H={horizon}, S={num_states}, A={num_actions}",
                probs.len()
            )));
        }
        Ok(Self {
            horizon,
            num_states,
            num_actions,
            probs,
        })
    }

    /// Kernel in which every row is one-hot at `target`.
    pub fn all_to(horizon: usize, num_states: usize, num_actions: usize, target: usize) -> Self {
        let mut k = Self::zeros(horizon, num_states, num_actions);
        for h in 0..horizon {
            for s in 0..num_states {
                for a in 0..num_actions {
                    k.set_one_hot(h, s, a, target);
                }
            }
        }
        k
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    #[inline]
    fn offset(&self, h: usize, s: usize, a: usize) -> usize {
        debug_assert!(h < self.horizon && s < self.num_states && a < self.num_actions);
        ((h * self.num_states + s) * self.num_actions + a) * self.num_states
    }

    #[inline]
    pub fn row(&self, h: usize, s: usize, a: usize) -> &[f64] {
        let o = self.offset(h, s, a);
        &self.probs[o..o + self.num_states]
    }

    #[inline]
    pub fn row_mut(&mut self, h: usize, s: usize, a: usize) -> &mut [f64] {
        let o = self.offset(h, s, a);
        &mut self.probs[o..o + self.num_states]
    }

    pub fn get(&self, h: usize, s: usize, a: usize, next: usize) -> f64 {
        self.row(h, s, a)[next]
    }

    pub fn set_one_hot(&mut self, h: usize, s: usize, a: usize, target: usize) {
        let row = self.row_mut(h, s, a);
        row.fill(0.0);
        row[target] = 1.0;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }

    /// Checks entry ranges and row sums; every violation names its row.
    pub fn row_violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        for h in 0..self.horizon {
            for s in 0..self.num_states {
                for a in 0..self.num_actions {
                    let row = self.row(h, s, a);
                    if let Some((i, p)) = row
                        .iter()
                        .enumerate()
                        .find(|(_, p)| !(0.0..=1.0).contains(*p))
                    {
                        out.push(Violation::at(
                            h,
                            s,
                            a,
                            format!("entry for s'={i} is {p}, outside [0, 1]"),
                        ));
                    }
                    let sum: f64 = row.iter().sum();
                    if (sum - 1.0).abs() > ROW_TOLERANCE || !sum.is_finite() {
                        out.push(Violation::at(h, s, a, format!("row sums to {sum}, not 1")));
                    }
                }
            }
        }
        out
    }
}

/// Ground-truth episodic environment `(S, s0, A, H, P)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    initial_state: usize,
    kernel: Kernel,
}

impl TabularMdp {
    /// Builds and validates an MDP from a flat `(h, s, a, s')` tensor.
    pub fn new(
        num_states: usize,
        num_actions: usize,
        horizon: usize,
        initial_state: usize,
        probs: Vec<f64>,
    ) -> Result<Self> {
        check_sizes(num_states, num_actions, horizon)?;
        let mdp = Self {
            initial_state,
            kernel: Kernel::from_vec(horizon, num_states, num_actions, probs)?,
        };
        let violations = validate_mdp(&mdp);
        if violations.is_empty() {
            Ok(mdp)
        } else {
            Err(Error::Invariant(violations))
        }
    }

    /// Builds an MDP from a probability function; validated like [`TabularMdp::new`].
    pub fn from_fn(
        num_states: usize,
        num_actions: usize,
        horizon: usize,
        initial_state: usize,
        mut p: impl FnMut(usize, usize, usize, usize) -> f64,
    ) -> Result<Self> {
        check_sizes(num_states, num_actions, horizon)?;
        let mut probs = Vec::with_capacity(horizon * num_states * num_actions * num_states);
        for h in 0..horizon {
            for s in 0..num_states {
                for a in 0..num_actions {
                    for next in 0..num_states {
                        probs.push(p(h, s, a, next));
                    }
                }
            }
        }
        Self::new(num_states, num_actions, horizon, initial_state, probs)
    }

    /// Skips validation. Callers must run [`validate_mdp`] themselves.
    pub(crate) fn from_kernel_unchecked(kernel: Kernel, initial_state: usize) -> Self {
        Self {
            initial_state,
            kernel,
        }
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn prob(&self, h: usize, s: usize, a: usize, next: usize) -> f64 {
        self.kernel.get(h, s, a, next)
    }

    /// True when every row is one-hot.
    pub fn is_deterministic(&self) -> bool {
        self.kernel
            .as_slice()
            .chunks(self.kernel.num_states())
            .all(|row| row.iter().filter(|&&p| p != 0.0).count() == 1)
    }
}

impl Dynamics for TabularMdp {
    fn horizon(&self) -> usize {
        self.kernel.horizon()
    }
    fn num_states(&self) -> usize {
        self.kernel.num_states()
    }
    fn num_actions(&self) -> usize {
        self.kernel.num_actions()
    }
    fn initial_state(&self) -> usize {
        self.initial_state
    }
    fn has_sink(&self) -> bool {
        false
    }
    fn row(&self, h: usize, s: usize, a: usize) -> &[f64] {
        self.kernel.row(h, s, a)
    }
}

pub(crate) fn check_sizes(num_states: usize, num_actions: usize, horizon: usize) -> Result<()> {
    let mut bad = Vec::new();
    if num_states == 0 {
        bad.push("S must be at least 1");
    }
    if num_actions == 0 {
        bad.push("A must be at least 1");
    }
    if horizon == 0 {
        bad.push("H must be at least 1");
    }
    if bad.is_empty() {
        Ok(())
    } else {
        Err(Error::InvalidSize(bad.join(", ")))
    }
}

/// Lists every violated invariant of `mdp`; empty iff the MDP is valid.
pub fn validate_mdp(mdp: &TabularMdp) -> Vec<Violation> {
    let mut out = Vec::new();
    if mdp.initial_state >= mdp.num_states() {
        out.push(Violation::global(format!(
            "initial state {} outside [0, {})",
            mdp.initial_state,
            mdp.num_states()
        )));
    }
    out.extend(mdp.kernel.row_violations());
    out
}

/// Samples every row from a symmetric Dirichlet with the given concentration.
/// The initial state is 0.
pub fn random_mdp(
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    seed: u64,
    concentration: f64,
) -> Result<TabularMdp> {
    check_sizes(num_states, num_actions, horizon)?;
    if !(concentration > 0.0 && concentration.is_finite()) {
        return Err(Error::Domain(format!(
            "Dirichlet concentration must be positive and finite, got {concentration}"
        )));
    }
    let gamma = Gamma::new(concentration, 1.0).map_err(|e| Error::Domain(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut kernel = Kernel::zeros(horizon, num_states, num_actions);
    for h in 0..horizon {
        for s in 0..num_states {
            for a in 0..num_actions {
                let row = kernel.row_mut(h, s, a);
                if num_states == 1 {
                    row[0] = 1.0;
                    continue;
                }
                for x in row.iter_mut() {
                    *x = gamma.sample(&mut rng);
                }
                let total: f64 = row.iter().sum();
                if total > 0.0 {
                    row.iter_mut().for_each(|x| *x /= total);
                } else {
                    // All draws underflowed (tiny concentration): the limit is a vertex.
                    let hot = rng.random_range(0..num_states);
                    row.fill(0.0);
                    row[hot] = 1.0;
                }
            }
        }
    }
    let mdp = TabularMdp::from_kernel_unchecked(kernel, 0);
    debug_assert!(validate_mdp(&mdp).is_empty());
    Ok(mdp)
}

/// Deterministic reward tensor `r_h(s, a)` with entries in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardFunction {
    horizon: usize,
    num_states: usize,
    num_actions: usize,
    rewards: Vec<f64>,
}

impl RewardFunction {
    pub fn new(
        num_states: usize,
        num_actions: usize,
        horizon: usize,
        rewards: Vec<f64>,
    ) -> Result<Self> {
        check_sizes(num_states, num_actions, horizon)?;
        if rewards.len() != horizon * num_states * num_actions {
            return Err(Error::dims(format!(
                "reward tensor has {} entries, expected {}",
                rewards.len(),
                horizon * num_states * num_actions
            )));
        }
        let r = Self {
            horizon,
            num_states,
            num_actions,
            rewards,
        };
        let violations = r.violations();
        if violations.is_empty() {
            Ok(r)
        } else {
            Err(Error::Invariant(violations))
        }
    }

    pub fn from_fn(
        num_states: usize,
        num_actions: usize,
        horizon: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut rewards = Vec::with_capacity(horizon * num_states * num_actions);
        for h in 0..horizon {
            for s in 0..num_states {
                for a in 0..num_actions {
                    rewards.push(f(h, s, a));
                }
            }
        }
        Self::new(num_states, num_actions, horizon, rewards)
    }

    pub fn zeros(num_states: usize, num_actions: usize, horizon: usize) -> Self {
        Self {
            horizon,
            num_states,
            num_actions,
            rewards: vec![0.0; horizon * num_states * num_actions],
        }
    }

    /// Every entry i.i.d. uniform on `[0, 1]`.
    pub fn random(
        num_states: usize,
        num_actions: usize,
        horizon: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let rewards = (0..horizon * num_states * num_actions)
            .map(|_| rng.random::<f64>())
            .collect();
        Self {
            horizon,
            num_states,
            num_actions,
            rewards,
        }
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }
    pub fn num_states(&self) -> usize {
        self.num_states
    }
    pub fn num_actions(&self) -> usize {
        self.num_actions
    }
    pub fn as_slice(&self) -> &[f64] {
        &self.rewards
    }

    /// Reward at `(h, s, a)`; zero for the sink or any index past the real states.
    #[inline]
    pub fn get(&self, h: usize, s: usize, a: usize) -> f64 {
        if s >= self.num_states {
            return 0.0;
        }
        self.rewards[(h * self.num_states + s) * self.num_actions + a]
    }

    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        for h in 0..self.horizon {
            for s in 0..self.num_states {
                for a in 0..self.num_actions {
                    let r = self.get(h, s, a);
                    if !(0.0..=1.0).contains(&r) {
                        out.push(Violation::at(h, s, a, format!("reward {r} outside [0, 1]")));
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Deterministic,
    Stochastic,
}

#[derive(Debug, Clone, PartialEq)]
enum PolicyTable {
    /// `(h, s) -> a`
    Deterministic(Vec<usize>),
    /// `(h, s, a) -> probability`
    Stochastic(Vec<f64>),
}

/// Markovian policy over real states. At the sink every policy plays action 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    horizon: usize,
    num_states: usize,
    num_actions: usize,
    table: PolicyTable,
}

impl Policy {
    pub fn deterministic(
        num_states: usize,
        num_actions: usize,
        horizon: usize,
        actions: Vec<usize>,
    ) -> Result<Self> {
        check_sizes(num_states, num_actions, horizon)?;
        if actions.len() != horizon * num_states {
            return Err(Error::dims(format!(
                "deterministic policy has {} entries, expected H*S = {}",
                actions.len(),
                horizon * num_states
            )));
        }
        let p = Self {
            horizon,
            num_states,
            num_actions,
            table: PolicyTable::Deterministic(actions),
        };
        p.checked()
    }

    pub fn stochastic(
        num_states: usize,
        num_actions: usize,
        horizon: usize,
        probs: Vec<f64>,
    ) -> Result<Self> {
        check_sizes(num_states, num_actions, horizon)?;
        if probs.len() != horizon * num_states * num_actions {
            return Err(Error::dims(format!(
                "stochastic policy has {} entries, expected H*S*A = {}",
                probs.len(),
                horizon * num_states * num_actions
            )));
        }
        let p = Self {
            horizon,
            num_states,
            num_actions,
            table: PolicyTable::Stochastic(probs),
        };
        p.checked()
    }

    fn checked(self) -> Result<Self> {
        let v = self.violations();
        if v.is_empty() {
            Ok(self)
        } else {
            Err(Error::Invariant(v))
        }
    }

    /// Uniformly random over actions at every `(h, s)`.
    pub fn uniform(num_states: usize, num_actions: usize, horizon: usize) -> Self {
        Self {
            horizon,
            num_states,
            num_actions,
            table: PolicyTable::Stochastic(vec![
                1.0 / num_actions as f64;
                horizon * num_states * num_actions
            ]),
        }
    }

    /// Plays `sequence[h]` at step `h` regardless of the state.
    pub fn open_loop(num_states: usize, num_actions: usize, sequence: &[usize]) -> Result<Self> {
        let horizon = sequence.len();
        let actions = sequence
            .iter()
            .flat_map(|&a| std::iter::repeat_n(a, num_states))
            .collect();
        Self::deterministic(num_states, num_actions, horizon, actions)
    }

    pub fn random_deterministic(
        num_states: usize,
        num_actions: usize,
        horizon: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let actions = (0..horizon * num_states)
            .map(|_| rng.random_range(0..num_actions))
            .collect();
        Self {
            horizon,
            num_states,
            num_actions,
            table: PolicyTable::Deterministic(actions),
        }
    }

    /// Every deterministic policy, in lexicographic order of the `(h, s)`
    /// action table with the last entry varying fastest. There are `A^(S*H)`.
    pub fn enumerate_deterministic(
        num_states: usize,
        num_actions: usize,
        horizon: usize,
    ) -> impl Iterator<Item = Policy> {
        let len = horizon * num_states;
        let mut next = Some(vec![0usize; len]);
        std::iter::from_fn(move || {
            let current = next.take()?;
            let mut succ = current.clone();
            let mut i = len;
            let mut carried = true;
            while i > 0 && carried {
                i -= 1;
                succ[i] += 1;
                if succ[i] == num_actions {
                    succ[i] = 0;
                } else {
                    carried = false;
                }
            }
            if !carried {
                next = Some(succ);
            }
            Some(Policy {
                horizon,
                num_states,
                num_actions,
                table: PolicyTable::Deterministic(current),
            })
        })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }
    pub fn num_states(&self) -> usize {
        self.num_states
    }
    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn kind(&self) -> PolicyKind {
        match self.table {
            PolicyTable::Deterministic(_) => PolicyKind::Deterministic,
            PolicyTable::Stochastic(_) => PolicyKind::Stochastic,
        }
    }

    /// The action table of a deterministic policy.
    pub fn action_table(&self) -> Option<&[usize]> {
        match &self.table {
            PolicyTable::Deterministic(t) => Some(t),
            PolicyTable::Stochastic(_) => None,
        }
    }

    /// The `(h, s, a)` probability table of a stochastic policy.
    pub fn probability_table(&self) -> Option<&[f64]> {
        match &self.table {
            PolicyTable::Deterministic(_) => None,
            PolicyTable::Stochastic(t) => Some(t),
        }
    }

    /// The action at `(h, s)` if the policy is deterministic there.
    pub fn action(&self, h: usize, s: usize) -> Option<usize> {
        if s >= self.num_states {
            return Some(0);
        }
        match &self.table {
            PolicyTable::Deterministic(t) => Some(t[h * self.num_states + s]),
            PolicyTable::Stochastic(_) => None,
        }
    }

    /// `pi_h(a | s)`.
    #[inline]
    pub fn prob(&self, h: usize, s: usize, a: usize) -> f64 {
        if s >= self.num_states {
            return if a == 0 { 1.0 } else { 0.0 };
        }
        match &self.table {
            PolicyTable::Deterministic(t) => {
                if t[h * self.num_states + s] == a {
                    1.0
                } else {
                    0.0
                }
            }
            PolicyTable::Stochastic(p) => p[(h * self.num_states + s) * self.num_actions + a],
        }
    }

    /// Draws an action. Deterministic entries consume no randomness,
    /// stochastic entries consume exactly one uniform draw.
    pub fn sample_action(&self, h: usize, s: usize, rng: &mut impl Rng) -> usize {
        if s >= self.num_states {
            return 0;
        }
        match &self.table {
            PolicyTable::Deterministic(t) => t[h * self.num_states + s],
            PolicyTable::Stochastic(p) => {
                let o = (h * self.num_states + s) * self.num_actions;
                sample_index(&p[o..o + self.num_actions], rng.random::<f64>())
            }
        }
    }

    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        match &self.table {
            PolicyTable::Deterministic(t) => {
                for (i, &a) in t.iter().enumerate() {
                    if a >= self.num_actions {
                        let (h, s) = (i / self.num_states, i % self.num_states);
                        out.push(Violation::at(
                            h,
                            s,
                            a,
                            format!("action {a} outside [0, {})", self.num_actions),
                        ));
                    }
                }
            }
            PolicyTable::Stochastic(p) => {
                for (i, row) in p.chunks(self.num_actions).enumerate() {
                    let (h, s) = (i / self.num_states, i % self.num_states);
                    if row.iter().any(|x| !(0.0..=1.0).contains(x)) {
                        out.push(Violation::at(h, s, 0, "action probability outside [0, 1]"));
                    }
                    let sum: f64 = row.iter().sum();
                    if (sum - 1.0).abs() > ROW_TOLERANCE || !sum.is_finite() {
                        out.push(Violation::at(
                            h,
                            s,
                            0,
                            format!("action probabilities sum to {sum}, not 1"),
                        ));
                    }
                }
            }
        }
        out
    }

    /// Errors unless this policy's shape matches the real states of `dynamics`.
    pub fn check_compatible(&self, dynamics: &impl Dynamics) -> Result<()> {
        if self.horizon != dynamics.horizon()
            || self.num_states != dynamics.num_states()
            || self.num_actions != dynamics.num_actions()
        {
            return Err(Error::dims(format!(
                "policy is (H={}, S={}, A={}) but dynamics are (H={}, S={}, A={})",
                self.horizon,
                self.num_states,
                self.num_actions,
                dynamics.horizon(),
                dynamics.num_states(),
                dynamics.num_actions()
            )));
        }
        Ok(())
    }
}

/// Inverse-CDF draw from a probability row. Falls back to the last index with
/// positive mass when rounding leaves `u` above the cumulative sum.
#[inline]
pub(crate) fn sample_index(row: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &p) in row.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last_positive = i;
            if u < acc {
                return i;
            }
        }
    }
    last_positive
}

/// One episode: `states` has `H + 1` entries, `actions` has `H`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<usize>,
    pub actions: Vec<usize>,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.actions.len()
    }

    pub fn is_well_formed(&self) -> bool {
        self.states.len() == self.actions.len() + 1
    }

    /// `(s_h, a_h, s_{h+1})`.
    pub fn transition(&self, h: usize) -> (usize, usize, usize) {
        (self.states[h], self.actions[h], self.states[h + 1])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_mdp(s: usize, a: usize, h: usize) -> TabularMdp {
        TabularMdp::from_fn(s, a, h, 0, |_, s, _, n| if s == n { 1.0 } else { 0.0 }).unwrap()
    }

    #[test]
    fn identity_dynamics_validate() {
        assert!(validate_mdp(&identity_mdp(3, 2, 4)).is_empty());
    }

    #[test]
    fn short_row_is_reported_at_its_location() {
        let mut kernel = identity_mdp(3, 2, 2).kernel().clone();
        kernel.row_mut(1, 2, 1)[2] = 0.8;
        let mdp = TabularMdp::from_kernel_unchecked(kernel, 0);
        let v = validate_mdp(&mdp);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].location, Some((1, 2, 1)));
    }

    #[test]
    fn negative_entry_and_bad_initial_state() {
        let mut kernel = identity_mdp(2, 1, 1).kernel().clone();
        kernel.row_mut(0, 0, 0).copy_from_slice(&[1.5, -0.5]);
        let mdp = TabularMdp::from_kernel_unchecked(kernel, 5);
        let v = validate_mdp(&mdp);
        assert_eq!(v.len(), 2);
        assert!(v[0].location.is_none());
        assert_eq!(v[1].location, Some((0, 0, 0)));
    }

    #[test]
    fn random_mdp_single_state() {
        let mdp = random_mdp(1, 1, 1, 0, 1.0).unwrap();
        assert_eq!(mdp.prob(0, 0, 0, 0), 1.0);
    }

    #[test]
    fn random_mdp_valid_and_seeded() {
        let a = random_mdp(3, 2, 4, 7, 1.0).unwrap();
        let b = random_mdp(3, 2, 4, 7, 1.0).unwrap();
        assert!(validate_mdp(&a).is_empty());
        let bits = |m: &TabularMdp| m.kernel().as_slice().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        assert_ne!(a, random_mdp(3, 2, 4, 8, 1.0).unwrap());
    }

    #[test]
    fn random_mdp_tiny_concentration_still_valid() {
        let mdp = random_mdp(5, 2, 3, 1, 1e-3).unwrap();
        assert!(validate_mdp(&mdp).is_empty());
    }

    #[test]
    fn random_mdp_rejects_bad_sizes() {
        assert!(matches!(random_mdp(0, 1, 1, 0, 1.0), Err(Error::InvalidSize(_))));
        assert!(matches!(random_mdp(1, 1, 0, 0, 1.0), Err(Error::InvalidSize(_))));
        assert!(matches!(random_mdp(1, 1, 1, 0, 0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn enumerate_counts_and_order() {
        let all: Vec<_> = Policy::enumerate_deterministic(2, 2, 2).collect();
        assert_eq!(all.len(), 16);
        assert_eq!(all[0].action_table().unwrap(), &[0, 0, 0, 0]);
        assert_eq!(all[1].action_table().unwrap(), &[0, 0, 0, 1]);
        assert_eq!(all[15].action_table().unwrap(), &[1, 1, 1, 1]);
        assert_eq!(Policy::enumerate_deterministic(1, 1, 3).count(), 1);
    }

    #[test]
    fn policy_validation() {
        assert!(Policy::deterministic(2, 2, 1, vec![0, 2]).is_err());
        assert!(Policy::stochastic(1, 2, 1, vec![0.5, 0.4]).is_err());
        assert!(Policy::stochastic(1, 2, 1, vec![0.5, 0.5]).is_ok());
        let p = Policy::open_loop(2, 3, &[2, 0, 1]).unwrap();
        assert_eq!(p.action(1, 1), Some(0));
        assert_eq!(p.action(2, 0), Some(1));
        assert_eq!(p.prob(0, 2, 0), 1.0, "sink plays action 0");
    }

    #[test]
    fn reward_range_enforced() {
        assert!(RewardFunction::new(1, 1, 1, vec![1.2]).is_err());
        let r = RewardFunction::new(1, 1, 1, vec![0.3]).unwrap();
        assert_eq!(r.get(0, 1, 0), 0.0);
    }

    #[test]
    fn sample_index_guards_rounding() {
        assert_eq!(sample_index(&[0.0, 0.3, 0.7, 0.0], 0.9999999999), 2);
        assert_eq!(sample_index(&[0.5, 0.5], 0.25), 0);
        assert_eq!(sample_index(&[0.5, 0.5], 0.75), 1);
    }
}
