//! Sink-augmented estimated dynamics produced by the explorers.

use std::collections::BTreeMap;

use crate::error::{Error, Result, Violation};
use crate::mdp::{check_sizes, Dynamics, Kernel, TabularMdp, ROW_TOLERANCE};

/// Visit counts `N_h(s, a, s')` for one timestep.
pub type StepCounts = BTreeMap<(usize, usize, usize), u64>;

/// Learned transitions over `S + 1` states, the last being the absorbing sink.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatedDynamics {
    num_states: usize,
    initial_state: usize,
    kernel: Kernel,
    active_sets: Vec<Vec<usize>>,
    counts: Vec<StepCounts>,
    beta: Option<f64>,
}

impl EstimatedDynamics {
    /// Every row, real or sink, sends all mass to the sink; no state is active.
    pub fn all_sink(
        num_states: usize,
        num_actions: usize,
        horizon: usize,
        initial_state: usize,
    ) -> Result<Self> {
        check_sizes(num_states, num_actions, horizon)?;
        if initial_state >= num_states {
            return Err(Error::Domain(format!(
                "initial state {initial_state} outside [0, {num_states})"
            )));
        }
        Ok(Self {
            num_states,
            initial_state,
            kernel: Kernel::all_to(horizon, num_states + 1, num_actions, num_states),
            active_sets: vec![Vec::new(); horizon],
            counts: vec![StepCounts::new(); horizon],
            beta: None,
        })
    }

    /// Uniform next-state rows over real states at every step; all states active.
    pub fn uniform(
        num_states: usize,
        num_actions: usize,
        horizon: usize,
        initial_state: usize,
    ) -> Result<Self> {
        let mut est = Self::all_sink(num_states, num_actions, horizon, initial_state)?;
        let p = 1.0 / num_states as f64;
        for h in 0..horizon {
            for s in 0..num_states {
                for a in 0..num_actions {
                    let row = est.kernel.row_mut(h, s, a);
                    row.fill(p);
                    row[num_states] = 0.0;
                }
            }
            est.active_sets[h] = (0..num_states).collect();
        }
        Ok(est)
    }

    /// The exact dynamics of `mdp`, with every state active and the sink unused.
    pub fn from_mdp(mdp: &TabularMdp) -> Self {
        let (s_n, a_n, h_n) = (mdp.num_states(), mdp.num_actions(), mdp.horizon());
        let mut est = Self::all_sink(s_n, a_n, h_n, mdp.initial_state())
            .expect("a valid MDP has valid sizes");
        for h in 0..h_n {
            for s in 0..s_n {
                for a in 0..a_n {
                    let row = est.kernel.row_mut(h, s, a);
                    row[..s_n].copy_from_slice(mdp.row(h, s, a));
                    row[s_n] = 0.0;
                }
            }
            est.active_sets[h] = (0..s_n).collect();
        }
        est
    }

    /// Assembles an estimate from raw parts and checks its invariants.
    pub fn from_parts(
        num_states: usize,
        num_actions: usize,
        horizon: usize,
        initial_state: usize,
        transitions: Vec<f64>,
        active_sets: Vec<Vec<usize>>,
        counts: Vec<StepCounts>,
        beta: Option<f64>,
    ) -> Result<Self> {
        check_sizes(num_states, num_actions, horizon)?;
        if active_sets.len() != horizon || counts.len() != horizon {
            return Err(Error::dims(format!(
                "expected {horizon} active sets and count tables, got {} and {}",
                active_sets.len(),
                counts.len()
            )));
        }
        let est = Self {
            num_states,
            initial_state,
            kernel: Kernel::from_vec(horizon, num_states + 1, num_actions, transitions)?,
            active_sets: active_sets
                .into_iter()
                .map(|mut s| {
                    s.sort_unstable();
                    s.dedup();
                    s
                })
                .collect(),
            counts,
            beta,
        };
        let v = est.violations();
        if v.is_empty() {
            Ok(est)
        } else {
            Err(Error::Invariant(v))
        }
    }

    pub fn sink_index(&self) -> usize {
        self.num_states
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn beta(&self) -> Option<f64> {
        self.beta
    }

    pub fn set_beta(&mut self, beta: Option<f64>) {
        self.beta = beta;
    }

    /// `S^beta_h`, sorted ascending.
    pub fn active_set(&self, h: usize) -> &[usize] {
        &self.active_sets[h]
    }

    pub fn active_sets(&self) -> &[Vec<usize>] {
        &self.active_sets
    }

    pub fn is_active(&self, h: usize, s: usize) -> bool {
        self.active_sets[h].binary_search(&s).is_ok()
    }

    pub fn counts(&self, h: usize) -> &StepCounts {
        &self.counts[h]
    }

    pub fn all_counts(&self) -> &[StepCounts] {
        &self.counts
    }

    /// `N_h(s, a)`.
    pub fn visits(&self, h: usize, s: usize, a: usize) -> u64 {
        self.counts[h]
            .range((s, a, 0)..=(s, a, usize::MAX))
            .map(|(_, &n)| n)
            .sum()
    }

    pub fn prob(&self, h: usize, s: usize, a: usize, next: usize) -> f64 {
        self.kernel.get(h, s, a, next)
    }

    /// Replaces the whole of timestep `h`.
    pub(crate) fn set_step(&mut self, h: usize, step: StepEstimate) {
        debug_assert_eq!(step.rows.len(), self.num_states * self.kernel.num_actions());
        let a_n = self.kernel.num_actions();
        for s in 0..self.num_states {
            for a in 0..a_n {
                self.kernel
                    .row_mut(h, s, a)
                    .copy_from_slice(&step.rows[s * a_n + a]);
            }
        }
        self.active_sets[h] = step.active;
        self.counts[h] = step.counts;
    }

    /// True when every real `(h, s, a)` row equals `mdp` exactly and puts no mass on the sink.
    pub fn matches_exactly(&self, mdp: &TabularMdp) -> bool {
        self.horizon() == mdp.horizon()
            && self.num_states() == mdp.num_states()
            && self.num_actions() == mdp.num_actions()
            && (0..self.horizon()).all(|h| {
                (0..self.num_states).all(|s| {
                    (0..self.num_actions())
                        .all(|a| self.row(h, s, a)[..self.num_states] == *mdp.row(h, s, a)
                            && self.row(h, s, a)[self.num_states] == 0.0)
                })
            })
    }

    pub fn violations(&self) -> Vec<Violation> {
        let mut out = self.kernel.row_violations();
        let sink = self.sink_index();
        if self.initial_state >= self.num_states {
            out.push(Violation::global("initial state outside the real states"));
        }
        for h in 0..self.horizon() {
            if let Some(&s) = self.active_sets[h].iter().find(|&&s| s >= self.num_states) {
                out.push(Violation::global(format!("active state {s} at h={h} is not a real state")));
            }
            for a in 0..self.num_actions() {
                if !is_one_hot(self.row(h, sink, a), sink) {
                    out.push(Violation::at(h, sink, a, "sink row is not absorbing"));
                }
            }
            for s in 0..self.num_states {
                for a in 0..self.num_actions() {
                    let row = self.row(h, s, a);
                    if !self.is_active(h, s) {
                        if !is_one_hot(row, sink) {
                            out.push(Violation::at(h, s, a, "inactive state does not route to the sink"));
                        }
                        continue;
                    }
                    let n = self.visits(h, s, a);
                    if n == 0 {
                        continue;
                    }
                    for next in 0..self.num_states {
                        let c = self.counts[h].get(&(s, a, next)).copied().unwrap_or(0);
                        if row[next] != c as f64 / n as f64 {
                            out.push(Violation::at(
                                h,
                                s,
                                a,
                                format!("entry for s'={next} is not the empirical mean {c}/{n}"),
                            ));
                            break;
                        }
                    }
                }
            }
        }
        out
    }
}

fn is_one_hot(row: &[f64], at: usize) -> bool {
    row.iter()
        .enumerate()
        .all(|(i, &p)| if i == at { (p - 1.0).abs() <= ROW_TOLERANCE } else { p == 0.0 })
}

impl Dynamics for EstimatedDynamics {
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

/// One timestep's worth of estimated rows, `rows[s * A + a]` over `S + 1` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct StepEstimate {
    pub rows: Vec<Vec<f64>>,
    pub active: Vec<usize>,
    pub counts: StepCounts,
}

impl StepEstimate {
    pub fn row(&self, num_actions: usize, s: usize, a: usize) -> &[f64] {
        &self.rows[s * num_actions + a]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::random_mdp;

    #[test]
    fn all_sink_is_valid() {
        let est = EstimatedDynamics::all_sink(3, 2, 2, 0).unwrap();
        assert!(est.violations().is_empty());
        assert_eq!(est.row(1, 3, 1), &[0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn from_mdp_matches() {
        let mdp = random_mdp(3, 2, 3, 1, 1.0).unwrap();
        let est = EstimatedDynamics::from_mdp(&mdp);
        assert!(est.matches_exactly(&mdp));
        assert!(est.violations().is_empty());
    }

    #[test]
    fn from_parts_checks_empirical_means() {
        let base = EstimatedDynamics::all_sink(2, 1, 1, 0).unwrap();
        let mut t = base.kernel().as_slice().to_vec();
        // (h=0, s=0, a=0) -> [0.75, 0.25, 0]
        t[0..3].copy_from_slice(&[0.75, 0.25, 0.0]);
        let counts: StepCounts = [((0, 0, 0), 3), ((0, 0, 1), 1)].into_iter().collect();
        let ok = EstimatedDynamics::from_parts(2, 1, 1, 0, t.clone(), vec![vec![0]], vec![counts.clone()], Some(0.1));
        assert!(ok.is_ok());
        t[0..3].copy_from_slice(&[0.5, 0.5, 0.0]);
        let bad = EstimatedDynamics::from_parts(2, 1, 1, 0, t, vec![vec![0]], vec![counts], None);
        assert!(matches!(bad, Err(Error::Invariant(_))));
    }

    #[test]
    fn inactive_rows_must_sink() {
        let mut t = EstimatedDynamics::all_sink(2, 1, 1, 0).unwrap().kernel().as_slice().to_vec();
        t[0..3].copy_from_slice(&[1.0, 0.0, 0.0]);
        let err = EstimatedDynamics::from_parts(2, 1, 1, 0, t, vec![vec![]], vec![StepCounts::new()], None);
        assert!(err.is_err());
    }
}
