//! Numerical checks of the structural inequalities behind the MARFE analysis.
//!
//! Each check reports how many inequalities it evaluated and how many failed.
//! Checks over MARFE runs that only hold with high probability report a pass
//! fraction instead and pass when it reaches the required level.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::baselines::UniformExplorer;
use crate::error::{Error, Result};
use crate::eval::{build_p_beta_hat, build_p_two_beta, reward_batch, sample_policies, set_inclusion_holds};
use crate::keydyn::{survivor_experiment, KeySource};
use crate::marfe::{run_marfe, MarfeConfig};
use crate::mdp::{Dynamics, TabularMdp};
use crate::planning::{occupancy, policy_value, TransitionMatrix};

/// Slack for floating-point comparisons.
pub const INVARIANT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvariantRow {
    pub check: String,
    pub evaluations: u64,
    pub violations: u64,
    /// Fraction of evaluations that must hold.
    pub required: f64,
    pub passed: bool,
}

impl InvariantRow {
    fn new(check: &str, evaluations: u64, violations: u64, required: f64) -> Self {
        let held = if evaluations == 0 {
            1.0
        } else {
            (evaluations - violations) as f64 / evaluations as f64
        };
        Self {
            check: check.to_string(),
            evaluations,
            violations,
            required,
            passed: held >= required,
        }
    }

    pub fn pass_fraction(&self) -> f64 {
        if self.evaluations == 0 {
            1.0
        } else {
            (self.evaluations - self.violations) as f64 / self.evaluations as f64
        }
    }
}

pub const INVARIANT_HEADER: [&str; 6] = ["check", "evaluations", "violations", "pass_fraction", "required", "passed"];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvariantSettings {
    /// Independent MARFE runs on the instance.
    pub runs: usize,
    pub agents: usize,
    pub beta: f64,
    /// Required pass fraction for set inclusion is `1 - delta`.
    pub delta: f64,
    pub policies: usize,
    pub rewards: usize,
    pub contraction_pairs: usize,
    pub survivor_horizon: usize,
    pub survivor_actions: usize,
    pub survivor_agents: usize,
    pub seed: u64,
}

/// Tallies for one MARFE run.
#[derive(Default)]
struct RunTally {
    sandwich_low: (u64, u64),
    sandwich_high: (u64, u64),
    truncation: (u64, u64),
    included: bool,
    domination: (u64, u64),
}

fn add(t: &mut (u64, u64), violated: bool) {
    t.0 += 1;
    t.1 += u64::from(violated);
}

fn check_run(mdp: &TabularMdp, s: &InvariantSettings, run: usize) -> Result<RunTally> {
    let (s_n, a_n, h_n) = (mdp.num_states(), mdp.num_actions(), mdp.horizon());
    let cfg = MarfeConfig {
        agents: s.agents,
        beta: s.beta,
        delta: s.delta,
        seed: s.seed.wrapping_add(run as u64),
    };
    let est = run_marfe(mdp, &cfg)?.estimate;
    let p1 = build_p_beta_hat(mdp, &est)?;
    let p2 = build_p_two_beta(mdp, s.beta)?;
    let slack = 2.0 * s.beta * (h_n * h_n * s_n) as f64;
    let policies = sample_policies(s_n, a_n, h_n, s.policies, s.seed ^ (run as u64).rotate_left(32));
    let rewards = reward_batch(s_n, a_n, h_n, s.rewards, s.seed.wrapping_add(1000 + run as u64));
    let mut t = RunTally {
        included: set_inclusion_holds(&p2, &est),
        ..RunTally::default()
    };
    for pi in &policies {
        for r in &rewards {
            let v = policy_value(pi, mdp, &r.reward)?;
            let v1 = policy_value(pi, &p1, &r.reward)?;
            let v2 = policy_value(pi, &p2, &r.reward)?;
            add(&mut t.sandwich_low, v1 > v + INVARIANT_TOLERANCE);
            add(&mut t.sandwich_high, v > v2 + slack + INVARIANT_TOLERANCE);
        }
        let q = occupancy(pi, mdp)?;
        let q1 = occupancy(pi, &p1)?;
        let q2 = occupancy(pi, &p2)?;
        for h in 0..=h_n {
            for st in 0..s_n {
                add(&mut t.truncation, q1.get(h, st) > q.get(h, st) + INVARIANT_TOLERANCE);
            }
        }
        if t.included {
            for h in 0..h_n {
                for &st in p2.retained(h) {
                    add(&mut t.domination, q2.get(h, st) > q1.get(h, st) + INVARIANT_TOLERANCE);
                }
            }
        }
    }
    Ok(t)
}

/// `||v M||_1 <= ||v||_1` for random signed `v` and random row-stochastic `M`.
pub fn contraction_check(pairs: usize, max_size: usize, seed: u64) -> Result<(u64, u64)> {
    if max_size == 0 {
        return Err(Error::Domain("matrix size must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut violations = 0;
    for _ in 0..pairs {
        let n = rng.random_range(1..=max_size);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let raw: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
                let sum: f64 = raw.iter().sum();
                raw.into_iter().map(|x| x / sum).collect()
            })
            .collect();
        let m = TransitionMatrix::from_rows(&rows)?;
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let before: f64 = v.iter().map(|x| x.abs()).sum();
        let after: f64 = m.left_mul(&v).iter().map(|x| x.abs()).sum();
        violations += u64::from(after > before + INVARIANT_TOLERANCE);
    }
    Ok((pairs as u64, violations))
}

/// Runs every check and returns one row per check.
pub fn run_invariant_suite(mdp: &TabularMdp, s: &InvariantSettings) -> Result<Vec<InvariantRow>> {
    if s.runs == 0 {
        return Err(Error::Config(vec!["invariant suite needs at least one run".into()]));
    }
    let tallies = (0..s.runs)
        .into_par_iter()
        .map(|r| check_run(mdp, s, r))
        .collect::<Result<Vec<_>>>()?;
    let sum = |f: fn(&RunTally) -> (u64, u64)| {
        tallies.iter().map(f).fold((0, 0), |acc, x| (acc.0 + x.0, acc.1 + x.1))
    };
    let low = sum(|t| t.sandwich_low);
    let high = sum(|t| t.sandwich_high);
    let trunc = sum(|t| t.truncation);
    let dom = sum(|t| t.domination);
    let excluded = tallies.iter().filter(|t| !t.included).count() as u64;
    let (pairs, contraction_bad) = contraction_check(s.contraction_pairs, 6, s.seed)?;
    let curve = survivor_experiment(
        || Box::new(UniformExplorer),
        s.survivor_horizon,
        s.survivor_actions,
        1,
        s.survivor_agents,
        KeySource::Exhaustive,
        s.seed,
    )?;
    let curve_bad = curve
        .counts
        .iter()
        .filter(|trial| {
            trial
                .iter()
                .any(|row| row.iter().any(|&c| c > curve.agents) || row.windows(2).any(|w| w[1] > w[0]))
        })
        .count() as u64;
    Ok(vec![
        InvariantRow::new("value_sandwich_lower", low.0, low.1, 1.0),
        InvariantRow::new("value_sandwich_upper", high.0, high.1, 1.0),
        InvariantRow::new("truncation_occupancy_domination", trunc.0, trunc.1, 1.0),
        InvariantRow::new("set_inclusion", s.runs as u64, excluded, 1.0 - s.delta),
        InvariantRow::new("occupancy_domination", dom.0, dom.1, 1.0),
        InvariantRow::new("row_stochastic_contraction", pairs, contraction_bad, 1.0),
        InvariantRow::new("survivor_monotonicity", curve.trials() as u64, curve_bad, 1.0),
    ])
}
