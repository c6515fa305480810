//! TOML-configured experiments and their on-disk reports.
//!
//! A config is parsed leniently (every field optional), then resolved into a
//! [`RunPlan`]; resolution reports every missing or invalid field at once,
//! named by its dotted path (`algorithm.m`). Result tables are CSV with
//! headers and contain no timestamps, so reruns are byte-identical.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{run_naive, run_uniform, NaiveConfig, UniformExplorer};
use crate::error::{Error, Result};
use crate::estimate::EstimatedDynamics;
use crate::eval::{
    build_p_beta_hat, occupancy_discrepancy, policy_value_discrepancy, reward_batch, reward_free_gap,
    sample_policies, GapReport, LabeledReward,
};
use crate::invariants::{run_invariant_suite, InvariantSettings, INVARIANT_HEADER};
use crate::io::{read_mdp, write_estimate, write_phase_logs};
use crate::keydyn::{
    exhaustive_single_phase, make_key_dynamics, r_key, random_key, sequence_count, survivor_experiment,
    value_gap_vs_phase_budget, KeySource, GRID_HEADER,
};
use crate::marfe::{default_beta, sufficient_agent_bound, run_marfe, AgentBound, MarfeConfig, MarfeRun};
use crate::mdp::{random_mdp, Dynamics, TabularMdp};
use crate::simulator::{Explorer, PhaseLog};

/// Constant `c` in the desk-scale recommendation `m = c S A H / eps^2`.
pub const DESK_CONSTANT: f64 = 200.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Marfe,
    Naive,
    Uniform,
    LowerBoundSurvivors,
    LowerBoundGrid,
    Invariants,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Marfe => "marfe",
            Self::Naive => "naive",
            Self::Uniform => "uniform",
            Self::LowerBoundSurvivors => "lower-bound-survivors",
            Self::LowerBoundGrid => "lower-bound-grid",
            Self::Invariants => "invariants",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InstanceSource {
    File,
    Random,
    Key,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KeySelection {
    All,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LowerBoundExplorer {
    Uniform,
    Exhaustive,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceSection {
    pub source: Option<InstanceSource>,
    pub path: Option<PathBuf>,
    pub states: Option<usize>,
    pub actions: Option<usize>,
    pub horizon: Option<usize>,
    pub seed: Option<u64>,
    pub concentration: Option<f64>,
    pub key: Option<Vec<usize>>,
    pub key_seed: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmSection {
    pub m: Option<usize>,
    pub beta: Option<f64>,
    pub threshold: Option<u64>,
    pub phases: Option<usize>,
    pub dump_phase_logs: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationSection {
    pub rewards: Option<usize>,
    pub policies: Option<usize>,
    pub delta: Option<f64>,
    pub epsilon: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LowerBoundSection {
    pub actions: Option<usize>,
    pub horizon: Option<usize>,
    pub m: Option<usize>,
    pub phases: Option<usize>,
    pub keys: Option<KeySelection>,
    pub trials: Option<usize>,
    pub phase_budgets: Option<Vec<usize>>,
    pub agent_counts: Option<Vec<usize>>,
    pub explorer: Option<LowerBoundExplorer>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InvariantSection {
    pub runs: Option<usize>,
    pub contraction_pairs: Option<usize>,
    pub survivor_actions: Option<usize>,
    pub survivor_horizon: Option<usize>,
    pub survivor_m: Option<usize>,
}

/// The experiment file as written; see [`ExperimentConfig::resolve`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: Option<ExperimentKind>,
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub instance: InstanceSection,
    #[serde(default)]
    pub algorithm: AlgorithmSection,
    #[serde(default)]
    pub evaluation: EvaluationSection,
    #[serde(default)]
    pub lower_bound: LowerBoundSection,
    #[serde(default)]
    pub invariants: InvariantSection,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "source", rename_all = "kebab-case")]
pub enum InstancePlan {
    File {
        path: PathBuf,
    },
    Random {
        states: usize,
        actions: usize,
        horizon: usize,
        seed: u64,
        concentration: f64,
    },
    Key {
        horizon: usize,
        actions: usize,
        key: Vec<usize>,
    },
}

impl InstancePlan {
    pub fn load(&self) -> Result<TabularMdp> {
        match self {
            Self::File { path } => read_mdp(path),
            Self::Random {
                states,
                actions,
                horizon,
                seed,
                concentration,
            } => random_mdp(*states, *actions, *horizon, *seed, *concentration),
            Self::Key { horizon, actions, key } => Ok(make_key_dynamics(*horizon, *actions, key)?.mdp),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalPlan {
    pub rewards: usize,
    pub policies: usize,
    pub delta: f64,
    pub epsilon: Option<f64>,
}

/// A fully resolved experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RunPlan {
    Marfe {
        instance: InstancePlan,
        m: usize,
        beta: f64,
        evaluation: EvalPlan,
        dump_phase_logs: bool,
    },
    Naive {
        instance: InstancePlan,
        m: usize,
        threshold: u64,
        evaluation: EvalPlan,
        dump_phase_logs: bool,
    },
    Uniform {
        instance: InstancePlan,
        m: usize,
        phases: usize,
        evaluation: EvalPlan,
        dump_phase_logs: bool,
    },
    LowerBoundSurvivors {
        actions: usize,
        horizon: usize,
        m: usize,
        phases: usize,
        keys: KeySource,
    },
    LowerBoundGrid {
        actions: usize,
        horizon: usize,
        phase_budgets: Vec<usize>,
        agent_counts: Vec<usize>,
        trials: usize,
        explorer: LowerBoundExplorer,
    },
    Invariants {
        instance: InstancePlan,
        settings: InvariantSettings,
    },
}

/// Resolved config plus where to write.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResolvedExperiment {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub plan: RunPlan,
}

/// Collects every problem found during resolution.
struct Issues(Vec<String>);

impl Issues {
    fn need<T: Clone>(&mut self, value: &Option<T>, field: &str, kind: ExperimentKind) -> Option<T> {
        if value.is_none() {
            self.0.push(format!("{field}: required for kind `{}`", kind.name()));
        }
        value.clone()
    }

    fn at_least(&mut self, value: Option<usize>, min: usize, field: &str) {
        if let Some(v) = value {
            if v < min {
                self.0.push(format!("{field}: must be at least {min}, got {v}"));
            }
        }
    }

    fn open_unit(&mut self, value: Option<f64>, field: &str) {
        if let Some(v) = value {
            if !(v > 0.0 && v < 1.0) {
                self.0.push(format!("{field}: must lie in (0, 1), got {v}"));
            }
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let de = toml::de::Deserializer::parse(text).map_err(|e| Error::Config(vec![e.message().to_string()]))?;
        serde_path_to_error::deserialize(de).map_err(|e| {
            let field = e.path().to_string();
            let msg = e.into_inner().message().to_string();
            Error::Config(vec![format!("{field}: {msg}")])
        })
    }

    /// Parses a config file. Relative paths in it resolve against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<(Self, PathBuf)> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((Self::from_toml_str(&text)?, base))
    }

    /// Validates the config against its kind and fills defaults.
    pub fn resolve(&self, base_dir: &Path) -> Result<ResolvedExperiment> {
        let mut is = Issues(Vec::new());
        let Some(kind) = self.kind else {
            return Err(Error::Config(vec![
                "kind: required (one of marfe, naive, uniform, lower-bound-survivors, lower-bound-grid, invariants)"
                    .into(),
            ]));
        };
        let seed = is.need(&self.seed, "seed", kind);
        let output_dir = is
            .need(&self.output_dir, "output_dir", kind)
            .map(|d| if d.is_relative() { base_dir.join(d) } else { d });
        let alg = &self.algorithm;
        let ev = &self.evaluation;
        is.at_least(alg.m, 1, "algorithm.m");
        is.at_least(ev.rewards, 0, "evaluation.rewards");
        is.open_unit(ev.delta, "evaluation.delta");
        is.open_unit(ev.epsilon, "evaluation.epsilon");
        is.open_unit(alg.beta, "algorithm.beta");
        let eval = EvalPlan {
            rewards: ev.rewards.unwrap_or(100),
            policies: ev.policies.unwrap_or(200),
            delta: ev.delta.unwrap_or(0.1),
            epsilon: ev.epsilon,
        };
        let needs_instance = matches!(
            kind,
            ExperimentKind::Marfe | ExperimentKind::Naive | ExperimentKind::Uniform | ExperimentKind::Invariants
        );
        let instance = if needs_instance {
            self.resolve_instance(kind, base_dir, &mut is)
        } else {
            None
        };
        let dims = instance.as_ref().and_then(|i| match i {
            InstancePlan::Random { states, horizon, .. } => Some((*states, *horizon)),
            InstancePlan::Key { horizon, .. } => Some((2, *horizon)),
            InstancePlan::File { path } => read_mdp(path).ok().map(|m| (m.num_states(), m.horizon())),
        });
        let beta_for = |is: &mut Issues| -> Option<f64> {
            match (alg.beta, ev.epsilon, dims) {
                (Some(b), _, _) => Some(b),
                (None, Some(e), Some((s, h))) => Some(default_beta(e, s, h)),
                (None, None, _) => {
                    is.0.push(format!(
                        "algorithm.beta: required for kind `{}` unless evaluation.epsilon is set",
                        kind.name()
                    ));
                    None
                }
                (None, Some(_), None) => None,
            }
        };
        let dump = alg.dump_phase_logs.unwrap_or(false);
        let lb = &self.lower_bound;
        let plan = match kind {
            ExperimentKind::Marfe => {
                let m = is.need(&alg.m, "algorithm.m", kind);
                let beta = beta_for(&mut is);
                instance.zip(m.zip(beta)).map(|(instance, (m, beta))| RunPlan::Marfe {
                    instance,
                    m,
                    beta,
                    evaluation: eval.clone(),
                    dump_phase_logs: dump,
                })
            }
            ExperimentKind::Naive => {
                let m = is.need(&alg.m, "algorithm.m", kind);
                let threshold = is.need(&alg.threshold, "algorithm.threshold", kind);
                if threshold == Some(0) {
                    is.0.push("algorithm.threshold: must be at least 1, got 0".into());
                }
                instance.zip(m.zip(threshold)).map(|(instance, (m, threshold))| RunPlan::Naive {
                    instance,
                    m,
                    threshold,
                    evaluation: eval.clone(),
                    dump_phase_logs: dump,
                })
            }
            ExperimentKind::Uniform => {
                let m = is.need(&alg.m, "algorithm.m", kind);
                let phases = is.need(&alg.phases, "algorithm.phases", kind);
                is.at_least(phases, 1, "algorithm.phases");
                instance.zip(m.zip(phases)).map(|(instance, (m, phases))| RunPlan::Uniform {
                    instance,
                    m,
                    phases,
                    evaluation: eval.clone(),
                    dump_phase_logs: dump,
                })
            }
            ExperimentKind::LowerBoundSurvivors => {
                let actions = is.need(&lb.actions, "lower_bound.actions", kind);
                let horizon = is.need(&lb.horizon, "lower_bound.horizon", kind);
                let m = is.need(&lb.m, "lower_bound.m", kind);
                is.at_least(lb.actions, 1, "lower_bound.actions");
                is.at_least(lb.horizon, 1, "lower_bound.horizon");
                is.at_least(lb.m, 1, "lower_bound.m");
                is.at_least(lb.phases, 1, "lower_bound.phases");
                let keys = match lb.keys.unwrap_or(KeySelection::All) {
                    KeySelection::All => {
                        if let (Some(a), Some(h)) = (actions, horizon) {
                            if sequence_count(h, a).is_none_or(|n| n > 1 << 20) {
                                is.0.push(format!(
                                    "lower_bound.keys: `all` would enumerate {a}^{h} keys; use `random`"
                                ));
                            }
                        }
                        Some(KeySource::Exhaustive)
                    }
                    KeySelection::Random => {
                        let trials = is.need(&lb.trials, "lower_bound.trials", kind);
                        is.at_least(trials, 1, "lower_bound.trials");
                        trials.map(|trials| KeySource::Random { trials })
                    }
                };
                match (actions, horizon, m, keys) {
                    (Some(actions), Some(horizon), Some(m), Some(keys)) => Some(RunPlan::LowerBoundSurvivors {
                        actions,
                        horizon,
                        m,
                        phases: lb.phases.unwrap_or(1),
                        keys,
                    }),
                    _ => None,
                }
            }
            ExperimentKind::LowerBoundGrid => {
                let actions = is.need(&lb.actions, "lower_bound.actions", kind);
                let horizon = is.need(&lb.horizon, "lower_bound.horizon", kind);
                let budgets = is.need(&lb.phase_budgets, "lower_bound.phase_budgets", kind);
                let counts = is.need(&lb.agent_counts, "lower_bound.agent_counts", kind);
                let trials = is.need(&lb.trials, "lower_bound.trials", kind);
                is.at_least(lb.actions, 1, "lower_bound.actions");
                is.at_least(lb.horizon, 1, "lower_bound.horizon");
                is.at_least(trials, 1, "lower_bound.trials");
                for (field, list) in [("lower_bound.phase_budgets", &budgets), ("lower_bound.agent_counts", &counts)] {
                    if let Some(list) = list {
                        if list.is_empty() || list.contains(&0) {
                            is.0.push(format!("{field}: must be a non-empty list of positive integers"));
                        }
                    }
                }
                let explorer = lb.explorer.unwrap_or(LowerBoundExplorer::Uniform);
                if let (LowerBoundExplorer::Exhaustive, Some(a), Some(h), Some(counts)) =
                    (explorer, actions, horizon, &counts)
                {
                    let need = sequence_count(h, a).unwrap_or(usize::MAX);
                    if let Some(&small) = counts.iter().find(|&&m| m < need) {
                        is.0.push(format!(
                            "lower_bound.agent_counts: the exhaustive learner needs m >= A^H = {need}, got {small}"
                        ));
                    }
                }
                match (actions, horizon, budgets, counts, trials) {
                    (Some(actions), Some(horizon), Some(phase_budgets), Some(agent_counts), Some(trials)) => {
                        Some(RunPlan::LowerBoundGrid {
                            actions,
                            horizon,
                            phase_budgets,
                            agent_counts,
                            trials,
                            explorer,
                        })
                    }
                    _ => None,
                }
            }
            ExperimentKind::Invariants => {
                let m = is.need(&alg.m, "algorithm.m", kind);
                let beta = beta_for(&mut is);
                let inv = &self.invariants;
                is.at_least(inv.runs, 1, "invariants.runs");
                is.at_least(inv.survivor_actions, 1, "invariants.survivor_actions");
                is.at_least(inv.survivor_horizon, 1, "invariants.survivor_horizon");
                is.at_least(inv.survivor_m, 1, "invariants.survivor_m");
                match (instance, m, beta, seed) {
                    (Some(instance), Some(m), Some(beta), Some(seed)) => Some(RunPlan::Invariants {
                        instance,
                        settings: InvariantSettings {
                            runs: inv.runs.unwrap_or(20),
                            agents: m,
                            beta,
                            delta: eval.delta,
                            policies: eval.policies,
                            rewards: eval.rewards,
                            contraction_pairs: inv.contraction_pairs.unwrap_or(1000),
                            survivor_horizon: inv.survivor_horizon.unwrap_or(6),
                            survivor_actions: inv.survivor_actions.unwrap_or(2),
                            survivor_agents: inv.survivor_m.unwrap_or(64),
                            seed,
                        },
                    }),
                    _ => None,
                }
            }
        };
        match (is.0.is_empty(), plan, seed, output_dir) {
            (true, Some(plan), Some(seed), Some(output_dir)) => Ok(ResolvedExperiment {
                seed,
                output_dir,
                plan,
            }),
            _ => Err(Error::Config(is.0)),
        }
    }

    fn resolve_instance(&self, kind: ExperimentKind, base: &Path, is: &mut Issues) -> Option<InstancePlan> {
        let inst = &self.instance;
        match is.need(&inst.source, "instance.source", kind)? {
            InstanceSource::File => {
                let path = is.need(&inst.path, "instance.path", kind)?;
                let path = if path.is_relative() { base.join(path) } else { path };
                if !path.is_file() {
                    is.0.push(format!("instance.path: file {} not found", path.display()));
                    return None;
                }
                Some(InstancePlan::File { path })
            }
            InstanceSource::Random => {
                let states = is.need(&inst.states, "instance.states", kind);
                let actions = is.need(&inst.actions, "instance.actions", kind);
                let horizon = is.need(&inst.horizon, "instance.horizon", kind);
                is.at_least(states, 1, "instance.states");
                is.at_least(actions, 1, "instance.actions");
                is.at_least(horizon, 1, "instance.horizon");
                let concentration = inst.concentration.unwrap_or(1.0);
                if !(concentration > 0.0 && concentration.is_finite()) {
                    is.0.push(format!("instance.concentration: must be positive, got {concentration}"));
                }
                Some(InstancePlan::Random {
                    states: states?,
                    actions: actions?,
                    horizon: horizon?,
                    seed: inst.seed.unwrap_or(0),
                    concentration,
                })
            }
            InstanceSource::Key => {
                let horizon = is.need(&inst.horizon, "instance.horizon", kind);
                let actions = is.need(&inst.actions, "instance.actions", kind);
                is.at_least(horizon, 1, "instance.horizon");
                is.at_least(actions, 1, "instance.actions");
                let (horizon, actions) = (horizon?, actions?);
                let key = match (&inst.key, inst.key_seed) {
                    (Some(k), None) => {
                        if k.len() != horizon || k.iter().any(|&a| a >= actions) {
                            is.0.push(format!(
                                "instance.key: must list {horizon} actions, each below {actions}"
                            ));
                            return None;
                        }
                        k.clone()
                    }
                    (None, Some(seed)) => {
                        random_key(horizon, actions, &mut ChaCha8Rng::seed_from_u64(seed))
                    }
                    _ => {
                        is.0.push("instance.key: give exactly one of `key` or `key_seed`".into());
                        return None;
                    }
                };
                Some(InstancePlan::Key { horizon, actions, key })
            }
        }
    }
}

/// Sufficient agent bound, `beta` and the desk-scale recommendation for one instance size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundReport {
    pub num_states: usize,
    pub num_actions: usize,
    pub horizon: usize,
    pub epsilon: f64,
    pub delta: f64,
    pub beta: f64,
    pub alpha: f64,
    pub sufficient: AgentBound,
    pub desk_constant: f64,
    /// `min(c S A H / eps^2, sufficient bound)`, rounded up.
    pub desk_agents: f64,
}

pub fn bound_calculator(
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    epsilon: f64,
    delta: f64,
) -> Result<BoundReport> {
    let sufficient = sufficient_agent_bound(num_states, num_actions, horizon, epsilon, delta)?;
    let beta = default_beta(epsilon, num_states, horizon);
    let desk = (DESK_CONSTANT * (num_states * num_actions * horizon) as f64 / (epsilon * epsilon)).ceil();
    Ok(BoundReport {
        num_states,
        num_actions,
        horizon,
        epsilon,
        delta,
        beta,
        alpha: beta / (3.0 * horizon as f64),
        sufficient,
        desk_constant: DESK_CONSTANT,
        desk_agents: desk.min(sufficient.agents),
    })
}

/// What a run produced.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub kind: String,
    pub artifacts: Vec<String>,
    /// Headline metrics as `(name, value)`, in a fixed order.
    pub metrics: Vec<(String, String)>,
}

struct Outputs {
    dir: PathBuf,
    artifacts: Vec<String>,
    metrics: Vec<(String, String)>,
}

impl Outputs {
    fn path(&mut self, name: &str) -> PathBuf {
        self.artifacts.push(name.to_string());
        self.dir.join(name)
    }

    fn table(&mut self, name: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
        let path = self.path(name);
        let csv_err = |e: csv::Error| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(&path, io),
            other => Error::Domain(format!("csv error on {}: {other:?}", path.display())),
        };
        let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
        w.write_record(header).map_err(csv_err)?;
        for row in rows {
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io(&path, e))
    }

    fn metric(&mut self, name: &str, value: impl ToString) {
        self.metrics.push((name.to_string(), value.to_string()));
    }
}

fn labeled_rewards(mdp: &TabularMdp, instance: &InstancePlan, eval: &EvalPlan, seed: u64) -> Result<Vec<LabeledReward>> {
    let mut rewards = reward_batch(mdp.num_states(), mdp.num_actions(), mdp.horizon(), eval.rewards, seed);
    if let InstancePlan::Key { horizon, actions, key } = instance {
        rewards.push(LabeledReward {
            label: "r_key".into(),
            reward: r_key(&make_key_dynamics(*horizon, *actions, key)?),
        });
    }
    Ok(rewards)
}

fn report_estimate(
    out: &mut Outputs,
    mdp: &TabularMdp,
    instance: &InstancePlan,
    estimate: &EstimatedDynamics,
    logs: &[PhaseLog],
    eval: &EvalPlan,
    seed: u64,
    dump: bool,
) -> Result<GapReport> {
    let (s_n, a_n, h_n) = (mdp.num_states(), mdp.num_actions(), mdp.horizon());
    write_estimate(estimate, out.path("estimate.json"))?;
    if dump {
        write_phase_logs(logs, out.path("phase_logs.json"))?;
    }
    let rewards = labeled_rewards(mdp, instance, eval, seed ^ 0x5EED_0001)?;
    let report = reward_free_gap(mdp, estimate, &rewards)?;
    out.table(
        "gap_report.csv",
        &["reward", "optimal_value", "achieved_value", "gap"],
        (0..report.gaps.len()).map(|i| {
            vec![
                report.labels[i].clone(),
                report.optimal_values[i].to_string(),
                report.achieved_values[i].to_string(),
                report.gaps[i].to_string(),
            ]
        }),
    )?;
    let mut disc_rows = Vec::with_capacity(rewards.len());
    for (i, r) in rewards.iter().enumerate() {
        let d = policy_value_discrepancy(mdp, estimate, &r.reward, eval.policies, seed ^ 0x5EED_0002 ^ i as u64)?;
        disc_rows.push(vec![
            r.label.clone(),
            d.max.to_string(),
            d.exhaustive.to_string(),
            d.policies_checked.to_string(),
        ]);
    }
    out.table(
        "discrepancy.csv",
        &["reward", "max_value_discrepancy", "exhaustive", "policies_checked"],
        disc_rows,
    )?;
    let truncated = build_p_beta_hat(mdp, estimate)?;
    let policies = sample_policies(s_n, a_n, h_n, eval.policies, seed ^ 0x5EED_0003);
    let mut occ_rows = Vec::with_capacity(h_n + 1);
    for h in 0..=h_n {
        let d = occupancy_discrepancy(&truncated, estimate, &policies, h)?;
        occ_rows.push(vec![h.to_string(), d.to_string()]);
    }
    out.table("occupancy_discrepancy.csv", &["h", "max_l1_vs_truncated_truth"], occ_rows)?;
    out.metric("max_gap", report.max_gap);
    out.metric("mean_gap", report.mean_gap);
    if let Some(eps) = eval.epsilon {
        out.metric("epsilon", eps);
        out.metric("within_epsilon", report.max_gap <= eps);
    }
    Ok(report)
}

fn report_layered(out: &mut Outputs, run: &MarfeRun) -> Result<()> {
    let mut rows = Vec::new();
    for p in &run.phases {
        for g in &p.groups {
            rows.push(vec![
                p.phase.to_string(),
                g.state.to_string(),
                g.action.to_string(),
                g.len().to_string(),
                p.reach[g.state].to_string(),
            ]);
        }
    }
    out.table("phase_groups.csv", &["phase", "state", "action", "agents", "reach"], rows)?;
    out.metric("zero_visit_rows", run.warnings.len());
    Ok(())
}

/// Runs a resolved experiment, writing every artifact into `output_dir`.
pub fn run_experiment(exp: &ResolvedExperiment) -> Result<RunSummary> {
    fs::create_dir_all(&exp.output_dir).map_err(|e| Error::io(&exp.output_dir, e))?;
    let mut out = Outputs {
        dir: exp.output_dir.clone(),
        artifacts: Vec::new(),
        metrics: Vec::new(),
    };
    let seed = exp.seed;
    let mut phase_groups = None;
    match &exp.plan {
        RunPlan::Marfe {
            instance,
            m,
            beta,
            evaluation,
            dump_phase_logs,
        } => {
            let mdp = instance.load()?;
            let cfg = MarfeConfig {
                agents: *m,
                beta: *beta,
                delta: evaluation.delta,
                seed,
            };
            let run = run_marfe(&mdp, &cfg)?;
            report_estimate(&mut out, &mdp, instance, &run.estimate, &run.logs, evaluation, seed, *dump_phase_logs)?;
            report_layered(&mut out, &run)?;
            phase_groups = Some(run.phases);
        }
        RunPlan::Naive {
            instance,
            m,
            threshold,
            evaluation,
            dump_phase_logs,
        } => {
            let mdp = instance.load()?;
            let cfg = NaiveConfig {
                agents: *m,
                count_threshold: *threshold,
                seed,
            };
            let run = run_naive(&mdp, &cfg)?;
            report_estimate(&mut out, &mdp, instance, &run.estimate, &run.logs, evaluation, seed, *dump_phase_logs)?;
            report_layered(&mut out, &run)?;
            phase_groups = Some(run.phases);
        }
        RunPlan::Uniform {
            instance,
            m,
            phases,
            evaluation,
            dump_phase_logs,
        } => {
            let mdp = instance.load()?;
            let run = run_uniform(&mdp, *m, *phases, seed)?;
            report_estimate(&mut out, &mdp, instance, &run.estimate, &run.logs, evaluation, seed, *dump_phase_logs)?;
        }
        RunPlan::LowerBoundSurvivors {
            actions,
            horizon,
            m,
            phases,
            keys,
        } => {
            let curve = survivor_experiment(|| Box::new(UniformExplorer), *horizon, *actions, *phases, *m, *keys, seed)?;
            let mut long = Vec::new();
            for (t, trial) in curve.counts.iter().enumerate() {
                for (p, row) in trial.iter().enumerate() {
                    for (h, c) in row.iter().enumerate() {
                        long.push(vec![t.to_string(), p.to_string(), h.to_string(), c.to_string()]);
                    }
                }
            }
            out.table("survivors.csv", &["trial", "phase", "h", "survivors"], long)?;
            let mut summary = Vec::new();
            for p in 0..*phases {
                for h in 0..=*horizon {
                    let expected = *m as f64 / (*actions as f64).powi(h as i32);
                    summary.push(vec![
                        p.to_string(),
                        h.to_string(),
                        curve.mean(p, h).to_string(),
                        expected.to_string(),
                        curve.empty_fraction(p, h).to_string(),
                    ]);
                }
            }
            out.table(
                "survivors_summary.csv",
                &["phase", "h", "mean_survivors", "expected_survivors", "empty_fraction"],
                summary,
            )?;
            out.metric("trials", curve.trials());
            out.metric("monotone", curve.is_monotone());
            out.metric("final_empty_fraction", curve.empty_fraction(0, *horizon - 1));
        }
        RunPlan::LowerBoundGrid {
            actions,
            horizon,
            phase_budgets,
            agent_counts,
            trials,
            explorer,
        } => {
            let (a, h) = (*actions, *horizon);
            let factory = move |_phases: usize| -> Box<dyn Explorer> {
                match explorer {
                    LowerBoundExplorer::Uniform => Box::new(UniformExplorer),
                    LowerBoundExplorer::Exhaustive => {
                        Box::new(exhaustive_single_phase(h, a).expect("validated at resolution"))
                    }
                }
            };
            let rows = value_gap_vs_phase_budget(factory, phase_budgets, agent_counts, a, h, *trials, seed)?;
            out.table(
                "grid.csv",
                &GRID_HEADER,
                rows.iter().map(|r| {
                    vec![
                        r.phases.to_string(),
                        r.agents.to_string(),
                        r.num_actions.to_string(),
                        r.horizon.to_string(),
                        r.failure_rate.to_string(),
                        r.trials.to_string(),
                        r.ci_halfwidth.to_string(),
                    ]
                }),
            )?;
            out.metric("cells", rows.len());
        }
        RunPlan::Invariants { instance, settings } => {
            let mdp = instance.load()?;
            let rows = run_invariant_suite(&mdp, settings)?;
            out.table(
                "invariants.csv",
                &INVARIANT_HEADER,
                rows.iter().map(|r| {
                    vec![
                        r.check.clone(),
                        r.evaluations.to_string(),
                        r.violations.to_string(),
                        r.pass_fraction().to_string(),
                        r.required.to_string(),
                        r.passed.to_string(),
                    ]
                }),
            )?;
            out.metric("all_passed", rows.iter().all(|r| r.passed));
        }
    }
    let kind = match exp.plan {
        RunPlan::Marfe { .. } => ExperimentKind::Marfe,
        RunPlan::Naive { .. } => ExperimentKind::Naive,
        RunPlan::Uniform { .. } => ExperimentKind::Uniform,
        RunPlan::LowerBoundSurvivors { .. } => ExperimentKind::LowerBoundSurvivors,
        RunPlan::LowerBoundGrid { .. } => ExperimentKind::LowerBoundGrid,
        RunPlan::Invariants { .. } => ExperimentKind::Invariants,
    };
    out.table(
        "summary.csv",
        &["metric", "value"],
        out.metrics.clone().into_iter().map(|(k, v)| vec![k, v]),
    )?;
    let manifest_path = out.path("manifest.json");
    let created = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let manifest = serde_json::json!({
        "tool": "marfe",
        "version": env!("CARGO_PKG_VERSION"),
        "created_unix": created,
        "kind": kind.name(),
        "seed": seed,
        "config": exp,
        "phase_groups": phase_groups,
        "artifacts": out.artifacts,
        "metrics": out.metrics,
    });
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    fs::write(&manifest_path, text).map_err(|e| Error::io(&manifest_path, e))?;
    Ok(RunSummary {
        kind: kind.name().to_string(),
        artifacts: out.artifacts,
        metrics: out.metrics,
    })
}
