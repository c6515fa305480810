//! JSON file formats for MDPs, rewards, policies, estimates and phase logs.
//!
//! Every document carries a `format` tag (`marfe.mdp/v1`, ...). Tensors are
//! nested arrays indexed `[h][s][a][s']` (transitions), `[h][s][a]` (rewards,
//! stochastic policies) or `[h][s]` (deterministic policies). Floats are
//! written with shortest round-trip formatting, so write-then-read is exact.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::{EstimatedDynamics, StepCounts};
use crate::mdp::{check_sizes, Dynamics, Policy, PolicyKind, RewardFunction, TabularMdp, Trajectory, ROW_TOLERANCE};
use crate::simulator::{Assignment, Counts, PhaseLog};

pub const MDP_FORMAT: &str = "marfe.mdp/v1";
pub const REWARD_FORMAT: &str = "marfe.reward/v1";
pub const POLICY_FORMAT: &str = "marfe.policy/v1";
pub const ESTIMATE_FORMAT: &str = "marfe.estimate/v1";
pub const PHASE_LOG_FORMAT: &str = "marfe.phase-log/v1";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MdpDoc {
    format: String,
    states: usize,
    actions: usize,
    horizon: usize,
    initial_state: usize,
    transitions: Vec<Vec<Vec<Vec<f64>>>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RewardDoc {
    format: String,
    states: usize,
    actions: usize,
    horizon: usize,
    rewards: Vec<Vec<Vec<f64>>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PolicyBody {
    /// Present on standalone policy files, absent inside phase logs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    format: Option<String>,
    kind: PolicyKind,
    states: usize,
    actions: usize,
    horizon: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    actions_table: Option<Vec<Vec<usize>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    probabilities: Option<Vec<Vec<Vec<f64>>>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CountEntry {
    h: usize,
    s: usize,
    a: usize,
    next: usize,
    count: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EstimateDoc {
    format: String,
    states: usize,
    actions: usize,
    horizon: usize,
    initial_state: usize,
    /// Index of the absorbing sink column, always `states`.
    sink: usize,
    beta: Option<f64>,
    active_sets: Vec<Vec<usize>>,
    transitions: Vec<Vec<Vec<Vec<f64>>>>,
    counts: Vec<CountEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PhaseDoc {
    phase_index: usize,
    policies: Vec<PolicyBody>,
    assignments: Vec<Assignment>,
    trajectories: Vec<Trajectory>,
    counts: Vec<CountEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PhaseLogDoc {
    format: String,
    phases: Vec<PhaseDoc>,
}

/// Line and column (1-based) of the first occurrence of `"key"`, or `(0, 0)`.
fn locate(text: &str, key: &str) -> (usize, usize) {
    let needle = format!("\"{key}\"");
    for (i, line) in text.lines().enumerate() {
        if let Some(c) = line.find(&needle) {
            return (i + 1, c + 1);
        }
    }
    (0, 0)
}

fn parse_error(origin: &str, text: &str, field: &str, message: impl Into<String>) -> Error {
    let key = field.split(['.', '[']).next().unwrap_or(field);
    let (line, column) = locate(text, key);
    Error::Parse {
        path: origin.to_string(),
        line,
        column,
        field: field.to_string(),
        message: message.into(),
    }
}

fn parse_doc<T: DeserializeOwned>(text: &str, origin: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        let inner = e.into_inner();
        Error::Parse {
            path: origin.to_string(),
            line: inner.line(),
            column: inner.column(),
            field,
            message: inner.to_string(),
        }
    })
}

fn check_format(found: &str, expected: &str, text: &str, origin: &str) -> Result<()> {
    if found == expected {
        Ok(())
    } else {
        Err(parse_error(
            origin,
            text,
            "format",
            format!("expected format tag `{expected}`, found `{found}`"),
        ))
    }
}

fn to_text<T: Serialize>(doc: &T) -> String {
    let mut s = serde_json::to_string_pretty(doc).expect("documents serialize");
    s.push('\n');
    s
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Flattens `[h][s][a][..]` checking every level has the declared length.
fn flatten4(
    nested: &[Vec<Vec<Vec<f64>>>],
    dims: [usize; 4],
    field: &str,
    text: &str,
    origin: &str,
) -> Result<Vec<f64>> {
    let bad = |path: String, got: usize, want: usize| {
        parse_error(origin, text, &path, format!("expected {want} entries, found {got}"))
    };
    if nested.len() != dims[0] {
        return Err(bad(field.to_string(), nested.len(), dims[0]));
    }
    let mut out = Vec::with_capacity(dims.iter().product());
    for (h, by_s) in nested.iter().enumerate() {
        if by_s.len() != dims[1] {
            return Err(bad(format!("{field}[{h}]"), by_s.len(), dims[1]));
        }
        for (s, by_a) in by_s.iter().enumerate() {
            if by_a.len() != dims[2] {
                return Err(bad(format!("{field}[{h}][{s}]"), by_a.len(), dims[2]));
            }
            for (a, row) in by_a.iter().enumerate() {
                if row.len() != dims[3] {
                    return Err(bad(format!("{field}[{h}][{s}][{a}]"), row.len(), dims[3]));
                }
                out.extend_from_slice(row);
            }
        }
    }
    Ok(out)
}

fn nest4(flat: &[f64], dims: [usize; 4]) -> Vec<Vec<Vec<Vec<f64>>>> {
    let mut rows = flat.chunks(dims[3]).map(<[f64]>::to_vec);
    (0..dims[0])
        .map(|_| {
            (0..dims[1])
                .map(|_| (0..dims[2]).map(|_| rows.next().expect("sized")).collect())
                .collect()
        })
        .collect()
}

/// Rescales rows whose sum misses 1 by more than floating-point summation
/// noise but by at most [`ROW_TOLERANCE`]. Rows with negative or non-finite
/// entries are left alone for validation to reject. Rows that already sum to
/// 1 up to rounding noise are untouched, which keeps round trips exact.
fn renormalize_rows(flat: &mut [f64], row_len: usize) {
    let noise = 4.0 * row_len as f64 * f64::EPSILON;
    for row in flat.chunks_mut(row_len) {
        if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
            continue;
        }
        let sum: f64 = row.iter().sum();
        let dev = (sum - 1.0).abs();
        if dev > noise && dev <= ROW_TOLERANCE {
            row.iter_mut().for_each(|p| *p /= sum);
        }
    }
}

fn counts_to_entries(counts: impl Iterator<Item = ((usize, usize, usize, usize), u64)>) -> Vec<CountEntry> {
    counts
        .map(|((h, s, a, next), count)| CountEntry { h, s, a, next, count })
        .collect()
}

pub fn mdp_to_string(mdp: &TabularMdp) -> String {
    let (s_n, a_n, h_n) = (mdp.num_states(), mdp.num_actions(), mdp.horizon());
    to_text(&MdpDoc {
        format: MDP_FORMAT.into(),
        states: s_n,
        actions: a_n,
        horizon: h_n,
        initial_state: mdp.initial_state(),
        transitions: nest4(mdp.kernel().as_slice(), [h_n, s_n, a_n, s_n]),
    })
}

/// Parses an MDP document; `origin` names the source in error messages.
pub fn mdp_from_str(text: &str, origin: &str) -> Result<TabularMdp> {
    let doc: MdpDoc = parse_doc(text, origin)?;
    check_format(&doc.format, MDP_FORMAT, text, origin)?;
    check_sizes(doc.states, doc.actions, doc.horizon)?;
    let dims = [doc.horizon, doc.states, doc.actions, doc.states];
    let mut flat = flatten4(&doc.transitions, dims, "transitions", text, origin)?;
    renormalize_rows(&mut flat, doc.states);
    TabularMdp::new(doc.states, doc.actions, doc.horizon, doc.initial_state, flat)
}

pub fn write_mdp(mdp: &TabularMdp, path: impl AsRef<Path>) -> Result<()> {
    write_text(path.as_ref(), &mdp_to_string(mdp))
}

pub fn read_mdp(path: impl AsRef<Path>) -> Result<TabularMdp> {
    let path = path.as_ref();
    mdp_from_str(&read_text(path)?, &path.display().to_string())
}

pub fn reward_to_string(reward: &RewardFunction) -> String {
    let (s_n, a_n, h_n) = (reward.num_states(), reward.num_actions(), reward.horizon());
    let mut nested = nest4(reward.as_slice(), [1, h_n, s_n, a_n]);
    to_text(&RewardDoc {
        format: REWARD_FORMAT.into(),
        states: s_n,
        actions: a_n,
        horizon: h_n,
        rewards: nested.pop().expect("one block"),
    })
}

pub fn reward_from_str(text: &str, origin: &str) -> Result<RewardFunction> {
    let doc: RewardDoc = parse_doc(text, origin)?;
    check_format(&doc.format, REWARD_FORMAT, text, origin)?;
    check_sizes(doc.states, doc.actions, doc.horizon)?;
    let flat = flatten4(
        std::slice::from_ref(&doc.rewards),
        [1, doc.horizon, doc.states, doc.actions],
        "rewards",
        text,
        origin,
    )?;
    RewardFunction::new(doc.states, doc.actions, doc.horizon, flat)
}

pub fn write_reward(reward: &RewardFunction, path: impl AsRef<Path>) -> Result<()> {
    write_text(path.as_ref(), &reward_to_string(reward))
}

pub fn read_reward(path: impl AsRef<Path>) -> Result<RewardFunction> {
    let path = path.as_ref();
    reward_from_str(&read_text(path)?, &path.display().to_string())
}

fn policy_body(policy: &Policy) -> PolicyBody {
    let (s_n, a_n, h_n) = (policy.num_states(), policy.num_actions(), policy.horizon());
    let mut body = PolicyBody {
        format: None,
        kind: policy.kind(),
        states: s_n,
        actions: a_n,
        horizon: h_n,
        actions_table: None,
        probabilities: None,
    };
    match policy.kind() {
        PolicyKind::Deterministic => {
            let table = policy.action_table().expect("deterministic");
            body.actions_table = Some(table.chunks(s_n).map(<[usize]>::to_vec).collect());
        }
        PolicyKind::Stochastic => {
            let probs = policy.probability_table().expect("stochastic");
            body.probabilities = Some(nest4(probs, [1, h_n, s_n, a_n]).pop().expect("one block"));
        }
    }
    body
}

fn policy_from_body(body: PolicyBody, field: &str, text: &str, origin: &str) -> Result<Policy> {
    check_sizes(body.states, body.actions, body.horizon)?;
    match (body.kind, body.actions_table, body.probabilities) {
        (PolicyKind::Deterministic, Some(table), None) => {
            if table.len() != body.horizon || table.iter().any(|r| r.len() != body.states) {
                return Err(parse_error(
                    origin,
                    text,
                    &format!("{field}actions_table"),
                    format!("expected {} rows of {} actions", body.horizon, body.states),
                ));
            }
            Policy::deterministic(body.states, body.actions, body.horizon, table.concat())
        }
        (PolicyKind::Stochastic, None, Some(probs)) => {
            let flat = flatten4(
                std::slice::from_ref(&probs),
                [1, body.horizon, body.states, body.actions],
                &format!("{field}probabilities"),
                text,
                origin,
            )?;
            Policy::stochastic(body.states, body.actions, body.horizon, flat)
        }
        (kind, _, _) => {
            let want = match kind {
                PolicyKind::Deterministic => "actions_table",
                PolicyKind::Stochastic => "probabilities",
            };
            Err(parse_error(
                origin,
                text,
                &format!("{field}kind"),
                format!("a {kind:?} policy needs exactly the `{want}` table"),
            ))
        }
    }
}

pub fn policy_to_string(policy: &Policy) -> String {
    let mut body = policy_body(policy);
    body.format = Some(POLICY_FORMAT.into());
    to_text(&body)
}

pub fn policy_from_str(text: &str, origin: &str) -> Result<Policy> {
    let body: PolicyBody = parse_doc(text, origin)?;
    check_format(body.format.as_deref().unwrap_or(""), POLICY_FORMAT, text, origin)?;
    policy_from_body(body, "", text, origin)
}

pub fn write_policy(policy: &Policy, path: impl AsRef<Path>) -> Result<()> {
    write_text(path.as_ref(), &policy_to_string(policy))
}

pub fn read_policy(path: impl AsRef<Path>) -> Result<Policy> {
    let path = path.as_ref();
    policy_from_str(&read_text(path)?, &path.display().to_string())
}

pub fn estimate_to_string(est: &EstimatedDynamics) -> String {
    let (s_n, a_n, h_n) = (est.num_states(), est.num_actions(), est.horizon());
    let counts = est.all_counts().iter().enumerate().flat_map(|(h, step)| {
        step.iter().map(move |(&(s, a, n), &c)| ((h, s, a, n), c))
    });
    to_text(&EstimateDoc {
        format: ESTIMATE_FORMAT.into(),
        states: s_n,
        actions: a_n,
        horizon: h_n,
        initial_state: est.initial_state(),
        sink: est.sink_index(),
        beta: est.beta(),
        active_sets: est.active_sets().to_vec(),
        transitions: nest4(est.kernel().as_slice(), [h_n, s_n + 1, a_n, s_n + 1]),
        counts: counts_to_entries(counts),
    })
}

pub fn estimate_from_str(text: &str, origin: &str) -> Result<EstimatedDynamics> {
    let doc: EstimateDoc = parse_doc(text, origin)?;
    check_format(&doc.format, ESTIMATE_FORMAT, text, origin)?;
    check_sizes(doc.states, doc.actions, doc.horizon)?;
    if doc.sink != doc.states {
        return Err(parse_error(
            origin,
            text,
            "sink",
            format!("sink must be index {} (after the real states)", doc.states),
        ));
    }
    let row_len = doc.states + 1;
    let dims = [doc.horizon, row_len, doc.actions, row_len];
    let mut flat = flatten4(&doc.transitions, dims, "transitions", text, origin)?;
    renormalize_rows(&mut flat, row_len);
    let mut counts = vec![StepCounts::new(); doc.horizon];
    for (i, c) in doc.counts.iter().enumerate() {
        if c.h >= doc.horizon || c.s >= doc.states || c.a >= doc.actions || c.next >= row_len {
            return Err(parse_error(origin, text, &format!("counts[{i}]"), "index out of range"));
        }
        *counts[c.h].entry((c.s, c.a, c.next)).or_insert(0) += c.count;
    }
    EstimatedDynamics::from_parts(
        doc.states,
        doc.actions,
        doc.horizon,
        doc.initial_state,
        flat,
        doc.active_sets,
        counts,
        doc.beta,
    )
}

pub fn write_estimate(est: &EstimatedDynamics, path: impl AsRef<Path>) -> Result<()> {
    write_text(path.as_ref(), &estimate_to_string(est))
}

pub fn read_estimate(path: impl AsRef<Path>) -> Result<EstimatedDynamics> {
    let path = path.as_ref();
    estimate_from_str(&read_text(path)?, &path.display().to_string())
}

pub fn phase_logs_to_string(logs: &[PhaseLog]) -> String {
    let phases = logs
        .iter()
        .map(|log| PhaseDoc {
            phase_index: log.phase_index,
            policies: log.policies.iter().map(policy_body).collect(),
            assignments: log.assignments.clone(),
            trajectories: log.trajectories.clone(),
            counts: counts_to_entries(log.counts.iter().map(|(&k, &c)| (k, c))),
        })
        .collect();
    to_text(&PhaseLogDoc {
        format: PHASE_LOG_FORMAT.into(),
        phases,
    })
}

pub fn phase_logs_from_str(text: &str, origin: &str) -> Result<Vec<PhaseLog>> {
    let doc: PhaseLogDoc = parse_doc(text, origin)?;
    check_format(&doc.format, PHASE_LOG_FORMAT, text, origin)?;
    doc.phases
        .into_iter()
        .enumerate()
        .map(|(i, p)| {
            let policies = p
                .policies
                .into_iter()
                .enumerate()
                .map(|(j, b)| policy_from_body(b, &format!("phases[{i}].policies[{j}]."), text, origin))
                .collect::<Result<Vec<_>>>()?;
            let counts: Counts = p
                .counts
                .into_iter()
                .map(|c| ((c.h, c.s, c.a, c.next), c.count))
                .collect();
            let log = PhaseLog {
                phase_index: p.phase_index,
                policies,
                assignments: p.assignments,
                trajectories: p.trajectories,
                counts,
            };
            if !log.is_consistent() {
                return Err(parse_error(
                    origin,
                    text,
                    &format!("phases[{i}].counts"),
                    "counts do not match the recorded trajectories",
                ));
            }
            Ok(log)
        })
        .collect()
}

pub fn write_phase_logs(logs: &[PhaseLog], path: impl AsRef<Path>) -> Result<()> {
    write_text(path.as_ref(), &phase_logs_to_string(logs))
}

pub fn read_phase_logs(path: impl AsRef<Path>) -> Result<Vec<PhaseLog>> {
    let path = path.as_ref();
    phase_logs_from_str(&read_text(path)?, &path.display().to_string())
}
