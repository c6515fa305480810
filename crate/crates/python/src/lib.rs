//! Python bindings for the marfe core library.

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use marfe_core::baselines::{run_naive, run_uniform, NaiveConfig};
use marfe_core::eval::{confidence_radius, reward_batch, reward_free_gap, LabeledReward};
use marfe_core::experiment::bound_calculator;
use marfe_core::keydyn::{make_key_dynamics, survivor_experiment, KeySource};
use marfe_core::marfe::{default_beta, MarfeConfig};
use marfe_core::mdp::validate_mdp;
use marfe_core::{baselines::UniformExplorer, io, planning, Dynamics, Error};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        Error::Protocol(_) | Error::AgentDeficit { .. } => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// Splits a flat tensor into nested lists of the given shape.
fn nest(flat: &[f64], dims: &[usize]) -> Vec<Vec<Vec<Vec<f64>>>> {
    let mut rows = flat.chunks(dims[3]).map(<[f64]>::to_vec);
    (0..dims[0])
        .map(|_| {
            (0..dims[1])
                .map(|_| (0..dims[2]).map(|_| rows.next().unwrap_or_default()).collect())
                .collect()
        })
        .collect()
}

/// Ground-truth tabular episodic MDP.
#[pyclass(name = "TabularMdp", frozen)]
struct PyMdp {
    inner: marfe_core::TabularMdp,
}

#[pymethods]
impl PyMdp {
    /// Flat `(h, s, a, s')` probabilities.
    #[new]
    #[pyo3(signature = (states, actions, horizon, probs, initial_state = 0))]
    fn new(states: usize, actions: usize, horizon: usize, probs: Vec<f64>, initial_state: usize) -> PyResult<Self> {
        let inner = marfe_core::TabularMdp::new(states, actions, horizon, initial_state, probs).map_err(py_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    #[pyo3(signature = (states, actions, horizon, seed = 0, concentration = 1.0))]
    fn random(states: usize, actions: usize, horizon: usize, seed: u64, concentration: f64) -> PyResult<Self> {
        let inner = marfe_core::random_mdp(states, actions, horizon, seed, concentration).map_err(py_err)?;
        Ok(Self { inner })
    }

    /// Key dynamics with the given action sequence as the key.
    #[staticmethod]
    fn key_dynamics(horizon: usize, actions: usize, key: Vec<usize>) -> PyResult<Self> {
        let inner = make_key_dynamics(horizon, actions, &key).map_err(py_err)?.mdp;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: io::read_mdp(path).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: io::mdp_from_str(text, "<string>").map_err(py_err)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        io::write_mdp(&self.inner, path).map_err(py_err)
    }

    fn to_json(&self) -> String {
        io::mdp_to_string(&self.inner)
    }

    #[getter]
    fn states(&self) -> usize {
        self.inner.num_states()
    }

    #[getter]
    fn actions(&self) -> usize {
        self.inner.num_actions()
    }

    #[getter]
    fn horizon(&self) -> usize {
        self.inner.horizon()
    }

    #[getter]
    fn initial_state(&self) -> usize {
        self.inner.initial_state()
    }

    fn prob(&self, h: usize, s: usize, a: usize, next: usize) -> PyResult<f64> {
        let (s_n, a_n, h_n) = (self.inner.num_states(), self.inner.num_actions(), self.inner.horizon());
        if h >= h_n || s >= s_n || a >= a_n || next >= s_n {
            return Err(PyValueError::new_err("index out of range"));
        }
        Ok(self.inner.prob(h, s, a, next))
    }

    /// Nested `[h][s][a][s']` probabilities.
    fn transitions(&self) -> Vec<Vec<Vec<Vec<f64>>>> {
        let (s_n, a_n, h_n) = (self.inner.num_states(), self.inner.num_actions(), self.inner.horizon());
        nest(self.inner.kernel().as_slice(), &[h_n, s_n, a_n, s_n])
    }

    /// Invariant violations, empty when the MDP is valid.
    fn validate(&self) -> Vec<String> {
        validate_mdp(&self.inner).iter().map(ToString::to_string).collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "TabularMdp(states={}, actions={}, horizon={})",
            self.inner.num_states(),
            self.inner.num_actions(),
            self.inner.horizon()
        )
    }
}

/// Deterministic reward tensor with entries in [0, 1].
#[pyclass(name = "RewardFunction", frozen)]
struct PyReward {
    inner: marfe_core::RewardFunction,
}

#[pymethods]
impl PyReward {
    /// Flat `(h, s, a)` rewards.
    #[new]
    fn new(states: usize, actions: usize, horizon: usize, rewards: Vec<f64>) -> PyResult<Self> {
        let inner = marfe_core::RewardFunction::new(states, actions, horizon, rewards).map_err(py_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    #[pyo3(signature = (states, actions, horizon, seed = 0))]
    fn random(states: usize, actions: usize, horizon: usize, seed: u64) -> Self {
        let inner = reward_batch(states, actions, horizon, 1, seed).remove(0).reward;
        Self { inner }
    }

    fn get(&self, h: usize, s: usize, a: usize) -> f64 {
        self.inner.get(h, s, a)
    }

    fn to_json(&self) -> String {
        io::reward_to_string(&self.inner)
    }
}

/// Markov policy, deterministic or stochastic.
#[pyclass(name = "Policy", frozen)]
struct PyPolicy {
    inner: marfe_core::Policy,
}

#[pymethods]
impl PyPolicy {
    /// Flat `(h, s)` action table.
    #[staticmethod]
    fn deterministic(states: usize, actions: usize, horizon: usize, table: Vec<usize>) -> PyResult<Self> {
        let inner = marfe_core::Policy::deterministic(states, actions, horizon, table).map_err(py_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn uniform(states: usize, actions: usize, horizon: usize) -> Self {
        Self {
            inner: marfe_core::Policy::uniform(states, actions, horizon),
        }
    }

    fn prob(&self, h: usize, s: usize, a: usize) -> f64 {
        self.inner.prob(h, s, a)
    }

    /// Action at `(h, s)` for deterministic policies, else `None`.
    fn action(&self, h: usize, s: usize) -> Option<usize> {
        self.inner.action(h, s)
    }

    fn to_json(&self) -> String {
        io::policy_to_string(&self.inner)
    }
}

/// Sink-augmented learned dynamics; the sink is state index `states`.
#[pyclass(name = "EstimatedDynamics", frozen)]
struct PyEstimate {
    inner: marfe_core::EstimatedDynamics,
}

#[pymethods]
impl PyEstimate {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: io::read_estimate(path).map_err(py_err)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        io::write_estimate(&self.inner, path).map_err(py_err)
    }

    fn to_json(&self) -> String {
        io::estimate_to_string(&self.inner)
    }

    #[getter]
    fn sink(&self) -> usize {
        self.inner.sink_index()
    }

    #[getter]
    fn beta(&self) -> Option<f64> {
        self.inner.beta()
    }

    fn active_sets(&self) -> Vec<Vec<usize>> {
        self.inner.active_sets().to_vec()
    }

    fn prob(&self, h: usize, s: usize, a: usize, next: usize) -> PyResult<f64> {
        let n = self.inner.sink_index() + 1;
        if h >= self.inner.horizon() || s >= n || a >= self.inner.num_actions() || next >= n {
            return Err(PyValueError::new_err("index out of range"));
        }
        Ok(self.inner.prob(h, s, a, next))
    }

    fn visits(&self, h: usize, s: usize, a: usize) -> u64 {
        self.inner.visits(h, s, a)
    }

    fn matches_exactly(&self, mdp: &PyMdp) -> bool {
        self.inner.matches_exactly(&mdp.inner)
    }
}

/// Optimal value and policy of `reward` under the true dynamics.
#[pyfunction]
fn optimal_policy(mdp: &PyMdp, reward: &PyReward) -> PyResult<(f64, PyPolicy)> {
    let r = planning::optimal_policy(&mdp.inner, &reward.inner).map_err(py_err)?;
    Ok((r.value, PyPolicy { inner: r.policy }))
}

#[pyfunction]
fn policy_value(policy: &PyPolicy, mdp: &PyMdp, reward: &PyReward) -> PyResult<f64> {
    planning::policy_value(&policy.inner, &mdp.inner, &reward.inner).map_err(py_err)
}

/// Occupancy `q_h(s)` as a list over `h = 0..=H`.
#[pyfunction]
fn occupancy(policy: &PyPolicy, mdp: &PyMdp) -> PyResult<Vec<Vec<f64>>> {
    let q = planning::occupancy(&policy.inner, &mdp.inner).map_err(py_err)?;
    Ok((0..=q.horizon()).map(|h| q.step(h).to_vec()).collect())
}

/// Runs MARFE for `H` phases; `beta` defaults to `epsilon / (2 H^2 S)`.
#[pyfunction]
#[pyo3(signature = (mdp, m, epsilon = None, beta = None, delta = 0.1, seed = 0))]
fn run_marfe(
    py: Python<'_>,
    mdp: &PyMdp,
    m: usize,
    epsilon: Option<f64>,
    beta: Option<f64>,
    delta: f64,
    seed: u64,
) -> PyResult<PyEstimate> {
    let beta = match (beta, epsilon) {
        (Some(b), _) => b,
        (None, Some(e)) => default_beta(e, mdp.inner.num_states(), mdp.inner.horizon()),
        (None, None) => return Err(PyValueError::new_err("give epsilon or beta")),
    };
    let cfg = MarfeConfig {
        agents: m,
        beta,
        delta,
        seed,
    };
    let run = py
        .detach(|| marfe_core::run_marfe(&mdp.inner, &cfg))
        .map_err(py_err)?;
    Ok(PyEstimate { inner: run.estimate })
}

#[pyfunction]
#[pyo3(signature = (mdp, m, threshold, seed = 0))]
fn run_naive_baseline(py: Python<'_>, mdp: &PyMdp, m: usize, threshold: u64, seed: u64) -> PyResult<PyEstimate> {
    let cfg = NaiveConfig {
        agents: m,
        count_threshold: threshold,
        seed,
    };
    let run = py.detach(|| run_naive(&mdp.inner, &cfg)).map_err(py_err)?;
    Ok(PyEstimate { inner: run.estimate })
}

#[pyfunction]
#[pyo3(signature = (mdp, m, phases, seed = 0))]
fn run_uniform_baseline(py: Python<'_>, mdp: &PyMdp, m: usize, phases: usize, seed: u64) -> PyResult<PyEstimate> {
    let run = py.detach(|| run_uniform(&mdp.inner, m, phases, seed)).map_err(py_err)?;
    Ok(PyEstimate { inner: run.estimate })
}

/// Reward-free gaps over a seeded batch of random rewards plus three
/// structured ones. Returns a dict with `labels`, `gaps`, `max_gap`, `mean_gap`.
#[pyfunction]
#[pyo3(signature = (mdp, estimate, rewards = 100, seed = 0))]
fn gap_report<'py>(
    py: Python<'py>,
    mdp: &PyMdp,
    estimate: &PyEstimate,
    rewards: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let (s_n, a_n, h_n) = (mdp.inner.num_states(), mdp.inner.num_actions(), mdp.inner.horizon());
    let batch: Vec<LabeledReward> = reward_batch(s_n, a_n, h_n, rewards, seed);
    let rep = reward_free_gap(&mdp.inner, &estimate.inner, &batch).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("labels", rep.labels)?;
    d.set_item("gaps", rep.gaps)?;
    d.set_item("max_gap", rep.max_gap)?;
    d.set_item("mean_gap", rep.mean_gap)?;
    Ok(d)
}

/// Sufficient agent bound, `beta`, `alpha` and the desk-scale recommendation.
#[pyfunction]
#[pyo3(signature = (states, actions, horizon, epsilon, delta = 0.1))]
fn bound<'py>(
    py: Python<'py>,
    states: usize,
    actions: usize,
    horizon: usize,
    epsilon: f64,
    delta: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let b = bound_calculator(states, actions, horizon, epsilon, delta).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("beta", b.beta)?;
    d.set_item("alpha", b.alpha)?;
    d.set_item("sufficient_m", b.sufficient.agents)?;
    d.set_item("delta_prime", b.sufficient.delta_prime)?;
    d.set_item("desk_m", b.desk_agents)?;
    Ok(d)
}

#[pyfunction(name = "confidence_radius")]
fn py_confidence_radius(n: u64, states: usize, delta: f64) -> PyResult<f64> {
    confidence_radius(n, states, delta).map_err(py_err)
}

/// Mean number of agents still in the key state at each step, over all
/// `A^H` keys, for one phase of `m` uniform agents.
#[pyfunction]
#[pyo3(signature = (actions, horizon, m, seed = 0))]
fn survivor_means(py: Python<'_>, actions: usize, horizon: usize, m: usize, seed: u64) -> PyResult<Vec<f64>> {
    let curve = py
        .detach(|| {
            survivor_experiment(|| Box::new(UniformExplorer), horizon, actions, 1, m, KeySource::Exhaustive, seed)
        })
        .map_err(py_err)?;
    Ok((0..=horizon).map(|h| curve.mean(0, h)).collect())
}

#[pymodule]
fn marfe(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMdp>()?;
    m.add_class::<PyReward>()?;
    m.add_class::<PyPolicy>()?;
    m.add_class::<PyEstimate>()?;
    m.add_function(wrap_pyfunction!(optimal_policy, m)?)?;
    m.add_function(wrap_pyfunction!(policy_value, m)?)?;
    m.add_function(wrap_pyfunction!(occupancy, m)?)?;
    m.add_function(wrap_pyfunction!(run_marfe, m)?)?;
    m.add_function(wrap_pyfunction!(run_naive_baseline, m)?)?;
    m.add_function(wrap_pyfunction!(run_uniform_baseline, m)?)?;
    m.add_function(wrap_pyfunction!(gap_report, m)?)?;
    m.add_function(wrap_pyfunction!(bound, m)?)?;
    m.add_function(wrap_pyfunction!(py_confidence_radius, m)?)?;
    m.add_function(wrap_pyfunction!(survivor_means, m)?)?;
    Ok(())
}
