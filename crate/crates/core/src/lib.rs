//! Cooperative multi-agent reward-free exploration for tabular episodic MDPs.
//!
//! The crate covers the MDP model and planning oracles, a phased multi-agent
//! simulator, the layered reachability-gated explorer (MARFE) with its
//! baselines, the key-sequence lower-bound family, and evaluation metrics.

pub mod baselines;
pub mod error;
pub mod estimate;
pub mod eval;
pub mod experiment;
pub mod invariants;
pub mod io;
pub mod keydyn;
pub mod marfe;
pub mod mdp;
pub mod planning;
pub mod rng;
pub mod simulator;

pub use error::{Error, Result, Violation};
pub use estimate::EstimatedDynamics;
pub use marfe::{run_marfe, MarfeConfig, MarfeRun};
pub use mdp::{random_mdp, Dynamics, Policy, RewardFunction, TabularMdp, Trajectory};
pub use planning::{max_reach_policy, occupancy, optimal_policy, policy_value};
pub use rng::RngPlan;
pub use simulator::{run_phase, run_protocol, Explorer, PhaseLog, PhasePlan, ProtocolContext};
