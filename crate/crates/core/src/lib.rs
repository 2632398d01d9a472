//! Zero-shot generation of navigation policies from a single map image.
//!
//! The lab compares two ways of turning a 31x31 nine-room map image into a
//! small goal-conditioned policy network:
//!
//! * **hupa** — a hypernetwork trunk+head that emits the full parameter
//!   vector of the policy MLP, one vector per map.
//! * **embedding** — the same trunk producing a context vector that is
//!   projected into the first layer of a fixed, shared policy MLP.
//!
//! Both are trained by behavioral cloning against shortest-path oracle
//! labels and scored by classification accuracy and the Reachability Ratio
//! (the fraction of open cells from which greedily following the policy
//! reaches the goal).
//!
//! Modules follow the pipeline: [`gridworld`] (maps), [`oracle`] (labels),
//! [`dataset`] (splits and serialization), [`neural`] (tensor ops, autodiff,
//! Adam), [`models`] (the two architectures), [`trainer`] (cloning loop),
//! [`metrics`] (reachability), [`harness`] (CLI and sweeps).

pub mod config;
pub mod dataset;
pub mod gridworld;
pub mod harness;
pub mod metrics;
pub mod models;
pub mod neural;
pub mod oracle;
pub mod par;
pub mod trainer;
pub mod verify;
