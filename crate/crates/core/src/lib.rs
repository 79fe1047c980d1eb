//! Committee-sampled asynchronous Byzantine agreement, simulated.
//!
//! The crate bundles:
//!
//! * [`params`] — derived protocol constants and every closed-form bound
//!   (thresholds, success rates, sampling tail exponents);
//! * [`crypto`] — ideal-functionality VRF, signature, and committee-sampling
//!   oracles, deterministic per trial seed;
//! * [`coin`] / [`whp_coin`] — the all-to-all shared coin and its
//!   committee-based variant;
//! * [`approver`] — the INIT/ECHO/OK graded broadcast;
//! * [`agreement`] — the binary agreement round loop on top of the two;
//! * [`sim`] — a deterministic discrete-event network with a pluggable
//!   delayed-adaptive scheduling adversary and exact word/duration
//!   accounting;
//! * [`harness`] — seeded campaigns, sampling-property validation,
//!   complexity fits, trace replay.

pub mod agreement;
pub mod approver;
pub mod coin;
pub mod crypto;
pub mod harness;
pub mod machine;
pub mod params;
pub mod sim;
pub mod whp_coin;
pub mod wire;

pub use crypto::{setup_registry, Registry};
pub use params::{derive_params, Parameters};
pub use sim::{run_trial, Protocol, TrialConfig};
