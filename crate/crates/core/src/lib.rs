//! Pursuit-evasion simulation of pack-based swarm interception.
//!
//! Four-interceptor packs run a chase → follow → form → engage phase machine:
//! they close on an evasive target, ring it with four rotating formation
//! slots, and then send the nearest member in as striker while the other
//! three hold the ring. An uncoordinated baseline (every interceptor flies
//! predictive pursuit on its own) is included for comparison.
//!
//! * [`kinematics`]: point-mass vehicles with acceleration and speed saturation.
//! * [`target`]: the evasive target's threat-response state machine.
//! * [`pack`]: formation geometry, readiness, striker selection and guidance laws.
//! * [`comms`]: lossy leader broadcasts, dead reckoning and autonomous fallback.
//! * [`coverage`]: escape-probability bounds from interceptor coverage.
//! * [`engine`]: the deterministic trial loop.
//! * [`harness`]: Monte Carlo batches, sweeps and their output files.

pub mod comms;
pub mod coverage;
pub mod engine;
pub mod error;
pub mod harness;
pub mod kinematics;
pub mod pack;
pub mod rng;
pub mod target;

pub use engine::{run_trial, Scenario, Strategy, TrialResult};
pub use error::SimError;
pub use kinematics::{AgentState, MotionLimits, Vec3};
pub use pack::{PackPhase, StrategyParams};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/kinematics.md")]
    mod kinematics {}
    #[doc = include_str!("../../../book/src/target.md")]
    mod target {}
    #[doc = include_str!("../../../book/src/formation.md")]
    mod formation {}
    #[doc = include_str!("../../../book/src/comms.md")]
    mod comms {}
    #[doc = include_str!("../../../book/src/coverage.md")]
    mod coverage {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
