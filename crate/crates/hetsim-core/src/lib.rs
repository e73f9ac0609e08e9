//! Deterministic subframe-stepped simulator of an LTE-Advanced heterogeneous
//! network downlink.
//!
//! The simulated world is a residential area covered by one macrocell, one
//! range-expanded picocell and a population of closed-subscriber-group (CSG)
//! femtocells. Pedestrian VoIP users walk predefined routes and report channel
//! quality; the macrocell reacts to victim reports by triggering interference
//! coordination actions at the offending femtocell, either a time-domain
//! almost-blank-subframe (ABSF) pattern or one of four downlink power-control
//! policies. The engine advances in 1 ms subframes and is bit-exactly
//! reproducible for a given scenario and seed.
//!
//! Module map:
//! - [`types`]: small shared geometry and identifier types.
//! - [`radio`]: dB/linear arithmetic, path loss, SINR, rate mapping.
//! - [`scenario`]: world description, validation, loading, and the built-in
//!   default scenario generator.
//! - [`association`]: cell selection with CSG restriction and range-expansion
//!   bias, plus handover bookkeeping.
//! - [`eicic`]: ABSF pattern algebra, the four power-control formulas, and
//!   trigger/release machinery.
//! - [`engine`]: the subframe-stepped simulation loop.
//! - [`metrics`]: result accumulation, finalization and CSV output.

pub mod association;
pub mod eicic;
pub mod engine;
pub mod metrics;
pub mod radio;
pub mod scenario;
pub mod types;

pub use engine::{run, RunError, RunOutput, TierMethods};
pub use metrics::{MetricsReport, SinrTrace};
pub use scenario::{load_scenario, ScenarioConfig, ScenarioError};
pub use types::{BuildingId, CellId, Point, Rect, UserId};
