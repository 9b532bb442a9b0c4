//! Contemporaneous WiFi and access throughput measurement from one home
//! vantage point, and the analysis that turns paired measurements into WiFi
//! bottleneck prevalence and magnitude.
//!
//! - [`probe`]: streaming download test (server, client, arithmetic)
//! - [`agent`]: scheduling daemon that owns the uplink
//! - [`store`]: append-only sample log and HTTP API
//! - [`analysis`]: windowing, vantage points, prevalence statistics
//! - [`synth`]: deterministic synthetic cohorts for desk-scale validation

pub mod agent;
pub mod analysis;
pub mod error;
pub mod probe;
pub mod sample;
pub mod store;
pub mod synth;

pub use error::{Error, Result};
pub use sample::{PathKind, ThroughputSample};
