//! CrowdCharge: a discrete-time simulator and planning library for
//! crowdsourced wireless IoT energy sharing.
//!
//! People carrying IoT devices congregate in *microcells* (coffee shops,
//! libraries, food courts). Devices with spare battery advertise energy
//! services; devices running low issue energy requests; a coordinator
//! composes services to fulfill each request over wireless power transfer.
//! This crate models that world on a 5-minute day grid and implements three
//! request-generation policies on top of a shared transfer engine:
//!
//! - **reactive** — request at the moment the battery crosses a threshold,
//!   in whatever microcell the consumer happens to be;
//! - **proactive** — mine mobility patterns and usage behavior, estimate
//!   per-microcell energy availability ahead of time, and plan when, where
//!   and how much to request (exploiting per-stay flexibility);
//! - **bruteforce** — request the outstanding deficit in every visited
//!   microcell.
//!
//! # Layout
//!
//! - [`model`] — core domain types: time grid, microcells, patterns, QoS,
//!   services, requests, flexibility.
//! - [`patterns`] — mining mobility/usage patterns from daily traces, SoC
//!   forecasting, provider surplus.
//! - [`graph`] — the mobility graph with per-slot expected supply and demand.
//! - [`composition`] — proactive service/request generation, consumer day
//!   planning, spatio-temporal composition, the two baselines.
//! - [`sim`] — the discrete-time engine: mobility realization, transfers,
//!   the conservation ledger.
//! - [`scenario`] — synthetic scenario generation and versioned JSON I/O.
//! - [`report`] — run metrics, the ratio sweep harness, CSV/Markdown/SVG.
//!
//! # Example
//!
//! ```
//! use crowdcharge::scenario::{generate_scenario, ScenarioConfig};
//! use crowdcharge::sim::{run, Policy};
//!
//! let config = ScenarioConfig { users: 30, microcells: 4, ..Default::default() };
//! let scenario = generate_scenario(&config).unwrap();
//! let report = run(&scenario, Policy::Proactive, 7).unwrap();
//! assert!(report.success_ratio >= 0.0 && report.success_ratio <= 1.0);
//! ```
//!
//! Runnable walkthroughs live in `examples/`; see the README for the list
//! and for the `crowdcharge` command-line harness.

pub mod composition;
pub mod error;
pub mod graph;
pub mod model;
pub mod patterns;
pub mod report;
pub mod scenario;
pub mod sim;

mod seeds;

pub use error::{Error, Result};
pub use model::{
    CellId, DeviceProfile, EnergyRequest, Flexibility, Location, Microcell, MobilityPattern,
    ProactiveEnergyService, QoS, RequestId, RequestOrigin, ServiceId, Stay, TimeGrid,
    UsageBehavior, UserId, Validate,
};
pub use report::{RunReport, SweepRow};
pub use scenario::{Scenario, ScenarioConfig};
pub use sim::Policy;
