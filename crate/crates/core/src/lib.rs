//! Deterministic discrete-event simulator of multi-client adaptive streaming
//! over HTTP/2 server push, with a fairness-enforcing proxy.
//!
//! A run wires a bottleneck link, an origin that pushes `k - 1` segments per
//! request, FESTIVE-style clients and a proxy running one of four strategies.
//! Everything observable lands in an [`EventLog`], from which [`metrics`]
//! derives unfairness, stalls, adaptation delay and push accounting.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod client;
pub mod engine;
pub mod error;
pub mod media;
pub mod metrics;
pub mod proxy;
pub mod scenario;
pub mod server;
pub mod sim;

pub use engine::{ClientId, EventKind, EventLog, SimEvent};
pub use error::{Result, SimError};
pub use media::{fair_bitrate, segment_size, BitrateLadder, Kbps, SegmentPayload, SegmentRef};
pub use metrics::{MetricsReport, MetricsSpec};
pub use proxy::{estimate_buffer, fair_share, should_overwrite, ProxyState, Strategy};
pub use scenario::{load_scenario, run_batch, run_once, RunOutcome, ScenarioConfig};
pub use server::{serve_request, PushPolicy};
