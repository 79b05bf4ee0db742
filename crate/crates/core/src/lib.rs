//! MUD-driven traffic filtering for IoT gateways.
//!
//! This crate implements the full pipeline from a MUD (RFC 8520) document
//! extended with rate-limit actions down to per-packet PASS/DROP verdicts:
//!
//! * [`mud`]: the extended MUD document model and its JSON (de)serialization,
//!   including the `packet-rate` / `byte-rate` action fields.
//! * [`compiler`]: turns a parsed MUD file plus device context into exact-match
//!   flow allowlist rules with per-window limits.
//! * [`datapath`]: the enforcement engine: flow table, packet header parser,
//!   strict-window and token-bucket rate limiters, micro-benchmarks.
//! * [`learner`]: windowed traffic analysis that derives "peaks"/"averages"
//!   rate thresholds from traces.
//! * [`replay`]: trace ingestion (pcap/CSV), address rewriting, virtual-time
//!   replay through the datapath, and drop-rate reports.
//! * [`manager`]: the control plane: MUD fetching, device join/leave handling,
//!   and a fixture HTTP file server for tests.

pub mod compiler;
pub mod datapath;
pub mod flow;
pub mod learner;
pub mod manager;
pub mod mud;
pub mod replay;

pub use flow::{Direction, FlowKey, FlowRule, Protocol};
pub use mud::{MudFile, RateLimit, RatePeriod};
