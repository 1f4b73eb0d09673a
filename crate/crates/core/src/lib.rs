//! Detection of synchronized user behavior in social-media event data and the
//! Combined Synchronization Index (CSI) built on top of it.
//!
//! Pipeline order: [`ingest`] → [`synchrony`] → [`csi`] → [`graph`] → [`metrics`]
//! → [`bots`], orchestrated by [`report`]. [`simulate`] produces synthetic events
//! with planted coordination for testing.

pub mod bots;
pub mod csi;
pub mod graph;
pub mod ingest;
pub mod metrics;
pub mod report;
pub mod simulate;
pub mod synchrony;
