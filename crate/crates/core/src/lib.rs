//! Camera-trap re-identification census: ingest, filtering funnel, LCA
//! clustering with algorithmic and human review, population estimates and
//! a simulation harness.

pub mod config;
pub mod ingest;
pub mod lca;
pub mod matchers;
pub mod pipeline;
pub mod report;
pub mod rng;
pub mod sim;
pub mod state;
pub mod stats;
