//! Local Clusterings and their Alternatives (LCA).
//!
//! Annotations become vertices of an identification graph. A ranker proposes
//! candidate edges, a verifier weights them, and a local search over
//! single clusters and connected cluster pairs maximises
//! `sum(intra weights) - sum(inter weights)`. The stability phase then asks
//! for more reviews, algorithmic first and human second, until every local
//! clustering beats its alternatives by at least the stability margin.

mod engine;
mod graph;
mod local;
mod partition;
mod review;
mod run;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use engine::{Certificate, EnginePhase, LcaEngine, SubmitResult, TraceEntry, TraceEvent};
pub use graph::{Edge, IdentificationGraph, VertexId};
pub use local::{decisive_edges, enumerate_alternatives, local_parts, Alternative, LocalKey};
pub use partition::{clustering_score, partition_score, Clustering, Partition};
pub use review::{
    algorithmic_contribution, human_contribution, Decision, ReviewDecision, ReviewLogEntry,
    ReviewOutcome, ReviewPhase, ReviewRequest, ReviewSource, ReviewerKind,
};
pub use run::{drive, run_lca, DriveOutcome, RunResult};

use crate::matchers::OracleError;

#[derive(Debug, Error)]
pub enum LcaError {
    #[error("duplicate annotation id {0:?}")]
    DuplicateAnnotation(String),
    #[error("unknown annotation id {0:?}")]
    UnknownAnnotation(String),
    #[error("self-loop on {0:?}")]
    SelfLoop(String),
    #[error("clustering covers {found} annotations, graph has {expected}")]
    IncompleteClustering { expected: usize, found: usize },
    #[error("invalid LCA config: {field}: {reason}")]
    Config { field: &'static str, reason: String },
    #[error("no review request with id {0}")]
    UnknownRequest(u64),
    #[error("request {request_id} was already answered with {recorded:?}")]
    Conflict { request_id: u64, recorded: Decision },
    #[error("request {0} is not pending")]
    NotPending(u64),
    #[error("{got:?} review cannot answer a request addressed to {expected:?}")]
    WrongSource {
        expected: ReviewerKind,
        got: ReviewSource,
    },
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LcaConfig {
    /// Ranker candidates per annotation.
    pub top_k: usize,
    /// Magnitude of one human review.
    pub human_weight: i64,
    /// A local clustering is stable once it beats every alternative by this.
    pub stability_margin: i64,
    pub max_algo_reviews_per_pair: u32,
    pub max_human_reviews_per_pair: u32,
    /// Cap on moves per scoring pass.
    pub max_iterations: u64,
    /// Clusters up to this size get every two-way split enumerated.
    pub exhaustive_split_max: usize,
    pub seed: u64,
}

impl Default for LcaConfig {
    fn default() -> Self {
        Self {
            top_k: 5,
            human_weight: 300,
            stability_margin: 300,
            max_algo_reviews_per_pair: 2,
            max_human_reviews_per_pair: 2,
            max_iterations: 1_000_000,
            exhaustive_split_max: 8,
            seed: 0,
        }
    }
}

impl LcaConfig {
    pub fn validate(&self) -> Result<(), LcaError> {
        let positive = |field: &'static str, ok: bool| {
            if ok {
                Ok(())
            } else {
                Err(LcaError::Config {
                    field,
                    reason: "must be positive".into(),
                })
            }
        };
        positive("top_k", self.top_k > 0)?;
        positive("human_weight", self.human_weight > 0)?;
        positive("stability_margin", self.stability_margin > 0)?;
        positive("max_algo_reviews_per_pair", self.max_algo_reviews_per_pair > 0)?;
        positive("max_human_reviews_per_pair", self.max_human_reviews_per_pair > 0)?;
        positive("max_iterations", self.max_iterations > 0)?;
        if !(2..=16).contains(&self.exhaustive_split_max) {
            return Err(LcaError::Config {
                field: "exhaustive_split_max",
                reason: "must lie in 2..=16".into(),
            });
        }
        if self.stability_margin > 2 * self.human_weight {
            return Err(LcaError::Config {
                field: "stability_margin",
                reason: format!(
                    "{} exceeds twice the human weight {}",
                    self.stability_margin, self.human_weight
                ),
            });
        }
        Ok(())
    }
}
