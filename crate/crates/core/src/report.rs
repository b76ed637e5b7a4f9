//! The combined census report and its digest.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ingest::Camera;
use crate::lca::{Clustering, RunResult};
use crate::pipeline::{Encounter, FunnelReport};
use crate::sim::EvalReport;
use crate::stats::{
    capture_summary, estimate, format_percent, individual_stats, strategy_stats, CaptureSummary, Estimator,
    IndividualStats, PopulationEstimate, StrategyStats,
};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub cluster_count: usize,
    pub algorithmic_reviews: usize,
    pub human_reviews: usize,
    pub total_reviews: usize,
    pub automation_rate: f64,
    pub automation_display: String,
    pub score: i64,
    pub converged: bool,
    pub trace_len: usize,
}

impl From<&RunResult> for RunSummary {
    fn from(r: &RunResult) -> Self {
        Self {
            cluster_count: r.cluster_count,
            algorithmic_reviews: r.algorithmic_reviews,
            human_reviews: r.human_reviews,
            total_reviews: r.total_reviews,
            automation_rate: r.automation_rate,
            automation_display: format_percent(r.automation_rate),
            score: r.score,
            converged: r.converged,
            trace_len: r.trace.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateSection {
    pub estimator: Estimator,
    pub capture: Option<CaptureSummary>,
    pub estimate: Option<PopulationEstimate>,
    /// Why no estimate could be made.
    pub error: Option<String>,
}

impl EstimateSection {
    pub fn compute(clustering: &Clustering, events: &BTreeMap<String, u8>, estimator: Estimator) -> Self {
        let capture = match capture_summary(clustering, events) {
            Ok(c) => c,
            Err(e) => {
                return Self {
                    estimator,
                    capture: None,
                    estimate: None,
                    error: Some(e.to_string()),
                }
            }
        };
        let (estimate, error) = match estimate(capture, estimator) {
            Ok(e) => (Some(e), None),
            Err(e) => (None, Some(e.to_string())),
        };
        Self {
            estimator,
            capture: Some(capture),
            estimate,
            error,
        }
    }
}

/// Everything a finished run reports, in a fixed key order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CensusReport {
    pub funnel: FunnelReport,
    pub run: RunSummary,
    pub estimate: Option<EstimateSection>,
    pub individuals: IndividualStats,
    pub strategies: StrategyStats,
    pub evaluation: Option<EvalReport>,
}

impl CensusReport {
    pub fn build(
        funnel: &FunnelReport,
        result: &RunResult,
        encounters: &[Encounter],
        cameras: &[Camera],
        estimate: Option<EstimateSection>,
        evaluation: Option<EvalReport>,
    ) -> Self {
        Self {
            funnel: funnel.clone(),
            run: RunSummary::from(result),
            estimate,
            individuals: individual_stats(&result.clustering, encounters),
            strategies: strategy_stats(&result.clustering, encounters, cameras),
            evaluation,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// SHA-256 of [`CensusReport::to_json`].
    pub fn digest(&self) -> String {
        sha256_hex(self.to_json().as_bytes())
    }
}
