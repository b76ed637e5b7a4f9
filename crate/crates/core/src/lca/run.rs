use serde::{Deserialize, Serialize};

use super::engine::{LcaEngine, TraceEntry};
use super::partition::Clustering;
use super::review::{ReviewOutcome, ReviewerKind};
use super::{LcaConfig, LcaError};
use crate::matchers::{Ranker, ReviewChannel, Verifier};
use crate::stats::automation_rate;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriveOutcome {
    Converged,
    /// The human channel closed or timed out; the engine holds the pending
    /// request and can be resumed.
    Suspended,
    /// The review budget for this call ran out.
    BudgetExhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub clustering: Clustering,
    pub cluster_count: usize,
    pub algorithmic_reviews: usize,
    pub human_reviews: usize,
    pub total_reviews: usize,
    pub automation_rate: f64,
    pub score: i64,
    pub converged: bool,
    pub trace: Vec<TraceEntry>,
}

impl RunResult {
    pub fn from_engine(engine: &LcaEngine) -> Self {
        let algorithmic_reviews = engine.log().iter().filter(|e| !e.source.is_human()).count();
        let human_reviews = engine.log().len() - algorithmic_reviews;
        let clustering = engine.clustering();
        Self {
            cluster_count: clustering.cluster_count(),
            clustering,
            algorithmic_reviews,
            human_reviews,
            total_reviews: engine.log().len(),
            automation_rate: automation_rate(algorithmic_reviews as u64, human_reviews as u64),
            score: engine.score(),
            converged: engine.is_converged() && engine.scoring_converged(),
            trace: engine.trace().to_vec(),
        }
    }
}

/// Answer requests until the engine converges, the channel stops, or
/// `budget` reviews have been submitted.
pub fn drive(
    engine: &mut LcaEngine,
    verifier: &dyn Verifier,
    channel: &mut dyn ReviewChannel,
    budget: Option<usize>,
) -> Result<DriveOutcome, LcaError> {
    let mut submitted = 0;
    loop {
        if budget.is_some_and(|b| submitted >= b) {
            return Ok(DriveOutcome::BudgetExhausted);
        }
        let Some(req) = engine.next_request() else {
            return Ok(DriveOutcome::Converged);
        };
        let outcome = match req.reviewer {
            ReviewerKind::Algorithmic => {
                let v = verifier.verify(&req.pair.0, &req.pair.1, req.attempt)?;
                ReviewOutcome::algorithmic(v.decision, v.p_same)
            }
            ReviewerKind::Human => match channel.review(&req) {
                Ok(o) => o,
                Err(_) => return Ok(DriveOutcome::Suspended),
            },
        };
        engine.submit(req.request_id, outcome)?;
        submitted += 1;
    }
}

/// Build the graph, weight it, and run to convergence or suspension.
pub fn run_lca(
    annotation_ids: Vec<String>,
    ranker: &dyn Ranker,
    verifier: &dyn Verifier,
    channel: &mut dyn ReviewChannel,
    config: LcaConfig,
) -> Result<(LcaEngine, RunResult), LcaError> {
    let mut engine = LcaEngine::new(annotation_ids, config)?;
    engine.init_graph(ranker);
    drive(&mut engine, verifier, channel, None)?;
    let result = RunResult::from_engine(&engine);
    Ok((engine, result))
}
