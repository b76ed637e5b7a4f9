use std::collections::{BTreeMap, BTreeSet};

use log::warn;
use serde::{Deserialize, Serialize};

use super::graph::{IdentificationGraph, VertexId};
use super::local::{decisive_edges, enumerate_alternatives, local_parts, Alternative, LocalKey};
use super::partition::{partition_score, Clustering, Partition};
use super::review::{
    algorithmic_contribution, human_contribution, Decision, ReviewDecision, ReviewLogEntry,
    ReviewOutcome, ReviewPhase, ReviewRequest, ReviewSource, ReviewerKind,
};
use super::{LcaConfig, LcaError};
use crate::matchers::{Ranker, Verifier};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnginePhase {
    /// Edges still waiting for their first verifier review.
    Weighting,
    /// Scoring done; soliciting reviews for unstable local clusterings.
    Stability,
    Converged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TraceEvent {
    Move { key: LocalKey, delta: i64 },
    Review { request_id: u64, contribution: i64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub step: u64,
    #[serde(flatten)]
    pub event: TraceEvent,
    pub score: i64,
    pub clusters: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubmitResult {
    Applied,
    /// Identical decision for an already consumed request; nothing changed.
    Duplicate,
}

/// Result of re-checking a clustering from scratch.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub local_clusterings: usize,
    /// Local clusterings with a positive-delta alternative.
    pub improvable: Vec<(LocalKey, i64)>,
    /// Local clusterings with margin below the stability margin and at least
    /// one decisive pair that could still be reviewed.
    pub unstable: Vec<(LocalKey, i64)>,
}

impl Certificate {
    pub fn is_valid(&self) -> bool {
        self.improvable.is_empty() && self.unstable.is_empty()
    }
}

/// Resumable LCA state machine.
///
/// Drive it by alternating [`LcaEngine::next_request`] and
/// [`LcaEngine::submit`]. All persistent state serializes, so a run can be
/// snapshotted at any review boundary and resumed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LcaEngine {
    config: LcaConfig,
    graph: IdentificationGraph,
    partition: Partition,
    phase: EnginePhase,
    pending: Option<ReviewRequest>,
    next_request_id: u64,
    log: Vec<ReviewLogEntry>,
    trace: Vec<TraceEntry>,
    score: i64,
    scoring_converged: bool,
    ranker_failures: u32,
    weight_cursor: usize,

    #[serde(skip)]
    cache: BTreeMap<LocalKey, Vec<Alternative>>,
    #[serde(skip)]
    dirty: BTreeSet<VertexId>,
    #[serde(skip)]
    cache_valid: bool,
}

impl PartialEq for LcaEngine {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.graph == other.graph
            && self.partition == other.partition
            && self.phase == other.phase
            && self.pending == other.pending
            && self.next_request_id == other.next_request_id
            && self.log == other.log
            && self.trace == other.trace
            && self.score == other.score
            && self.scoring_converged == other.scoring_converged
            && self.ranker_failures == other.ranker_failures
            && self.weight_cursor == other.weight_cursor
    }
}

impl LcaEngine {
    /// Empty graph with one singleton cluster per annotation.
    pub fn new(annotation_ids: Vec<String>, config: LcaConfig) -> Result<Self, LcaError> {
        let graph = IdentificationGraph::new(annotation_ids)?;
        Self::with_graph(graph, config)
    }

    /// Start from an existing graph. Edges that already carry reviews are
    /// not re-weighted.
    pub fn with_graph(graph: IdentificationGraph, config: LcaConfig) -> Result<Self, LcaError> {
        config.validate()?;
        let partition = Partition::singletons(graph.len());
        let score = partition_score(&graph, &partition);
        Ok(Self {
            config,
            graph,
            partition,
            phase: EnginePhase::Weighting,
            pending: None,
            next_request_id: 0,
            log: Vec::new(),
            trace: Vec::new(),
            score,
            scoring_converged: true,
            ranker_failures: 0,
            weight_cursor: 0,
            cache: BTreeMap::new(),
            dirty: BTreeSet::new(),
            cache_valid: false,
        })
    }

    pub fn config(&self) -> &LcaConfig {
        &self.config
    }

    pub fn graph(&self) -> &IdentificationGraph {
        &self.graph
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn clustering(&self) -> Clustering {
        self.partition.to_clustering(&self.graph)
    }

    pub fn phase(&self) -> EnginePhase {
        self.phase
    }

    pub fn pending(&self) -> Option<&ReviewRequest> {
        self.pending.as_ref()
    }

    pub fn log(&self) -> &[ReviewLogEntry] {
        &self.log
    }

    pub fn trace(&self) -> &[TraceEntry] {
        &self.trace
    }

    /// Running score of the current partition.
    pub fn score(&self) -> i64 {
        self.score
    }

    pub fn scoring_converged(&self) -> bool {
        self.scoring_converged
    }

    pub fn ranker_failures(&self) -> u32 {
        self.ranker_failures
    }

    pub fn is_converged(&self) -> bool {
        self.phase == EnginePhase::Converged
    }

    /// Add edges from every annotation to its top-k ranker candidates.
    /// A failing query contributes no edges.
    pub fn init_graph(&mut self, ranker: &dyn Ranker) {
        let ids = self.graph.ids().to_vec();
        for (qi, query) in ids.iter().enumerate() {
            let candidates: Vec<&str> = ids
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != qi)
                .map(|(_, id)| id.as_str())
                .collect();
            let ranked = match ranker.top_k(query, &candidates, self.config.top_k) {
                Ok(r) => r,
                Err(e) => {
                    warn!("ranker failed for {query}: {e}");
                    self.ranker_failures += 1;
                    continue;
                }
            };
            for cand in ranked.into_iter().take(self.config.top_k) {
                match self.graph.vertex(&cand.annotation_id) {
                    Ok(v) if v as usize != qi => {
                        self.graph
                            .add_edge(qi as VertexId, v)
                            .expect("both endpoints are known and distinct");
                    }
                    _ => warn!("ranker returned invalid candidate {:?} for {query}", cand.annotation_id),
                }
            }
        }
        self.score = partition_score(&self.graph, &self.partition);
        self.cache_valid = false;
    }

    /// Give every unreviewed edge one verifier review.
    pub fn weight_edges(&mut self, verifier: &dyn Verifier) -> Result<(), LcaError> {
        if self.phase != EnginePhase::Weighting {
            return Ok(());
        }
        while let Some(req) = self.pending.clone().or_else(|| self.issue_weighting_request()) {
            let verdict = verifier.verify(&req.pair.0, &req.pair.1, req.attempt)?;
            self.submit(
                req.request_id,
                ReviewOutcome::algorithmic(verdict.decision, verdict.p_same),
            )?;
        }
        Ok(())
    }

    fn issue_weighting_request(&mut self) -> Option<ReviewRequest> {
        let edges = self.graph.edges();
        while self.weight_cursor < edges.len() && !edges[self.weight_cursor].reviews.is_empty() {
            self.weight_cursor += 1;
        }
        (self.weight_cursor < edges.len())
            .then(|| self.issue(self.weight_cursor, ReviewerKind::Algorithmic))
    }

    fn issue(&mut self, edge: usize, reviewer: ReviewerKind) -> ReviewRequest {
        let e = self.graph.edge(edge);
        let attempt = match reviewer {
            ReviewerKind::Algorithmic => e.algorithmic_reviews(),
            ReviewerKind::Human => e.human_reviews(),
        };
        let req = ReviewRequest {
            request_id: self.next_request_id,
            pair: (self.graph.id(e.u).to_string(), self.graph.id(e.v).to_string()),
            reviewer,
            attempt,
        };
        self.next_request_id += 1;
        self.pending = Some(req.clone());
        req
    }

    /// The review the engine needs next, or `None` once converged.
    ///
    /// Repeated calls return the same request until it is answered.
    pub fn next_request(&mut self) -> Option<ReviewRequest> {
        if let Some(p) = &self.pending {
            return Some(p.clone());
        }
        loop {
            match self.phase {
                EnginePhase::Weighting => {
                    if let Some(req) = self.issue_weighting_request() {
                        return Some(req);
                    }
                    self.scoring_phase();
                    self.phase = EnginePhase::Stability;
                }
                EnginePhase::Stability => {
                    self.scoring_phase();
                    return match self.stability_target() {
                        Some((edge, reviewer)) => Some(self.issue(edge, reviewer)),
                        None => {
                            self.phase = EnginePhase::Converged;
                            None
                        }
                    };
                }
                EnginePhase::Converged => return None,
            }
        }
    }

    /// Record the answer to a request.
    pub fn submit(&mut self, request_id: u64, outcome: ReviewOutcome) -> Result<SubmitResult, LcaError> {
        let pending = match &self.pending {
            Some(p) if p.request_id == request_id => p.clone(),
            _ => {
                return match self.log.iter().rev().find(|e| e.request_id == request_id) {
                    Some(entry) if entry.decision == outcome.decision => Ok(SubmitResult::Duplicate),
                    Some(entry) => Err(LcaError::Conflict {
                        request_id,
                        recorded: entry.decision,
                    }),
                    None => Err(LcaError::UnknownRequest(request_id)),
                };
            }
        };
        let source_ok = match pending.reviewer {
            ReviewerKind::Algorithmic => outcome.source == ReviewSource::Algorithmic,
            ReviewerKind::Human => outcome.source.is_human(),
        };
        if !source_ok {
            return Err(LcaError::WrongSource {
                expected: pending.reviewer,
                got: outcome.source,
            });
        }

        let contribution = match outcome.source {
            ReviewSource::Algorithmic => {
                let p = outcome.confidence.unwrap_or(match outcome.decision {
                    Decision::Same => 1.0,
                    Decision::Different => 0.0,
                    Decision::Incomparable => 0.5,
                });
                algorithmic_contribution(outcome.decision, p.clamp(0.0, 1.0))
            }
            _ => human_contribution(outcome.decision, self.config.human_weight),
        };
        let u = self.graph.vertex(&pending.pair.0)?;
        let v = self.graph.vertex(&pending.pair.1)?;
        let idx = self
            .graph
            .edge_between(u, v)
            .ok_or(LcaError::UnknownRequest(request_id))?;
        self.graph.push_review(idx, ReviewDecision {
            decision: outcome.decision,
            source: outcome.source,
            confidence: outcome.confidence,
            contribution,
        });
        self.score += if self.partition.same_cluster(u, v) {
            contribution
        } else {
            -contribution
        };
        self.log.push(ReviewLogEntry {
            seq: self.log.len() as u64,
            request_id,
            pair: pending.pair.clone(),
            decision: outcome.decision,
            source: outcome.source,
            confidence: outcome.confidence,
            contribution,
            phase: match self.phase {
                EnginePhase::Weighting => ReviewPhase::Weighting,
                _ => ReviewPhase::Stability,
            },
        });
        self.pending = None;
        self.dirty.insert(self.partition.cluster_of(u));
        self.dirty.insert(self.partition.cluster_of(v));
        self.push_trace(TraceEvent::Review {
            request_id,
            contribution,
        });
        if self.phase != EnginePhase::Weighting {
            // New evidence can reopen a converged run.
            self.phase = EnginePhase::Stability;
            self.scoring_phase();
        }
        Ok(SubmitResult::Applied)
    }

    fn push_trace(&mut self, event: TraceEvent) {
        self.trace.push(TraceEntry {
            step: self.trace.len() as u64,
            event,
            score: self.score,
            clusters: self.partition.cluster_count(),
        });
    }

    fn compute_local(&self, key: LocalKey) -> Option<Vec<Alternative>> {
        let parts = local_parts(&self.graph, &self.partition, key)?;
        let mut alts = enumerate_alternatives(&self.graph, &parts, self.config.exhaustive_split_max);
        alts.sort_by_key(|a| std::cmp::Reverse(a.delta));
        Some(alts)
    }

    fn refresh(&mut self) {
        if !self.cache_valid {
            self.cache.clear();
            self.dirty = self.partition.clusters().map(|(c, _)| c).collect();
            self.cache_valid = true;
        }
        if self.dirty.is_empty() {
            return;
        }
        let dirty = std::mem::take(&mut self.dirty);
        self.cache
            .retain(|k, _| !k.clusters().iter().any(|c| dirty.contains(c)));
        for &c in &dirty {
            if self.partition.members(c).is_none() {
                continue;
            }
            let mut keys = vec![LocalKey::Single(c)];
            keys.extend(
                self.partition
                    .neighbor_clusters(&self.graph, c)
                    .into_iter()
                    .map(|d| LocalKey::pair(c, d)),
            );
            for key in keys {
                if self.cache.contains_key(&key) {
                    continue;
                }
                if let Some(alts) = self.compute_local(key) {
                    self.cache.insert(key, alts);
                }
            }
        }
    }

    fn best_move(&self) -> Option<(LocalKey, usize)> {
        let mut best: Option<(i64, LocalKey, usize)> = None;
        for (key, alts) in &self.cache {
            if let Some((i, alt)) = alts.iter().enumerate().max_by(|a, b| a.1.delta.cmp(&b.1.delta).then(b.0.cmp(&a.0))) {
                if alt.delta > 0 && best.is_none_or(|(d, _, _)| alt.delta > d) {
                    best = Some((alt.delta, *key, i));
                }
            }
        }
        best.map(|(_, k, i)| (k, i))
    }

    /// Apply best-improving local alternatives until none improves.
    ///
    /// Returns `false` if `max_iterations` moves were made without reaching
    /// a local optimum.
    pub fn scoring_phase(&mut self) -> bool {
        let mut moves = 0u64;
        loop {
            self.refresh();
            let Some((key, idx)) = self.best_move() else {
                self.scoring_converged = true;
                return true;
            };
            if moves >= self.config.max_iterations {
                self.scoring_converged = false;
                return false;
            }
            let alt = self.cache[&key][idx].clone();
            let old = key.clusters();
            let new_ids = self.partition.replace(&old, &alt.parts);
            self.score += alt.delta;
            self.dirty.extend(old);
            self.dirty.extend(new_ids);
            self.push_trace(TraceEvent::Move {
                key,
                delta: alt.delta,
            });
            moves += 1;
        }
    }

    fn reviewer_for(&self, edge: usize) -> Option<ReviewerKind> {
        let e = self.graph.edge(edge);
        if e.algorithmic_reviews() < self.config.max_algo_reviews_per_pair {
            Some(ReviewerKind::Algorithmic)
        } else if e.human_reviews() < self.config.max_human_reviews_per_pair {
            Some(ReviewerKind::Human)
        } else {
            None
        }
    }

    /// Fewest-reviewed decisive pair that can still be reviewed.
    fn review_target(&self, key: LocalKey, alt: &Alternative) -> Option<(usize, ReviewerKind)> {
        let parts = local_parts(&self.graph, &self.partition, key)?;
        decisive_edges(&self.graph, &parts, alt)
            .into_iter()
            .filter_map(|e| self.reviewer_for(e).map(|r| (e, r)))
            .min_by_key(|&(e, _)| {
                let edge = self.graph.edge(e);
                (edge.reviews.len(), edge.u, edge.v)
            })
    }

    /// Unstable local clusterings in ascending margin order; the first one
    /// with a reviewable decisive pair decides the next request.
    fn stability_target(&mut self) -> Option<(usize, ReviewerKind)> {
        self.refresh();
        let tau = self.config.stability_margin;
        let mut candidates: Vec<(i64, LocalKey, usize)> = self
            .cache
            .iter()
            .flat_map(|(k, alts)| {
                alts.iter()
                    .enumerate()
                    .filter(move |(_, a)| -a.delta < tau)
                    .map(move |(i, a)| (-a.delta, *k, i))
            })
            .collect();
        candidates.sort();
        candidates
            .into_iter()
            .find_map(|(_, key, i)| self.review_target(key, &self.cache[&key][i]))
    }

    /// Every current local clustering: each cluster, and each pair of
    /// clusters joined by an edge.
    pub fn local_keys(&self) -> Vec<LocalKey> {
        let mut keys = Vec::new();
        for (c, _) in self.partition.clusters() {
            keys.push(LocalKey::Single(c));
            for d in self.partition.neighbor_clusters(&self.graph, c) {
                if d > c {
                    keys.push(LocalKey::Pair(c, d));
                }
            }
        }
        keys
    }

    /// Re-enumerate all alternatives from scratch and check local
    /// optimality and stability.
    pub fn certify(&self) -> Certificate {
        let tau = self.config.stability_margin;
        let mut cert = Certificate::default();
        for key in self.local_keys() {
            cert.local_clusterings += 1;
            let Some(parts) = local_parts(&self.graph, &self.partition, key) else {
                continue;
            };
            let alts = enumerate_alternatives(&self.graph, &parts, self.config.exhaustive_split_max);
            if let Some(best) = alts.iter().map(|a| a.delta).max() {
                if best > 0 {
                    cert.improvable.push((key, best));
                }
            }
            let unstable = alts
                .iter()
                .filter(|a| -a.delta < tau)
                .filter(|a| self.review_target(key, a).is_some())
                .map(|a| -a.delta)
                .min();
            if let Some(margin) = unstable {
                cert.unstable.push((key, margin));
            }
        }
        cert
    }

    /// Smallest margin over all local clusterings, if any has alternatives.
    pub fn min_margin(&mut self) -> Option<i64> {
        self.refresh();
        self.cache
            .values()
            .filter_map(|alts| alts.first().map(|a| -a.delta))
            .min()
    }
}
