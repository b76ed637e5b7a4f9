//! Ranking, verification and review interfaces, plus simulated oracles
//! backed by a ground-truth identity map.

use std::collections::{BTreeMap, HashMap};

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lca::{Decision, ReviewOutcome, ReviewRequest, ReviewSource};
use crate::rng::{rng_for, unit_draw};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("oracle has no data for annotation {0:?}")]
    UnknownAnnotation(String),
    #[error("oracle unavailable: {0}")]
    Unavailable(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum ChannelError {
    #[error("review channel closed")]
    Closed,
    #[error("review channel timed out")]
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedCandidate {
    pub annotation_id: String,
    pub score: f64,
}

/// Proposes likely matches for a query annotation.
pub trait Ranker {
    /// At most `k` of `candidates`, best first.
    fn top_k(&self, query: &str, candidates: &[&str], k: usize) -> Result<Vec<RankedCandidate>, OracleError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Verification {
    pub decision: Decision,
    /// Probability that the two annotations show the same animal.
    pub p_same: f64,
}

/// Pairwise verifier. `attempt` counts earlier verifier calls on the pair.
pub trait Verifier {
    fn verify(&self, a: &str, b: &str, attempt: u32) -> Result<Verification, OracleError>;
}

/// Where human review requests go.
pub trait ReviewChannel {
    fn review(&mut self, request: &ReviewRequest) -> Result<ReviewOutcome, ChannelError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimOracleConfig {
    pub seed: u64,
    /// Embedding dimension of the latent features.
    pub dim: usize,
    /// Expected norm of the per-annotation noise added to the unit
    /// individual vector.
    pub feature_noise: f64,
    /// Half-width of the uniform noise added to ranker scores.
    pub ranker_jitter: f64,
    /// Verifier confidence floor: correct calls report `p_same` in
    /// `[band, 1]` for matches and `[0, 1 - band]` for non-matches.
    pub verifier_band: f64,
    /// Probability that a verifier call is wrong.
    pub verifier_flip: f64,
    /// Wrong calls report a strength in `[0.5, flip_band]`, so they carry
    /// less weight than correct ones. Set to `verifier_band` or higher to
    /// make errors as confident as correct calls.
    pub flip_band: f64,
    /// Probability that a verifier call is incomparable.
    pub verifier_abstain: f64,
    /// Probability that a simulated human answers wrongly.
    pub human_error: f64,
    /// Probability that a simulated human answers incomparable.
    pub human_incomparable: f64,
}

impl Default for SimOracleConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            dim: 32,
            feature_noise: 0.3,
            ranker_jitter: 0.05,
            verifier_band: 0.9,
            verifier_flip: 0.0,
            flip_band: 0.8,
            verifier_abstain: 0.0,
            human_error: 0.02,
            human_incomparable: 0.01,
        }
    }
}

impl SimOracleConfig {
    pub fn validate(&self) -> Result<(), (&'static str, String)> {
        let prob = |field: &'static str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err((field, format!("{v} is not a probability")))
            }
        };
        prob("verifier_flip", self.verifier_flip)?;
        prob("verifier_abstain", self.verifier_abstain)?;
        prob("human_error", self.human_error)?;
        prob("human_incomparable", self.human_incomparable)?;
        if self.human_error + self.human_incomparable > 1.0 {
            return Err(("human_error", "human_error + human_incomparable exceeds 1".into()));
        }
        if !(0.5..=1.0).contains(&self.verifier_band) {
            return Err(("verifier_band", format!("{} is outside [0.5, 1]", self.verifier_band)));
        }
        if !(0.5..=1.0).contains(&self.flip_band) {
            return Err(("flip_band", format!("{} is outside [0.5, 1]", self.flip_band)));
        }
        if self.dim == 0 {
            return Err(("dim", "must be positive".into()));
        }
        if !(self.feature_noise >= 0.0 && self.ranker_jitter >= 0.0) {
            return Err(("feature_noise", "noise levels must be non-negative".into()));
        }
        Ok(())
    }
}

/// Ground truth plus synthetic features; implements [`Ranker`] and
/// [`Verifier`]. All randomness is keyed by ids, so answers do not depend
/// on call order.
#[derive(Debug, Clone)]
pub struct SimOracleModel {
    config: SimOracleConfig,
    truth: BTreeMap<String, String>,
    features: HashMap<String, Vec<f64>>,
}

fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

fn sorted_pair<'a>(a: &'a str, b: &'a str) -> (&'a str, &'a str) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

impl SimOracleModel {
    /// `truth` maps annotation id to individual id.
    pub fn new(truth: BTreeMap<String, String>, config: SimOracleConfig) -> Self {
        let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
        let per_dim = config.feature_noise / (config.dim as f64).sqrt();
        let mut centers: HashMap<&str, Vec<f64>> = HashMap::new();
        for ind in truth.values() {
            centers.entry(ind.as_str()).or_insert_with(|| {
                let mut rng = rng_for(config.seed, &["individual", ind]);
                let mut v: Vec<f64> = (0..config.dim).map(|_| std_normal.sample(&mut rng)).collect();
                normalize(&mut v);
                v
            });
        }
        let features = truth
            .iter()
            .map(|(ann, ind)| {
                let mut rng = rng_for(config.seed, &["annotation", ann]);
                let mut v: Vec<f64> = centers[ind.as_str()]
                    .iter()
                    .map(|c| c + per_dim * std_normal.sample(&mut rng))
                    .collect();
                normalize(&mut v);
                (ann.clone(), v)
            })
            .collect();
        Self {
            config,
            truth,
            features,
        }
    }

    pub fn config(&self) -> &SimOracleConfig {
        &self.config
    }

    pub fn truth(&self) -> &BTreeMap<String, String> {
        &self.truth
    }

    pub fn is_same(&self, a: &str, b: &str) -> Result<bool, OracleError> {
        let ia = self.individual(a)?;
        let ib = self.individual(b)?;
        Ok(ia == ib)
    }

    fn individual(&self, id: &str) -> Result<&str, OracleError> {
        self.truth
            .get(id)
            .map(String::as_str)
            .ok_or_else(|| OracleError::UnknownAnnotation(id.to_string()))
    }

    fn feature(&self, id: &str) -> Result<&[f64], OracleError> {
        self.features
            .get(id)
            .map(Vec::as_slice)
            .ok_or_else(|| OracleError::UnknownAnnotation(id.to_string()))
    }

    pub fn similarity(&self, a: &str, b: &str) -> Result<f64, OracleError> {
        let fa = self.feature(a)?;
        let fb = self.feature(b)?;
        Ok(fa.iter().zip(fb).map(|(x, y)| x * y).sum())
    }
}

impl Ranker for SimOracleModel {
    fn top_k(&self, query: &str, candidates: &[&str], k: usize) -> Result<Vec<RankedCandidate>, OracleError> {
        self.feature(query)?;
        let mut scored = Vec::with_capacity(candidates.len());
        for &cand in candidates {
            if cand == query {
                continue;
            }
            let (x, y) = sorted_pair(query, cand);
            let jitter = (2.0 * unit_draw(self.config.seed, &["rank", x, y]) - 1.0) * self.config.ranker_jitter;
            scored.push(RankedCandidate {
                annotation_id: cand.to_string(),
                score: self.similarity(query, cand)? + jitter,
            });
        }
        scored.sort_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then_with(|| a.annotation_id.cmp(&b.annotation_id))
        });
        scored.truncate(k);
        Ok(scored)
    }
}

impl Verifier for SimOracleModel {
    fn verify(&self, a: &str, b: &str, attempt: u32) -> Result<Verification, OracleError> {
        let same = self.is_same(a, b)?;
        let (x, y) = sorted_pair(a, b);
        let attempt = attempt.to_string();
        let draw = |label: &str| unit_draw(self.config.seed, &["verify", label, x, y, &attempt]);
        if draw("abstain") < self.config.verifier_abstain {
            return Ok(Verification {
                decision: Decision::Incomparable,
                p_same: 0.5,
            });
        }
        let flipped = draw("flip") < self.config.verifier_flip;
        let called_same = same != flipped;
        let (lo, hi) = if flipped {
            (0.5, self.config.flip_band)
        } else {
            (self.config.verifier_band, 1.0)
        };
        let strength = lo + (hi - lo) * draw("confidence");
        Ok(if called_same {
            Verification {
                decision: Decision::Same,
                p_same: strength,
            }
        } else {
            Verification {
                decision: Decision::Different,
                p_same: 1.0 - strength,
            }
        })
    }
}

/// Simulated human reviewer answering from ground truth with configurable
/// error and incomparable rates.
#[derive(Debug, Clone)]
pub struct SimHuman<M> {
    model: M,
}

impl<M: AsRef<SimOracleModel>> SimHuman<M> {
    pub fn new(model: M) -> Self {
        Self { model }
    }

    pub fn answer(&self, request: &ReviewRequest) -> Result<Decision, OracleError> {
        let model = self.model.as_ref();
        let cfg = model.config();
        let (a, b) = (&request.pair.0, &request.pair.1);
        let same = model.is_same(a, b)?;
        let (x, y) = sorted_pair(a, b);
        let u = unit_draw(cfg.seed, &["human", x, y, &request.attempt.to_string()]);
        Ok(if u < cfg.human_incomparable {
            Decision::Incomparable
        } else if (u < cfg.human_incomparable + cfg.human_error) != same {
            Decision::Same
        } else {
            Decision::Different
        })
    }
}

impl AsRef<SimOracleModel> for SimOracleModel {
    fn as_ref(&self) -> &SimOracleModel {
        self
    }
}

impl<M: AsRef<SimOracleModel>> ReviewChannel for SimHuman<M> {
    fn review(&mut self, request: &ReviewRequest) -> Result<ReviewOutcome, ChannelError> {
        let decision = self.answer(request).map_err(|_| ChannelError::Closed)?;
        Ok(ReviewOutcome {
            decision,
            source: ReviewSource::SimulatedHuman,
            confidence: None,
        })
    }
}

/// A channel with nobody on the other end.
#[derive(Debug, Clone, Copy, Default)]
pub struct ClosedChannel;

impl ReviewChannel for ClosedChannel {
    fn review(&mut self, _request: &ReviewRequest) -> Result<ReviewOutcome, ChannelError> {
        Err(ChannelError::Closed)
    }
}
