use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Same,
    Different,
    Incomparable,
}

impl Decision {
    pub fn as_str(self) -> &'static str {
        match self {
            Decision::Same => "same",
            Decision::Different => "different",
            Decision::Incomparable => "incomparable",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "same" => Some(Decision::Same),
            "different" => Some(Decision::Different),
            "incomparable" => Some(Decision::Incomparable),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReviewSource {
    Algorithmic,
    Human,
    SimulatedHuman,
}

impl ReviewSource {
    pub fn is_human(self) -> bool {
        !matches!(self, ReviewSource::Algorithmic)
    }
}

/// Who a review request is addressed to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReviewerKind {
    Algorithmic,
    Human,
}

/// One review of one pair, as stored on the edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewDecision {
    pub decision: Decision,
    pub source: ReviewSource,
    /// Verifier probability that the pair is the same animal. Algorithmic only.
    pub confidence: Option<f64>,
    pub contribution: i64,
}

/// Signed weight of an algorithmic review: `round(100 * (2p - 1))`.
pub fn algorithmic_contribution(decision: Decision, p_same: f64) -> i64 {
    match decision {
        Decision::Incomparable => 0,
        Decision::Same | Decision::Different => (100.0 * (2.0 * p_same - 1.0)).round() as i64,
    }
}

pub fn human_contribution(decision: Decision, human_weight: i64) -> i64 {
    match decision {
        Decision::Same => human_weight,
        Decision::Different => -human_weight,
        Decision::Incomparable => 0,
    }
}

/// A queued pair comparison.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewRequest {
    pub request_id: u64,
    /// Lexicographically ordered annotation ids.
    pub pair: (String, String),
    pub reviewer: ReviewerKind,
    /// Number of earlier reviews of this pair by the same kind of reviewer.
    pub attempt: u32,
}

/// The answer to a [`ReviewRequest`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewOutcome {
    pub decision: Decision,
    pub source: ReviewSource,
    pub confidence: Option<f64>,
}

impl ReviewOutcome {
    pub fn algorithmic(decision: Decision, p_same: f64) -> Self {
        Self {
            decision,
            source: ReviewSource::Algorithmic,
            confidence: Some(p_same),
        }
    }

    pub fn human(decision: Decision) -> Self {
        Self {
            decision,
            source: ReviewSource::Human,
            confidence: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReviewPhase {
    Weighting,
    Stability,
}

/// Review log line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewLogEntry {
    pub seq: u64,
    pub request_id: u64,
    pub pair: (String, String),
    pub decision: Decision,
    pub source: ReviewSource,
    pub confidence: Option<f64>,
    pub contribution: i64,
    pub phase: ReviewPhase,
}
