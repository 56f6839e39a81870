//! Reputation recomputed from the chain.
//!
//! score = w_accept * accepted - w_reject * rejected + w_verify * verified

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::ledger::{BlockPayload, Chain, ChainFault};
use crate::tokenomics::NodeId;

pub const UNAFFILIATED: &str = "unaffiliated";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReputationWeights {
    pub w_accept: f64,
    pub w_verify: f64,
    pub w_reject: f64,
}

impl Default for ReputationWeights {
    fn default() -> Self {
        ReputationWeights {
            w_accept: 3.0,
            w_verify: 1.0,
            w_reject: 3.0,
        }
    }
}

impl ReputationWeights {
    pub fn is_valid(&self) -> bool {
        [self.w_accept, self.w_verify, self.w_reject]
            .iter()
            .all(|w| w.is_finite() && *w >= 0.0)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        ReputationWeights {
            w_accept: self.w_accept * factor,
            w_verify: self.w_verify * factor,
            w_reject: self.w_reject * factor,
        }
    }

    pub fn score(&self, c: &Counts) -> f64 {
        self.w_accept * c.accepted as f64 - self.w_reject * c.rejected as f64
            + self.w_verify * c.verified as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Counts {
    pub accepted: u64,
    pub rejected: u64,
    pub verified: u64,
}

impl Counts {
    fn add(&mut self, other: &Counts) {
        self.accepted += other.accepted;
        self.rejected += other.rejected;
        self.verified += other.verified;
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScoreBoard {
    pub scores: BTreeMap<NodeId, f64>,
    pub counts: BTreeMap<NodeId, Counts>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ReputationError {
    #[error("invalid chain: {0}")]
    InvalidChain(ChainFault),
    #[error("reputation weights must be finite and non-negative")]
    InvalidWeights,
}

/// Per-node (accepted, rejected, verified) counts read from decided records.
/// Every genesis node appears, with zero counts if it never acted.
pub fn tally(chain: &Chain) -> BTreeMap<NodeId, Counts> {
    let mut counts: BTreeMap<NodeId, Counts> = BTreeMap::new();
    if let Some(config) = chain.genesis_config() {
        for n in &config.nodes {
            counts.entry(n.id.clone()).or_default();
        }
    }
    for block in chain.blocks() {
        let (record, accepted) = match &block.payload {
            BlockPayload::Acceptance(r) => (r, true),
            BlockPayload::Rejection(r) => (r, false),
            BlockPayload::Genesis(_) | BlockPayload::Expiry(_) => continue,
        };
        let p = counts.entry(record.proponent.clone()).or_default();
        if accepted {
            p.accepted += 1;
        } else {
            p.rejected += 1;
        }
        for report in &record.reports {
            counts.entry(report.verifier.clone()).or_default().verified += 1;
        }
    }
    counts
}

pub fn board_from_counts(counts: BTreeMap<NodeId, Counts>, weights: &ReputationWeights) -> ScoreBoard {
    let scores = counts
        .iter()
        .map(|(id, c)| (id.clone(), weights.score(c)))
        .collect();
    ScoreBoard { scores, counts }
}

pub fn compute_scores(chain: &Chain, weights: &ReputationWeights) -> Result<ScoreBoard, ReputationError> {
    if !weights.is_valid() {
        return Err(ReputationError::InvalidWeights);
    }
    chain.validate().map_err(ReputationError::InvalidChain)?;
    Ok(board_from_counts(tally(chain), weights))
}

/// Descending by score, ties broken by ascending id.
pub fn rank(board: &ScoreBoard) -> Vec<(NodeId, f64)> {
    let mut out: Vec<(NodeId, f64)> = board.scores.iter().map(|(k, v)| (k.clone(), *v)).collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    out
}

/// Scores summed per affiliation; nodes without one fall under
/// [`UNAFFILIATED`]. Counts are summed the same way.
pub fn institution_scores(
    chain: &Chain,
    weights: &ReputationWeights,
) -> Result<ScoreBoard, ReputationError> {
    let nodes = compute_scores(chain, weights)?;
    let config = chain.genesis_config().expect("validated chain has genesis");
    let mut out = ScoreBoard::default();
    for (id, score) in &nodes.scores {
        let key = NodeId::from(config.affiliation_of(id).unwrap_or(UNAFFILIATED));
        *out.scores.entry(key.clone()).or_insert(0.0) += score;
        out.counts.entry(key).or_default().add(&nodes.counts[id]);
    }
    Ok(out)
}
