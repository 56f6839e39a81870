//! Append-only hash-chained ledger.
//!
//! Block `i` stores the digest of block `i - 1`, and its own hash is the
//! SHA-256 of the canonical encoding of `{index, timestamp, prev_hash,
//! payload}`. The genesis block embeds the network configuration, so a
//! chain can be validated and scored without any other input.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::canonical::CanonicalError;
use crate::hash::{self, HashDigest};
use crate::studies::{OutputTable, StudyDescriptor};
use crate::tokenomics::{EconomicParams, NodeId, Probos, Settlement, SettlementKind};
use crate::verification::{QuorumConfig, VerifierReport};

/// One initial account.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenesisNode {
    pub id: NodeId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub affiliation: Option<String>,
    pub balance: Probos,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenesisConfig {
    pub nodes: Vec<GenesisNode>,
    pub economics: EconomicParams,
    pub quorum: QuorumConfig,
    /// Network time horizon in logical time units; a request expires once
    /// `horizon` units have passed since its submission.
    pub horizon: u64,
    /// Logical time units per hour (3600 for Unix seconds, 1 for hourly ticks).
    pub units_per_hour: u64,
}

impl GenesisConfig {
    /// Horizon in whole hours, the bound for a study's ETV.
    pub fn horizon_hours(&self) -> u64 {
        self.horizon / self.units_per_hour.max(1)
    }

    pub fn validate(&self) -> Result<(), LedgerError> {
        let bad = |m: &str| Err(LedgerError::InvalidConfig(m.into()));
        if self.nodes.is_empty() {
            return bad("node list is empty");
        }
        let mut seen = BTreeSet::new();
        for n in &self.nodes {
            if n.id.is_empty() {
                return bad("empty node id");
            }
            if n.affiliation.as_deref() == Some("") {
                return bad("empty affiliation");
            }
            if !seen.insert(&n.id) {
                return Err(LedgerError::InvalidConfig(alloc::format!("duplicate node {}", n.id)));
            }
        }
        if self.economics.min_deposit == 0 {
            return bad("min_deposit must be at least 1");
        }
        if self.economics.verifier_reward == 0 {
            return bad("verifier_reward must be at least 1");
        }
        if !self.quorum.is_valid() {
            return bad("quorum needs min_reports >= 1 and accept_threshold in (0, 1]");
        }
        if self.horizon == 0 || self.units_per_hour == 0 {
            return bad("horizon and units_per_hour must be positive");
        }
        Ok(())
    }

    pub fn affiliation_of(&self, node: &NodeId) -> Option<&str> {
        self.nodes
            .iter()
            .find(|n| &n.id == node)
            .and_then(|n| n.affiliation.as_deref())
    }
}

/// A decided request: accepted or rejected after the quorum reported.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRecord {
    pub request_id: String,
    pub proponent: NodeId,
    pub descriptor: StudyDescriptor,
    /// Proponent's revealed output table.
    pub outputs: OutputTable,
    pub commitment: HashDigest,
    pub reports: Vec<VerifierReport>,
    pub settlement: Settlement,
    pub submitted_at: u64,
    pub deadline: u64,
}

/// A request that reached its deadline short of the quorum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpiryRecord {
    pub request_id: String,
    pub proponent: NodeId,
    pub descriptor: StudyDescriptor,
    pub commitment: HashDigest,
    pub reports: Vec<VerifierReport>,
    pub settlement: Settlement,
    pub submitted_at: u64,
    pub deadline: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum BlockPayload {
    Genesis(GenesisConfig),
    Acceptance(StudyRecord),
    Rejection(StudyRecord),
    Expiry(ExpiryRecord),
}

impl BlockPayload {
    pub fn request_id(&self) -> Option<&str> {
        match self {
            BlockPayload::Genesis(_) => None,
            BlockPayload::Acceptance(r) | BlockPayload::Rejection(r) => Some(&r.request_id),
            BlockPayload::Expiry(r) => Some(&r.request_id),
        }
    }

    /// Check the record-level invariants against the chain's quorum.
    pub fn check(&self, quorum: &QuorumConfig) -> Result<(), String> {
        let min = quorum.min_reports as usize;
        match self {
            BlockPayload::Genesis(_) => Err("genesis payload outside block 0".into()),
            BlockPayload::Acceptance(r) | BlockPayload::Rejection(r) => {
                let expected = if matches!(self, BlockPayload::Acceptance(_)) {
                    SettlementKind::Accepted
                } else {
                    SettlementKind::Rejected
                };
                if r.reports.len() < min {
                    return Err(alloc::format!(
                        "{} verifier reports, quorum needs {}",
                        r.reports.len(),
                        min
                    ));
                }
                check_common(
                    &r.request_id,
                    &r.proponent,
                    &r.descriptor,
                    &r.reports,
                    &r.settlement,
                    expected,
                )
            }
            BlockPayload::Expiry(r) => {
                if r.reports.len() >= min {
                    return Err("expiry record carries a full quorum".into());
                }
                check_common(
                    &r.request_id,
                    &r.proponent,
                    &r.descriptor,
                    &r.reports,
                    &r.settlement,
                    SettlementKind::Expired,
                )
            }
        }
    }
}

fn check_common(
    request_id: &str,
    proponent: &NodeId,
    descriptor: &StudyDescriptor,
    reports: &[VerifierReport],
    settlement: &Settlement,
    kind: SettlementKind,
) -> Result<(), String> {
    if descriptor.request_id != request_id {
        return Err("descriptor request id differs from record".into());
    }
    if &descriptor.proponent != proponent {
        return Err("descriptor proponent differs from record".into());
    }
    if let Some(r) = reports.iter().find(|r| r.request_id != request_id) {
        return Err(alloc::format!("report from {} names another request", r.verifier));
    }
    if reports.iter().any(|r| &r.verifier == proponent) {
        return Err("proponent reported on own request".into());
    }
    if settlement.kind != kind {
        return Err("settlement kind does not match record type".into());
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub index: u64,
    pub timestamp: u64,
    pub prev_hash: HashDigest,
    pub payload: BlockPayload,
    pub block_hash: HashDigest,
}

#[derive(Serialize)]
struct HashedFields<'a> {
    index: u64,
    timestamp: u64,
    prev_hash: &'a HashDigest,
    payload: &'a BlockPayload,
}

impl Block {
    /// Digest of the block's content fields, excluding `block_hash`.
    pub fn compute_hash(&self) -> Result<HashDigest, CanonicalError> {
        compute_hash(self.index, self.timestamp, &self.prev_hash, &self.payload)
    }
}

fn compute_hash(
    index: u64,
    timestamp: u64,
    prev_hash: &HashDigest,
    payload: &BlockPayload,
) -> Result<HashDigest, CanonicalError> {
    hash::digest_of(&HashedFields {
        index,
        timestamp,
        prev_hash,
        payload,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LedgerError {
    #[error("invalid genesis config: {0}")]
    InvalidConfig(String),
    #[error("timestamp {got} precedes the chain tail at {tail}")]
    TimestampRegression { tail: u64, got: u64 },
    #[error("invalid payload: {0}")]
    InvalidPayload(String),
    #[error(transparent)]
    Canonical(#[from] CanonicalError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FaultReason {
    BadGenesis,
    BrokenLink,
    BadHash,
    TimestampRegression,
    InvalidPayload,
}

impl fmt::Display for FaultReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// First invalid block found by [`Chain::validate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChainFault {
    pub index: usize,
    pub reason: FaultReason,
}

impl fmt::Display for ChainFault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid at index {}: {}", self.index, self.reason)
    }
}

/// An ordered list of blocks starting at genesis. Construction through
/// [`Chain::genesis`] and [`Chain::append`] keeps it valid; a chain loaded
/// from outside via [`Chain::from_blocks`] must be checked with
/// [`Chain::validate`].
#[derive(Debug, Clone, PartialEq)]
pub struct Chain {
    blocks: Vec<Block>,
}

impl Chain {
    pub fn genesis(config: GenesisConfig, timestamp: u64) -> Result<Chain, LedgerError> {
        config.validate()?;
        let payload = BlockPayload::Genesis(config);
        let block_hash = compute_hash(0, timestamp, &HashDigest::ZERO, &payload)?;
        Ok(Chain {
            blocks: alloc::vec![Block {
                index: 0,
                timestamp,
                prev_hash: HashDigest::ZERO,
                payload,
                block_hash,
            }],
        })
    }

    /// Wrap blocks without checking them.
    pub fn from_blocks(blocks: Vec<Block>) -> Chain {
        Chain { blocks }
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn into_blocks(self) -> Vec<Block> {
        self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn tail(&self) -> Option<&Block> {
        self.blocks.last()
    }

    pub fn genesis_config(&self) -> Option<&GenesisConfig> {
        match self.blocks.first().map(|b| &b.payload) {
            Some(BlockPayload::Genesis(c)) => Some(c),
            _ => None,
        }
    }

    pub fn find_request(&self, request_id: &str) -> Option<&Block> {
        self.blocks
            .iter()
            .find(|b| b.payload.request_id() == Some(request_id))
    }

    pub fn append(&mut self, payload: BlockPayload, timestamp: u64) -> Result<&Block, LedgerError> {
        let config = self
            .genesis_config()
            .ok_or_else(|| LedgerError::InvalidPayload("chain has no genesis block".into()))?;
        payload.check(&config.quorum).map_err(LedgerError::InvalidPayload)?;
        if let Some(id) = payload.request_id() {
            if self.find_request(id).is_some() {
                return Err(LedgerError::InvalidPayload(alloc::format!(
                    "request {id} is already on chain"
                )));
            }
        }
        let tail = self.blocks.last().expect("genesis present");
        if timestamp < tail.timestamp {
            return Err(LedgerError::TimestampRegression {
                tail: tail.timestamp,
                got: timestamp,
            });
        }
        let index = self.blocks.len() as u64;
        let prev_hash = tail.block_hash;
        let block_hash = compute_hash(index, timestamp, &prev_hash, &payload)?;
        self.blocks.push(Block {
            index,
            timestamp,
            prev_hash,
            payload,
            block_hash,
        });
        Ok(self.blocks.last().expect("just pushed"))
    }

    /// Find the first block that breaks a chain invariant.
    ///
    /// Per block the checks run in this order: genesis shape or link to the
    /// previous block, index, content hash, timestamp order, payload rules.
    pub fn validate(&self) -> Result<(), ChainFault> {
        let fault = |index, reason| Err(ChainFault { index, reason });
        let Some(first) = self.blocks.first() else {
            return fault(0, FaultReason::BadGenesis);
        };
        let config = match &first.payload {
            BlockPayload::Genesis(c) if first.index == 0 && first.prev_hash.is_zero() => c,
            _ => return fault(0, FaultReason::BadGenesis),
        };
        if first.compute_hash().ok() != Some(first.block_hash) {
            return fault(0, FaultReason::BadHash);
        }
        if config.validate().is_err() {
            return fault(0, FaultReason::BadGenesis);
        }

        let mut seen = BTreeSet::new();
        for (i, pair) in self.blocks.windows(2).enumerate() {
            let (prev, block) = (&pair[0], &pair[1]);
            let i = i + 1;
            if block.prev_hash != prev.block_hash || block.index != i as u64 {
                return fault(i, FaultReason::BrokenLink);
            }
            if block.compute_hash().ok() != Some(block.block_hash) {
                return fault(i, FaultReason::BadHash);
            }
            if block.timestamp < prev.timestamp {
                return fault(i, FaultReason::TimestampRegression);
            }
            if block.payload.check(&config.quorum).is_err() {
                return fault(i, FaultReason::InvalidPayload);
            }
            if let Some(id) = block.payload.request_id() {
                if !seen.insert(id) {
                    return fault(i, FaultReason::InvalidPayload);
                }
            }
        }
        Ok(())
    }
}
