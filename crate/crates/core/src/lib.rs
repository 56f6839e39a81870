//! Core of a decentralized reproducibility network: hash-chained ledger,
//! probo token accounting, study descriptors, verification and reputation,
//! plus a deterministic network simulator.
//!
//! `no_std` with `alloc`. File formats, IO and the command line live in
//! the `probo` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod canonical;
pub mod hash;
pub mod ledger;
pub mod network;
pub mod ratio;
pub mod reputation;
pub mod simnet;
pub mod studies;
pub mod tokenomics;
pub mod verification;

pub use canonical::{to_canonical_bytes, to_canonical_string, CanonicalError};
pub use hash::{digest, digest_of, HashDigest};
pub use ledger::{Block, BlockPayload, Chain, ChainFault, FaultReason, GenesisConfig, GenesisNode};
pub use network::{Network, NetworkError};
pub use ratio::Ratio;
pub use studies::{OutputTable, StudyDescriptor, ToleranceSpec};
pub use tokenomics::{BankState, EconomicParams, NodeId, Probos};
pub use verification::{Decision, QuorumConfig, VerdictValue};
