//! Accounts, supply accounting and the escrow contract behind every request.
//!
//! Balances are integer probos. The bank keeps one conservation law at all
//! times: the sum of account balances plus the deposits held in open
//! escrows equals the genesis supply plus everything minted since.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::ratio::Ratio;

/// Persistent researcher or institution identifier (ORCID-like, opaque).
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(String);

impl NodeId {
    pub fn new(id: impl Into<String>) -> Self {
        NodeId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

impl From<&str> for NodeId {
    fn from(s: &str) -> Self {
        NodeId(s.into())
    }
}

/// Amount of probos. Probos are indivisible.
pub type Probos = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EconomicParams {
    pub min_deposit: Probos,
    /// Minted per verifier when a request is accepted.
    pub verifier_reward: Probos,
}

impl EconomicParams {
    pub fn is_valid(&self) -> bool {
        self.min_deposit >= 1 && self.verifier_reward >= 1
    }

    /// `min_deposit / verifier_reward`, the knob that drives supply growth.
    pub fn deposit_reward_ratio(&self) -> Option<Ratio> {
        Ratio::new(self.min_deposit, self.verifier_reward)
    }
}

impl Default for EconomicParams {
    fn default() -> Self {
        EconomicParams {
            min_deposit: 10,
            verifier_reward: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EscrowState {
    Open,
    SettledAccepted,
    SettledRejected,
    SettledExpired,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EscrowContract {
    pub request_id: String,
    pub proponent: NodeId,
    pub deposit: Probos,
    pub state: EscrowState,
    pub opened_at: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub settled_at: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SettlementKind {
    Accepted,
    Rejected,
    Expired,
}

impl SettlementKind {
    fn escrow_state(self) -> EscrowState {
        match self {
            SettlementKind::Accepted => EscrowState::SettledAccepted,
            SettlementKind::Rejected => EscrowState::SettledRejected,
            SettlementKind::Expired => EscrowState::SettledExpired,
        }
    }
}

/// Money movements produced by closing one escrow.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Settlement {
    pub kind: SettlementKind,
    pub refunds: BTreeMap<NodeId, Probos>,
    pub rewards_minted: BTreeMap<NodeId, Probos>,
    pub forfeits_distributed: BTreeMap<NodeId, Probos>,
}

impl Settlement {
    pub fn minted(&self) -> Probos {
        self.rewards_minted.values().sum()
    }

    /// Net change for `node` caused by this settlement alone.
    pub fn credit_to(&self, node: &NodeId) -> Probos {
        [&self.refunds, &self.rewards_minted, &self.forfeits_distributed]
            .iter()
            .filter_map(|m| m.get(node))
            .sum()
    }

    /// Checks the per-kind shape of a settlement against its escrow.
    pub fn is_consistent(&self, proponent: &NodeId, deposit: Probos) -> bool {
        let refunded_in_full =
            self.refunds.len() == 1 && self.refunds.get(proponent) == Some(&deposit);
        match self.kind {
            SettlementKind::Accepted => refunded_in_full && self.forfeits_distributed.is_empty(),
            SettlementKind::Rejected => {
                self.rewards_minted.is_empty()
                    && self.refunds.is_empty()
                    && self.forfeits_distributed.values().sum::<Probos>() == deposit
            }
            SettlementKind::Expired => {
                refunded_in_full
                    && self.rewards_minted.is_empty()
                    && self.forfeits_distributed.is_empty()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BankError {
    #[error("account {0} already exists")]
    DuplicateAccount(NodeId),
    #[error("cannot mint {0} probos into a new account after genesis")]
    PostGenesisMint(Probos),
    #[error("unknown account {0}")]
    UnknownAccount(NodeId),
    #[error("insufficient funds: {account} holds {balance}, needs {needed}")]
    InsufficientFunds {
        account: NodeId,
        balance: Probos,
        needed: Probos,
    },
    #[error("amount must be at least 1")]
    ZeroAmount,
    #[error("deposit below minimum: {deposit} < {min_deposit}")]
    DepositBelowMinimum { deposit: Probos, min_deposit: Probos },
    #[error("duplicate request {0}")]
    DuplicateRequest(String),
    #[error("unknown escrow {0}")]
    UnknownEscrow(String),
    #[error("escrow {0} is already settled")]
    AlreadySettled(String),
    #[error("accepted or rejected settlement needs at least one verifier")]
    EmptyVerifierSet,
    #[error("balance overflow")]
    Overflow,
}

/// Conservation audit failure; carries both sides of the identity.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("conservation violated: held {held}, issued {issued}")]
pub struct ConservationViolation {
    pub held: u128,
    pub issued: u128,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BankState {
    params: EconomicParams,
    accounts: BTreeMap<NodeId, Probos>,
    escrows: BTreeMap<String, EscrowContract>,
    total_minted: Probos,
    genesis_supply: Probos,
    sealed: bool,
}

impl BankState {
    /// Empty, unsealed bank. Accounts created before [`BankState::seal`]
    /// count towards the genesis supply.
    pub fn new(params: EconomicParams) -> Self {
        BankState {
            params,
            accounts: BTreeMap::new(),
            escrows: BTreeMap::new(),
            total_minted: 0,
            genesis_supply: 0,
            sealed: false,
        }
    }

    pub fn seal(&mut self) {
        self.sealed = true;
    }

    pub fn is_sealed(&self) -> bool {
        self.sealed
    }

    pub fn params(&self) -> &EconomicParams {
        &self.params
    }

    pub fn balance(&self, node: &NodeId) -> Option<Probos> {
        self.accounts.get(node).copied()
    }

    pub fn accounts(&self) -> &BTreeMap<NodeId, Probos> {
        &self.accounts
    }

    pub fn escrow(&self, request_id: &str) -> Option<&EscrowContract> {
        self.escrows.get(request_id)
    }

    pub fn escrows(&self) -> &BTreeMap<String, EscrowContract> {
        &self.escrows
    }

    pub fn total_minted(&self) -> Probos {
        self.total_minted
    }

    pub fn genesis_supply(&self) -> Probos {
        self.genesis_supply
    }

    /// Genesis supply plus everything minted since.
    pub fn total_supply(&self) -> Probos {
        self.genesis_supply + self.total_minted
    }

    pub fn open_deposits(&self) -> u128 {
        self.escrows
            .values()
            .filter(|e| e.state == EscrowState::Open)
            .map(|e| e.deposit as u128)
            .sum()
    }

    pub fn audit(&self) -> Result<(), ConservationViolation> {
        let held = self.accounts.values().map(|&b| b as u128).sum::<u128>() + self.open_deposits();
        let issued = self.genesis_supply as u128 + self.total_minted as u128;
        if held == issued {
            Ok(())
        } else {
            Err(ConservationViolation { held, issued })
        }
    }

    pub fn create_account(&mut self, node: NodeId, initial: Probos) -> Result<(), BankError> {
        if self.accounts.contains_key(&node) {
            return Err(BankError::DuplicateAccount(node));
        }
        if self.sealed && initial > 0 {
            return Err(BankError::PostGenesisMint(initial));
        }
        let supply = self.genesis_supply.checked_add(initial).ok_or(BankError::Overflow)?;
        self.genesis_supply = supply;
        self.accounts.insert(node, initial);
        Ok(())
    }

    pub fn transfer(&mut self, from: &NodeId, to: &NodeId, amount: Probos) -> Result<(), BankError> {
        if amount == 0 {
            return Err(BankError::ZeroAmount);
        }
        let from_balance = self.require(from)?;
        let to_balance = self.require(to)?;
        if from_balance < amount {
            return Err(BankError::InsufficientFunds {
                account: from.clone(),
                balance: from_balance,
                needed: amount,
            });
        }
        if from != to {
            to_balance.checked_add(amount).ok_or(BankError::Overflow)?;
            *self.accounts.get_mut(from).expect("checked") -= amount;
            *self.accounts.get_mut(to).expect("checked") += amount;
        }
        Ok(())
    }

    pub fn open_escrow(
        &mut self,
        proponent: &NodeId,
        deposit: Probos,
        request_id: &str,
        now: u64,
    ) -> Result<&EscrowContract, BankError> {
        let balance = self.require(proponent)?;
        if self.escrows.contains_key(request_id) {
            return Err(BankError::DuplicateRequest(request_id.into()));
        }
        if deposit < self.params.min_deposit {
            return Err(BankError::DepositBelowMinimum {
                deposit,
                min_deposit: self.params.min_deposit,
            });
        }
        if balance < deposit {
            return Err(BankError::InsufficientFunds {
                account: proponent.clone(),
                balance,
                needed: deposit,
            });
        }
        *self.accounts.get_mut(proponent).expect("checked") -= deposit;
        let contract = EscrowContract {
            request_id: request_id.into(),
            proponent: proponent.clone(),
            deposit,
            state: EscrowState::Open,
            opened_at: now,
            settled_at: None,
        };
        Ok(self.escrows.entry(request_id.into()).or_insert(contract))
    }

    /// Close an open escrow.
    ///
    /// Accepted refunds the deposit and mints `verifier_reward` for every
    /// verifier. Rejected splits the deposit among the verifiers in the
    /// order their reports arrived. Expired refunds the deposit.
    pub fn settle(
        &mut self,
        request_id: &str,
        kind: SettlementKind,
        verifiers: &[NodeId],
        now: u64,
    ) -> Result<Settlement, BankError> {
        let escrow = self
            .escrows
            .get(request_id)
            .ok_or_else(|| BankError::UnknownEscrow(request_id.into()))?;
        if escrow.state != EscrowState::Open {
            return Err(BankError::AlreadySettled(request_id.into()));
        }
        if kind != SettlementKind::Expired && verifiers.is_empty() {
            return Err(BankError::EmptyVerifierSet);
        }
        for v in verifiers {
            self.require(v)?;
        }
        let proponent = escrow.proponent.clone();
        let deposit = escrow.deposit;

        let mut settlement = Settlement {
            kind,
            refunds: BTreeMap::new(),
            rewards_minted: BTreeMap::new(),
            forfeits_distributed: BTreeMap::new(),
        };
        match kind {
            SettlementKind::Accepted => {
                settlement.refunds.insert(proponent, deposit);
                let reward = self.params.verifier_reward;
                for v in verifiers {
                    let slot = settlement.rewards_minted.entry(v.clone()).or_insert(0);
                    *slot = slot.checked_add(reward).ok_or(BankError::Overflow)?;
                }
            }
            SettlementKind::Rejected => {
                for (v, share) in verifiers.iter().zip(split_deposit(deposit, verifiers.len())) {
                    if share > 0 {
                        *settlement.forfeits_distributed.entry(v.clone()).or_insert(0) += share;
                    }
                }
            }
            SettlementKind::Expired => {
                settlement.refunds.insert(proponent, deposit);
            }
        }

        let minted = settlement.minted();
        let new_minted = self.total_minted.checked_add(minted).ok_or(BankError::Overflow)?;
        let mut credits: BTreeMap<&NodeId, Probos> = BTreeMap::new();
        for map in [
            &settlement.refunds,
            &settlement.rewards_minted,
            &settlement.forfeits_distributed,
        ] {
            for (node, amount) in map {
                let c = credits.entry(node).or_insert(0);
                *c = c.checked_add(*amount).ok_or(BankError::Overflow)?;
            }
        }
        for (node, amount) in &credits {
            self.accounts[*node].checked_add(*amount).ok_or(BankError::Overflow)?;
        }

        for (node, amount) in credits {
            *self.accounts.get_mut(node).expect("checked") += amount;
        }
        self.total_minted = new_minted;
        let escrow = self.escrows.get_mut(request_id).expect("checked");
        escrow.state = kind.escrow_state();
        escrow.settled_at = Some(now);
        Ok(settlement)
    }

    fn require(&self, node: &NodeId) -> Result<Probos, BankError> {
        self.accounts
            .get(node)
            .copied()
            .ok_or_else(|| BankError::UnknownAccount(node.clone()))
    }
}

/// Split `amount` into `n` shares of `floor(amount / n)`, handing the
/// remainder out one unit at a time starting from the first position.
pub fn split_deposit(amount: Probos, n: usize) -> Vec<Probos> {
    if n == 0 {
        return Vec::new();
    }
    let n64 = n as u64;
    let base = amount / n64;
    let rem = (amount % n64) as usize;
    (0..n).map(|i| base + u64::from(i < rem)).collect()
}
