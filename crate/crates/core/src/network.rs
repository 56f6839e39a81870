//! Settlement engine: the single writer that owns chain, bank and the
//! pending pool, and drives each request from deposit to block.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::canonical::CanonicalError;
use crate::hash::HashDigest;
use crate::ledger::{
    Block, BlockPayload, Chain, ChainFault, ExpiryRecord, GenesisConfig, LedgerError, StudyRecord,
};
use crate::studies::{commit_outputs, validate_descriptor, OutputTable, StudyDescriptor, Violation};
use crate::tokenomics::{BankError, BankState, EscrowState, NodeId, Probos, Settlement, SettlementKind};
use crate::verification::{
    aggregate, compare_outputs, verify_commitment, Decision, Verdict, VerificationError,
    VerifierReport,
};

/// A broadcast request awaiting verifier reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingRequest {
    pub descriptor: StudyDescriptor,
    pub commitment: HashDigest,
    pub revealed: OutputTable,
    pub deposit: Probos,
    pub submitted_at: u64,
    pub deadline: u64,
    pub reports: Vec<VerifierReport>,
}

impl PendingRequest {
    pub fn request_id(&self) -> &str {
        &self.descriptor.request_id
    }

    pub fn proponent(&self) -> &NodeId {
        &self.descriptor.proponent
    }
}

/// Requests not yet on chain, plus the engine clock.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PendingPool {
    pub clock: u64,
    pub requests: BTreeMap<String, PendingRequest>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NetworkError {
    #[error("time regression: clock at {clock}, got {got}")]
    TimeRegression { clock: u64, got: u64 },
    #[error("invalid descriptor ({} violations)", .0.len())]
    InvalidDescriptor(Vec<Violation>),
    #[error("invalid output table: {0}")]
    InvalidOutputs(String),
    #[error("no open escrow backs request {0}")]
    NoEscrow(String),
    #[error("duplicate request {0}")]
    DuplicateRequest(String),
    #[error("unknown request {0}")]
    UnknownRequest(String),
    #[error("proponent cannot verify")]
    ProponentCannotVerify,
    #[error("{0} already reported on this request")]
    DuplicateReport(NodeId),
    #[error("deadline of request {0} has passed")]
    DeadlinePassed(String),
    #[error("chain is invalid: {0}")]
    InvalidChain(ChainFault),
    #[error("bank does not match chain: {0}")]
    InconsistentState(String),
    #[error(transparent)]
    Bank(#[from] BankError),
    #[error(transparent)]
    Verification(#[from] VerificationError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Canonical(#[from] CanonicalError),
}

/// A request closed by settlement and written to the chain.
#[derive(Debug, Clone, PartialEq)]
pub struct Finalized {
    pub request_id: String,
    pub proponent: NodeId,
    pub decision: Decision,
    pub settlement: Settlement,
    /// Verifiers whose reports made the quorum (empty for expiry).
    pub verifiers: Vec<NodeId>,
    pub block_index: u64,
    pub block_hash: HashDigest,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportOutcome {
    pub report: VerifierReport,
    pub decision: Decision,
    pub finalized: Option<Finalized>,
}

#[derive(Debug, Clone)]
pub struct Network {
    config: GenesisConfig,
    chain: Chain,
    bank: BankState,
    pool: PendingPool,
}

impl Network {
    /// Start a network: genesis block plus a sealed bank funded from it.
    pub fn genesis(config: GenesisConfig, timestamp: u64) -> Result<Self, NetworkError> {
        let chain = Chain::genesis(config.clone(), timestamp)?;
        let mut bank = BankState::new(config.economics);
        for n in &config.nodes {
            bank.create_account(n.id.clone(), n.balance)?;
        }
        bank.seal();
        Ok(Network {
            config,
            chain,
            bank,
            pool: PendingPool {
                clock: timestamp,
                requests: BTreeMap::new(),
            },
        })
    }

    /// Reassemble a network from persisted parts after checking that they
    /// agree with each other.
    pub fn restore(chain: Chain, bank: BankState, pool: PendingPool) -> Result<Self, NetworkError> {
        chain.validate().map_err(NetworkError::InvalidChain)?;
        let config = chain.genesis_config().expect("validated").clone();
        let inconsistent = |m: String| Err(NetworkError::InconsistentState(m));
        if bank.params() != &config.economics {
            return inconsistent("economic parameters differ from genesis".into());
        }
        if let Err(v) = bank.audit() {
            return inconsistent(alloc::format!("{v}"));
        }
        for (id, req) in &pool.requests {
            if id != req.request_id() {
                return inconsistent(alloc::format!("pending key {id} names another request"));
            }
            match bank.escrow(id) {
                Some(e) if e.state == EscrowState::Open && e.deposit == req.deposit => {}
                _ => return inconsistent(alloc::format!("pending request {id} has no open escrow")),
            }
        }
        let open = bank.escrows().values().filter(|e| e.state == EscrowState::Open).count();
        if open != pool.requests.len() {
            return inconsistent("open escrows without a pending request".into());
        }
        let tail = chain.tail().expect("validated").timestamp;
        if pool.clock < tail {
            return inconsistent("clock behind chain tail".into());
        }
        Ok(Network {
            config,
            chain,
            bank,
            pool,
        })
    }

    pub fn config(&self) -> &GenesisConfig {
        &self.config
    }

    pub fn chain(&self) -> &Chain {
        &self.chain
    }

    pub fn bank(&self) -> &BankState {
        &self.bank
    }

    pub fn pool(&self) -> &PendingPool {
        &self.pool
    }

    pub fn clock(&self) -> u64 {
        self.pool.clock
    }

    pub fn pending(&self, request_id: &str) -> Option<&PendingRequest> {
        self.pool.requests.get(request_id)
    }

    pub fn pending_requests(&self) -> impl Iterator<Item = &PendingRequest> {
        self.pool.requests.values()
    }

    pub fn into_parts(self) -> (Chain, BankState, PendingPool) {
        (self.chain, self.bank, self.pool)
    }

    pub fn advance_clock(&mut self, now: u64) -> Result<(), NetworkError> {
        if now < self.pool.clock {
            return Err(NetworkError::TimeRegression {
                clock: self.pool.clock,
                got: now,
            });
        }
        self.pool.clock = now;
        Ok(())
    }

    /// Deposit and broadcast in one step. Nothing changes on error.
    pub fn submit(
        &mut self,
        descriptor: StudyDescriptor,
        revealed: OutputTable,
        commitment: HashDigest,
        deposit: Probos,
        now: u64,
    ) -> Result<&PendingRequest, NetworkError> {
        self.check_time(now)?;
        self.check_request(&descriptor, &revealed)?;
        let id = descriptor.request_id.clone();
        if self.bank.escrow(&id).is_some() || self.chain.find_request(&id).is_some() {
            return Err(NetworkError::DuplicateRequest(id));
        }
        self.bank.open_escrow(&descriptor.proponent, deposit, &id, now)?;
        self.pool.clock = now;
        self.broadcast(descriptor, revealed, commitment, now)
    }

    /// Lock a deposit for a request that is not broadcast yet.
    pub fn open_escrow(
        &mut self,
        proponent: &NodeId,
        deposit: Probos,
        request_id: &str,
        now: u64,
    ) -> Result<(), NetworkError> {
        self.check_time(now)?;
        if self.chain.find_request(request_id).is_some() {
            return Err(NetworkError::DuplicateRequest(request_id.into()));
        }
        self.bank.open_escrow(proponent, deposit, request_id, now)?;
        self.pool.clock = now;
        Ok(())
    }

    /// Publish a request to the pending pool. Refused unless the proponent
    /// has already locked a deposit for this request id.
    pub fn broadcast(
        &mut self,
        descriptor: StudyDescriptor,
        revealed: OutputTable,
        commitment: HashDigest,
        now: u64,
    ) -> Result<&PendingRequest, NetworkError> {
        self.check_time(now)?;
        let id = descriptor.request_id.clone();
        if self.pool.requests.contains_key(&id) {
            return Err(NetworkError::DuplicateRequest(id));
        }
        let deposit = match self.bank.escrow(&id) {
            Some(e) if e.state == EscrowState::Open && e.proponent == descriptor.proponent => e.deposit,
            _ => return Err(NetworkError::NoEscrow(id)),
        };
        self.check_request(&descriptor, &revealed)?;
        self.pool.clock = now;
        let pending = PendingRequest {
            descriptor,
            commitment,
            revealed,
            deposit,
            submitted_at: now,
            deadline: now.saturating_add(self.config.horizon),
            reports: Vec::new(),
        };
        Ok(self.pool.requests.entry(id).or_insert(pending))
    }

    fn check_request(&self, d: &StudyDescriptor, revealed: &OutputTable) -> Result<(), NetworkError> {
        let violations = validate_descriptor(d, self.config.horizon_hours());
        if !violations.is_empty() {
            return Err(NetworkError::InvalidDescriptor(violations));
        }
        let problems = revealed.problems();
        if let Some(p) = problems.into_iter().next() {
            return Err(NetworkError::InvalidOutputs(p));
        }
        if let Some(t) = d.tolerances.iter().find(|t| !revealed.metrics.contains_key(&t.metric)) {
            return Err(VerificationError::UnknownMetric(t.metric.clone()).into());
        }
        if self.bank.balance(&d.proponent).is_none() {
            return Err(BankError::UnknownAccount(d.proponent.clone()).into());
        }
        Ok(())
    }

    fn check_time(&self, now: u64) -> Result<(), NetworkError> {
        if now < self.pool.clock {
            Err(NetworkError::TimeRegression {
                clock: self.pool.clock,
                got: now,
            })
        } else {
            Ok(())
        }
    }

    /// Judge `table` against the request's tolerances without filing it.
    pub fn preview_verdict(&self, request_id: &str, table: &OutputTable) -> Result<Verdict, NetworkError> {
        let req = self
            .pending(request_id)
            .ok_or_else(|| NetworkError::UnknownRequest(request_id.into()))?;
        Ok(compare_outputs(&req.revealed, table, &req.descriptor.tolerances)?)
    }

    /// File one verifier report; settles and appends a block when the
    /// quorum is reached.
    pub fn file_report(
        &mut self,
        request_id: &str,
        verifier: &NodeId,
        table: OutputTable,
        now: u64,
    ) -> Result<ReportOutcome, NetworkError> {
        self.check_time(now)?;
        let req = self
            .pool
            .requests
            .get(request_id)
            .ok_or_else(|| NetworkError::UnknownRequest(request_id.into()))?;
        if verifier == req.proponent() {
            return Err(NetworkError::ProponentCannotVerify);
        }
        if req.reports.iter().any(|r| &r.verifier == verifier) {
            return Err(NetworkError::DuplicateReport(verifier.clone()));
        }
        if self.bank.balance(verifier).is_none() {
            return Err(BankError::UnknownAccount(verifier.clone()).into());
        }
        if now > req.deadline {
            return Err(NetworkError::DeadlinePassed(request_id.into()));
        }
        if let Some(p) = table.problems().into_iter().next() {
            return Err(NetworkError::InvalidOutputs(p));
        }
        let verdict = compare_outputs(&req.revealed, &table, &req.descriptor.tolerances)?;
        let report = VerifierReport {
            request_id: request_id.into(),
            verifier: verifier.clone(),
            output_hash: commit_outputs(&table)?,
            output_table: table,
            verdict,
            timestamp: now,
        };
        let mut reports = req.reports.clone();
        reports.push(report.clone());
        let decision = aggregate(&reports, &self.config.quorum, now, req.deadline)?;

        self.pool.clock = now;
        self.pool
            .requests
            .get_mut(request_id)
            .expect("checked")
            .reports = reports;
        let finalized = if decision.is_final() {
            Some(self.finalize(request_id, decision, now)?)
        } else {
            None
        };
        let decision = finalized.as_ref().map_or(decision, |f| f.decision);
        Ok(ReportOutcome {
            report,
            decision,
            finalized,
        })
    }

    /// Expire every pending request whose deadline lies before `now`, in
    /// (deadline, request id) order.
    pub fn expire_due(&mut self, now: u64) -> Result<Vec<Finalized>, NetworkError> {
        self.advance_clock(now)?;
        let mut due: Vec<(u64, String)> = self
            .pool
            .requests
            .values()
            .filter(|r| now > r.deadline)
            .map(|r| (r.deadline, r.request_id().into()))
            .collect();
        due.sort();
        due.into_iter()
            .map(|(_, id)| self.finalize(&id, Decision::Expired, now))
            .collect()
    }

    /// Settle the escrow and write the block. A revealed table that does
    /// not open the commitment turns any quorum decision into a rejection.
    fn finalize(&mut self, request_id: &str, decision: Decision, now: u64) -> Result<Finalized, NetworkError> {
        let req = self.pool.requests.get(request_id).expect("caller checked").clone();
        let quorum = self.config.quorum.min_reports as usize;
        let decision = match decision {
            Decision::Accepted if !verify_commitment(&req.revealed, &req.commitment) => Decision::Rejected,
            d => d,
        };
        let kind = decision.settlement_kind().expect("final decision");
        let reports: Vec<VerifierReport> = if kind == SettlementKind::Expired {
            req.reports.clone()
        } else {
            req.reports[..quorum].to_vec()
        };
        let verifiers: Vec<NodeId> = match kind {
            SettlementKind::Expired => Vec::new(),
            _ => reports.iter().map(|r| r.verifier.clone()).collect(),
        };

        let mut bank = self.bank.clone();
        let settlement = bank.settle(request_id, kind, &verifiers, now)?;
        let payload = match kind {
            SettlementKind::Expired => BlockPayload::Expiry(ExpiryRecord {
                request_id: request_id.into(),
                proponent: req.proponent().clone(),
                descriptor: req.descriptor.clone(),
                commitment: req.commitment,
                reports,
                settlement: settlement.clone(),
                submitted_at: req.submitted_at,
                deadline: req.deadline,
            }),
            _ => {
                let record = StudyRecord {
                    request_id: request_id.into(),
                    proponent: req.proponent().clone(),
                    descriptor: req.descriptor.clone(),
                    outputs: req.revealed.clone(),
                    commitment: req.commitment,
                    reports,
                    settlement: settlement.clone(),
                    submitted_at: req.submitted_at,
                    deadline: req.deadline,
                };
                if kind == SettlementKind::Accepted {
                    BlockPayload::Acceptance(record)
                } else {
                    BlockPayload::Rejection(record)
                }
            }
        };
        let block: &Block = self.chain.append(payload, now)?;
        let (block_index, block_hash) = (block.index, block.block_hash);
        self.bank = bank;
        self.pool.requests.remove(request_id);
        Ok(Finalized {
            request_id: request_id.into(),
            proponent: req.proponent().clone(),
            decision,
            settlement,
            verifiers,
            block_index,
            block_hash,
        })
    }
}
