//! Deterministic agent-based simulation of the network.
//!
//! One tick is one hour of logical time. Each step:
//!
//! 1. fires the submissions scheduled for the tick, in schedule order;
//! 2. visits verifier agents in declaration order; each draws one uniform
//!    number for activity and, if active, takes the eligible pending
//!    request with the earliest deadline (ties by request id) and files a
//!    report, drawing one standard normal per metric (metric-name order)
//!    and one uniform per adjacent feature pair;
//! 3. expires requests whose deadline has passed;
//! 4. audits bank conservation.
//!
//! All randomness comes from a single ChaCha8 stream seeded by the
//! scenario, consumed in exactly that order.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::hash::HashDigest;
use crate::ledger::{Chain, GenesisConfig, GenesisNode};
use crate::network::{Finalized, Network, NetworkError, PendingRequest};
use crate::reputation::{self, Counts};
use crate::studies::{commit_outputs, validate_descriptor, OutputTable, StudyDescriptor};
use crate::tokenomics::{BankState, EconomicParams, NodeId, Probos, Settlement};
use crate::verification::{Decision, QuorumConfig, VerdictValue};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    HonestProponent,
    /// Declares tolerances its real outputs cannot meet.
    FraudulentProponent,
    HonestVerifier,
    /// Rubber-stamps: fabricates a table that passes every check without
    /// reproducing anything.
    LazyVerifier,
    /// Floods the network with irreproducible requests.
    Flooder,
}

impl Policy {
    pub fn is_verifier(self) -> bool {
        matches!(self, Policy::HonestVerifier | Policy::LazyVerifier)
    }

    pub fn is_proponent(self) -> bool {
        !self.is_verifier()
    }

    fn is_irreproducible(self) -> bool {
        matches!(self, Policy::FraudulentProponent | Policy::Flooder)
    }
}

fn one() -> f64 {
    1.0
}

fn one_u32() -> u32 {
    1
}

fn one_u64() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    #[serde(rename = "node", alias = "id")]
    pub id: NodeId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub affiliation: Option<String>,
    #[serde(rename = "role_policy", alias = "policy")]
    pub policy: Policy,
    #[serde(default)]
    pub topics: Vec<String>,
    #[serde(default)]
    pub noise_sd: f64,
    #[serde(default = "one")]
    pub activity_rate: f64,
}

/// Initial balances: `{"equal": n}` or an explicit `{id: n}` map.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GenesisAllocation {
    Equal { equal: Probos },
    PerNode(BTreeMap<NodeId, Probos>),
}

impl GenesisAllocation {
    pub fn balance_of(&self, node: &NodeId) -> Probos {
        match self {
            GenesisAllocation::Equal { equal } => *equal,
            GenesisAllocation::PerNode(m) => m.get(node).copied().unwrap_or(0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioEconomics {
    pub min_deposit: Probos,
    pub verifier_reward: Probos,
    pub genesis_allocation: GenesisAllocation,
}

/// What a proponent submits, and what verifiers will actually reproduce.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyTemplate {
    pub descriptor: StudyDescriptor,
    /// Declared outputs.
    pub outputs: OutputTable,
    /// Outputs a faithful reproduction yields. Defaults to `outputs` for
    /// honest proponents; irreproducible policies derive a table that
    /// misses every declared interval.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub actual: Option<OutputTable>,
    /// Table whose digest is committed, when it differs from the revealed one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub committed: Option<OutputTable>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deposit: Option<Probos>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduledSubmission {
    pub tick: u64,
    pub proponent: NodeId,
    pub study: StudyTemplate,
    /// Number of submissions, `interval` ticks apart.
    #[serde(default = "one_u32")]
    pub repeat: u32,
    #[serde(default = "one_u64")]
    pub interval: u64,
}

impl ScheduledSubmission {
    fn ticks(&self) -> impl Iterator<Item = u64> + '_ {
        (0..self.repeat as u64).map(move |k| self.tick + k * self.interval)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub agents: Vec<AgentSpec>,
    pub economics: ScenarioEconomics,
    #[serde(default)]
    pub quorum: QuorumConfig,
    /// Ticks to simulate; scheduled submissions must fall in `1..=horizon_ticks`.
    pub horizon_ticks: u64,
    /// Network time horizon: ticks a request may stay pending. Defaults
    /// to half the simulated horizon.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deadline_ticks: Option<u64>,
    pub schedule: Vec<ScheduledSubmission>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("horizon exceeded at tick {0}")]
    HorizonExceeded(u64),
    #[error("bank conservation violated at tick {0}")]
    Conservation(u64),
    #[error(transparent)]
    Network(#[from] NetworkError),
}

impl Scenario {
    pub fn deadline_ticks(&self) -> u64 {
        self.deadline_ticks.unwrap_or((self.horizon_ticks / 2).max(1))
    }

    pub fn genesis_config(&self) -> GenesisConfig {
        GenesisConfig {
            nodes: self
                .agents
                .iter()
                .map(|a| GenesisNode {
                    id: a.id.clone(),
                    affiliation: a.affiliation.clone(),
                    balance: self.economics.genesis_allocation.balance_of(&a.id),
                })
                .collect(),
            economics: EconomicParams {
                min_deposit: self.economics.min_deposit,
                verifier_reward: self.economics.verifier_reward,
            },
            quorum: self.quorum,
            horizon: self.deadline_ticks(),
            units_per_hour: 1,
        }
    }

    pub fn agent(&self, id: &NodeId) -> Option<&AgentSpec> {
        self.agents.iter().find(|a| &a.id == id)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidScenario(m));
        if self.agents.is_empty() {
            return bad("no agents".into());
        }
        if self.horizon_ticks == 0 {
            return bad("horizon_ticks must be positive".into());
        }
        if self.deadline_ticks == Some(0) {
            return bad("deadline_ticks must be positive".into());
        }
        let mut ids = BTreeSet::new();
        for a in &self.agents {
            if a.id.is_empty() {
                return bad("agent with empty id".into());
            }
            if !ids.insert(&a.id) {
                return bad(format!("duplicate agent {}", a.id));
            }
            if a.policy.is_verifier() && a.topics.is_empty() {
                return bad(format!("verifier {} has no topics", a.id));
            }
            if !(a.noise_sd.is_finite() && a.noise_sd >= 0.0) {
                return bad(format!("agent {}: noise_sd must be finite and >= 0", a.id));
            }
            if !(0.0..=1.0).contains(&a.activity_rate) {
                return bad(format!("agent {}: activity_rate must lie in [0, 1]", a.id));
            }
        }
        if let GenesisAllocation::PerNode(m) = &self.economics.genesis_allocation {
            if let Some(unknown) = m.keys().find(|k| !ids.contains(k)) {
                return bad(format!("genesis allocation names unknown agent {unknown}"));
            }
        }
        self.genesis_config()
            .validate()
            .map_err(|e| SimError::InvalidScenario(e.to_string()))?;

        let horizon_hours = self.deadline_ticks();
        for (i, entry) in self.schedule.iter().enumerate() {
            let Some(agent) = self.agent(&entry.proponent) else {
                return bad(format!("schedule[{i}]: proponent {} is not an agent", entry.proponent));
            };
            if !agent.policy.is_proponent() {
                return bad(format!("schedule[{i}]: {} is not a proponent", entry.proponent));
            }
            if entry.repeat == 0 || entry.interval == 0 {
                return bad(format!("schedule[{i}]: repeat and interval must be positive"));
            }
            let last = entry.tick + (entry.repeat as u64 - 1) * entry.interval;
            if entry.tick == 0 || last > self.horizon_ticks {
                return bad(format!(
                    "schedule[{i}]: ticks must lie in 1..={}",
                    self.horizon_ticks
                ));
            }
            let mut d = entry.study.descriptor.clone();
            d.proponent = entry.proponent.clone();
            if d.request_id.is_empty() {
                d.request_id = "study".into();
            }
            if let Some(v) = validate_descriptor(&d, horizon_hours).first() {
                return bad(format!("schedule[{i}]: {v}"));
            }
            for t in [Some(&entry.study.outputs), entry.study.actual.as_ref(), entry.study.committed.as_ref()]
                .into_iter()
                .flatten()
            {
                if let Some(p) = t.problems().first() {
                    return bad(format!("schedule[{i}]: {p}"));
                }
            }
            if let Some(t) = d
                .tolerances
                .iter()
                .find(|t| !entry.study.outputs.metrics.contains_key(&t.metric))
            {
                return bad(format!("schedule[{i}]: tolerance metric {} not in outputs", t.metric));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    Submitted {
        request_id: String,
        proponent: NodeId,
        topic: String,
        deposit: Probos,
        commitment: HashDigest,
    },
    Broadcast {
        request_id: String,
        audience: u64,
    },
    ReportFiled {
        request_id: String,
        verifier: NodeId,
        verdict: VerdictValue,
    },
    Settled {
        request_id: String,
        proponent: NodeId,
        decision: Decision,
        settlement: Settlement,
    },
    BlockAppended {
        request_id: String,
        index: u64,
        block_hash: HashDigest,
    },
    ErrorObserved {
        actor: NodeId,
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimEvent {
    pub tick: u64,
    pub seq: u64,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Summary {
    pub submitted: u64,
    pub accepted: u64,
    pub rejected: u64,
    pub expired: u64,
    pub still_pending: u64,
    pub errors: u64,
    pub minted: Probos,
    /// Final minus initial balance per agent.
    pub net_flow: BTreeMap<NodeId, i64>,
}

impl Summary {
    /// Rebuild the summary from an event log alone.
    pub fn from_events(agents: &[AgentSpec], events: &[SimEvent]) -> Summary {
        let mut s = Summary {
            net_flow: agents.iter().map(|a| (a.id.clone(), 0)).collect(),
            ..Summary::default()
        };
        for e in events {
            match &e.kind {
                EventKind::Submitted {
                    proponent, deposit, ..
                } => {
                    s.submitted += 1;
                    *s.net_flow.entry(proponent.clone()).or_default() -= *deposit as i64;
                }
                EventKind::Settled {
                    decision,
                    settlement,
                    ..
                } => {
                    match decision {
                        Decision::Accepted => s.accepted += 1,
                        Decision::Rejected => s.rejected += 1,
                        Decision::Expired => s.expired += 1,
                        Decision::Pending => {}
                    }
                    s.minted += settlement.minted();
                    for map in [
                        &settlement.refunds,
                        &settlement.rewards_minted,
                        &settlement.forfeits_distributed,
                    ] {
                        for (node, amount) in map {
                            *s.net_flow.entry(node.clone()).or_default() += *amount as i64;
                        }
                    }
                }
                EventKind::ErrorObserved { .. } => s.errors += 1,
                _ => {}
            }
        }
        s.still_pending = s.submitted - s.accepted - s.rejected - s.expired;
        s
    }
}

#[derive(Debug, Clone)]
pub struct SimResult {
    pub chain: Chain,
    pub final_bank: BankState,
    pub events: Vec<SimEvent>,
    pub summary: Summary,
    /// Reputation counts tracked incrementally while the run settled requests.
    pub tally: BTreeMap<NodeId, Counts>,
}

/// Live simulation state.
pub struct World {
    agents: Vec<AgentSpec>,
    schedule: Vec<ScheduledSubmission>,
    horizon: u64,
    network: Network,
    rng: ChaCha8Rng,
    tick: u64,
    seq: u64,
    submissions: u64,
    events: Vec<SimEvent>,
    truths: BTreeMap<String, OutputTable>,
    initial: BTreeMap<NodeId, Probos>,
    tally: BTreeMap<NodeId, Counts>,
}

impl World {
    pub fn new(scenario: &Scenario) -> Result<World, SimError> {
        scenario.validate()?;
        let network = Network::genesis(scenario.genesis_config(), 0)?;
        let initial = network.bank().accounts().clone();
        let tally = initial.keys().map(|k| (k.clone(), Counts::default())).collect();
        Ok(World {
            agents: scenario.agents.clone(),
            schedule: scenario.schedule.clone(),
            horizon: scenario.horizon_ticks,
            network,
            rng: ChaCha8Rng::seed_from_u64(scenario.seed),
            tick: 0,
            seq: 0,
            submissions: 0,
            events: Vec::new(),
            truths: BTreeMap::new(),
            initial,
            tally,
        })
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn events(&self) -> &[SimEvent] {
        &self.events
    }

    /// Put a funded request into the pending pool, visible to every agent
    /// but its proponent. Fails with `NoEscrow` if no deposit backs it.
    pub fn broadcast(
        &mut self,
        descriptor: StudyDescriptor,
        commitment: HashDigest,
        revealed: OutputTable,
    ) -> Result<(), SimError> {
        let id = descriptor.request_id.clone();
        self.network.broadcast(descriptor, revealed, commitment, self.tick)?;
        let audience = self.agents.len() as u64 - 1;
        self.emit(EventKind::Broadcast {
            request_id: id,
            audience,
        });
        Ok(())
    }

    /// Advance one tick and return the events it produced.
    pub fn step(&mut self) -> Result<Vec<SimEvent>, SimError> {
        if self.tick >= self.horizon {
            return Err(SimError::HorizonExceeded(self.tick));
        }
        self.tick += 1;
        let first_event = self.events.len();

        self.fire_submissions()?;
        self.run_verifiers()?;
        let expired = self.network.expire_due(self.tick)?;
        for f in expired {
            self.record_finalized(f);
        }
        self.network
            .bank()
            .audit()
            .map_err(|_| SimError::Conservation(self.tick))?;
        Ok(self.events[first_event..].to_vec())
    }

    pub fn finish(self) -> SimResult {
        let summary = self.summary();
        let (chain, final_bank, _) = self.network.into_parts();
        SimResult {
            chain,
            final_bank,
            events: self.events,
            summary,
            tally: self.tally,
        }
    }

    fn summary(&self) -> Summary {
        let mut s = Summary::from_events(&self.agents, &self.events);
        // Balances are the ground truth for net flow.
        s.net_flow = self
            .network
            .bank()
            .accounts()
            .iter()
            .map(|(id, &b)| (id.clone(), b as i64 - self.initial[id] as i64))
            .collect();
        s
    }

    fn emit(&mut self, kind: EventKind) {
        self.events.push(SimEvent {
            tick: self.tick,
            seq: self.seq,
            kind,
        });
        self.seq += 1;
    }

    fn fire_submissions(&mut self) -> Result<(), SimError> {
        let due: Vec<ScheduledSubmission> = self
            .schedule
            .iter()
            .filter(|s| s.ticks().any(|t| t == self.tick))
            .cloned()
            .collect();
        for entry in due {
            self.submissions += 1;
            let policy = self
                .agents
                .iter()
                .find(|a| a.id == entry.proponent)
                .map(|a| a.policy)
                .expect("validated");
            let template = &entry.study;
            let mut descriptor = template.descriptor.clone();
            let base = if descriptor.request_id.is_empty() {
                "study"
            } else {
                descriptor.request_id.as_str()
            };
            descriptor.request_id = format!("{base}-{:04}", self.submissions);
            descriptor.proponent = entry.proponent.clone();

            let actual = match (&template.actual, policy.is_irreproducible()) {
                (Some(a), _) => a.clone(),
                (None, true) => displaced(&template.outputs, &descriptor),
                (None, false) => template.outputs.clone(),
            };
            let revealed = if policy.is_irreproducible() {
                actual.clone()
            } else {
                template.outputs.clone()
            };
            let commitment = commit_outputs(template.committed.as_ref().unwrap_or(&revealed))
                .map_err(NetworkError::from)?;
            let deposit = template
                .deposit
                .unwrap_or(self.network.bank().params().min_deposit);

            let id = descriptor.request_id.clone();
            let topic = descriptor.topic.clone();
            match self
                .network
                .submit(descriptor, revealed, commitment, deposit, self.tick)
            {
                Ok(_) => {
                    self.truths.insert(id.clone(), actual);
                    self.emit(EventKind::Submitted {
                        request_id: id.clone(),
                        proponent: entry.proponent.clone(),
                        topic,
                        deposit,
                        commitment,
                    });
                    let audience = self.agents.len() as u64 - 1;
                    self.emit(EventKind::Broadcast {
                        request_id: id,
                        audience,
                    });
                }
                Err(e) => self.emit(EventKind::ErrorObserved {
                    actor: entry.proponent.clone(),
                    message: e.to_string(),
                }),
            }
        }
        Ok(())
    }

    fn run_verifiers(&mut self) -> Result<(), SimError> {
        for i in 0..self.agents.len() {
            let agent = &self.agents[i];
            if !agent.policy.is_verifier() {
                continue;
            }
            let roll: f64 = self.rng.random();
            if roll >= agent.activity_rate {
                continue;
            }
            let Some(request_id) = self.pick_request(agent) else {
                continue;
            };
            let agent = self.agents[i].clone();
            let table = match agent.policy {
                Policy::LazyVerifier => {
                    rubber_stamp(self.network.pending(&request_id).expect("picked from pool"))
                }
                _ => {
                    let truth = self.truths[&request_id].clone();
                    reproduce(&truth, agent.noise_sd, &mut self.rng)
                }
            };
            match self
                .network
                .file_report(&request_id, &agent.id, table, self.tick)
            {
                Ok(outcome) => {
                    self.emit(EventKind::ReportFiled {
                        request_id: request_id.clone(),
                        verifier: agent.id.clone(),
                        verdict: outcome.report.verdict.value,
                    });
                    if let Some(f) = outcome.finalized {
                        self.record_finalized(f);
                    }
                }
                Err(e) => self.emit(EventKind::ErrorObserved {
                    actor: agent.id.clone(),
                    message: e.to_string(),
                }),
            }
        }
        Ok(())
    }

    /// Earliest-deadline eligible request on one of the agent's topics.
    fn pick_request(&self, agent: &AgentSpec) -> Option<String> {
        self.network
            .pending_requests()
            .filter(|r| agent.topics.iter().any(|t| t == &r.descriptor.topic))
            .filter(|r| r.proponent() != &agent.id)
            .filter(|r| !r.reports.iter().any(|rep| rep.verifier == agent.id))
            .filter(|r| self.tick <= r.deadline)
            .min_by(|a, b| {
                a.deadline
                    .cmp(&b.deadline)
                    .then_with(|| a.request_id().cmp(b.request_id()))
            })
            .map(|r| r.request_id().to_string())
    }

    fn record_finalized(&mut self, f: Finalized) {
        match f.decision {
            Decision::Accepted => self.tally.entry(f.proponent.clone()).or_default().accepted += 1,
            Decision::Rejected => self.tally.entry(f.proponent.clone()).or_default().rejected += 1,
            _ => {}
        }
        for v in &f.verifiers {
            self.tally.entry(v.clone()).or_default().verified += 1;
        }
        self.emit(EventKind::Settled {
            request_id: f.request_id.clone(),
            proponent: f.proponent.clone(),
            decision: f.decision,
            settlement: f.settlement,
        });
        self.emit(EventKind::BlockAppended {
            request_id: f.request_id,
            index: f.block_index,
            block_hash: f.block_hash,
        });
    }
}

/// Move every toleranced metric one interval width plus one unit below its
/// declared interval.
fn displaced(outputs: &OutputTable, d: &StudyDescriptor) -> OutputTable {
    let mut out = outputs.clone();
    let mut seen = BTreeSet::new();
    for t in &d.tolerances {
        if seen.insert(t.metric.as_str()) {
            out.metrics
                .insert(t.metric.clone(), t.low - (t.high - t.low) - 1.0);
        }
    }
    out
}

/// The revealed table with each toleranced metric moved to the middle of
/// its interval.
fn rubber_stamp(req: &PendingRequest) -> OutputTable {
    let mut out = req.revealed.clone();
    for t in &req.descriptor.tolerances {
        out.metrics.insert(t.metric.clone(), t.low + (t.high - t.low) / 2.0);
    }
    out
}

/// A noisy reproduction: Gaussian noise on each metric, adjacent feature
/// swaps with probability `min(1, noise_sd)`.
fn reproduce(truth: &OutputTable, noise_sd: f64, rng: &mut ChaCha8Rng) -> OutputTable {
    let mut out = truth.clone();
    for value in out.metrics.values_mut() {
        let z: f64 = rng.sample(StandardNormal);
        *value += noise_sd * z;
    }
    let p_swap = noise_sd.min(1.0);
    let n = out.ranked_features.len();
    for i in 0..n.saturating_sub(1) {
        let u: f64 = rng.random();
        if u < p_swap {
            out.ranked_features.swap(i, i + 1);
        }
    }
    out
}

/// Run a scenario from genesis to its horizon.
pub fn run_scenario(scenario: &Scenario) -> Result<SimResult, SimError> {
    let mut world = World::new(scenario)?;
    while world.tick() < scenario.horizon_ticks {
        world.step()?;
    }
    let result = world.finish();
    debug_assert_eq!(reputation::tally(&result.chain), result.tally);
    Ok(result)
}
