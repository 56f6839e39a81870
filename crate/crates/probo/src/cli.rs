//! The `probo` command line.
//!
//! Exit codes: 0 success, 1 domain failure, 2 environment failure. A failing
//! command leaves the chain, bank and pending files as they were.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use probo_core::hash::digest_of;
use probo_core::ledger::{GenesisConfig, GenesisNode};
use probo_core::network::{Network, NetworkError};
use probo_core::reputation::{self, ReputationWeights};
use probo_core::simnet::{run_scenario, Scenario, SimError};
use probo_core::studies::{commit_outputs, OutputTable, StudyDescriptor};
use probo_core::tokenomics::{EconomicParams, NodeId, Probos};
use probo_core::verification::QuorumConfig;
use probo_core::Ratio;
use serde::Deserialize;

use crate::files::{self, FileError, WriteLock};

const SECONDS_PER_HOUR: u64 = 3600;
const DEFAULT_CHAIN: &str = "probo.chain.jsonl";
const DEFAULT_BANK: &str = "probo.bank.json";
const DEFAULT_HORIZON_HOURS: u64 = 72;

#[derive(Debug, Parser)]
#[command(name = "probo", version, about = "Reproducibility ledger: submit, verify and rank studies")]
pub struct Cli {
    /// Chain file (JSON Lines).
    #[arg(long, global = true)]
    pub chain: Option<PathBuf>,
    /// Bank state file (JSON).
    #[arg(long, global = true)]
    pub bank: Option<PathBuf>,
    /// JSON config with paths and network parameters.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Fixed current time in Unix seconds instead of the wall clock.
    #[arg(long, global = true)]
    pub now: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Create the genesis block and the initial bank.
    Init(InitArgs),
    /// Deposit and broadcast a study request.
    Submit(SubmitArgs),
    /// File a verifier report on a pending request.
    Verify(VerifyArgs),
    /// Advance time and expire overdue requests.
    Tick,
    /// Validate the chain and print blocks.
    Inspect(InspectArgs),
    /// Print the reputation ranking as CSV.
    Rank(RankArgs),
    /// Run a simulation scenario.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args)]
pub struct InitArgs {
    /// Comma-separated node ids, each optionally `id@affiliation`.
    #[arg(long, value_delimiter = ',', required = true)]
    pub nodes: Vec<String>,
    /// Initial balance of every node.
    #[arg(long, default_value_t = 100, allow_negative_numbers = true)]
    pub equal: i64,
    /// Per-node balance override, `id=amount`. Repeatable.
    #[arg(long = "balance", value_name = "ID=AMOUNT")]
    pub balances: Vec<String>,
    #[arg(long)]
    pub min_deposit: Option<Probos>,
    #[arg(long)]
    pub verifier_reward: Option<Probos>,
    #[arg(long)]
    pub min_reports: Option<u32>,
    /// Fraction of matching reports needed to accept, `p/q` or decimal.
    #[arg(long)]
    pub accept_threshold: Option<Ratio>,
    /// Hours a request may stay pending.
    #[arg(long)]
    pub horizon_hours: Option<u64>,
    /// Overwrite existing chain and bank files.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct SubmitArgs {
    #[arg(long)]
    pub descriptor: PathBuf,
    #[arg(long)]
    pub outputs: PathBuf,
    /// Defaults to the network's minimum deposit.
    #[arg(long)]
    pub deposit: Option<Probos>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long)]
    pub request: String,
    #[arg(long)]
    pub verifier: String,
    #[arg(long)]
    pub outputs: PathBuf,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long, conflicts_with = "request")]
    pub block: Option<usize>,
    #[arg(long)]
    pub request: Option<String>,
}

#[derive(Debug, Args)]
pub struct RankArgs {
    #[arg(long, default_value_t = 3.0)]
    pub w_accept: f64,
    #[arg(long, default_value_t = 1.0)]
    pub w_verify: f64,
    #[arg(long, default_value_t = 3.0)]
    pub w_reject: f64,
    /// Aggregate by affiliation.
    #[arg(long)]
    pub institutions: bool,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    pub scenario: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Override the scenario seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Contents of `--config`. Everything is optional; flags win.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub chain: Option<PathBuf>,
    pub bank: Option<PathBuf>,
    pub min_deposit: Option<Probos>,
    pub verifier_reward: Option<Probos>,
    pub min_reports: Option<u32>,
    pub accept_threshold: Option<Ratio>,
    pub horizon_hours: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn domain(message: impl Into<String>) -> Self {
        Failure {
            code: 1,
            message: message.into(),
        }
    }

    pub fn env(message: impl Into<String>) -> Self {
        Failure {
            code: 2,
            message: message.into(),
        }
    }
}

impl From<FileError> for Failure {
    fn from(e: FileError) -> Self {
        match e {
            FileError::MalformedBlock { .. } => Failure::domain(e.to_string()),
            _ => Failure::env(e.to_string()),
        }
    }
}

impl From<NetworkError> for Failure {
    fn from(e: NetworkError) -> Self {
        match e {
            NetworkError::InvalidDescriptor(violations) => Failure::domain(
                violations
                    .iter()
                    .map(ToString::to_string)
                    .collect::<Vec<_>>()
                    .join("\n"),
            ),
            NetworkError::InvalidChain(fault) => Failure::domain(fault.to_string()),
            other => Failure::domain(other.to_string()),
        }
    }
}

struct Paths {
    chain: PathBuf,
    bank: PathBuf,
}

struct Context {
    paths: Paths,
    config: ConfigFile,
    now: Option<u64>,
}

impl Context {
    fn now(&self) -> Result<u64, Failure> {
        match self.now {
            Some(t) => Ok(t),
            None => SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .map_err(|e| Failure::env(format!("system clock: {e}"))),
        }
    }

    fn load(&self) -> Result<Network, Failure> {
        let chain = files::read_chain(&self.paths.chain)?;
        if let Err(fault) = chain.validate() {
            return Err(Failure::domain(fault.to_string()));
        }
        let bank = files::read_json(&self.paths.bank)?;
        let pool = files::read_pending(&self.paths.chain)?;
        Network::restore(chain, bank, pool).map_err(Failure::from)
    }

    fn save(&self, network: &Network) -> Result<(), Failure> {
        files::write_chain(&self.paths.chain, network.chain())?;
        files::write_json(&self.paths.bank, network.bank())?;
        files::write_json(&files::pending_path(&self.paths.chain), network.pool())?;
        Ok(())
    }

    fn lock(&self) -> Result<WriteLock, Failure> {
        Ok(WriteLock::acquire(&self.paths.chain)?)
    }
}

/// Parse-free entry point: run a command, writing machine output to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<(), Failure> {
    let config: ConfigFile = match &cli.config {
        Some(p) => files::read_json(p)?,
        None => ConfigFile::default(),
    };
    let paths = Paths {
        chain: cli
            .chain
            .or_else(|| config.chain.clone())
            .unwrap_or_else(|| DEFAULT_CHAIN.into()),
        bank: cli
            .bank
            .or_else(|| config.bank.clone())
            .unwrap_or_else(|| DEFAULT_BANK.into()),
    };
    let ctx = Context {
        paths,
        config,
        now: cli.now,
    };
    match cli.command {
        Command::Init(args) => init(&ctx, args, out),
        Command::Submit(args) => submit(&ctx, args, out),
        Command::Verify(args) => verify(&ctx, args, out),
        Command::Tick => tick(&ctx, out),
        Command::Inspect(args) => inspect(&ctx, args, out),
        Command::Rank(args) => rank(&ctx, args, out),
        Command::Simulate(args) => simulate(args, out),
    }
}

fn emit(out: &mut dyn Write, text: impl AsRef<str>) -> Result<(), Failure> {
    writeln!(out, "{}", text.as_ref()).map_err(|e| Failure::env(format!("stdout: {e}")))
}

fn parse_nodes(args: &InitArgs) -> Result<Vec<GenesisNode>, Failure> {
    if args.equal < 0 {
        return Err(Failure::env(format!(
            "invalid allocation: --equal {} is negative",
            args.equal
        )));
    }
    let mut nodes: Vec<GenesisNode> = args
        .nodes
        .iter()
        .map(|spec| {
            let (id, affiliation) = match spec.split_once('@') {
                Some((id, inst)) => (id.trim(), Some(inst.trim().to_string())),
                None => (spec.trim(), None),
            };
            GenesisNode {
                id: NodeId::from(id),
                affiliation,
                balance: args.equal as Probos,
            }
        })
        .collect();
    for entry in &args.balances {
        let (id, amount) = entry
            .split_once('=')
            .ok_or_else(|| Failure::env(format!("invalid allocation {entry:?}: expected id=amount")))?;
        let amount: Probos = amount
            .trim()
            .parse()
            .map_err(|_| Failure::env(format!("invalid allocation {entry:?}: bad amount")))?;
        let node = nodes
            .iter_mut()
            .find(|n| n.id.as_str() == id.trim())
            .ok_or_else(|| Failure::env(format!("invalid allocation: {id} is not in --nodes")))?;
        node.balance = amount;
    }
    Ok(nodes)
}

fn init(ctx: &Context, args: InitArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let _lock = ctx.lock()?;
    let existing: Vec<&Path> = [ctx.paths.chain.as_path(), ctx.paths.bank.as_path()]
        .into_iter()
        .filter(|p| p.exists())
        .collect();
    if !args.force && !existing.is_empty() {
        return Err(Failure::env(format!(
            "{} already exists (use --force to overwrite)",
            existing[0].display()
        )));
    }
    let defaults = EconomicParams::default();
    let quorum = QuorumConfig::default();
    let cfg = &ctx.config;
    let horizon_hours = args
        .horizon_hours
        .or(cfg.horizon_hours)
        .unwrap_or(DEFAULT_HORIZON_HOURS);
    let config = GenesisConfig {
        nodes: parse_nodes(&args)?,
        economics: EconomicParams {
            min_deposit: args.min_deposit.or(cfg.min_deposit).unwrap_or(defaults.min_deposit),
            verifier_reward: args
                .verifier_reward
                .or(cfg.verifier_reward)
                .unwrap_or(defaults.verifier_reward),
        },
        quorum: QuorumConfig {
            min_reports: args.min_reports.or(cfg.min_reports).unwrap_or(quorum.min_reports),
            accept_threshold: args
                .accept_threshold
                .or(cfg.accept_threshold)
                .unwrap_or(quorum.accept_threshold),
        },
        horizon: horizon_hours.saturating_mul(SECONDS_PER_HOUR),
        units_per_hour: SECONDS_PER_HOUR,
    };
    let network = Network::genesis(config, ctx.now()?).map_err(|e| Failure::env(e.to_string()))?;
    ctx.save(&network)?;
    let genesis = network.chain().tail().expect("genesis block");
    emit(out, format!("genesis {}", genesis.block_hash))
}

fn submit(ctx: &Context, args: SubmitArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let _lock = ctx.lock()?;
    let mut network = ctx.load()?;
    let mut descriptor: StudyDescriptor = files::read_json(&args.descriptor)?;
    let outputs: OutputTable = files::read_json(&args.outputs)?;
    if descriptor.request_id.is_empty() {
        let d = digest_of(&descriptor).map_err(|e| Failure::domain(e.to_string()))?;
        descriptor.request_id = format!("req-{}", &d.to_string()[..12]);
    }
    let commitment = commit_outputs(&outputs).map_err(|e| Failure::domain(e.to_string()))?;
    let deposit = args
        .deposit
        .unwrap_or(network.bank().params().min_deposit);
    let now = ctx.now()?;
    let pending = network.submit(descriptor, outputs, commitment, deposit, now)?;
    let lines = format!(
        "request_id {}\ncommitment {}\ndeposit {}\ndeadline {}",
        pending.request_id(),
        pending.commitment,
        pending.deposit,
        pending.deadline
    );
    ctx.save(&network)?;
    emit(out, lines)
}

fn verify(ctx: &Context, args: VerifyArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let _lock = ctx.lock()?;
    let mut network = ctx.load()?;
    let table: OutputTable = files::read_json(&args.outputs)?;
    let verifier = NodeId::from(args.verifier.as_str());
    let outcome = network.file_report(&args.request, &verifier, table, ctx.now()?)?;
    ctx.save(&network)?;
    emit(out, format!("{:?}", outcome.report.verdict.value))?;
    match outcome.finalized {
        Some(f) => {
            emit(out, format!("{:?}", f.decision))?;
            emit(out, format!("block {} {}", f.block_index, f.block_hash))
        }
        None => {
            let filed = network
                .pending(&args.request)
                .map_or(0, |r| r.reports.len());
            emit(
                out,
                format!(
                    "Pending ({filed}/{} reports)",
                    network.config().quorum.min_reports
                ),
            )
        }
    }
}

fn tick(ctx: &Context, out: &mut dyn Write) -> Result<(), Failure> {
    let _lock = ctx.lock()?;
    let mut network = ctx.load()?;
    let expired = network.expire_due(ctx.now()?)?;
    ctx.save(&network)?;
    emit(out, format!("{} expired", expired.len()))?;
    for f in &expired {
        emit(out, format!("{} block {} {}", f.request_id, f.block_index, f.block_hash))?;
    }
    Ok(())
}

fn to_pretty<T: serde::Serialize>(value: &T) -> Result<String, Failure> {
    serde_json::to_string_pretty(value).map_err(|e| Failure::domain(e.to_string()))
}

fn inspect(ctx: &Context, args: InspectArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let chain = files::read_chain(&ctx.paths.chain)?;
    if let Err(fault) = chain.validate() {
        return Err(Failure::domain(fault.to_string()));
    }
    let text = if let Some(index) = args.block {
        let block = chain
            .blocks()
            .get(index)
            .ok_or_else(|| Failure::domain(format!("no block at index {index} (length {})", chain.len())))?;
        to_pretty(block)?
    } else if let Some(id) = args.request {
        match chain.find_request(&id) {
            Some(block) => to_pretty(block)?,
            None => {
                let pool = files::read_pending(&ctx.paths.chain)?;
                let pending = pool
                    .requests
                    .get(&id)
                    .ok_or_else(|| Failure::domain(format!("unknown request {id}")))?;
                to_pretty(pending)?
            }
        }
    } else {
        to_pretty(&chain.blocks())?
    };
    emit(out, text)
}

fn rank(ctx: &Context, args: RankArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let chain = files::read_chain(&ctx.paths.chain)?;
    let weights = ReputationWeights {
        w_accept: args.w_accept,
        w_verify: args.w_verify,
        w_reject: args.w_reject,
    };
    let board = if args.institutions {
        reputation::institution_scores(&chain, &weights)
    } else {
        reputation::compute_scores(&chain, &weights)
    }
    .map_err(|e| Failure::domain(e.to_string()))?;
    let ranked = reputation::rank(&board);
    let csv = files::ranking_csv(&board, &ranked).map_err(|e| Failure::env(e.to_string()))?;
    write!(out, "{csv}").map_err(|e| Failure::env(format!("stdout: {e}")))
}

fn simulate(args: SimulateArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let text = std::fs::read_to_string(&args.scenario)
        .map_err(|e| Failure::env(format!("{}: {e}", args.scenario.display())))?;
    let mut scenario: Scenario = serde_json::from_str(&text)
        .map_err(|e| Failure::domain(format!("invalid scenario: {}: {e}", args.scenario.display())))?;
    if let Some(seed) = args.seed {
        scenario.seed = seed;
    }
    let result = run_scenario(&scenario).map_err(|e| match e {
        SimError::InvalidScenario(_) => Failure::domain(e.to_string()),
        other => Failure::domain(format!("simulation failed: {other}")),
    })?;
    std::fs::create_dir_all(&args.out)
        .map_err(|e| Failure::env(format!("{}: {e}", args.out.display())))?;
    files::write_chain(&args.out.join("chain.jsonl"), &result.chain)?;
    files::write_events(&args.out.join("events.jsonl"), &result.events)?;
    files::write_json(&args.out.join("summary.json"), &result.summary)?;
    emit(out, to_pretty(&result.summary)?)
}
