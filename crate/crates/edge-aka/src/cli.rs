//! Command-line front end over the file-backed stores.
//!
//! Every command operates on a store directory (`--dir`): the trust
//! authority, each server, and each device persist as snapshot files, so
//! separate invocations model separate machines. Randomness is drawn from
//! a seeded generator (`--seed`); together with a fixed store this makes
//! every command's stdout replayable. Timing output, which is inherently
//! non-reproducible, goes to stderr.
//!
//! Exit codes: 0 success, 1 protocol failure (rejected authentication,
//! wrong password, accepted forgery, budget mismatch), 2 usage or
//! configuration error (bad flags, missing or conflicting store files).

use std::collections::BTreeMap;
use std::io::{BufRead, Write as _};
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde_json::json;

use crate::caps::{Route, ServiceMap};
use crate::cloud::CloudServer;
use crate::crypto::{Clock, ClockHandle, SessionKey};
use crate::device::{password_key, Device, DeviceConfig, LoginToken, PoolMode};
use crate::edge::{EdgeOutcome, EdgeServer};
use crate::harness::adversary::{self, BATTERY_NAMES};
use crate::harness::metrics::{self, CostRecord, ExchangeCase};
use crate::harness::runner::Runner;
use crate::harness::scenario::Expect;
use crate::snapshot;
use crate::ta::TrustAuthority;
use crate::wire::WireMessage;

/// Authenticated key agreement for device / edge / cloud deployments.
#[derive(Debug, Parser)]
#[command(name = "edge-aka", version, max_term_width = 100)]
struct Cli {
    /// Store directory holding authority, server, and device snapshots.
    #[arg(long, global = true, default_value = "store")]
    dir: PathBuf,

    /// Seed for all randomness; fixed seed + fixed store = same output.
    #[arg(long, global = true, default_value_t = 7)]
    seed: u64,

    /// Freshness window in seconds for timestamp checks.
    #[arg(long, global = true, default_value_t = crate::DEFAULT_FRESHNESS_WINDOW)]
    window: u32,

    /// Pseudonym pairs issued per device-edge pairing.
    #[arg(long, global = true, default_value_t = crate::DEFAULT_POOL_SIZE)]
    pool: u32,

    /// Whether devices reuse pseudonym pairs or spend each once.
    #[arg(long, global = true, value_enum, default_value_t = PoolModeArg::Reuse)]
    pool_mode: PoolModeArg,

    /// Failed local logins tolerated before the device store locks.
    #[arg(long, global = true, default_value_t = crate::DEFAULT_LOCKOUT_LIMIT)]
    lockout: u32,

    /// Print long-term secrets and raw session keys (off by default).
    #[arg(long, global = true)]
    show_secrets: bool,

    /// Emit one machine-readable JSON object instead of text.
    #[arg(long, global = true)]
    json: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PoolModeArg {
    /// Pseudonym pairs are reused across authentications.
    Reuse,
    /// Each pseudonym pair is spent after one use.
    SingleUse,
}

impl From<PoolModeArg> for PoolMode {
    fn from(arg: PoolModeArg) -> PoolMode {
        match arg {
            PoolModeArg::Reuse => PoolMode::WithReplacement,
            PoolModeArg::SingleUse => PoolMode::SingleUse,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Initialize the trust authority store in --dir.
    Setup {
        /// Overwrite an existing store instead of refusing.
        #[arg(long)]
        force: bool,
    },
    /// Register a cloud server, edge server, or device with the authority.
    #[command(subcommand)]
    Register(RegisterRole),
    /// Run one authentication from a device through an edge server.
    Auth {
        /// User identity the device was registered under.
        #[arg(long)]
        uid: String,
        /// Device identity.
        #[arg(long)]
        id: String,
        /// Edge server to contact.
        #[arg(long)]
        es: String,
        /// Service request, e.g. `telemetry:read`; the part before `:` routes it.
        #[arg(long)]
        service: String,
        /// Password (prompted on stdin when omitted).
        #[arg(long)]
        password: Option<String>,
    },
    /// Run a scripted adversary battery; exits 0 only if every attempt is rejected.
    Attack {
        /// Battery name, or `all`.
        #[arg(default_value = "all")]
        scenario: String,
    },
    /// Measure per-entity hash counts and wire bits over repeated runs.
    Bench {
        /// Authentications per exchange shape.
        #[arg(long, default_value_t = 200)]
        runs: u32,
    },
    /// Change a device password, re-masking its stored credentials.
    UpdatePassword {
        /// User identity.
        #[arg(long)]
        uid: String,
        /// Device identity.
        #[arg(long)]
        id: String,
        /// Current password (prompted when omitted).
        #[arg(long)]
        old_password: Option<String>,
        /// Replacement password (prompted when omitted).
        #[arg(long)]
        new_password: Option<String>,
    },
}

#[derive(Debug, Subcommand)]
enum RegisterRole {
    /// Register a cloud server and the service tags it serves.
    Cs(RegisterCs),
    /// Register an edge server and its routing table.
    Es(RegisterEs),
    /// Register a device for a user against one or more edge servers.
    Device(RegisterDevice),
}

#[derive(Debug, Args)]
struct RegisterCs {
    /// Cloud server identity, e.g. `CS1`.
    #[arg(long)]
    cid: String,
    /// Service tag served by this cloud (repeatable).
    #[arg(long = "service", required = true)]
    services: Vec<String>,
}

#[derive(Debug, Args)]
struct RegisterEs {
    /// Edge server identity, e.g. `ES1`.
    #[arg(long)]
    eid: String,
    /// Route entry `tag=local` or `tag=CS1,CS2` (repeatable).
    #[arg(long = "route", required = true)]
    routes: Vec<String>,
}

#[derive(Debug, Args)]
struct RegisterDevice {
    /// User identity.
    #[arg(long)]
    uid: String,
    /// Device identity.
    #[arg(long)]
    id: String,
    /// Password (prompted on stdin when omitted).
    #[arg(long)]
    password: Option<String>,
    /// Edge server to pair with (repeatable; default: every registered one).
    #[arg(long = "es")]
    edges: Vec<String>,
}

/// A command failure, split by which exit code it maps to.
#[derive(Debug)]
enum CliError {
    /// Exit 2: bad invocation or broken/conflicting store files.
    Usage(String),
    /// Exit 1: the protocol itself said no.
    Protocol(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Protocol(_) => 1,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Protocol(m) => m,
        }
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn protocol(msg: impl Into<String>) -> CliError {
    CliError::Protocol(msg.into())
}

/// Parses argv, runs the selected command, and returns the process exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = err.exit_code();
            let _ = err.print();
            return code;
        }
    };
    let mut ctx = Ctx::new(&cli);
    let result = match cli.command {
        Command::Setup { force } => cmd_setup(&mut ctx, force),
        Command::Register(role) => match role {
            RegisterRole::Cs(args) => cmd_register_cs(&mut ctx, &args),
            RegisterRole::Es(args) => cmd_register_es(&mut ctx, &args),
            RegisterRole::Device(args) => cmd_register_device(&mut ctx, &args),
        },
        Command::Auth {
            uid,
            id,
            es,
            service,
            password,
        } => cmd_auth(&mut ctx, &uid, &id, &es, &service, password),
        Command::Attack { scenario } => cmd_attack(&ctx, &scenario),
        Command::Bench { runs } => cmd_bench(&ctx, runs),
        Command::UpdatePassword {
            uid,
            id,
            old_password,
            new_password,
        } => cmd_update_password(&ctx, &uid, &id, old_password, new_password),
    };
    match result {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {}", err.message());
            err.code()
        }
    }
}

/// Everything a command needs: resolved flags, the seeded generator, and
/// a shared wall-clock all restored entities tick against.
struct Ctx {
    dir: PathBuf,
    seed: u64,
    rng: ChaCha20Rng,
    clock: Arc<Clock>,
    window: u32,
    pool: u32,
    pool_mode: PoolMode,
    lockout: u32,
    show_secrets: bool,
    json: bool,
}

impl Ctx {
    fn new(cli: &Cli) -> Ctx {
        Ctx {
            dir: cli.dir.clone(),
            seed: cli.seed,
            rng: ChaCha20Rng::seed_from_u64(cli.seed),
            clock: Clock::from_system_time(),
            window: cli.window,
            pool: cli.pool,
            pool_mode: cli.pool_mode.into(),
            lockout: cli.lockout,
            show_secrets: cli.show_secrets,
            json: cli.json,
        }
    }

    fn handle(&self) -> ClockHandle {
        ClockHandle::new(Arc::clone(&self.clock))
    }

    fn device_config(&self) -> DeviceConfig {
        DeviceConfig {
            lockout_limit: self.lockout,
            freshness_window: self.window,
            pool_mode: self.pool_mode,
        }
    }

    fn load_ta(&self) -> Result<TrustAuthority, CliError> {
        let path = snapshot::ta_path(&self.dir);
        let records = snapshot::read_records(&path)
            .map_err(|e| usage(format!("cannot load authority store {}: {e}", path.display())))?;
        TrustAuthority::restore(&records, self.handle())
            .map_err(|e| usage(format!("authority store {} is damaged: {e}", path.display())))
    }

    fn save_ta(&self, ta: &TrustAuthority) -> Result<(), CliError> {
        let path = snapshot::ta_path(&self.dir);
        snapshot::write_records(&path, &ta.snapshot())
            .map_err(|e| usage(format!("cannot write {}: {e}", path.display())))
    }

    fn load_device(&self, uid: &str, id: &str) -> Result<Device, CliError> {
        let path = snapshot::device_path(&self.dir, uid, id);
        let records = snapshot::read_records(&path).map_err(|e| {
            usage(format!(
                "no store for device {uid}/{id} at {}: {e}",
                path.display()
            ))
        })?;
        Device::restore(&records, self.handle(), self.device_config())
            .map_err(|e| usage(format!("device store {} is damaged: {e}", path.display())))
    }

    fn save_device(&self, device: &Device, uid: &str, id: &str) -> Result<(), CliError> {
        let path = snapshot::device_path(&self.dir, uid, id);
        snapshot::write_records(&path, &device.snapshot())
            .map_err(|e| usage(format!("cannot write {}: {e}", path.display())))
    }

    fn load_edge(&self, eid: &str) -> Result<EdgeServer, CliError> {
        let snap = snapshot::edge_path(&self.dir, eid);
        let caps = snapshot::edge_caps_path(&self.dir, eid);
        let records = snapshot::read_records(&snap).map_err(|e| {
            usage(format!(
                "no store for edge server {eid} at {}: {e}",
                snap.display()
            ))
        })?;
        let text = std::fs::read_to_string(&caps)
            .map_err(|e| usage(format!("cannot read capability file {}: {e}", caps.display())))?;
        let map = ServiceMap::parse(&text)
            .map_err(|e| usage(format!("capability file {} is damaged: {e}", caps.display())))?;
        EdgeServer::restore(&records, map, self.handle(), self.window)
            .map_err(|e| usage(format!("edge store {} is damaged: {e}", snap.display())))
    }

    fn load_cloud(&self, cid: &str) -> Result<CloudServer, CliError> {
        let snap = snapshot::cloud_path(&self.dir, cid);
        let caps = snapshot::cloud_services_path(&self.dir, cid);
        let records = snapshot::read_records(&snap).map_err(|e| {
            usage(format!(
                "no store for cloud server {cid} at {}: {e}",
                snap.display()
            ))
        })?;
        let text = std::fs::read_to_string(&caps)
            .map_err(|e| usage(format!("cannot read service file {}: {e}", caps.display())))?;
        let map = ServiceMap::parse(&text)
            .map_err(|e| usage(format!("service file {} is damaged: {e}", caps.display())))?;
        CloudServer::restore(&records, map, self.handle(), self.window)
            .map_err(|e| usage(format!("cloud store {} is damaged: {e}", snap.display())))
    }

    /// Edge ids present in the store directory, in name order.
    fn list_edges(&self) -> Result<Vec<String>, CliError> {
        let mut out = Vec::new();
        let entries = std::fs::read_dir(&self.dir)
            .map_err(|e| usage(format!("cannot list {}: {e}", self.dir.display())))?;
        for entry in entries {
            let entry = entry.map_err(|e| usage(format!("cannot list store: {e}")))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if let Some(hex_id) = name
                .strip_prefix("es_")
                .and_then(|rest| rest.strip_suffix(".snap"))
            {
                if let Ok(bytes) = hex::decode(hex_id) {
                    if let Ok(id) = String::from_utf8(bytes) {
                        out.push(id);
                    }
                }
            }
        }
        out.sort();
        Ok(out)
    }

    fn emit(&self, value: serde_json::Value, text: &[String]) {
        if self.json {
            println!("{value}");
        } else {
            for line in text {
                println!("{line}");
            }
        }
    }
}

/// Reads a password from the flag, or prompts for it on stdin.
fn resolve_password(given: Option<String>, prompt: &str) -> Result<String, CliError> {
    if let Some(p) = given {
        return Ok(p);
    }
    eprint!("{prompt}");
    let _ = std::io::stderr().flush();
    let mut line = String::new();
    let read = std::io::stdin()
        .lock()
        .read_line(&mut line)
        .map_err(|e| usage(format!("cannot read password from stdin: {e}")))?;
    if read == 0 {
        return Err(usage("a password is required (flag or stdin)"));
    }
    Ok(line.trim_end_matches(['\r', '\n']).to_string())
}

fn cmd_setup(ctx: &mut Ctx, force: bool) -> Result<(), CliError> {
    std::fs::create_dir_all(&ctx.dir)
        .map_err(|e| usage(format!("cannot create {}: {e}", ctx.dir.display())))?;
    let path = snapshot::ta_path(&ctx.dir);
    if path.exists() && !force {
        return Err(usage(format!(
            "store already initialized at {} (pass --force to replace it)",
            path.display()
        )));
    }
    let handle = ctx.handle();
    let ta = TrustAuthority::setup(&mut ctx.rng, handle);
    ctx.save_ta(&ta)?;
    let mut text = vec![format!(
        "initialized trust authority store at {}",
        path.display()
    )];
    let mut value = json!({
        "command": "setup",
        "store": path.display().to_string(),
        "forced": force,
    });
    if ctx.show_secrets {
        let secret = hex::encode(ta.secret().as_bytes());
        text.push(format!("registration secret: {secret}"));
        value["registration_secret"] = json!(secret);
    }
    ctx.emit(value, &text);
    Ok(())
}

fn cmd_register_cs(ctx: &mut Ctx, args: &RegisterCs) -> Result<(), CliError> {
    let mut ta = ctx.load_ta()?;
    let mut services = ServiceMap::new();
    for tag in &args.services {
        services
            .insert(tag, Route::Local)
            .map_err(|e| usage(format!("bad --service {tag}: {e}")))?;
    }
    let response = ta
        .register_cloud(&args.cid, &mut ctx.rng)
        .map_err(|e| usage(e.to_string()))?;
    let server = CloudServer::from_registration(
        &args.cid,
        &response,
        services.clone(),
        ctx.handle(),
        ctx.window,
    )
    .map_err(|e| usage(format!("registration reply was malformed: {e}")))?;
    let snap = snapshot::cloud_path(&ctx.dir, &args.cid);
    let caps = snapshot::cloud_services_path(&ctx.dir, &args.cid);
    snapshot::write_records(&snap, &server.snapshot())
        .map_err(|e| usage(format!("cannot write {}: {e}", snap.display())))?;
    std::fs::write(&caps, services.to_text())
        .map_err(|e| usage(format!("cannot write {}: {e}", caps.display())))?;
    ctx.save_ta(&ta)?;
    let tags = args.services.join(", ");
    let mut text = vec![format!(
        "registered cloud server {} serving: {tags}",
        args.cid
    )];
    let mut value = json!({
        "command": "register-cs",
        "cid": args.cid,
        "services": args.services,
        "store": snap.display().to_string(),
    });
    if ctx.show_secrets {
        if let WireMessage::RegisterCsResponse { credential, .. } = &response {
            let hex = hex::encode(credential.as_bytes());
            text.push(format!("long-term credential: {hex}"));
            value["credential"] = json!(hex);
        }
    }
    ctx.emit(value, &text);
    Ok(())
}

/// Parses one `--route tag=local` / `--route tag=CS1,CS2` argument.
fn parse_route(raw: &str) -> Result<(String, Route), CliError> {
    let (tag, target) = raw
        .split_once('=')
        .ok_or_else(|| usage(format!("bad --route `{raw}`: expected tag=local or tag=CS1,CS2")))?;
    let tag = tag.trim();
    let target = target.trim();
    if tag.is_empty() || target.is_empty() {
        return Err(usage(format!("bad --route `{raw}`: empty tag or target")));
    }
    if target == "local" {
        return Ok((tag.to_string(), Route::Local));
    }
    let clouds: Vec<String> = target
        .split(',')
        .map(|c| c.trim().to_string())
        .filter(|c| !c.is_empty())
        .collect();
    if clouds.is_empty() {
        return Err(usage(format!("bad --route `{raw}`: no cloud servers named")));
    }
    Ok((tag.to_string(), Route::Clouds(clouds)))
}

fn cmd_register_es(ctx: &mut Ctx, args: &RegisterEs) -> Result<(), CliError> {
    let mut ta = ctx.load_ta()?;
    let mut capabilities = ServiceMap::new();
    let mut pairings: Vec<String> = Vec::new();
    for raw in &args.routes {
        let (tag, route) = parse_route(raw)?;
        if let Route::Clouds(clouds) = &route {
            for cid in clouds {
                if !pairings.contains(cid) {
                    pairings.push(cid.clone());
                }
            }
        }
        capabilities
            .insert(&tag, route)
            .map_err(|e| usage(format!("bad --route {raw}: {e}")))?;
    }
    let response = ta
        .register_edge(&args.eid, &pairings, &mut ctx.rng)
        .map_err(|e| usage(e.to_string()))?;
    let server = EdgeServer::from_registration(
        &args.eid,
        &response,
        capabilities.clone(),
        ctx.handle(),
        ctx.window,
    )
    .map_err(|e| usage(format!("registration reply was malformed: {e}")))?;
    let snap = snapshot::edge_path(&ctx.dir, &args.eid);
    let caps = snapshot::edge_caps_path(&ctx.dir, &args.eid);
    snapshot::write_records(&snap, &server.snapshot())
        .map_err(|e| usage(format!("cannot write {}: {e}", snap.display())))?;
    std::fs::write(&caps, capabilities.to_text())
        .map_err(|e| usage(format!("cannot write {}: {e}", caps.display())))?;
    ctx.save_ta(&ta)?;
    let routes: Vec<String> = capabilities
        .entries()
        .map(|(tag, route)| match route {
            Route::Local => format!("{tag} -> local"),
            Route::Clouds(c) => format!("{tag} -> {}", c.join(",")),
        })
        .collect();
    let mut text = vec![format!(
        "registered edge server {}: {}",
        args.eid,
        routes.join("; ")
    )];
    if !pairings.is_empty() {
        text.push(format!("paired with: {}", pairings.join(", ")));
    }
    let mut value = json!({
        "command": "register-es",
        "eid": args.eid,
        "routes": routes,
        "paired_clouds": pairings,
        "store": snap.display().to_string(),
    });
    if ctx.show_secrets {
        if let WireMessage::RegisterEsResponse { credential, .. } = &response {
            let hex = hex::encode(credential.as_bytes());
            text.push(format!("long-term credential: {hex}"));
            value["credential"] = json!(hex);
        }
    }
    ctx.emit(value, &text);
    Ok(())
}

fn cmd_register_device(ctx: &mut Ctx, args: &RegisterDevice) -> Result<(), CliError> {
    let password = resolve_password(args.password.clone(), "password: ")?;
    let mut ta = ctx.load_ta()?;
    let edges = if args.edges.is_empty() {
        ctx.list_edges()?
    } else {
        args.edges.clone()
    };
    if edges.is_empty() {
        return Err(usage(
            "no edge servers registered yet; pass --es or register one first",
        ));
    }
    let response = ta
        .register_device(
            &args.uid,
            &args.id,
            password_key(&args.uid, &password),
            &edges,
            ctx.pool,
            &mut ctx.rng,
        )
        .map_err(|e| usage(e.to_string()))?;
    let device = Device::from_registration(
        &args.uid,
        &args.id,
        &password,
        &response,
        ctx.handle(),
        ctx.device_config(),
    )
    .map_err(|e| usage(format!("registration reply was malformed: {e}")))?;
    let path = snapshot::device_path(&ctx.dir, &args.uid, &args.id);
    ctx.save_device(&device, &args.uid, &args.id)?;
    ctx.save_ta(&ta)?;
    let text = vec![format!(
        "registered device {}/{}: {} pseudonym pairs for each of {}",
        args.uid,
        args.id,
        ctx.pool,
        edges.join(", ")
    )];
    let value = json!({
        "command": "register-device",
        "uid": args.uid,
        "id": args.id,
        "edges": edges,
        "pool": ctx.pool,
        "store": path.display().to_string(),
    });
    ctx.emit(value, &text);
    Ok(())
}

/// One finished authentication: which shape it took, the agreed key, and
/// the measured cost.
struct ExchangeReport {
    case: ExchangeCase,
    cloud_id: Option<String>,
    key: SessionKey,
    record: CostRecord,
}

/// Drives one authentication against restored entities, checking that the
/// device's key matches the responding server's. Cloud servers are loaded
/// on demand into `clouds` keyed by id.
fn run_exchange(
    ctx: &mut Ctx,
    device: &mut Device,
    token: &LoginToken,
    edge: &mut EdgeServer,
    clouds: &mut BTreeMap<String, CloudServer>,
    corr: u64,
    service: &[u8],
) -> Result<ExchangeReport, CliError> {
    let device_base = device.meter().calls();
    let edge_base = edge.meter().calls();
    let msg1 = device
        .begin_auth(token, &edge.public_id(), service, corr, &mut ctx.rng)
        .map_err(|e| protocol(format!("device could not start: {e}")))?;
    let mut bits = vec![(msg1.variant().to_string(), msg1.accounted_bits())];
    let outcome = edge
        .handle_request(corr, &msg1, &mut ctx.rng)
        .map_err(|e| protocol(format!("edge server rejected the request: {e}")))?;
    match outcome {
        EdgeOutcome::Direct(reply) => {
            bits.push((reply.variant().to_string(), reply.accounted_bits()));
            let key = device
                .complete_direct(corr, &reply)
                .map_err(|e| protocol(format!("device rejected the response: {e}")))?;
            let peer = edge
                .take_session_key(corr)
                .ok_or_else(|| protocol("edge server recorded no session key".to_string()))?;
            if peer != key {
                return Err(protocol("session keys disagree".to_string()));
            }
            Ok(ExchangeReport {
                case: ExchangeCase::Direct,
                cloud_id: None,
                key,
                record: CostRecord {
                    case: ExchangeCase::Direct,
                    device_hashes: device.meter().calls() - device_base,
                    edge_hashes: edge.meter().calls() - edge_base,
                    cloud_hashes: 0,
                    message_bits: bits,
                },
            })
        }
        EdgeOutcome::Relay { cloud_id, message } => {
            if !clouds.contains_key(&cloud_id) {
                let loaded = ctx.load_cloud(&cloud_id)?;
                clouds.insert(cloud_id.clone(), loaded);
            }
            let cloud = clouds.get_mut(&cloud_id).expect("inserted above");
            let cloud_base = cloud.meter().calls();
            bits.push((message.variant().to_string(), message.accounted_bits()));
            let msg4 = cloud
                .handle_relay(corr, &message, &mut ctx.rng)
                .map_err(|e| protocol(format!("cloud server rejected the relay: {e}")))?;
            bits.push((msg4.variant().to_string(), msg4.accounted_bits()));
            let msg5 = edge
                .handle_cloud_response(corr, &msg4)
                .map_err(|e| protocol(format!("edge server rejected the cloud reply: {e}")))?;
            bits.push((msg5.variant().to_string(), msg5.accounted_bits()));
            let key = device
                .complete_relayed(corr, &msg5)
                .map_err(|e| protocol(format!("device rejected the final message: {e}")))?;
            let peer = cloud
                .take_session_key(corr)
                .ok_or_else(|| protocol("cloud server recorded no session key".to_string()))?;
            if peer != key {
                return Err(protocol("session keys disagree".to_string()));
            }
            Ok(ExchangeReport {
                case: ExchangeCase::Relayed,
                cloud_id: Some(cloud_id),
                key,
                record: CostRecord {
                    case: ExchangeCase::Relayed,
                    device_hashes: device.meter().calls() - device_base,
                    edge_hashes: edge.meter().calls() - edge_base,
                    cloud_hashes: cloud.meter().calls() - cloud_base,
                    message_bits: bits,
                },
            })
        }
    }
}

fn cmd_auth(
    ctx: &mut Ctx,
    uid: &str,
    id: &str,
    es: &str,
    service: &str,
    password: Option<String>,
) -> Result<(), CliError> {
    let password = resolve_password(password, "password: ")?;
    let mut device = ctx.load_device(uid, id)?;
    let mut edge = ctx.load_edge(es)?;
    let token = match device.login(uid, &password) {
        Ok(token) => token,
        Err(e) => {
            // The failed-attempt counter must survive the process.
            ctx.save_device(&device, uid, id)?;
            return Err(protocol(format!("login failed: {e}")));
        }
    };
    let mut clouds = BTreeMap::new();
    let result = run_exchange(
        ctx,
        &mut device,
        &token,
        &mut edge,
        &mut clouds,
        1,
        service.as_bytes(),
    );
    // Pool consumption and the reset lockout counter persist either way.
    ctx.save_device(&device, uid, id)?;
    let report = result?;
    let total_bits: u64 = report.record.message_bits.iter().map(|(_, b)| b).sum();
    let path = match &report.cloud_id {
        Some(cid) => format!("{es} -> {cid}"),
        None => es.to_string(),
    };
    let messages: Vec<String> = report
        .record
        .message_bits
        .iter()
        .map(|(name, b)| format!("{name}={b}"))
        .collect();
    let fingerprint = hex::encode(report.key.fingerprint().as_bytes());
    let mut text = vec![
        format!(
            "{} via {path}: accepted, {total_bits} bits on the wire",
            report.case
        ),
        format!("  messages: {}", messages.join(" ")),
        format!(
            "  hashes: device {}, edge {}, cloud {}, total {}",
            report.record.device_hashes,
            report.record.edge_hashes,
            report.record.cloud_hashes,
            report.record.total_hashes()
        ),
        format!("  session key fingerprint: {fingerprint}"),
    ];
    let mut value = json!({
        "command": "auth",
        "case": match report.case {
            ExchangeCase::Direct => 1,
            ExchangeCase::Relayed => 2,
        },
        "accepted": true,
        "edge": es,
        "cloud": report.cloud_id,
        "bits_total": total_bits,
        "messages": report.record.message_bits,
        "hashes": {
            "device": report.record.device_hashes,
            "edge": report.record.edge_hashes,
            "cloud": report.record.cloud_hashes,
            "total": report.record.total_hashes(),
        },
        "session_key_fingerprint": fingerprint,
    });
    if ctx.show_secrets {
        let raw = hex::encode(report.key.0.as_bytes());
        text.push(format!("  session key: {raw}"));
        value["session_key"] = json!(raw);
    }
    ctx.emit(value, &text);
    Ok(())
}

fn cmd_attack(ctx: &Ctx, scenario: &str) -> Result<(), CliError> {
    let reports = if scenario == "all" {
        adversary::run_all_batteries(ctx.seed)
            .map_err(|e| protocol(format!("battery could not run: {e}")))?
    } else {
        if !BATTERY_NAMES.contains(&scenario) {
            return Err(usage(format!(
                "unknown attack scenario `{scenario}`; known: all, {}",
                BATTERY_NAMES.join(", ")
            )));
        }
        vec![adversary::run_battery(scenario, ctx.seed)
            .map_err(|e| protocol(format!("battery could not run: {e}")))?]
    };
    let mut text = Vec::new();
    let mut rows = Vec::new();
    let mut all_clean = true;
    for report in &reports {
        all_clean &= report.clean();
        text.push(report.summary_line());
        for detail in &report.accepted_details {
            text.push(format!("    accepted: {detail}"));
        }
        for note in &report.sanity {
            text.push(format!("    sanity: {note}"));
        }
        rows.push(json!({
            "name": report.name,
            "attempts": report.attempts,
            "rejected": report.rejected,
            "accepted": report.accepted,
            "accepted_details": report.accepted_details,
            "sanity": report.sanity,
            "clean": report.clean(),
        }));
    }
    text.push(if all_clean {
        format!("clean: {0}/{0} batteries rejected every attempt", reports.len())
    } else {
        "BREACHED: at least one forged or replayed attempt was accepted".to_string()
    });
    let value = json!({
        "command": "attack",
        "seed": ctx.seed,
        "batteries": rows,
        "clean": all_clean,
    });
    ctx.emit(value, &text);
    if all_clean {
        Ok(())
    } else {
        Err(protocol("attack battery reported accepted attempts".to_string()))
    }
}

fn cmd_bench(ctx: &Ctx, runs: u32) -> Result<(), CliError> {
    if runs == 0 {
        return Err(usage("--runs must be at least 1"));
    }
    let topology = adversary::battery_topology(ctx.seed);
    let mut runner =
        Runner::new(&topology).map_err(|e| usage(format!("bench deployment failed: {e}")))?;
    let direct_start = Instant::now();
    for _ in 0..runs {
        let outcome = runner.run_auth(0, 0, adversary::DIRECT_SERVICE);
        if !Expect::Success.matches(outcome.kind) {
            return Err(protocol(format!("direct run failed: {}", outcome.detail)));
        }
    }
    let direct_elapsed = direct_start.elapsed();
    let relayed_start = Instant::now();
    for _ in 0..runs {
        let outcome = runner.run_auth(0, 0, adversary::RELAY_SERVICE);
        if !Expect::Success.matches(outcome.kind) {
            return Err(protocol(format!("relayed run failed: {}", outcome.detail)));
        }
    }
    let relayed_elapsed = relayed_start.elapsed();
    let report = metrics::summarize(runner.costs());
    for summary in report.cases() {
        if !summary.uniform {
            return Err(protocol(format!(
                "{} costs varied across {} runs; the protocol is fixed-cost",
                summary.case, summary.runs
            )));
        }
    }
    let mut text = Vec::new();
    text.extend(metrics::emit_text(&report).lines().map(String::from));
    std::fs::create_dir_all(&ctx.dir)
        .map_err(|e| usage(format!("cannot create {}: {e}", ctx.dir.display())))?;
    let csv_path = ctx.dir.join("bench.csv");
    std::fs::write(&csv_path, metrics::emit_csv(&report))
        .map_err(|e| usage(format!("cannot write {}: {e}", csv_path.display())))?;
    text.push(format!("wrote {}", csv_path.display()));
    // Wall-clock timing is the one non-reproducible number; stderr only.
    eprintln!(
        "timing (informational): Case 1 {:.1} us/run, Case 2 {:.1} us/run over {runs} runs each",
        direct_elapsed.as_secs_f64() * 1e6 / f64::from(runs),
        relayed_elapsed.as_secs_f64() * 1e6 / f64::from(runs),
    );
    let value = json!({
        "command": "bench",
        "runs": runs,
        "seed": ctx.seed,
        "cases": report.cases().map(|s| json!({
            "case": s.case.to_string(),
            "runs": s.runs,
            "device_hashes": s.device_hashes,
            "edge_hashes": s.edge_hashes,
            "cloud_hashes": s.cloud_hashes,
            "total_hashes": s.device_hashes + s.edge_hashes + s.cloud_hashes,
            "message_bits": s.message_bits,
            "total_bits": s.message_bits.iter().map(|(_, b)| b).sum::<u64>(),
            "uniform": s.uniform,
        })).collect::<Vec<_>>(),
        "csv": csv_path.display().to_string(),
    });
    ctx.emit(value, &text);
    Ok(())
}

fn cmd_update_password(
    ctx: &Ctx,
    uid: &str,
    id: &str,
    old_password: Option<String>,
    new_password: Option<String>,
) -> Result<(), CliError> {
    let old = resolve_password(old_password, "current password: ")?;
    let new = resolve_password(new_password, "new password: ")?;
    let mut device = ctx.load_device(uid, id)?;
    device
        .update_password(uid, &old, &new)
        .map_err(|e| protocol(format!("password update refused: {e}")))?;
    ctx.save_device(&device, uid, id)?;
    let text = vec![format!(
        "password updated for {uid}/{id}; stored credentials re-masked"
    )];
    let value = json!({
        "command": "update-password",
        "uid": uid,
        "id": id,
        "updated": true,
    });
    ctx.emit(value, &text);
    Ok(())
}
