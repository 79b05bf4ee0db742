//! Command-line front end: parse and compile MUD files, learn thresholds
//! from traces, replay traces through the enforcement engine, run
//! micro-benchmarks, serve fixtures over HTTP and drive device join/leave
//! events.

use std::collections::HashMap;
use std::net::IpAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use mudguard_core::compiler::{self, CompileError, DeviceContext};
use mudguard_core::datapath::{bench, DatapathError, LimiterMode};
use mudguard_core::flow::Direction;
use mudguard_core::learner::{
    self, Granularity, LearnError, Policy, TraceDirection, TraceProtocol,
};
use mudguard_core::manager::{self, EventOutcome, Manager, ManagerError};
use mudguard_core::mud::{self, Forwarding, MudError};
use mudguard_core::replay::{
    self, synth, AddressRemap, ReplayError, ReportFormat, TraceFormat,
};

#[derive(Parser)]
#[command(name = "mudguard", version, about = "MUD-driven flow allowlisting and rate limiting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a MUD file and print a summary of its ACLs and rate fields.
    Parse {
        /// Path to the MUD JSON document.
        file: PathBuf,
    },
    /// Compile a MUD file into datapath flow rules (JSON on stdout).
    Compile {
        /// Path to the MUD JSON document.
        file: PathBuf,
        /// Device context config (addresses + DNS map).
        #[arg(long = "device-ctx")]
        device_ctx: PathBuf,
        /// Enforcement window in seconds.
        #[arg(long, default_value_t = 60, value_parser = clap::value_parser!(u64).range(1..))]
        window: u64,
    },
    /// Analyze a CSV trace into per-window statistics and rate thresholds.
    Learn {
        /// CSV trace (timestamp_ns,device_id,direction,protocol,length,...).
        trace: PathBuf,
        /// Analysis window in seconds.
        #[arg(long, default_value_t = 60, value_parser = clap::value_parser!(u64).range(1..))]
        window: u64,
        /// JSON map of device_id to category.
        #[arg(long)]
        categories: PathBuf,
        /// Derive rate limits with this policy.
        #[arg(long)]
        policy: Option<PolicyArg>,
        /// Packet-limit rounding granularity.
        #[arg(long = "round-pkts", default_value_t = 10)]
        round_pkts: u64,
        /// Byte-limit rounding granularity.
        #[arg(long = "round-bytes", default_value_t = 1000)]
        round_bytes: u64,
        /// Per-category granularity config (overrides --round-*).
        #[arg(long)]
        granularity: Option<PathBuf>,
        /// Write the statistics CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Replay a trace through the datapath and report drop rates.
    Replay(ReplayArgs),
    /// Micro-benchmark rule insertion, deletion and the packet datapath.
    Bench {
        /// Number of rules to insert and delete.
        #[arg(long, default_value_t = 255)]
        rules: usize,
        /// Number of packets through the datapath.
        #[arg(long, default_value_t = 10_000)]
        packets: usize,
    },
    /// Serve a fixture directory over HTTP (plain GET, JSON content type).
    ServeFixtures {
        /// Directory to serve.
        dir: PathBuf,
        /// TCP port (0 picks an ephemeral port).
        #[arg(long, default_value_t = 8000)]
        port: u16,
    },
    /// Process a batch of device join/leave events.
    Manage {
        /// JSON events file.
        #[arg(long)]
        events: PathBuf,
        /// Device context config supplying the DNS map.
        #[arg(long = "device-ctx")]
        device_ctx: Option<PathBuf>,
        /// Re-read the events file every N seconds and process new entries.
        #[arg(long)]
        poll: Option<u64>,
    },
    /// Generate synthetic traces (CBR, SYN flood, appliance profile).
    Synth {
        #[command(subcommand)]
        kind: SynthKind,
    },
}

#[derive(Args)]
struct ReplayArgs {
    /// Trace file (.pcap/.cap or CSV).
    trace: PathBuf,
    /// MUD file whose rules will be enforced.
    #[arg(long)]
    mud: PathBuf,
    /// Device context config (addresses + DNS map).
    #[arg(long = "device-ctx")]
    device_ctx: PathBuf,
    /// Rate-limiter semantics.
    #[arg(long, value_enum)]
    mode: ModeArg,
    /// Address remap config applied before replay.
    #[arg(long)]
    remap: Option<PathBuf>,
    /// Report output path.
    #[arg(long)]
    report: PathBuf,
    /// Report format (default from the report extension).
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    /// Traffic direction being enforced.
    #[arg(long, value_enum, default_value_t = DirectionArg::FromDevice)]
    direction: DirectionArg,
    /// Enforcement window in seconds.
    #[arg(long, default_value_t = 60, value_parser = clap::value_parser!(u64).range(1..))]
    window: u64,
    /// Shard the replay by device (CSV traces only).
    #[arg(long)]
    parallel: bool,
}

#[derive(Subcommand)]
enum SynthKind {
    /// Constant-rate TCP SYN flood.
    SynFlood {
        #[command(flatten)]
        flow: SynthFlow,
        /// Packets per second.
        #[arg(long, default_value_t = 300)]
        rate: u64,
        /// Duration in seconds.
        #[arg(long, default_value_t = 600)]
        duration: u64,
    },
    /// Constant-bit-rate stream.
    Cbr {
        #[command(flatten)]
        flow: SynthFlow,
        #[arg(long, value_enum, default_value_t = ProtoArg::Tcp)]
        protocol: ProtoArg,
        /// Packets per second.
        #[arg(long, default_value_t = 10)]
        rate: u64,
        /// Duration in seconds.
        #[arg(long, default_value_t = 60)]
        duration: u64,
        /// Frame length in bytes.
        #[arg(long, default_value_t = 100)]
        len: u64,
    },
    /// Jittered appliance-style workload with periodic bursts.
    Appliance {
        #[command(flatten)]
        flow: SynthFlow,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 30)]
        minutes: u64,
    },
}

#[derive(Args)]
struct SynthFlow {
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "iot-1")]
    device: String,
    #[arg(long, default_value = "192.168.10.20")]
    src: IpAddr,
    #[arg(long, default_value = "203.0.113.10")]
    dst: IpAddr,
    #[arg(long, default_value_t = 40_000)]
    sport: u16,
    #[arg(long, default_value_t = 443)]
    dport: u16,
    /// First timestamp, nanoseconds.
    #[arg(long, default_value_t = 0)]
    start: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Window,
    Bucket,
}

impl From<ModeArg> for LimiterMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Window => LimiterMode::Window,
            ModeArg::Bucket => LimiterMode::Bucket,
        }
    }
}

#[derive(Clone, Copy, ValueEnum, PartialEq)]
enum DirectionArg {
    FromDevice,
    ToDevice,
}

impl From<DirectionArg> for Direction {
    fn from(d: DirectionArg) -> Self {
        match d {
            DirectionArg::FromDevice => Direction::FromDevice,
            DirectionArg::ToDevice => Direction::ToDevice,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    Peaks,
    Averages,
}

impl From<PolicyArg> for Policy {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::Peaks => Policy::Peaks,
            PolicyArg::Averages => Policy::Averages,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProtoArg {
    Tcp,
    Udp,
    Icmp,
}

impl From<ProtoArg> for TraceProtocol {
    fn from(p: ProtoArg) -> Self {
        match p {
            ProtoArg::Tcp => TraceProtocol::Tcp,
            ProtoArg::Udp => TraceProtocol::Udp,
            ProtoArg::Icmp => TraceProtocol::Icmp,
        }
    }
}

/// Domain errors carry distinct exit codes so scripts can tell failure
/// classes apart: 3 MUD, 4 compile, 5 datapath, 6 trace/replay, 7 learner,
/// 8 manager/fetch, 9 other I/O.
enum CliError {
    Mud(MudError),
    Compile(CompileError),
    Datapath(DatapathError),
    Replay(ReplayError),
    Learn(LearnError),
    Manager(ManagerError),
    Io(std::io::Error),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Mud(_) => 3,
            CliError::Compile(_) => 4,
            CliError::Datapath(_) => 5,
            CliError::Replay(_) => 6,
            CliError::Learn(_) => 7,
            CliError::Manager(_) => 8,
            CliError::Io(_) => 9,
        }
    }

    fn message(&self) -> String {
        match self {
            CliError::Mud(e) => e.to_string(),
            CliError::Compile(e) => e.to_string(),
            CliError::Datapath(e) => e.to_string(),
            CliError::Replay(e) => e.to_string(),
            CliError::Learn(e) => e.to_string(),
            CliError::Manager(e) => e.to_string(),
            CliError::Io(e) => e.to_string(),
        }
    }
}

macro_rules! from_err {
    ($variant:ident, $ty:ty) => {
        impl From<$ty> for CliError {
            fn from(e: $ty) -> Self {
                CliError::$variant(e)
            }
        }
    };
}
from_err!(Mud, MudError);
from_err!(Compile, CompileError);
from_err!(Datapath, DatapathError);
from_err!(Replay, ReplayError);
from_err!(Learn, LearnError);
from_err!(Manager, ManagerError);
from_err!(Io, std::io::Error);

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Parse { file } => cmd_parse(&file),
        Command::Compile { file, device_ctx, window } => cmd_compile(&file, &device_ctx, window),
        Command::Learn {
            trace,
            window,
            categories,
            policy,
            round_pkts,
            round_bytes,
            granularity,
            out,
        } => cmd_learn(
            &trace, window, &categories, policy, round_pkts, round_bytes,
            granularity.as_deref(), out.as_deref(),
        ),
        Command::Replay(args) => cmd_replay(args),
        Command::Bench { rules, packets } => {
            println!("{}", bench::run(rules, packets));
            Ok(())
        }
        Command::ServeFixtures { dir, port } => cmd_serve(&dir, port),
        Command::Manage { events, device_ctx, poll } => {
            cmd_manage(&events, device_ctx.as_deref(), poll)
        }
        Command::Synth { kind } => cmd_synth(kind),
    }
}

fn cmd_parse(file: &Path) -> Result<(), CliError> {
    let text = std::fs::read_to_string(file)?;
    let mud = mud::parse_mud_file(&text)?;
    println!("mud-url:      {}", mud.mud_url);
    println!("mud-version:  {}", mud.mud_version);
    println!("last-update:  {}", mud.last_update);
    if let Some(info) = &mud.system_info {
        println!("systeminfo:   {info}");
    }
    println!("from-device:  {}", mud.from_device_policy.join(", "));
    println!("to-device:    {}", mud.to_device_policy.join(", "));
    for acl in &mud.acls {
        println!("acl {} ({}, {} aces)", acl.name, acl.address_family, acl.aces.len());
        for ace in &acl.aces {
            let fwd = match ace.actions.forwarding {
                Forwarding::Accept => "accept",
                Forwarding::Drop => "drop",
            };
            let mut line = format!("  ace {}: {fwd}", ace.name);
            if let Some(host) = &ace.matches.dns_name {
                line.push_str(&format!(" host={host}"));
            }
            if let Some(proto) = ace.matches.protocol {
                line.push_str(&format!(" proto={proto}"));
            }
            if let Some(port) = ace.matches.port {
                line.push_str(&format!(" port={}", port.port));
            }
            if let Some(rate) = ace.actions.packet_rate {
                line.push_str(&format!(" packet-rate={rate}"));
            }
            if let Some(rate) = ace.actions.byte_rate {
                line.push_str(&format!(" byte-rate={rate}"));
            }
            println!("{line}");
        }
    }
    Ok(())
}

fn cmd_compile(file: &Path, ctx_path: &Path, window: u64) -> Result<(), CliError> {
    let text = std::fs::read_to_string(file)?;
    let mud = mud::parse_mud_file(&text)?;
    let ctx = DeviceContext::load(ctx_path)?;
    let out = compiler::compile_with_window(&mud, &ctx, window)?;
    for warning in &out.warnings {
        eprintln!("warning: {warning}");
    }
    println!("{}", serde_json::to_string_pretty(&out).expect("compile output serializes"));
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_learn(
    trace: &Path,
    window: u64,
    categories: &Path,
    policy: Option<PolicyArg>,
    round_pkts: u64,
    round_bytes: u64,
    granularity: Option<&Path>,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let records = match TraceFormat::from_path(trace) {
        TraceFormat::Csv => learner::read_trace_csv(trace)?,
        TraceFormat::Pcap => {
            let frames = replay::read_pcap(trace)?;
            let (records, skipped) = replay::frames_to_records(&frames);
            if skipped > 0 {
                eprintln!("warning: skipped {skipped} malformed frame(s)");
            }
            records
        }
    };
    let mut outgoing: Vec<_> = records
        .into_iter()
        .filter(|r| r.direction == TraceDirection::Outgoing)
        .collect();
    outgoing.sort_by(|a, b| a.device_id.cmp(&b.device_id).then(a.timestamp_ns.cmp(&b.timestamp_ns)));
    let windows = learner::windowize(&outgoing, window)?;

    let map_text = std::fs::read_to_string(categories)?;
    let category_map: HashMap<String, String> =
        serde_json::from_str(&map_text).map_err(|e| {
            CliError::Learn(LearnError::Parse { line: e.line(), message: e.to_string() })
        })?;
    let stats = learner::aggregate(&windows, &category_map)?;

    let csv = learner::category_stats_csv(&stats);
    match out {
        Some(path) => std::fs::write(path, &csv)?,
        None => print!("{csv}"),
    }

    if let Some(policy) = policy {
        let policy: Policy = policy.into();
        let book = granularity.map(learner::load_granularity).transpose()?;
        for s in &stats {
            let g = book
                .as_ref()
                .and_then(|b| b.get(&s.category))
                .and_then(|per_policy| {
                    per_policy.get(match policy {
                        Policy::Peaks => "peaks",
                        Policy::Averages => "averages",
                    })
                })
                .copied()
                .unwrap_or(Granularity {
                    packet_round_to: round_pkts,
                    byte_round_to: round_bytes,
                });
            let limits = learner::suggest_limits(s, policy, g)?;
            println!(
                "suggested {policy:?} limits for {}: packet-rate {} byte-rate {}",
                s.category, limits.packet_limit, limits.byte_limit
            );
        }
    }
    Ok(())
}

fn cmd_replay(args: ReplayArgs) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&args.mud)?;
    let mud = mud::parse_mud_file(&text)?;
    let ctx = DeviceContext::load(&args.device_ctx)?;
    let compiled = compiler::compile_with_window(&mud, &ctx, args.window)?;
    for warning in &compiled.warnings {
        eprintln!("warning: {warning}");
    }

    let remap = args.remap.as_deref().map(AddressRemap::load).transpose()?;
    let mode: LimiterMode = args.mode.into();
    let direction: Direction = args.direction.into();
    let format = TraceFormat::from_path(&args.trace);

    let report = if args.parallel && format == TraceFormat::Csv {
        let records = learner::read_trace_csv(&args.trace)?;
        let mut shards: HashMap<String, Vec<replay::Frame>> = HashMap::new();
        for record in &records {
            let frames = replay::records_to_frames(std::slice::from_ref(record))?;
            shards.entry(record.device_id.clone()).or_default().extend(frames);
        }
        let mut shards: Vec<_> = shards.into_iter().collect();
        shards.sort_by(|a, b| a.0.cmp(&b.0));
        for (_, frames) in &mut shards {
            frames.sort_by_key(|(_, ts)| *ts);
            if let Some(remap) = &remap {
                *frames = replay::rewrite(std::mem::take(frames), remap);
            }
        }
        replay::replay_sharded(&shards, &compiled.rules, mode, direction)
    } else {
        let (mut frames, warnings) = replay::load_trace(&args.trace, format)?;
        for warning in warnings {
            eprintln!("warning: {warning}");
        }
        if let Some(remap) = &remap {
            frames = replay::rewrite(frames, remap);
        }
        replay::replay(&frames, &compiled.rules, mode, direction)
    };

    let report_format = match args.format {
        Some(FormatArg::Csv) => ReportFormat::Csv,
        Some(FormatArg::Json) => ReportFormat::Json,
        None => match args.report.extension().and_then(|e| e.to_str()) {
            Some("json") => ReportFormat::Json,
            _ => ReportFormat::Csv,
        },
    };
    replay::emit_report(&report, &args.report, report_format)?;

    println!(
        "packets: {} total, {} passed, {} dropped ({:.2}% dropped), {} aborted",
        report.total_packets,
        report.passed_packets,
        report.dropped_packets,
        report.packet_drop_rate() * 100.0,
        report.aborted_packets,
    );
    println!(
        "bytes:   {} total, {} passed, {} dropped ({:.2}% dropped)",
        report.total_bytes,
        report.passed_bytes,
        report.dropped_bytes,
        report.byte_drop_rate() * 100.0,
    );
    for (reason, count) in &report.drop_reason_histogram {
        println!("  {reason}: {count}");
    }
    Ok(())
}

fn cmd_serve(dir: &Path, port: u16) -> Result<(), CliError> {
    let server = manager::FixtureServer::start(dir, port)?;
    println!("serving {} on http://{}/", dir.display(), server.addr());
    loop {
        std::thread::sleep(std::time::Duration::from_secs(3600));
    }
}

fn cmd_manage(
    events_path: &Path,
    ctx_path: Option<&Path>,
    poll: Option<u64>,
) -> Result<(), CliError> {
    let base_ctx = match ctx_path {
        Some(p) => DeviceContext::load(p)?,
        None => DeviceContext::default(),
    };
    let mut manager = Manager::new();
    let dp = mudguard_core::datapath::Datapath::new();
    let mut processed = 0usize;
    let mut failures = 0usize;

    loop {
        let events = manager::load_events(events_path)?;
        for event in events.iter().skip(processed) {
            match manager.on_device_event(event, &base_ctx, &dp) {
                Ok(EventOutcome::Joined { device_id, policies, warnings, timing }) => {
                    println!(
                        "join {device_id}: {policies} policies installed \
                         (parse {:.3} ms, enforce {:.3} ms)",
                        timing.parse_ms, timing.enforce_ms
                    );
                    for w in warnings {
                        eprintln!("warning: {w}");
                    }
                }
                Ok(EventOutcome::Left { device_id, removed_rules }) => {
                    println!("leave {device_id}: {removed_rules} rules removed");
                }
                Ok(EventOutcome::LeaveUnknownDevice { device_id }) => {
                    println!("leave {device_id}: unknown device, nothing to remove");
                }
                Err(e) => {
                    failures += 1;
                    eprintln!("error: {e}");
                }
            }
        }
        processed = events.len();

        match poll {
            Some(secs) => std::thread::sleep(std::time::Duration::from_secs(secs)),
            None => break,
        }
    }

    println!(
        "{} device(s) installed, {} datapath rule(s)",
        manager.state.devices().count(),
        dp.len()
    );
    if failures > 0 {
        return Err(CliError::Manager(ManagerError::Fetch {
            url: events_path.display().to_string(),
            detail: format!("{failures} event(s) failed"),
        }));
    }
    Ok(())
}

fn cmd_synth(kind: SynthKind) -> Result<(), CliError> {
    let (flow, records) = match kind {
        SynthKind::SynFlood { flow, rate, duration } => {
            let e = endpoints(&flow);
            let records = synth::syn_flood(&flow.device, e, rate, duration, flow.start);
            (flow, records)
        }
        SynthKind::Cbr { flow, protocol, rate, duration, len } => {
            let e = endpoints(&flow);
            let records =
                synth::cbr(&flow.device, e, protocol.into(), rate, duration, len, flow.start);
            (flow, records)
        }
        SynthKind::Appliance { flow, seed, minutes } => {
            let e = endpoints(&flow);
            let profile = synth::ApplianceProfile { minutes, ..Default::default() };
            let records = synth::appliance_trace(&flow.device, e, &profile, seed, flow.start);
            (flow, records)
        }
    };
    learner::write_trace_csv(&flow.out, &records)?;
    println!("wrote {} records to {}", records.len(), flow.out.display());
    Ok(())
}

fn endpoints(flow: &SynthFlow) -> learner::Endpoints {
    learner::Endpoints {
        src_addr: flow.src,
        dst_addr: flow.dst,
        src_port: flow.sport,
        dst_port: flow.dport,
    }
}
