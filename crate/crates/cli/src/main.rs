use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::net::Ipv4Addr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};

use egoradar::baseline::{traceroute_round, TracerouteConfig};
use egoradar::filter::filter_tree;
use egoradar::model::{RawTraceTree, RoundMeta, Seconds, DEFAULT_MAX_TTL};
use egoradar::radar::{run_radar, RadarConfig};
use egoradar::roundlog::{DatasetHeader, RoundLogWriter, RoundSink};
use egoradar::simnet::{scenarios, Simulator, TopologySpec};
use egoradar::tracetree::{tracetree, DestinationTask, Strategy, TracetreeConfig};
use egoradar::transport::{SimTransport, Transport, TransportSpec, DEFAULT_RATE_CAP};
use egoradar::{export, AnalysisError, LogError, ModelError, RadarError, TopologyError, TracetreeError};

mod analyze;

/// Ego-centered topology measurement, simulation and analysis.
#[derive(Debug, Parser)]
#[command(name = "egoradar", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Periodic tree measurements.
    #[command(subcommand)]
    Radar(RadarCommand),
    /// A single tree measurement round.
    #[command(subcommand)]
    Tracetree(OnceCommand<TracetreeOnce>),
    /// Classic traceroute rounds, for comparison.
    #[command(subcommand)]
    Traceroute(OnceCommand<TracerouteOnce>),
    /// Run the radar over a simulated topology and its event script.
    Simulate(SimulateArgs),
    /// Event-detection analyses over a dataset file.
    #[command(subcommand)]
    Analyze(analyze::AnalyzeCommand),
    /// Tree probing versus traceroute on traceroute rounds: discovery curves
    /// and per-link probing load.
    Compare(CompareArgs),
}

#[derive(Debug, Subcommand)]
enum RadarCommand {
    Run(RadarRunArgs),
}

#[derive(Debug, Subcommand)]
enum OnceCommand<T: Args> {
    Once(T),
}

#[derive(Debug, Args)]
struct ProbeArgs {
    /// One IPv4 address per line; `#` starts a comment.
    #[arg(long)]
    destinations: PathBuf,
    /// `sim:FILE`, `sim:builtin:NAME` or `icmp`.
    #[arg(long)]
    transport: TransportSpec,
    /// Probe timeout in seconds.
    #[arg(long, default_value_t = 2.0)]
    timeout: Seconds,
    #[arg(long, default_value_t = DEFAULT_MAX_TTL)]
    max_ttl: u8,
    /// Minimum spacing between two probes, in seconds.
    #[arg(long, default_value_t = 0.005)]
    inter_probe: Seconds,
    /// Sending rate cap in probes per second; 0 disables it.
    #[arg(long, default_value_t = DEFAULT_RATE_CAP)]
    rate_cap: f64,
    /// Output file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RadarRunArgs {
    #[command(flatten)]
    probe: ProbeArgs,
    /// Number of rounds; runs until killed when absent.
    #[arg(long)]
    rounds: Option<u64>,
    /// Seconds between the starts of two rounds.
    #[arg(long, default_value_t = 600.0)]
    inter_round: Seconds,
    #[arg(long, default_value = "monitor")]
    monitor_id: String,
    #[arg(long, default_value = "one-per-loop")]
    send_strategy: Strategy,
    #[arg(long, default_value = "one-per-loop")]
    receive_strategy: Strategy,
    /// Do not re-probe from the maximal TTL when a cached distance is too
    /// short.
    #[arg(long)]
    no_restart: bool,
}

#[derive(Debug, Args)]
struct TracetreeOnce {
    #[command(flatten)]
    probe: ProbeArgs,
    /// Assumed distance of every destination; defaults to the maximal TTL.
    #[arg(long)]
    distance: Option<u8>,
    /// Also write the filtered tree as DOT.
    #[arg(long)]
    dot: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TracerouteOnce {
    #[command(flatten)]
    probe: ProbeArgs,
    #[arg(long, default_value_t = 1)]
    rounds: u64,
    #[arg(long, default_value_t = 600.0)]
    inter_round: Seconds,
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("source").required(true).args(["topology", "scenario", "list"]))]
struct SimulateArgs {
    /// Topology and event script in TOML.
    #[arg(long)]
    topology: Option<PathBuf>,
    /// Name of a built-in scenario.
    #[arg(long)]
    scenario: Option<String>,
    /// List the built-in scenarios.
    #[arg(long)]
    list: bool,
    /// Print the scenario's topology as TOML instead of running it.
    #[arg(long)]
    print_topology: bool,
    /// Defaults to the scenario's own length, or 1 for a topology file.
    #[arg(long)]
    rounds: Option<u64>,
    #[arg(long)]
    inter_round: Option<Seconds>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CompareArgs {
    /// Round log written by `traceroute once`.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Bad input, as opposed to a failure while running.
#[derive(Debug)]
struct Invalid(String);

impl std::fmt::Display for Invalid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

pub(crate) fn invalid(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(Invalid(msg.into()))
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let validation = err.chain().any(|e| {
        e.is::<Invalid>()
            || e.is::<TopologyError>()
            || e.is::<AnalysisError>()
            || e.is::<LogError>()
            || e.is::<ModelError>()
            || e.is::<TracetreeError>()
            || matches!(e.downcast_ref::<RadarError>(), Some(r) if !matches!(r, RadarError::Sink(_)))
    });
    if validation {
        3
    } else {
        2
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Radar(RadarCommand::Run(a)) => radar_run(a),
        Command::Tracetree(OnceCommand::Once(a)) => tracetree_once(a),
        Command::Traceroute(OnceCommand::Once(a)) => traceroute_once(a),
        Command::Simulate(a) => simulate(a),
        Command::Analyze(a) => analyze::run(a),
        Command::Compare(a) => compare(a),
    }
}

pub(crate) fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

pub(crate) fn parse_destinations(text: &str) -> Result<Vec<Ipv4Addr>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let a: Ipv4Addr = line
            .parse()
            .map_err(|_| invalid(format!("destinations line {}: `{line}` is not an IPv4 address", i + 1)))?;
        if out.contains(&a) {
            return Err(invalid(format!("destinations line {}: {a} listed twice", i + 1)));
        }
        out.push(a);
    }
    if out.is_empty() {
        return Err(invalid("destination list is empty"));
    }
    Ok(out)
}

fn load_spec(path: &Path) -> Result<TopologySpec> {
    let spec = TopologySpec::from_toml(&read_text(path)?).with_context(|| format!("topology {}", path.display()))?;
    Ok(spec)
}

fn open_transport(spec: &TransportSpec, rate_cap: f64) -> Result<Box<dyn Transport>> {
    let cap = (rate_cap > 0.0).then_some(rate_cap);
    match spec {
        TransportSpec::SimFile(f) => {
            let sim = Simulator::from_spec(&load_spec(Path::new(f))?)?;
            Ok(Box::new(SimTransport::new(sim).with_rate_cap(cap)))
        }
        TransportSpec::SimBuiltin(name) => {
            let sc = scenarios::builtin(name).ok_or_else(|| {
                invalid(format!("unknown scenario `{name}`; known: {}", scenarios::BUILTIN.join(", ")))
            })?;
            Ok(Box::new(SimTransport::new(Simulator::from_spec(&sc.spec)?).with_rate_cap(cap)))
        }
        TransportSpec::Icmp => open_icmp(cap),
    }
}

#[cfg(feature = "icmp")]
fn open_icmp(cap: Option<f64>) -> Result<Box<dyn Transport>> {
    use egoradar::transport::IcmpTransport;
    let local = match std::env::var("EGORADAR_SOURCE") {
        Ok(s) => Some(
            s.parse::<Ipv4Addr>()
                .map_err(|_| invalid(format!("EGORADAR_SOURCE `{s}` is not an IPv4 address")))?,
        ),
        Err(_) => None,
    };
    let t = IcmpTransport::open(local).map_err(|e| {
        if e.kind() == io::ErrorKind::PermissionDenied {
            anyhow!("{e}: raw ICMP sockets need CAP_NET_RAW (run as root or `setcap cap_net_raw+ep` the binary)")
        } else {
            anyhow!(e).context("opening raw ICMP socket")
        }
    })?;
    Ok(Box::new(t.with_rate_cap(cap)))
}

#[cfg(not(feature = "icmp"))]
fn open_icmp(_: Option<f64>) -> Result<Box<dyn Transport>> {
    anyhow::bail!("this binary was built without ICMP support (rebuild with `--features icmp`)")
}

fn engine_config(p: &ProbeArgs) -> TracetreeConfig {
    TracetreeConfig {
        max_ttl: p.max_ttl,
        timeout: p.timeout,
        inter_probe_delay: p.inter_probe,
        ..TracetreeConfig::default()
    }
}

fn radar_run(a: RadarRunArgs) -> Result<()> {
    let destinations = parse_destinations(&read_text(&a.probe.destinations)?)?;
    let config = RadarConfig {
        monitor_id: a.monitor_id,
        destinations,
        inter_round_delay: a.inter_round,
        default_distance: a.probe.max_ttl,
        rounds: a.rounds,
        restart_underestimates: !a.no_restart,
        keep_raw: false,
        tracetree: TracetreeConfig {
            send_strategy: a.send_strategy,
            receive_strategy: a.receive_strategy,
            ..engine_config(&a.probe)
        },
    };
    config.validate()?;
    let mut transport = open_transport(&a.probe.transport, a.probe.rate_cap)?;
    let mut sink = RoundLogWriter::new(output(a.probe.out.as_deref())?);
    let ds = run_radar(&config, transport.as_mut(), &mut sink)?;
    transport.close();
    log::info!("{} rounds written", ds.len());
    Ok(())
}

fn tracetree_once(a: TracetreeOnce) -> Result<()> {
    let destinations = parse_destinations(&read_text(&a.probe.destinations)?)?;
    let cfg = engine_config(&a.probe);
    let distance = a.distance.unwrap_or(cfg.max_ttl);
    let tasks: Vec<_> = destinations.iter().map(|d| DestinationTask::new(*d, distance)).collect();
    let mut transport = open_transport(&a.probe.transport, a.probe.rate_cap)?;
    let out = tracetree(&tasks, transport.as_mut(), &cfg)?;
    let monitor = transport.local_address();
    let meta = RoundMeta {
        incomplete: out.incomplete,
        ..RoundMeta::new(0, out.stats.started_at, out.stats.finished_at)
    };
    let mut sink = RoundLogWriter::new(output(a.probe.out.as_deref())?);
    sink.header(&DatasetHeader {
        monitor_id: "once".into(),
        monitor,
        parameters: [
            ("max_ttl".to_string(), cfg.max_ttl.to_string()),
            ("method".to_string(), "tracetree".to_string()),
        ]
        .into(),
    })?;
    sink.round(&meta, &out.raw)?;
    if let Some(path) = a.dot {
        let (tree, _) = filter_tree(&out.raw, monitor);
        fs::write(&path, export::filtered_tree_dot(&tree)).with_context(|| format!("writing {}", path.display()))?;
    }
    eprintln!(
        "{} probes, {} replies, {} timeouts, {} restarts",
        out.stats.probes_sent, out.stats.replies, out.stats.timeouts, out.stats.restarts
    );
    if let Some(f) = out.fault {
        return Err(anyhow!(f).context("measurement aborted"));
    }
    Ok(())
}

fn traceroute_once(a: TracerouteOnce) -> Result<()> {
    let destinations = parse_destinations(&read_text(&a.probe.destinations)?)?;
    if a.probe.max_ttl == 0 || a.probe.max_ttl > egoradar::model::MAX_TTL_LIMIT {
        return Err(invalid(format!("max ttl {} out of range", a.probe.max_ttl)));
    }
    let cfg = TracerouteConfig {
        max_ttl: a.probe.max_ttl,
        timeout: a.probe.timeout,
        inter_probe_delay: a.probe.inter_probe,
    };
    let mut transport = open_transport(&a.probe.transport, a.probe.rate_cap)?;
    let mut sink = RoundLogWriter::new(output(a.probe.out.as_deref())?);
    sink.header(&DatasetHeader {
        monitor_id: "traceroute".into(),
        monitor: transport.local_address(),
        parameters: [
            ("max_ttl".to_string(), cfg.max_ttl.to_string()),
            ("method".to_string(), "traceroute".to_string()),
            ("inter_round_delay".to_string(), a.inter_round.to_string()),
        ]
        .into(),
    })?;
    let mut previous: Option<Seconds> = None;
    for i in 0..a.rounds {
        if let Some(p) = previous {
            transport.wait_until(p + a.inter_round);
        }
        let start = transport.now();
        previous = Some(start);
        transport.begin_round(i);
        let round = traceroute_round(&destinations, transport.as_mut(), &cfg)?;
        let raw = RawTraceTree::from_records(round.records)?;
        sink.round(&RoundMeta::new(i, start, transport.now().max(start)), &raw)?;
    }
    Ok(())
}

fn simulate(a: SimulateArgs) -> Result<()> {
    if a.list {
        let mut out = output(a.out.as_deref())?;
        for name in scenarios::BUILTIN {
            writeln!(out, "{name}")?;
        }
        return Ok(out.flush()?);
    }
    let (spec, default_rounds, default_delay) = match (&a.topology, &a.scenario) {
        (Some(path), _) => (load_spec(path)?, 1, scenarios::DEFAULT_INTER_ROUND),
        (None, Some(name)) => {
            let sc = scenarios::builtin(name).ok_or_else(|| {
                invalid(format!("unknown scenario `{name}`; known: {}", scenarios::BUILTIN.join(", ")))
            })?;
            (sc.spec, sc.rounds, sc.inter_round_delay)
        }
        (None, None) => unreachable!("clap requires a source"),
    };
    if a.print_topology {
        let mut out = output(a.out.as_deref())?;
        out.write_all(spec.to_toml().as_bytes())?;
        return Ok(out.flush()?);
    }
    let sim = Simulator::from_spec(&spec)?;
    let config = RadarConfig {
        monitor_id: "sim".into(),
        rounds: Some(a.rounds.unwrap_or(default_rounds)),
        inter_round_delay: a.inter_round.unwrap_or(default_delay),
        keep_raw: false,
        ..RadarConfig::new(spec.destinations.clone())
    };
    let mut transport = SimTransport::new(sim);
    let mut sink = RoundLogWriter::new(output(a.out.as_deref())?);
    run_radar(&config, &mut transport, &mut sink)?;
    Ok(())
}

fn compare(a: CompareArgs) -> Result<()> {
    let text = read_text(&a.input)?;
    let curves = analyze::compare_curves(&text)?;
    let borrowed: Vec<(&str, &[(u64, usize)])> = curves.iter().map(|(n, c)| (n.as_str(), c.as_slice())).collect();
    let mut out = output(a.out.as_deref())?;
    export::write_curves_csv(&mut out, &borrowed)?;
    Ok(out.flush()?)
}
