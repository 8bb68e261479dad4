use std::collections::BTreeSet;
use std::fs;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Subcommand};

use egoradar::analytics::{
    component_size_distribution, detect_peaks, event_graph, new_address_components, per_round_ip_count,
    size_vs_discovery_correlation, value_distribution, windowed_ip_count, Direction, RoundRange, Series, WindowMode,
    DEFAULT_BEFORE_WINDOW, DEFAULT_SENSITIVITY, DEFAULT_WINDOW,
};
use egoradar::baseline::{
    cumulative_discovery_curves, link_load_distribution, load_histogram, route_ips, routes_from_records,
    simulate_destination_subset, simulate_tracetree_from_traceroute, tracetree_link_loads,
};
use egoradar::export;
use egoradar::model::RadarDataset;
use egoradar::roundlog::{load_dataset, parse_log};

use crate::{invalid, output, read_text};

#[derive(Debug, Args)]
pub struct Io {
    /// Dataset round log.
    #[arg(long = "in")]
    input: PathBuf,
    /// Output file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SeriesArgs {
    /// Count over windows of this many rounds instead of single rounds.
    #[arg(long)]
    window: Option<usize>,
    #[arg(long, default_value = "sliding")]
    mode: WindowMode,
}

#[derive(Debug, Args)]
pub struct Windows {
    /// Reference rounds, `START:END` (end excluded).
    #[arg(long = "ref")]
    reference: RoundRange,
    /// Observation rounds, `START:END` (end excluded).
    #[arg(long = "obs")]
    observation: RoundRange,
}

#[derive(Debug, Subcommand)]
pub enum AnalyzeCommand {
    /// Distinct addresses per round.
    Counts {
        #[command(flatten)]
        io: Io,
    },
    /// Distinct addresses per window of rounds.
    Window {
        #[command(flatten)]
        io: Io,
        #[arg(long, default_value_t = DEFAULT_WINDOW)]
        width: usize,
        #[arg(long, default_value = "sliding")]
        mode: WindowMode,
    },
    /// Rounds whose count is an outlier.
    Peaks {
        #[command(flatten)]
        io: Io,
        #[command(flatten)]
        series: SeriesArgs,
        #[arg(long, default_value = "up")]
        direction: Direction,
        /// Threshold in median absolute deviations.
        #[arg(long, default_value_t = DEFAULT_SENSITIVITY)]
        k: f64,
    },
    /// Histogram of count values.
    Distribution {
        #[command(flatten)]
        io: Io,
        #[command(flatten)]
        series: SeriesArgs,
        #[arg(long, default_value_t = 1)]
        bin: u64,
    },
    /// Connected components of new addresses.
    Components {
        #[command(flatten)]
        io: Io,
        #[command(flatten)]
        windows: Windows,
        /// Emit the size histogram instead of the component list.
        #[arg(long)]
        sizes: bool,
        /// Also write the components and their neighbours as DOT.
        #[arg(long)]
        dot: Option<PathBuf>,
    },
    /// Merged graph of the rounds before an event and the event round, as DOT.
    EventGraph {
        #[command(flatten)]
        io: Io,
        #[arg(long)]
        round: u64,
        #[arg(long, default_value_t = DEFAULT_BEFORE_WINDOW)]
        before: u64,
    },
    /// Component size against discovery time, with the rank correlation on
    /// standard error.
    Correlate {
        #[command(flatten)]
        io: Io,
        #[command(flatten)]
        windows: Windows,
    },
    /// Per-round counts of the full dataset and of a destination subset.
    Subset {
        #[command(flatten)]
        io: Io,
        /// One IPv4 address per line.
        #[arg(long)]
        destinations: PathBuf,
    },
}

fn load(io: &Io) -> Result<RadarDataset> {
    let text = read_text(&io.input)?;
    load_dataset(&text).with_context(|| format!("dataset {}", io.input.display()))
}

fn series(ds: &RadarDataset, a: &SeriesArgs) -> Result<Series> {
    Ok(match a.window {
        Some(w) => windowed_ip_count(ds, w, a.mode)?,
        None => per_round_ip_count(ds),
    })
}

pub fn run(cmd: AnalyzeCommand) -> Result<()> {
    match cmd {
        AnalyzeCommand::Counts { io } => {
            let ds = load(&io)?;
            let mut out = output(io.out.as_deref())?;
            export::write_series_csv(&mut out, &per_round_ip_count(&ds))?;
            out.flush()?;
        }
        AnalyzeCommand::Window { io, width, mode } => {
            let ds = load(&io)?;
            let s = windowed_ip_count(&ds, width, mode)?;
            let mut out = output(io.out.as_deref())?;
            export::write_series_csv(&mut out, &s)?;
            out.flush()?;
        }
        AnalyzeCommand::Peaks { io, series: sa, direction, k } => {
            let ds = load(&io)?;
            let s = series(&ds, &sa)?;
            let report = detect_peaks(&s, direction, k)?;
            if report.degenerate {
                eprintln!("note: median absolute deviation is zero, mean absolute deviation used");
            }
            let flagged: BTreeSet<u64> = report.indices.iter().copied().collect();
            let peaks = Series::new(s.points().iter().filter(|(i, _)| flagged.contains(i)).copied().collect())
                .expect("subsequence of a series");
            let mut out = output(io.out.as_deref())?;
            export::write_series_csv(&mut out, &peaks)?;
            out.flush()?;
        }
        AnalyzeCommand::Distribution { io, series: sa, bin } => {
            let ds = load(&io)?;
            let hist = value_distribution(&series(&ds, &sa)?, bin)?;
            let mut out = output(io.out.as_deref())?;
            export::write_histogram_csv(&mut out, "value", &hist)?;
            out.flush()?;
        }
        AnalyzeCommand::Components { io, windows, sizes, dot } => {
            let ds = load(&io)?;
            let comps = new_address_components(&ds, windows.reference, windows.observation)?;
            let mut out = output(io.out.as_deref())?;
            if sizes {
                export::write_histogram_csv(&mut out, "size", &component_size_distribution(&comps))?;
            } else {
                export::write_components_csv(&mut out, &comps)?;
            }
            out.flush()?;
            if let Some(path) = dot {
                fs::write(&path, export::components_dot(&ds, windows.observation, &comps))
                    .with_context(|| format!("writing {}", path.display()))?;
            }
        }
        AnalyzeCommand::EventGraph { io, round, before } => {
            let ds = load(&io)?;
            let g = event_graph(&ds, round, before)?;
            let mut out = output(io.out.as_deref())?;
            out.write_all(export::event_graph_dot(&g).as_bytes())?;
            out.flush()?;
        }
        AnalyzeCommand::Correlate { io, windows } => {
            let ds = load(&io)?;
            let comps = new_address_components(&ds, windows.reference, windows.observation)?;
            let c = size_vs_discovery_correlation(&comps)?;
            let mut out = output(io.out.as_deref())?;
            export::write_pairs_csv(&mut out, &c.pairs)?;
            out.flush()?;
            eprintln!("spearman {}", c.coefficient);
        }
        AnalyzeCommand::Subset { io, destinations } => {
            let ds = load(&io)?;
            let subset: BTreeSet<_> = crate::parse_destinations(&read_text(&destinations)?)?.into_iter().collect();
            let sub = simulate_destination_subset(&ds, &subset)?;
            let as_curve = |s: Series| -> Vec<(u64, usize)> {
                s.points().iter().map(|(i, v)| (*i, *v as usize)).collect()
            };
            let full = as_curve(per_round_ip_count(&ds));
            let part = as_curve(per_round_ip_count(&sub));
            let mut out = output(io.out.as_deref())?;
            export::write_curves_csv(&mut out, &[("full", &full), ("subset", &part)])?;
            out.flush()?;
        }
    }
    Ok(())
}

pub type Curve = (String, Vec<(u64, usize)>);

/// Discovery curves and link-load histograms of traceroute rounds and of
/// tree probing replayed over the same routes.
pub fn compare_curves(text: &str) -> Result<Vec<Curve>> {
    let log = parse_log(text)?;
    if log.rounds.is_empty() {
        return Err(invalid("log holds no round"));
    }
    let mut traceroute = Vec::new();
    let mut tree = Vec::new();
    let mut last_routes = None;
    for (_, raw) in &log.rounds {
        let routes = routes_from_records(raw.records());
        let replay = simulate_tracetree_from_traceroute(&routes);
        traceroute.push((raw.probes(), route_ips(&routes)));
        tree.push((replay.probes(), replay.ips()));
        last_routes = Some((routes, replay));
    }
    let tr = cumulative_discovery_curves(traceroute);
    let tt = cumulative_discovery_curves(tree);
    let (routes, replay) = last_routes.expect("at least one round");
    let load = |h: std::collections::BTreeMap<usize, usize>| h.into_iter().map(|(k, v)| (k as u64, v)).collect();
    Ok(vec![
        ("traceroute-by-round".into(), tr.by_round),
        ("tracetree-by-round".into(), tt.by_round),
        ("traceroute-by-packets".into(), tr.by_packets),
        ("tracetree-by-packets".into(), tt.by_packets),
        ("traceroute-link-load".into(), load(link_load_distribution(&routes))),
        ("tracetree-link-load".into(), load(load_histogram(&tracetree_link_loads(&replay)))),
    ])
}
