//! Classic traceroute rounds and the comparisons against tree probing:
//! packet counts, per-link probing load, cumulative discovery curves, and
//! destination-subset simulation.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::net::Ipv4Addr;

use crate::error::{AnalysisError, TransportError};
use crate::model::{Hop, ProbeRecord, RadarDataset, RawTraceTree, ReplyKind, Seconds, DEFAULT_MAX_TTL};
use crate::tracetree::replay_stopping_rule;
use crate::transport::Transport;

/// Per-destination route: the hop seen at each TTL, in TTL order.
pub type Routes = BTreeMap<Ipv4Addr, Vec<(Hop, u8)>>;

#[derive(Debug, Clone, PartialEq)]
pub struct TracerouteConfig {
    pub max_ttl: u8,
    pub timeout: Seconds,
    pub inter_probe_delay: Seconds,
}

impl Default for TracerouteConfig {
    fn default() -> Self {
        TracerouteConfig {
            max_ttl: DEFAULT_MAX_TTL,
            timeout: 2.0,
            inter_probe_delay: 0.005,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TracerouteRound {
    pub routes: Routes,
    pub packet_count: usize,
    /// Every probe outcome, in emission order.
    pub records: Vec<ProbeRecord>,
}

/// Probes every destination at TTL 1, 2, ... until it answers itself or
/// `max_ttl` is reached. All destinations advance together one TTL layer
/// at a time.
pub fn traceroute_round(
    destinations: &[Ipv4Addr],
    transport: &mut dyn Transport,
    config: &TracerouteConfig,
) -> Result<TracerouteRound, TransportError> {
    let mut routes: Routes = destinations.iter().map(|d| (*d, Vec::new())).collect();
    let mut active: Vec<Ipv4Addr> = destinations.to_vec();
    let mut records = Vec::new();
    let mut next_send_at = transport.now();
    for ttl in 1..=config.max_ttl {
        if active.is_empty() {
            break;
        }
        let mut in_flight = HashMap::new();
        for d in &active {
            loop {
                transport.wait_until(next_send_at);
                match transport.send(*d, ttl) {
                    Ok(tok) => {
                        next_send_at = tok.sent_at + config.inter_probe_delay;
                        in_flight.insert(tok.id, tok);
                        break;
                    }
                    Err(TransportError::Backpressure { retry_at }) => next_send_at = retry_at,
                    Err(e) => return Err(e),
                }
            }
        }
        let mut answers: HashMap<Ipv4Addr, (Ipv4Addr, ReplyKind)> = HashMap::new();
        while !in_flight.is_empty() {
            let deadline = in_flight
                .values()
                .map(|t| t.sent_at + config.timeout)
                .reduce(f64::min)
                .expect("non-empty");
            for r in transport.poll(deadline)? {
                if r.late || r.received_at > r.token.sent_at + config.timeout {
                    continue;
                }
                if in_flight.remove(&r.token.id).is_some() {
                    answers.insert(r.token.destination, (r.source, r.kind));
                }
            }
            let now = transport.now();
            in_flight.retain(|_, t| {
                let keep = now < t.sent_at + config.timeout;
                if !keep {
                    transport.expire(t);
                }
                keep
            });
        }
        let mut still = Vec::new();
        for d in active {
            let hop = answers.get(&d).map_or(Hop::Star, |(s, _)| Hop::Ip(*s));
            records.push(ProbeRecord::new(hop, ttl, d));
            routes.get_mut(&d).expect("known").push((hop, ttl));
            let reached = matches!(answers.get(&d), Some((s, ReplyKind::EchoReply)) if *s == d);
            if !reached {
                still.push(d);
            }
        }
        active = still;
    }
    Ok(TracerouteRound {
        packet_count: records.len(),
        routes,
        records,
    })
}

/// Groups records into per-destination routes sorted by TTL.
pub fn routes_from_records(records: &[ProbeRecord]) -> Routes {
    let mut routes: Routes = BTreeMap::new();
    for r in records {
        routes.entry(r.destination).or_default().push((r.source, r.ttl));
    }
    for route in routes.values_mut() {
        route.sort_by_key(|(_, t)| *t);
    }
    routes
}

/// The raw tree a tree measurement would have produced over these routes.
pub fn simulate_tracetree_from_traceroute(routes: &Routes) -> RawTraceTree {
    replay_stopping_rule(routes)
}

/// Directed link between two consecutive-TTL addresses; `None` is the
/// monitor.
pub type Link = (Option<Ipv4Addr>, Ipv4Addr);

/// How many times each link was crossed by a probe that revealed it.
/// Links touching a star, and a hop repeated at consecutive TTLs, are not
/// links.
pub fn link_loads(routes: &Routes) -> BTreeMap<Link, usize> {
    let mut loads = BTreeMap::new();
    for route in routes.values() {
        for (i, (hop, ttl)) in route.iter().enumerate() {
            let Hop::Ip(b) = hop else { continue };
            let from = if *ttl == 1 {
                Some(None)
            } else {
                match i.checked_sub(1).map(|j| route[j]) {
                    Some((Hop::Ip(a), t)) if t + 1 == *ttl && a != *b => Some(Some(a)),
                    _ => None,
                }
            };
            if let Some(a) = from {
                *loads.entry((a, *b)).or_insert(0) += 1;
            }
        }
    }
    loads
}

/// Link loads of a tree measurement. A chain that stops on an already
/// seen node does not probe the link leading into it.
pub fn tracetree_link_loads(raw: &RawTraceTree) -> BTreeMap<Link, usize> {
    let mut seen = BTreeSet::new();
    let mut stops = BTreeSet::new();
    for r in raw.records() {
        if let Hop::Ip(a) = r.source {
            if !seen.insert((a, r.ttl)) {
                stops.insert((r.destination, r.ttl));
            }
        }
    }
    let mut loads = BTreeMap::new();
    for (d, chain) in raw.chains() {
        let route: BTreeMap<u8, Hop> = chain.iter().map(|(h, t)| (*t, *h)).collect();
        for (ttl, hop) in &route {
            let Hop::Ip(b) = hop else { continue };
            if stops.contains(&(d, *ttl)) {
                continue;
            }
            let from = match ttl.checked_sub(1) {
                Some(0) => Some(None),
                Some(p) => match route.get(&p) {
                    Some(Hop::Ip(a)) if a != b => Some(Some(*a)),
                    _ => None,
                },
                None => None,
            };
            if let Some(a) = from {
                *loads.entry((a, *b)).or_insert(0) += 1;
            }
        }
    }
    loads
}

/// Histogram: load -> number of links with that load.
pub fn load_histogram(loads: &BTreeMap<Link, usize>) -> BTreeMap<usize, usize> {
    let mut hist = BTreeMap::new();
    for n in loads.values() {
        *hist.entry(*n).or_insert(0) += 1;
    }
    hist
}

/// Load histogram of traceroute routes.
pub fn link_load_distribution(routes: &Routes) -> BTreeMap<usize, usize> {
    load_histogram(&link_loads(routes))
}

/// Keeps, in every round, only what lies on the paths to `subset`.
pub fn simulate_destination_subset(
    dataset: &RadarDataset,
    subset: &BTreeSet<Ipv4Addr>,
) -> Result<RadarDataset, AnalysisError> {
    let known = dataset.destinations();
    if let Some(d) = subset.iter().find(|d| !known.contains(d)) {
        return Err(AnalysisError::UnknownDestination(*d));
    }
    let mut out = RadarDataset::new(dataset.monitor_id.clone(), dataset.monitor);
    out.parameters = dataset.parameters.clone();
    out.parameters
        .insert("subset_of".into(), known.len().to_string());
    out.parameters
        .insert("destinations".into(), subset.len().to_string());
    for r in dataset.rounds() {
        let probes_sent = match &r.raw {
            Some(raw) => raw
                .records()
                .iter()
                .filter(|x| subset.contains(&x.destination))
                .count(),
            None => 0,
        };
        let mut round = r.clone();
        round.tree = r.tree.restrict_to(subset);
        round.raw = None;
        round.probes_sent = probes_sent;
        out.push(round).expect("same order as the source");
    }
    Ok(out)
}

/// Step curves of the number of distinct addresses seen so far.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DiscoveryCurves {
    /// (rounds elapsed, addresses).
    pub by_round: Vec<(u64, usize)>,
    /// (packets sent so far, addresses).
    pub by_packets: Vec<(u64, usize)>,
}

/// Builds both curves from per-round (packets, addresses) pairs.
pub fn cumulative_discovery_curves<I>(rounds: I) -> DiscoveryCurves
where
    I: IntoIterator<Item = (usize, BTreeSet<Ipv4Addr>)>,
{
    let mut seen = BTreeSet::new();
    let mut packets = 0u64;
    let mut curves = DiscoveryCurves::default();
    for (i, (p, ips)) in rounds.into_iter().enumerate() {
        seen.extend(ips);
        packets += p as u64;
        curves.by_round.push((i as u64 + 1, seen.len()));
        curves.by_packets.push((packets, seen.len()));
    }
    curves
}

pub fn dataset_curves(dataset: &RadarDataset) -> DiscoveryCurves {
    cumulative_discovery_curves(
        dataset
            .rounds()
            .iter()
            .map(|r| (r.probes_sent, r.tree.observed_ips())),
    )
}

pub fn route_ips(routes: &Routes) -> BTreeSet<Ipv4Addr> {
    routes
        .values()
        .flatten()
        .filter_map(|(h, _)| h.ip())
        .collect()
}

pub fn traceroute_curves(rounds: &[TracerouteRound]) -> DiscoveryCurves {
    cumulative_discovery_curves(rounds.iter().map(|r| (r.packet_count, route_ips(&r.routes))))
}

fn step_value(curve: &[(u64, usize)], x: u64) -> usize {
    let i = curve.partition_point(|(px, _)| *px <= x);
    if i == 0 {
        0
    } else {
        curve[i - 1].1
    }
}

/// True when step curve `a` is at least `b` at every abscissa where either
/// changes.
pub fn dominates(a: &[(u64, usize)], b: &[(u64, usize)]) -> bool {
    a.iter()
        .chain(b)
        .all(|(x, _)| step_value(a, *x) >= step_value(b, *x))
}
