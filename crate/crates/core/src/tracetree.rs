//! Backward tree probing from a single monitor.
//!
//! Every destination is probed first at its assumed distance, then at
//! decreasing TTLs. A chain stops after the first reply whose (source, TTL)
//! was already seen for another destination, so each link near the monitor
//! is probed once. Timeouts produce stars, which never stop a chain.
//!
//! The probe queue is FIFO. Each loop iteration sends one probe (or all
//! pending ones with [`Strategy::Greedy`]) and handles one reply (or all
//! available ones), then expires overdue probes in send order.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::net::Ipv4Addr;

use crate::error::{TracetreeError, TransportError};
use crate::model::{
    Hop, ProbeRecord, RawTraceTree, ReplyKind, Seconds, DEFAULT_MAX_TTL, MAX_TTL_LIMIT,
};
use crate::transport::{ProbeToken, Transport, TransportReply};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Strategy {
    #[default]
    OnePerLoop,
    Greedy,
}

impl std::str::FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "one" | "one-per-loop" => Ok(Strategy::OnePerLoop),
            "greedy" => Ok(Strategy::Greedy),
            _ => Err(format!("unknown strategy `{s}` (one-per-loop or greedy)")),
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Strategy::OnePerLoop => "one-per-loop",
            Strategy::Greedy => "greedy",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TracetreeConfig {
    pub max_ttl: u8,
    pub timeout: Seconds,
    pub send_strategy: Strategy,
    pub receive_strategy: Strategy,
    /// Minimal spacing between two sends.
    pub inter_probe_delay: Seconds,
    /// When the first probe of a destination is not answered by the
    /// destination itself and its assumed distance is below this value, a
    /// second chain is started at this TTL within the same measurement.
    pub restart_distance: Option<u8>,
}

impl Default for TracetreeConfig {
    fn default() -> Self {
        TracetreeConfig {
            max_ttl: DEFAULT_MAX_TTL,
            timeout: 2.0,
            send_strategy: Strategy::OnePerLoop,
            receive_strategy: Strategy::OnePerLoop,
            inter_probe_delay: 0.005,
            restart_distance: None,
        }
    }
}

impl TracetreeConfig {
    pub fn validate(&self) -> Result<(), TracetreeError> {
        if self.max_ttl == 0 || self.max_ttl > MAX_TTL_LIMIT {
            return Err(TracetreeError::Config(format!(
                "max_ttl {} outside [1, {MAX_TTL_LIMIT}]",
                self.max_ttl
            )));
        }
        if !(self.timeout.is_finite() && self.timeout > 0.0) {
            return Err(TracetreeError::Config("timeout must be positive".into()));
        }
        if !(self.inter_probe_delay.is_finite() && self.inter_probe_delay >= 0.0) {
            return Err(TracetreeError::Config(
                "inter-probe delay must be non-negative".into(),
            ));
        }
        if let Some(r) = self.restart_distance {
            if r == 0 || r > self.max_ttl {
                return Err(TracetreeError::Config(format!(
                    "restart distance {r} outside [1, {}]",
                    self.max_ttl
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DestinationTask {
    pub destination: Ipv4Addr,
    pub assumed_distance: u8,
}

impl DestinationTask {
    pub fn new(destination: Ipv4Addr, assumed_distance: u8) -> Self {
        DestinationTask {
            destination,
            assumed_distance,
        }
    }
}

/// Smallest TTL at which the destination itself answered an echo.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Distance {
    Seen(u8),
    NotSeen,
}

impl Distance {
    pub fn seen(&self) -> Option<u8> {
        match self {
            Distance::Seen(t) => Some(*t),
            Distance::NotSeen => None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TracetreeStats {
    pub probes_sent: usize,
    pub replies: usize,
    pub timeouts: usize,
    /// Replies received after their probe had timed out.
    pub late_replies: usize,
    pub restarts: usize,
    /// Pushes dropped because the same (destination, TTL) was already queued.
    pub duplicates_dropped: usize,
    pub started_at: Seconds,
    pub finished_at: Seconds,
}

impl TracetreeStats {
    pub fn duration(&self) -> Seconds {
        self.finished_at - self.started_at
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TracetreeOutcome {
    pub raw: RawTraceTree,
    pub distances: BTreeMap<Ipv4Addr, Distance>,
    pub stats: TracetreeStats,
    /// The transport failed mid-measurement; `raw` holds what was recorded.
    pub incomplete: bool,
    pub fault: Option<TransportError>,
}

struct InFlight {
    token: ProbeToken,
    first_of_task: bool,
}

struct Engine<'a> {
    config: &'a TracetreeConfig,
    to_probe: VecDeque<(Ipv4Addr, u8, bool)>,
    queued: HashSet<(Ipv4Addr, u8)>,
    // keyed by token id, hence in send order
    to_receive: BTreeMap<u64, InFlight>,
    inbox: VecDeque<TransportReply>,
    seen: HashSet<(Ipv4Addr, u8)>,
    records: Vec<ProbeRecord>,
    echo: HashMap<Ipv4Addr, u8>,
    restarted: HashSet<Ipv4Addr>,
    stats: TracetreeStats,
}

impl Engine<'_> {
    fn push(&mut self, d: Ipv4Addr, ttl: u8, first: bool) {
        if self.queued.insert((d, ttl)) {
            self.to_probe.push_back((d, ttl, first));
        } else {
            self.stats.duplicates_dropped += 1;
        }
    }

    fn record(
        &mut self,
        on_record: &mut dyn FnMut(&ProbeRecord),
        f: &InFlight,
        answer: Option<(Ipv4Addr, ReplyKind)>,
    ) {
        let (d, ttl) = (f.token.destination, f.token.ttl);
        let rec = ProbeRecord::new(answer.map_or(Hop::Star, |(s, _)| Hop::Ip(s)), ttl, d);
        on_record(&rec);
        self.records.push(rec);
        let reached = matches!(answer, Some((s, ReplyKind::EchoReply)) if s == d);
        if reached {
            let e = self.echo.entry(d).or_insert(ttl);
            *e = (*e).min(ttl);
        }
        let fresh = match answer {
            Some((s, _)) => self.seen.insert((s, ttl)),
            None => true,
        };
        if fresh && ttl > 1 {
            self.push(d, ttl - 1, false);
        }
        if f.first_of_task && !reached {
            if let Some(r) = self.config.restart_distance {
                if ttl < r && self.restarted.insert(d) {
                    self.stats.restarts += 1;
                    self.push(d, r, false);
                }
            }
        }
    }
}

/// Runs one measurement. See [`tracetree_streaming`].
pub fn tracetree(
    tasks: &[DestinationTask],
    transport: &mut dyn Transport,
    config: &TracetreeConfig,
) -> Result<TracetreeOutcome, TracetreeError> {
    tracetree_streaming(tasks, transport, config, &mut |_| {})
}

/// Runs one measurement, handing every record to `on_record` as soon as it
/// is produced. Transport faults end the measurement early and are reported
/// through [`TracetreeOutcome::incomplete`].
pub fn tracetree_streaming(
    tasks: &[DestinationTask],
    transport: &mut dyn Transport,
    config: &TracetreeConfig,
    on_record: &mut dyn FnMut(&ProbeRecord),
) -> Result<TracetreeOutcome, TracetreeError> {
    config.validate()?;
    if tasks.is_empty() {
        return Err(TracetreeError::NoTasks);
    }
    let mut distinct = HashSet::new();
    for t in tasks {
        if !distinct.insert(t.destination) {
            return Err(TracetreeError::DuplicateDestination(t.destination));
        }
        if t.assumed_distance == 0 || t.assumed_distance > config.max_ttl {
            return Err(TracetreeError::InvalidDistance {
                destination: t.destination,
                distance: t.assumed_distance,
                max_ttl: config.max_ttl,
            });
        }
    }

    let mut e = Engine {
        config,
        to_probe: VecDeque::new(),
        queued: HashSet::new(),
        to_receive: BTreeMap::new(),
        inbox: VecDeque::new(),
        seen: HashSet::new(),
        records: Vec::new(),
        echo: HashMap::new(),
        restarted: HashSet::new(),
        stats: TracetreeStats::default(),
    };
    for t in tasks {
        e.push(t.destination, t.assumed_distance, true);
    }
    e.stats.started_at = transport.now();
    let mut next_send_at = e.stats.started_at;
    let mut fault = None;

    'main: while !e.to_probe.is_empty() || !e.to_receive.is_empty() || !e.inbox.is_empty() {
        // send
        let mut budget = match config.send_strategy {
            Strategy::OnePerLoop => 1,
            Strategy::Greedy => usize::MAX,
        };
        while budget > 0 {
            let Some(&(d, ttl, first)) = e.to_probe.front() else { break };
            if config.send_strategy == Strategy::Greedy {
                transport.wait_until(next_send_at);
            } else if transport.now() < next_send_at {
                break;
            }
            match transport.send(d, ttl) {
                Ok(token) => {
                    e.to_probe.pop_front();
                    e.stats.probes_sent += 1;
                    next_send_at = token.sent_at + config.inter_probe_delay;
                    e.to_receive.insert(
                        token.id,
                        InFlight {
                            token,
                            first_of_task: first,
                        },
                    );
                    budget -= 1;
                }
                Err(TransportError::Backpressure { retry_at }) => {
                    next_send_at = next_send_at.max(retry_at);
                    if config.send_strategy == Strategy::OnePerLoop {
                        break;
                    }
                }
                Err(err) => {
                    fault = Some(err);
                    break 'main;
                }
            }
        }

        // receive
        if e.inbox.is_empty() {
            let expiry = e
                .to_receive
                .values()
                .map(|f| f.token.sent_at + config.timeout)
                .reduce(f64::min);
            let deadline = match (e.to_probe.is_empty(), expiry) {
                (false, Some(x)) => x.min(next_send_at),
                (false, None) => next_send_at,
                (true, Some(x)) => x,
                (true, None) => transport.now(),
            };
            match transport.poll(deadline) {
                Ok(replies) => e.inbox.extend(replies),
                Err(err) => {
                    fault = Some(err);
                    break 'main;
                }
            }
        }
        let mut budget = match config.receive_strategy {
            Strategy::OnePerLoop => 1,
            Strategy::Greedy => usize::MAX,
        };
        while budget > 0 {
            let Some(r) = e.inbox.pop_front() else { break };
            budget -= 1;
            if r.late {
                e.stats.late_replies += 1;
                continue;
            }
            let Some(f) = e.to_receive.remove(&r.token.id) else {
                e.stats.late_replies += 1;
                continue;
            };
            if r.received_at > f.token.sent_at + config.timeout {
                // arrived after its deadline: a timeout that we happened to
                // see before running the expiry check
                transport.expire(&f.token);
                e.stats.late_replies += 1;
                e.stats.timeouts += 1;
                e.record(on_record, &f, None);
            } else {
                e.stats.replies += 1;
                e.record(on_record, &f, Some((r.source, r.kind)));
            }
        }

        // expire
        let now = transport.now();
        let answered: HashSet<u64> = e.inbox.iter().map(|r| r.token.id).collect();
        let overdue: Vec<u64> = e
            .to_receive
            .iter()
            .filter(|(id, f)| now >= f.token.sent_at + config.timeout && !answered.contains(id))
            .map(|(id, _)| *id)
            .collect();
        for id in overdue {
            let f = e.to_receive.remove(&id).expect("listed");
            transport.expire(&f.token);
            e.stats.timeouts += 1;
            e.record(on_record, &f, None);
        }
    }

    e.stats.finished_at = transport.now();
    let raw = RawTraceTree::from_records(e.records)
        .expect("engine never probes a (destination, ttl) twice");
    let distances = tasks
        .iter()
        .map(|t| {
            let d = e
                .echo
                .get(&t.destination)
                .map_or(Distance::NotSeen, |ttl| Distance::Seen(*ttl));
            (t.destination, d)
        })
        .collect();
    if let Some(err) = &fault {
        log::warn!("measurement aborted: {err}");
    }
    Ok(TracetreeOutcome {
        raw,
        distances,
        stats: e.stats,
        incomplete: fault.is_some(),
        fault,
    })
}

/// Replays the stopping rule over known per-destination routes: chains run
/// backward from each route's last TTL in FIFO order across destinations
/// and stop after the first already seen (address, TTL). TTLs missing from
/// a route are recorded as stars.
pub fn replay_stopping_rule(routes: &BTreeMap<Ipv4Addr, Vec<(Hop, u8)>>) -> RawTraceTree {
    let lookup: HashMap<(Ipv4Addr, u8), Hop> = routes
        .iter()
        .flat_map(|(d, r)| r.iter().map(move |(h, t)| ((*d, *t), *h)))
        .collect();
    let mut queue: VecDeque<(Ipv4Addr, u8)> = routes
        .iter()
        .filter_map(|(d, r)| r.iter().map(|(_, t)| *t).max().map(|t| (*d, t)))
        .collect();
    let mut seen = HashSet::new();
    let mut records = Vec::new();
    while let Some((d, ttl)) = queue.pop_front() {
        let hop = lookup.get(&(d, ttl)).copied().unwrap_or(Hop::Star);
        records.push(ProbeRecord::new(hop, ttl, d));
        let fresh = match hop {
            Hop::Ip(a) => seen.insert((a, ttl)),
            Hop::Star => true,
        };
        if fresh && ttl > 1 {
            queue.push_back((d, ttl - 1));
        }
    }
    RawTraceTree::from_records(records).expect("one record per (destination, ttl)")
}
