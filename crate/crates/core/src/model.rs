//! Domain types shared by every stage of the pipeline: probe records, the raw
//! (hop, ttl) tree produced by a measurement, the filtered tree on addresses,
//! and the round/dataset containers.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::net::Ipv4Addr;
use std::str::FromStr;

use crate::error::ModelError;

/// Time in seconds. Simulated transports count from zero, the ICMP backend
/// uses the UNIX epoch.
pub type Seconds = f64;

/// Default maximal TTL, also the default assumed distance of unknown
/// destinations.
pub const DEFAULT_MAX_TTL: u8 = 30;

/// Hard upper bound accepted for any configured `max_ttl`.
pub const MAX_TTL_LIMIT: u8 = 64;

/// One observation: the address that answered a probe, or a star when the
/// probe timed out.
///
/// The derived ordering is the one used by the filter's BFS: every address
/// comes before `Star`, and addresses compare octet by octet numerically.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Hop {
    Ip(Ipv4Addr),
    Star,
}

impl Hop {
    pub fn ip(&self) -> Option<Ipv4Addr> {
        match self {
            Hop::Ip(a) => Some(*a),
            Hop::Star => None,
        }
    }

    pub fn is_star(&self) -> bool {
        matches!(self, Hop::Star)
    }
}

impl From<Ipv4Addr> for Hop {
    fn from(a: Ipv4Addr) -> Self {
        Hop::Ip(a)
    }
}

impl fmt::Display for Hop {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Hop::Ip(a) => write!(f, "{a}"),
            Hop::Star => f.write_str("*"),
        }
    }
}

impl FromStr for Hop {
    type Err = std::net::AddrParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "*" {
            Ok(Hop::Star)
        } else {
            s.parse().map(Hop::Ip)
        }
    }
}

/// A node of the raw measurement tree: a hop together with the TTL at which
/// it was observed.
///
/// Stars are never identified with each other during measurement, so a star
/// node also carries the destination whose chain produced it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TtlNode {
    pub hop: Hop,
    pub ttl: u8,
    star_of: Option<Ipv4Addr>,
}

impl TtlNode {
    pub fn ip(addr: Ipv4Addr, ttl: u8) -> Self {
        TtlNode {
            hop: Hop::Ip(addr),
            ttl,
            star_of: None,
        }
    }

    pub fn star(ttl: u8, destination: Ipv4Addr) -> Self {
        TtlNode {
            hop: Hop::Star,
            ttl,
            star_of: Some(destination),
        }
    }

    /// Destination chain owning this node, for stars only.
    pub fn star_owner(&self) -> Option<Ipv4Addr> {
        self.star_of
    }
}

impl fmt::Display for TtlNode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.star_of {
            Some(d) => write!(f, "*@{}[{}]", self.ttl, d),
            None => write!(f, "{}@{}", self.hop, self.ttl),
        }
    }
}

/// Kind of an answer to a TTL-limited echo probe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ReplyKind {
    TimeExceeded,
    EchoReply,
    Unreachable,
}

/// One emitted probe and its outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ProbeRecord {
    pub source: Hop,
    pub ttl: u8,
    pub destination: Ipv4Addr,
}

impl ProbeRecord {
    pub fn new(source: Hop, ttl: u8, destination: Ipv4Addr) -> Self {
        ProbeRecord {
            source,
            ttl,
            destination,
        }
    }

    pub fn node(&self) -> TtlNode {
        match self.source {
            Hop::Ip(a) => TtlNode::ip(a, self.ttl),
            Hop::Star => TtlNode::star(self.ttl, self.destination),
        }
    }
}

/// The direct output of a tree measurement.
///
/// The tree is fully determined by its record list: nodes are the distinct
/// (hop, ttl) pairs, and for every destination, records at consecutive TTLs
/// are linked. Chains that stopped on an already seen node attach through that
/// shared node.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RawTraceTree {
    records: Vec<ProbeRecord>,
    nodes: BTreeSet<TtlNode>,
    edges: BTreeSet<(TtlNode, TtlNode)>,
    terminals: BTreeMap<Ipv4Addr, TtlNode>,
}

impl RawTraceTree {
    pub fn from_records(records: Vec<ProbeRecord>) -> Result<Self, ModelError> {
        let mut chains: BTreeMap<Ipv4Addr, BTreeMap<u8, TtlNode>> = BTreeMap::new();
        let mut nodes = BTreeSet::new();
        for (i, r) in records.iter().enumerate() {
            if r.ttl == 0 || r.ttl > MAX_TTL_LIMIT {
                return Err(ModelError::TtlOutOfRange {
                    ttl: r.ttl,
                    max: MAX_TTL_LIMIT,
                });
            }
            let node = r.node();
            if chains
                .entry(r.destination)
                .or_default()
                .insert(r.ttl, node)
                .is_some()
            {
                return Err(ModelError::DuplicateProbe {
                    index: i,
                    destination: r.destination,
                    ttl: r.ttl,
                });
            }
            nodes.insert(node);
        }

        let mut edges = BTreeSet::new();
        let mut terminals = BTreeMap::new();
        for (dest, chain) in &chains {
            let mut prev: Option<(u8, TtlNode)> = None;
            for (&ttl, &node) in chain {
                if let Some((pt, pn)) = prev {
                    if pt + 1 == ttl {
                        edges.insert((pn, node));
                    }
                }
                prev = Some((ttl, node));
            }
            if let Some((_, last)) = prev {
                terminals.insert(*dest, last);
            }
        }

        Ok(RawTraceTree {
            records,
            nodes,
            edges,
            terminals,
        })
    }

    pub fn records(&self) -> &[ProbeRecord] {
        &self.records
    }

    pub fn nodes(&self) -> &BTreeSet<TtlNode> {
        &self.nodes
    }

    pub fn edges(&self) -> &BTreeSet<(TtlNode, TtlNode)> {
        &self.edges
    }

    pub fn terminals(&self) -> &BTreeMap<Ipv4Addr, TtlNode> {
        &self.terminals
    }

    pub fn probes(&self) -> usize {
        self.records.len()
    }

    pub fn destinations(&self) -> impl Iterator<Item = Ipv4Addr> + '_ {
        self.terminals.keys().copied()
    }

    /// Distinct addresses appearing in the records.
    pub fn ips(&self) -> BTreeSet<Ipv4Addr> {
        self.records.iter().filter_map(|r| r.source.ip()).collect()
    }

    /// Records grouped per destination, sorted by TTL.
    pub fn chains(&self) -> BTreeMap<Ipv4Addr, Vec<(Hop, u8)>> {
        let mut out: BTreeMap<Ipv4Addr, Vec<(Hop, u8)>> = BTreeMap::new();
        for r in &self.records {
            out.entry(r.destination).or_default().push((r.source, r.ttl));
        }
        for chain in out.values_mut() {
            chain.sort_by_key(|&(_, t)| t);
        }
        out
    }
}

/// Node of a filtered tree. Merged stars are identified by the node they
/// hang from, so `Star(p)` renders as `*@p`.
///
/// The derived ordering puts every address before every star and compares
/// stars by their parent.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TreeHop {
    Ip(Ipv4Addr),
    Star(Box<TreeHop>),
}

impl TreeHop {
    pub fn ip(&self) -> Option<Ipv4Addr> {
        match self {
            TreeHop::Ip(a) => Some(*a),
            TreeHop::Star(_) => None,
        }
    }

    pub fn is_star(&self) -> bool {
        matches!(self, TreeHop::Star(_))
    }

    pub fn star_under(parent: &TreeHop) -> TreeHop {
        TreeHop::Star(Box::new(parent.clone()))
    }
}

impl fmt::Display for TreeHop {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TreeHop::Ip(a) => write!(f, "{a}"),
            TreeHop::Star(p) => write!(f, "*@{p}"),
        }
    }
}

/// A rooted tree over addresses and merged stars, rooted at the monitor.
#[derive(Debug, Clone, PartialEq)]
pub struct FilteredTree {
    pub root: TreeHop,
    pub nodes: BTreeSet<TreeHop>,
    /// Parent to child.
    pub edges: BTreeSet<(TreeHop, TreeHop)>,
    pub terminals: BTreeMap<Ipv4Addr, TreeHop>,
    /// Set when nothing besides the monitor was reachable.
    pub degenerate: bool,
}

impl FilteredTree {
    /// A tree holding only the monitor.
    pub fn empty(monitor: Ipv4Addr) -> Self {
        let root = TreeHop::Ip(monitor);
        FilteredTree {
            nodes: BTreeSet::from([root.clone()]),
            root,
            edges: BTreeSet::new(),
            terminals: BTreeMap::new(),
            degenerate: true,
        }
    }

    pub fn monitor(&self) -> Option<Ipv4Addr> {
        self.root.ip()
    }

    pub fn parents(&self) -> BTreeMap<&TreeHop, &TreeHop> {
        self.edges.iter().map(|(p, c)| (c, p)).collect()
    }

    pub fn children(&self) -> BTreeMap<&TreeHop, Vec<&TreeHop>> {
        let mut out: BTreeMap<&TreeHop, Vec<&TreeHop>> = BTreeMap::new();
        for (p, c) in &self.edges {
            out.entry(p).or_default().push(c);
        }
        out
    }

    /// Depth of every node, the root being at depth 0.
    pub fn depths(&self) -> BTreeMap<TreeHop, u32> {
        let children = self.children();
        let mut depth = BTreeMap::new();
        let mut stack = vec![(&self.root, 0u32)];
        while let Some((n, d)) = stack.pop() {
            depth.insert(n.clone(), d);
            if let Some(cs) = children.get(n) {
                stack.extend(cs.iter().map(|c| (*c, d + 1)));
            }
        }
        depth
    }

    /// Observed addresses: every non-star node except the monitor itself.
    pub fn observed_ips(&self) -> BTreeSet<Ipv4Addr> {
        self.nodes
            .iter()
            .filter(|n| **n != self.root)
            .filter_map(TreeHop::ip)
            .collect()
    }

    /// Parent-to-child edges between two observed addresses.
    pub fn ip_edges(&self) -> BTreeSet<(Ipv4Addr, Ipv4Addr)> {
        self.edges
            .iter()
            .filter(|(p, _)| *p != self.root)
            .filter_map(|(p, c)| Some((p.ip()?, c.ip()?)))
            .collect()
    }

    /// Keeps only the nodes and links lying on the paths from the monitor to
    /// the given destinations' terminals.
    pub fn restrict_to(&self, destinations: &BTreeSet<Ipv4Addr>) -> FilteredTree {
        let parents = self.parents();
        let mut nodes = BTreeSet::from([self.root.clone()]);
        let mut edges = BTreeSet::new();
        let mut terminals = BTreeMap::new();
        for (d, t) in &self.terminals {
            if !destinations.contains(d) {
                continue;
            }
            terminals.insert(*d, t.clone());
            let mut cur = t;
            while nodes.insert(cur.clone()) {
                match parents.get(cur) {
                    Some(p) => {
                        edges.insert(((*p).clone(), cur.clone()));
                        cur = p;
                    }
                    None => break,
                }
            }
        }
        FilteredTree {
            degenerate: nodes.len() == 1,
            root: self.root.clone(),
            nodes,
            edges,
            terminals,
        }
    }

    /// Checks the structural invariants: rooted, connected, one parent per
    /// non-root node, no self-loop, and every leaf is some destination's
    /// terminal.
    pub fn check_invariants(&self) -> Result<(), String> {
        if !self.nodes.contains(&self.root) {
            return Err("root missing from node set".into());
        }
        if self.edges.len() + 1 != self.nodes.len() {
            return Err(format!(
                "{} edges for {} nodes",
                self.edges.len(),
                self.nodes.len()
            ));
        }
        let mut has_parent = BTreeSet::new();
        for (p, c) in &self.edges {
            if p == c {
                return Err(format!("self-loop on {p}"));
            }
            if !self.nodes.contains(p) || !self.nodes.contains(c) {
                return Err(format!("edge {p} -> {c} leaves the node set"));
            }
            if !has_parent.insert(c) {
                return Err(format!("{c} has two parents"));
            }
        }
        if has_parent.contains(&self.root) {
            return Err("root has a parent".into());
        }
        let depths = self.depths();
        if depths.len() != self.nodes.len() {
            return Err("tree is not connected".into());
        }
        let children = self.children();
        let terminal_nodes: BTreeSet<&TreeHop> = self.terminals.values().collect();
        for n in &self.nodes {
            if *n != self.root && !children.contains_key(n) && !terminal_nodes.contains(n) {
                return Err(format!("leaf {n} is not a terminal"));
            }
        }
        for t in terminal_nodes {
            if !self.nodes.contains(t) {
                return Err(format!("terminal {t} not in tree"));
            }
        }
        Ok(())
    }
}

/// Timing metadata of one round, as stored in the round log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundMeta {
    pub index: u64,
    pub start_time: Seconds,
    pub end_time: Seconds,
    /// The measurement aborted before completion (transport fault).
    pub incomplete: bool,
}

impl RoundMeta {
    pub fn new(index: u64, start_time: Seconds, end_time: Seconds) -> Self {
        RoundMeta {
            index,
            start_time,
            end_time,
            incomplete: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub meta: RoundMeta,
    pub probes_sent: usize,
    pub tree: FilteredTree,
    pub raw: Option<RawTraceTree>,
}

impl RoundRecord {
    pub fn index(&self) -> u64 {
        self.meta.index
    }
}

/// An ordered sequence of rounds from one monitor.
#[derive(Debug, Clone, PartialEq)]
pub struct RadarDataset {
    pub monitor_id: String,
    pub monitor: Ipv4Addr,
    /// Free-form configuration snapshot, persisted as `#param` lines.
    pub parameters: BTreeMap<String, String>,
    rounds: Vec<RoundRecord>,
}

impl RadarDataset {
    pub fn new(monitor_id: impl Into<String>, monitor: Ipv4Addr) -> Self {
        RadarDataset {
            monitor_id: monitor_id.into(),
            monitor,
            parameters: BTreeMap::new(),
            rounds: Vec::new(),
        }
    }

    pub fn push(&mut self, round: RoundRecord) -> Result<(), ModelError> {
        if round.meta.end_time < round.meta.start_time {
            return Err(ModelError::RoundTiming {
                index: round.meta.index,
            });
        }
        if let Some(last) = self.rounds.last() {
            if round.meta.index <= last.meta.index {
                return Err(ModelError::RoundOrder {
                    previous: last.meta.index,
                    next: round.meta.index,
                });
            }
        }
        self.rounds.push(round);
        Ok(())
    }

    pub fn rounds(&self) -> &[RoundRecord] {
        &self.rounds
    }

    pub fn len(&self) -> usize {
        self.rounds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rounds.is_empty()
    }

    pub fn round(&self, index: u64) -> Option<&RoundRecord> {
        self.rounds
            .binary_search_by_key(&index, |r| r.meta.index)
            .ok()
            .map(|i| &self.rounds[i])
    }

    /// Rounds whose index lies in `[start, end)`.
    pub fn rounds_in(&self, start: u64, end: u64) -> &[RoundRecord] {
        let lo = self.rounds.partition_point(|r| r.meta.index < start);
        let hi = self.rounds.partition_point(|r| r.meta.index < end);
        &self.rounds[lo..hi.max(lo)]
    }

    /// Every destination that appears as a terminal, or in the raw records,
    /// of some round.
    pub fn destinations(&self) -> BTreeSet<Ipv4Addr> {
        let mut out = BTreeSet::new();
        for r in &self.rounds {
            out.extend(r.tree.terminals.keys().copied());
            if let Some(raw) = &r.raw {
                out.extend(raw.destinations());
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ip(s: &str) -> Ipv4Addr {
        s.parse().unwrap()
    }

    #[test]
    fn hop_rendering() {
        assert_eq!(Hop::Ip(ip("1.2.3.4")).to_string(), "1.2.3.4");
        assert_eq!(Hop::Star.to_string(), "*");
        assert_eq!("*".parse::<Hop>().unwrap(), Hop::Star);
        assert!("999.1.1.1".parse::<Hop>().is_err());
    }

    #[test]
    fn shared_node_gets_two_children() {
        let r = ip("10.0.0.1");
        let (x, y) = (ip("10.0.1.1"), ip("10.0.2.1"));
        let (d1, d2) = (ip("10.9.0.1"), ip("10.9.0.2"));
        let raw = RawTraceTree::from_records(vec![
            ProbeRecord::new(Hop::Ip(x), 3, d1),
            ProbeRecord::new(Hop::Ip(y), 3, d2),
            ProbeRecord::new(Hop::Ip(r), 2, d1),
            ProbeRecord::new(Hop::Ip(r), 2, d2),
        ])
        .unwrap();
        let shared = TtlNode::ip(r, 2);
        assert_eq!(raw.nodes().len(), 3);
        let out: Vec<_> = raw.edges().iter().filter(|(p, _)| *p == shared).collect();
        assert_eq!(out.len(), 2);
        assert_eq!(raw.terminals()[&d1], TtlNode::ip(x, 3));
    }

    #[test]
    fn stars_are_distinct_per_destination() {
        let (d1, d2) = (ip("10.9.0.1"), ip("10.9.0.2"));
        let raw = RawTraceTree::from_records(vec![
            ProbeRecord::new(Hop::Star, 2, d1),
            ProbeRecord::new(Hop::Star, 2, d2),
        ])
        .unwrap();
        assert_eq!(raw.nodes().len(), 2);
    }

    #[test]
    fn duplicate_probe_rejected() {
        let d = ip("10.9.0.1");
        let err = RawTraceTree::from_records(vec![
            ProbeRecord::new(Hop::Star, 2, d),
            ProbeRecord::new(Hop::Ip(ip("1.1.1.1")), 2, d),
        ]);
        assert!(matches!(err, Err(ModelError::DuplicateProbe { index: 1, .. })));
    }

    #[test]
    fn dataset_rejects_unordered_rounds() {
        let m = ip("10.0.0.1");
        let mut ds = RadarDataset::new("m", m);
        let round = |i| RoundRecord {
            meta: RoundMeta::new(i, 0.0, 1.0),
            probes_sent: 0,
            tree: FilteredTree::empty(m),
            raw: None,
        };
        ds.push(round(3)).unwrap();
        assert!(ds.push(round(3)).is_err());
        ds.push(round(5)).unwrap();
        assert_eq!(ds.rounds_in(0, 5).len(), 1);
        assert_eq!(ds.rounds_in(4, 6).len(), 1);
    }

    #[test]
    fn tree_hop_order_puts_stars_last() {
        let a = TreeHop::Ip(ip("9.0.0.0"));
        let b = TreeHop::Ip(ip("10.0.0.0"));
        let s = TreeHop::star_under(&a);
        assert!(a < b && b < s);
        assert_eq!(s.to_string(), "*@9.0.0.0");
    }
}
