use std::collections::{HashMap, HashSet, VecDeque};
use std::net::Ipv4Addr;

use crate::error::SimError;
use crate::model::{ReplyKind, Seconds};

use super::spec::ResponsePolicy;
use super::topology::{BalancerPolicy, EventAction, NodeId, Topology};

const UNREACHED: u32 = u32::MAX;

/// Outcome of one simulated probe.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SimReply {
    Answer {
        kind: ReplyKind,
        source: Ipv4Addr,
        /// Round-trip time: twice the one-way hop count times the hop delay.
        rtt: Seconds,
    },
    Silence,
}

impl SimReply {
    pub fn source(&self) -> Option<Ipv4Addr> {
        match self {
            SimReply::Answer { source, .. } => Some(*source),
            SimReply::Silence => None,
        }
    }

    pub fn kind(&self) -> Option<ReplyKind> {
        match self {
            SimReply::Answer { kind, .. } => Some(*kind),
            SimReply::Silence => None,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Bucket {
    tokens: f64,
    last: Seconds,
}

/// Mutable simulator state: node liveness, link status, overrides,
/// balancer counters, token buckets and the event cursor.
#[derive(Debug, Clone)]
pub struct SimState {
    active: Vec<bool>,
    link_up: HashSet<(NodeId, NodeId)>,
    policies: Vec<ResponsePolicy>,
    addresses: Vec<Ipv4Addr>,
    by_address: HashMap<Ipv4Addr, NodeId>,
    routes: HashMap<(NodeId, Option<Ipv4Addr>), NodeId>,
    counters: Vec<usize>,
    buckets: Vec<Option<Bucket>>,
    next_event: usize,
    /// BFS parent arrays keyed by their source node.
    trees: HashMap<NodeId, Vec<u32>>,
}

impl SimState {
    pub fn new(topo: &Topology) -> Self {
        let n = topo.node_count();
        let by_address = (0..n)
            .filter(|&i| topo.initially_active[i])
            .map(|i| (topo.addresses[i], i))
            .collect();
        SimState {
            active: topo.initially_active.clone(),
            link_up: topo.initially_up.clone(),
            policies: topo.policies.clone(),
            addresses: topo.addresses.clone(),
            by_address,
            routes: topo.routes.clone(),
            counters: vec![0; n],
            buckets: topo.policies.iter().map(|p| full_bucket(*p)).collect(),
            next_event: 0,
            trees: HashMap::new(),
        }
    }

    /// Number of events applied so far.
    pub fn applied_events(&self) -> usize {
        self.next_event
    }

    pub fn is_active(&self, node: NodeId) -> bool {
        self.active[node]
    }

    pub fn address(&self, node: NodeId) -> Ipv4Addr {
        self.addresses[node]
    }

    pub fn node_at(&self, address: Ipv4Addr) -> Option<NodeId> {
        self.by_address.get(&address).copied()
    }

    /// Applies, in order, every not yet applied event scheduled at or before
    /// `up_to`. Returns how many were applied.
    pub fn apply_events(&mut self, topo: &Topology, up_to: Seconds) -> Result<usize, SimError> {
        let start = self.next_event;
        while let Some(ev) = topo.events.get(self.next_event) {
            if ev.at > up_to {
                break;
            }
            self.apply(topo, &ev.action).map_err(|reason| SimError::Scenario {
                index: self.next_event,
                at: ev.at,
                reason,
            })?;
            self.next_event += 1;
        }
        Ok(self.next_event - start)
    }

    fn require(&self, topo: &Topology, node: NodeId) -> Result<(), String> {
        if self.active[node] {
            Ok(())
        } else {
            Err(format!("node `{}` is not present", topo.ids[node]))
        }
    }

    fn apply(&mut self, topo: &Topology, action: &EventAction) -> Result<(), String> {
        match action {
            EventAction::RewireLink {
                node,
                via,
                destination,
            } => {
                self.require(topo, *node)?;
                match via {
                    Some(v) => {
                        self.require(topo, *v)?;
                        self.routes.insert((*node, *destination), *v);
                    }
                    None => {
                        self.routes.remove(&(*node, *destination));
                    }
                }
            }
            EventAction::AddIsland { nodes, links } => {
                for &n in nodes {
                    if self.active[n] {
                        return Err(format!("node `{}` is already present", topo.ids[n]));
                    }
                    if let Some(&other) = self.by_address.get(&self.addresses[n]) {
                        return Err(format!(
                            "address {} already used by `{}`",
                            self.addresses[n], topo.ids[other]
                        ));
                    }
                }
                for &n in nodes {
                    self.active[n] = true;
                    self.by_address.insert(self.addresses[n], n);
                }
                for &(a, b) in links {
                    self.require(topo, a)?;
                    self.require(topo, b)?;
                    self.link_up.insert((a, b));
                }
                self.trees.clear();
            }
            EventAction::RemoveNode(n) => {
                self.require(topo, *n)?;
                self.active[*n] = false;
                self.by_address.remove(&self.addresses[*n]);
                self.trees.clear();
            }
            EventAction::ChangePolicy(n, p) => {
                self.require(topo, *n)?;
                self.policies[*n] = *p;
                self.buckets[*n] = full_bucket(*p);
            }
            EventAction::Renumber(n, a) => {
                self.require(topo, *n)?;
                if let Some(&other) = self.by_address.get(a) {
                    if other != *n {
                        return Err(format!("address {a} already used by `{}`", topo.ids[other]));
                    }
                }
                self.by_address.remove(&self.addresses[*n]);
                self.addresses[*n] = *a;
                self.by_address.insert(*a, *n);
            }
            EventAction::LinkDown(a, b) => {
                self.require(topo, *a)?;
                self.require(topo, *b)?;
                self.link_up.remove(&(*a, *b));
                self.trees.clear();
            }
            EventAction::LinkUp(a, b) => {
                self.require(topo, *a)?;
                self.require(topo, *b)?;
                self.link_up.insert((*a, *b));
                self.trees.clear();
            }
        }
        Ok(())
    }

    fn usable(&self, a: NodeId, b: NodeId) -> bool {
        self.active[b] && self.link_up.contains(&(a, b))
    }

    fn tree(&mut self, topo: &Topology, source: NodeId) -> &[u32] {
        if !self.trees.contains_key(&source) {
            let mut parent = vec![UNREACHED; topo.node_count()];
            parent[source] = source as u32;
            let mut q = VecDeque::from([source]);
            while let Some(u) = q.pop_front() {
                for &v in &topo.out[u] {
                    if parent[v] == UNREACHED && self.usable(u, v) {
                        parent[v] = u as u32;
                        q.push_back(v);
                    }
                }
            }
            self.trees.insert(source, parent);
        }
        &self.trees[&source]
    }

    /// Next hop from `cur` toward `target`, following a shortest path from
    /// `anchor` unless a rule at `cur` applies. Returns the hop and whether
    /// it came from a rule.
    fn next_hop(
        &mut self,
        topo: &Topology,
        cur: NodeId,
        anchor: NodeId,
        target: Option<NodeId>,
        destination: Ipv4Addr,
    ) -> Option<(NodeId, bool)> {
        let rule = self
            .routes
            .get(&(cur, Some(destination)))
            .or_else(|| self.routes.get(&(cur, None)))
            .copied()
            .or_else(|| match &topo.balancers[cur] {
                Some(BalancerPolicy::PerDestination(map)) => map.get(&destination).copied(),
                Some(BalancerPolicy::PerPacket(cycle)) => {
                    let v = cycle[self.counters[cur] % cycle.len()];
                    self.counters[cur] += 1;
                    Some(v)
                }
                None => None,
            });
        if let Some(v) = rule {
            return self.usable(cur, v).then_some((v, true));
        }
        let target = target?;
        let parent = self.tree(topo, anchor);
        if parent[target] == UNREACHED {
            return None;
        }
        let mut v = target;
        loop {
            let p = parent[v] as usize;
            if p == cur {
                return Some((v, false));
            }
            if p == v {
                // reached the anchor without meeting `cur`
                return None;
            }
            v = p;
        }
    }

    /// Sends one probe with the given TTL from the monitor toward
    /// `destination` at time `at`. Does not apply pending events.
    pub fn route_probe(
        &mut self,
        topo: &Topology,
        destination: Ipv4Addr,
        ttl: u8,
        at: Seconds,
    ) -> SimReply {
        let target = self.node_at(destination);
        let mut cur = topo.monitor;
        let mut anchor = topo.monitor;
        let mut ttl = ttl;
        let mut hops = 0u32;
        let (kind, node) = loop {
            match self.next_hop(topo, cur, anchor, target, destination) {
                None => {
                    if cur == topo.monitor {
                        return SimReply::Silence;
                    }
                    break (ReplyKind::Unreachable, cur);
                }
                Some((v, rule)) => {
                    hops += 1;
                    cur = v;
                    if rule {
                        anchor = v;
                    }
                    if Some(v) == target {
                        break (ReplyKind::EchoReply, v);
                    }
                    ttl = ttl.saturating_sub(1);
                    if ttl == 0 {
                        break (ReplyKind::TimeExceeded, v);
                    }
                }
            }
        };
        let arrival = at + hops as f64 * topo.per_hop_delay;
        if !self.admit(node, arrival) {
            return SimReply::Silence;
        }
        SimReply::Answer {
            kind,
            source: self.addresses[node],
            rtt: 2.0 * hops as f64 * topo.per_hop_delay,
        }
    }

    fn admit(&mut self, node: NodeId, at: Seconds) -> bool {
        match self.policies[node] {
            ResponsePolicy::Responsive => true,
            ResponsePolicy::Silent => false,
            ResponsePolicy::RateLimited { rate, burst } => {
                let b = self.buckets[node].get_or_insert(Bucket {
                    tokens: burst as f64,
                    last: at,
                });
                let elapsed = (at - b.last).max(0.0);
                b.tokens = (b.tokens + elapsed * rate).min(burst as f64);
                b.last = b.last.max(at);
                if b.tokens >= 1.0 {
                    b.tokens -= 1.0;
                    true
                } else {
                    false
                }
            }
        }
    }
}

fn full_bucket(p: ResponsePolicy) -> Option<Bucket> {
    match p {
        ResponsePolicy::RateLimited { burst, .. } => Some(Bucket {
            tokens: burst as f64,
            last: f64::NEG_INFINITY,
        }),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simnet::spec::{ActionSpec, LinkSpec, NodeSpec, TopologyBuilder};

    fn ip(s: &str) -> Ipv4Addr {
        s.parse().unwrap()
    }

    const D: &str = "10.0.0.4";

    fn chain() -> TopologyBuilder {
        TopologyBuilder::new("m", ip("10.0.0.1"))
            .node("r1", ip("10.0.0.2"))
            .node("r2", ip("10.0.0.3"))
            .node("d", ip(D))
            .path(&["m", "r1", "r2", "d"])
    }

    fn setup(b: TopologyBuilder) -> (Topology, SimState) {
        let t = Topology::from_spec(&b.build()).unwrap();
        let s = SimState::new(&t);
        (t, s)
    }

    #[test]
    fn ttl_expiry_and_echo() {
        let (t, mut s) = setup(chain());
        let r = s.route_probe(&t, ip(D), 1, 0.0);
        assert_eq!(
            r,
            SimReply::Answer {
                kind: ReplyKind::TimeExceeded,
                source: ip("10.0.0.2"),
                rtt: 0.02
            }
        );
        let r = s.route_probe(&t, ip(D), 3, 0.0);
        assert_eq!(r.kind(), Some(ReplyKind::EchoReply));
        assert_eq!(r.source(), Some(ip(D)));
        // a larger ttl still ends at the destination
        assert_eq!(s.route_probe(&t, ip(D), 30, 0.0).source(), Some(ip(D)));
    }

    #[test]
    fn per_packet_alternates() {
        let b = TopologyBuilder::new("m", ip("10.0.0.1"))
            .node("e", ip("10.0.0.2"))
            .node("i", ip("10.0.0.3"))
            .node("h", ip("10.0.0.4"))
            .node("d", ip("10.0.0.5"))
            .path(&["m", "e", "i", "d"])
            .path(&["e", "h", "d"])
            .per_packet("e", &["i", "h"]);
        let (t, mut s) = setup(b);
        let d = ip("10.0.0.5");
        let a = s.route_probe(&t, d, 2, 0.0).source();
        let b = s.route_probe(&t, d, 2, 0.0).source();
        assert_ne!(a, b);
        assert_eq!(s.route_probe(&t, d, 2, 0.0).source(), a);
    }

    #[test]
    fn per_destination_is_stable() {
        let b = TopologyBuilder::new("m", ip("10.0.0.1"))
            .node("b", ip("10.0.0.2"))
            .node("x", ip("10.0.0.3"))
            .node("y", ip("10.0.0.4"))
            .node("d1", ip("10.0.1.1"))
            .node("d2", ip("10.0.1.2"))
            .path(&["m", "b", "x", "d1"])
            .path(&["b", "y", "d2"])
            .link("x", "d2")
            .link("y", "d1")
            .per_destination("b", &[(ip("10.0.1.1"), "y"), (ip("10.0.1.2"), "x")]);
        let (t, mut s) = setup(b);
        for _ in 0..3 {
            assert_eq!(s.route_probe(&t, ip("10.0.1.1"), 2, 0.0).source(), Some(ip("10.0.0.4")));
            assert_eq!(s.route_probe(&t, ip("10.0.1.2"), 2, 0.0).source(), Some(ip("10.0.0.3")));
        }
    }

    #[test]
    fn token_bucket() {
        let (t, mut s) = setup(chain().rate_limited("r1", 1.0, 1));
        assert!(s.route_probe(&t, ip(D), 1, 0.0).source().is_some());
        assert_eq!(s.route_probe(&t, ip(D), 1, 0.1), SimReply::Silence);
        // refilled one second later
        assert!(s.route_probe(&t, ip(D), 1, 1.05).source().is_some());
    }

    #[test]
    fn silent_and_dead_end() {
        let (t, mut s) = setup(chain().silent("r2").node("x", ip("10.0.9.9")));
        assert_eq!(s.route_probe(&t, ip(D), 2, 0.0), SimReply::Silence);
        // unknown destination: no route from the monitor
        assert_eq!(s.route_probe(&t, ip("10.9.9.9"), 5, 0.0), SimReply::Silence);
        // x exists but nothing leads there: r? never gets a route, the
        // monitor has none either
        assert_eq!(s.route_probe(&t, ip("10.0.9.9"), 5, 0.0), SimReply::Silence);
    }

    #[test]
    fn override_into_dead_end_is_unreachable() {
        let b = chain()
            .node("stub", ip("10.0.0.8"))
            .link("r1", "stub")
            .route("r1", None, "stub");
        let (t, mut s) = setup(b);
        let r = s.route_probe(&t, ip(D), 5, 0.0);
        assert_eq!(r.kind(), Some(ReplyKind::Unreachable));
        assert_eq!(r.source(), Some(ip("10.0.0.8")));
    }

    #[test]
    fn rewire_changes_path_at_event_time() {
        let b = chain()
            .node("r3", ip("10.0.0.5"))
            .link("r1", "r3")
            .link("r3", "d")
            .event(
                50.0,
                ActionSpec::RewireLink {
                    node: "r1".into(),
                    via: Some("r3".into()),
                    destination: None,
                },
            );
        let (t, mut s) = setup(b);
        assert_eq!(s.apply_events(&t, 49.9).unwrap(), 0);
        assert_eq!(s.route_probe(&t, ip(D), 2, 49.9).source(), Some(ip("10.0.0.3")));
        assert_eq!(s.apply_events(&t, 50.0).unwrap(), 1);
        assert_eq!(s.route_probe(&t, ip(D), 2, 50.0).source(), Some(ip("10.0.0.5")));
        assert_eq!(s.apply_events(&t, 60.0).unwrap(), 0);
    }

    #[test]
    fn island_becomes_reachable() {
        let nodes: Vec<NodeSpec> = (1..=9)
            .map(|i| NodeSpec {
                id: format!("i{i}"),
                address: Ipv4Addr::new(10, 5, 0, i),
                policy: ResponsePolicy::Responsive,
            })
            .collect();
        let mut links = vec![LinkSpec::new("r2", "i1")];
        links.extend((2..=9).map(|i| LinkSpec::new("i1", format!("i{i}"))));
        let b = chain().event(100.0, ActionSpec::AddIsland { nodes, links });
        let (t, mut s) = setup(b);
        let far = Ipv4Addr::new(10, 5, 0, 7);
        assert_eq!(s.route_probe(&t, far, 30, 99.0), SimReply::Silence);
        s.apply_events(&t, 100.0).unwrap();
        assert_eq!(s.route_probe(&t, far, 3, 100.0).source(), Some(Ipv4Addr::new(10, 5, 0, 1)));
        assert_eq!(s.route_probe(&t, far, 30, 100.0).kind(), Some(ReplyKind::EchoReply));
    }

    #[test]
    fn event_on_removed_node_is_an_error() {
        let b = chain()
            .event(1.0, ActionSpec::RemoveNode { node: "r2".into() })
            .event(2.0, ActionSpec::ChangePolicy {
                node: "r2".into(),
                policy: ResponsePolicy::Silent,
            });
        let (t, mut s) = setup(b);
        s.apply_events(&t, 1.5).unwrap();
        // no path survives, so the probe never leaves the monitor
        assert_eq!(s.route_probe(&t, ip(D), 5, 1.5), SimReply::Silence);
        assert!(matches!(
            s.apply_events(&t, 2.0),
            Err(SimError::Scenario { index: 1, .. })
        ));
    }

    #[test]
    fn renumber_and_link_events() {
        let b = chain()
            .event(1.0, ActionSpec::Renumber { node: "r1".into(), address: ip("10.7.7.7") })
            .event(2.0, ActionSpec::LinkDown { from: "m".into(), to: "r1".into() })
            .event(3.0, ActionSpec::LinkUp { from: "m".into(), to: "r1".into() });
        let (t, mut s) = setup(b);
        s.apply_events(&t, 1.0).unwrap();
        assert_eq!(s.route_probe(&t, ip(D), 1, 1.0).source(), Some(ip("10.7.7.7")));
        s.apply_events(&t, 2.0).unwrap();
        assert_eq!(s.route_probe(&t, ip(D), 3, 2.0), SimReply::Silence);
        s.apply_events(&t, 3.0).unwrap();
        assert_eq!(s.route_probe(&t, ip(D), 3, 3.0).source(), Some(ip(D)));
    }
}
