use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::net::Ipv4Addr;

use crate::error::TopologyError;
use crate::model::Seconds;

use super::spec::{ActionSpec, BalancerKind, LinkSpec, ResponsePolicy, TopologySpec};

pub type NodeId = usize;

/// Balancer with next hops resolved to node indices.
#[derive(Debug, Clone, PartialEq)]
pub enum BalancerPolicy {
    PerDestination(BTreeMap<Ipv4Addr, NodeId>),
    PerPacket(Vec<NodeId>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum EventAction {
    RewireLink {
        node: NodeId,
        via: Option<NodeId>,
        destination: Option<Ipv4Addr>,
    },
    AddIsland {
        nodes: Vec<NodeId>,
        links: Vec<(NodeId, NodeId)>,
    },
    RemoveNode(NodeId),
    ChangePolicy(NodeId, ResponsePolicy),
    Renumber(NodeId, Ipv4Addr),
    LinkDown(NodeId, NodeId),
    LinkUp(NodeId, NodeId),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduledEvent {
    pub at: Seconds,
    pub action: EventAction,
}

/// Validated, immutable simulator topology. Nodes introduced by islands are
/// allocated up front and start inactive; their links start down.
#[derive(Debug, Clone)]
pub struct Topology {
    pub(crate) ids: Vec<String>,
    pub(crate) index: HashMap<String, NodeId>,
    pub(crate) addresses: Vec<Ipv4Addr>,
    pub(crate) policies: Vec<ResponsePolicy>,
    pub(crate) initially_active: Vec<bool>,
    /// Out-neighbours, ascending, over every link ever declared.
    pub(crate) out: Vec<Vec<NodeId>>,
    pub(crate) initially_up: HashSet<(NodeId, NodeId)>,
    pub(crate) monitor: NodeId,
    pub(crate) balancers: Vec<Option<BalancerPolicy>>,
    pub(crate) routes: HashMap<(NodeId, Option<Ipv4Addr>), NodeId>,
    pub(crate) events: Vec<ScheduledEvent>,
    pub(crate) per_hop_delay: Seconds,
    pub(crate) destinations: Vec<Ipv4Addr>,
}

/// Parses and validates a TOML topology document.
pub fn load_topology(text: &str) -> Result<Topology, TopologyError> {
    Topology::from_spec(&TopologySpec::from_toml(text)?)
}

impl Topology {
    pub fn from_spec(spec: &TopologySpec) -> Result<Self, TopologyError> {
        if !(spec.per_hop_delay.is_finite() && spec.per_hop_delay >= 0.0) {
            return Err(TopologyError::InvalidDelay);
        }
        let mut t = Topology {
            ids: Vec::new(),
            index: HashMap::new(),
            addresses: Vec::new(),
            policies: Vec::new(),
            initially_active: Vec::new(),
            out: Vec::new(),
            initially_up: HashSet::new(),
            monitor: 0,
            balancers: Vec::new(),
            routes: HashMap::new(),
            events: Vec::new(),
            per_hop_delay: spec.per_hop_delay,
            destinations: spec.destinations.clone(),
        };
        let mut owner: HashMap<Ipv4Addr, String> = HashMap::new();
        let mut add_node = |t: &mut Topology,
                            id: &str,
                            address: Ipv4Addr,
                            policy: ResponsePolicy,
                            active: bool|
         -> Result<(), TopologyError> {
            if t.index.contains_key(id) {
                return Err(TopologyError::DuplicateNode(id.into()));
            }
            if let Some(first) = owner.get(&address) {
                return Err(TopologyError::DuplicateAddress {
                    address,
                    first: first.clone(),
                    second: id.into(),
                });
            }
            policy.check().map_err(|reason| TopologyError::InvalidPolicy {
                node: id.into(),
                reason,
            })?;
            owner.insert(address, id.into());
            t.index.insert(id.into(), t.ids.len());
            t.ids.push(id.into());
            t.addresses.push(address);
            t.policies.push(policy);
            t.initially_active.push(active);
            t.out.push(Vec::new());
            t.balancers.push(None);
            Ok(())
        };

        for n in &spec.nodes {
            add_node(&mut t, &n.id, n.address, n.policy, true)?;
        }
        let base_nodes = t.ids.len();
        for (i, e) in spec.events.iter().enumerate() {
            if let ActionSpec::AddIsland { nodes, .. } = &e.action {
                if nodes.is_empty() {
                    return Err(TopologyError::InvalidEvent {
                        index: i,
                        reason: "island without nodes".into(),
                    });
                }
                for n in nodes {
                    add_node(&mut t, &n.id, n.address, n.policy, false)?;
                }
            }
        }
        t.monitor = t.lookup("monitor", &spec.monitor)?;
        if t.monitor >= base_nodes {
            return Err(TopologyError::UnknownNode {
                context: "monitor".into(),
                id: spec.monitor.clone(),
            });
        }

        for l in &spec.links {
            let (a, b) = t.resolve_link("link", l)?;
            if a >= base_nodes || b >= base_nodes {
                return Err(TopologyError::UnknownNode {
                    context: "link (island nodes only link through their event)".into(),
                    id: if a >= base_nodes { &l.from } else { &l.to }.clone(),
                });
            }
            t.insert_link(a, b);
            t.initially_up.insert((a, b));
        }
        for e in &spec.events {
            if let ActionSpec::AddIsland { links, .. } = &e.action {
                for l in links {
                    let (a, b) = t.resolve_link("island link", l)?;
                    t.insert_link(a, b);
                }
            }
        }

        for b in &spec.balancers {
            let node = t.lookup("balancer", &b.node)?;
            let policy = match &b.policy {
                BalancerKind::PerDestination { map } => {
                    let mut out = BTreeMap::new();
                    for (d, v) in map {
                        out.insert(*d, t.neighbor("balancer", node, v)?);
                    }
                    BalancerPolicy::PerDestination(out)
                }
                BalancerKind::PerPacket { next_hops } => {
                    if next_hops.is_empty() {
                        return Err(TopologyError::InvalidBalancer {
                            node: b.node.clone(),
                            reason: "empty next-hop cycle".into(),
                        });
                    }
                    let hops = next_hops
                        .iter()
                        .map(|v| t.neighbor("balancer", node, v))
                        .collect::<Result<_, _>>()?;
                    BalancerPolicy::PerPacket(hops)
                }
            };
            if t.balancers[node].replace(policy).is_some() {
                return Err(TopologyError::InvalidBalancer {
                    node: b.node.clone(),
                    reason: "node has two balancers".into(),
                });
            }
        }

        for r in &spec.routes {
            let node = t.lookup("route", &r.node)?;
            let via = t.neighbor("route", node, &r.via)?;
            t.routes.insert((node, r.destination), via);
        }

        let mut last_at = 0.0;
        for (i, e) in spec.events.iter().enumerate() {
            let bad = |reason: String| TopologyError::InvalidEvent { index: i, reason };
            if !(e.at.is_finite() && e.at >= 0.0) {
                return Err(bad(format!("time {} must be finite and non-negative", e.at)));
            }
            if e.at < last_at {
                return Err(bad("events must be sorted by time".into()));
            }
            last_at = e.at;
            let ctx = format!("event #{i}");
            let action = match &e.action {
                ActionSpec::RewireLink {
                    node,
                    via,
                    destination,
                } => {
                    let node = t.lookup(&ctx, node)?;
                    let via = via
                        .as_deref()
                        .map(|v| t.neighbor(&ctx, node, v))
                        .transpose()?;
                    EventAction::RewireLink {
                        node,
                        via,
                        destination: *destination,
                    }
                }
                ActionSpec::AddIsland { nodes, links } => EventAction::AddIsland {
                    nodes: nodes.iter().map(|n| t.index[&n.id]).collect(),
                    links: links
                        .iter()
                        .map(|l| t.resolve_link(&ctx, l))
                        .collect::<Result<_, _>>()?,
                },
                ActionSpec::RemoveNode { node } => EventAction::RemoveNode(t.lookup(&ctx, node)?),
                ActionSpec::ChangePolicy { node, policy } => {
                    policy.check().map_err(|reason| TopologyError::InvalidPolicy {
                        node: node.clone(),
                        reason,
                    })?;
                    EventAction::ChangePolicy(t.lookup(&ctx, node)?, *policy)
                }
                ActionSpec::Renumber { node, address } => {
                    EventAction::Renumber(t.lookup(&ctx, node)?, *address)
                }
                ActionSpec::LinkDown { from, to } => {
                    let (a, b) = t.resolve_existing_link(&ctx, from, to)?;
                    EventAction::LinkDown(a, b)
                }
                ActionSpec::LinkUp { from, to } => {
                    let (a, b) = t.resolve_existing_link(&ctx, from, to)?;
                    EventAction::LinkUp(a, b)
                }
            };
            t.events.push(ScheduledEvent { at: e.at, action });
        }

        t.check_destinations()?;
        Ok(t)
    }

    fn lookup(&self, context: &str, id: &str) -> Result<NodeId, TopologyError> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| TopologyError::UnknownNode {
                context: context.into(),
                id: id.into(),
            })
    }

    fn resolve_link(&self, context: &str, l: &LinkSpec) -> Result<(NodeId, NodeId), TopologyError> {
        Ok((self.lookup(context, &l.from)?, self.lookup(context, &l.to)?))
    }

    fn resolve_existing_link(
        &self,
        context: &str,
        from: &str,
        to: &str,
    ) -> Result<(NodeId, NodeId), TopologyError> {
        let a = self.lookup(context, from)?;
        Ok((a, self.neighbor(context, a, to)?))
    }

    fn neighbor(&self, context: &str, node: NodeId, id: &str) -> Result<NodeId, TopologyError> {
        let v = self.lookup(context, id)?;
        if self.out[node].binary_search(&v).is_err() {
            return Err(TopologyError::NotNeighbor {
                context: context.into(),
                node: self.ids[node].clone(),
                next_hop: id.into(),
            });
        }
        Ok(v)
    }

    fn insert_link(&mut self, a: NodeId, b: NodeId) {
        if let Err(pos) = self.out[a].binary_search(&b) {
            self.out[a].insert(pos, b);
        }
    }

    fn check_destinations(&self) -> Result<(), TopologyError> {
        let mut known: HashSet<Ipv4Addr> = self.addresses.iter().copied().collect();
        let mut dynamic = false;
        for e in &self.events {
            match &e.action {
                EventAction::Renumber(_, a) => {
                    known.insert(*a);
                    dynamic = true;
                }
                EventAction::RewireLink { .. }
                | EventAction::AddIsland { .. }
                | EventAction::LinkUp(..) => dynamic = true,
                _ => {}
            }
        }
        let reach = self.initially_reachable();
        for d in &self.destinations {
            if !known.contains(d) {
                return Err(TopologyError::UnknownDestination(*d));
            }
            let initial = self
                .addresses
                .iter()
                .position(|a| a == d)
                .is_some_and(|i| self.initially_active[i] && reach[i]);
            if !initial && !dynamic {
                return Err(TopologyError::UnreachableDestination(*d));
            }
        }
        Ok(())
    }

    fn initially_reachable(&self) -> Vec<bool> {
        let mut seen = vec![false; self.ids.len()];
        seen[self.monitor] = true;
        let mut q = VecDeque::from([self.monitor]);
        while let Some(u) = q.pop_front() {
            for &v in &self.out[u] {
                if !seen[v] && self.initially_active[v] && self.initially_up.contains(&(u, v)) {
                    seen[v] = true;
                    q.push_back(v);
                }
            }
        }
        seen
    }

    pub fn node_count(&self) -> usize {
        self.ids.len()
    }

    /// Links active at load time.
    pub fn link_count(&self) -> usize {
        self.initially_up.len()
    }

    pub fn monitor(&self) -> NodeId {
        self.monitor
    }

    pub fn monitor_address(&self) -> Ipv4Addr {
        self.addresses[self.monitor]
    }

    pub fn id(&self, node: NodeId) -> &str {
        &self.ids[node]
    }

    pub fn node(&self, id: &str) -> Option<NodeId> {
        self.index.get(id).copied()
    }

    /// Address assigned at load time.
    pub fn address(&self, node: NodeId) -> Ipv4Addr {
        self.addresses[node]
    }

    pub fn policy(&self, node: NodeId) -> ResponsePolicy {
        self.policies[node]
    }

    pub fn balancer(&self, node: NodeId) -> Option<&BalancerPolicy> {
        self.balancers[node].as_ref()
    }

    pub fn events(&self) -> &[ScheduledEvent] {
        &self.events
    }

    pub fn per_hop_delay(&self) -> Seconds {
        self.per_hop_delay
    }

    pub fn destinations(&self) -> &[Ipv4Addr] {
        &self.destinations
    }
}
