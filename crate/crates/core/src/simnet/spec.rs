//! Topology description as read from a TOML document.
//!
//! ```toml
//! monitor = "m"
//! per-hop-delay = 0.01          # seconds, optional
//! destinations = ["10.0.0.9"]   # optional
//!
//! [[nodes]]
//! id = "m"
//! address = "10.0.0.1"
//!
//! [[nodes]]
//! id = "r1"
//! address = "10.0.0.2"
//! policy = { kind = "rate-limited", rate = 5.0, burst = 2 }   # or "silent"
//!
//! [[links]]
//! from = "m"
//! to = "r1"
//!
//! [[balancers]]
//! node = "r1"
//! kind = "per-packet"
//! next-hops = ["r2", "r3"]
//!
//! [[balancers]]
//! node = "r4"
//! kind = "per-destination"
//! map = { "10.0.0.9" = "r5" }
//!
//! [[routes]]                    # static override, destination optional
//! node = "r2"
//! via = "r6"
//!
//! [[events]]
//! at = 50.0
//! action = "rewire-link"
//! node = "r1"
//! via = "r3"
//! ```
//!
//! Event actions: `rewire-link` (`node`, optional `via`, optional
//! `destination`; no `via` clears the override), `add-island` (`nodes`,
//! `links`), `remove-node` (`node`), `change-policy` (`node`, `policy`),
//! `renumber` (`node`, `address`), `link-down` and `link-up` (`from`, `to`).

use std::collections::BTreeMap;
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

use crate::error::TopologyError;
use crate::model::Seconds;

pub const DEFAULT_PER_HOP_DELAY: Seconds = 0.010;

fn default_delay() -> Seconds {
    DEFAULT_PER_HOP_DELAY
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct TopologySpec {
    pub monitor: String,
    #[serde(default = "default_delay")]
    pub per_hop_delay: Seconds,
    #[serde(default)]
    pub destinations: Vec<Ipv4Addr>,
    pub nodes: Vec<NodeSpec>,
    #[serde(default)]
    pub links: Vec<LinkSpec>,
    #[serde(default)]
    pub balancers: Vec<BalancerSpec>,
    #[serde(default)]
    pub routes: Vec<RouteSpec>,
    #[serde(default)]
    pub events: Vec<EventSpec>,
}

impl TopologySpec {
    pub fn from_toml(text: &str) -> Result<Self, TopologyError> {
        toml::from_str(text).map_err(|e| TopologyError::Parse(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("topology spec serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub id: String,
    pub address: Ipv4Addr,
    #[serde(default, skip_serializing_if = "ResponsePolicy::is_responsive")]
    pub policy: ResponsePolicy,
}

/// How a node answers probes that end on it.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ResponsePolicy {
    #[default]
    Responsive,
    Silent,
    /// Token bucket: `burst` tokens, refilled continuously at `rate` per second.
    RateLimited { rate: f64, burst: u32 },
}

impl ResponsePolicy {
    pub fn is_responsive(&self) -> bool {
        matches!(self, ResponsePolicy::Responsive)
    }

    pub(crate) fn check(&self) -> Result<(), String> {
        match *self {
            ResponsePolicy::RateLimited { rate, burst } => {
                if !(rate.is_finite() && rate > 0.0) {
                    Err(format!("rate must be positive, got {rate}"))
                } else if burst == 0 {
                    Err("burst must be at least 1".into())
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSpec {
    pub from: String,
    pub to: String,
}

impl LinkSpec {
    pub fn new(from: impl Into<String>, to: impl Into<String>) -> Self {
        LinkSpec {
            from: from.into(),
            to: to.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalancerSpec {
    pub node: String,
    #[serde(flatten)]
    pub policy: BalancerKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BalancerKind {
    /// Fixed next hop per destination; other destinations use default routing.
    PerDestination { map: BTreeMap<Ipv4Addr, String> },
    /// Round-robin over the list, one step per traversing packet.
    PerPacket {
        #[serde(rename = "next-hops")]
        next_hops: Vec<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RouteSpec {
    pub node: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub destination: Option<Ipv4Addr>,
    pub via: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventSpec {
    pub at: Seconds,
    #[serde(flatten)]
    pub action: ActionSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "kebab-case")]
pub enum ActionSpec {
    RewireLink {
        node: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        via: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        destination: Option<Ipv4Addr>,
    },
    AddIsland {
        nodes: Vec<NodeSpec>,
        links: Vec<LinkSpec>,
    },
    RemoveNode {
        node: String,
    },
    ChangePolicy {
        node: String,
        policy: ResponsePolicy,
    },
    Renumber {
        node: String,
        address: Ipv4Addr,
    },
    LinkDown {
        from: String,
        to: String,
    },
    LinkUp {
        from: String,
        to: String,
    },
}

/// Programmatic construction of a [`TopologySpec`].
#[derive(Debug, Clone)]
pub struct TopologyBuilder {
    spec: TopologySpec,
}

impl TopologyBuilder {
    pub fn new(monitor: impl Into<String>, address: Ipv4Addr) -> Self {
        let monitor = monitor.into();
        TopologyBuilder {
            spec: TopologySpec {
                monitor: monitor.clone(),
                per_hop_delay: DEFAULT_PER_HOP_DELAY,
                destinations: Vec::new(),
                nodes: vec![NodeSpec {
                    id: monitor,
                    address,
                    policy: ResponsePolicy::Responsive,
                }],
                links: Vec::new(),
                balancers: Vec::new(),
                routes: Vec::new(),
                events: Vec::new(),
            },
        }
    }

    pub fn per_hop_delay(mut self, delay: Seconds) -> Self {
        self.spec.per_hop_delay = delay;
        self
    }

    pub fn node(mut self, id: impl Into<String>, address: Ipv4Addr) -> Self {
        self.spec.nodes.push(NodeSpec {
            id: id.into(),
            address,
            policy: ResponsePolicy::Responsive,
        });
        self
    }

    pub fn policy(mut self, id: &str, policy: ResponsePolicy) -> Self {
        if let Some(n) = self.spec.nodes.iter_mut().find(|n| n.id == id) {
            n.policy = policy;
        }
        self
    }

    pub fn silent(self, id: &str) -> Self {
        self.policy(id, ResponsePolicy::Silent)
    }

    pub fn rate_limited(self, id: &str, rate: f64, burst: u32) -> Self {
        self.policy(id, ResponsePolicy::RateLimited { rate, burst })
    }

    pub fn link(mut self, from: impl Into<String>, to: impl Into<String>) -> Self {
        self.spec.links.push(LinkSpec::new(from, to));
        self
    }

    /// Links consecutive ids.
    pub fn path(mut self, ids: &[&str]) -> Self {
        for w in ids.windows(2) {
            self.spec.links.push(LinkSpec::new(w[0], w[1]));
        }
        self
    }

    pub fn per_packet(mut self, node: &str, next_hops: &[&str]) -> Self {
        self.spec.balancers.push(BalancerSpec {
            node: node.into(),
            policy: BalancerKind::PerPacket {
                next_hops: next_hops.iter().map(|s| s.to_string()).collect(),
            },
        });
        self
    }

    pub fn per_destination(mut self, node: &str, map: &[(Ipv4Addr, &str)]) -> Self {
        self.spec.balancers.push(BalancerSpec {
            node: node.into(),
            policy: BalancerKind::PerDestination {
                map: map.iter().map(|(d, v)| (*d, v.to_string())).collect(),
            },
        });
        self
    }

    pub fn route(mut self, node: &str, destination: Option<Ipv4Addr>, via: &str) -> Self {
        self.spec.routes.push(RouteSpec {
            node: node.into(),
            destination,
            via: via.into(),
        });
        self
    }

    pub fn destination(mut self, address: Ipv4Addr) -> Self {
        self.spec.destinations.push(address);
        self
    }

    pub fn destinations(mut self, addresses: impl IntoIterator<Item = Ipv4Addr>) -> Self {
        self.spec.destinations.extend(addresses);
        self
    }

    pub fn event(mut self, at: Seconds, action: ActionSpec) -> Self {
        self.spec.events.push(EventSpec { at, action });
        self
    }

    pub fn build(self) -> TopologySpec {
        self.spec
    }
}
