//! Deterministic hop-level network simulator.
//!
//! A [`Topology`] is validated once and never mutated; everything that
//! changes while probing (balancer counters, token buckets, scheduled events)
//! lives in [`SimState`]. Forwarding follows shortest paths over the links
//! that are currently up, with ties broken by declaration order. A static
//! route or balancer at a node overrides that choice, and the rest of the
//! walk then follows shortest paths from the chosen next hop.
//!
//! Only the node that answers applies its response policy: a probe crossing
//! a silent or rate-limited router is forwarded normally.

pub mod scenarios;
mod spec;
mod state;
mod topology;

use std::net::Ipv4Addr;

pub use spec::{
    ActionSpec, BalancerKind, BalancerSpec, EventSpec, LinkSpec, NodeSpec, ResponsePolicy,
    RouteSpec, TopologyBuilder, TopologySpec, DEFAULT_PER_HOP_DELAY,
};
pub use state::{SimReply, SimState};
pub use topology::{load_topology, BalancerPolicy, EventAction, NodeId, ScheduledEvent, Topology};

use crate::error::{SimError, TopologyError};
use crate::model::Seconds;

/// A topology together with its evolving state.
#[derive(Debug, Clone)]
pub struct Simulator {
    topology: Topology,
    state: SimState,
}

impl Simulator {
    pub fn new(topology: Topology) -> Self {
        let state = SimState::new(&topology);
        Simulator { topology, state }
    }

    pub fn from_spec(spec: &TopologySpec) -> Result<Self, TopologyError> {
        Ok(Simulator::new(Topology::from_spec(spec)?))
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn state(&self) -> &SimState {
        &self.state
    }

    pub fn apply_events(&mut self, up_to: Seconds) -> Result<usize, SimError> {
        self.state.apply_events(&self.topology, up_to)
    }

    /// Routes a probe without applying pending events.
    pub fn route_probe(&mut self, destination: Ipv4Addr, ttl: u8, at: Seconds) -> SimReply {
        self.state.route_probe(&self.topology, destination, ttl, at)
    }

    /// Applies the events due at `at`, then routes the probe.
    pub fn probe(&mut self, destination: Ipv4Addr, ttl: u8, at: Seconds) -> Result<SimReply, SimError> {
        self.apply_events(at)?;
        Ok(self.route_probe(destination, ttl, at))
    }
}
