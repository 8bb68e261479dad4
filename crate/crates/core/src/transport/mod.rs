//! Probe transport contract and its backends.
//!
//! [`Transport::send`] never blocks; replies surface through
//! [`Transport::poll`]. Time is the transport's own: virtual for the
//! simulator, the UNIX epoch for raw sockets.

#[cfg(feature = "icmp")]
mod icmp;
pub mod icmp_wire;
mod sim;

use std::net::Ipv4Addr;

#[cfg(feature = "icmp")]
pub use icmp::IcmpTransport;
pub use sim::{FaultPlan, SimTransport};

use crate::error::TransportError;
use crate::model::{ReplyKind, Seconds};

/// Default global send-rate cap, probes per second.
pub const DEFAULT_RATE_CAP: f64 = 200.0;

/// Handle on one emitted probe.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeToken {
    /// Unique per transport instance, increasing in send order.
    pub id: u64,
    pub destination: Ipv4Addr,
    pub ttl: u8,
    pub sent_at: Seconds,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransportReply {
    pub token: ProbeToken,
    pub source: Ipv4Addr,
    pub kind: ReplyKind,
    pub received_at: Seconds,
    /// The caller had already expired the token when this arrived.
    pub late: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TransportCounters {
    pub sent: u64,
    pub delivered: u64,
    pub late: u64,
    /// Wire answers that matched no issued token, or one already answered.
    pub dropped: u64,
}

pub trait Transport {
    fn now(&self) -> Seconds;

    /// Lets time pass until `t` without collecting replies.
    fn wait_until(&mut self, t: Seconds);

    fn send(&mut self, destination: Ipv4Addr, ttl: u8) -> Result<ProbeToken, TransportError>;

    /// Returns the replies that arrived up to the first arrival or
    /// `deadline`, whichever comes first. A deadline in the past only
    /// collects what already arrived.
    fn poll(&mut self, deadline: Seconds) -> Result<Vec<TransportReply>, TransportError>;

    /// Marks a token as given up on; a later reply to it is flagged late.
    fn expire(&mut self, token: &ProbeToken);

    fn counters(&self) -> TransportCounters;

    fn close(&mut self);

    /// Address of the measuring host, used as the tree root.
    fn local_address(&self) -> Ipv4Addr;

    /// Called once before each measurement round.
    fn begin_round(&mut self, _round: u64) {}
}

/// Parses a transport specification of the form `sim:FILE`,
/// `sim:builtin:NAME` or `icmp`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TransportSpec {
    SimFile(String),
    SimBuiltin(String),
    Icmp,
}

impl std::str::FromStr for TransportSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "icmp" {
            return Ok(TransportSpec::Icmp);
        }
        match s.strip_prefix("sim:") {
            Some(rest) => match rest.strip_prefix("builtin:") {
                Some(name) if !name.is_empty() => Ok(TransportSpec::SimBuiltin(name.into())),
                Some(_) => Err("missing builtin scenario name".into()),
                None if !rest.is_empty() => Ok(TransportSpec::SimFile(rest.into())),
                None => Err("missing topology file after `sim:`".into()),
            },
            None => Err(format!(
                "unknown transport `{s}` (expected sim:FILE, sim:builtin:NAME or icmp)"
            )),
        }
    }
}
