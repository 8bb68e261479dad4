use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::net::Ipv4Addr;

use crate::error::TransportError;
use crate::model::{ReplyKind, Seconds};
use crate::simnet::{SimReply, Simulator};

use super::{ProbeToken, Transport, TransportCounters, TransportReply, DEFAULT_RATE_CAP};

/// Scripted transport failures, for exercising abort paths.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FaultPlan {
    /// The n-th call to `send` (counting from 1, across rounds) fails once.
    pub fail_send: Vec<u64>,
}

#[derive(Debug, Clone, Copy)]
struct Pending {
    arrival: Seconds,
    id: u64,
    source: Ipv4Addr,
    kind: ReplyKind,
}

impl PartialEq for Pending {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Pending {}

impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Pending {
    // min-heap on (arrival, id)
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .arrival
            .total_cmp(&self.arrival)
            .then_with(|| other.id.cmp(&self.id))
    }
}

/// Transport backed by [`Simulator`] on a virtual clock starting at 0.
///
/// Pending events are applied at each send time; a reply is the simulator's
/// answer delayed by its round-trip time.
#[derive(Debug, Clone)]
pub struct SimTransport {
    sim: Simulator,
    clock: Seconds,
    pending: BinaryHeap<Pending>,
    issued: HashMap<u64, (ProbeToken, bool)>,
    next_id: u64,
    send_calls: u64,
    rate_cap: Option<f64>,
    last_send: Option<Seconds>,
    closed: bool,
    counters: TransportCounters,
    faults: FaultPlan,
}

impl SimTransport {
    pub fn new(sim: Simulator) -> Self {
        SimTransport {
            sim,
            clock: 0.0,
            pending: BinaryHeap::new(),
            issued: HashMap::new(),
            next_id: 0,
            send_calls: 0,
            rate_cap: Some(DEFAULT_RATE_CAP),
            last_send: None,
            closed: false,
            counters: TransportCounters::default(),
            faults: FaultPlan::default(),
        }
    }

    /// `None` disables the cap.
    pub fn with_rate_cap(mut self, cap: Option<f64>) -> Self {
        self.rate_cap = cap.filter(|c| *c > 0.0);
        self
    }

    pub fn with_faults(mut self, faults: FaultPlan) -> Self {
        self.faults = faults;
        self
    }

    pub fn simulator(&self) -> &Simulator {
        &self.sim
    }
}

impl Transport for SimTransport {
    fn now(&self) -> Seconds {
        self.clock
    }

    fn wait_until(&mut self, t: Seconds) {
        self.clock = self.clock.max(t);
    }

    fn send(&mut self, destination: Ipv4Addr, ttl: u8) -> Result<ProbeToken, TransportError> {
        if self.closed {
            return Err(TransportError::Closed);
        }
        if let (Some(cap), Some(last)) = (self.rate_cap, self.last_send) {
            let earliest = last + 1.0 / cap;
            // tolerate float noise from callers pacing at exactly the cap
            if self.clock + 1e-9 < earliest {
                return Err(TransportError::Backpressure { retry_at: earliest });
            }
        }
        self.send_calls += 1;
        if self.faults.fail_send.contains(&self.send_calls) {
            return Err(TransportError::Fault(format!(
                "injected failure on send #{}",
                self.send_calls
            )));
        }
        let reply = self
            .sim
            .probe(destination, ttl, self.clock)
            .map_err(|e| TransportError::Fault(e.to_string()))?;
        let token = ProbeToken {
            id: self.next_id,
            destination,
            ttl,
            sent_at: self.clock,
        };
        self.next_id += 1;
        self.last_send = Some(self.clock);
        self.counters.sent += 1;
        self.issued.insert(token.id, (token, false));
        if let SimReply::Answer { kind, source, rtt } = reply {
            self.pending.push(Pending {
                arrival: self.clock + rtt,
                id: token.id,
                source,
                kind,
            });
        }
        Ok(token)
    }

    fn poll(&mut self, deadline: Seconds) -> Result<Vec<TransportReply>, TransportError> {
        if self.closed {
            return Err(TransportError::Closed);
        }
        match self.pending.peek() {
            Some(p) if p.arrival <= deadline.max(self.clock) => {
                self.clock = self.clock.max(p.arrival);
            }
            _ => {
                self.clock = self.clock.max(deadline);
                return Ok(Vec::new());
            }
        }
        let mut out = Vec::new();
        while let Some(p) = self.pending.peek() {
            if p.arrival > self.clock {
                break;
            }
            let p = self.pending.pop().expect("peeked");
            let Some((token, expired)) = self.issued.remove(&p.id) else {
                self.counters.dropped += 1;
                continue;
            };
            self.counters.delivered += 1;
            if expired {
                self.counters.late += 1;
            }
            out.push(TransportReply {
                token,
                source: p.source,
                kind: p.kind,
                received_at: p.arrival,
                late: expired,
            });
        }
        Ok(out)
    }

    fn expire(&mut self, token: &ProbeToken) {
        if let Some(entry) = self.issued.get_mut(&token.id) {
            entry.1 = true;
        }
    }

    fn counters(&self) -> TransportCounters {
        self.counters
    }

    fn close(&mut self) {
        self.closed = true;
    }

    fn local_address(&self) -> Ipv4Addr {
        self.sim.topology().monitor_address()
    }

    fn begin_round(&mut self, _round: u64) {
        // Tokens never answered would otherwise accumulate across rounds.
        let pending: std::collections::HashSet<u64> = self.pending.iter().map(|p| p.id).collect();
        self.issued.retain(|id, _| pending.contains(id));
    }
}
