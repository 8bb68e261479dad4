use std::collections::HashMap;
use std::io::{self, Read};
use std::net::{Ipv4Addr, SocketAddrV4, UdpSocket};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use socket2::{Domain, Protocol, SockAddr, Socket, Type};

use crate::error::TransportError;
use crate::model::Seconds;

use super::icmp_wire::{echo_request, parse_reply, ProbeTag};
use super::{ProbeToken, Transport, TransportCounters, TransportReply, DEFAULT_RATE_CAP};

const PAYLOAD: &[u8] = b"egoradar-probe00";

enum Received {
    Reply(TransportReply),
    /// Something arrived that is not an answer to a live probe.
    Ignored,
    Nothing,
}

/// Raw-socket ICMP echo transport. Needs CAP_NET_RAW.
pub struct IcmpTransport {
    socket: Socket,
    local: Ipv4Addr,
    nonce: u16,
    dest_index: HashMap<Ipv4Addr, u16>,
    in_flight: HashMap<(u16, u8), (ProbeToken, bool)>,
    next_id: u64,
    rate_cap: Option<f64>,
    last_send: Option<Seconds>,
    closed: bool,
    counters: TransportCounters,
}

fn wall_clock() -> Seconds {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

fn guess_local_address() -> io::Result<Ipv4Addr> {
    // connect() on UDP only selects a route; nothing is sent
    let s = UdpSocket::bind("0.0.0.0:0")?;
    s.connect("192.0.2.1:9")?;
    match s.local_addr()?.ip() {
        std::net::IpAddr::V4(a) => Ok(a),
        std::net::IpAddr::V6(_) => Err(io::Error::other("no IPv4 route")),
    }
}

impl IcmpTransport {
    pub fn open(local: Option<Ipv4Addr>) -> io::Result<Self> {
        let socket = Socket::new(Domain::IPV4, Type::RAW, Some(Protocol::ICMPV4))?;
        let local = match local {
            Some(a) => a,
            None => guess_local_address()?,
        };
        Ok(IcmpTransport {
            socket,
            local,
            nonce: 0,
            dest_index: HashMap::new(),
            in_flight: HashMap::new(),
            next_id: 0,
            rate_cap: Some(DEFAULT_RATE_CAP),
            last_send: None,
            closed: false,
            counters: TransportCounters::default(),
        })
    }

    pub fn with_rate_cap(mut self, cap: Option<f64>) -> Self {
        self.rate_cap = cap.filter(|c| *c > 0.0);
        self
    }

    fn index_of(&mut self, d: Ipv4Addr) -> Result<u16, TransportError> {
        if let Some(i) = self.dest_index.get(&d) {
            return Ok(*i);
        }
        let i = u16::try_from(self.dest_index.len())
            .map_err(|_| TransportError::Fault("more than 65536 destinations".into()))?;
        self.dest_index.insert(d, i);
        Ok(i)
    }

    fn receive_one(&mut self, timeout: Option<Duration>) -> io::Result<Received> {
        match timeout {
            Some(t) => {
                self.socket.set_nonblocking(false)?;
                self.socket.set_read_timeout(Some(t.max(Duration::from_micros(100))))?;
            }
            None => self.socket.set_nonblocking(true)?,
        }
        let mut buf = [0u8; 1500];
        let n = match (&self.socket).read(&mut buf) {
            Ok(n) => n,
            Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {
                return Ok(Received::Nothing)
            }
            Err(e) => return Err(e),
        };
        let received_at = wall_clock();
        let Some(w) = parse_reply(&buf[..n]) else {
            return Ok(Received::Ignored);
        };
        if w.tag.nonce != self.nonce & 0x3ff {
            self.counters.dropped += 1;
            return Ok(Received::Ignored);
        }
        match self.in_flight.remove(&(w.tag.dest_index, w.tag.ttl)) {
            Some((token, expired)) => {
                self.counters.delivered += 1;
                if expired {
                    self.counters.late += 1;
                }
                Ok(Received::Reply(TransportReply {
                    token,
                    source: w.source,
                    kind: w.kind,
                    received_at,
                    late: expired,
                }))
            }
            None => {
                self.counters.dropped += 1;
                Ok(Received::Ignored)
            }
        }
    }
}

impl Transport for IcmpTransport {
    fn now(&self) -> Seconds {
        wall_clock()
    }

    fn wait_until(&mut self, t: Seconds) {
        let dt = t - wall_clock();
        if dt > 0.0 {
            std::thread::sleep(Duration::from_secs_f64(dt));
        }
    }

    fn send(&mut self, destination: Ipv4Addr, ttl: u8) -> Result<ProbeToken, TransportError> {
        if self.closed {
            return Err(TransportError::Closed);
        }
        let now = wall_clock();
        if let (Some(cap), Some(last)) = (self.rate_cap, self.last_send) {
            let earliest = last + 1.0 / cap;
            if now < earliest {
                return Err(TransportError::Backpressure { retry_at: earliest });
            }
        }
        let idx = self.index_of(destination)?;
        let tag = ProbeTag {
            nonce: self.nonce,
            ttl,
            dest_index: idx,
        };
        let fault = |e: io::Error| TransportError::Fault(e.to_string());
        self.socket.set_ttl_v4(u32::from(ttl)).map_err(fault)?;
        let addr = SockAddr::from(SocketAddrV4::new(destination, 0));
        self.socket
            .send_to(&echo_request(tag, PAYLOAD), &addr)
            .map_err(fault)?;
        let token = ProbeToken {
            id: self.next_id,
            destination,
            ttl,
            sent_at: now,
        };
        self.next_id += 1;
        self.last_send = Some(now);
        self.counters.sent += 1;
        self.in_flight.insert((idx, ttl), (token, false));
        Ok(token)
    }

    fn poll(&mut self, deadline: Seconds) -> Result<Vec<TransportReply>, TransportError> {
        if self.closed {
            return Err(TransportError::Closed);
        }
        let fault = |e: io::Error| TransportError::Fault(e.to_string());
        let mut out = Vec::new();
        loop {
            let remaining = deadline - wall_clock();
            let timeout = (out.is_empty() && remaining > 0.0)
                .then(|| Duration::from_secs_f64(remaining));
            match self.receive_one(timeout).map_err(fault)? {
                Received::Reply(r) => out.push(r),
                Received::Ignored => continue,
                Received::Nothing if timeout.is_some() && wall_clock() < deadline => continue,
                Received::Nothing => break,
            }
        }
        Ok(out)
    }

    fn expire(&mut self, token: &ProbeToken) {
        if let Some(i) = self.dest_index.get(&token.destination) {
            if let Some(entry) = self.in_flight.get_mut(&(*i, token.ttl)) {
                entry.1 = true;
            }
        }
    }

    fn counters(&self) -> TransportCounters {
        self.counters
    }

    fn close(&mut self) {
        self.closed = true;
    }

    fn local_address(&self) -> Ipv4Addr {
        self.local
    }

    fn begin_round(&mut self, round: u64) {
        self.nonce = (round & 0x3ff) as u16;
        self.in_flight.clear();
    }
}
