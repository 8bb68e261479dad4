//! ICMP echo encoding and reply parsing.
//!
//! A probe is tagged through its echo header: the identifier carries a
//! 10-bit round nonce and `ttl - 1` in its low 6 bits, the sequence number
//! carries the destination index. Time-exceeded and unreachable messages
//! quote the original IP header and the first 8 bytes of the echo request,
//! which is enough to recover the tag.

use std::net::Ipv4Addr;

use crate::model::ReplyKind;

pub const ECHO_REPLY: u8 = 0;
pub const DEST_UNREACHABLE: u8 = 3;
pub const ECHO_REQUEST: u8 = 8;
pub const TIME_EXCEEDED: u8 = 11;

/// Fields identifying one probe.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProbeTag {
    pub nonce: u16,
    pub ttl: u8,
    pub dest_index: u16,
}

impl ProbeTag {
    pub const NONCE_BITS: u32 = 10;

    /// `ttl` must lie in `[1, 64]`; the nonce is truncated to 10 bits.
    pub fn identifier(&self) -> u16 {
        ((self.nonce & 0x3ff) << 6) | (u16::from(self.ttl - 1) & 0x3f)
    }

    pub fn sequence(&self) -> u16 {
        self.dest_index
    }

    pub fn decode(identifier: u16, sequence: u16) -> Self {
        ProbeTag {
            nonce: identifier >> 6,
            ttl: (identifier & 0x3f) as u8 + 1,
            dest_index: sequence,
        }
    }
}

/// Internet checksum (RFC 1071).
pub fn checksum(data: &[u8]) -> u16 {
    let mut sum: u32 = 0;
    let mut chunks = data.chunks_exact(2);
    for c in &mut chunks {
        sum += u32::from(u16::from_be_bytes([c[0], c[1]]));
    }
    if let [last] = chunks.remainder() {
        sum += u32::from(*last) << 8;
    }
    while sum >> 16 != 0 {
        sum = (sum & 0xffff) + (sum >> 16);
    }
    !(sum as u16)
}

/// Echo request with the tag in its header.
pub fn echo_request(tag: ProbeTag, payload: &[u8]) -> Vec<u8> {
    let mut p = Vec::with_capacity(8 + payload.len());
    p.extend_from_slice(&[ECHO_REQUEST, 0, 0, 0]);
    p.extend_from_slice(&tag.identifier().to_be_bytes());
    p.extend_from_slice(&tag.sequence().to_be_bytes());
    p.extend_from_slice(payload);
    let c = checksum(&p);
    p[2..4].copy_from_slice(&c.to_be_bytes());
    p
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WireReply {
    pub source: Ipv4Addr,
    pub kind: ReplyKind,
    pub tag: ProbeTag,
    /// Destination of the original probe, when quoted.
    pub quoted_destination: Option<Ipv4Addr>,
}

fn ip_header(packet: &[u8]) -> Option<(usize, Ipv4Addr, Ipv4Addr, u8)> {
    let first = *packet.first()?;
    if first >> 4 != 4 {
        return None;
    }
    let ihl = usize::from(first & 0x0f) * 4;
    if ihl < 20 || packet.len() < ihl {
        return None;
    }
    let src = Ipv4Addr::new(packet[12], packet[13], packet[14], packet[15]);
    let dst = Ipv4Addr::new(packet[16], packet[17], packet[18], packet[19]);
    Some((ihl, src, dst, packet[9]))
}

/// Parses a received IPv4 datagram carrying ICMP. Returns `None` for
/// anything that is not an answer to one of our echo probes.
pub fn parse_reply(packet: &[u8]) -> Option<WireReply> {
    let (ihl, source, _, proto) = ip_header(packet)?;
    if proto != 1 {
        return None;
    }
    let icmp = &packet[ihl..];
    if icmp.len() < 8 || checksum(icmp) != 0 {
        return None;
    }
    match icmp[0] {
        ECHO_REPLY => Some(WireReply {
            source,
            kind: ReplyKind::EchoReply,
            tag: ProbeTag::decode(
                u16::from_be_bytes([icmp[4], icmp[5]]),
                u16::from_be_bytes([icmp[6], icmp[7]]),
            ),
            quoted_destination: None,
        }),
        t @ (TIME_EXCEEDED | DEST_UNREACHABLE) => {
            let quoted = &icmp[8..];
            let (qihl, _, qdst, qproto) = ip_header(quoted)?;
            let inner = quoted.get(qihl..qihl + 8)?;
            if qproto != 1 || inner[0] != ECHO_REQUEST {
                return None;
            }
            Some(WireReply {
                source,
                kind: if t == TIME_EXCEEDED {
                    ReplyKind::TimeExceeded
                } else {
                    ReplyKind::Unreachable
                },
                tag: ProbeTag::decode(
                    u16::from_be_bytes([inner[4], inner[5]]),
                    u16::from_be_bytes([inner[6], inner[7]]),
                ),
                quoted_destination: Some(qdst),
            })
        }
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ipv4(src: Ipv4Addr, dst: Ipv4Addr, proto: u8, payload: &[u8]) -> Vec<u8> {
        let mut h = vec![0x45, 0, 0, 0, 0, 0, 0, 0, 64, proto, 0, 0];
        h.extend_from_slice(&src.octets());
        h.extend_from_slice(&dst.octets());
        let len = (h.len() + payload.len()) as u16;
        h[2..4].copy_from_slice(&len.to_be_bytes());
        let c = checksum(&h);
        h[10..12].copy_from_slice(&c.to_be_bytes());
        h.extend_from_slice(payload);
        h
    }

    fn icmp(kind: u8, body: &[u8]) -> Vec<u8> {
        let mut p = vec![kind, 0, 0, 0, 0, 0, 0, 0];
        p.extend_from_slice(body);
        let c = checksum(&p);
        p[2..4].copy_from_slice(&c.to_be_bytes());
        p
    }

    #[test]
    fn checksum_reference_vector() {
        // RFC 1071 section 3 example
        let data = [0x00, 0x01, 0xf2, 0x03, 0xf4, 0xf5, 0xf6, 0xf7];
        assert_eq!(checksum(&data), !0xddf2);
        let req = echo_request(ProbeTag { nonce: 1, ttl: 1, dest_index: 0 }, b"abc");
        assert_eq!(checksum(&req), 0);
    }

    #[test]
    fn time_exceeded_quote() {
        let me: Ipv4Addr = "192.0.2.1".parse().unwrap();
        let dst: Ipv4Addr = "198.51.100.7".parse().unwrap();
        let router: Ipv4Addr = "203.0.113.9".parse().unwrap();
        let tag = ProbeTag { nonce: 77, ttl: 5, dest_index: 4242 };
        let probe = ipv4(me, dst, 1, &echo_request(tag, &[0; 16]));
        let msg = ipv4(router, me, 1, &icmp(TIME_EXCEEDED, &probe[..28]));
        let r = parse_reply(&msg).unwrap();
        assert_eq!(r.source, router);
        assert_eq!(r.kind, ReplyKind::TimeExceeded);
        assert_eq!(r.tag, tag);
        assert_eq!(r.quoted_destination, Some(dst));
    }

    #[test]
    fn echo_reply_and_garbage() {
        let me: Ipv4Addr = "192.0.2.1".parse().unwrap();
        let dst: Ipv4Addr = "198.51.100.7".parse().unwrap();
        let tag = ProbeTag { nonce: 3, ttl: 64, dest_index: 1 };
        let mut body = echo_request(tag, b"x");
        body[0] = ECHO_REPLY;
        body[2] = 0;
        body[3] = 0;
        let c = checksum(&body);
        body[2..4].copy_from_slice(&c.to_be_bytes());
        let r = parse_reply(&ipv4(dst, me, 1, &body)).unwrap();
        assert_eq!((r.kind, r.tag, r.source), (ReplyKind::EchoReply, tag, dst));

        assert!(parse_reply(&[]).is_none());
        assert!(parse_reply(&ipv4(dst, me, 17, &body)).is_none());
        let mut corrupt = ipv4(dst, me, 1, &body);
        let last = corrupt.len() - 1;
        corrupt[last] ^= 0xff;
        assert!(parse_reply(&corrupt).is_none());
    }

    proptest! {
        #[test]
        fn tag_round_trip(nonce in 0u16..1024, ttl in 1u8..=64, idx: u16) {
            let t = ProbeTag { nonce, ttl, dest_index: idx };
            prop_assert_eq!(ProbeTag::decode(t.identifier(), t.sequence()), t);
        }
    }
}
