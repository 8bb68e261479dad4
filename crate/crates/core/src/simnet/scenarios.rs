//! Built-in topologies and event scripts.
//!
//! Events meant to take effect at round `r` are scheduled one second before
//! that round starts, i.e. at `r * inter_round_delay - 1`.

use std::net::Ipv4Addr;

use crate::model::Seconds;

use super::spec::{ActionSpec, LinkSpec, NodeSpec, ResponsePolicy, TopologyBuilder, TopologySpec};

pub const DEFAULT_INTER_ROUND: Seconds = 600.0;

/// A topology bundled with the radar schedule it was written for.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub spec: TopologySpec,
    pub rounds: u64,
    pub inter_round_delay: Seconds,
}

impl Scenario {
    fn new(name: &str, spec: TopologySpec, rounds: u64) -> Self {
        Scenario {
            name: name.into(),
            spec,
            rounds,
            inter_round_delay: DEFAULT_INTER_ROUND,
        }
    }
}

pub const BUILTIN: &[&str] = &[
    "chain",
    "fig1",
    "star",
    "shared-prefix",
    "island",
    "island-census",
    "oscillation",
    "connectivity-cut",
    "ratelimit",
    "ratelimit-off",
    "shorten",
    "lengthen",
    "rewire",
];

pub fn builtin(name: &str) -> Option<Scenario> {
    Some(match name {
        "chain" => chain(),
        "fig1" => fig1_analog(),
        "star" => star(100),
        "shared-prefix" => shared_prefix(),
        "island" => island(104, &[], 110),
        "island-census" => island(22, &[21, 24, 26, 28], 30),
        "oscillation" => oscillation(60, 4, 120),
        "connectivity-cut" => connectivity_cut(10, 20),
        "ratelimit" => ratelimit_groups(10, 10, true),
        "ratelimit-off" => ratelimit_groups(10, 10, false),
        "shorten" => route_change(false, 2, 4),
        "lengthen" => route_change(true, 2, 4),
        "rewire" => rewire(100, 102),
        _ => return None,
    })
}

fn at_round(r: u64) -> Seconds {
    r as f64 * DEFAULT_INTER_ROUND - 1.0
}

fn a(x: u8, y: u8, z: u8, w: u8) -> Ipv4Addr {
    Ipv4Addr::new(x, y, z, w)
}

fn monitor() -> TopologyBuilder {
    TopologyBuilder::new("m", a(10, 0, 0, 1))
}

/// `m -> r1 -> r2 -> d`.
pub fn chain() -> Scenario {
    let spec = monitor()
        .node("r1", a(10, 0, 0, 2))
        .node("r2", a(10, 0, 0, 3))
        .node("d", a(10, 0, 0, 4))
        .path(&["m", "r1", "r2", "d"])
        .destination(a(10, 0, 0, 4))
        .build();
    Scenario::new("chain", spec, 3)
}

/// Three destinations behind a per-destination balancer `b`, a per-packet
/// balancer `e` alternating between `i` and `h`, and a silent router `l`.
pub fn fig1_analog() -> Scenario {
    let (d1, d2, d3) = (a(10, 0, 9, 1), a(10, 0, 9, 2), a(10, 0, 9, 3));
    let spec = TopologyBuilder::new("a", a(10, 0, 0, 1))
        .node("b", a(10, 0, 1, 1))
        .node("c", a(10, 0, 2, 1))
        .node("e", a(10, 0, 3, 1))
        .node("g", a(10, 0, 4, 1))
        .node("i", a(10, 0, 5, 1))
        .node("h", a(10, 0, 6, 1))
        .node("j", a(10, 0, 7, 1))
        .node("k", a(10, 0, 8, 1))
        .node("l", a(10, 0, 8, 2))
        .node("d1", d1)
        .node("d2", d2)
        .node("d3", d3)
        .path(&["a", "b", "c", "g", "d1"])
        .path(&["b", "e", "i", "j", "l", "d2"])
        .path(&["e", "h", "j", "k", "d3"])
        .per_destination("b", &[(d1, "c"), (d2, "e"), (d3, "e")])
        .per_packet("e", &["i", "h"])
        .silent("l")
        .destinations([d1, d2, d3])
        .build();
    Scenario::new("fig1", spec, 3)
}

/// `m -> hub -> k leaves`, every leaf a destination.
pub fn star(k: usize) -> Scenario {
    let mut b = monitor().node("hub", a(10, 0, 0, 2)).link("m", "hub");
    for i in 0..k {
        let id = format!("leaf{i}");
        let addr = a(10, 1, (i / 250) as u8, (i % 250 + 1) as u8);
        b = b.node(&id, addr).link("hub", id).destination(addr);
    }
    Scenario::new("star", b.build(), 2)
}

/// Two destinations sharing `m -> r1 -> r`, with `r` at distance 2.
pub fn shared_prefix() -> Scenario {
    let spec = monitor()
        .node("r1", a(10, 0, 0, 2))
        .node("r", a(10, 0, 0, 3))
        .node("d1", a(10, 0, 1, 1))
        .node("d2", a(10, 0, 1, 2))
        .path(&["m", "r1", "r", "d1"])
        .link("r", "d2")
        .destinations([a(10, 0, 1, 1), a(10, 0, 1, 2)])
        .build();
    Scenario::new("shared-prefix", spec, 2)
}

/// Core `m -> c1 -> c2..c5 -> d2..d5`. A nine-node island is grafted under
/// `c1`: five nodes at round `island_round`, the four others (attached to
/// the first five) one round later. Each round listed in `renumber_rounds`
/// renumbers one of `c2..c5`. Island nodes are destinations from the start.
pub fn island(island_round: u64, renumber_rounds: &[u64], rounds: u64) -> Scenario {
    let mut b = monitor().node("c1", a(10, 0, 0, 2)).link("m", "c1");
    for i in 2..=5u8 {
        let (c, d) = (format!("c{i}"), format!("d{i}"));
        b = b
            .node(&c, a(10, 0, 1, i))
            .node(&d, a(10, 0, 2, i))
            .path(&["c1", &c, &d])
            .destination(a(10, 0, 2, i));
    }
    let node = |id: String, addr| NodeSpec {
        id,
        address: addr,
        policy: ResponsePolicy::Responsive,
    };
    let part_a: Vec<NodeSpec> = (1..=5).map(|i| node(format!("a{i}"), a(10, 5, 0, i))).collect();
    let part_b: Vec<NodeSpec> = (1..=4).map(|i| node(format!("b{i}"), a(10, 5, 1, i))).collect();
    let links_a = [("c1", "a1"), ("a1", "a2"), ("a1", "a3"), ("a2", "a4"), ("a3", "a5")];
    let links_b = [("a4", "b1"), ("a5", "b2"), ("b1", "b3"), ("b2", "b4")];
    b = b.destinations(part_a.iter().chain(&part_b).map(|n| n.address));

    let mut events: Vec<(u64, ActionSpec)> = vec![
        (
            island_round,
            ActionSpec::AddIsland {
                nodes: part_a,
                links: links_a.iter().map(|(x, y)| LinkSpec::new(*x, *y)).collect(),
            },
        ),
        (
            island_round + 1,
            ActionSpec::AddIsland {
                nodes: part_b,
                links: links_b.iter().map(|(x, y)| LinkSpec::new(*x, *y)).collect(),
            },
        ),
    ];
    for (k, r) in renumber_rounds.iter().enumerate().take(4) {
        let i = k as u8 + 2;
        events.push((
            *r,
            ActionSpec::Renumber {
                node: format!("c{i}"),
                address: a(10, 0, 3, i),
            },
        ));
    }
    events.sort_by_key(|(r, _)| *r);
    for (r, e) in events {
        b = b.event(at_round(r), e);
    }
    Scenario::new("island", b.build(), rounds)
}

/// Router `p` reaches `q` through `x1..x3` or the equally long `y1..y3`.
/// Starting at round `burst_start`, the route flips to the `y` branch on
/// every other round, `flips` times in total, then stays on `x`.
pub fn oscillation(burst_start: u64, flips: u64, rounds: u64) -> Scenario {
    let mut b = monitor()
        .node("r1", a(10, 0, 0, 2))
        .node("p", a(10, 0, 0, 3))
        .node("q", a(10, 0, 0, 4))
        .link("m", "r1")
        .link("r1", "p");
    for i in 1..=3u8 {
        b = b
            .node(format!("x{i}"), a(10, 0, 1, i))
            .node(format!("y{i}"), a(10, 0, 2, i));
    }
    b = b.path(&["p", "x1", "x2", "x3", "q"]).path(&["p", "y1", "y2", "y3", "q"]);
    for i in 1..=4u8 {
        let id = format!("d{i}");
        b = b.node(&id, a(10, 0, 9, i)).link("q", id).destination(a(10, 0, 9, i));
    }
    for k in 0..flips {
        let via = if k % 2 == 0 { Some("y1".to_string()) } else { None };
        b = b.event(
            at_round(burst_start + k),
            ActionSpec::RewireLink {
                node: "p".into(),
                via,
                destination: None,
            },
        );
    }
    if flips % 2 == 1 {
        b = b.event(
            at_round(burst_start + flips),
            ActionSpec::RewireLink {
                node: "p".into(),
                via: None,
                destination: None,
            },
        );
    }
    Scenario::new("oscillation", b.build(), rounds)
}

/// A small tree whose only uplink `m -> r1` is down during round `cut`.
pub fn connectivity_cut(cut: u64, rounds: u64) -> Scenario {
    let mut b = monitor()
        .node("r1", a(10, 0, 0, 2))
        .node("r2", a(10, 0, 0, 3))
        .node("r3", a(10, 0, 0, 4))
        .path(&["m", "r1", "r2"])
        .link("r1", "r3");
    for i in 1..=6u8 {
        let id = format!("d{i}");
        let parent = if i % 2 == 0 { "r2" } else { "r3" };
        b = b.node(&id, a(10, 0, 9, i)).link(parent, id).destination(a(10, 0, 9, i));
    }
    let link = || ("m".to_string(), "r1".to_string());
    b = b
        .event(at_round(cut), {
            let (from, to) = link();
            ActionSpec::LinkDown { from, to }
        })
        .event(at_round(cut + 1), {
            let (from, to) = link();
            ActionSpec::LinkUp { from, to }
        });
    Scenario::new("connectivity-cut", b.build(), rounds)
}

/// `groups` aggregation routers behind one core router, each serving
/// `per_group` destinations. With `limited`, every aggregator answers at
/// most 3 probes in a burst and refills at 0.5 per second.
pub fn ratelimit_groups(groups: u8, per_group: u8, limited: bool) -> Scenario {
    let mut b = monitor().node("core", a(10, 0, 0, 2)).link("m", "core");
    for g in 0..groups {
        let agg = format!("agg{g}");
        b = b.node(&agg, a(10, 1, g, 1)).link("core", &agg);
        if limited {
            b = b.rate_limited(&agg, 0.5, 3);
        }
        for j in 0..per_group {
            let id = format!("d{g}_{j}");
            let addr = a(10, 2, g, j + 1);
            b = b.node(&id, addr).link(&agg, id).destination(addr);
        }
    }
    let name = if limited { "ratelimit" } else { "ratelimit-off" };
    Scenario::new(name, b.build(), 1)
}

/// Destination `d` is 9 hops away through `a1..a8` or 12 hops away through
/// `a1, b1..b10`. At round `change`, the route switches from the short to
/// the long path (`lengthen`) or back.
pub fn route_change(lengthen: bool, change: u64, rounds: u64) -> Scenario {
    let d = a(10, 0, 9, 1);
    let mut b = monitor();
    for i in 1..=8u8 {
        b = b.node(format!("a{i}"), a(10, 0, 1, i));
    }
    for i in 1..=10u8 {
        b = b.node(format!("b{i}"), a(10, 0, 2, i));
    }
    b = b
        .node("d", d)
        .path(&["m", "a1", "a2", "a3", "a4", "a5", "a6", "a7", "a8", "d"])
        .path(&["a1", "b1", "b2", "b3", "b4", "b5", "b6", "b7", "b8", "b9", "b10", "d"])
        .destination(d);
    let via = if lengthen {
        Some("b1".to_string())
    } else {
        b = b.route("a1", None, "b1");
        None
    };
    b = b.event(
        at_round(change),
        ActionSpec::RewireLink {
            node: "a1".into(),
            via,
            destination: None,
        },
    );
    let name = if lengthen { "lengthen" } else { "shorten" };
    Scenario::new(name, b.build(), rounds)
}

/// `P -> A -> B -> Q` is replaced by the equally long `P -> N1 -> N2 -> Q`
/// from round `event` on.
pub fn rewire(event: u64, rounds: u64) -> Scenario {
    let spec = monitor()
        .node("r1", a(10, 0, 0, 2))
        .node("P", a(10, 0, 1, 1))
        .node("A", a(10, 0, 1, 2))
        .node("B", a(10, 0, 1, 3))
        .node("Q", a(10, 0, 1, 4))
        .node("N1", a(10, 0, 2, 1))
        .node("N2", a(10, 0, 2, 2))
        .node("d1", a(10, 0, 9, 1))
        .node("d2", a(10, 0, 9, 2))
        .node("s", a(10, 0, 3, 1))
        .node("d3", a(10, 0, 9, 3))
        .path(&["m", "r1", "P", "A", "B", "Q", "d1"])
        .path(&["P", "N1", "N2", "Q", "d2"])
        .path(&["r1", "s", "d3"])
        .destinations([a(10, 0, 9, 1), a(10, 0, 9, 2), a(10, 0, 9, 3)])
        .event(
            at_round(event),
            ActionSpec::RewireLink {
                node: "P".into(),
                via: Some("N1".into()),
                destination: None,
            },
        )
        .build();
    Scenario::new("rewire", spec, rounds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ReplyKind;
    use crate::simnet::Simulator;

    #[test]
    fn every_builtin_validates() {
        for name in BUILTIN {
            let sc = builtin(name).unwrap();
            Simulator::from_spec(&sc.spec).unwrap_or_else(|e| panic!("{name}: {e}"));
            let again = TopologySpec::from_toml(&sc.spec.to_toml()).unwrap();
            assert_eq!(again, sc.spec, "{name}");
        }
        assert!(builtin("nope").is_none());
    }

    #[test]
    fn fig1_features() {
        let sc = fig1_analog();
        let mut sim = Simulator::from_spec(&sc.spec).unwrap();
        let (d2, d3) = (a(10, 0, 9, 2), a(10, 0, 9, 3));
        // e alternates at ttl 3
        let x = sim.route_probe(d2, 3, 0.0).source();
        let y = sim.route_probe(d2, 3, 0.0).source();
        assert_ne!(x, y);
        // l is silent at ttl 5 on the way to d2
        assert_eq!(sim.route_probe(d2, 5, 0.0).source(), None);
        assert_eq!(sim.route_probe(d2, 6, 0.0).kind(), Some(ReplyKind::EchoReply));
        assert_eq!(sim.route_probe(d3, 6, 0.0).kind(), Some(ReplyKind::EchoReply));
        assert_eq!(sim.route_probe(a(10, 0, 9, 1), 4, 0.0).kind(), Some(ReplyKind::EchoReply));
    }

    #[test]
    fn route_change_distances() {
        let d = a(10, 0, 9, 1);
        for lengthen in [false, true] {
            let sc = route_change(lengthen, 2, 4);
            let mut sim = Simulator::from_spec(&sc.spec).unwrap();
            let dist = |sim: &mut Simulator, t| {
                (1..=30)
                    .find(|&ttl| sim.probe(d, ttl, t).unwrap().kind() == Some(ReplyKind::EchoReply))
                    .unwrap()
            };
            let (before, after) = if lengthen { (9, 12) } else { (12, 9) };
            assert_eq!(dist(&mut sim, 0.0), before);
            assert_eq!(dist(&mut sim, 2.0 * DEFAULT_INTER_ROUND), after);
        }
    }
}
