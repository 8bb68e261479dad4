//! Topology generators and small helpers shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::net::Ipv4Addr;

use egoradar::baseline::{traceroute_round, TracerouteConfig};
use egoradar::model::{FilteredTree, Hop, ProbeRecord, RadarDataset, RawTraceTree, RoundMeta, RoundRecord, TreeHop};
use egoradar::simnet::{Simulator, TopologyBuilder, TopologySpec};
use egoradar::tracetree::DestinationTask;
use egoradar::transport::SimTransport;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const MONITOR: Ipv4Addr = Ipv4Addr::new(10, 0, 0, 1);

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Address number `n` in 11.0.0.0/8.
pub fn addr(n: u32) -> Ipv4Addr {
    Ipv4Addr::from(0x0b00_0000 + n)
}

pub fn transport(spec: &TopologySpec) -> SimTransport {
    SimTransport::new(Simulator::from_spec(spec).expect("valid topology"))
}

/// `dests` disjoint chains of `hops` nodes each, the last node of every
/// chain being its destination.
pub fn disjoint_chains(dests: u32, hops: u32) -> TopologySpec {
    let mut b = TopologyBuilder::new("m", MONITOR);
    for d in 0..dests {
        let mut prev = "m".to_string();
        for h in 0..hops {
            let id = format!("n{d}_{h}");
            let a = addr(d * hops + h + 1);
            b = b.node(&id, a).link(&prev, &id);
            prev = id;
        }
        b = b.destination(addr(d * hops + hops));
    }
    b.build()
}

/// Complete `k`-ary tree of the given depth under the monitor; leaves are
/// the destinations.
pub fn kary_tree(k: u32, depth: u32) -> TopologySpec {
    let mut b = TopologyBuilder::new("m", MONITOR);
    let mut level = vec!["m".to_string()];
    let mut next_addr = 1;
    for _ in 0..depth {
        let mut next = Vec::new();
        for parent in &level {
            for _ in 0..k {
                let id = format!("t{next_addr}");
                b = b.node(&id, addr(next_addr)).link(parent, &id);
                next.push(id);
                next_addr += 1;
            }
        }
        level = next;
    }
    let first_leaf = next_addr - level.len() as u32;
    b.destinations((first_leaf..next_addr).map(addr)).build()
}

/// Random tree of `n` routers with `dests` random destinations among them
/// and a few silent routers. Only tree links, so routing is unique.
pub fn random_tree(seed: u64, n: u32, dests: usize, silent: usize) -> TopologySpec {
    let mut r = rng(seed);
    let mut b = TopologyBuilder::new("m", MONITOR);
    let mut ids = vec!["m".to_string()];
    for i in 1..=n {
        let parent = ids[r.random_range(0..ids.len())].clone();
        let id = format!("r{i}");
        b = b.node(&id, addr(i)).link(parent, &id);
        ids.push(id);
    }
    let all: Vec<u32> = (1..=n).collect();
    let chosen: Vec<u32> = all.choose_multiple(&mut r, dests.min(n as usize)).copied().collect();
    for i in all.choose_multiple(&mut r, silent) {
        if !chosen.contains(i) {
            b = b.silent(&format!("r{i}"));
        }
    }
    b.destinations(chosen.into_iter().map(addr)).build()
}

/// Distance of every destination, learned from one traceroute round.
pub fn true_distances(spec: &TopologySpec) -> BTreeMap<Ipv4Addr, u8> {
    let mut t = transport(spec);
    let round = traceroute_round(&spec.destinations, &mut t, &TracerouteConfig::default()).unwrap();
    round
        .routes
        .iter()
        .filter_map(|(d, route)| {
            let (h, ttl) = route.last()?;
            (*h == Hop::Ip(*d)).then_some((*d, *ttl))
        })
        .collect()
}

pub fn exact_tasks(spec: &TopologySpec) -> Vec<DestinationTask> {
    let dist = true_distances(spec);
    spec.destinations
        .iter()
        .map(|d| DestinationTask::new(*d, dist.get(d).copied().unwrap_or(30)))
        .collect()
}

/// Random raw records over a small address pool: shared chains, stars,
/// repeated addresses (loops) and destinations that never answer.
pub fn random_raw_tree(r: &mut impl Rng, max_dests: usize, max_ttl: u8) -> RawTraceTree {
    let pool: Vec<Ipv4Addr> = (1..=r.random_range(2..40)).map(addr).collect();
    let n = r.random_range(1..=max_dests);
    let mut records = Vec::new();
    for i in 0..n {
        let d = Ipv4Addr::new(12, 0, 0, i as u8 + 1);
        let top = r.random_range(1..=max_ttl);
        let reached = r.random_bool(0.6);
        for ttl in (1..=top).rev() {
            let hop = if ttl == top && reached {
                Hop::Ip(d)
            } else if r.random_bool(0.15) {
                Hop::Star
            } else if r.random_bool(0.05) {
                Hop::Ip(MONITOR)
            } else {
                Hop::Ip(*pool.choose(r).unwrap())
            };
            records.push(ProbeRecord::new(hop, ttl, d));
            if r.random_bool(0.1) {
                break;
            }
        }
    }
    RawTraceTree::from_records(records).expect("one record per (destination, ttl)")
}

/// A filtered tree with the given root-to-leaf address chains.
pub fn tree_of(chains: &[Vec<Ipv4Addr>]) -> FilteredTree {
    let mut tree = FilteredTree::empty(MONITOR);
    for chain in chains {
        let mut prev = tree.root.clone();
        for a in chain {
            let n = TreeHop::Ip(*a);
            tree.nodes.insert(n.clone());
            tree.edges.insert((prev, n.clone()));
            prev = n;
        }
    }
    tree.degenerate = tree.nodes.len() == 1;
    tree
}

pub fn dataset_of(trees: Vec<FilteredTree>) -> RadarDataset {
    let mut ds = RadarDataset::new("test", MONITOR);
    for (i, tree) in trees.into_iter().enumerate() {
        ds.push(RoundRecord {
            meta: RoundMeta::new(i as u64, i as f64 * 600.0, i as f64 * 600.0 + 1.0),
            probes_sent: 0,
            tree,
            raw: None,
        })
        .unwrap();
    }
    ds
}

/// Random dataset over at most `max_addrs` addresses: every round is a
/// random forest of chains.
pub fn random_dataset(r: &mut impl Rng, rounds: usize, max_addrs: u32) -> RadarDataset {
    let pool: Vec<Ipv4Addr> = (1..=max_addrs).map(addr).collect();
    let mut trees = Vec::new();
    for _ in 0..rounds {
        let mut chains = Vec::new();
        let mut used = BTreeSet::new();
        for _ in 0..r.random_range(1..6) {
            let mut chain = Vec::new();
            for _ in 0..r.random_range(1..6) {
                let a = *pool.choose(r).unwrap();
                if used.insert(a) {
                    chain.push(a);
                }
            }
            chains.push(chain);
        }
        trees.push(tree_of(&chains));
    }
    dataset_of(trees)
}
