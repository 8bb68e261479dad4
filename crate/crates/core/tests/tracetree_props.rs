mod common;

use std::collections::{BTreeMap, BTreeSet};

use egoradar::model::Hop;
use egoradar::tracetree::{tracetree, DestinationTask, Strategy, TracetreeConfig};
use proptest::prelude::*;

use common::*;

fn config(send: Strategy, receive: Strategy) -> TracetreeConfig {
    TracetreeConfig {
        send_strategy: send,
        receive_strategy: receive,
        ..TracetreeConfig::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn one_record_per_probe(seed in any::<u64>(), n in 5u32..60, dests in 1usize..20) {
        let spec = random_tree(seed, n, dests, 3);
        let out = tracetree(&exact_tasks(&spec), &mut transport(&spec), &TracetreeConfig::default()).unwrap();
        prop_assert_eq!(out.stats.probes_sent, out.raw.records().len());
        prop_assert!(!out.incomplete);
    }

    #[test]
    fn seen_nodes_continue_once(seed in any::<u64>(), n in 5u32..60, dests in 1usize..20) {
        let spec = random_tree(seed, n, dests, 3);
        let out = tracetree(&exact_tasks(&spec), &mut transport(&spec), &TracetreeConfig::default()).unwrap();
        let mut by_dest: BTreeMap<_, BTreeMap<u8, Hop>> = BTreeMap::new();
        for r in out.raw.records() {
            by_dest.entry(r.destination).or_default().insert(r.ttl, r.source);
        }
        // (address, ttl) -> destinations whose chain went on below it
        let mut continued: BTreeMap<_, usize> = BTreeMap::new();
        for chain in by_dest.values() {
            for (ttl, hop) in chain {
                if let Hop::Ip(a) = hop {
                    if *ttl > 1 && chain.contains_key(&(ttl - 1)) {
                        *continued.entry((*a, *ttl)).or_default() += 1;
                    }
                }
            }
        }
        prop_assert!(continued.values().all(|c| *c == 1), "{:?}", continued);
    }

    #[test]
    fn probes_bounded_by_assumed_distances(seed in any::<u64>(), n in 5u32..60, dests in 1usize..20, guess in 1u8..20) {
        let spec = random_tree(seed, n, dests, 3);
        let tasks: Vec<_> = spec.destinations.iter().map(|d| DestinationTask::new(*d, guess)).collect();
        let out = tracetree(&tasks, &mut transport(&spec), &TracetreeConfig::default()).unwrap();
        prop_assert!(out.stats.probes_sent <= tasks.len() * guess as usize);
    }

    #[test]
    fn strategies_agree_on_tree_routing(seed in any::<u64>(), n in 5u32..50, dests in 1usize..15) {
        let spec = random_tree(seed, n, dests, 2);
        let tasks = exact_tasks(&spec);
        let nodes = |send, receive| {
            let out = tracetree(&tasks, &mut transport(&spec), &config(send, receive)).unwrap();
            let mut v: Vec<(Hop, u8)> = out.raw.records().iter().map(|r| (r.source, r.ttl)).collect();
            v.sort();
            v
        };
        let base = nodes(Strategy::OnePerLoop, Strategy::OnePerLoop);
        prop_assert_eq!(&base, &nodes(Strategy::Greedy, Strategy::OnePerLoop));
        prop_assert_eq!(&base, &nodes(Strategy::OnePerLoop, Strategy::Greedy));
        prop_assert_eq!(&base, &nodes(Strategy::Greedy, Strategy::Greedy));
    }

    #[test]
    fn raw_tree_covers_every_route(seed in any::<u64>(), n in 5u32..60, dests in 1usize..20) {
        let spec = random_tree(seed, n, dests, 0);
        let out = tracetree(&exact_tasks(&spec), &mut transport(&spec), &TracetreeConfig::default()).unwrap();
        let ips = out.raw.ips();
        let want: BTreeSet<_> = spec.destinations.iter().copied().collect();
        prop_assert!(want.is_subset(&ips));
    }
}
