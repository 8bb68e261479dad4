mod common;

use egoradar::baseline::{link_loads, simulate_tracetree_from_traceroute, traceroute_round, TracerouteConfig};
use egoradar::tracetree::{tracetree, TracetreeConfig};
use proptest::prelude::*;

use common::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn traceroute_packets_are_route_lengths(seed in any::<u64>(), n in 5u32..60, dests in 1usize..20) {
        let spec = random_tree(seed, n, dests, 3);
        let tr = traceroute_round(&spec.destinations, &mut transport(&spec), &TracerouteConfig::default()).unwrap();
        let total: usize = tr.routes.values().map(Vec::len).sum();
        prop_assert_eq!(tr.packet_count, total);
        prop_assert_eq!(tr.records.len(), total);
    }

    #[test]
    fn tree_probing_never_costs_more(seed in any::<u64>(), n in 5u32..60, dests in 1usize..20) {
        let spec = random_tree(seed, n, dests, 3);
        let tr = traceroute_round(&spec.destinations, &mut transport(&spec), &TracerouteConfig::default()).unwrap();
        let replay = simulate_tracetree_from_traceroute(&tr.routes);
        let live = tracetree(&exact_tasks(&spec), &mut transport(&spec), &TracetreeConfig::default()).unwrap();
        prop_assert!(replay.probes() <= tr.packet_count);
        prop_assert!(live.stats.probes_sent <= tr.packet_count);
        prop_assert_eq!(replay.probes(), live.stats.probes_sent);
    }

    #[test]
    fn first_hop_load_is_destination_count(seed in any::<u64>(), n in 5u32..60, dests in 1usize..20) {
        let spec = random_tree(seed, n, dests, 0);
        let tr = traceroute_round(&spec.destinations, &mut transport(&spec), &TracerouteConfig::default()).unwrap();
        let loads = link_loads(&tr.routes);
        let from_monitor: usize = loads.iter().filter(|((a, _), _)| a.is_none()).map(|(_, l)| *l).sum();
        prop_assert_eq!(from_monitor, spec.destinations.len());
    }
}
