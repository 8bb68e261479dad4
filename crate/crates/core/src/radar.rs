//! Periodic measurement rounds with a per-destination distance cache.
//!
//! Each round probes every destination from the distance observed in the
//! previous round, or from the default distance when none is known. Round
//! starts are spaced by the inter-round delay, counted start to start.

use std::collections::BTreeMap;
use std::io;
use std::net::Ipv4Addr;

use crate::error::RadarError;
use crate::filter::filter_tree;
use crate::model::{RadarDataset, RoundMeta, RoundRecord, Seconds, DEFAULT_MAX_TTL};
use crate::roundlog::{DatasetHeader, RoundSink};
use crate::tracetree::{tracetree, DestinationTask, Distance, TracetreeConfig};
use crate::transport::Transport;

#[derive(Debug, Clone, PartialEq)]
pub struct RadarConfig {
    pub monitor_id: String,
    pub destinations: Vec<Ipv4Addr>,
    pub inter_round_delay: Seconds,
    /// Must equal `tracetree.max_ttl`.
    pub default_distance: u8,
    /// `None` runs until interrupted.
    pub rounds: Option<u64>,
    /// Restart under-estimated destinations from the default distance
    /// within the same round.
    pub restart_underestimates: bool,
    /// Keep raw trees in the returned dataset.
    pub keep_raw: bool,
    pub tracetree: TracetreeConfig,
}

impl RadarConfig {
    pub fn new(destinations: Vec<Ipv4Addr>) -> Self {
        RadarConfig {
            monitor_id: "monitor".into(),
            destinations,
            inter_round_delay: 600.0,
            default_distance: DEFAULT_MAX_TTL,
            rounds: Some(1),
            restart_underestimates: true,
            keep_raw: true,
            tracetree: TracetreeConfig::default(),
        }
    }

    /// Sets both the maximal TTL and the default distance.
    pub fn with_max_ttl(mut self, max_ttl: u8) -> Self {
        self.default_distance = max_ttl;
        self.tracetree.max_ttl = max_ttl;
        self
    }

    pub fn validate(&self) -> Result<(), RadarError> {
        if self.destinations.is_empty() {
            return Err(RadarError::NoDestinations);
        }
        if !(self.inter_round_delay.is_finite() && self.inter_round_delay >= 0.0) {
            return Err(RadarError::Config(
                "inter-round delay must be non-negative".into(),
            ));
        }
        if self.default_distance != self.tracetree.max_ttl {
            return Err(RadarError::Config(format!(
                "default distance {} differs from max ttl {}",
                self.default_distance, self.tracetree.max_ttl
            )));
        }
        self.tracetree.validate()?;
        Ok(())
    }

    fn engine_config(&self) -> TracetreeConfig {
        TracetreeConfig {
            restart_distance: self.restart_underestimates.then_some(self.default_distance),
            ..self.tracetree.clone()
        }
    }

    /// Configuration snapshot stored with the dataset.
    pub fn parameters(&self) -> BTreeMap<String, String> {
        let t = &self.tracetree;
        [
            ("max_ttl", t.max_ttl.to_string()),
            ("timeout", t.timeout.to_string()),
            ("inter_probe_delay", t.inter_probe_delay.to_string()),
            ("send_strategy", t.send_strategy.to_string()),
            ("receive_strategy", t.receive_strategy.to_string()),
            ("inter_round_delay", self.inter_round_delay.to_string()),
            ("default_distance", self.default_distance.to_string()),
            ("restart_underestimates", self.restart_underestimates.to_string()),
            ("destinations", self.destinations.len().to_string()),
            ("method", "tracetree".to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }
}

/// Last observed distance per destination.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DistanceCache(BTreeMap<Ipv4Addr, u8>);

impl DistanceCache {
    pub fn new() -> Self {
        DistanceCache::default()
    }

    pub fn get(&self, d: &Ipv4Addr) -> Option<u8> {
        self.0.get(d).copied()
    }

    pub fn insert(&mut self, d: Ipv4Addr, distance: u8) {
        self.0.insert(d, distance);
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Ipv4Addr, &u8)> {
        self.0.iter()
    }
}

pub fn next_round_tasks(
    cache: &DistanceCache,
    destinations: &[Ipv4Addr],
    default_distance: u8,
) -> Vec<DestinationTask> {
    destinations
        .iter()
        .map(|d| DestinationTask::new(*d, cache.get(d).unwrap_or(default_distance)))
        .collect()
}

/// Stores seen distances and evicts destinations that were not reached.
pub fn update_cache(cache: &mut DistanceCache, observed: &BTreeMap<Ipv4Addr, Distance>) {
    for (d, dist) in observed {
        match dist {
            Distance::Seen(t) => {
                cache.0.insert(*d, *t);
            }
            Distance::NotSeen => {
                cache.0.remove(d);
            }
        }
    }
}

/// Runs the configured number of rounds.
pub fn run_radar(
    config: &RadarConfig,
    transport: &mut dyn Transport,
    sink: &mut dyn RoundSink,
) -> Result<RadarDataset, RadarError> {
    run_radar_until(config, transport, sink, &mut |_| false)
}

/// Like [`run_radar`], stopping before round `i` when `stop(i)` holds. The
/// rounds completed so far form a valid dataset.
pub fn run_radar_until(
    config: &RadarConfig,
    transport: &mut dyn Transport,
    sink: &mut dyn RoundSink,
    stop: &mut dyn FnMut(u64) -> bool,
) -> Result<RadarDataset, RadarError> {
    config.validate()?;
    let monitor = transport.local_address();
    let mut dataset = RadarDataset::new(config.monitor_id.clone(), monitor);
    dataset.parameters = config.parameters();
    let sink_err = |e: io::Error| RadarError::Sink(e.to_string());
    sink.header(&DatasetHeader {
        monitor_id: dataset.monitor_id.clone(),
        monitor,
        parameters: dataset.parameters.clone(),
    })
    .map_err(sink_err)?;

    let engine = config.engine_config();
    let mut cache = DistanceCache::new();
    let mut previous_start: Option<Seconds> = None;
    let mut index = 0u64;
    while config.rounds.is_none_or(|n| index < n) && !stop(index) {
        if let Some(p) = previous_start {
            transport.wait_until(p + config.inter_round_delay);
        }
        let start = transport.now();
        previous_start = Some(start);
        transport.begin_round(index);
        let tasks = next_round_tasks(&cache, &config.destinations, config.default_distance);
        let out = tracetree(&tasks, transport, &engine)?;
        let end = transport.now().max(start);
        let (tree, report) = filter_tree(&out.raw, monitor);
        log::debug!(
            "round {index}: {} probes, {} addresses, filter {report:?}",
            out.stats.probes_sent,
            tree.observed_ips().len()
        );
        let meta = RoundMeta {
            index,
            start_time: start,
            end_time: end,
            incomplete: out.incomplete,
        };
        sink.round(&meta, &out.raw).map_err(sink_err)?;
        if out.incomplete {
            // keep what we knew for destinations the aborted round never reached
            for (d, dist) in &out.distances {
                if let Distance::Seen(t) = dist {
                    cache.insert(*d, *t);
                }
            }
        } else {
            update_cache(&mut cache, &out.distances);
        }
        dataset
            .push(RoundRecord {
                meta,
                probes_sent: out.stats.probes_sent,
                tree,
                raw: config.keep_raw.then_some(out.raw),
            })
            .expect("round indices increase");
        index += 1;
    }
    Ok(dataset)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::roundlog::NullSink;
    use crate::simnet::{scenarios, Simulator};
    use crate::transport::{FaultPlan, SimTransport};

    fn ip(s: &str) -> Ipv4Addr {
        s.parse().unwrap()
    }

    fn run(sc: &scenarios::Scenario, rounds: u64) -> RadarDataset {
        let mut t = SimTransport::new(Simulator::from_spec(&sc.spec).unwrap());
        let cfg = RadarConfig {
            rounds: Some(rounds),
            inter_round_delay: sc.inter_round_delay,
            ..RadarConfig::new(sc.spec.destinations.clone())
        };
        run_radar(&cfg, &mut t, &mut NullSink).unwrap()
    }

    #[test]
    fn tasks_from_cache() {
        let d = ip("10.0.0.9");
        let mut cache = DistanceCache::new();
        assert_eq!(next_round_tasks(&cache, &[d], 30), vec![DestinationTask::new(d, 30)]);
        cache.insert(d, 7);
        assert_eq!(next_round_tasks(&cache, &[d], 30), vec![DestinationTask::new(d, 7)]);
    }

    #[test]
    fn cache_update_and_eviction() {
        let d = ip("10.0.0.9");
        let mut cache = DistanceCache::new();
        update_cache(&mut cache, &BTreeMap::from([(d, Distance::Seen(5))]));
        assert_eq!(cache.get(&d), Some(5));
        update_cache(&mut cache, &BTreeMap::from([(d, Distance::NotSeen)]));
        assert_eq!(cache.get(&d), None);
        assert_eq!(next_round_tasks(&cache, &[d], 30)[0].assumed_distance, 30);
    }

    #[test]
    fn stable_rounds_are_identical() {
        let ds = run(&scenarios::fig1_analog(), 3);
        assert_eq!(ds.len(), 3);
        let r = ds.rounds();
        // fig1 contains a per-packet balancer, so compare the two later rounds
        // of the chain scenario instead for strict equality
        assert!(r.iter().all(|x| !x.tree.degenerate));
        let ds = run(&scenarios::chain(), 3);
        let r = ds.rounds();
        assert_eq!(r[0].tree, r[1].tree);
        assert_eq!(r[1].tree, r[2].tree);
        assert!(r[1].probes_sent <= r[0].probes_sent);
        assert_eq!(r[1].probes_sent, r[2].probes_sent);
    }

    #[test]
    fn zero_rounds() {
        let ds = run(&scenarios::chain(), 0);
        assert!(ds.is_empty());
    }

    #[test]
    fn rounds_start_on_schedule() {
        let ds = run(&scenarios::chain(), 3);
        let starts: Vec<_> = ds.rounds().iter().map(|r| r.meta.start_time).collect();
        assert_eq!(starts, vec![0.0, 600.0, 1200.0]);
        // a delay shorter than a round: the next round starts right away
        let sc = scenarios::chain();
        let mut t = SimTransport::new(Simulator::from_spec(&sc.spec).unwrap());
        let cfg = RadarConfig {
            rounds: Some(2),
            inter_round_delay: 0.0,
            ..RadarConfig::new(sc.spec.destinations.clone())
        };
        let ds = run_radar(&cfg, &mut t, &mut NullSink).unwrap();
        let r = ds.rounds();
        assert_eq!(r[1].meta.start_time, r[0].meta.end_time);
    }

    #[test]
    fn fault_flags_round_and_continues() {
        let sc = scenarios::chain();
        let mut t = SimTransport::new(Simulator::from_spec(&sc.spec).unwrap())
            .with_faults(FaultPlan { fail_send: vec![2] });
        let cfg = RadarConfig {
            rounds: Some(2),
            ..RadarConfig::new(sc.spec.destinations.clone())
        };
        let ds = run_radar(&cfg, &mut t, &mut NullSink).unwrap();
        assert!(ds.rounds()[0].meta.incomplete);
        assert!(!ds.rounds()[1].meta.incomplete);
        assert_eq!(ds.rounds()[1].tree.observed_ips().len(), 3);
    }

    #[test]
    fn interruption_keeps_valid_prefix() {
        let sc = scenarios::chain();
        let mut t = SimTransport::new(Simulator::from_spec(&sc.spec).unwrap());
        let cfg = RadarConfig {
            rounds: None,
            ..RadarConfig::new(sc.spec.destinations.clone())
        };
        let ds = run_radar_until(&cfg, &mut t, &mut NullSink, &mut |i| i == 4).unwrap();
        assert_eq!(ds.len(), 4);
    }

    #[test]
    fn config_checks() {
        let mut cfg = RadarConfig::new(vec![]);
        assert_eq!(cfg.validate(), Err(RadarError::NoDestinations));
        cfg.destinations.push(ip("10.0.0.4"));
        cfg.default_distance = 20;
        assert!(matches!(cfg.validate(), Err(RadarError::Config(_))));
        assert!(cfg.clone().with_max_ttl(20).validate().is_ok());
    }
}
