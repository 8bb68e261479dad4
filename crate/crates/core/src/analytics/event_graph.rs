use std::collections::{BTreeMap, BTreeSet};
use std::net::Ipv4Addr;

use crate::error::AnalysisError;
use crate::model::RadarDataset;

use super::components::RoundRange;

pub const DEFAULT_BEFORE_WINDOW: u64 = 100;

/// Merge of the rounds before an event with the round of the event.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventGraph {
    pub event_round: u64,
    pub before: RoundRange,
    pub nodes: BTreeSet<Ipv4Addr>,
    /// Directed links; `true` when the link appears in the event round and
    /// in none of the rounds before.
    pub edges: BTreeMap<(Ipv4Addr, Ipv4Addr), bool>,
    /// Addresses absent from every round before the event.
    pub new_nodes: BTreeSet<Ipv4Addr>,
}

impl EventGraph {
    pub fn flagged_edges(&self) -> impl Iterator<Item = (Ipv4Addr, Ipv4Addr)> + '_ {
        self.edges.iter().filter(|(_, new)| **new).map(|(e, _)| *e)
    }
}

/// Requires every round of `[event_round - before_window, event_round]` to
/// be present.
pub fn event_graph(dataset: &RadarDataset, event_round: u64, before_window: u64) -> Result<EventGraph, AnalysisError> {
    if before_window == 0 {
        return Err(AnalysisError::EmptyReference);
    }
    let first = dataset
        .rounds()
        .first()
        .map(|r| r.meta.index)
        .ok_or(AnalysisError::MissingRound(event_round))?;
    let start = event_round.checked_sub(before_window).filter(|s| *s >= first);
    let Some(start) = start else {
        return Err(AnalysisError::BeforeDataset {
            start: event_round.saturating_sub(before_window),
            first,
        });
    };
    let event = dataset
        .round(event_round)
        .ok_or(AnalysisError::MissingRound(event_round))?;
    let mut nodes = BTreeSet::new();
    let mut before_edges = BTreeSet::new();
    for i in start..event_round {
        let r = dataset.round(i).ok_or(AnalysisError::MissingRound(i))?;
        nodes.extend(r.tree.observed_ips());
        before_edges.extend(r.tree.ip_edges());
    }
    let event_ips = event.tree.observed_ips();
    let new_nodes = event_ips.difference(&nodes).copied().collect();
    nodes.extend(event_ips);
    let mut edges: BTreeMap<_, _> = before_edges.iter().map(|e| (*e, false)).collect();
    for e in event.tree.ip_edges() {
        edges.entry(e).or_insert(true);
    }
    Ok(EventGraph {
        event_round,
        before: RoundRange {
            start,
            end: event_round,
        },
        nodes,
        edges,
        new_nodes,
    })
}
