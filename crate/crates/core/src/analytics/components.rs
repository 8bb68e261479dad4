use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::net::Ipv4Addr;
use std::str::FromStr;

use petgraph::unionfind::UnionFind;

use crate::error::AnalysisError;
use crate::model::RadarDataset;

/// Half-open range of round indices, written `start:end`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoundRange {
    pub start: u64,
    pub end: u64,
}

impl RoundRange {
    pub fn new(start: u64, end: u64) -> Result<Self, AnalysisError> {
        if start >= end {
            return Err(AnalysisError::BadRange { start, end });
        }
        Ok(RoundRange { start, end })
    }

    pub fn contains(&self, round: u64) -> bool {
        (self.start..self.end).contains(&round)
    }
}

impl FromStr for RoundRange {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (a, b) = s
            .split_once(':')
            .ok_or_else(|| format!("expected START:END, got `{s}`"))?;
        let parse = |x: &str| {
            x.trim()
                .parse::<u64>()
                .map_err(|e| format!("bad round index `{x}`: {e}"))
        };
        RoundRange::new(parse(a)?, parse(b)?).map_err(|e| e.to_string())
    }
}

impl fmt::Display for RoundRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.start, self.end)
    }
}

/// Addresses connected to each other through new addresses only.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NewAddressComponent {
    pub addresses: BTreeSet<Ipv4Addr>,
    /// Earliest first sighting among the members.
    pub first_round: u64,
    /// Latest first sighting among the members.
    pub last_round: u64,
}

impl NewAddressComponent {
    pub fn size(&self) -> usize {
        self.addresses.len()
    }
}

pub fn discovery_time(component: &NewAddressComponent) -> u64 {
    component.last_round - component.first_round + 1
}

fn check_windows(dataset: &RadarDataset, reference: RoundRange, observation: RoundRange) -> Result<(), AnalysisError> {
    RoundRange::new(reference.start, reference.end)?;
    RoundRange::new(observation.start, observation.end)?;
    if reference.end > observation.start {
        return Err(AnalysisError::Overlap);
    }
    if dataset.rounds_in(reference.start, reference.end).is_empty() {
        return Err(AnalysisError::EmptyReference);
    }
    Ok(())
}

/// Addresses seen in some observation round and in no reference round.
pub fn new_addresses(
    dataset: &RadarDataset,
    reference: RoundRange,
    observation: RoundRange,
) -> Result<BTreeSet<Ipv4Addr>, AnalysisError> {
    check_windows(dataset, reference, observation)?;
    let seen: BTreeSet<Ipv4Addr> = dataset
        .rounds_in(reference.start, reference.end)
        .iter()
        .flat_map(|r| r.tree.observed_ips())
        .collect();
    Ok(dataset
        .rounds_in(observation.start, observation.end)
        .iter()
        .flat_map(|r| r.tree.observed_ips())
        .filter(|a| !seen.contains(a))
        .collect())
}

/// Addresses and undirected links, as `(low, high)` pairs, over a range of
/// rounds.
pub fn union_graph(dataset: &RadarDataset, range: RoundRange) -> (BTreeSet<Ipv4Addr>, BTreeSet<(Ipv4Addr, Ipv4Addr)>) {
    let mut nodes = BTreeSet::new();
    let mut edges = BTreeSet::new();
    for r in dataset.rounds_in(range.start, range.end) {
        nodes.extend(r.tree.observed_ips());
        edges.extend(r.tree.ip_edges().into_iter().map(|(a, b)| (a.min(b), a.max(b))));
    }
    (nodes, edges)
}

/// Components of the observation union graph induced on new addresses,
/// ordered by first round then lowest address.
pub fn new_address_components(
    dataset: &RadarDataset,
    reference: RoundRange,
    observation: RoundRange,
) -> Result<Vec<NewAddressComponent>, AnalysisError> {
    let fresh: Vec<Ipv4Addr> = new_addresses(dataset, reference, observation)?.into_iter().collect();
    let index: BTreeMap<Ipv4Addr, usize> = fresh.iter().enumerate().map(|(i, a)| (*a, i)).collect();
    let mut first_seen: BTreeMap<Ipv4Addr, u64> = BTreeMap::new();
    for r in dataset.rounds_in(observation.start, observation.end) {
        for a in r.tree.observed_ips() {
            if index.contains_key(&a) {
                first_seen.entry(a).or_insert(r.meta.index);
            }
        }
    }
    let mut uf = UnionFind::<usize>::new(fresh.len());
    let (_, edges) = union_graph(dataset, observation);
    for (a, b) in edges {
        if let (Some(i), Some(j)) = (index.get(&a), index.get(&b)) {
            uf.union(*i, *j);
        }
    }
    let mut groups: BTreeMap<usize, BTreeSet<Ipv4Addr>> = BTreeMap::new();
    for (i, a) in fresh.iter().enumerate() {
        groups.entry(uf.find(i)).or_default().insert(*a);
    }
    let mut out: Vec<NewAddressComponent> = groups
        .into_values()
        .map(|addresses| {
            let rounds = addresses.iter().map(|a| first_seen[a]);
            NewAddressComponent {
                first_round: rounds.clone().min().expect("non-empty"),
                last_round: rounds.max().expect("non-empty"),
                addresses,
            }
        })
        .collect();
    out.sort_by_key(|c| (c.first_round, *c.addresses.first().expect("non-empty")));
    Ok(out)
}

/// Histogram: component size -> number of components.
pub fn component_size_distribution(components: &[NewAddressComponent]) -> BTreeMap<usize, usize> {
    let mut hist = BTreeMap::new();
    for c in components {
        *hist.entry(c.size()).or_insert(0) += 1;
    }
    hist
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{FilteredTree, RoundMeta, RoundRecord, TreeHop};

    fn a(x: u8) -> Ipv4Addr {
        Ipv4Addr::new(10, 1, 0, x)
    }

    /// Each round is a list of root-to-leaf chains.
    fn dataset(rounds: &[&[&[u8]]]) -> RadarDataset {
        let m = Ipv4Addr::new(10, 0, 0, 1);
        let mut ds = RadarDataset::new("t", m);
        for (i, chains) in rounds.iter().enumerate() {
            let mut tree = FilteredTree::empty(m);
            for chain in chains.iter() {
                let mut prev = tree.root.clone();
                for x in chain.iter() {
                    let n = TreeHop::Ip(a(*x));
                    tree.nodes.insert(n.clone());
                    tree.edges.insert((prev, n.clone()));
                    prev = n;
                }
            }
            ds.push(RoundRecord {
                meta: RoundMeta::new(i as u64, 0.0, 0.0),
                probes_sent: 0,
                tree,
                raw: None,
            })
            .unwrap();
        }
        ds
    }

    fn rr(s: u64, e: u64) -> RoundRange {
        RoundRange::new(s, e).unwrap()
    }

    #[test]
    fn range_parsing() {
        assert_eq!("0:100".parse::<RoundRange>(), Ok(rr(0, 100)));
        assert!("5:5".parse::<RoundRange>().is_err());
        assert!("5".parse::<RoundRange>().is_err());
        assert_eq!(rr(3, 7).to_string(), "3:7");
    }

    #[test]
    fn new_address_definition() {
        let ds = dataset(&[&[&[1, 2]], &[&[1, 2]], &[&[1, 3]], &[&[1, 2, 4]]]);
        assert_eq!(new_addresses(&ds, rr(0, 2), rr(2, 4)).unwrap(), BTreeSet::from([a(3), a(4)]));
        assert!(new_addresses(&ds, rr(0, 2), rr(0, 2)).is_err());
        assert_eq!(new_addresses(&ds, rr(0, 3), rr(2, 4)), Err(AnalysisError::Overlap));
        assert_eq!(new_addresses(&ds, rr(10, 12), rr(12, 14)), Err(AnalysisError::EmptyReference));
        // stable topology
        let ds = dataset(&[&[&[1u8, 2][..]][..]; 4]);
        assert!(new_addresses(&ds, rr(0, 2), rr(2, 4)).unwrap().is_empty());
    }

    #[test]
    fn only_new_paths_connect() {
        // 3 and 4 hang off the old address 1 on separate branches
        let ds = dataset(&[&[&[1, 2]], &[&[1, 3], &[1, 4]]]);
        let c = new_address_components(&ds, rr(0, 1), rr(1, 2)).unwrap();
        assert_eq!(component_size_distribution(&c), BTreeMap::from([(1, 2)]));
    }

    #[test]
    fn first_sightings_and_discovery_time() {
        // 5-6 first seen in round 2, 7 in round 4, all connected
        let ds = dataset(&[
            &[&[1]],
            &[&[1]],
            &[&[1, 5, 6]],
            &[&[1, 5, 6]],
            &[&[1, 5, 6, 7]],
            &[&[1, 9]],
        ]);
        let c = new_address_components(&ds, rr(0, 2), rr(2, 6)).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c[0].addresses, BTreeSet::from([a(5), a(6), a(7)]));
        assert_eq!((c[0].first_round, c[0].last_round), (2, 4));
        assert_eq!(discovery_time(&c[0]), 3);
        assert_eq!(discovery_time(&c[1]), 1);
    }

    #[test]
    fn discovery_formula() {
        let c = NewAddressComponent {
            addresses: BTreeSet::from([a(1)]),
            first_round: 1306,
            last_round: 1974,
        };
        assert_eq!(discovery_time(&c), 669);
    }

    #[test]
    fn size_histogram() {
        let mk = |n: u8| NewAddressComponent {
            addresses: (0..n).map(a).collect(),
            first_round: 0,
            last_round: 0,
        };
        assert_eq!(
            component_size_distribution(&[mk(1), mk(1), mk(4)]),
            BTreeMap::from([(1, 2), (4, 1)])
        );
        assert!(component_size_distribution(&[]).is_empty());
    }
}
