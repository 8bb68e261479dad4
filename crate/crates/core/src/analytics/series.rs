use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::net::Ipv4Addr;
use std::str::FromStr;

use crate::error::AnalysisError;
use crate::model::RadarDataset;

pub const DEFAULT_WINDOW: usize = 10;

/// Values indexed by round, indices strictly increasing.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Series {
    points: Vec<(u64, i64)>,
}

impl Series {
    /// `None` unless indices are strictly increasing.
    pub fn new(points: Vec<(u64, i64)>) -> Option<Self> {
        points
            .windows(2)
            .all(|w| w[0].0 < w[1].0)
            .then_some(Series { points })
    }

    /// Values at consecutive indices from 0.
    pub fn from_values(values: impl IntoIterator<Item = i64>) -> Self {
        Series {
            points: values.into_iter().enumerate().map(|(i, v)| (i as u64, v)).collect(),
        }
    }

    pub fn points(&self) -> &[(u64, i64)] {
        &self.points
    }

    pub fn values(&self) -> impl Iterator<Item = i64> + '_ {
        self.points.iter().map(|p| p.1)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn map(&self, f: impl Fn(i64) -> i64) -> Series {
        Series {
            points: self.points.iter().map(|(i, v)| (*i, f(*v))).collect(),
        }
    }
}

/// Number of distinct addresses observed in each round.
pub fn per_round_ip_count(dataset: &RadarDataset) -> Series {
    Series {
        points: dataset
            .rounds()
            .iter()
            .map(|r| (r.meta.index, r.tree.observed_ips().len() as i64))
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum WindowMode {
    /// One value per round, over the window ending at that round.
    #[default]
    Sliding,
    /// One value per disjoint block of rounds; a trailing partial block is
    /// dropped.
    Blocked,
}

impl FromStr for WindowMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "sliding" => Ok(WindowMode::Sliding),
            "blocked" => Ok(WindowMode::Blocked),
            _ => Err(format!("unknown window mode `{s}`")),
        }
    }
}

impl fmt::Display for WindowMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WindowMode::Sliding => "sliding",
            WindowMode::Blocked => "blocked",
        })
    }
}

/// Distinct addresses over `w` consecutive rounds. Each value is indexed by
/// the last round of its window.
pub fn windowed_ip_count(
    dataset: &RadarDataset,
    w: usize,
    mode: WindowMode,
) -> Result<Series, AnalysisError> {
    if w == 0 {
        return Err(AnalysisError::ZeroWidth);
    }
    let rounds = dataset.rounds();
    let sets: Vec<_> = rounds.iter().map(|r| r.tree.observed_ips()).collect();
    let mut points = Vec::new();
    match mode {
        WindowMode::Blocked => {
            for (block, chunk) in sets.chunks_exact(w).enumerate() {
                let union: std::collections::BTreeSet<&Ipv4Addr> = chunk.iter().flatten().collect();
                points.push((rounds[block * w + w - 1].meta.index, union.len() as i64));
            }
        }
        WindowMode::Sliding => {
            let mut live: HashMap<Ipv4Addr, usize> = HashMap::new();
            for (i, set) in sets.iter().enumerate() {
                for a in set {
                    *live.entry(*a).or_insert(0) += 1;
                }
                if i >= w {
                    for a in &sets[i - w] {
                        let n = live.get_mut(a).expect("counted on entry");
                        *n -= 1;
                        if *n == 0 {
                            live.remove(a);
                        }
                    }
                }
                if i + 1 >= w {
                    points.push((rounds[i].meta.index, live.len() as i64));
                }
            }
        }
    }
    Ok(Series { points })
}

/// Histogram of the series values. Keys are bin lower bounds.
pub fn value_distribution(series: &Series, bin_width: u64) -> Result<BTreeMap<i64, usize>, AnalysisError> {
    if bin_width == 0 {
        return Err(AnalysisError::ZeroWidth);
    }
    let w = bin_width as i64;
    let mut hist = BTreeMap::new();
    for v in series.values() {
        *hist.entry(v.div_euclid(w) * w).or_insert(0) += 1;
    }
    Ok(hist)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{FilteredTree, RoundMeta, RoundRecord, TreeHop};
    use std::collections::BTreeSet;

    fn dataset(rounds: &[&[u8]]) -> RadarDataset {
        let m: Ipv4Addr = "10.0.0.1".parse().unwrap();
        let mut ds = RadarDataset::new("t", m);
        for (i, ips) in rounds.iter().enumerate() {
            let mut tree = FilteredTree::empty(m);
            for x in ips.iter() {
                let n = TreeHop::Ip(Ipv4Addr::new(10, 1, 0, *x));
                tree.nodes.insert(n.clone());
                tree.edges.insert((tree.root.clone(), n));
            }
            ds.push(RoundRecord {
                meta: RoundMeta::new(i as u64, i as f64, i as f64),
                probes_sent: 0,
                tree,
                raw: None,
            })
            .unwrap();
        }
        ds
    }

    fn values(s: &Series) -> Vec<i64> {
        s.values().collect()
    }

    #[test]
    fn counts() {
        let ds = dataset(&[&[1, 2], &[2, 3], &[4], &[1, 2, 3, 4]]);
        assert_eq!(values(&per_round_ip_count(&ds)), vec![2, 2, 1, 4]);
        let s2 = windowed_ip_count(&ds, 2, WindowMode::Sliding).unwrap();
        assert_eq!(s2.points(), &[(1, 3), (2, 3), (3, 4)]);
        let b2 = windowed_ip_count(&ds, 2, WindowMode::Blocked).unwrap();
        assert_eq!(b2.points(), &[(1, 3), (3, 4)]);
        let b3 = windowed_ip_count(&ds, 3, WindowMode::Blocked).unwrap();
        assert_eq!(b3.points(), &[(2, 4)]);
        assert!(windowed_ip_count(&ds, 5, WindowMode::Blocked).unwrap().is_empty());
        assert_eq!(windowed_ip_count(&ds, 0, WindowMode::Sliding), Err(AnalysisError::ZeroWidth));
    }

    #[test]
    fn unit_window_is_per_round() {
        let ds = dataset(&[&[1], &[1, 2, 3], &[], &[5, 6]]);
        assert_eq!(
            windowed_ip_count(&ds, 1, WindowMode::Sliding).unwrap(),
            per_round_ip_count(&ds)
        );
        assert_eq!(
            windowed_ip_count(&ds, 1, WindowMode::Blocked).unwrap(),
            per_round_ip_count(&ds)
        );
    }

    #[test]
    fn sliding_matches_direct_unions() {
        let ds = dataset(&[&[1, 2], &[3], &[1], &[4, 5], &[2], &[6, 1], &[7]]);
        for w in 1..=7 {
            let got = windowed_ip_count(&ds, w, WindowMode::Sliding).unwrap();
            let r = ds.rounds();
            let want: Vec<(u64, i64)> = (w - 1..r.len())
                .map(|i| {
                    let u: BTreeSet<_> = r[i + 1 - w..=i].iter().flat_map(|x| x.tree.observed_ips()).collect();
                    (i as u64, u.len() as i64)
                })
                .collect();
            assert_eq!(got.points(), want.as_slice(), "w={w}");
        }
    }

    #[test]
    fn empty_dataset() {
        let ds = dataset(&[]);
        assert!(per_round_ip_count(&ds).is_empty());
    }

    #[test]
    fn distribution() {
        let s = Series::from_values([5, 5, 7]);
        assert_eq!(value_distribution(&s, 1).unwrap(), BTreeMap::from([(5, 2), (7, 1)]));
        assert_eq!(value_distribution(&s, 5).unwrap(), BTreeMap::from([(5, 3)]));
        let c = Series::from_values([3; 6]);
        assert_eq!(value_distribution(&c, 1).unwrap().len(), 1);
        assert_eq!(value_distribution(&s, 0), Err(AnalysisError::ZeroWidth));
    }

    #[test]
    fn series_order() {
        assert!(Series::new(vec![(0, 1), (2, 1)]).is_some());
        assert!(Series::new(vec![(2, 1), (2, 1)]).is_none());
    }
}
