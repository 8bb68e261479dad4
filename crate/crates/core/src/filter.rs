//! Reduction of a raw (hop, ttl) tree to a tree on addresses.
//!
//! Stages, in order:
//! 1. merge every node carrying the same address (the monitor included);
//! 2. drop self-loops;
//! 3. iteratively drop stars without successor, except destination terminals;
//! 4. merge the star successors of each node into one star `*@<node>`;
//! 5. BFS from the monitor, neighbours in [`lexicographic_hop_order`], FIFO
//!    queue, parents expanded in discovery order;
//! 6. iteratively drop leaves that are not the terminal of any destination.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::net::Ipv4Addr;

use crate::model::{FilteredTree, Hop, RawTraceTree, TreeHop, TtlNode};

/// Per-stage counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FilterReport {
    /// Raw nodes absorbed into an existing node sharing their address.
    pub merged_ip_nodes: usize,
    /// Self-loop edges removed.
    pub loops_removed: usize,
    /// Successor-less stars removed.
    pub stars_pruned: usize,
    /// Stars absorbed into a sibling star.
    pub stars_merged: usize,
    /// Non-terminal leaves removed after the BFS.
    pub leaves_pruned: usize,
}

impl FilterReport {
    pub fn is_zero(&self) -> bool {
        *self == FilterReport::default()
    }
}

/// Neighbour order used by the BFS: addresses first, compared octet by octet
/// as numbers, then stars, compared by the node they hang from.
pub fn lexicographic_hop_order(a: &TreeHop, b: &TreeHop) -> Ordering {
    a.cmp(b)
}

/// Same order on raw hops. All stars compare equal here.
pub fn raw_hop_order(a: &Hop, b: &Hop) -> Ordering {
    a.cmp(b)
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum Vertex {
    Named(TreeHop),
    /// A star not yet merged, keyed by its raw (ttl, destination).
    Raw(u8, Ipv4Addr),
}

#[derive(Default)]
struct Graph {
    succ: BTreeMap<Vertex, BTreeSet<Vertex>>,
    pred: BTreeMap<Vertex, BTreeSet<Vertex>>,
}

impl Graph {
    fn add_node(&mut self, v: Vertex) {
        self.succ.entry(v.clone()).or_default();
        self.pred.entry(v).or_default();
    }

    fn add_edge(&mut self, a: Vertex, b: Vertex) {
        self.add_node(a.clone());
        self.add_node(b.clone());
        self.succ.get_mut(&a).unwrap().insert(b.clone());
        self.pred.get_mut(&b).unwrap().insert(a);
    }

    fn remove_node(&mut self, v: &Vertex) -> (BTreeSet<Vertex>, BTreeSet<Vertex>) {
        let succ = self.succ.remove(v).unwrap_or_default();
        let pred = self.pred.remove(v).unwrap_or_default();
        for s in &succ {
            if let Some(p) = self.pred.get_mut(s) {
                p.remove(v);
            }
        }
        for p in &pred {
            if let Some(s) = self.succ.get_mut(p) {
                s.remove(v);
            }
        }
        (pred, succ)
    }

    fn successors(&self, v: &Vertex) -> impl Iterator<Item = &Vertex> {
        self.succ.get(v).into_iter().flatten()
    }
}

fn vertex_of(n: &TtlNode) -> Vertex {
    match (n.hop, n.star_owner()) {
        (Hop::Ip(a), _) => Vertex::Named(TreeHop::Ip(a)),
        (Hop::Star, Some(d)) => Vertex::Raw(n.ttl, d),
        // Only reachable through a hand-built node; treat it as its own star.
        (Hop::Star, None) => Vertex::Raw(n.ttl, Ipv4Addr::UNSPECIFIED),
    }
}

/// Runs the six filter stages on `raw`, rooted at the monitor address.
pub fn filter_tree(raw: &RawTraceTree, monitor: Ipv4Addr) -> (FilteredTree, FilterReport) {
    let mut report = FilterReport::default();
    let root = TreeHop::Ip(monitor);
    let root_v = Vertex::Named(root.clone());

    // 1. merge same-address nodes, hanging every ttl-1 node under the monitor
    let mut g = Graph::default();
    g.add_node(root_v.clone());
    let mut ip_nodes = 1usize;
    let mut self_loops = BTreeSet::new();
    for n in raw.nodes() {
        let v = vertex_of(n);
        if matches!(n.hop, Hop::Ip(_)) {
            ip_nodes += 1;
        }
        g.add_node(v.clone());
        if n.ttl == 1 {
            if v == root_v {
                self_loops.insert(v.clone());
            } else {
                g.add_edge(root_v.clone(), v);
            }
        }
    }
    for (a, b) in raw.edges() {
        let (va, vb) = (vertex_of(a), vertex_of(b));
        if va == vb {
            self_loops.insert(va);
        } else {
            g.add_edge(va, vb);
        }
    }
    let named = g
        .succ
        .keys()
        .filter(|v| matches!(v, Vertex::Named(_)))
        .count();
    report.merged_ip_nodes = ip_nodes - named;

    // 2. self-loops were kept out of the graph; count distinct ones
    report.loops_removed = self_loops.len();

    let mut terminal_of: BTreeMap<Ipv4Addr, Vertex> = raw
        .terminals()
        .iter()
        .map(|(d, n)| (*d, vertex_of(n)))
        .collect();

    // 3. successor-less stars, terminals excepted
    let protected: BTreeSet<Vertex> = terminal_of.values().cloned().collect();
    let mut work: VecDeque<Vertex> = g
        .succ
        .iter()
        .filter(|(v, s)| matches!(v, Vertex::Raw(..)) && s.is_empty())
        .map(|(v, _)| v.clone())
        .collect();
    while let Some(v) = work.pop_front() {
        if protected.contains(&v) || !g.succ.get(&v).is_some_and(|s| s.is_empty()) {
            continue;
        }
        let (pred, _) = g.remove_node(&v);
        report.stars_pruned += 1;
        for p in pred {
            if matches!(p, Vertex::Raw(..)) && g.succ.get(&p).is_some_and(|s| s.is_empty()) {
                work.push_back(p);
            }
        }
    }

    // 4. merge star successors of a same node
    let mut renamed: BTreeMap<Vertex, Vertex> = BTreeMap::new();
    let mut queue: VecDeque<Vertex> = g
        .succ
        .keys()
        .filter(|v| matches!(v, Vertex::Named(_)))
        .cloned()
        .collect();
    while let Some(u) = queue.pop_front() {
        let Vertex::Named(label) = &u else { continue };
        if !g.succ.contains_key(&u) {
            continue;
        }
        let stars: Vec<Vertex> = g
            .successors(&u)
            .filter(|v| matches!(v, Vertex::Raw(..)))
            .cloned()
            .collect();
        if stars.is_empty() {
            continue;
        }
        let merged = Vertex::Named(TreeHop::star_under(label));
        report.stars_merged += stars.len() - 1;
        let group: BTreeSet<&Vertex> = stars.iter().collect();
        let mut preds = BTreeSet::new();
        let mut succs = BTreeSet::new();
        for s in &stars {
            let (p, n) = g.remove_node(s);
            preds.extend(p);
            succs.extend(n);
            renamed.insert(s.clone(), merged.clone());
        }
        g.add_node(merged.clone());
        for p in preds.into_iter().filter(|p| !group.contains(p)) {
            g.add_edge(p, merged.clone());
        }
        for n in succs.into_iter().filter(|n| !group.contains(n)) {
            g.add_edge(merged.clone(), n);
        }
        queue.push_back(merged);
    }
    for v in terminal_of.values_mut() {
        if let Some(r) = renamed.get(v) {
            *v = r.clone();
        }
    }

    // 5. BFS tree
    let mut parent: BTreeMap<TreeHop, TreeHop> = BTreeMap::new();
    let mut visited: BTreeSet<TreeHop> = BTreeSet::from([root.clone()]);
    let mut bfs = VecDeque::from([root.clone()]);
    while let Some(u) = bfs.pop_front() {
        let mut next: Vec<&TreeHop> = g
            .successors(&Vertex::Named(u.clone()))
            .filter_map(|v| match v {
                Vertex::Named(h) => Some(h),
                Vertex::Raw(..) => None,
            })
            .collect();
        next.sort_by(|a, b| lexicographic_hop_order(a, b));
        for v in next {
            if visited.insert(v.clone()) {
                parent.insert(v.clone(), u.clone());
                bfs.push_back(v.clone());
            }
        }
    }

    // 6. prune non-terminal leaves
    let terminal_set: BTreeSet<TreeHop> = terminal_of
        .values()
        .filter_map(|v| match v {
            Vertex::Named(h) => Some(h.clone()),
            Vertex::Raw(..) => None,
        })
        .collect();
    let mut child_count: BTreeMap<&TreeHop, usize> = BTreeMap::new();
    for p in parent.values() {
        *child_count.entry(p).or_default() += 1;
    }
    let mut removed: BTreeSet<TreeHop> = BTreeSet::new();
    let mut leaves: Vec<&TreeHop> = visited
        .iter()
        .filter(|n| **n != root && !child_count.contains_key(n) && !terminal_set.contains(*n))
        .collect();
    while let Some(leaf) = leaves.pop() {
        removed.insert(leaf.clone());
        report.leaves_pruned += 1;
        let p = &parent[leaf];
        let c = child_count.get_mut(p).expect("parent has children");
        *c -= 1;
        if *c == 0 {
            child_count.remove(p);
            if *p != root && !terminal_set.contains(p) {
                leaves.push(p);
            }
        }
    }

    let nodes: BTreeSet<TreeHop> = visited.difference(&removed).cloned().collect();
    let edges = parent
        .iter()
        .filter(|(c, _)| nodes.contains(*c))
        .map(|(c, p)| (p.clone(), c.clone()))
        .collect();
    let terminals = terminal_of
        .into_iter()
        .filter_map(|(d, v)| match v {
            Vertex::Named(h) if nodes.contains(&h) => Some((d, h)),
            _ => None,
        })
        .collect();
    let tree = FilteredTree {
        degenerate: nodes.len() == 1,
        root,
        nodes,
        edges,
        terminals,
    };
    (tree, report)
}

/// Re-encodes a filtered tree as the raw tree a measurement of that exact
/// routing tree would produce: each node at its depth, one backward chain per
/// destination, chains stopping on already seen addresses.
pub fn encode_as_raw(tree: &FilteredTree) -> RawTraceTree {
    let parents = tree.parents();
    let mut routes: BTreeMap<Ipv4Addr, Vec<(Hop, u8)>> = BTreeMap::new();
    for (d, t) in &tree.terminals {
        let mut path = Vec::new();
        let mut cur = t;
        while *cur != tree.root {
            path.push(match cur {
                TreeHop::Ip(a) => Hop::Ip(*a),
                TreeHop::Star(_) => Hop::Star,
            });
            match parents.get(cur) {
                Some(p) => cur = p,
                None => break,
            }
        }
        if path.is_empty() {
            // terminal on the monitor: a reply from the monitor's own address
            if let TreeHop::Ip(a) = &tree.root {
                path.push(Hop::Ip(*a));
            }
        }
        path.reverse();
        let route = path
            .into_iter()
            .enumerate()
            .map(|(i, h)| (h, (i + 1) as u8))
            .collect();
        routes.insert(*d, route);
    }
    crate::tracetree::replay_stopping_rule(&routes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ProbeRecord;

    fn ip(s: &str) -> Ipv4Addr {
        s.parse().unwrap()
    }

    fn rec(src: &str, ttl: u8, d: &str) -> ProbeRecord {
        ProbeRecord::new(src.parse().unwrap(), ttl, ip(d))
    }

    fn raw(records: Vec<ProbeRecord>) -> RawTraceTree {
        RawTraceTree::from_records(records).unwrap()
    }

    fn th(s: &str) -> TreeHop {
        TreeHop::Ip(ip(s))
    }

    const M: &str = "10.0.0.1";

    #[test]
    fn numeric_not_string_order() {
        // "10.0.0.0" < "9.0.0.0" as strings
        assert_eq!(
            lexicographic_hop_order(&th("9.0.0.0"), &th("10.0.0.0")),
            Ordering::Less
        );
        let star = TreeHop::star_under(&th("1.1.1.1"));
        assert_eq!(lexicographic_hop_order(&th("1.2.3.4"), &star), Ordering::Less);
        assert_eq!(
            lexicographic_hop_order(&th("1.2.3.4"), &th("1.2.3.4")),
            Ordering::Equal
        );
        assert_eq!(raw_hop_order(&Hop::Ip(ip("1.2.3.4")), &Hop::Star), Ordering::Less);
    }

    #[test]
    fn bfs_prefers_numerically_smaller_parent() {
        // d is reachable at depth 2 through both 9.0.0.1 and 10.0.0.9; the
        // numeric order makes 9.0.0.1 the parent (string order would not).
        let r = raw(vec![
            rec("20.0.0.1", 3, "20.0.0.1"),
            rec("9.0.0.1", 2, "20.0.0.1"),
            rec("1.1.1.1", 1, "20.0.0.1"),
            rec("20.0.0.2", 3, "20.0.0.2"),
            rec("10.0.0.9", 2, "20.0.0.2"),
            rec("1.1.1.1", 1, "20.0.0.2"),
            rec("30.0.0.1", 4, "30.0.0.1"),
            rec("20.0.0.1", 3, "30.0.0.1"),
            rec("9.0.0.1", 2, "30.0.0.1"),
            rec("30.0.0.2", 4, "30.0.0.2"),
            rec("20.0.0.1", 3, "30.0.0.2"),
            rec("10.0.0.9", 2, "30.0.0.2"),
        ]);
        let (t, _) = filter_tree(&r, ip(M));
        t.check_invariants().unwrap();
        assert!(t.edges.contains(&(th("9.0.0.1"), th("20.0.0.1"))));
        assert!(!t.edges.contains(&(th("10.0.0.9"), th("20.0.0.1"))));
    }

    #[test]
    fn routing_loop_collapses() {
        // X seen at ttl 2 and 4 on one path.
        let r = raw(vec![
            rec("5.5.5.5", 5, "5.5.5.5"),
            rec("7.7.7.7", 4, "5.5.5.5"),
            rec("3.3.3.3", 3, "5.5.5.5"),
            rec("7.7.7.7", 2, "5.5.5.5"),
            rec("1.1.1.1", 1, "5.5.5.5"),
        ]);
        let (t, rep) = filter_tree(&r, ip(M));
        t.check_invariants().unwrap();
        assert_eq!(rep.merged_ip_nodes, 1);
        let want: BTreeSet<_> = [
            (th(M), th("1.1.1.1")),
            (th("1.1.1.1"), th("7.7.7.7")),
            (th("7.7.7.7"), th("5.5.5.5")),
        ]
        .into();
        assert_eq!(t.edges, want);
        assert_eq!(rep.leaves_pruned, 1); // 3.3.3.3 hangs off X as a dead end
    }

    #[test]
    fn consecutive_repeat_is_a_self_loop() {
        let r = raw(vec![
            rec("5.5.5.5", 4, "5.5.5.5"),
            rec("7.7.7.7", 3, "5.5.5.5"),
            rec("7.7.7.7", 2, "5.5.5.5"),
            rec("1.1.1.1", 1, "5.5.5.5"),
        ]);
        let (t, rep) = filter_tree(&r, ip(M));
        t.check_invariants().unwrap();
        assert_eq!(rep.loops_removed, 1);
        assert_eq!(rep.merged_ip_nodes, 1);
        assert_eq!(t.nodes.len(), 4);
    }

    #[test]
    fn sibling_stars_merge() {
        // Two destinations time out right below A.
        let r = raw(vec![
            rec("8.0.0.1", 3, "8.0.0.1"),
            rec("*", 2, "8.0.0.1"),
            rec("1.1.1.1", 1, "8.0.0.1"),
            rec("8.0.0.2", 3, "8.0.0.2"),
            rec("*", 2, "8.0.0.2"),
            rec("1.1.1.1", 1, "8.0.0.2"),
        ]);
        let (t, rep) = filter_tree(&r, ip(M));
        t.check_invariants().unwrap();
        assert_eq!(rep.stars_merged, 1);
        let star = TreeHop::star_under(&th("1.1.1.1"));
        assert!(t.edges.contains(&(th("1.1.1.1"), star.clone())));
        assert!(t.edges.contains(&(star.clone(), th("8.0.0.1"))));
        assert!(t.edges.contains(&(star, th("8.0.0.2"))));
    }

    #[test]
    fn dangling_star_pruned_unless_terminal() {
        // d1: reached, d2: never reached, its chain ends on stars.
        let r = raw(vec![
            rec("8.0.0.1", 2, "8.0.0.1"),
            rec("*", 3, "8.0.0.2"),
            rec("*", 2, "8.0.0.2"),
            rec("1.1.1.1", 1, "8.0.0.1"),
            rec("1.1.1.1", 1, "8.0.0.2"),
        ]);
        let (t, rep) = filter_tree(&r, ip(M));
        t.check_invariants().unwrap();
        // the top star is d2's terminal and survives with its parent star
        assert_eq!(rep.stars_pruned, 0);
        let s1 = TreeHop::star_under(&th("1.1.1.1"));
        let s2 = TreeHop::star_under(&s1);
        assert_eq!(t.terminals[&ip("8.0.0.2")], s2);
        assert!(t.nodes.contains(&s2));

        // A star below a reached hop with nothing above it and not a terminal:
        // built by hand since the measurement never produces one.
        let r = raw(vec![
            rec("8.0.0.1", 3, "8.0.0.1"),
            rec("1.1.1.1", 2, "8.0.0.1"),
            rec("2.2.2.2", 1, "8.0.0.1"),
            rec("*", 2, "8.0.0.3"),
            rec("8.0.0.3", 3, "8.0.0.3"),
            rec("*", 1, "8.0.0.4"),
            rec("8.0.0.4", 5, "8.0.0.4"),
        ]);
        let (t, rep) = filter_tree(&r, ip(M));
        t.check_invariants().unwrap();
        // (*,1,d4) has no successor (d4's next record is at ttl 5)
        assert_eq!(rep.stars_pruned, 1);
        assert!(!t.terminals.contains_key(&ip("8.0.0.4")));
    }

    #[test]
    fn tree_input_is_a_fixed_point() {
        let r = raw(vec![
            rec("8.0.0.1", 3, "8.0.0.1"),
            rec("8.0.0.2", 3, "8.0.0.2"),
            rec("2.2.2.2", 2, "8.0.0.1"),
            rec("2.2.2.2", 2, "8.0.0.2"),
            rec("1.1.1.1", 1, "8.0.0.1"),
        ]);
        let (t, rep) = filter_tree(&r, ip(M));
        t.check_invariants().unwrap();
        assert!(rep.is_zero(), "{rep:?}");
        assert_eq!(t.nodes.len(), 5);
        let again = filter_tree(&encode_as_raw(&t), ip(M)).0;
        assert_eq!(again, t);
    }

    #[test]
    fn nothing_reachable_is_degenerate() {
        let (t, _) = filter_tree(&RawTraceTree::default(), ip(M));
        assert!(t.degenerate);
        assert_eq!(t.nodes.len(), 1);
        // chain that never reaches ttl 1
        let r = raw(vec![rec("8.0.0.1", 3, "8.0.0.1")]);
        let (t, _) = filter_tree(&r, ip(M));
        assert!(t.degenerate);
        assert!(t.terminals.is_empty());
    }

    #[test]
    fn terminal_on_the_monitor_survives_re_encoding() {
        let r = raw(vec![
            rec("8.0.0.1", 1, "8.0.0.1"),
            rec(M, 2, "8.0.0.2"),
            rec("8.0.0.1", 1, "8.0.0.2"),
        ]);
        let (t, _) = filter_tree(&r, ip(M));
        assert_eq!(t.terminals[&ip("8.0.0.2")], th(M));
        assert_eq!(filter_tree(&encode_as_raw(&t), ip(M)).0, t);
    }

    #[test]
    fn monitor_address_in_records_merges_into_root() {
        let r = raw(vec![
            rec("8.0.0.1", 2, "8.0.0.1"),
            rec(M, 1, "8.0.0.1"),
        ]);
        let (t, rep) = filter_tree(&r, ip(M));
        t.check_invariants().unwrap();
        assert_eq!(rep.merged_ip_nodes, 1);
        assert_eq!(rep.loops_removed, 1);
        assert!(t.edges.contains(&(th(M), th("8.0.0.1"))));
    }
}
