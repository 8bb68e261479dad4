//! CSV tables and Graphviz DOT renderings.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{Display, Write as _};
use std::io::{self, Write};
use std::net::Ipv4Addr;

use crate::analytics::{discovery_time, union_graph, EventGraph, NewAddressComponent, RoundRange, Series};
use crate::model::{FilteredTree, RadarDataset, RawTraceTree, TreeHop};

fn finish<W: Write>(w: csv::Writer<W>) -> io::Result<()> {
    w.into_inner().map_err(|e| e.into_error())?.flush()
}

/// `round,value` rows.
pub fn write_series_csv<W: Write>(out: W, series: &Series) -> io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["round", "value"])?;
    for (i, v) in series.points() {
        w.serialize((i, v))?;
    }
    finish(w)
}

/// `<key>,count` rows.
pub fn write_histogram_csv<W: Write, K: Display>(out: W, key: &str, hist: &BTreeMap<K, usize>) -> io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([key, "count"])?;
    for (k, n) in hist {
        w.write_record([k.to_string(), n.to_string()])?;
    }
    finish(w)
}

/// One row per component; addresses are space separated.
pub fn write_components_csv<W: Write>(out: W, components: &[NewAddressComponent]) -> io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["component", "size", "first_round", "last_round", "discovery_time", "addresses"])?;
    for (i, c) in components.iter().enumerate() {
        let addrs: Vec<String> = c.addresses.iter().map(Ipv4Addr::to_string).collect();
        w.write_record([
            i.to_string(),
            c.size().to_string(),
            c.first_round.to_string(),
            c.last_round.to_string(),
            discovery_time(c).to_string(),
            addrs.join(" "),
        ])?;
    }
    finish(w)
}

pub fn write_pairs_csv<W: Write>(out: W, pairs: &[(usize, u64)]) -> io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["size", "discovery_time"])?;
    for p in pairs {
        w.serialize(p)?;
    }
    finish(w)
}

/// Several step curves in long format: `series,x,y`.
pub fn write_curves_csv<W: Write>(out: W, curves: &[(&str, &[(u64, usize)])]) -> io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["series", "x", "y"])?;
    for (name, points) in curves {
        for (x, y) in points.iter() {
            w.serialize((name, x, y))?;
        }
    }
    finish(w)
}

fn quote(s: impl Display) -> String {
    format!("\"{}\"", s.to_string().replace('"', "\\\""))
}

pub fn filtered_tree_dot(tree: &FilteredTree) -> String {
    let mut s = String::from("digraph tree {\n  rankdir=TB;\n");
    for n in &tree.nodes {
        let attrs = match n {
            _ if *n == tree.root => " [shape=box]",
            TreeHop::Star(_) => " [label=\"*\", shape=plaintext]",
            TreeHop::Ip(_) => "",
        };
        let _ = writeln!(s, "  {}{attrs};", quote(n));
    }
    for (p, c) in &tree.edges {
        let _ = writeln!(s, "  {} -> {};", quote(p), quote(c));
    }
    s.push_str("}\n");
    s
}

pub fn raw_tree_dot(raw: &RawTraceTree) -> String {
    let mut s = String::from("digraph raw {\n  rankdir=BT;\n");
    for n in raw.nodes() {
        let label = format!("{}@{}", n.hop, n.ttl);
        let _ = writeln!(s, "  {} [label={}];", quote(n), quote(label));
    }
    for (a, b) in raw.edges() {
        let _ = writeln!(s, "  {} -> {};", quote(a), quote(b));
    }
    s.push_str("}\n");
    s
}

/// Links new in the event round are bold black; new addresses are filled.
pub fn event_graph_dot(g: &EventGraph) -> String {
    let mut s = format!(
        "digraph event {{\n  label={};\n  node [shape=circle, fontsize=8];\n",
        quote(format!("round {} against {}", g.event_round, g.before))
    );
    for n in &g.nodes {
        let attrs = if g.new_nodes.contains(n) {
            " [style=filled, fillcolor=black, fontcolor=white]"
        } else {
            ""
        };
        let _ = writeln!(s, "  {}{attrs};", quote(n));
    }
    for ((a, b), new) in &g.edges {
        let attrs = if *new {
            " [color=black, penwidth=3]"
        } else {
            " [color=gray]"
        };
        let _ = writeln!(s, "  {} -> {}{attrs};", quote(a), quote(b));
    }
    s.push_str("}\n");
    s
}

/// Components with their direct neighbours in the observation union graph.
/// Component members are filled black.
pub fn components_dot(dataset: &RadarDataset, observation: RoundRange, components: &[NewAddressComponent]) -> String {
    let members: BTreeSet<Ipv4Addr> = components.iter().flat_map(|c| c.addresses.iter().copied()).collect();
    let (_, edges) = union_graph(dataset, observation);
    let shown: Vec<_> = edges
        .into_iter()
        .filter(|(a, b)| members.contains(a) || members.contains(b))
        .collect();
    let mut nodes: BTreeSet<Ipv4Addr> = members.clone();
    for (a, b) in &shown {
        nodes.insert(*a);
        nodes.insert(*b);
    }
    let mut s = String::from("graph components {\n  node [shape=circle, fontsize=8];\n");
    for n in &nodes {
        let attrs = if members.contains(n) {
            " [style=filled, fillcolor=black, fontcolor=white]"
        } else {
            ""
        };
        let _ = writeln!(s, "  {}{attrs};", quote(n));
    }
    for (a, b) in &shown {
        let _ = writeln!(s, "  {} -- {};", quote(a), quote(b));
    }
    s.push_str("}\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn text(f: impl FnOnce(&mut Vec<u8>) -> io::Result<()>) -> String {
        let mut buf = Vec::new();
        f(&mut buf).unwrap();
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn series_csv() {
        let s = Series::from_values([4, 5]);
        assert_eq!(text(|b| write_series_csv(b, &s)), "round,value\n0,4\n1,5\n");
    }

    #[test]
    fn histogram_and_curves_csv() {
        let h = BTreeMap::from([(1usize, 4usize), (9, 1)]);
        assert_eq!(text(|b| write_histogram_csv(b, "size", &h)), "size,count\n1,4\n9,1\n");
        let c = [("tracetree", &[(10u64, 3usize)][..])];
        assert_eq!(text(|b| write_curves_csv(b, &c)), "series,x,y\ntracetree,10,3\n");
    }

    #[test]
    fn components_csv() {
        let c = NewAddressComponent {
            addresses: BTreeSet::from([Ipv4Addr::new(10, 0, 0, 1), Ipv4Addr::new(10, 0, 0, 2)]),
            first_round: 3,
            last_round: 4,
        };
        assert_eq!(
            text(|b| write_components_csv(b, &[c])),
            "component,size,first_round,last_round,discovery_time,addresses\n0,2,3,4,2,10.0.0.1 10.0.0.2\n"
        );
    }

    #[test]
    fn tree_dot() {
        let m = Ipv4Addr::new(10, 0, 0, 1);
        let mut t = FilteredTree::empty(m);
        let x = TreeHop::Ip(Ipv4Addr::new(10, 0, 0, 2));
        t.nodes.insert(x.clone());
        t.edges.insert((t.root.clone(), x));
        let dot = filtered_tree_dot(&t);
        assert!(dot.contains("\"10.0.0.1\" -> \"10.0.0.2\";"));
        assert!(dot.starts_with("digraph"));
    }
}
