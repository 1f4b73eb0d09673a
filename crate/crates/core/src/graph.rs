//! Weighted undirected user graphs: the synchronization graph (edge weight =
//! CSI-UserPair) and the all-communication graph (edge weight = interaction count).
//!
//! Nodes are stored in lexicographic order of user id and adjacency lists are
//! sorted by neighbor index, so every traversal and export is deterministic.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::io::{Read, Write};

use thiserror::Error;

use crate::bots::{BotScoreTable, UserClass};
use crate::csi::PairScore;
use crate::ingest::InteractionRecord;
use crate::synchrony::UserPair;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("edge row {row}: {reason}")]
    BadRow { row: usize, reason: String },
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct NodeAttrs {
    pub user_class: Option<UserClass>,
    pub csi_user: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct UserGraph {
    names: Vec<String>,
    index: HashMap<String, usize>,
    adj: Vec<Vec<(usize, f64)>>,
    attrs: Vec<NodeAttrs>,
    edge_count: usize,
}

/// Graph whose edges carry CSI-UserPair weights.
pub type SyncGraph = UserGraph;
/// Graph over all observed users whose edges carry interaction counts.
pub type AllCommGraph = UserGraph;

impl UserGraph {
    /// Builds a graph from a node list and undirected weighted edges. Edge endpoints
    /// are added as nodes if missing; self-loops are ignored.
    pub fn from_edges<I, S>(nodes: I, edges: &BTreeMap<UserPair, f64>) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut all: BTreeSet<String> = nodes.into_iter().map(Into::into).collect();
        for pair in edges.keys() {
            all.insert(pair.first().to_string());
            all.insert(pair.second().to_string());
        }
        let names: Vec<String> = all.into_iter().collect();
        let index: HashMap<String, usize> = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        let mut adj = vec![Vec::new(); names.len()];
        for (pair, &w) in edges {
            let (a, b) = (index[pair.first()], index[pair.second()]);
            adj[a].push((b, w));
            adj[b].push((a, w));
        }
        for list in &mut adj {
            list.sort_by_key(|&(n, _)| n);
        }
        let attrs = vec![NodeAttrs::default(); names.len()];
        UserGraph { names, index, adj, attrs, edge_count: edges.len() }
    }

    pub fn node_count(&self) -> usize {
        self.names.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, node: usize) -> &str {
        &self.names[node]
    }

    pub fn index_of(&self, user: &str) -> Option<usize> {
        self.index.get(user).copied()
    }

    pub fn neighbors(&self, node: usize) -> &[(usize, f64)] {
        &self.adj[node]
    }

    pub fn degree(&self, node: usize) -> usize {
        self.adj[node].len()
    }

    pub fn attrs(&self, node: usize) -> &NodeAttrs {
        &self.attrs[node]
    }

    pub fn weight(&self, a: &str, b: &str) -> Option<f64> {
        let (a, b) = (self.index_of(a)?, self.index_of(b)?);
        self.adj[a].binary_search_by_key(&b, |&(n, _)| n).ok().map(|i| self.adj[a][i].1)
    }

    /// Each undirected edge once as `(lower index, higher index, weight)`, in lexicographic order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.adj
            .iter()
            .enumerate()
            .flat_map(|(a, list)| list.iter().filter(move |&&(b, _)| b > a).map(move |&(b, w)| (a, b, w)))
    }

    pub fn edge_map(&self) -> BTreeMap<UserPair, f64> {
        self.edges()
            .map(|(a, b, w)| (UserPair::new(self.names[a].as_str(), self.names[b].as_str()).expect("no self-loops"), w))
            .collect()
    }

    pub fn set_classes(&mut self, bots: &BotScoreTable) {
        for (i, name) in self.names.iter().enumerate() {
            self.attrs[i].user_class = Some(bots.class_of(name));
        }
    }

    pub fn set_csi_user(&mut self, scores: &BTreeMap<String, f64>) {
        for (i, name) in self.names.iter().enumerate() {
            self.attrs[i].csi_user = scores.get(name).copied();
        }
    }

    /// Subgraph induced by `keep`, carrying node attributes along.
    pub fn induced_by(&self, keep: &[bool]) -> UserGraph {
        let nodes = self.names.iter().zip(keep).filter(|(_, &k)| k).map(|(n, _)| n.clone());
        let edges: BTreeMap<UserPair, f64> = self
            .edges()
            .filter(|&(a, b, _)| keep[a] && keep[b])
            .map(|(a, b, w)| (UserPair::new(self.names[a].as_str(), self.names[b].as_str()).expect("no self-loops"), w))
            .collect();
        let mut g = UserGraph::from_edges(nodes, &edges);
        for (i, name) in g.names.iter().enumerate() {
            g.attrs[i] = self.attrs[self.index[name]];
        }
        g
    }
}

/// One node per synchronizing user, one edge per scored pair.
pub fn build_sync_graph(pair_scores: &BTreeMap<UserPair, PairScore>) -> SyncGraph {
    let edges: BTreeMap<UserPair, f64> = pair_scores.iter().map(|(p, s)| (p.clone(), s.csi_userpair)).collect();
    UserGraph::from_edges(std::iter::empty::<String>(), &edges)
}

/// Interaction counts summed over both directions; self-interactions are dropped.
/// `users` adds nodes for authors that never interacted.
pub fn build_allcomm_graph<'a, I>(interactions: &[InteractionRecord], users: I) -> AllCommGraph
where
    I: IntoIterator<Item = &'a str>,
{
    let mut edges: BTreeMap<UserPair, f64> = BTreeMap::new();
    let mut nodes: BTreeSet<String> = users.into_iter().map(str::to_string).collect();
    for rec in interactions {
        nodes.insert(rec.source_user.clone());
        nodes.insert(rec.target_user.clone());
        if let Some(pair) = UserPair::new(rec.source_user.as_str(), rec.target_user.as_str()) {
            *edges.entry(pair).or_default() += 1.0;
        }
    }
    UserGraph::from_edges(nodes, &edges)
}

/// Iteratively drops nodes with fewer than `min_partners` neighbors (the k-core).
pub fn prune_by_partner_count(graph: &SyncGraph, min_partners: usize) -> SyncGraph {
    let n = graph.node_count();
    let mut degree: Vec<usize> = (0..n).map(|i| graph.degree(i)).collect();
    let mut alive = vec![true; n];
    let mut queue: VecDeque<usize> = (0..n).filter(|&i| degree[i] < min_partners).collect();
    for &i in &queue {
        alive[i] = false;
    }
    while let Some(v) = queue.pop_front() {
        for &(w, _) in graph.neighbors(v) {
            if alive[w] {
                degree[w] -= 1;
                if degree[w] < min_partners {
                    alive[w] = false;
                    queue.push_back(w);
                }
            }
        }
    }
    graph.induced_by(&alive)
}

/// Nodes of one class and the edges between them. Nodes without a class belong to no partition.
pub fn induced_subgraph(graph: &SyncGraph, class: UserClass) -> SyncGraph {
    let keep: Vec<bool> = (0..graph.node_count()).map(|i| graph.attrs(i).user_class == Some(class)).collect();
    graph.induced_by(&keep)
}

fn xml_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

fn dot_escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

fn class_label(attrs: &NodeAttrs) -> &'static str {
    attrs.user_class.unwrap_or(UserClass::Unknown).as_str()
}

pub fn write_graphml<W: Write>(graph: &UserGraph, mut out: W) -> Result<(), GraphError> {
    writeln!(out, r#"<?xml version="1.0" encoding="UTF-8"?>"#)?;
    writeln!(out, r#"<graphml xmlns="http://graphml.graphdrawing.org/xmlns">"#)?;
    writeln!(out, r#"  <key id="weight" for="edge" attr.name="weight" attr.type="double"/>"#)?;
    writeln!(out, r#"  <key id="user_class" for="node" attr.name="user_class" attr.type="string"/>"#)?;
    writeln!(out, r#"  <key id="csi_user" for="node" attr.name="csi_user" attr.type="double"/>"#)?;
    writeln!(out, r#"  <graph id="G" edgedefault="undirected">"#)?;
    for (i, name) in graph.names().iter().enumerate() {
        let attrs = graph.attrs(i);
        write!(out, r#"    <node id="{}"><data key="user_class">{}</data>"#, xml_escape(name), class_label(attrs))?;
        if let Some(s) = attrs.csi_user {
            write!(out, r#"<data key="csi_user">{s}</data>"#)?;
        }
        writeln!(out, "</node>")?;
    }
    for (a, b, w) in graph.edges() {
        writeln!(
            out,
            r#"    <edge source="{}" target="{}"><data key="weight">{w}</data></edge>"#,
            xml_escape(graph.name(a)),
            xml_escape(graph.name(b))
        )?;
    }
    writeln!(out, "  </graph>")?;
    writeln!(out, "</graphml>")?;
    Ok(())
}

pub fn write_dot<W: Write>(graph: &UserGraph, mut out: W) -> Result<(), GraphError> {
    writeln!(out, "graph G {{")?;
    for (i, name) in graph.names().iter().enumerate() {
        let attrs = graph.attrs(i);
        write!(out, "  \"{}\" [user_class=\"{}\"", dot_escape(name), class_label(attrs))?;
        if let Some(s) = attrs.csi_user {
            write!(out, ", csi_user={s}")?;
        }
        writeln!(out, "];")?;
    }
    for (a, b, w) in graph.edges() {
        writeln!(out, "  \"{}\" -- \"{}\" [weight={w}];", dot_escape(graph.name(a)), dot_escape(graph.name(b)))?;
    }
    writeln!(out, "}}")?;
    Ok(())
}

/// `user_u,user_v,weight`; isolated nodes are not represented.
pub fn write_edge_csv<W: Write>(graph: &UserGraph, out: W) -> Result<(), GraphError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["user_u", "user_v", "weight"])?;
    for (a, b, weight) in graph.edges() {
        w.write_record([graph.name(a), graph.name(b), &weight.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_edge_csv<R: Read>(input: R) -> Result<UserGraph, GraphError> {
    let mut rdr = csv::Reader::from_reader(input);
    let mut edges = BTreeMap::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let bad = |reason: String| GraphError::BadRow { row: i + 2, reason };
        if row.len() != 3 {
            return Err(bad(format!("expected 3 fields, got {}", row.len())));
        }
        let pair = UserPair::new(&row[0], &row[1]).ok_or_else(|| bad("self-loop".into()))?;
        let w: f64 = row[2].parse().map_err(|e| bad(format!("weight: {e}")))?;
        edges.insert(pair, w);
    }
    Ok(UserGraph::from_edges(std::iter::empty::<String>(), &edges))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::ingest::InteractionType;

    pub(crate) fn graph(edges: &[(&str, &str)]) -> UserGraph {
        let map: BTreeMap<UserPair, f64> = edges.iter().map(|&(a, b)| (UserPair::new(a, b).unwrap(), 1.0)).collect();
        UserGraph::from_edges(std::iter::empty::<String>(), &map)
    }

    pub(crate) fn complete(n: usize) -> UserGraph {
        let names: Vec<String> = (0..n).map(|i| format!("n{i:02}")).collect();
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                edges.push((names[i].as_str(), names[j].as_str()));
            }
        }
        graph(&edges)
    }

    fn score(w: f64) -> PairScore {
        PairScore { num_action_types: 1, s_total: 1, csi_userpair: w }
    }

    #[test]
    fn sync_graph_counts_and_weights() {
        let scores: BTreeMap<UserPair, PairScore> = [
            (UserPair::new("a", "b").unwrap(), score(8.0)),
            (UserPair::new("b", "c").unwrap(), score(1.0)),
            (UserPair::new("c", "d").unwrap(), score(2.0)),
        ]
        .into();
        let g = build_sync_graph(&scores);
        assert_eq!((g.node_count(), g.edge_count()), (4, 3));
        assert_eq!(g.weight("a", "b"), Some(8.0));
        assert_eq!(g.weight("b", "a"), Some(8.0));
        let back: BTreeMap<UserPair, f64> = scores.iter().map(|(p, s)| (p.clone(), s.csi_userpair)).collect();
        assert_eq!(g.edge_map(), back);
        assert!(build_sync_graph(&BTreeMap::new()).is_empty());
    }

    fn inter(s: &str, t: &str, kind: InteractionType) -> InteractionRecord {
        InteractionRecord { source_user: s.into(), target_user: t.into(), interaction_type: kind, timestamp: 0 }
    }

    #[test]
    fn allcomm_sums_both_directions() {
        let recs = [
            inter("u", "v", InteractionType::Retweet),
            inter("u", "v", InteractionType::Retweet),
            inter("v", "u", InteractionType::Mention),
            inter("w", "w", InteractionType::Retweet),
        ];
        let g = build_allcomm_graph(&recs, ["x"]);
        assert_eq!(g.weight("u", "v"), Some(3.0));
        assert_eq!(g.edge_count(), 1);
        assert_eq!(g.node_count(), 4);

        let lonely = build_allcomm_graph(&[], ["a", "b"]);
        assert_eq!((lonely.node_count(), lonely.edge_count()), (2, 0));
    }

    #[test]
    fn prune_star_and_complete() {
        let star = graph(&[("c", "l1"), ("c", "l2"), ("c", "l3"), ("c", "l4")]);
        assert!(prune_by_partner_count(&star, 5).is_empty());
        assert_eq!(prune_by_partner_count(&star, 0), star);
        let k6 = complete(6);
        assert_eq!(prune_by_partner_count(&k6, 5), k6);
    }

    #[test]
    fn prune_is_a_fixed_point() {
        // K4 with a pendant path hanging off it
        let g =
            graph(&[("a", "b"), ("a", "c"), ("a", "d"), ("b", "c"), ("b", "d"), ("c", "d"), ("d", "e"), ("e", "f")]);
        let core = prune_by_partner_count(&g, 3);
        assert_eq!(core.names(), &["a", "b", "c", "d"]);
        assert!((0..core.node_count()).all(|i| core.degree(i) >= 3));
        assert_eq!(prune_by_partner_count(&core, 3), core);
    }

    #[test]
    fn class_partitions() {
        let mut g = graph(&[("b1", "b2"), ("b1", "h1"), ("h1", "h2"), ("h2", "x")]);
        let bots = BotScoreTable::from_scores([("b1", 0.9), ("b2", 0.8), ("h1", 0.1), ("h2", 0.7)], 0.7).unwrap();
        g.set_classes(&bots);
        let b = induced_subgraph(&g, UserClass::Bot);
        let h = induced_subgraph(&g, UserClass::Human);
        assert_eq!(b.edge_map().keys().map(ToString::to_string).collect::<Vec<_>>(), vec!["{b1, b2}"]);
        assert_eq!(h.edge_map().keys().map(ToString::to_string).collect::<Vec<_>>(), vec!["{h1, h2}"]);
        assert_eq!(h.node_count(), 2);
        // one cross edge (b1,h1) and one edge touching an unscored user
        assert_eq!(b.edge_count() + h.edge_count() + 2, g.edge_count());

        let all_human = {
            let mut g = graph(&[("h1", "h2")]);
            g.set_classes(&bots);
            g
        };
        assert!(induced_subgraph(&all_human, UserClass::Bot).is_empty());
    }

    #[test]
    fn graphml_and_dot_exports() {
        let mut g = graph(&[("a", "b"), ("b", "c"), ("c", "d")]);
        g.set_csi_user(&[("a".to_string(), 2.5)].into());
        let mut buf = Vec::new();
        write_graphml(&g, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.matches("<node ").count(), 4);
        assert_eq!(text.matches("<edge ").count(), 3);
        assert!(text
            .contains(r#"<node id="a"><data key="user_class">unknown</data><data key="csi_user">2.5</data></node>"#));

        let mut buf = Vec::new();
        write_dot(&g, &mut buf).unwrap();
        let dot = String::from_utf8(buf).unwrap();
        assert_eq!(dot.matches(" -- ").count(), 3);

        let mut buf = Vec::new();
        write_graphml(&UserGraph::default(), &mut buf).unwrap();
        let empty = String::from_utf8(buf).unwrap();
        assert!(!empty.contains("<node ") && empty.contains("</graphml>"));
    }

    #[test]
    fn edge_csv_round_trip_is_identical() {
        let map: BTreeMap<UserPair, f64> = [
            (UserPair::new("a", "b").unwrap(), 8.0),
            (UserPair::new("a", "c").unwrap(), 0.1 + 0.2),
            (UserPair::new("q\"x", "z,y").unwrap(), 1e-7),
        ]
        .into();
        let g = UserGraph::from_edges(std::iter::empty::<String>(), &map);
        let mut first = Vec::new();
        write_edge_csv(&g, &mut first).unwrap();
        let back = read_edge_csv(first.as_slice()).unwrap();
        let mut second = Vec::new();
        write_edge_csv(&back, &mut second).unwrap();
        assert_eq!(first, second);
        assert_eq!(back.edge_map(), map);
    }
}
