//! The ε-neighborhood similarity graph and its file formats.

use std::collections::VecDeque;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::SimMatrix;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("epsilon must lie in [0, 1], got {0}")]
    BadEpsilon(f64),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid graph: {0}")]
    Invalid(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphConfig {
    pub epsilon: f64,
}

impl GraphConfig {
    pub fn new(epsilon: f64) -> Result<Self, GraphError> {
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(GraphError::BadEpsilon(epsilon));
        }
        Ok(Self { epsilon })
    }
}

/// Undirected weighted graph without self-loops. Each adjacency list is
/// sorted by neighbor index.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedGraph {
    labels: Vec<String>,
    adj: Vec<Vec<(usize, f64)>>,
}

impl WeightedGraph {
    /// Builds a graph from an undirected edge list. Rejects self-loops,
    /// duplicate edges, out-of-range endpoints and weights outside (0, 1].
    pub fn from_edges(labels: Vec<String>, edges: &[(usize, usize, f64)]) -> Result<Self, GraphError> {
        let n = labels.len();
        let mut adj = vec![Vec::new(); n];
        for &(u, v, w) in edges {
            if u >= n || v >= n {
                return Err(GraphError::Invalid(format!("edge ({u}, {v}) references a node >= {n}")));
            }
            if u == v {
                return Err(GraphError::Invalid(format!("self-loop on node {u}")));
            }
            if !(w > 0.0 && w <= 1.0) {
                return Err(GraphError::Invalid(format!("edge ({u}, {v}) weight {w} outside (0, 1]")));
            }
            adj[u].push((v, w));
            adj[v].push((u, w));
        }
        for (u, list) in adj.iter_mut().enumerate() {
            list.sort_by_key(|&(v, _)| v);
            if list.windows(2).any(|p| p[0].0 == p[1].0) {
                return Err(GraphError::Invalid(format!("duplicate edge at node {u}")));
            }
        }
        Ok(Self { labels, adj })
    }

    /// Unlabeled graph; labels are the node indices.
    pub fn unlabeled(n: usize, edges: &[(usize, usize, f64)]) -> Result<Self, GraphError> {
        Self::from_edges((0..n).map(|i| i.to_string()).collect(), edges)
    }

    pub fn node_count(&self) -> usize {
        self.adj.len()
    }

    pub fn edge_count(&self) -> usize {
        self.adj.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn neighbors(&self, u: usize) -> &[(usize, f64)] {
        &self.adj[u]
    }

    pub fn degree(&self, u: usize) -> usize {
        self.adj[u].len()
    }

    /// Sum of incident edge weights.
    pub fn strength(&self, u: usize) -> f64 {
        self.adj[u].iter().map(|&(_, w)| w).sum()
    }

    pub fn total_weight(&self) -> f64 {
        self.edges().map(|(_, _, w)| w).sum()
    }

    /// Each undirected edge once, as (u, v, w) with u < v, in index order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.adj
            .iter()
            .enumerate()
            .flat_map(|(u, list)| list.iter().filter(move |&&(v, _)| v > u).map(move |&(v, w)| (u, v, w)))
    }

    /// Induced subgraph on `nodes`, relabeled 0..k in the given order.
    pub fn subgraph(&self, nodes: &[usize]) -> WeightedGraph {
        let mut position = vec![usize::MAX; self.node_count()];
        for (k, &u) in nodes.iter().enumerate() {
            position[u] = k;
        }
        let adj = nodes
            .iter()
            .map(|&u| {
                let mut list: Vec<(usize, f64)> = self.adj[u]
                    .iter()
                    .filter(|&&(v, _)| position[v] != usize::MAX)
                    .map(|&(v, w)| (position[v], w))
                    .collect();
                list.sort_by_key(|&(v, _)| v);
                list
            })
            .collect();
        WeightedGraph {
            labels: nodes.iter().map(|&u| self.labels[u].clone()).collect(),
            adj,
        }
    }
}

/// Connects i and j whenever `S[i][j] >= ε`, weighted by the similarity.
/// Non-positive similarities never form edges.
pub fn epsilon_graph(s: &SimMatrix, labels: Vec<String>, cfg: &GraphConfig) -> Result<WeightedGraph, GraphError> {
    let n = s.len();
    if labels.len() != n {
        return Err(GraphError::Invalid(format!("{} labels for {n} nodes", labels.len())));
    }
    if !(0.0..=1.0).contains(&cfg.epsilon) {
        return Err(GraphError::BadEpsilon(cfg.epsilon));
    }
    let adj = (0..n)
        .into_par_iter()
        .map(|i| {
            s.row(i)
                .iter()
                .enumerate()
                .filter(|&(j, &w)| j != i && w >= cfg.epsilon && w > 0.0)
                .map(|(j, &w)| (j, w.min(1.0)))
                .collect()
        })
        .collect();
    Ok(WeightedGraph { labels, adj })
}

/// Connected components, each sorted, ordered by smallest member.
pub fn connected_components(g: &WeightedGraph) -> Vec<Vec<usize>> {
    let n = g.node_count();
    let mut seen = vec![false; n];
    let mut out = Vec::new();
    for start in 0..n {
        if seen[start] {
            continue;
        }
        seen[start] = true;
        let mut comp = vec![start];
        let mut queue = VecDeque::from([start]);
        while let Some(u) = queue.pop_front() {
            for &(v, _) in g.neighbors(u) {
                if !seen[v] {
                    seen[v] = true;
                    comp.push(v);
                    queue.push_back(v);
                }
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeLabel {
    pub index: usize,
    pub id: String,
}

/// Writes `nodes\t<n>` followed by one `src\tdst\tweight` line per edge.
pub fn write_edgelist<W: Write>(g: &WeightedGraph, w: &mut W) -> std::io::Result<()> {
    writeln!(w, "nodes\t{}", g.node_count())?;
    for (u, v, weight) in g.edges() {
        writeln!(w, "{u}\t{v}\t{weight}")?;
    }
    Ok(())
}

pub fn export_edgelist(g: &WeightedGraph, path: impl AsRef<Path>) -> Result<(), GraphError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_edgelist(g, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn export_labels(g: &WeightedGraph, path: impl AsRef<Path>) -> Result<(), GraphError> {
    let mut w = BufWriter::new(File::create(path)?);
    for (index, id) in g.labels().iter().enumerate() {
        let line = serde_json::to_string(&NodeLabel { index, id: id.clone() }).expect("label serializes");
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_edgelist<R: BufRead>(r: R) -> Result<WeightedGraph, GraphError> {
    let mut lines = r.lines().enumerate();
    let parse_err = |line: usize, message: String| GraphError::Parse { line, message };
    let n = loop {
        match lines.next() {
            None => return Err(parse_err(1, "missing node-count header".into())),
            Some((i, line)) => {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let count = line
                    .strip_prefix("nodes\t")
                    .ok_or_else(|| parse_err(i + 1, format!("expected `nodes\\t<n>` header, got {line:?}")))?;
                break count
                    .trim()
                    .parse::<usize>()
                    .map_err(|e| parse_err(i + 1, format!("bad node count: {e}")))?;
            }
        }
    };
    let mut edges = Vec::new();
    for (i, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(parse_err(i + 1, format!("expected 3 tab-separated fields, got {}", fields.len())));
        }
        let u: usize = fields[0].parse().map_err(|e| parse_err(i + 1, format!("bad src: {e}")))?;
        let v: usize = fields[1].parse().map_err(|e| parse_err(i + 1, format!("bad dst: {e}")))?;
        let w: f64 = fields[2].parse().map_err(|e| parse_err(i + 1, format!("bad weight: {e}")))?;
        if u >= n || v >= n {
            return Err(parse_err(i + 1, format!("edge ({u}, {v}) references a node outside 0..{n}")));
        }
        if !(w > 0.0 && w <= 1.0) {
            return Err(parse_err(i + 1, format!("weight {w} outside (0, 1]")));
        }
        edges.push((u, v, w));
    }
    WeightedGraph::unlabeled(n, &edges)
}

/// Reads an edge list and, when given, the JSONL label map.
pub fn import_edgelist(path: impl AsRef<Path>, labels: Option<&Path>) -> Result<WeightedGraph, GraphError> {
    let mut g = read_edgelist(BufReader::new(File::open(path)?))?;
    if let Some(labels) = labels {
        let mut ids = vec![None; g.node_count()];
        for (i, line) in BufReader::new(File::open(labels)?).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let label: NodeLabel = serde_json::from_str(&line).map_err(|e| GraphError::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            let slot = ids.get_mut(label.index).ok_or_else(|| GraphError::Parse {
                line: i + 1,
                message: format!("label index {} outside graph", label.index),
            })?;
            *slot = Some(label.id);
        }
        g.labels = ids
            .into_iter()
            .enumerate()
            .map(|(i, id)| id.ok_or_else(|| GraphError::Invalid(format!("no label for node {i}"))))
            .collect::<Result<_, _>>()?;
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn labels(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("n{i}")).collect()
    }

    fn sim(rows: &[&[f64]]) -> SimMatrix {
        SimMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn epsilon_graph_examples() {
        let s = sim(&[&[1.0, 0.3, 0.2], &[0.3, 1.0, 0.6], &[0.2, 0.6, 1.0]]);
        let g = epsilon_graph(&s, labels(3), &GraphConfig::new(0.0).unwrap()).unwrap();
        assert_eq!(g.edge_count(), 3);

        let g = epsilon_graph(&s, labels(3), &GraphConfig::new(1.0).unwrap()).unwrap();
        assert_eq!(g.edge_count(), 0);
        assert_eq!(g.node_count(), 3);

        let s = sim(&[&[1.0, 0.9, 0.5], &[0.9, 1.0, 0.5], &[0.5, 0.5, 1.0]]);
        let g = epsilon_graph(&s, labels(3), &GraphConfig::new(0.85).unwrap()).unwrap();
        assert_eq!(g.edges().collect::<Vec<_>>(), vec![(0, 1, 0.9)]);
    }

    #[test]
    fn epsilon_is_validated() {
        assert!(GraphConfig::new(-0.1).is_err());
        assert!(GraphConfig::new(1.1).is_err());
    }

    #[test]
    fn components() {
        let edgeless = WeightedGraph::unlabeled(4, &[]).unwrap();
        assert_eq!(connected_components(&edgeless).len(), 4);
        let path = WeightedGraph::unlabeled(3, &[(0, 1, 1.0), (1, 2, 1.0)]).unwrap();
        assert_eq!(connected_components(&path), vec![vec![0, 1, 2]]);
        let two = WeightedGraph::unlabeled(4, &[(0, 3, 1.0), (1, 2, 1.0)]).unwrap();
        assert_eq!(connected_components(&two), vec![vec![0, 3], vec![1, 2]]);
    }

    #[test]
    fn edgelist_validation() {
        let neg = "nodes\t3\n0\t1\t-0.5\n";
        assert!(matches!(read_edgelist(neg.as_bytes()), Err(GraphError::Parse { line: 2, .. })));
        let oob = "nodes\t3\n0\t5\t0.5\n";
        assert!(matches!(read_edgelist(oob.as_bytes()), Err(GraphError::Parse { line: 2, .. })));
        assert!(read_edgelist("0\t1\t0.5\n".as_bytes()).is_err());
        assert!(read_edgelist("nodes\t2\n0\t0\t0.5\n".as_bytes()).is_err());
    }

    #[test]
    fn labels_round_trip_through_files() {
        let g = WeightedGraph::from_edges(labels(3), &[(0, 2, 0.875)]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        export_edgelist(&g, dir.path().join("g.tsv")).unwrap();
        export_labels(&g, dir.path().join("labels.jsonl")).unwrap();
        let back = import_edgelist(dir.path().join("g.tsv"), Some(&dir.path().join("labels.jsonl"))).unwrap();
        assert_eq!(back, g);
    }

    fn sim_strategy() -> impl Strategy<Value = SimMatrix> {
        (1usize..9).prop_flat_map(|n| {
            proptest::collection::vec(-1.0f64..=1.0, n * (n - 1) / 2).prop_map(move |upper| {
                let mut rows = vec![vec![1.0; n]; n];
                let mut k = 0;
                for i in 0..n {
                    for j in i + 1..n {
                        rows[i][j] = upper[k];
                        rows[j][i] = upper[k];
                        k += 1;
                    }
                }
                SimMatrix::from_rows(&rows).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn edge_count_non_increasing_in_epsilon(s in sim_strategy(), a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let n = s.len();
            let g_lo = epsilon_graph(&s, labels(n), &GraphConfig::new(lo).unwrap()).unwrap();
            let g_hi = epsilon_graph(&s, labels(n), &GraphConfig::new(hi).unwrap()).unwrap();
            prop_assert!(g_hi.edge_count() <= g_lo.edge_count());
            for (u, v, w) in g_hi.edges() {
                prop_assert!(w >= hi && w > 0.0 && w <= 1.0);
                prop_assert_eq!(w, s.get(u, v));
            }
            for u in 0..n {
                for &(v, w) in g_lo.neighbors(u) {
                    prop_assert!(g_lo.neighbors(v).contains(&(u, w)));
                    prop_assert_ne!(u, v);
                }
            }
        }

        #[test]
        fn edgelist_round_trip(s in sim_strategy(), eps in 0.0f64..=1.0) {
            let n = s.len();
            let g = epsilon_graph(&s, (0..n).map(|i| i.to_string()).collect(), &GraphConfig::new(eps).unwrap()).unwrap();
            let mut buf = Vec::new();
            write_edgelist(&g, &mut buf).unwrap();
            prop_assert_eq!(read_edgelist(buf.as_slice()).unwrap(), g);
        }
    }

    #[test]
    fn all_ones_gives_complete_graph() {
        let n = 5;
        let s = SimMatrix::from_rows(&vec![vec![1.0; n]; n]).unwrap();
        for eps in [0.0, 0.5, 1.0] {
            let g = epsilon_graph(&s, labels(n), &GraphConfig::new(eps).unwrap()).unwrap();
            assert_eq!(g.edge_count(), n * (n - 1) / 2);
        }
    }
}
