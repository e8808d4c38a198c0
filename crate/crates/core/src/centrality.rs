//! Node centralities on a cluster's ε-graph and the Multi-Centrality Index.

use std::collections::VecDeque;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::simgraph::WeightedGraph;

#[derive(Debug, Error)]
pub enum CentralityError {
    #[error("damping must lie in (0, 1), got {0}")]
    BadDamping(f64),
    #[error("pagerank did not converge in {iterations} iterations (last L1 change {delta:e})")]
    NotConverged {
        iterations: usize,
        delta: f64,
        last: Vec<f64>,
    },
    #[error("engagement covers {got} nodes, graph has {expected}")]
    EngagementMismatch { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Measure {
    Degree,
    PageRank,
    Betweenness,
    #[serde(rename = "MCI")]
    Mci,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CentralityScores {
    pub measure: Measure,
    pub scores: Vec<f64>,
}

impl CentralityScores {
    /// Index of the highest score. Ties are broken by `tie_key`, smallest
    /// first.
    pub fn argmax_by<K: Ord>(&self, tie_key: impl Fn(usize) -> K) -> Option<usize> {
        (0..self.scores.len()).reduce(|best, i| {
            match self.scores[i].total_cmp(&self.scores[best]) {
                std::cmp::Ordering::Greater => i,
                std::cmp::Ordering::Equal if tie_key(i) < tie_key(best) => i,
                _ => best,
            }
        })
    }
}

/// Repost and like counts per node.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EngagementVector {
    pub reposts: Vec<u64>,
    pub likes: Vec<u64>,
}

impl EngagementVector {
    pub fn len(&self) -> usize {
        self.reposts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reposts.is_empty()
    }
}

/// Number of incident edges per node.
pub fn degree_centrality(g: &WeightedGraph) -> CentralityScores {
    CentralityScores {
        measure: Measure::Degree,
        scores: (0..g.node_count()).map(|u| g.degree(u) as f64).collect(),
    }
}

/// Weighted strength per node, the weighted counterpart of degree.
pub fn strength_centrality(g: &WeightedGraph) -> CentralityScores {
    CentralityScores {
        measure: Measure::Degree,
        scores: (0..g.node_count()).map(|u| g.strength(u)).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PageRankParams {
    pub damping: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PageRankParams {
    fn default() -> Self {
        Self {
            damping: 0.85,
            tol: 1e-9,
            max_iter: 1000,
        }
    }
}

/// Power iteration on the weight-normalized random walk. Nodes without
/// edges spread their mass uniformly.
pub fn pagerank(g: &WeightedGraph, params: &PageRankParams) -> Result<CentralityScores, CentralityError> {
    let d = params.damping;
    if !(d > 0.0 && d < 1.0) {
        return Err(CentralityError::BadDamping(d));
    }
    let n = g.node_count();
    if n == 0 {
        return Ok(CentralityScores {
            measure: Measure::PageRank,
            scores: Vec::new(),
        });
    }
    let nf = n as f64;
    let strength: Vec<f64> = (0..n).map(|u| g.strength(u)).collect();
    let mut x = vec![1.0 / nf; n];
    let mut next = vec![0.0; n];
    let mut change = f64::INFINITY;
    for _ in 0..params.max_iter {
        let dangling: f64 = (0..n).filter(|&u| strength[u] == 0.0).map(|u| x[u]).sum();
        let base = (1.0 - d) / nf + d * dangling / nf;
        for (v, slot) in next.iter_mut().enumerate() {
            let inflow: f64 = g.neighbors(v).iter().map(|&(u, w)| x[u] * w / strength[u]).sum();
            *slot = base + d * inflow;
        }
        let total: f64 = next.iter().sum();
        next.iter_mut().for_each(|v| *v /= total);
        change = x.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
        std::mem::swap(&mut x, &mut next);
        if change < params.tol {
            return Ok(CentralityScores {
                measure: Measure::PageRank,
                scores: x,
            });
        }
    }
    Err(CentralityError::NotConverged {
        iterations: params.max_iter,
        delta: change,
        last: x,
    })
}

/// Brandes betweenness over unweighted shortest paths; each unordered pair
/// of endpoints counts once.
pub fn betweenness(g: &WeightedGraph) -> CentralityScores {
    let n = g.node_count();
    let mut cb = vec![0.0; n];
    let mut stack = Vec::with_capacity(n);
    let mut preds: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut sigma = vec![0.0f64; n];
    let mut dist = vec![-1i64; n];
    let mut delta = vec![0.0; n];
    let mut queue = VecDeque::new();
    for s in 0..n {
        stack.clear();
        for p in preds.iter_mut() {
            p.clear();
        }
        sigma.fill(0.0);
        dist.fill(-1);
        delta.fill(0.0);
        sigma[s] = 1.0;
        dist[s] = 0;
        queue.push_back(s);
        while let Some(v) = queue.pop_front() {
            stack.push(v);
            for &(w, _) in g.neighbors(v) {
                if dist[w] < 0 {
                    dist[w] = dist[v] + 1;
                    queue.push_back(w);
                }
                if dist[w] == dist[v] + 1 {
                    sigma[w] += sigma[v];
                    preds[w].push(v);
                }
            }
        }
        while let Some(w) = stack.pop() {
            for &v in &preds[w] {
                delta[v] += sigma[v] / sigma[w] * (1.0 + delta[w]);
            }
            if w != s {
                cb[w] += delta[w];
            }
        }
    }
    CentralityScores {
        measure: Measure::Betweenness,
        scores: cb.into_iter().map(|c| c / 2.0).collect(),
    }
}

/// Population z-scores; a signal whose spread is negligible against its
/// magnitude contributes zeros.
fn z_scores(values: &[f64]) -> Vec<f64> {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    if sd <= 1e-9 * mean.abs().max(1.0) {
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| (v - mean) / sd).collect()
}

/// Sum of the z-scores of degree, PageRank, betweenness, reposts and likes.
pub fn mci(g: &WeightedGraph, eng: &EngagementVector) -> Result<CentralityScores, CentralityError> {
    let n = g.node_count();
    if eng.reposts.len() != n || eng.likes.len() != n {
        return Err(CentralityError::EngagementMismatch {
            expected: n,
            got: eng.reposts.len().min(eng.likes.len()),
        });
    }
    let pr = pagerank(g, &PageRankParams::default())?;
    mci_from_signals(&[
        degree_centrality(g).scores,
        pr.scores,
        betweenness(g).scores,
        eng.reposts.iter().map(|&c| c as f64).collect(),
        eng.likes.iter().map(|&c| c as f64).collect(),
    ])
}

/// Equal-weight sum of standardized signals, one slice per signal.
pub fn mci_from_signals(signals: &[Vec<f64>]) -> Result<CentralityScores, CentralityError> {
    let n = signals.first().map_or(0, Vec::len);
    let mut total = vec![0.0; n];
    if n > 0 {
        for signal in signals {
            if signal.len() != n {
                return Err(CentralityError::EngagementMismatch {
                    expected: n,
                    got: signal.len(),
                });
            }
            for (t, z) in total.iter_mut().zip(z_scores(signal)) {
                *t += z;
            }
        }
    }
    Ok(CentralityScores {
        measure: Measure::Mci,
        scores: total,
    })
}

#[derive(Debug, Serialize)]
struct ScoreRow<'a> {
    post_id: &'a str,
    measure: Measure,
    score: f64,
}

/// One JSONL row `{post_id, measure, score}` per node.
pub fn write_scores<W: Write>(w: &mut W, g: &WeightedGraph, scores: &CentralityScores) -> std::io::Result<()> {
    for (id, &score) in g.labels().iter().zip(&scores.scores) {
        let row = ScoreRow {
            post_id: id,
            measure: scores.measure,
            score,
        };
        writeln!(w, "{}", serde_json::to_string(&row).expect("score row serializes"))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn graph(n: usize, edges: &[(usize, usize)]) -> WeightedGraph {
        let e: Vec<_> = edges.iter().map(|&(u, v)| (u, v, 1.0)).collect();
        WeightedGraph::unlabeled(n, &e).unwrap()
    }

    fn star() -> WeightedGraph {
        graph(4, &[(0, 1), (0, 2), (0, 3)])
    }

    fn triangle() -> WeightedGraph {
        graph(3, &[(0, 1), (1, 2), (0, 2)])
    }

    /// Dense Google-matrix iteration, written independently of `pagerank`.
    fn dense_pagerank(g: &WeightedGraph, d: f64, iters: usize) -> Vec<f64> {
        let n = g.node_count();
        let mut m = vec![vec![0.0; n]; n];
        for (u, row) in m.iter_mut().enumerate() {
            let s = g.strength(u);
            for v in 0..n {
                row[v] = if s == 0.0 { 1.0 / n as f64 } else { 0.0 };
            }
            for &(v, w) in g.neighbors(u) {
                row[v] = w / s;
            }
        }
        let mut x = vec![1.0 / n as f64; n];
        for _ in 0..iters {
            x = (0..n)
                .map(|v| (1.0 - d) / n as f64 + d * (0..n).map(|u| x[u] * m[u][v]).sum::<f64>())
                .collect();
        }
        x
    }

    #[test]
    fn degree_examples() {
        assert_eq!(degree_centrality(&star()).scores, vec![3.0, 1.0, 1.0, 1.0]);
        assert_eq!(degree_centrality(&graph(3, &[])).scores, vec![0.0; 3]);
        assert_eq!(degree_centrality(&triangle()).scores, vec![2.0; 3]);
    }

    #[test]
    fn pagerank_examples() {
        let p = pagerank(&triangle(), &PageRankParams::default()).unwrap();
        assert!(p.scores.iter().all(|s| (s - 1.0 / 3.0).abs() < 1e-8));

        let p = pagerank(&graph(2, &[]), &PageRankParams::default()).unwrap();
        assert_eq!(p.scores, vec![0.5, 0.5]);

        let path = graph(3, &[(0, 1), (1, 2)]);
        let p = pagerank(&path, &PageRankParams::default()).unwrap();
        let oracle = dense_pagerank(&path, 0.85, 500);
        for (a, b) in p.scores.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-8);
        }
        assert!(p.scores[1] > p.scores[0] && p.scores[1] > p.scores[2]);
    }

    #[test]
    fn pagerank_rejects_bad_damping_and_reports_non_convergence() {
        assert!(matches!(
            pagerank(&triangle(), &PageRankParams { damping: 1.0, ..Default::default() }),
            Err(CentralityError::BadDamping(_))
        ));
        let path = graph(4, &[(0, 1), (1, 2), (2, 3)]);
        match pagerank(&path, &PageRankParams { max_iter: 2, tol: 1e-15, ..Default::default() }) {
            Err(CentralityError::NotConverged { last, .. }) => assert_eq!(last.len(), 4),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn betweenness_examples() {
        assert_eq!(betweenness(&graph(3, &[(0, 1), (1, 2)])).scores, vec![0.0, 1.0, 0.0]);
        assert_eq!(
            betweenness(&graph(4, &[(0, 1), (1, 2), (2, 3)])).scores,
            vec![0.0, 2.0, 2.0, 0.0]
        );
        let k5: Vec<_> = (0..5).flat_map(|i| (i + 1..5).map(move |j| (i, j))).collect();
        assert_eq!(betweenness(&graph(5, &k5)).scores, vec![0.0; 5]);
        // 4-cycle: each node mediates half of one opposite pair.
        assert_eq!(betweenness(&graph(4, &[(0, 1), (1, 2), (2, 3), (3, 0)])).scores, vec![0.5; 4]);
    }

    #[test]
    fn mci_examples() {
        let constant = mci_from_signals(&[vec![2.0; 3], vec![1.0 / 3.0; 3], vec![0.0; 3], vec![5.0; 3], vec![1.0; 3]])
            .unwrap();
        assert_eq!(constant.scores, vec![0.0; 3]);

        let two = mci_from_signals(&[
            vec![1.0, 1.0],
            vec![0.5, 0.5],
            vec![0.0, 0.0],
            vec![10.0, 0.0],
            vec![10.0, 0.0],
        ])
        .unwrap();
        assert_eq!(two.scores, vec![2.0, -2.0]);

        let eq = EngagementVector {
            reposts: vec![3; 4],
            likes: vec![7; 4],
        };
        let s = mci(&star(), &eq).unwrap();
        assert_eq!(s.argmax_by(|i| i), Some(0));
        assert!(s.scores[0] > s.scores[1]);

        let single = graph(1, &[]);
        let s = mci(&single, &EngagementVector { reposts: vec![4], likes: vec![9] }).unwrap();
        assert_eq!(s.scores, vec![0.0]);
    }

    #[test]
    fn mci_constant_on_symmetric_graph() {
        let eq = EngagementVector {
            reposts: vec![1; 3],
            likes: vec![1; 3],
        };
        assert_eq!(mci(&triangle(), &eq).unwrap().scores, vec![0.0; 3]);
    }

    #[test]
    fn argmax_ties_use_key() {
        let s = CentralityScores {
            measure: Measure::Degree,
            scores: vec![1.0, 3.0, 3.0],
        };
        assert_eq!(s.argmax_by(|i| i), Some(1));
        assert_eq!(s.argmax_by(|i| std::cmp::Reverse(i)), Some(2));
    }

    fn random_graph() -> impl Strategy<Value = WeightedGraph> {
        (2usize..10).prop_flat_map(|n| {
            proptest::collection::vec(proptest::option::of(0.05f64..=1.0), n * (n - 1) / 2).prop_map(move |ws| {
                let mut edges = Vec::new();
                let mut k = 0;
                for i in 0..n {
                    for j in i + 1..n {
                        if let Some(w) = ws[k] {
                            edges.push((i, j, w));
                        }
                        k += 1;
                    }
                }
                WeightedGraph::unlabeled(n, &edges).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn pagerank_sums_to_one_and_ignores_weight_scale(g in random_graph(), scale in 0.05f64..1.0) {
            let p = pagerank(&g, &PageRankParams::default()).unwrap();
            prop_assert!((p.scores.iter().sum::<f64>() - 1.0).abs() < 1e-8);
            prop_assert!(p.scores.iter().all(|&s| s > 0.0));
            let scaled_edges: Vec<_> = g.edges().map(|(u, v, w)| (u, v, w * scale)).collect();
            let scaled = WeightedGraph::unlabeled(g.node_count(), &scaled_edges).unwrap();
            let q = pagerank(&scaled, &PageRankParams::default()).unwrap();
            for (a, b) in p.scores.iter().zip(&q.scores) {
                prop_assert!((a - b).abs() < 1e-8);
            }
        }

        #[test]
        fn tree_betweenness_counts_mediated_pairs(parents in proptest::collection::vec(0usize..100, 1..12)) {
            // Random recursive tree: node i + 1 attaches to a node in 0..=i.
            let n = parents.len() + 1;
            let edges: Vec<_> = parents.iter().enumerate().map(|(i, p)| (p % (i + 1), i + 1, 1.0)).collect();
            let g = WeightedGraph::unlabeled(n, &edges).unwrap();
            let total: f64 = betweenness(&g).scores.iter().sum();
            // Every pair at hop distance d has exactly d - 1 interior nodes.
            let mut mediated = 0usize;
            for s in 0..n {
                let mut dist = vec![usize::MAX; n];
                dist[s] = 0;
                let mut q = VecDeque::from([s]);
                while let Some(u) = q.pop_front() {
                    for &(v, _) in g.neighbors(u) {
                        if dist[v] == usize::MAX {
                            dist[v] = dist[u] + 1;
                            q.push_back(v);
                        }
                    }
                }
                mediated += dist.iter().filter(|&&d| d > 1).map(|d| d - 1).sum::<usize>();
            }
            prop_assert!((total - (mediated / 2) as f64).abs() < 1e-9);
        }

        #[test]
        fn mci_argmax_survives_affine_engagement_rescaling(
            g in random_graph(),
            seed_counts in proptest::collection::vec(0u64..50, 10),
            slope in 1u64..5,
            offset in 0u64..100,
        ) {
            let n = g.node_count();
            let reposts: Vec<u64> = seed_counts.iter().take(n).copied().collect();
            let likes: Vec<u64> = seed_counts.iter().rev().take(n).copied().collect();
            let a = mci(&g, &EngagementVector { reposts: reposts.clone(), likes: likes.clone() }).unwrap();
            let scaled: Vec<u64> = reposts.iter().map(|r| r * slope + offset).collect();
            let b = mci(&g, &EngagementVector { reposts: scaled, likes }).unwrap();
            for (x, y) in a.scores.iter().zip(&b.scores) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }
    }
}
