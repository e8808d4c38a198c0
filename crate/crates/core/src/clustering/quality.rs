use rayon::prelude::*;

use crate::embedding::SimMatrix;
use crate::simgraph::WeightedGraph;

use super::{ClusterError, Clustering};

/// Weighted Newman modularity with a resolution parameter:
/// `Q = Σ_c [ w_c / m - γ (s_c / 2m)² ]`.
pub fn modularity(g: &WeightedGraph, c: &Clustering, resolution: f64) -> Result<f64, ClusterError> {
    if c.len() != g.node_count() {
        return Err(ClusterError::InvalidLabels(format!(
            "{} labels for {} nodes",
            c.len(),
            g.node_count()
        )));
    }
    let m = g.total_weight();
    if m <= 0.0 {
        return Err(ClusterError::ZeroWeight);
    }
    let mut internal = vec![0.0; c.k()];
    let mut strength = vec![0.0; c.k()];
    for (u, v, w) in g.edges() {
        let (cu, cv) = (c.label(u), c.label(v));
        if cu == cv {
            internal[cu] += w;
        }
        strength[cu] += w;
        strength[cv] += w;
    }
    Ok(internal
        .iter()
        .zip(&strength)
        .map(|(w_c, s_c)| w_c / m - resolution * (s_c / (2.0 * m)).powi(2))
        .sum())
}

/// Mean silhouette coefficient over a row-major `n × n` dissimilarity matrix.
/// Points in singleton clusters score 0.
pub fn silhouette(d: &[f64], c: &Clustering) -> Result<f64, ClusterError> {
    let n = c.len();
    if d.len() != n * n {
        return Err(ClusterError::InvalidLabels(format!(
            "dissimilarity has {} entries, expected {}",
            d.len(),
            n * n
        )));
    }
    let k = c.k();
    if k < 2 || k + 1 > n {
        return Err(ClusterError::SilhouetteUndefined { k, n });
    }
    let sizes = c.sizes();
    let labels = c.labels();
    let total: f64 = (0..n)
        .into_par_iter()
        .map(|i| {
            let own = labels[i];
            if sizes[own] == 1 {
                return 0.0;
            }
            let mut sums = vec![0.0; k];
            let row = &d[i * n..(i + 1) * n];
            for (j, &dij) in row.iter().enumerate() {
                if j != i {
                    sums[labels[j]] += dij;
                }
            }
            let a = sums[own] / (sizes[own] - 1) as f64;
            let b = (0..k)
                .filter(|&c| c != own)
                .map(|c| sums[c] / sizes[c] as f64)
                .fold(f64::INFINITY, f64::min);
            let denom = a.max(b);
            if denom > 0.0 {
                (b - a) / denom
            } else {
                0.0
            }
        })
        .collect::<Vec<_>>()
        .iter()
        .sum();
    Ok(total / n as f64)
}

/// Silhouette over `D = 1 - S`.
pub fn silhouette_from_similarity(s: &SimMatrix, c: &Clustering) -> Result<f64, ClusterError> {
    silhouette(&s.dissimilarity(), c)
}

fn choose2(x: u64) -> f64 {
    (x * x.saturating_sub(1)) as f64 / 2.0
}

/// Adjusted Rand index between two labelings of the same items.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "labelings must cover the same items");
    let n = a.len() as u64;
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![0u64; ka * kb];
    let mut row = vec![0u64; ka];
    let mut col = vec![0u64; kb];
    for (&x, &y) in a.iter().zip(b) {
        table[x * kb + y] += 1;
        row[x] += 1;
        col[y] += 1;
    }
    let index: f64 = table.iter().map(|&c| choose2(c)).sum();
    let sum_a: f64 = row.iter().map(|&c| choose2(c)).sum();
    let sum_b: f64 = col.iter().map(|&c| choose2(c)).sum();
    let pairs = choose2(n);
    if pairs == 0.0 {
        return 1.0;
    }
    let expected = sum_a * sum_b / pairs;
    let max = (sum_a + sum_b) / 2.0;
    if max == expected {
        // Both labelings are trivial (all-one or all-singletons).
        return 1.0;
    }
    (index - expected) / (max - expected)
}
