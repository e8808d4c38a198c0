use crate::embedding::SimMatrix;

use super::{ClusterConfig, ClusterError, ClusterMethod, Clustering};

/// One step of the dendrogram: clusters represented by `a` and `b` (their
/// smallest original members) joined at average dissimilarity `height`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Merge {
    pub a: usize,
    pub b: usize,
    pub height: f64,
}

/// Condensed upper triangle of a symmetric matrix.
struct Condensed {
    n: usize,
    values: Vec<f64>,
}

impl Condensed {
    fn from_similarity(s: &SimMatrix) -> Self {
        let n = s.len();
        let mut values = Vec::with_capacity(n * n.saturating_sub(1) / 2);
        for i in 0..n {
            for j in i + 1..n {
                values.push(1.0 - s.get(i, j));
            }
        }
        Self { n, values }
    }

    #[inline]
    fn index(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        i * (2 * self.n - i - 1) / 2 + (j - i - 1)
    }

    #[inline]
    fn get(&self, i: usize, j: usize) -> f64 {
        self.values[self.index(i, j)]
    }

    #[inline]
    fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = self.index(i, j);
        self.values[k] = v;
    }
}

/// Full average-linkage dendrogram over `D = 1 - S` via the nearest-neighbor
/// chain. Returns `n - 1` merges in the order they were performed.
pub fn average_linkage_dendrogram(s: &SimMatrix) -> Vec<Merge> {
    let n = s.len();
    if n < 2 {
        return Vec::new();
    }
    let mut d = Condensed::from_similarity(s);
    let mut size = vec![1usize; n];
    let mut active = vec![true; n];
    let mut merges = Vec::with_capacity(n - 1);
    let mut chain: Vec<usize> = Vec::with_capacity(n);
    let mut first_active = 0;

    for _ in 0..n - 1 {
        if chain.is_empty() {
            while !active[first_active] {
                first_active += 1;
            }
            chain.push(first_active);
        }
        let (a, b) = loop {
            let tip = chain[chain.len() - 1];
            let prev = (chain.len() >= 2).then(|| chain[chain.len() - 2]);
            // The previous chain element wins ties so the chain terminates.
            let mut best = prev;
            let mut best_d = prev.map_or(f64::INFINITY, |p| d.get(tip, p));
            for x in 0..n {
                if x == tip || !active[x] {
                    continue;
                }
                let dx = d.get(tip, x);
                if dx < best_d {
                    best_d = dx;
                    best = Some(x);
                }
            }
            let best = best.expect("at least two active clusters");
            if Some(best) == prev {
                chain.pop();
                chain.pop();
                break (tip, best);
            }
            chain.push(best);
        };

        let (keep, drop) = if a < b { (a, b) } else { (b, a) };
        let height = d.get(keep, drop);
        merges.push(Merge { a: keep, b: drop, height });
        let (sk, sd) = (size[keep] as f64, size[drop] as f64);
        for x in 0..n {
            if x == keep || x == drop || !active[x] {
                continue;
            }
            let merged = (sk * d.get(x, keep) + sd * d.get(x, drop)) / (sk + sd);
            d.set(x, keep, merged);
        }
        active[drop] = false;
        size[keep] += size[drop];
    }
    merges
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Bottom-up average-linkage clustering on `1 - S`, cut where the closest
/// pair of clusters is farther apart than `1 - δ`.
pub fn agglomerative(s: &SimMatrix, cfg: &ClusterConfig) -> Result<Clustering, ClusterError> {
    cfg.validate()?;
    let n = s.len();
    let cutoff = 1.0 - cfg.delta;
    let mut parent: Vec<usize> = (0..n).collect();
    for m in average_linkage_dendrogram(s) {
        if m.height <= cutoff {
            let (ra, rb) = (find(&mut parent, m.a), find(&mut parent, m.b));
            parent[ra.max(rb)] = ra.min(rb);
        }
    }
    let roots: Vec<usize> = (0..n).map(|i| find(&mut parent, i)).collect();
    Ok(Clustering::canonical(&roots, ClusterMethod::Agglomerative))
}
