//! Leiden community detection maximizing weighted modularity.
//!
//! Each pass runs local moving, refinement of every community into
//! well-connected sub-communities, and aggregation on the refined partition,
//! until local moving leaves every aggregate node alone. Passes repeat from
//! the previous result until modularity stops improving.

use std::collections::{HashMap, VecDeque};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::simgraph::WeightedGraph;

use super::{modularity, ClusterConfig, ClusterError, ClusterMethod, Clustering};

/// Temperature of the randomized merge choice during refinement, in units
/// of modularity.
const REFINE_RANDOMNESS: f64 = 0.01;


/// A graph level: the original graph or an aggregate of it. Node strengths
/// are carried explicitly so that edges collapsed into a node still count.
struct Level {
    adj: Vec<Vec<(usize, f64)>>,
    strength: Vec<f64>,
}

impl Level {
    fn from_graph(g: &WeightedGraph) -> Self {
        Self {
            adj: (0..g.node_count()).map(|u| g.neighbors(u).to_vec()).collect(),
            strength: (0..g.node_count()).map(|u| g.strength(u)).collect(),
        }
    }

    fn len(&self) -> usize {
        self.adj.len()
    }

    /// Collapses each community of `membership` (dense ids) into one node.
    fn aggregate(&self, membership: &[usize], k: usize) -> Level {
        let mut strength = vec![0.0; k];
        let mut weights: Vec<HashMap<usize, f64>> = vec![HashMap::new(); k];
        for u in 0..self.len() {
            let cu = membership[u];
            strength[cu] += self.strength[u];
            for &(v, w) in &self.adj[u] {
                let cv = membership[v];
                if cu != cv {
                    *weights[cu].entry(cv).or_insert(0.0) += w;
                }
            }
        }
        let adj = weights
            .into_iter()
            .map(|m| {
                let mut list: Vec<(usize, f64)> = m.into_iter().collect();
                list.sort_by_key(|&(v, _)| v);
                list
            })
            .collect();
        Level { adj, strength }
    }
}

/// Relabels ids densely in order of first appearance; returns the count.
fn densify(membership: &mut [usize]) -> usize {
    let mut map = HashMap::new();
    for c in membership.iter_mut() {
        let next = map.len();
        *c = *map.entry(*c).or_insert(next);
    }
    map.len()
}

struct Optimizer {
    resolution: f64,
    two_m: f64,
    rng: ChaCha8Rng,
}

impl Optimizer {
    /// Modularity gain (up to the constant factor 1/m) of placing a node of
    /// strength `k_v` with `w_to` weight into a community of total `tot`.
    #[inline]
    fn gain(&self, w_to: f64, k_v: f64, tot: f64) -> f64 {
        w_to - self.resolution * k_v * tot / self.two_m
    }

    /// Queue-based local moving. Returns whether any node changed community.
    fn move_nodes(&mut self, level: &Level, membership: &mut [usize]) -> bool {
        let n = level.len();
        let mut tot = vec![0.0; n];
        let mut count = vec![0usize; n];
        for u in 0..n {
            tot[membership[u]] += level.strength[u];
            count[membership[u]] += 1;
        }
        let mut empty: Vec<usize> = (0..n).filter(|&c| count[c] == 0).collect();

        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut self.rng);
        let mut queued = vec![true; n];
        let mut queue: VecDeque<usize> = order.into();

        let mut w_to = vec![0.0; n];
        let mut touched: Vec<usize> = Vec::new();
        let mut changed = false;

        while let Some(v) = queue.pop_front() {
            queued[v] = false;
            let k_v = level.strength[v];
            let current = membership[v];
            for &(u, w) in &level.adj[v] {
                let c = membership[u];
                if w_to[c] == 0.0 {
                    touched.push(c);
                }
                w_to[c] += w;
            }
            tot[current] -= k_v;
            count[current] -= 1;
            if count[current] == 0 {
                empty.push(current);
            }

            let tol = 1e-12 * (1.0 + k_v);
            let mut best = current;
            let mut best_gain = self.gain(w_to[current], k_v, tot[current]);
            touched.sort_unstable();
            for &c in &touched {
                let g = self.gain(w_to[c], k_v, tot[c]);
                if g > best_gain + tol {
                    best = c;
                    best_gain = g;
                }
            }
            if 0.0 > best_gain + tol {
                while let Some(c) = empty.pop() {
                    if count[c] == 0 {
                        best = c;
                        break;
                    }
                }
            }

            tot[best] += k_v;
            count[best] += 1;
            membership[v] = best;
            if best != current {
                changed = true;
                for &(u, _) in &level.adj[v] {
                    if !queued[u] && membership[u] != best {
                        queued[u] = true;
                        queue.push_back(u);
                    }
                }
            }
            for &c in &touched {
                w_to[c] = 0.0;
            }
            touched.clear();
        }
        changed
    }

    /// Splits each community of `membership` into well-connected refined
    /// communities by merging singletons, starting from all singletons.
    fn refine(&mut self, level: &Level, membership: &[usize]) -> Vec<usize> {
        let n = level.len();
        let mut community_tot: HashMap<usize, f64> = HashMap::new();
        for u in 0..n {
            *community_tot.entry(membership[u]).or_insert(0.0) += level.strength[u];
        }
        // Weight from each node to the rest of its own community.
        let inside: Vec<f64> = (0..n)
            .map(|u| {
                level.adj[u]
                    .iter()
                    .filter(|&&(v, _)| membership[v] == membership[u])
                    .map(|&(_, w)| w)
                    .sum()
            })
            .collect();

        let mut refined: Vec<usize> = (0..n).collect();
        let mut r_tot = level.strength.clone();
        let mut r_size = vec![1usize; n];
        // Weight from each refined community to the rest of its parent.
        let mut r_ext = inside.clone();

        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut self.rng);

        let mut w_to = vec![0.0; n];
        let mut touched: Vec<usize> = Vec::new();
        let mut candidates: Vec<(usize, f64)> = Vec::new();

        for v in order {
            if r_size[refined[v]] != 1 {
                continue;
            }
            let k_v = level.strength[v];
            let parent_tot = community_tot[&membership[v]];
            if inside[v] < self.resolution * k_v * (parent_tot - k_v) / self.two_m {
                continue;
            }
            for &(u, w) in &level.adj[v] {
                if membership[u] != membership[v] {
                    continue;
                }
                let c = refined[u];
                if w_to[c] == 0.0 {
                    touched.push(c);
                }
                w_to[c] += w;
            }
            touched.sort_unstable();

            let own = refined[v];
            candidates.clear();
            candidates.push((own, 0.0));
            for &c in &touched {
                if c == own {
                    continue;
                }
                let well_connected =
                    r_ext[c] >= self.resolution * r_tot[c] * (parent_tot - r_tot[c]) / self.two_m;
                if !well_connected {
                    continue;
                }
                let gain = self.gain(w_to[c], k_v, r_tot[c]);
                if gain >= 0.0 {
                    candidates.push((c, gain));
                }
            }

            let m = self.two_m / 2.0;
            let top = candidates.iter().map(|&(_, g)| g).fold(0.0, f64::max);
            let weights: Vec<f64> = candidates
                .iter()
                .map(|&(_, g)| ((g - top) / m / REFINE_RANDOMNESS).exp())
                .collect();
            let total: f64 = weights.iter().sum();
            let mut pick = self.rng.random::<f64>() * total;
            let mut chosen = candidates[candidates.len() - 1].0;
            for (&(c, _), &w) in candidates.iter().zip(&weights) {
                if pick < w {
                    chosen = c;
                    break;
                }
                pick -= w;
            }

            if chosen != own {
                r_ext[chosen] += inside[v] - 2.0 * w_to[chosen];
                r_tot[chosen] += k_v;
                r_size[chosen] += 1;
                r_size[own] = 0;
                refined[v] = chosen;
            }
            for &c in &touched {
                w_to[c] = 0.0;
            }
            touched.clear();
        }
        refined
    }

    /// One full Leiden pass starting from `initial` on the original graph.
    fn run(&mut self, g: &WeightedGraph, initial: &[usize]) -> Vec<usize> {
        let mut level = Level::from_graph(g);
        let mut membership = initial.to_vec();
        densify(&mut membership);
        // Original node -> node of the current level.
        let mut node_of: Vec<usize> = (0..g.node_count()).collect();

        loop {
            self.move_nodes(&level, &mut membership);
            let k = densify(&mut membership);
            if k == level.len() {
                break;
            }
            let mut refined = self.refine(&level, &membership);
            let mut k_refined = densify(&mut refined);
            if k_refined == level.len() {
                // Refinement merged nothing; aggregate the unrefined partition
                // so the level still shrinks.
                refined = membership.clone();
                k_refined = k;
            }
            let next = level.aggregate(&refined, k_refined);
            let mut next_membership = vec![0; k_refined];
            for u in 0..level.len() {
                next_membership[refined[u]] = membership[u];
            }
            for slot in node_of.iter_mut() {
                *slot = refined[*slot];
            }
            level = next;
            membership = next_membership;
        }
        node_of.iter().map(|&u| membership[u]).collect()
    }
}

/// Community detection on `g`. Isolated nodes end up as singletons; a graph
/// without edges yields all singletons.
pub fn leiden(g: &WeightedGraph, cfg: &ClusterConfig) -> Result<Clustering, ClusterError> {
    leiden_with_trace(g, cfg).map(|(c, _)| c)
}

/// Like [`leiden`], also returning the best modularity seen after each pass.
///
/// `cfg.restarts` independent runs start from singletons, each on its own
/// stream of the seeded generator; a run stops once a pass brings no gain.
/// The partition with the highest modularity wins, earliest run on ties.
pub fn leiden_with_trace(g: &WeightedGraph, cfg: &ClusterConfig) -> Result<(Clustering, Vec<f64>), ClusterError> {
    cfg.validate()?;
    let n = g.node_count();
    if g.total_weight() <= 0.0 {
        return Ok((Clustering::singletons(n, ClusterMethod::Leiden), Vec::new()));
    }
    let mut best = Clustering::singletons(n, ClusterMethod::Leiden);
    let mut best_q = modularity(g, &best, cfg.resolution)?;
    let mut trace = Vec::new();
    for stream in 0..cfg.restarts as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(stream);
        let mut opt = Optimizer {
            resolution: cfg.resolution,
            two_m: 2.0 * g.total_weight(),
            rng,
        };
        let mut current = Clustering::singletons(n, ClusterMethod::Leiden);
        let mut current_q = modularity(g, &current, cfg.resolution)?;
        for _ in 0..cfg.max_leiden_iterations {
            let raw = opt.run(g, current.labels());
            let candidate = Clustering::canonical(&raw, ClusterMethod::Leiden);
            let q = modularity(g, &candidate, cfg.resolution)?;
            if q <= current_q + 1e-12 {
                break;
            }
            current = candidate;
            current_q = q;
            trace.push(best_q.max(current_q));
        }
        if current_q > best_q + 1e-12 {
            best = current;
            best_q = current_q;
        }
    }
    Ok((best, trace))
}
