//! Leiden against exhaustive search over every partition of small graphs.

use claimsift_core::clustering::{leiden, modularity, ClusterConfig, ClusterMethod, Clustering};
use claimsift_core::simgraph::{connected_components, WeightedGraph};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Visits every set partition as restricted-growth strings.
fn for_each_partition(n: usize, f: &mut impl FnMut(&[usize])) {
    fn rec(labels: &mut Vec<usize>, n: usize, max: usize, f: &mut impl FnMut(&[usize])) {
        if labels.len() == n {
            f(labels);
            return;
        }
        for l in 0..=max + 1 {
            labels.push(l);
            rec(labels, n, max.max(l), f);
            labels.pop();
        }
    }
    if n == 0 {
        return;
    }
    let mut labels = vec![0];
    rec(&mut labels, n, 0, f);
}

fn brute_force_q(g: &WeightedGraph) -> f64 {
    let m = g.total_weight();
    let mut best = f64::NEG_INFINITY;
    for_each_partition(g.node_count(), &mut |labels| {
        let k = labels.iter().max().unwrap() + 1;
        let mut inside = vec![0.0; k];
        let mut tot = vec![0.0; k];
        for (u, v, w) in g.edges() {
            if labels[u] == labels[v] {
                inside[labels[u]] += w;
            }
            tot[labels[u]] += w;
            tot[labels[v]] += w;
        }
        let q: f64 = (0..k).map(|c| inside[c] / m - (tot[c] / (2.0 * m)).powi(2)).sum();
        best = best.max(q);
    });
    best
}

fn random_connected(rng: &mut ChaCha8Rng) -> WeightedGraph {
    loop {
        let n = rng.random_range(3..=8);
        let p = rng.random_range(0.25..0.8);
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if rng.random::<f64>() < p {
                    edges.push((i, j, rng.random_range(0.05..=1.0)));
                }
            }
        }
        let g = WeightedGraph::unlabeled(n, &edges).unwrap();
        if connected_components(&g).len() == 1 {
            return g;
        }
    }
}

#[test]
fn partition_enumeration_counts_bell_numbers() {
    for (n, bell) in [(1, 1), (2, 2), (3, 5), (4, 15), (5, 52), (8, 4140)] {
        let mut count = 0;
        for_each_partition(n, &mut |_| count += 1);
        assert_eq!(count, bell);
    }
}

#[test]
fn brute_force_reference_values() {
    let tri = WeightedGraph::unlabeled(3, &[(0, 1, 1.0), (1, 2, 1.0), (0, 2, 1.0)]).unwrap();
    assert!(brute_force_q(&tri).abs() < 1e-12);
    let k4: Vec<_> = (0..4).flat_map(|i| (i + 1..4).map(move |j| (i, j, 1.0))).collect();
    let k4 = WeightedGraph::unlabeled(4, &k4).unwrap();
    assert!(brute_force_q(&k4).abs() < 1e-12);
}

#[test]
fn leiden_reaches_optimum_on_small_graphs() {
    let mut rng = ChaCha8Rng::seed_from_u64(2021);
    let mut optimal = 0;
    for trial in 0..100 {
        let g = random_connected(&mut rng);
        let cfg = ClusterConfig {
            seed: trial,
            ..Default::default()
        };
        let c = leiden(&g, &cfg).unwrap();
        let q = modularity(&g, &c, 1.0).unwrap();
        let best = brute_force_q(&g);
        assert!(q <= best + 1e-12, "trial {trial}: leiden {q} above optimum {best}");
        if q >= best - 1e-9 {
            optimal += 1;
        }
        let one = Clustering::from_labels(vec![0; g.node_count()], ClusterMethod::External).unwrap();
        assert!(modularity(&g, &one, 1.0).unwrap().abs() < 1e-12);
    }
    println!("leiden optimal on {optimal}/100 graphs");
    assert!(optimal >= 95, "optimal on {optimal}/100 graphs");
}
