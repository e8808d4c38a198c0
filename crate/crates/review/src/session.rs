use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::{ReviewData, ReviewMethod};
use crate::ReviewError;

/// A blinded review round: a sample of clusters and, per cluster, an
/// anonymous label for each method.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewSession {
    pub seed: u64,
    pub cluster_ids: Vec<usize>,
    pub blinding: BTreeMap<usize, BTreeMap<String, ReviewMethod>>,
}

impl ReviewSession {
    pub fn method_for(&self, cluster_id: usize, label: &str) -> Option<ReviewMethod> {
        self.blinding.get(&cluster_id)?.get(label).copied()
    }

    pub fn label_for(&self, cluster_id: usize, method: ReviewMethod) -> Option<&str> {
        self.blinding
            .get(&cluster_id)?
            .iter()
            .find(|(_, &m)| m == method)
            .map(|(l, _)| l.as_str())
    }
}

/// Labels `S1..Sn` assigned to `methods` in an order fixed by the seed and
/// the cluster id alone.
pub fn blind(seed: u64, cluster_id: usize, methods: &[ReviewMethod]) -> BTreeMap<String, ReviewMethod> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(cluster_id as u64);
    let mut shuffled = methods.to_vec();
    shuffled.sort_unstable();
    shuffled.shuffle(&mut rng);
    shuffled
        .into_iter()
        .enumerate()
        .map(|(i, m)| (format!("S{}", i + 1), m))
        .collect()
}

/// Uniform sample of `k` clusters without replacement, in ranked order.
pub fn sample_session(data: &ReviewData, k: usize, seed: u64) -> Result<ReviewSession, ReviewError> {
    let n = data.len();
    if k > n {
        return Err(ReviewError::Validation(format!("cannot sample {k} of {n} clusters")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<usize> = (0..n).collect::<Vec<_>>().choose_multiple(&mut rng, k).copied().collect();
    picked.sort_unstable();
    let clusters = data.clusters();
    let cluster_ids: Vec<usize> = picked.iter().map(|&i| clusters[i].cluster_id).collect();
    let blinding = picked
        .iter()
        .map(|&i| (clusters[i].cluster_id, blind(seed, clusters[i].cluster_id, &clusters[i].methods())))
        .collect();
    Ok(ReviewSession {
        seed,
        cluster_ids,
        blinding,
    })
}
