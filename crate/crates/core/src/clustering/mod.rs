//! Partitioning posts into claim clusters.

mod agglomerative;
mod leiden;
mod quality;

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use agglomerative::{agglomerative, average_linkage_dendrogram, Merge};
pub use leiden::{leiden, leiden_with_trace};
pub use quality::{adjusted_rand_index, modularity, silhouette, silhouette_from_similarity};

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("invalid cluster config: {0}")]
    InvalidConfig(String),
    #[error("invalid clustering: {0}")]
    InvalidLabels(String),
    #[error("modularity undefined: graph has zero total edge weight")]
    ZeroWeight,
    #[error("silhouette undefined for k = {k} clusters over n = {n} points")]
    SilhouetteUndefined { k: usize, n: usize },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ClusterMethod {
    Agglomerative,
    Leiden,
    External,
}

impl std::fmt::Display for ClusterMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Agglomerative => "agglomerative",
            Self::Leiden => "leiden",
            Self::External => "external",
        })
    }
}

impl std::str::FromStr for ClusterMethod {
    type Err = ClusterError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "agglomerative" => Ok(Self::Agglomerative),
            "leiden" => Ok(Self::Leiden),
            "external" => Ok(Self::External),
            other => Err(ClusterError::InvalidConfig(format!("unknown clustering method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterConfig {
    /// Similarity cutoff δ.
    pub delta: f64,
    pub resolution: f64,
    pub seed: u64,
    pub max_leiden_iterations: usize,
    /// Independent Leiden runs; the best partition by modularity is kept.
    pub restarts: usize,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            delta: 0.85,
            resolution: 1.0,
            seed: 0,
            max_leiden_iterations: 50,
            restarts: 16,
        }
    }
}

impl ClusterConfig {
    pub fn validate(&self) -> Result<(), ClusterError> {
        if !(0.0..=1.0).contains(&self.delta) {
            return Err(ClusterError::InvalidConfig(format!("delta must lie in [0, 1], got {}", self.delta)));
        }
        if !(self.resolution > 0.0 && self.resolution.is_finite()) {
            return Err(ClusterError::InvalidConfig(format!(
                "resolution must be positive, got {}",
                self.resolution
            )));
        }
        if self.restarts == 0 {
            return Err(ClusterError::InvalidConfig("restarts must be positive".into()));
        }
        if self.max_leiden_iterations == 0 {
            return Err(ClusterError::InvalidConfig("max_leiden_iterations must be positive".into()));
        }
        Ok(())
    }
}

/// A flat partition. Cluster ids are dense, `0..k`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Clustering {
    labels: Vec<usize>,
    k: usize,
    method: ClusterMethod,
}

impl Clustering {
    /// Accepts labels that already use every id in `0..k`.
    pub fn from_labels(labels: Vec<usize>, method: ClusterMethod) -> Result<Self, ClusterError> {
        let k = labels.iter().max().map_or(0, |m| m + 1);
        let mut used = vec![false; k];
        for &l in &labels {
            used[l] = true;
        }
        if let Some(gap) = used.iter().position(|u| !u) {
            return Err(ClusterError::InvalidLabels(format!("cluster id {gap} is unused")));
        }
        Ok(Self { labels, k, method })
    }

    /// Relabels arbitrary community ids so that clusters are numbered by
    /// their smallest member index.
    pub fn canonical(raw: &[usize], method: ClusterMethod) -> Self {
        let mut map = std::collections::HashMap::new();
        let labels = raw
            .iter()
            .map(|r| {
                let next = map.len();
                *map.entry(*r).or_insert(next)
            })
            .collect();
        Self {
            labels,
            k: map.len(),
            method,
        }
    }

    pub fn singletons(n: usize, method: ClusterMethod) -> Self {
        Self {
            labels: (0..n).collect(),
            k: n,
            method,
        }
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label(&self, node: usize) -> usize {
        self.labels[node]
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn method(&self) -> ClusterMethod {
        self.method
    }

    /// Member node indices per cluster, each in ascending order.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.k];
        for (node, &c) in self.labels.iter().enumerate() {
            out[c].push(node);
        }
        out
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut out = vec![0; self.k];
        for &c in &self.labels {
            out[c] += 1;
        }
        out
    }
}

/// Cluster ids by descending size; ties go to the cluster holding the
/// smallest post id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankedClusters {
    pub order: Vec<usize>,
}

pub fn rank_clusters(c: &Clustering, post_ids: &[String]) -> RankedClusters {
    assert_eq!(post_ids.len(), c.len(), "one post id per clustered node");
    let members = c.members();
    let min_id: Vec<&str> = members
        .iter()
        .map(|m| m.iter().map(|&i| post_ids[i].as_str()).min().unwrap_or(""))
        .collect();
    let mut order: Vec<usize> = (0..c.k()).collect();
    order.sort_by(|&a, &b| {
        members[b]
            .len()
            .cmp(&members[a].len())
            .then_with(|| min_id[a].cmp(min_id[b]))
            .then_with(|| a.cmp(&b))
    });
    RankedClusters { order }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub post_id: String,
    pub cluster_id: usize,
}

/// Parameters and outcome of a clustering run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterRunMeta {
    pub method: ClusterMethod,
    pub delta: f64,
    pub resolution: f64,
    pub seed: u64,
    pub k: usize,
    pub silhouette: Option<f64>,
}

pub fn write_assignments(path: impl AsRef<Path>, c: &Clustering, post_ids: &[String]) -> Result<(), ClusterError> {
    let mut w = BufWriter::new(File::create(path)?);
    for (post_id, &cluster_id) in post_ids.iter().zip(c.labels()) {
        let line = serde_json::to_string(&Assignment {
            post_id: post_id.clone(),
            cluster_id,
        })
        .expect("assignment serializes");
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads `{post_id, cluster_id}` lines, returning them in file order.
pub fn read_assignments(path: impl AsRef<Path>) -> Result<Vec<Assignment>, ClusterError> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| ClusterError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}
