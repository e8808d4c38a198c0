use std::collections::{BTreeMap, HashMap};

use claimsift_core::clustering::Assignment;
use claimsift_core::corpus::CleanPost;
use claimsift_core::evaluate::Reference;
use claimsift_core::summarize::{ClusterSummary, SummaryMethod};
use serde::{Deserialize, Serialize};

use crate::ReviewError;

/// A rated summary source: the four generated methods plus the reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ReviewMethod {
    #[serde(rename = "DG")]
    Dg,
    #[serde(rename = "MCI")]
    Mci,
    AbstractiveA,
    AbstractiveB,
    Reference,
}

impl From<SummaryMethod> for ReviewMethod {
    fn from(m: SummaryMethod) -> Self {
        match m {
            SummaryMethod::Dg => Self::Dg,
            SummaryMethod::Mci => Self::Mci,
            SummaryMethod::AbstractiveA => Self::AbstractiveA,
            SummaryMethod::AbstractiveB => Self::AbstractiveB,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rating {
    pub cluster_id: usize,
    pub method: ReviewMethod,
    pub score: u8,
    pub rater_id: String,
    /// UTC seconds since the epoch.
    pub timestamp: i64,
    /// Marked for fact-checking.
    #[serde(default)]
    pub flagged: bool,
}

impl Rating {
    pub fn validate(&self) -> Result<(), ReviewError> {
        if !(1..=5).contains(&self.score) {
            return Err(ReviewError::Validation(format!("score must be 1..5, got {}", self.score)));
        }
        if self.rater_id.trim().is_empty() {
            return Err(ReviewError::Validation("rater_id must not be empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PostView {
    pub post_id: String,
    pub text: String,
    pub like_count: u64,
    pub repost_count: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummaryEntry {
    pub method: ReviewMethod,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterRecord {
    pub cluster_id: usize,
    /// Position in the size ranking, 0 = largest.
    pub rank: usize,
    pub members: Vec<PostView>,
    pub summaries: Vec<SummaryEntry>,
}

impl ClusterRecord {
    pub fn methods(&self) -> Vec<ReviewMethod> {
        self.summaries.iter().map(|s| s.method).collect()
    }
}

/// Everything the service shows, ordered by rank.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReviewData {
    clusters: Vec<ClusterRecord>,
    by_id: HashMap<usize, usize>,
}

impl ReviewData {
    pub fn new(mut clusters: Vec<ClusterRecord>) -> Self {
        clusters.sort_by_key(|c| (c.rank, c.cluster_id));
        let by_id = clusters.iter().enumerate().map(|(i, c)| (c.cluster_id, i)).collect();
        Self { clusters, by_id }
    }

    /// Joins pipeline artifacts. Clusters are ranked by the order in which
    /// `summaries` first mention them, which is ranked order for pipeline
    /// output. `cluster_refs` attaches reference texts as an extra method.
    pub fn from_artifacts(
        posts: &[CleanPost],
        assignments: &[Assignment],
        summaries: &[ClusterSummary],
        cluster_refs: &BTreeMap<usize, String>,
        references: &[Reference],
    ) -> Result<Self, ReviewError> {
        let by_post: HashMap<&str, &CleanPost> = posts.iter().map(|p| (p.post_id(), p)).collect();
        let mut members: BTreeMap<usize, Vec<PostView>> = BTreeMap::new();
        for a in assignments {
            let p = by_post
                .get(a.post_id.as_str())
                .ok_or_else(|| ReviewError::Data(format!("assignment names unknown post {}", a.post_id)))?;
            members.entry(a.cluster_id).or_default().push(PostView {
                post_id: a.post_id.clone(),
                text: p.clean_text.clone(),
                like_count: p.post.like_count,
                repost_count: p.post.repost_count,
            });
        }
        let ref_text: HashMap<&str, &str> = references
            .iter()
            .map(|r| (r.reference_id.as_str(), r.text.as_str()))
            .collect();
        let mut order: Vec<usize> = Vec::new();
        let mut entries: HashMap<usize, Vec<SummaryEntry>> = HashMap::new();
        for s in summaries {
            if !members.contains_key(&s.cluster_id) {
                return Err(ReviewError::Data(format!("summary for unknown cluster {}", s.cluster_id)));
            }
            let e = entries.entry(s.cluster_id).or_insert_with(|| {
                order.push(s.cluster_id);
                Vec::new()
            });
            e.push(SummaryEntry {
                method: s.method.into(),
                text: s.text.clone(),
            });
        }
        let clusters = order
            .into_iter()
            .enumerate()
            .map(|(rank, cid)| {
                let mut summaries = entries.remove(&cid).unwrap_or_default();
                if let Some(text) = cluster_refs.get(&cid).and_then(|r| ref_text.get(r.as_str())) {
                    summaries.push(SummaryEntry {
                        method: ReviewMethod::Reference,
                        text: text.to_string(),
                    });
                }
                ClusterRecord {
                    cluster_id: cid,
                    rank,
                    members: members.remove(&cid).unwrap_or_default(),
                    summaries,
                }
            })
            .collect();
        Ok(Self::new(clusters))
    }

    pub fn clusters(&self) -> &[ClusterRecord] {
        &self.clusters
    }

    pub fn get(&self, cluster_id: usize) -> Option<&ClusterRecord> {
        self.by_id.get(&cluster_id).map(|&i| &self.clusters[i])
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MethodMean {
    pub method: ReviewMethod,
    pub mean: f64,
    pub n: usize,
}

/// Keeps the last rating per (rater, cluster, method), in log order.
pub fn effective_ratings(log: &[Rating]) -> Vec<Rating> {
    let mut latest: HashMap<(&str, usize, ReviewMethod), usize> = HashMap::new();
    for (i, r) in log.iter().enumerate() {
        latest.insert((r.rater_id.as_str(), r.cluster_id, r.method), i);
    }
    let mut keep: Vec<usize> = latest.into_values().collect();
    keep.sort_unstable();
    keep.into_iter().map(|i| log[i].clone()).collect()
}

/// Arithmetic mean score per method over the effective ratings.
pub fn aggregate_ratings(log: &[Rating]) -> Vec<MethodMean> {
    let mut acc: BTreeMap<ReviewMethod, (u64, usize)> = BTreeMap::new();
    for r in effective_ratings(log) {
        let e = acc.entry(r.method).or_insert((0, 0));
        e.0 += r.score as u64;
        e.1 += 1;
    }
    acc.into_iter()
        .map(|(method, (sum, n))| MethodMean {
            method,
            mean: sum as f64 / n as f64,
            n,
        })
        .collect()
}
