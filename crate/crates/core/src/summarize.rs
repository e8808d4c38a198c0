//! One summary claim per cluster, either the most central post or a text
//! generated by an external model from deduplicated representatives.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::centrality::{degree_centrality, mci, CentralityError, EngagementVector};
use crate::clustering::{agglomerative, ClusterConfig, Clustering, RankedClusters};
use crate::corpus::{word_count, CleanPost};
use crate::embedding::SimMatrix;
use crate::sidecar::{SidecarClient, SidecarError};
use crate::simgraph::WeightedGraph;

#[derive(Debug, Error)]
pub enum SummarizeError {
    #[error("cluster {0} has no members")]
    EmptyCluster(usize),
    #[error(transparent)]
    Centrality(#[from] CentralityError),
    #[error("summarizer unavailable: {0}")]
    Retriable(String),
    #[error("summarizer protocol error: {0}")]
    Protocol(String),
    #[error("no summarizer configured for {0}")]
    NoSummarizer(SummaryMethod),
    #[error("invalid summarization config: {0}")]
    InvalidConfig(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl From<SidecarError> for SummarizeError {
    fn from(e: SidecarError) -> Self {
        match e {
            SidecarError::Retriable(m) => Self::Retriable(m),
            SidecarError::Protocol(m) => Self::Protocol(m),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SummaryMethod {
    #[serde(rename = "DG")]
    Dg,
    #[serde(rename = "MCI")]
    Mci,
    AbstractiveA,
    AbstractiveB,
}

impl SummaryMethod {
    pub const ALL: [SummaryMethod; 4] = [Self::Dg, Self::Mci, Self::AbstractiveA, Self::AbstractiveB];

    pub fn is_extractive(self) -> bool {
        matches!(self, Self::Dg | Self::Mci)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Dg => "DG",
            Self::Mci => "MCI",
            Self::AbstractiveA => "AbstractiveA",
            Self::AbstractiveB => "AbstractiveB",
        }
    }
}

impl std::fmt::Display for SummaryMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SummaryMethod {
    type Err = SummarizeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| SummarizeError::InvalidConfig(format!("unknown summarization method {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub cluster_id: usize,
    pub method: SummaryMethod,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_post_id: Option<String>,
    pub word_count: usize,
    pub member_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DedupConfig {
    pub delta_dup: f64,
    pub seed: u64,
}

impl Default for DedupConfig {
    fn default() -> Self {
        Self { delta_dup: 0.95, seed: 0 }
    }
}

impl DedupConfig {
    pub fn validate(&self, clustering_delta: f64) -> Result<(), SummarizeError> {
        if !(self.delta_dup > clustering_delta && self.delta_dup <= 1.0) {
            return Err(SummarizeError::InvalidConfig(format!(
                "delta_dup must lie in ({clustering_delta}, 1], got {}",
                self.delta_dup
            )));
        }
        Ok(())
    }

    /// Seed for one cluster, so clusters draw independently of processing order.
    pub fn for_cluster(&self, cluster_id: usize) -> Self {
        Self {
            seed: splitmix64(self.seed ^ splitmix64(cluster_id as u64)),
            ..*self
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Collapses near-duplicates: agglomerative clustering at `delta_dup`, then
/// one randomly chosen member per sub-cluster. Output is sorted by post id.
pub fn dedup_cluster(members: &[CleanPost], s_sub: &SimMatrix, cfg: &DedupConfig) -> Vec<CleanPost> {
    assert_eq!(members.len(), s_sub.len(), "similarity must cover the cluster members");
    let sub = agglomerative(
        s_sub,
        &ClusterConfig {
            delta: cfg.delta_dup,
            ..Default::default()
        },
    )
    .expect("delta_dup within [0, 1]");
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out: Vec<CleanPost> = sub
        .members()
        .into_iter()
        .map(|group| members[group[rng.random_range(0..group.len())]].clone())
        .collect();
    out.sort_by(|a, b| a.post_id().cmp(b.post_id()));
    out
}

/// The most central member by degree or MCI; ties go to the smallest post id.
pub fn extractive_summary(
    cluster_id: usize,
    members: &[CleanPost],
    g_sub: &WeightedGraph,
    method: SummaryMethod,
) -> Result<ClusterSummary, SummarizeError> {
    if members.is_empty() {
        return Err(SummarizeError::EmptyCluster(cluster_id));
    }
    assert_eq!(members.len(), g_sub.node_count(), "graph must cover the cluster members");
    let scores = match method {
        SummaryMethod::Dg => degree_centrality(g_sub),
        SummaryMethod::Mci => {
            let eng = EngagementVector {
                reposts: members.iter().map(|p| p.post.repost_count).collect(),
                likes: members.iter().map(|p| p.post.like_count).collect(),
            };
            mci(g_sub, &eng)?
        }
        other => return Err(SummarizeError::InvalidConfig(format!("{other} is not extractive"))),
    };
    let best = scores
        .argmax_by(|i| members[i].post_id())
        .expect("non-empty cluster");
    let source = &members[best];
    Ok(ClusterSummary {
        cluster_id,
        method,
        text: source.clean_text.clone(),
        source_post_id: Some(source.post_id().to_owned()),
        word_count: source.word_count,
        member_count: members.len(),
    })
}

/// A text generator for abstractive summaries.
pub trait Summarizer: Sync {
    fn summarize(&self, texts: &[String], max_tokens: usize) -> Result<String, SidecarError>;
}

impl Summarizer for SidecarClient {
    fn summarize(&self, texts: &[String], max_tokens: usize) -> Result<String, SidecarError> {
        SidecarClient::summarize(self, texts, max_tokens)
    }
}

/// Deterministic stand-in that returns the first input line.
#[derive(Debug, Clone, Copy, Default)]
pub struct EchoSummarizer;

impl Summarizer for EchoSummarizer {
    fn summarize(&self, texts: &[String], _max_tokens: usize) -> Result<String, SidecarError> {
        texts
            .first()
            .and_then(|t| t.lines().next())
            .filter(|l| !l.trim().is_empty())
            .map(str::to_owned)
            .ok_or_else(|| SidecarError::Protocol("empty summary".into()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AbstractiveConfig {
    /// Budget for the newline-joined input, in characters.
    pub max_chars: usize,
    pub max_tokens: usize,
}

impl Default for AbstractiveConfig {
    fn default() -> Self {
        Self {
            max_chars: 4000,
            max_tokens: 64,
        }
    }
}

/// Texts to send for one cluster. When everything does not fit, the highest
/// engagement representatives are kept while they fit, in input order. A
/// single representative longer than the budget is cut at `max_chars`.
pub fn budget_inputs(reps: &[CleanPost], max_chars: usize) -> Vec<String> {
    let joined_len = |idx: &[usize]| -> usize {
        idx.iter().map(|&i| reps[i].clean_text.chars().count()).sum::<usize>() + idx.len().saturating_sub(1)
    };
    let all: Vec<usize> = (0..reps.len()).collect();
    if joined_len(&all) <= max_chars {
        return reps.iter().map(|p| p.clean_text.clone()).collect();
    }
    let mut by_engagement = all;
    by_engagement.sort_by(|&a, &b| {
        reps[b]
            .engagement()
            .cmp(&reps[a].engagement())
            .then_with(|| reps[a].post_id().cmp(reps[b].post_id()))
    });
    let mut kept = Vec::new();
    for &i in &by_engagement {
        kept.push(i);
        if joined_len(&kept) > max_chars {
            kept.pop();
            break;
        }
    }
    if kept.is_empty() {
        let top = &reps[by_engagement[0]];
        tracing::warn!(post_id = top.post_id(), max_chars, "representative exceeds input budget, truncating");
        return vec![top.clean_text.chars().take(max_chars).collect()];
    }
    kept.sort_unstable();
    kept.into_iter().map(|i| reps[i].clean_text.clone()).collect()
}

pub fn abstractive_summary(
    cluster_id: usize,
    member_count: usize,
    representatives: &[CleanPost],
    summarizer: &dyn Summarizer,
    method: SummaryMethod,
    cfg: &AbstractiveConfig,
) -> Result<ClusterSummary, SummarizeError> {
    if representatives.is_empty() {
        return Err(SummarizeError::EmptyCluster(cluster_id));
    }
    let texts = budget_inputs(representatives, cfg.max_chars);
    let text = summarizer.summarize(&texts, cfg.max_tokens)?;
    if text.trim().is_empty() {
        return Err(SummarizeError::Protocol("empty summary".into()));
    }
    Ok(ClusterSummary {
        cluster_id,
        method,
        word_count: word_count(&text),
        text,
        source_post_id: None,
        member_count,
    })
}

/// Everything the batch needs about the clustered corpus. Node `i` of `sim`,
/// `graph` and `clustering` is `posts[i]`.
pub struct SummarizeInput<'a> {
    pub posts: &'a [CleanPost],
    pub sim: &'a SimMatrix,
    pub graph: &'a WeightedGraph,
    pub clustering: &'a Clustering,
    pub ranked: &'a RankedClusters,
}

pub struct SummarizeOptions<'a> {
    pub methods: Vec<SummaryMethod>,
    pub dedup: DedupConfig,
    pub abstractive: AbstractiveConfig,
    pub summarizer_a: Option<&'a dyn Summarizer>,
    pub summarizer_b: Option<&'a dyn Summarizer>,
    /// Upper bound on concurrent summarizer requests.
    pub max_in_flight: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummaryFailure {
    pub cluster_id: usize,
    pub method: SummaryMethod,
    pub error: String,
    pub retriable: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SummarizeOutcome {
    pub summaries: Vec<ClusterSummary>,
    pub failures: Vec<SummaryFailure>,
}

/// Summarizes every ranked cluster with every method, in ranked order.
/// A failing (cluster, method) pair is recorded and the batch continues.
pub fn summarize_all(input: &SummarizeInput<'_>, opts: &SummarizeOptions<'_>) -> SummarizeOutcome {
    let members = input.clustering.members();
    let needs_dedup = opts.methods.iter().any(|m| !m.is_extractive());
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.max_in_flight.max(1))
        .build()
        .expect("summarizer pool");
    let per_cluster: Vec<Vec<Result<ClusterSummary, SummaryFailure>>> = pool.install(|| {
        input
            .ranked
            .order
            .par_iter()
            .map(|&cid| {
                let idx = &members[cid];
                let posts: Vec<CleanPost> = idx.iter().map(|&i| input.posts[i].clone()).collect();
                let graph = input.graph.subgraph(idx);
                let reps = needs_dedup.then(|| dedup_cluster(&posts, &input.sim.submatrix(idx), &opts.dedup.for_cluster(cid)));
                opts.methods
                    .iter()
                    .map(|&method| {
                        let result = match method {
                            SummaryMethod::Dg | SummaryMethod::Mci => extractive_summary(cid, &posts, &graph, method),
                            SummaryMethod::AbstractiveA | SummaryMethod::AbstractiveB => {
                                let summarizer = if method == SummaryMethod::AbstractiveA {
                                    opts.summarizer_a
                                } else {
                                    opts.summarizer_b
                                };
                                match summarizer {
                                    None => Err(SummarizeError::NoSummarizer(method)),
                                    Some(s) => abstractive_summary(
                                        cid,
                                        posts.len(),
                                        reps.as_deref().unwrap_or_default(),
                                        s,
                                        method,
                                        &opts.abstractive,
                                    ),
                                }
                            }
                        };
                        result.map_err(|e| SummaryFailure {
                            cluster_id: cid,
                            method,
                            retriable: matches!(e, SummarizeError::Retriable(_)),
                            error: e.to_string(),
                        })
                    })
                    .collect()
            })
            .collect()
    });
    let mut out = SummarizeOutcome::default();
    for result in per_cluster.into_iter().flatten() {
        match result {
            Ok(s) => out.summaries.push(s),
            Err(f) => {
                tracing::warn!(cluster_id = f.cluster_id, method = %f.method, error = %f.error, "summary failed");
                out.failures.push(f);
            }
        }
    }
    out
}

/// Arithmetic mean of `word_count`, or `None` when there are no summaries.
pub fn mean_word_count<'a>(summaries: impl IntoIterator<Item = &'a ClusterSummary>) -> Option<f64> {
    let (sum, n) = summaries
        .into_iter()
        .fold((0usize, 0usize), |(s, n), x| (s + x.word_count, n + 1));
    (n > 0).then(|| sum as f64 / n as f64)
}

pub fn write_summaries(path: impl AsRef<Path>, summaries: &[ClusterSummary]) -> Result<(), SummarizeError> {
    let mut w = BufWriter::new(File::create(path)?);
    for s in summaries {
        writeln!(w, "{}", serde_json::to_string(s).expect("summary serializes"))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_summaries(path: impl AsRef<Path>) -> Result<Vec<ClusterSummary>, SummarizeError> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| SummarizeError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}
