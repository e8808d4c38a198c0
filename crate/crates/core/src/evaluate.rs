//! ROUGE scoring against reference summaries and the redundancy check on
//! the graph of summaries.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clustering::{leiden, ClusterConfig, ClusterError, Clustering};
use crate::corpus::CleanPost;
use crate::embedding::{similarity_matrix, EmbeddingError, EmbeddingMatrix};
use crate::simgraph::{epsilon_graph, GraphConfig, GraphError};
use crate::summarize::{ClusterSummary, SummaryMethod};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no summary has a matching reference")]
    NoOverlap,
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error("{0}")]
    Invalid(String),
}

/// Lowercased alphanumeric runs.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RougeVariant {
    R1,
    R2,
    RL,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RougeScore {
    pub variant: RougeVariant,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Set when either side is too short to hold a single unit.
    pub degenerate: bool,
}

impl RougeScore {
    fn from_counts(variant: RougeVariant, matched: usize, cand_units: usize, ref_units: usize) -> Self {
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let precision = ratio(matched, cand_units);
        let recall = ratio(matched, ref_units);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self {
            variant,
            precision,
            recall,
            f1,
            degenerate: cand_units == 0 || ref_units == 0,
        }
    }
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for g in tokens.windows(n) {
            *counts.entry(g).or_insert(0) += 1;
        }
    }
    counts
}

/// ROUGE-N over pre-tokenized text, with clipped n-gram matches.
pub fn rouge_n_tokens(candidate: &[String], reference: &[String], n: usize) -> RougeScore {
    assert!(n == 1 || n == 2, "ROUGE-{n} is not supported");
    let cand = ngram_counts(candidate, n);
    let refs = ngram_counts(reference, n);
    let matched = cand
        .iter()
        .map(|(g, &c)| c.min(refs.get(g).copied().unwrap_or(0)))
        .sum();
    let units = |len: usize| (len + 1).saturating_sub(n);
    let variant = if n == 1 { RougeVariant::R1 } else { RougeVariant::R2 };
    RougeScore::from_counts(variant, matched, units(candidate.len()), units(reference.len()))
}

pub fn rouge_n(candidate: &str, reference: &str, n: usize) -> RougeScore {
    rouge_n_tokens(&tokenize(candidate), &tokenize(reference), n)
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn rouge_l_tokens(candidate: &[String], reference: &[String]) -> RougeScore {
    RougeScore::from_counts(
        RougeVariant::RL,
        lcs_len(candidate, reference),
        candidate.len(),
        reference.len(),
    )
}

pub fn rouge_l(candidate: &str, reference: &str) -> RougeScore {
    rouge_l_tokens(&tokenize(candidate), &tokenize(reference))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reference {
    pub reference_id: String,
    pub text: String,
}

pub fn read_references(path: impl AsRef<Path>) -> Result<Vec<Reference>, EvalError> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| EvalError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Reference id per cluster: the most common `source_ref` among its members,
/// smallest id on ties. Clusters without any `source_ref` are left out.
pub fn resolve_references(clustering: &Clustering, posts: &[CleanPost]) -> BTreeMap<usize, String> {
    let mut out = BTreeMap::new();
    for (cid, members) in clustering.members().iter().enumerate() {
        let mut votes: BTreeMap<&str, usize> = BTreeMap::new();
        for &i in members {
            if let Some(r) = posts[i].post.source_ref.as_deref() {
                *votes.entry(r).or_insert(0) += 1;
            }
        }
        // BTreeMap iterates ids in ascending order, so the first maximum wins.
        let best = votes
            .into_iter()
            .fold(None::<(&str, usize)>, |acc, (r, c)| match acc {
                Some((_, bc)) if bc >= c => acc,
                _ => Some((r, c)),
            });
        if let Some((r, _)) = best {
            out.insert(cid, r.to_owned());
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairScore {
    pub cluster_id: usize,
    pub method: SummaryMethod,
    pub reference_id: String,
    pub rouge1: RougeScore,
    pub rouge2: RougeScore,
    pub rouge_l: RougeScore,
    pub word_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: SummaryMethod,
    pub n: usize,
    pub rouge1_f1: f64,
    pub rouge2_f1: f64,
    pub rouge_l_f1: f64,
    pub mean_word_count: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub methods: Vec<MethodReport>,
    /// Mean word count of the references that were used.
    pub reference_mean_word_count: f64,
    pub pairs: Vec<PairScore>,
}

/// Scores each summary against the reference text of its cluster.
/// `cluster_refs` maps cluster id to reference id; summaries of clusters
/// without a resolvable reference are skipped.
pub fn evaluate_run(
    summaries: &[ClusterSummary],
    cluster_refs: &BTreeMap<usize, String>,
    references: &[Reference],
) -> Result<EvalReport, EvalError> {
    let texts: HashMap<&str, &str> = references
        .iter()
        .map(|r| (r.reference_id.as_str(), r.text.as_str()))
        .collect();
    let jobs: Vec<(&ClusterSummary, &str, &str)> = summaries
        .iter()
        .filter_map(|s| {
            let rid = cluster_refs.get(&s.cluster_id)?;
            let text = texts.get(rid.as_str())?;
            Some((s, rid.as_str(), *text))
        })
        .collect();
    if jobs.is_empty() {
        return Err(EvalError::NoOverlap);
    }
    let pairs: Vec<PairScore> = jobs
        .par_iter()
        .map(|&(s, rid, text)| {
            let cand = tokenize(&s.text);
            let reference = tokenize(text);
            PairScore {
                cluster_id: s.cluster_id,
                method: s.method,
                reference_id: rid.to_owned(),
                rouge1: rouge_n_tokens(&cand, &reference, 1),
                rouge2: rouge_n_tokens(&cand, &reference, 2),
                rouge_l: rouge_l_tokens(&cand, &reference),
                word_count: s.word_count,
            }
        })
        .collect();

    let mut by_method: BTreeMap<SummaryMethod, Vec<&PairScore>> = BTreeMap::new();
    for p in &pairs {
        by_method.entry(p.method).or_default().push(p);
    }
    let methods = by_method
        .into_iter()
        .map(|(method, ps)| {
            let n = ps.len() as f64;
            let mean = |f: &dyn Fn(&PairScore) -> f64| ps.iter().map(|p| f(p)).sum::<f64>() / n;
            MethodReport {
                method,
                n: ps.len(),
                rouge1_f1: mean(&|p| p.rouge1.f1),
                rouge2_f1: mean(&|p| p.rouge2.f1),
                rouge_l_f1: mean(&|p| p.rouge_l.f1),
                mean_word_count: mean(&|p| p.word_count as f64),
            }
        })
        .collect();
    let used: BTreeMap<&str, &str> = jobs.iter().map(|&(_, rid, text)| (rid, text)).collect();
    let reference_mean_word_count =
        used.values().map(|t| crate::corpus::word_count(t) as f64).sum::<f64>() / used.len() as f64;
    Ok(EvalReport {
        methods,
        reference_mean_word_count,
        pairs,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryGraphReport {
    pub epsilon: f64,
    pub summary_count: usize,
    pub community_count: usize,
    /// Community size → number of communities of that size.
    pub size_histogram: BTreeMap<usize, usize>,
    /// Communities with more than one summary, largest first, as labels.
    pub multi_member_communities: Vec<Vec<String>>,
    pub singleton_fraction: f64,
}

/// Leiden communities of the ε-graph over summary embeddings. Row `i` of
/// `embeddings` belongs to summary `i`, whose label is taken from the matrix.
pub fn summary_graph_report(embeddings: &EmbeddingMatrix, epsilon: f64, seed: u64) -> Result<SummaryGraphReport, EvalError> {
    let n = embeddings.len();
    let s = similarity_matrix(embeddings)?;
    let g = epsilon_graph(&s, embeddings.post_ids().to_vec(), &GraphConfig::new(epsilon)?)?;
    let c = leiden(
        &g,
        &ClusterConfig {
            seed,
            ..Default::default()
        },
    )?;
    let mut communities = c.members();
    communities.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a[0].cmp(&b[0])));
    let mut size_histogram = BTreeMap::new();
    for m in &communities {
        *size_histogram.entry(m.len()).or_insert(0) += 1;
    }
    let singletons = size_histogram.get(&1).copied().unwrap_or(0);
    Ok(SummaryGraphReport {
        epsilon,
        summary_count: n,
        community_count: communities.len(),
        singleton_fraction: if communities.is_empty() {
            1.0
        } else {
            singletons as f64 / communities.len() as f64
        },
        multi_member_communities: communities
            .iter()
            .filter(|m| m.len() > 1)
            .map(|m| m.iter().map(|&i| embeddings.post_ids()[i].clone()).collect())
            .collect(),
        size_histogram,
    })
}
