//! Pipeline stages and the artifacts they read and write.
//!
//! Every stage is a function over in-memory values plus a writer for its
//! artifacts, so `run` and the single-stage subcommands share one code path.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use claimsift_core::clustering::{
    agglomerative, leiden, modularity, rank_clusters, read_assignments, silhouette_from_similarity,
    write_assignments, ClusterMethod, Clustering, RankedClusters,
};
use claimsift_core::corpus::{filter_relevant, load_corpus, preprocess, read_clean_corpus, write_clean_corpus};
use claimsift_core::corpus::{CleanPost, RelevanceConfig};
use claimsift_core::embedding::{load_embeddings, save_embeddings, similarity_matrix, EmbeddingMatrix, SimMatrix};
use claimsift_core::evaluate::{
    read_references, resolve_references, summary_graph_report, EvalReport, Reference, SummaryGraphReport,
};
use claimsift_core::sidecar::{fetch_embeddings, SidecarClient, SidecarError};
use claimsift_core::simgraph::{epsilon_graph, export_edgelist, export_labels, import_edgelist, GraphConfig, WeightedGraph};
use claimsift_core::summarize::{
    read_summaries, summarize_all, write_summaries, AbstractiveConfig, ClusterSummary, DedupConfig, EchoSummarizer,
    SummarizeInput, SummarizeOptions, SummarizeOutcome, SummaryFailure, SummaryMethod, Summarizer,
};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, STUB_ENDPOINT};
use crate::manifest::{digest, FileDigest, RunCounts, RunManifest, RunStatus, StageFailure, MANIFEST_VERSION};
use crate::seeds::StageSeeds;
use crate::CliError;

/// Version of the JSON artifacts this crate writes.
pub const ARTIFACT_VERSION: u32 = 1;

pub const CLEAN_FILE: &str = "clean.jsonl";
pub const EMBEDDINGS_FILE: &str = "embeddings.bin";
pub const GRAPH_FILE: &str = "graph.tsv";
pub const GRAPH_LABELS_FILE: &str = "graph_labels.jsonl";
pub const CLUSTERS_FILE: &str = "clusters.jsonl";
pub const CLUSTER_META_FILE: &str = "cluster_meta.json";
pub const SUMMARIES_FILE: &str = "summaries.jsonl";
pub const FAILURES_FILE: &str = "summary_failures.jsonl";
pub const EVALUATION_FILE: &str = "evaluation.json";
pub const SUMMARY_GRAPH_FILE: &str = "summary_graph.json";

/// Every artifact a run may leave behind, in manifest order.
pub const ARTIFACTS: [&str; 10] = [
    CLEAN_FILE,
    EMBEDDINGS_FILE,
    GRAPH_FILE,
    GRAPH_LABELS_FILE,
    CLUSTERS_FILE,
    CLUSTER_META_FILE,
    SUMMARIES_FILE,
    FAILURES_FILE,
    EVALUATION_FILE,
    SUMMARY_GRAPH_FILE,
];

pub const STAGE_INGEST: &str = "ingest";
pub const STAGE_EMBED: &str = "embed";
pub const STAGE_CLUSTER: &str = "cluster";
pub const STAGE_SUMMARIZE: &str = "summarize";
pub const STAGE_EVALUATE: &str = "evaluate";
pub const STAGE_SUMMARY_GRAPH: &str = "summary-graph";

fn write_json<T: Serialize>(out_dir: &Path, name: &str, value: &T, stage: &str) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("artifact serializes");
    text.push('\n');
    std::fs::write(out_dir.join(name), text).map_err(|e| CliError::stage(stage, format!("cannot write {name}: {e}")))
}

fn read_json<T: DeserializeOwned>(path: &Path, stage: &str) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::stage(stage, format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::stage(stage, format!("bad {}: {e}", path.display())))
}

fn check_version(found: u32, what: &str, stage: &str) -> Result<(), CliError> {
    if found != ARTIFACT_VERSION {
        return Err(CliError::stage(
            stage,
            format!("{what} has format_version {found}, this build reads {ARTIFACT_VERSION}"),
        ));
    }
    Ok(())
}

fn endpoint_client(url: &str, cfg: &RunConfig) -> Result<SidecarClient, CliError> {
    SidecarClient::new(url, Duration::from_secs(cfg.endpoints.timeout_secs))
        .map_err(|e| CliError::Config(format!("endpoint {url}: {e}")))
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub posts_read: usize,
    pub posts_clean: usize,
    pub posts: Vec<CleanPost>,
}

#[derive(Debug, Deserialize)]
struct RelevanceLine {
    post_id: String,
    score: f64,
}

fn read_relevance_scores(path: &Path) -> Result<HashMap<String, f64>, CliError> {
    let file = File::open(path)
        .map_err(|e| CliError::stage(STAGE_INGEST, format!("cannot read {}: {e}", path.display())))?;
    let mut out = HashMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CliError::stage(STAGE_INGEST, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let r: RelevanceLine = serde_json::from_str(&line)
            .map_err(|e| CliError::stage(STAGE_INGEST, format!("{}:{}: {e}", path.display(), i + 1)))?;
        if !(0.0..=1.0).contains(&r.score) {
            return Err(CliError::stage(
                STAGE_INGEST,
                format!("{}:{}: score {} outside [0, 1]", path.display(), i + 1, r.score),
            ));
        }
        out.insert(r.post_id, r.score);
    }
    Ok(out)
}

/// Loads, cleans and filters the corpus. The relevance filter applies only
/// when a score file is configured.
pub fn ingest(cfg: &RunConfig) -> Result<Corpus, CliError> {
    let path = cfg
        .paths
        .corpus
        .as_deref()
        .ok_or_else(|| CliError::Config("paths.corpus is required".into()))?;
    let raw = load_corpus(path).map_err(|e| CliError::stage(STAGE_INGEST, e))?;
    let rel = RelevanceConfig {
        theta: cfg.thresholds.theta,
        min_words: cfg.thresholds.min_words,
    };
    rel.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let clean = preprocess(&raw, &rel);
    let posts_clean = clean.len();
    let posts = match &cfg.paths.relevance_scores {
        Some(p) => filter_relevant(&clean, &read_relevance_scores(p)?, &rel).map_err(|e| CliError::stage(STAGE_INGEST, e))?,
        None => clean,
    };
    Ok(Corpus {
        posts_read: raw.len(),
        posts_clean,
        posts,
    })
}

pub fn write_corpus(out_dir: &Path, posts: &[CleanPost]) -> Result<(), CliError> {
    write_clean_corpus(out_dir.join(CLEAN_FILE), posts).map_err(|e| CliError::stage(STAGE_INGEST, e))
}

pub fn load_corpus_artifact(out_dir: &Path) -> Result<Vec<CleanPost>, CliError> {
    read_clean_corpus(out_dir.join(CLEAN_FILE)).map_err(|e| CliError::stage(STAGE_INGEST, e))
}

fn post_ids(posts: &[CleanPost]) -> Vec<String> {
    posts.iter().map(|p| p.post_id().to_owned()).collect()
}

/// Rows for `posts`, in order, from the configured file or the embed endpoint.
pub fn embed_posts(cfg: &RunConfig, posts: &[CleanPost]) -> Result<EmbeddingMatrix, CliError> {
    if let Some(path) = &cfg.paths.embeddings {
        let all = load_embeddings(path).map_err(|e| CliError::stage(STAGE_EMBED, format!("{}: {e}", path.display())))?;
        let ids: Vec<&str> = posts.iter().map(CleanPost::post_id).collect();
        return all.select(&ids).map_err(|e| CliError::stage(STAGE_EMBED, e));
    }
    let url = cfg
        .endpoints
        .embed
        .as_deref()
        .ok_or_else(|| CliError::Config("no embeddings file and no embed endpoint configured".into()))?;
    let client = endpoint_client(url, cfg)?;
    let texts: Vec<String> = posts.iter().map(|p| p.clean_text.clone()).collect();
    fetch_embeddings(&client, &post_ids(posts), &texts).map_err(|e| CliError::endpoint(STAGE_EMBED, e))
}

pub fn write_post_embeddings(out_dir: &Path, e: &EmbeddingMatrix) -> Result<(), CliError> {
    save_embeddings(e, out_dir.join(EMBEDDINGS_FILE)).map_err(|e| CliError::stage(STAGE_EMBED, e))
}

/// Reads the embeddings artifact and checks that it lines up with the corpus.
pub fn load_post_embeddings(out_dir: &Path, posts: &[CleanPost]) -> Result<EmbeddingMatrix, CliError> {
    let e = load_embeddings(out_dir.join(EMBEDDINGS_FILE)).map_err(|e| CliError::stage(STAGE_EMBED, e))?;
    if e.post_ids().iter().map(String::as_str).ne(posts.iter().map(CleanPost::post_id)) {
        return Err(CliError::stage(
            STAGE_EMBED,
            format!("{EMBEDDINGS_FILE} rows do not match the posts in {CLEAN_FILE}"),
        ));
    }
    Ok(e)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterMeta {
    pub format_version: u32,
    pub method: ClusterMethod,
    pub delta: f64,
    pub epsilon: f64,
    pub resolution: f64,
    pub restarts: usize,
    pub seed: u64,
    pub posts: usize,
    pub edges: usize,
    pub k: usize,
    /// Modularity of the partition on the ε-graph.
    pub modularity: Option<f64>,
    pub silhouette: Option<f64>,
    /// Cluster sizes in ranked order.
    pub ranked_sizes: Vec<usize>,
    pub ranked_cluster_ids: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Clustered {
    pub sim: SimMatrix,
    pub graph: WeightedGraph,
    pub clustering: Clustering,
    pub ranked: RankedClusters,
    pub meta: ClusterMeta,
}

/// Similarity matrix and ε-graph over the post embeddings.
pub fn similarity_graph(
    cfg: &RunConfig,
    posts: &[CleanPost],
    emb: &EmbeddingMatrix,
) -> Result<(SimMatrix, WeightedGraph), CliError> {
    let sim = similarity_matrix(emb).map_err(|e| CliError::stage(STAGE_CLUSTER, e))?;
    let gcfg = GraphConfig::new(cfg.thresholds.epsilon()).map_err(|e| CliError::Config(e.to_string()))?;
    let graph = epsilon_graph(&sim, post_ids(posts), &gcfg).map_err(|e| CliError::stage(STAGE_CLUSTER, e))?;
    Ok((sim, graph))
}

fn finish_clustering(
    cfg: &RunConfig,
    seeds: &StageSeeds,
    posts: &[CleanPost],
    sim: SimMatrix,
    graph: WeightedGraph,
    clustering: Clustering,
) -> Clustered {
    let ids = post_ids(posts);
    let ranked = rank_clusters(&clustering, &ids);
    let sizes = clustering.sizes();
    let meta = ClusterMeta {
        format_version: ARTIFACT_VERSION,
        method: clustering.method(),
        delta: cfg.thresholds.delta,
        epsilon: cfg.thresholds.epsilon(),
        resolution: cfg.clustering.resolution,
        restarts: cfg.clustering.restarts,
        seed: seeds.cluster,
        posts: posts.len(),
        edges: graph.edge_count(),
        k: clustering.k(),
        modularity: modularity(&graph, &clustering, cfg.clustering.resolution).ok(),
        silhouette: silhouette_from_similarity(&sim, &clustering).ok(),
        ranked_sizes: ranked.order.iter().map(|&c| sizes[c]).collect(),
        ranked_cluster_ids: ranked.order.clone(),
    };
    Clustered {
        sim,
        graph,
        clustering,
        ranked,
        meta,
    }
}

pub fn cluster_posts(
    cfg: &RunConfig,
    seeds: &StageSeeds,
    posts: &[CleanPost],
    emb: &EmbeddingMatrix,
) -> Result<Clustered, CliError> {
    let (sim, graph) = similarity_graph(cfg, posts, emb)?;
    let cc = cfg.cluster_config(seeds.cluster);
    let clustering = match cfg.clustering.method {
        ClusterMethod::Leiden => leiden(&graph, &cc),
        ClusterMethod::Agglomerative => agglomerative(&sim, &cc),
        ClusterMethod::External => return Err(CliError::Config("cannot run the external clustering method".into())),
    }
    .map_err(|e| CliError::stage(STAGE_CLUSTER, e))?;
    Ok(finish_clustering(cfg, seeds, posts, sim, graph, clustering))
}

/// Leiden on a previously exported edge list. Node `i` of the graph must be
/// post `i` of the corpus.
pub fn cluster_exported_graph(
    cfg: &RunConfig,
    seeds: &StageSeeds,
    posts: &[CleanPost],
    emb: &EmbeddingMatrix,
    graph_path: &Path,
    labels_path: &Path,
) -> Result<Clustered, CliError> {
    if cfg.clustering.method != ClusterMethod::Leiden {
        return Err(CliError::Config("clustering an exported graph requires method Leiden".into()));
    }
    let graph = import_edgelist(graph_path, Some(labels_path)).map_err(|e| CliError::stage(STAGE_CLUSTER, e))?;
    if graph.labels().iter().map(String::as_str).ne(posts.iter().map(CleanPost::post_id)) {
        return Err(CliError::stage(STAGE_CLUSTER, "graph labels do not match the corpus"));
    }
    let sim = similarity_matrix(emb).map_err(|e| CliError::stage(STAGE_CLUSTER, e))?;
    let clustering = leiden(&graph, &cfg.cluster_config(seeds.cluster)).map_err(|e| CliError::stage(STAGE_CLUSTER, e))?;
    Ok(finish_clustering(cfg, seeds, posts, sim, graph, clustering))
}

pub fn write_clustered(out_dir: &Path, posts: &[CleanPost], c: &Clustered) -> Result<(), CliError> {
    let err = |e: &dyn std::fmt::Display| CliError::stage(STAGE_CLUSTER, e);
    export_edgelist(&c.graph, out_dir.join(GRAPH_FILE)).map_err(|e| err(&e))?;
    export_labels(&c.graph, out_dir.join(GRAPH_LABELS_FILE)).map_err(|e| err(&e))?;
    write_assignments(out_dir.join(CLUSTERS_FILE), &c.clustering, &post_ids(posts)).map_err(|e| err(&e))?;
    write_json(out_dir, CLUSTER_META_FILE, &c.meta, STAGE_CLUSTER)
}

/// Reads the clustering artifacts and checks them against the corpus.
pub fn load_clustering(out_dir: &Path, posts: &[CleanPost]) -> Result<(Clustering, ClusterMeta), CliError> {
    let meta: ClusterMeta = read_json(&out_dir.join(CLUSTER_META_FILE), STAGE_CLUSTER)?;
    check_version(meta.format_version, CLUSTER_META_FILE, STAGE_CLUSTER)?;
    let assignments = read_assignments(out_dir.join(CLUSTERS_FILE)).map_err(|e| CliError::stage(STAGE_CLUSTER, e))?;
    if assignments.len() != posts.len()
        || assignments.iter().zip(posts).any(|(a, p)| a.post_id != p.post_id())
    {
        return Err(CliError::stage(
            STAGE_CLUSTER,
            format!("{CLUSTERS_FILE} does not list the posts of {CLEAN_FILE} in order"),
        ));
    }
    let clustering = Clustering::from_labels(assignments.iter().map(|a| a.cluster_id).collect(), meta.method)
        .map_err(|e| CliError::stage(STAGE_CLUSTER, e))?;
    Ok((clustering, meta))
}

/// Rebuilds the clustering stage output from its artifacts. Similarity and
/// graph are recomputed from the embeddings at the recorded ε.
pub fn load_clustered(out_dir: &Path, posts: &[CleanPost], emb: &EmbeddingMatrix) -> Result<Clustered, CliError> {
    let (clustering, meta) = load_clustering(out_dir, posts)?;
    let sim = similarity_matrix(emb).map_err(|e| CliError::stage(STAGE_CLUSTER, e))?;
    let gcfg = GraphConfig::new(meta.epsilon).map_err(|e| CliError::stage(STAGE_CLUSTER, e))?;
    let graph = epsilon_graph(&sim, post_ids(posts), &gcfg).map_err(|e| CliError::stage(STAGE_CLUSTER, e))?;
    let ranked = rank_clusters(&clustering, &post_ids(posts));
    if ranked.order != meta.ranked_cluster_ids {
        return Err(CliError::stage(STAGE_CLUSTER, format!("{CLUSTER_META_FILE} disagrees with {CLUSTERS_FILE}")));
    }
    Ok(Clustered {
        sim,
        graph,
        clustering,
        ranked,
        meta,
    })
}

enum SummarizerHandle {
    Echo(EchoSummarizer),
    Http(SidecarClient),
}

impl SummarizerHandle {
    fn as_dyn(&self) -> &dyn Summarizer {
        match self {
            Self::Echo(s) => s,
            Self::Http(s) => s,
        }
    }
}

fn summarizer_for(cfg: &RunConfig, method: SummaryMethod) -> Result<Option<SummarizerHandle>, CliError> {
    if !cfg.summarize.methods.contains(&method) {
        return Ok(None);
    }
    match cfg.summarizer_endpoint(method) {
        None => Err(CliError::Config(format!("{method} needs an endpoint"))),
        Some(STUB_ENDPOINT) => Ok(Some(SummarizerHandle::Echo(EchoSummarizer))),
        Some(url) => Ok(Some(SummarizerHandle::Http(endpoint_client(url, cfg)?))),
    }
}

pub fn summarize(
    cfg: &RunConfig,
    seeds: &StageSeeds,
    posts: &[CleanPost],
    c: &Clustered,
) -> Result<SummarizeOutcome, CliError> {
    let dedup = DedupConfig {
        delta_dup: cfg.thresholds.delta_dup,
        seed: seeds.dedup,
    };
    dedup
        .validate(cfg.thresholds.delta)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let a = summarizer_for(cfg, SummaryMethod::AbstractiveA)?;
    let b = summarizer_for(cfg, SummaryMethod::AbstractiveB)?;
    let input = SummarizeInput {
        posts,
        sim: &c.sim,
        graph: &c.graph,
        clustering: &c.clustering,
        ranked: &c.ranked,
    };
    let opts = SummarizeOptions {
        methods: cfg.summarize.methods.clone(),
        dedup,
        abstractive: AbstractiveConfig {
            max_chars: cfg.summarize.max_chars,
            max_tokens: cfg.summarize.max_tokens,
        },
        summarizer_a: a.as_ref().map(SummarizerHandle::as_dyn),
        summarizer_b: b.as_ref().map(SummarizerHandle::as_dyn),
        max_in_flight: cfg.summarize.max_in_flight,
    };
    Ok(summarize_all(&input, &opts))
}

pub fn write_summary_artifacts(out_dir: &Path, outcome: &SummarizeOutcome) -> Result<(), CliError> {
    write_summaries(out_dir.join(SUMMARIES_FILE), &outcome.summaries)
        .map_err(|e| CliError::stage(STAGE_SUMMARIZE, e))?;
    let mut w = BufWriter::new(
        File::create(out_dir.join(FAILURES_FILE)).map_err(|e| CliError::stage(STAGE_SUMMARIZE, e))?,
    );
    for f in &outcome.failures {
        writeln!(w, "{}", serde_json::to_string(f).expect("failure serializes"))
            .map_err(|e| CliError::stage(STAGE_SUMMARIZE, e))?;
    }
    w.flush().map_err(|e| CliError::stage(STAGE_SUMMARIZE, e))
}

/// Any failed (cluster, method) pair fails the stage once its artifacts are
/// written; endpoint trouble is reported as such.
pub fn check_summary_failures(failures: &[SummaryFailure]) -> Result<(), CliError> {
    let Some(first) = failures.first() else {
        return Ok(());
    };
    let message = format!(
        "{} summaries failed, first: cluster {} {}: {} (see {FAILURES_FILE})",
        failures.len(),
        first.cluster_id,
        first.method,
        first.error
    );
    if failures.iter().any(|f| f.retriable) {
        Err(CliError::endpoint(STAGE_SUMMARIZE, message))
    } else {
        Err(CliError::stage(STAGE_SUMMARIZE, message))
    }
}

pub fn load_summaries_artifact(out_dir: &Path) -> Result<Vec<ClusterSummary>, CliError> {
    read_summaries(out_dir.join(SUMMARIES_FILE)).map_err(|e| CliError::stage(STAGE_SUMMARIZE, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub format_version: u32,
    /// Reference id per cluster, by majority `source_ref`.
    pub cluster_references: BTreeMap<usize, String>,
    pub report: EvalReport,
}

pub fn load_references(cfg: &RunConfig) -> Result<Option<Vec<Reference>>, CliError> {
    cfg.paths
        .references
        .as_deref()
        .map(|p| read_references(p).map_err(|e| CliError::stage(STAGE_EVALUATE, format!("{}: {e}", p.display()))))
        .transpose()
}

pub fn evaluate(
    references: &[Reference],
    posts: &[CleanPost],
    clustering: &Clustering,
    summaries: &[ClusterSummary],
) -> Result<Evaluation, CliError> {
    let cluster_references = resolve_references(clustering, posts);
    let report = claimsift_core::evaluate::evaluate_run(summaries, &cluster_references, references)
        .map_err(|e| CliError::stage(STAGE_EVALUATE, e))?;
    Ok(Evaluation {
        format_version: ARTIFACT_VERSION,
        cluster_references,
        report,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodGraph {
    pub method: SummaryMethod,
    pub report: SummaryGraphReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedMethod {
    pub method: SummaryMethod,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryGraphFile {
    pub format_version: u32,
    pub epsilon: f64,
    pub seed: u64,
    pub methods: Vec<MethodGraph>,
    pub skipped: Vec<SkippedMethod>,
}

/// Embeddings of one method's summaries, labelled by cluster id. A summary
/// reuses the row of its source post or of a post with identical text;
/// anything else goes to the embed endpoint.
fn summary_embeddings(
    cfg: &RunConfig,
    posts: &[CleanPost],
    emb: &EmbeddingMatrix,
    summaries: &[&ClusterSummary],
) -> Result<Result<EmbeddingMatrix, String>, CliError> {
    let by_id: HashMap<&str, usize> = posts.iter().enumerate().map(|(i, p)| (p.post_id(), i)).collect();
    let mut by_text: HashMap<&str, usize> = HashMap::new();
    for (i, p) in posts.iter().enumerate() {
        by_text.entry(p.clean_text.as_str()).or_insert(i);
    }
    let labels: Vec<String> = summaries.iter().map(|s| s.cluster_id.to_string()).collect();
    let mut rows: Vec<Option<Vec<f32>>> = summaries
        .iter()
        .map(|s| {
            s.source_post_id
                .as_deref()
                .and_then(|id| by_id.get(id))
                .or_else(|| by_text.get(s.text.as_str()))
                .map(|&i| emb.row(i).to_vec())
        })
        .collect();
    let missing: Vec<usize> = (0..rows.len()).filter(|&i| rows[i].is_none()).collect();
    let mut model = emb.model_name().to_owned();
    if !missing.is_empty() {
        let Some(url) = cfg.endpoints.embed.as_deref() else {
            return Ok(Err(format!(
                "{} summaries have no matching post embedding and no embed endpoint is configured",
                missing.len()
            )));
        };
        let client = endpoint_client(url, cfg)?;
        let texts: Vec<String> = missing.iter().map(|&i| summaries[i].text.clone()).collect();
        let ids: Vec<String> = missing.iter().map(|&i| labels[i].clone()).collect();
        let fetched = fetch_embeddings(&client, &ids, &texts).map_err(|e| CliError::endpoint(STAGE_SUMMARY_GRAPH, e))?;
        if !emb.is_empty() && fetched.dim() != emb.dim() {
            return Err(CliError::endpoint(
                STAGE_SUMMARY_GRAPH,
                SidecarError::Protocol(format!("summary embeddings have dim {}, posts have {}", fetched.dim(), emb.dim())),
            ));
        }
        if emb.is_empty() {
            model = fetched.model_name().to_owned();
        }
        for (k, &i) in missing.iter().enumerate() {
            rows[i] = Some(fetched.row(k).to_vec());
        }
    }
    let rows: Vec<Vec<f32>> = rows.into_iter().map(|r| r.expect("every row filled")).collect();
    EmbeddingMatrix::from_rows(labels, rows, model)
        .map(Ok)
        .map_err(|e| CliError::stage(STAGE_SUMMARY_GRAPH, e))
}

/// One summary graph per method present in `summaries`.
pub fn summary_graph(
    cfg: &RunConfig,
    seeds: &StageSeeds,
    posts: &[CleanPost],
    emb: &EmbeddingMatrix,
    summaries: &[ClusterSummary],
) -> Result<SummaryGraphFile, CliError> {
    let eps = cfg.thresholds.summary_graph_epsilon;
    let mut grouped: BTreeMap<SummaryMethod, Vec<&ClusterSummary>> = BTreeMap::new();
    for s in summaries {
        grouped.entry(s.method).or_default().push(s);
    }
    let mut out = SummaryGraphFile {
        format_version: ARTIFACT_VERSION,
        epsilon: eps,
        seed: seeds.summary_graph,
        methods: Vec::new(),
        skipped: Vec::new(),
    };
    for (method, group) in grouped {
        match summary_embeddings(cfg, posts, emb, &group)? {
            Ok(m) => {
                let report = summary_graph_report(&m, eps, seeds.summary_graph)
                    .map_err(|e| CliError::stage(STAGE_SUMMARY_GRAPH, e))?;
                out.methods.push(MethodGraph { method, report });
            }
            Err(reason) => {
                tracing::warn!(%method, %reason, "summary graph skipped");
                out.skipped.push(SkippedMethod { method, reason });
            }
        }
    }
    Ok(out)
}

fn input_digests(cfg: &RunConfig) -> Result<Vec<FileDigest>, CliError> {
    let p = &cfg.paths;
    [&p.corpus, &p.embeddings, &p.references, &p.relevance_scores]
        .into_iter()
        .flatten()
        .map(|path| {
            digest(path, &path.display().to_string())
                .map_err(|e| CliError::Config(format!("cannot read input {}: {e}", path.display())))
        })
        .collect()
}

fn artifact_digests(out_dir: &Path) -> Result<Vec<FileDigest>, CliError> {
    ARTIFACTS
        .iter()
        .filter(|name| out_dir.join(name).is_file())
        .map(|name| digest(&out_dir.join(name), name).map_err(|e| CliError::stage("manifest", e)))
        .collect()
}

/// Checks that the run can start: valid values, readable inputs and an
/// embedding source.
pub fn preflight(cfg: &RunConfig) -> Result<(), CliError> {
    cfg.validate()?;
    let p = &cfg.paths;
    if p.corpus.is_none() {
        return Err(CliError::Config("paths.corpus is required".into()));
    }
    if p.embeddings.is_none() && cfg.endpoints.embed.is_none() {
        return Err(CliError::Config("no embeddings file and no embed endpoint configured".into()));
    }
    for path in [&p.corpus, &p.embeddings, &p.references, &p.relevance_scores].into_iter().flatten() {
        if !path.is_file() {
            return Err(CliError::Config(format!("input {} does not exist", path.display())));
        }
    }
    Ok(())
}

struct RunState {
    stages: Vec<String>,
    counts: RunCounts,
}

fn run_stages(cfg: &RunConfig, seeds: &StageSeeds, out_dir: &Path, st: &mut RunState) -> Result<(), CliError> {
    let corpus = ingest(cfg)?;
    write_corpus(out_dir, &corpus.posts)?;
    st.counts.posts_read = corpus.posts_read;
    st.counts.posts_clean = corpus.posts_clean;
    st.counts.posts_relevant = corpus.posts.len();
    st.stages.push(STAGE_INGEST.into());
    let posts = corpus.posts;

    let emb = embed_posts(cfg, &posts)?;
    write_post_embeddings(out_dir, &emb)?;
    st.stages.push(STAGE_EMBED.into());

    let clustered = cluster_posts(cfg, seeds, &posts, &emb)?;
    write_clustered(out_dir, &posts, &clustered)?;
    st.counts.clusters = clustered.clustering.k();
    st.stages.push(STAGE_CLUSTER.into());

    let outcome = summarize(cfg, seeds, &posts, &clustered)?;
    write_summary_artifacts(out_dir, &outcome)?;
    st.counts.summaries = outcome.summaries.len();
    st.counts.summary_failures = outcome.failures.len();
    let per_method = cfg
        .summarize
        .methods
        .iter()
        .map(|m| outcome.summaries.iter().filter(|s| s.method == *m).count())
        .max()
        .unwrap_or(0);
    st.counts.reduction_ratio = (!posts.is_empty()).then(|| per_method as f64 / posts.len() as f64);
    check_summary_failures(&outcome.failures)?;
    st.stages.push(STAGE_SUMMARIZE.into());

    if let Some(refs) = load_references(cfg)? {
        let eval = evaluate(&refs, &posts, &clustered.clustering, &outcome.summaries)?;
        write_json(out_dir, EVALUATION_FILE, &eval, STAGE_EVALUATE)?;
        st.stages.push(STAGE_EVALUATE.into());
    }

    let sg = summary_graph(cfg, seeds, &posts, &emb, &outcome.summaries)?;
    write_json(out_dir, SUMMARY_GRAPH_FILE, &sg, STAGE_SUMMARY_GRAPH)?;
    st.stages.push(STAGE_SUMMARY_GRAPH.into());
    Ok(())
}

/// Runs every stage into `out_dir` and writes the manifest. On a stage
/// failure the manifest is still written, marked partial, and the error is
/// returned.
pub fn run_pipeline(cfg: &RunConfig, out_dir: &Path) -> Result<RunManifest, CliError> {
    preflight(cfg)?;
    let inputs = input_digests(cfg)?;
    std::fs::create_dir_all(out_dir)
        .map_err(|e| CliError::Config(format!("cannot create {}: {e}", out_dir.display())))?;
    for name in ARTIFACTS {
        let p = out_dir.join(name);
        if p.is_file() {
            std::fs::remove_file(&p).map_err(|e| CliError::stage("setup", format!("cannot remove stale {name}: {e}")))?;
        }
    }
    let seeds = StageSeeds::derive(cfg.seed);
    let mut st = RunState {
        stages: Vec::new(),
        counts: RunCounts::default(),
    };
    let result = run_stages(cfg, &seeds, out_dir, &mut st);
    let mut recorded = cfg.clone();
    recorded.paths.out_dir = PathBuf::new();
    let manifest = RunManifest {
        format_version: MANIFEST_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").to_owned(),
        status: if result.is_ok() { RunStatus::Complete } else { RunStatus::Partial },
        failure: result.as_ref().err().map(|e| StageFailure {
            stage: e.stage_name().unwrap_or("config").to_owned(),
            error: e.to_string(),
        }),
        config: recorded,
        seeds,
        stages: st.stages,
        inputs,
        artifacts: artifact_digests(out_dir)?,
        counts: st.counts,
    };
    manifest.write(out_dir)?;
    result.map(|()| manifest)
}

/// Reruns the configuration recorded in a manifest into `out_dir` and checks
/// that inputs and artifacts hash to the recorded values.
pub fn replay(manifest_path: &Path, out_dir: &Path) -> Result<RunManifest, CliError> {
    let recorded = RunManifest::read(manifest_path)?;
    let inputs = input_digests(&recorded.config)?;
    if inputs != recorded.inputs {
        return Err(CliError::Config("inputs differ from those recorded in the manifest".into()));
    }
    let mut cfg = recorded.config.clone();
    cfg.paths.out_dir = out_dir.to_path_buf();
    let fresh = match run_pipeline(&cfg, out_dir) {
        Ok(m) => m,
        Err(e) if recorded.status == RunStatus::Partial => RunManifest::read(&out_dir.join(crate::manifest::MANIFEST_FILE))
            .map_err(|_| e)?,
        Err(e) => return Err(e),
    };
    if fresh.artifacts != recorded.artifacts {
        let differing: Vec<&str> = ARTIFACTS
            .iter()
            .copied()
            .filter(|name| {
                let find = |v: &[FileDigest]| v.iter().find(|d| d.path == *name).map(|d| d.sha256.clone());
                find(&fresh.artifacts) != find(&recorded.artifacts)
            })
            .collect();
        return Err(CliError::stage("replay", format!("artifacts differ: {}", differing.join(", "))));
    }
    Ok(fresh)
}
