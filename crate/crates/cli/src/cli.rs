//! Argument parsing and subcommand dispatch.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use claimsift_core::clustering::{read_assignments, ClusterMethod};
use claimsift_core::summarize::SummaryMethod;
use claimsift_review::{AppState, RatingLog, ReviewData};

use crate::config::RunConfig;
use crate::manifest::RunManifest;
use crate::pipeline::{self, CLUSTERS_FILE, EVALUATION_FILE, SUMMARY_GRAPH_FILE};
use crate::seeds::StageSeeds;
use crate::synth::{generate, write_fixture, SynthConfig};
use crate::CliError;

#[derive(Debug, Parser)]
#[command(name = "claimsift", version, about = "Cluster social-media posts into claims and summarize them")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run every stage and write a manifest.
    Run(Common),
    /// Clean and filter the corpus into clean.jsonl.
    Ingest(Common),
    /// Embed, build the similarity graph and cluster.
    Cluster {
        #[command(flatten)]
        common: Common,
        /// Cluster an exported edge list (graph.tsv) instead of embeddings.
        #[arg(long, requires = "labels")]
        graph: Option<PathBuf>,
        /// Node labels for --graph (graph_labels.jsonl).
        #[arg(long)]
        labels: Option<PathBuf>,
    },
    /// Summarize every cluster with every configured method.
    Summarize(Common),
    /// Score summaries against references with ROUGE.
    Evaluate(Common),
    /// Community report over the graph of summaries.
    SummaryGraph(Common),
    /// Serve the review API over the artifacts in the output directory.
    Serve {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        /// Ratings log; defaults to ratings.jsonl in the output directory.
        #[arg(long)]
        ratings: Option<PathBuf>,
    },
    /// Rerun a manifest and verify that every checksum matches.
    Replay {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Write a synthetic corpus with planted claim groups.
    Synth {
        /// Directory for the fixture files.
        #[arg(long)]
        dir: PathBuf,
        /// Output directory recorded in the generated run.toml.
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        groups: usize,
        #[arg(long, default_value_t = 30)]
        per_group: usize,
        #[arg(long, default_value_t = 64)]
        dim: usize,
        #[arg(long, default_value_t = 0.2)]
        noise: f64,
    },
}

/// Options shared by the pipeline subcommands. Each overrides the
/// configuration file and the environment.
#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// TOML configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for parallel stages.
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub references: Option<PathBuf>,
    #[arg(long)]
    pub relevance_scores: Option<PathBuf>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub delta_dup: Option<f64>,
    #[arg(long)]
    pub theta: Option<f64>,
    #[arg(long)]
    pub min_words: Option<usize>,
    #[arg(long)]
    pub summary_graph_epsilon: Option<f64>,
    /// leiden or agglomerative.
    #[arg(long)]
    pub method: Option<ClusterMethod>,
    /// Comma-separated: DG, MCI, AbstractiveA, AbstractiveB.
    #[arg(long, value_delimiter = ',')]
    pub methods: Vec<SummaryMethod>,
    #[arg(long)]
    pub embed_url: Option<String>,
    #[arg(long)]
    pub summarize_a_url: Option<String>,
    #[arg(long)]
    pub summarize_b_url: Option<String>,
    #[arg(long)]
    pub score_url: Option<String>,
}

impl Common {
    pub fn apply(&self, cfg: &mut RunConfig) {
        fn set<T: Clone>(slot: &mut T, v: &Option<T>) {
            if let Some(v) = v {
                *slot = v.clone();
            }
        }
        fn set_opt<T: Clone>(slot: &mut Option<T>, v: &Option<T>) {
            if v.is_some() {
                slot.clone_from(v);
            }
        }
        set(&mut cfg.seed, &self.seed);
        set(&mut cfg.workers, &self.workers);
        set(&mut cfg.paths.out_dir, &self.out_dir);
        set_opt(&mut cfg.paths.corpus, &self.corpus);
        set_opt(&mut cfg.paths.embeddings, &self.embeddings);
        set_opt(&mut cfg.paths.references, &self.references);
        set_opt(&mut cfg.paths.relevance_scores, &self.relevance_scores);
        let t = &mut cfg.thresholds;
        set(&mut t.delta, &self.delta);
        set_opt(&mut t.epsilon, &self.epsilon);
        set(&mut t.delta_dup, &self.delta_dup);
        set(&mut t.theta, &self.theta);
        set(&mut t.min_words, &self.min_words);
        set(&mut t.summary_graph_epsilon, &self.summary_graph_epsilon);
        set(&mut cfg.clustering.method, &self.method);
        if !self.methods.is_empty() {
            cfg.summarize.methods = self.methods.clone();
        }
        let e = &mut cfg.endpoints;
        set_opt(&mut e.embed, &self.embed_url);
        set_opt(&mut e.summarize_a, &self.summarize_a_url);
        set_opt(&mut e.summarize_b, &self.summarize_b_url);
        set_opt(&mut e.score, &self.score_url);
    }

    /// File, then environment, then flags.
    pub fn resolve(&self, env: impl Fn(&str) -> Option<String>) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        cfg.apply_env(env);
        self.apply(&mut cfg);
        cfg.validate()?;
        Ok(cfg)
    }
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Config(format!("cannot create {}: {e}", dir.display())))
}

fn write_pretty<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("artifact serializes");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::stage("write", format!("{}: {e}", path.display())))
}

/// Runs one subcommand. `env` supplies endpoint overrides.
pub fn execute(command: Command, env: impl Fn(&str) -> Option<String>) -> Result<(), CliError> {
    match command {
        Command::Replay { manifest, out_dir } => {
            let m = pipeline::replay(&manifest, &out_dir)?;
            println!("replay ok: {} artifacts match", m.artifacts.len());
            Ok(())
        }
        Command::Synth {
            dir,
            out_dir,
            seed,
            groups,
            per_group,
            dim,
            noise,
        } => {
            let corpus = generate(&SynthConfig {
                groups,
                per_group,
                dim,
                noise,
                seed,
            });
            let cfg = write_fixture(&dir, &corpus, &out_dir)?;
            println!("wrote {} posts; config at {}", corpus.posts.len(), cfg.display());
            Ok(())
        }
        Command::Run(c) => {
            let cfg = c.resolve(env)?;
            with_workers(cfg.workers, || {
                let m = pipeline::run_pipeline(&cfg, &cfg.paths.out_dir)?;
                print_summary(&m);
                Ok(())
            })
        }
        Command::Ingest(c) => {
            let cfg = c.resolve(env)?;
            let out = &cfg.paths.out_dir;
            ensure_dir(out)?;
            with_workers(cfg.workers, || {
                let corpus = pipeline::ingest(&cfg)?;
                pipeline::write_corpus(out, &corpus.posts)?;
                println!("{} posts read, {} kept", corpus.posts_read, corpus.posts.len());
                Ok(())
            })
        }
        Command::Cluster { common, graph, labels } => {
            let cfg = common.resolve(env)?;
            let out = &cfg.paths.out_dir;
            with_workers(cfg.workers, || {
                let seeds = StageSeeds::derive(cfg.seed);
                let posts = pipeline::load_corpus_artifact(out)?;
                let clustered = match (&graph, &labels) {
                    (Some(g), Some(l)) => {
                        let emb = pipeline::load_post_embeddings(out, &posts)?;
                        pipeline::cluster_exported_graph(&cfg, &seeds, &posts, &emb, g, l)?
                    }
                    _ => {
                        let emb = pipeline::embed_posts(&cfg, &posts)?;
                        pipeline::write_post_embeddings(out, &emb)?;
                        pipeline::cluster_posts(&cfg, &seeds, &posts, &emb)?
                    }
                };
                pipeline::write_clustered(out, &posts, &clustered)?;
                println!("{} clusters over {} posts", clustered.clustering.k(), posts.len());
                Ok(())
            })
        }
        Command::Summarize(c) => {
            let cfg = c.resolve(env)?;
            let out = &cfg.paths.out_dir;
            with_workers(cfg.workers, || {
                let seeds = StageSeeds::derive(cfg.seed);
                let posts = pipeline::load_corpus_artifact(out)?;
                let emb = pipeline::load_post_embeddings(out, &posts)?;
                let clustered = pipeline::load_clustered(out, &posts, &emb)?;
                let outcome = pipeline::summarize(&cfg, &seeds, &posts, &clustered)?;
                pipeline::write_summary_artifacts(out, &outcome)?;
                println!("{} summaries, {} failures", outcome.summaries.len(), outcome.failures.len());
                pipeline::check_summary_failures(&outcome.failures)
            })
        }
        Command::Evaluate(c) => {
            let cfg = c.resolve(env)?;
            let out = &cfg.paths.out_dir;
            let refs = pipeline::load_references(&cfg)?.ok_or_else(|| {
                CliError::Config("references required: pass --references or set paths.references".into())
            })?;
            let posts = pipeline::load_corpus_artifact(out)?;
            let (clustering, _) = pipeline::load_clustering(out, &posts)?;
            let summaries = pipeline::load_summaries_artifact(out)?;
            let eval = pipeline::evaluate(&refs, &posts, &clustering, &summaries)?;
            write_pretty(&out.join(EVALUATION_FILE), &eval)?;
            for m in &eval.report.methods {
                println!(
                    "{:<13} n={:<4} R1={:.4} R2={:.4} RL={:.4} words={:.2}",
                    m.method.as_str(),
                    m.n,
                    m.rouge1_f1,
                    m.rouge2_f1,
                    m.rouge_l_f1,
                    m.mean_word_count
                );
            }
            Ok(())
        }
        Command::SummaryGraph(c) => {
            let cfg = c.resolve(env)?;
            let out = &cfg.paths.out_dir;
            with_workers(cfg.workers, || {
                let seeds = StageSeeds::derive(cfg.seed);
                let posts = pipeline::load_corpus_artifact(out)?;
                let emb = pipeline::load_post_embeddings(out, &posts)?;
                let summaries = pipeline::load_summaries_artifact(out)?;
                let sg = pipeline::summary_graph(&cfg, &seeds, &posts, &emb, &summaries)?;
                write_pretty(&out.join(SUMMARY_GRAPH_FILE), &sg)?;
                for m in &sg.methods {
                    println!(
                        "{:<13} summaries={} communities={} singletons={:.3}",
                        m.method.as_str(),
                        m.report.summary_count,
                        m.report.community_count,
                        m.report.singleton_fraction
                    );
                }
                Ok(())
            })
        }
        Command::Serve { common, addr, ratings } => {
            let cfg = common.resolve(env)?;
            let state = review_state(&cfg, ratings.as_deref())?;
            let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::stage("serve", e))?;
            rt.block_on(claimsift_review::serve(addr, Arc::new(state)))
                .map_err(|e| CliError::stage("serve", e))
        }
    }
}

/// Review service state over the artifacts of a finished run.
pub fn review_state(cfg: &RunConfig, ratings: Option<&Path>) -> Result<AppState, CliError> {
    let out = &cfg.paths.out_dir;
    let posts = pipeline::load_corpus_artifact(out)?;
    let (clustering, _) = pipeline::load_clustering(out, &posts)?;
    let assignments = read_assignments(out.join(CLUSTERS_FILE)).map_err(|e| CliError::stage("serve", e))?;
    let summaries = pipeline::load_summaries_artifact(out)?;
    let references = pipeline::load_references(&cfg)?.unwrap_or_default();
    let cluster_refs = claimsift_core::evaluate::resolve_references(&clustering, &posts);
    let data = ReviewData::from_artifacts(&posts, &assignments, &summaries, &cluster_refs, &references)
        .map_err(|e| CliError::stage("serve", e))?;
    let log_path = ratings.map(Path::to_path_buf).unwrap_or_else(|| out.join("ratings.jsonl"));
    let log = RatingLog::open(&log_path).map_err(|e| CliError::stage("serve", e))?;
    Ok(AppState {
        data,
        log,
        default_seed: StageSeeds::derive(cfg.seed).review,
    })
}

fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> T {
    if workers == 0 {
        return f();
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .expect("worker pool")
        .install(f)
}

fn print_summary(m: &RunManifest) {
    let c = &m.counts;
    println!(
        "posts: {} read, {} clean, {} clustered; {} clusters; {} summaries",
        c.posts_read, c.posts_clean, c.posts_relevant, c.clusters, c.summaries
    );
    if let Some(r) = c.reduction_ratio {
        println!("reduction ratio: {r:.4}");
    }
}
