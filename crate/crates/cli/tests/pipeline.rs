//! End-to-end runs of the pipeline on small synthetic fixtures.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::Command as Process;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use axum::body::Body;
use axum::extract::State;
use axum::http::{Request, StatusCode};
use axum::routing::post;
use axum::{Json, Router};
use claimsift_cli::cli::{execute, review_state, Command, Common};
use claimsift_cli::config::RunConfig;
use claimsift_cli::manifest::{RunManifest, RunStatus, MANIFEST_FILE};
use claimsift_cli::pipeline::{self, ARTIFACTS, CLUSTERS_FILE, GRAPH_FILE, GRAPH_LABELS_FILE, SUMMARY_GRAPH_FILE};
use claimsift_cli::synth::{fixture_config, generate, write_fixture, SynthConfig, SynthCorpus};
use claimsift_cli::{replay, run_pipeline, CliError};
use claimsift_core::clustering::{adjusted_rand_index, read_assignments, ClusterMethod};
use claimsift_core::corpus::clean_text;
use claimsift_core::summarize::{read_summaries, SummaryMethod};
use serde_json::{json, Value};
use tower::ServiceExt;

fn no_env(_: &str) -> Option<String> {
    None
}

fn small() -> SynthConfig {
    SynthConfig {
        groups: 4,
        per_group: 8,
        seed: 3,
        ..SynthConfig::default()
    }
}

struct Fixture {
    _tmp: tempfile::TempDir,
    dir: PathBuf,
    corpus: SynthCorpus,
}

impl Fixture {
    fn new(cfg: &SynthConfig) -> Self {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("fixture");
        let corpus = generate(cfg);
        write_fixture(&dir, &corpus, &tmp.path().join("out")).unwrap();
        Self { _tmp: tmp, dir, corpus }
    }

    fn out(&self, name: &str) -> PathBuf {
        self._tmp.path().join(name)
    }

    fn config(&self, out: &str) -> RunConfig {
        fixture_config(&self.dir, &self.out(out))
    }

    fn common(&self, out: &str) -> Common {
        Common {
            config: Some(self.dir.join("run.toml")),
            out_dir: Some(self.out(out)),
            ..Common::default()
        }
    }
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn assert_same_artifacts(a: &Path, b: &Path, names: &[&str]) {
    for name in names {
        assert_eq!(read(&a.join(name)), read(&b.join(name)), "{name} differs");
    }
}

fn stage_all(f: &Fixture, out: &str, method: ClusterMethod) {
    let mut c = f.common(out);
    c.method = Some(method);
    execute(Command::Ingest(c.clone()), no_env).unwrap();
    execute(
        Command::Cluster {
            common: c.clone(),
            graph: None,
            labels: None,
        },
        no_env,
    )
    .unwrap();
    execute(Command::Summarize(c.clone()), no_env).unwrap();
    execute(Command::Evaluate(c.clone()), no_env).unwrap();
    execute(Command::SummaryGraph(c), no_env).unwrap();
}

#[test]
fn staged_subcommands_reproduce_the_fused_run() {
    let f = Fixture::new(&small());
    for method in [ClusterMethod::Leiden, ClusterMethod::Agglomerative] {
        let mut cfg = f.config("fused");
        cfg.clustering.method = method;
        run_pipeline(&cfg, &f.out("fused")).unwrap();
        stage_all(&f, "staged", method);
        assert_same_artifacts(&f.out("fused"), &f.out("staged"), &ARTIFACTS);
    }
}

#[test]
fn clustering_the_exported_graph_matches_the_in_process_result() {
    let f = Fixture::new(&small());
    let fused = f.out("fused");
    run_pipeline(&f.config("fused"), &fused).unwrap();
    let staged = f.out("from-graph");
    std::fs::create_dir_all(&staged).unwrap();
    for name in [pipeline::CLEAN_FILE, pipeline::EMBEDDINGS_FILE] {
        std::fs::copy(fused.join(name), staged.join(name)).unwrap();
    }
    execute(
        Command::Cluster {
            common: f.common("from-graph"),
            graph: Some(fused.join(GRAPH_FILE)),
            labels: Some(fused.join(GRAPH_LABELS_FILE)),
        },
        no_env,
    )
    .unwrap();
    assert_same_artifacts(&fused, &staged, &[CLUSTERS_FILE, pipeline::CLUSTER_META_FILE, GRAPH_FILE]);
}

#[test]
fn missing_embedding_source_fails_before_any_work() {
    let f = Fixture::new(&small());
    let mut cfg = f.config("none");
    cfg.paths.embeddings = None;
    let err = run_pipeline(&cfg, &f.out("none")).unwrap_err();
    assert!(matches!(err, CliError::Config(ref m) if m.contains("embed")), "{err}");
    assert_eq!(err.exit_code(), 2);
    assert!(!f.out("none").exists());
}

#[test]
fn evaluate_requires_references() {
    let f = Fixture::new(&small());
    let mut cfg = f.config("run");
    cfg.paths.references = None;
    run_pipeline(&cfg, &f.out("run")).unwrap();
    assert!(!f.out("run").join(pipeline::EVALUATION_FILE).exists());
    let c = Common {
        out_dir: Some(f.out("run")),
        corpus: cfg.paths.corpus.clone(),
        embeddings: cfg.paths.embeddings.clone(),
        ..Common::default()
    };
    let err = execute(Command::Evaluate(c), no_env).unwrap_err();
    assert!(err.to_string().contains("references required"), "{err}");
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn one_summary_gives_one_community() {
    let f = Fixture::new(&SynthConfig {
        groups: 1,
        per_group: 6,
        ..SynthConfig::default()
    });
    let m = run_pipeline(&f.config("run"), &f.out("run")).unwrap();
    assert_eq!(m.counts.clusters, 1);
    let sg: Value = serde_json::from_slice(&read(&f.out("run").join(SUMMARY_GRAPH_FILE))).unwrap();
    for entry in sg["methods"].as_array().unwrap() {
        assert_eq!(entry["report"]["summary_count"], 1);
        assert_eq!(entry["report"]["community_count"], 1);
    }
}

#[test]
fn reruns_are_byte_identical_and_replay_verifies() {
    let f = Fixture::new(&small());
    let a = run_pipeline(&f.config("a"), &f.out("a")).unwrap();
    let b = run_pipeline(&f.config("b"), &f.out("b")).unwrap();
    assert_eq!(a, b);
    assert_same_artifacts(&f.out("a"), &f.out("b"), &[&ARTIFACTS[..], &[MANIFEST_FILE]].concat());

    let r = replay(&f.out("a").join(MANIFEST_FILE), &f.out("c")).unwrap();
    assert_eq!(r.artifacts, a.artifacts);

    let mut tampered = a.clone();
    tampered.artifacts[0].sha256 = "0".repeat(64);
    let dir = f.out("tampered");
    std::fs::create_dir_all(&dir).unwrap();
    tampered.write(&dir).unwrap();
    let err = replay(&dir.join(MANIFEST_FILE), &f.out("d")).unwrap_err();
    assert!(matches!(err, CliError::Stage { ref stage, .. } if stage == "replay"), "{err}");
}

#[test]
fn seed_changes_recorded_seeds_but_not_a_clear_partition() {
    let f = Fixture::new(&small());
    let mut cfg = f.config("s1");
    cfg.seed = 1;
    let m1 = run_pipeline(&cfg, &f.out("s1")).unwrap();
    let m0 = run_pipeline(&f.config("s0"), &f.out("s0")).unwrap();
    assert_ne!(m0.seeds, m1.seeds);
    // Well-separated groups give the same partition whatever the seed.
    assert_same_artifacts(&f.out("s0"), &f.out("s1"), &[CLUSTERS_FILE]);
}

#[test]
fn flags_override_file_and_environment_overrides_file() {
    let f = Fixture::new(&small());
    let mut c = f.common("x");
    c.delta = Some(0.9);
    c.methods = vec![SummaryMethod::Mci];
    let cfg = c
        .resolve(|k| (k == "CLAIMSIFT_SUMMARIZE_A_URL").then(|| "http://env-a".to_string()))
        .unwrap();
    assert_eq!(cfg.thresholds.delta, 0.9);
    assert_eq!(cfg.thresholds.epsilon(), 0.9);
    assert_eq!(cfg.summarize.methods, vec![SummaryMethod::Mci]);
    assert_eq!(cfg.endpoints.summarize_a.as_deref(), Some("http://env-a"));

    c.summarize_a_url = Some("http://flag-a".into());
    let cfg = c.resolve(|_| Some("http://env".to_string())).unwrap();
    assert_eq!(cfg.endpoints.summarize_a.as_deref(), Some("http://flag-a"));
    assert_eq!(cfg.endpoints.embed.as_deref(), Some("http://env"));
}

#[test]
fn relevance_scores_filter_posts() {
    let f = Fixture::new(&small());
    let scores = f.out("scores.jsonl");
    let lines: Vec<String> = f
        .corpus
        .posts
        .iter()
        .map(|p| {
            let s = if f.corpus.group_of(&p.id) == Some(0) { 0.05 } else { 0.9 };
            json!({"post_id": p.id, "score": s}).to_string()
        })
        .collect();
    std::fs::write(&scores, lines.join("\n")).unwrap();
    let mut cfg = f.config("rel");
    cfg.paths.relevance_scores = Some(scores);
    let m = run_pipeline(&cfg, &f.out("rel")).unwrap();
    assert_eq!(m.counts.posts_read, 32);
    assert_eq!(m.counts.posts_relevant, 24);
    assert_eq!(m.counts.clusters, 3);
    assert_eq!(m.inputs.len(), 4);
}

#[derive(Clone)]
struct Sidecar {
    vectors: Arc<HashMap<String, Vec<f32>>>,
    embed_calls: Arc<AtomicUsize>,
    summarize_calls: Arc<AtomicUsize>,
}

const SUMMARY_PREFIX: &str = "claim: ";

async fn embed(State(s): State<Sidecar>, Json(body): Json<Value>) -> (StatusCode, Json<Value>) {
    s.embed_calls.fetch_add(1, Ordering::SeqCst);
    let texts: Vec<String> = serde_json::from_value(body["texts"].clone()).unwrap();
    let mut vectors = Vec::new();
    for t in &texts {
        match s.vectors.get(t.strip_prefix(SUMMARY_PREFIX).unwrap_or(t)) {
            Some(v) => vectors.push(v.clone()),
            None => return (StatusCode::BAD_REQUEST, Json(json!({"error": format!("unknown text {t}")}))),
        }
    }
    let dim = vectors.first().map_or(0, Vec::len);
    (StatusCode::OK, Json(json!({"dim": dim, "model": "lookup", "vectors": vectors})))
}

async fn summarize(State(s): State<Sidecar>, Json(body): Json<Value>) -> Json<Value> {
    s.summarize_calls.fetch_add(1, Ordering::SeqCst);
    let first = body["texts"][0].as_str().unwrap().to_owned();
    Json(json!({ "summary": format!("{SUMMARY_PREFIX}{first}") }))
}

fn spawn_sidecar(s: Sidecar) -> SocketAddr {
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Runtime::new().unwrap();
        rt.block_on(async move {
            let app = Router::new()
                .route("/embed", post(embed))
                .route("/summarize", post(summarize))
                .with_state(s);
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            axum::serve(listener, app).await.unwrap();
        });
    });
    rx.recv().unwrap()
}

#[test]
fn http_sidecar_embeds_and_summarizes() {
    let f = Fixture::new(&small());
    let vectors: HashMap<String, Vec<f32>> = f
        .corpus
        .posts
        .iter()
        .enumerate()
        .map(|(i, p)| (clean_text(&p.text), f.corpus.embeddings.row(i).to_vec()))
        .collect();
    let side = Sidecar {
        vectors: Arc::new(vectors),
        embed_calls: Arc::default(),
        summarize_calls: Arc::default(),
    };
    let addr = spawn_sidecar(side.clone());
    let mut cfg = f.config("http");
    cfg.paths.embeddings = None;
    cfg.endpoints.embed = Some(format!("http://{addr}"));
    cfg.endpoints.summarize_a = Some(format!("http://{addr}"));
    cfg.endpoints.summarize_b = Some("stub".into());
    cfg.summarize.methods = SummaryMethod::ALL.to_vec();
    let m = run_pipeline(&cfg, &f.out("http")).unwrap();
    assert_eq!(m.status, RunStatus::Complete);
    assert_eq!(m.counts.clusters, 4);
    assert_eq!(m.counts.summaries, 16);
    assert_eq!(side.summarize_calls.load(Ordering::SeqCst), 4);
    // One call for the posts and one for the generated summaries.
    assert_eq!(side.embed_calls.load(Ordering::SeqCst), 2);

    let summaries = read_summaries(f.out("http").join(pipeline::SUMMARIES_FILE)).unwrap();
    let a: Vec<_> = summaries.iter().filter(|s| s.method == SummaryMethod::AbstractiveA).collect();
    assert_eq!(a.len(), 4);
    assert!(a.iter().all(|s| s.text.starts_with(SUMMARY_PREFIX) && s.source_post_id.is_none()));

    let assignments = read_assignments(f.out("http").join(CLUSTERS_FILE)).unwrap();
    let found: Vec<usize> = assignments.iter().map(|a| a.cluster_id).collect();
    let planted: Vec<usize> = assignments.iter().map(|a| f.corpus.group_of(&a.post_id).unwrap()).collect();
    assert_eq!(adjusted_rand_index(&found, &planted), 1.0);

    let sg: Value = serde_json::from_slice(&read(&f.out("http").join(SUMMARY_GRAPH_FILE))).unwrap();
    assert_eq!(sg["methods"].as_array().unwrap().len(), 4);
    assert!(sg["skipped"].as_array().unwrap().is_empty());
}

#[test]
fn abstractive_summaries_without_embeddings_are_skipped_in_the_summary_graph() {
    let f = Fixture::new(&small());
    let addr = spawn_sidecar(Sidecar {
        vectors: Arc::default(),
        embed_calls: Arc::default(),
        summarize_calls: Arc::default(),
    });
    let mut cfg = f.config("skip");
    cfg.endpoints.summarize_a = Some(format!("http://{addr}"));
    cfg.summarize.methods = vec![SummaryMethod::Dg, SummaryMethod::AbstractiveA];
    run_pipeline(&cfg, &f.out("skip")).unwrap();
    let sg: Value = serde_json::from_slice(&read(&f.out("skip").join(SUMMARY_GRAPH_FILE))).unwrap();
    assert_eq!(sg["methods"][0]["method"], "DG");
    assert_eq!(sg["skipped"][0]["method"], "AbstractiveA");
}

#[test]
fn unreachable_summarizer_leaves_a_partial_manifest() {
    let f = Fixture::new(&small());
    let mut cfg = f.config("down");
    cfg.endpoints.summarize_a = Some("http://127.0.0.1:9".into());
    cfg.endpoints.timeout_secs = 2;
    cfg.summarize.methods = vec![SummaryMethod::Dg, SummaryMethod::AbstractiveA];
    let err = run_pipeline(&cfg, &f.out("down")).unwrap_err();
    assert_eq!(err.exit_code(), 4);
    assert_eq!(err.stage_name(), Some("summarize"));
    let m = RunManifest::read(&f.out("down").join(MANIFEST_FILE)).unwrap();
    assert_eq!(m.status, RunStatus::Partial);
    assert_eq!(m.failure.unwrap().stage, "summarize");
    assert_eq!(m.stages, vec!["ingest", "embed", "cluster"]);
    assert_eq!(m.counts.summary_failures, 4);
    let names: Vec<&str> = m.artifacts.iter().map(|d| d.path.as_str()).collect();
    assert!(names.contains(&pipeline::FAILURES_FILE));
    assert!(!names.contains(&SUMMARY_GRAPH_FILE));
}

#[test]
fn stage_inputs_from_another_run_are_rejected() {
    let f = Fixture::new(&small());
    run_pipeline(&f.config("a"), &f.out("a")).unwrap();
    let other = Fixture::new(&SynthConfig { seed: 11, ..small() });
    run_pipeline(&other.config("b"), &other.out("b")).unwrap();
    std::fs::copy(other.out("b").join(CLUSTERS_FILE), f.out("a").join(CLUSTERS_FILE)).unwrap();
    let err = execute(Command::Summarize(f.common("a")), no_env).unwrap_err();
    assert_eq!(err.exit_code(), 3);
    assert!(err.to_string().contains(CLUSTERS_FILE), "{err}");
}

#[test]
fn review_service_reads_run_artifacts() {
    let f = Fixture::new(&small());
    let mut cfg = f.config("rev");
    cfg.summarize.methods = vec![SummaryMethod::Dg, SummaryMethod::Mci];
    run_pipeline(&cfg, &f.out("rev")).unwrap();
    let state = review_state(&cfg, None).unwrap();
    assert_eq!(state.data.len(), 4);
    assert!(state.data.clusters().iter().all(|c| c.summaries.len() == 3));
    let app = claimsift_review::router(Arc::new(state));
    let rt = tokio::runtime::Runtime::new().unwrap();
    let body = rt.block_on(async {
        let resp = app
            .oneshot(Request::get("/api/clusters").body(Body::empty()).unwrap())
            .await
            .unwrap();
        assert_eq!(resp.status(), StatusCode::OK);
        axum::body::to_bytes(resp.into_body(), usize::MAX).await.unwrap()
    });
    let v: Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(v["total"], 4);
    assert_eq!(v["clusters"][0]["member_count"], 8);
}

fn bin() -> Process {
    Process::new(env!("CARGO_BIN_EXE_claimsift"))
}

#[test]
fn binary_exit_codes() {
    let f = Fixture::new(&small());
    let ok = bin()
        .args(["run", "--config"])
        .arg(f.dir.join("run.toml"))
        .arg("--out-dir")
        .arg(f.out("bin"))
        .output()
        .unwrap();
    assert!(ok.status.success(), "{}", String::from_utf8_lossy(&ok.stderr));
    assert!(String::from_utf8_lossy(&ok.stdout).contains("4 clusters"));

    let bad_config = f.out("bad.toml");
    std::fs::write(&bad_config, "[thresholds]\ndelta = 2.0\n").unwrap();
    let out = bin().args(["run", "--config"]).arg(&bad_config).output().unwrap();
    assert_eq!(out.status.code(), Some(2));

    let out = bin()
        .args(["summarize", "--out-dir"])
        .arg(f.out("empty"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("stage ingest"));

    let out = bin()
        .args(["run", "--config"])
        .arg(f.dir.join("run.toml"))
        .arg("--out-dir")
        .arg(f.out("down"))
        .args(["--methods", "AbstractiveB", "--summarize-b-url", "http://127.0.0.1:9"])
        .env("RUST_LOG", "off")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(4));
}
