//! Run configuration: a TOML file, then endpoint environment variables,
//! then command-line flags, each overriding the previous.

use std::path::{Path, PathBuf};

use claimsift_core::clustering::{ClusterConfig, ClusterMethod};
use claimsift_core::summarize::SummaryMethod;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Rayon worker threads; 0 lets rayon decide.
    pub workers: usize,
    pub paths: Paths,
    pub thresholds: Thresholds,
    pub clustering: Clustering,
    pub summarize: Summarize,
    pub endpoints: Endpoints,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            workers: 0,
            paths: Paths::default(),
            thresholds: Thresholds::default(),
            clustering: Clustering::default(),
            summarize: Summarize::default(),
            endpoints: Endpoints::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub corpus: Option<PathBuf>,
    /// Precomputed embeddings; when absent the embed endpoint is used.
    pub embeddings: Option<PathBuf>,
    pub references: Option<PathBuf>,
    /// JSONL `{post_id, score}` relevance scores.
    pub relevance_scores: Option<PathBuf>,
    /// Left out of serialized output when empty, as in run manifests.
    #[serde(skip_serializing_if = "is_empty_path")]
    pub out_dir: PathBuf,
}

fn is_empty_path(p: &Path) -> bool {
    p.as_os_str().is_empty()
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            corpus: None,
            embeddings: None,
            references: None,
            relevance_scores: None,
            out_dir: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub delta: f64,
    /// Defaults to `delta`.
    pub epsilon: Option<f64>,
    pub delta_dup: f64,
    pub theta: f64,
    pub min_words: usize,
    pub summary_graph_epsilon: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            delta: 0.85,
            epsilon: None,
            delta_dup: 0.95,
            theta: 0.1,
            min_words: 4,
            summary_graph_epsilon: 0.75,
        }
    }
}

impl Thresholds {
    pub fn epsilon(&self) -> f64 {
        self.epsilon.unwrap_or(self.delta)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Clustering {
    pub method: ClusterMethod,
    pub resolution: f64,
    pub restarts: usize,
    pub max_leiden_iterations: usize,
}

impl Default for Clustering {
    fn default() -> Self {
        let d = ClusterConfig::default();
        Self {
            method: ClusterMethod::Leiden,
            resolution: d.resolution,
            restarts: d.restarts,
            max_leiden_iterations: d.max_leiden_iterations,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Summarize {
    pub methods: Vec<SummaryMethod>,
    pub max_chars: usize,
    pub max_tokens: usize,
    pub max_in_flight: usize,
}

impl Default for Summarize {
    fn default() -> Self {
        Self {
            methods: vec![SummaryMethod::Dg, SummaryMethod::Mci],
            max_chars: 4000,
            max_tokens: 64,
            max_in_flight: 4,
        }
    }
}

/// The value that selects the built-in echo summarizer instead of HTTP.
pub const STUB_ENDPOINT: &str = "stub";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Endpoints {
    pub embed: Option<String>,
    pub summarize_a: Option<String>,
    pub summarize_b: Option<String>,
    pub score: Option<String>,
    pub timeout_secs: u64,
}

impl Default for Endpoints {
    fn default() -> Self {
        Self {
            embed: None,
            summarize_a: None,
            summarize_b: None,
            score: None,
            timeout_secs: 60,
        }
    }
}

pub const ENDPOINT_ENV: [(&str, fn(&mut Endpoints) -> &mut Option<String>); 4] = [
    ("CLAIMSIFT_EMBED_URL", |e| &mut e.embed),
    ("CLAIMSIFT_SUMMARIZE_A_URL", |e| &mut e.summarize_a),
    ("CLAIMSIFT_SUMMARIZE_B_URL", |e| &mut e.summarize_b),
    ("CLAIMSIFT_SCORE_URL", |e| &mut e.score),
];

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Endpoint URLs from the environment replace those from the file.
    pub fn apply_env(&mut self, get: impl Fn(&str) -> Option<String>) {
        for (var, slot) in ENDPOINT_ENV {
            if let Some(v) = get(var).filter(|v| !v.is_empty()) {
                *slot(&mut self.endpoints) = Some(v);
            }
        }
    }

    pub fn cluster_config(&self, seed: u64) -> ClusterConfig {
        ClusterConfig {
            delta: self.thresholds.delta,
            resolution: self.clustering.resolution,
            seed,
            max_leiden_iterations: self.clustering.max_leiden_iterations,
            restarts: self.clustering.restarts,
        }
    }

    pub fn summarizer_endpoint(&self, method: SummaryMethod) -> Option<&str> {
        match method {
            SummaryMethod::AbstractiveA => self.endpoints.summarize_a.as_deref(),
            SummaryMethod::AbstractiveB => self.endpoints.summarize_b.as_deref(),
            _ => None,
        }
    }

    /// Checks values only; whether input files exist is checked per command.
    pub fn validate(&self) -> Result<(), CliError> {
        let t = &self.thresholds;
        for (name, v) in [
            ("delta", t.delta),
            ("epsilon", t.epsilon()),
            ("delta_dup", t.delta_dup),
            ("theta", t.theta),
            ("summary_graph_epsilon", t.summary_graph_epsilon),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(CliError::Config(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        if t.delta_dup <= t.delta {
            return Err(CliError::Config(format!(
                "delta_dup ({}) must exceed delta ({})",
                t.delta_dup, t.delta
            )));
        }
        if self.clustering.method == ClusterMethod::External {
            return Err(CliError::Config("clustering.method must be leiden or agglomerative".into()));
        }
        self.cluster_config(0)
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        let s = &self.summarize;
        if s.methods.is_empty() {
            return Err(CliError::Config("summarize.methods is empty".into()));
        }
        if s.max_chars == 0 || s.max_tokens == 0 || s.max_in_flight == 0 {
            return Err(CliError::Config(
                "max_chars, max_tokens and max_in_flight must be positive".into(),
            ));
        }
        for &m in &s.methods {
            if !m.is_extractive() && self.summarizer_endpoint(m).is_none() {
                return Err(CliError::Config(format!("{m} needs an endpoint (or \"{STUB_ENDPOINT}\")")));
            }
        }
        Ok(())
    }
}
