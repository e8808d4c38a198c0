//! Seeded synthetic corpus with planted claim groups.
//!
//! Each group has a random unit center in embedding space and a small set of
//! topic words. A post's vector is its center plus Gaussian noise, and its
//! text mixes topic words with a few shared filler words and social-media
//! clutter. Each group cites one reference whose text is its topic words.

use std::io::Write;
use std::path::{Path, PathBuf};

use claimsift_core::corpus::Post;
use claimsift_core::embedding::{save_embeddings, EmbeddingMatrix};
use claimsift_core::evaluate::Reference;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub groups: usize,
    pub per_group: usize,
    pub dim: usize,
    /// Expected norm of the noise added to a unit center.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            groups: 20,
            per_group: 30,
            dim: 64,
            noise: 0.2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantedLabel {
    pub post_id: String,
    pub group: usize,
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub posts: Vec<Post>,
    pub embeddings: EmbeddingMatrix,
    pub references: Vec<Reference>,
    /// Planted group of `posts[i]`.
    pub groups: Vec<usize>,
}

impl SynthCorpus {
    pub fn group_of(&self, post_id: &str) -> Option<usize> {
        self.posts.iter().position(|p| p.id == post_id).map(|i| self.groups[i])
    }
}

const TOPIC_WORDS: usize = 8;
const FILLER_WORDS: usize = 40;
const SYLLABLES: [&str; 10] = ["ka", "lo", "mi", "nu", "re", "sa", "ti", "vo", "ze", "du"];

/// A pronounceable token unique to `i` for `i < 1000`.
fn word(i: usize) -> String {
    [i / 100 % 10, i / 10 % 10, i % 10].iter().map(|&d| SYLLABLES[d]).collect()
}

fn topic_word(group: usize, k: usize) -> String {
    word(group * TOPIC_WORDS + k)
}

fn filler_word(k: usize) -> String {
    word(999 - k)
}

fn unit_gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / norm).collect()
}

pub fn generate(cfg: &SynthConfig) -> SynthCorpus {
    assert!(cfg.groups * TOPIC_WORDS + FILLER_WORDS <= 1000, "too many groups for the word pool");
    assert!(cfg.dim > 0, "dim must be positive");
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let centers: Vec<Vec<f64>> = (0..cfg.groups).map(|_| unit_gaussian(&mut rng, cfg.dim)).collect();
    let sigma = cfg.noise / (cfg.dim as f64).sqrt();
    let fillers: Vec<String> = (0..FILLER_WORDS).map(filler_word).collect();

    let mut rows: Vec<(Post, Vec<f32>, usize)> = Vec::with_capacity(cfg.groups * cfg.per_group);
    for (g, center) in centers.iter().enumerate() {
        let topic: Vec<String> = (0..TOPIC_WORDS).map(|k| topic_word(g, k)).collect();
        for i in 0..cfg.per_group {
            let vector: Vec<f32> = center
                .iter()
                .map(|c| (c + sigma * rng.sample::<f64, _>(StandardNormal)) as f32)
                .collect();
            let take = rng.random_range(5..=TOPIC_WORDS);
            let mut words: Vec<String> = topic.choose_multiple(&mut rng, take).cloned().collect();
            for _ in 0..rng.random_range(1..=2) {
                words.push(fillers.choose(&mut rng).expect("fillers").clone());
            }
            words.shuffle(&mut rng);
            let mut text = words.join(" ");
            if rng.random_bool(0.3) {
                text = format!("@user{} {text}", rng.random_range(0..100));
            }
            if rng.random_bool(0.3) {
                text.push_str(&format!(" https://t.co/{}", rng.random_range(1000..10000)));
            }
            if rng.random_bool(0.2) {
                text.push_str(&format!(" #{}", topic[0]));
            }
            let post = Post {
                id: format!("g{g:02}p{i:03}"),
                text,
                lang: "en".into(),
                like_count: rng.random_range(0..1000),
                repost_count: rng.random_range(0..200),
                source_ref: Some(format!("news-{g:02}")),
            };
            rows.push((post, vector, g));
        }
    }
    rows.shuffle(&mut rng);

    let ids: Vec<String> = rows.iter().map(|(p, _, _)| p.id.clone()).collect();
    let vectors: Vec<Vec<f32>> = rows.iter().map(|(_, v, _)| v.clone()).collect();
    let embeddings = EmbeddingMatrix::from_rows(ids, vectors, "synthetic-gaussian").expect("synthetic rows are valid");
    let references = (0..cfg.groups)
        .map(|g| Reference {
            reference_id: format!("news-{g:02}"),
            text: (0..TOPIC_WORDS).map(|k| topic_word(g, k)).collect::<Vec<_>>().join(" "),
        })
        .collect();
    let (posts, groups) = rows.into_iter().map(|(p, _, g)| (p, g)).unzip();
    SynthCorpus {
        posts,
        embeddings,
        references,
        groups,
    }
}

pub const SYNTH_CORPUS_FILE: &str = "corpus.jsonl";
pub const SYNTH_EMBEDDINGS_FILE: &str = "embeddings.bin";
pub const SYNTH_REFERENCES_FILE: &str = "references.jsonl";
pub const SYNTH_LABELS_FILE: &str = "planted.jsonl";
pub const SYNTH_CONFIG_FILE: &str = "run.toml";

fn write_jsonl<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> std::io::Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for item in items {
        writeln!(w, "{}", serde_json::to_string(&item).expect("record serializes"))?;
    }
    w.flush()
}

/// Writes the corpus, embeddings, references, planted labels and a run
/// configuration that points at them. Returns the configuration path.
pub fn write_fixture(dir: &Path, corpus: &SynthCorpus, out_dir: &Path) -> Result<PathBuf, CliError> {
    let io = |e: std::io::Error| CliError::stage("synth", e);
    std::fs::create_dir_all(dir).map_err(io)?;
    write_jsonl(&dir.join(SYNTH_CORPUS_FILE), &corpus.posts).map_err(io)?;
    save_embeddings(&corpus.embeddings, dir.join(SYNTH_EMBEDDINGS_FILE)).map_err(|e| CliError::stage("synth", e))?;
    write_jsonl(&dir.join(SYNTH_REFERENCES_FILE), &corpus.references).map_err(io)?;
    write_jsonl(
        &dir.join(SYNTH_LABELS_FILE),
        corpus.posts.iter().zip(&corpus.groups).map(|(p, &group)| PlantedLabel {
            post_id: p.id.clone(),
            group,
        }),
    )
    .map_err(io)?;
    let cfg = fixture_config(dir, out_dir);
    let path = dir.join(SYNTH_CONFIG_FILE);
    let text = toml::to_string(&cfg).map_err(|e| CliError::stage("synth", e))?;
    std::fs::write(&path, text).map_err(io)?;
    Ok(path)
}

/// Run configuration over a fixture written by [`write_fixture`].
pub fn fixture_config(dir: &Path, out_dir: &Path) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.paths.corpus = Some(dir.join(SYNTH_CORPUS_FILE));
    cfg.paths.embeddings = Some(dir.join(SYNTH_EMBEDDINGS_FILE));
    cfg.paths.references = Some(dir.join(SYNTH_REFERENCES_FILE));
    cfg.paths.out_dir = out_dir.to_path_buf();
    cfg
}
