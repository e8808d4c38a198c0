//! Loading, cleaning and filtering of raw posts.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::LazyLock;

use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("no relevance score for posts: {}", .0.join(", "))]
    MissingScores(Vec<String>),
    #[error("invalid relevance config: {0}")]
    InvalidConfig(String),
}

/// A raw social-media message as collected.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Post {
    pub id: String,
    pub text: String,
    pub lang: String,
    pub like_count: u64,
    pub repost_count: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_ref: Option<String>,
}

/// A post after cleaning. Carries the original record so the cleaned corpus
/// file keeps the full post schema plus `clean_text` and `word_count`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleanPost {
    #[serde(flatten)]
    pub post: Post,
    pub clean_text: String,
    pub word_count: usize,
}

impl CleanPost {
    pub fn post_id(&self) -> &str {
        &self.post.id
    }

    pub fn engagement(&self) -> u64 {
        self.post.like_count.saturating_add(self.post.repost_count)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelevanceConfig {
    pub theta: f64,
    pub min_words: usize,
}

impl Default for RelevanceConfig {
    fn default() -> Self {
        Self {
            theta: 0.1,
            min_words: 4,
        }
    }
}

impl RelevanceConfig {
    pub fn validate(&self) -> Result<(), CorpusError> {
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(CorpusError::InvalidConfig(format!(
                "theta must lie in [0, 1], got {}",
                self.theta
            )));
        }
        if self.min_words == 0 {
            return Err(CorpusError::InvalidConfig("min_words must be positive".into()));
        }
        Ok(())
    }
}

/// Posts read from a JSONL source, with the ids that were dropped as duplicates.
#[derive(Debug, Default)]
pub struct LoadedCorpus {
    pub posts: Vec<Post>,
    pub duplicate_ids: Vec<String>,
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<Post>, CorpusError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let loaded = read_posts(BufReader::new(file))?;
    for id in &loaded.duplicate_ids {
        warn!(post_id = %id, "duplicate post id dropped");
    }
    Ok(loaded.posts)
}

/// Parses posts one per line. Blank lines are skipped; the first occurrence of
/// an id wins.
pub fn read_posts<R: BufRead>(reader: R) -> Result<LoadedCorpus, CorpusError> {
    let mut seen = HashSet::new();
    let mut out = LoadedCorpus::default();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| CorpusError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let post: Post = serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if seen.insert(post.id.clone()) {
            out.posts.push(post);
        } else {
            out.duplicate_ids.push(post.id);
        }
    }
    Ok(out)
}

pub fn read_clean_corpus(path: impl AsRef<Path>) -> Result<Vec<CleanPost>, CorpusError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CorpusError::Parse {
            line: idx + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let post: CleanPost = serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
            line: idx + 1,
            message: e.to_string(),
        })?;
        out.push(post);
    }
    Ok(out)
}

pub fn write_clean_corpus(path: impl AsRef<Path>, posts: &[CleanPost]) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let io_err = |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut file = std::io::BufWriter::new(File::create(path).map_err(io_err)?);
    for post in posts {
        let line = serde_json::to_string(post).expect("CleanPost serializes");
        writeln!(file, "{line}").map_err(io_err)?;
    }
    file.flush().map_err(io_err)
}

static URL: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)\b(?:https?://|www\.)\S*").unwrap());
static MENTION: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"@\w+").unwrap());
static HASHTAG: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"#\w+").unwrap());
// Pictographs plus the joiners, selectors, keycaps, skin tones and flag letters
// that only occur inside emoji sequences.
static EMOJI: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"[\p{Extended_Pictographic}\p{Emoji_Modifier}\p{Regional_Indicator}\u{200D}\u{FE0E}\u{FE0F}\u{20E3}]")
        .unwrap()
});

fn strip_once(text: &str) -> String {
    let text = EMOJI.replace_all(text, "");
    let text = URL.replace_all(&text, " ");
    let text = MENTION.replace_all(&text, " ");
    HASHTAG.replace_all(&text, " ").into_owned()
}

/// Removes mentions, URLs, hashtags and emoji, then collapses whitespace.
///
/// Removal is repeated until nothing more matches, since deleting one token
/// can expose another (`#a@b` leaves `@b` behind).
pub fn clean_text(raw: &str) -> String {
    let mut current = raw.to_owned();
    loop {
        let next = strip_once(&current);
        if next == current {
            break;
        }
        current = next;
    }
    current.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

pub fn clean_post(post: &Post) -> CleanPost {
    let clean = clean_text(&post.text);
    CleanPost {
        word_count: word_count(&clean),
        clean_text: clean,
        post: post.clone(),
    }
}

/// Cleans every post and drops those left with fewer than `min_words` words.
pub fn preprocess(posts: &[Post], cfg: &RelevanceConfig) -> Vec<CleanPost> {
    posts
        .par_iter()
        .map(clean_post)
        .filter(|p| p.word_count >= cfg.min_words)
        .collect()
}

/// Keeps posts whose relevance score is at least `theta`.
pub fn filter_relevant(
    posts: &[CleanPost],
    scores: &HashMap<String, f64>,
    cfg: &RelevanceConfig,
) -> Result<Vec<CleanPost>, CorpusError> {
    let missing: Vec<String> = posts
        .iter()
        .filter(|p| !scores.contains_key(p.post_id()))
        .map(|p| p.post_id().to_owned())
        .collect();
    if !missing.is_empty() {
        return Err(CorpusError::MissingScores(missing));
    }
    Ok(posts
        .iter()
        .filter(|p| scores[p.post_id()] >= cfg.theta)
        .cloned()
        .collect())
}
