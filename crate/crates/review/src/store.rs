use std::fs::{File, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use crate::model::Rating;
use crate::ReviewError;

/// Append-only JSONL ratings log. Appends are serialized; each record is
/// written with a single call, and readers skip a trailing unterminated line.
#[derive(Debug)]
pub struct RatingLog {
    path: PathBuf,
    file: Mutex<File>,
}

impl RatingLog {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, ReviewError> {
        let path = path.as_ref().to_path_buf();
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Self {
            path,
            file: Mutex::new(file),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&self, r: &Rating) -> Result<(), ReviewError> {
        let mut line = serde_json::to_string(r).expect("rating serializes");
        line.push('\n');
        let mut f = self.file.lock().expect("ratings log lock");
        f.write_all(line.as_bytes())?;
        f.flush()?;
        Ok(())
    }

    /// The raw log as complete JSONL lines.
    pub fn export(&self) -> Result<String, ReviewError> {
        let mut raw = String::new();
        File::open(&self.path)?.read_to_string(&mut raw)?;
        match raw.rfind('\n') {
            Some(end) => raw.truncate(end + 1),
            None => raw.clear(),
        }
        Ok(raw)
    }

    pub fn read_all(&self) -> Result<Vec<Rating>, ReviewError> {
        parse_log(&self.export()?)
    }
}

pub fn parse_log(raw: &str) -> Result<Vec<Rating>, ReviewError> {
    raw.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| ReviewError::Data(format!("ratings line {}: {e}", i + 1))))
        .collect()
}
