//! Sentence embeddings: storage format, cosine similarity and the dense
//! similarity matrix.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

const MAGIC: &[u8; 4] = b"CSEM";
const FORMAT_VERSION: u32 = 1;
const ROW_STRIPE: usize = 64;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("vector dimensions differ: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("zero-norm embedding")]
    ZeroNorm,
    #[error("zero-norm embeddings for posts: {}", .0.join(", "))]
    ZeroNormRows(Vec<String>),
    #[error("invalid embedding matrix: {0}")]
    Invalid(String),
    #[error("embedding file truncated: {0}")]
    Truncated(String),
    #[error("bad embedding file: {0}")]
    Format(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// One dense vector per post, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    post_ids: Vec<String>,
    dim: usize,
    vectors: Vec<f32>,
    model_name: String,
}

impl EmbeddingMatrix {
    pub fn new(
        post_ids: Vec<String>,
        dim: usize,
        vectors: Vec<f32>,
        model_name: impl Into<String>,
    ) -> Result<Self, EmbeddingError> {
        if dim == 0 && !post_ids.is_empty() {
            return Err(EmbeddingError::Invalid("dim must be positive".into()));
        }
        if vectors.len() != post_ids.len() * dim {
            return Err(EmbeddingError::Invalid(format!(
                "{} values for {} rows of dim {dim}",
                vectors.len(),
                post_ids.len()
            )));
        }
        let mut seen = HashSet::with_capacity(post_ids.len());
        for id in &post_ids {
            if !seen.insert(id.as_str()) {
                return Err(EmbeddingError::Invalid(format!("duplicate post id {id}")));
            }
        }
        if let Some(pos) = vectors.iter().position(|v| !v.is_finite()) {
            return Err(EmbeddingError::Invalid(format!(
                "non-finite value in row {} ({})",
                pos / dim,
                post_ids[pos / dim]
            )));
        }
        Ok(Self {
            post_ids,
            dim,
            vectors,
            model_name: model_name.into(),
        })
    }

    pub fn from_rows(
        post_ids: Vec<String>,
        rows: Vec<Vec<f32>>,
        model_name: impl Into<String>,
    ) -> Result<Self, EmbeddingError> {
        if post_ids.len() != rows.len() {
            return Err(EmbeddingError::Invalid(format!(
                "{} ids for {} rows",
                post_ids.len(),
                rows.len()
            )));
        }
        let dim = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
            return Err(EmbeddingError::DimMismatch(dim, bad.len()));
        }
        Self::new(post_ids, dim, rows.concat(), model_name)
    }

    pub fn empty(model_name: impl Into<String>) -> Self {
        Self {
            post_ids: Vec::new(),
            dim: 0,
            vectors: Vec::new(),
            model_name: model_name.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.post_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.post_ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn post_ids(&self) -> &[String] {
        &self.post_ids
    }

    pub fn model_name(&self) -> &str {
        &self.model_name
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    /// Rows in the order of `ids`; every id must be present.
    pub fn select(&self, ids: &[&str]) -> Result<EmbeddingMatrix, EmbeddingError> {
        let index: std::collections::HashMap<&str, usize> = self
            .post_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect();
        let mut vectors = Vec::with_capacity(ids.len() * self.dim);
        for id in ids {
            let row = index
                .get(id)
                .ok_or_else(|| EmbeddingError::Invalid(format!("no embedding for post {id}")))?;
            vectors.extend_from_slice(self.row(*row));
        }
        Self::new(
            ids.iter().map(|s| s.to_string()).collect(),
            self.dim,
            vectors,
            self.model_name.clone(),
        )
    }
}

/// Symmetric matrix of pairwise cosine similarities.
#[derive(Debug, Clone, PartialEq)]
pub struct SimMatrix {
    n: usize,
    values: Vec<f64>,
}

impl SimMatrix {
    /// Builds from a dense row-major buffer, checking symmetry and range.
    pub fn from_dense(n: usize, values: Vec<f64>) -> Result<Self, EmbeddingError> {
        if values.len() != n * n {
            return Err(EmbeddingError::Invalid(format!(
                "{} values for order {n}",
                values.len()
            )));
        }
        for i in 0..n {
            for j in 0..n {
                let v = values[i * n + j];
                if !v.is_finite() || !(-1.0..=1.0).contains(&v) {
                    return Err(EmbeddingError::Invalid(format!("S[{i}][{j}] = {v} out of range")));
                }
                if v != values[j * n + i] {
                    return Err(EmbeddingError::Invalid(format!("S not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(Self { n, values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, EmbeddingError> {
        let n = rows.len();
        if let Some(r) = rows.iter().find(|r| r.len() != n) {
            return Err(EmbeddingError::DimMismatch(n, r.len()));
        }
        Self::from_dense(n, rows.concat())
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }

    /// Principal submatrix over the given indices, in that order.
    pub fn submatrix(&self, indices: &[usize]) -> SimMatrix {
        let k = indices.len();
        let mut values = Vec::with_capacity(k * k);
        for &i in indices {
            for &j in indices {
                values.push(self.get(i, j));
            }
        }
        SimMatrix { n: k, values }
    }

    /// Dissimilarity `1 - S`, row-major.
    pub fn dissimilarity(&self) -> Vec<f64> {
        self.values.iter().map(|s| 1.0 - s).collect()
    }
}

fn norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt()
}

fn dot(u: &[f32], v: &[f32]) -> f64 {
    u.iter().zip(v).map(|(&a, &b)| f64::from(a) * f64::from(b)).sum()
}

pub fn cosine_similarity(u: &[f32], v: &[f32]) -> Result<f64, EmbeddingError> {
    if u.len() != v.len() {
        return Err(EmbeddingError::DimMismatch(u.len(), v.len()));
    }
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 {
        return Err(EmbeddingError::ZeroNorm);
    }
    Ok((dot(u, v) / (nu * nv)).clamp(-1.0, 1.0))
}

/// Full dense cosine-similarity matrix, computed over row stripes in parallel.
pub fn similarity_matrix(e: &EmbeddingMatrix) -> Result<SimMatrix, EmbeddingError> {
    let n = e.len();
    let norms: Vec<f64> = (0..n).map(|i| norm(e.row(i))).collect();
    let zero: Vec<String> = norms
        .iter()
        .zip(e.post_ids())
        .filter(|(n, _)| **n == 0.0)
        .map(|(_, id)| id.clone())
        .collect();
    if !zero.is_empty() {
        return Err(EmbeddingError::ZeroNormRows(zero));
    }
    let mut values = vec![0.0f64; n * n];
    values
        .par_chunks_mut((n * ROW_STRIPE).max(1))
        .enumerate()
        .for_each(|(stripe, block)| {
            for (offset, row) in block.chunks_mut(n).enumerate() {
                let i = stripe * ROW_STRIPE + offset;
                let ui = e.row(i);
                for (j, cell) in row.iter_mut().enumerate() {
                    *cell = if i == j {
                        1.0
                    } else {
                        (dot(ui, e.row(j)) / (norms[i] * norms[j])).clamp(-1.0, 1.0)
                    };
                }
            }
        });
    Ok(SimMatrix { n, values })
}

fn write_u32<W: Write>(w: &mut W, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

/// Writes the binary embedding format: magic, version, count, dim, model
/// name, then the post ids, then little-endian f32 rows.
pub fn save_embeddings(e: &EmbeddingMatrix, path: impl AsRef<Path>) -> Result<(), EmbeddingError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_embeddings(e, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn write_embeddings<W: Write>(e: &EmbeddingMatrix, w: &mut W) -> Result<(), EmbeddingError> {
    w.write_all(MAGIC)?;
    write_u32(w, FORMAT_VERSION)?;
    w.write_all(&(e.len() as u64).to_le_bytes())?;
    write_u32(w, e.dim as u32)?;
    write_u32(w, e.model_name.len() as u32)?;
    w.write_all(e.model_name.as_bytes())?;
    for id in &e.post_ids {
        write_u32(w, id.len() as u32)?;
        w.write_all(id.as_bytes())?;
    }
    for v in &e.vectors {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingMatrix, EmbeddingError> {
    read_embeddings(&mut BufReader::new(File::open(path)?))
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<(), EmbeddingError> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => EmbeddingError::Truncated(what.to_owned()),
        _ => EmbeddingError::Io(e),
    })
}

fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32, EmbeddingError> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

fn read_string<R: Read>(r: &mut R, what: &str) -> Result<String, EmbeddingError> {
    let len = read_u32(r, what)? as usize;
    let mut buf = vec![0u8; len];
    read_exact(r, &mut buf, what)?;
    String::from_utf8(buf).map_err(|_| EmbeddingError::Format(format!("{what} is not UTF-8")))
}

pub fn read_embeddings<R: Read>(r: &mut R) -> Result<EmbeddingMatrix, EmbeddingError> {
    let mut magic = [0u8; 4];
    read_exact(r, &mut magic, "header")?;
    if &magic != MAGIC {
        return Err(EmbeddingError::Format("bad magic".into()));
    }
    let version = read_u32(r, "header")?;
    if version != FORMAT_VERSION {
        return Err(EmbeddingError::Format(format!("unsupported version {version}")));
    }
    let mut count = [0u8; 8];
    read_exact(r, &mut count, "header")?;
    let count = u64::from_le_bytes(count) as usize;
    let dim = read_u32(r, "header")? as usize;
    let model_name = read_string(r, "model name")?;
    let mut post_ids = Vec::with_capacity(count.min(1 << 20));
    for i in 0..count {
        post_ids.push(read_string(r, &format!("post id {i} of {count}"))?);
    }
    let mut vectors = Vec::with_capacity((count * dim).min(1 << 26));
    let mut row = vec![0u8; dim * 4];
    for i in 0..count {
        read_exact(r, &mut row, &format!("header declares {count} rows, row {i} incomplete"))?;
        vectors.extend(row.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])));
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(EmbeddingError::Format("trailing bytes after last row".into()));
    }
    EmbeddingMatrix::new(post_ids, dim, vectors, model_name)
}
