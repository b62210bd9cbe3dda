//! Token embedding store.
//!
//! The store is loaded once from a whitespace-separated text file (GloVe
//! layout, optional `|V| d` header line) and is read-only afterwards. Next to
//! the raw matrix it keeps the per-row norms and a contiguous row-major copy of
//! the unit-normalized rows, which is what both the mechanisms and the decoder
//! consume.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Tolerance on the norm of every unit row.
pub const UNIT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    /// Reject files whose dimension differs from this.
    pub expected_dim: Option<usize>,
    /// Fold tokens to lowercase at load time; lookups are folded the same way.
    pub lowercase: bool,
}

#[derive(Debug, Clone)]
pub struct EmbeddingStore<T: Real> {
    vocab: Vec<String>,
    index: HashMap<String, usize>,
    matrix: Vec<T>,
    norms: Vec<T>,
    unit_matrix: Vec<T>,
    dim: usize,
    lowercase: bool,
}

/// Result of [`EmbeddingStore::lookup`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Entry<'a, T> {
    pub vector: &'a [T],
    pub unit: &'a [T],
    pub index: usize,
}

impl<T: Real> EmbeddingStore<T> {
    /// Builds a store from `(token, vector)` rows, checking every invariant.
    pub fn from_rows<I, S>(rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, Vec<T>)>,
        S: Into<String>,
    {
        let mut vocab = Vec::new();
        let mut matrix = Vec::new();
        let mut dim = None;
        for (line, (token, vector)) in rows.into_iter().enumerate() {
            let d = *dim.get_or_insert(vector.len());
            if vector.len() != d {
                return Err(Error::Parse {
                    line: line + 1,
                    msg: format!("expected {d} values, found {}", vector.len()),
                });
            }
            vocab.push(token.into());
            matrix.extend(vector);
        }
        Self::from_parts(vocab, matrix, dim.unwrap_or(0), false)
    }

    fn from_parts(vocab: Vec<String>, matrix: Vec<T>, dim: usize, lowercase: bool) -> Result<Self> {
        if vocab.is_empty() {
            return Err(Error::EmptyEmbeddings);
        }
        if vocab.len() < 2 {
            return Err(Error::VocabularyTooSmall(vocab.len()));
        }
        if dim == 0 {
            return Err(Error::InvalidParameter("embedding dimension must be positive".into()));
        }
        debug_assert_eq!(matrix.len(), vocab.len() * dim);

        let mut index = HashMap::with_capacity(vocab.len());
        for (i, token) in vocab.iter().enumerate() {
            if let Some(first) = index.insert(token.clone(), i) {
                return Err(Error::DuplicateToken {
                    token: token.clone(),
                    first: first + 1,
                    second: i + 1,
                });
            }
        }

        let mut norms = Vec::with_capacity(vocab.len());
        let mut unit_matrix = Vec::with_capacity(matrix.len());
        for (i, row) in matrix.chunks_exact(dim).enumerate() {
            if let Some(pos) = row.iter().position(|x| !x.is_finite()) {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("non-finite value in column {}", pos + 1),
                });
            }
            // Accumulate in f64 so that f32 stores still get unit rows within tolerance.
            let n = row
                .iter()
                .map(|x| {
                    let x = x.to_f64_lossy();
                    x * x
                })
                .sum::<f64>()
                .sqrt();
            if !(n > 0.0) || !n.is_finite() {
                return Err(Error::ZeroNormEmbedding {
                    token: vocab[i].clone(),
                });
            }
            norms.push(T::of(n));
            unit_matrix.extend(row.iter().map(|&x| T::of(x.to_f64_lossy() / n)));
        }

        Ok(Self {
            vocab,
            index,
            matrix,
            norms,
            unit_matrix,
            dim,
            lowercase,
        })
    }

    pub fn len(&self) -> usize {
        self.vocab.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vocab.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn token(&self, index: usize) -> &str {
        &self.vocab[index]
    }

    pub fn is_lowercased(&self) -> bool {
        self.lowercase
    }

    pub fn row(&self, index: usize) -> &[T] {
        &self.matrix[index * self.dim..(index + 1) * self.dim]
    }

    pub fn unit_row(&self, index: usize) -> &[T] {
        &self.unit_matrix[index * self.dim..(index + 1) * self.dim]
    }

    pub fn norm(&self, index: usize) -> T {
        self.norms[index]
    }

    pub fn norms(&self) -> &[T] {
        &self.norms
    }

    /// Row-major `|V| × d` raw matrix.
    pub fn matrix(&self) -> &[T] {
        &self.matrix
    }

    /// Row-major `|V| × d` matrix of unit rows.
    pub fn unit_matrix(&self) -> &[T] {
        &self.unit_matrix
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        if self.lowercase {
            self.index.get(&token.to_lowercase()).copied()
        } else {
            self.index.get(token).copied()
        }
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index_of(token).is_some()
    }

    /// Raw embedding, unit direction and row index of `token`.
    pub fn lookup(&self, token: &str) -> Result<Entry<'_, T>> {
        let index = self
            .index_of(token)
            .ok_or_else(|| Error::OutOfVocabulary(token.to_string()))?;
        Ok(Entry {
            vector: self.row(index),
            unit: self.unit_row(index),
            index,
        })
    }

    /// Writes the store in text format with a `|V| d` header. Values use
    /// Rust's shortest round-trip representation.
    pub fn write_text<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{} {}", self.len(), self.dim)?;
        for (i, token) in self.vocab.iter().enumerate() {
            write!(out, "{token}")?;
            for x in self.row(i) {
                write!(out, " {x}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    pub fn save_text(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        self.write_text(&mut out)
            .and_then(|_| out.flush())
            .map_err(|e| Error::io(path, e))
    }
}

/// Loads a text embedding file: one `token v1 … vd` row per line.
pub fn load_text_embeddings<T: Real>(
    path: impl AsRef<Path>,
    options: LoadOptions,
) -> Result<EmbeddingStore<T>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_text_embeddings(BufReader::new(file), options).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

/// Parses the text embedding format from any reader.
pub fn read_text_embeddings<T: Real, R: BufRead>(
    reader: R,
    options: LoadOptions,
) -> Result<EmbeddingStore<T>> {
    let mut lines: Vec<(usize, String)> = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<reader>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        lines.push((i + 1, line));
    }
    if lines.is_empty() {
        return Err(Error::EmptyEmbeddings);
    }

    let header = detect_header(&lines);
    let body = if header.is_some() { &lines[1..] } else { &lines[..] };
    if body.is_empty() {
        return Err(Error::EmptyEmbeddings);
    }

    let mut dim = header.map(|(_, d)| d);
    let mut vocab = Vec::with_capacity(body.len());
    let mut matrix: Vec<T> = Vec::new();
    for (lineno, line) in body {
        let mut fields = line.split_whitespace();
        let token = fields.next().expect("non-blank line has a field");
        let start = matrix.len();
        for field in fields {
            let value: f64 = field.parse().map_err(|_| Error::Parse {
                line: *lineno,
                msg: format!("cannot parse {field:?} as a number"),
            })?;
            if !value.is_finite() {
                return Err(Error::Parse {
                    line: *lineno,
                    msg: format!("non-finite value {field:?}"),
                });
            }
            matrix.push(T::of(value));
        }
        let found = matrix.len() - start;
        match dim {
            None => dim = Some(found),
            Some(d) if d != found => {
                return Err(Error::Parse {
                    line: *lineno,
                    msg: format!("dimension mismatch: expected {d} values, found {found}"),
                })
            }
            _ => {}
        }
        vocab.push(if options.lowercase {
            token.to_lowercase()
        } else {
            token.to_string()
        });
    }

    let dim = dim.unwrap_or(0);
    if let Some((count, _)) = header {
        if count != vocab.len() {
            return Err(Error::Parse {
                line: lines[0].0,
                msg: format!("header declares {count} rows, file has {}", vocab.len()),
            });
        }
    }
    if let Some(expected) = options.expected_dim {
        if expected != dim {
            return Err(Error::DimensionMismatch {
                expected,
                found: dim,
            });
        }
    }
    EmbeddingStore::from_parts(vocab, matrix, dim, options.lowercase)
}

/// A first line of exactly two non-negative integers is a header when the
/// following row carries `d` values after its token.
fn detect_header(lines: &[(usize, String)]) -> Option<(usize, usize)> {
    let mut fields = lines[0].1.split_whitespace();
    let (a, b) = (fields.next()?, fields.next()?);
    if fields.next().is_some() {
        return None;
    }
    let count: usize = a.parse().ok()?;
    let dim: usize = b.parse().ok()?;
    let next = lines.get(1)?;
    if next.1.split_whitespace().count() != dim + 1 {
        return None;
    }
    // "5 3" followed by two-field rows is ambiguous; only a matching row count settles it.
    if dim == 1 && count != lines.len() - 1 {
        return None;
    }
    Some((count, dim))
}

const CACHE_MAGIC: &[u8; 8] = b"STMPEMB\0";
const CACHE_VERSION: u32 = 1;

/// SHA-256 of a file's bytes; keys the binary cache.
pub fn file_checksum(path: impl AsRef<Path>) -> Result<[u8; 32]> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(Sha256::digest(&bytes).into())
}

impl<T: Real> EmbeddingStore<T> {
    /// Binary cache layout, all integers little-endian:
    /// magic(8) version(u32) scalar_bytes(u8) lowercase(u8) checksum(32)
    /// rows(u64) dim(u64) then per token len(u32)+utf8, then the row-major
    /// matrix as f64.
    pub fn write_cache<W: Write>(&self, mut out: W, checksum: &[u8; 32]) -> std::io::Result<()> {
        out.write_all(CACHE_MAGIC)?;
        out.write_all(&CACHE_VERSION.to_le_bytes())?;
        out.write_all(&[std::mem::size_of::<T>() as u8, self.lowercase as u8])?;
        out.write_all(checksum)?;
        out.write_all(&(self.len() as u64).to_le_bytes())?;
        out.write_all(&(self.dim as u64).to_le_bytes())?;
        for token in &self.vocab {
            out.write_all(&(token.len() as u32).to_le_bytes())?;
            out.write_all(token.as_bytes())?;
        }
        for x in &self.matrix {
            out.write_all(&x.to_f64_lossy().to_le_bytes())?;
        }
        Ok(())
    }

    /// Reads a cache written by [`write_cache`](Self::write_cache). Returns
    /// `Ok(None)` when the cache was built from a different source checksum.
    pub fn read_cache(bytes: &[u8], checksum: &[u8; 32]) -> Result<Option<Self>> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(8)? != CACHE_MAGIC {
            return Err(Error::Cache("bad magic".into()));
        }
        let version = u32::from_le_bytes(cur.array()?);
        if version != CACHE_VERSION {
            return Err(Error::Cache(format!("unsupported version {version}")));
        }
        let flags = cur.take(2)?;
        let lowercase = flags[1] != 0;
        if cur.take(32)? != checksum {
            return Ok(None);
        }
        let rows = u64::from_le_bytes(cur.array()?) as usize;
        let dim = u64::from_le_bytes(cur.array()?) as usize;
        let mut vocab = Vec::with_capacity(rows);
        for _ in 0..rows {
            let len = u32::from_le_bytes(cur.array()?) as usize;
            let token = std::str::from_utf8(cur.take(len)?)
                .map_err(|_| Error::Cache("token is not utf-8".into()))?;
            vocab.push(token.to_string());
        }
        let mut matrix = Vec::with_capacity(rows * dim);
        for _ in 0..rows * dim {
            matrix.push(T::of(f64::from_le_bytes(cur.array()?)));
        }
        if cur.pos != bytes.len() {
            return Err(Error::Cache("trailing bytes".into()));
        }
        Self::from_parts(vocab, matrix, dim, lowercase).map(Some)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Cache("truncated".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
}

/// Loads `text_path`, reusing `cache_path` when its checksum matches and
/// rewriting it otherwise.
pub fn load_with_cache<T: Real>(
    text_path: impl AsRef<Path>,
    cache_path: impl AsRef<Path>,
    options: LoadOptions,
) -> Result<EmbeddingStore<T>> {
    let (text_path, cache_path) = (text_path.as_ref(), cache_path.as_ref());
    let checksum = file_checksum(text_path)?;
    if let Ok(bytes) = fs::read(cache_path) {
        if let Ok(Some(store)) = EmbeddingStore::<T>::read_cache(&bytes, &checksum) {
            if store.lowercase == options.lowercase
                && options.expected_dim.map_or(true, |d| d == store.dim)
            {
                return Ok(store);
            }
        }
    }
    let store = load_text_embeddings(text_path, options)?;
    let file = fs::File::create(cache_path).map_err(|e| Error::io(cache_path, e))?;
    let mut out = BufWriter::new(file);
    store
        .write_cache(&mut out, &checksum)
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(cache_path, e))?;
    Ok(store)
}
