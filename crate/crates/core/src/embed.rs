//! Per-sequence embedding matrices and the providers that produce them.
//!
//! An [`EmbeddedSequence`] holds one summary (CLS) row followed by one row per
//! retained token. Two providers exist: a deterministic hash embedder, which
//! needs no model and is used for tests and desk-scale experiments, and a
//! reader for RPDE files written by an external transformer exporter.
//!
//! RPDE layout, little-endian:
//!
//! ```text
//! "RPDE" | version u32 = 1 | dim u32 | seq_count u64
//! per sequence: seq_id u64 | row_count u32 | row_count * dim f32 (row-major)
//! CRC32C u32 over all preceding bytes
//! ```

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::codec::{FrameError, Reader, Writer};
use crate::scalar::{self, Scalar};
use crate::store::{SeqId, SequenceDB};

pub const EMB_MAGIC: &[u8; 4] = b"RPDE";
pub const EMB_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("io error on {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error("embedding dim {found} does not match configured dim {expected}")]
    DimMismatch { expected: usize, found: usize },
    #[error("embeddings missing for seq ids {missing:?}")]
    Coverage { missing: Vec<SeqId> },
    #[error("embeddings missing for {count} sequences, first: {first:?}")]
    TextCoverage { count: usize, first: String },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("malformed embedding data: {0}")]
    Format(String),
}

/// `(1 + token_count) x dim` matrix; row 0 is the CLS row.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedSequence<T> {
    pub seq_id: SeqId,
    dim: usize,
    rows: Vec<T>,
    normalized: bool,
}

impl<T: Scalar> EmbeddedSequence<T> {
    /// Validates shape and finiteness. Rows are taken as given; call
    /// [`normalize`](Self::normalize) to project them onto the unit sphere.
    pub fn new(seq_id: SeqId, dim: usize, rows: Vec<T>) -> Result<Self, EmbedError> {
        if dim == 0 || rows.len() % dim != 0 {
            return Err(EmbedError::Format(format!(
                "seq {seq_id}: {} values is not a whole number of dim-{dim} rows",
                rows.len()
            )));
        }
        if rows.len() / dim < 2 {
            return Err(EmbedError::Format(format!(
                "seq {seq_id}: needs a CLS row and at least one token row"
            )));
        }
        if rows.iter().any(|v| !v.is_finite()) {
            return Err(EmbedError::Format(format!(
                "seq {seq_id}: non-finite value"
            )));
        }
        Ok(EmbeddedSequence {
            seq_id,
            dim,
            rows,
            normalized: false,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row_count(&self) -> usize {
        self.rows.len() / self.dim
    }

    pub fn token_count(&self) -> usize {
        self.row_count() - 1
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }

    pub fn cls(&self) -> &[T] {
        self.row(0)
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[T]> {
        self.rows.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[T] {
        &self.rows
    }

    /// Whether every row is known to have unit L2 norm.
    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn normalize(&mut self) -> Result<(), EmbedError> {
        let dim = self.dim;
        for (i, row) in self.rows.chunks_exact_mut(dim).enumerate() {
            let n = scalar::norm(row);
            if n <= T::zero() {
                return Err(EmbedError::Format(format!(
                    "seq {}: row {i} is all zeros",
                    self.seq_id
                )));
            }
            row.iter_mut().for_each(|v| *v = *v / n);
        }
        self.normalized = true;
        Ok(())
    }

    /// Keeps at most `max_rows` rows (CLS included), dropping the tail.
    pub fn truncate_rows(&mut self, max_rows: usize) {
        let keep = max_rows.max(2).min(self.row_count());
        self.rows.truncate(keep * self.dim);
    }

    pub fn cast<U: Scalar>(&self) -> EmbeddedSequence<U> {
        EmbeddedSequence {
            seq_id: self.seq_id,
            dim: self.dim,
            rows: self
                .rows
                .iter()
                .map(|v| U::from_f64_lossy(v.as_f64()))
                .collect(),
            normalized: self.normalized,
        }
    }

    pub fn with_seq_id(mut self, seq_id: SeqId) -> Self {
        self.seq_id = seq_id;
        self
    }
}

pub type EmbeddingMap<T> = BTreeMap<SeqId, EmbeddedSequence<T>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Hash,
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub provider: ProviderKind,
    pub dim: usize,
    /// Row budget per sequence including the CLS row.
    pub max_tokens: usize,
    pub normalize_rows: bool,
    pub seed: u64,
    pub file_path: Option<PathBuf>,
    /// Drop the final row of file-provided sequences (a trailing separator
    /// token emitted by the exporter).
    pub exclude_trailing_separator: bool,
}

pub const DEFAULT_MAX_TOKENS: usize = 128;
pub const BLOCK_MAX_TOKENS: usize = 512;

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig {
            provider: ProviderKind::Hash,
            dim: 64,
            max_tokens: DEFAULT_MAX_TOKENS,
            normalize_rows: true,
            seed: 0,
            file_path: None,
            exclude_trailing_separator: false,
        }
    }
}

impl ProviderConfig {
    pub fn hash(dim: usize, seed: u64) -> Self {
        ProviderConfig {
            dim,
            seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), EmbedError> {
        if self.dim < 2 {
            return Err(EmbedError::Precondition(format!(
                "dim must be >= 2, got {}",
                self.dim
            )));
        }
        if self.max_tokens < 2 {
            return Err(EmbedError::Precondition(format!(
                "max_tokens must be >= 2, got {}",
                self.max_tokens
            )));
        }
        if self.provider == ProviderKind::File && self.file_path.is_none() {
            return Err(EmbedError::Precondition(
                "file provider requires file_path".into(),
            ));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Hash provider
// ---------------------------------------------------------------------------

/// Maps each distinct surface token to a fixed pseudo-random unit vector.
///
/// The vector for a token is drawn from a ChaCha stream keyed by
/// `SHA-256(seed_le || token)`, so it depends only on `(token, seed, dim)`.
#[derive(Debug, Clone, Copy)]
pub struct HashEmbedder {
    pub dim: usize,
    pub seed: u64,
}

impl HashEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        HashEmbedder { dim, seed }
    }

    pub fn token_vector(&self, token: &str) -> Vec<f64> {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(token.as_bytes());
        let digest = h.finalize();
        let key = u64::from_le_bytes(digest[..8].try_into().unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(key);
        let mut v: Vec<f64> = (0..self.dim)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= n);
        v
    }

    /// CLS row then one row per token, from precomputed token vectors.
    fn assemble<T: Scalar>(&self, tokens: &[&str], vectors: &HashMap<&str, Vec<f64>>) -> Vec<T> {
        let dim = self.dim;
        let mut mean = vec![0.0f64; dim];
        for t in tokens {
            for (m, x) in mean.iter_mut().zip(&vectors[t]) {
                *m += x;
            }
        }
        let n = mean.iter().map(|x| x * x).sum::<f64>().sqrt();
        let mut rows = Vec::with_capacity((tokens.len() + 1) * dim);
        // Tokens that cancel exactly would leave a zero CLS; fall back to the
        // first token's direction.
        if n > 0.0 {
            rows.extend(mean.iter().map(|x| T::from_f64_lossy(x / n)));
        } else {
            rows.extend(vectors[tokens[0]].iter().map(|&x| T::from_f64_lossy(x)));
        }
        for t in tokens {
            rows.extend(vectors[t].iter().map(|&x| T::from_f64_lossy(x)));
        }
        rows
    }
}

/// Embeds one token list with the hash provider; rows are unit-norm.
pub fn hash_embed<T: Scalar>(tokens: &[&str], dim: usize, seed: u64) -> Result<Vec<T>, EmbedError> {
    if tokens.is_empty() {
        return Err(EmbedError::Precondition(
            "hash_embed needs at least one token".into(),
        ));
    }
    let e = HashEmbedder::new(dim, seed);
    let vectors: HashMap<&str, Vec<f64>> = tokens.iter().map(|&t| (t, e.token_vector(t))).collect();
    Ok(e.assemble(tokens, &vectors))
}

/// Embeds every entry of `db`. Token lists are truncated to
/// `max_tokens - 1` before embedding.
pub fn embed_batch<T: Scalar>(
    db: &SequenceDB,
    config: &ProviderConfig,
) -> Result<EmbeddingMap<T>, EmbedError> {
    config.validate()?;
    if db.is_empty() {
        return Err(EmbedError::Precondition(
            "cannot embed an empty database".into(),
        ));
    }
    match config.provider {
        ProviderKind::Hash => embed_hash_db(db, config),
        ProviderKind::File => {
            let path = config.file_path.as_deref().expect("validated");
            let file = read_embedding_file(path)?;
            attach_file_embeddings(db, file, config)
        }
    }
}

fn embed_hash_db<T: Scalar>(
    db: &SequenceDB,
    config: &ProviderConfig,
) -> Result<EmbeddingMap<T>, EmbedError> {
    let embedder = HashEmbedder::new(config.dim, config.seed);
    let max_tok = config.max_tokens - 1;
    let token_lists: Vec<(SeqId, Vec<&str>)> = db
        .iter()
        .map(|(id, text)| {
            (
                id,
                text.split_whitespace().take(max_tok).collect::<Vec<_>>(),
            )
        })
        .collect();
    if let Some((id, _)) = token_lists.iter().find(|(_, t)| t.is_empty()) {
        return Err(EmbedError::Precondition(format!("seq {id} has no tokens")));
    }
    let vocab: BTreeSet<&str> = token_lists
        .iter()
        .flat_map(|(_, t)| t.iter().copied())
        .collect();
    let vocab: Vec<&str> = vocab.into_iter().collect();
    let vectors: HashMap<&str, Vec<f64>> = vocab
        .par_iter()
        .map(|&t| (t, embedder.token_vector(t)))
        .collect();
    let out: Result<Vec<_>, EmbedError> = token_lists
        .par_iter()
        .map(|(id, tokens)| {
            let rows = embedder.assemble::<T>(tokens, &vectors);
            let mut e = EmbeddedSequence::new(*id, config.dim, rows)?;
            if config.normalize_rows {
                e.normalize()?;
            }
            Ok((*id, e))
        })
        .collect();
    Ok(out?.into_iter().collect())
}

/// Restricts an RPDE map to the ids of `db`, applying truncation and
/// normalization from `config`.
pub fn attach_file_embeddings<T: Scalar>(
    db: &SequenceDB,
    mut file: EmbeddingMap<f32>,
    config: &ProviderConfig,
) -> Result<EmbeddingMap<T>, EmbedError> {
    if let Some(e) = file.values().next() {
        if e.dim() != config.dim {
            return Err(EmbedError::DimMismatch {
                expected: config.dim,
                found: e.dim(),
            });
        }
    }
    let missing: Vec<SeqId> = db.ids().filter(|id| !file.contains_key(id)).collect();
    if !missing.is_empty() {
        return Err(EmbedError::Coverage { missing });
    }
    let mut out = EmbeddingMap::new();
    for id in db.ids() {
        let e = file.remove(&id).expect("coverage checked");
        out.insert(id, prepare_file_row_set(e, config)?);
    }
    Ok(out)
}

fn prepare_file_row_set<T: Scalar>(
    e: EmbeddedSequence<f32>,
    config: &ProviderConfig,
) -> Result<EmbeddedSequence<T>, EmbedError> {
    let mut e = e.cast::<T>();
    if config.exclude_trailing_separator && e.row_count() > 2 {
        let keep = e.row_count() - 1;
        e.truncate_rows(keep);
    }
    e.truncate_rows(config.max_tokens);
    if config.normalize_rows {
        e.normalize()?;
    }
    Ok(e)
}

/// Embeddings keyed by masked text rather than id, for embedding query
/// databases whose ids are assigned per detection period.
#[derive(Debug, Clone)]
pub struct TextKeyedEmbeddings<T> {
    by_text: HashMap<String, EmbeddedSequence<T>>,
}

impl<T: Scalar> TextKeyedEmbeddings<T> {
    /// Pairs an RPDE map with the DB it was exported from.
    pub fn from_file(
        db: &SequenceDB,
        file: EmbeddingMap<f32>,
        config: &ProviderConfig,
    ) -> Result<Self, EmbedError> {
        let by_id: EmbeddingMap<T> = attach_file_embeddings(db, file, config)?;
        let by_text = by_id
            .into_iter()
            .map(|(id, e)| (db.get(id).expect("id from db").to_owned(), e))
            .collect();
        Ok(TextKeyedEmbeddings { by_text })
    }

    pub fn lookup(&self, db: &SequenceDB) -> Result<EmbeddingMap<T>, EmbedError> {
        let mut out = EmbeddingMap::new();
        let mut missing = Vec::new();
        for (id, text) in db.iter() {
            match self.by_text.get(text) {
                Some(e) => {
                    out.insert(id, e.clone().with_seq_id(id));
                }
                None => missing.push(text.to_owned()),
            }
        }
        if let Some(first) = missing.first() {
            return Err(EmbedError::TextCoverage {
                count: missing.len(),
                first: first.clone(),
            });
        }
        Ok(out)
    }
}

/// Source of embeddings for a database. The retrieval code only ever sees
/// the resulting matrices, so providers are interchangeable.
pub trait EmbeddingSource<T: Scalar>: Sync {
    fn embed(&self, db: &SequenceDB) -> Result<EmbeddingMap<T>, EmbedError>;
}

impl<T: Scalar> EmbeddingSource<T> for ProviderConfig {
    fn embed(&self, db: &SequenceDB) -> Result<EmbeddingMap<T>, EmbedError> {
        embed_batch(db, self)
    }
}

impl<T: Scalar> EmbeddingSource<T> for TextKeyedEmbeddings<T> {
    fn embed(&self, db: &SequenceDB) -> Result<EmbeddingMap<T>, EmbedError> {
        self.lookup(db)
    }
}

// ---------------------------------------------------------------------------
// RPDE files
// ---------------------------------------------------------------------------

pub fn encode_embeddings(map: &EmbeddingMap<f32>) -> Result<Vec<u8>, EmbedError> {
    let dim = map.values().next().map_or(0, |e| e.dim());
    if let Some(e) = map.values().find(|e| e.dim() != dim) {
        return Err(EmbedError::DimMismatch {
            expected: dim,
            found: e.dim(),
        });
    }
    let mut w = Writer::new(EMB_MAGIC, EMB_VERSION);
    w.u32(dim as u32);
    w.u64(map.len() as u64);
    for (&id, e) in map {
        w.u64(id);
        w.u32(e.row_count() as u32);
        for &v in e.as_flat() {
            w.f32(v);
        }
    }
    Ok(w.finish())
}

pub fn decode_embeddings(data: &[u8]) -> Result<EmbeddingMap<f32>, EmbedError> {
    let mut r = Reader::open(data, EMB_MAGIC, EMB_VERSION)?;
    let dim = r.body_u32()? as usize;
    let n = r.body_u64()?;
    let mut raw = Vec::new();
    for _ in 0..n {
        let id = r.body_u64()?;
        let row_count = r.body_u32()? as usize;
        let bytes = r.take(row_count * dim * 4)?;
        raw.push((id, row_count, bytes));
    }
    r.finish()?;
    let mut out = EmbeddingMap::new();
    for (id, _, bytes) in raw {
        let values: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let e = EmbeddedSequence::new(id, dim, values)?;
        if out.insert(id, e).is_some() {
            return Err(EmbedError::Format(format!("duplicate seq id {id}")));
        }
    }
    Ok(out)
}

pub fn write_embedding_file(path: &Path, map: &EmbeddingMap<f32>) -> Result<(), EmbedError> {
    let img = encode_embeddings(map)?;
    fs::write(path, img).map_err(|source| EmbedError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_embedding_file(path: &Path) -> Result<EmbeddingMap<f32>, EmbedError> {
    let data = fs::read(path).map_err(|source| EmbedError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode_embeddings(&data)
}

/// Reads an RPDE file and checks its dimensionality against `dim`.
pub fn read_embedding_file_with_dim(
    path: &Path,
    dim: usize,
) -> Result<EmbeddingMap<f32>, EmbedError> {
    let data = fs::read(path).map_err(|source| EmbedError::Io {
        path: path.display().to_string(),
        source,
    })?;
    if data.len() >= 12 && &data[..4] == EMB_MAGIC {
        let found = u32::from_le_bytes(data[8..12].try_into().unwrap()) as usize;
        if found != dim {
            return Err(EmbedError::DimMismatch {
                expected: dim,
                found,
            });
        }
    }
    decode_embeddings(&data)
}
