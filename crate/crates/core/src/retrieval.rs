//! Query-to-document scoring over known-normal embeddings.
//!
//! A query's abnormal score is its smallest maxSim distance to any document
//! in its core set: the `k` documents whose CLS rows are closest to the
//! query's CLS row in Euclidean distance. With `k = |D|` this degenerates to
//! an exhaustive scan, which [`brute_force_score`] implements independently
//! as the reference.
//!
//! All tie-breaking is by lower seq id, so results are reproducible
//! regardless of thread count.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::{EmbeddedSequence, EmbeddingMap};
use crate::scalar::{self, Scalar};
use crate::store::SeqId;

#[derive(Debug, Error, PartialEq)]
pub enum RetrievalError {
    #[error("dimension mismatch: query {query}, document {doc}")]
    DimMismatch { query: usize, doc: usize },
    #[error("document set is empty")]
    EmptyDocs,
    #[error("core set size {k} is outside 1..={n_docs}")]
    InvalidK { k: usize, n_docs: usize },
    #[error("core ratio {0} must be in (0, 1]")]
    InvalidRatio(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum FeatureMode {
    /// maxSim over the CLS row and every token row.
    AllTokens,
    /// Cosine distance between CLS rows only.
    ClsOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum ScoreMode {
    NearestOnly,
    CoreSetMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Aggregation {
    /// Sum of per-query-row maxima.
    Sum,
    /// Sum divided by the query's row count.
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoreSize {
    K(usize),
    /// `k = max(1, ceil(ratio * |D|))`.
    Ratio(f64),
}

pub const DEFAULT_CORE_RATIO: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoreSetConfig {
    pub core: CoreSize,
    pub feature_mode: FeatureMode,
    pub score_mode: ScoreMode,
    pub aggregation: Aggregation,
}

impl Default for CoreSetConfig {
    fn default() -> Self {
        CoreSetConfig {
            core: CoreSize::Ratio(DEFAULT_CORE_RATIO),
            feature_mode: FeatureMode::AllTokens,
            score_mode: ScoreMode::NearestOnly,
            aggregation: Aggregation::Sum,
        }
    }
}

impl CoreSetConfig {
    pub fn with_k(k: usize) -> Self {
        CoreSetConfig {
            core: CoreSize::K(k),
            ..Default::default()
        }
    }

    pub fn with_ratio(ratio: f64) -> Self {
        CoreSetConfig {
            core: CoreSize::Ratio(ratio),
            ..Default::default()
        }
    }

    pub fn resolve_k(&self, n_docs: usize) -> Result<usize, RetrievalError> {
        if n_docs == 0 {
            return Err(RetrievalError::EmptyDocs);
        }
        let k = match self.core {
            CoreSize::K(k) => k,
            CoreSize::Ratio(r) => {
                if !(r > 0.0 && r <= 1.0) {
                    return Err(RetrievalError::InvalidRatio(r));
                }
                ((r * n_docs as f64).ceil() as usize).clamp(1, n_docs)
            }
        };
        if k == 0 || k > n_docs {
            return Err(RetrievalError::InvalidK { k, n_docs });
        }
        Ok(k)
    }
}

/// Outcome of scoring one unique query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub query_seq_id: SeqId,
    pub abnormal_score: f64,
    pub nearest_doc_id: SeqId,
    /// Core members in CLS-distance order.
    pub core_set_ids: Vec<SeqId>,
    pub config: CoreSetConfig,
}

#[inline]
fn cosine<T: Scalar>(a: &[T], a_unit: bool, b: &[T], b_unit: bool) -> T {
    let d = scalar::dot(a, b);
    if a_unit && b_unit {
        d
    } else {
        d / (scalar::norm(a) * scalar::norm(b))
    }
}

fn check_dims<T: Scalar>(
    q: &EmbeddedSequence<T>,
    d: &EmbeddedSequence<T>,
) -> Result<(), RetrievalError> {
    if q.dim() != d.dim() {
        return Err(RetrievalError::DimMismatch {
            query: q.dim(),
            doc: d.dim(),
        });
    }
    Ok(())
}

/// Late-interaction similarity: for each query row, the best cosine against
/// any document row, accumulated in `f64`.
pub fn maxsim<T: Scalar>(
    q: &EmbeddedSequence<T>,
    d: &EmbeddedSequence<T>,
    aggregation: Aggregation,
) -> Result<f64, RetrievalError> {
    check_dims(q, d)?;
    Ok(maxsim_unchecked(q, d, aggregation))
}

fn maxsim_unchecked<T: Scalar>(
    q: &EmbeddedSequence<T>,
    d: &EmbeddedSequence<T>,
    aggregation: Aggregation,
) -> f64 {
    let (qu, du) = (q.is_normalized(), d.is_normalized());
    let mut total = 0.0f64;
    for qr in q.rows() {
        let best = if qu && du {
            d.rows()
                .map(|dr| scalar::dot(qr, dr))
                .fold(T::neg_infinity(), |b, c| if c > b { c } else { b })
        } else {
            d.rows()
                .map(|dr| cosine(qr, qu, dr, du))
                .fold(T::neg_infinity(), |b, c| if c > b { c } else { b })
        };
        total += best.as_f64();
    }
    match aggregation {
        Aggregation::Sum => total,
        Aggregation::Mean => total / q.row_count() as f64,
    }
}

/// `1 - maxsim`. Negative under sum aggregation once maxsim exceeds 1.
pub fn maxsim_distance<T: Scalar>(
    q: &EmbeddedSequence<T>,
    d: &EmbeddedSequence<T>,
    aggregation: Aggregation,
) -> Result<f64, RetrievalError> {
    Ok(1.0 - maxsim(q, d, aggregation)?)
}

pub fn cls_distance<T: Scalar>(
    q: &EmbeddedSequence<T>,
    d: &EmbeddedSequence<T>,
) -> Result<f64, RetrievalError> {
    check_dims(q, d)?;
    Ok(1.0 - cosine(q.cls(), q.is_normalized(), d.cls(), d.is_normalized()).as_f64())
}

fn distance<T: Scalar>(
    q: &EmbeddedSequence<T>,
    d: &EmbeddedSequence<T>,
    feature_mode: FeatureMode,
    aggregation: Aggregation,
) -> f64 {
    match feature_mode {
        FeatureMode::AllTokens => 1.0 - maxsim_unchecked(q, d, aggregation),
        FeatureMode::ClsOnly => {
            1.0 - cosine(q.cls(), q.is_normalized(), d.cls(), d.is_normalized()).as_f64()
        }
    }
}

/// Embedded known-normal documents with their CLS rows packed contiguously.
#[derive(Debug, Clone)]
pub struct DocIndex<T> {
    dim: usize,
    docs: Vec<EmbeddedSequence<T>>,
    cls: Vec<T>,
}

impl<T: Scalar> DocIndex<T> {
    pub fn new(
        docs: impl IntoIterator<Item = EmbeddedSequence<T>>,
    ) -> Result<Self, RetrievalError> {
        let mut docs: Vec<_> = docs.into_iter().collect();
        docs.sort_by_key(|d| d.seq_id);
        let dim = docs.first().ok_or(RetrievalError::EmptyDocs)?.dim();
        if let Some(d) = docs.iter().find(|d| d.dim() != dim) {
            return Err(RetrievalError::DimMismatch {
                query: dim,
                doc: d.dim(),
            });
        }
        let cls = docs.iter().flat_map(|d| d.cls().iter().copied()).collect();
        Ok(DocIndex { dim, docs, cls })
    }

    pub fn from_map(map: EmbeddingMap<T>) -> Result<Self, RetrievalError> {
        Self::new(map.into_values())
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn docs(&self) -> &[EmbeddedSequence<T>] {
        &self.docs
    }
}

/// Candidate ordered by distance, then position.
#[derive(Clone, Copy)]
struct Cand<T>(T, usize);

impl<T: Scalar> PartialEq for Cand<T> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<T: Scalar> Eq for Cand<T> {}

impl<T: Scalar> PartialOrd for Cand<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<T: Scalar> Ord for Cand<T> {
    fn cmp(&self, other: &Self) -> Ordering {
        // Rows are finite, so distances are never NaN.
        self.0
            .partial_cmp(&other.0)
            .unwrap_or(Ordering::Equal)
            .then(self.1.cmp(&other.1))
    }
}

/// Positions (into `index.docs()`) of the `k` documents nearest to `q` by
/// CLS Euclidean distance, nearest first, ties to lower seq id. Documents are
/// sorted by id, so position order is id order.
fn knn_positions<T: Scalar>(
    q: &EmbeddedSequence<T>,
    index: &DocIndex<T>,
    k: usize,
    exclude: Option<SeqId>,
) -> Vec<usize> {
    let qc = q.cls();
    let skip = exclude.and_then(|id| index.docs.binary_search_by_key(&id, |d| d.seq_id).ok());
    let dists: Vec<T> = index
        .cls
        .chunks_exact(index.dim)
        .map(|row| scalar::squared_distance(qc, row))
        .collect();
    // Max-heap of the best k so far; its top is the current k-th nearest.
    let mut heap: BinaryHeap<Cand<T>> = BinaryHeap::with_capacity(k + 1);
    for (i, &d) in dists.iter().enumerate() {
        if Some(i) == skip {
            continue;
        }
        let c = Cand(d, i);
        if heap.len() < k {
            heap.push(c);
        } else if let Some(mut top) = heap.peek_mut() {
            if c < *top {
                *top = c;
            }
        }
    }
    heap.into_sorted_vec().into_iter().map(|c| c.1).collect()
}

/// The core set for `q`: seq ids of its `k` CLS-nearest documents.
pub fn knn_core<T: Scalar>(
    q: &EmbeddedSequence<T>,
    index: &DocIndex<T>,
    config: &CoreSetConfig,
) -> Result<Vec<SeqId>, RetrievalError> {
    if q.dim() != index.dim {
        return Err(RetrievalError::DimMismatch {
            query: q.dim(),
            doc: index.dim,
        });
    }
    let k = config.resolve_k(index.len())?;
    Ok(knn_positions(q, index, k, None)
        .into_iter()
        .map(|i| index.docs[i].seq_id)
        .collect())
}

/// Scores `q` against its core set.
pub fn abnormal_score<T: Scalar>(
    q: &EmbeddedSequence<T>,
    index: &DocIndex<T>,
    config: &CoreSetConfig,
) -> Result<ScoreRecord, RetrievalError> {
    score_excluding(q, index, config, None)
}

/// As [`abnormal_score`] but with document `exclude` removed from `D`; used
/// for leave-one-out threshold calibration.
pub fn score_excluding<T: Scalar>(
    q: &EmbeddedSequence<T>,
    index: &DocIndex<T>,
    config: &CoreSetConfig,
    exclude: Option<SeqId>,
) -> Result<ScoreRecord, RetrievalError> {
    if q.dim() != index.dim {
        return Err(RetrievalError::DimMismatch {
            query: q.dim(),
            doc: index.dim,
        });
    }
    let excluded = exclude.map_or(0, |id| {
        usize::from(index.docs.binary_search_by_key(&id, |d| d.seq_id).is_ok())
    });
    let n = index.len() - excluded;
    let k = config.resolve_k(n)?;
    let core = knn_positions(q, index, k, exclude);

    let mut best = (f64::INFINITY, SeqId::MAX);
    let mut sum = 0.0f64;
    let mut core_set_ids = Vec::with_capacity(core.len());
    for &i in &core {
        let doc = &index.docs[i];
        let dist = distance(q, doc, config.feature_mode, config.aggregation);
        sum += dist;
        if dist < best.0 || (dist == best.0 && doc.seq_id < best.1) {
            best = (dist, doc.seq_id);
        }
        core_set_ids.push(doc.seq_id);
    }
    let abnormal_score = match config.score_mode {
        ScoreMode::NearestOnly => best.0,
        ScoreMode::CoreSetMean => sum / core.len() as f64,
    };
    Ok(ScoreRecord {
        query_seq_id: q.seq_id,
        abnormal_score,
        nearest_doc_id: best.1,
        core_set_ids,
        config: *config,
    })
}

/// Minimum distance from `q` to every document, with no pruning.
pub fn brute_force_score<T: Scalar>(
    q: &EmbeddedSequence<T>,
    docs: &[EmbeddedSequence<T>],
    feature_mode: FeatureMode,
    aggregation: Aggregation,
) -> Result<ScoreRecord, RetrievalError> {
    if docs.is_empty() {
        return Err(RetrievalError::EmptyDocs);
    }
    let mut ordered: Vec<&EmbeddedSequence<T>> = docs.iter().collect();
    ordered.sort_by_key(|d| d.seq_id);
    let mut best: Option<(f64, SeqId)> = None;
    for d in &ordered {
        let dist = match feature_mode {
            FeatureMode::AllTokens => maxsim_distance(q, d, aggregation)?,
            FeatureMode::ClsOnly => cls_distance(q, d)?,
        };
        // Strict `<` over ascending ids keeps the lowest id among ties.
        if best.is_none_or(|(b, _)| dist < b) {
            best = Some((dist, d.seq_id));
        }
    }
    let (abnormal_score, nearest_doc_id) = best.expect("non-empty");
    Ok(ScoreRecord {
        query_seq_id: q.seq_id,
        abnormal_score,
        nearest_doc_id,
        core_set_ids: ordered.iter().map(|d| d.seq_id).collect(),
        config: CoreSetConfig {
            core: CoreSize::K(docs.len()),
            feature_mode,
            score_mode: ScoreMode::NearestOnly,
            aggregation,
        },
    })
}

/// Scores every query in parallel; output order follows `queries`.
pub fn score_all<T: Scalar>(
    queries: &[&EmbeddedSequence<T>],
    index: &DocIndex<T>,
    config: &CoreSetConfig,
) -> Result<Vec<ScoreRecord>, RetrievalError> {
    queries
        .par_iter()
        .map(|q| abnormal_score(q, index, config))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::{embed_batch, ProviderConfig};
    use crate::store::SequenceDB;
    use proptest::prelude::*;

    fn emb(id: SeqId, rows: &[&[f32]]) -> EmbeddedSequence<f32> {
        let dim = rows[0].len();
        EmbeddedSequence::new(
            id,
            dim,
            rows.iter().flat_map(|r| r.iter().copied()).collect(),
        )
        .unwrap()
    }

    /// A single-token sequence whose CLS row is `cls`.
    fn cls_doc(id: SeqId, cls: [f32; 2]) -> EmbeddedSequence<f32> {
        emb(id, &[&cls, &[1.0, 1.0]])
    }

    #[test]
    fn maxsim_hand_values() {
        // A sequence needs a CLS row and a token row, so one-row queries are
        // written as two identical rows under mean aggregation.
        let q = emb(1, &[&[1.0, 0.0], &[1.0, 0.0]]);
        let d = emb(2, &[&[1.0, 0.0], &[0.0, 1.0]]);
        assert_eq!(maxsim(&q, &d, Aggregation::Mean).unwrap(), 1.0);

        let q = emb(1, &[&[0.0, 1.0], &[0.0, 1.0]]);
        let d = emb(2, &[&[1.0, 0.0], &[1.0, 0.0]]);
        assert_eq!(maxsim(&q, &d, Aggregation::Mean).unwrap(), 0.0);

        let q = emb(1, &[&[1.0, 0.0], &[0.0, 1.0]]);
        let d = emb(2, &[&[1.0, 0.0], &[1.0, 0.0]]);
        assert_eq!(maxsim(&q, &d, Aggregation::Sum).unwrap(), 1.0);
        assert_eq!(maxsim(&q, &d, Aggregation::Mean).unwrap(), 0.5);
    }

    #[test]
    fn distance_is_one_minus_similarity() {
        let q = emb(1, &[&[1.0, 0.0], &[1.0, 0.0]]);
        let d = emb(2, &[&[1.0, 0.0], &[0.0, 1.0]]);
        assert_eq!(maxsim_distance(&q, &d, Aggregation::Mean).unwrap(), 0.0);
        let q = emb(1, &[&[0.0, 1.0], &[0.0, 1.0]]);
        let d = emb(2, &[&[1.0, 0.0], &[1.0, 0.0]]);
        assert_eq!(maxsim_distance(&q, &d, Aggregation::Sum).unwrap(), 1.0);
    }

    #[test]
    fn sum_distance_goes_negative() {
        let q = emb(1, &[&[1.0, 0.0], &[0.0, 1.0], &[1.0, 0.0]]);
        let d = emb(2, &[&[1.0, 0.0], &[0.0, 1.0]]);
        assert_eq!(maxsim(&q, &d, Aggregation::Sum).unwrap(), 3.0);
        assert_eq!(maxsim_distance(&q, &d, Aggregation::Sum).unwrap(), -2.0);
    }

    #[test]
    fn cosine_used_for_unnormalized_rows() {
        let q = emb(1, &[&[2.0, 0.0], &[2.0, 0.0]]);
        let d = emb(2, &[&[5.0, 0.0], &[0.0, 3.0]]);
        assert!((maxsim(&q, &d, Aggregation::Sum).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn dim_mismatch() {
        let q = emb(1, &[&[1.0, 0.0], &[1.0, 0.0]]);
        let d = emb(2, &[&[1.0, 0.0, 0.0], &[1.0, 0.0, 0.0]]);
        assert_eq!(
            maxsim(&q, &d, Aggregation::Sum),
            Err(RetrievalError::DimMismatch { query: 2, doc: 3 })
        );
    }

    #[test]
    fn knn_hand_example() {
        let idx = DocIndex::new([
            cls_doc(1, [0.0, 0.0]),
            cls_doc(2, [1.0, 0.0]),
            cls_doc(3, [3.0, 0.0]),
        ])
        .unwrap();
        let q = cls_doc(9, [0.9, 0.0]);
        assert_eq!(
            knn_core(&q, &idx, &CoreSetConfig::with_k(2)).unwrap(),
            vec![2, 1]
        );
        assert_eq!(
            knn_core(&q, &idx, &CoreSetConfig::with_k(3)).unwrap(),
            vec![2, 1, 3]
        );
    }

    #[test]
    fn knn_ties_prefer_lower_id() {
        let idx = DocIndex::new([
            cls_doc(7, [1.0, 0.0]),
            cls_doc(3, [-1.0, 0.0]),
            cls_doc(5, [0.0, 5.0]),
        ])
        .unwrap();
        let q = cls_doc(9, [0.0, 0.0]);
        assert_eq!(
            knn_core(&q, &idx, &CoreSetConfig::with_k(1)).unwrap(),
            vec![3]
        );
        assert_eq!(
            knn_core(&q, &idx, &CoreSetConfig::with_k(2)).unwrap(),
            vec![3, 7]
        );
    }

    #[test]
    fn k_resolution() {
        assert_eq!(CoreSetConfig::with_ratio(0.01).resolve_k(50), Ok(1));
        assert_eq!(CoreSetConfig::with_ratio(0.01).resolve_k(10_000), Ok(100));
        assert_eq!(CoreSetConfig::with_ratio(0.1).resolve_k(55), Ok(6));
        assert_eq!(CoreSetConfig::with_ratio(1.0).resolve_k(55), Ok(55));
        assert_eq!(
            CoreSetConfig::with_ratio(0.0).resolve_k(5),
            Err(RetrievalError::InvalidRatio(0.0))
        );
        assert_eq!(
            CoreSetConfig::with_k(6).resolve_k(5),
            Err(RetrievalError::InvalidK { k: 6, n_docs: 5 })
        );
        assert_eq!(
            CoreSetConfig::with_k(0).resolve_k(5),
            Err(RetrievalError::InvalidK { k: 0, n_docs: 5 })
        );
        assert_eq!(
            CoreSetConfig::with_k(1).resolve_k(0),
            Err(RetrievalError::EmptyDocs)
        );
    }

    /// Docs whose maxSim distance to `q` (mean aggregation) is known, and
    /// whose CLS rows put them in the core set in a fixed order.
    fn scored_fixture() -> (EmbeddedSequence<f32>, DocIndex<f32>) {
        // Query: CLS e0 plus one token row e0.
        let q = emb(100, &[&[1.0, 0.0], &[1.0, 0.0]]);
        let mk = |id, c: f32| {
            let s = (1.0 - c * c).sqrt();
            emb(id, &[&[c, s], &[c, s]])
        };
        // Mean-aggregated distance to q = 1 - c.
        let idx = DocIndex::new([mk(1, 0.7), mk(2, 0.9), mk(3, 0.3)]).unwrap();
        (q, idx)
    }

    #[test]
    fn nearest_only_takes_min() {
        let (q, idx) = scored_fixture();
        let cfg = CoreSetConfig {
            aggregation: Aggregation::Mean,
            ..CoreSetConfig::with_k(3)
        };
        let r = abnormal_score(&q, &idx, &cfg).unwrap();
        assert!((r.abnormal_score - 0.1).abs() < 1e-6);
        assert_eq!(r.nearest_doc_id, 2);
        assert!(r.core_set_ids.contains(&r.nearest_doc_id));
    }

    #[test]
    fn core_set_mean_averages() {
        let (q, idx) = scored_fixture();
        let cfg = CoreSetConfig {
            aggregation: Aggregation::Mean,
            score_mode: ScoreMode::CoreSetMean,
            ..CoreSetConfig::with_k(2)
        };
        let r = abnormal_score(&q, &idx, &cfg).unwrap();
        // Core = docs 2 and 1 (distances 0.1 and 0.3).
        assert_eq!(r.core_set_ids, vec![2, 1]);
        assert!((r.abnormal_score - 0.2).abs() < 1e-6);
    }

    #[test]
    fn cls_only_uses_cls_cosine() {
        let q = emb(1, &[&[1.0, 0.0], &[0.0, 1.0]]);
        let d = emb(2, &[&[0.6, 0.8], &[1.0, 0.0]]);
        let idx = DocIndex::new([d.clone()]).unwrap();
        let cfg = CoreSetConfig {
            feature_mode: FeatureMode::ClsOnly,
            ..CoreSetConfig::with_k(1)
        };
        let r = abnormal_score(&q, &idx, &cfg).unwrap();
        assert!((r.abnormal_score - 0.4).abs() < 1e-6);
    }

    #[test]
    fn brute_force_single_doc() {
        let q = emb(1, &[&[1.0, 0.0], &[0.6, 0.8]]);
        let d = emb(2, &[&[0.0, 1.0], &[1.0, 0.0]]);
        let r = brute_force_score(
            &q,
            std::slice::from_ref(&d),
            FeatureMode::AllTokens,
            Aggregation::Sum,
        )
        .unwrap();
        assert_eq!(
            r.abnormal_score,
            maxsim_distance(&q, &d, Aggregation::Sum).unwrap()
        );
    }

    #[test]
    fn brute_force_self_match() {
        let db = SequenceDB::from_texts(["a b c", "d e", "a x"]);
        let map: EmbeddingMap<f32> = embed_batch(&db, &ProviderConfig::hash(16, 9)).unwrap();
        let q = map[&1].clone().with_seq_id(50);
        let docs: Vec<_> = map.values().cloned().collect();
        let r = brute_force_score(&q, &docs, FeatureMode::AllTokens, Aggregation::Sum).unwrap();
        // Four rows (CLS + 3 tokens), each matching itself at cosine 1.
        assert!((r.abnormal_score - (1.0 - 4.0)).abs() < 1e-5);
        assert_eq!(r.nearest_doc_id, 1);
    }

    #[test]
    fn brute_force_empty_docs() {
        let q = emb(1, &[&[1.0, 0.0], &[1.0, 0.0]]);
        assert_eq!(
            brute_force_score(&q, &[], FeatureMode::AllTokens, Aggregation::Sum),
            Err(RetrievalError::EmptyDocs)
        );
    }

    #[test]
    fn exclusion_skips_document() {
        let db = SequenceDB::from_texts(["a b", "a c", "z"]);
        let map: EmbeddingMap<f32> = embed_batch(&db, &ProviderConfig::hash(16, 1)).unwrap();
        let idx = DocIndex::from_map(map.clone()).unwrap();
        let cfg = CoreSetConfig {
            aggregation: Aggregation::Mean,
            ..CoreSetConfig::with_ratio(1.0)
        };
        let r = score_excluding(&map[&1], &idx, &cfg, Some(1)).unwrap();
        assert!(!r.core_set_ids.contains(&1));
        assert_eq!(r.core_set_ids.len(), 2);
        assert!(r.abnormal_score > 0.0);
    }

    fn random_docs(seed: u64, n: usize) -> EmbeddingMap<f32> {
        let words = [
            "alpha", "beta", "gamma", "delta", "eps", "zeta", "eta", "theta",
        ];
        let texts: Vec<String> = (0..n)
            .map(|i| {
                let mut x = seed
                    .wrapping_mul(6364136223846793005)
                    .wrapping_add((i as u64).wrapping_mul(1442695040888963407));
                let len = 1 + (x % 5) as usize;
                (0..len)
                    .map(|_| {
                        x = x.wrapping_mul(6364136223846793005).wrapping_add(1);
                        words[(x >> 33) as usize % words.len()]
                    })
                    .collect::<Vec<_>>()
                    .join(" ")
            })
            .collect();
        let db = SequenceDB::from_texts(texts.iter());
        embed_batch(&db, &ProviderConfig::hash(8, seed)).unwrap()
    }

    #[test]
    fn oracle_equivalence_twenty_docs() {
        let docs = random_docs(3, 40);
        let all: Vec<_> = docs.values().cloned().collect();
        let (d_part, q_part) = all.split_at(all.len() / 2);
        let idx = DocIndex::new(d_part.iter().cloned()).unwrap();
        for agg in [Aggregation::Sum, Aggregation::Mean] {
            let cfg = CoreSetConfig {
                aggregation: agg,
                ..CoreSetConfig::with_k(idx.len())
            };
            for q in q_part {
                let a = abnormal_score(q, &idx, &cfg).unwrap();
                let b = brute_force_score(q, d_part, FeatureMode::AllTokens, agg).unwrap();
                assert_eq!(a.abnormal_score.to_bits(), b.abnormal_score.to_bits());
                assert_eq!(a.nearest_doc_id, b.nearest_doc_id);
            }
        }
    }

    #[test]
    fn generic_over_f64() {
        let docs = random_docs(5, 10);
        let docs64: Vec<EmbeddedSequence<f64>> = docs.values().map(|e| e.cast()).collect();
        let idx = DocIndex::new(docs64.clone()).unwrap();
        let q = &docs64[0];
        let r = abnormal_score(q, &idx, &CoreSetConfig::with_k(3)).unwrap();
        let r32 = abnormal_score(
            &docs[&q.seq_id],
            &DocIndex::from_map(docs.clone()).unwrap(),
            &CoreSetConfig::with_k(3),
        )
        .unwrap();
        assert!((r.abnormal_score - r32.abnormal_score).abs() < 1e-4);
        assert_eq!(r.nearest_doc_id, r32.nearest_doc_id);
    }

    proptest! {
        #[test]
        fn nearest_only_monotone_in_k(seed in 0u64..500) {
            let docs = random_docs(seed, 24);
            let all: Vec<_> = docs.values().cloned().collect();
            let idx = DocIndex::new(all[..16].iter().cloned()).unwrap();
            let q = &all[20];
            let mut prev = f64::INFINITY;
            for k in 1..=16 {
                let r = abnormal_score(q, &idx, &CoreSetConfig::with_k(k)).unwrap();
                prop_assert!(r.abnormal_score <= prev);
                prop_assert!(r.core_set_ids.contains(&r.nearest_doc_id));
                prop_assert!(r.abnormal_score.is_finite());
                prev = r.abnormal_score;
            }
        }

        #[test]
        fn oracle_equivalence_random(seed in 0u64..500, agg_mean in any::<bool>()) {
            let agg = if agg_mean { Aggregation::Mean } else { Aggregation::Sum };
            let docs = random_docs(seed, 30);
            let all: Vec<_> = docs.values().cloned().collect();
            let idx = DocIndex::new(all[..20].iter().cloned()).unwrap();
            let cfg = CoreSetConfig { aggregation: agg, ..CoreSetConfig::with_k(20) };
            for q in &all[20..] {
                let a = abnormal_score(q, &idx, &cfg).unwrap();
                let b = brute_force_score(q, &all[..20], FeatureMode::AllTokens, agg).unwrap();
                prop_assert_eq!(a.abnormal_score.to_bits(), b.abnormal_score.to_bits());
                prop_assert_eq!(a.nearest_doc_id, b.nearest_doc_id);
            }
        }

        #[test]
        fn cls_only_k1_is_cosine_nearest(seed in 0u64..500) {
            let docs = random_docs(seed, 20);
            let all: Vec<_> = docs.values().cloned().collect();
            let idx = DocIndex::new(all[..12].iter().cloned()).unwrap();
            let cfg = CoreSetConfig { feature_mode: FeatureMode::ClsOnly, ..CoreSetConfig::with_k(1) };
            for q in &all[12..] {
                let a = abnormal_score(q, &idx, &cfg).unwrap();
                let b = brute_force_score(q, &all[..12], FeatureMode::ClsOnly, Aggregation::Sum).unwrap();
                prop_assert!((a.abnormal_score - b.abnormal_score).abs() < 1e-6);
            }
        }

        #[test]
        fn self_retrieval(seed in 0u64..500) {
            let docs = random_docs(seed, 12);
            let idx = DocIndex::from_map(docs.clone()).unwrap();
            for q in docs.values() {
                let cfg = CoreSetConfig { aggregation: Aggregation::Mean, ..CoreSetConfig::with_k(1) };
                let r = abnormal_score(q, &idx, &cfg).unwrap();
                prop_assert!(r.abnormal_score.abs() < 1e-6);
                let twin = idx.docs().iter().any(|d| {
                    d.seq_id != q.seq_id && scalar::squared_distance(d.cls(), q.cls()).as_f64() < 1e-12
                });
                if !twin {
                    prop_assert_eq!(r.nearest_doc_id, q.seq_id);
                }
                let cfg = CoreSetConfig { aggregation: Aggregation::Sum, ..CoreSetConfig::with_k(1) };
                let r = abnormal_score(q, &idx, &cfg).unwrap();
                prop_assert!((r.abnormal_score - (1.0 - q.row_count() as f64)).abs() < 1e-5);
            }
        }
    }
}
