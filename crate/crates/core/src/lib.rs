//! Training-free log anomaly detection by retrieval.
//!
//! Known-normal logs are masked, deduplicated and embedded once into a
//! document set. Each unique test log is a query whose abnormal score is its
//! smallest token-level maxSim distance to a small core set of documents
//! picked by CLS-row nearest neighbors. Scores are mapped back onto every
//! input record and thresholded.

pub mod ablation;
pub mod codec;
pub mod detect;
pub mod embed;
pub mod eval;
pub mod ingest;
pub mod retrieval;
pub mod scalar;
pub mod store;

pub use embed::{EmbeddedSequence, EmbeddingMap, ProviderConfig, ProviderKind};
pub use ingest::{Label, MaskRule, ProcessedSequence, RawLogRecord, RuleSet};
pub use retrieval::{
    Aggregation, CoreSetConfig, CoreSize, DocIndex, FeatureMode, ScoreMode, ScoreRecord,
};
pub use scalar::Scalar;
pub use store::{LookupTable, SeqId, SequenceDB};

/// Single-precision embedding, the on-disk and default in-memory format.
pub type Embedding = EmbeddedSequence<f32>;
/// Double-precision embedding, used as a reference for the `f32` path.
pub type Embedding64 = EmbeddedSequence<f64>;
pub type Embeddings = EmbeddingMap<f32>;
pub type Index = DocIndex<f32>;
pub type Index64 = DocIndex<f64>;
