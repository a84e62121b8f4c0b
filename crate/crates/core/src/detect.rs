//! Per-period detection: mask, dedup, embed, score unique queries, and hand
//! each score back to every record that produced the query.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::{EmbedError, EmbeddingSource};
use crate::ingest::{Label, RawLogRecord, RuleSet};
use crate::retrieval::{self, CoreSetConfig, DocIndex, FeatureMode, RetrievalError, ScoreRecord};
use crate::scalar::Scalar;
use crate::store::{self, LookupTable, SeqId, SequenceDB, StoreError};

#[derive(Debug, Error)]
pub enum DetectError {
    #[error("no score for seq id {0}")]
    Allocation(SeqId),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("threshold policy: {0}")]
    Policy(String),
    #[error("known-normal set is empty")]
    EmptyKnown,
}

/// How the decision threshold is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum ThresholdPolicy {
    Fixed(f64),
    /// Linear-interpolated quantile of known-normal hold-out scores.
    NormalQuantile(f64),
}

impl Default for ThresholdPolicy {
    fn default() -> Self {
        ThresholdPolicy::NormalQuantile(0.999)
    }
}

impl ThresholdPolicy {
    pub fn validate(&self) -> Result<(), DetectError> {
        match *self {
            ThresholdPolicy::Fixed(v) if !v.is_finite() => Err(DetectError::Policy(format!(
                "fixed threshold must be finite, got {v}"
            ))),
            ThresholdPolicy::NormalQuantile(q) if !(q > 0.0 && q < 1.0) => Err(
                DetectError::Policy(format!("quantile level must be in (0, 1), got {q}")),
            ),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for ThresholdPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ThresholdPolicy::Fixed(v) => write!(f, "fixed:{v}"),
            ThresholdPolicy::NormalQuantile(q) => write!(f, "quantile:{q}"),
        }
    }
}

/// Parses `fixed:<delta>` or `quantile:<level>`.
impl FromStr for ThresholdPolicy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (kind, value) = s
            .split_once(':')
            .ok_or_else(|| format!("expected KIND:VALUE, got {s:?}"))?;
        let v: f64 = value
            .parse()
            .map_err(|e| format!("bad number {value:?}: {e}"))?;
        let p = match kind {
            "fixed" => ThresholdPolicy::Fixed(v),
            "quantile" | "normal_quantile" => ThresholdPolicy::NormalQuantile(v),
            other => return Err(format!("unknown threshold policy {other:?}")),
        };
        p.validate().map_err(|e| e.to_string())?;
        Ok(p)
    }
}

/// Resolves a policy to a concrete threshold.
pub fn choose_threshold(
    known_normal_scores: &[f64],
    policy: ThresholdPolicy,
) -> Result<f64, DetectError> {
    policy.validate()?;
    match policy {
        ThresholdPolicy::Fixed(v) => Ok(v),
        ThresholdPolicy::NormalQuantile(q) => {
            if known_normal_scores.is_empty() {
                return Err(DetectError::Policy(
                    "quantile policy needs at least one hold-out score".into(),
                ));
            }
            let mut s = known_normal_scores.to_vec();
            s.sort_by(f64::total_cmp);
            Ok(linear_quantile(&s, q))
        }
    }
}

fn linear_quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// What a record's score was computed for.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScoredUnit {
    Sequence { seq_id: SeqId },
    Block { block_id: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    #[serde(rename = "index")]
    pub record_index: u64,
    #[serde(flatten)]
    pub unit: ScoredUnit,
    #[serde(rename = "score")]
    pub abnormal_score: f64,
    #[serde(rename = "pred")]
    pub prediction: Label,
    #[serde(rename = "threshold")]
    pub threshold_used: f64,
    pub nearest_doc: SeqId,
}

fn decide(score: f64, threshold: f64) -> Label {
    if score >= threshold {
        Label::Abnormal
    } else {
        Label::Normal
    }
}

/// One result per lookup position, in order; `record_index` is the position.
pub fn allocate(
    scores: &BTreeMap<SeqId, ScoreRecord>,
    lookup: &LookupTable,
    threshold: f64,
) -> Result<Vec<DetectionResult>, DetectError> {
    lookup
        .mapping
        .iter()
        .enumerate()
        .map(|(i, &id)| {
            let s = scores.get(&id).ok_or(DetectError::Allocation(id))?;
            Ok(DetectionResult {
                record_index: i as u64,
                unit: ScoredUnit::Sequence { seq_id: id },
                abnormal_score: s.abnormal_score,
                prediction: decide(s.abnormal_score, threshold),
                threshold_used: threshold,
                nearest_doc: s.nearest_doc_id,
            })
        })
        .collect()
}

pub fn write_results<W: Write>(mut w: W, results: &[DetectionResult]) -> std::io::Result<()> {
    for r in results {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_results(text: &str) -> Result<Vec<DetectionResult>, serde_json::Error> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}

/// Work counters for one period.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeriodStats {
    pub records: usize,
    /// Unique queries scored, one pass each.
    pub queries_scored: usize,
    /// Query-document maxSim evaluations across all passes.
    pub maxsim_evaluations: usize,
}

#[derive(Debug, Clone)]
pub struct PeriodOutput {
    pub results: Vec<DetectionResult>,
    pub scores: Vec<ScoreRecord>,
    pub stats: PeriodStats,
}

/// Builds the known-normal document database from labeled or unlabeled
/// records. Records labeled abnormal are dropped; in block mode a block is
/// dropped if any member is labeled abnormal.
pub fn build_known_db(
    records: &[RawLogRecord],
    rules: &RuleSet,
    block_mode: bool,
) -> Result<SequenceDB, DetectError> {
    build_known(records, rules, block_mode).map(|(db, _)| db)
}

/// As [`build_known_db`], also returning the lookup of kept records (or
/// kept blocks, in block mode).
pub fn build_known(
    records: &[RawLogRecord],
    rules: &RuleSet,
    block_mode: bool,
) -> Result<(SequenceDB, LookupTable), DetectError> {
    let (db, lookup) = if block_mode {
        let mut bad_blocks = std::collections::HashSet::new();
        for r in records {
            if r.label == Some(Label::Abnormal) {
                if let Some(b) = &r.block_id {
                    bad_blocks.insert(b.as_str());
                }
            }
        }
        let views = store::build_block_views(records, rules)?;
        store::build_db_from_texts(
            views
                .iter()
                .filter(|v| !bad_blocks.contains(v.block_id.as_str()))
                .map(|v| v.canonical_text.as_str()),
        )
    } else {
        let masked: Vec<String> = records
            .par_iter()
            .filter(|r| r.label != Some(Label::Abnormal))
            .map(|r| rules.mask_text(&r.text))
            .collect();
        store::build_db_from_texts(masked.iter().map(String::as_str))
    };
    if db.is_empty() {
        return Err(DetectError::EmptyKnown);
    }
    Ok((db, lookup))
}

/// Scores test periods against a fixed, embedded known-normal set.
pub struct Detector<T: Scalar> {
    index: DocIndex<T>,
    rules: RuleSet,
    queries: Box<dyn EmbeddingSource<T>>,
    config: CoreSetConfig,
    block_mode: bool,
}

impl<T: Scalar> Detector<T> {
    pub fn new(
        index: DocIndex<T>,
        rules: RuleSet,
        queries: Box<dyn EmbeddingSource<T>>,
        config: CoreSetConfig,
        block_mode: bool,
    ) -> Result<Self, DetectError> {
        config.resolve_k(index.len())?;
        Ok(Detector {
            index,
            rules,
            queries,
            config,
            block_mode,
        })
    }

    pub fn index(&self) -> &DocIndex<T> {
        &self.index
    }

    pub fn config(&self) -> &CoreSetConfig {
        &self.config
    }

    /// Builds the period's query DB and per-record lookup. In block mode the
    /// second element maps record position to block id.
    fn build_queries(
        &self,
        records: &[RawLogRecord],
    ) -> Result<(SequenceDB, LookupTable, Vec<Option<String>>), DetectError> {
        if !self.block_mode {
            let masked: Vec<String> = records
                .par_iter()
                .map(|r| self.rules.mask_text(&r.text))
                .collect();
            let (db, lookup) = store::build_db_from_texts(masked.iter().map(String::as_str));
            return Ok((db, lookup, vec![None; records.len()]));
        }
        let views = store::build_block_views(records, &self.rules)?;
        let mut db = SequenceDB::new();
        let mut block_seq: HashMap<&str, SeqId> = HashMap::new();
        for v in &views {
            block_seq.insert(v.block_id.as_str(), db.intern(&v.canonical_text));
        }
        let mut mapping = Vec::with_capacity(records.len());
        let mut blocks = Vec::with_capacity(records.len());
        for r in records {
            let b = r.block_id.as_deref().expect("checked by build_block_views");
            mapping.push(block_seq[b]);
            blocks.push(Some(b.to_owned()));
        }
        Ok((db, LookupTable { mapping }, blocks))
    }

    /// Scores one period at a fixed threshold.
    pub fn detect_period(
        &self,
        records: &[RawLogRecord],
        threshold: f64,
    ) -> Result<PeriodOutput, DetectError> {
        if records.is_empty() {
            return Ok(PeriodOutput {
                results: Vec::new(),
                scores: Vec::new(),
                stats: PeriodStats::default(),
            });
        }
        let (q_db, lookup, blocks) = self.build_queries(records)?;
        let q_emb = self.queries.embed(&q_db)?;
        let queries: Vec<_> = q_emb.values().collect();
        let scores = retrieval::score_all(&queries, &self.index, &self.config)?;

        let maxsim_evaluations = match self.config.feature_mode {
            FeatureMode::AllTokens => scores.iter().map(|s| s.core_set_ids.len()).sum(),
            FeatureMode::ClsOnly => 0,
        };
        let stats = PeriodStats {
            records: records.len(),
            queries_scored: scores.len(),
            maxsim_evaluations,
        };

        let by_id: BTreeMap<SeqId, ScoreRecord> =
            scores.iter().map(|s| (s.query_seq_id, s.clone())).collect();
        let mut results = allocate(&by_id, &lookup, threshold)?;
        for ((res, rec), block) in results.iter_mut().zip(records).zip(blocks) {
            res.record_index = rec.index;
            if let Some(block_id) = block {
                res.unit = ScoredUnit::Block { block_id };
            }
        }
        Ok(PeriodOutput {
            results,
            scores,
            stats,
        })
    }

    /// Splits `records` into periods of `period_size` (all in one period if
    /// `None`) and concatenates the outputs.
    pub fn detect_stream(
        &self,
        records: &[RawLogRecord],
        threshold: f64,
        period_size: Option<usize>,
    ) -> Result<PeriodOutput, DetectError> {
        let size = period_size
            .filter(|&n| n > 0)
            .unwrap_or(records.len().max(1));
        let mut out = PeriodOutput {
            results: Vec::new(),
            scores: Vec::new(),
            stats: PeriodStats::default(),
        };
        for chunk in records.chunks(size) {
            let p = self.detect_period(chunk, threshold)?;
            out.results.extend(p.results);
            out.scores.extend(p.scores);
            out.stats.records += p.stats.records;
            out.stats.queries_scored += p.stats.queries_scored;
            out.stats.maxsim_evaluations += p.stats.maxsim_evaluations;
        }
        Ok(out)
    }

    /// Resolves `policy` to a threshold. Quantile policies score `holdout`
    /// records if given; otherwise every document is scored against the rest
    /// of the known set (leave-one-out).
    pub fn calibrate(
        &self,
        holdout: Option<&[RawLogRecord]>,
        policy: ThresholdPolicy,
    ) -> Result<f64, DetectError> {
        policy.validate()?;
        if let ThresholdPolicy::Fixed(v) = policy {
            return Ok(v);
        }
        let scores: Vec<f64> = match holdout {
            Some(records) => {
                // Threshold is irrelevant here; only scores are kept.
                let out = self.detect_period(records, f64::INFINITY)?;
                out.results.iter().map(|r| r.abnormal_score).collect()
            }
            None => {
                if self.index.len() < 2 {
                    return Err(DetectError::Policy(
                        "leave-one-out calibration needs at least two documents".into(),
                    ));
                }
                self.index
                    .docs()
                    .par_iter()
                    .map(|d| {
                        retrieval::score_excluding(d, &self.index, &self.config, Some(d.seq_id))
                    })
                    .map(|r| r.map(|s| s.abnormal_score))
                    .collect::<Result<_, _>>()?
            }
        };
        choose_threshold(&scores, policy)
    }
}
