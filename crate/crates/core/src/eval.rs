//! Detection metrics and coverage analysis.
//!
//! Decisions follow the detector's rule: a score at or above the threshold is
//! a positive (abnormal) prediction.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detect::{DetectionResult, ScoredUnit};
use crate::ingest::{Label, ProcessedSequence};
use crate::store::SequenceDB;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("AUROC needs both classes (positives {positives}, negatives {negatives})")]
    SingleClass { positives: usize, negatives: usize },
    #[error("coverage needs a non-empty known set")]
    EmptyKnown,
    #[error("no label for record {0}")]
    MissingLabel(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledScore {
    pub score: f64,
    pub label: Label,
}

impl LabeledScore {
    pub fn new(score: f64, label: Label) -> Self {
        LabeledScore { score, label }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf1 {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub confusion: Confusion,
    /// False when nothing was predicted positive; precision is then
    /// reported as 0.
    pub precision_defined: bool,
}

fn metrics_from(confusion: Confusion) -> Prf1 {
    let Confusion { tp, fp, fn_, .. } = confusion;
    let precision_defined = tp + fp > 0;
    let precision = if precision_defined {
        tp as f64 / (tp + fp) as f64
    } else {
        0.0
    };
    let recall = if tp + fn_ > 0 {
        tp as f64 / (tp + fn_) as f64
    } else {
        0.0
    };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Prf1 {
        precision,
        recall,
        f1,
        confusion,
        precision_defined,
    }
}

pub fn confusion(scores: &[LabeledScore], threshold: f64) -> Confusion {
    let mut c = Confusion::default();
    for s in scores {
        match (s.score >= threshold, s.label) {
            (true, Label::Abnormal) => c.tp += 1,
            (true, Label::Normal) => c.fp += 1,
            (false, Label::Abnormal) => c.fn_ += 1,
            (false, Label::Normal) => c.tn += 1,
        }
    }
    c
}

pub fn prf1(scores: &[LabeledScore], threshold: f64) -> Prf1 {
    metrics_from(confusion(scores, threshold))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BestF1 {
    pub f1: f64,
    pub threshold: f64,
    /// Set when the input has no positive labels.
    pub degenerate: bool,
}

/// Tries every distinct score as the threshold (and `+inf`) and returns the
/// best F1 with the smallest threshold attaining it.
pub fn best_f1_sweep(scores: &[LabeledScore]) -> BestF1 {
    let positives = scores.iter().filter(|s| s.label.is_abnormal()).count();
    let negatives = scores.len() - positives;
    let mut sorted: Vec<LabeledScore> = scores.to_vec();
    // Descending, so a prefix is exactly the set predicted positive at a
    // threshold equal to the last element of the prefix.
    sorted.sort_by(|a, b| b.score.total_cmp(&a.score));

    // Threshold +inf: nothing predicted positive.
    let mut best = BestF1 {
        f1: metrics_from(Confusion {
            tp: 0,
            fp: 0,
            tn: negatives,
            fn_: positives,
        })
        .f1,
        threshold: f64::INFINITY,
        degenerate: positives == 0,
    };
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let v = sorted[i].score;
        while i < sorted.len() && sorted[i].score == v {
            if sorted[i].label.is_abnormal() {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let f1 = metrics_from(Confusion {
            tp,
            fp,
            tn: negatives - fp,
            fn_: positives - tp,
        })
        .f1;
        // Thresholds shrink as we go, so ties move to the smaller threshold.
        if f1 >= best.f1 {
            best.f1 = f1;
            best.threshold = v;
        }
    }
    best
}

/// Mann-Whitney AUROC via average ranks, `O(n log n)`.
pub fn auroc(scores: &[LabeledScore]) -> Result<f64, EvalError> {
    let positives = scores.iter().filter(|s| s.label.is_abnormal()).count();
    let negatives = scores.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(EvalError::SingleClass {
            positives,
            negatives,
        });
    }
    let mut sorted: Vec<LabeledScore> = scores.to_vec();
    sorted.sort_by(|a, b| a.score.total_cmp(&b.score));
    let mut rank_sum_pos = 0.0f64;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j < sorted.len() && sorted[j].score == sorted[i].score {
            j += 1;
        }
        // Ranks i+1..=j share their average.
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        let pos_in_group = sorted[i..j]
            .iter()
            .filter(|s| s.label.is_abnormal())
            .count();
        rank_sum_pos += avg_rank * pos_in_group as f64;
        i = j;
    }
    let p = positives as f64;
    let u = rank_sum_pos - p * (p + 1.0) / 2.0;
    Ok(u / (p * negatives as f64))
}

/// AUROC as the fraction of positive-negative pairs ordered correctly, ties
/// counting one half. `O(P * N)`.
pub fn auroc_pairwise(scores: &[LabeledScore]) -> Result<f64, EvalError> {
    let pos: Vec<f64> = scores
        .iter()
        .filter(|s| s.label.is_abnormal())
        .map(|s| s.score)
        .collect();
    let neg: Vec<f64> = scores
        .iter()
        .filter(|s| !s.label.is_abnormal())
        .map(|s| s.score)
        .collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(EvalError::SingleClass {
            positives: pos.len(),
            negatives: neg.len(),
        });
    }
    let mut wins = 0.0f64;
    for &p in &pos {
        for &n in &neg {
            if p > n {
                wins += 1.0;
            } else if p == n {
                wins += 0.5;
            }
        }
    }
    Ok(wins / (pos.len() * neg.len()) as f64)
}

/// Pairs detection results with ground truth. Sequence-mode results give
/// one unit per record; block-mode results give one unit per block, in
/// first-appearance order, abnormal if any member record is.
pub fn label_results(
    results: &[DetectionResult],
    labels: &HashMap<u64, Label>,
) -> Result<Vec<LabeledScore>, EvalError> {
    let mut out = Vec::new();
    let mut block_pos: HashMap<&str, usize> = HashMap::new();
    for r in results {
        let label = *labels
            .get(&r.record_index)
            .ok_or(EvalError::MissingLabel(r.record_index))?;
        match &r.unit {
            ScoredUnit::Sequence { .. } => out.push(LabeledScore::new(r.abnormal_score, label)),
            ScoredUnit::Block { block_id } => match block_pos.get(block_id.as_str()) {
                Some(&i) => {
                    if label.is_abnormal() {
                        out[i].label = Label::Abnormal;
                    }
                }
                None => {
                    block_pos.insert(block_id, out.len());
                    out.push(LabeledScore::new(r.abnormal_score, label));
                }
            },
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub confusion: Confusion,
    pub precision_defined: bool,
    pub best_f1: f64,
    pub best_threshold: f64,
    pub degenerate: bool,
    /// Absent when only one class is present.
    pub auroc: Option<f64>,
    pub config: serde_json::Value,
}

/// Full report at `threshold`; passing `None` evaluates at the best-F1
/// threshold.
pub fn evaluate(
    scores: &[LabeledScore],
    threshold: Option<f64>,
    config: serde_json::Value,
) -> EvalReport {
    let best = best_f1_sweep(scores);
    let threshold = threshold.unwrap_or(best.threshold);
    let m = prf1(scores, threshold);
    EvalReport {
        threshold,
        precision: m.precision,
        recall: m.recall,
        f1: m.f1,
        confusion: m.confusion,
        precision_defined: m.precision_defined,
        best_f1: best.f1,
        best_threshold: best.threshold,
        degenerate: best.degenerate,
        auroc: auroc(scores).ok(),
        config,
    }
}

impl EvalReport {
    /// Aligned `key  value` lines for terminals.
    pub fn to_text(&self) -> String {
        let auroc = self.auroc.map_or("n/a".to_string(), |a| format!("{a:.6}"));
        let rows = [
            ("threshold", format!("{:.6}", self.threshold)),
            ("precision", format!("{:.6}", self.precision)),
            ("recall", format!("{:.6}", self.recall)),
            ("f1", format!("{:.6}", self.f1)),
            ("best_f1", format!("{:.6}", self.best_f1)),
            ("best_threshold", format!("{:.6}", self.best_threshold)),
            ("auroc", auroc),
            (
                "confusion",
                format!(
                    "tp={} fp={} tn={} fn={}",
                    self.confusion.tp, self.confusion.fp, self.confusion.tn, self.confusion.fn_
                ),
            ),
        ];
        let mut out = String::new();
        for (k, v) in rows {
            out.push_str(&format!("{k:<16}{v}\n"));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    /// Fraction of test records whose masked text is in the known set.
    pub seq_coverage: f64,
    /// Fraction of test token occurrences whose token is in the known
    /// vocabulary.
    pub token_coverage: f64,
    /// As `seq_coverage`, counting each distinct test text once.
    pub seq_coverage_unique: f64,
    /// As `token_coverage`, counting each distinct test token once.
    pub token_coverage_unique: f64,
}

pub fn coverage(
    known: &SequenceDB,
    test: &[ProcessedSequence],
) -> Result<CoverageReport, EvalError> {
    if known.is_empty() {
        return Err(EvalError::EmptyKnown);
    }
    let vocab: HashSet<&str> = known
        .iter()
        .flat_map(|(_, t)| t.split_whitespace())
        .collect();
    let ratio = |hit: usize, total: usize| {
        if total == 0 {
            1.0
        } else {
            hit as f64 / total as f64
        }
    };

    let seq_hits = test.iter().filter(|s| known.contains(&s.text)).count();
    let tokens: Vec<&str> = test
        .iter()
        .flat_map(|s| s.tokens.iter().map(String::as_str))
        .collect();
    let tok_hits = tokens.iter().filter(|t| vocab.contains(*t)).count();

    let uniq_seqs: HashSet<&str> = test.iter().map(|s| s.text.as_str()).collect();
    let uniq_seq_hits = uniq_seqs.iter().filter(|t| known.contains(t)).count();
    let uniq_toks: HashSet<&str> = tokens.iter().copied().collect();
    let uniq_tok_hits = uniq_toks.iter().filter(|t| vocab.contains(*t)).count();

    Ok(CoverageReport {
        seq_coverage: ratio(seq_hits, test.len()),
        token_coverage: ratio(tok_hits, tokens.len()),
        seq_coverage_unique: ratio(uniq_seq_hits, uniq_seqs.len()),
        token_coverage_unique: ratio(uniq_tok_hits, uniq_toks.len()),
    })
}
