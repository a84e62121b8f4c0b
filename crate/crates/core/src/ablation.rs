//! Ablation driver: one labeled corpus, a chronological train/test split, and
//! a grid of retrieval configurations scored against it.
//!
//! The known set and the test queries are embedded once; each cell derives
//! its own document index from the shared embeddings.

use std::collections::HashMap;
use std::fmt;
use std::time::Instant;

use clap::ValueEnum;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detect::{self, DetectError};
use crate::embed::{EmbedError, EmbeddedSequence, EmbeddingSource};
use crate::eval::{self, EvalReport, LabeledScore};
use crate::ingest::{Label, RawLogRecord, RuleSet};
use crate::retrieval::{
    self, CoreSetConfig, CoreSize, DocIndex, FeatureMode, RetrievalError, ScoreMode,
};
use crate::scalar::Scalar;
use crate::store::{self, SeqId, SequenceDB, StoreError};

pub const DEFAULT_TRAIN_FRACTION: f64 = 0.8;

#[derive(Debug, Error)]
pub enum AblationError {
    #[error("record {index} has no label")]
    Unlabeled { index: u64 },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("axis {axis}: cannot parse value {value:?}")]
    AxisValue { axis: String, value: String },
    #[error(transparent)]
    Detect(#[from] DetectError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum AxisKind {
    CoreRatios,
    CoreKs,
    KnownRatios,
    ScoreModes,
    FeatureModes,
}

/// One varied dimension and its values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "axis", content = "values", rename_all = "snake_case")]
pub enum Axis {
    CoreRatios(Vec<f64>),
    CoreKs(Vec<usize>),
    KnownRatios(Vec<f64>),
    ScoreModes(Vec<ScoreMode>),
    FeatureModes(Vec<FeatureMode>),
}

fn parse_list<V>(
    axis: AxisKind,
    values: &str,
    f: impl Fn(&str) -> Option<V>,
) -> Result<Vec<V>, AblationError> {
    values
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            f(s).ok_or_else(|| AblationError::AxisValue {
                axis: axis.to_string(),
                value: s.to_owned(),
            })
        })
        .collect()
}

impl Axis {
    /// Parses a comma-separated value list such as `1.0,0.1,0.01` or
    /// `nearest_only,core_set_mean`.
    pub fn parse(kind: AxisKind, values: &str) -> Result<Self, AblationError> {
        let axis = match kind {
            AxisKind::CoreRatios => Axis::CoreRatios(parse_list(kind, values, |s| s.parse().ok())?),
            AxisKind::CoreKs => Axis::CoreKs(parse_list(kind, values, |s| s.parse().ok())?),
            AxisKind::KnownRatios => {
                Axis::KnownRatios(parse_list(kind, values, |s| s.parse().ok())?)
            }
            AxisKind::ScoreModes => Axis::ScoreModes(parse_list(kind, values, |s| {
                ScoreMode::from_str(s, false).ok()
            })?),
            AxisKind::FeatureModes => Axis::FeatureModes(parse_list(kind, values, |s| {
                FeatureMode::from_str(s, false).ok()
            })?),
        };
        if axis.len() == 0 {
            return Err(AblationError::Config(format!("axis {kind} has no values")));
        }
        Ok(axis)
    }

    pub fn kind(&self) -> AxisKind {
        match self {
            Axis::CoreRatios(_) => AxisKind::CoreRatios,
            Axis::CoreKs(_) => AxisKind::CoreKs,
            Axis::KnownRatios(_) => AxisKind::KnownRatios,
            Axis::ScoreModes(_) => AxisKind::ScoreModes,
            Axis::FeatureModes(_) => AxisKind::FeatureModes,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Axis::CoreRatios(v) | Axis::KnownRatios(v) => v.len(),
            Axis::CoreKs(v) => v.len(),
            Axis::ScoreModes(v) => v.len(),
            Axis::FeatureModes(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The cell specs, in value order.
    fn cells(&self, base: CoreSetConfig) -> Vec<CellSpec> {
        let spec = |value: String, config: CoreSetConfig, known_ratio: f64| CellSpec {
            value,
            config,
            known_ratio,
        };
        match self {
            Axis::CoreRatios(v) => v
                .iter()
                .map(|&r| {
                    spec(
                        r.to_string(),
                        CoreSetConfig {
                            core: CoreSize::Ratio(r),
                            ..base
                        },
                        1.0,
                    )
                })
                .collect(),
            Axis::CoreKs(v) => v
                .iter()
                .map(|&k| {
                    spec(
                        k.to_string(),
                        CoreSetConfig {
                            core: CoreSize::K(k),
                            ..base
                        },
                        1.0,
                    )
                })
                .collect(),
            Axis::KnownRatios(v) => v.iter().map(|&r| spec(r.to_string(), base, r)).collect(),
            Axis::ScoreModes(v) => v
                .iter()
                .map(|&m| {
                    spec(
                        enum_name(m),
                        CoreSetConfig {
                            score_mode: m,
                            ..base
                        },
                        1.0,
                    )
                })
                .collect(),
            Axis::FeatureModes(v) => v
                .iter()
                .map(|&m| {
                    spec(
                        enum_name(m),
                        CoreSetConfig {
                            feature_mode: m,
                            ..base
                        },
                        1.0,
                    )
                })
                .collect(),
        }
    }
}

impl fmt::Display for AxisKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&enum_name(*self))
    }
}

fn enum_name<E: ValueEnum>(e: E) -> String {
    e.to_possible_value()
        .expect("no skipped variants")
        .get_name()
        .to_owned()
}

struct CellSpec {
    value: String,
    config: CoreSetConfig,
    known_ratio: f64,
}

/// Shared knobs for every cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationSettings {
    pub base: CoreSetConfig,
    pub train_fraction: f64,
    pub seed: u64,
    pub block_mode: bool,
    /// Attach measured scoring wall time to each cell. Off by default so
    /// reports stay byte-reproducible.
    pub timings: bool,
    /// Run cells concurrently. Timings are only meaningful when this is off.
    pub parallel_cells: bool,
}

impl Default for AblationSettings {
    fn default() -> Self {
        AblationSettings {
            base: CoreSetConfig::default(),
            train_fraction: DEFAULT_TRAIN_FRACTION,
            seed: 0,
            block_mode: false,
            timings: false,
            parallel_cells: true,
        }
    }
}

/// A labeled corpus split chronologically and embedded once.
pub struct Experiment<T: Scalar> {
    known: SequenceDB,
    docs: Vec<EmbeddedSequence<T>>,
    queries: Vec<EmbeddedSequence<T>>,
    /// Per evaluation unit: the query id and the ground truth.
    units: Vec<(SeqId, Label)>,
    seed: u64,
}

/// Index of the first test record for a chronological split.
pub fn split_point(n: usize, train_fraction: f64) -> usize {
    ((n as f64 * train_fraction).floor() as usize).min(n)
}

impl<T: Scalar> Experiment<T> {
    /// Splits `records` at `train_fraction` in input order. Known-normal
    /// documents come from the normal part of the training prefix; every
    /// test record (or block, in block mode) is an evaluation unit.
    pub fn prepare(
        records: &[RawLogRecord],
        rules: &RuleSet,
        source: &dyn EmbeddingSource<T>,
        settings: &AblationSettings,
    ) -> Result<Self, AblationError> {
        if !(settings.train_fraction > 0.0 && settings.train_fraction < 1.0) {
            return Err(AblationError::Config(format!(
                "train fraction {} not in (0, 1)",
                settings.train_fraction
            )));
        }
        if let Some(r) = records.iter().find(|r| r.label.is_none()) {
            return Err(AblationError::Unlabeled { index: r.index });
        }
        let cut = split_point(records.len(), settings.train_fraction);
        let (train, test) = records.split_at(cut);
        if test.is_empty() {
            return Err(AblationError::Config("test split is empty".into()));
        }
        let known = detect::build_known_db(train, rules, settings.block_mode)?;

        let (q_db, units) = if settings.block_mode {
            let views = store::build_block_views(test, rules)?;
            let mut abnormal: HashMap<&str, bool> = HashMap::new();
            for r in test {
                let b = abnormal
                    .entry(r.block_id.as_deref().expect("checked by build_block_views"))
                    .or_default();
                *b |= r.label == Some(Label::Abnormal);
            }
            let mut db = SequenceDB::new();
            let units = views
                .iter()
                .map(|v| {
                    let label = if abnormal[v.block_id.as_str()] {
                        Label::Abnormal
                    } else {
                        Label::Normal
                    };
                    (db.intern(&v.canonical_text), label)
                })
                .collect();
            (db, units)
        } else {
            let masked: Vec<String> = test.par_iter().map(|r| rules.mask_text(&r.text)).collect();
            let (db, lookup) = store::build_db_from_texts(masked.iter().map(String::as_str));
            let units = lookup
                .mapping
                .iter()
                .zip(test)
                .map(|(&id, r)| (id, r.label.expect("checked")))
                .collect();
            (db, units)
        };

        let docs: Vec<_> = source.embed(&known)?.into_values().collect();
        let queries: Vec<_> = source.embed(&q_db)?.into_values().collect();
        Ok(Experiment {
            known,
            docs,
            queries,
            units,
            seed: settings.seed,
        })
    }

    pub fn known(&self) -> &SequenceDB {
        &self.known
    }

    pub fn n_docs(&self) -> usize {
        self.docs.len()
    }

    pub fn n_queries(&self) -> usize {
        self.queries.len()
    }

    pub fn n_units(&self) -> usize {
        self.units.len()
    }

    /// Keeps `round(ratio * |D|)` documents drawn uniformly without
    /// replacement; the draw depends only on the seed and `|D|`.
    pub fn sample_docs(&self, ratio: f64) -> Result<Vec<EmbeddedSequence<T>>, AblationError> {
        if !(ratio > 0.0 && ratio <= 1.0) {
            return Err(AblationError::Config(format!(
                "known ratio {ratio} not in (0, 1]"
            )));
        }
        let n = self.docs.len();
        let keep = (ratio * n as f64).round() as usize;
        if keep == 0 {
            return Err(AblationError::Config(format!(
                "known ratio {ratio} leaves no documents out of {n}"
            )));
        }
        if keep == n {
            return Ok(self.docs.clone());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut picked = rand::seq::index::sample(&mut rng, n, keep).into_vec();
        picked.sort_unstable();
        Ok(picked.into_iter().map(|i| self.docs[i].clone()).collect())
    }

    /// Scores every test unit against `docs` under `config`. Returns the
    /// labeled scores and the wall time of the scoring pass alone.
    pub fn score_units(
        &self,
        docs: Vec<EmbeddedSequence<T>>,
        config: &CoreSetConfig,
    ) -> Result<(Vec<LabeledScore>, f64), AblationError> {
        let index = DocIndex::new(docs)?;
        config.resolve_k(index.len())?;
        let queries: Vec<&EmbeddedSequence<T>> = self.queries.iter().collect();
        let start = Instant::now();
        let scores = retrieval::score_all(&queries, &index, config)?;
        let secs = start.elapsed().as_secs_f64();
        let by_id: HashMap<SeqId, f64> = scores
            .iter()
            .map(|s| (s.query_seq_id, s.abnormal_score))
            .collect();
        let labeled = self
            .units
            .iter()
            .map(|&(id, label)| LabeledScore::new(by_id[&id], label))
            .collect();
        Ok((labeled, secs))
    }

    pub fn run_cell(
        &self,
        axis: AxisKind,
        value: &str,
        config: CoreSetConfig,
        known_ratio: f64,
        timings: bool,
    ) -> Result<AblationCell, AblationError> {
        let docs = self.sample_docs(known_ratio)?;
        let n_docs = docs.len();
        let k = config.resolve_k(n_docs)?;
        let (labeled, secs) = self.score_units(docs, &config)?;
        let snapshot = serde_json::json!({ "core_set": config, "known_ratio": known_ratio, "n_docs": n_docs, "k": k });
        Ok(AblationCell {
            axis,
            value: value.to_owned(),
            n_docs,
            k,
            queries: self.queries.len(),
            units: self.units.len(),
            report: eval::evaluate(&labeled, None, snapshot),
            scoring_secs: timings.then_some(secs),
        })
    }
}

/// One configuration of an ablation and its evaluation at the best-F1
/// threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub axis: AxisKind,
    pub value: String,
    pub n_docs: usize,
    pub k: usize,
    pub queries: usize,
    pub units: usize,
    pub report: EvalReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scoring_secs: Option<f64>,
}

/// Runs every value of `axis` against a prepared experiment.
pub fn ablate_prepared<T: Scalar>(
    exp: &Experiment<T>,
    axis: &Axis,
    settings: &AblationSettings,
) -> Result<Vec<AblationCell>, AblationError> {
    let specs = axis.cells(settings.base);
    let run = |s: &CellSpec| {
        exp.run_cell(
            axis.kind(),
            &s.value,
            s.config,
            s.known_ratio,
            settings.timings,
        )
    };
    if settings.parallel_cells {
        specs.par_iter().map(run).collect()
    } else {
        specs.iter().map(run).collect()
    }
}

/// Splits, embeds and runs the ablation in one call.
pub fn ablate<T: Scalar>(
    corpus: &[RawLogRecord],
    rules: &RuleSet,
    source: &dyn EmbeddingSource<T>,
    axis: &Axis,
    settings: &AblationSettings,
) -> Result<Vec<AblationCell>, AblationError> {
    let exp = Experiment::prepare(corpus, rules, source, settings)?;
    ablate_prepared(&exp, axis, settings)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "".to_owned(), |x| format!("{x:.6}"))
}

const COLUMNS: [&str; 12] = [
    "axis",
    "value",
    "n_docs",
    "k",
    "best_f1",
    "best_threshold",
    "auroc",
    "precision",
    "recall",
    "f1",
    "units",
    "scoring_secs",
];

fn cell_fields(c: &AblationCell) -> [String; 12] {
    let r = &c.report;
    [
        c.axis.to_string(),
        c.value.clone(),
        c.n_docs.to_string(),
        c.k.to_string(),
        format!("{:.6}", r.best_f1),
        format!("{:.6}", r.best_threshold),
        fmt_opt(r.auroc),
        format!("{:.6}", r.precision),
        format!("{:.6}", r.recall),
        format!("{:.6}", r.f1),
        c.units.to_string(),
        fmt_opt(c.scoring_secs),
    ]
}

pub fn cells_to_csv(cells: &[AblationCell]) -> String {
    let mut out = COLUMNS.join(",");
    out.push('\n');
    for c in cells {
        out.push_str(&cell_fields(c).join(","));
        out.push('\n');
    }
    out
}

pub fn cells_to_text(cells: &[AblationCell]) -> String {
    let rows: Vec<[String; 12]> = cells.iter().map(cell_fields).collect();
    let mut widths = COLUMNS.map(str::len);
    for row in &rows {
        for (w, f) in widths.iter_mut().zip(row) {
            *w = (*w).max(f.len());
        }
    }
    let line = |fields: Vec<&str>| {
        let cols: Vec<String> = fields
            .iter()
            .zip(widths)
            .map(|(f, w)| format!("{f:<w$}"))
            .collect();
        cols.join("  ").trim_end().to_owned() + "\n"
    };
    let mut out = line(COLUMNS.to_vec());
    for row in &rows {
        out.push_str(&line(row.iter().map(String::as_str).collect()));
    }
    out
}
