//! Raw log parsing, parameter masking and synthetic corpora.
//!
//! Masking replaces variable spans (addresses, paths, ids, numbers) with an
//! uppercase header token so that logs emitted by the same code path collapse
//! onto one canonical string. Everything downstream deduplicates on that
//! string, so masking must be deterministic.

use std::collections::HashSet;
use std::fs;
use std::io::BufRead;
use std::ops::RangeInclusive;
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("line {line}: malformed JSON record")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("line {line}: record {index} rejected: empty text")]
    EmptyText { index: u64, line: usize },
    #[error("invalid UTF-8 or I/O failure at line {line}")]
    Io {
        line: usize,
        #[source]
        source: std::io::Error,
    },
    #[error("mask rule {header:?}: pattern does not compile")]
    BadPattern {
        header: String,
        #[source]
        source: regex::Error,
    },
    #[error("mask rule header {0:?} is empty or contains whitespace")]
    BadHeader(String),
    #[error("mask rules share priority {0}")]
    DuplicatePriority(i64),
    #[error("mask header {header:?} is itself matched by pattern {pattern:?}")]
    HeaderMatchesPattern { header: String, pattern: String },
    #[error("rules file: {0}")]
    RulesFile(String),
    #[error("synthetic corpus: {0}")]
    Synthetic(String),
}

/// Ground-truth label of a record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Label {
    Normal,
    Abnormal,
}

impl Label {
    pub fn is_abnormal(self) -> bool {
        self == Label::Abnormal
    }
}

impl TryFrom<u8> for Label {
    type Error = String;
    fn try_from(v: u8) -> Result<Self, Self::Error> {
        match v {
            0 => Ok(Label::Normal),
            1 => Ok(Label::Abnormal),
            other => Err(format!("label must be 0 or 1, got {other}")),
        }
    }
}

impl From<Label> for u8 {
    fn from(l: Label) -> u8 {
        match l {
            Label::Normal => 0,
            Label::Abnormal => 1,
        }
    }
}

/// One input log line (or one line of a block-structured log).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawLogRecord {
    pub index: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<Label>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub block_id: Option<String>,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum InputFormat {
    Jsonl,
    Plain,
}

#[derive(Deserialize)]
struct JsonLine {
    text: String,
    #[serde(default)]
    label: Option<Label>,
    #[serde(default)]
    timestamp: Option<String>,
    #[serde(default)]
    block_id: Option<String>,
}

/// Records accepted from a stream plus the lines that were rejected.
#[derive(Debug, Default)]
pub struct ParsedStream {
    pub records: Vec<RawLogRecord>,
    pub rejected: Vec<IngestError>,
}

/// Parses a line-delimited stream.
///
/// Malformed JSON aborts the parse. Records whose text is blank are collected
/// in [`ParsedStream::rejected`] and do not consume an index.
pub fn parse_records<R: BufRead>(
    stream: R,
    format: InputFormat,
) -> Result<ParsedStream, IngestError> {
    let mut out = ParsedStream::default();
    for (i, line) in stream.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|source| IngestError::Io {
            line: line_no,
            source,
        })?;
        let next_index = out.records.len() as u64;
        let (text, label, timestamp, block_id) = match format {
            InputFormat::Plain => (line, None, None, None),
            InputFormat::Jsonl => {
                if line.trim().is_empty() {
                    out.rejected.push(IngestError::EmptyText {
                        index: next_index,
                        line: line_no,
                    });
                    continue;
                }
                let rec: JsonLine =
                    serde_json::from_str(&line).map_err(|source| IngestError::Json {
                        line: line_no,
                        source,
                    })?;
                (rec.text, rec.label, rec.timestamp, rec.block_id)
            }
        };
        if text.trim().is_empty() {
            out.rejected.push(IngestError::EmptyText {
                index: next_index,
                line: line_no,
            });
            continue;
        }
        out.records.push(RawLogRecord {
            index: next_index,
            timestamp,
            label,
            block_id,
            text,
        });
    }
    Ok(out)
}

pub fn read_records(path: &Path, format: InputFormat) -> Result<ParsedStream, IngestError> {
    let file = fs::File::open(path).map_err(|source| IngestError::Io { line: 0, source })?;
    parse_records(std::io::BufReader::new(file), format)
}

/// Writes records as JSONL, the same layout [`parse_records`] reads back.
pub fn write_records<W: std::io::Write>(mut w: W, records: &[RawLogRecord]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// A single parameter-masking rule as it appears in a rules file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskRule {
    pub header: String,
    pub pattern: String,
    pub priority: i64,
}

#[derive(Debug, Clone)]
struct CompiledRule {
    rule: MaskRule,
    regex: Regex,
}

/// A validated, priority-ordered set of mask rules.
#[derive(Debug, Clone)]
pub struct RuleSet {
    rules: Vec<CompiledRule>,
}

impl RuleSet {
    pub fn new(rules: Vec<MaskRule>) -> Result<Self, IngestError> {
        let mut compiled = Vec::with_capacity(rules.len());
        let mut seen = HashSet::new();
        for mut rule in rules {
            if rule.header.is_empty() || rule.header.chars().any(char::is_whitespace) {
                return Err(IngestError::BadHeader(rule.header));
            }
            if !seen.insert(rule.priority) {
                return Err(IngestError::DuplicatePriority(rule.priority));
            }
            rule.header = rule.header.to_uppercase();
            let regex = Regex::new(&rule.pattern).map_err(|source| IngestError::BadPattern {
                header: rule.header.clone(),
                source,
            })?;
            compiled.push(CompiledRule { rule, regex });
        }
        // A header that some pattern matches would be rewritten on a second
        // pass, breaking idempotence.
        for a in &compiled {
            for b in &compiled {
                if b.regex.is_match(&a.rule.header) {
                    return Err(IngestError::HeaderMatchesPattern {
                        header: a.rule.header.clone(),
                        pattern: b.rule.pattern.clone(),
                    });
                }
            }
        }
        compiled.sort_by_key(|c| c.rule.priority);
        Ok(RuleSet { rules: compiled })
    }

    /// IP, PATH, HEX and NUM, applied in that order.
    pub fn default_rules() -> Self {
        Self::new(default_mask_rules()).expect("default mask rules are valid")
    }

    pub fn empty() -> Self {
        RuleSet { rules: Vec::new() }
    }

    pub fn from_json(json: &str) -> Result<Self, IngestError> {
        let rules: Vec<MaskRule> =
            serde_json::from_str(json).map_err(|e| IngestError::RulesFile(e.to_string()))?;
        Self::new(rules)
    }

    pub fn load(path: &Path) -> Result<Self, IngestError> {
        let text = fs::read_to_string(path)
            .map_err(|e| IngestError::RulesFile(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn rules(&self) -> impl Iterator<Item = &MaskRule> {
        self.rules.iter().map(|c| &c.rule)
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    /// Masks `text` and normalizes whitespace.
    pub fn mask_text(&self, text: &str) -> String {
        let mut current = text.to_owned();
        for c in &self.rules {
            if let std::borrow::Cow::Owned(s) = c
                .regex
                .replace_all(&current, regex::NoExpand(&c.rule.header))
            {
                current = s;
            }
        }
        normalize_whitespace(&current)
    }

    pub fn apply(&self, record: &RawLogRecord) -> ProcessedSequence {
        ProcessedSequence::new(self.mask_text(&record.text), record.index)
    }
}

pub fn default_mask_rules() -> Vec<MaskRule> {
    vec![
        MaskRule {
            header: "IP".into(),
            pattern: r"\b(?:\d{1,3}\.){3}\d{1,3}(?::\d{1,5})?\b".into(),
            priority: 10,
        },
        MaskRule {
            header: "PATH".into(),
            pattern: r"(?:/+[\w.\-]+)+/*".into(),
            priority: 20,
        },
        MaskRule {
            header: "HEX".into(),
            pattern: r"\b0[xX][0-9a-fA-F]+\b|\b[0-9a-fA-F]{8,}\b".into(),
            priority: 30,
        },
        MaskRule {
            header: "NUM".into(),
            pattern: r"\b\d+\b".into(),
            priority: 40,
        },
    ]
}

pub fn normalize_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// A masked log line, ready for deduplication and embedding.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProcessedSequence {
    pub text: String,
    pub tokens: Vec<String>,
    pub source_index: u64,
}

impl ProcessedSequence {
    /// Builds from already-masked text; whitespace is normalized here too.
    pub fn new(text: impl AsRef<str>, source_index: u64) -> Self {
        let tokens: Vec<String> = text
            .as_ref()
            .split_whitespace()
            .map(str::to_owned)
            .collect();
        ProcessedSequence {
            text: tokens.join(" "),
            tokens,
            source_index,
        }
    }
}

/// Applies `rules` to one record.
pub fn apply_masks(record: &RawLogRecord, rules: &RuleSet) -> ProcessedSequence {
    rules.apply(record)
}

pub fn mask_all(records: &[RawLogRecord], rules: &RuleSet) -> Vec<ProcessedSequence> {
    records.iter().map(|r| rules.apply(r)).collect()
}

// ---------------------------------------------------------------------------
// Synthetic corpora
// ---------------------------------------------------------------------------

const NORMAL_WORDS: &[&str] = &[
    "instruction",
    "cache",
    "parity",
    "error",
    "corrected",
    "generating",
    "core",
    "node",
    "card",
    "status",
    "ready",
    "receiving",
    "block",
    "src",
    "dest",
    "packet",
    "responder",
    "served",
    "verification",
    "succeeded",
    "deleting",
    "added",
    "stored",
    "size",
    "session",
    "opened",
    "closed",
    "user",
    "request",
    "completed",
    "connection",
    "from",
    "to",
    "port",
    "kernel",
    "module",
    "loaded",
    "service",
    "started",
    "stopped",
    "daemon",
    "config",
    "reloaded",
    "checkpoint",
    "written",
    "flush",
    "queue",
    "worker",
    "thread",
    "spawned",
    "job",
    "scheduled",
    "task",
    "finished",
    "disk",
    "mounted",
    "volume",
    "snapshot",
    "replica",
    "sync",
    "heartbeat",
    "received",
    "lease",
    "renewed",
    "token",
    "issued",
    "policy",
    "applied",
    "route",
    "updated",
    "table",
    "index",
    "rebuilt",
    "memory",
    "allocated",
    "released",
    "buffer",
    "pool",
    "resized",
    "link",
    "up",
    "fan",
    "speed",
    "nominal",
    "temperature",
    "within",
    "range",
    "power",
    "supply",
    "voltage",
    "clock",
    "synchronized",
    "ntp",
    "peer",
    "selected",
    "backup",
    "rotated",
    "archive",
    "compressed",
    "upload",
    "download",
    "chunk",
    "merged",
    "compaction",
    "segment",
    "sealed",
    "ack",
    "batch",
    "committed",
    "offset",
    "advanced",
    "partition",
    "assigned",
    "leader",
    "elected",
];

const ANOMALY_WORDS: &[&str] = &[
    "fatal",
    "panic",
    "segfault",
    "corrupted",
    "unreachable",
    "refused",
    "denied",
    "overflow",
    "aborted",
    "killed",
    "timeout",
    "exception",
    "halted",
    "crashed",
    "lost",
    "invalid",
];

#[derive(Debug, Clone, Copy)]
enum ParamKind {
    Ip,
    Path,
    Hex,
    Num,
}

#[derive(Debug, Clone, Copy)]
enum Slot {
    Word(&'static str),
    /// Run of 1..=max_list_len parameter values of one kind.
    Params(ParamKind),
}

/// Knobs for [`gen_synthetic_with`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_types: usize,
    pub logs_per_type: usize,
    pub anomaly_rate: f64,
    pub seed: u64,
    /// Longest run of repeated parameters in a parameter slot. With 1 every
    /// type masks to exactly one canonical sequence; larger values give each
    /// type many distinct masked variants over the same vocabulary.
    pub max_list_len: usize,
    /// Parameter slots per template, drawn uniformly from this range.
    pub min_param_slots: usize,
    pub max_param_slots: usize,
}

impl SyntheticConfig {
    pub fn new(n_types: usize, logs_per_type: usize, anomaly_rate: f64, seed: u64) -> Self {
        SyntheticConfig {
            n_types,
            logs_per_type,
            anomaly_rate,
            seed,
            max_list_len: 1,
            min_param_slots: 1,
            max_param_slots: 2,
        }
    }
}

/// `n_types` templates, each instantiated `logs_per_type` times, shuffled,
/// with `round(total * anomaly_rate)` token-level perturbations labeled 1.
pub fn gen_synthetic(
    n_types: usize,
    logs_per_type: usize,
    anomaly_rate: f64,
    seed: u64,
) -> Result<Vec<RawLogRecord>, IngestError> {
    gen_synthetic_with(&SyntheticConfig::new(
        n_types,
        logs_per_type,
        anomaly_rate,
        seed,
    ))
}

pub fn gen_synthetic_with(cfg: &SyntheticConfig) -> Result<Vec<RawLogRecord>, IngestError> {
    if cfg.n_types < 2 {
        return Err(IngestError::Synthetic(format!(
            "n_types must be >= 2, got {}",
            cfg.n_types
        )));
    }
    if !(0.0..0.5).contains(&cfg.anomaly_rate) {
        return Err(IngestError::Synthetic(format!(
            "anomaly_rate must be in [0, 0.5), got {}",
            cfg.anomaly_rate
        )));
    }
    if cfg.max_list_len == 0 {
        return Err(IngestError::Synthetic("max_list_len must be >= 1".into()));
    }
    if cfg.min_param_slots == 0 || cfg.min_param_slots > cfg.max_param_slots {
        return Err(IngestError::Synthetic(format!(
            "param slot range {}..={} must be non-empty and start at 1 or more",
            cfg.min_param_slots, cfg.max_param_slots
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let templates = make_templates(
        cfg.n_types,
        cfg.min_param_slots..=cfg.max_param_slots,
        &mut rng,
    );

    let mut texts: Vec<Vec<String>> = Vec::with_capacity(cfg.n_types * cfg.logs_per_type);
    for template in &templates {
        for _ in 0..cfg.logs_per_type {
            texts.push(instantiate(template, cfg.max_list_len, &mut rng));
        }
    }
    texts.shuffle(&mut rng);

    let total = texts.len();
    let n_anomalies = (total as f64 * cfg.anomaly_rate).round() as usize;
    let mut abnormal = vec![false; total];
    for i in index::sample(&mut rng, total, n_anomalies.min(total)) {
        abnormal[i] = true;
        perturb(&mut texts[i], &mut rng);
    }

    Ok(texts
        .into_iter()
        .zip(abnormal)
        .enumerate()
        .map(|(i, (tokens, bad))| RawLogRecord {
            index: i as u64,
            timestamp: None,
            label: Some(if bad { Label::Abnormal } else { Label::Normal }),
            block_id: None,
            text: tokens.join(" "),
        })
        .collect())
}

fn make_templates(
    n_types: usize,
    param_slots: RangeInclusive<usize>,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<Slot>> {
    let rules = RuleSet::default_rules();
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(n_types);
    while out.len() < n_types {
        let n_params = rng.random_range(param_slots.clone());
        let n_words = rng.random_range(4..=9).max(n_params);
        let mut slots: Vec<Slot> = index::sample(rng, NORMAL_WORDS.len(), n_words)
            .into_iter()
            .map(|i| Slot::Word(NORMAL_WORDS[i]))
            .collect();
        // Each parameter run follows a different word, so two runs never
        // merge into one.
        let mut gaps = index::sample(rng, n_words, n_params).into_vec();
        gaps.sort_unstable_by(|a, b| b.cmp(a));
        for after in gaps {
            let kind = match rng.random_range(0..4) {
                0 => ParamKind::Ip,
                1 => ParamKind::Path,
                2 => ParamKind::Hex,
                _ => ParamKind::Num,
            };
            slots.insert(after + 1, Slot::Params(kind));
        }
        // Distinctness is judged on the masked single-parameter rendering.
        let canonical = rules.mask_text(&instantiate(&slots, 1, rng).join(" "));
        if seen.insert(canonical) {
            out.push(slots);
        }
    }
    out
}

fn instantiate(template: &[Slot], max_list_len: usize, rng: &mut ChaCha8Rng) -> Vec<String> {
    let mut out = Vec::with_capacity(template.len() + 4);
    for slot in template {
        match *slot {
            Slot::Word(w) => out.push(w.to_owned()),
            Slot::Params(kind) => {
                let n = if max_list_len > 1 {
                    rng.random_range(1..=max_list_len)
                } else {
                    1
                };
                for _ in 0..n {
                    out.push(param_value(kind, rng));
                }
            }
        }
    }
    out
}

fn param_value(kind: ParamKind, rng: &mut ChaCha8Rng) -> String {
    match kind {
        ParamKind::Ip => {
            let ip = format!(
                "10.{}.{}.{}",
                rng.random_range(0..=255u32),
                rng.random_range(0..=255u32),
                rng.random_range(1..=254u32)
            );
            if rng.random_bool(0.3) {
                format!("{ip}:{}", rng.random_range(1024..=65535u32))
            } else {
                ip
            }
        }
        ParamKind::Path => {
            const DIRS: &[&str] = &["var", "log", "tmp", "data", "srv", "opt", "home", "run"];
            let depth = rng.random_range(1..=3);
            let mut p = String::new();
            for _ in 0..depth {
                p.push('/');
                p.push_str(DIRS[rng.random_range(0..DIRS.len())]);
            }
            p.push_str(&format!("/f{}.dat", rng.random_range(0..10_000u32)));
            p
        }
        ParamKind::Hex => format!("0x{:08x}", rng.random::<u32>()),
        ParamKind::Num => rng.random_range(0..1_000_000u32).to_string(),
    }
}

fn perturb(tokens: &mut Vec<String>, rng: &mut ChaCha8Rng) {
    let word = ANOMALY_WORDS[rng.random_range(0..ANOMALY_WORDS.len())].to_owned();
    if rng.random_bool(0.5) && !tokens.is_empty() {
        let at = rng.random_range(0..tokens.len());
        tokens[at] = word;
    } else {
        let at = rng.random_range(0..=tokens.len());
        tokens.insert(at, word);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(text: &str) -> RawLogRecord {
        RawLogRecord {
            index: 0,
            timestamp: None,
            label: None,
            block_id: None,
            text: text.into(),
        }
    }

    #[test]
    fn parses_jsonl_example() {
        let input = r#"{"text":"instruction cache parity error corrected","label":0}"#;
        let out = parse_records(input.as_bytes(), InputFormat::Jsonl).unwrap();
        assert_eq!(out.records.len(), 1);
        let r = &out.records[0];
        assert_eq!(r.index, 0);
        assert_eq!(r.label, Some(Label::Normal));
        assert_eq!(r.text, "instruction cache parity error corrected");
        assert_eq!(r.timestamp, None);
        assert_eq!(r.block_id, None);
    }

    #[test]
    fn empty_stream_is_empty() {
        let out = parse_records("".as_bytes(), InputFormat::Jsonl).unwrap();
        assert!(out.records.is_empty());
        assert!(out.rejected.is_empty());
    }

    #[test]
    fn plain_lines_get_consecutive_indices() {
        let out = parse_records("a\nb\nc\n".as_bytes(), InputFormat::Plain).unwrap();
        let idx: Vec<u64> = out.records.iter().map(|r| r.index).collect();
        assert_eq!(idx, vec![0, 1, 2]);
        assert_eq!(out.records[2].text, "c");
    }

    #[test]
    fn malformed_json_reports_line() {
        let input = "{\"text\":\"ok\"}\n{\"text\": oops}\n";
        match parse_records(input.as_bytes(), InputFormat::Jsonl) {
            Err(IngestError::Json { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected JSON error, got {other:?}"),
        }
    }

    #[test]
    fn bad_label_is_json_error() {
        let input = r#"{"text":"x","label":2}"#;
        assert!(matches!(
            parse_records(input.as_bytes(), InputFormat::Jsonl),
            Err(IngestError::Json { line: 1, .. })
        ));
    }

    #[test]
    fn empty_text_is_rejected_with_index() {
        let input = "a\n   \nb\n";
        let out = parse_records(input.as_bytes(), InputFormat::Plain).unwrap();
        assert_eq!(out.records.len(), 2);
        assert_eq!(out.records[1].index, 1);
        assert!(matches!(
            out.rejected[0],
            IngestError::EmptyText { index: 1, line: 2 }
        ));
    }

    #[test]
    fn masks_ip() {
        let rules = RuleSet::new(vec![MaskRule {
            header: "IP".into(),
            pattern: r"\b(?:\d{1,3}\.){3}\d{1,3}\b".into(),
            priority: 0,
        }])
        .unwrap();
        assert_eq!(
            rules.apply(&rec("connect from 10.0.0.1")).text,
            "connect from IP"
        );
    }

    #[test]
    fn no_match_only_normalizes_whitespace() {
        let rules = RuleSet::default_rules();
        let p = rules.apply(&rec("  cache   parity\terror "));
        assert_eq!(p.text, "cache parity error");
        assert_eq!(p.tokens, vec!["cache", "parity", "error"]);
    }

    #[test]
    fn masks_paths() {
        let rules = RuleSet::default_rules();
        assert_eq!(
            rules.mask_text("open /var/log/a.log then /tmp/b"),
            "open PATH then PATH"
        );
    }

    #[test]
    fn default_rules_cover_each_class() {
        let rules = RuleSet::default_rules();
        assert_eq!(
            rules.mask_text("from 192.168.1.20:8080 addr 0xdeadbeef id 3f2a9c1b0e count 42"),
            "from IP addr HEX id HEX count NUM"
        );
        assert_eq!(rules.mask_text("core.2275 ok"), "core.NUM ok");
    }

    #[test]
    fn priority_not_file_order_decides() {
        let rules = RuleSet::new(vec![
            MaskRule {
                header: "NUM".into(),
                pattern: r"\d+".into(),
                priority: 2,
            },
            MaskRule {
                header: "IP".into(),
                pattern: r"\d+\.\d+\.\d+\.\d+".into(),
                priority: 1,
            },
        ])
        .unwrap();
        assert_eq!(rules.mask_text("at 1.2.3.4"), "at IP");
    }

    #[test]
    fn rule_validation() {
        let bad = RuleSet::new(vec![MaskRule {
            header: "A B".into(),
            pattern: "x".into(),
            priority: 0,
        }]);
        assert!(matches!(bad, Err(IngestError::BadHeader(_))));
        let bad = RuleSet::new(vec![MaskRule {
            header: "A".into(),
            pattern: "(".into(),
            priority: 0,
        }]);
        assert!(matches!(bad, Err(IngestError::BadPattern { .. })));
        let bad = RuleSet::new(vec![
            MaskRule {
                header: "A".into(),
                pattern: "x".into(),
                priority: 0,
            },
            MaskRule {
                header: "B".into(),
                pattern: "y".into(),
                priority: 0,
            },
        ]);
        assert!(matches!(bad, Err(IngestError::DuplicatePriority(0))));
        let bad = RuleSet::new(vec![MaskRule {
            header: "WORD".into(),
            pattern: "[A-Z]+".into(),
            priority: 0,
        }]);
        assert!(matches!(bad, Err(IngestError::HeaderMatchesPattern { .. })));
    }

    #[test]
    fn headers_are_uppercased() {
        let rules = RuleSet::new(vec![MaskRule {
            header: "user".into(),
            pattern: "alice|bob".into(),
            priority: 0,
        }])
        .unwrap();
        assert_eq!(rules.mask_text("login alice"), "login USER");
    }

    #[test]
    fn rules_file_json() {
        let rules =
            RuleSet::from_json(r#"[{"header":"ID","pattern":"id-\\d+","priority":5}]"#).unwrap();
        assert_eq!(rules.mask_text("got id-77"), "got ID");
        assert!(RuleSet::from_json("{}").is_err());
    }

    #[test]
    fn synthetic_two_types_no_anomalies() {
        let recs = gen_synthetic(2, 10, 0.0, 7).unwrap();
        assert_eq!(recs.len(), 20);
        assert!(recs.iter().all(|r| r.label == Some(Label::Normal)));
        let rules = RuleSet::default_rules();
        let distinct: HashSet<String> = recs.iter().map(|r| rules.mask_text(&r.text)).collect();
        assert_eq!(distinct.len(), 2);
    }

    #[test]
    fn synthetic_is_deterministic() {
        let a = gen_synthetic(5, 100, 0.1, 7).unwrap();
        let b = gen_synthetic(5, 100, 0.1, 7).unwrap();
        let mut ba = Vec::new();
        let mut bb = Vec::new();
        write_records(&mut ba, &a).unwrap();
        write_records(&mut bb, &b).unwrap();
        assert_eq!(ba, bb);
    }

    #[test]
    fn synthetic_anomaly_fraction() {
        let recs = gen_synthetic(5, 100, 0.1, 7).unwrap();
        let n_bad = recs
            .iter()
            .filter(|r| r.label == Some(Label::Abnormal))
            .count();
        assert!((n_bad as i64 - 50).abs() <= 1, "{n_bad}");
    }

    #[test]
    fn synthetic_preconditions() {
        assert!(gen_synthetic(1, 10, 0.0, 1).is_err());
        assert!(gen_synthetic(3, 10, 0.5, 1).is_err());
    }

    #[test]
    fn synthetic_variants_share_vocabulary() {
        let cfg = SyntheticConfig {
            max_list_len: 4,
            ..SyntheticConfig::new(3, 200, 0.0, 11)
        };
        let recs = gen_synthetic_with(&cfg).unwrap();
        let rules = RuleSet::default_rules();
        let distinct: HashSet<String> = recs.iter().map(|r| rules.mask_text(&r.text)).collect();
        assert!(distinct.len() > 3);
        let vocab: HashSet<String> = distinct
            .iter()
            .flat_map(|s| s.split(' ').map(str::to_owned))
            .collect();
        // Three templates of at most nine words and two parameter kinds each.
        assert!(vocab.len() <= 3 * (9 + 2));
    }

    proptest! {
        #[test]
        fn masking_is_idempotent(s in "[0-9a-fx./: A-Za-z_-]{0,40}") {
            let rules = RuleSet::default_rules();
            let once = rules.mask_text(&s);
            prop_assert_eq!(rules.mask_text(&once), once.clone());
        }

        #[test]
        fn masked_span_contents_do_not_matter(a in 0u32..256, b in 0u32..256, n in 0u32..100000, m in 0u32..100000) {
            let rules = RuleSet::default_rules();
            let x = rules.mask_text(&format!("conn 10.0.{a}.1 size {n}"));
            let y = rules.mask_text(&format!("conn 10.0.{b}.9 size {m}"));
            prop_assert_eq!(x, y);
        }

        #[test]
        fn tokens_rejoin_to_text(s in "[a-z0-9 \t]{0,30}") {
            let p = ProcessedSequence::new(&s, 0);
            prop_assert_eq!(p.tokens.join(" "), p.text);
        }

        #[test]
        fn parse_is_total(lines in proptest::collection::vec("[a-z ]{0,6}", 0..20)) {
            let input = lines.join("\n");
            let out = parse_records(input.as_bytes(), InputFormat::Plain).unwrap();
            let n_lines = input.lines().count();
            prop_assert_eq!(out.records.len() + out.rejected.len(), n_lines);
        }
    }
}
