//! Unique-sequence databases and record lookups.
//!
//! A [`SequenceDB`] interns masked texts under dense ids starting at 1. A
//! [`LookupTable`] maps every ingested record, in order, to the id of its
//! text, so a score computed once per unique text can be handed back to
//! every record that produced it.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::codec::{FrameError, Reader, Writer};
use crate::ingest::{ProcessedSequence, RawLogRecord, RuleSet};

pub type SeqId = u64;

pub const DB_MAGIC: &[u8; 4] = b"RPDB";
pub const DB_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("io error on {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error("malformed DB file: {0}")]
    Format(String),
    #[error("record {index} has no block_id but block mode is enabled")]
    MissingBlockId { index: u64 },
}

/// Interned unique masked sequences.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SequenceDB {
    // texts[id - 1]
    texts: Vec<String>,
    index: HashMap<String, SeqId>,
}

impl SequenceDB {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the id of `text`, interning it if unseen.
    pub fn intern(&mut self, text: &str) -> SeqId {
        if let Some(&id) = self.index.get(text) {
            return id;
        }
        self.texts.push(text.to_owned());
        let id = self.texts.len() as SeqId;
        self.index.insert(text.to_owned(), id);
        id
    }

    pub fn from_texts<I, S>(texts: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut db = Self::new();
        for t in texts {
            db.intern(t.as_ref());
        }
        db
    }

    pub fn len(&self) -> usize {
        self.texts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.texts.is_empty()
    }

    pub fn get(&self, id: SeqId) -> Option<&str> {
        let i = usize::try_from(id).ok()?.checked_sub(1)?;
        self.texts.get(i).map(String::as_str)
    }

    pub fn id_of(&self, text: &str) -> Option<SeqId> {
        self.index.get(text).copied()
    }

    pub fn contains(&self, text: &str) -> bool {
        self.index.contains_key(text)
    }

    /// `(id, text)` in id order.
    pub fn iter(&self) -> impl ExactSizeIterator<Item = (SeqId, &str)> {
        self.texts
            .iter()
            .enumerate()
            .map(|(i, t)| (i as SeqId + 1, t.as_str()))
    }

    pub fn ids(&self) -> impl DoubleEndedIterator<Item = SeqId> {
        1..=self.texts.len() as SeqId
    }
}

/// Position `i` holds the seq id of input record `i`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LookupTable {
    pub mapping: Vec<SeqId>,
}

impl LookupTable {
    pub fn len(&self) -> usize {
        self.mapping.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mapping.is_empty()
    }

    /// Rebuilds the original text list; panics if an id is not in `db`.
    pub fn replay<'a>(&self, db: &'a SequenceDB) -> Vec<&'a str> {
        self.mapping
            .iter()
            .map(|&id| db.get(id).expect("lookup id present in db"))
            .collect()
    }
}

/// Dedups `sequences` in order. Every input position, including repeats,
/// gets a lookup entry.
pub fn build_db(sequences: &[ProcessedSequence]) -> (SequenceDB, LookupTable) {
    build_db_from_texts(sequences.iter().map(|s| s.text.as_str()))
}

pub fn build_db_from_texts<'a, I>(texts: I) -> (SequenceDB, LookupTable)
where
    I: IntoIterator<Item = &'a str>,
{
    let mut db = SequenceDB::new();
    let mapping = texts.into_iter().map(|t| db.intern(t)).collect();
    (db, LookupTable { mapping })
}

/// A block of records scored as one unit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockView {
    pub block_id: String,
    pub member_indices: Vec<u64>,
    pub canonical_text: String,
}

/// Groups records by `block_id` (blocks ordered by first appearance) and
/// joins each block's distinct masked sequences in first-appearance order.
pub fn build_block_views(
    records: &[RawLogRecord],
    rules: &RuleSet,
) -> Result<Vec<BlockView>, StoreError> {
    struct Acc {
        view: BlockView,
        seen: std::collections::HashSet<String>,
        parts: Vec<String>,
    }
    let mut order: Vec<Acc> = Vec::new();
    let mut by_id: HashMap<String, usize> = HashMap::new();
    for r in records {
        let block_id = r
            .block_id
            .as_ref()
            .ok_or(StoreError::MissingBlockId { index: r.index })?;
        let slot = *by_id.entry(block_id.clone()).or_insert_with(|| {
            order.push(Acc {
                view: BlockView {
                    block_id: block_id.clone(),
                    member_indices: Vec::new(),
                    canonical_text: String::new(),
                },
                seen: Default::default(),
                parts: Vec::new(),
            });
            order.len() - 1
        });
        let acc = &mut order[slot];
        acc.view.member_indices.push(r.index);
        let masked = rules.mask_text(&r.text);
        if acc.seen.insert(masked.clone()) {
            acc.parts.push(masked);
        }
    }
    Ok(order
        .into_iter()
        .map(|mut a| {
            a.view.canonical_text = a.parts.join(" ");
            a.view
        })
        .collect())
}

/// Serializes to the RPDB layout.
pub fn encode_db(db: &SequenceDB, lookup: &LookupTable) -> Vec<u8> {
    let mut w = Writer::new(DB_MAGIC, DB_VERSION);
    w.u64(db.len() as u64);
    for (id, text) in db.iter() {
        w.u64(id);
        w.u32(text.len() as u32);
        w.bytes(text.as_bytes());
    }
    w.u64(lookup.len() as u64);
    for &id in &lookup.mapping {
        w.u64(id);
    }
    w.finish()
}

pub fn decode_db(data: &[u8]) -> Result<(SequenceDB, LookupTable), StoreError> {
    let mut r = Reader::open(data, DB_MAGIC, DB_VERSION)?;
    let n = r.body_u64()?;
    let mut raw: Vec<(SeqId, &[u8])> = Vec::new();
    for _ in 0..n {
        let id = r.body_u64()?;
        let len = r.body_u32()? as usize;
        raw.push((id, r.take(len)?));
    }
    let n_lookup = r.body_u64()?;
    let mut mapping = Vec::new();
    for _ in 0..n_lookup {
        mapping.push(r.body_u64()?);
    }
    r.finish()?;

    let mut db = SequenceDB::new();
    for (expected, (id, bytes)) in (1u64..).zip(raw) {
        if id != expected {
            return Err(StoreError::Format(format!(
                "seq id {id} out of order (expected {expected})"
            )));
        }
        let text = std::str::from_utf8(bytes)
            .map_err(|e| StoreError::Format(format!("seq {id} is not UTF-8: {e}")))?;
        if db.intern(text) != id {
            return Err(StoreError::Format(format!("duplicate text under seq {id}")));
        }
    }
    if let Some(&bad) = mapping.iter().find(|&&id| db.get(id).is_none()) {
        return Err(StoreError::Format(format!(
            "lookup references unknown seq {bad}"
        )));
    }
    Ok((db, LookupTable { mapping }))
}

pub fn persist(db: &SequenceDB, lookup: &LookupTable, path: &Path) -> Result<(), StoreError> {
    fs::write(path, encode_db(db, lookup)).map_err(|source| StoreError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load(path: &Path) -> Result<(SequenceDB, LookupTable), StoreError> {
    let data = fs::read(path).map_err(|source| StoreError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode_db(&data)
}
