//! Files laid out by hand, byte for byte, as an external exporter would
//! write them.

use logret::detect::Detector;
use logret::embed::{self, TextKeyedEmbeddings};
use logret::store;
use logret::{DocIndex, ProviderConfig, ProviderKind, RawLogRecord, RuleSet, SequenceDB};

/// `(id, rows)` with every row of width `dim`.
fn rpde_bytes(dim: u32, seqs: &[(u64, Vec<Vec<f32>>)]) -> Vec<u8> {
    let mut b = Vec::new();
    b.extend_from_slice(b"RPDE");
    b.extend_from_slice(&1u32.to_le_bytes());
    b.extend_from_slice(&dim.to_le_bytes());
    b.extend_from_slice(&(seqs.len() as u64).to_le_bytes());
    for (id, rows) in seqs {
        b.extend_from_slice(&id.to_le_bytes());
        b.extend_from_slice(&(rows.len() as u32).to_le_bytes());
        for r in rows {
            assert_eq!(r.len(), dim as usize);
            for v in r {
                b.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    let crc = crc32c::crc32c(&b);
    b.extend_from_slice(&crc.to_le_bytes());
    b
}

/// One-hot rows: CLS, one row per token, and a trailing separator row.
fn rows(token_axes: &[usize], dim: usize) -> Vec<Vec<f32>> {
    let hot = |i: usize| {
        (0..dim)
            .map(|j| if j == i { 1.0 } else { 0.0 })
            .collect::<Vec<f32>>()
    };
    let mut out = vec![hot(0)];
    out.extend(token_axes.iter().map(|&a| hot(a)));
    out.push(hot(dim - 1));
    out
}

fn rec(i: u64, text: &str) -> RawLogRecord {
    RawLogRecord {
        index: i,
        timestamp: None,
        label: None,
        block_id: None,
        text: text.into(),
    }
}

#[test]
fn hand_written_file_decodes_exactly() {
    let seqs = vec![(1, rows(&[1, 2], 4)), (2, rows(&[3], 4))];
    let bytes = rpde_bytes(4, &seqs);
    let map = embed::decode_embeddings(&bytes).unwrap();
    assert_eq!(map.len(), 2);
    assert_eq!(map[&1].row_count(), 4);
    assert_eq!(map[&2].row(1), &[0.0, 0.0, 0.0, 1.0]);
    assert_eq!(embed::encode_embeddings(&map).unwrap(), bytes);
}

#[test]
fn file_provider_detection_with_separator_rows() {
    let dir = tempfile::tempdir().unwrap();
    let dim = 8;
    let known = SequenceDB::from_texts(["alpha beta", "gamma"]);
    let queries = SequenceDB::from_texts(["alpha beta", "delta"]);
    let doc_file = dir.path().join("docs.rpde");
    let query_file = dir.path().join("queries.rpde");
    std::fs::write(
        &doc_file,
        rpde_bytes(dim as u32, &[(1, rows(&[1, 2], dim)), (2, rows(&[3], dim))]),
    )
    .unwrap();
    std::fs::write(
        &query_file,
        rpde_bytes(dim as u32, &[(1, rows(&[1, 2], dim)), (2, rows(&[5], dim))]),
    )
    .unwrap();
    let q_db_path = dir.path().join("queries.rpdb");
    store::persist(
        &queries,
        &store::LookupTable {
            mapping: vec![1, 2],
        },
        &q_db_path,
    )
    .unwrap();

    let cfg = ProviderConfig {
        provider: ProviderKind::File,
        dim,
        exclude_trailing_separator: true,
        file_path: Some(doc_file.clone()),
        ..ProviderConfig::default()
    };
    let docs = embed::embed_batch::<f32>(&known, &cfg).unwrap();
    assert_eq!(docs[&1].row_count(), 3, "separator row dropped");
    let (q_db, _) = store::load(&q_db_path).unwrap();
    let q_src = TextKeyedEmbeddings::<f32>::from_file(
        &q_db,
        embed::read_embedding_file(&query_file).unwrap(),
        &cfg,
    )
    .unwrap();
    let core = logret::CoreSetConfig {
        aggregation: logret::Aggregation::Mean,
        ..logret::CoreSetConfig::with_k(2)
    };
    let det = Detector::new(
        DocIndex::from_map(docs).unwrap(),
        RuleSet::empty(),
        Box::new(q_src),
        core,
        false,
    )
    .unwrap();
    let out = det
        .detect_period(
            &[rec(0, "alpha beta"), rec(1, "delta"), rec(2, "alpha beta")],
            0.5,
        )
        .unwrap();
    let scores: Vec<f64> = out.results.iter().map(|r| r.abnormal_score).collect();
    assert_eq!(scores[0], 0.0);
    assert_eq!(scores[2], 0.0);
    // "delta" shares only the CLS axis with either doc: one of two rows matches.
    assert_eq!(scores[1], 0.5);
    assert_eq!(out.stats.queries_scored, 2);

    // A record whose text the query file does not cover is a data error.
    assert!(det.detect_period(&[rec(0, "epsilon")], 0.5).is_err());
}

#[test]
fn corrupted_file_is_rejected() {
    let mut bytes = rpde_bytes(4, &[(1, rows(&[1], 4))]);
    let n = bytes.len();
    bytes[n - 6] ^= 0x40;
    assert!(matches!(
        embed::decode_embeddings(&bytes),
        Err(embed::EmbedError::Frame(_))
    ));
}
