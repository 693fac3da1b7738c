mod common;

use std::fs;
use std::path::Path;

use openpath::data::embedding_file::{self, Dtype, HEADER_LEN};
use openpath::data::{load_dataset, DataDir};
use openpath::synth::{generate, SynthSpec};
use openpath::Error;
use sha2::{Digest, Sha256};

fn digest(dir: &Path) -> Vec<(String, String)> {
    let mut names: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    names
        .into_iter()
        .map(|n| {
            let bytes = fs::read(dir.join(&n)).unwrap();
            let hex = Sha256::digest(&bytes)
                .iter()
                .map(|b| format!("{b:02x}"))
                .collect();
            (n, hex)
        })
        .collect()
}

#[test]
fn same_seed_writes_identical_files() {
    let spec = common::small_spec();
    let config = common::small_config(&spec);
    let (a, b, c) = (
        tempfile::tempdir().unwrap(),
        tempfile::tempdir().unwrap(),
        tempfile::tempdir().unwrap(),
    );
    common::write_benchmark(a.path(), &spec, &config);
    common::write_benchmark(b.path(), &spec, &config);
    let other = SynthSpec {
        seed: spec.seed + 1,
        ..spec
    };
    common::write_benchmark(c.path(), &other, &config);

    let (da, db, dc) = (digest(a.path()), digest(b.path()), digest(c.path()));
    assert_eq!(da.len(), 7);
    assert_eq!(da, db);
    let pool = |d: &[(String, String)]| d.iter().find(|(n, _)| n == "pool.emb").unwrap().1.clone();
    assert_ne!(pool(&da), pool(&dc));
}

#[test]
fn generated_data_round_trips_through_ingestion() {
    let spec = common::small_spec();
    let config = common::small_config(&spec);
    let first = tempfile::tempdir().unwrap();
    let second = tempfile::tempdir().unwrap();
    common::write_benchmark(first.path(), &spec, &config);

    for stem in [DataDir::POOL, DataDir::TEST, DataDir::PROMPTS] {
        let loaded = DataDir::new(first.path()).load(stem).unwrap();
        DataDir::new(second.path()).write(stem, &loaded).unwrap();
        let again = DataDir::new(second.path()).load(stem).unwrap();
        assert_eq!(loaded.records, again.records);
        assert_eq!(loaded.embeddings, again.embeddings);
        for ext in ["emb", "jsonl"] {
            let name = format!("{stem}.{ext}");
            assert_eq!(
                fs::read(first.path().join(&name)).unwrap(),
                fs::read(second.path().join(&name)).unwrap(),
                "{name}"
            );
        }
    }
}

#[test]
fn loaded_pool_matches_generator_within_f32() {
    let spec = common::small_spec();
    let dir = tempfile::tempdir().unwrap();
    let data = common::write_benchmark(dir.path(), &spec, &common::small_config(&spec));
    let pool = DataDir::new(dir.path()).load(DataDir::POOL).unwrap();
    assert_eq!(pool.records, data.pool.records);
    for (a, b) in pool
        .embeddings
        .as_slice()
        .iter()
        .zip(data.pool.embeddings.as_slice())
    {
        assert_eq!(*a, f64::from(*b as f32));
    }
}

#[test]
fn header_declares_shape_and_dtype() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate(&common::small_spec()).unwrap();
    DataDir::new(dir.path()).write(DataDir::POOL, &data.pool).unwrap();
    let bytes = fs::read(dir.path().join("pool.emb")).unwrap();
    assert_eq!(&bytes[..4], b"OPEB");
    assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
    assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 540);
    assert_eq!(u32::from_le_bytes(bytes[16..20].try_into().unwrap()), 16);
    assert_eq!(bytes[20], Dtype::F32 as u8);
    assert_eq!(bytes.len(), HEADER_LEN + 540 * 16 * 4);
}

#[test]
fn malformed_inputs_name_their_location() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate(&common::small_spec()).unwrap();
    let d = DataDir::new(dir.path());
    d.write(DataDir::POOL, &data.pool).unwrap();
    let emb = d.embedding_path(DataDir::POOL);
    let meta = d.metadata_path(DataDir::POOL);

    let text = fs::read_to_string(&meta).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines[3] = "{\"id\": \"broken\"";
    fs::write(&meta, lines.join("\n")).unwrap();
    match load_dataset(&emb, &meta) {
        Err(Error::Ingestion { location, .. }) => assert_eq!(location, "line 4"),
        other => panic!("{other:?}"),
    }

    fs::write(&meta, text.lines().take(10).collect::<Vec<_>>().join("\n")).unwrap();
    let err = load_dataset(&emb, &meta).unwrap_err().to_string();
    assert!(err.contains("N="), "{err}");

    let mut bytes = fs::read(&emb).unwrap();
    bytes[0] = b'X';
    let err = embedding_file::decode(&bytes, &emb).unwrap_err();
    assert!(matches!(err, Error::Ingestion { .. }), "{err}");
}

#[test]
fn unknown_labels_load_as_none() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate(&common::small_spec()).unwrap();
    let d = DataDir::new(dir.path());
    d.write(DataDir::POOL, &data.pool).unwrap();
    let meta = d.metadata_path(DataDir::POOL);
    let text = fs::read_to_string(&meta).unwrap();
    let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    let replaced = text.replacen(&format!("\"label\":{}", first["label"]), "\"label\":-1", 1);
    assert_ne!(replaced, text);
    fs::write(&meta, replaced).unwrap();
    let loaded = d.load(DataDir::POOL).unwrap();
    assert_eq!(loaded.records[0].oracle_label, None);
    assert_eq!(loaded.id_total(3), None);
}
