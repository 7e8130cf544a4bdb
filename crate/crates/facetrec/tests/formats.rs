use std::fs;
use std::path::Path;

use facetrec::checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
use facetrec::data::{
    decode_dataset, encode_dataset, id_map_tsv, load_dataset, load_graph, load_interactions, parse_id_map,
    save_dataset, Dataset,
};
use facetrec::FormatError;
use facetrec_core::graph::split_holdout;
use facetrec_core::synthetic::PlantedConfig;
use facetrec_core::trainer::{train, ModelCheckpoint, TrainConfig};
use facetrec_core::NodeKind;

mod common;

fn dataset(dir: &Path) -> Dataset {
    common::write_planted(dir, &PlantedConfig::default(), "");
    let (graph, ids) = load_graph(
        &dir.join("interactions.tsv"),
        &dir.join("item_entity.tsv"),
        Some(&dir.join("entity_entity.tsv")),
    )
    .unwrap();
    let (train, split) = split_holdout(&graph, 2, 10, 10, 0.8).unwrap();
    Dataset { ids, train, split }
}

fn checkpoint(data: &Dataset, tied: bool) -> ModelCheckpoint {
    let cfg = TrainConfig {
        entity_factors: 3,
        item_factors: 2,
        dim: 4,
        epochs: 2,
        batch_size: 32,
        decoder_tied: tied,
        softmax: facetrec_core::objective::SoftmaxMode::Sampled(5),
        ..Default::default()
    };
    let mut ck = train(&data.train, &data.split, &cfg).unwrap().checkpoint;
    ck.graph_digest = data.digest();
    ck
}

#[test]
fn checkpoint_round_trip_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path());
    for tied in [false, true] {
        let ck = checkpoint(&data, tied);
        let path = dir.path().join("a.bin");
        save_checkpoint(&ck, &path).unwrap();
        let loaded = load_checkpoint(&path, Some(&data.digest())).unwrap();
        assert_eq!(loaded, ck);
        let again = dir.path().join("b.bin");
        save_checkpoint(&loaded, &again).unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(&again).unwrap());
    }
}

#[test]
fn checkpoint_errors_are_distinct() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path());
    let bytes = encode_checkpoint(&checkpoint(&data, false));

    let other = [0xAB; 32];
    assert!(matches!(decode_checkpoint(&bytes, Some(&other)), Err(FormatError::DigestMismatch)));

    let short = &bytes[..bytes.len() - 1];
    assert!(matches!(decode_checkpoint(short, None), Err(FormatError::Truncated)));
    let half = &bytes[..bytes.len() / 2];
    assert!(matches!(decode_checkpoint(half, None), Err(FormatError::Truncated)));

    let mut flipped = bytes.clone();
    *flipped.last_mut().unwrap() ^= 0xFF;
    assert!(matches!(decode_checkpoint(&flipped, None), Err(FormatError::Checksum)));
    let mut inner = bytes.clone();
    let mid = inner.len() - 100;
    inner[mid] ^= 0x01;
    assert!(matches!(decode_checkpoint(&inner, None), Err(FormatError::Checksum)));

    let mut version = bytes.clone();
    version[8] = 99;
    assert!(matches!(
        decode_checkpoint(&version, None),
        Err(FormatError::Version { found: 99, supported: 1 })
    ));
    assert!(matches!(decode_checkpoint(b"not a checkpoint", None), Err(FormatError::BadMagic { .. })));

    let codes: std::collections::BTreeSet<u8> = [
        FormatError::DigestMismatch.code(),
        FormatError::Truncated.code(),
        FormatError::Checksum.code(),
        FormatError::Version { found: 2, supported: 1 }.code(),
    ]
    .into();
    assert_eq!(codes.len(), 4);
}

#[test]
fn failed_save_leaves_the_old_file() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path());
    let ck = checkpoint(&data, false);
    let path = dir.path().join("ck.bin");
    save_checkpoint(&ck, &path).unwrap();
    let before = fs::read(&path).unwrap();
    // a directory squatting on the temporary name makes the write fail
    fs::create_dir(dir.path().join("ck.bin.partial")).unwrap();
    assert!(save_checkpoint(&ck, &path).is_err());
    assert_eq!(fs::read(&path).unwrap(), before);
}

#[test]
fn dataset_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path());
    save_dataset(&data, dir.path()).unwrap();
    let back = load_dataset(dir.path()).unwrap();
    assert_eq!(back, data);
    assert_eq!(encode_dataset(&back), encode_dataset(&data));

    // a different id map is rejected
    let mut tsv = id_map_tsv(&data.ids);
    tsv = tsv.replacen("user\tu0\t", "user\tuX\t", 1);
    let ids = parse_id_map(&tsv).unwrap();
    assert!(matches!(
        decode_dataset(&encode_dataset(&data), ids),
        Err(FormatError::DigestMismatch)
    ));
}

#[test]
fn id_map_tsv_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path());
    let tsv = id_map_tsv(&data.ids);
    assert!(tsv.starts_with("user\tu"));
    assert_eq!(parse_id_map(&tsv).unwrap(), data.ids);
    assert!(parse_id_map("user\tu0\t1\n").is_err());
    assert!(parse_id_map("robot\tu0\t0\n").is_err());
    assert_eq!(data.ids.count(NodeKind::Entity), 12);
}

#[test]
fn loaders_report_paths_and_lines() {
    let dir = tempfile::tempdir().unwrap();
    let missing = load_interactions(&dir.path().join("nope.tsv")).unwrap_err();
    assert!(missing.to_string().contains("nope.tsv"));
    let bad = dir.path().join("bad.tsv");
    fs::write(&bad, "u1\tt1\nu2 t2\n").unwrap();
    let err = load_interactions(&bad).unwrap_err();
    assert!(matches!(err, FormatError::Core(facetrec_core::Error::Parse { line: 2, .. })));
}
