mod common;

use std::fs;
use std::sync::Arc;

use hybridq_core::checkpoint::{load_checkpoint, round_to_storage, save_checkpoint};
use hybridq_core::features::{dataset_to_files, files_to_dataset, FeatureFile};
use hybridq_core::index::{encode_database, CodeIndex, CodebookSnapshot, CODE_HEADER_LEN};
use hybridq_core::{init_parameters, EngineConfig, Error, View};

use common::{toy_config, toy_data};

#[test]
fn checkpoint_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    let mut params = init_parameters(&toy_config()).unwrap();
    round_to_storage(&mut params);
    save_checkpoint(&params, &path).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back, params);
    let bytes = fs::read(&path).unwrap();
    save_checkpoint(&back, &path).unwrap();
    assert_eq!(fs::read(&path).unwrap(), bytes);
}

#[test]
fn missing_files_name_the_path() {
    let err = load_checkpoint("/nonexistent/dir/model.ckpt").unwrap_err();
    assert!(matches!(err, Error::File { .. }));
    assert!(
        err.to_string().contains("/nonexistent/dir/model.ckpt"),
        "{err}"
    );
    let err = FeatureFile::load("/nonexistent/q.feat").unwrap_err();
    assert!(err.to_string().contains("/nonexistent/q.feat"), "{err}");
}

#[test]
fn feature_files_round_trip_a_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy_config();
    let data = toy_data(&cfg, 5, 2);
    let (q, i) = dataset_to_files(&data).unwrap();
    q.save(dir.path().join("q.feat")).unwrap();
    i.save(dir.path().join("i.feat")).unwrap();
    let q2 = FeatureFile::load_view(dir.path().join("q.feat"), View::Query).unwrap();
    let i2 = FeatureFile::load_view(dir.path().join("i.feat"), View::Item).unwrap();
    assert!(FeatureFile::load_view(dir.path().join("q.feat"), View::Item).is_err());
    let back = files_to_dataset(q2, i2).unwrap();
    assert_eq!(back.len(), 5);
    // values pass through f32, so a second round trip is exact
    let (q3, _) = dataset_to_files(&back).unwrap();
    q3.save(dir.path().join("q3.feat")).unwrap();
    assert_eq!(
        fs::read(dir.path().join("q.feat")).unwrap(),
        fs::read(dir.path().join("q3.feat")).unwrap()
    );
}

#[test]
fn code_file_is_header_plus_packed_codes() {
    let cfg = toy_config();
    let params = init_parameters(&cfg).unwrap();
    let data = toy_data(&cfg, 7, 2);
    let index = encode_database(&params, data.items()).unwrap();
    let mut buf = Vec::new();
    index.write_to(&mut buf).unwrap();
    // 3 levels * 2 sub-spaces * 2 bits = 12 bits -> 2 bytes per item
    assert_eq!(index.bytes_per_item(), 2);
    assert_eq!(buf.len(), CODE_HEADER_LEN + 7 * 2);
    assert_eq!(&buf[..8], b"HYBQCODE");
}

#[test]
fn code_file_from_other_codebooks_is_rejected() {
    let cfg = toy_config();
    let params = init_parameters(&cfg).unwrap();
    let data = toy_data(&cfg, 3, 2);
    let mut buf = Vec::new();
    encode_database(&params, data.items())
        .unwrap()
        .write_to(&mut buf)
        .unwrap();
    let other = init_parameters(&EngineConfig {
        seed: 77,
        ..cfg.clone()
    })
    .unwrap();
    let err = CodeIndex::read_from(
        buf.as_slice(),
        Arc::new(CodebookSnapshot::from_params(&other)),
    )
    .unwrap_err();
    assert!(matches!(err, Error::StaleCodebooks { .. }), "{err}");
    let wider = init_parameters(&EngineConfig {
        num_codewords: 8,
        ..cfg
    })
    .unwrap();
    assert!(CodeIndex::read_from(
        buf.as_slice(),
        Arc::new(CodebookSnapshot::from_params(&wider))
    )
    .is_err());
}
