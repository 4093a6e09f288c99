use epiwatch_core::checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, FORMAT_VERSION,
};
use epiwatch_core::dataset::{build_tasks, SampleCache, WindowSample};
use epiwatch_core::fixture::{tiny_config, tiny_dataset};
use epiwatch_core::forecast::train_task;
use epiwatch_core::model::Forecaster;
use epiwatch_core::Error;

fn trained() -> (Forecaster, WindowSample) {
    let config = tiny_config();
    let dataset = tiny_dataset(2, 12, &config).unwrap();
    let tasks = build_tasks(&dataset, &[dataset.last_date()], &[1], &config).unwrap();
    let (model, _) = train_task(&dataset, &mut SampleCache::new(), &tasks[0], &config).unwrap();
    let sample = WindowSample::build(&dataset, dataset.len() - 1, &config).unwrap();
    (model, sample)
}

#[test]
fn round_trip_is_lossless_and_stable() {
    let (model, sample) = trained();
    assert!(model.head.norm.is_some());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    save_checkpoint(std::fs::File::create(&path).unwrap(), &model).unwrap();
    let loaded = load_checkpoint(std::fs::File::open(&path).unwrap()).unwrap();
    assert_eq!(encode_checkpoint(&loaded).unwrap(), std::fs::read(&path).unwrap());
    assert_eq!(loaded.config, model.config);
    assert_eq!(loaded.scales, model.scales);
    assert_eq!(loaded.head.norm, model.head.norm);
    let bits = |m: &Forecaster| {
        m.predict_raw(&sample)
            .unwrap()
            .iter()
            .map(|v| v.to_bits())
            .collect::<Vec<_>>()
    };
    assert_eq!(bits(&loaded), bits(&model));
}

fn find(bytes: &[u8], needle: &[u8]) -> usize {
    bytes.windows(needle.len()).position(|w| w == needle).unwrap()
}

#[test]
fn tampered_shape_is_an_integrity_error() {
    let (model, _) = trained();
    let bytes = encode_checkpoint(&model).unwrap();
    let name = b"head.w2";
    // name is followed by the u32 rank and the first u64 dimension
    let dim = find(&bytes, name) + name.len() + 4;
    for delta in [1u64, 1 << 40] {
        let mut bad = bytes.clone();
        let d = u64::from_le_bytes(bad[dim..dim + 8].try_into().unwrap()) + delta;
        bad[dim..dim + 8].copy_from_slice(&d.to_le_bytes());
        assert!(
            matches!(decode_checkpoint(&bad), Err(Error::Integrity(_))),
            "delta {delta}"
        );
    }
}

#[test]
fn truncation_and_trailing_bytes_are_integrity_errors() {
    let (model, _) = trained();
    let bytes = encode_checkpoint(&model).unwrap();
    assert!(matches!(
        decode_checkpoint(&bytes[..bytes.len() - 3]),
        Err(Error::Integrity(_))
    ));
    let mut longer = bytes.clone();
    longer.push(0);
    assert!(matches!(decode_checkpoint(&longer), Err(Error::Integrity(_))));
}

#[test]
fn other_versions_are_compatibility_errors() {
    let (model, _) = trained();
    let mut bytes = encode_checkpoint(&model).unwrap();
    bytes[8..12].copy_from_slice(&(FORMAT_VERSION + 1).to_le_bytes());
    assert!(matches!(decode_checkpoint(&bytes), Err(Error::Compatibility(_))));
    assert!(matches!(
        decode_checkpoint(b"not a checkpoint"),
        Err(Error::Compatibility(_))
    ));
}
