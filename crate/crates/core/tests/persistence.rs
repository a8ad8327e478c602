use std::fs;

use dcmatch::data::bundle::{FEATURES_FILE, MANIFEST_FILE};
use dcmatch::data::{load_bundle, save_bundle, synth_generate, FeatureBundle, SyntheticConfig};
use dcmatch::learn::{load_checkpoint, save_checkpoint, train, ModelDims, ParamStore, TrainConfig};
use dcmatch::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn bundle(cfg: SyntheticConfig) -> FeatureBundle {
    synth_generate(&SyntheticConfig {
        classes: 6,
        novel_classes: 2,
        videos_per_class: 4,
        ..cfg
    })
    .unwrap()
}

fn params() -> ParamStore {
    let dims = ModelDims {
        frames: 8,
        tokens: 10,
        channels: 32,
        proto_dim: 16,
        classes: 6,
    };
    ParamStore::init(dims, &mut ChaCha8Rng::seed_from_u64(4)).unwrap()
}

#[test]
fn bundles_round_trip_losslessly() {
    for cfg in [SyntheticConfig::scenario_a(1), SyntheticConfig::scenario_b(2)] {
        let original = bundle(cfg);
        assert!(original.teacher().is_some() && original.text().is_some());
        let dir = tempfile::tempdir().unwrap();
        save_bundle(&original, dir.path()).unwrap();
        let loaded = load_bundle(dir.path()).unwrap();
        assert_eq!(original, loaded);
        // a second save of the loaded bundle writes identical bytes
        let again = tempfile::tempdir().unwrap();
        save_bundle(&loaded, again.path()).unwrap();
        for entry in fs::read_dir(dir.path()).unwrap() {
            let name = entry.unwrap().file_name();
            assert_eq!(
                fs::read(dir.path().join(&name)).unwrap(),
                fs::read(again.path().join(&name)).unwrap(),
                "{name:?}"
            );
        }
    }
}

#[test]
fn checkpoints_round_trip_losslessly() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    let p = params();
    save_checkpoint(&p, &path).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    assert_eq!(p.dims(), loaded.dims());
    for id in dcmatch::learn::ParamId::ALL {
        let (a, b) = (p.value(id), loaded.value(id));
        assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()), "{}", id.name());
    }

    let b = bundle(SyntheticConfig::scenario_a(3));
    let trained = train(&TrainConfig { way: 2, episodes: 20, eval_interval: 10, eval_episodes: 20, ..Default::default() }, &b)
        .unwrap()
        .params;
    save_checkpoint(&trained, &path).unwrap();
    assert_eq!(load_checkpoint(&path).unwrap().value(dcmatch::learn::ParamId::Gate), trained.gate());
}

/// Writes a scenario B bundle and returns its directory plus the pristine
/// manifest and payload bytes.
fn saved_bundle() -> (tempfile::TempDir, String, Vec<u8>) {
    let dir = tempfile::tempdir().unwrap();
    save_bundle(&bundle(SyntheticConfig::scenario_b(5)), dir.path()).unwrap();
    let manifest = fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap();
    let payload = fs::read(dir.path().join(FEATURES_FILE)).unwrap();
    (dir, manifest, payload)
}

#[test]
fn corrupt_bundle_manifest_is_a_manifest_error() {
    let (dir, manifest, _) = saved_bundle();
    fs::write(dir.path().join(MANIFEST_FILE), &manifest[..manifest.len() / 2]).unwrap();
    let err = load_bundle(dir.path()).unwrap_err();
    assert!(matches!(err, Error::Manifest(_)), "{err}");
}

#[test]
fn truncated_bundle_payload_is_a_payload_error() {
    let (dir, _, payload) = saved_bundle();
    fs::write(dir.path().join(FEATURES_FILE), &payload[..payload.len() - 5]).unwrap();
    let err = load_bundle(dir.path()).unwrap_err();
    assert!(matches!(err, Error::Payload(_)), "{err}");
}

#[test]
fn bundle_record_count_mismatch_is_a_shape_error() {
    let (dir, _, payload) = saved_bundle();
    // one whole video record more than the manifest lists
    let record = payload.len() / 24;
    let mut longer = payload.clone();
    longer.extend_from_slice(&payload[..record]);
    fs::write(dir.path().join(FEATURES_FILE), longer).unwrap();
    let err = load_bundle(dir.path()).unwrap_err();
    assert!(matches!(err, Error::Shape(_)), "{err}");
}

#[test]
fn checkpoint_corruptions_map_to_three_error_classes() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    save_checkpoint(&params(), &path).unwrap();
    let good = fs::read(&path).unwrap();

    let mut bad_magic = good.clone();
    bad_magic[0] ^= 0xff;
    fs::write(&path, bad_magic).unwrap();
    assert!(matches!(load_checkpoint(&path), Err(Error::Manifest(_))));

    fs::write(&path, &good[..good.len() - 8]).unwrap();
    assert!(matches!(load_checkpoint(&path), Err(Error::Payload(_))));

    let mut longer = good.clone();
    longer.extend_from_slice(&[0u8; 16]);
    fs::write(&path, longer).unwrap();
    assert!(matches!(load_checkpoint(&path), Err(Error::Shape(_))));
}
