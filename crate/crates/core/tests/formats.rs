use std::fs;
use std::path::Path;

use i2mv_core::data::{
    labels_path, load_checkpoint, load_embeddings, load_features, load_views, save_checkpoint, save_embeddings,
    save_features, save_views,
};
use i2mv_core::model::{Model, ModelConfig};
use i2mv_core::synth::{generate, SynthSpec};
use i2mv_core::Error;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_spec() -> SynthSpec {
    SynthSpec {
        images_per_class: 5,
        seen_test_images: 1,
        patches: 4,
        d_backbone: 8,
        embed_dim: 6,
        ..SynthSpec::default()
    }
}

#[test]
fn checkpoint_round_trip_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let model = Model::new(ModelConfig::tiny()).unwrap();
    let a = dir.path().join("a.ckpt");
    let b = dir.path().join("b.ckpt");
    save_checkpoint(&a, model.config(), &model.named_params()).unwrap();
    let ck = load_checkpoint(&a).unwrap();
    assert_eq!(&ck.config, model.config());
    for ((na, ta), (nb, tb)) in ck.tensors.iter().zip(model.named_params()) {
        assert_eq!(na, &nb);
        let bits = |t: &i2mv_tensor::Tensor| t.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(ta), bits(&tb));
    }
    save_checkpoint(&b, &ck.config, &ck.tensors).unwrap();
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let restored = Model::from_checkpoint(&ck).unwrap();
    assert_eq!(restored.named_params(), model.named_params());
}

#[test]
fn checkpoint_for_another_width_does_not_load() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let other = Model::new(ModelConfig { r: 4, ..ModelConfig::tiny() }).unwrap();
    save_checkpoint(&path, other.config(), &other.named_params()).unwrap();
    let ck = load_checkpoint(&path).unwrap();
    let mut model = Model::new(ModelConfig::tiny()).unwrap();
    assert!(matches!(model.load_params(&ck.tensors), Err(Error::Shape(_))));
}

#[test]
fn feature_round_trip_is_byte_identical() {
    let data = generate(1, &small_spec()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.feat");
    let b = dir.path().join("b.feat");
    save_features(&a, &data.train).unwrap();
    let loaded = load_features(&a).unwrap();
    assert_eq!(loaded, data.train);
    save_features(&b, &loaded).unwrap();
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_eq!(
        fs::read(labels_path(&a)).unwrap(),
        fs::read(labels_path(&b)).unwrap()
    );
}

#[test]
fn text_formats_round_trip() {
    let data = generate(2, &small_spec()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let e = dir.path().join("e.txt");
    save_embeddings(&e, &data.embeddings).unwrap();
    let table = load_embeddings(&e).unwrap();
    assert_eq!(table, data.embeddings);
    let v = dir.path().join("v.json");
    save_views(&v, &data.corpus).unwrap();
    assert_eq!(load_views(&v, false).unwrap(), data.corpus);
}

fn fuzz_one(dir: &Path, rng: &mut ChaCha8Rng, valid: &[(&str, Vec<u8>)]) {
    for (name, bytes) in valid {
        let mut b = if rng.random_bool(0.5) {
            let n = rng.random_range(0..64);
            let mut junk = vec![0u8; n];
            rng.fill_bytes(&mut junk);
            junk
        } else {
            // Mutate a valid file: flip bytes and maybe truncate.
            let mut b = bytes.clone();
            for _ in 0..rng.random_range(1..6) {
                if !b.is_empty() {
                    let i = rng.random_range(0..b.len());
                    b[i] = rng.random();
                }
            }
            if rng.random_bool(0.3) {
                b.truncate(rng.random_range(0..=b.len()));
            }
            b
        };
        if rng.random_bool(0.1) {
            b.clear();
        }
        let path = dir.join(name);
        fs::write(&path, &b).unwrap();
        // Any outcome but a panic is acceptable; errors must be data errors.
        let outcome = match *name {
            "x.feat" => load_features(&path).err(),
            "x.ckpt" => load_checkpoint(&path).err(),
            "x.txt" => load_embeddings(&path).err(),
            _ => load_views(&path, false).err(),
        };
        if let Some(e) = outcome {
            assert!(e.is_data_error(), "{name}: {e}");
        }
    }
}

#[test]
fn loaders_never_panic_on_random_bytes() {
    let data = generate(3, &small_spec()).unwrap();
    let model = Model::new(ModelConfig::tiny()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    save_features(p.join("x.feat"), &data.train[..3]).unwrap();
    save_checkpoint(p.join("x.ckpt"), model.config(), &model.named_params()).unwrap();
    save_embeddings(p.join("x.txt"), &data.embeddings).unwrap();
    save_views(p.join("x.json"), &data.corpus).unwrap();
    let valid: Vec<(&str, Vec<u8>)> = ["x.feat", "x.ckpt", "x.txt", "x.json"]
        .into_iter()
        .map(|n| (n, fs::read(p.join(n)).unwrap()))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..1000 {
        fuzz_one(p, &mut rng, &valid);
    }
}
