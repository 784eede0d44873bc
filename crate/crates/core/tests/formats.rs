use std::path::Path;

use structgraph_core::data::{
    generate_synthetic_dataset, load_checkpoint, load_feature_map, load_manifest, load_split,
    read_pgm, save_checkpoint, save_feature_map, write_manifest, write_pgm, SampleRecord, Split,
    SynthConfig,
};
use structgraph_core::graph::build_patch_graph;
use structgraph_core::numeric::{Rng, Tensor};
use structgraph_core::sgnn::{Model, ModelConfig, PoolingMode};
use structgraph_core::training::{fit_manifest, TrainConfig};
use structgraph_core::Error;

fn synth(n: usize, seed: u64) -> SynthConfig {
    SynthConfig {
        n_per_class: n,
        image_size: 32,
        position_dependent: true,
        lesion_radius_px: (3.0, 6.0),
        seed,
        ..SynthConfig::default()
    }
}

fn dir_listing(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for sub in ["", "images", "masks"] {
        let d = dir.join(sub);
        let mut names: Vec<_> = std::fs::read_dir(&d)
            .unwrap()
            .map(|e| e.unwrap().path())
            .filter(|p| p.is_file())
            .collect();
        names.sort();
        for p in names {
            out.push((
                p.strip_prefix(dir).unwrap().display().to_string(),
                std::fs::read(&p).unwrap(),
            ));
        }
    }
    out
}

#[test]
fn generated_dataset_loads_and_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let manifest = generate_synthetic_dataset(&synth(10, 9), a.path()).unwrap();
    generate_synthetic_dataset(&synth(10, 9), b.path()).unwrap();
    assert_eq!(dir_listing(a.path()), dir_listing(b.path()));

    let records = load_manifest(&manifest).unwrap();
    assert_eq!(records.len(), 20);
    let mut total = 0;
    for split in [Split::Train, Split::Val, Split::Test] {
        let samples = load_split(&records, split, 32).unwrap();
        total += samples.len();
        for s in &samples {
            let mask = s.mask.as_ref().unwrap();
            assert_eq!(mask.dims(), s.image.dims());
            if s.label == 0 {
                assert!(mask.data().iter().all(|&v| v == 0.0));
            }
        }
    }
    assert_eq!(total, 20);
}

#[test]
fn samples_are_resized_to_the_model_size() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = generate_synthetic_dataset(&synth(2, 1), dir.path()).unwrap();
    let records = load_manifest(manifest).unwrap();
    for s in load_split(&records, Split::Train, 16).unwrap() {
        assert_eq!(s.image.dims(), &[1, 16, 16]);
        assert!(s.mask.unwrap().data().iter().all(|&v| v == 0.0 || v == 1.0));
    }
}

#[test]
fn checkpoint_file_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ModelConfig {
        image_size: 32,
        hidden: 12,
        pooling: PoolingMode::Importance,
        ..ModelConfig::default()
    };
    let model = Model::new(cfg, 77).unwrap();
    let path = dir.path().join("m.sgnn");
    save_checkpoint(&model, &path).unwrap();
    let back = load_checkpoint(&path).unwrap();
    let mut rng = Rng::new(3);
    let img = Tensor::from_vec(&[1, 32, 32], (0..1024).map(|_| rng.next_f64()).collect()).unwrap();
    let (a, b) = (model.forward(&img).unwrap(), back.forward(&img).unwrap());
    assert_eq!(a.graph_prob.to_bits(), b.graph_prob.to_bits());
    assert_eq!(a.node_embeddings, b.node_embeddings);
    assert_eq!(a.importance, b.importance);
}

#[test]
fn feature_map_file_reproduces_the_forward_pass() {
    let dir = tempfile::tempdir().unwrap();
    let model = Model::new(ModelConfig::default(), 2).unwrap();
    let mut rng = Rng::new(8);
    let img = Tensor::from_vec(&[1, 64, 64], (0..4096).map(|_| rng.next_f64()).collect()).unwrap();
    let fm = model.feature_map(&img).unwrap();
    let path = dir.path().join("f.fmap");
    save_feature_map(&fm, &path).unwrap();
    assert_eq!(std::fs::metadata(&path).unwrap().len(), 24 + 8 * 32 * 8 * 8);
    let loaded = load_feature_map(&path).unwrap();
    let from_file = model
        .forward_graph(&build_patch_graph(&loaded).unwrap())
        .unwrap();
    let direct = model.forward(&img).unwrap();
    assert_eq!(from_file.graph_prob.to_bits(), direct.graph_prob.to_bits());
    assert_eq!(from_file.node_probs, direct.node_probs);
}

#[test]
fn pgm_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.pgm");
    let img = Tensor::from_vec(&[1, 3, 5], (0..15).map(|i| i as f64 / 14.0).collect()).unwrap();
    write_pgm(&img, &path).unwrap();
    let back = read_pgm(&path).unwrap();
    for (a, b) in img.data().iter().zip(back.data()) {
        assert!((a - b).abs() <= 1.0 / 510.0);
    }
}

#[test]
fn missing_image_error_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("m.jsonl");
    let rec = SampleRecord {
        image: "nowhere/absent.pgm".into(),
        mask: None,
        label: 1,
        split: Split::Train,
    };
    write_manifest(&[rec], &manifest).unwrap();
    let cfg = TrainConfig {
        model: ModelConfig {
            image_size: 16,
            ..ModelConfig::default()
        },
        epochs: 1,
        ..TrainConfig::default()
    };
    match fit_manifest(&manifest, &cfg).unwrap_err() {
        Error::Io { path, .. } => assert!(path.ends_with("nowhere/absent.pgm")),
        e => panic!("unexpected {e}"),
    }
}

#[test]
fn mismatched_mask_dims_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    write_pgm(&Tensor::zeros(&[1, 8, 8]), dir.path().join("i.pgm")).unwrap();
    write_pgm(&Tensor::zeros(&[1, 8, 4]), dir.path().join("m.pgm")).unwrap();
    let rec = SampleRecord {
        image: dir.path().join("i.pgm"),
        mask: Some(dir.path().join("m.pgm")),
        label: 0,
        split: Split::Test,
    };
    let err = load_split(&[rec], Split::Test, 8).unwrap_err();
    assert!(err.is_data_error());
    assert!(err.to_string().contains("mask dims"), "{err}");
}
