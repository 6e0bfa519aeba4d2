use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn random_batch(b: usize, seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..b * 2 * 3000).map(|_| rng.gen_range(-50.0..50.0)).collect();
    Tensor::new(vec![b, 2, 3000], data).unwrap()
}

fn small_ae() -> AutoencoderConfig {
    AutoencoderConfig {
        d_model: 16,
        n_heads: 4,
        ff_dim: 32,
        n_encoder_layers: 1,
        n_decoder_layers: 1,
        ..Default::default()
    }
}

fn small_reid(n: usize) -> ClassifierConfig {
    ClassifierConfig {
        d_model: 16,
        n_heads: 4,
        ff_dim: 32,
        ..ClassifierConfig::reid_transformer(n)
    }
}

#[test]
fn tokenize_shapes_and_inverse() {
    let x = random_batch(2, 1);
    let t = tokenize(&x, 100).unwrap();
    assert_eq!(t.shape(), &[2, 30, 200]);
    assert_eq!(&t.data()[..100], &x.data()[..100]);
    assert_eq!(&t.data()[100..200], &x.data()[3000..3100]);
    assert_eq!(detokenize(&t, 100, 2).unwrap(), x);
    let t = tokenize(&x, 300).unwrap();
    assert_eq!(t.shape(), &[2, 10, 600]);
    assert_eq!(detokenize(&t, 300, 2).unwrap(), x);
    let z = tokenize(&Tensor::<f32>::zeros(&[1, 2, 3000]), 100).unwrap();
    assert_eq!(z.shape(), &[1, 30, 200]);
    assert!(z.data().iter().all(|v| *v == 0.0));
    assert!(tokenize(&x, 7).is_err());
}

#[test]
fn parameter_counts_match_closed_form() {
    let specs = [
        ModelSpec::Autoencoder(AutoencoderConfig::default()),
        ModelSpec::Autoencoder(small_ae()),
        ModelSpec::Classifier(ClassifierConfig::utility_cnn()),
        ModelSpec::Classifier(ClassifierConfig::reid_transformer(8)),
        ModelSpec::Classifier(small_reid(3)),
    ];
    for s in specs {
        let p = s.init::<f32>(0).unwrap();
        assert_eq!(p.total_parameter_count(), s.parameter_count(), "{}", s.kind_name());
    }
}

#[test]
fn config_validation() {
    let bad = AutoencoderConfig {
        d_model: 60,
        ..Default::default()
    };
    assert!(matches!(bad.validate(), Err(Error::Config { field, .. }) if field == "d_model"));
    let bad = AutoencoderConfig {
        patch_len: 7,
        ..Default::default()
    };
    assert!(bad.validate().is_err());
    assert!(ClassifierConfig::reid_transformer(1).validate().is_err());
}

#[test]
fn autoencoder_shape_and_finiteness() {
    let cfg = small_ae();
    let p = ModelSpec::Autoencoder(cfg.clone()).init::<f32>(3).unwrap();
    let x = random_batch(3, 2);
    let y = ae_forward(&p, &cfg, &x, None).unwrap();
    assert_eq!(y.shape(), &[3, 2, 3000]);
    assert!(y.is_finite());
}

#[test]
fn autoencoder_has_no_cross_example_mixing() {
    let cfg = small_ae();
    let p = ModelSpec::Autoencoder(cfg.clone()).init::<f32>(3).unwrap();
    let x = random_batch(3, 4);
    let y = ae_forward(&p, &cfg, &x, None).unwrap();
    let perm = [2usize, 0, 1];
    let px: Vec<f32> = perm.iter().flat_map(|&i| x.row(i).to_vec()).collect();
    let py = ae_forward(&p, &cfg, &Tensor::new(vec![3, 2, 3000], px).unwrap(), None).unwrap();
    for (k, &i) in perm.iter().enumerate() {
        for (a, b) in py.row(k).iter().zip(y.row(i)) {
            assert!((a - b).abs() <= 1e-4 * b.abs().max(1.0));
        }
    }
}

#[test]
fn reid_single_matches_batched_row() {
    let cfg = small_reid(4);
    let p = ModelSpec::Classifier(cfg.clone()).init::<f32>(5).unwrap();
    let x = random_batch(8, 6);
    let all = reid_forward(&p, &cfg, &x, None).unwrap();
    assert_eq!(all.shape(), &[8, 4]);
    for i in [0, 5] {
        let one = reid_forward(&p, &cfg, &Tensor::new(vec![1, 2, 3000], x.row(i).to_vec()).unwrap(), None).unwrap();
        for (a, b) in one.data().iter().zip(all.row(i)) {
            assert!((a - b).abs() <= 1e-5, "{a} vs {b}");
        }
    }
}

#[test]
fn zeroed_head_gives_uniform_logits() {
    let cfg = ClassifierConfig::utility_cnn();
    let mut p = ModelSpec::Classifier(cfg.clone()).init::<f32>(1).unwrap();
    p.get_mut("out.w").unwrap().data_mut().fill(0.0);
    let logits = utility_forward(&p, &cfg, &Tensor::zeros(&[2, 2, 3000]), None).unwrap();
    assert_eq!(logits.shape(), &[2, 5]);
    assert!(logits.data().iter().all(|v| *v == logits.data()[0]));
}

#[test]
fn softmax_rows_sum_to_one() {
    let cfg = ClassifierConfig::utility_cnn();
    let p = ModelSpec::Classifier(cfg.clone()).init::<f32>(2).unwrap();
    let logits = utility_forward(&p, &cfg, &random_batch(4, 9), None).unwrap();
    let s = softmax(&logits);
    for i in 0..4 {
        assert!((s.row(i).iter().sum::<f32>() - 1.0).abs() <= 1e-6);
    }
}

#[test]
fn forward_is_deterministic() {
    let cfg = small_reid(3);
    let a = ModelSpec::Classifier(cfg.clone()).init::<f32>(11).unwrap();
    let b = ModelSpec::Classifier(cfg.clone()).init::<f32>(11).unwrap();
    assert_eq!(a.checksum(), b.checksum());
    let x = random_batch(2, 3);
    assert_eq!(reid_forward(&a, &cfg, &x, None).unwrap(), reid_forward(&b, &cfg, &x, None).unwrap());
}

#[test]
fn wrong_kind_config_is_rejected() {
    let cfg = small_reid(3);
    let p = ModelSpec::Classifier(cfg.clone()).init::<f32>(0).unwrap();
    assert!(utility_forward(&p, &cfg, &random_batch(1, 0), None).is_err());
}

#[test]
fn checkpoint_round_trip_and_mismatches() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ae.ckpt");
    let spec = ModelSpec::Autoencoder(small_ae());
    let p = spec.init::<f32>(4).unwrap();
    save_params(&p, &spec, &path).unwrap();
    let q: ParameterStore<f32> = load_params(&path, &spec).unwrap();
    assert_eq!(p, q);
    assert_eq!(read_checkpoint::<f32>(&path).unwrap().spec, spec);

    let wider = ModelSpec::Autoencoder(AutoencoderConfig {
        d_model: 32,
        ..small_ae()
    });
    let err = load_params::<f32>(&path, &wider).unwrap_err().to_string();
    assert!(err.contains("'embed.w'"), "{err}");

    let uspec = ModelSpec::Classifier(ClassifierConfig::utility_cnn());
    let upath = dir.path().join("u.ckpt");
    save_params(&uspec.init::<f32>(0).unwrap(), &uspec, &upath).unwrap();
    let err = load_params::<f32>(&upath, &ModelSpec::Classifier(small_reid(3))).unwrap_err();
    assert!(matches!(err, Error::IncompatibleCheckpoint(_)));

    let d = spec.init::<f64>(4).unwrap();
    let dpath = dir.path().join("d.ckpt");
    save_params(&d, &spec, &dpath).unwrap();
    assert_eq!(load_params::<f64>(&dpath, &spec).unwrap(), d);
}

#[test]
fn dropout_only_in_training() {
    let cfg = AutoencoderConfig {
        dropout: 0.3,
        ..small_ae()
    };
    let p = ModelSpec::Autoencoder(cfg.clone()).init::<f32>(3).unwrap();
    let x = random_batch(1, 2);
    let a = ae_forward(&p, &cfg, &x, None).unwrap();
    let b = ae_forward(&p, &cfg, &x, None).unwrap();
    assert_eq!(a, b);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let c = ae_forward(&p, &cfg, &x, Some(&mut rng)).unwrap();
    assert_ne!(a, c);
}
