use super::*;
use crate::imagery::{generate_synthetic_scene, RasterImage, SceneSpec};
use crate::netbuilder::{build_network, save_checkpoint};

fn disks(n: usize, side: usize, seed: u64) -> Vec<AnnotatedSample> {
    (0..n)
        .map(|i| {
            let r = side as f64 * (0.2 + 0.02 * (i % 5) as f64);
            let scene = generate_synthetic_scene(&SceneSpec::plain_disk(side, r), seed + i as u64).unwrap();
            AnnotatedSample::new(scene.image, scene.mask, format!("disk{i}")).unwrap()
        })
        .collect()
}

fn small_net(seed: u64) -> NetworkHandle {
    build_network(NetworkConfig::new(2, 4, 16), seed).unwrap()
}

fn quick_config(epochs: usize) -> TrainConfig {
    TrainConfig {
        batch_size: 3,
        max_epochs: epochs,
        eval_every: 2,
        augmentation: None,
        ..TrainConfig::default()
    }
}

/// Logits read from the red channel: bright pixels are foreground.
struct RedOracle(usize);

impl Segmenter for RedOracle {
    fn input_side(&self) -> usize {
        self.0
    }
    fn logits(&self, batch: &Tensor) -> Result<Tensor> {
        let [n, _, h, w] = batch.shape();
        let mut out = Vec::new();
        for i in 0..n {
            out.extend(batch.sample(i)[..h * w].iter().map(|v| (v - 0.5) * 10.0));
        }
        Tensor::from_vec([n, 1, h, w], out)
    }
}

/// Sample whose red channel marks the first `hits` of ten mask pixels.
fn partial_sample(hits: usize) -> AnnotatedSample {
    let mask = BinaryMask::from_fn(8, 8, |x, y| (y == 2 && x < 8) || (y == 3 && x < 2)).unwrap();
    let idx = |x: usize, y: usize| if y == 2 { x } else { 8 + x };
    let image = RasterImage::from_fn(8, 8, |x, y| {
        let on = mask.get(x, y) && idx(x, y) < hits;
        [if on { 1.0 } else { 0.0 }, 0.3, 0.3]
    })
    .unwrap();
    AnnotatedSample::new(image, mask, format!("hits{hits}")).unwrap()
}

#[test]
fn epoch_count_contract() {
    let data = disks(4, 16, 0);
    let err = train(small_net(0), &data, &data, quick_config(0)).unwrap_err();
    assert!(matches!(err, Error::Config(_)));
    let out = train(small_net(0), &data, &data, quick_config(1)).unwrap();
    assert_eq!(out.records.len(), 1);
    assert_eq!(out.records[0].epoch, 1);
}

#[test]
fn records_follow_the_evaluation_cadence() {
    let data = disks(4, 16, 1);
    let out = train(small_net(1), &data, &data[..2], quick_config(5)).unwrap();
    let epochs: Vec<usize> = out.records.iter().map(|r| r.epoch).collect();
    assert_eq!(epochs, [2, 4, 5]);
    for r in &out.records {
        assert!(r.train_loss.is_finite() && r.val_loss.unwrap().is_finite());
        assert!((0.0..=1.0).contains(&r.train_iou) && (0.0..=1.0).contains(&r.val_iou.unwrap()));
    }
}

#[test]
fn oracle_and_partial_stubs_give_expected_means() {
    let exact: Vec<AnnotatedSample> = (0..3).map(|_| partial_sample(10)).collect();
    assert_eq!(evaluate(&RedOracle(8), &exact, None).unwrap().mean_iou, 1.0);

    let pair = [partial_sample(4), partial_sample(8)];
    let e = evaluate(&RedOracle(8), &pair, None).unwrap();
    assert!((e.ious[0] - 0.4).abs() < 1e-12 && (e.ious[1] - 0.8).abs() < 1e-12);
    assert!((e.mean_iou - 0.6).abs() < 1e-12);
}

#[test]
fn evaluation_ignores_dataset_order() {
    let mut data = disks(9, 16, 2);
    let net = small_net(2);
    let a = evaluate(&net, &data, None).unwrap();
    data.reverse();
    data.swap(0, 4);
    let b = evaluate(&net, &data, None).unwrap();
    assert_eq!(a.mean_iou, b.mean_iou);
    assert_eq!(a.mean_loss, b.mean_loss);
}

#[test]
fn augmented_evaluation_is_repeatable() {
    let data = disks(4, 16, 3);
    let net = small_net(3);
    let cfg = AugmentationConfig::default();
    assert_eq!(
        evaluate(&net, &data, Some(&cfg)).unwrap(),
        evaluate(&net, &data, Some(&cfg)).unwrap()
    );
}

#[test]
fn wrong_sample_size_is_rejected() {
    let data = disks(2, 32, 0);
    assert!(matches!(
        Trainer::new(small_net(0), &data, &[], quick_config(1)),
        Err(Error::Shape(_))
    ));
    assert!(matches!(Trainer::new(small_net(0), &[], &[], quick_config(1)), Err(Error::Empty(_))));
}

#[test]
fn small_steps_decrease_the_loss() {
    let data = disks(6, 16, 4);
    let refs: Vec<&AnnotatedSample> = data.iter().collect();
    let batch = stack_images(&refs).unwrap();
    let mut decreased = 0;
    for trial in 0..50 {
        let mut net = small_net(100 + trial);
        net.set_mode(Mode::Training);
        let (logits, tape) = net.forward_train(&batch).unwrap();
        let (before, _, grad) = score_batch(&logits, &refs, Objective::SoftDice, true).unwrap();
        net.zero_grad();
        net.backward(tape, grad.unwrap()).unwrap();
        Adam::new(1e-4).step(net.params_mut());
        let after_logits = net.forward(&batch).unwrap();
        let (after, _, _) = score_batch(&after_logits, &refs, Objective::SoftDice, false).unwrap();
        if after.iter().sum::<f64>() < before.iter().sum::<f64>() {
            decreased += 1;
        }
    }
    assert!(decreased >= 48, "{decreased}/50");
}

#[test]
fn best_checkpoint_reproduces_its_score() {
    let data = disks(8, 16, 5);
    let (tr, va) = data.split_at(6);
    let mut out = train(small_net(5), tr, va, TrainConfig { eval_every: 1, ..quick_config(6) }).unwrap();
    let best = out
        .records
        .iter()
        .map(|r| r.val_iou.unwrap())
        .fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(out.best_val_iou, Some(best));
    let first_best = out.records.iter().find(|r| r.val_iou == Some(best)).unwrap();
    assert_eq!(out.best_epoch, first_best.epoch);
    let again = evaluate(&out.best, va, None).unwrap().mean_iou;
    assert!((again - best).abs() < 1e-6);

    let dir = tempfile::tempdir().unwrap();
    let path = save_checkpoint(&mut out.best, dir.path(), "t", out.best_epoch, out.best_val_iou).unwrap();
    let (loaded, _) = load_checkpoint(&path, None).unwrap();
    assert!((evaluate(&loaded, va, None).unwrap().mean_iou - best).abs() < 1e-6);
}

#[test]
fn missing_validation_keeps_the_last_network() {
    let data = disks(4, 16, 6);
    let out = train(small_net(6), &data, &[], quick_config(3)).unwrap();
    assert_eq!(out.best_epoch, 3);
    assert!(out.records.iter().all(|r| r.val_iou.is_none()));
}

#[test]
fn runs_are_reproducible() {
    let data = disks(6, 16, 7);
    let mut cfg = quick_config(4);
    for aug in [None, Some(AugmentationConfig::default())] {
        cfg.augmentation = aug;
        let a = train(small_net(7), &data[..4], &data[4..], cfg.clone()).unwrap();
        let b = train(small_net(7), &data[..4], &data[4..], cfg.clone()).unwrap();
        assert_eq!(a.records, b.records);
    }
}

#[test]
fn divergence_names_epoch_and_batch() {
    let data = disks(4, 16, 8);
    // Batch normalisation absorbs merely large steps; one that overflows
    // single precision poisons the weights.
    let cfg = TrainConfig {
        learning_rate: 1e300,
        ..quick_config(3)
    };
    match train(small_net(8), &data, &[], cfg) {
        Err(Error::NonFinite { epoch, batch, .. }) => {
            assert!(epoch >= 1 && batch >= 1);
        }
        other => panic!("expected divergence, got {:?}", other.map(|o| o.records)),
    }
}

#[test]
fn adam_first_step_moves_by_learning_rate() {
    let mut p = Param::new(vec![1.0, -2.0, 0.5]);
    p.grad = vec![0.3, -4.0, 0.0];
    let mut adam = Adam::new(0.01);
    adam.step(vec![&mut p]);
    // After bias correction the first update is lr * g / (|g| + eps).
    assert!((p.value[0] - 0.99).abs() < 1e-6);
    assert!((p.value[1] + 1.99).abs() < 1e-6);
    assert_eq!(p.value[2], 0.5);
}

#[test]
fn curves_round_trip_and_artifacts_are_written() {
    let data = disks(5, 16, 9);
    let mut out = train(small_net(9), &data[..3], &data[3..], quick_config(4)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let best = write_training_artifacts(dir.path(), "0601", &mut out, 9, &data[..3], &data[3..]).unwrap();
    assert!(best.exists());
    let curves = read_curves(&dir.path().join("curves.csv")).unwrap();
    assert_eq!(curves, out.records);
    for f in ["loss.png", "iou.png", "loss_last_half.png", "iou_last_half.png", "manifest.json"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let manifest: RunManifest =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest.train_digest, dataset_digest(&data[..3]));
    assert_ne!(manifest.train_digest, manifest.val_digest);
}

#[test]
fn fine_tune_rejects_other_architectures() {
    let data = disks(3, 16, 10);
    let mut net = small_net(10);
    let dir = tempfile::tempdir().unwrap();
    let path = save_checkpoint(&mut net, dir.path(), "base", 0, None).unwrap();
    let other = NetworkConfig::new(1, 4, 16);
    assert!(matches!(
        fine_tune(&path, &other, &data, &[], TrainConfig::fine_tune()),
        Err(Error::Checkpoint(_))
    ));
    let ok = fine_tune(&path, net.config(), &data, &[], TrainConfig { max_epochs: 1, ..TrainConfig::fine_tune() });
    assert!(ok.is_ok());
}

#[test]
fn ablation_table_has_a_row_per_variant_and_seed() {
    let data = disks(10, 16, 11);
    let spec = AblationSpec {
        deep: NetworkConfig::new(3, 2, 16),
        shallow: NetworkConfig::new(1, 4, 16),
        training: quick_config(2),
        seeds: vec![1, 2],
        train_fraction: 0.8,
    };
    let table = run_depth_ablation(&data, &spec).unwrap();
    assert_eq!(table.rows.len(), 4);
    assert_eq!(table.margins().len(), 2);
    let again = run_depth_ablation(&data, &spec).unwrap();
    assert_eq!(table, again);
}

#[test]
fn target_iou_stops_early() {
    let data = disks(6, 16, 40);
    let (tr, va) = data.split_at(4);
    let cfg = TrainConfig {
        target_val_iou: Some(1e-6),
        ..quick_config(20)
    };
    let out = train(small_net(2), tr, va, cfg.clone()).unwrap();
    assert_eq!(out.records.len(), 1);
    assert_eq!(out.records[0].epoch, 2);
    assert!(TrainConfig { target_val_iou: Some(1.5), ..cfg }.validate().is_err());
}
