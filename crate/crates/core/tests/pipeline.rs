use skelact::backbone::BackboneConfig;
use skelact::heads::BranchMode;
use skelact::model::{Model, ModelConfig};
use skelact::saliency::compute_saliency;
use skelact::skeleton::io::{load_dataset_dir, write_dataset_dir};
use skelact::skeleton::{generate_synthetic_dataset, SyntheticSpec};
use skelact::training::{evaluate, read_metrics_csv, train, write_metrics_csv, TrainConfig};

fn small_config() -> ModelConfig {
    let mut cfg = ModelConfig::new(4);
    cfg.backbone = BackboneConfig::from_channels(3, &[(6, 1), (8, 2)]);
    cfg.frames = 24;
    cfg.segments = 4;
    cfg.selected = 2;
    cfg
}

#[test]
fn dataset_directory_training_and_checkpoint_agree() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SyntheticSpec {
        class_count: 4,
        clips_per_class: 6,
        frames: 30,
        ..SyntheticSpec::default()
    };
    let (train_set, val_set) = generate_synthetic_dataset(&spec)
        .unwrap()
        .split_holdout(0.5)
        .unwrap();
    write_dataset_dir(dir.path(), &[&train_set, &val_set]).unwrap();
    let (train_back, val_back) = load_dataset_dir(dir.path(), 4).unwrap();
    assert_eq!(train_back, train_set);
    assert_eq!(val_back, val_set);

    let mut model = Model::new(small_config(), 3).unwrap();
    let cfg = TrainConfig {
        epochs: 4,
        batch_size: 4,
        lr_drop_epochs: vec![3],
        seed: 3,
        ..TrainConfig::default()
    };
    let records = train(&mut model, &train_back, Some(&val_back), &cfg).unwrap();
    assert_eq!(records.len(), 4);
    assert!(records.iter().all(|r| r.total_loss().is_finite()));

    let metrics = dir.path().join("metrics.csv");
    write_metrics_csv(&metrics, &records).unwrap();
    assert_eq!(read_metrics_csv(&metrics).unwrap(), records);

    let checkpoint = dir.path().join("model.json");
    model.save(&checkpoint).unwrap();
    let mut loaded = Model::load(&checkpoint).unwrap();
    for fusion in [BranchMode::Global, BranchMode::Dfl, BranchMode::Both] {
        let a = evaluate(&mut model, &val_back, fusion).unwrap();
        let b = evaluate(&mut loaded, &val_back, fusion).unwrap();
        assert_eq!(a, b);
    }
    assert_eq!(
        evaluate(&mut loaded, &val_back, BranchMode::Both)
            .unwrap()
            .top1,
        records[3].val_top1
    );

    let maps = compute_saliency(&mut loaded, &val_back.clips[0]).unwrap();
    assert_eq!(maps.curves.len(), 2);
    assert!(maps.curves.iter().all(|c| c.len() == 24));
}

#[test]
fn global_training_leaves_the_discriminative_head_untouched() {
    let spec = SyntheticSpec {
        class_count: 4,
        clips_per_class: 3,
        frames: 30,
        ..SyntheticSpec::default()
    };
    let data = generate_synthetic_dataset(&spec).unwrap();
    let mut model = Model::new(small_config(), 8).unwrap();
    let before = model.to_checkpoint_json().unwrap();
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 4,
        lr_drop_epochs: vec![],
        branch_mode: BranchMode::Global,
        ..TrainConfig::default()
    };
    train(&mut model, &data, None, &cfg).unwrap();
    let snapshot = |m: &mut Model| {
        let mut params = Vec::new();
        m.visit_states(&mut |path, s| {
            if path.contains("shared") || path.contains("slot") {
                params.push((path.to_string(), s.params.clone()));
            }
        });
        params
    };
    let mut original = Model::from_checkpoint_json(&before).unwrap();
    assert_eq!(snapshot(&mut model), snapshot(&mut original));
    assert!(!snapshot(&mut model).is_empty());
}
