use std::fs;

use ddn::chain::{joint_grid, DEFAULT_MAX_PATHS};
use ddn::checkpoint::Checkpoint;
use ddn::data::{load_tabular, ToyTask, TOY_RANGE};
use ddn::evaluator::{test_log_likelihood, toy_sse};
use ddn::model::{ModelConfig, Variant};
use ddn::rng::{streams, substream};
use ddn::trainer::{train, TrainConfig, TrainOutputs, TrainingRun};

fn quick(epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 64,
        learning_rate: 3e-3,
        seed,
        record_time: false,
        ..TrainConfig::default()
    }
}

#[test]
fn toy_train_save_load_evaluate() {
    let data = ToyTask::GaussianStick.generate(300, &mut substream(4, streams::DATA));
    let test = ToyTask::GaussianStick.generate(200, &mut substream(4, streams::TEST_DATA));
    let cfg = ModelConfig::new(1, vec![TOY_RANGE; 2], Variant::Ddn, 0.1).unwrap().with_bins(64).unwrap();
    let mut run = TrainingRun::initialize(cfg, DEFAULT_MAX_PATHS, 4).unwrap();
    let parts = run.model.config().partitions();
    let before = test_log_likelihood(&run.model, &test, &parts, &run.paths).unwrap().mean;

    let dir = tempfile::tempdir().unwrap();
    let history = train(&mut run, &data, &quick(8, 4), TrainOutputs { dir: Some(dir.path()) }).unwrap();
    assert_eq!(history.len(), 8);
    let after = test_log_likelihood(&run.model, &test, &parts, &run.paths).unwrap().mean;
    assert!(after > before, "{after} vs {before}");

    let metrics = fs::read_to_string(dir.path().join("metrics.tsv")).unwrap();
    assert_eq!(metrics.lines().count(), 9);

    let restored = TrainingRun::from_checkpoint(Checkpoint::load(&dir.path().join("model.ddn")).unwrap()).unwrap();
    assert_eq!(restored.epochs_done, 8);
    let again = test_log_likelihood(&restored.model, &test, &parts, &restored.paths).unwrap().mean;
    assert_eq!(again.to_bits(), after.to_bits());

    let grid = joint_grid(&restored.model, &[0.25], &restored.paths, Some(32)).unwrap();
    assert!((grid.total_mass() - 1.0).abs() < 1e-6);
    let sse = toy_sse(&restored.model, &restored.paths, ToyTask::GaussianStick, &[0.25]).unwrap();
    assert!(sse[0].is_finite() && sse[0] >= 0.0);
}

#[test]
fn resumed_training_matches_uninterrupted() {
    let data = ToyTask::Squares.generate(200, &mut substream(9, streams::DATA));
    let cfg = ModelConfig::new(1, vec![TOY_RANGE; 2], Variant::MlpVl, 0.1).unwrap().with_bins(64).unwrap();

    let mut straight = TrainingRun::initialize(cfg.clone(), DEFAULT_MAX_PATHS, 9).unwrap();
    train(&mut straight, &data, &quick(4, 9), TrainOutputs::default()).unwrap();

    let mut first = TrainingRun::initialize(cfg, DEFAULT_MAX_PATHS, 9).unwrap();
    train(&mut first, &data, &quick(2, 9), TrainOutputs::default()).unwrap();
    let bytes = first.checkpoint().to_bytes();
    let mut resumed = TrainingRun::from_checkpoint(Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
    train(&mut resumed, &data, &quick(2, 9), TrainOutputs::default()).unwrap();

    assert_eq!(resumed.checkpoint().to_bytes(), straight.checkpoint().to_bytes());
}

#[test]
fn tabular_split_trains_on_normalized_targets() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.csv");
    let mut text = String::from("a;b;y\n");
    for i in 0..120 {
        let v = i as f64 * 0.05;
        text.push_str(&format!("{v};{};{}\n", (3.0 * v).cos(), 5.0 + 2.0 * v.sin()));
    }
    fs::write(&path, text).unwrap();
    let tab = load_tabular(&path, &["y".to_string()], 2, 0).unwrap();
    assert_eq!(tab.train.len() + tab.test.len(), 120);
    let cfg = ModelConfig::new(2, tab.ranges(), Variant::Ddn, 0.1).unwrap().with_bins(64).unwrap();
    let mut run = TrainingRun::initialize(cfg, DEFAULT_MAX_PATHS, 2).unwrap();
    train(&mut run, &tab.train, &quick(5, 2), TrainOutputs::default()).unwrap();
    let parts = run.model.config().partitions();
    let ll = test_log_likelihood(&run.model, &tab.test, &parts, &run.paths).unwrap();
    assert_eq!(ll.per_sample.len(), tab.test.len());
    assert!(ll.mean.is_finite());
}
