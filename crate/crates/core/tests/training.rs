//! Training-loop contracts: determinism, persistence, evaluation and
//! gradient flow through spike layers.

use spikmamba::error::Error;
use spikmamba::events::{synth_generate, Dataset, Motion, SyntheticSpec};
use spikmamba::model::{Checkpoint, ModelConfig, Preset, SpikMamba};
use spikmamba::train::{evaluate, train_loop, EpochRecord, RunOutput, TrainConfig, Trainer};

fn tiny_data(seed: u64, n_per_class: usize) -> Dataset {
    let spec = SyntheticSpec {
        classes: vec![Motion::Left, Motion::Right],
        duration_us: 20_000,
        sensor_height: 16,
        sensor_width: 16,
        seed,
        ..SyntheticSpec::default()
    };
    Dataset::from_streams(&synth_generate(&spec, n_per_class).unwrap(), 4, 16, 16).unwrap()
}

fn tiny_trainer(epochs: usize, seed: u64) -> Trainer<f32> {
    let model = SpikMamba::new(ModelConfig::preset(Preset::Tiny), seed).unwrap();
    let cfg = TrainConfig {
        epochs,
        batch_size: 4,
        lr_max: 1e-3,
        lr_min: 1e-4,
        ..TrainConfig::default()
    };
    Trainer::new(model, cfg, seed).unwrap()
}

fn without_time(records: &[EpochRecord]) -> Vec<EpochRecord> {
    records
        .iter()
        .map(|r| EpochRecord {
            seconds: 0.0,
            ..r.clone()
        })
        .collect()
}

fn single_thread<R: Send>(f: impl FnOnce() -> R + Send) -> R {
    rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap()
        .install(f)
}

#[test]
fn zero_epochs_write_only_the_initial_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let out = RunOutput {
        dir: dir.path().join("run"),
    };
    let mut tr = tiny_trainer(0, 1);
    let report = train_loop(&mut tr, &tiny_data(0, 2), None, &out, |_| {}).unwrap();
    assert!(report.epochs.is_empty());
    assert!(out.initial().is_file());
    assert!(!out.best().exists() && !out.last().exists());
    assert_eq!(std::fs::read_to_string(out.log()).unwrap(), "");
}

#[test]
fn identical_seeds_give_identical_logs() {
    let data = tiny_data(0, 4);
    let eval = tiny_data(1, 2);
    let run = |name: &str| {
        let dir = tempfile::tempdir().unwrap();
        let out = RunOutput {
            dir: dir.path().join(name),
        };
        let mut tr = tiny_trainer(3, 7);
        let report = single_thread(|| train_loop(&mut tr, &data, Some(&eval), &out, |_| {}).unwrap());
        let ckpt = std::fs::read(out.last()).unwrap();
        (report, ckpt)
    };
    let (a, ca) = run("a");
    let (b, cb) = run("b");
    assert_eq!(a.epochs.len(), 3);
    assert_eq!(without_time(&a.epochs), without_time(&b.epochs));
    assert_eq!(ca, cb);
}

#[test]
fn checkpoint_reload_reproduces_accuracy_exactly() {
    let data = tiny_data(0, 4);
    let mut tr = tiny_trainer(2, 3);
    for _ in 0..2 {
        tr.run_epoch(&data, None).unwrap();
    }
    let before = evaluate(&tr.model, &data, 3).unwrap();
    assert_eq!(
        evaluate(&tr.model, &data, 3).unwrap(),
        before,
        "evaluate is not idempotent"
    );
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    tr.model.save_checkpoint(&path).unwrap();
    let back: SpikMamba<f32> = Checkpoint::load(&path).unwrap().into_model().unwrap();
    assert_eq!(evaluate(&back, &data, 3).unwrap().to_bits(), before.to_bits());
    let x = data.sequential(8).unwrap().next().unwrap().x;
    assert_eq!(back.logits(&x).unwrap(), tr.model.logits(&x).unwrap());
}

#[test]
fn accuracy_matches_a_hand_count() {
    let data = tiny_data(2, 3);
    let model = SpikMamba::<f32>::new(ModelConfig::preset(Preset::Tiny), 11).unwrap();
    let batch = data.sequential(5).unwrap().next().unwrap();
    let pred = model.predict(&batch.x).unwrap();
    // Relabel five clips so that exactly the first three are predicted right.
    let wrong = |p: usize| 1 - p;
    let labels = [pred[0], pred[1], pred[2], wrong(pred[3]), wrong(pred[4])];
    let streams: Vec<_> = synth_generate(
        &SyntheticSpec {
            classes: vec![Motion::Left, Motion::Right],
            duration_us: 20_000,
            sensor_height: 16,
            sensor_width: 16,
            seed: 2,
            ..SyntheticSpec::default()
        },
        3,
    )
    .unwrap()
    .into_iter()
    .take(5)
    .zip(labels)
    .map(|(s, y)| s.with_label(y))
    .collect();
    let five = Dataset::from_streams(&streams, 4, 16, 16).unwrap();
    assert_eq!(evaluate(&model, &five, 2).unwrap(), 0.6);
}

#[test]
fn non_finite_loss_names_batch_and_step() {
    let data = tiny_data(0, 2);
    let mut tr = tiny_trainer(1, 1);
    let id = tr.model.params.id("head.bias").unwrap();
    tr.model.params.value_mut(id).data_mut()[0] = f32::NAN;
    match tr.run_epoch(&data, None) {
        Err(Error::NonFiniteLoss {
            epoch: 0,
            batch: 0,
            step: 1,
            ..
        }) => {}
        other => panic!("expected a non-finite loss error, got {other:?}"),
    }
}

#[test]
fn overfitting_two_clips_lowers_the_loss_every_step() {
    let spec = SyntheticSpec {
        seed: 5,
        ..SyntheticSpec::default()
    };
    let streams = synth_generate(&spec, 1).unwrap();
    let data = Dataset::from_streams(&streams[..2], 8, 64, 64).unwrap();
    let batch = data.sequential(2).unwrap().next().unwrap();
    let model = SpikMamba::<f32>::new(ModelConfig::default(), 0).unwrap();
    let cfg = TrainConfig {
        lr_max: 1e-4,
        ..TrainConfig::default()
    };
    let mut tr = Trainer::new(model, cfg, 0).unwrap();
    let losses: Vec<f64> = (0..11).map(|i| tr.step(&batch, 1e-4, i).unwrap()).collect();
    for w in losses.windows(2) {
        assert!(w[1] < w[0], "loss did not decrease: {losses:?}");
    }
}
