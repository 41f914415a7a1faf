use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rtfn::io::ucr::Sample;
use rtfn::io::{z_normalize, SeriesDataset};
use rtfn::layers::HeadSpec;
use rtfn::model::{default_decoder_widths, read_checkpoint, write_checkpoint};
use rtfn::train::{
    adam_step, evaluate_accuracy, history_csv, run_clustering, train_autoencoder, train_supervised, AdamState,
    EpochRecord, PlateauSchedule,
};
use rtfn::{ModelConfig, ParamStore, RtfnError, Task, Tensor, TrainConfig};

fn small_config(task: Task, t: usize, classes: usize) -> ModelConfig {
    let mut cfg = ModelConfig::new(task, t, classes);
    cfg.conv_heads = [3, 5, 8].iter().map(|&kernel| HeadSpec { kernel, filters: 8 }).collect();
    cfg.residual_channels = vec![16, 32, 16];
    cfg.lstm_hidden = 8;
    cfg.decoder_widths = vec![32, 32, t, t];
    cfg
}

/// Class 0: sine, class 1: square wave; random phase, frequency and noise.
fn sine_vs_square(n: usize, t: usize, seed: u64) -> Vec<Sample> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let label = i % 2;
            let phase = r.random_range(0.0..std::f64::consts::TAU);
            let cycles = r.random_range(2.0..4.0);
            let series: Vec<f64> = (0..t)
                .map(|j| {
                    let s = (phase + cycles * std::f64::consts::TAU * j as f64 / t as f64).sin();
                    let v = if label == 0 { s } else { s.signum() };
                    v + r.random_range(-0.1..0.1)
                })
                .collect();
            Sample {
                series: z_normalize(&series),
                label,
            }
        })
        .collect()
}

fn dataset(train: Vec<Sample>, test: Vec<Sample>, t: usize) -> SeriesDataset {
    SeriesDataset {
        name: "synthetic".into(),
        train,
        test,
        class_labels: vec!["sine".into(), "square".into()],
        input_length: t,
    }
}

fn short(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 8,
        ..TrainConfig::supervised()
    }
}

// ---------------- Adam ----------------

fn scalar_store(value: f64) -> ParamStore {
    let mut s = ParamStore::new();
    s.add("w", Tensor::new(&[1], vec![value]).unwrap(), true).unwrap();
    s
}

#[test]
fn first_adam_step_has_size_lr() {
    let cfg = TrainConfig::supervised();
    let mut store = scalar_store(0.0);
    let id = store.id("w").unwrap();
    let mut state = AdamState::new(&store);
    store.accumulate_grad(id, &Tensor::new(&[1], vec![1.0]).unwrap()).unwrap();
    adam_step(&mut store, &mut state, 1e-3, &cfg).unwrap();
    let expected = -1e-3 / (1.0 + 1e-8);
    assert!((store.value(id).data()[0] - expected).abs() < 1e-18);
    assert!(store.grad(id).is_none_or(|g| g.data()[0] == 0.0));
}

#[test]
fn zero_gradient_leaves_parameters_unchanged() {
    let cfg = TrainConfig::supervised();
    let mut store = scalar_store(0.75);
    let id = store.id("w").unwrap();
    let mut state = AdamState::new(&store);
    for _ in 0..5 {
        store.accumulate_grad(id, &Tensor::zeros(&[1])).unwrap();
        adam_step(&mut store, &mut state, 1e-3, &cfg).unwrap();
    }
    assert_eq!(store.value(id).data()[0], 0.75);
}

#[test]
fn missing_gradient_is_a_contract_error() {
    let cfg = TrainConfig::supervised();
    let mut store = scalar_store(0.0);
    let mut state = AdamState::new(&store);
    assert!(matches!(adam_step(&mut store, &mut state, 1e-3, &cfg), Err(RtfnError::Contract(_))));
}

proptest! {
    #[test]
    fn equal_parameters_with_equal_gradients_stay_equal(
        start in -5.0f64..5.0,
        grads in prop::collection::vec(-10.0f64..10.0, 1..20),
    ) {
        let cfg = TrainConfig::supervised();
        let mut store = ParamStore::new();
        let a = store.add("a", Tensor::new(&[2], vec![start, start]).unwrap(), true).unwrap();
        let b = store.add("b", Tensor::new(&[1], vec![start]).unwrap(), true).unwrap();
        let mut state = AdamState::new(&store);
        for g in grads {
            store.accumulate_grad(a, &Tensor::new(&[2], vec![g, g]).unwrap()).unwrap();
            store.accumulate_grad(b, &Tensor::new(&[1], vec![g]).unwrap()).unwrap();
            adam_step(&mut store, &mut state, 1e-3, &cfg).unwrap();
        }
        let va = store.value(a).data();
        prop_assert_eq!(va[0].to_bits(), va[1].to_bits());
        prop_assert_eq!(va[0].to_bits(), store.value(b).data()[0].to_bits());
    }

    #[test]
    fn plateau_rate_never_increases(losses in prop::collection::vec(0.0f64..2.0, 1..300)) {
        let cfg = TrainConfig::supervised();
        let mut sched = PlateauSchedule::new(&cfg);
        let mut prev = cfg.learning_rate;
        for l in losses {
            let lr = sched.observe(l);
            prop_assert!(lr <= prev);
            prop_assert!(lr >= cfg.lr_floor);
            prev = lr;
        }
    }
}

#[test]
fn plateau_halves_after_patience_epochs() {
    let cfg = TrainConfig::supervised();
    let mut sched = PlateauSchedule::new(&cfg);
    assert_eq!(sched.observe(1.0), 1e-3);
    for _ in 0..19 {
        assert_eq!(sched.observe(1.0), 1e-3);
    }
    assert_eq!(sched.observe(1.0), 5e-4);
    assert_eq!(sched.observe(0.5), 5e-4);
    for _ in 0..400 {
        sched.observe(2.0);
    }
    assert_eq!(sched.lr, 1e-5);
}

// ---------------- supervised ----------------

#[test]
fn sine_versus_square_is_learned() {
    let t = 64;
    let ds = dataset(sine_vs_square(20, t, 1), sine_vs_square(20, t, 2), t);
    let run = train_supervised(&ds, &small_config(Task::Classify, t, 2), &short(100), None).unwrap();
    let best = run.history.iter().filter_map(|r| r.accuracy).fold(0.0, f64::max);
    assert!(best >= 0.99, "best training accuracy {best}");
    assert!(run.test_accuracy >= 0.9, "test accuracy {}", run.test_accuracy);
    assert_eq!(run.history.len(), 100);
    assert!(run.history.iter().all(|r| r.loss.is_finite()));
}

#[test]
fn equal_seeds_give_identical_runs() {
    let t = 32;
    let ds = dataset(sine_vs_square(11, t, 3), sine_vs_square(6, t, 4), t);
    let mcfg = small_config(Task::Classify, t, 2);
    let tcfg = TrainConfig { seed: 9, ..short(3) };
    let a = train_supervised(&ds, &mcfg, &tcfg, None).unwrap();
    let b = train_supervised(&ds, &mcfg, &tcfg, None).unwrap();
    assert_eq!(history_csv(&a.history), history_csv(&b.history));
    assert!(a.model.store.bitwise_eq(&b.model.store));
    assert_eq!(a.test_accuracy, b.test_accuracy);

    let c = train_supervised(&ds, &mcfg, &TrainConfig { seed: 10, ..tcfg }, None).unwrap();
    assert_ne!(history_csv(&a.history), history_csv(&c.history));
}

#[test]
fn observer_sees_every_epoch_and_lr_is_recorded() {
    let t = 24;
    let ds = dataset(sine_vs_square(5, t, 5), sine_vs_square(4, t, 6), t);
    let mut seen = Vec::new();
    let mut obs = |r: &EpochRecord| seen.push(r.epoch);
    let run = train_supervised(&ds, &small_config(Task::Classify, t, 2), &short(4), Some(&mut obs)).unwrap();
    assert_eq!(seen, vec![1, 2, 3, 4]);
    assert!(run.history.iter().all(|r| r.learning_rate == 1e-3));
    let csv = history_csv(&run.history);
    assert!(csv.starts_with("epoch,loss,accuracy\n1,"));
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn checkpoint_reload_keeps_test_accuracy() {
    let t = 32;
    let ds = dataset(sine_vs_square(10, t, 7), sine_vs_square(10, t, 8), t);
    let run = train_supervised(&ds, &small_config(Task::Classify, t, 2), &short(3), None).unwrap();
    let back = read_checkpoint(&write_checkpoint(&run.model)).unwrap();
    assert_eq!(evaluate_accuracy(&back, &ds.test).unwrap(), run.test_accuracy);
}

#[test]
fn empty_splits_are_data_errors() {
    let t = 16;
    let mcfg = small_config(Task::Classify, t, 2);
    let no_train = dataset(vec![], sine_vs_square(2, t, 0), t);
    assert!(matches!(train_supervised(&no_train, &mcfg, &short(1), None), Err(RtfnError::Data { .. })));
    let no_test = dataset(sine_vs_square(2, t, 0), vec![], t);
    assert!(matches!(train_supervised(&no_test, &mcfg, &short(1), None), Err(RtfnError::Data { .. })));
    let rcfg = small_config(Task::Reconstruct, t, 2);
    assert!(matches!(train_autoencoder(&no_train, &rcfg, &short(1), None), Err(RtfnError::Data { .. })));
}

#[test]
fn task_mismatch_is_a_config_error() {
    let t = 16;
    let ds = dataset(sine_vs_square(2, t, 0), sine_vs_square(2, t, 1), t);
    assert!(matches!(
        train_supervised(&ds, &small_config(Task::Reconstruct, t, 2), &short(1), None),
        Err(RtfnError::Config(_))
    ));
    assert!(matches!(
        train_autoencoder(&ds, &small_config(Task::Classify, t, 2), &short(1), None),
        Err(RtfnError::Config(_))
    ));
}

// ---------------- autoencoder and clustering ----------------

#[test]
fn autoencoder_fits_constant_series() {
    let t = 32;
    let flat: Vec<Sample> = (0..8)
        .map(|i| Sample {
            series: z_normalize(&vec![i as f64; t]),
            label: i % 2,
        })
        .collect();
    let ds = dataset(flat.clone(), flat, t);
    let mut mcfg = small_config(Task::Reconstruct, t, 2);
    mcfg.decoder_widths = default_decoder_widths(t);
    let tcfg = TrainConfig { batch_size: 8, ..TrainConfig::unsupervised() };
    let run = train_autoencoder(&ds, &mcfg, &tcfg, None).unwrap();
    let last = run.history.last().unwrap().loss;
    assert!(last < 1e-3, "final reconstruction loss {last}");
    assert!(run.history.iter().all(|r| r.accuracy.is_none()));
}

#[test]
fn autoencoder_loss_falls_on_real_shapes() {
    let t = 48;
    let ds = dataset(sine_vs_square(16, t, 11), sine_vs_square(8, t, 12), t);
    let tcfg = TrainConfig { epochs: 25, batch_size: 8, ..TrainConfig::unsupervised() };
    let run = train_autoencoder(&ds, &small_config(Task::Reconstruct, t, 2), &tcfg, None).unwrap();
    let mean = |r: &[rtfn::train::EpochRecord]| r.iter().map(|e| e.loss).sum::<f64>() / r.len() as f64;
    let (head, tail) = (mean(&run.history[..5]), mean(&run.history[20..]));
    assert!(tail < 0.85 * head, "{head} -> {tail}");
}

#[test]
fn clustering_reports_rand_index_per_test_sample() {
    let t = 32;
    let ds = dataset(sine_vs_square(12, t, 13), sine_vs_square(10, t, 14), t);
    let tcfg = TrainConfig { epochs: 5, batch_size: 6, ..TrainConfig::unsupervised() };
    let run = run_clustering(&ds, &small_config(Task::Reconstruct, t, 2), &tcfg, None).unwrap();
    assert_eq!(run.assignment.labels.len(), 10);
    assert!(run.assignment.labels.iter().all(|&l| l < 2));
    assert!((0.0..=1.0).contains(&run.rand_index));
    assert!((0.0..=1.0).contains(&run.baseline_rand_index));
    let again = run_clustering(&ds, &small_config(Task::Reconstruct, t, 2), &tcfg, None).unwrap();
    assert_eq!(run.assignment.labels, again.assignment.labels);
}
