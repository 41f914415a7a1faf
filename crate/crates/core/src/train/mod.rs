//! Optimizer, learning-rate schedule and the two training pipelines.

mod adam;

pub use adam::{adam_step, AdamState};

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, RtfnError};
use crate::eval::{kmeans_fit, rand_index, top1_accuracy, ClusterAssignment, DEFAULT_RESTARTS};
use crate::io::kv;
use crate::io::ucr::{labels_of, series_of, Sample, SeriesDataset};
use crate::model::{argmax_rows, batch_tensor, reconstruction_loss, supervised_loss, ModelConfig, RtfnModel, Task};
use crate::params::{ParamId, Session, StatUpdate};
use crate::tensor::Tensor;

pub const SUPERVISED_EPOCHS: usize = 200;
pub const UNSUPERVISED_EPOCHS: usize = 100;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Epochs without a new best training loss before the rate is cut.
    pub lr_patience: usize,
    pub lr_factor: f64,
    pub lr_floor: f64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn supervised() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 16,
            epochs: SUPERVISED_EPOCHS,
            lr_patience: 20,
            lr_factor: 0.5,
            lr_floor: 1e-5,
            seed: crate::model::DEFAULT_SEED,
        }
    }

    pub fn unsupervised() -> Self {
        TrainConfig {
            epochs: UNSUPERVISED_EPOCHS,
            ..Self::supervised()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(RtfnError::Config(m));
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".into());
        }
        if self.epochs == 0 {
            return fail("epochs must be at least 1".into());
        }
        if self.learning_rate <= 0.0 {
            return fail(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return fail("beta1 and beta2 must lie in [0, 1)".into());
        }
        if self.eps <= 0.0 {
            return fail("eps must be positive".into());
        }
        if !(self.lr_factor > 0.0 && self.lr_factor <= 1.0) {
            return fail(format!("lr_factor must lie in (0, 1], got {}", self.lr_factor));
        }
        if self.lr_floor <= 0.0 || self.lr_floor > self.learning_rate {
            return fail(format!(
                "lr_floor must lie in (0, learning_rate], got {}",
                self.lr_floor
            ));
        }
        Ok(())
    }

    /// Applies one key from a run configuration file. Returns `false` when
    /// the key does not belong to training.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "learning_rate" => self.learning_rate = kv::parse_f64(key, value)?,
            "beta1" => self.beta1 = kv::parse_f64(key, value)?,
            "beta2" => self.beta2 = kv::parse_f64(key, value)?,
            "eps" => self.eps = kv::parse_f64(key, value)?,
            "batch_size" => self.batch_size = kv::parse_usize(key, value)?,
            "epochs" => self.epochs = kv::parse_usize(key, value)?,
            "lr_patience" => self.lr_patience = kv::parse_usize(key, value)?,
            "lr_factor" => self.lr_factor = kv::parse_f64(key, value)?,
            "lr_floor" => self.lr_floor = kv::parse_f64(key, value)?,
            "seed" => self.seed = kv::parse_u64(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in [
            ("learning_rate", self.learning_rate.to_string()),
            ("beta1", self.beta1.to_string()),
            ("beta2", self.beta2.to_string()),
            ("eps", self.eps.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("epochs", self.epochs.to_string()),
            ("lr_patience", self.lr_patience.to_string()),
            ("lr_factor", self.lr_factor.to_string()),
            ("lr_floor", self.lr_floor.to_string()),
            ("seed", self.seed.to_string()),
        ] {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}

/// Multiplies the rate by `factor` after `patience` epochs without a new
/// best loss, never going below `floor`.
#[derive(Clone, Debug)]
pub struct PlateauSchedule {
    pub lr: f64,
    best: f64,
    stale: usize,
    patience: usize,
    factor: f64,
    floor: f64,
}

impl PlateauSchedule {
    pub fn new(cfg: &TrainConfig) -> Self {
        PlateauSchedule {
            lr: cfg.learning_rate,
            best: f64::INFINITY,
            stale: 0,
            patience: cfg.lr_patience,
            factor: cfg.lr_factor,
            floor: cfg.lr_floor,
        }
    }

    /// Records an epoch loss and returns the rate for the next epoch.
    pub fn observe(&mut self, loss: f64) -> f64 {
        if loss < self.best {
            self.best = loss;
            self.stale = 0;
        } else {
            self.stale += 1;
            if self.patience > 0 && self.stale >= self.patience {
                self.lr = (self.lr * self.factor).max(self.floor);
                self.stale = 0;
            }
        }
        self.lr
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    /// Training-mode accuracy; absent for the autoencoder.
    pub accuracy: Option<f64>,
    pub learning_rate: f64,
}

/// `epoch,loss,accuracy` CSV, accuracy left empty when absent.
pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,loss,accuracy\n");
    for r in history {
        let acc = r.accuracy.map(|a| a.to_string()).unwrap_or_default();
        let _ = writeln!(s, "{},{},{}", r.epoch, r.loss, acc);
    }
    s
}

pub struct SupervisedRun {
    pub model: RtfnModel,
    pub history: Vec<EpochRecord>,
    pub test_accuracy: f64,
}

pub struct AutoencoderRun {
    pub model: RtfnModel,
    pub history: Vec<EpochRecord>,
}

pub struct ClusterRun {
    pub model: RtfnModel,
    pub history: Vec<EpochRecord>,
    pub assignment: ClusterAssignment,
    pub rand_index: f64,
    /// K-means on the normalized test series themselves, same seed.
    pub baseline_rand_index: f64,
}

/// Called after every epoch; used for progress output.
pub type EpochObserver<'a> = &'a mut dyn FnMut(&EpochRecord);

fn nonempty(split: &[Sample], which: &str) -> Result<()> {
    if split.is_empty() {
        Err(RtfnError::data(format!("{which} split is empty")))
    } else {
        Ok(())
    }
}

struct StepOutput {
    loss: f64,
    correct: usize,
    grads: Vec<(ParamId, Tensor)>,
    stats: Vec<StatUpdate>,
}

fn run_epochs<F>(
    model: &mut RtfnModel,
    train: &[Sample],
    tcfg: &TrainConfig,
    supervised: bool,
    step: F,
    mut observer: Option<EpochObserver>,
) -> Result<Vec<EpochRecord>>
where
    F: Fn(&RtfnModel, &mut Session, &Tensor, &[usize]) -> Result<(crate::tensor::Var, usize)>,
{
    tcfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(tcfg.seed);
    let mut adam = AdamState::new(&model.store);
    let mut schedule = PlateauSchedule::new(tcfg);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::with_capacity(tcfg.epochs);
    for epoch in 1..=tcfg.epochs {
        let lr = schedule.lr;
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for idx in order.chunks(tcfg.batch_size) {
            let series: Vec<&[f64]> = idx.iter().map(|&i| train[i].series.as_slice()).collect();
            let labels: Vec<usize> = idx.iter().map(|&i| train[i].label).collect();
            let x = batch_tensor(&series, model.config.input_length)?;
            let out = {
                let mut s = Session::train(&model.store, &mut rng);
                let (loss, hits) = step(model, &mut s, &x, &labels)?;
                let value = s.graph.value(loss).data()[0];
                StepOutput {
                    loss: value,
                    correct: hits,
                    grads: s.backward(loss)?,
                    stats: s.into_stat_updates(),
                }
            };
            if !out.loss.is_finite() {
                return Err(RtfnError::Contract(format!("training loss diverged at epoch {epoch}")));
            }
            loss_sum += out.loss * idx.len() as f64;
            correct += out.correct;
            model.store.accumulate_all(&out.grads)?;
            adam.step(&mut model.store, lr, tcfg)?;
            model.store.apply_stat_updates(&out.stats);
        }
        let loss = loss_sum / train.len() as f64;
        let record = EpochRecord {
            epoch,
            loss,
            accuracy: supervised.then(|| correct as f64 / train.len() as f64),
            learning_rate: lr,
        };
        schedule.observe(loss);
        if let Some(obs) = observer.as_mut() {
            obs(&record);
        }
        history.push(record);
    }
    Ok(history)
}

/// Mini-batch Adam on the cross-entropy loss, then top-1 accuracy on the
/// test split.
pub fn train_supervised(
    dataset: &SeriesDataset,
    mcfg: &ModelConfig,
    tcfg: &TrainConfig,
    observer: Option<EpochObserver>,
) -> Result<SupervisedRun> {
    nonempty(&dataset.train, "training")?;
    nonempty(&dataset.test, "test")?;
    if mcfg.task != Task::Classify {
        return Err(RtfnError::Config("supervised training needs task = classify".into()));
    }
    let mut model = RtfnModel::new(mcfg.clone())?;
    let history = run_epochs(
        &mut model,
        &dataset.train,
        tcfg,
        true,
        |m, s, x, labels| {
            let xv = s.graph.constant(x.clone());
            let logits = m.logits(s, xv)?;
            let preds = argmax_rows(s.graph.value(logits));
            let hits = preds.iter().zip(labels).filter(|(p, t)| p == t).count();
            Ok((supervised_loss(&mut s.graph, logits, labels)?, hits))
        },
        observer,
    )?;
    let test_accuracy = evaluate_accuracy(&model, &dataset.test)?;
    Ok(SupervisedRun {
        model,
        history,
        test_accuracy,
    })
}

pub fn evaluate_accuracy(model: &RtfnModel, split: &[Sample]) -> Result<f64> {
    let pred = model.classify(&series_of(split))?;
    top1_accuracy(&pred, &labels_of(split))
}

/// Trains encoder and decoder on the reconstruction loss alone; labels are
/// not used.
pub fn train_autoencoder(
    dataset: &SeriesDataset,
    mcfg: &ModelConfig,
    tcfg: &TrainConfig,
    observer: Option<EpochObserver>,
) -> Result<AutoencoderRun> {
    nonempty(&dataset.train, "training")?;
    if mcfg.task != Task::Reconstruct {
        return Err(RtfnError::Config("autoencoder training needs task = reconstruct".into()));
    }
    let mut model = RtfnModel::new(mcfg.clone())?;
    let t = mcfg.input_length;
    let history = run_epochs(
        &mut model,
        &dataset.train,
        tcfg,
        false,
        |m, s, x, _| {
            let b = x.shape()[0];
            let xv = s.graph.constant(x.clone());
            let target = s.graph.constant(x.clone().reshape(&[b, t])?);
            let rec = m.reconstruct(s, xv)?;
            Ok((reconstruction_loss(&mut s.graph, target, rec)?, 0))
        },
        observer,
    )?;
    Ok(AutoencoderRun { model, history })
}

/// Autoencoder training on the train split, then K-means with one cluster
/// per class on eval-mode features of the test split, scored by Rand Index.
pub fn run_clustering(
    dataset: &SeriesDataset,
    mcfg: &ModelConfig,
    tcfg: &TrainConfig,
    observer: Option<EpochObserver>,
) -> Result<ClusterRun> {
    nonempty(&dataset.test, "test")?;
    let AutoencoderRun { model, history } = train_autoencoder(dataset, mcfg, tcfg, observer)?;
    let k = dataset.num_classes();
    let truth = labels_of(&dataset.test);
    let features = model.features(&series_of(&dataset.test))?;
    let assignment = kmeans_fit(&features, k, DEFAULT_RESTARTS, tcfg.seed)?;
    let ri = rand_index(&assignment.labels, &truth)?;

    let raw = raw_matrix(&dataset.test)?;
    let baseline = kmeans_fit(&raw, k, DEFAULT_RESTARTS, tcfg.seed)?;
    let baseline_ri = rand_index(&baseline.labels, &truth)?;
    Ok(ClusterRun {
        model,
        history,
        assignment,
        rand_index: ri,
        baseline_rand_index: baseline_ri,
    })
}

/// Stacks a split's series into an `n×t` matrix.
pub fn raw_matrix(split: &[Sample]) -> Result<Tensor> {
    let t = split.first().map_or(0, |s| s.series.len());
    let data: Vec<f64> = split.iter().flat_map(|s| s.series.iter().copied()).collect();
    Tensor::new(&[split.len(), t], data)
}
