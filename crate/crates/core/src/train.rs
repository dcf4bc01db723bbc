//! Minibatch SGD with heavy-ball momentum.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::landscape::{DatasetObjective, Objective};
use crate::models::{Model, Network, ParamSet};
use crate::objective::Reduction;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub momentum: f64,
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
    pub shuffle: bool,
    pub reduction: Reduction,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            momentum: 0.8,
            lr: 0.025,
            epochs: 60,
            seed: 0,
            shuffle: true,
            reduction: Reduction::SumPerSample,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument(
                "batch size must be at least 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidArgument(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be non-negative, got {}",
                self.lr
            )));
        }
        Ok(())
    }
}

/// `v' = momentum * v - lr * g`, `p' = p + v'`.
pub fn sgd_step<T: Scalar>(
    params: &ParamSet<T>,
    grads: &ParamSet<T>,
    velocity: &ParamSet<T>,
    config: &TrainConfig,
) -> Result<(ParamSet<T>, ParamSet<T>)> {
    let m = T::from_f64_lossy(config.momentum);
    let lr = T::from_f64_lossy(config.lr);
    let v = velocity.zip_map(grads, |v, g| m * v - lr * g)?;
    let p = params.zip_map(&v, |p, dv| p + dv)?;
    Ok((p, v))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_loss: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Divergence {
    pub epoch: usize,
    /// Zero-based step within the epoch, or `None` when the end-of-epoch
    /// evaluation was the first non-finite value.
    pub step: Option<usize>,
    pub loss: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum StopOutcome {
    Reached { epoch: usize, train_loss: f64 },
    NotReached { epochs: usize, best_train_loss: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub config: TrainConfig,
    pub initial_train_loss: f64,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_train_loss: f64,
    pub diverged: Option<Divergence>,
    pub target_loss: Option<f64>,
    pub stop: Option<StopOutcome>,
    /// Seconds since the start of training, one entry per epoch. Not written
    /// by [`TrainLog::to_json`] so that logs of identical runs compare equal.
    #[serde(skip)]
    pub wall_seconds: Vec<f64>,
}

impl TrainLog {
    pub fn final_record(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,test_loss\n");
        for r in &self.epochs {
            let test = r.test_loss.map(|t| format!("{t:.16e}")).unwrap_or_default();
            writeln!(s, "{},{:.16e},{}", r.epoch, r.train_loss, test).unwrap();
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("log is always serialisable") + "\n"
    }

    /// Wall-clock seconds per epoch as plain text. Kept apart from the CSV
    /// and JSON logs, which are reproducible byte for byte.
    pub fn timing_text(&self) -> String {
        let mut s = String::new();
        for (r, t) in self.epochs.iter().zip(&self.wall_seconds) {
            writeln!(s, "epoch {} at {t:.3} s", r.epoch).unwrap();
        }
        s
    }

    /// Writes `train_log.csv`, `train_log.json` and `timing.txt` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, text) in [
            ("train_log.csv", self.to_csv()),
            ("train_log.json", self.to_json()),
            ("timing.txt", self.timing_text()),
        ] {
            let path = dir.join(name);
            fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

pub struct TrainOutcome<T> {
    pub log: TrainLog,
    /// Parameters with the lowest end-of-epoch train loss (the initial
    /// parameters if no epoch finished).
    pub best: ParamSet<T>,
    /// Parameters when training stopped; the last finite ones on divergence.
    pub last: ParamSet<T>,
}

/// Called after every finished epoch with its record and parameters.
pub trait EpochHook<T> {
    fn on_epoch(&mut self, record: &EpochRecord, params: &ParamSet<T>) -> Result<()>;
}

impl<T, F: FnMut(&EpochRecord, &ParamSet<T>) -> Result<()>> EpochHook<T> for F {
    fn on_epoch(&mut self, record: &EpochRecord, params: &ParamSet<T>) -> Result<()> {
        self(record, params)
    }
}

fn no_hook<T>(_: &EpochRecord, _: &ParamSet<T>) -> Result<()> {
    Ok(())
}

/// Trains from `model.init_params(config.seed)` for `config.epochs` epochs.
pub fn train<T: Scalar>(
    model: &Model,
    train_set: &Dataset<T>,
    test_set: Option<&Dataset<T>>,
    config: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    let init = model.init_params(config.seed);
    train_from(
        model,
        train_set,
        test_set,
        config,
        init,
        None,
        &mut no_hook::<T>,
    )
}

/// Trains until the end-of-epoch train loss is at most `target_loss`, or the
/// epoch budget runs out. On success `best` holds the parameters of the
/// stopping epoch.
pub fn stop_at_loss<T: Scalar>(
    model: &Model,
    train_set: &Dataset<T>,
    test_set: Option<&Dataset<T>>,
    config: &TrainConfig,
    target_loss: f64,
) -> Result<TrainOutcome<T>> {
    if !(target_loss >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "target loss must be non-negative, got {target_loss}"
        )));
    }
    let init = model.init_params(config.seed);
    train_from(
        model,
        train_set,
        test_set,
        config,
        init,
        Some(target_loss),
        &mut no_hook::<T>,
    )
}

/// The general loop behind [`train`] and [`stop_at_loss`].
///
/// Each epoch visits the train set once in an order drawn from stream
/// `epoch` of a ChaCha generator seeded with `config.seed`, then evaluates
/// the loss on the full train set and, if given, the test set.
pub fn train_from<T: Scalar, M: Network<T> + ?Sized>(
    model: &M,
    train_set: &Dataset<T>,
    test_set: Option<&Dataset<T>>,
    config: &TrainConfig,
    init: ParamSet<T>,
    target_loss: Option<f64>,
    hook: &mut dyn EpochHook<T>,
) -> Result<TrainOutcome<T>> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    model.check_params(&init)?;
    let train_obj = DatasetObjective::new(model, train_set, config.reduction);
    let test_obj = test_set
        .filter(|d| !d.is_empty())
        .map(|d| DatasetObjective::new(model, d, config.reduction));

    let start = Instant::now();
    let initial = train_obj.loss(&init)?.as_f64();
    let mut log = TrainLog {
        config: *config,
        initial_train_loss: initial,
        epochs: Vec::with_capacity(config.epochs),
        best_epoch: 0,
        best_train_loss: initial,
        diverged: None,
        target_loss,
        stop: None,
        wall_seconds: Vec::with_capacity(config.epochs),
    };
    let mut params = init.clone();
    let mut best = init;
    let mut velocity = params.zeros_like();
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    'epochs: for epoch in 1..=config.epochs {
        if config.shuffle {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(epoch as u64);
            order.sort_unstable();
            order.shuffle(&mut rng);
        }
        for (step, idx) in order.chunks(config.batch_size).enumerate() {
            let (x, y) = train_set.batch(idx)?;
            let (loss, grads) = model.loss_and_grad(&params, &x, &y, config.reduction)?;
            if !loss.is_finite() || !grads.is_finite() {
                log.diverged = Some(Divergence {
                    epoch,
                    step: Some(step),
                    loss: loss.as_f64(),
                });
                break 'epochs;
            }
            let (p, v) = sgd_step(&params, &grads, &velocity, config)?;
            if !p.is_finite() {
                log.diverged = Some(Divergence {
                    epoch,
                    step: Some(step),
                    loss: f64::INFINITY,
                });
                break 'epochs;
            }
            params = p;
            velocity = v;
        }
        let train_loss = train_obj.loss(&params)?.as_f64();
        if !train_loss.is_finite() {
            log.diverged = Some(Divergence {
                epoch,
                step: None,
                loss: train_loss,
            });
            break;
        }
        let test_loss = match &test_obj {
            Some(o) => Some(o.loss(&params)?.as_f64()),
            None => None,
        };
        let record = EpochRecord {
            epoch,
            train_loss,
            test_loss,
        };
        log.epochs.push(record);
        log.wall_seconds.push(start.elapsed().as_secs_f64());
        hook.on_epoch(&record, &params)?;
        if train_loss < log.best_train_loss || log.best_epoch == 0 {
            log.best_epoch = epoch;
            log.best_train_loss = train_loss;
            best = params.clone();
        }
        if let Some(target) = target_loss {
            if train_loss <= target {
                log.stop = Some(StopOutcome::Reached { epoch, train_loss });
                best = params.clone();
                break;
            }
        }
    }
    if target_loss.is_some() && log.stop.is_none() {
        log.stop = Some(StopOutcome::NotReached {
            epochs: log.epochs.len(),
            best_train_loss: log.best_train_loss,
        });
    }
    Ok(TrainOutcome {
        log,
        best,
        last: params,
    })
}
