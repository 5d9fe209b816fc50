//! Losses, learning-rate schedule and the training loop.

mod loss;

pub use loss::{orientation_loss, seg_loss, total_loss, LossReport};

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{augment, collate, Sample};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, EvalOptions};
use crate::network::{Checkpoint, Model, TrainState};
use crate::nn::Session;
use crate::tensor::{NormMode, OptimizerState, Scalar, Sgd};

pub const LOG_HEADER: &str = "epoch,iter,lr,L_seg,L_orient,L_final,val_F1,val_IoU";
pub const LOG_FILE: &str = "train_log.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";

/// Step decay: `lr · factor^k` after the `k`-th milestone epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Schedule {
    pub lr: f64,
    pub steps: Vec<usize>,
    pub factor: f64,
    pub epochs: usize,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule {
            lr: 0.01,
            steps: vec![50, 90, 110],
            factor: 0.1,
            epochs: 120,
        }
    }
}

impl Schedule {
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.steps
            .iter()
            .filter(|&&s| epoch >= s)
            .fold(self.lr, |lr, _| lr * self.factor)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !(self.factor > 0.0 && self.factor <= 1.0) {
            return Err(Error::Config(format!(
                "schedule needs lr > 0 and 0 < factor ≤ 1, got lr {} factor {}",
                self.lr, self.factor
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Config("schedule.epochs must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub schedule: Schedule,
    pub batch_size: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Random rotations and flips per sample and epoch.
    pub augment: bool,
    /// Orientation cross-entropy over road pixels only.
    pub road_only_orientation: bool,
    /// Stop after this many optimizer steps.
    pub max_iters: Option<u64>,
    /// Validate every this many epochs (and after the last one).
    pub val_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            schedule: Schedule::default(),
            batch_size: 4,
            momentum: 0.9,
            weight_decay: 0.0005,
            augment: true,
            road_only_orientation: false,
            max_iters: None,
            val_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        if self.batch_size == 0 || self.val_every == 0 {
            return Err(Error::Config("batch_size and val_every must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config(format!(
                "need 0 ≤ momentum < 1 and weight_decay ≥ 0, got {} and {}",
                self.momentum, self.weight_decay
            )));
        }
        Ok(())
    }

    fn sgd(&self, lr: f64) -> Sgd {
        Sgd {
            lr,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
        }
    }
}

/// One CSV row, written at the end of every epoch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRow {
    pub epoch: usize,
    /// Optimizer steps taken so far.
    pub iter: u64,
    pub lr: f64,
    /// Epoch means over its batches.
    pub l_seg: f64,
    pub l_orient: f64,
    pub l_final: f64,
    pub val_f1: Option<f64>,
    pub val_iou: Option<f64>,
}

impl LogRow {
    pub fn csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{}",
            self.epoch,
            self.iter,
            self.lr,
            self.l_seg,
            self.l_orient,
            self.l_final,
            opt(self.val_f1),
            opt(self.val_iou)
        )
    }
}

#[derive(Clone, Debug)]
pub struct TrainLog<T> {
    pub rows: Vec<LogRow>,
    /// Loss of every optimizer step, in order.
    pub steps: Vec<LossReport>,
    /// State after the last step; resuming from it continues the run.
    pub state: TrainState<T>,
}

/// Seed of the augmentation draw for one sample in one epoch.
fn augment_seed(seed: u64, epoch: usize, index: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ ((epoch as u64) << 32 | index as u64)
}

/// Visiting order of the training set in `epoch`, a pure function of the
/// seed so resumed runs replay the same batches.
pub fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// One SGD step on a batch; returns the batch losses.
pub fn train_step<T: Scalar>(
    model: &mut Model<T>,
    optimizer: &mut OptimizerState<T>,
    batch: &[&Sample],
    road_only_orientation: bool,
) -> Result<LossReport> {
    let (images, targets) = collate(batch)?;
    let mut s = Session::new(&model.params, NormMode::Train);
    let x = s.tape.constant(images.cast::<T>());
    let out = model.net.forward(&mut s, x)?;
    let (loss, report) = total_loss(&mut s.tape, &out, &targets, road_only_orientation)?;
    if !report.l_final.is_finite() {
        return Err(Error::invalid(format!("non-finite loss {report:?}")));
    }
    let grads = s.backward(loss)?;
    let updates = s.into_updates();
    model.params.zero_grad();
    model.params.accumulate(grads);
    model.params.apply_updates(updates);
    optimizer.step(model.params.trainable_mut())?;
    Ok(report)
}

/// Losses of a batch under training-mode normalization, without updating
/// anything.
pub fn batch_loss<T: Scalar>(model: &Model<T>, batch: &[&Sample], road_only_orientation: bool) -> Result<LossReport> {
    let (images, targets) = collate(batch)?;
    let mut s = Session::new(&model.params, NormMode::Train);
    let x = s.tape.constant(images.cast::<T>());
    let out = model.net.forward(&mut s, x)?;
    Ok(total_loss(&mut s.tape, &out, &targets, road_only_orientation)?.1)
}

/// Fresh optimizer state for a model.
pub fn new_state<T: Scalar>(model: &Model<T>, cfg: &TrainConfig) -> TrainState<T> {
    TrainState {
        epoch: 0,
        iter: 0,
        optimizer: OptimizerState::new(cfg.sgd(cfg.schedule.lr), model.params.trainable().map(|(_, t)| t)),
    }
}

/// Trains `model` with shuffled, optionally augmented mini-batches.
///
/// With `out_dir`, every epoch appends a row to `train_log.csv` and rewrites
/// `checkpoint.bin` with the model and optimizer state. Passing the state of
/// a previous run as `resume` continues it exactly: batch order and
/// augmentation depend only on `seed`, the epoch and the sample index.
pub fn fit<T: Scalar>(
    model: &mut Model<T>,
    train: &[Sample],
    val: &[Sample],
    cfg: &TrainConfig,
    seed: u64,
    out_dir: Option<&Path>,
    resume: Option<TrainState<T>>,
) -> Result<TrainLog<T>> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Dataset("empty training set".into()));
    }
    let div = model.net.input_divisor();
    for s in train.iter().chain(val) {
        s.check()?;
        if s.height % div != 0 || s.width % div != 0 {
            return Err(Error::Dataset(format!(
                "sample extent {}×{} is not a multiple of the network input divisor {div}",
                s.height, s.width
            )));
        }
    }
    let mut state = resume.unwrap_or_else(|| new_state(model, cfg));
    if state.optimizer.velocity.len() != model.params.trainable().count() {
        return Err(Error::Checkpoint("optimizer state does not match the model".into()));
    }
    let mut log_file = match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let path = dir.join(LOG_FILE);
            let fresh = state.epoch == 0 || !path.exists();
            let mut f = OpenOptions::new()
                .create(true)
                .write(true)
                .append(!fresh)
                .truncate(fresh)
                .open(&path)
                .map_err(|e| Error::io(&path, e))?;
            if fresh {
                writeln!(f, "{LOG_HEADER}").map_err(|e| Error::io(&path, e))?;
            }
            Some((f, path))
        }
        None => None,
    };

    let mut rows = Vec::new();
    let mut steps = Vec::new();
    let epochs = cfg.schedule.epochs;
    let out_of_iters = |iter: u64| cfg.max_iters.is_some_and(|m| iter >= m);
    while (state.epoch as usize) < epochs && !out_of_iters(state.iter) {
        let epoch = state.epoch as usize;
        let lr = cfg.schedule.lr_at(epoch);
        state.optimizer.hyper = cfg.sgd(lr);
        let order = epoch_order(seed, epoch, train.len());
        // A run stopped by `max_iters` may end mid-epoch; resume after the
        // batches it already took.
        let per_epoch = train.len().div_ceil(cfg.batch_size) as u64;
        let done = state.iter.saturating_sub(epoch as u64 * per_epoch).min(per_epoch) as usize;
        let mut sums = [0.0f64; 3];
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size).skip(done) {
            if out_of_iters(state.iter) {
                break;
            }
            let owned: Vec<Sample> = chunk
                .iter()
                .map(|&i| {
                    if cfg.augment {
                        augment(&train[i], augment_seed(seed, epoch, i))
                    } else {
                        train[i].clone()
                    }
                })
                .collect();
            let batch: Vec<&Sample> = owned.iter().collect();
            let report = train_step(model, &mut state.optimizer, &batch, cfg.road_only_orientation)?;
            state.iter += 1;
            sums[0] += report.l_seg;
            sums[1] += report.l_orient;
            sums[2] += report.l_final;
            batches += 1;
            steps.push(report);
        }
        if done + batches == per_epoch as usize {
            state.epoch += 1;
        }
        let last = state.epoch as usize == epochs || out_of_iters(state.iter);
        let (val_f1, val_iou) = if !val.is_empty() && (last || (epoch + 1) % cfg.val_every == 0) {
            let r = evaluate(&*model, val, &EvalOptions::default())?;
            (Some(r.f1), Some(r.iou_a))
        } else {
            (None, None)
        };
        let n = batches.max(1) as f64;
        let row = LogRow {
            epoch,
            iter: state.iter,
            lr,
            l_seg: sums[0] / n,
            l_orient: sums[1] / n,
            l_final: sums[2] / n,
            val_f1,
            val_iou,
        };
        if let Some((f, path)) = log_file.as_mut() {
            writeln!(f, "{}", row.csv()).map_err(|e| Error::io(&*path, e))?;
            f.flush().map_err(|e| Error::io(&*path, e))?;
        }
        if let Some(dir) = out_dir {
            Checkpoint::from_model(model, Some(state.clone())).save(dir.join(CHECKPOINT_FILE))?;
        }
        rows.push(row);
    }
    Ok(TrainLog { rows, steps, state })
}
