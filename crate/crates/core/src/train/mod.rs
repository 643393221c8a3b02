//! Mini-batch training with Adam, per-epoch loss curves, early stopping and
//! resumable training state.

mod state;

pub use state::{checkpoint, resume, STATE_MAGIC, STATE_VERSION};

use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::PathBuf;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::loss::{pose_residuals, select_beta, DEFAULT_BETA};
use crate::optim::{AdamConfig, AdamState};
use crate::pose::{canonical_quaternion, Pose};
use crate::posenet::{NetworkSpec, PoseNet};
use crate::tensor::Tensor;

/// Frames per forward pass when evaluating.
const EVAL_CHUNK: usize = 64;

/// Rotation weight in the pose loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BetaChoice {
    Fixed(f64),
    /// Ratio of the error scales of a constant mean-pose predictor on the
    /// training set.
    Auto,
}

impl Default for BetaChoice {
    fn default() -> Self {
        Self::Fixed(DEFAULT_BETA)
    }
}

impl FromStr for BetaChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "auto" {
            return Ok(Self::Auto);
        }
        match s.parse::<f64>() {
            Ok(v) if v > 0.0 && v.is_finite() => Ok(Self::Fixed(v)),
            _ => Err(Error::InvalidArgument(format!(
                "beta must be `auto` or a positive number, got `{s}`"
            ))),
        }
    }
}

impl fmt::Display for BetaChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Fixed(v) => write!(f, "{v}"),
            Self::Auto => f.write_str("auto"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    /// Learning rate of epoch `e` (0-based) is `base_lr * lr_decay^e`.
    pub lr_decay: f64,
    pub beta: BetaChoice,
    /// `(layer pattern, multiplier)` rules, applied in order.
    pub lr_schedule: Vec<(String, f64)>,
    /// Stop after this many epochs without a new best validation loss.
    pub early_stop_patience: Option<usize>,
    pub seed: u64,
    /// Moment decay rates and epsilon; the step size comes from `base_lr`.
    pub adam: AdamConfig,
    /// Per-epoch log, tab-separated `epoch train_t train_r val_t val_r lr`.
    pub log_path: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 64,
            base_lr: 0.001,
            lr_decay: 0.95,
            beta: BetaChoice::default(),
            lr_schedule: Vec::new(),
            early_stop_patience: Some(10),
            seed: 0,
            adam: AdamConfig::default(),
            log_path: None,
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
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "base learning rate must be positive, got {}",
                self.base_lr
            )));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "learning-rate decay must lie in (0, 1], got {}",
                self.lr_decay
            )));
        }
        if let BetaChoice::Fixed(b) = self.beta {
            if !(b > 0.0 && b.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "beta must be positive, got {b}"
                )));
            }
        }
        Ok(())
    }

    pub fn learning_rate(&self, epoch: usize) -> f64 {
        self.base_lr * self.lr_decay.powi(epoch as i32)
    }
}

/// Learning-rate rules for fine-tuning from pretrained weights: the stem
/// convolutions move slowly while the pose head trains at full rate.
pub fn transfer_lr_schedule(spec: &NetworkSpec) -> Vec<(String, f64)> {
    let mut rules: Vec<(String, f64)> = spec
        .stem_layer_names()
        .into_iter()
        .map(|n| (n, 0.1))
        .collect();
    rules.push(("fc".into(), 1.0));
    rules.push(("regressor".into(), 1.0));
    rules
}

/// Losses of one epoch. Rotation entries already include the beta factor,
/// so the total loss is the sum of the two components.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    /// 1-based epoch number.
    pub epoch: usize,
    pub train_translation: f64,
    pub train_rotation: f64,
    pub val_translation: f64,
    pub val_rotation: f64,
    pub learning_rate: f64,
}

impl EpochRecord {
    pub fn train_loss(&self) -> f64 {
        self.train_translation + self.train_rotation
    }

    pub fn val_loss(&self) -> f64 {
        self.val_translation + self.val_rotation
    }

    /// The tab-separated log line, without newline.
    pub fn log_line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}",
            self.epoch,
            self.train_translation,
            self.train_rotation,
            self.val_translation,
            self.val_rotation,
            self.learning_rate
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossCurve {
    pub records: Vec<EpochRecord>,
}

impl LossCurve {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    /// Record with the lowest validation loss; the earliest wins ties.
    pub fn best(&self) -> Option<&EpochRecord> {
        self.records
            .iter()
            .fold(None, |best: Option<&EpochRecord>, r| match best {
                Some(b) if b.val_loss() <= r.val_loss() => Some(b),
                _ => Some(r),
            })
    }
}

/// Mean translation loss and mean beta-weighted rotation loss over `ds`,
/// without touching the weights.
pub fn evaluate_epoch(net: &PoseNet, ds: &Dataset, beta: f64) -> Result<(f64, f64)> {
    if ds.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot evaluate an empty dataset".into(),
        ));
    }
    let (mut t_sum, mut r_sum) = (0.0, 0.0);
    let indices: Vec<usize> = (0..ds.len()).collect();
    for chunk in indices.chunks(EVAL_CHUNK) {
        let (images, targets) = ds.batch(chunk)?;
        let preds = net.forward_pose(&images)?;
        let (t, r) = residual_sums(&preds, &targets);
        t_sum += t;
        r_sum += r;
    }
    let n = ds.len() as f64;
    Ok((t_sum / n, beta * r_sum / n))
}

fn residual_sums(preds: &[Pose], targets: &Tensor) -> (f64, f64) {
    let (mut t, mut r) = (0.0, 0.0);
    for (p, row) in preds.iter().zip(targets.data().chunks(7)) {
        let res = pose_residuals(p, &Pose::from_raw(row));
        t += res.translation;
        r += res.rotation;
    }
    (t, r)
}

/// Beta from a constant predictor that always outputs the mean pose.
pub fn pilot_beta(ds: &Dataset) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot pick beta from an empty dataset".into(),
        ));
    }
    let n = ds.len() as f64;
    let mut mean = [0.0; 7];
    for s in &ds.samples {
        for (m, v) in mean.iter_mut().zip(s.pose.to_raw()) {
            *m += v / n;
        }
    }
    let baseline = Pose::new(
        [mean[0], mean[1], mean[2]],
        canonical_quaternion([mean[3], mean[4], mean[5], mean[6]]),
    );
    let (mut t, mut r) = (0.0, 0.0);
    for s in &ds.samples {
        let res = pose_residuals(&baseline, &s.pose);
        t += res.translation / n;
        r += res.rotation / n;
    }
    select_beta(t, r)
}

/// Sample order of one epoch; a pure function of `(seed, epoch)`.
pub fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// Weights with the lowest validation loss seen so far.
#[derive(Debug, Clone, PartialEq)]
pub struct BestWeights {
    pub epoch: usize,
    pub val_loss: f64,
    pub weights: Vec<Tensor>,
}

/// Everything needed to continue a run exactly where it stopped.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub adam: AdamState,
    pub epochs_done: usize,
    pub curve: LossCurve,
    pub best: Option<BestWeights>,
    pub stale_epochs: usize,
    pub stopped_early: bool,
    pub beta: f64,
}

impl TrainState {
    fn fresh(config: &TrainConfig, beta: f64) -> Self {
        let mut adam = AdamState::new(config.adam);
        adam.set_learning_rate(config.base_lr);
        Self {
            adam,
            epochs_done: 0,
            curve: LossCurve::default(),
            best: None,
            stale_epochs: 0,
            stopped_early: false,
            beta,
        }
    }
}

pub struct Trainer {
    config: TrainConfig,
    state: TrainState,
}

impl Trainer {
    /// Starts a fresh run: resolves beta, applies the learning-rate schedule
    /// to `net` and truncates the log.
    pub fn new(config: TrainConfig, net: &mut PoseNet, train: &Dataset) -> Result<Self> {
        config.validate()?;
        let beta = match config.beta {
            BetaChoice::Fixed(b) => b,
            BetaChoice::Auto => pilot_beta(train)?,
        };
        if let Some(path) = &config.log_path {
            File::create(path)?;
        }
        let state = TrainState::fresh(&config, beta);
        Self::from_state(config, net, state)
    }

    /// Continues from a saved state whose weights are already in `net`.
    pub fn from_state(config: TrainConfig, net: &mut PoseNet, state: TrainState) -> Result<Self> {
        config.validate()?;
        net.set_beta(state.beta)?;
        let rules: Vec<(&str, f64)> = config
            .lr_schedule
            .iter()
            .map(|(p, m)| (p.as_str(), *m))
            .collect();
        net.set_lr_multipliers(&rules)?;
        Ok(Self { config, state })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn into_state(self) -> TrainState {
        self.state
    }

    pub fn is_done(&self) -> bool {
        self.state.stopped_early || self.state.epochs_done >= self.config.epochs
    }

    /// Trains until done or until `max_epochs` more epochs have run.
    /// Returns the number of epochs run.
    pub fn run_epochs(
        &mut self,
        net: &mut PoseNet,
        train: &Dataset,
        val: &Dataset,
        max_epochs: usize,
    ) -> Result<usize> {
        if train.is_empty() || val.is_empty() {
            return Err(Error::InvalidArgument(
                "training and validation sets must be non-empty".into(),
            ));
        }
        let mut ran = 0;
        while ran < max_epochs && !self.is_done() {
            self.run_epoch(net, train, val)?;
            ran += 1;
        }
        Ok(ran)
    }

    fn run_epoch(&mut self, net: &mut PoseNet, train: &Dataset, val: &Dataset) -> Result<()> {
        let epoch = self.state.epochs_done;
        let lr = self.config.learning_rate(epoch);
        self.state.adam.set_learning_rate(lr);
        let order = epoch_order(self.config.seed, epoch, train.len());
        let (mut t_sum, mut r_sum) = (0.0, 0.0);
        for (step, chunk) in order.chunks(self.config.batch_size).enumerate() {
            let (images, targets) = train.batch(chunk)?;
            let (raw, loss, grads) = net.loss_and_gradients(images, targets.clone())?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch: epoch + 1,
                    step: step + 1,
                });
            }
            let preds: Vec<Pose> = raw.data().chunks(7).map(Pose::from_raw).collect();
            let (t, r) = residual_sums(&preds, &targets);
            t_sum += t;
            r_sum += r;
            self.state.adam.step(net.graph_mut().params_mut(), &grads)?;
        }
        let n = train.len() as f64;
        let (val_t, val_r) = evaluate_epoch(net, val, self.state.beta)?;
        let record = EpochRecord {
            epoch: epoch + 1,
            train_translation: t_sum / n,
            train_rotation: self.state.beta * r_sum / n,
            val_translation: val_t,
            val_rotation: val_r,
            learning_rate: lr,
        };
        if let Some(path) = &self.config.log_path {
            let mut log = OpenOptions::new().create(true).append(true).open(path)?;
            writeln!(log, "{}", record.log_line())?;
        }
        self.state.curve.records.push(record);
        self.state.epochs_done += 1;

        let val_loss = record.val_loss();
        if self
            .state
            .best
            .as_ref()
            .is_none_or(|b| val_loss < b.val_loss)
        {
            self.state.best = Some(BestWeights {
                epoch: record.epoch,
                val_loss,
                weights: net.snapshot(),
            });
            self.state.stale_epochs = 0;
        } else {
            self.state.stale_epochs += 1;
            if self
                .config
                .early_stop_patience
                .is_some_and(|p| self.state.stale_epochs >= p)
            {
                self.state.stopped_early = true;
            }
        }
        Ok(())
    }

    /// Loads the best weights seen into `net`.
    pub fn restore_best(&self, net: &mut PoseNet) -> Result<()> {
        match &self.state.best {
            Some(best) => net.restore(&best.weights),
            None => Ok(()),
        }
    }
}

/// Full run: trains to completion and leaves the best-validation weights in
/// `net`.
pub fn train(
    net: &mut PoseNet,
    train: &Dataset,
    val: &Dataset,
    config: &TrainConfig,
) -> Result<LossCurve> {
    let mut trainer = Trainer::new(config.clone(), net, train)?;
    trainer.run_epochs(net, train, val, usize::MAX)?;
    trainer.restore_best(net)?;
    Ok(trainer.into_state().curve)
}
