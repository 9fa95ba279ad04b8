//! Trajectory-level prediction: given the observed part of a letter and its
//! task label, predict the rest so it can be finished autonomously.
//!
//! One predictor is trained per observation fraction. Inputs are the
//! z-scored window resampled to a fixed number of points with the one-hot
//! label appended to every step; the output is the z-scored suffix at a
//! fixed number of points, interpolated back to the true suffix length.

mod curve;

pub use curve::{traj_error_curve, write_rrmse_table, RrmseRow, TrajErrorCurve, DEFAULT_THETA_TRAJ};

use ndarray::{Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{window_len, ChannelStats, DataError, Dataset, Observation, SplitKind, Trajectory, N_CHANNELS};
use crate::nn::{
    mse_loss, shuffled_indices, Activation, Checkpoint, Conv1d, Dense, EarlyStopping, Layer, Lstm, Network, NnError,
    Optimizer, SeqBatch, Signal,
};
use crate::rng::stream;

/// Observation fractions with a dedicated predictor.
pub const FRACTION_GRID: [f64; 5] = [0.5, 0.6, 0.7, 0.8, 0.9];

const CHECKPOINT_KIND: f64 = 2.0;

#[derive(Debug, Error)]
pub enum TrajError {
    #[error("sequences differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("relative error undefined for an all-zero reference")]
    ZeroReference,
    #[error("nothing left to predict (suffix length 0)")]
    EmptySuffix,
    #[error("empty {0}")]
    Empty(&'static str),
    #[error("label {label} outside the {n_classes} trained classes")]
    UnknownLabel { label: usize, n_classes: usize },
    #[error("invalid error curve: {0}")]
    InvalidCurve(String),
    #[error("invalid predictor config: {0}")]
    InvalidConfig(String),
    #[error("training diverged at epoch {epoch}: {source}")]
    Diverged { epoch: usize, source: NnError },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictorKind {
    Lstm,
    Cnn,
}

impl PredictorKind {
    pub fn name(self) -> &'static str {
        match self {
            PredictorKind::Lstm => "lstm",
            PredictorKind::Cnn => "cnn",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictorConfig {
    pub kind: PredictorKind,
    /// LSTM cells or convolution filters.
    pub cells: usize,
    pub kernel_width: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    /// Points the observed window is resampled to.
    pub input_points: usize,
    /// Points the predicted suffix is represented by.
    pub output_points: usize,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self::for_kind(PredictorKind::Lstm)
    }
}

impl PredictorConfig {
    pub fn for_kind(kind: PredictorKind) -> Self {
        Self {
            kind,
            cells: 128,
            kernel_width: 5,
            batch_size: 128,
            learning_rate: 3e-3,
            max_epochs: 1000,
            patience: 10,
            input_points: 16,
            output_points: 16,
        }
    }

    pub fn activation(&self) -> Activation {
        match self.kind {
            PredictorKind::Lstm => Activation::Tanh,
            PredictorKind::Cnn => Activation::Relu,
        }
    }

    pub fn validate(&self) -> Result<(), TrajError> {
        if self.cells == 0 || self.kernel_width == 0 || self.batch_size == 0 || self.max_epochs == 0 {
            return Err(TrajError::InvalidConfig(
                "cells, kernel_width, batch_size and max_epochs must be positive".into(),
            ));
        }
        if self.input_points < 2 || self.output_points < 2 {
            return Err(TrajError::InvalidConfig("input/output points must be at least 2".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(TrajError::InvalidConfig("learning_rate must be positive".into()));
        }
        Ok(())
    }
}

/// Relative root-mean-square error in percent over all samples and channels:
/// `100 * sqrt(mean((p - y)^2)) / sqrt(mean(y^2))`.
pub fn rrmse(predicted: &[Observation], truth: &[Observation]) -> Result<f64, TrajError> {
    if predicted.len() != truth.len() {
        return Err(TrajError::LengthMismatch(predicted.len(), truth.len()));
    }
    let (mut num, mut den) = (0.0, 0.0);
    for (p, y) in predicted.iter().zip(truth) {
        for (a, b) in p.to_array().into_iter().zip(y.to_array()) {
            num += (a - b) * (a - b);
            den += b * b;
        }
    }
    if den == 0.0 {
        return Err(TrajError::ZeroReference);
    }
    Ok(100.0 * (num / den).sqrt())
}

/// Linear resampling of `xs` onto `k` evenly spaced positions spanning the
/// first to the last element.
fn resample(xs: &[[f64; N_CHANNELS]], k: usize) -> Vec<[f64; N_CHANNELS]> {
    let n = xs.len();
    if n == 1 || k == 1 {
        return vec![xs[0]; k];
    }
    (0..k)
        .map(|j| {
            let pos = j as f64 * (n - 1) as f64 / (k - 1) as f64;
            let i0 = (pos.floor() as usize).min(n - 2);
            let w = pos - i0 as f64;
            std::array::from_fn(|c| xs[i0][c] * (1.0 - w) + xs[i0 + 1][c] * w)
        })
        .collect()
}

/// Trained suffix predictor for one observation fraction.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictor {
    pub kind: PredictorKind,
    pub fraction: f64,
    pub net: Network,
    pub stats: ChannelStats,
    pub n_classes: usize,
    pub input_points: usize,
    pub output_points: usize,
    /// (epoch, train loss, validation mean RRMSE)
    pub log: Vec<(usize, f64, f64)>,
}

impl Predictor {
    fn build(cfg: &PredictorConfig, n_classes: usize, rng: &mut impl Rng) -> Network {
        let inputs = N_CHANNELS + n_classes;
        let outputs = cfg.output_points * N_CHANNELS;
        let layers = match cfg.kind {
            PredictorKind::Lstm => vec![
                Layer::Lstm(Lstm::new(inputs, cfg.cells, rng)),
                Layer::Dense(Dense::new(cfg.cells, outputs, Activation::Linear, rng)),
            ],
            PredictorKind::Cnn => vec![
                Layer::Conv1d(Conv1d::new(inputs, cfg.cells, cfg.kernel_width, cfg.activation(), rng)),
                Layer::GlobalAvgPool,
                Layer::Dense(Dense::new(cfg.cells, outputs, Activation::Linear, rng)),
            ],
        };
        Network::new(layers).expect("widths compose by construction")
    }

    fn encode_input(&self, observed: &[Observation], label: usize) -> Array2<f64> {
        let norm: Vec<_> = observed.iter().map(|s| self.stats.normalize(s.to_array())).collect();
        let pts = resample(&norm, self.input_points);
        let mut x = Array2::zeros((self.input_points, N_CHANNELS + self.n_classes));
        for (i, p) in pts.iter().enumerate() {
            for c in 0..N_CHANNELS {
                x[[i, c]] = p[c];
            }
            x[[i, N_CHANNELS + label]] = 1.0;
        }
        x
    }

    fn encode_target(&self, suffix: &[Observation]) -> Vec<f64> {
        let norm: Vec<_> = suffix.iter().map(|s| self.stats.normalize(s.to_array())).collect();
        resample(&norm, self.output_points).into_iter().flatten().collect()
    }

    fn decode(&self, row: ndarray::ArrayView1<'_, f64>, suffix_len: usize) -> Vec<Observation> {
        let pts: Vec<[f64; N_CHANNELS]> = (0..self.output_points)
            .map(|j| std::array::from_fn(|c| row[j * N_CHANNELS + c]))
            .collect();
        resample(&pts, suffix_len)
            .into_iter()
            .map(|p| Observation::from_array(self.stats.denormalize(p)))
            .collect()
    }

    fn check_label(&self, label: usize) -> Result<(), TrajError> {
        if label >= self.n_classes {
            return Err(TrajError::UnknownLabel {
                label,
                n_classes: self.n_classes,
            });
        }
        Ok(())
    }

    /// Predicts the `total_len - observed.len()` samples following `observed`.
    pub fn predict_remaining(
        &self,
        observed: &[Observation],
        total_len: usize,
        label: usize,
    ) -> Result<Vec<Observation>, TrajError> {
        Ok(self.predict_batch(&[(observed, total_len, label)])?.remove(0))
    }

    pub fn predict_batch(&self, items: &[(&[Observation], usize, usize)]) -> Result<Vec<Vec<Observation>>, TrajError> {
        for &(obs, total, label) in items {
            if obs.is_empty() {
                return Err(TrajError::Empty("observation window"));
            }
            if total <= obs.len() {
                return Err(TrajError::EmptySuffix);
            }
            self.check_label(label)?;
        }
        let mut out = Vec::with_capacity(items.len());
        for chunk in items.chunks(256) {
            let seqs: Vec<_> = chunk.iter().map(|&(o, _, l)| self.encode_input(o, l)).collect();
            let y = self.net.predict(Signal::Seq(SeqBatch::from_sequences(&seqs)?))?;
            for (row, &(o, total, _)) in y.axis_iter(Axis(0)).zip(chunk) {
                out.push(self.decode(row, total - o.len()));
            }
        }
        Ok(out)
    }

    /// Per-trajectory RRMSE (percent) of the predicted suffix at this
    /// predictor's fraction.
    pub fn evaluate(&self, trajs: &[&Trajectory]) -> Result<Vec<f64>, TrajError> {
        let mut items = Vec::with_capacity(trajs.len());
        for t in trajs {
            let n = window_len(self.fraction, t.len()).clamp(1, t.len() - 1);
            items.push((&t.samples[..n], t.len(), t.label));
        }
        let preds = self.predict_batch(&items)?;
        preds
            .iter()
            .zip(trajs)
            .map(|(p, t)| rrmse(p, &t.samples[t.len() - p.len()..]))
            .collect()
    }

    pub fn mean_rrmse(&self, trajs: &[&Trajectory]) -> Result<f64, TrajError> {
        if trajs.is_empty() {
            return Err(TrajError::Empty("evaluation split"));
        }
        let v = self.evaluate(trajs)?;
        Ok(v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::new(self.net.clone())
            .with("kind", vec![CHECKPOINT_KIND])
            .with(
                "predictor",
                vec![
                    match self.kind {
                        PredictorKind::Lstm => 0.0,
                        PredictorKind::Cnn => 1.0,
                    },
                    self.fraction,
                    self.n_classes as f64,
                    self.input_points as f64,
                    self.output_points as f64,
                ],
            )
            .with("stats", self.stats.to_vec())
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self, TrajError> {
        if ck.require("kind")? != [CHECKPOINT_KIND] {
            return Err(NnError::Checkpoint("not a trajectory predictor checkpoint".into()).into());
        }
        let p = ck.require("predictor")?;
        if p.len() != 5 {
            return Err(NnError::Checkpoint("malformed predictor descriptor".into()).into());
        }
        let stats = ChannelStats::from_slice(ck.require("stats")?)
            .ok_or_else(|| NnError::Checkpoint("malformed normalisation stats".into()))?;
        Ok(Self {
            kind: if p[0] == 0.0 { PredictorKind::Lstm } else { PredictorKind::Cnn },
            fraction: p[1],
            n_classes: p[2] as usize,
            input_points: p[3] as usize,
            output_points: p[4] as usize,
            stats,
            net: ck.network,
            log: Vec::new(),
        })
    }
}

fn training_pairs(p: &Predictor, trajs: &[&Trajectory]) -> Vec<(Array2<f64>, Vec<f64>)> {
    trajs
        .iter()
        .map(|t| {
            let n = window_len(p.fraction, t.len()).clamp(1, t.len() - 1);
            (p.encode_input(&t.samples[..n], t.label), p.encode_target(&t.samples[n..]))
        })
        .collect()
}

/// Trains one predictor for `fraction`, early-stopping on validation mean
/// RRMSE and keeping the best weights.
pub fn train_predictor(ds: &Dataset, cfg: &PredictorConfig, fraction: f64, seed: u64) -> Result<Predictor, TrajError> {
    cfg.validate()?;
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(TrajError::InvalidConfig(format!("fraction {fraction} outside (0, 1)")));
    }
    let train = ds.subset(SplitKind::Train);
    let val = ds.subset(SplitKind::Validation);
    if train.is_empty() {
        return Err(TrajError::Empty("training split"));
    }
    if val.is_empty() {
        return Err(TrajError::Empty("validation split"));
    }
    let mut rng = stream(seed, &[0x7EA1, (fraction * 1000.0).round() as u64, cfg.kind as u64]);
    let mut p = Predictor {
        kind: cfg.kind,
        fraction,
        net: Predictor::build(cfg, ds.n_classes, &mut rng),
        stats: ChannelStats::from_trajectories(train.iter().copied()),
        n_classes: ds.n_classes,
        input_points: cfg.input_points,
        output_points: cfg.output_points,
        log: Vec::new(),
    };
    let pairs = training_pairs(&p, &train);
    let mut opt = Optimizer::adam(cfg.learning_rate)?;
    let mut stopper = EarlyStopping::new(cfg.patience.max(1), false);
    let mut log = Vec::new();
    for epoch in 1..=cfg.max_epochs {
        let order = shuffled_indices(pairs.len(), &mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let seqs: Vec<_> = batch.iter().map(|&i| pairs[i].0.clone()).collect();
            let width = pairs[0].1.len();
            let target = Array2::from_shape_fn((batch.len(), width), |(r, c)| pairs[batch[r]].1[c]);
            let (out, tape) = p.net.forward_train(Signal::Seq(SeqBatch::from_sequences(&seqs)?))?;
            let (loss, grad) = mse_loss(&out.into_flat()?, &target)?;
            if !loss.is_finite() {
                return Err(TrajError::Diverged {
                    epoch,
                    source: NnError::NonFinite {
                        what: "loss".into(),
                        step: opt.steps() + 1,
                    },
                });
            }
            let grads = p.net.backward(tape, Signal::Flat(grad))?;
            opt.apply(&mut p.net, &grads)
                .map_err(|source| TrajError::Diverged { epoch, source })?;
            loss_sum += loss * batch.len() as f64;
        }
        let val_rrmse = p.mean_rrmse(&val)?;
        log.push((epoch, loss_sum / pairs.len() as f64, val_rrmse));
        if stopper.observe(val_rrmse, &p.net) {
            break;
        }
    }
    if let Some(best) = stopper.into_best() {
        p.net = best;
    }
    p.log = log;
    Ok(p)
}
