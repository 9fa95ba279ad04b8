use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{AccuracyCurve, IntentError, IntentionEstimate};
use crate::data::{window_len, ChannelStats, Dataset, Observation, SplitKind, Trajectory, N_CHANNELS};
use crate::nn::{
    shuffled_indices, softmax_rows, softmax_cross_entropy, Activation, Checkpoint, Conv1d, Dense, EarlyStopping,
    Layer, Network, NnError, Optimizer, SeqBatch, Signal,
};
use crate::rng::stream;

const CHECKPOINT_KIND: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    pub conv_layers: usize,
    /// Filters per convolution layer.
    pub filters: usize,
    pub kernel_width: usize,
    pub leak: f64,
    /// Hidden dense layers between pooling and the softmax head.
    pub dense_widths: Vec<usize>,
    pub batch_size: usize,
    pub patience: usize,
    pub max_epochs: usize,
    pub learning_rate: f64,
    /// Keep every k-th sample (counted back from the newest) before the
    /// convolution stack.
    pub decimation: usize,
    /// Training windows cover a uniform random fraction in `[min_train_fraction, 1]`.
    pub min_train_fraction: f64,
    pub windows_per_trajectory: usize,
    /// Fractions at which validation accuracy is averaged for early stopping.
    pub val_fractions: Vec<f64>,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            conv_layers: 2,
            filters: 128,
            kernel_width: 5,
            leak: Activation::DEFAULT_LEAK,
            dense_widths: vec![64],
            batch_size: 64,
            patience: 10,
            max_epochs: 60,
            learning_rate: 1e-3,
            decimation: 8,
            min_train_fraction: 0.2,
            windows_per_trajectory: 1,
            val_fractions: vec![0.2, 0.4, 0.6, 0.8, 1.0],
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<(), IntentError> {
        let bad = |m: &str| Err(IntentError::InvalidConfig(m.into()));
        if self.conv_layers == 0 || self.filters == 0 || self.kernel_width == 0 {
            return bad("conv_layers, filters and kernel_width must be positive");
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.decimation == 0 || self.windows_per_trajectory == 0 {
            return bad("batch_size, max_epochs, decimation and windows_per_trajectory must be positive");
        }
        if self.dense_widths.contains(&0) {
            return bad("dense widths must be positive");
        }
        if !(self.min_train_fraction > 0.0 && self.min_train_fraction <= 1.0) {
            return bad("min_train_fraction must lie in (0, 1]");
        }
        if self.val_fractions.is_empty() || self.val_fractions.iter().any(|&f| !(f > 0.0 && f <= 1.0)) {
            return bad("val_fractions must be non-empty and inside (0, 1]");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub val_accuracy: f64,
}

/// Trained CNN intention classifier with its input normalisation.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    pub net: Network,
    pub stats: ChannelStats,
    pub decimation: usize,
    pub n_classes: usize,
    pub log: Vec<EpochLog>,
}

impl Classifier {
    fn build(cfg: &ClassifierConfig, n_classes: usize, rng: &mut impl Rng) -> Network {
        let act = Activation::LeakyRelu(cfg.leak);
        let mut layers = Vec::new();
        let mut ch = N_CHANNELS;
        for _ in 0..cfg.conv_layers {
            layers.push(Layer::Conv1d(Conv1d::new(ch, cfg.filters, cfg.kernel_width, act, rng)));
            ch = cfg.filters;
        }
        layers.push(Layer::GlobalAvgPool);
        for &w in &cfg.dense_widths {
            layers.push(Layer::Dense(Dense::new(ch, w, act, rng)));
            ch = w;
        }
        layers.push(Layer::Dense(Dense::new(ch, n_classes, Activation::Linear, rng)));
        Network::new(layers).expect("layer widths compose by construction")
    }

    /// Decimated, z-scored `time x channels` input for a window.
    fn encode(&self, samples: &[Observation]) -> Array2<f64> {
        encode(samples, &self.stats, self.decimation)
    }

    pub fn predict_intention(&self, observed: &[Observation], fraction: f64) -> Result<IntentionEstimate, IntentError> {
        Ok(self.predict_batch(&[observed], fraction)?.remove(0))
    }

    pub fn predict_batch(&self, windows: &[&[Observation]], fraction: f64) -> Result<Vec<IntentionEstimate>, IntentError> {
        if windows.iter().any(|w| w.is_empty()) {
            return Err(IntentError::Empty("observation window"));
        }
        let mut out = Vec::with_capacity(windows.len());
        for chunk in windows.chunks(256) {
            let seqs: Vec<_> = chunk.iter().map(|w| self.encode(w)).collect();
            let logits = self.net.predict(Signal::Seq(SeqBatch::from_sequences(&seqs)?))?;
            for row in softmax_rows(&logits).rows() {
                out.push(IntentionEstimate {
                    probs: row.to_vec(),
                    observation_fraction: fraction,
                });
            }
        }
        Ok(out)
    }

    /// Top-1 accuracy over `trajs` observed up to `fraction`.
    pub fn accuracy(&self, trajs: &[&Trajectory], fraction: f64) -> Result<f64, IntentError> {
        if trajs.is_empty() {
            return Err(IntentError::Empty("evaluation split"));
        }
        let windows: Vec<&[Observation]> = trajs
            .iter()
            .map(|t| &t.samples[..window_len(fraction, t.len()).clamp(1, t.len())])
            .collect();
        let est = self.predict_batch(&windows, fraction)?;
        let hits = est.iter().zip(trajs).filter(|(e, t)| e.argmax() == t.label).count();
        Ok(hits as f64 / trajs.len() as f64)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::new(self.net.clone())
            .with("kind", vec![CHECKPOINT_KIND])
            .with("stats", self.stats.to_vec())
            .with("decimation", vec![self.decimation as f64])
            .with("n_classes", vec![self.n_classes as f64])
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self, IntentError> {
        if ck.require("kind")? != [CHECKPOINT_KIND] {
            return Err(NnError::Checkpoint("not an intention classifier checkpoint".into()).into());
        }
        let stats = ChannelStats::from_slice(ck.require("stats")?)
            .ok_or_else(|| NnError::Checkpoint("malformed normalisation stats".into()))?;
        let decimation = ck.require("decimation")?.first().copied().unwrap_or(1.0) as usize;
        let n_classes = ck.require("n_classes")?.first().copied().unwrap_or(0.0) as usize;
        Ok(Self {
            net: ck.network,
            stats,
            decimation: decimation.max(1),
            n_classes,
            log: Vec::new(),
        })
    }
}

fn encode(samples: &[Observation], stats: &ChannelStats, decimation: usize) -> Array2<f64> {
    let n = samples.len();
    let first = (n - 1) % decimation;
    let picked: Vec<_> = samples[first..].iter().step_by(decimation).collect();
    let mut x = Array2::zeros((picked.len(), N_CHANNELS));
    for (i, s) in picked.iter().enumerate() {
        for (c, v) in stats.normalize(s.to_array()).into_iter().enumerate() {
            x[[i, c]] = v;
        }
    }
    x
}

/// Trains on random-fraction windows of the training split, early-stopping
/// on mean validation accuracy over `cfg.val_fractions`. Returns the best
/// weights seen.
pub fn train_classifier(ds: &Dataset, cfg: &ClassifierConfig, seed: u64) -> Result<Classifier, IntentError> {
    cfg.validate()?;
    if ds.n_classes < 2 {
        return Err(IntentError::TooFewClasses(ds.n_classes));
    }
    let train = ds.subset(SplitKind::Train);
    let val = ds.subset(SplitKind::Validation);
    if train.is_empty() {
        return Err(IntentError::Empty("training split"));
    }
    if val.is_empty() {
        return Err(IntentError::Empty("validation split"));
    }
    let mut rng = stream(seed, &[0x1A7E]);
    let stats = ChannelStats::from_trajectories(train.iter().copied());
    let mut clf = Classifier {
        net: Classifier::build(cfg, ds.n_classes, &mut rng),
        stats,
        decimation: cfg.decimation,
        n_classes: ds.n_classes,
        log: Vec::new(),
    };
    let mut opt = Optimizer::adam(cfg.learning_rate)?;
    let mut stopper = EarlyStopping::new(cfg.patience.max(1), true);
    let mut log = Vec::new();

    for epoch in 1..=cfg.max_epochs {
        let mut items: Vec<(Array2<f64>, usize)> = Vec::with_capacity(train.len() * cfg.windows_per_trajectory);
        for t in &train {
            for _ in 0..cfg.windows_per_trajectory {
                let f = rng.random_range(cfg.min_train_fraction..=1.0);
                let n = window_len(f, t.len()).clamp(1, t.len());
                items.push((clf.encode(&t.samples[..n]), t.label));
            }
        }
        let order = shuffled_indices(items.len(), &mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let seqs: Vec<_> = batch.iter().map(|&i| items[i].0.clone()).collect();
            let labels: Vec<_> = batch.iter().map(|&i| items[i].1).collect();
            let (out, tape) = clf.net.forward_train(Signal::Seq(SeqBatch::from_sequences(&seqs)?))?;
            let (loss, grad) = softmax_cross_entropy(&out.into_flat()?, &labels)?;
            if !loss.is_finite() {
                return Err(IntentError::Diverged {
                    epoch,
                    source: NnError::NonFinite {
                        what: "loss".into(),
                        step: opt.steps() + 1,
                    },
                });
            }
            let grads = clf.net.backward(tape, Signal::Flat(grad))?;
            opt.apply(&mut clf.net, &grads)
                .map_err(|source| IntentError::Diverged { epoch, source })?;
            loss_sum += loss * batch.len() as f64;
        }
        let mut val_acc = 0.0;
        for &f in &cfg.val_fractions {
            val_acc += clf.accuracy(&val, f)?;
        }
        val_acc /= cfg.val_fractions.len() as f64;
        log.push(EpochLog {
            epoch,
            loss: loss_sum / items.len() as f64,
            val_accuracy: val_acc,
        });
        if stopper.observe(val_acc, &clf.net) {
            break;
        }
    }
    if let Some(best) = stopper.into_best() {
        clf.net = best;
    }
    clf.log = log;
    Ok(clf)
}

/// Per-fraction top-1 error on `test`. Fractions must be strictly increasing.
pub fn accuracy_curve(clf: &Classifier, test: &[&Trajectory], fractions: &[f64]) -> Result<AccuracyCurve, IntentError> {
    if test.is_empty() {
        return Err(IntentError::Empty("test split"));
    }
    let mut points = Vec::with_capacity(fractions.len());
    for &f in fractions {
        if !(f > 0.0 && f <= 1.0) {
            return Err(IntentError::InvalidCurve(format!("fraction {f} outside (0, 1]")));
        }
        points.push((f, 1.0 - clf.accuracy(test, f)?));
    }
    AccuracyCurve::new(points)
}
