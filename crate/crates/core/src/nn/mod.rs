//! Small neural-network substrate: dense, 1-D convolution, LSTM and global
//! average pooling layers with hand-written backward passes, two losses,
//! SGD/Adam, early stopping and a versioned checkpoint format.
//!
//! Sequences travel through the network packed: a batch of variable-length
//! sequences is one `(sum of lengths) x channels` matrix plus the per-sample
//! lengths, so convolutions become a single GEMM over the whole batch.

mod checkpoint;
mod layers;
mod loss;
mod optim;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use layers::{Activation, Conv1d, Dense, Layer, Lstm};
pub use loss::{cross_entropy, mse, mse_loss, softmax, softmax_cross_entropy, softmax_rows, EPS_LOG};
pub use optim::{EarlyStopping, Optimizer};

use ndarray::{Array2, Axis};
use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite {what} at training step {step}")]
    NonFinite { what: String, step: u64 },
    #[error("invalid hyperparameter: {0}")]
    InvalidParameter(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A batch of sequences packed row-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct SeqBatch {
    /// `(sum(lens)) x channels`, sample `b` occupying rows
    /// `offset(b)..offset(b) + lens[b]`.
    pub data: Array2<f64>,
    pub lens: Vec<usize>,
}

impl SeqBatch {
    pub fn new(data: Array2<f64>, lens: Vec<usize>) -> Result<Self, NnError> {
        if lens.iter().sum::<usize>() != data.nrows() {
            return Err(NnError::Shape(format!(
                "lengths sum to {} but data has {} rows",
                lens.iter().sum::<usize>(),
                data.nrows()
            )));
        }
        if lens.iter().any(|&l| l == 0) {
            return Err(NnError::Shape("empty sequence in batch".into()));
        }
        Ok(Self { data, lens })
    }

    /// Packs `time x channels` sequences.
    pub fn from_sequences(seqs: &[Array2<f64>]) -> Result<Self, NnError> {
        let c = seqs.first().map(|s| s.ncols()).unwrap_or(0);
        if seqs.iter().any(|s| s.ncols() != c) {
            return Err(NnError::Shape("sequences differ in channel count".into()));
        }
        let views: Vec<_> = seqs.iter().map(|s| s.view()).collect();
        let data = if views.is_empty() {
            Array2::zeros((0, c))
        } else {
            ndarray::concatenate(Axis(0), &views).expect("equal channel counts")
        };
        Self::new(data, seqs.iter().map(|s| s.nrows()).collect())
    }

    pub fn batch_size(&self) -> usize {
        self.lens.len()
    }

    pub fn channels(&self) -> usize {
        self.data.ncols()
    }

    pub fn offsets(&self) -> Vec<usize> {
        let mut acc = 0;
        self.lens
            .iter()
            .map(|&l| {
                let o = acc;
                acc += l;
                o
            })
            .collect()
    }

    /// Common length when all sequences are equally long.
    pub fn uniform_len(&self) -> Option<usize> {
        let first = *self.lens.first()?;
        self.lens.iter().all(|&l| l == first).then_some(first)
    }
}

/// Values flowing between layers.
#[derive(Debug, Clone, PartialEq)]
pub enum Signal {
    Seq(SeqBatch),
    Flat(Array2<f64>),
}

impl Signal {
    pub fn into_flat(self) -> Result<Array2<f64>, NnError> {
        match self {
            Signal::Flat(x) => Ok(x),
            Signal::Seq(_) => Err(NnError::Shape("expected flat output, got sequence".into())),
        }
    }

    pub fn batch_size(&self) -> usize {
        match self {
            Signal::Flat(x) => x.nrows(),
            Signal::Seq(s) => s.batch_size(),
        }
    }
}

/// Per-tensor parameter gradients, flattened in [`Network::params`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub Vec<Vec<f64>>);

impl Gradients {
    pub fn all_finite(&self) -> bool {
        self.0.iter().flatten().all(|g| g.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().flatten().map(|g| g * g).sum::<f64>().sqrt()
    }
}

/// Intermediate values recorded by [`Network::forward_train`].
pub struct Tape {
    caches: Vec<layers::Cache>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub layers: Vec<Layer>,
}

impl Network {
    pub fn new(layers: Vec<Layer>) -> Result<Self, NnError> {
        let net = Self { layers };
        net.check_composition()?;
        Ok(net)
    }

    fn check_composition(&self) -> Result<(), NnError> {
        // (is_sequence, width) of the value flowing out of each layer
        let mut cur: Option<(bool, usize)> = None;
        for (i, l) in self.layers.iter().enumerate() {
            let (wants_seq, width) = l.input_kind();
            if let Some((seq, w)) = cur {
                if seq != wants_seq || (width.is_some() && width != Some(w)) {
                    return Err(NnError::Shape(format!(
                        "layer {i} ({}) cannot follow a {} output of width {w}",
                        l.name(),
                        if seq { "sequence" } else { "flat" }
                    )));
                }
            }
            let (out_seq, out_w) = l.output_kind();
            let w = out_w.or(cur.map(|c| c.1)).unwrap_or(0);
            cur = Some((out_seq, w));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    /// Parameter tensors as flat slices, layer by layer.
    pub fn params(&self) -> Vec<&[f64]> {
        self.layers.iter().flat_map(Layer::params).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers.iter_mut().flat_map(Layer::params_mut).collect()
    }

    pub fn all_finite(&self) -> bool {
        self.params().iter().all(|p| p.iter().all(|x| x.is_finite()))
    }

    pub fn forward(&self, x: Signal) -> Result<Signal, NnError> {
        self.layers.iter().try_fold(x, |acc, l| l.forward(acc))
    }

    /// Forward pass returning a flat output.
    pub fn predict(&self, x: Signal) -> Result<Array2<f64>, NnError> {
        self.forward(x)?.into_flat()
    }

    pub fn forward_train(&self, x: Signal) -> Result<(Signal, Tape), NnError> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut cur = x;
        for l in &self.layers {
            let (out, cache) = l.forward_cached(cur)?;
            caches.push(cache);
            cur = out;
        }
        Ok((cur, Tape { caches }))
    }

    /// Back-propagates `grad_out` (gradient of the loss with respect to the
    /// network output) through a recorded forward pass.
    pub fn backward(&self, tape: Tape, grad_out: Signal) -> Result<Gradients, NnError> {
        if tape.caches.len() != self.layers.len() {
            return Err(NnError::Shape("tape does not belong to this network".into()));
        }
        let mut per_layer = Vec::with_capacity(self.layers.len());
        let mut g = grad_out;
        for (i, (l, cache)) in self.layers.iter().zip(tape.caches).enumerate().rev() {
            let (gin, grads) = l.backward(cache, g, i > 0)?;
            per_layer.push(grads);
            g = gin.unwrap_or(Signal::Flat(Array2::zeros((0, 0))));
        }
        per_layer.reverse();
        Ok(Gradients(per_layer.into_iter().flatten().collect()))
    }

    /// Copies parameters from a network of identical architecture.
    pub fn copy_params_from(&mut self, other: &Network) -> Result<(), NnError> {
        let src = other.params();
        let dst = self.params_mut();
        if src.len() != dst.len() || src.iter().zip(&dst).any(|(a, b)| a.len() != b.len()) {
            return Err(NnError::Shape("networks differ in architecture".into()));
        }
        for (d, s) in dst.into_iter().zip(src) {
            d.copy_from_slice(s);
        }
        Ok(())
    }
}

/// Maximum relative difference between analytic and central-difference
/// gradients of `loss(net(x))`.
///
/// `loss` returns the scalar loss and its gradient with respect to the
/// network output. Relative error is `|a - n| / max(|a|, |n|, 1e-7)`, so
/// vanishing gradients are compared absolutely.
pub fn gradient_check<F>(net: &Network, x: &Signal, loss: F, step: f64) -> Result<f64, NnError>
where
    F: Fn(&Signal) -> (f64, Signal),
{
    let (out, tape) = net.forward_train(x.clone())?;
    let (_, g) = loss(&out);
    let analytic = net.backward(tape, g)?;
    let mut probe = net.clone();
    let mut worst = 0.0f64;
    let n_tensors = analytic.0.len();
    for ti in 0..n_tensors {
        for pi in 0..analytic.0[ti].len() {
            let orig = probe.params()[ti][pi];
            probe.params_mut()[ti][pi] = orig + step;
            let lp = loss(&probe.forward(x.clone())?).0;
            probe.params_mut()[ti][pi] = orig - step;
            let lm = loss(&probe.forward(x.clone())?).0;
            probe.params_mut()[ti][pi] = orig;
            let numeric = (lp - lm) / (2.0 * step);
            let a = analytic.0[ti][pi];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-7);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

/// Mini-batch index order for one epoch (Fisher–Yates).
pub fn shuffled_indices<R: Rng>(n: usize, rng: &mut R) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        idx.swap(i, j);
    }
    idx
}
