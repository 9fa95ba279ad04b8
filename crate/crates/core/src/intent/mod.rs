//! Task-level prediction: which of the N tasks the operator is performing.
//!
//! Two sources of intention estimates are provided: a trained 1-D CNN
//! classifier, and a stochastic oracle whose error rate follows an
//! [`AccuracyCurve`] so switching experiments can be run without the
//! classifier in the loop.

mod classifier;

pub use classifier::{accuracy_curve, train_classifier, Classifier, ClassifierConfig, EpochLog};

use std::io::{Read, Write};

use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::DataError;
use crate::nn::NnError;

#[derive(Debug, Error)]
pub enum IntentError {
    #[error("need at least two classes, got {0}")]
    TooFewClasses(usize),
    #[error("invalid accuracy curve: {0}")]
    InvalidCurve(String),
    #[error("empty {0}")]
    Empty(&'static str),
    #[error("training diverged at epoch {epoch}: {source}")]
    Diverged { epoch: usize, source: NnError },
    #[error("invalid classifier config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Probability vector over the N tasks after observing part of a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct IntentionEstimate {
    pub probs: Vec<f64>,
    pub observation_fraction: f64,
}

impl IntentionEstimate {
    /// Uniform estimate before any observation.
    pub fn uniform(n: usize) -> Self {
        Self {
            probs: vec![1.0 / n as f64; n],
            observation_fraction: 0.0,
        }
    }

    /// Most likely task; ties resolve to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.probs)
    }

    pub fn n_classes(&self) -> usize {
        self.probs.len()
    }

    pub fn is_valid(&self) -> bool {
        let s: f64 = self.probs.iter().sum();
        (s - 1.0).abs() < 1e-9 && self.probs.iter().all(|&p| (0.0..=1.0).contains(&p))
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Classification error probability as a function of observed fraction,
/// linearly interpolated between points and held flat outside them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyCurve {
    points: Vec<(f64, f64)>,
}

impl AccuracyCurve {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self, IntentError> {
        if points.is_empty() {
            return Err(IntentError::InvalidCurve("no points".into()));
        }
        for (i, &(f, e)) in points.iter().enumerate() {
            if !(f > 0.0 && f <= 1.0) {
                return Err(IntentError::InvalidCurve(format!("fraction {f} outside (0, 1]")));
            }
            if !(0.0..=1.0).contains(&e) {
                return Err(IntentError::InvalidCurve(format!("error {e} outside [0, 1]")));
            }
            if i > 0 && f <= points[i - 1].0 {
                return Err(IntentError::InvalidCurve("fractions must be strictly increasing".into()));
            }
        }
        Ok(Self { points })
    }

    /// The same error at every fraction.
    pub fn constant(error: f64) -> Result<Self, IntentError> {
        Self::new(vec![(1.0, error)])
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn error_at(&self, fraction: f64) -> f64 {
        let p = &self.points;
        if fraction <= p[0].0 {
            return p[0].1;
        }
        for w in p.windows(2) {
            let ((f0, e0), (f1, e1)) = (w[0], w[1]);
            if fraction <= f1 {
                return e0 + (e1 - e0) * (fraction - f0) / (f1 - f0);
            }
        }
        p[p.len() - 1].1
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), IntentError> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["fraction", "error"])?;
        for &(f, e) in &self.points {
            wr.write_record([f.to_string(), e.to_string()])?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self, IntentError> {
        let mut rd = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(r);
        let mut points = Vec::new();
        for rec in rd.deserialize() {
            let (f, e): (f64, f64) = rec?;
            points.push((f, e));
        }
        Self::new(points)
    }
}

impl Default for AccuracyCurve {
    /// Error profile measured for the default classifier on the default
    /// synthetic dataset (test split, mean of five training seeds).
    fn default() -> Self {
        Self::new(vec![
            (0.1, 0.750),
            (0.2, 0.645),
            (0.3, 0.684),
            (0.4, 0.366),
            (0.5, 0.032),
            (0.6, 0.007),
            (0.7, 0.009),
            (0.8, 0.014),
            (0.9, 0.018),
            (1.0, 0.039),
        ])
        .expect("valid default curve")
    }
}

/// Shape of the confidence assigned to the oracle's top class. The top-class
/// mass is `1/N + (1 - 1/N) * b` with `b ~ Beta(alpha0 + alpha_slope * f, beta)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConfidenceProfile {
    pub alpha0: f64,
    pub alpha_slope: f64,
    pub beta: f64,
}

impl Default for ConfidenceProfile {
    fn default() -> Self {
        Self {
            alpha0: 1.0,
            alpha_slope: 6.0,
            beta: 2.0,
        }
    }
}

/// Stochastic stand-in for the classifier. With probability
/// `1 - curve.error_at(fraction)` the top class is `true_label`, otherwise a
/// uniformly drawn wrong class.
pub fn oracle_predict<R: Rng + ?Sized>(
    true_label: usize,
    n_classes: usize,
    fraction: f64,
    curve: &AccuracyCurve,
    profile: &ConfidenceProfile,
    rng: &mut R,
) -> IntentionEstimate {
    assert!(n_classes >= 2 && true_label < n_classes, "label out of range");
    let wrong = rng.random::<f64>() < curve.error_at(fraction);
    let top = if wrong {
        let k = rng.random_range(0..n_classes - 1);
        if k >= true_label {
            k + 1
        } else {
            k
        }
    } else {
        true_label
    };
    let alpha = (profile.alpha0 + profile.alpha_slope * fraction.clamp(0.0, 1.0)).max(1e-3);
    let b = Beta::new(alpha, profile.beta.max(1e-3))
        .expect("positive shape parameters")
        .sample(rng);
    let n = n_classes as f64;
    // keep the top class strictly ahead so argmax is unambiguous
    let b = b.clamp(1e-6, 1.0);
    let top_mass = 1.0 / n + (1.0 - 1.0 / n) * b;
    let rest = (1.0 - top_mass) / (n - 1.0);
    let mut probs = vec![rest; n_classes];
    probs[top] = top_mass;
    IntentionEstimate {
        probs,
        observation_fraction: fraction,
    }
}
