//! Synthetic letter-writing trajectories standing in for testbed recordings.
//!
//! Each sample is a 5-channel observation (joint angle, velocity,
//! acceleration, end-effector force and torque). Velocity and acceleration are
//! backward differences of the angle, so the three kinematic channels are
//! exactly consistent.

mod generator;
mod io;

pub use generator::{generate_dataset, generate_letter, GeneratorConfig, DEFAULT_NOISE_SCALE};
pub use io::{export_csv, load_dataset, read_dataset, save_dataset, write_dataset, FORMAT_VERSION, MAGIC};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const N_CHANNELS: usize = 5;
pub const MIN_TRAJECTORY_LEN: usize = 20;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("unknown task label {label} (expected < {n_classes})")]
    UnknownLabel { label: usize, n_classes: usize },
    #[error("invalid generator parameter: {0}")]
    InvalidParameter(String),
    #[error("observation fraction {0} outside (0, 1]")]
    BadFraction(f64),
    #[error("window of fraction {fraction} over {len} samples is shorter than one slot")]
    EmptyWindow { fraction: f64, len: usize },
    #[error("unexpected end of file at byte offset {offset} (record {record})")]
    Truncated { offset: u64, record: usize },
    #[error("not a dataset file (bad magic)")]
    BadMagic,
    #[error("unsupported dataset version {found} (this build reads {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },
    #[error("malformed record {record}: {reason}")]
    Malformed { record: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// One time slot of operator-side measurements.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Observation {
    /// Angular position, rad.
    pub q: f64,
    /// Angular velocity, rad/s.
    pub v: f64,
    /// Angular acceleration, rad/s^2.
    pub a: f64,
    /// External force, N.
    pub f: f64,
    /// External torque, N m.
    pub tq: f64,
}

impl Observation {
    pub fn to_array(&self) -> [f64; N_CHANNELS] {
        [self.q, self.v, self.a, self.f, self.tq]
    }

    pub fn from_array(x: [f64; N_CHANNELS]) -> Self {
        Self {
            q: x[0],
            v: x[1],
            a: x[2],
            f: x[3],
            tq: x[4],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub label: usize,
    pub samples: Vec<Observation>,
    /// Seconds per slot.
    pub slot_duration: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Splits off the first `floor(fraction * len)` samples.
    pub fn window(&self, fraction: f64) -> Result<ObservationWindow, DataError> {
        window(self, fraction)
    }
}

/// Observed prefix of a trajectory plus the unobserved remainder.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationWindow {
    pub observed: Vec<Observation>,
    pub suffix: Vec<Observation>,
    pub label: usize,
}

impl ObservationWindow {
    pub fn total_len(&self) -> usize {
        self.observed.len() + self.suffix.len()
    }

    pub fn fraction(&self) -> f64 {
        self.observed.len() as f64 / self.total_len() as f64
    }
}

/// Number of observed slots for a fraction of a trajectory of length `len`.
///
/// A small tolerance keeps products such as `0.7 * 330` from flooring one
/// slot short.
pub fn window_len(fraction: f64, len: usize) -> usize {
    ((fraction * len as f64) + 1e-9).floor() as usize
}

pub fn window(traj: &Trajectory, fraction: f64) -> Result<ObservationWindow, DataError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(DataError::BadFraction(fraction));
    }
    let n = window_len(fraction, traj.len()).min(traj.len());
    if n < 1 {
        return Err(DataError::EmptyWindow {
            fraction,
            len: traj.len(),
        });
    }
    Ok(ObservationWindow {
        observed: traj.samples[..n].to_vec(),
        suffix: traj.samples[n..].to_vec(),
        label: traj.label,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SplitKind {
    Train,
    Validation,
    Test,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

impl DatasetSplit {
    pub fn indices(&self, kind: SplitKind) -> &[usize] {
        match kind {
            SplitKind::Train => &self.train,
            SplitKind::Validation => &self.validation,
            SplitKind::Test => &self.test,
        }
    }

    pub fn kind_of(&self, idx: usize) -> Option<SplitKind> {
        [SplitKind::Train, SplitKind::Validation, SplitKind::Test]
            .into_iter()
            .find(|&k| self.indices(k).contains(&idx))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub trajectories: Vec<Trajectory>,
    pub split: DatasetSplit,
    pub generator_seed: u64,
    pub n_classes: usize,
}

impl Dataset {
    pub fn subset(&self, kind: SplitKind) -> Vec<&Trajectory> {
        self.split
            .indices(kind)
            .iter()
            .map(|&i| &self.trajectories[i])
            .collect()
    }

    pub fn total_points(&self) -> usize {
        self.trajectories.iter().map(Trajectory::len).sum()
    }

    /// Keeps only trajectories whose label is in `labels`, relabelled densely
    /// in the order given. Splits are carried over.
    pub fn restrict_classes(&self, labels: &[usize]) -> Dataset {
        let mut remap = vec![None; self.n_classes];
        for (new, &old) in labels.iter().enumerate() {
            remap[old] = Some(new);
        }
        let mut index_map = vec![None; self.trajectories.len()];
        let mut trajectories = Vec::new();
        for (i, t) in self.trajectories.iter().enumerate() {
            if let Some(new_label) = remap.get(t.label).copied().flatten() {
                index_map[i] = Some(trajectories.len());
                trajectories.push(Trajectory {
                    label: new_label,
                    ..t.clone()
                });
            }
        }
        let map = |v: &[usize]| v.iter().filter_map(|&i| index_map[i]).collect::<Vec<_>>();
        Dataset {
            trajectories,
            split: DatasetSplit {
                train: map(&self.split.train),
                validation: map(&self.split.validation),
                test: map(&self.split.test),
            },
            generator_seed: self.generator_seed,
            n_classes: labels.len(),
        }
    }
}

/// Per-channel mean and standard deviation, used for z-scoring model inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: [f64; N_CHANNELS],
    pub std: [f64; N_CHANNELS],
}

impl ChannelStats {
    /// Statistics over every sample of the given trajectories. Channels with
    /// (near) zero spread get unit scale.
    pub fn from_trajectories<'a>(trajs: impl IntoIterator<Item = &'a Trajectory>) -> Self {
        let mut n = 0usize;
        let mut sum = [0.0; N_CHANNELS];
        let mut sq = [0.0; N_CHANNELS];
        for t in trajs {
            for s in &t.samples {
                for (c, x) in s.to_array().into_iter().enumerate() {
                    sum[c] += x;
                    sq[c] += x * x;
                }
                n += 1;
            }
        }
        let n = n.max(1) as f64;
        let mean = sum.map(|s| s / n);
        let mut std = [1.0; N_CHANNELS];
        for c in 0..N_CHANNELS {
            let var = (sq[c] / n - mean[c] * mean[c]).max(0.0);
            if var.sqrt() > 1e-12 {
                std[c] = var.sqrt();
            }
        }
        Self { mean, std }
    }

    pub fn identity() -> Self {
        Self {
            mean: [0.0; N_CHANNELS],
            std: [1.0; N_CHANNELS],
        }
    }

    pub fn normalize(&self, x: [f64; N_CHANNELS]) -> [f64; N_CHANNELS] {
        std::array::from_fn(|c| (x[c] - self.mean[c]) / self.std[c])
    }

    pub fn denormalize(&self, x: [f64; N_CHANNELS]) -> [f64; N_CHANNELS] {
        std::array::from_fn(|c| x[c] * self.std[c] + self.mean[c])
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.mean.iter().chain(&self.std).copied().collect()
    }

    pub fn from_slice(v: &[f64]) -> Option<Self> {
        (v.len() == 2 * N_CHANNELS).then(|| Self {
            mean: std::array::from_fn(|c| v[c]),
            std: std::array::from_fn(|c| v[N_CHANNELS + c]),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(len: usize) -> Trajectory {
        Trajectory {
            label: 1,
            samples: (0..len)
                .map(|i| Observation {
                    q: i as f64,
                    ..Default::default()
                })
                .collect(),
            slot_duration: 0.02,
        }
    }

    #[test]
    fn full_window_has_empty_suffix() {
        let w = window(&ramp(330), 1.0).unwrap();
        assert_eq!(w.observed.len(), 330);
        assert!(w.suffix.is_empty());
        assert_eq!(w.fraction(), 1.0);
    }

    #[test]
    fn half_window_of_330() {
        let w = window(&ramp(330), 0.5).unwrap();
        assert_eq!(w.observed.len(), 165);
        assert_eq!(w.suffix.len(), 165);
        assert_eq!(window(&ramp(330), 0.7).unwrap().observed.len(), 231);
    }

    #[test]
    fn shorter_window_is_prefix() {
        let t = ramp(331);
        let a = window(&t, 0.6).unwrap();
        let b = window(&t, 0.5).unwrap();
        assert_eq!(&a.observed[..b.observed.len()], &b.observed[..]);
    }

    #[test]
    fn channel_stats_roundtrip() {
        let t = ramp(11);
        let st = ChannelStats::from_trajectories([&t]);
        assert_close!(st.mean[0], 5.0, 1e-12);
        assert_close!(st.std[0], 10f64.sqrt(), 1e-12);
        assert_eq!(st.std[1], 1.0);
        let x = [3.0, 1.0, 2.0, 0.5, -1.0];
        let back = st.denormalize(st.normalize(x));
        for c in 0..N_CHANNELS {
            assert_close!(back[c], x[c], 1e-12);
        }
        assert_eq!(ChannelStats::from_slice(&st.to_vec()), Some(st));
    }

    #[test]
    fn window_errors() {
        assert!(matches!(window(&ramp(20), 0.0), Err(DataError::BadFraction(_))));
        assert!(matches!(window(&ramp(20), 1.2), Err(DataError::BadFraction(_))));
        assert!(matches!(window(&ramp(20), 0.01), Err(DataError::EmptyWindow { .. })));
    }
}
