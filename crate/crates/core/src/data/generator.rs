use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{DataError, Dataset, DatasetSplit, Observation, Trajectory, MIN_TRAJECTORY_LEN};
use crate::rng::{stream, StreamRng};

/// Noise level of the default dataset. Chosen so a trained classifier is
/// unreliable before half of a letter is observed and above 90% accurate
/// from 60% onwards.
pub const DEFAULT_NOISE_SCALE: f64 = 0.5;

const SPLIT_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub n_classes: usize,
    /// Seconds per slot.
    pub slot_duration: f64,
    /// Mean trajectory length over all classes, in slots.
    pub mean_length: usize,
    /// Spacing between per-class mean lengths.
    pub class_length_step: usize,
    /// Half-width of the uniform length draw around the class mean.
    pub length_jitter: usize,
    /// Phase at which letters stop sharing a common opening stroke.
    pub divergence_phase: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            n_classes: 4,
            slot_duration: 0.02,
            mean_length: 330,
            class_length_step: 20,
            length_jitter: 30,
            divergence_phase: 0.35,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: &str| Err(DataError::InvalidParameter(m.to_string()));
        if self.n_classes < 2 {
            return bad("n_classes must be at least 2");
        }
        if !(self.slot_duration > 0.0) {
            return bad("slot_duration must be positive");
        }
        if !(0.0..0.9).contains(&self.divergence_phase) {
            return bad("divergence_phase must lie in [0, 0.9)");
        }
        let half_span = (self.n_classes - 1) * self.class_length_step / 2 + self.length_jitter;
        if self.mean_length < MIN_TRAJECTORY_LEN + half_span {
            return bad("mean_length too short for the class length spread");
        }
        Ok(())
    }

    fn class_length_center(&self, label: usize) -> f64 {
        let mid = (self.n_classes - 1) as f64 / 2.0;
        self.mean_length as f64 + (label as f64 - mid) * self.class_length_step as f64
    }
}

fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

/// Shape parameters distinguishing one letter from another after the shared
/// opening stroke.
struct LetterShape {
    q_sign: f64,
    q_cycles: f64,
    f_sign: f64,
}

impl LetterShape {
    fn for_label(label: usize) -> Self {
        Self {
            q_sign: if label % 2 == 0 { 1.0 } else { -1.0 },
            q_cycles: (1 + label / 2) as f64,
            f_sign: if (label / 2) % 2 == 0 { 1.0 } else { -1.0 },
        }
    }
}

/// Per-trajectory random variation, all zero when `noise_scale == 0`.
struct Variation {
    warp: f64,
    gain: f64,
    offset: [f64; 3],
    wobble: [[f64; 3]; 3],
}

impl Variation {
    fn draw(rng: &mut StreamRng, noise: f64) -> Self {
        let mut n = || -> f64 { StandardNormal.sample(rng) };
        let warp = (0.08 * noise * n()).clamp(-0.25, 0.25);
        let gain = 1.0 + 0.25 * noise * n();
        let offset = [0.15 * noise * n(), 0.2 * noise * n(), 0.05 * noise * n()];
        let mut wobble = [[0.0; 3]; 3];
        for ch in wobble.iter_mut() {
            for (k, w) in ch.iter_mut().enumerate() {
                *w = noise * n() / (k + 1) as f64;
            }
        }
        Self {
            warp,
            gain,
            offset,
            wobble,
        }
    }

    /// Smooth perturbation with zero slope at the start of the trajectory.
    fn wobble(&self, channel: usize, s: f64) -> f64 {
        self.wobble[channel]
            .iter()
            .enumerate()
            .map(|(k, &b)| b * 0.5 * (1.0 - (PI * (k + 1) as f64 * s).cos()))
            .sum()
    }
}

/// Generates one letter trajectory. Deterministic in the state of `rng`.
pub fn generate_letter(
    label: usize,
    rng: &mut StreamRng,
    noise_scale: f64,
    cfg: &GeneratorConfig,
) -> Result<Trajectory, DataError> {
    cfg.validate()?;
    if label >= cfg.n_classes {
        return Err(DataError::UnknownLabel {
            label,
            n_classes: cfg.n_classes,
        });
    }
    if !(noise_scale >= 0.0) || !noise_scale.is_finite() {
        return Err(DataError::InvalidParameter(format!(
            "noise_scale must be finite and >= 0, got {noise_scale}"
        )));
    }
    let jitter = cfg.length_jitter as i64;
    let len = (cfg.class_length_center(label).round() as i64 + rng.random_range(-jitter..=jitter))
        .max(MIN_TRAJECTORY_LEN as i64) as usize;
    let var = Variation::draw(rng, noise_scale);
    let shape = LetterShape::for_label(label);
    let s0 = cfg.divergence_phase;

    let mut q = Vec::with_capacity(len);
    let mut force = Vec::with_capacity(len);
    let mut torque = Vec::with_capacity(len);
    for i in 0..len {
        let s = i as f64 / (len - 1) as f64;
        // monotone time warp fixing both end points
        let s = s + var.warp * (PI * s).sin() / PI;
        let u = ((s - s0) / (1.0 - s0)).max(0.0);
        let onset = smoothstep(u / 0.25);
        let stroke = var.gain * onset * (shape.q_cycles * PI * u).sin();

        q.push(
            0.6 * (1.0 - (PI * s).cos()) + 0.7 * shape.q_sign * stroke + var.offset[0] + var.wobble(0, s),
        );
        force.push(
            1.5 + 0.5 * (1.0 - (PI * s).cos())
                + 0.8 * shape.f_sign * var.gain * onset * (PI * u).sin()
                + var.offset[1]
                + var.wobble(1, s),
        );
        torque.push(
            0.3 * (1.0 - (2.0 * PI * s).cos())
                + 0.3 * shape.q_sign * shape.f_sign * stroke
                + var.offset[2]
                + 0.5 * var.wobble(2, s),
        );
    }

    let dt = cfg.slot_duration;
    let mut samples = Vec::with_capacity(len);
    let (mut q_prev, mut v_prev) = (q[0], 0.0);
    for i in 0..len {
        let v = (q[i] - q_prev) / dt;
        let a = (v - v_prev) / dt;
        samples.push(Observation {
            q: q[i],
            v,
            a,
            f: force[i],
            tq: torque[i],
        });
        q_prev = q[i];
        v_prev = v;
    }
    Ok(Trajectory {
        label,
        samples,
        slot_duration: dt,
    })
}

fn split_counts(n: usize) -> (usize, usize) {
    let train = (0.70 * n as f64).round() as usize;
    let val = (0.15 * n as f64).round() as usize;
    (train, val)
}

/// Generates `n_per_class` letters per class with a stratified 70/15/15
/// train/validation/test split. Trajectory `i` has label `i % n_classes` and
/// draws from its own derived stream.
pub fn generate_dataset(
    n_per_class: usize,
    noise_scale: f64,
    seed: u64,
    cfg: &GeneratorConfig,
) -> Result<Dataset, DataError> {
    if n_per_class < 10 {
        return Err(DataError::InvalidParameter(format!(
            "n_per_class must be at least 10, got {n_per_class}"
        )));
    }
    cfg.validate()?;
    let n_classes = cfg.n_classes;
    let total = n_per_class * n_classes;
    let trajectories = (0..total)
        .into_par_iter()
        .map(|i| generate_letter(i % n_classes, &mut stream(seed, &[i as u64]), noise_scale, cfg))
        .collect::<Result<Vec<_>, _>>()?;

    let mut split_rng = stream(seed, &[SPLIT_STREAM]);
    let (n_train, n_val) = split_counts(n_per_class);
    let mut split = DatasetSplit::default();
    for c in 0..n_classes {
        let mut idx: Vec<usize> = (0..n_per_class).map(|k| k * n_classes + c).collect();
        for i in (1..idx.len()).rev() {
            let j = split_rng.random_range(0..=i);
            idx.swap(i, j);
        }
        split.train.extend_from_slice(&idx[..n_train]);
        split.validation.extend_from_slice(&idx[n_train..n_train + n_val]);
        split.test.extend_from_slice(&idx[n_train + n_val..]);
    }
    for v in [&mut split.train, &mut split.validation, &mut split.test] {
        v.sort_unstable();
    }
    Ok(Dataset {
        trajectories,
        split,
        generator_seed: seed,
        n_classes,
    })
}
