//! Episode simulator for teleoperation with intelligent mode switching.
//!
//! An episode covers one task of `Z` slots. It starts in teleoperation; each
//! slot the policy either stays or toggles the mode. Autonomous slots skip the
//! packet exchange but keep monitoring the operator's intention, and a
//! mismatch with the committed task reverts to teleoperation unless the
//! detector misses it.

use std::io::Write;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::comms::{self, AutonomyErrorBudget, ChannelConfig, CommsError, ReliabilityBudget};
use crate::data::{window_len, Trajectory};
use crate::intent::{oracle_predict, AccuracyCurve, Classifier, ConfidenceProfile, IntentError, IntentionEstimate};
use crate::rng::StreamRng;
use crate::traj::TrajErrorCurve;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("step called on a finished episode")]
    StepAfterDone,
    #[error("step called before reset")]
    NotReset,
    #[error("invalid episode config: {0}")]
    InvalidConfig(String),
    #[error("no trajectory with label {0} for the trained intention source")]
    NoTrajectory(usize),
    #[error(transparent)]
    Comms(#[from] CommsError),
    #[error(transparent)]
    Intent(#[from] IntentError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Tele,
    Auto,
}

impl Mode {
    pub fn toggled(self) -> Self {
        match self {
            Mode::Tele => Mode::Auto,
            Mode::Auto => Mode::Tele,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Mode::Tele => "tele",
            Mode::Auto => "auto",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Stay,
    Switch,
}

impl Action {
    pub fn index(self) -> usize {
        match self {
            Action::Stay => 0,
            Action::Switch => 1,
        }
    }

    pub fn from_index(i: usize) -> Self {
        if i == 0 {
            Action::Stay
        } else {
            Action::Switch
        }
    }
}

/// Why the mode changed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SwitchCause {
    Agent,
    Detection,
}

impl SwitchCause {
    pub fn name(self) -> &'static str {
        match self {
            SwitchCause::Agent => "agent",
            SwitchCause::Detection => "detection",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SwitchEvent {
    pub slot: usize,
    pub from: Mode,
    pub to: Mode,
    pub cause: SwitchCause,
}

/// What the switching policy observes.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub intention: IntentionEstimate,
    /// Slots observed so far.
    pub slot: usize,
    pub total_slots: usize,
    pub mode: Mode,
}

impl State {
    pub fn fraction(&self) -> f64 {
        self.slot as f64 / self.total_slots as f64
    }
}

/// How bits per slot are accounted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoadModel {
    /// `b` bits for every teleoperation slot.
    #[default]
    FixedPayload,
    /// A full finite-blocklength packet per teleoperation slot.
    FiniteBlocklength,
}

/// Where intention estimates come from.
#[derive(Debug, Clone)]
pub enum IntentSource {
    /// Stochastic stand-in driven by the configured accuracy curve.
    Oracle,
    /// A trained classifier watching a trajectory of the episode's task drawn
    /// from the pool.
    Trained {
        classifier: Arc<Classifier>,
        trajectories: Arc<Vec<Trajectory>>,
    },
}

#[derive(Debug, Clone)]
pub struct EpisodeConfig {
    /// Fixed task, or `None` to draw one uniformly at every reset.
    pub label: Option<usize>,
    pub n_classes: usize,
    pub total_slots: usize,
    pub channel: ChannelConfig,
    pub reliability: ReliabilityBudget,
    pub rho: f64,
    pub psi: f64,
    pub detect_fail: f64,
    pub accuracy: AccuracyCurve,
    pub traj_error: TrajErrorCurve,
    pub confidence: ConfidenceProfile,
    pub intent: IntentSource,
    pub bits_per_slot: f64,
    pub load_model: LoadModel,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            label: None,
            n_classes: 4,
            total_slots: 20,
            channel: ChannelConfig::default(),
            reliability: ReliabilityBudget::default(),
            rho: 0.85,
            psi: 0.85,
            detect_fail: 0.05,
            accuracy: AccuracyCurve::default(),
            traj_error: TrajErrorCurve::default(),
            confidence: ConfidenceProfile::default(),
            intent: IntentSource::Oracle,
            bits_per_slot: 256.0,
            load_model: LoadModel::FixedPayload,
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |m: String| Err(EnvError::InvalidConfig(m));
        if self.n_classes < 2 {
            return bad(format!("need at least two classes, got {}", self.n_classes));
        }
        if let Some(l) = self.label {
            if l >= self.n_classes {
                return bad(format!("label {l} out of range for {} classes", self.n_classes));
            }
        }
        if self.total_slots < 20 {
            return bad(format!("total_slots must be >= 20, got {}", self.total_slots));
        }
        for (name, v) in [("rho", self.rho), ("psi", self.psi), ("detect_fail", self.detect_fail)] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        if !(self.bits_per_slot > 0.0 && self.bits_per_slot.is_finite()) {
            return bad(format!("bits_per_slot must be positive, got {}", self.bits_per_slot));
        }
        ReliabilityBudget::new(self.reliability.decoding_error, self.reliability.queuing_violation)?;
        if self.load_model == LoadModel::FiniteBlocklength {
            comms::achievable_rate(&self.channel, self.reliability.decoding_error)?;
        }
        if let IntentSource::Trained { classifier, .. } = &self.intent {
            if classifier.n_classes != self.n_classes {
                return bad(format!(
                    "classifier has {} classes, config {}",
                    classifier.n_classes, self.n_classes
                ));
            }
        }
        Ok(())
    }

    /// Completion probability when the task is finished in teleoperation.
    pub fn p_tele(&self) -> f64 {
        comms::p_tele(&self.reliability, self.rho)
    }

    /// Completion probability of autonomous execution started at `fraction`.
    pub fn p_auto(&self, fraction: f64) -> f64 {
        comms::p_auto(&AutonomyErrorBudget {
            task_pred_error: self.accuracy.error_at(fraction),
            detect_fail: self.detect_fail,
            traj_pred_error: self.traj_error.error_at(fraction),
        })
    }

    /// Average bits per slot for `tele_slots` teleoperation slots.
    pub fn load(&self, tele_slots: usize) -> Result<f64, EnvError> {
        let z = self.total_slots as u64;
        Ok(match self.load_model {
            LoadModel::FixedPayload => {
                comms::LoadAccount::new(tele_slots as u64, z, self.bits_per_slot)?.fixed_payload_load()
            }
            LoadModel::FiniteBlocklength => {
                comms::communication_load(tele_slots as u64, z, &self.channel, self.reliability.decoding_error)?
            }
        })
    }

    /// Success probability of an episode with `tele_slots` teleoperation slots
    /// whose autonomous execution started at `auto_fraction`.
    pub fn success_probability(&self, tele_slots: usize, auto_fraction: Option<f64>) -> f64 {
        let pt = tele_slots as f64 / self.total_slots as f64;
        match auto_fraction {
            None => self.p_tele(),
            Some(f) => comms::p_overall(pt, self.p_tele(), self.p_auto(f)),
        }
    }
}

/// Samples task success. With probability `d/Z` the outcome follows the
/// teleoperation events, otherwise the autonomy events at the fraction where
/// autonomous execution began.
pub fn sample_success<R: Rng + ?Sized>(
    cfg: &EpisodeConfig,
    tele_slots: usize,
    auto_fraction: Option<f64>,
    rng: &mut R,
) -> bool {
    let pt = tele_slots as f64 / cfg.total_slots as f64;
    let pick: f64 = rng.random();
    let event: f64 = rng.random();
    match auto_fraction {
        Some(f) if pick >= pt => event < cfg.p_auto(f),
        _ => event < cfg.p_tele(),
    }
}

/// One row of an episode trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub slot: usize,
    pub mode: Mode,
    pub action: usize,
    pub reward: f64,
    pub argmax_intention: usize,
    pub cause: Option<SwitchCause>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub state: State,
    pub reward: f64,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeResult {
    pub label: usize,
    pub success: bool,
    pub tele_slots: usize,
    pub total_slots: usize,
    pub load: f64,
    /// Fraction at the first autonomous slot, if any.
    pub auto_fraction: Option<f64>,
    pub switches: Vec<SwitchEvent>,
    pub reward: f64,
    pub trace: Vec<TraceRow>,
}

impl EpisodeResult {
    pub fn tele_fraction(&self) -> f64 {
        self.tele_slots as f64 / self.total_slots as f64
    }

    pub fn detections(&self) -> usize {
        self.switches.iter().filter(|s| s.cause == SwitchCause::Detection).count()
    }
}

pub struct ModeSwitchEnv {
    cfg: EpisodeConfig,
    rng: StreamRng,
    state: Option<State>,
    label: usize,
    trajectory: Option<usize>,
    committed: usize,
    tele_slots: usize,
    first_auto: Option<usize>,
    reward: f64,
    switches: Vec<SwitchEvent>,
    trace: Vec<TraceRow>,
    success: Option<bool>,
}

impl ModeSwitchEnv {
    pub fn new(cfg: EpisodeConfig, rng: StreamRng) -> Result<Self, EnvError> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            rng,
            state: None,
            label: 0,
            trajectory: None,
            committed: 0,
            tele_slots: 0,
            first_auto: None,
            reward: 0.0,
            switches: Vec::new(),
            trace: Vec::new(),
            success: None,
        })
    }

    pub fn config(&self) -> &EpisodeConfig {
        &self.cfg
    }

    pub fn label(&self) -> usize {
        self.label
    }

    pub fn is_done(&self) -> bool {
        self.success.is_some()
    }

    pub fn reset(&mut self) -> Result<State, EnvError> {
        self.label = match self.cfg.label {
            Some(l) => l,
            None => self.rng.random_range(0..self.cfg.n_classes),
        };
        self.trajectory = match &self.cfg.intent {
            IntentSource::Oracle => None,
            IntentSource::Trained { trajectories, .. } => {
                let matching: Vec<usize> = (0..trajectories.len())
                    .filter(|&i| trajectories[i].label == self.label)
                    .collect();
                if matching.is_empty() {
                    return Err(EnvError::NoTrajectory(self.label));
                }
                Some(matching[self.rng.random_range(0..matching.len())])
            }
        };
        self.committed = 0;
        self.tele_slots = 0;
        self.first_auto = None;
        self.reward = 0.0;
        self.switches.clear();
        self.trace.clear();
        self.success = None;
        let state = State {
            intention: IntentionEstimate::uniform(self.cfg.n_classes),
            slot: 0,
            total_slots: self.cfg.total_slots,
            mode: Mode::Tele,
        };
        self.state = Some(state.clone());
        Ok(state)
    }

    fn intention_at(&mut self, slot: usize) -> Result<IntentionEstimate, EnvError> {
        let fraction = slot as f64 / self.cfg.total_slots as f64;
        match &self.cfg.intent {
            IntentSource::Oracle => Ok(oracle_predict(
                self.label,
                self.cfg.n_classes,
                fraction,
                &self.cfg.accuracy,
                &self.cfg.confidence,
                &mut self.rng,
            )),
            IntentSource::Trained {
                classifier,
                trajectories,
            } => {
                let traj = &trajectories[self.trajectory.expect("set at reset")];
                let n = window_len(fraction, traj.len()).min(traj.len());
                if n == 0 {
                    let mut e = IntentionEstimate::uniform(self.cfg.n_classes);
                    e.observation_fraction = fraction;
                    return Ok(e);
                }
                Ok(classifier.predict_intention(&traj.samples[..n], fraction)?)
            }
        }
    }

    pub fn step(&mut self, action: Action) -> Result<StepOutcome, EnvError> {
        if self.is_done() {
            return Err(EnvError::StepAfterDone);
        }
        let state = self.state.take().ok_or(EnvError::NotReset)?;
        let slot = state.slot;
        let z = self.cfg.total_slots;
        let mut mode = state.mode;
        let mut cause = None;
        if action == Action::Switch {
            let to = mode.toggled();
            self.switches.push(SwitchEvent {
                slot,
                from: mode,
                to,
                cause: SwitchCause::Agent,
            });
            cause = Some(SwitchCause::Agent);
            if to == Mode::Auto {
                self.committed = state.intention.argmax();
                self.first_auto.get_or_insert(slot);
            }
            mode = to;
        }
        let mut reward = match mode {
            Mode::Tele => {
                self.tele_slots += 1;
                0.0
            }
            Mode::Auto => 1.0,
        };
        let slot_mode = mode;
        let next = slot + 1;
        let intention = self.intention_at(next)?;
        if mode == Mode::Auto && next < z && intention.argmax() != self.committed {
            let missed = self.rng.random::<f64>() < self.cfg.detect_fail;
            if !missed {
                self.switches.push(SwitchEvent {
                    slot: next,
                    from: Mode::Auto,
                    to: Mode::Tele,
                    cause: SwitchCause::Detection,
                });
                mode = Mode::Tele;
            }
        }
        let done = next == z;
        if done {
            let auto_fraction = self.first_auto.map(|s| s as f64 / z as f64);
            let success = sample_success(&self.cfg, self.tele_slots, auto_fraction, &mut self.rng);
            if success {
                reward += (z - self.tele_slots) as f64 / z as f64 * 100.0;
            }
            self.success = Some(success);
        }
        self.reward += reward;
        self.trace.push(TraceRow {
            slot,
            mode: slot_mode,
            action: action.index(),
            reward,
            argmax_intention: state.intention.argmax(),
            cause,
        });
        let state = State {
            intention,
            slot: next,
            total_slots: z,
            mode,
        };
        self.state = Some(state.clone());
        Ok(StepOutcome { state, reward, done })
    }

    /// Summary of the finished episode.
    pub fn result(&self) -> Result<EpisodeResult, EnvError> {
        let success = self.success.ok_or(EnvError::NotReset)?;
        let z = self.cfg.total_slots;
        Ok(EpisodeResult {
            label: self.label,
            success,
            tele_slots: self.tele_slots,
            total_slots: z,
            load: self.cfg.load(self.tele_slots)?,
            auto_fraction: self.first_auto.map(|s| s as f64 / z as f64),
            switches: self.switches.clone(),
            reward: self.reward,
            trace: self.trace.clone(),
        })
    }
}

/// Rolls out a full episode.
pub fn run_episode<P>(cfg: &EpisodeConfig, mut policy: P, rng: StreamRng) -> Result<EpisodeResult, EnvError>
where
    P: FnMut(&State) -> Action,
{
    let mut env = ModeSwitchEnv::new(cfg.clone(), rng)?;
    let mut state = env.reset()?;
    loop {
        let out = env.step(policy(&state))?;
        if out.done {
            return env.result();
        }
        state = out.state;
    }
}

/// Scripted policy realising a target teleoperation fraction: stay in
/// teleoperation until the observed fraction reaches `tele_target`, then
/// switch to autonomy (and back to it after every detection reversion).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdPolicy {
    pub tele_target: f64,
}

impl ThresholdPolicy {
    pub fn new(tele_target: f64) -> Self {
        Self { tele_target }
    }

    pub fn act(&self, s: &State) -> Action {
        if s.mode == Mode::Tele && self.tele_target < 1.0 && s.fraction() >= self.tele_target - 1e-9 {
            Action::Switch
        } else {
            Action::Stay
        }
    }
}

pub fn write_trace<W: Write>(trace: &[TraceRow], w: W) -> Result<(), EnvError> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["slot", "mode", "action", "reward", "argmax_intention", "cause"])?;
    for r in trace {
        wr.write_record([
            r.slot.to_string(),
            r.mode.name().to_string(),
            r.action.to_string(),
            r.reward.to_string(),
            r.argmax_intention.to_string(),
            r.cause.map(|c| c.name()).unwrap_or("").to_string(),
        ])?;
    }
    wr.flush()?;
    Ok(())
}
