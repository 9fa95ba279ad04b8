//! Deep Q-learning for the switching decision: main and target networks,
//! uniform replay, ε-greedy exploration and the training loop.

use std::collections::VecDeque;
use std::io::Write;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{run_episode, Action, EnvError, EpisodeConfig, Mode, ModeSwitchEnv, State};
use crate::nn::{Activation, Checkpoint, Dense, Gradients, Layer, Network, NnError, Optimizer, Signal};
use crate::rng::stream;

const CHECKPOINT_KIND: f64 = 3.0;
const N_ACTIONS: usize = 2;

#[derive(Debug, Error)]
pub enum DqnError {
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparams(String),
    #[error("cannot sample {requested} transitions from a buffer holding {available}")]
    Underfilled { requested: usize, available: usize },
    #[error("non-finite loss at step {0}")]
    NonFiniteLoss(usize),
    #[error("empty batch")]
    EmptyBatch,
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Flat network input: intention probabilities, observed fraction, mode
/// one-hot (tele, auto).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StateEncoding {
    pub n_classes: usize,
}

impl StateEncoding {
    pub fn dim(&self) -> usize {
        self.n_classes + 3
    }

    pub fn encode(&self, s: &State) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.dim());
        v.extend_from_slice(&s.intention.probs);
        v.push(s.fraction());
        v.push(if s.mode == Mode::Tele { 1.0 } else { 0.0 });
        v.push(if s.mode == Mode::Auto { 1.0 } else { 0.0 });
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub terminal: bool,
}

/// Fixed-capacity FIFO store sampled uniformly with replacement.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Transition>,
    inserted: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            items: VecDeque::with_capacity(capacity.min(1 << 20)),
            inserted: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Total number of transitions ever stored.
    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    pub fn store(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
        self.inserted += 1;
    }

    pub fn get(&self, i: usize) -> Option<&Transition> {
        self.items.get(i)
    }

    pub fn sample_indices<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<usize>, DqnError> {
        if n == 0 || self.items.len() < n {
            return Err(DqnError::Underfilled {
                requested: n,
                available: self.items.len(),
            });
        }
        Ok((0..n).map(|_| rng.random_range(0..self.items.len())).collect())
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<&Transition>, DqnError> {
        Ok(self
            .sample_indices(n, rng)?
            .into_iter()
            .map(|i| &self.items[i])
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DqnHyperparams {
    pub gamma: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_decay_steps: usize,
    pub batch_size: usize,
    pub target_sync: usize,
    pub buffer_capacity: usize,
    pub learning_rate: f64,
    pub min_fill: usize,
    pub total_steps: usize,
    pub hidden: Vec<usize>,
    /// Steps between greedy evaluations (and curve rows).
    pub eval_every: usize,
    pub eval_episodes: usize,
    /// Evaluations averaged into the moving-average success.
    pub smoothing: usize,
}

impl Default for DqnHyperparams {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_steps: 40_000,
            batch_size: 64,
            target_sync: 1000,
            buffer_capacity: 100_000,
            learning_rate: 1e-3,
            min_fill: 1000,
            total_steps: 200_000,
            hidden: vec![64, 64],
            eval_every: 1000,
            eval_episodes: 100,
            smoothing: 5,
        }
    }
}

impl DqnHyperparams {
    pub fn validate(&self) -> Result<(), DqnError> {
        let bad = |m: &str| Err(DqnError::InvalidHyperparams(m.to_string()));
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1)");
        }
        for e in [self.epsilon_start, self.epsilon_end] {
            if !(0.0..=1.0).contains(&e) {
                return bad("epsilon bounds must lie in [0, 1]");
            }
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if [
            self.batch_size,
            self.target_sync,
            self.buffer_capacity,
            self.total_steps,
            self.eval_every,
            self.eval_episodes,
            self.smoothing,
        ]
        .contains(&0)
        {
            return bad("sizes and periods must be positive");
        }
        if self.min_fill < self.batch_size {
            return bad("min_fill must be at least batch_size");
        }
        if self.min_fill > self.buffer_capacity {
            return bad("min_fill exceeds buffer_capacity");
        }
        if self.hidden.contains(&0) {
            return bad("hidden widths must be positive");
        }
        Ok(())
    }

    /// Linear decay from `epsilon_start` to `epsilon_end`, then flat.
    pub fn epsilon_at(&self, step: usize) -> f64 {
        if self.epsilon_decay_steps == 0 || step >= self.epsilon_decay_steps {
            return self.epsilon_end;
        }
        let t = step as f64 / self.epsilon_decay_steps as f64;
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * t
    }
}

pub fn q_network<R: Rng>(enc: StateEncoding, hidden: &[usize], rng: &mut R) -> Network {
    let mut layers = Vec::new();
    let mut w = enc.dim();
    for &h in hidden {
        layers.push(Layer::Dense(Dense::new(w, h, Activation::Relu, rng)));
        w = h;
    }
    layers.push(Layer::Dense(Dense::new(w, N_ACTIONS, Activation::Linear, rng)));
    Network::new(layers).expect("widths compose by construction")
}

fn rows(xs: &[&[f64]]) -> Array2<f64> {
    let d = xs[0].len();
    Array2::from_shape_fn((xs.len(), d), |(i, j)| xs[i][j])
}

pub fn q_values(q: &Network, state: &[f64]) -> Result<[f64; 2], DqnError> {
    let out = q.predict(Signal::Flat(rows(&[state])))?;
    Ok([out[[0, 0]], out[[0, 1]]])
}

/// Greedy action; ties go to staying.
pub fn greedy_action(q: &Network, state: &[f64]) -> Result<Action, DqnError> {
    let v = q_values(q, state)?;
    Ok(if v[1] > v[0] { Action::Switch } else { Action::Stay })
}

pub fn select_action<R: Rng + ?Sized>(q: &Network, state: &[f64], epsilon: f64, rng: &mut R) -> Result<Action, DqnError> {
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        return Ok(Action::from_index(rng.random_range(0..N_ACTIONS)));
    }
    greedy_action(q, state)
}

/// `r` for terminal transitions, otherwise `r + γ max_a Q̃(s', a)`.
pub fn bellman_target(batch: &[&Transition], target: &Network, gamma: f64) -> Result<Vec<f64>, DqnError> {
    if batch.is_empty() {
        return Err(DqnError::EmptyBatch);
    }
    let next: Vec<&[f64]> = batch.iter().map(|t| t.next_state.as_slice()).collect();
    let q = target.predict(Signal::Flat(rows(&next)))?;
    Ok(batch
        .iter()
        .enumerate()
        .map(|(i, t)| {
            if t.terminal {
                t.reward
            } else {
                t.reward + gamma * q[[i, 0]].max(q[[i, 1]])
            }
        })
        .collect())
}

/// One gradient step on the mean squared Bellman error of the taken actions.
pub fn train_step(
    main: &mut Network,
    target: &Network,
    batch: &[&Transition],
    gamma: f64,
    opt: &mut Optimizer,
) -> Result<f64, DqnError> {
    let y = bellman_target(batch, target, gamma)?;
    let states: Vec<&[f64]> = batch.iter().map(|t| t.state.as_slice()).collect();
    let (out, tape) = main.forward_train(Signal::Flat(rows(&states)))?;
    let q = out.into_flat()?;
    let n = batch.len() as f64;
    let mut grad = Array2::zeros(q.raw_dim());
    let mut loss = 0.0;
    for (i, t) in batch.iter().enumerate() {
        let diff = q[[i, t.action]] - y[i];
        loss += diff * diff / n;
        grad[[i, t.action]] = 2.0 * diff / n;
    }
    if !loss.is_finite() {
        return Err(DqnError::NonFiniteLoss(opt.steps() as usize + 1));
    }
    let grads: Gradients = main.backward(tape, Signal::Flat(grad))?;
    opt.apply(main, &grads)?;
    Ok(loss)
}

pub fn sync_target(main: &Network, target: &mut Network) -> Result<(), DqnError> {
    Ok(target.copy_params_from(main)?)
}

/// A trained switching policy.
#[derive(Debug, Clone, PartialEq)]
pub struct DqnPolicy {
    pub net: Network,
    pub encoding: StateEncoding,
}

impl DqnPolicy {
    pub fn act(&self, s: &State) -> Action {
        greedy_action(&self.net, &self.encoding.encode(s)).expect("state width matches the network")
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::new(self.net.clone())
            .with("kind", vec![CHECKPOINT_KIND])
            .with("n_classes", vec![self.encoding.n_classes as f64])
            .with("state_dim", vec![self.encoding.dim() as f64])
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self, DqnError> {
        if ck.require("kind")? != [CHECKPOINT_KIND] {
            return Err(NnError::Checkpoint("not a switching-policy checkpoint".into()).into());
        }
        let n_classes = ck.require("n_classes")?.first().copied().unwrap_or(0.0) as usize;
        let encoding = StateEncoding { n_classes };
        if ck.require("state_dim")? != [encoding.dim() as f64] {
            return Err(NnError::Checkpoint("state encoding does not match class count".into()).into());
        }
        Ok(Self {
            net: ck.network,
            encoding,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: usize,
    pub moving_avg_success: f64,
    #[serde(rename = "mean_dZ")]
    pub mean_dz: f64,
    pub loss: f64,
    pub epsilon: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Policy with the best moving-average success.
    pub policy: DqnPolicy,
    pub best_success: f64,
    pub best_step: usize,
    pub curve: Vec<CurvePoint>,
    /// Set when the final greedy evaluation took one action everywhere.
    pub collapsed: bool,
}

/// Greedy evaluation: mean success, mean d/Z, and whether both actions were
/// ever chosen. Episode `i` always uses the same stream so successive
/// evaluations are compared on common random numbers.
pub fn evaluate_policy(
    cfg: &EpisodeConfig,
    policy: &DqnPolicy,
    episodes: usize,
    seed: u64,
) -> Result<(f64, f64, bool), DqnError> {
    let (mut succ, mut dz) = (0.0, 0.0);
    let mut used = [false; 2];
    for i in 0..episodes {
        let r = run_episode(
            cfg,
            |s| {
                let a = policy.act(s);
                used[a.index()] = true;
                a
            },
            stream(seed, &[i as u64]),
        )?;
        succ += r.success as u8 as f64;
        dz += r.tele_fraction();
    }
    let n = episodes as f64;
    Ok((succ / n, dz / n, used[0] && used[1]))
}

pub fn train(cfg: &EpisodeConfig, hp: &DqnHyperparams, seed: u64) -> Result<TrainOutcome, DqnError> {
    hp.validate()?;
    cfg.validate()?;
    let enc = StateEncoding {
        n_classes: cfg.n_classes,
    };
    let mut init_rng = stream(seed, &[0xD0, 0]);
    let mut act_rng = stream(seed, &[0xD0, 1]);
    let mut replay_rng = stream(seed, &[0xD0, 2]);
    let eval_seed = crate::rng::derive_seed(seed, &[0xD0, 3]);
    let mut env = ModeSwitchEnv::new(cfg.clone(), stream(seed, &[0xD0, 4]))?;

    let mut main = q_network(enc, &hp.hidden, &mut init_rng);
    let mut target = main.clone();
    let mut opt = Optimizer::adam(hp.learning_rate)?;
    let mut buffer = ReplayBuffer::new(hp.buffer_capacity);

    let mut curve = Vec::new();
    let mut recent: VecDeque<f64> = VecDeque::new();
    let mut best: Option<(f64, usize, Network)> = None;
    let (mut loss_sum, mut loss_n) = (0.0, 0usize);
    let mut collapsed = false;

    let mut state = env.reset()?;
    let mut x = enc.encode(&state);
    for step in 1..=hp.total_steps {
        let eps = hp.epsilon_at(step - 1);
        let action = select_action(&main, &x, eps, &mut act_rng)?;
        let out = env.step(action)?;
        let x_next = enc.encode(&out.state);
        buffer.store(Transition {
            state: std::mem::take(&mut x),
            action: action.index(),
            reward: out.reward,
            next_state: x_next.clone(),
            terminal: out.done,
        });
        if out.done {
            state = env.reset()?;
            x = enc.encode(&state);
        } else {
            x = x_next;
        }

        if buffer.len() >= hp.min_fill {
            let batch = buffer.sample(hp.batch_size, &mut replay_rng)?;
            let loss = train_step(&mut main, &target, &batch, hp.gamma, &mut opt)
                .map_err(|e| match e {
                    DqnError::NonFiniteLoss(_) => DqnError::NonFiniteLoss(step),
                    e => e,
                })?;
            loss_sum += loss;
            loss_n += 1;
        }
        if step % hp.target_sync == 0 {
            sync_target(&main, &mut target)?;
        }
        if step % hp.eval_every == 0 {
            let policy = DqnPolicy {
                net: main.clone(),
                encoding: enc,
            };
            let (succ, dz, both) = evaluate_policy(cfg, &policy, hp.eval_episodes, eval_seed)?;
            collapsed = !both;
            recent.push_back(succ);
            if recent.len() > hp.smoothing {
                recent.pop_front();
            }
            let avg = recent.iter().sum::<f64>() / recent.len() as f64;
            if best.as_ref().is_none_or(|b| avg > b.0) {
                best = Some((avg, step, main.clone()));
            }
            curve.push(CurvePoint {
                step,
                moving_avg_success: avg,
                mean_dz: dz,
                loss: if loss_n > 0 { loss_sum / loss_n as f64 } else { f64::NAN },
                epsilon: eps,
            });
            loss_sum = 0.0;
            loss_n = 0;
        }
    }
    let (best_success, best_step, net) = best.unwrap_or((f64::NAN, 0, main));
    Ok(TrainOutcome {
        policy: DqnPolicy { net, encoding: enc },
        best_success,
        best_step,
        curve,
        collapsed,
    })
}

pub fn write_curve<W: Write>(curve: &[CurvePoint], w: W) -> Result<(), DqnError> {
    let mut wr = csv::Writer::from_writer(w);
    for p in curve {
        wr.serialize(p)?;
    }
    wr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests;
