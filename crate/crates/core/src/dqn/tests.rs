use super::*;
use crate::comms::ReliabilityBudget;
use crate::env::ThresholdPolicy;
use crate::intent::{AccuracyCurve, IntentionEstimate};
use crate::rng::stream;
use crate::traj::TrajErrorCurve;
use proptest::prelude::*;

fn enc() -> StateEncoding {
    StateEncoding { n_classes: 4 }
}

fn net(seed: u64) -> Network {
    q_network(enc(), &[16, 16], &mut stream(seed, &[]))
}

/// Network whose output is the constant `bias` for every input.
fn constant_net(bias: [f64; 2]) -> Network {
    let mut n = q_network(enc(), &[], &mut stream(0, &[]));
    let mut p = n.params_mut();
    let (w, b) = p.split_at_mut(1);
    w[0].fill(0.0);
    b[0].copy_from_slice(&bias);
    n
}

fn transition(i: usize, reward: f64, terminal: bool) -> Transition {
    let x = |k: usize| (0..7).map(|j| ((i * 7 + j + k) % 11) as f64 / 11.0).collect::<Vec<_>>();
    Transition {
        state: x(0),
        action: i % 2,
        reward,
        next_state: x(3),
        terminal,
    }
}

fn short_hp(steps: usize) -> DqnHyperparams {
    DqnHyperparams {
        total_steps: steps,
        epsilon_decay_steps: steps / 5,
        eval_episodes: 50,
        ..DqnHyperparams::default()
    }
}

#[test]
fn encoding_layout() {
    let s = State {
        intention: IntentionEstimate::uniform(4),
        slot: 5,
        total_slots: 20,
        mode: Mode::Auto,
    };
    assert_eq!(enc().encode(&s), vec![0.25, 0.25, 0.25, 0.25, 0.25, 0.0, 1.0]);
    assert_eq!(enc().dim(), 7);
}

#[test]
fn greedy_and_tie_break() {
    let stay = constant_net([2.0, 1.0]);
    let switch = constant_net([1.0, 2.0]);
    let tie = constant_net([3.0, 3.0]);
    let x = vec![0.1; 7];
    let mut rng = stream(1, &[]);
    assert_eq!(select_action(&stay, &x, 0.0, &mut rng).unwrap(), Action::Stay);
    assert_eq!(select_action(&switch, &x, 0.0, &mut rng).unwrap(), Action::Switch);
    assert_eq!(select_action(&tie, &x, 0.0, &mut rng).unwrap(), Action::Stay);
}

#[test]
fn full_exploration_is_uniform() {
    let q = constant_net([5.0, 0.0]);
    let mut rng = stream(2, &[]);
    let x = vec![0.0; 7];
    let n = 10_000;
    let switches = (0..n)
        .filter(|_| select_action(&q, &x, 1.0, &mut rng).unwrap() == Action::Switch)
        .count();
    assert_close!(switches as f64 / n as f64, 0.5, 0.02);
}

#[test]
fn buffer_evicts_oldest() {
    let mut b = ReplayBuffer::new(3);
    for i in 0..4 {
        b.store(transition(i, i as f64, false));
    }
    assert_eq!(b.len(), 3);
    assert_eq!(b.inserted(), 4);
    let rewards: Vec<f64> = (0..3).map(|i| b.get(i).unwrap().reward).collect();
    assert_eq!(rewards, vec![1.0, 2.0, 3.0]);
}

#[test]
fn buffer_sampling_errors_and_reproducibility() {
    let mut b = ReplayBuffer::new(10);
    assert!(matches!(b.sample(1, &mut stream(0, &[])), Err(DqnError::Underfilled { .. })));
    for i in 0..5 {
        b.store(transition(i, i as f64, false));
    }
    assert!(b.sample(6, &mut stream(0, &[])).is_err());
    let a = b.sample_indices(5, &mut stream(3, &[])).unwrap();
    assert_eq!(a, b.sample_indices(5, &mut stream(3, &[])).unwrap());
}

#[test]
fn buffer_sampling_is_uniform() {
    let mut b = ReplayBuffer::new(10);
    for i in 0..10 {
        b.store(transition(i, 0.0, false));
    }
    let mut counts = [0usize; 10];
    let mut rng = stream(4, &[]);
    let n = 100_000;
    for _ in 0..n / 10 {
        for i in b.sample_indices(10, &mut rng).unwrap() {
            counts[i] += 1;
        }
    }
    let e = n as f64 / 10.0;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
    // 99th percentile of chi-squared with 9 degrees of freedom
    assert!(chi2 < 21.666, "chi2 = {chi2}");
}

#[test]
fn bellman_targets() {
    let target = constant_net([50.0, 10.0]);
    let t = transition(0, 70.0, true);
    let u = transition(1, 1.0, false);
    assert_eq!(bellman_target(&[&t], &target, 0.99).unwrap(), vec![70.0]);
    assert_eq!(bellman_target(&[&u], &target, 0.0).unwrap(), vec![1.0]);
    assert_close!(bellman_target(&[&u], &target, 0.99).unwrap()[0], 50.5, 1e-12);
    assert!(matches!(bellman_target(&[], &target, 0.99), Err(DqnError::EmptyBatch)));
}

#[test]
fn train_step_at_fixed_point_is_a_no_op() {
    // Q ≡ [2, 2], targets: terminal reward 2
    let mut main = constant_net([2.0, 2.0]);
    let target = main.clone();
    let batch: Vec<Transition> = (0..8).map(|i| transition(i, 2.0, true)).collect();
    let refs: Vec<&Transition> = batch.iter().collect();
    let before = main.clone();
    let mut opt = Optimizer::adam(1e-3).unwrap();
    assert_eq!(train_step(&mut main, &target, &refs, 0.99, &mut opt).unwrap(), 0.0);
    assert_eq!(main, before);
}

#[test]
fn train_step_reduces_loss_on_frozen_batch() {
    let run = || {
        let mut main = net(5);
        let target = net(6);
        let batch: Vec<Transition> = (0..32).map(|i| transition(i, (i % 5) as f64, i % 3 == 0)).collect();
        let refs: Vec<&Transition> = batch.iter().collect();
        let mut opt = Optimizer::adam(1e-2).unwrap();
        (0..100)
            .map(|_| train_step(&mut main, &target, &refs, 0.9, &mut opt).unwrap())
            .collect::<Vec<_>>()
    };
    let losses = run();
    assert!(losses[99] < 0.5 * losses[0], "{} -> {}", losses[0], losses[99]);
    assert_eq!(losses, run());
}

#[test]
fn gradient_only_touches_taken_action() {
    // with one taken action, the other output's bias must not move under SGD
    let mut main = net(7);
    let target = net(8);
    let batch = [transition(0, 3.0, true)];
    let refs: Vec<&Transition> = batch.iter().collect();
    let other = 1 - batch[0].action;
    let b_before = main.params().last().unwrap()[other];
    let mut opt = Optimizer::sgd(0.1).unwrap();
    train_step(&mut main, &target, &refs, 0.9, &mut opt).unwrap();
    assert_eq!(main.params().last().unwrap()[other], b_before);
}

#[test]
fn sync_copies_parameters() {
    let main = net(9);
    let mut target = net(10);
    let probe = vec![0.3; 7];
    assert_ne!(q_values(&main, &probe).unwrap(), q_values(&target, &probe).unwrap());
    sync_target(&main, &mut target).unwrap();
    assert_eq!(q_values(&main, &probe).unwrap(), q_values(&target, &probe).unwrap());
    sync_target(&main, &mut target).unwrap();
    assert_eq!(target, main);
    let mut wrong = q_network(enc(), &[8], &mut stream(0, &[]));
    assert!(sync_target(&main, &mut wrong).is_err());
}

#[test]
fn epsilon_schedule_is_linear_then_flat() {
    let hp = DqnHyperparams::default();
    assert_eq!(hp.epsilon_at(0), 1.0);
    assert_close!(hp.epsilon_at(20_000), 0.525, 1e-12);
    assert_eq!(hp.epsilon_at(40_000), 0.05);
    assert_eq!(hp.epsilon_at(199_999), 0.05);
}

#[test]
fn hyperparameter_validation() {
    assert!(DqnHyperparams::default().validate().is_ok());
    for bad in [
        DqnHyperparams { gamma: 1.0, ..DqnHyperparams::default() },
        DqnHyperparams { batch_size: 0, ..DqnHyperparams::default() },
        DqnHyperparams { min_fill: 10, ..DqnHyperparams::default() },
        DqnHyperparams { learning_rate: 0.0, ..DqnHyperparams::default() },
    ] {
        assert!(matches!(bad.validate(), Err(DqnError::InvalidHyperparams(_))));
    }
}

#[test]
fn policy_checkpoint_roundtrip() {
    let p = DqnPolicy { net: net(11), encoding: enc() };
    let back = DqnPolicy::from_checkpoint(crate::nn::read_checkpoint(&p.to_checkpoint().to_bytes()[..]).unwrap()).unwrap();
    assert_eq!(back, p);
    let mut ck = p.to_checkpoint();
    ck.metadata[0].1 = vec![1.0];
    assert!(DqnPolicy::from_checkpoint(ck).is_err());
}

#[test]
fn learns_to_switch_immediately_when_autonomy_is_perfect() {
    let cfg = EpisodeConfig {
        reliability: ReliabilityBudget::new(0.0, 0.0).unwrap(),
        accuracy: AccuracyCurve::constant(0.0).unwrap(),
        traj_error: TrajErrorCurve::constant(0.0).unwrap(),
        ..EpisodeConfig::default()
    };
    let out = train(&cfg, &short_hp(20_000), 1).unwrap();
    let (succ, dz, _) = evaluate_policy(&cfg, &out.policy, 200, 99).unwrap();
    assert!(dz < 0.1, "mean d/Z {dz}");
    assert!(succ > 0.9);
}

#[test]
fn hopeless_autonomy_caps_success_at_teleoperation_share() {
    // autonomy never completes, so whatever the agent learns its success is
    // bounded by the teleoperation branch: p_tele · d/Z
    let cfg = EpisodeConfig {
        traj_error: TrajErrorCurve::constant(1.0).unwrap(),
        ..EpisodeConfig::default()
    };
    let out = train(&cfg, &short_hp(20_000), 2).unwrap();
    let n = 2000;
    let (succ, dz, _) = evaluate_policy(&cfg, &out.policy, n, 98).unwrap();
    let bound = cfg.p_tele() * dz;
    let se = (bound * (1.0 - bound) / n as f64).sqrt();
    assert!(succ <= bound + 3.0 * se + 1e-12, "success {succ} above {bound}");
}

#[test]
fn training_is_reproducible() {
    let cfg = EpisodeConfig::default();
    let hp = DqnHyperparams {
        eval_every: 500,
        ..short_hp(3000)
    };
    let a = train(&cfg, &hp, 3).unwrap();
    let b = train(&cfg, &hp, 3).unwrap();
    assert_eq!(a.curve.len(), 6);
    for (x, y) in a.curve.iter().zip(&b.curve) {
        assert_eq!(x.step, y.step);
        assert_eq!(x.moving_avg_success.to_bits(), y.moving_avg_success.to_bits());
        assert_eq!(x.loss.to_bits(), y.loss.to_bits());
    }
    assert_eq!(a.policy, b.policy);
    let mut buf = Vec::new();
    write_curve(&a.curve, &mut buf).unwrap();
    assert!(String::from_utf8(buf).unwrap().starts_with("step,moving_avg_success,mean_dZ,loss,epsilon\n"));
}

#[test]
fn threshold_baseline_is_available_for_comparison() {
    let cfg = EpisodeConfig::default();
    let pol = ThresholdPolicy::new(0.7);
    let r = run_episode(&cfg, |s| pol.act(s), stream(5, &[])).unwrap();
    assert!(r.tele_slots >= 14);
}

proptest! {
    #[test]
    fn encoding_values_in_unit_interval(slot in 0usize..=20, auto in any::<bool>(), seed in 0u64..100) {
        let mut rng = stream(seed, &[]);
        let intention = crate::intent::oracle_predict(1, 4, slot as f64 / 20.0, &AccuracyCurve::default(), &Default::default(), &mut rng);
        let s = State { intention, slot, total_slots: 20, mode: if auto { Mode::Auto } else { Mode::Tele } };
        let v = enc().encode(&s);
        prop_assert_eq!(v.len(), 7);
        prop_assert!(v.iter().all(|x| (0.0..=1.0).contains(x)));
    }
}
