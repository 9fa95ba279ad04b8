//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! `ACCEPTANCE_ONLY=3,6` restricts the run to the listed criteria.

use std::error::Error;
use std::fs;
use std::time::Instant;

use ndarray::Array2;
use rayon::prelude::*;

use modeswitch_core::comms::{achievable_rate, q_function, q_inverse, ChannelConfig};
use modeswitch_core::data::{generate_dataset, write_dataset, Dataset, SplitKind};
use modeswitch_core::dqn::{self, DqnHyperparams, DqnPolicy, ReplayBuffer, Transition};
use modeswitch_core::env::{run_episode, EpisodeConfig, ThresholdPolicy};
use modeswitch_core::experiment::{
    run_sweep, run_threshold_batch, sweep_loss, sweep_operator, sweep_pt, ExperimentConfig, SweepKind,
};
use modeswitch_core::intent::{train_classifier, AccuracyCurve, ClassifierConfig};
use modeswitch_core::nn::{
    gradient_check, mse_loss, softmax_cross_entropy, Activation, Conv1d, Dense, Layer, Lstm, Network, SeqBatch,
    Signal,
};
use modeswitch_core::rng::stream;
use modeswitch_core::traj::{train_predictor, PredictorConfig, PredictorKind, TrajErrorCurve, FRACTION_GRID};

type Res<T> = Result<T, Box<dyn Error + Send + Sync>>;

/// Episodes per Monte Carlo sweep point.
const SWEEP_EPISODES: usize = 10_000;
const SEEDS: u64 = 5;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Res<Outcome> {
    Ok(Outcome { pass, detail })
}

fn default_env(cfg: &ExperimentConfig) -> EpisodeConfig {
    cfg.episode_config(AccuracyCurve::default(), TrajErrorCurve::default())
}

fn sweep_cfg() -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.sweep.episodes = SWEEP_EPISODES;
    c
}

fn formula_fidelity() -> Res<Outcome> {
    let mut worst = 0.0f64;
    let n = 2000;
    for i in 0..=n {
        let log_eps = (1e-9f64).ln() + (0.5f64.ln() - (1e-9f64).ln()) * i as f64 / n as f64;
        let eps = log_eps.exp();
        let back = q_function(q_inverse(eps)?);
        worst = worst.max((back - eps).abs() / eps);
    }
    let rate = achievable_rate(&ChannelConfig::new(1.0, 1.0, 3.0, 1.0, 1.0, 256.0)?, 1e-5)?;
    outcome(
        worst < 1e-6 && (rate - 1.6276).abs() <= 1e-3,
        format!("max q_inverse round-trip rel err {worst:.2e} (< 1e-6); rate(γ=3, τW=256, ε=1e-5) = {rate:.5} (1.6276 ± 1e-3)"),
    )
}

fn probability_model() -> Res<Outcome> {
    let cfg = ExperimentConfig::default();
    let env = default_env(&cfg);
    let z = env.total_slots;
    let mut pass = true;
    let mut parts = Vec::new();
    for pt in [0.0, 0.5, 0.7, 1.0] {
        let d = (pt * z as f64).round() as usize;
        let analytic = if d == z {
            env.success_probability(d, None)
        } else {
            env.success_probability(d, Some(d as f64 / z as f64))
        };
        let b = run_threshold_batch(&env, pt, 100_000, cfg.seed, &[0xACC, 2, d as u64])?;
        let z_score = (b.success - analytic) / b.stderr.max(1e-12);
        pass &= z_score.abs() <= 3.0;
        parts.push(format!("P^t={pt}: mc {:.5} vs {analytic:.5} ({z_score:+.2}σ)", b.success));
    }
    let at_one = env.success_probability(z, None);
    pass &= (at_one - 0.8499830).abs() < 5e-7;
    parts.push(format!("analytic(1) = {at_one:.7} (0.8499830)"));
    outcome(pass, parts.join("; "))
}

fn load_reduction(trained: &Trained) -> Res<Outcome> {
    let mut cfg = sweep_cfg();
    cfg.sweep.pt_grid = vec![0.5, 1.0];
    let env = default_env(&cfg);
    let rows = sweep_pt(&cfg, &env, cfg.task.rho)?;
    let half = &rows[0];
    let threshold_ok = half.load_proposed == 128.0 && half.load_conventional == 256.0;
    let conventional = half.load_conventional;
    let eval = &trained.eval;
    let drl_ok = eval.load <= 0.6 * conventional && eval.success > cfg.task.psi;
    outcome(
        threshold_ok && drl_ok,
        format!(
            "threshold P^t=0.5 load {} vs conventional {}; DQN greedy over {} episodes: load {:.1} ({:.1}% of conventional, ≤ 60%), success {:.4} (> {})",
            half.load_proposed,
            conventional,
            eval.episodes,
            eval.load,
            100.0 * eval.load / conventional,
            eval.success,
            cfg.task.psi
        ),
    )
}

fn intention_trend(ds: &Dataset) -> Res<Outcome> {
    let test = ds.subset(SplitKind::Test);
    let fractions: Vec<f64> = (1..=10).map(|i| i as f64 / 10.0).collect();
    let per_seed: Vec<Vec<f64>> = (0..SEEDS)
        .map(|s| -> Res<Vec<f64>> {
            let clf = train_classifier(ds, &ClassifierConfig::default(), s)?;
            fractions.iter().map(|&f| Ok(clf.accuracy(&test, f)?)).collect()
        })
        .collect::<Res<_>>()?;
    let avg: Vec<f64> = (0..fractions.len())
        .map(|i| per_seed.iter().map(|a| a[i]).sum::<f64>() / SEEDS as f64)
        .collect();
    let late_ok = fractions.iter().zip(&avg).filter(|(f, _)| **f >= 0.6 - 1e-9).all(|(_, a)| *a > 0.9);
    let order_ok = avg[9] >= avg[2];
    let curve: Vec<String> = fractions.iter().zip(&avg).map(|(f, a)| format!("{f:.1}:{a:.3}")).collect();
    outcome(
        late_ok && order_ok,
        format!("mean accuracy over {SEEDS} seeds [{}]; > 0.9 for f ≥ 0.6, acc(1.0) ≥ acc(0.3)", curve.join(" ")),
    )
}

fn trajectory_trend(ds: &Dataset) -> Res<Outcome> {
    let test = ds.subset(SplitKind::Test);
    let jobs: Vec<(PredictorKind, usize, u64)> = [PredictorKind::Lstm, PredictorKind::Cnn]
        .into_iter()
        .flat_map(|k| (0..FRACTION_GRID.len()).flat_map(move |fi| (0..SEEDS).map(move |s| (k, fi, s))))
        .collect();
    let results: Vec<f64> = jobs
        .par_iter()
        .map(|&(kind, fi, s)| -> Res<f64> {
            let p = train_predictor(ds, &PredictorConfig::for_kind(kind), FRACTION_GRID[fi], s)?;
            Ok(p.mean_rrmse(&test)?)
        })
        .collect::<Res<_>>()?;
    let mut table = [[0.0f64; 5]; 2];
    for (&(kind, fi, _), r) in jobs.iter().zip(&results) {
        table[(kind == PredictorKind::Cnn) as usize][fi] += r / SEEDS as f64;
    }
    let decreasing = |row: &[f64; 5]| row.windows(2).all(|w| w[1] < w[0]);
    let lstm_better = (0..5).all(|i| table[0][i] <= table[1][i]);
    let fmt = |row: &[f64; 5]| row.iter().map(|v| format!("{v:.2}")).collect::<Vec<_>>().join(" ");
    outcome(
        decreasing(&table[0]) && decreasing(&table[1]) && lstm_better,
        format!(
            "mean test RRMSE (%) at f=0.5..0.9 over {SEEDS} seeds: LSTM [{}], CNN [{}]; strictly decreasing, LSTM ≤ CNN",
            fmt(&table[0]),
            fmt(&table[1])
        ),
    )
}

struct GreedyEval {
    episodes: usize,
    success: f64,
    load: f64,
    reward: f64,
}

struct Trained {
    outcome: dqn::TrainOutcome,
    eval: GreedyEval,
    secs: f64,
    /// (tele slots, mean reward) of the best scripted-threshold policy.
    best_threshold: (usize, f64),
}

/// Mean episode reward of every scripted-threshold policy on the same streams.
fn best_threshold_reward(env: &EpisodeConfig, episodes: usize) -> Res<(usize, f64)> {
    let z = env.total_slots;
    let mut best = (z, f64::NEG_INFINITY);
    for d in 0..=z {
        let pol = ThresholdPolicy::new(d as f64 / z as f64);
        let total: f64 = (0..episodes)
            .into_par_iter()
            .map(|i| -> Res<f64> { Ok(run_episode(env, |s| pol.act(s), stream(0xACC, &[3, i as u64]))?.reward) })
            .collect::<Res<Vec<f64>>>()?
            .iter()
            .sum();
        if total / episodes as f64 > best.1 {
            best = (d, total / episodes as f64);
        }
    }
    Ok(best)
}

fn evaluate(env: &EpisodeConfig, policy: &DqnPolicy, episodes: usize) -> Res<GreedyEval> {
    let rs: Vec<(bool, f64, f64)> = (0..episodes)
        .into_par_iter()
        .map(|i| -> Res<(bool, f64, f64)> {
            let r = run_episode(env, |s| policy.act(s), stream(0xACC, &[3, i as u64]))?;
            Ok((r.success, r.load, r.reward))
        })
        .collect::<Res<_>>()?;
    let n = episodes as f64;
    Ok(GreedyEval {
        episodes,
        success: rs.iter().filter(|r| r.0).count() as f64 / n,
        load: rs.iter().map(|r| r.1).sum::<f64>() / n,
        reward: rs.iter().map(|r| r.2).sum::<f64>() / n,
    })
}

fn train_default_dqn() -> Res<Trained> {
    let cfg = ExperimentConfig::default();
    let env = default_env(&cfg);
    let t0 = Instant::now();
    let outcome = dqn::train(&env, &cfg.dqn, cfg.seed)?;
    let secs = t0.elapsed().as_secs_f64();
    let eval = evaluate(&env, &outcome.policy, SWEEP_EPISODES)?;
    let best_threshold = best_threshold_reward(&env, SWEEP_EPISODES)?;
    Ok(Trained {
        outcome,
        eval,
        secs,
        best_threshold,
    })
}

fn dqn_convergence(trained: &Trained) -> Res<Outcome> {
    let psi = ExperimentConfig::default().task.psi;
    let curve = &trained.outcome.curve;
    let k = (curve.len() / 10).max(1);
    let mean = |pts: &[dqn::CurvePoint]| pts.iter().map(|p| p.moving_avg_success).sum::<f64>() / pts.len() as f64;
    let first = mean(&curve[..k]);
    let last = mean(&curve[curve.len() - k..]);
    let steps = curve.last().map_or(0, |p| p.step);
    outcome(
        last > psi && last - first >= 0.2 && steps <= 200_000,
        format!(
            "{} evaluations over {steps} steps in {:.0}s; moving-average success first 10% {first:.3}, final 10% {last:.3} (> {psi}, gain ≥ 0.2); best {:.3} at step {}; greedy mean reward {:.2} vs best threshold policy {:.2} (d={}, info)",
            curve.len(),
            trained.secs,
            trained.outcome.best_success,
            trained.outcome.best_step,
            trained.eval.reward,
            trained.best_threshold.1,
            trained.best_threshold.0
        ),
    )
}

fn interior_maximum() -> Res<Outcome> {
    let cfg = sweep_cfg();
    let coupled = sweep_pt(&cfg, &default_env(&cfg), cfg.task.rho)?;
    let best = coupled
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.success_proposed.total_cmp(&b.1.success_proposed))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let interior = best != 0 && best != coupled.len() - 1;

    let flat = cfg.episode_config(AccuracyCurve::constant(0.05)?, TrajErrorCurve::constant(0.05)?);
    let constant = sweep_pt(&cfg, &flat, cfg.task.rho)?;
    let (pt, pa) = (flat.p_tele(), flat.p_auto(0.5));
    let worst = constant
        .iter()
        .map(|r| (r.success_proposed - (r.x * pt + (1.0 - r.x) * pa)).abs() / r.stderr_proposed.max(1e-12))
        .fold(0.0f64, f64::max);
    let linear = worst <= 3.0;
    outcome(
        interior && linear,
        format!(
            "coupled curves: max success {:.4} at P^t={} (interior); constant curves: worst deviation from the line {worst:.2}σ (≤ 3σ)",
            coupled[best].success_proposed, coupled[best].x
        ),
    )
}

fn resilience() -> Res<Outcome> {
    let mut cfg = sweep_cfg();
    cfg.sweep.loss_grid = vec![1e-5, 0.1];
    cfg.sweep.rho_grid = vec![0.6];
    let env = default_env(&cfg);
    let loss = sweep_loss(&cfg, &env)?;
    let op = sweep_operator(&cfg, &env)?;
    let gap = |r: &modeswitch_core::experiment::SweepRow| r.success_proposed - r.success_conventional;
    let (g0, g1, g2) = (gap(&loss[0]), gap(&loss[1]), gap(&op[0]));
    outcome(
        g0.abs() <= 0.05 && g1 > 0.05 && g2 > 0.05,
        format!(
            "proposed − conventional: ε^d=1e-5 {g0:+.4} (|·| ≤ 0.05), ε^d=0.1 {g1:+.4} (> 0.05), ρ=0.6 {g2:+.4} (> 0.05); {} episodes/point",
            loss[0].episodes
        ),
    )
}

fn random_seq(lens: &[usize], channels: usize, seed: u64) -> SeqBatch {
    use rand::Rng;
    let mut r = stream(seed, &[]);
    let rows: usize = lens.iter().sum();
    let data = Array2::from_shape_fn((rows, channels), |_| r.random_range(-1.0..1.0));
    SeqBatch::new(data, lens.to_vec()).expect("valid batch")
}

fn substrate_soundness() -> Res<Outcome> {
    let mut r = stream(0xACC, &[9]);
    let xent = |labels: Vec<usize>| {
        move |s: &Signal| {
            let z = s.clone().into_flat().expect("flat output");
            let (l, g) = softmax_cross_entropy(&z, &labels).expect("shapes");
            (l, Signal::Flat(g))
        }
    };
    let mse = |target: Array2<f64>| {
        move |s: &Signal| {
            let z = s.clone().into_flat().expect("flat output");
            let (l, g) = mse_loss(&z, &target).expect("shapes");
            (l, Signal::Flat(g))
        }
    };
    let dense = Network::new(vec![
        Layer::Dense(Dense::new(4, 6, Activation::Tanh, &mut r)),
        Layer::Dense(Dense::new(6, 3, Activation::Linear, &mut r)),
    ])?;
    let conv = Network::new(vec![
        Layer::Conv1d(Conv1d::new(3, 4, 3, Activation::LeakyRelu(0.01), &mut r)),
        Layer::GlobalAvgPool,
        Layer::Dense(Dense::new(4, 3, Activation::Linear, &mut r)),
    ])?;
    let lstm = Network::new(vec![
        Layer::Lstm(Lstm::new(2, 4, &mut r)),
        Layer::Dense(Dense::new(4, 2, Activation::Linear, &mut r)),
    ])?;
    let grads = [
        gradient_check(&dense, &Signal::Flat(random_seq(&[5], 4, 1).data), xent(vec![0, 2, 1, 1, 0]), 1e-5)?,
        gradient_check(&conv, &Signal::Seq(random_seq(&[5, 3, 7], 3, 2)), xent(vec![2, 0, 1]), 1e-5)?,
        gradient_check(
            &lstm,
            &Signal::Seq(random_seq(&[6, 6, 6], 2, 3)),
            mse(Array2::from_elem((3, 2), 0.3)),
            1e-5,
        )?,
    ];
    let worst_grad = grads.iter().cloned().fold(0.0f64, f64::max);

    // determinism: dataset bytes, sweep CSV, DQN training
    let bytes = || -> Res<Vec<u8>> {
        let mut v = Vec::new();
        write_dataset(&generate_dataset(10, 0.5, 7, &Default::default())?, &mut v)?;
        Ok(v)
    };
    let data_same = bytes()? == bytes()?;
    let mut cfg = ExperimentConfig::default();
    cfg.sweep.episodes = 500;
    let sweep_bytes = || -> Res<Vec<u8>> {
        let dir = tempfile::tempdir()?;
        run_sweep(&cfg, dir.path(), SweepKind::Operator)?;
        Ok(fs::read(dir.path().join("sweep_operator.csv"))?)
    };
    let sweep_same = sweep_bytes()? == sweep_bytes()?;
    let hp = DqnHyperparams {
        total_steps: 3000,
        min_fill: 500,
        eval_every: 500,
        eval_episodes: 20,
        ..Default::default()
    };
    let env = default_env(&cfg);
    let run = || -> Res<(Vec<u8>, String)> {
        let o = dqn::train(&env, &hp, 3)?;
        let mut curve = Vec::new();
        dqn::write_curve(&o.curve, &mut curve)?;
        Ok((o.policy.to_checkpoint().to_bytes(), String::from_utf8(curve)?))
    };
    let dqn_same = run()? == run()?;

    // replay uniformity: 1e5 draws over a 10-element buffer
    let mut buf = ReplayBuffer::new(10);
    for i in 0..10 {
        buf.store(Transition {
            state: vec![i as f64],
            action: 0,
            reward: 0.0,
            next_state: vec![i as f64],
            terminal: false,
        });
    }
    let mut counts = [0usize; 10];
    let mut rng = stream(0xACC, &[10]);
    for _ in 0..10_000 {
        for i in buf.sample_indices(10, &mut rng)? {
            counts[i] += 1;
        }
    }
    let e = 10_000.0;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
    // 99th percentile of chi-squared, 9 degrees of freedom
    let chi_ok = chi2 < 21.666;

    outcome(
        worst_grad < 1e-4 && data_same && sweep_same && dqn_same && chi_ok,
        format!(
            "worst gradient rel err {worst_grad:.2e} (< 1e-4); byte-exact dataset {data_same}, sweep CSV {sweep_same}, DQN checkpoint+curve {dqn_same}; replay χ² = {chi2:.2} (< 21.666)"
        ),
    )
}

fn selected() -> Option<Vec<u32>> {
    let v = std::env::var("ACCEPTANCE_ONLY").ok()?;
    Some(v.split(',').filter_map(|s| s.trim().parse().ok()).collect())
}

fn main() {
    // `cargo test -- --list` etc. pass flags; nothing to list here.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let only = selected();
    let want = |n: u32| only.as_ref().is_none_or(|v| v.contains(&n));
    let mut failures = 0;
    let mut report = |id: u32, name: &str, t0: Instant, r: Res<Outcome>| {
        let secs = t0.elapsed().as_secs_f64();
        match r {
            Ok(o) => {
                if !o.pass {
                    failures += 1;
                }
                println!("{} {id} {name}: {} [{secs:.1}s]", if o.pass { "PASS" } else { "FAIL" }, o.detail);
            }
            Err(e) => {
                failures += 1;
                println!("FAIL {id} {name}: error: {e} [{secs:.1}s]");
            }
        }
    };

    if want(1) {
        report(1, "formula fidelity", Instant::now(), formula_fidelity());
    }
    if want(2) {
        report(2, "probability model", Instant::now(), probability_model());
    }
    let trained = if want(3) || want(6) { Some(train_default_dqn()) } else { None };
    if want(3) {
        let t0 = Instant::now();
        let r = match &trained {
            Some(Ok(t)) => load_reduction(t),
            Some(Err(e)) => Err(e.to_string().into()),
            None => unreachable!(),
        };
        report(3, "load reduction", t0, r);
    }
    if want(4) || want(5) {
        let cfg = ExperimentConfig::default();
        let ds = generate_dataset(cfg.data.n_per_class, cfg.data.noise_scale, cfg.seed, &cfg.data.generator);
        match ds {
            Ok(ds) => {
                if want(4) {
                    report(4, "intention recognition trend", Instant::now(), intention_trend(&ds));
                }
                if want(5) {
                    report(5, "trajectory prediction trend", Instant::now(), trajectory_trend(&ds));
                }
            }
            Err(e) => {
                for id in [4, 5].into_iter().filter(|&i| want(i)) {
                    report(id, "dataset", Instant::now(), Err(e.to_string().into()));
                }
            }
        }
    }
    if want(6) {
        let t0 = Instant::now();
        let r = match &trained {
            Some(Ok(t)) => dqn_convergence(t),
            Some(Err(e)) => Err(e.to_string().into()),
            None => unreachable!(),
        };
        report(6, "DQN convergence", t0, r);
    }
    if want(7) {
        report(7, "interior maximum", Instant::now(), interior_maximum());
    }
    if want(8) {
        report(8, "resilience crossovers", Instant::now(), resilience());
    }
    if want(9) {
        report(9, "substrate soundness", Instant::now(), substrate_soundness());
    }
    if failures > 0 {
        println!("acceptance: {failures} criterion(s) failed");
        std::process::exit(1);
    }
    println!("acceptance: all selected criteria passed");
}
