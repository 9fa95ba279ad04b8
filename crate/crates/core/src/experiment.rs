//! Experiment harness: one TOML config drives dataset generation, model
//! training and the Monte Carlo sweeps. Every CSV written here starts with
//! `#` comment lines carrying the config hash and seed, so equal config and
//! seed give byte-identical files.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::comms::{ChannelConfig, ReliabilityBudget};
use crate::data::{generate_dataset, load_dataset, save_dataset, DataError, Dataset, GeneratorConfig, SplitKind, DEFAULT_NOISE_SCALE};
use crate::dqn::{self, DqnError, DqnHyperparams, DqnPolicy};
use crate::env::{run_episode, write_trace, EnvError, EpisodeConfig, EpisodeResult, IntentSource, LoadModel, ThresholdPolicy};
use crate::intent::{accuracy_curve, train_classifier, AccuracyCurve, ClassifierConfig, ConfidenceProfile, IntentError};
use crate::nn::{read_checkpoint, NnError};
use crate::rng::stream;
use crate::traj::{
    traj_error_curve, train_predictor, write_rrmse_table, PredictorConfig, PredictorKind, RrmseRow, TrajError,
    TrajErrorCurve, DEFAULT_THETA_TRAJ, FRACTION_GRID,
};

pub const DATASET_FILE: &str = "dataset.bin";
pub const CLASSIFIER_FILE: &str = "intent.ckpt";
pub const ACCURACY_CURVE_FILE: &str = "accuracy_curve.csv";
pub const TRAJ_ERROR_CURVE_FILE: &str = "traj_error_curve.csv";
pub const RRMSE_TABLE_FILE: &str = "rrmse_table.csv";
pub const DQN_FILE: &str = "dqn.ckpt";
pub const DQN_CURVE_FILE: &str = "dqn_curve.csv";

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("missing input {what}: {path}")]
    MissingInput { what: &'static str, path: PathBuf },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Intent(#[from] IntentError),
    #[error(transparent)]
    Traj(#[from] TrajError),
    #[error(transparent)]
    Dqn(#[from] DqnError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub n_per_class: usize,
    pub noise_scale: f64,
    pub generator: GeneratorConfig,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            n_per_class: 150,
            noise_scale: DEFAULT_NOISE_SCALE,
            generator: GeneratorConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CommsSection {
    pub decoding_error: f64,
    pub queuing_violation: f64,
    pub bits_per_slot: f64,
    pub load_model: LoadModel,
    pub channel: ChannelConfig,
}

impl Default for CommsSection {
    fn default() -> Self {
        let r = ReliabilityBudget::default();
        Self {
            decoding_error: r.decoding_error,
            queuing_violation: r.queuing_violation,
            bits_per_slot: 256.0,
            load_model: LoadModel::FixedPayload,
            channel: ChannelConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskSection {
    pub total_slots: usize,
    pub rho: f64,
    pub psi: f64,
    pub detect_fail: f64,
    pub theta_traj: f64,
    pub confidence: ConfidenceProfile,
}

impl Default for TaskSection {
    fn default() -> Self {
        Self {
            total_slots: 20,
            rho: 0.85,
            psi: 0.85,
            detect_fail: 0.05,
            theta_traj: DEFAULT_THETA_TRAJ,
            confidence: ConfidenceProfile::default(),
        }
    }
}

/// Error curves used by the environment. Empty paths fall back to curves
/// trained into the output directory, then to the built-in defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurveSection {
    pub accuracy: Option<PathBuf>,
    pub traj_error: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub episodes: usize,
    /// Teleoperation fraction of the intelligent-switching policy in the
    /// packet-loss and operator sweeps.
    pub proposed_pt: f64,
    pub pt_grid: Vec<f64>,
    pub loss_grid: Vec<f64>,
    pub rho_grid: Vec<f64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            episodes: 10_000,
            proposed_pt: 0.7,
            pt_grid: (0..=10).map(|i| i as f64 / 10.0).collect(),
            loss_grid: vec![1e-5, 1e-4, 1e-3, 1e-2, 0.05, 0.1, 0.2, 0.3],
            rho_grid: vec![0.5, 0.6, 0.7, 0.8, 0.9, 1.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub data: DataSection,
    pub comms: CommsSection,
    pub task: TaskSection,
    pub curves: CurveSection,
    pub sweep: SweepSection,
    pub intent: ClassifierConfig,
    pub lstm: PredictorConfig,
    pub cnn: PredictorConfig,
    pub dqn: DqnHyperparams,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data: DataSection::default(),
            comms: CommsSection::default(),
            task: TaskSection::default(),
            curves: CurveSection::default(),
            sweep: SweepSection::default(),
            intent: ClassifierConfig::default(),
            lstm: PredictorConfig::for_kind(PredictorKind::Lstm),
            cnn: PredictorConfig::for_kind(PredictorKind::Cnn),
            dqn: DqnHyperparams::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ExperimentError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ExperimentError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => ExperimentError::MissingInput {
                what: "config",
                path: path.to_path_buf(),
            },
            _ => e.into(),
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// SHA-256 of the resolved config, hex encoded.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::InvalidConfig(m));
        let s = &self.sweep;
        if s.pt_grid.is_empty() || s.loss_grid.is_empty() || s.rho_grid.is_empty() {
            return bad("sweep grids must be non-empty".into());
        }
        if s.episodes == 0 {
            return bad("sweep.episodes must be positive".into());
        }
        for &p in s.pt_grid.iter().chain(&s.rho_grid).chain([&s.proposed_pt]) {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("grid value {p} outside [0, 1]"));
            }
        }
        for &e in &s.loss_grid {
            if !(e > 0.0 && e < 1.0) {
                return bad(format!("packet loss {e} outside (0, 1)"));
            }
        }
        if self.data.n_per_class < 10 {
            return bad("data.n_per_class must be at least 10".into());
        }
        if self.lstm.kind != PredictorKind::Lstm || self.cnn.kind != PredictorKind::Cnn {
            return bad("lstm/cnn sections must keep their kind".into());
        }
        if !(self.task.theta_traj > 0.0) {
            return bad("task.theta_traj must be positive".into());
        }
        self.episode_config(AccuracyCurve::default(), TrajErrorCurve::default())
            .validate()
            .map_err(|e| ExperimentError::InvalidConfig(e.to_string()))?;
        self.dqn.validate().map_err(|e| ExperimentError::InvalidConfig(e.to_string()))?;
        Ok(())
    }

    pub fn episode_config(&self, accuracy: AccuracyCurve, traj_error: TrajErrorCurve) -> EpisodeConfig {
        EpisodeConfig {
            label: None,
            n_classes: self.data.generator.n_classes,
            total_slots: self.task.total_slots,
            channel: self.comms.channel,
            reliability: ReliabilityBudget {
                decoding_error: self.comms.decoding_error,
                queuing_violation: self.comms.queuing_violation,
            },
            rho: self.task.rho,
            psi: self.task.psi,
            detect_fail: self.task.detect_fail,
            accuracy,
            traj_error,
            confidence: self.task.confidence,
            intent: IntentSource::Oracle,
            bits_per_slot: self.comms.bits_per_slot,
            load_model: self.comms.load_model,
        }
    }
}

/// Where a curve came from, reported in CSV headers.
#[derive(Debug, Clone, PartialEq)]
pub enum CurveOrigin {
    Builtin,
    File(PathBuf),
}

impl std::fmt::Display for CurveOrigin {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CurveOrigin::Builtin => write!(f, "builtin"),
            CurveOrigin::File(p) => write!(f, "{}", p.display()),
        }
    }
}

fn pick_curve_path(explicit: &Option<PathBuf>, out: &Path, file: &str) -> Result<Option<PathBuf>, ExperimentError> {
    match explicit {
        Some(p) if p.exists() => Ok(Some(p.clone())),
        Some(p) => Err(ExperimentError::MissingInput {
            what: "curve file",
            path: p.clone(),
        }),
        None => {
            let p = out.join(file);
            Ok(p.exists().then_some(p))
        }
    }
}

/// Resolves the environment's error curves: configured path, then a trained
/// curve in `out`, then the built-in default.
pub fn resolve_curves(
    cfg: &ExperimentConfig,
    out: &Path,
) -> Result<(AccuracyCurve, TrajErrorCurve, CurveOrigin, CurveOrigin), ExperimentError> {
    let (acc, acc_o) = match pick_curve_path(&cfg.curves.accuracy, out, ACCURACY_CURVE_FILE)? {
        Some(p) => (AccuracyCurve::read_csv(fs::File::open(&p)?)?, CurveOrigin::File(p)),
        None => (AccuracyCurve::default(), CurveOrigin::Builtin),
    };
    let (te, te_o) = match pick_curve_path(&cfg.curves.traj_error, out, TRAJ_ERROR_CURVE_FILE)? {
        Some(p) => (
            TrajErrorCurve::read_csv(fs::File::open(&p)?, cfg.task.theta_traj, 1.0)?,
            CurveOrigin::File(p),
        ),
        None => {
            let mut c = TrajErrorCurve::default();
            c.theta = cfg.task.theta_traj;
            (c, CurveOrigin::Builtin)
        }
    };
    Ok((acc, te, acc_o, te_o))
}

/// Comment lines opening every CSV.
pub fn csv_preamble(cfg: &ExperimentConfig, extra: &[(&str, String)]) -> String {
    let mut s = format!("# config_sha256={}\n# seed={}\n", cfg.hash(), cfg.seed);
    for (k, v) in extra {
        let _ = writeln!(s, "# {k}={v}");
    }
    s
}

/// Compensated (Neumaier) summation, so means of identical values come out
/// exact.
fn fsum(xs: impl Iterator<Item = f64>) -> f64 {
    let (mut s, mut c) = (0.0f64, 0.0f64);
    for x in xs {
        let t = s + x;
        c += if s.abs() >= x.abs() { (s - t) + x } else { (x - t) + s };
        s = t;
    }
    s + c
}

/// Mean and spread of a batch of episodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchStats {
    pub episodes: usize,
    pub success: f64,
    pub stderr: f64,
    pub load: f64,
    pub tele_fraction: f64,
}

impl BatchStats {
    fn from_results(rs: &[(bool, f64, f64)]) -> Self {
        let n = rs.len() as f64;
        let success = rs.iter().filter(|r| r.0).count() as f64 / n;
        let stderr = if rs.len() > 1 {
            (success * (1.0 - success) / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self {
            episodes: rs.len(),
            success,
            stderr,
            load: fsum(rs.iter().map(|r| r.1)) / n,
            tele_fraction: fsum(rs.iter().map(|r| r.2)) / n,
        }
    }
}

/// Runs `episodes` threshold-policy episodes in parallel. Episode `i` uses
/// stream `(seed, path ++ [i])`, so batches that share a path see common
/// random numbers.
pub fn run_threshold_batch(
    cfg: &EpisodeConfig,
    tele_target: f64,
    episodes: usize,
    seed: u64,
    path: &[u64],
) -> Result<BatchStats, ExperimentError> {
    cfg.validate()?;
    let pol = ThresholdPolicy::new(tele_target);
    let results: Vec<(bool, f64, f64)> = (0..episodes)
        .into_par_iter()
        .map(|i| {
            let mut p = path.to_vec();
            p.push(i as u64);
            run_episode(cfg, |s| pol.act(s), stream(seed, &p)).map(|r| (r.success, r.load, r.tele_fraction()))
        })
        .collect::<Result<_, _>>()?;
    Ok(BatchStats::from_results(&results))
}

/// One point of a sweep: intelligent switching versus conventional
/// teleoperation (P^t = 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub x: f64,
    pub rho: f64,
    pub success_proposed: f64,
    pub stderr_proposed: f64,
    pub success_conventional: f64,
    pub stderr_conventional: f64,
    pub load_proposed: f64,
    pub load_conventional: f64,
    pub tele_fraction: f64,
    pub episodes: usize,
}

fn sweep_point(
    env: &EpisodeConfig,
    x: f64,
    proposed_pt: f64,
    episodes: usize,
    seed: u64,
    path: &[u64],
) -> Result<SweepRow, ExperimentError> {
    let prop = run_threshold_batch(env, proposed_pt, episodes, seed, path)?;
    let conv = run_threshold_batch(env, 1.0, episodes, seed, path)?;
    Ok(SweepRow {
        x,
        rho: env.rho,
        success_proposed: prop.success,
        stderr_proposed: prop.stderr,
        success_conventional: conv.success,
        stderr_conventional: conv.stderr,
        load_proposed: prop.load,
        load_conventional: conv.load,
        tele_fraction: prop.tele_fraction,
        episodes,
    })
}

/// P^t targets that the slot grid cannot realise exactly.
pub fn infeasible_targets(grid: &[f64], total_slots: usize) -> Vec<f64> {
    grid.iter()
        .copied()
        .filter(|&p| {
            let k = p * total_slots as f64;
            (k - k.round()).abs() > 1e-9
        })
        .collect()
}

/// Success and load against the teleoperation fraction, at the given ρ.
pub fn sweep_pt(cfg: &ExperimentConfig, env: &EpisodeConfig, rho: f64) -> Result<Vec<SweepRow>, ExperimentError> {
    let env = EpisodeConfig { rho, ..env.clone() };
    cfg.sweep
        .pt_grid
        .iter()
        .map(|&pt| sweep_point(&env, pt, pt, cfg.sweep.episodes, cfg.seed, &[0x5E, 0]))
        .collect()
}

/// Packet-loss sweep: ε^d over the loss grid with ε^q fixed.
pub fn sweep_loss(cfg: &ExperimentConfig, env: &EpisodeConfig) -> Result<Vec<SweepRow>, ExperimentError> {
    cfg.sweep
        .loss_grid
        .iter()
        .map(|&loss| {
            let env = EpisodeConfig {
                reliability: ReliabilityBudget {
                    decoding_error: loss,
                    ..env.reliability
                },
                ..env.clone()
            };
            sweep_point(&env, loss, cfg.sweep.proposed_pt, cfg.sweep.episodes, cfg.seed, &[0x5E, 1])
        })
        .collect()
}

/// Operator sweep over the ρ grid.
pub fn sweep_operator(cfg: &ExperimentConfig, env: &EpisodeConfig) -> Result<Vec<SweepRow>, ExperimentError> {
    cfg.sweep
        .rho_grid
        .iter()
        .map(|&rho| {
            let env = EpisodeConfig { rho, ..env.clone() };
            sweep_point(&env, rho, cfg.sweep.proposed_pt, cfg.sweep.episodes, cfg.seed, &[0x5E, 2])
        })
        .collect()
}

pub fn write_sweep<W: Write>(mut w: W, preamble: &str, rows: &[SweepRow]) -> Result<(), ExperimentError> {
    w.write_all(preamble.as_bytes())?;
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

fn create(out: &Path, name: &str) -> Result<fs::File, ExperimentError> {
    fs::create_dir_all(out)?;
    Ok(fs::File::create(out.join(name))?)
}

fn require(path: PathBuf, what: &'static str) -> Result<PathBuf, ExperimentError> {
    if path.exists() {
        Ok(path)
    } else {
        Err(ExperimentError::MissingInput { what, path })
    }
}

pub fn gen_data(cfg: &ExperimentConfig, out: &Path) -> Result<Dataset, ExperimentError> {
    let ds = generate_dataset(cfg.data.n_per_class, cfg.data.noise_scale, cfg.seed, &cfg.data.generator)?;
    fs::create_dir_all(out)?;
    save_dataset(&ds, out.join(DATASET_FILE))?;
    Ok(ds)
}

pub fn load_data(out: &Path) -> Result<Dataset, ExperimentError> {
    Ok(load_dataset(require(out.join(DATASET_FILE), "dataset (run gen-data first)")?)?)
}

/// Trains the classifier and writes its checkpoint, training log and the
/// accuracy curve at fractions 0.1..1.0.
pub fn train_intent(cfg: &ExperimentConfig, out: &Path) -> Result<AccuracyCurve, ExperimentError> {
    let ds = load_data(out)?;
    let clf = train_classifier(&ds, &cfg.intent, cfg.seed)?;
    clf.to_checkpoint().save(out.join(CLASSIFIER_FILE))?;
    let fractions: Vec<f64> = (1..=10).map(|i| i as f64 / 10.0).collect();
    let curve = accuracy_curve(&clf, &ds.subset(SplitKind::Test), &fractions)?;
    let mut f = create(out, ACCURACY_CURVE_FILE)?;
    f.write_all(csv_preamble(cfg, &[]).as_bytes())?;
    curve.write_csv(&mut f)?;
    let mut f = create(out, "intent_log.csv")?;
    f.write_all(csv_preamble(cfg, &[]).as_bytes())?;
    let mut wr = csv::Writer::from_writer(f);
    wr.write_record(["epoch", "loss", "val_accuracy"])?;
    for e in &clf.log {
        wr.write_record([e.epoch.to_string(), e.loss.to_string(), e.val_accuracy.to_string()])?;
    }
    wr.flush()?;
    Ok(curve)
}

/// Trains LSTM and CNN predictors on the fraction grid, writes their
/// checkpoints, the RRMSE table and the LSTM trajectory-error curve.
pub fn train_traj(cfg: &ExperimentConfig, out: &Path) -> Result<(Vec<RrmseRow>, TrajErrorCurve), ExperimentError> {
    let ds = load_data(out)?;
    let train = ds.subset(SplitKind::Train);
    let test = ds.subset(SplitKind::Test);
    let mut rows = Vec::new();
    let mut lstm = Vec::new();
    for pcfg in [&cfg.lstm, &cfg.cnn] {
        for &f in &FRACTION_GRID {
            let p = train_predictor(&ds, pcfg, f, cfg.seed)?;
            p.to_checkpoint()
                .save(out.join(format!("traj_{}_{:02}.ckpt", pcfg.kind.name(), (f * 100.0).round() as u32)))?;
            rows.push(RrmseRow {
                fraction: f,
                train_rrmse: p.mean_rrmse(&train)?,
                test_rrmse: p.mean_rrmse(&test)?,
                kind: pcfg.kind,
            });
            if pcfg.kind == PredictorKind::Lstm {
                lstm.push(p);
            }
        }
    }
    let mut f = create(out, RRMSE_TABLE_FILE)?;
    f.write_all(csv_preamble(cfg, &[]).as_bytes())?;
    write_rrmse_table(&rows, &mut f)?;
    let curve = traj_error_curve(&lstm, &test, cfg.task.theta_traj)?;
    let mut f = create(out, TRAJ_ERROR_CURVE_FILE)?;
    f.write_all(csv_preamble(cfg, &[("theta_traj", cfg.task.theta_traj.to_string())]).as_bytes())?;
    curve.write_csv(&mut f)?;
    Ok((rows, curve))
}

pub fn train_dqn(cfg: &ExperimentConfig, out: &Path) -> Result<dqn::TrainOutcome, ExperimentError> {
    let (acc, te, acc_o, te_o) = resolve_curves(cfg, out)?;
    let env = cfg.episode_config(acc, te);
    let outcome = dqn::train(&env, &cfg.dqn, cfg.seed)?;
    fs::create_dir_all(out)?;
    outcome.policy.to_checkpoint().save(out.join(DQN_FILE))?;
    let mut f = create(out, DQN_CURVE_FILE)?;
    f.write_all(
        csv_preamble(
            cfg,
            &[
                ("accuracy_curve", acc_o.to_string()),
                ("traj_error_curve", te_o.to_string()),
                ("best_step", outcome.best_step.to_string()),
                ("collapsed", outcome.collapsed.to_string()),
            ],
        )
        .as_bytes(),
    )?;
    dqn::write_curve(&outcome.curve, &mut f)?;
    Ok(outcome)
}

pub fn load_policy(out: &Path) -> Result<Option<DqnPolicy>, ExperimentError> {
    let p = out.join(DQN_FILE);
    if !p.exists() {
        return Ok(None);
    }
    Ok(Some(DqnPolicy::from_checkpoint(read_checkpoint(fs::File::open(p)?)?)?))
}

/// One episode with the trained agent if `out` holds one, otherwise the
/// threshold policy at the proposed teleoperation fraction.
pub fn trace(cfg: &ExperimentConfig, out: &Path) -> Result<EpisodeResult, ExperimentError> {
    let (acc, te, acc_o, te_o) = resolve_curves(cfg, out)?;
    let env = cfg.episode_config(acc, te);
    let rng = stream(cfg.seed, &[0x7ACE]);
    let (result, policy_name) = match load_policy(out)? {
        Some(p) => (run_episode(&env, |s| p.act(s), rng)?, "dqn".to_string()),
        None => {
            let pol = ThresholdPolicy::new(cfg.sweep.proposed_pt);
            (run_episode(&env, |s| pol.act(s), rng)?, format!("threshold:{}", cfg.sweep.proposed_pt))
        }
    };
    let mut f = create(out, "trace.csv")?;
    f.write_all(
        csv_preamble(
            cfg,
            &[
                ("policy", policy_name),
                ("label", result.label.to_string()),
                ("success", result.success.to_string()),
                ("accuracy_curve", acc_o.to_string()),
                ("traj_error_curve", te_o.to_string()),
            ],
        )
        .as_bytes(),
    )?;
    write_trace(&result.trace, &mut f)?;
    Ok(result)
}

/// Which sweep to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepKind {
    Pt,
    Loss,
    Operator,
}

/// Runs a sweep and writes its CSV(s); returns the written rows. The P^t
/// sweep writes the configured-ρ table and one table per ρ grid value.
pub fn run_sweep(cfg: &ExperimentConfig, out: &Path, kind: SweepKind) -> Result<Vec<SweepRow>, ExperimentError> {
    let (acc, te, acc_o, te_o) = resolve_curves(cfg, out)?;
    let env = cfg.episode_config(acc, te);
    let extra = [("accuracy_curve", acc_o.to_string()), ("traj_error_curve", te_o.to_string())];
    let pre = csv_preamble(cfg, &extra);
    let rows = match kind {
        SweepKind::Pt => {
            let rows = sweep_pt(cfg, &env, cfg.task.rho)?;
            write_sweep(create(out, "sweep_pt.csv")?, &pre, &rows)?;
            let mut all = Vec::new();
            for &rho in &cfg.sweep.rho_grid {
                all.extend(sweep_pt(cfg, &env, rho)?);
            }
            write_sweep(create(out, "sweep_pt_rho.csv")?, &pre, &all)?;
            rows
        }
        SweepKind::Loss => {
            let rows = sweep_loss(cfg, &env)?;
            write_sweep(create(out, "sweep_loss.csv")?, &pre, &rows)?;
            rows
        }
        SweepKind::Operator => {
            let rows = sweep_operator(cfg, &env)?;
            write_sweep(create(out, "sweep_operator.csv")?, &pre, &rows)?;
            rows
        }
    };
    Ok(rows)
}
