//! Finite-blocklength communication load and task completion probabilities.
//!
//! Rates are in bits/s/Hz (base-2 logarithms throughout). All functions are
//! pure.

use serde::{Deserialize, Serialize};
use std::f64::consts::{LOG2_E, SQRT_2};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CommsError {
    #[error("{name} must be strictly positive and finite, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("blocklength tau*W must be at least 1, got {0}")]
    ShortBlock(f64),
    #[error("{name} must lie in {range}, got {value}")]
    OutOfRange {
        name: &'static str,
        range: &'static str,
        value: f64,
    },
    #[error("snr must be non-negative, got {0}")]
    NegativeSnr(f64),
    #[error("rate underflow: penalty {penalty} >= capacity {capacity} bits/s/Hz")]
    RateUnderflow { capacity: f64, penalty: f64 },
    #[error("tele slots {tele} exceed total slots {total}")]
    SlotOverflow { tele: u64, total: u64 },
}

fn positive(name: &'static str, value: f64) -> Result<f64, CommsError> {
    if value.is_finite() && value > 0.0 {
        Ok(value)
    } else {
        Err(CommsError::NonPositive { name, value })
    }
}

fn closed_unit(name: &'static str, value: f64) -> Result<f64, CommsError> {
    if (0.0..=1.0).contains(&value) {
        Ok(value)
    } else {
        Err(CommsError::OutOfRange {
            name,
            range: "[0, 1]",
            value,
        })
    }
}

fn open_unit(name: &'static str, value: f64) -> Result<f64, CommsError> {
    if value > 0.0 && value < 1.0 {
        Ok(value)
    } else {
        Err(CommsError::OutOfRange {
            name,
            range: "(0, 1)",
            value,
        })
    }
}

/// Radio parameters of one device link.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    pub large_scale_gain: f64,
    pub small_scale_gain: f64,
    /// Watts.
    pub transmit_power: f64,
    /// Single-sided noise spectral density, W/Hz.
    pub noise_psd: f64,
    /// Hz.
    pub bandwidth: f64,
    /// Seconds.
    pub tx_duration: f64,
}

impl ChannelConfig {
    pub fn new(
        large_scale_gain: f64,
        small_scale_gain: f64,
        transmit_power: f64,
        noise_psd: f64,
        bandwidth: f64,
        tx_duration: f64,
    ) -> Result<Self, CommsError> {
        let cfg = Self {
            large_scale_gain,
            small_scale_gain,
            transmit_power,
            noise_psd,
            bandwidth,
            tx_duration,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CommsError> {
        positive("large_scale_gain", self.large_scale_gain)?;
        positive("small_scale_gain", self.small_scale_gain)?;
        positive("transmit_power", self.transmit_power)?;
        positive("noise_psd", self.noise_psd)?;
        positive("bandwidth", self.bandwidth)?;
        positive("tx_duration", self.tx_duration)?;
        if self.blocklength() < 1.0 {
            return Err(CommsError::ShortBlock(self.blocklength()));
        }
        Ok(())
    }

    /// Channel uses per packet, tau * W.
    pub fn blocklength(&self) -> f64 {
        self.tx_duration * self.bandwidth
    }
}

impl Default for ChannelConfig {
    /// SNR 3 (linear) over a 160-symbol block.
    fn default() -> Self {
        Self {
            large_scale_gain: 1.0,
            small_scale_gain: 1.0,
            transmit_power: 3.0e-3,
            noise_psd: 1.0e-9,
            bandwidth: 1.0e6,
            tx_duration: 1.6e-4,
        }
    }
}

/// Communication error probabilities of teleoperation mode.
///
/// Both values are accepted on the closed interval so the completion model can
/// be evaluated at its boundaries; the rate formula itself requires an open
/// interval for the decoding error and checks that separately.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBudget {
    pub decoding_error: f64,
    pub queuing_violation: f64,
}

impl ReliabilityBudget {
    pub fn new(decoding_error: f64, queuing_violation: f64) -> Result<Self, CommsError> {
        closed_unit("decoding_error", decoding_error)?;
        closed_unit("queuing_violation", queuing_violation)?;
        Ok(Self {
            decoding_error,
            queuing_violation,
        })
    }
}

impl Default for ReliabilityBudget {
    fn default() -> Self {
        Self {
            decoding_error: 1e-5,
            queuing_violation: 1e-5,
        }
    }
}

/// Error probabilities of autonomous mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AutonomyErrorBudget {
    pub task_pred_error: f64,
    pub detect_fail: f64,
    pub traj_pred_error: f64,
}

impl AutonomyErrorBudget {
    pub fn new(
        task_pred_error: f64,
        detect_fail: f64,
        traj_pred_error: f64,
    ) -> Result<Self, CommsError> {
        closed_unit("task_pred_error", task_pred_error)?;
        closed_unit("detect_fail", detect_fail)?;
        closed_unit("traj_pred_error", traj_pred_error)?;
        Ok(Self {
            task_pred_error,
            detect_fail,
            traj_pred_error,
        })
    }
}

/// Slot bookkeeping of one task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoadAccount {
    pub tele_slots: u64,
    pub total_slots: u64,
    pub bits_per_slot: f64,
}

impl LoadAccount {
    pub fn new(tele_slots: u64, total_slots: u64, bits_per_slot: f64) -> Result<Self, CommsError> {
        if total_slots == 0 {
            return Err(CommsError::NonPositive {
                name: "total_slots",
                value: 0.0,
            });
        }
        if tele_slots > total_slots {
            return Err(CommsError::SlotOverflow {
                tele: tele_slots,
                total: total_slots,
            });
        }
        positive("bits_per_slot", bits_per_slot)?;
        Ok(Self {
            tele_slots,
            total_slots,
            bits_per_slot,
        })
    }

    pub fn tele_fraction(&self) -> f64 {
        self.tele_slots as f64 / self.total_slots as f64
    }

    /// Average bits per slot with a fixed payload per teleoperation slot.
    pub fn fixed_payload_load(&self) -> f64 {
        self.tele_fraction() * self.bits_per_slot
    }
}

/// Linear received SNR.
pub fn snr(cfg: &ChannelConfig) -> f64 {
    cfg.large_scale_gain * cfg.small_scale_gain * cfg.transmit_power / (cfg.noise_psd * cfg.bandwidth)
}

pub fn shannon_capacity(snr: f64) -> Result<f64, CommsError> {
    if !(snr >= 0.0) {
        return Err(CommsError::NegativeSnr(snr));
    }
    Ok(snr.ln_1p() * LOG2_E)
}

/// Channel dispersion in bits^2, `(log2 e)^2 (1 - (1+snr)^-2)`.
pub fn channel_dispersion(snr: f64) -> Result<f64, CommsError> {
    if !(snr >= 0.0) {
        return Err(CommsError::NegativeSnr(snr));
    }
    let inv = 1.0 / (1.0 + snr);
    Ok(LOG2_E * LOG2_E * (1.0 - inv * inv))
}

/// Gaussian tail probability `Q(x) = P(N(0,1) > x)`.
pub fn q_function(x: f64) -> f64 {
    0.5 * libm::erfc(x / SQRT_2)
}

/// Inverse of the Gaussian Q-function on the open unit interval.
pub fn q_inverse(eps: f64) -> Result<f64, CommsError> {
    open_unit("eps", eps)?;
    // Q^-1(eps) = -Phi^-1(eps); evaluating at eps keeps full precision in the tail.
    Ok(-normal_quantile(eps))
}

/// Standard normal quantile, Wichura's AS 241 (PPND16), ~1e-16 relative accuracy.
fn normal_quantile(p: f64) -> f64 {
    const SPLIT1: f64 = 0.425;
    const SPLIT2: f64 = 5.0;
    const CONST1: f64 = 0.180625;
    const CONST2: f64 = 1.6;

    const A: [f64; 8] = [
        3.387_132_872_796_366_5,
        1.331_416_678_917_843_8e2,
        1.971_590_950_306_551_3e3,
        1.373_169_376_550_946e4,
        4.592_195_393_154_987e4,
        6.726_577_092_700_87e4,
        3.343_057_558_358_813e4,
        2.509_080_928_730_122_7e3,
    ];
    const B: [f64; 8] = [
        1.0,
        4.231_333_070_160_091e1,
        6.871_870_074_920_579e2,
        5.394_196_021_424_751e3,
        2.121_379_430_158_659_7e4,
        3.930_789_580_009_271e4,
        2.872_908_573_572_194_3e4,
        5.226_495_278_852_545e3,
    ];
    const C: [f64; 8] = [
        1.423_437_110_749_683_5,
        4.630_337_846_156_546,
        5.769_497_221_460_691,
        3.647_848_324_763_204_5,
        1.270_458_252_452_368_4,
        2.417_807_251_774_506e-1,
        2.272_384_498_926_918_4e-2,
        7.745_450_142_783_414e-4,
    ];
    const D: [f64; 8] = [
        1.0,
        2.053_191_626_637_759,
        1.676_384_830_183_803_8,
        6.897_673_349_851e-1,
        1.481_039_764_274_800_8e-1,
        1.519_866_656_361_645_7e-2,
        5.475_938_084_995_345e-4,
        1.050_750_071_644_416_9e-9,
    ];
    const E: [f64; 8] = [
        6.657_904_643_501_103,
        5.463_784_911_164_114,
        1.784_826_539_917_291_3,
        2.965_605_718_285_048_7e-1,
        2.653_218_952_657_612_4e-2,
        1.242_660_947_388_078_4e-3,
        2.711_555_568_743_487_6e-5,
        2.010_334_399_292_288_1e-7,
    ];
    const F: [f64; 8] = [
        1.0,
        5.998_322_065_558_88e-1,
        1.369_298_809_227_358e-1,
        1.487_536_129_085_061_5e-2,
        7.868_691_311_456_133e-4,
        1.846_318_317_510_054_8e-5,
        1.421_511_758_316_446e-7,
        2.044_263_103_389_939_7e-15,
    ];

    fn poly(coef: &[f64; 8], x: f64) -> f64 {
        coef.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }

    let q = p - 0.5;
    if q.abs() <= SPLIT1 {
        let r = CONST1 - q * q;
        return q * poly(&A, r) / poly(&B, r);
    }
    let r = if q < 0.0 { p } else { 1.0 - p };
    let r = (-r.ln()).sqrt();
    let x = if r <= SPLIT2 {
        let r = r - CONST2;
        poly(&C, r) / poly(&D, r)
    } else {
        let r = r - SPLIT2;
        poly(&E, r) / poly(&F, r)
    };
    if q < 0.0 {
        -x
    } else {
        x
    }
}

/// Normal-approximation achievable rate at blocklength tau*W and decoding error `eps_d`.
pub fn achievable_rate(cfg: &ChannelConfig, eps_d: f64) -> Result<f64, CommsError> {
    cfg.validate()?;
    let gamma = snr(cfg);
    let capacity = shannon_capacity(gamma)?;
    let penalty = (channel_dispersion(gamma)? / cfg.blocklength()).sqrt() * q_inverse(eps_d)?;
    if penalty >= capacity {
        return Err(CommsError::RateUnderflow { capacity, penalty });
    }
    Ok(capacity - penalty)
}

/// Average bits per slot when every teleoperation slot carries a full
/// finite-blocklength packet: `(d/Z) * tau*W * B`.
pub fn communication_load(
    tele_slots: u64,
    total_slots: u64,
    cfg: &ChannelConfig,
    eps_d: f64,
) -> Result<f64, CommsError> {
    if total_slots == 0 {
        return Err(CommsError::NonPositive {
            name: "total_slots",
            value: 0.0,
        });
    }
    if tele_slots > total_slots {
        return Err(CommsError::SlotOverflow {
            tele: tele_slots,
            total: total_slots,
        });
    }
    let rate = achievable_rate(cfg, eps_d)?;
    Ok(tele_slots as f64 / total_slots as f64 * cfg.blocklength() * rate)
}

/// Completion probability in teleoperation mode, `(1-eps_q)(1-eps_d) rho`.
pub fn p_tele(budget: &ReliabilityBudget, rho: f64) -> f64 {
    (1.0 - budget.queuing_violation) * (1.0 - budget.decoding_error) * rho.clamp(0.0, 1.0)
}

/// Completion probability in autonomous mode. A task-level error only fails
/// the task when the detector also misses it.
pub fn p_auto(budget: &AutonomyErrorBudget) -> f64 {
    let c = budget.task_pred_error;
    ((1.0 - c) + c * (1.0 - budget.detect_fail)) * (1.0 - budget.traj_pred_error)
}

pub fn p_overall(p_t: f64, p_mu: f64, p_sigma: f64) -> f64 {
    p_t * p_mu + (1.0 - p_t) * p_sigma
}

pub fn meets_requirement(p_o: f64, psi: f64) -> bool {
    p_o > psi
}


#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn q_inverse_round_trips(log_eps in (1e-9f64).ln()..0.5f64.ln()) {
            let eps = log_eps.exp();
            let back = q_function(q_inverse(eps).unwrap());
            prop_assert!((back - eps).abs() / eps < 1e-12, "{eps}: {back}");
        }

        #[test]
        fn rate_never_exceeds_capacity(gamma in 0.01f64..100.0, n in 16.0f64..4096.0, eps in 1e-9f64..0.5) {
            let cfg = ChannelConfig::new(1.0, 1.0, gamma, 1.0, 1.0, n).unwrap();
            let c = shannon_capacity(gamma).unwrap();
            match achievable_rate(&cfg, eps) {
                Ok(b) => prop_assert!(b <= c),
                Err(CommsError::RateUnderflow { .. }) => {}
                Err(e) => prop_assert!(false, "{e}"),
            }
        }

        #[test]
        fn rate_grows_with_blocklength(gamma in 0.5f64..50.0, n in 64.0f64..1024.0, eps in 1e-7f64..0.4) {
            let short = achievable_rate(&ChannelConfig::new(1.0, 1.0, gamma, 1.0, 1.0, n).unwrap(), eps);
            let long = achievable_rate(&ChannelConfig::new(1.0, 1.0, gamma, 1.0, 1.0, 2.0 * n).unwrap(), eps);
            if let (Ok(s), Ok(l)) = (short, long) {
                prop_assert!(l > s);
            }
        }

        #[test]
        fn load_monotone_in_slots_and_reliability(d in 0u64..100, eps in 1e-8f64..0.3) {
            let cfg = ChannelConfig::new(1.0, 1.0, 3.0, 1.0, 1.0, 256.0).unwrap();
            let a = communication_load(d, 100, &cfg, eps).unwrap();
            let b = communication_load(d + 1, 100, &cfg, eps).unwrap();
            prop_assert!(b >= a);
            let stricter = communication_load(d, 100, &cfg, eps / 10.0).unwrap();
            prop_assert!(stricter <= a);
        }

        #[test]
        fn probabilities_stay_in_unit_interval(
            eq in 0.0f64..=1.0, ed in 0.0f64..=1.0, rho in 0.0f64..=1.0,
            c in 0.0f64..=1.0, f in 0.0f64..=1.0, t in 0.0f64..=1.0, pt in 0.0f64..=1.0,
        ) {
            let mu = p_tele(&ReliabilityBudget::new(ed, eq).unwrap(), rho);
            let sigma = p_auto(&AutonomyErrorBudget::new(c, f, t).unwrap());
            let o = p_overall(pt, mu, sigma);
            for p in [mu, sigma, o] {
                prop_assert!((0.0..=1.0).contains(&p));
            }
        }

        #[test]
        fn p_auto_monotone(c in 0.0f64..0.99, f in 0.0f64..0.99, t in 0.0f64..0.99, dx in 0.0f64..0.01) {
            let base = p_auto(&AutonomyErrorBudget::new(c, f, t).unwrap());
            prop_assert!(p_auto(&AutonomyErrorBudget::new(c + dx, f, t).unwrap()) <= base + 1e-15);
            prop_assert!(p_auto(&AutonomyErrorBudget::new(c, f + dx, t).unwrap()) <= base + 1e-15);
            prop_assert!(p_auto(&AutonomyErrorBudget::new(c, f, t + dx).unwrap()) <= base + 1e-15);
        }

        #[test]
        fn p_overall_is_linear_in_pt(a in 0.0f64..=1.0, b in 0.0f64..=1.0, mu in 0.0f64..=1.0, sigma in 0.0f64..=1.0) {
            let mid = p_overall(0.5 * (a + b), mu, sigma);
            let avg = 0.5 * (p_overall(a, mu, sigma) + p_overall(b, mu, sigma));
            prop_assert!((mid - avg).abs() < 1e-14);
        }
    }
}
