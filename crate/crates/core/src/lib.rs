//! Intelligent mode switching for long-distance teleoperation.
//!
//! The crate couples a finite-blocklength communication-load model with a
//! task completion model, trains the learners that drive autonomy (intention
//! classifier, trajectory predictors, DQN switching agent) on synthetic
//! letter-writing trajectories, and runs the Monte Carlo sweeps comparing
//! intelligent switching against conventional teleoperation.

#[cfg(test)]
macro_rules! assert_close {
    ($a:expr, $b:expr, $tol:expr) => {{
        let (a, b): (f64, f64) = ($a, $b);
        assert!((a - b).abs() <= $tol, "{} vs {} (tol {})", a, b, $tol);
    }};
}

pub mod comms;
pub mod data;
pub mod dqn;
pub mod env;
pub mod experiment;
pub mod intent;
pub mod nn;
pub mod rng;
pub mod traj;
