use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{Predictor, PredictorKind, TrajError};
use crate::data::Trajectory;

/// Default RRMSE (percent) above which an autonomously completed
/// trajectory counts as failed.
pub const DEFAULT_THETA_TRAJ: f64 = 10.0;

/// Probability that the predicted remainder of a task is unusable, as a
/// function of the observed fraction at the switch.
///
/// Lookups snap to the nearest grid point (ties go to the larger fraction).
/// Fractions more than half a grid spacing below the first point return
/// `below_grid`: no predictor exists for such short windows, so the default
/// of 1 makes autonomous completion fail.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajErrorCurve {
    points: Vec<(f64, f64)>,
    pub theta: f64,
    pub below_grid: f64,
}

impl TrajErrorCurve {
    pub fn new(points: Vec<(f64, f64)>, theta: f64, below_grid: f64) -> Result<Self, TrajError> {
        if points.is_empty() {
            return Err(TrajError::InvalidCurve("no points".into()));
        }
        for (i, &(f, e)) in points.iter().enumerate() {
            if !(f > 0.0 && f <= 1.0) {
                return Err(TrajError::InvalidCurve(format!("fraction {f} outside (0, 1]")));
            }
            if !(0.0..=1.0).contains(&e) {
                return Err(TrajError::InvalidCurve(format!("error {e} outside [0, 1]")));
            }
            if i > 0 && f <= points[i - 1].0 {
                return Err(TrajError::InvalidCurve("fractions must be strictly increasing".into()));
            }
        }
        if !(0.0..=1.0).contains(&below_grid) {
            return Err(TrajError::InvalidCurve(format!("below-grid error {below_grid} outside [0, 1]")));
        }
        if !(theta > 0.0) {
            return Err(TrajError::InvalidCurve(format!("theta must be positive, got {theta}")));
        }
        Ok(Self {
            points,
            theta,
            below_grid,
        })
    }

    /// The same error everywhere, including below the grid.
    pub fn constant(error: f64) -> Result<Self, TrajError> {
        Self::new(vec![(1.0, error)], DEFAULT_THETA_TRAJ, error)
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn error_at(&self, fraction: f64) -> f64 {
        let p = &self.points;
        if p.len() > 1 {
            let half = p.windows(2).map(|w| w[1].0 - w[0].0).fold(f64::INFINITY, f64::min) / 2.0;
            if fraction < p[0].0 - half - 1e-12 {
                return self.below_grid;
            }
        } else {
            return p[0].1;
        }
        let mut best = 0;
        for (i, &(f, _)) in p.iter().enumerate() {
            let d = (fraction - f).abs();
            let bd = (fraction - p[best].0).abs();
            if d < bd - 1e-12 || (d <= bd + 1e-12 && f > p[best].0) {
                best = i;
            }
        }
        p[best].1
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), TrajError> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["fraction", "epsilon_t"])?;
        for &(f, e) in &self.points {
            wr.write_record([f.to_string(), e.to_string()])?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Reads `fraction,epsilon_t` rows; `theta` and `below_grid` are not part
    /// of the file.
    pub fn read_csv<R: Read>(r: R, theta: f64, below_grid: f64) -> Result<Self, TrajError> {
        let mut rd = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(r);
        let mut points = Vec::new();
        for rec in rd.deserialize() {
            let (f, e): (f64, f64) = rec?;
            points.push((f, e));
        }
        Self::new(points, theta, below_grid)
    }
}

impl Default for TrajErrorCurve {
    /// Failure rates measured for the default LSTM predictors on the default
    /// synthetic dataset at a 10% RRMSE tolerance (mean of five seeds).
    fn default() -> Self {
        Self::new(
            vec![(0.5, 0.973), (0.6, 0.393), (0.7, 0.039), (0.8, 0.0), (0.9, 0.0)],
            DEFAULT_THETA_TRAJ,
            1.0,
        )
        .expect("valid default curve")
    }
}

/// Fraction of test suffixes whose RRMSE exceeds `theta`, one point per
/// predictor. Predictors must be ordered by increasing fraction.
pub fn traj_error_curve(predictors: &[Predictor], test: &[&Trajectory], theta: f64) -> Result<TrajErrorCurve, TrajError> {
    if test.is_empty() {
        return Err(TrajError::Empty("test split"));
    }
    let mut points = Vec::with_capacity(predictors.len());
    for p in predictors {
        let errs = p.evaluate(test)?;
        let failed = errs.iter().filter(|&&e| e > theta).count();
        points.push((p.fraction, failed as f64 / errs.len() as f64));
    }
    TrajErrorCurve::new(points, theta, 1.0)
}

/// One row of the train/test RRMSE table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RrmseRow {
    pub fraction: f64,
    pub train_rrmse: f64,
    pub test_rrmse: f64,
    pub kind: PredictorKind,
}

pub fn write_rrmse_table<W: Write>(rows: &[RrmseRow], w: W) -> Result<(), TrajError> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["fraction", "train_rrmse", "test_rrmse", "kind"])?;
    for r in rows {
        wr.write_record([
            r.fraction.to_string(),
            r.train_rrmse.to_string(),
            r.test_rrmse.to_string(),
            r.kind.name().to_string(),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snaps_to_nearest_grid_point() {
        let c = TrajErrorCurve::new(
            vec![(0.5, 0.04), (0.6, 0.03), (0.7, 0.015), (0.8, 0.01), (0.9, 0.005)],
            DEFAULT_THETA_TRAJ,
            1.0,
        )
        .unwrap();
        assert_eq!(c.error_at(0.5), 0.04);
        assert_eq!(c.error_at(0.64), 0.03);
        assert_eq!(c.error_at(0.65), 0.015);
        assert_eq!(c.error_at(0.46), 0.04);
        assert_eq!(c.error_at(0.45), 0.04);
        assert_eq!(c.error_at(0.44), 1.0);
        assert_eq!(c.error_at(0.0), 1.0);
        assert_eq!(c.error_at(1.0), 0.005);
    }

    #[test]
    fn constant_curve_is_flat() {
        let c = TrajErrorCurve::constant(0.2).unwrap();
        for f in [0.0, 0.1, 0.5, 1.0] {
            assert_eq!(c.error_at(f), 0.2);
        }
    }

    #[test]
    fn csv_roundtrip_and_validation() {
        let c = TrajErrorCurve::default();
        let mut buf = Vec::new();
        c.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("fraction,epsilon_t\n"));
        assert_eq!(TrajErrorCurve::read_csv(&buf[..], DEFAULT_THETA_TRAJ, 1.0).unwrap(), c);
        assert!(TrajErrorCurve::new(vec![(0.6, 0.1), (0.5, 0.1)], 10.0, 1.0).is_err());
        assert!(TrajErrorCurve::new(vec![(0.6, 0.1)], 0.0, 1.0).is_err());
    }

    #[test]
    fn rrmse_table_layout() {
        let rows = [RrmseRow {
            fraction: 0.5,
            train_rrmse: 10.0,
            test_rrmse: 12.5,
            kind: PredictorKind::Cnn,
        }];
        let mut buf = Vec::new();
        write_rrmse_table(&rows, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "fraction,train_rrmse,test_rrmse,kind\n0.5,10,12.5,cnn\n"
        );
    }
}
