//! Constant-velocity Kalman filter over `(cx, cy, aspect, h)` box measurements.
//!
//! The state is the 8-vector `(cx, cy, aspect, h, vcx, vcy, vaspect, vh)` with
//! a unit time step. Position-like noise scales with the box height `h`; the
//! aspect components use fixed fractions of the same factors. At the default
//! factors the aspect stds are 1e-2 (position), 1e-2 (velocity) and 1e-1
//! (measurement). Droplets change shape as they speed up, so the aspect
//! velocity noise is far above the 1e-5 common for rigid targets.

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::geometry::{BBox, GeometryError, Measurement};

pub type StateVector = SVector<f64, 8>;
pub type StateCovariance = SMatrix<f64, 8, 8>;
type MeasVector = SVector<f64, 4>;
type MeasCovariance = SMatrix<f64, 4, 4>;

/// Chi-square 0.95 quantile with 4 degrees of freedom.
pub const CHI2_95_4DOF: f64 = 9.4877;

const ASPECT_POS_RATIO: f64 = 0.2;
const ASPECT_VEL_RATIO: f64 = 1.6;
const ASPECT_MEAS_RATIO: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum KalmanError {
    #[error("measurement must be finite with positive aspect and height: {0:?}")]
    InvalidMeasurement([f64; 4]),
    #[error("innovation covariance is numerically singular")]
    SingularInnovation,
    #[error("noise factors must be positive and finite")]
    InvalidNoise,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    pub pos_std_factor: f64,
    pub vel_std_factor: f64,
    pub meas_std_factor: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig { pos_std_factor: 1.0 / 20.0, vel_std_factor: 1.0 / 160.0, meas_std_factor: 1.0 / 20.0 }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<(), KalmanError> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if ok(self.pos_std_factor) && ok(self.vel_std_factor) && ok(self.meas_std_factor) {
            Ok(())
        } else {
            Err(KalmanError::InvalidNoise)
        }
    }

    fn process_std(&self, h: f64) -> [f64; 8] {
        let p = self.pos_std_factor * h;
        let v = self.vel_std_factor * h;
        [
            p,
            p,
            self.pos_std_factor * ASPECT_POS_RATIO,
            p,
            v,
            v,
            self.vel_std_factor * ASPECT_VEL_RATIO,
            v,
        ]
    }

    fn measurement_std(&self, h: f64) -> [f64; 4] {
        let m = self.meas_std_factor * h;
        [m, m, self.meas_std_factor * ASPECT_MEAS_RATIO, m]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanState {
    pub mean: StateVector,
    pub covariance: StateCovariance,
}

impl KalmanState {
    pub fn measurement(&self) -> Measurement {
        Measurement::new(self.mean[0], self.mean[1], self.mean[2], self.mean[3])
    }

    pub fn bbox(&self) -> Result<BBox, GeometryError> {
        BBox::from_measurement(&self.measurement())
    }
}

fn check_measurement(m: &Measurement) -> Result<MeasVector, KalmanError> {
    if !m.is_finite() || m.h <= 0.0 || m.aspect <= 0.0 {
        return Err(KalmanError::InvalidMeasurement(m.as_array()));
    }
    Ok(MeasVector::from(m.as_array()))
}

fn diag_sq<const N: usize>(std: [f64; N]) -> SMatrix<f64, N, N> {
    SMatrix::from_diagonal(&SVector::from(std.map(|s| s * s)))
}

fn symmetrize(c: &mut StateCovariance) {
    let t = c.transpose();
    *c = (*c + t) * 0.5;
}

/// New track state at the measured position with zero velocity.
pub fn initiate(m: &Measurement, cfg: &NoiseConfig) -> Result<KalmanState, KalmanError> {
    let z = check_measurement(m)?;
    let mut mean = StateVector::zeros();
    mean.fixed_rows_mut::<4>(0).copy_from(&z);
    let p = cfg.pos_std_factor * m.h;
    let v = cfg.vel_std_factor * m.h;
    let std = [
        2.0 * p,
        2.0 * p,
        cfg.pos_std_factor * ASPECT_POS_RATIO,
        2.0 * p,
        10.0 * v,
        10.0 * v,
        cfg.vel_std_factor * ASPECT_VEL_RATIO,
        10.0 * v,
    ];
    Ok(KalmanState { mean, covariance: diag_sq(std) })
}

fn transition() -> StateCovariance {
    let mut f = StateCovariance::identity();
    for i in 0..4 {
        f[(i, i + 4)] = 1.0;
    }
    f
}

/// Advances the state one frame.
pub fn predict(s: &KalmanState, cfg: &NoiseConfig) -> KalmanState {
    let f = transition();
    let q = diag_sq(cfg.process_std(s.mean[3]));
    let mean = f * s.mean;
    let mut covariance = f * s.covariance * f.transpose() + q;
    symmetrize(&mut covariance);
    KalmanState { mean, covariance }
}

/// Predicted measurement mean and innovation covariance.
fn project(s: &KalmanState, cfg: &NoiseConfig) -> (MeasVector, MeasCovariance) {
    let mean = s.mean.fixed_rows::<4>(0).into_owned();
    let cov = s.covariance.fixed_view::<4, 4>(0, 0).into_owned() + diag_sq(cfg.measurement_std(s.mean[3]));
    (mean, cov)
}

/// Kalman correction with measurement `m`.
pub fn update(s: &KalmanState, m: &Measurement, cfg: &NoiseConfig) -> Result<KalmanState, KalmanError> {
    let z = check_measurement(m)?;
    let (proj_mean, proj_cov) = project(s, cfg);
    let chol = proj_cov.cholesky().ok_or(KalmanError::SingularInnovation)?;
    // P H^T is the first four columns of P.
    let pht: SMatrix<f64, 8, 4> = s.covariance.fixed_columns::<4>(0).into_owned();
    // K = P H^T S^-1, solved as S K^T = H P.
    let gain = chol.solve(&pht.transpose()).transpose();
    let innovation = z - proj_mean;
    let mean = s.mean + gain * innovation;
    let mut covariance = s.covariance - gain * proj_cov * gain.transpose();
    symmetrize(&mut covariance);
    Ok(KalmanState { mean, covariance })
}

/// Squared Mahalanobis distance of `m` from the predicted measurement distribution.
pub fn gating_distance(s: &KalmanState, m: &Measurement, cfg: &NoiseConfig) -> Result<f64, KalmanError> {
    let z = check_measurement(m)?;
    let (proj_mean, proj_cov) = project(s, cfg);
    let chol = proj_cov.cholesky().ok_or(KalmanError::SingularInnovation)?;
    let d = z - proj_mean;
    let l = chol.l();
    let y = l.solve_lower_triangular(&d).ok_or(KalmanError::SingularInnovation)?;
    Ok(y.norm_squared())
}
