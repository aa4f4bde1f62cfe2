//! Constant-velocity Kalman filter over `(cx, cy, aspect, height)` box states.
//!
//! The state vector is `(cx, cy, a, h, vcx, vcy, va, vh)`. Position, height and
//! their velocities get noise proportional to the current box height; the
//! aspect ratio is dimensionless and uses fixed small deviations instead.

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::BoundingBox;

pub type StateVector = SVector<f64, 8>;
pub type StateCovariance = SMatrix<f64, 8, 8>;
type MeasurementVector = SVector<f64, 4>;
type MeasurementMatrix = SMatrix<f64, 4, 8>;

/// Aspect ratio deviations: initial/process position, process velocity, measurement.
const ASPECT_POSITION_STD: f64 = 1e-2;
const ASPECT_VELOCITY_STD: f64 = 1e-5;
const ASPECT_MEASUREMENT_STD: f64 = 1e-1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KalmanParams {
    /// Position noise per unit of box height.
    pub std_position: f64,
    /// Velocity noise per unit of box height.
    pub std_velocity: f64,
    /// Measurement noise per unit of box height.
    pub std_measurement: f64,
    /// Multiplier on `std_position` for a freshly initiated track.
    pub init_position_scale: f64,
    /// Multiplier on `std_velocity` for a freshly initiated track.
    pub init_velocity_scale: f64,
}

impl Default for KalmanParams {
    fn default() -> Self {
        Self {
            std_position: 1.0 / 20.0,
            std_velocity: 1.0 / 160.0,
            std_measurement: 1.0 / 20.0,
            init_position_scale: 2.0,
            init_velocity_scale: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanState {
    pub mean: StateVector,
    pub covariance: StateCovariance,
}

impl KalmanState {
    pub fn cx(&self) -> f64 {
        self.mean[0]
    }

    pub fn cy(&self) -> f64 {
        self.mean[1]
    }

    pub fn aspect(&self) -> f64 {
        self.mean[2]
    }

    pub fn height(&self) -> f64 {
        self.mean[3]
    }

    /// Largest absolute difference between the covariance and its transpose.
    pub fn asymmetry(&self) -> f64 {
        (self.covariance - self.covariance.transpose()).amax()
    }
}

fn measurement_of(b: &BoundingBox) -> MeasurementVector {
    let (cx, cy) = b.center();
    MeasurementVector::new(cx, cy, b.w() / b.h(), b.h())
}

fn transition() -> StateCovariance {
    let mut f = StateCovariance::identity();
    for i in 0..4 {
        f[(i, i + 4)] = 1.0;
    }
    f
}

fn observation() -> MeasurementMatrix {
    MeasurementMatrix::from_fn(|r, c| if r == c { 1.0 } else { 0.0 })
}

fn symmetrize(p: &StateCovariance) -> StateCovariance {
    (p + p.transpose()) * 0.5
}

pub fn kf_initiate(b: &BoundingBox, params: &KalmanParams) -> KalmanState {
    let z = measurement_of(b);
    let mut mean = StateVector::zeros();
    mean.fixed_rows_mut::<4>(0).copy_from(&z);

    let h = b.h();
    let sp = params.std_position * params.init_position_scale * h;
    let sv = params.std_velocity * params.init_velocity_scale * h;
    let std = [sp, sp, ASPECT_POSITION_STD, sp, sv, sv, ASPECT_VELOCITY_STD, sv];
    let covariance = StateCovariance::from_diagonal(&StateVector::from_fn(|i, _| std[i] * std[i]));
    KalmanState { mean, covariance }
}

pub fn kf_predict(state: &KalmanState, params: &KalmanParams) -> KalmanState {
    let h = state.height().abs();
    let sp = params.std_position * h;
    let sv = params.std_velocity * h;
    let std = [sp, sp, ASPECT_POSITION_STD, sp, sv, sv, ASPECT_VELOCITY_STD, sv];
    let q = StateCovariance::from_diagonal(&StateVector::from_fn(|i, _| std[i] * std[i]));

    let f = transition();
    KalmanState {
        mean: f * state.mean,
        covariance: symmetrize(&(f * state.covariance * f.transpose() + q)),
    }
}

/// Measurement update in Joseph form, followed by explicit symmetrization.
pub fn kf_update(state: &KalmanState, observed: &BoundingBox, params: &KalmanParams) -> KalmanState {
    let h = state.height().abs();
    let sm = params.std_measurement * h;
    let r_std = [sm, sm, ASPECT_MEASUREMENT_STD, sm];
    let r = SMatrix::<f64, 4, 4>::from_diagonal(&MeasurementVector::from_fn(|i, _| r_std[i] * r_std[i]));

    let hm = observation();
    let p = &state.covariance;
    let s = hm * p * hm.transpose() + r;
    // S is SPD because R has a strictly positive diagonal.
    let s_inv = s
        .cholesky()
        .map(|c| c.inverse())
        .or_else(|| s.try_inverse())
        .unwrap_or_else(SMatrix::<f64, 4, 4>::zeros);
    let gain = p * hm.transpose() * s_inv;

    let innovation = measurement_of(observed) - hm * state.mean;
    let mean = state.mean + gain * innovation;

    let i_kh = StateCovariance::identity() - gain * hm;
    let covariance = i_kh * p * i_kh.transpose() + gain * r * gain.transpose();
    KalmanState {
        mean,
        covariance: symmetrize(&covariance),
    }
}

/// Decodes the position part of the state back into a top-left/size box.
pub fn state_to_box(state: &KalmanState) -> Result<BoundingBox> {
    let (a, h) = (state.aspect(), state.height());
    if !(a > 0.0 && h > 0.0) {
        return Err(Error::Divergence { aspect: a, height: h });
    }
    let w = a * h;
    BoundingBox::new(state.cx() - w / 2.0, state.cy() - h / 2.0, w, h)
        .map_err(|_| Error::Divergence { aspect: a, height: h })
}
