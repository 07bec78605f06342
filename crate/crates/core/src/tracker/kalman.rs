//! Constant-velocity Kalman filter in image space.
//!
//! State is `(cx, cy, h, aspect, vcx, vcy, vh)`; the aspect ratio has no
//! velocity and only random-walks through process noise. Noise standard
//! deviations scale with the box height.

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::geometry::PixelBox;

pub type StateVec = SVector<f64, 7>;
pub type StateCov = SMatrix<f64, 7, 7>;
pub type MeasVec = SVector<f64, 4>;
pub type MeasCov = SMatrix<f64, 4, 4>;

const CX: usize = 0;
const CY: usize = 1;
const H: usize = 2;
const ASPECT: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanState {
    pub mean: StateVec,
    pub covariance: StateCov,
}

impl KalmanState {
    pub fn bbox(&self) -> PixelBox {
        let h = self.mean[H].max(1e-6);
        PixelBox {
            cx: self.mean[CX],
            cy: self.mean[CY],
            w: (self.mean[ASPECT] * h).max(1e-6),
            h,
        }
    }

    pub fn velocity(&self) -> (f64, f64, f64) {
        (self.mean[4], self.mean[5], self.mean[6])
    }
}

/// Standard deviations, relative to box height except for the aspect terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KalmanNoise {
    pub process_pos: f64,
    pub process_vel: f64,
    pub process_aspect: f64,
    pub measure_pos: f64,
    pub measure_aspect: f64,
}

impl Default for KalmanNoise {
    fn default() -> Self {
        Self {
            process_pos: 1.0 / 20.0,
            process_vel: 1.0 / 160.0,
            process_aspect: 1e-2,
            measure_pos: 1.0 / 20.0,
            measure_aspect: 1e-1,
        }
    }
}

fn measurement(b: &PixelBox) -> MeasVec {
    MeasVec::new(b.cx, b.cy, b.h, b.aspect())
}

fn observation() -> SMatrix<f64, 4, 7> {
    let mut m = SMatrix::<f64, 4, 7>::zeros();
    for k in 0..4 {
        m[(k, k)] = 1.0;
    }
    m
}

fn symmetrize(p: &mut StateCov) {
    *p = (*p + p.transpose()) * 0.5;
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct KalmanFilter {
    pub noise: KalmanNoise,
}

impl KalmanFilter {
    pub fn new(noise: KalmanNoise) -> Self {
        Self { noise }
    }

    pub fn measurement_noise(&self, height: f64) -> MeasCov {
        let p = (self.noise.measure_pos * height).powi(2);
        MeasCov::from_diagonal(&SVector::<f64, 4>::new(p, p, p, self.noise.measure_aspect.powi(2)))
    }

    /// New state from a single detection, velocities zero with wide uncertainty.
    pub fn initiate(&self, b: &PixelBox) -> KalmanState {
        let z = measurement(b);
        let mut mean = StateVec::zeros();
        mean.fixed_rows_mut::<4>(0).copy_from(&z);
        let pos = (2.0 * self.noise.process_pos * b.h).powi(2);
        let vel = (10.0 * self.noise.process_vel * b.h).powi(2);
        let diag = StateVec::from_column_slice(&[pos, pos, pos, self.noise.process_aspect.powi(2), vel, vel, vel]);
        KalmanState {
            mean,
            covariance: StateCov::from_diagonal(&diag),
        }
    }

    /// Two-point start: position from `current`, velocity from the difference
    /// to `previous` over `dt` frames, with the matching difference covariance.
    pub fn initiate_two_point(&self, previous: &PixelBox, current: &PixelBox, dt: f64) -> KalmanState {
        let z0 = measurement(previous);
        let z1 = measurement(current);
        let r = self.measurement_noise(current.h);
        let mut mean = StateVec::zeros();
        mean.fixed_rows_mut::<4>(0).copy_from(&z1);
        let mut cov = StateCov::zeros();
        cov[(ASPECT, ASPECT)] = r[(ASPECT, ASPECT)];
        for k in [CX, CY, H] {
            let v = 4 + k;
            mean[v] = (z1[k] - z0[k]) / dt;
            let rk = r[(k, k)];
            cov[(k, k)] = rk;
            cov[(v, v)] = 2.0 * rk / (dt * dt);
            cov[(k, v)] = rk / dt;
            cov[(v, k)] = rk / dt;
        }
        KalmanState { mean, covariance: cov }
    }

    pub fn predict(&self, state: &KalmanState, dt: f64) -> KalmanState {
        let mut f = StateCov::identity();
        f[(CX, 4)] = dt;
        f[(CY, 5)] = dt;
        f[(H, 6)] = dt;
        let h = state.mean[H].abs();
        let (sp, sv) = ((self.noise.process_pos * h).powi(2), (self.noise.process_vel * h).powi(2));
        let q = StateCov::from_diagonal(&StateVec::from_column_slice(&[
            sp,
            sp,
            sp,
            self.noise.process_aspect.powi(2),
            sv,
            sv,
            sv,
        ])) * dt;
        let mut covariance = f * state.covariance * f.transpose() + q;
        symmetrize(&mut covariance);
        KalmanState {
            mean: f * state.mean,
            covariance,
        }
    }

    /// Linear correction with an explicit measurement covariance.
    pub fn correct(&self, state: &KalmanState, z: &MeasVec, r: &MeasCov) -> KalmanState {
        let hm = observation();
        let s = hm * state.covariance * hm.transpose() + r;
        let s_inv = s
            .try_inverse()
            .expect("innovation covariance is positive definite");
        let gain = state.covariance * hm.transpose() * s_inv;
        let innovation = z - hm * state.mean;
        let mean = state.mean + gain * innovation;
        // Joseph form keeps the covariance symmetric positive semi-definite
        let ikh = StateCov::identity() - gain * hm;
        let mut covariance = ikh * state.covariance * ikh.transpose() + gain * r * gain.transpose();
        symmetrize(&mut covariance);
        KalmanState { mean, covariance }
    }

    pub fn update(&self, state: &KalmanState, b: &PixelBox) -> KalmanState {
        self.correct(state, &measurement(b), &self.measurement_noise(state.mean[H].abs()))
    }
}

/// Constant-velocity prediction with default noise.
pub fn kalman_predict(state: &KalmanState, dt_frames: f64) -> KalmanState {
    KalmanFilter::default().predict(state, dt_frames)
}

/// Correction against a detected box with default noise.
pub fn kalman_update(state: &KalmanState, b: &PixelBox) -> KalmanState {
    KalmanFilter::default().update(state, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::SymmetricEigen;

    fn moving(cx: f64, cy: f64, vx: f64, vy: f64) -> KalmanState {
        let mut s = KalmanFilter::default().initiate(&PixelBox::new(cx, cy, 20.0, 40.0).unwrap());
        s.mean[4] = vx;
        s.mean[5] = vy;
        s
    }

    fn min_eigen(p: &StateCov) -> f64 {
        SymmetricEigen::new(*p).eigenvalues.min()
    }

    #[test]
    fn one_step_linear_motion() {
        let s = kalman_predict(&moving(10.0, 10.0, 1.0, 0.0), 1.0);
        assert_eq!((s.mean[0], s.mean[1]), (11.0, 10.0));
    }

    #[test]
    fn zero_velocity_grows_covariance_only() {
        let s0 = moving(10.0, 10.0, 0.0, 0.0);
        let s1 = kalman_predict(&s0, 1.0);
        assert_eq!(s1.mean, s0.mean);
        for k in 0..7 {
            assert!(s1.covariance[(k, k)] > s0.covariance[(k, k)]);
        }
        let mut f = StateCov::identity();
        for k in 0..3 {
            f[(k, k + 4)] = 1.0;
        }
        let q = s1.covariance - f * s0.covariance * f.transpose();
        assert!(min_eigen(&q) > 0.0);
    }

    #[test]
    fn five_predicts_match_closed_form() {
        let mut s = moving(10.0, 10.0, 2.0, -1.0);
        for _ in 0..5 {
            s = kalman_predict(&s, 1.0);
        }
        assert!((s.mean[0] - 20.0).abs() < 1e-12);
        assert!((s.mean[1] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn update_at_predicted_mean_is_a_no_op_on_the_mean() {
        let s = kalman_predict(&moving(50.0, 60.0, 3.0, 1.0), 1.0);
        let u = kalman_update(&s, &s.bbox());
        for k in 0..7 {
            assert!((u.mean[k] - s.mean[k]).abs() < 1e-9);
        }
    }

    #[test]
    fn huge_measurement_noise_keeps_prior() {
        let kf = KalmanFilter::default();
        let s = moving(50.0, 60.0, 0.0, 0.0);
        let z = MeasVec::new(80.0, 90.0, 40.0, 0.5);
        let u = kf.correct(&s, &z, &(MeasCov::identity() * 1e18));
        for k in 0..7 {
            assert!((u.mean[k] - s.mean[k]).abs() < 1e-9);
        }
    }

    #[test]
    fn scalar_gain_matches_closed_form() {
        // diagonal prior: each measured component updates like a 1-D filter
        let kf = KalmanFilter::default();
        let mut s = moving(0.0, 0.0, 0.0, 0.0);
        s.covariance = StateCov::from_diagonal(&StateVec::from_column_slice(&[4.0, 9.0, 1.0, 0.01, 1.0, 1.0, 1.0]));
        s.mean[2] = 40.0;
        s.mean[3] = 0.5;
        let r = MeasCov::from_diagonal(&SVector::<f64, 4>::new(1.0, 3.0, 1.0, 0.01));
        let z = MeasVec::new(10.0, -6.0, 40.0, 0.5);
        let u = kf.correct(&s, &z, &r);
        let gain_x = 4.0 / (4.0 + 1.0);
        let gain_y = 9.0 / (9.0 + 3.0);
        assert!((u.mean[0] - gain_x * 10.0).abs() < 1e-12);
        assert!((u.mean[1] - gain_y * -6.0).abs() < 1e-12);
        assert!((u.covariance[(0, 0)] - (1.0 - gain_x) * 4.0).abs() < 1e-12);
        assert!((u.covariance[(1, 1)] - (1.0 - gain_y) * 9.0).abs() < 1e-12);
        assert_eq!(u.mean[4], 0.0);
    }

    #[test]
    fn posterior_shrinks_in_measured_subspace() {
        let kf = KalmanFilter::default();
        let s = kalman_predict(&moving(100.0, 100.0, 1.0, 2.0), 1.0);
        let u = kf.update(&s, &PixelBox::new(104.0, 99.0, 22.0, 41.0).unwrap());
        let hm = observation();
        let prior = hm * s.covariance * hm.transpose();
        let post = hm * u.covariance * hm.transpose();
        assert!(SymmetricEigen::new(prior - post).eigenvalues.min() >= -1e-9);
        assert!(min_eigen(&u.covariance) >= -1e-9);
    }

    #[test]
    fn two_point_start_is_exact_on_linear_motion() {
        let kf = KalmanFilter::default();
        let at = |k: f64| PixelBox::new(100.0 + 3.0 * k, 50.0 - 1.5 * k, 20.0, 40.0 + 0.5 * k).unwrap();
        let mut s = kf.initiate_two_point(&at(0.0), &at(1.0), 1.0);
        for k in 2..30 {
            s = kf.predict(&s, 1.0);
            let truth = at(k as f64);
            assert!((s.mean[0] - truth.cx).abs() < 1e-6);
            assert!((s.mean[1] - truth.cy).abs() < 1e-6);
            s = kf.update(&s, &truth);
        }
        assert!(min_eigen(&s.covariance) >= -1e-9);
    }
}
