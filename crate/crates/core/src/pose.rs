//! Camera pose as a rigid transform from camera to world coordinates.

use alloc::vec::Vec;
use nalgebra::{Matrix3, Rotation3, Vector3};
use thiserror::Error;

use crate::math;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PoseError {
    #[error("rotation is not orthonormal (|R^T R - I| = {deviation:.3e})")]
    NotOrthonormal { deviation: f64 },
    #[error("rotation determinant {det} is not +1")]
    NotProper { det: f64 },
}

/// Camera-to-world rigid transform: `x_world = rotation * x_camera + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Rotation3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self { rotation: Rotation3::identity(), translation: Vector3::zeros() }
    }

    pub fn new(rotation: Rotation3<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    pub fn from_matrix_translation(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation: Rotation3::from_matrix_unchecked(rotation), translation }
    }

    /// Pure translation.
    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self { rotation: Rotation3::identity(), translation }
    }

    pub fn validate(&self, tol: f64) -> Result<(), PoseError> {
        let r = self.rotation.matrix();
        let dev = (r.transpose() * r - Matrix3::identity()).norm();
        if dev > tol {
            return Err(PoseError::NotOrthonormal { deviation: dev });
        }
        let det = r.determinant();
        if math::abs(det - 1.0) > tol {
            return Err(PoseError::NotProper { det });
        }
        Ok(())
    }

    /// World point to camera coordinates.
    pub fn world_to_camera(&self, point: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.inverse() * (point - self.translation)
    }

    /// Camera point to world coordinates.
    pub fn camera_to_world(&self, point: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * point + self.translation
    }

    /// Composition: `self` then applied after `other` (`self * other` as transforms).
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rot_inv = self.rotation.inverse();
        Pose { rotation: rot_inv, translation: -(rot_inv * self.translation) }
    }

    /// Applies a tangent-space update: rotation is right-multiplied by
    /// `exp([omega]x)`, translation moves in world coordinates. The result is
    /// orthonormal by construction (the retraction).
    pub fn retract(&self, omega: &Vector3<f64>, tau: &Vector3<f64>) -> Pose {
        Pose {
            rotation: self.rotation * Rotation3::from_scaled_axis(*omega),
            translation: self.translation + tau,
        }
    }

    /// Rotation angle in radians between the two poses' orientations.
    pub fn rotation_angle_to(&self, other: &Pose) -> f64 {
        let rel = self.rotation.inverse() * other.rotation;
        let trace = rel.matrix().trace();
        math::acos(math::clamp((trace - 1.0) / 2.0, -1.0, 1.0))
    }

    pub fn translation_distance_to(&self, other: &Pose) -> f64 {
        (self.translation - other.translation).norm()
    }

    /// Row-major rotation followed by translation, as stored in manifests and
    /// the map file trailer.
    pub fn to_row_major(&self) -> [f64; 12] {
        let r = self.rotation.matrix();
        [
            r[(0, 0)], r[(0, 1)], r[(0, 2)],
            r[(1, 0)], r[(1, 1)], r[(1, 2)],
            r[(2, 0)], r[(2, 1)], r[(2, 2)],
            self.translation.x, self.translation.y, self.translation.z,
        ]
    }

    pub fn from_row_major(values: &[f64; 12]) -> Self {
        let rotation = Matrix3::new(
            values[0], values[1], values[2],
            values[3], values[4], values[5],
            values[6], values[7], values[8],
        );
        Self::from_matrix_translation(rotation, Vector3::new(values[9], values[10], values[11]))
    }
}

/// Constant-velocity pose extrapolation from a trajectory.
///
/// With one pose the guess is that pose; with two or more the most recent
/// relative transform is applied once more. An empty history falls back to
/// the identity.
pub fn extrapolate(history: &[Pose], constant_velocity: bool) -> Pose {
    match history.len() {
        0 => Pose::identity(),
        1 => history[0],
        n => {
            if !constant_velocity {
                return history[n - 1];
            }
            let prev = &history[n - 2];
            let last = &history[n - 1];
            let step = prev.inverse().compose(last);
            last.compose(&step)
        }
    }
}

/// Poses of the tracked trajectory, most recent last.
pub type PoseHistory = Vec<Pose>;
