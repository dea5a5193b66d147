//! The atomic map element: a 3D Gaussian with color, opacity, and an
//! optional object tag.

use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use thiserror::Error;

use crate::math;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SplatError {
    #[error("scale component {value} is not strictly positive")]
    NonPositiveScale { value: f64 },
    #[error("quaternion norm {norm} deviates from 1 by more than 1e-6")]
    QuaternionNotUnit { norm: f64 },
    #[error("opacity {value} outside the open interval (0, 1)")]
    OpacityOutOfRange { value: f64 },
    #[error("color component {value} outside [0, 1]")]
    ColorOutOfRange { value: f64 },
}

/// One 3D Gaussian. The covariance is stored factored as per-axis scales and
/// an orientation quaternion, so `covariance()` is positive definite by
/// construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Splat {
    /// Gaussian center, world meters.
    pub center: Vector3<f64>,
    /// Per-axis standard deviations, meters; strictly positive.
    pub scale: Vector3<f64>,
    /// Orientation of the scale axes.
    pub rotation: UnitQuaternion<f64>,
    /// RGB in [0, 1].
    pub color: Vector3<f64>,
    /// Compositing alpha in (0, 1).
    pub opacity: f64,
    /// Object membership tag, shared by all splats of one segmented instance.
    pub object_id: Option<u64>,
}

impl Splat {
    /// Isotropic splat with identity orientation.
    pub fn isotropic(center: Vector3<f64>, radius: f64, color: Vector3<f64>, opacity: f64) -> Self {
        Self {
            center,
            scale: Vector3::new(radius, radius, radius),
            rotation: UnitQuaternion::identity(),
            color,
            opacity,
            object_id: None,
        }
    }

    pub fn validate(&self) -> Result<(), SplatError> {
        for &s in self.scale.iter() {
            if !(s > 0.0) {
                return Err(SplatError::NonPositiveScale { value: s });
            }
        }
        let norm = self.rotation.as_ref().norm();
        if math::abs(norm - 1.0) > 1e-6 {
            return Err(SplatError::QuaternionNotUnit { norm });
        }
        if !(self.opacity > 0.0 && self.opacity < 1.0) {
            return Err(SplatError::OpacityOutOfRange { value: self.opacity });
        }
        for &c in self.color.iter() {
            if !(0.0..=1.0).contains(&c) {
                return Err(SplatError::ColorOutOfRange { value: c });
            }
        }
        Ok(())
    }

    /// Effective covariance `R diag(scale^2) R^T`.
    pub fn covariance(&self) -> Matrix3<f64> {
        let r = self.rotation.to_rotation_matrix();
        let d = Matrix3::from_diagonal(&self.scale.component_mul(&self.scale));
        r * d * r.transpose()
    }

    /// Inverse covariance, computed from the factored form (exact for any
    /// valid scale, no matrix inversion involved).
    pub fn inverse_covariance(&self) -> Matrix3<f64> {
        let r = self.rotation.to_rotation_matrix();
        let inv = Vector3::new(
            1.0 / (self.scale.x * self.scale.x),
            1.0 / (self.scale.y * self.scale.y),
            1.0 / (self.scale.z * self.scale.z),
        );
        r * Matrix3::from_diagonal(&inv) * r.transpose()
    }

    /// Axis-aligned 1-sigma half-extent of the Gaussian support, i.e. the
    /// square roots of the covariance diagonal.
    pub fn sigma_extent(&self) -> Vector3<f64> {
        let cov = self.covariance();
        Vector3::new(math::sqrt(cov[(0, 0)]), math::sqrt(cov[(1, 1)]), math::sqrt(cov[(2, 2)]))
    }
}

/// Color scaled by the Gaussian falloff at `x`:
/// `c * exp(-1/2 (x - mu)^T Sigma^-1 (x - mu))`. Equals `c` exactly at the
/// center.
pub fn evaluate_gaussian(splat: &Splat, x: &Vector3<f64>) -> Vector3<f64> {
    let d = x - splat.center;
    // Quadratic form via the factored covariance: |diag(1/s) R^T d|^2.
    let local = splat.rotation.inverse() * d;
    let scaled = local.component_div(&splat.scale);
    let q = scaled.norm_squared();
    splat.color * math::exp(-0.5 * q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn unit_splat() -> Splat {
        Splat::isotropic(Vector3::new(0.0, 0.0, 0.0), 1.0, Vector3::new(0.2, 0.4, 0.8), 0.5)
    }

    #[test]
    fn value_at_center_is_color() {
        let s = unit_splat();
        assert_eq!(evaluate_gaussian(&s, &s.center), s.color);
    }

    #[test]
    fn unit_covariance_at_sqrt2_offset() {
        let s = unit_splat();
        // |x - mu| = sqrt(2) with Sigma = I gives quadratic form 2.
        let x = Vector3::new(1.0, 1.0, 0.0);
        let expected = s.color * math::exp(-1.0);
        assert_relative_eq!(evaluate_gaussian(&s, &x), expected, epsilon = 1e-15);
    }

    #[test]
    fn anisotropic_offset_along_major_axis() {
        // scale (2,1,1) and offset (2,0,0): Sigma^-1 = diag(1/4,1,1), so the
        // quadratic form is 4 * 1/4 = 1 and the falloff exp(-1/2).
        let mut s = unit_splat();
        s.scale = Vector3::new(2.0, 1.0, 1.0);
        let x = Vector3::new(2.0, 0.0, 0.0);
        let expected = s.color * math::exp(-0.5);
        assert_relative_eq!(evaluate_gaussian(&s, &x), expected, epsilon = 1e-15);
    }

    #[test]
    fn covariance_is_spd_via_cholesky() {
        let mut s = unit_splat();
        s.scale = Vector3::new(0.03, 0.5, 2.0);
        s.rotation = UnitQuaternion::from_scaled_axis(Vector3::new(0.4, -1.2, 0.7));
        let cov = s.covariance();
        assert!(nalgebra::Cholesky::new(cov).is_some());
    }

    #[test]
    fn validate_rejects_bad_fields() {
        let mut s = unit_splat();
        s.scale.y = 0.0;
        assert!(matches!(s.validate(), Err(SplatError::NonPositiveScale { .. })));

        let mut s = unit_splat();
        s.opacity = 1.0;
        assert!(matches!(s.validate(), Err(SplatError::OpacityOutOfRange { .. })));

        let mut s = unit_splat();
        s.color.x = 1.5;
        assert!(matches!(s.validate(), Err(SplatError::ColorOutOfRange { .. })));
    }

    proptest! {
        /// The falloff is maximal at the center and strictly decreasing along
        /// rays from it.
        #[test]
        fn decreasing_along_rays(
            scale in proptest::array::uniform3(0.05..2.0f64),
            axis in proptest::array::uniform3(-1.0..1.0f64),
            dir in proptest::array::uniform3(-1.0..1.0f64),
        ) {
            let dir_v = Vector3::new(dir[0], dir[1], dir[2]);
            prop_assume!(dir_v.norm() > 1e-3);
            let mut s = unit_splat();
            s.scale = Vector3::new(scale[0], scale[1], scale[2]);
            s.rotation = UnitQuaternion::from_scaled_axis(Vector3::new(axis[0], axis[1], axis[2]));

            let dir_n = dir_v.normalize();
            let mut prev = evaluate_gaussian(&s, &s.center).norm();
            for step in 1..=8 {
                let x = s.center + dir_n * (step as f64 * 0.25);
                let val = evaluate_gaussian(&s, &x).norm();
                prop_assert!(val < prev);
                prev = val;
            }
        }

        /// Rotating the splat and evaluating at the correspondingly rotated
        /// point gives the original value.
        #[test]
        fn rotation_invariance(
            scale in proptest::array::uniform3(0.05..2.0f64),
            rot in proptest::array::uniform3(-2.0..2.0f64),
            offset in proptest::array::uniform3(-1.5..1.5f64),
        ) {
            let mut s = unit_splat();
            s.center = Vector3::new(0.3, -0.2, 0.9);
            s.scale = Vector3::new(scale[0], scale[1], scale[2]);
            let x = s.center + Vector3::new(offset[0], offset[1], offset[2]);

            let extra = UnitQuaternion::from_scaled_axis(Vector3::new(rot[0], rot[1], rot[2]));
            let mut rotated = s.clone();
            rotated.rotation = extra * s.rotation;
            let x_rotated = extra * (x - s.center) + s.center;

            let a = evaluate_gaussian(&s, &x);
            let b = evaluate_gaussian(&rotated, &x_rotated);
            prop_assert!((a - b).norm() < 1e-9, "{:?} vs {:?}", a, b);
        }
    }
}
