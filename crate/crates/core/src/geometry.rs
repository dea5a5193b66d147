//! Pinhole projection, back-projection, and axis-aligned boxes.

use nalgebra::Vector3;
use thiserror::Error;

use crate::camera::CameraIntrinsics;
use crate::pose::Pose;

/// Points closer than this to the camera plane are treated as behind it.
pub const MIN_PROJECTION_DEPTH: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point behind camera (camera-frame depth {depth:.3e})")]
    BehindCamera { depth: f64 },
    #[error("invalid depth {depth} (must be > 0)")]
    InvalidDepth { depth: f64 },
}

/// Projects a world point into pixel coordinates, returning `(u, v, z)` with
/// `z` the camera-frame depth.
pub fn project(
    point_world: &Vector3<f64>,
    pose: &Pose,
    intrinsics: &CameraIntrinsics,
) -> Result<(f64, f64, f64), GeometryError> {
    let pc = pose.world_to_camera(point_world);
    if pc.z <= MIN_PROJECTION_DEPTH {
        return Err(GeometryError::BehindCamera { depth: pc.z });
    }
    let u = intrinsics.fx * pc.x / pc.z + intrinsics.cx;
    let v = intrinsics.fy * pc.y / pc.z + intrinsics.cy;
    Ok((u, v, pc.z))
}

/// Lifts pixel `(u, v)` at camera depth `d` into a world point:
/// `x_c = d * K^-1 [u, v, 1]^T`, then `x_w = R x_c + t`.
pub fn back_project(
    u: f64,
    v: f64,
    depth: f64,
    pose: &Pose,
    intrinsics: &CameraIntrinsics,
) -> Result<Vector3<f64>, GeometryError> {
    if depth <= 0.0 {
        return Err(GeometryError::InvalidDepth { depth });
    }
    let x = (u - intrinsics.cx) / intrinsics.fx * depth;
    let y = (v - intrinsics.cy) / intrinsics.fy * depth;
    Ok(pose.camera_to_world(&Vector3::new(x, y, depth)))
}

/// Axis-aligned box in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl Aabb {
    pub fn new(min: Vector3<f64>, max: Vector3<f64>) -> Self {
        Self { min, max }
    }

    /// Smallest box containing all points; `None` when empty.
    pub fn from_points<'a, I: IntoIterator<Item = &'a Vector3<f64>>>(points: I) -> Option<Self> {
        let mut iter = points.into_iter();
        let first = iter.next()?;
        let mut min = *first;
        let mut max = *first;
        for p in iter {
            min = min.inf(p);
            max = max.sup(p);
        }
        Some(Self { min, max })
    }

    pub fn center(&self) -> Vector3<f64> {
        (self.min + self.max) * 0.5
    }

    pub fn extent(&self) -> Vector3<f64> {
        self.max - self.min
    }

    pub fn volume(&self) -> f64 {
        let e = self.extent();
        (e.x.max(0.0)) * (e.y.max(0.0)) * (e.z.max(0.0))
    }

    pub fn contains(&self, point: &Vector3<f64>) -> bool {
        point.x >= self.min.x
            && point.x <= self.max.x
            && point.y >= self.min.y
            && point.y <= self.max.y
            && point.z >= self.min.z
            && point.z <= self.max.z
    }

    pub fn union(&self, other: &Aabb) -> Aabb {
        Aabb { min: self.min.inf(&other.min), max: self.max.sup(&other.max) }
    }

    /// Expands every face outward by `pad` per axis.
    pub fn padded(&self, pad: &Vector3<f64>) -> Aabb {
        Aabb { min: self.min - pad, max: self.max + pad }
    }

    pub fn corners(&self) -> [Vector3<f64>; 8] {
        let (lo, hi) = (self.min, self.max);
        [
            Vector3::new(lo.x, lo.y, lo.z),
            Vector3::new(hi.x, lo.y, lo.z),
            Vector3::new(lo.x, hi.y, lo.z),
            Vector3::new(hi.x, hi.y, lo.z),
            Vector3::new(lo.x, lo.y, hi.z),
            Vector3::new(hi.x, lo.y, hi.z),
            Vector3::new(lo.x, hi.y, hi.z),
            Vector3::new(hi.x, hi.y, hi.z),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::Rotation3;
    use proptest::prelude::*;

    fn intrinsics() -> CameraIntrinsics {
        CameraIntrinsics::new(100.0, 100.0, 50.0, 50.0, 160, 101)
    }

    #[test]
    fn optical_axis_point_projects_to_principal_point() {
        let (u, v, z) =
            project(&Vector3::new(0.0, 0.0, 2.0), &Pose::identity(), &intrinsics()).unwrap();
        assert_relative_eq!(u, 50.0, epsilon = 1e-12);
        assert_relative_eq!(v, 50.0, epsilon = 1e-12);
        assert_relative_eq!(z, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn off_axis_point_follows_pinhole_formula() {
        let (u, v, z) =
            project(&Vector3::new(2.0, 0.0, 2.0), &Pose::identity(), &intrinsics()).unwrap();
        assert_relative_eq!(u, 150.0, epsilon = 1e-12);
        assert_relative_eq!(v, 50.0, epsilon = 1e-12);
        assert_relative_eq!(z, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn point_behind_camera_errors() {
        let err = project(&Vector3::new(0.0, 0.0, -1.0), &Pose::identity(), &intrinsics());
        assert!(matches!(err, Err(GeometryError::BehindCamera { .. })));
    }

    #[test]
    fn back_project_principal_ray() {
        let p = back_project(50.0, 50.0, 2.0, &Pose::identity(), &intrinsics()).unwrap();
        assert_relative_eq!(p, Vector3::new(0.0, 0.0, 2.0), epsilon = 1e-12);
    }

    #[test]
    fn back_project_off_axis() {
        let p = back_project(150.0, 50.0, 2.0, &Pose::identity(), &intrinsics()).unwrap();
        assert_relative_eq!(p, Vector3::new(2.0, 0.0, 2.0), epsilon = 1e-12);
    }

    #[test]
    fn back_project_respects_pose_translation() {
        let pose = Pose::from_translation(Vector3::new(1.0, 0.0, 0.0));
        let p = back_project(50.0, 50.0, 2.0, &pose, &intrinsics()).unwrap();
        assert_relative_eq!(p, Vector3::new(1.0, 0.0, 2.0), epsilon = 1e-12);
    }

    #[test]
    fn back_project_rejects_nonpositive_depth() {
        assert!(matches!(
            back_project(50.0, 50.0, 0.0, &Pose::identity(), &intrinsics()),
            Err(GeometryError::InvalidDepth { .. })
        ));
        assert!(matches!(
            back_project(50.0, 50.0, -2.0, &Pose::identity(), &intrinsics()),
            Err(GeometryError::InvalidDepth { .. })
        ));
    }

    #[test]
    fn aabb_basics() {
        let b = Aabb::new(Vector3::new(0.0, 0.0, 0.0), Vector3::new(1.0, 2.0, 3.0));
        assert_relative_eq!(b.volume(), 6.0);
        assert!(b.contains(&Vector3::new(0.5, 1.0, 2.9)));
        assert!(!b.contains(&Vector3::new(1.5, 1.0, 2.9)));
        assert_relative_eq!(b.center(), Vector3::new(0.5, 1.0, 1.5));
        assert_eq!(b.corners().len(), 8);
    }

    proptest! {
        /// back_project . project is the identity (and vice versa) for any
        /// valid pose, pixel, and depth.
        #[test]
        fn projection_round_trip(
            u in 0.0..159.0f64,
            v in 0.0..100.0f64,
            d in 0.05..50.0f64,
            axis in proptest::array::uniform3(-1.0..1.0f64),
            angle in -3.0..3.0f64,
            t in proptest::array::uniform3(-5.0..5.0f64),
        ) {
            let axis_v = Vector3::new(axis[0], axis[1], axis[2]);
            let rotation = if axis_v.norm() > 1e-6 {
                Rotation3::from_scaled_axis(axis_v.normalize() * angle)
            } else {
                Rotation3::identity()
            };
            let pose = Pose::new(rotation, Vector3::new(t[0], t[1], t[2]));
            let intr = intrinsics();

            let world = back_project(u, v, d, &pose, &intr).unwrap();
            let (u2, v2, d2) = project(&world, &pose, &intr).unwrap();
            prop_assert!((u2 - u).abs() < 1e-4, "u {} vs {}", u2, u);
            prop_assert!((v2 - v).abs() < 1e-4, "v {} vs {}", v2, v);
            prop_assert!((d2 - d).abs() < 1e-6);

            let world2 = back_project(u2, v2, d2, &pose, &intr).unwrap();
            prop_assert!((world2 - world).norm() < 1e-6);
        }
    }
}
