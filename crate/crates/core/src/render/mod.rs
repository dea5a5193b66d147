//! Differentiable forward rendering of a splat map to RGB, depth, and
//! silhouette images, with analytic gradients for camera pose and splat
//! parameters.
//!
//! Splats are projected to 2D Gaussians (EWA-style first-order Jacobian),
//! sorted front-to-back by camera depth, and alpha-composited per pixel. The
//! brute-force [`render_reference`] defines the semantics; the tiled
//! [`render`] must agree with it.

mod backward;
mod forward;
mod reference;

pub use backward::{
    mapping_loss, mapping_loss_and_gradients, render_with_gradients, tracking_loss,
    LossWeights, MappingWeights, RenderGradients, SplatGradients,
};
pub(crate) use backward::tracking_evaluate as backward_entry;
pub use reference::render_reference_with_params;

use alloc::vec::Vec;
use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use thiserror::Error;

use crate::camera::CameraIntrinsics;
use crate::image::{ColorImage, ScalarImage};
use crate::map::SplatMap;
use crate::math;
use crate::pose::Pose;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RenderError {
    #[error("target is {t_w}x{t_h} but intrinsics expect {e_w}x{e_h}")]
    DimensionMismatch { t_w: usize, t_h: usize, e_w: u32, e_h: u32 },
    #[error("no valid pixels under the loss mask; tracking cannot proceed on this frame")]
    DegenerateLoss,
}

/// Rasterization constants. Defaults follow common splatting practice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderParams {
    /// Contributions with raw alpha at or below this are skipped. The
    /// compositing alpha is shifted by this cutoff so skipped splats
    /// contribute exactly zero and alpha stays continuous.
    pub alpha_cutoff: f64,
    /// Upper clamp on per-splat alpha; bounds compositing depth.
    pub alpha_clamp: f64,
    /// Tile edge in pixels for the tiled renderer.
    pub tile_size: usize,
    /// Splats with camera depth at or below this are behind the camera.
    pub min_depth: f64,
    /// Extra pixels added to the per-splat cull radius.
    pub radius_margin: f64,
    /// Floor for the silhouette when normalizing accumulated depth.
    pub silhouette_epsilon: f64,
}

impl Default for RenderParams {
    fn default() -> Self {
        Self {
            alpha_cutoff: 1.0 / 255.0,
            alpha_clamp: 0.999,
            tile_size: 16,
            min_depth: 1e-6,
            radius_margin: 1.0,
            silhouette_epsilon: 1e-6,
        }
    }
}

/// Forward rendering result.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    pub rgb: ColorImage,
    pub depth: ScalarImage,
    /// Accumulated opacity in [0, 1]; how densely the map explains each pixel.
    pub silhouette: ScalarImage,
}

impl RenderOutput {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            rgb: ColorImage::zeros(width, height),
            depth: ScalarImage::zeros(width, height),
            silhouette: ScalarImage::zeros(width, height),
        }
    }
}

/// Tiled forward render with default parameters.
pub fn render(map: &SplatMap, pose: &Pose, intrinsics: &CameraIntrinsics) -> RenderOutput {
    forward::render_with_params(map, pose, intrinsics, &RenderParams::default())
}

pub fn render_with_params(
    map: &SplatMap,
    pose: &Pose,
    intrinsics: &CameraIntrinsics,
    params: &RenderParams,
) -> RenderOutput {
    forward::render_with_params(map, pose, intrinsics, params)
}

/// Brute-force reference render: per-pixel loop over all splats, no tiling
/// or culling.
pub fn render_reference(map: &SplatMap, pose: &Pose, intrinsics: &CameraIntrinsics) -> RenderOutput {
    reference::render_reference_with_params(map, pose, intrinsics, &RenderParams::default())
}

/// One splat projected to screen space.
pub(crate) struct ProjectedSplat {
    /// Index into `map.splats`.
    pub slot: usize,
    /// Camera-frame depth.
    pub z: f64,
    pub x_cam: Vector3<f64>,
    pub mean2d: Vector2<f64>,
    pub inv_cov2d: Matrix2<f64>,
    /// Pixel radius beyond which this splat's alpha is exactly zero.
    pub radius: f64,
    pub color: Vector3<f64>,
    pub opacity: f64,
}

impl ProjectedSplat {
    /// Shifted, clamped compositing alpha at pixel center `(px, py)`.
    /// Exactly zero whenever the raw alpha is at or below the cutoff.
    #[inline]
    pub fn alpha(&self, px: f64, py: f64, params: &RenderParams) -> f64 {
        let dx = px - self.mean2d.x;
        let dy = py - self.mean2d.y;
        let b = &self.inv_cov2d;
        let q = b[(0, 0)] * dx * dx + 2.0 * b[(0, 1)] * dx * dy + b[(1, 1)] * dy * dy;
        let raw = self.opacity * math::exp(-0.5 * q);
        math::clamp((raw - params.alpha_cutoff) / (1.0 - params.alpha_cutoff), 0.0, params.alpha_clamp)
    }
}

/// Projects every splat, discarding ones behind the camera or with
/// degenerate screen footprints, sorted front-to-back by camera depth.
pub(crate) fn project_splats(
    map: &SplatMap,
    pose: &Pose,
    intrinsics: &CameraIntrinsics,
    params: &RenderParams,
) -> Vec<ProjectedSplat> {
    let w_rot = pose.rotation.inverse();
    let w_mat: Matrix3<f64> = *w_rot.matrix();
    let (fx, fy, cx, cy) = (intrinsics.fx, intrinsics.fy, intrinsics.cx, intrinsics.cy);

    let mut out = Vec::with_capacity(map.splats.len());
    for (slot, splat) in map.splats.iter().enumerate() {
        if splat.opacity <= params.alpha_cutoff {
            continue;
        }
        let x_cam = w_rot * (splat.center - pose.translation);
        let z = x_cam.z;
        if z <= params.min_depth {
            continue;
        }
        let mean2d = Vector2::new(fx * x_cam.x / z + cx, fy * x_cam.y / z + cy);

        let cov_cam = w_mat * splat.covariance() * w_mat.transpose();
        let j = projection_jacobian(&x_cam, fx, fy);
        let cov2d = j * cov_cam * j.transpose();
        let (a, b, c) = (cov2d[(0, 0)], cov2d[(0, 1)], cov2d[(1, 1)]);
        let det = a * c - b * b;
        if det <= 1e-300 {
            continue;
        }
        let inv_cov2d = Matrix2::new(c / det, -b / det, -b / det, a / det);

        let lambda_max = 0.5 * (a + c) + math::sqrt(0.25 * (a - c) * (a - c) + b * b);
        let radius =
            math::sqrt(2.0 * math::ln(splat.opacity / params.alpha_cutoff) * lambda_max)
                + params.radius_margin;

        out.push(ProjectedSplat {
            slot,
            z,
            x_cam,
            mean2d,
            inv_cov2d,
            radius,
            color: splat.color,
            opacity: splat.opacity,
        });
    }
    out.sort_by(|p, q| p.z.total_cmp(&q.z).then(p.slot.cmp(&q.slot)));
    out
}

/// First-order Jacobian of the pinhole projection at a camera-frame point.
#[inline]
pub(crate) fn projection_jacobian(
    x_cam: &Vector3<f64>,
    fx: f64,
    fy: f64,
) -> nalgebra::Matrix2x3<f64> {
    let (x, y, z) = (x_cam.x, x_cam.y, x_cam.z);
    nalgebra::Matrix2x3::new(
        fx / z, 0.0, -fx * x / (z * z),
        0.0, fy / z, -fy * y / (z * z),
    )
}

/// Splat indices (into a depth-sorted projected list) binned per tile.
pub(crate) struct TileGrid {
    pub tiles_x: usize,
    pub tiles_y: usize,
    pub bins: Vec<Vec<u32>>,
}

impl TileGrid {
    pub fn build(
        splats: &[ProjectedSplat],
        width: usize,
        height: usize,
        tile_size: usize,
    ) -> Self {
        let tiles_x = width.div_ceil(tile_size);
        let tiles_y = height.div_ceil(tile_size);
        let mut bins = alloc::vec![Vec::new(); tiles_x * tiles_y];
        for (i, ps) in splats.iter().enumerate() {
            let x0 = math::clamp(math::floor(ps.mean2d.x - ps.radius), 0.0, (width - 1) as f64);
            let x1 = math::clamp(math::ceil(ps.mean2d.x + ps.radius), 0.0, (width - 1) as f64);
            let y0 = math::clamp(math::floor(ps.mean2d.y - ps.radius), 0.0, (height - 1) as f64);
            let y1 = math::clamp(math::ceil(ps.mean2d.y + ps.radius), 0.0, (height - 1) as f64);
            if ps.mean2d.x + ps.radius < 0.0
                || ps.mean2d.x - ps.radius > (width - 1) as f64
                || ps.mean2d.y + ps.radius < 0.0
                || ps.mean2d.y - ps.radius > (height - 1) as f64
            {
                continue;
            }
            let (tx0, tx1) = (x0 as usize / tile_size, x1 as usize / tile_size);
            let (ty0, ty1) = (y0 as usize / tile_size, y1 as usize / tile_size);
            for ty in ty0..=ty1 {
                for tx in tx0..=tx1 {
                    bins[ty * tiles_x + tx].push(i as u32);
                }
            }
        }
        Self { tiles_x, tiles_y, bins }
    }

    pub fn bin(&self, tx: usize, ty: usize) -> &[u32] {
        &self.bins[ty * self.tiles_x + tx]
    }
}

#[cfg(test)]
mod tests;
