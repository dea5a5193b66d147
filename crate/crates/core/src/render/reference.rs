//! Brute-force reference renderer. Defines the rasterization semantics: for
//! every pixel, walk every splat in depth order and composite. No tiles, no
//! culling. Kept deliberately self-contained so it can serve as the oracle
//! for the tiled path.

use alloc::vec::Vec;
use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};

use crate::camera::CameraIntrinsics;
use crate::map::SplatMap;
use crate::math;
use crate::pose::Pose;

use super::{RenderOutput, RenderParams};

struct RefSplat {
    z: f64,
    slot: usize,
    mean: Vector2<f64>,
    inv_cov: Matrix2<f64>,
    color: Vector3<f64>,
    opacity: f64,
}

pub fn render_reference_with_params(
    map: &SplatMap,
    pose: &Pose,
    intrinsics: &CameraIntrinsics,
    params: &RenderParams,
) -> RenderOutput {
    let width = intrinsics.width as usize;
    let height = intrinsics.height as usize;
    let mut out = RenderOutput::zeros(width, height);

    let rot_wc: Matrix3<f64> = *pose.rotation.inverse().matrix();
    let (fx, fy) = (intrinsics.fx, intrinsics.fy);

    let mut prepared: Vec<RefSplat> = Vec::new();
    for (slot, splat) in map.splats.iter().enumerate() {
        let xc = rot_wc * (splat.center - pose.translation);
        if xc.z <= params.min_depth {
            continue;
        }
        let mean = Vector2::new(
            fx * xc.x / xc.z + intrinsics.cx,
            fy * xc.y / xc.z + intrinsics.cy,
        );
        // 2D covariance J (W Sigma W^T) J^T, spelled out component-wise.
        let cov_cam = rot_wc * splat.covariance() * rot_wc.transpose();
        let z2 = xc.z * xc.z;
        let j00 = fx / xc.z;
        let j02 = -fx * xc.x / z2;
        let j11 = fy / xc.z;
        let j12 = -fy * xc.y / z2;
        // Row vectors of J times Sigma_cam.
        let r0 = Vector3::new(
            j00 * cov_cam[(0, 0)] + j02 * cov_cam[(2, 0)],
            j00 * cov_cam[(0, 1)] + j02 * cov_cam[(2, 1)],
            j00 * cov_cam[(0, 2)] + j02 * cov_cam[(2, 2)],
        );
        let r1 = Vector3::new(
            j11 * cov_cam[(1, 0)] + j12 * cov_cam[(2, 0)],
            j11 * cov_cam[(1, 1)] + j12 * cov_cam[(2, 1)],
            j11 * cov_cam[(1, 2)] + j12 * cov_cam[(2, 2)],
        );
        let a = r0.x * j00 + r0.z * j02;
        let b = r0.y * j11 + r0.z * j12;
        let c = r1.y * j11 + r1.z * j12;
        let det = a * c - b * b;
        if det <= 1e-300 {
            continue;
        }
        let inv_cov = Matrix2::new(c / det, -b / det, -b / det, a / det);
        prepared.push(RefSplat { z: xc.z, slot, mean, inv_cov, color: splat.color, opacity: splat.opacity });
    }
    prepared.sort_by(|p, q| p.z.total_cmp(&q.z).then(p.slot.cmp(&q.slot)));

    for py in 0..height {
        for px in 0..width {
            let (pxf, pyf) = (px as f64, py as f64);
            let mut rgb = Vector3::zeros();
            let mut draw = 0.0;
            let mut sil = 0.0;
            let mut transmittance = 1.0;
            for s in &prepared {
                let dx = pxf - s.mean.x;
                let dy = pyf - s.mean.y;
                let q = s.inv_cov[(0, 0)] * dx * dx
                    + 2.0 * s.inv_cov[(0, 1)] * dx * dy
                    + s.inv_cov[(1, 1)] * dy * dy;
                let raw = s.opacity * math::exp(-0.5 * q);
                let alpha = math::clamp(
                    (raw - params.alpha_cutoff) / (1.0 - params.alpha_cutoff),
                    0.0,
                    params.alpha_clamp,
                );
                if alpha <= 0.0 {
                    continue;
                }
                let weight = alpha * transmittance;
                rgb += s.color * weight;
                draw += s.z * weight;
                sil += weight;
                transmittance *= 1.0 - alpha;
            }
            out.rgb.set(px, py, rgb);
            out.silhouette.set(px, py, sil);
            out.depth.set(px, py, draw / sil.max(params.silhouette_epsilon));
        }
    }
    out
}
