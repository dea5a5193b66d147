//! Tiled forward rasterization.

use nalgebra::Vector3;

use crate::camera::CameraIntrinsics;
use crate::map::SplatMap;
use crate::pose::Pose;

use super::{project_splats, ProjectedSplat, RenderOutput, RenderParams, TileGrid};

pub(crate) fn render_with_params(
    map: &SplatMap,
    pose: &Pose,
    intrinsics: &CameraIntrinsics,
    params: &RenderParams,
) -> RenderOutput {
    let width = intrinsics.width as usize;
    let height = intrinsics.height as usize;
    let mut out = RenderOutput::zeros(width, height);
    if map.is_empty() {
        return out;
    }

    let splats = project_splats(map, pose, intrinsics, params);
    let grid = TileGrid::build(&splats, width, height, params.tile_size);

    for ty in 0..grid.tiles_y {
        for tx in 0..grid.tiles_x {
            let bin = grid.bin(tx, ty);
            if bin.is_empty() {
                continue;
            }
            let x_end = (tx * params.tile_size + params.tile_size).min(width);
            let y_end = (ty * params.tile_size + params.tile_size).min(height);
            for py in ty * params.tile_size..y_end {
                for px in tx * params.tile_size..x_end {
                    let (rgb, draw, sil) =
                        composite_pixel(&splats, bin, px as f64, py as f64, params);
                    out.rgb.set(px, py, rgb);
                    out.silhouette.set(px, py, sil);
                    out.depth.set(px, py, draw / sil.max(params.silhouette_epsilon));
                }
            }
        }
    }
    out
}

/// Front-to-back alpha compositing of the splats listed in `bin` (already in
/// depth order) at one pixel: returns accumulated color, depth, and
/// silhouette.
#[inline]
fn composite_pixel(
    splats: &[ProjectedSplat],
    bin: &[u32],
    px: f64,
    py: f64,
    params: &RenderParams,
) -> (Vector3<f64>, f64, f64) {
    let mut rgb = Vector3::zeros();
    let mut draw = 0.0;
    let mut sil = 0.0;
    let mut transmittance = 1.0;
    for &i in bin {
        let ps = &splats[i as usize];
        let dx = px - ps.mean2d.x;
        let dy = py - ps.mean2d.y;
        if dx.max(-dx) > ps.radius || dy.max(-dy) > ps.radius {
            continue;
        }
        let alpha = ps.alpha(px, py, params);
        if alpha <= 0.0 {
            continue;
        }
        let weight = alpha * transmittance;
        rgb += ps.color * weight;
        draw += ps.z * weight;
        sil += weight;
        transmittance *= 1.0 - alpha;
    }
    (rgb, draw, sil)
}
