//! Map densification from the silhouette mask and splat refinement against
//! keyframe observations.

use alloc::vec::Vec;
use nalgebra::UnitQuaternion;
use thiserror::Error;

use crate::frame::Frame;
use crate::geometry::back_project;
use crate::image::BoolMask;
use crate::map::SplatMap;
use crate::math;
use crate::pose::Pose;
use crate::render::{self, MappingWeights, RenderError, RenderGradients};
use crate::splat::Splat;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MapperError {
    #[error("frame {frame} has no pose")]
    MissingPose { frame: u64 },
    #[error("mask is {m_w}x{m_h}, frame is {f_w}x{f_h}")]
    MaskDimensionMismatch { m_w: usize, m_h: usize, f_w: usize, f_h: usize },
    #[error("refinement needs at least one keyframe with a pose")]
    NoKeyframes,
    #[error(transparent)]
    Render(RenderError),
}

/// Thresholds deciding which pixels need new splats.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensifyThresholds {
    /// Pixels with silhouette below this are unexplained by the map.
    pub silhouette: f64,
    /// Depth-error tolerance as a multiple of the frame's median absolute
    /// depth residual; flags new geometry in front of the map.
    pub depth_error_scale: f64,
}

impl Default for DensifyThresholds {
    fn default() -> Self {
        Self { silhouette: 0.5, depth_error_scale: 5.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapperConfig {
    pub iterations: usize,
    pub step_center: f64,
    pub step_scale: f64,
    pub step_rotation: f64,
    pub step_color: f64,
    pub step_opacity: f64,
    pub color_weight: f64,
    pub depth_weight: f64,
    pub max_backtracks: usize,
    /// Refinement window: this many most recent keyframes...
    pub window_recent: usize,
    /// ...plus this many random earlier ones.
    pub window_random: usize,
    pub min_scale: f64,
    pub opacity_floor: f64,
    pub opacity_ceil: f64,
}

impl Default for MapperConfig {
    fn default() -> Self {
        Self {
            iterations: 60,
            step_center: 2e-3,
            step_scale: 2e-3,
            step_rotation: 2e-3,
            step_color: 8e-2,
            step_opacity: 8e-2,
            color_weight: 0.5,
            depth_weight: 1.0,
            max_backtracks: 10,
            window_recent: 5,
            window_random: 5,
            min_scale: 1e-4,
            opacity_floor: 0.001,
            opacity_ceil: 0.999,
        }
    }
}

impl MapperConfig {
    pub fn mapping_weights(&self) -> MappingWeights {
        MappingWeights {
            color_weight: self.color_weight,
            depth_weight: self.depth_weight,
            ..MappingWeights::default()
        }
    }
}

/// Marks pixels needing densification: valid depth and either silhouette
/// coverage below the threshold or rendered depth in excess of the observed
/// depth (new geometry occluding the map).
pub fn densification_mask(
    map: &SplatMap,
    frame: &Frame,
    thresholds: &DensifyThresholds,
) -> Result<BoolMask, MapperError> {
    let pose = frame.pose.ok_or(MapperError::MissingPose { frame: frame.index })?;
    let width = frame.depth.width;
    let height = frame.depth.height;
    let rendered = render::render(map, &pose, &frame.intrinsics);

    // Median absolute depth residual over covered, depth-valid pixels.
    let mut residuals: Vec<f64> = Vec::new();
    for y in 0..height {
        for x in 0..width {
            if let Some(observed) = frame.valid_depth(x, y) {
                if rendered.silhouette.get(x, y) >= thresholds.silhouette {
                    residuals.push(math::abs(rendered.depth.get(x, y) - observed));
                }
            }
        }
    }
    let depth_tol = if residuals.is_empty() {
        f64::INFINITY
    } else {
        residuals.sort_by(f64::total_cmp);
        thresholds.depth_error_scale * residuals[residuals.len() / 2]
    };

    let mut mask = BoolMask::filled(width, height, false);
    for y in 0..height {
        for x in 0..width {
            let Some(observed) = frame.valid_depth(x, y) else { continue };
            let uncovered = rendered.silhouette.get(x, y) < thresholds.silhouette;
            let in_front = rendered.depth.get(x, y) - observed > depth_tol;
            if uncovered || in_front {
                mask.set(x, y, true);
            }
        }
    }
    Ok(mask)
}

/// Adds one splat per masked pixel (subsampled by `stride`): center from
/// back-projection, color from the pixel, isotropic scale matching the pixel
/// footprint (`d / (2 fx)`), opacity 0.5, untagged. Never touches existing
/// splats; returns the number added.
pub fn densify(
    map: &mut SplatMap,
    frame: &Frame,
    mask: &BoolMask,
    stride: usize,
) -> Result<usize, MapperError> {
    let pose = frame.pose.ok_or(MapperError::MissingPose { frame: frame.index })?;
    if mask.width != frame.depth.width || mask.height != frame.depth.height {
        return Err(MapperError::MaskDimensionMismatch {
            m_w: mask.width,
            m_h: mask.height,
            f_w: frame.depth.width,
            f_h: frame.depth.height,
        });
    }
    let stride = stride.max(1);
    let mut added = 0usize;
    for y in (0..mask.height).step_by(stride) {
        for x in (0..mask.width).step_by(stride) {
            if !mask.get(x, y) {
                continue;
            }
            let Some(d) = frame.valid_depth(x, y) else { continue };
            let Ok(center) = back_project(x as f64, y as f64, d, &pose, &frame.intrinsics) else {
                continue;
            };
            let color = frame.rgb.get(x, y).map(|c| math::clamp(c, 0.0, 1.0));
            let radius = d / (2.0 * frame.intrinsics.fx);
            map.splats.push(Splat::isotropic(center, radius, color, 0.5));
            added += 1;
        }
    }
    Ok(added)
}

/// Refines all splat parameters against the keyframe window by backtracking
/// gradient descent, poses held fixed. Splat invariants are re-established
/// after every step. Returns the final window loss (mean per keyframe).
pub fn refine_map(
    map: &mut SplatMap,
    keyframes: &[&Frame],
    config: &MapperConfig,
) -> Result<f64, MapperError> {
    let mut views: Vec<(&Frame, Pose)> = Vec::with_capacity(keyframes.len());
    for frame in keyframes {
        let pose = frame.pose.ok_or(MapperError::MissingPose { frame: frame.index })?;
        views.push((frame, pose));
    }
    if views.is_empty() {
        return Err(MapperError::NoKeyframes);
    }
    let weights = config.mapping_weights();

    let (mut loss, mut grads) = window_loss_and_gradients(map, &views, &weights)?;
    for _ in 0..config.iterations {
        let base = map.splats.clone();
        let mut accepted = false;
        let mut step_scale = 1.0;
        for _ in 0..=config.max_backtracks {
            map.splats = apply_step(&base, &grads, step_scale, config);
            let candidate_loss = window_loss(map, &views, &weights)?;
            if candidate_loss < loss {
                loss = candidate_loss;
                accepted = true;
                break;
            }
            step_scale *= 0.5;
        }
        if !accepted {
            map.splats = base;
            break;
        }
        let (_, g) = window_loss_and_gradients(map, &views, &weights)?;
        grads = g;
    }
    Ok(loss)
}

fn window_loss(
    map: &SplatMap,
    views: &[(&Frame, Pose)],
    weights: &MappingWeights,
) -> Result<f64, MapperError> {
    let mut total = 0.0;
    for (frame, pose) in views {
        total += render::mapping_loss(map, pose, &frame.intrinsics, frame, weights)
            .map_err(MapperError::Render)?;
    }
    Ok(total / views.len() as f64)
}

fn window_loss_and_gradients(
    map: &SplatMap,
    views: &[(&Frame, Pose)],
    weights: &MappingWeights,
) -> Result<(f64, RenderGradients), MapperError> {
    let mut total = 0.0;
    let mut sum: Option<RenderGradients> = None;
    for (frame, pose) in views {
        let (loss, grads) =
            render::mapping_loss_and_gradients(map, pose, &frame.intrinsics, frame, weights)
                .map_err(MapperError::Render)?;
        total += loss;
        match sum.as_mut() {
            Some(acc) => acc.accumulate(&grads),
            None => sum = Some(grads),
        }
    }
    let mut grads = sum.expect("nonempty window");
    let inv = 1.0 / views.len() as f64;
    grads.pose_rotation *= inv;
    grads.pose_translation *= inv;
    for sg in grads.splats.iter_mut() {
        sg.center *= inv;
        sg.scale *= inv;
        sg.rotation *= inv;
        sg.color *= inv;
        sg.opacity *= inv;
    }
    Ok((total * inv, grads))
}

fn apply_step(
    base: &[Splat],
    grads: &RenderGradients,
    scale: f64,
    config: &MapperConfig,
) -> Vec<Splat> {
    base.iter()
        .zip(grads.splats.iter())
        .map(|(splat, g)| {
            let mut next = splat.clone();
            next.center -= g.center * (config.step_center * scale);
            for k in 0..3 {
                next.scale[k] = (next.scale[k] - g.scale[k] * config.step_scale * scale)
                    .max(config.min_scale);
            }
            let delta = UnitQuaternion::from_scaled_axis(g.rotation * (-config.step_rotation * scale));
            let mut q = next.rotation * delta;
            q.renormalize();
            next.rotation = q;
            for k in 0..3 {
                next.color[k] =
                    math::clamp(next.color[k] - g.color[k] * config.step_color * scale, 0.0, 1.0);
            }
            next.opacity = math::clamp(
                next.opacity - g.opacity * config.step_opacity * scale,
                config.opacity_floor,
                config.opacity_ceil,
            );
            next
        })
        .collect()
}
