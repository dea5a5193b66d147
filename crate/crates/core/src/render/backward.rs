//! Masked L1 losses over rendered color and depth, with analytic gradients
//! with respect to camera pose and splat parameters.
//!
//! Gradients are exact for the rendered function: compositing is
//! differentiated per pixel with suffix accumulators, then chained through
//! the 2D Gaussian parameters, the projection Jacobian (including its
//! dependence on the camera-frame point), and the covariance factorization.
//! The depth sort is treated as a fixed permutation.

use alloc::vec;
use alloc::vec::Vec;
use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};

use crate::camera::CameraIntrinsics;
use crate::frame::Frame;
use crate::map::SplatMap;
use crate::math;
use crate::pose::Pose;

use super::{project_splats, projection_jacobian, RenderError, RenderParams, TileGrid};

/// Weights and masking for the tracking loss. Only pixels whose silhouette
/// exceeds `visibility_threshold` (ramping in over `visibility_softness`)
/// and whose target depth is valid contribute.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub color_weight: f64,
    pub depth_weight: f64,
    pub visibility_threshold: f64,
    pub visibility_softness: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            color_weight: 0.5,
            depth_weight: 1.0,
            visibility_threshold: 0.99,
            visibility_softness: 0.005,
        }
    }
}

/// Weights for the mapping loss: all pixels with valid target depth count;
/// the depth term ramps in with silhouette coverage (the ramp weight is a
/// constant in the gradient, which keeps barely-covered pixels from emitting
/// huge normalization gradients).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MappingWeights {
    pub color_weight: f64,
    pub depth_weight: f64,
    pub depth_gate_low: f64,
    pub depth_gate_high: f64,
}

impl Default for MappingWeights {
    fn default() -> Self {
        Self { color_weight: 0.5, depth_weight: 1.0, depth_gate_low: 0.25, depth_gate_high: 0.5 }
    }
}

/// Per-splat loss partials.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplatGradients {
    pub center: Vector3<f64>,
    /// With respect to the per-axis standard deviations.
    pub scale: Vector3<f64>,
    /// Tangent-space rotation partial (right-multiplied axis-angle).
    pub rotation: Vector3<f64>,
    pub color: Vector3<f64>,
    pub opacity: f64,
}

impl SplatGradients {
    fn zeros() -> Self {
        Self {
            center: Vector3::zeros(),
            scale: Vector3::zeros(),
            rotation: Vector3::zeros(),
            color: Vector3::zeros(),
            opacity: 0.0,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.center.iter().all(|v| v.is_finite())
            && self.scale.iter().all(|v| v.is_finite())
            && self.rotation.iter().all(|v| v.is_finite())
            && self.color.iter().all(|v| v.is_finite())
            && self.opacity.is_finite()
    }
}

/// Loss gradients for the camera pose (tangent space) and every splat.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderGradients {
    /// Axis-angle perturbation composed on the right of the pose rotation.
    pub pose_rotation: Vector3<f64>,
    /// World-frame translation derivative.
    pub pose_translation: Vector3<f64>,
    /// One entry per map splat (zeros for splats that were culled).
    pub splats: Vec<SplatGradients>,
}

impl RenderGradients {
    fn zeros(n: usize) -> Self {
        Self {
            pose_rotation: Vector3::zeros(),
            pose_translation: Vector3::zeros(),
            splats: vec![SplatGradients::zeros(); n],
        }
    }

    /// The 6-vector (rotation tangent, then translation).
    pub fn pose_tangent(&self) -> [f64; 6] {
        [
            self.pose_rotation.x,
            self.pose_rotation.y,
            self.pose_rotation.z,
            self.pose_translation.x,
            self.pose_translation.y,
            self.pose_translation.z,
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.pose_rotation.iter().all(|v| v.is_finite())
            && self.pose_translation.iter().all(|v| v.is_finite())
            && self.splats.iter().all(|s| s.is_finite())
    }

    /// Element-wise accumulation (used when summing over keyframes).
    pub fn accumulate(&mut self, other: &RenderGradients) {
        self.pose_rotation += other.pose_rotation;
        self.pose_translation += other.pose_translation;
        for (a, b) in self.splats.iter_mut().zip(other.splats.iter()) {
            a.center += b.center;
            a.scale += b.scale;
            a.rotation += b.rotation;
            a.color += b.color;
            a.opacity += b.opacity;
        }
    }
}

enum Weighting<'a> {
    Tracking(&'a LossWeights),
    Mapping(&'a MappingWeights),
}

/// Masked L1 tracking loss and its gradients.
pub fn render_with_gradients(
    map: &SplatMap,
    pose: &Pose,
    intrinsics: &CameraIntrinsics,
    target: &Frame,
    weights: &LossWeights,
) -> Result<(f64, RenderGradients), RenderError> {
    let (loss, _, grads) = evaluate(
        map,
        pose,
        intrinsics,
        target,
        &Weighting::Tracking(weights),
        &RenderParams::default(),
        true,
    )?;
    Ok((loss, grads.expect("gradients requested")))
}

/// Tracking loss only (used by the line search). Also reports the fraction
/// of frame pixels passing the visibility mask.
pub fn tracking_loss(
    map: &SplatMap,
    pose: &Pose,
    intrinsics: &CameraIntrinsics,
    target: &Frame,
    weights: &LossWeights,
) -> Result<(f64, f64), RenderError> {
    let (loss, valid, _) = evaluate(
        map,
        pose,
        intrinsics,
        target,
        &Weighting::Tracking(weights),
        &RenderParams::default(),
        false,
    )?;
    Ok((loss, valid as f64 / intrinsics.pixel_count() as f64))
}

/// Mapping loss and gradients over one keyframe.
pub fn mapping_loss_and_gradients(
    map: &SplatMap,
    pose: &Pose,
    intrinsics: &CameraIntrinsics,
    target: &Frame,
    weights: &MappingWeights,
) -> Result<(f64, RenderGradients), RenderError> {
    let (loss, _, grads) = evaluate(
        map,
        pose,
        intrinsics,
        target,
        &Weighting::Mapping(weights),
        &RenderParams::default(),
        true,
    )?;
    Ok((loss, grads.expect("gradients requested")))
}

/// Mapping loss only.
pub fn mapping_loss(
    map: &SplatMap,
    pose: &Pose,
    intrinsics: &CameraIntrinsics,
    target: &Frame,
    weights: &MappingWeights,
) -> Result<f64, RenderError> {
    let (loss, _, _) = evaluate(
        map,
        pose,
        intrinsics,
        target,
        &Weighting::Mapping(weights),
        &RenderParams::default(),
        false,
    )?;
    Ok(loss)
}

/// One compositing contribution recorded during the per-pixel forward walk.
struct Contribution {
    idx: u32,
    alpha: f64,
    /// Transmittance before this splat.
    trans: f64,
    /// exp(-q/2).
    gauss: f64,
    /// d(alpha)/d(raw alpha): zero when the clamp is active.
    dshift: f64,
}

struct Accum {
    gm: Vector2<f64>,
    gb: Matrix2<f64>,
    gz: f64,
    gc: Vector3<f64>,
    go: f64,
    touched: bool,
}

impl Accum {
    fn zeros() -> Self {
        Self {
            gm: Vector2::zeros(),
            gb: Matrix2::zeros(),
            gz: 0.0,
            gc: Vector3::zeros(),
            go: 0.0,
            touched: false,
        }
    }
}

fn evaluate(
    map: &SplatMap,
    pose: &Pose,
    intrinsics: &CameraIntrinsics,
    target: &Frame,
    weighting: &Weighting,
    params: &RenderParams,
    want_grads: bool,
) -> Result<(f64, usize, Option<RenderGradients>), RenderError> {
    let width = intrinsics.width as usize;
    let height = intrinsics.height as usize;
    if target.rgb.width != width
        || target.rgb.height != height
        || target.depth.width != width
        || target.depth.height != height
    {
        return Err(RenderError::DimensionMismatch {
            t_w: target.rgb.width,
            t_h: target.rgb.height,
            e_w: intrinsics.width,
            e_h: intrinsics.height,
        });
    }

    let splats = project_splats(map, pose, intrinsics, params);
    let grid = TileGrid::build(&splats, width, height, params.tile_size);
    let norm = 1.0 / (width * height) as f64;
    let eps = params.silhouette_epsilon;

    let mut accum: Vec<Accum> = if want_grads {
        splats.iter().map(|_| Accum::zeros()).collect()
    } else {
        Vec::new()
    };
    let mut scratch: Vec<Contribution> = Vec::with_capacity(64);

    let mut loss = 0.0;
    let mut valid = 0usize;

    for ty in 0..grid.tiles_y {
        for tx in 0..grid.tiles_x {
            let bin = grid.bin(tx, ty);
            let x_end = (tx * params.tile_size + params.tile_size).min(width);
            let y_end = (ty * params.tile_size + params.tile_size).min(height);
            for py in ty * params.tile_size..y_end {
                for px in tx * params.tile_size..x_end {
                    let target_d = target.depth.get(px, py);
                    if target_d <= 0.0 {
                        continue;
                    }
                    let (pxf, pyf) = (px as f64, py as f64);

                    scratch.clear();
                    let mut rgb = Vector3::zeros();
                    let mut draw = 0.0;
                    let mut sil = 0.0;
                    let mut trans = 1.0;
                    for &i in bin {
                        let ps = &splats[i as usize];
                        let dx = pxf - ps.mean2d.x;
                        let dy = pyf - ps.mean2d.y;
                        if dx.max(-dx) > ps.radius || dy.max(-dy) > ps.radius {
                            continue;
                        }
                        let b = &ps.inv_cov2d;
                        let q = b[(0, 0)] * dx * dx
                            + 2.0 * b[(0, 1)] * dx * dy
                            + b[(1, 1)] * dy * dy;
                        let gauss = math::exp(-0.5 * q);
                        let raw = ps.opacity * gauss;
                        let shifted = (raw - params.alpha_cutoff) / (1.0 - params.alpha_cutoff);
                        if shifted <= 0.0 {
                            continue;
                        }
                        let (alpha, dshift) = if shifted >= params.alpha_clamp {
                            (params.alpha_clamp, 0.0)
                        } else {
                            (shifted, 1.0 / (1.0 - params.alpha_cutoff))
                        };
                        let weight = alpha * trans;
                        rgb += ps.color * weight;
                        draw += ps.z * weight;
                        sil += weight;
                        if want_grads {
                            scratch.push(Contribution { idx: i, alpha, trans, gauss, dshift });
                        }
                        trans *= 1.0 - alpha;
                    }

                    let s = sil.max(eps);
                    let depth = draw / s;

                    let target_rgb = target.rgb.get(px, py);
                    let r = rgb - target_rgb;
                    let l_rgb = (math::abs(r.x) + math::abs(r.y) + math::abs(r.z)) / 3.0;
                    let rd = depth - target_d;
                    let l_d = math::abs(rd);

                    // Per-pixel mask weight m, its silhouette derivative, and
                    // the depth-term gate.
                    let (m, dm_dsil, depth_gate, count_it) = match weighting {
                        Weighting::Tracking(w) => {
                            if sil <= w.visibility_threshold {
                                continue;
                            }
                            let hi = w.visibility_threshold + w.visibility_softness;
                            if sil >= hi {
                                (1.0, 0.0, 1.0, true)
                            } else {
                                // Smoothstep ramp: C1 at both ends, so the
                                // loss stays finite-difference friendly.
                                let t = (sil - w.visibility_threshold) / w.visibility_softness;
                                (
                                    t * t * (3.0 - 2.0 * t),
                                    6.0 * t * (1.0 - t) / w.visibility_softness,
                                    1.0,
                                    true,
                                )
                            }
                        }
                        Weighting::Mapping(w) => {
                            let gate = math::clamp(
                                (sil - w.depth_gate_low) / (w.depth_gate_high - w.depth_gate_low),
                                0.0,
                                1.0,
                            );
                            (1.0, 0.0, gate, true)
                        }
                    };
                    let (wc, wd) = match weighting {
                        Weighting::Tracking(w) => (w.color_weight, w.depth_weight),
                        Weighting::Mapping(w) => (w.color_weight, w.depth_weight),
                    };
                    if count_it {
                        valid += 1;
                    }

                    let pixel_core = wc * l_rgb + wd * depth_gate * l_d;
                    loss += m * pixel_core * norm;

                    if !want_grads || scratch.is_empty() {
                        continue;
                    }

                    let g_rgb = Vector3::new(
                        math::sign(r.x),
                        math::sign(r.y),
                        math::sign(r.z),
                    ) * (m * wc * norm / 3.0);
                    let g_depth = math::sign(rd) * (m * wd * depth_gate * norm);
                    let g_draw = g_depth / s;
                    let mut g_sil = dm_dsil * pixel_core * norm;
                    if sil > eps {
                        g_sil -= g_depth * draw / (s * s);
                    }

                    let mut s_rgb = Vector3::zeros();
                    let mut s_draw = 0.0;
                    let mut s_sil = 0.0;
                    for contrib in scratch.iter().rev() {
                        let ps = &splats[contrib.idx as usize];
                        let w = contrib.alpha * contrib.trans;
                        let direct = g_rgb.dot(&ps.color) + g_draw * ps.z + g_sil;
                        let suffix = g_rgb.dot(&s_rgb) + g_draw * s_draw + g_sil * s_sil;
                        let dalpha =
                            contrib.trans * direct - suffix / (1.0 - contrib.alpha);
                        s_rgb += ps.color * w;
                        s_draw += ps.z * w;
                        s_sil += w;

                        let acc = &mut accum[contrib.idx as usize];
                        acc.touched = true;
                        acc.gc += g_rgb * w;
                        acc.gz += g_draw * w;
                        let draw_grad = dalpha * contrib.dshift;
                        acc.go += draw_grad * contrib.gauss;
                        let dq = draw_grad * ps.opacity * contrib.gauss * (-0.5);
                        let delta = Vector2::new(pxf - ps.mean2d.x, pyf - ps.mean2d.y);
                        let bdelta = ps.inv_cov2d * delta;
                        acc.gm += bdelta * (-2.0 * dq);
                        acc.gb += (delta * delta.transpose()) * dq;
                    }
                }
            }
        }
    }

    if matches!(weighting, Weighting::Tracking(_)) && valid == 0 {
        return Err(RenderError::DegenerateLoss);
    }

    if !want_grads {
        return Ok((loss, valid, None));
    }

    let mut grads = RenderGradients::zeros(map.splats.len());
    let rot_cw = pose.rotation.inverse();
    let w_mat: Matrix3<f64> = *rot_cw.matrix();
    let r_mat: Matrix3<f64> = *pose.rotation.matrix();
    let (fx, fy) = (intrinsics.fx, intrinsics.fy);
    let basis = [Vector3::x(), Vector3::y(), Vector3::z()];

    for (i, ps) in splats.iter().enumerate() {
        let acc = &accum[i];
        if !acc.touched {
            continue;
        }
        let splat = &map.splats[ps.slot];
        let cov_cam = w_mat * splat.covariance() * w_mat.transpose();
        let j = projection_jacobian(&ps.x_cam, fx, fy);

        // dL/dA from dL/dB via the inverse: -B Gb B.
        let ga = -(ps.inv_cov2d * acc.gb * ps.inv_cov2d);

        // Gradient with respect to the camera-frame point, through the
        // projected mean, the Jacobian entries inside A, and the depth.
        let mut g_xc: Vector3<f64> = j.transpose() * acc.gm;
        let m1 = ga * (j * cov_cam);
        let (x, y, z) = (ps.x_cam.x, ps.x_cam.y, ps.x_cam.z);
        let z2 = z * z;
        let z3 = z2 * z;
        g_xc.x += 2.0 * (-fx / z2) * m1[(0, 2)];
        g_xc.y += 2.0 * (-fy / z2) * m1[(1, 2)];
        g_xc.z += 2.0
            * (-fx / z2 * m1[(0, 0)] - fy / z2 * m1[(1, 1)]
                + 2.0 * fx * x / z3 * m1[(0, 2)]
                + 2.0 * fy * y / z3 * m1[(1, 2)]);
        g_xc.z += acc.gz;

        let g_sigma_cam = j.transpose() * ga * j;

        // Pose tangent: rotation moves both the camera-frame point and the
        // camera-frame covariance; translation only the point.
        grads.pose_rotation += g_xc.cross(&ps.x_cam);
        for (k, e) in basis.iter().enumerate() {
            let ek = e.cross_matrix();
            let d_sigma = -ek * cov_cam + cov_cam * ek;
            grads.pose_rotation[k] += g_sigma_cam.dot(&d_sigma);
        }
        grads.pose_translation += -(r_mat * g_xc);

        // Splat parameters.
        let sg = &mut grads.splats[ps.slot];
        sg.center += r_mat * g_xc;
        let g_sigma_w = r_mat * g_sigma_cam * r_mat.transpose();
        let rq = *splat.rotation.to_rotation_matrix().matrix();
        let m_local = rq.transpose() * g_sigma_w * rq;
        let d = Matrix3::from_diagonal(&splat.scale.component_mul(&splat.scale));
        for (k, e) in basis.iter().enumerate() {
            sg.scale[k] += 2.0 * splat.scale[k] * m_local[(k, k)];
            let ek = e.cross_matrix();
            let ds = ek * d - d * ek;
            sg.rotation[k] += m_local.dot(&ds);
        }
        sg.color += acc.gc;
        sg.opacity += acc.go;
    }

    Ok((loss, valid, Some(grads)))
}

/// Internal entry point for the tracker: loss, valid-pixel count, and
/// optional gradients in one pass.
pub(crate) fn tracking_evaluate(
    map: &SplatMap,
    pose: &Pose,
    intrinsics: &CameraIntrinsics,
    target: &Frame,
    weights: &LossWeights,
    want_grads: bool,
) -> Result<(f64, usize, Option<RenderGradients>), RenderError> {
    evaluate(
        map,
        pose,
        intrinsics,
        target,
        &Weighting::Tracking(weights),
        &RenderParams::default(),
        want_grads,
    )
}
