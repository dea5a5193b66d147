use alloc::vec::Vec;
use nalgebra::{UnitQuaternion, Vector3};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::camera::CameraIntrinsics;
use crate::frame::Frame;
use crate::image::{ColorImage, ScalarImage};
use crate::map::SplatMap;
use crate::pose::Pose;
use crate::splat::Splat;

use super::*;

pub(crate) fn test_intrinsics() -> CameraIntrinsics {
    CameraIntrinsics::new(40.0, 40.0, 15.5, 15.5, 32, 32)
}

/// Random scene inside the camera frustum. Depths are spread out so the
/// compositing order is stable under small perturbations.
pub(crate) fn random_scene(seed: u64, n: usize) -> SplatMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut map = SplatMap::new();
    for i in 0..n {
        let z = 1.5 + 2.0 * (i as f64 + 0.5) / n as f64 + rng.gen_range(-0.008..0.008);
        let reach = 0.22 * z;
        let center = Vector3::new(
            rng.gen_range(-reach..reach),
            rng.gen_range(-reach..reach),
            z,
        );
        let scale = Vector3::new(
            rng.gen_range(0.08..0.3),
            rng.gen_range(0.08..0.3),
            rng.gen_range(0.08..0.3),
        );
        let axis = Vector3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        let color = Vector3::new(
            rng.gen_range(0.05..0.95),
            rng.gen_range(0.05..0.95),
            rng.gen_range(0.05..0.95),
        );
        map.splats.push(Splat {
            center,
            scale,
            rotation: UnitQuaternion::from_scaled_axis(axis),
            color,
            opacity: rng.gen_range(0.55..0.95),
            object_id: None,
        });
    }
    map
}

/// Frame whose rgb/depth are this map's own render (valid depth wherever
/// the silhouette has support).
pub(crate) fn frame_from_render(map: &SplatMap, pose: &Pose, intr: &CameraIntrinsics) -> Frame {
    let out = render(map, pose, intr);
    let mut depth = ScalarImage::zeros(out.depth.width, out.depth.height);
    for y in 0..out.depth.height {
        for x in 0..out.depth.width {
            if out.silhouette.get(x, y) > 0.5 {
                depth.set(x, y, out.depth.get(x, y));
            }
        }
    }
    Frame::new(0, out.rgb, depth, *intr)
}

fn max_abs_diff(a: &RenderOutput, b: &RenderOutput) -> f64 {
    let mut worst = 0.0f64;
    for (pa, pb) in a.rgb.pixels().iter().zip(b.rgb.pixels()) {
        worst = worst.max((pa - pb).abs().max());
    }
    for (da, db) in a.depth.values().iter().zip(b.depth.values()) {
        worst = worst.max((da - db).abs());
    }
    for (sa, sb) in a.silhouette.values().iter().zip(b.silhouette.values()) {
        worst = worst.max((sa - sb).abs());
    }
    worst
}

#[test]
fn empty_map_renders_zeros() {
    let intr = test_intrinsics();
    let out = render(&SplatMap::new(), &Pose::identity(), &intr);
    assert!(out.rgb.pixels().iter().all(|p| *p == Vector3::zeros()));
    assert!(out.depth.values().iter().all(|&d| d == 0.0));
    assert!(out.silhouette.values().iter().all(|&s| s == 0.0));
    let reference = render_reference(&SplatMap::new(), &Pose::identity(), &intr);
    assert_eq!(max_abs_diff(&out, &reference), 0.0);
}

#[test]
fn single_opaque_splat_on_axis() {
    let intr = CameraIntrinsics::new(40.0, 40.0, 16.0, 16.0, 33, 33);
    let mut map = SplatMap::new();
    map.splats.push(Splat::isotropic(
        Vector3::new(0.0, 0.0, 2.0),
        0.1,
        Vector3::new(0.2, 0.9, 0.4),
        0.999,
    ));
    let out = render(&map, &Pose::identity(), &intr);
    // At the center pixel the Gaussian term is 1, so alpha is the shifted
    // opacity.
    let params = RenderParams::default();
    let alpha = (0.999 - params.alpha_cutoff) / (1.0 - params.alpha_cutoff);
    let center = out.rgb.get(16, 16);
    let expected = Vector3::new(0.2, 0.9, 0.4) * alpha;
    assert!((center - expected).norm() < 1e-12);
    assert!((center - Vector3::new(0.2, 0.9, 0.4) * 0.999).norm() < 5e-3);
    assert!((out.depth.get(16, 16) - 2.0).abs() < 1e-9);
    assert!((out.silhouette.get(16, 16) - alpha).abs() < 1e-12);

    let reference = render_reference(&map, &Pose::identity(), &intr);
    assert!(max_abs_diff(&out, &reference) < 1e-6);
}

#[test]
fn two_splat_front_to_back_compositing() {
    let intr = CameraIntrinsics::new(40.0, 40.0, 16.0, 16.0, 33, 33);
    let red = Vector3::new(1.0, 0.0, 0.0);
    let blue = Vector3::new(0.0, 0.0, 1.0);
    let mut map = SplatMap::new();
    map.splats.push(Splat::isotropic(Vector3::new(0.0, 0.0, 2.0), 0.1, blue, 0.5));
    map.splats.push(Splat::isotropic(Vector3::new(0.0, 0.0, 1.0), 0.05, red, 0.5));
    let out = render(&map, &Pose::identity(), &intr);

    // Hand-evaluated two-term compositing with the shifted alpha.
    let params = RenderParams::default();
    let alpha = (0.5 - params.alpha_cutoff) / (1.0 - params.alpha_cutoff);
    let expected = red * alpha + blue * (alpha * (1.0 - alpha));
    let center = out.rgb.get(16, 16);
    assert!((center - expected).norm() < 1e-12, "{center:?} vs {expected:?}");
    // Close to the nominal 0.5 red + 0.25 blue.
    assert!((center - (red * 0.5 + blue * 0.25)).norm() < 6e-3);

    let expected_depth =
        (1.0 * alpha + 2.0 * alpha * (1.0 - alpha)) / (alpha + alpha * (1.0 - alpha));
    assert!((out.depth.get(16, 16) - expected_depth).abs() < 1e-12);
}

#[test]
fn tiled_matches_reference_on_random_scenes() {
    let intr = test_intrinsics();
    for seed in 0..30u64 {
        let n = 5 + (seed as usize * 7) % 45;
        let map = random_scene(seed, n);
        let pose = Pose::identity();
        let fast = render(&map, &pose, &intr);
        let reference = render_reference(&map, &pose, &intr);
        let diff = max_abs_diff(&fast, &reference);
        assert!(diff < 1e-5, "seed {seed}: max diff {diff}");
    }
}

#[test]
fn tile_size_does_not_change_output() {
    let intr = test_intrinsics();
    let map = random_scene(11, 40);
    let base = render(&map, &Pose::identity(), &intr);
    for tile_size in [4usize, 8, 33] {
        let params = RenderParams { tile_size, ..RenderParams::default() };
        let out = render_with_params(&map, &Pose::identity(), &intr, &params);
        assert_eq!(max_abs_diff(&base, &out), 0.0, "tile size {tile_size}");
    }
}

#[test]
fn storage_order_permutation_leaves_output_unchanged() {
    let intr = test_intrinsics();
    let map = random_scene(3, 25);
    let mut permuted = map.clone();
    permuted.splats.reverse();
    permuted.splats.rotate_left(7);
    let a = render(&map, &Pose::identity(), &intr);
    let b = render(&permuted, &Pose::identity(), &intr);
    assert_eq!(max_abs_diff(&a, &b), 0.0);
}

#[test]
fn silhouette_monotone_under_splat_insertion() {
    let intr = test_intrinsics();
    let mut map = random_scene(5, 20);
    let before = render(&map, &Pose::identity(), &intr);
    map.splats.push(Splat::isotropic(
        Vector3::new(0.1, -0.1, 2.2),
        0.2,
        Vector3::new(0.9, 0.9, 0.1),
        0.8,
    ));
    let after = render(&map, &Pose::identity(), &intr);
    for (sa, sb) in before.silhouette.values().iter().zip(after.silhouette.values()) {
        assert!(*sb >= *sa - 1e-12);
    }
}

#[test]
fn compositing_bounds_hold() {
    let intr = test_intrinsics();
    for seed in [2u64, 9, 21] {
        let map = random_scene(seed, 50);
        let out = render(&map, &Pose::identity(), &intr);
        for p in out.rgb.pixels() {
            assert!(p.max() <= 1.0 + 1e-12);
        }
        for &s in out.silhouette.values() {
            assert!((0.0..=1.0 + 1e-12).contains(&s));
        }
        for y in 0..out.depth.height {
            for x in 0..out.depth.width {
                if out.silhouette.get(x, y) > 0.0 {
                    assert!(out.depth.get(x, y) >= 0.0);
                }
            }
        }
    }
}

#[test]
fn zero_residual_target_gives_zero_loss_and_gradient() {
    let intr = test_intrinsics();
    let map = random_scene(7, 40);
    let pose = Pose::identity();
    let target = frame_from_render(&map, &pose, &intr);
    let weights = LossWeights::default();
    let (loss, grads) = render_with_gradients(&map, &pose, &intr, &target, &weights).unwrap();
    assert_eq!(loss, 0.0);
    let tangent = grads.pose_tangent();
    let norm: f64 = tangent.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(norm < 1e-8, "pose gradient {norm}");
    assert!(grads.is_finite());
}

#[test]
fn brighter_target_pushes_color_gradient_negative() {
    let intr = test_intrinsics();
    let mut map = SplatMap::new();
    map.splats.push(Splat::isotropic(
        Vector3::new(0.0, 0.0, 2.0),
        0.3,
        Vector3::new(0.5, 0.5, 0.5),
        0.999,
    ));
    let pose = Pose::identity();
    let mut target = frame_from_render(&map, &pose, &intr);
    for p in target.rgb.pixels_mut() {
        *p += Vector3::new(0.1, 0.1, 0.1);
    }
    let weights = LossWeights::default();
    let (loss, grads) = render_with_gradients(&map, &pose, &intr, &target, &weights).unwrap();
    assert!(loss > 0.0);
    let g = grads.splats[0].color;
    assert!(g.x < 0.0 && g.y < 0.0 && g.z < 0.0, "{g:?}");
}

#[test]
fn empty_mask_is_a_degenerate_loss() {
    let intr = test_intrinsics();
    let map = random_scene(7, 10);
    // Target with no valid depth anywhere.
    let target = Frame::new(0, ColorImage::zeros(32, 32), ScalarImage::zeros(32, 32), intr);
    let weights = LossWeights::default();
    let err = render_with_gradients(&map, &Pose::identity(), &intr, &target, &weights);
    assert!(matches!(err, Err(RenderError::DegenerateLoss)));
}

/// Map with per-splat jitter whose magnitudes are bounded away from zero,
/// so pixel residuals against the original map stay clear of the L1 kink
/// within a finite-difference step.
pub(crate) fn jittered_target_map(map: &SplatMap, seed: u64) -> SplatMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = map.clone();
    for s in out.splats.iter_mut() {
        for k in 0..3 {
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            s.center[k] += sign * rng.gen_range(0.004..0.012);
        }
        for k in 0..3 {
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            s.color[k] = (s.color[k] + sign * rng.gen_range(0.03..0.08)).clamp(0.02, 0.98);
        }
    }
    out
}

/// Central finite differences of the tracking loss.
pub(crate) fn fd_loss(
    map: &SplatMap,
    pose: &Pose,
    intr: &CameraIntrinsics,
    target: &Frame,
    weights: &LossWeights,
) -> f64 {
    tracking_loss(map, pose, intr, target, weights).unwrap().0
}

fn fd_matches(analytic: f64, fd: f64) -> bool {
    let tol = 1e-6f64.max(1e-3 * analytic.abs().max(fd.abs()));
    (analytic - fd).abs() <= tol
}

#[test]
fn pose_gradients_match_finite_differences() {
    let intr = test_intrinsics();
    let weights = LossWeights::default();
    let h = 1e-5;
    for seed in [13u64, 14, 15] {
        let map = random_scene(seed, 30);
        let target_map = jittered_target_map(&map, seed ^ 0xdead);
        let pose = Pose::identity();
        let target = frame_from_render(&target_map, &pose, &intr);

        let (_, valid_fraction) = tracking_loss(&map, &pose, &intr, &target, &weights).unwrap();
        assert!(valid_fraction > 0.01, "seed {seed}: scene too sparse");

        let (_, grads) = render_with_gradients(&map, &pose, &intr, &target, &weights).unwrap();
        let tangent = grads.pose_tangent();
        for k in 0..6 {
            let mut delta = [0.0; 6];
            delta[k] = h;
            let plus = pose.retract(
                &Vector3::new(delta[0], delta[1], delta[2]),
                &Vector3::new(delta[3], delta[4], delta[5]),
            );
            delta[k] = -h;
            let minus = pose.retract(
                &Vector3::new(delta[0], delta[1], delta[2]),
                &Vector3::new(delta[3], delta[4], delta[5]),
            );
            let fd = (fd_loss(&map, &plus, &intr, &target, &weights)
                - fd_loss(&map, &minus, &intr, &target, &weights))
                / (2.0 * h);
            assert!(
                fd_matches(tangent[k], fd),
                "seed {seed} pose[{k}]: analytic {} vs fd {}",
                tangent[k],
                fd
            );
        }
    }
}

#[test]
fn splat_gradients_match_finite_differences() {
    let intr = test_intrinsics();
    let weights = LossWeights::default();
    let h = 1e-5;
    let seed = 23u64;
    let map = random_scene(seed, 25);
    let target_map = jittered_target_map(&map, seed ^ 0xbeef);
    let pose = Pose::identity();
    let target = frame_from_render(&target_map, &pose, &intr);
    let (_, grads) = render_with_gradients(&map, &pose, &intr, &target, &weights).unwrap();

    let mut checked = 0;
    for splat_idx in (0..map.splats.len()).step_by(3) {
        for param in 0..13usize {
            let mut plus = map.clone();
            let mut minus = map.clone();
            let analytic = {
                let g = &grads.splats[splat_idx];
                match param {
                    0..=2 => g.center[param],
                    3..=5 => g.scale[param - 3],
                    6..=8 => g.rotation[param - 6],
                    9..=11 => g.color[param - 9],
                    _ => g.opacity,
                }
            };
            apply_param(&mut plus.splats[splat_idx], param, h);
            apply_param(&mut minus.splats[splat_idx], param, -h);
            let fd = (fd_loss(&plus, &pose, &intr, &target, &weights)
                - fd_loss(&minus, &pose, &intr, &target, &weights))
                / (2.0 * h);
            assert!(
                fd_matches(analytic, fd),
                "splat {splat_idx} param {param}: analytic {analytic} vs fd {fd}"
            );
            checked += 1;
        }
    }
    assert!(checked >= 20);
}

pub(crate) fn apply_param(splat: &mut Splat, param: usize, step: f64) {
    match param {
        0..=2 => splat.center[param] += step,
        3..=5 => splat.scale[param - 3] += step,
        6..=8 => {
            let mut axis = Vector3::zeros();
            axis[param - 6] = step;
            let mut q = splat.rotation * UnitQuaternion::from_scaled_axis(axis);
            q.renormalize();
            splat.rotation = q;
        }
        9..=11 => splat.color[param - 9] += step,
        _ => splat.opacity += step,
    }
}

#[test]
fn gradients_are_finite_on_random_scenes() {
    let intr = test_intrinsics();
    let weights = LossWeights::default();
    for seed in [31u64, 37] {
        let map = random_scene(seed, 35);
        let target = frame_from_render(&map, &Pose::identity(), &intr);
        let pose = Pose::identity().retract(
            &Vector3::new(0.005, -0.003, 0.002),
            &Vector3::new(0.01, 0.0, -0.01),
        );
        if let Ok((loss, grads)) = render_with_gradients(&map, &pose, &intr, &target, &weights) {
            assert!(loss.is_finite());
            assert!(grads.is_finite());
        }
    }
}

/// Mapping-mode gradients also follow finite differences (away from the
/// detached gate's kinks).
#[test]
fn mapping_gradients_match_finite_differences_on_splat_params() {
    let intr = test_intrinsics();
    let weights = MappingWeights::default();
    let h = 1e-5;
    let map = random_scene(41, 20);
    let mut target_map = map.clone();
    for s in target_map.splats.iter_mut() {
        s.color.x = (s.color.x + 0.07).min(0.98);
    }
    let pose = Pose::identity();
    let target = frame_from_render(&target_map, &pose, &intr);
    let (_, grads) = mapping_loss_and_gradients(&map, &pose, &intr, &target, &weights).unwrap();

    let mut worst: f64 = 0.0;
    let mut failures = 0usize;
    let mut total = 0usize;
    for splat_idx in (0..map.splats.len()).step_by(2) {
        for param in [0usize, 2, 4, 9, 12] {
            let mut plus = map.clone();
            let mut minus = map.clone();
            apply_param(&mut plus.splats[splat_idx], param, h);
            apply_param(&mut minus.splats[splat_idx], param, -h);
            let lp = mapping_loss(&plus, &pose, &intr, &target, &weights).unwrap();
            let lm = mapping_loss(&minus, &pose, &intr, &target, &weights).unwrap();
            let fd = (lp - lm) / (2.0 * h);
            let g = &grads.splats[splat_idx];
            let analytic = match param {
                0..=2 => g.center[param],
                3..=5 => g.scale[param - 3],
                6..=8 => g.rotation[param - 6],
                9..=11 => g.color[param - 9],
                _ => g.opacity,
            };
            total += 1;
            let err = (analytic - fd).abs();
            worst = worst.max(err);
            // The detached silhouette gate makes the mapping loss only
            // piecewise-smooth in parameters that move coverage, so allow a
            // few kink crossings as long as the bulk agrees.
            if err > 1e-6f64.max(2e-3 * analytic.abs().max(fd.abs())) {
                failures += 1;
            }
        }
    }
    assert!(
        failures * 10 <= total,
        "{failures}/{total} mapping FD checks off (worst {worst})"
    );
}
