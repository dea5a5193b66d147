//! Camera tracking: gradient descent on the masked L1 render loss.

use alloc::vec;
use alloc::vec::Vec;
use thiserror::Error;

use crate::frame::Frame;
use crate::map::SplatMap;
use crate::pose::{extrapolate, Pose};
use crate::render::{self, LossWeights, RenderError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrackError {
    /// The frame does not overlap the mapped region; carries the guess
    /// unchanged so the caller can decide how to proceed.
    #[error("tracking failed: {valid_fraction:.4} of pixels pass the visibility mask (need {required:.4})")]
    Degenerate { guess: Pose, valid_fraction: f64, required: f64 },
    #[error(transparent)]
    Render(RenderError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackerConfig {
    pub iterations: usize,
    pub step_size_rotation: f64,
    pub step_size_translation: f64,
    pub color_weight: f64,
    pub depth_weight: f64,
    /// Seed the next frame's guess with the last relative motion.
    pub velocity_propagation: bool,
    /// Step halvings per iteration before giving up on a descent step.
    pub max_backtracks: usize,
    /// Minimum fraction of frame pixels that must pass the visibility mask.
    pub min_overlap: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            iterations: 40,
            step_size_rotation: 2e-3,
            step_size_translation: 4e-3,
            color_weight: 0.5,
            depth_weight: 1.0,
            velocity_propagation: true,
            max_backtracks: 10,
            min_overlap: 0.01,
        }
    }
}

impl TrackerConfig {
    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            color_weight: self.color_weight,
            depth_weight: self.depth_weight,
            ..LossWeights::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackResult {
    pub pose: Pose,
    pub final_loss: f64,
    /// Loss after the initial evaluation and each accepted step;
    /// non-increasing by construction.
    pub loss_trace: Vec<f64>,
}

/// Initial guess for an incoming frame from the pose history (constant
/// velocity when enabled). An empty history yields the identity.
pub fn initial_pose_guess(history: &[Pose], config: &TrackerConfig) -> Pose {
    extrapolate(history, config.velocity_propagation)
}

/// Estimates the frame pose by backtracking gradient descent from `guess`.
/// Updates live in the 6D tangent space and are retracted onto the manifold,
/// so the result always satisfies the pose invariants.
pub fn track_frame(
    map: &SplatMap,
    frame: &Frame,
    guess: &Pose,
    config: &TrackerConfig,
) -> Result<TrackResult, TrackError> {
    let weights = config.loss_weights();
    let intrinsics = &frame.intrinsics;

    let (mut loss, valid, grads) =
        match render::backward_entry(map, guess, intrinsics, frame, &weights, true) {
            Ok(v) => v,
            Err(RenderError::DegenerateLoss) => {
                return Err(TrackError::Degenerate {
                    guess: *guess,
                    valid_fraction: 0.0,
                    required: config.min_overlap,
                })
            }
            Err(e) => return Err(TrackError::Render(e)),
        };
    let valid_fraction = valid as f64 / intrinsics.pixel_count() as f64;
    if valid_fraction < config.min_overlap {
        return Err(TrackError::Degenerate {
            guess: *guess,
            valid_fraction,
            required: config.min_overlap,
        });
    }
    let mut grads = grads.expect("gradients requested");

    let mut pose = *guess;
    let mut trace = vec![loss];

    for _ in 0..config.iterations {
        let dir_rot = grads.pose_rotation * -config.step_size_rotation;
        let dir_tr = grads.pose_translation * -config.step_size_translation;
        if dir_rot.norm_squared() + dir_tr.norm_squared() == 0.0 {
            break;
        }

        let mut accepted = None;
        let mut scale = 1.0;
        for _ in 0..=config.max_backtracks {
            let candidate = pose.retract(&(dir_rot * scale), &(dir_tr * scale));
            if let Ok((cand_loss, _, _)) =
                render::backward_entry(map, &candidate, intrinsics, frame, &weights, false)
            {
                if cand_loss < loss {
                    accepted = Some((candidate, cand_loss));
                    break;
                }
            }
            scale *= 0.5;
        }

        match accepted {
            Some((new_pose, new_loss)) => {
                pose = new_pose;
                loss = new_loss;
                trace.push(loss);
                let (_, _, g) =
                    render::backward_entry(map, &pose, intrinsics, frame, &weights, true)
                        .map_err(TrackError::Render)?;
                grads = g.expect("gradients requested");
            }
            None => break,
        }
    }

    Ok(TrackResult { pose, final_loss: loss, loss_trace: trace })
}
