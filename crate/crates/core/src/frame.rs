//! One RGB-D observation.

use thiserror::Error;

use crate::camera::CameraIntrinsics;
use crate::image::{ColorImage, ScalarImage};
use crate::pose::Pose;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FrameError {
    #[error("frame {index}: rgb is {rgb_w}x{rgb_h} but intrinsics expect {exp_w}x{exp_h}")]
    RgbDimensionMismatch { index: u64, rgb_w: usize, rgb_h: usize, exp_w: u32, exp_h: u32 },
    #[error("frame {index}: depth is {d_w}x{d_h} but intrinsics expect {exp_w}x{exp_h}")]
    DepthDimensionMismatch { index: u64, d_w: usize, d_h: usize, exp_w: u32, exp_h: u32 },
    #[error("frame {index}: negative depth {value} at pixel ({x}, {y})")]
    NegativeDepth { index: u64, value: f64, x: usize, y: usize },
}

/// RGB-D frame. Depth is in meters with 0 marking invalid pixels; `pose` is
/// set once tracking (or a dataset ground-truth) provides it.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub index: u64,
    pub rgb: ColorImage,
    pub depth: ScalarImage,
    pub intrinsics: CameraIntrinsics,
    pub pose: Option<Pose>,
    pub is_keyframe: bool,
}

impl Frame {
    pub fn new(
        index: u64,
        rgb: ColorImage,
        depth: ScalarImage,
        intrinsics: CameraIntrinsics,
    ) -> Self {
        Self { index, rgb, depth, intrinsics, pose: None, is_keyframe: false }
    }

    pub fn validate(&self) -> Result<(), FrameError> {
        let (w, h) = (self.intrinsics.width, self.intrinsics.height);
        if self.rgb.width != w as usize || self.rgb.height != h as usize {
            return Err(FrameError::RgbDimensionMismatch {
                index: self.index,
                rgb_w: self.rgb.width,
                rgb_h: self.rgb.height,
                exp_w: w,
                exp_h: h,
            });
        }
        if self.depth.width != w as usize || self.depth.height != h as usize {
            return Err(FrameError::DepthDimensionMismatch {
                index: self.index,
                d_w: self.depth.width,
                d_h: self.depth.height,
                exp_w: w,
                exp_h: h,
            });
        }
        for y in 0..self.depth.height {
            for x in 0..self.depth.width {
                let d = self.depth.get(x, y);
                if d < 0.0 {
                    return Err(FrameError::NegativeDepth { index: self.index, value: d, x, y });
                }
            }
        }
        Ok(())
    }

    /// Depth at a pixel, `None` when marked invalid (0).
    #[inline]
    pub fn valid_depth(&self, x: usize, y: usize) -> Option<f64> {
        let d = self.depth.get(x, y);
        (d > 0.0).then_some(d)
    }
}
