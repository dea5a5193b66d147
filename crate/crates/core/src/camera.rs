//! Pinhole camera intrinsics.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IntrinsicsError {
    #[error("focal lengths must be positive (fx={fx}, fy={fy})")]
    NonPositiveFocal { fx: f64, fy: f64 },
    #[error("principal point ({cx}, {cy}) outside {width}x{height} image")]
    PrincipalPointOutside { cx: f64, cy: f64, width: u32, height: u32 },
}

/// Pinhole intrinsics: `u = fx * x/z + cx`, `v = fy * y/z + cy`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Self {
        Self { fx, fy, cx, cy, width, height }
    }

    pub fn validate(&self) -> Result<(), IntrinsicsError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(IntrinsicsError::NonPositiveFocal { fx: self.fx, fy: self.fy });
        }
        let in_x = self.cx >= 0.0 && self.cx < self.width as f64;
        let in_y = self.cy >= 0.0 && self.cy < self.height as f64;
        if !(in_x && in_y) {
            return Err(IntrinsicsError::PrincipalPointOutside {
                cx: self.cx,
                cy: self.cy,
                width: self.width,
                height: self.height,
            });
        }
        Ok(())
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validates_focal_and_principal_point() {
        let good = CameraIntrinsics::new(100.0, 100.0, 50.0, 50.0, 101, 101);
        assert!(good.validate().is_ok());

        let bad_focal = CameraIntrinsics::new(0.0, 100.0, 50.0, 50.0, 101, 101);
        assert!(matches!(bad_focal.validate(), Err(IntrinsicsError::NonPositiveFocal { .. })));

        let bad_pp = CameraIntrinsics::new(100.0, 100.0, 120.0, 50.0, 101, 101);
        assert!(matches!(
            bad_pp.validate(),
            Err(IntrinsicsError::PrincipalPointOutside { .. })
        ));
    }
}
