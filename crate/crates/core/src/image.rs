//! Simple owned image buffers used throughout the pipeline.

use alloc::vec;
use alloc::vec::Vec;
use nalgebra::Vector3;

/// H x W three-channel image, values in [0, 1], row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ColorImage {
    pub width: usize,
    pub height: usize,
    data: Vec<Vector3<f64>>,
}

impl ColorImage {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![Vector3::zeros(); width * height] }
    }

    pub fn from_data(width: usize, height: usize, data: Vec<Vector3<f64>>) -> Self {
        assert_eq!(data.len(), width * height);
        Self { width, height, data }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Vector3<f64> {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: Vector3<f64>) {
        self.data[y * self.width + x] = value;
    }

    pub fn pixels(&self) -> &[Vector3<f64>] {
        &self.data
    }

    pub fn pixels_mut(&mut self) -> &mut [Vector3<f64>] {
        &mut self.data
    }
}

/// H x W single-channel image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarImage {
    pub width: usize,
    pub height: usize,
    data: Vec<f64>,
}

impl ScalarImage {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![0.0; width * height] }
    }

    pub fn from_data(width: usize, height: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), width * height);
        Self { width, height, data }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: f64) {
        self.data[y * self.width + x] = value;
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

/// H x W boolean mask, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoolMask {
    pub width: usize,
    pub height: usize,
    data: Vec<bool>,
}

impl BoolMask {
    pub fn filled(width: usize, height: usize, value: bool) -> Self {
        Self { width, height, data: vec![value; width * height] }
    }

    pub fn from_data(width: usize, height: usize, data: Vec<bool>) -> Self {
        assert_eq!(data.len(), width * height);
        Self { width, height, data }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.data[y * self.width + x] = value;
    }

    pub fn count_true(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn bits(&self) -> &[bool] {
        &self.data
    }

    /// Indices of true pixels as `(x, y)` pairs in row-major order.
    pub fn true_pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.width;
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| (i % w, i / w))
    }
}
