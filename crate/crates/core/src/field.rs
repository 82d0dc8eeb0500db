//! Per-anchor orientation maps: dense two-channel fields of offset vectors.

use crate::geom::{ImageSpec, Vec2};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("data length {got} does not match {width}x{height}x2")]
    LengthMismatch { width: u32, height: u32, got: usize },
    #[error("orientation map contains non-finite values")]
    NonFinite,
    #[error("grid {gw}x{gh} at stride {stride} does not cover image {iw}x{ih}")]
    GridMismatch {
        gw: u32,
        gh: u32,
        stride: u32,
        iw: u32,
        ih: u32,
    },
}

/// `grid_height x grid_width x 2` field of offset vectors bound to one anchor.
///
/// Channel order is `(dx, dy)`. Vector units are pixels at FULL input
/// resolution regardless of the grid stride, so maps can be upsampled and
/// decoded without any unit change.
#[derive(Debug, Clone, PartialEq)]
pub struct OrientationMap {
    grid_width: u32,
    grid_height: u32,
    stride: u32,
    anchor_index: usize,
    data: Vec<f64>,
}

impl OrientationMap {
    /// All-zero map.
    pub fn zeros(grid_width: u32, grid_height: u32, stride: u32, anchor_index: usize) -> Self {
        OrientationMap {
            grid_width,
            grid_height,
            stride,
            anchor_index,
            data: vec![0.0; grid_width as usize * grid_height as usize * 2],
        }
    }

    pub fn from_data(
        grid_width: u32,
        grid_height: u32,
        stride: u32,
        anchor_index: usize,
        data: Vec<f64>,
    ) -> Result<Self, FieldError> {
        if data.len() != grid_width as usize * grid_height as usize * 2 {
            return Err(FieldError::LengthMismatch {
                width: grid_width,
                height: grid_height,
                got: data.len(),
            });
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(FieldError::NonFinite);
        }
        Ok(OrientationMap {
            grid_width,
            grid_height,
            stride,
            anchor_index,
            data,
        })
    }

    pub fn grid_width(&self) -> u32 {
        self.grid_width
    }

    pub fn grid_height(&self) -> u32 {
        self.grid_height
    }

    pub fn stride(&self) -> u32 {
        self.stride
    }

    pub fn anchor_index(&self) -> usize {
        self.anchor_index
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Grid dims times stride must equal the image dims.
    pub fn check_covers(&self, image: ImageSpec) -> Result<(), FieldError> {
        if self.grid_width * self.stride != image.width
            || self.grid_height * self.stride != image.height
        {
            return Err(FieldError::GridMismatch {
                gw: self.grid_width,
                gh: self.grid_height,
                stride: self.stride,
                iw: image.width,
                ih: image.height,
            });
        }
        Ok(())
    }

    #[inline]
    fn offset(&self, x: u32, y: u32) -> usize {
        debug_assert!(x < self.grid_width && y < self.grid_height);
        (y as usize * self.grid_width as usize + x as usize) * 2
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> Vec2 {
        let i = self.offset(x, y);
        Vec2::new(self.data[i], self.data[i + 1])
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: Vec2) {
        let i = self.offset(x, y);
        self.data[i] = v.x;
        self.data[i + 1] = v.y;
    }
}
