//! Value types shared by every stage: RGB images, semantic masks and boxes.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Label value excluded from every metric (VOC boundary/void convention).
pub const IGNORE_INDEX: u8 = 255;
/// Label value for background pixels.
pub const BACKGROUND: u8 = 0;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ShapeError {
    #[error("image dimensions must be at least 1x1, got {width}x{height}")]
    EmptyExtent { width: u32, height: u32 },
    #[error("buffer length {actual} does not match {width}x{height}x{channels}")]
    BufferLength {
        width: u32,
        height: u32,
        channels: u32,
        actual: usize,
    },
}

fn check_extent(width: u32, height: u32, channels: u32, len: usize) -> Result<(), ShapeError> {
    if width == 0 || height == 0 {
        return Err(ShapeError::EmptyExtent { width, height });
    }
    if width as usize * height as usize * channels as usize != len {
        return Err(ShapeError::BufferLength {
            width,
            height,
            channels,
            actual: len,
        });
    }
    Ok(())
}

/// Row-major 8-bit RGB image.
#[derive(Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl std::fmt::Debug for RgbImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RgbImage")
            .field("width", &self.width)
            .field("height", &self.height)
            .finish_non_exhaustive()
    }
}

impl RgbImage {
    pub fn new(width: u32, height: u32, data: Vec<u8>) -> Result<Self, ShapeError> {
        check_extent(width, height, 3, data.len())?;
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Image filled with a single colour.
    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Result<Self, ShapeError> {
        check_extent(width, height, 1, width as usize * height as usize)?;
        let data = rgb
            .iter()
            .copied()
            .cycle()
            .take(width as usize * height as usize * 3)
            .collect();
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let o = (y as usize * self.width as usize + x as usize) * 3;
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }

    pub fn set_pixel(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let o = (y as usize * self.width as usize + x as usize) * 3;
        self.data[o..o + 3].copy_from_slice(&rgb);
    }

    pub fn pixels(&self) -> impl Iterator<Item = [u8; 3]> + '_ {
        self.data.chunks_exact(3).map(|c| [c[0], c[1], c[2]])
    }

    /// Nearest-neighbour resample to a new extent.
    pub fn resize_nearest(&self, width: u32, height: u32) -> Result<RgbImage, ShapeError> {
        if width == self.width && height == self.height {
            return Ok(self.clone());
        }
        check_extent(width, height, 1, width as usize * height as usize)?;
        let mut data = Vec::with_capacity(width as usize * height as usize * 3);
        for y in 0..height {
            let sy = ((y as u64 * self.height as u64) / height as u64) as u32;
            for x in 0..width {
                let sx = ((x as u64 * self.width as u64) / width as u64) as u32;
                data.extend_from_slice(&self.pixel(sx, sy));
            }
        }
        RgbImage::new(width, height, data)
    }

    /// Hex SHA-256 over dimensions and pixels; used as a content key.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.width.to_le_bytes());
        hasher.update(self.height.to_le_bytes());
        hasher.update(&self.data);
        hex::encode(hasher.finalize())
    }
}

/// Row-major map of class indices. `0` is background, `255` is ignore.
#[derive(Clone, PartialEq, Eq)]
pub struct SemanticMask {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl std::fmt::Debug for SemanticMask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SemanticMask")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("classes", &self.classes_present())
            .finish()
    }
}

impl SemanticMask {
    pub fn new(width: u32, height: u32, data: Vec<u8>) -> Result<Self, ShapeError> {
        check_extent(width, height, 1, data.len())?;
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn background(width: u32, height: u32) -> Result<Self, ShapeError> {
        Self::new(width, height, vec![BACKGROUND; width as usize * height as usize])
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.data[y as usize * self.width as usize + x as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, value: u8) {
        self.data[y as usize * self.width as usize + x as usize] = value;
    }

    pub fn same_extent(&self, other: &SemanticMask) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Sorted distinct values, including background and ignore if present.
    pub fn classes_present(&self) -> Vec<u8> {
        let mut seen = [false; 256];
        for &v in &self.data {
            seen[v as usize] = true;
        }
        (0..=255u8).filter(|&v| seen[v as usize]).collect()
    }

    /// Sorted distinct foreground class ids (neither background nor ignore).
    pub fn foreground_classes(&self) -> Vec<u8> {
        self.classes_present()
            .into_iter()
            .filter(|&v| v != BACKGROUND && v != IGNORE_INDEX)
            .collect()
    }

    /// Nearest-neighbour resample to a new extent.
    pub fn resize_nearest(&self, width: u32, height: u32) -> Result<SemanticMask, ShapeError> {
        if width == self.width && height == self.height {
            return Ok(self.clone());
        }
        check_extent(width, height, 1, width as usize * height as usize)?;
        let mut data = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            let sy = ((y as u64 * self.height as u64) / height as u64) as u32;
            for x in 0..width {
                let sx = ((x as u64 * self.width as u64) / width as u64) as u32;
                data.push(self.get(sx, sy));
            }
        }
        SemanticMask::new(width, height, data)
    }
}

/// Axis-aligned box in pixel coordinates, half-open: `[x_min, x_max) x [y_min, y_max)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: u32,
    pub y_min: u32,
    pub x_max: u32,
    pub y_max: u32,
    pub score: f64,
    pub class_id: u8,
}

impl BBox {
    /// Builds a box from floating-point corners, clamping to the image and
    /// snapping outward to whole pixels. Returns `None` when the clamped box is empty.
    pub fn from_xyxy_clamped(
        xyxy: [f64; 4],
        width: u32,
        height: u32,
        score: f64,
        class_id: u8,
    ) -> Option<BBox> {
        if xyxy.iter().any(|v| !v.is_finite()) || !score.is_finite() {
            return None;
        }
        let clamp = |v: f64, hi: u32| v.max(0.0).min(hi as f64);
        let x_min = clamp(xyxy[0].min(xyxy[2]), width).floor() as u32;
        let x_max = clamp(xyxy[0].max(xyxy[2]), width).ceil() as u32;
        let y_min = clamp(xyxy[1].min(xyxy[3]), height).floor() as u32;
        let y_max = clamp(xyxy[1].max(xyxy[3]), height).ceil() as u32;
        if x_min >= x_max || y_min >= y_max {
            return None;
        }
        Some(BBox {
            x_min,
            y_min,
            x_max,
            y_max,
            score: score.clamp(0.0, 1.0),
            class_id,
        })
    }

    pub fn xyxy(&self) -> [f64; 4] {
        [
            self.x_min as f64,
            self.y_min as f64,
            self.x_max as f64,
            self.y_max as f64,
        ]
    }

    pub fn area(&self) -> u64 {
        (self.x_max - self.x_min) as u64 * (self.y_max - self.y_min) as u64
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.x_min && x < self.x_max && y >= self.y_min && y < self.y_max
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_buffers() {
        assert!(matches!(
            RgbImage::new(2, 2, vec![0; 11]),
            Err(ShapeError::BufferLength { .. })
        ));
        assert!(matches!(
            SemanticMask::new(0, 3, vec![]),
            Err(ShapeError::EmptyExtent { .. })
        ));
    }

    #[test]
    fn bbox_clamps_to_image() {
        let b = BBox::from_xyxy_clamped([-4.0, 2.5, 40.2, 9.0], 32, 8, 0.9, 1).unwrap();
        assert_eq!((b.x_min, b.y_min, b.x_max, b.y_max), (0, 2, 32, 8));
        assert!(BBox::from_xyxy_clamped([40.0, 0.0, 50.0, 4.0], 32, 8, 0.9, 1).is_none());
    }

    #[test]
    fn nearest_resize_preserves_labels() {
        let m = SemanticMask::new(2, 2, vec![0, 1, 2, 255]).unwrap();
        let r = m.resize_nearest(4, 4).unwrap();
        assert_eq!(r.get(0, 0), 0);
        assert_eq!(r.get(3, 0), 1);
        assert_eq!(r.get(0, 3), 2);
        assert_eq!(r.get(3, 3), 255);
        assert_eq!(r.classes_present(), vec![0, 1, 2, 255]);
    }
}
