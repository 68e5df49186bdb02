//! Camera frames and bounding boxes.

use std::path::Path;

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const FRAME_WIDTH: usize = 160;
pub const FRAME_HEIGHT: usize = 120;
pub const FRAME_CHANNELS: usize = 3;
pub const FRAME_LEN: usize = FRAME_CHANNELS * FRAME_HEIGHT * FRAME_WIDTH;
/// Storage shape `(channels, rows, columns)`.
pub const FRAME_SHAPE: [usize; 3] = [FRAME_CHANNELS, FRAME_HEIGHT, FRAME_WIDTH];

/// 8-bit RGB colour.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Color(pub [u8; 3]);

/// RGB image, 160 wide and 120 high, stored channel-major and row-major
/// within each channel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pixels: Vec<u8>,
}

impl Frame {
    pub fn filled(color: Color) -> Self {
        let mut pixels = Vec::with_capacity(FRAME_LEN);
        for c in color.0 {
            pixels.extend(std::iter::repeat_n(c, FRAME_HEIGHT * FRAME_WIDTH));
        }
        Frame { pixels }
    }

    pub fn from_pixels(pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != FRAME_LEN {
            return Err(Error::InvalidInput(format!(
                "frame needs {FRAME_LEN} bytes, got {}",
                pixels.len()
            )));
        }
        Ok(Frame { pixels })
    }

    /// Quantises channel-major values in `[0, 1]` to 8 bits.
    pub fn from_unit<T: Scalar>(values: &[T]) -> Result<Self> {
        if values.len() != FRAME_LEN {
            return Err(Error::InvalidInput(format!(
                "frame tensor must have shape {FRAME_SHAPE:?}, got {} values",
                values.len()
            )));
        }
        let pixels = values
            .iter()
            .map(|v| (v.to_f64_lossy().clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        Ok(Frame { pixels })
    }

    /// Channel-major values scaled to `[0, 1]`.
    pub fn to_unit<T: Scalar>(&self) -> Vec<T> {
        self.pixels.iter().map(|&p| T::from_f64_lossy(p as f64 / 255.0)).collect()
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, channel: usize, y: usize, x: usize) -> u8 {
        self.pixels[(channel * FRAME_HEIGHT + y) * FRAME_WIDTH + x]
    }

    pub fn color_at(&self, y: usize, x: usize) -> Color {
        Color([self.get(0, y, x), self.get(1, y, x), self.get(2, y, x)])
    }

    pub fn set(&mut self, y: usize, x: usize, color: Color) {
        for (c, v) in color.0.into_iter().enumerate() {
            self.pixels[(c * FRAME_HEIGHT + y) * FRAME_WIDTH + x] = v;
        }
    }

    pub fn to_image(&self) -> RgbImage {
        RgbImage::from_fn(FRAME_WIDTH as u32, FRAME_HEIGHT as u32, |x, y| {
            let c = self.color_at(y as usize, x as usize);
            Rgb(c.0)
        })
    }

    pub fn from_image(img: &RgbImage) -> Result<Self> {
        if img.dimensions() != (FRAME_WIDTH as u32, FRAME_HEIGHT as u32) {
            return Err(Error::InvalidInput(format!(
                "frame image must be {FRAME_WIDTH}x{FRAME_HEIGHT}, got {:?}",
                img.dimensions()
            )));
        }
        let mut frame = Frame::filled(Color([0, 0, 0]));
        for (x, y, p) in img.enumerate_pixels() {
            frame.set(y as usize, x as usize, Color(p.0));
        }
        Ok(frame)
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        save_png(&self.to_image(), path)
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path)
            .map_err(|e| match e {
                image::ImageError::IoError(io) => Error::io(path, io),
                other => Error::InvalidInput(format!("{}: {other}", path.display())),
            })?
            .to_rgb8();
        Frame::from_image(&img)
    }
}

pub fn save_png(img: &RgbImage, path: &Path) -> Result<()> {
    img.save_with_format(path, image::ImageFormat::Png).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::io(path, std::io::Error::other(other.to_string())),
    })
}

/// Frames laid out left to right with no gap.
pub fn side_by_side(frames: &[&Frame]) -> RgbImage {
    let mut out = RgbImage::new((FRAME_WIDTH * frames.len()) as u32, FRAME_HEIGHT as u32);
    for (i, f) in frames.iter().enumerate() {
        image::imageops::replace(&mut out, &f.to_image(), (i * FRAME_WIDTH) as i64, 0);
    }
    out
}

/// Rows of `[left | right]` pairs stacked vertically.
pub fn pair_grid(pairs: &[(&Frame, &Frame)]) -> RgbImage {
    let mut out = RgbImage::new((2 * FRAME_WIDTH) as u32, (FRAME_HEIGHT * pairs.len().max(1)) as u32);
    for (row, (a, b)) in pairs.iter().enumerate() {
        image::imageops::replace(&mut out, &side_by_side(&[a, b]), 0, (row * FRAME_HEIGHT) as i64);
    }
    out
}

/// Axis-aligned box in pixel coordinates; `x2`/`y2` are exclusive edges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
    #[serde(default = "full_confidence")]
    pub confidence: f64,
}

fn full_confidence() -> f64 {
    1.0
}

impl BoundingBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64, confidence: f64) -> Result<Self> {
        let b = BoundingBox {
            x1,
            y1,
            x2,
            y2,
            confidence,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let coords = [self.x1, self.y1, self.x2, self.y2];
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite box coordinates {coords:?}")));
        }
        if self.x1 > self.x2 || self.y1 > self.y2 {
            return Err(Error::InvalidInput(format!("box corners out of order {coords:?}")));
        }
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(Error::InvalidInput(format!("box confidence {} outside [0, 1]", self.confidence)));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn same_extent(&self, other: &BoundingBox) -> bool {
        self.x1 == other.x1 && self.y1 == other.y1 && self.x2 == other.x2 && self.y2 == other.y2
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_round_trip_is_lossless_for_8_bit_values() {
        let mut f = Frame::filled(Color([10, 20, 30]));
        f.set(5, 7, Color([255, 0, 128]));
        let back = Frame::from_unit::<f32>(&f.to_unit::<f32>()).unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn image_layout_is_channel_major() {
        let mut f = Frame::filled(Color([0, 0, 0]));
        f.set(2, 3, Color([1, 2, 3]));
        assert_eq!(f.pixels()[2 * FRAME_WIDTH + 3], 1);
        assert_eq!(f.pixels()[FRAME_HEIGHT * FRAME_WIDTH + 2 * FRAME_WIDTH + 3], 2);
        let img = f.to_image();
        assert_eq!(img.get_pixel(3, 2).0, [1, 2, 3]);
        assert_eq!(Frame::from_image(&img).unwrap(), f);
    }

    #[test]
    fn invalid_boxes_are_rejected() {
        assert!(BoundingBox::new(3.0, 0.0, 1.0, 2.0, 1.0).is_err());
        assert!(BoundingBox::new(0.0, 0.0, f64::NAN, 2.0, 1.0).is_err());
        assert!(BoundingBox::new(0.0, 0.0, 1.0, 2.0, 1.5).is_err());
        assert_eq!(BoundingBox::new(0.0, 0.0, 4.0, 2.0, 0.5).unwrap().area(), 8.0);
    }

    #[test]
    fn comparison_strip_is_two_frames_wide() {
        let a = Frame::filled(Color([1, 1, 1]));
        let b = Frame::filled(Color([2, 2, 2]));
        let strip = side_by_side(&[&a, &b]);
        assert_eq!(strip.dimensions(), (320, 120));
        assert_eq!(strip.get_pixel(200, 10).0, [2, 2, 2]);
    }
}
