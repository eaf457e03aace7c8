use crate::data::GrayImage;
use crate::error::{Error, Result};

/// Ink value.
pub const INK: u8 = 0;
/// Paper value.
pub const PAPER: u8 = 1;

/// Strictly two-valued image: 0 is foreground ink, 1 is background.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl BinaryImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width * height != pixels.len() {
            return Err(Error::Dimension(format!(
                "{width}x{height} image needs {} pixels, got {}",
                width * height,
                pixels.len()
            )));
        }
        if let Some(bad) = pixels.iter().find(|&&v| v > 1) {
            return Err(Error::Data(format!("binary pixel value {bad}")));
        }
        Ok(BinaryImage {
            width,
            height,
            pixels,
        })
    }

    pub fn from_fn(width: usize, height: usize, ink: impl Fn(usize, usize) -> bool) -> Self {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(if ink(x, y) { INK } else { PAPER });
            }
        }
        BinaryImage {
            width,
            height,
            pixels,
        }
    }

    /// Pixels below `threshold` become ink.
    pub fn from_gray(image: &GrayImage, threshold: f32) -> Self {
        BinaryImage {
            width: image.width(),
            height: image.height(),
            pixels: image
                .pixels()
                .iter()
                .map(|&v| if v < threshold { INK } else { PAPER })
                .collect(),
        }
    }

    pub fn to_gray(&self) -> GrayImage {
        GrayImage::new(
            self.width,
            self.height,
            self.pixels.iter().map(|&v| v as f32).collect(),
        )
        .expect("binary values are in range")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    pub fn is_ink(&self, x: usize, y: usize) -> bool {
        self.get(x, y) == INK
    }

    pub fn set(&mut self, x: usize, y: usize, value: u8) {
        self.pixels[y * self.width + x] = value.min(1);
    }

    pub fn ink_count(&self) -> usize {
        self.pixels.iter().filter(|&&v| v == INK).count()
    }

    /// Swaps ink and paper.
    pub fn inverted(&self) -> Self {
        BinaryImage {
            width: self.width,
            height: self.height,
            pixels: self.pixels.iter().map(|&v| 1 - v).collect(),
        }
    }

    pub(crate) fn check_same_size(&self, other: &BinaryImage, op: &'static str) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::Shape {
                op,
                lhs: vec![self.height, self.width],
                rhs: vec![other.height, other.width],
            });
        }
        Ok(())
    }
}
