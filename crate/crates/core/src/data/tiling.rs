use super::GrayImage;
use crate::error::{Error, Result};

/// An image cut into equal square tiles, with what is needed to put it back.
#[derive(Clone, Debug, PartialEq)]
pub struct TileSet {
    pub tiles: Vec<GrayImage>,
    /// Top-left corner `(x, y)` of each tile in the padded image.
    pub origins: Vec<(usize, usize)>,
    pub width: usize,
    pub height: usize,
    pub tile_size: usize,
    pub pad_value: f32,
}

impl TileSet {
    pub fn columns(&self) -> usize {
        self.width.div_ceil(self.tile_size)
    }

    pub fn rows(&self) -> usize {
        self.height.div_ceil(self.tile_size)
    }

    /// Places `tiles` at this set's origins and crops the padding away.
    pub fn reassemble(&self, tiles: &[GrayImage]) -> Result<GrayImage> {
        if tiles.len() != self.origins.len() {
            return Err(Error::Dimension(format!(
                "expected {} tiles, got {}",
                self.origins.len(),
                tiles.len()
            )));
        }
        let mut pixels = vec![0.0f32; self.width * self.height];
        for (tile, &(x0, y0)) in tiles.iter().zip(&self.origins) {
            if tile.width() != self.tile_size || tile.height() != self.tile_size {
                return Err(Error::Dimension(format!(
                    "tile is {}x{}, expected {}x{}",
                    tile.width(),
                    tile.height(),
                    self.tile_size,
                    self.tile_size
                )));
            }
            let w = self.tile_size.min(self.width - x0);
            for y in 0..self.tile_size.min(self.height - y0) {
                let src = &tile.pixels()[y * self.tile_size..y * self.tile_size + w];
                let dst = (y0 + y) * self.width + x0;
                pixels[dst..dst + w].copy_from_slice(src);
            }
        }
        GrayImage::new(self.width, self.height, pixels)
    }
}

/// Pads `image` on the right and bottom with `pad_value` up to multiples of
/// `size`, then cuts it into non-overlapping tiles in row-major order.
pub fn tile(image: &GrayImage, size: usize, pad_value: f32) -> Result<TileSet> {
    if size == 0 {
        return Err(Error::Config("tile size must be positive".into()));
    }
    let cols = image.width().div_ceil(size);
    let rows = image.height().div_ceil(size);
    let mut tiles = Vec::with_capacity(rows * cols);
    let mut origins = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let (x0, y0) = (c * size, r * size);
            tiles.push(image.crop_padded(x0, y0, size, size, pad_value));
            origins.push((x0, y0));
        }
    }
    Ok(TileSet {
        tiles,
        origins,
        width: image.width(),
        height: image.height(),
        tile_size: size,
        pad_value,
    })
}

pub fn untile(tile_set: &TileSet) -> Result<GrayImage> {
    tile_set.reassemble(&tile_set.tiles)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn exact_size_is_one_tile() {
        let img = GrayImage::from_fn(256, 256, |x, y| ((x ^ y) % 7) as f32 / 7.0);
        let set = tile(&img, 256, 1.0).unwrap();
        assert_eq!(set.tiles.len(), 1);
        assert_eq!(set.tiles[0], img);
    }

    #[test]
    fn padding_is_white() {
        let img = GrayImage::filled(300, 300, 0.0);
        let set = tile(&img, 256, 1.0).unwrap();
        assert_eq!(set.tiles.len(), 4);
        assert_eq!(set.origins, vec![(0, 0), (256, 0), (0, 256), (256, 256)]);
        let last = &set.tiles[3];
        assert_eq!(last.get(43, 43), 0.0);
        assert_eq!(last.get(44, 0), 1.0);
        assert_eq!(last.get(0, 44), 1.0);
        assert_eq!(last.get(255, 255), 1.0);
    }

    #[test]
    fn reassemble_rejects_wrong_count() {
        let set = tile(&GrayImage::filled(10, 10, 0.5), 4, 1.0).unwrap();
        assert!(set.reassemble(&set.tiles[1..]).is_err());
    }

    proptest! {
        #[test]
        fn untile_inverts_tile(w in 1usize..70, h in 1usize..70, size in 1usize..33, seed in 0u32..1000) {
            let img = GrayImage::from_fn(w, h, |x, y| {
                (((x as u32 * 31 + y as u32 * 17 + seed) % 256) as f32) / 255.0
            });
            let set = tile(&img, size, 1.0).unwrap();
            prop_assert_eq!(untile(&set).unwrap(), img);
        }
    }
}
