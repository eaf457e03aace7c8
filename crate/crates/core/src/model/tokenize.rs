//! Pixel-to-token layout. Patches are taken in row-major order over the patch
//! grid, and pixels are flattened row-major inside each patch; sub-patches
//! follow the same convention inside their owning patch.

use crate::data::GrayImage;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

fn check_divisible(width: usize, height: usize, p: usize) -> Result<()> {
    if p == 0 || !width.is_multiple_of(p) || !height.is_multiple_of(p) {
        return Err(Error::Dimension(format!(
            "{width}x{height} tile is not divisible into {p}x{p} patches"
        )));
    }
    Ok(())
}

/// `[n_patch, p*p]` raw patch rows.
pub fn patchify<T: Scalar>(tile: &GrayImage, p: usize) -> Result<Tensor<T>> {
    let (w, h) = (tile.width(), tile.height());
    check_divisible(w, h, p)?;
    let (gw, gh) = (w / p, h / p);
    let mut data = Vec::with_capacity(w * h);
    for py in 0..gh {
        for px in 0..gw {
            for y in 0..p {
                let row = (py * p + y) * w + px * p;
                data.extend(
                    tile.pixels()[row..row + p]
                        .iter()
                        .map(|&v| T::from_f64(v as f64)),
                );
            }
        }
    }
    Tensor::new([gw * gh, p * p], data)
}

/// `[n_patch, (p/s)^2, s*s]` raw sub-patch rows grouped by owning patch.
pub fn subpatchify<T: Scalar>(tile: &GrayImage, p: usize, s: usize) -> Result<Tensor<T>> {
    let (w, h) = (tile.width(), tile.height());
    check_divisible(w, h, p)?;
    if s == 0 || !p.is_multiple_of(s) {
        return Err(Error::Dimension(format!(
            "patch {p} is not divisible into {s}x{s} sub-patches"
        )));
    }
    let (gw, gh, q) = (w / p, h / p, p / s);
    let mut data = Vec::with_capacity(w * h);
    for py in 0..gh {
        for px in 0..gw {
            for sy in 0..q {
                for sx in 0..q {
                    for y in 0..s {
                        let row = (py * p + sy * s + y) * w + px * p + sx * s;
                        data.extend(
                            tile.pixels()[row..row + s]
                                .iter()
                                .map(|&v| T::from_f64(v as f64)),
                        );
                    }
                }
            }
        }
    }
    Tensor::new([gw * gh, q * q, s * s], data)
}

/// Inverse of [`patchify`]: places `[n_patch, p*p]` rows back on a
/// `width x height` canvas.
pub fn stitch<T: Scalar>(
    pred: &Tensor<T>,
    width: usize,
    height: usize,
    p: usize,
) -> Result<GrayImage> {
    check_divisible(width, height, p)?;
    let (gw, gh) = (width / p, height / p);
    if pred.shape() != [gw * gh, p * p] {
        return Err(Error::Shape {
            op: "stitch",
            lhs: pred.shape().to_vec(),
            rhs: vec![gw * gh, p * p],
        });
    }
    let mut pixels = vec![0.0f32; width * height];
    for (i, patch) in pred.data().chunks(p * p).enumerate() {
        let (py, px) = (i / gw, i % gw);
        for y in 0..p {
            let dst = (py * p + y) * width + px * p;
            for x in 0..p {
                pixels[dst + x] = patch[y * p + x].as_f64() as f32;
            }
        }
    }
    GrayImage::new(width, height, pixels)
}

/// Stacks per-tile patch rows into `[batch, n_patch, p*p]`.
pub fn patchify_batch<T: Scalar>(tiles: &[GrayImage], p: usize) -> Result<Tensor<T>> {
    let mut data = Vec::new();
    let mut rows = None;
    for tile in tiles {
        let t = patchify::<T>(tile, p)?;
        if *rows.get_or_insert(t.shape()[0]) != t.shape()[0] {
            return Err(Error::Dimension("tiles in a batch differ in size".into()));
        }
        data.extend_from_slice(t.data());
    }
    Tensor::new([tiles.len(), rows.unwrap_or(0), p * p], data)
}

/// Stacks per-tile sub-patch rows into `[batch, n_patch, n_sub, s*s]`.
pub fn subpatchify_batch<T: Scalar>(tiles: &[GrayImage], p: usize, s: usize) -> Result<Tensor<T>> {
    let mut data = Vec::new();
    let mut dims = None;
    for tile in tiles {
        let t = subpatchify::<T>(tile, p, s)?;
        let d = (t.shape()[0], t.shape()[1]);
        if *dims.get_or_insert(d) != d {
            return Err(Error::Dimension("tiles in a batch differ in size".into()));
        }
        data.extend_from_slice(t.data());
    }
    let (n, q) = dims.unwrap_or((0, 0));
    Tensor::new([tiles.len(), n, q, s * s], data)
}
