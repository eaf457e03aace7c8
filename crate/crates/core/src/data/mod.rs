//! Image I/O, tiling, dataset enumeration, and synthetic document pairs.

mod dataset;
mod image;
pub mod synth;
mod tiling;

pub use dataset::{dataset_years, enumerate_dataset, threshold_ground_truth, DocumentPair};
pub use image::{
    decode_image, encode_pgm, encode_png, load_image, luminance, save_image, GrayImage,
};
pub use tiling::{tile, untile, TileSet};
