use super::binary::{BinaryImage, INK, PAPER};
use crate::data::GrayImage;
use crate::error::{Error, Result};

pub const OTSU_BINS: usize = 256;

/// Histogram bin of an intensity in `[0, 1]`.
pub fn otsu_bin(v: f32) -> usize {
    ((v.clamp(0.0, 1.0) * 255.0).round() as usize).min(OTSU_BINS - 1)
}

/// Between-class variance (up to a constant factor) when bins `0..=t` are
/// ink.
pub fn between_class_variance(histogram: &[u64; OTSU_BINS], t: usize) -> f64 {
    let total: u64 = histogram.iter().sum();
    let (mut w0, mut s0, mut s_all) = (0u64, 0f64, 0f64);
    for (b, &c) in histogram.iter().enumerate() {
        s_all += (b as u64 * c) as f64;
        if b <= t {
            w0 += c;
            s0 += (b as u64 * c) as f64;
        }
    }
    let w1 = total - w0;
    if w0 == 0 || w1 == 0 {
        return 0.0;
    }
    let (mu0, mu1) = (s0 / w0 as f64, (s_all - s0) / w1 as f64);
    w0 as f64 * w1 as f64 * (mu0 - mu1).powi(2)
}

/// Bin index `t` maximising between-class variance (first maximum) and the
/// equivalent intensity threshold: a pixel is ink iff its value is below
/// the threshold.
pub fn otsu_threshold(image: &GrayImage) -> Result<(usize, f32)> {
    let mut hist = [0u64; OTSU_BINS];
    for &v in image.pixels() {
        hist[otsu_bin(v)] += 1;
    }
    if hist.iter().filter(|&&c| c > 0).count() < 2 {
        return Err(Error::Metric(
            "Otsu: histogram has a single occupied bin".into(),
        ));
    }
    // Single sweep with running sums.
    let total: u64 = hist.iter().sum();
    let sum_all: f64 = hist
        .iter()
        .enumerate()
        .map(|(b, &c)| (b as u64 * c) as f64)
        .sum();
    let (mut w0, mut s0) = (0u64, 0f64);
    let (mut best_t, mut best) = (0, -1.0);
    for (t, &c) in hist.iter().enumerate().take(OTSU_BINS - 1) {
        w0 += c;
        s0 += (t as u64 * c) as f64;
        let w1 = total - w0;
        if w0 == 0 || w1 == 0 {
            continue;
        }
        let (mu0, mu1) = (s0 / w0 as f64, (sum_all - s0) / w1 as f64);
        let var = w0 as f64 * w1 as f64 * (mu0 - mu1).powi(2);
        if var > best {
            best = var;
            best_t = t;
        }
    }
    Ok((best_t, (best_t as f32 + 0.5) / 255.0))
}

/// Global Otsu binarization.
pub fn otsu(image: &GrayImage) -> Result<BinaryImage> {
    let (t, _) = otsu_threshold(image)?;
    Ok(BinaryImage::from_fn(
        image.width(),
        image.height(),
        |x, y| otsu_bin(image.get(x, y)) <= t,
    ))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SauvolaParams {
    pub window: usize,
    pub k: f64,
    pub r: f64,
}

impl Default for SauvolaParams {
    fn default() -> Self {
        SauvolaParams {
            window: 25,
            k: 0.2,
            r: 0.5,
        }
    }
}

/// Mean and standard deviation over a `window`-square neighbourhood of each
/// pixel, clipped at the borders, from integral images.
pub fn local_mean_std(image: &GrayImage, window: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if window < 3 || window.is_multiple_of(2) {
        return Err(Error::Config(format!(
            "window must be odd and >= 3, got {window}"
        )));
    }
    let (w, h) = (image.width(), image.height());
    let stride = w + 1;
    let mut sum = vec![0f64; stride * (h + 1)];
    let mut sq = vec![0f64; stride * (h + 1)];
    for y in 0..h {
        let (mut row, mut row_sq) = (0f64, 0f64);
        for x in 0..w {
            let v = image.get(x, y) as f64;
            row += v;
            row_sq += v * v;
            sum[(y + 1) * stride + x + 1] = sum[y * stride + x + 1] + row;
            sq[(y + 1) * stride + x + 1] = sq[y * stride + x + 1] + row_sq;
        }
    }
    let r = window / 2;
    let rect = |t: &[f64], x0: usize, y0: usize, x1: usize, y1: usize| {
        t[y1 * stride + x1] - t[y0 * stride + x1] - t[y1 * stride + x0] + t[y0 * stride + x0]
    };
    let mut mean = Vec::with_capacity(w * h);
    let mut std = Vec::with_capacity(w * h);
    for y in 0..h {
        let (y0, y1) = (y.saturating_sub(r), (y + r + 1).min(h));
        for x in 0..w {
            let (x0, x1) = (x.saturating_sub(r), (x + r + 1).min(w));
            let n = ((x1 - x0) * (y1 - y0)) as f64;
            let m = rect(&sum, x0, y0, x1, y1) / n;
            let var = (rect(&sq, x0, y0, x1, y1) / n - m * m).max(0.0);
            mean.push(m);
            std.push(var.sqrt());
        }
    }
    Ok((mean, std))
}

/// Sauvola adaptive thresholding: ink where the pixel is below
/// `mean * (1 + k (std / r - 1))`.
pub fn sauvola(image: &GrayImage, params: SauvolaParams) -> Result<BinaryImage> {
    let (mean, std) = local_mean_std(image, params.window)?;
    let pixels = image
        .pixels()
        .iter()
        .zip(mean.iter().zip(&std))
        .map(|(&v, (&m, &s))| {
            let t = m * (1.0 + params.k * (s / params.r - 1.0));
            if (v as f64) < t {
                INK
            } else {
                PAPER
            }
        })
        .collect();
    BinaryImage::new(image.width(), image.height(), pixels)
}
