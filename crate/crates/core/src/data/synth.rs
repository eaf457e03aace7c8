//! Procedural degraded-document pairs for experiments and tests when no
//! contest corpus is at hand.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{DocumentPair, GrayImage};

/// How the clean page is spoiled.
#[derive(Clone, Debug, PartialEq)]
pub struct Degradation {
    /// Background brightness at the left and right edges.
    pub illumination: (f32, f32),
    /// Ink intensity as a fraction of the local background.
    pub ink_ratio: f32,
    /// Standard deviation of additive Gaussian noise.
    pub noise: f32,
    /// Number of dark blotches.
    pub stains: usize,
    pub stain_depth: f32,
}

impl Degradation {
    pub fn mild() -> Self {
        Degradation {
            illumination: (0.85, 0.95),
            ink_ratio: 0.3,
            noise: 0.03,
            stains: 1,
            stain_depth: 0.15,
        }
    }

    /// Strong left-to-right shading: the darkest background is darker than
    /// the lightest ink, so no single global threshold separates them.
    pub fn uneven_illumination() -> Self {
        Degradation {
            illumination: (0.3, 0.95),
            ink_ratio: 0.45,
            noise: 0.02,
            stains: 2,
            stain_depth: 0.2,
        }
    }
}

fn stroke_distance(px: f32, py: f32, a: (f32, f32), b: (f32, f32)) -> f32 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((px - a.0) * dx + (py - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    let (cx, cy) = (a.0 + t * dx, a.1 + t * dy);
    ((px - cx).powi(2) + (py - cy).powi(2)).sqrt()
}

/// Clean binary page of glyph-like strokes: 0 ink, 1 paper.
pub fn synthetic_text(width: usize, height: usize, rng: &mut impl Rng) -> GrayImage {
    let mut ink = vec![false; width * height];
    let mut draw = |a: (f32, f32), b: (f32, f32), thickness: f32| {
        let r = thickness / 2.0;
        let x_lo = (a.0.min(b.0) - r).floor().max(0.0) as usize;
        let x_hi = ((a.0.max(b.0) + r).ceil() as usize).min(width.saturating_sub(1));
        let y_lo = (a.1.min(b.1) - r).floor().max(0.0) as usize;
        let y_hi = ((a.1.max(b.1) + r).ceil() as usize).min(height.saturating_sub(1));
        for y in y_lo..=y_hi {
            for x in x_lo..=x_hi {
                if stroke_distance(x as f32, y as f32, a, b) <= r {
                    ink[y * width + x] = true;
                }
            }
        }
    };
    let line_height = 22.0;
    let mut baseline = 6.0 + rng.random_range(0.0..8.0);
    while baseline + 16.0 < height as f32 {
        let mut x = 4.0 + rng.random_range(0.0..10.0);
        while x + 10.0 < width as f32 {
            let glyphs = rng.random_range(2..6);
            for _ in 0..glyphs {
                let w = rng.random_range(5.0..9.0);
                let h = rng.random_range(10.0..15.0);
                let top = baseline + 15.0 - h;
                let thickness = rng.random_range(1.6..2.6);
                for _ in 0..rng.random_range(2..4) {
                    let a = (x + rng.random_range(0.0..w), top + rng.random_range(0.0..h));
                    let b = match rng.random_range(0..3) {
                        0 => (a.0, top + rng.random_range(0.0..h)),
                        1 => (x + rng.random_range(0.0..w), a.1),
                        _ => (x + rng.random_range(0.0..w), top + rng.random_range(0.0..h)),
                    };
                    draw(a, b, thickness);
                }
                x += w + rng.random_range(2.0..4.0);
                if x + 10.0 >= width as f32 {
                    break;
                }
            }
            x += rng.random_range(6.0..12.0);
        }
        baseline += line_height + rng.random_range(-2.0..3.0);
    }
    GrayImage::from_fn(
        width,
        height,
        |x, y| if ink[y * width + x] { 0.0 } else { 1.0 },
    )
}

/// Applies shading, blotches, and noise to a clean page.
pub fn degrade(clean: &GrayImage, degradation: &Degradation, rng: &mut impl Rng) -> GrayImage {
    let (w, h) = (clean.width(), clean.height());
    let stains: Vec<(f32, f32, f32)> = (0..degradation.stains)
        .map(|_| {
            (
                rng.random_range(0.0..w as f32),
                rng.random_range(0.0..h as f32),
                rng.random_range(8.0..(w.min(h) as f32 / 4.0).max(9.0)),
            )
        })
        .collect();
    let noise = Normal::new(0.0f32, degradation.noise.max(0.0)).expect("finite sigma");
    let (left, right) = degradation.illumination;
    let mut pixels = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let t = if w > 1 {
                x as f32 / (w - 1) as f32
            } else {
                0.0
            };
            let mut bg = left + (right - left) * t;
            for &(sx, sy, radius) in &stains {
                let d2 = ((x as f32 - sx).powi(2) + (y as f32 - sy).powi(2)) / (radius * radius);
                bg -= degradation.stain_depth * (-d2).exp();
            }
            let v = if clean.get(x, y) < 0.5 {
                bg * degradation.ink_ratio
            } else {
                bg
            };
            pixels.push((v + noise.sample(rng)).clamp(0.0, 1.0));
        }
    }
    GrayImage::new(w, h, pixels).expect("clamped pixels")
}

/// Deterministic degraded/ground-truth pair for `seed`.
pub fn synthetic_pair(
    id: impl Into<String>,
    year: u32,
    width: usize,
    height: usize,
    degradation: &Degradation,
    seed: u64,
) -> DocumentPair {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let clean = synthetic_text(width, height, &mut rng);
    let degraded = degrade(&clean, degradation, &mut rng);
    DocumentPair::new(id, year, degraded, clean).expect("matching sizes")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pair_is_deterministic_and_has_ink() {
        let a = synthetic_pair("a", 2009, 64, 64, &Degradation::mild(), 7);
        let b = synthetic_pair("a", 2009, 64, 64, &Degradation::mild(), 7);
        assert_eq!(a, b);
        let ink = a
            .ground_truth
            .pixels()
            .iter()
            .filter(|&&v| v == 0.0)
            .count();
        assert!(ink > 0 && ink < 64 * 64 / 2, "ink pixels: {ink}");
    }

    #[test]
    fn uneven_illumination_overlaps_ink_and_paper() {
        let p = synthetic_pair("a", 2009, 128, 128, &Degradation::uneven_illumination(), 3);
        let (mut ink_max, mut paper_min) = (0.0f32, 1.0f32);
        for (d, g) in p.degraded.pixels().iter().zip(p.ground_truth.pixels()) {
            if *g == 0.0 {
                ink_max = ink_max.max(*d);
            } else {
                paper_min = paper_min.min(*d);
            }
        }
        assert!(ink_max > paper_min);
    }
}
