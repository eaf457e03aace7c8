use super::binary::{BinaryImage, INK};
use super::thinning::zhang_suen;
use crate::error::{Error, Result};

/// Reported in place of infinity when prediction and ground truth agree.
pub const PSNR_CAP: f64 = 100.0;

/// Pixel agreement counts with ink as the positive class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn count(pred: &BinaryImage, gt: &BinaryImage) -> Result<Self> {
        pred.check_same_size(gt, "confusion")?;
        let mut c = Confusion::default();
        for (&p, &g) in pred.pixels().iter().zip(gt.pixels()) {
            match (p == INK, g == INK) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

/// `10 log10(1 / MSE)` with MSE the fraction of differing pixels.
pub fn psnr(pred: &BinaryImage, gt: &BinaryImage) -> Result<f64> {
    let c = Confusion::count(pred, gt)?;
    psnr_from(&c)
}

fn psnr_from(c: &Confusion) -> Result<f64> {
    if c.total() == 0 {
        return Err(Error::Metric("PSNR of an empty image".into()));
    }
    let mse = (c.fp + c.fn_) as f64 / c.total() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}

fn harmonic_percent(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        200.0 * precision * recall / (precision + recall)
    }
}

fn require_ink(gt: &BinaryImage, what: &str) -> Result<()> {
    if gt.ink_count() == 0 {
        return Err(Error::Metric(format!(
            "{what}: ground truth has no foreground, recall is undefined"
        )));
    }
    Ok(())
}

fn precision(c: &Confusion) -> f64 {
    if c.tp == 0 {
        0.0
    } else {
        c.tp as f64 / (c.tp + c.fp) as f64
    }
}

/// F-measure in percent.
pub fn f_measure(pred: &BinaryImage, gt: &BinaryImage) -> Result<f64> {
    let c = Confusion::count(pred, gt)?;
    require_ink(gt, "F-measure")?;
    Ok(fm_from(&c))
}

fn fm_from(c: &Confusion) -> f64 {
    let recall = c.tp as f64 / (c.tp + c.fn_) as f64;
    harmonic_percent(precision(c), recall)
}

/// Pseudo F-measure in percent: recall is measured on the skeleton of the
/// ground-truth ink.
pub fn pseudo_f_measure(pred: &BinaryImage, gt: &BinaryImage) -> Result<f64> {
    let c = Confusion::count(pred, gt)?;
    require_ink(gt, "pseudo F-measure")?;
    Ok(fps_from(pred, gt, &c))
}

fn fps_from(pred: &BinaryImage, gt: &BinaryImage, c: &Confusion) -> f64 {
    let skeleton = zhang_suen(gt);
    let (mut hit, mut total) = (0usize, 0usize);
    for (&s, &p) in skeleton.pixels().iter().zip(pred.pixels()) {
        if s == INK {
            total += 1;
            hit += (p == INK) as usize;
        }
    }
    let recall = if total == 0 {
        0.0
    } else {
        hit as f64 / total as f64
    };
    harmonic_percent(precision(c), recall)
}

const DRD_RADIUS: isize = 2;
const DRD_SIZE: usize = 5;
const DRD_BLOCK: usize = 8;

/// Normalised 5x5 reciprocal-distance weights. The centre takes the
/// distance-1 value before normalisation.
pub fn drd_weights() -> [[f64; DRD_SIZE]; DRD_SIZE] {
    let mut w = [[0.0; DRD_SIZE]; DRD_SIZE];
    let mut sum = 0.0;
    for (i, row) in w.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - 2.0, j as f64 - 2.0);
            *v = if di == 0.0 && dj == 0.0 {
                1.0
            } else {
                1.0 / (di * di + dj * dj).sqrt()
            };
            sum += *v;
        }
    }
    for row in &mut w {
        for v in row {
            *v /= sum;
        }
    }
    w
}

/// Number of 8x8 ground-truth blocks containing both classes. Blocks cut by
/// the right and bottom edges count if non-uniform.
pub fn non_uniform_blocks(gt: &BinaryImage) -> usize {
    let (w, h) = (gt.width(), gt.height());
    let mut count = 0;
    for by in (0..h).step_by(DRD_BLOCK) {
        for bx in (0..w).step_by(DRD_BLOCK) {
            let first = gt.get(bx, by);
            let mixed = (by..(by + DRD_BLOCK).min(h))
                .any(|y| (bx..(bx + DRD_BLOCK).min(w)).any(|x| gt.get(x, y) != first));
            count += mixed as usize;
        }
    }
    count
}

/// Distance-reciprocal distortion.
pub fn drd(pred: &BinaryImage, gt: &BinaryImage) -> Result<f64> {
    pred.check_same_size(gt, "drd")?;
    let nubn = non_uniform_blocks(gt);
    if nubn == 0 {
        return Err(Error::Metric(
            "DRD: ground truth has no non-uniform 8x8 block".into(),
        ));
    }
    Ok(drd_sum(pred, gt) / nubn as f64)
}

fn drd_sum(pred: &BinaryImage, gt: &BinaryImage) -> f64 {
    let weights = drd_weights();
    let (w, h) = (gt.width() as isize, gt.height() as isize);
    let mut total = 0.0;
    for y in 0..h {
        for x in 0..w {
            let p = pred.get(x as usize, y as usize);
            let own = gt.get(x as usize, y as usize);
            if p == own {
                continue;
            }
            for dy in -DRD_RADIUS..=DRD_RADIUS {
                for dx in -DRD_RADIUS..=DRD_RADIUS {
                    let (nx, ny) = (x + dx, y + dy);
                    let g = if nx < 0 || ny < 0 || nx >= w || ny >= h {
                        own
                    } else {
                        gt.get(nx as usize, ny as usize)
                    };
                    if g != p {
                        total += weights[(dy + DRD_RADIUS) as usize][(dx + DRD_RADIUS) as usize];
                    }
                }
            }
        }
    }
    total
}

/// All four scores for one prediction plus the raw counts.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricReport {
    pub psnr: f64,
    pub fm: f64,
    pub fps: f64,
    pub drd: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

pub fn evaluate_pair(pred: &BinaryImage, gt: &BinaryImage) -> Result<MetricReport> {
    let c = Confusion::count(pred, gt)?;
    require_ink(gt, "evaluation")?;
    Ok(MetricReport {
        psnr: psnr_from(&c)?,
        fm: fm_from(&c),
        fps: fps_from(pred, gt, &c),
        drd: drd(pred, gt)?,
        tp: c.tp,
        fp: c.fp,
        fn_: c.fn_,
    })
}

/// Arithmetic mean of each score; counts are summed.
pub fn mean_report(reports: &[MetricReport]) -> Result<MetricReport> {
    if reports.is_empty() {
        return Err(Error::Metric("mean of no reports".into()));
    }
    let n = reports.len() as f64;
    let mean = |f: fn(&MetricReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    Ok(MetricReport {
        psnr: mean(|r| r.psnr),
        fm: mean(|r| r.fm),
        fps: mean(|r| r.fps),
        drd: mean(|r| r.drd),
        tp: reports.iter().map(|r| r.tp).sum(),
        fp: reports.iter().map(|r| r.fp).sum(),
        fn_: reports.iter().map(|r| r.fn_).sum(),
    })
}
