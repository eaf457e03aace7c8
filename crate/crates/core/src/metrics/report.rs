use std::fmt::Write as _;

use super::binary::BinaryImage;
use super::score::{evaluate_pair, mean_report, MetricReport};
use crate::error::Result;

/// One scored image.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleReport {
    pub sample_id: String,
    pub year: u32,
    pub report: MetricReport,
}

/// A prediction awaiting scoring.
pub struct Scored<'a> {
    pub sample_id: &'a str,
    pub year: u32,
    pub pred: &'a BinaryImage,
    pub gt: &'a BinaryImage,
}

/// Scores every pair and the per-metric mean.
pub fn evaluate_dataset(items: &[Scored<'_>]) -> Result<(Vec<SampleReport>, MetricReport)> {
    let samples = items
        .iter()
        .map(|s| {
            Ok(SampleReport {
                sample_id: s.sample_id.to_string(),
                year: s.year,
                report: evaluate_pair(s.pred, s.gt)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let reports: Vec<MetricReport> = samples.iter().map(|s| s.report).collect();
    let mean = mean_report(&reports)?;
    Ok((samples, mean))
}

/// `sample_id,year,psnr,fm,fps,drd` rows followed by a `mean` row.
pub fn to_csv(samples: &[SampleReport], mean: Option<&MetricReport>) -> String {
    let mut out = String::from("sample_id,year,psnr,fm,fps,drd\n");
    for s in samples {
        let r = &s.report;
        let _ = writeln!(
            out,
            "{},{},{:.4},{:.4},{:.4},{:.4}",
            s.sample_id, s.year, r.psnr, r.fm, r.fps, r.drd
        );
    }
    if let Some(r) = mean {
        let year = samples
            .first()
            .map(|s| s.year.to_string())
            .unwrap_or_default();
        let _ = writeln!(
            out,
            "mean,{year},{:.4},{:.4},{:.4},{:.4}",
            r.psnr, r.fm, r.fps, r.drd
        );
    }
    out
}

/// Aligned text table with the same columns.
pub fn to_table(samples: &[SampleReport], mean: Option<&MetricReport>) -> String {
    let id_width = samples
        .iter()
        .map(|s| s.sample_id.len())
        .chain([9])
        .max()
        .unwrap_or(9);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<id_width$}  {:>6}  {:>8}  {:>8}  {:>8}  {:>8}",
        "sample_id", "year", "PSNR", "FM", "Fps", "DRD"
    );
    let row = |out: &mut String, id: &str, year: &str, r: &MetricReport| {
        let _ = writeln!(
            out,
            "{id:<id_width$}  {year:>6}  {:>8.2}  {:>8.2}  {:>8.2}  {:>8.2}",
            r.psnr, r.fm, r.fps, r.drd
        );
    };
    for s in samples {
        row(&mut out, &s.sample_id, &s.year.to_string(), &s.report);
    }
    if let Some(r) = mean {
        let _ = writeln!(out, "{}", "-".repeat(id_width + 48));
        row(&mut out, "mean", "", r);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_and_table_layout() {
        let gt = BinaryImage::from_fn(16, 16, |x, y| x == y);
        let items = [
            Scored {
                sample_id: "a",
                year: 2017,
                pred: &gt,
                gt: &gt,
            },
            Scored {
                sample_id: "b",
                year: 2017,
                pred: &gt,
                gt: &gt,
            },
        ];
        let (samples, mean) = evaluate_dataset(&items).unwrap();
        let csv = to_csv(&samples, Some(&mean));
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "sample_id,year,psnr,fm,fps,drd");
        assert_eq!(lines[1], "a,2017,100.0000,100.0000,100.0000,0.0000");
        assert!(lines[3].starts_with("mean,2017,"));
        let table = to_table(&samples, Some(&mean));
        assert!(table.lines().next().unwrap().contains("PSNR"));
        assert_eq!(table.lines().count(), 5);
    }
}
