//! Binarization metrics and classical thresholding baselines.

mod baseline;
mod binary;
mod report;
mod score;
mod thinning;

pub use baseline::{
    between_class_variance, local_mean_std, otsu, otsu_bin, otsu_threshold, sauvola, SauvolaParams,
    OTSU_BINS,
};
pub use binary::{BinaryImage, INK, PAPER};
pub use report::{evaluate_dataset, to_csv, to_table, SampleReport, Scored};
pub use score::{
    drd, drd_weights, evaluate_pair, f_measure, mean_report, non_uniform_blocks, pseudo_f_measure,
    psnr, Confusion, MetricReport, PSNR_CAP,
};
pub use thinning::zhang_suen;
