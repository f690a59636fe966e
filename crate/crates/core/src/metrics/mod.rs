//! Image, coefficient and embedding metrics, and the text reports that
//! carry them.

mod coeff;
mod evaluate;
mod image;
mod report;

pub use coeff::{
    coeff_frechet, coeff_l1, csim, frechet_distance, frechet_distance_unsquared, gaussian_summary, load_embedding_set,
    EmbeddingSet, GaussianSummary, Part,
};
pub use image::{cpbd, cpbd_with, load_gray_image, psnr, ssim, CpbdConfig, CpbdScore, GrayImage, SSIM_WINDOW};
pub use report::{aggregate_reports, parse_report, MetricReport, MetricValue};
pub use evaluate::{evaluate_pair, load_pairs, EvalOptions, PairData, FEATURES_CSV, IDENTITY_CSV, METRIC_NAMES};
