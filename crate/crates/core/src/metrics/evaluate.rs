//! Per-pair metric reports and the directory layout `eval` reads.
//!
//! A pair is named by a stem. Its coefficients live in `<stem>.csv` or
//! `<stem>/listener.csv`; optional rendered frames are the `*.png` / `*.pgm`
//! files in `<stem>/`, matched by file name; optional embeddings are
//! `<stem>/features.csv` (for FID) and `<stem>/identity.csv` (for CSIM).

use std::fs;
use std::path::{Path, PathBuf};

use super::{
    coeff_frechet, coeff_l1, cpbd_with, csim, frechet_distance, gaussian_summary, load_embedding_set, load_gray_image, psnr,
    ssim, CpbdConfig, EmbeddingSet, GrayImage, MetricReport, MetricValue, Part,
};
use crate::coeffspace::{load_coefficient_sequence, CoefficientSequence};
use crate::error::{Error, Result};

pub const METRIC_NAMES: [&str; 9] = ["PSNR", "SSIM", "CPBD", "FID", "CSIM", "ExpL1", "PoseL1", "ExpFD", "PoseFD"];
pub const FEATURES_CSV: &str = "features.csv";
pub const IDENTITY_CSV: &str = "identity.csv";
const PAIR_COEFF_CSV: &str = "listener.csv";

#[derive(Clone, Debug, Default)]
pub struct EvalOptions {
    /// Report Fréchet distances as distances rather than squared.
    pub unsquared_fd: bool,
    pub cpbd: CpbdConfig,
}

/// Everything found for one prediction / ground-truth pair.
#[derive(Clone, Debug, Default)]
pub struct PairData {
    pub coeffs: Option<(CoefficientSequence<f64>, CoefficientSequence<f64>)>,
    pub frames: Vec<(GrayImage<f64>, GrayImage<f64>)>,
    pub features: Option<(EmbeddingSet<f64>, EmbeddingSet<f64>)>,
    pub identity: Option<(EmbeddingSet<f64>, EmbeddingSet<f64>)>,
}

impl PairData {
    pub fn is_empty(&self) -> bool {
        self.coeffs.is_none() && self.frames.is_empty() && self.features.is_none() && self.identity.is_none()
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn frechet_value(d: f64, opts: &EvalOptions) -> f64 {
    if opts.unsquared_fd {
        d.sqrt()
    } else {
        d
    }
}

/// All nine metrics in [`METRIC_NAMES`] order; those without inputs are `n/a`.
pub fn evaluate_pair(pair: &PairData, opts: &EvalOptions) -> Result<MetricReport> {
    let mut report = MetricReport::default();
    if pair.frames.is_empty() {
        for name in ["PSNR", "SSIM", "CPBD"] {
            report.push(name, MetricValue::NotAvailable);
        }
    } else {
        let psnrs = pair.frames.iter().map(|(p, g)| psnr(p, g, 1.0)).collect::<Result<Vec<f64>>>()?;
        let finite: Vec<f64> = psnrs.iter().copied().filter(|v| v.is_finite()).collect();
        report.push("PSNR", if finite.is_empty() { f64::INFINITY } else { mean(&finite) });
        let ssims = pair.frames.iter().map(|(p, g)| ssim(p, g)).collect::<Result<Vec<f64>>>()?;
        report.push("SSIM", mean(&ssims));
        let sharp = pair.frames.iter().map(|(p, _)| Ok(cpbd_with(p, &opts.cpbd)?.value)).collect::<Result<Vec<f64>>>()?;
        report.push("CPBD", mean(&sharp));
    }
    match &pair.features {
        Some((p, g)) => {
            let d = frechet_distance(&gaussian_summary(&p.vectors.view())?, &gaussian_summary(&g.vectors.view())?)?;
            report.push("FID", frechet_value(d, opts));
        }
        None => report.push("FID", MetricValue::NotAvailable),
    }
    match &pair.identity {
        Some((p, g)) => report.push("CSIM", csim(p, g)?),
        None => report.push("CSIM", MetricValue::NotAvailable),
    }
    match &pair.coeffs {
        Some((p, g)) => {
            report.push("ExpL1", coeff_l1(p, g, Part::Expression)?);
            report.push("PoseL1", coeff_l1(p, g, Part::Pose)?);
            for (name, part) in [("ExpFD", Part::Expression), ("PoseFD", Part::Pose)] {
                if p.len() < 2 {
                    report.push(name, MetricValue::NotAvailable);
                } else {
                    report.push(name, frechet_value(coeff_frechet(p, g, part)?, opts));
                }
            }
        }
        None => {
            for name in ["ExpL1", "PoseL1", "ExpFD", "PoseFD"] {
                report.push(name, MetricValue::NotAvailable);
            }
        }
    }
    Ok(report)
}

fn coeff_path(root: &Path, stem: &str) -> Option<PathBuf> {
    [root.join(format!("{stem}.csv")), root.join(stem).join(PAIR_COEFF_CSV)]
        .into_iter()
        .find(|p| p.is_file())
}

fn is_frame(path: &Path) -> bool {
    path.is_file()
        && path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("png") || e.eq_ignore_ascii_case("pgm"))
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<Vec<_>>>()?;
    out.sort();
    Ok(out)
}

fn embedding_pair(pred: &Path, gt: &Path, stem: &str, file: &str) -> Result<Option<(EmbeddingSet<f64>, EmbeddingSet<f64>)>> {
    let p = pred.join(stem).join(file);
    if !p.is_file() {
        return Ok(None);
    }
    let g = gt.join(stem).join(file);
    if !g.is_file() {
        return Err(Error::Invalid(format!("{} has no counterpart {}", p.display(), g.display())));
    }
    Ok(Some((load_embedding_set(p)?, load_embedding_set(g)?)))
}

/// Loads every pair named in `pred`, in sorted stem order. A prediction
/// without matching ground truth is an error; stems with nothing to
/// evaluate are skipped.
pub fn load_pairs(pred: &Path, gt: &Path) -> Result<Vec<(String, PairData)>> {
    let mut stems: Vec<String> = Vec::new();
    for path in sorted_entries(pred)? {
        let stem = path.file_stem().and_then(|s| s.to_str()).map(str::to_string);
        let wanted = path.is_dir() || path.extension().is_some_and(|e| e == "csv");
        if let (true, Some(stem)) = (wanted, stem) {
            if !stems.contains(&stem) {
                stems.push(stem);
            }
        }
    }
    stems.sort();
    let mut out = Vec::new();
    for stem in stems {
        let mut pair = PairData::default();
        if let Some(p) = coeff_path(pred, &stem) {
            let g = coeff_path(gt, &stem)
                .ok_or_else(|| Error::Invalid(format!("no ground-truth coefficients for `{stem}` in {}", gt.display())))?;
            pair.coeffs = Some((load_coefficient_sequence(p)?, load_coefficient_sequence(g)?));
        }
        let frame_dir = pred.join(&stem);
        if frame_dir.is_dir() {
            for p in sorted_entries(&frame_dir)?.into_iter().filter(|p| is_frame(p)) {
                let g = gt.join(&stem).join(p.file_name().expect("entry has a name"));
                if !g.is_file() {
                    return Err(Error::Invalid(format!("{} has no counterpart {}", p.display(), g.display())));
                }
                pair.frames.push((load_gray_image(&p)?, load_gray_image(&g)?));
            }
        }
        pair.features = embedding_pair(pred, gt, &stem, FEATURES_CSV)?;
        pair.identity = embedding_pair(pred, gt, &stem, IDENTITY_CSV)?;
        if !pair.is_empty() {
            out.push((stem, pair));
        }
    }
    if out.is_empty() {
        return Err(Error::Invalid(format!("nothing to evaluate in {}", pred.display())));
    }
    Ok(out)
}
