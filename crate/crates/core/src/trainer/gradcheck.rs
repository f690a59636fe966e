use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::model::{batch_objective, Objective};
use super::{fit_norm, prepare_dyads, ListenerModel, PreparedSample, TrainConfig};
use crate::error::{Error, Result};
use crate::hiercoder::plan_contrastive;
use crate::layers::{blocks, zeros_like, Params};
use crate::synthdata::DyadicSample;

pub const GRADCHECK_MAX_HIDDEN: usize = 8;
pub const GRADCHECK_MAX_FRAMES: usize = 8;
pub const FD_STEP: f64 = 1e-5;
/// Denominator floor of the relative error, so that gradients that are zero
/// up to rounding are compared on an absolute scale.
pub const REL_FLOOR: f64 = 1e-4;

#[derive(Clone, Debug, Default)]
pub struct GradCheckOptions {
    pub zero_init: bool,
    pub seed: u64,
    /// Negate the analytic gradient of this block (fault injection).
    pub corrupt_block: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub values: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub blocks: Vec<BlockCheck>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn failing(&self) -> Vec<&BlockCheck> {
        self.blocks.iter().filter(|b| !(b.max_rel_error < self.tolerance)).collect()
    }

    pub fn passed(&self) -> bool {
        self.failing().is_empty()
    }

    pub fn max_rel_error(&self) -> f64 {
        self.blocks.iter().map(|b| b.max_rel_error).fold(0.0, f64::max)
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.blocks {
            let mark = if b.max_rel_error < self.tolerance { "ok" } else { "FAIL" };
            writeln!(f, "{:<40} {:>6} values  max rel err {:.3e}  {mark}", b.name, b.values, b.max_rel_error)?;
        }
        let verdict = if self.passed() { "PASS" } else { "FAIL" };
        write!(f, "{verdict}: max relative error {:.3e} (tolerance {:.1e})", self.max_rel_error(), self.tolerance)
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

fn perturbed(model: &ListenerModel<f64>, block: usize, index: usize, delta: f64) -> ListenerModel<f64> {
    let mut m = model.clone();
    let mut k = 0;
    m.visit_mut("", &mut |_, d| {
        if k == block {
            d[index] += delta;
        }
        k += 1;
    });
    m
}

/// Compares the analytic gradient of the total training loss with central
/// differences for every parameter. Samples are cut to
/// `GRADCHECK_MAX_FRAMES` frames; the hidden size must be small.
pub fn gradient_check(cfg: &TrainConfig, samples: &[DyadicSample<f64>], tolerance: f64, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    if cfg.hidden > GRADCHECK_MAX_HIDDEN {
        return Err(Error::Invalid(format!(
            "gradient check needs hidden ≤ {GRADCHECK_MAX_HIDDEN}, got {}",
            cfg.hidden
        )));
    }
    if samples.is_empty() {
        return Err(Error::Invalid("gradient check needs at least one sample".into()));
    }
    let cfg = TrainConfig {
        t_train: cfg.t_train.min(GRADCHECK_MAX_FRAMES),
        ..cfg.clone()
    };
    cfg.validate()?;
    let norm = fit_norm(samples, &cfg)?;
    let data = prepare_dyads(samples, &norm, &cfg)?;
    let batch: Vec<&PreparedSample<f64>> = data.iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let model = if opts.zero_init {
        ListenerModel::zeros(&cfg)
    } else {
        ListenerModel::init(&mut rng, &cfg)
    };
    let masks: Vec<Vec<bool>> = batch.iter().map(|s| s.text_mask.clone()).collect();
    let plan = plan_contrastive(&masks, cfg.k_negatives, &mut rng)?;
    let obj = Objective::joint(&cfg);
    let loss = |m: &ListenerModel<f64>| -> Result<f64> { Ok(obj.total(&batch_objective(m, &batch, &plan, &obj, None)?)) };

    let mut grad = zeros_like(&model);
    batch_objective(&model, &batch, &plan, &obj, Some(&mut grad))?;
    let mut analytic: Vec<(String, Vec<f64>)> = blocks(&grad).into_iter().map(|(n, d)| (n, d.to_vec())).collect();
    if let Some(target) = &opts.corrupt_block {
        let block = analytic
            .iter_mut()
            .find(|(n, _)| n == target)
            .ok_or_else(|| Error::Invalid(format!("no parameter block named `{target}`")))?;
        block.1.iter_mut().for_each(|v| *v = -*v);
    }

    let mut report = GradCheckReport { blocks: Vec::new(), tolerance };
    for (b, (name, values)) in analytic.iter().enumerate() {
        let mut worst = 0.0f64;
        for (i, &a) in values.iter().enumerate() {
            let up = loss(&perturbed(&model, b, i, FD_STEP))?;
            let down = loss(&perturbed(&model, b, i, -FD_STEP))?;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let err = relative_error(a, numeric);
            worst = if err.is_nan() { f64::INFINITY } else { worst.max(err) };
        }
        report.blocks.push(BlockCheck {
            name: name.clone(),
            max_rel_error: worst,
            values: values.len(),
        });
    }
    Ok(report)
}
