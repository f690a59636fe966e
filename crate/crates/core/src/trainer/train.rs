use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::model::{batch_objective, is_encoder_block, LossParts, Objective};
use super::{fit_norm, prepare_dyads, FeatureNorm, ListenerModel, OptimState, PreparedSample, Stage, TrainConfig};
use crate::error::{Error, Result};
use crate::hiercoder::plan_contrastive;
use crate::layers::all_finite;
use crate::synthdata::DyadicSample;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_reg: f64,
    pub train_con: f64,
    pub val_reg: f64,
    pub val_con: f64,
}

pub const LOG_HEADER: &str = "epoch,train_reg,train_con,val_reg,val_con";

/// CSV with a header row; floats in shortest round-trip form.
pub fn format_epoch_log(log: &[EpochLog]) -> String {
    let mut s = format!("{LOG_HEADER}\n");
    for e in log {
        let _ = writeln!(s, "{},{},{},{},{}", e.epoch, e.train_reg, e.train_con, e.val_reg, e.val_con);
    }
    s
}

/// Everything needed to continue training exactly where it stopped.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub model: ListenerModel<f64>,
    pub norm: FeatureNorm,
    pub optim: OptimState,
    /// Completed epochs.
    pub epoch: usize,
    pub log: Vec<EpochLog>,
    pub rng: ChaCha8Rng,
}

/// Seeded initial state: parameters, normalizer and optimizer.
pub fn init_checkpoint(cfg: &TrainConfig, train_set: &[DyadicSample<f64>]) -> Result<Checkpoint> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Invalid("training set is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let model = ListenerModel::init(&mut rng, cfg);
    let optim = OptimState::new(cfg.optimizer, &model);
    Ok(Checkpoint {
        config: cfg.clone(),
        norm: fit_norm(train_set, cfg)?,
        model,
        optim,
        epoch: 0,
        log: Vec::new(),
        rng,
    })
}

enum Phase {
    Joint,
    Pretrain,
    Decoder,
}

fn phase(cfg: &TrainConfig, epoch: usize) -> Phase {
    match cfg.stage {
        Stage::Joint => Phase::Joint,
        Stage::Staged if epoch < cfg.pretrain_epochs => Phase::Pretrain,
        Stage::Staged => Phase::Decoder,
    }
}

fn objective(cfg: &TrainConfig, p: &Phase) -> Objective<f64> {
    let base = Objective::joint(cfg);
    match p {
        Phase::Joint => base,
        Phase::Pretrain => Objective { reg_weight: 0.0, con_weight: 1.0, ..base },
        Phase::Decoder => Objective { reg_weight: 1.0, con_weight: 0.0, train_encoder: false, ..base },
    }
}

const VALIDATION_SALT: u64 = 0x9E37_79B9_7F4A_7C15;

/// Mean regression and contrastive losses over a data set, in fixed order
/// with negatives from a fixed-seed generator.
pub fn evaluate_losses(model: &ListenerModel<f64>, data: &[PreparedSample<f64>], cfg: &TrainConfig) -> Result<LossParts> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ VALIDATION_SALT);
    let obj = Objective::joint(cfg);
    let (mut reg, mut con, mut batches) = (0.0, 0.0, 0usize);
    for chunk in data.chunks(cfg.batch_size) {
        let batch: Vec<&PreparedSample<f64>> = chunk.iter().collect();
        let masks: Vec<Vec<bool>> = batch.iter().map(|s| s.text_mask.clone()).collect();
        let plan = plan_contrastive(&masks, cfg.k_negatives, &mut rng)?;
        let parts = batch_objective(model, &batch, &plan, &obj, None)?;
        reg += parts.reg * batch.len() as f64;
        con += parts.con;
        batches += 1;
    }
    Ok(LossParts {
        reg: reg / data.len() as f64,
        con: con / batches as f64,
    })
}

/// Continues training up to `until` completed epochs, calling `on_epoch`
/// after each one.
pub fn run_epochs(
    ckpt: &mut Checkpoint,
    train: &[PreparedSample<f64>],
    val: &[PreparedSample<f64>],
    until: usize,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<()> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::Invalid("training and validation sets must be non-empty".into()));
    }
    let cfg = ckpt.config.clone();
    while ckpt.epoch < until {
        let epoch = ckpt.epoch;
        let ph = phase(&cfg, epoch);
        let obj = objective(&cfg, &ph);
        let freeze_encoder = matches!(ph, Phase::Decoder);
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut ckpt.rng);
        let (mut reg, mut con, mut batches) = (0.0, 0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&PreparedSample<f64>> = chunk.iter().map(|&i| &train[i]).collect();
            let masks: Vec<Vec<bool>> = batch.iter().map(|s| s.text_mask.clone()).collect();
            let plan = plan_contrastive(&masks, cfg.k_negatives, &mut ckpt.rng)?;
            let mut grad = crate::layers::zeros_like(&ckpt.model);
            let parts = batch_objective(&ckpt.model, &batch, &plan, &obj, Some(&mut grad))?;
            if !obj.total(&parts).is_finite() {
                return Err(Error::Diverged { epoch: epoch + 1, what: "training loss".into() });
            }
            let frozen = |name: &str| freeze_encoder && is_encoder_block(name);
            ckpt.optim.step(&mut ckpt.model, &grad, cfg.learning_rate, &frozen);
            if !all_finite(&ckpt.model) {
                return Err(Error::Diverged { epoch: epoch + 1, what: "a parameter".into() });
            }
            reg += parts.reg * batch.len() as f64;
            con += parts.con;
            batches += 1;
        }
        let v = evaluate_losses(&ckpt.model, val, &cfg)?;
        if !(v.reg.is_finite() && v.con.is_finite()) {
            return Err(Error::Diverged { epoch: epoch + 1, what: "validation loss".into() });
        }
        let entry = EpochLog {
            epoch: epoch + 1,
            train_reg: reg / train.len() as f64,
            train_con: con / batches as f64,
            val_reg: v.reg,
            val_con: v.con,
        };
        ckpt.log.push(entry);
        ckpt.epoch += 1;
        on_epoch(&entry);
    }
    Ok(())
}

/// Trains from scratch for `cfg.epochs` epochs.
pub fn train(cfg: &TrainConfig, train_set: &[DyadicSample<f64>], val_set: &[DyadicSample<f64>]) -> Result<Checkpoint> {
    let mut ckpt = init_checkpoint(cfg, train_set)?;
    let train = prepare_dyads(train_set, &ckpt.norm, cfg)?;
    let val = prepare_dyads(val_set, &ckpt.norm, cfg)?;
    run_epochs(&mut ckpt, &train, &val, cfg.epochs, &mut |_| {})?;
    Ok(ckpt)
}
