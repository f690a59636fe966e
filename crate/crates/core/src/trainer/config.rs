use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    /// Both losses optimized together from the first epoch.
    Joint,
    /// Contrastive-only encoder pretraining, then the encoder is frozen and
    /// the rest trains on the regression loss.
    Staged,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub tau: f64,
    pub k_negatives: usize,
    pub w1: f64,
    pub w2: f64,
    pub squared_norm: bool,
    pub lambda_contrastive: f64,
    pub seed: u64,
    pub stage: Stage,
    pub pretrain_epochs: usize,
    /// Training windows are cut to at most this many frames.
    pub t_train: usize,
    pub n_mfcc: usize,
    pub d_text: usize,
    pub enc_width: usize,
    pub d_proj: usize,
    pub d_fused: usize,
    pub d_xm: usize,
    pub hidden: usize,
    pub layers: usize,
    pub se_ratio: usize,
    pub init_conditioning: bool,
    pub residual: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 8,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            tau: crate::hiercoder::DEFAULT_TAU,
            k_negatives: crate::hiercoder::DEFAULT_K_NEGATIVES,
            w1: 1.0,
            w2: 1.0,
            squared_norm: false,
            lambda_contrastive: 0.1,
            seed: 0,
            stage: Stage::Joint,
            pretrain_epochs: 10,
            t_train: 64,
            n_mfcc: 13,
            d_text: crate::audiofeat::DEFAULT_TEXT_DIM,
            enc_width: 32,
            d_proj: 16,
            d_fused: 32,
            d_xm: 32,
            hidden: 32,
            layers: crate::seqdecoder::DEFAULT_LAYERS,
            se_ratio: crate::fusion::DEFAULT_SE_RATIO,
            init_conditioning: false,
            residual: false,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::Config(format!("`{key}`: expected true or false, got `{value}`"))),
    }
}

impl TrainConfig {
    /// Parses `key = value` lines. Missing keys keep their defaults; unknown
    /// or repeated keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen: Vec<String> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if seen.iter().any(|k| k == key) {
                return Err(Error::Config(format!("line {}: `{key}` given twice", i + 1)));
            }
            seen.push(key.to_string());
            cfg.set(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "epochs" => self.epochs = parse_value(key, v)?,
            "batch_size" => self.batch_size = parse_value(key, v)?,
            "learning_rate" => self.learning_rate = parse_value(key, v)?,
            "optimizer" => {
                self.optimizer = match v {
                    "adam" => OptimizerKind::Adam,
                    "sgd" => OptimizerKind::Sgd,
                    _ => return Err(Error::Config(format!("`optimizer`: expected adam or sgd, got `{v}`"))),
                }
            }
            "tau" => self.tau = parse_value(key, v)?,
            "k_negatives" => self.k_negatives = parse_value(key, v)?,
            "w1" => self.w1 = parse_value(key, v)?,
            "w2" => self.w2 = parse_value(key, v)?,
            "squared_norm" => self.squared_norm = parse_bool(key, v)?,
            "lambda_contrastive" => self.lambda_contrastive = parse_value(key, v)?,
            "seed" => self.seed = parse_value(key, v)?,
            "stage" => {
                self.stage = match v {
                    "joint" => Stage::Joint,
                    "staged" => Stage::Staged,
                    _ => return Err(Error::Config(format!("`stage`: expected joint or staged, got `{v}`"))),
                }
            }
            "pretrain_epochs" => self.pretrain_epochs = parse_value(key, v)?,
            "t_train" => self.t_train = parse_value(key, v)?,
            "n_mfcc" => self.n_mfcc = parse_value(key, v)?,
            "d_text" => self.d_text = parse_value(key, v)?,
            "enc_width" => self.enc_width = parse_value(key, v)?,
            "d_proj" => self.d_proj = parse_value(key, v)?,
            "d_fused" => self.d_fused = parse_value(key, v)?,
            "d_xm" => self.d_xm = parse_value(key, v)?,
            "hidden" => self.hidden = parse_value(key, v)?,
            "layers" => self.layers = parse_value(key, v)?,
            "se_ratio" => self.se_ratio = parse_value(key, v)?,
            "init_conditioning" => self.init_conditioning = parse_bool(key, v)?,
            "residual" => self.residual = parse_bool(key, v)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.batch_size == 0 {
            return fail("batch_size must be positive");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return fail("learning_rate must be a non-negative number");
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return fail("tau must be positive");
        }
        if self.k_negatives == 0 {
            return fail("k_negatives must be positive");
        }
        for (name, v) in [("w1", self.w1), ("w2", self.w2), ("lambda_contrastive", self.lambda_contrastive)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be non-negative")));
            }
        }
        if self.stage == Stage::Staged && self.pretrain_epochs > self.epochs {
            return fail("pretrain_epochs exceeds epochs");
        }
        if self.t_train < 2 {
            return fail("t_train must be at least 2");
        }
        if !(8..=40).contains(&self.n_mfcc) {
            return fail("n_mfcc must be in [8, 40]");
        }
        let dims = [self.d_text, self.enc_width, self.d_proj, self.d_fused, self.d_xm, self.hidden, self.layers, self.se_ratio];
        if dims.contains(&0) {
            return fail("model dimensions must be positive");
        }
        Ok(())
    }

    /// Every field as `key = value`, in a fixed order; parses back to `self`.
    pub fn format(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("epochs", self.epochs.to_string());
        put("batch_size", self.batch_size.to_string());
        put("learning_rate", self.learning_rate.to_string());
        put(
            "optimizer",
            match self.optimizer {
                OptimizerKind::Adam => "adam",
                OptimizerKind::Sgd => "sgd",
            }
            .into(),
        );
        put("tau", self.tau.to_string());
        put("k_negatives", self.k_negatives.to_string());
        put("w1", self.w1.to_string());
        put("w2", self.w2.to_string());
        put("squared_norm", self.squared_norm.to_string());
        put("lambda_contrastive", self.lambda_contrastive.to_string());
        put("seed", self.seed.to_string());
        put(
            "stage",
            match self.stage {
                Stage::Joint => "joint",
                Stage::Staged => "staged",
            }
            .into(),
        );
        put("pretrain_epochs", self.pretrain_epochs.to_string());
        put("t_train", self.t_train.to_string());
        put("n_mfcc", self.n_mfcc.to_string());
        put("d_text", self.d_text.to_string());
        put("enc_width", self.enc_width.to_string());
        put("d_proj", self.d_proj.to_string());
        put("d_fused", self.d_fused.to_string());
        put("d_xm", self.d_xm.to_string());
        put("hidden", self.hidden.to_string());
        put("layers", self.layers.to_string());
        put("se_ratio", self.se_ratio.to_string());
        put("init_conditioning", self.init_conditioning.to_string());
        put("residual", self.residual.to_string());
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn format_parses_back() {
        let cfg = TrainConfig {
            learning_rate: 3.3e-4,
            tau: 0.1,
            stage: Stage::Staged,
            optimizer: OptimizerKind::Sgd,
            residual: true,
            ..TrainConfig::default()
        };
        assert_eq!(TrainConfig::parse(&cfg.format()).unwrap(), cfg);
        assert_eq!(TrainConfig::parse("").unwrap(), TrainConfig::default());
    }

    #[test]
    fn rejects_bad_files() {
        assert!(TrainConfig::parse("epochs = 3\nlearnign_rate = 0.1").is_err());
        assert!(TrainConfig::parse("epochs = 3\nepochs = 4").is_err());
        assert!(TrainConfig::parse("epochs").is_err());
        assert!(TrainConfig::parse("tau = 0").is_err());
        assert!(TrainConfig::parse("stage = sideways").is_err());
        assert!(TrainConfig::parse("batch_size = -1").is_err());
        let ok = TrainConfig::parse("# comment\n epochs = 5  # trailing\n\nw1 = 0\n").unwrap();
        assert_eq!((ok.epochs, ok.w1), (5, 0.0));
    }
}
