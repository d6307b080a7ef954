//! Line-oriented `key = value` run configuration.
//!
//! Every architecture and training default can be overridden; unknown
//! keys are rejected with the offending line number. Conv stacks are
//! written `width:channels:pool` with layers separated by commas, e.g.
//! `speech_conv = 5:64:4,3:128:2`.

use crate::encoders::ConvSpec;
use crate::error::{Error, Result};
use crate::model::{FusionMode, ModelConfig};
use crate::train::{AdamConfig, TrainConfig};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub seed: u64,
    pub manifest: Option<PathBuf>,
    pub vectors: Option<PathBuf>,
    pub out: PathBuf,
    pub kfold: Option<usize>,
    pub fusion: FusionMode,
    pub embed_dim: usize,
    pub m_max: usize,
    pub hidden_speech: usize,
    pub hidden_text: usize,
    pub classifier_hidden: usize,
    pub dropout: f64,
    pub speech_conv: Vec<ConvSpec>,
    pub text_conv: Vec<ConvSpec>,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub lr: f64,
    pub l2: f64,
    pub val_fraction: f64,
    pub max_seconds: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let model = ModelConfig::default();
        let train = TrainConfig::default();
        RunConfig {
            seed: 0,
            manifest: None,
            vectors: None,
            out: PathBuf::from("out"),
            kfold: None,
            fusion: model.fusion,
            embed_dim: model.embed_dim,
            m_max: model.m_max,
            hidden_speech: model.hidden_speech,
            hidden_text: model.hidden_text,
            classifier_hidden: model.classifier_hidden,
            dropout: model.dropout,
            speech_conv: model.speech_conv,
            text_conv: model.text_conv,
            batch_size: train.batch_size,
            max_epochs: train.max_epochs,
            patience: train.patience,
            lr: train.adam.lr,
            l2: train.l2,
            val_fraction: train.val_fraction,
            max_seconds: 7.5,
        }
    }
}

fn parse_conv_stack(value: &str) -> std::result::Result<Vec<ConvSpec>, String> {
    value
        .split(',')
        .map(|layer| {
            let parts: Vec<&str> = layer.trim().split(':').collect();
            if parts.len() != 3 {
                return Err(format!("conv layer '{layer}' is not width:channels:pool"));
            }
            let nums: Vec<usize> = parts
                .iter()
                .map(|p| p.parse::<usize>().map_err(|e| e.to_string()))
                .collect::<std::result::Result<_, _>>()?;
            if nums[0] == 0 || nums[1] == 0 || nums[2] == 0 {
                return Err(format!("conv layer '{layer}' has a zero field"));
            }
            Ok(ConvSpec::new(nums[0], nums[1], nums[2]))
        })
        .collect()
}

fn conv_stack_string(specs: &[ConvSpec]) -> String {
    specs
        .iter()
        .map(|s| format!("{}:{}:{}", s.width, s.channels, s.pool_window))
        .collect::<Vec<_>>()
        .join(",")
}

impl RunConfig {
    pub fn parse_file(path: impl AsRef<Path>) -> Result<RunConfig> {
        let display = path.as_ref().display().to_string();
        let body = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(&display, e))?;
        Self::parse_str(&body, &display)
    }

    pub fn parse_str(body: &str, origin: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        for (i, raw) in body.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |detail: String| Error::Config {
                path: origin.into(),
                line: i + 1,
                detail,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected 'key = value', got '{line}'")))?;
            let key = key.trim();
            let value = value.trim();
            cfg.apply(key, value).map_err(err)?;
        }
        Ok(cfg)
    }

    /// Sets one key; the error string carries no location (the parser
    /// adds it).
    pub fn apply(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let usize_of = |v: &str| v.parse::<usize>().map_err(|e| format!("'{v}': {e}"));
        let f64_of = |v: &str| v.parse::<f64>().map_err(|e| format!("'{v}': {e}"));
        match key {
            "seed" => self.seed = value.parse().map_err(|e| format!("'{value}': {e}"))?,
            "manifest" => self.manifest = Some(PathBuf::from(value)),
            "vectors" => self.vectors = Some(PathBuf::from(value)),
            "out" => self.out = PathBuf::from(value),
            "kfold" => self.kfold = Some(usize_of(value)?),
            "fusion" => self.fusion = FusionMode::parse(value).map_err(|e| e.to_string())?,
            "embed_dim" => self.embed_dim = usize_of(value)?,
            "m_max" => self.m_max = usize_of(value)?,
            "hidden_speech" => self.hidden_speech = usize_of(value)?,
            "hidden_text" => self.hidden_text = usize_of(value)?,
            "classifier_hidden" => self.classifier_hidden = usize_of(value)?,
            "dropout" => self.dropout = f64_of(value)?,
            "speech_conv" => self.speech_conv = parse_conv_stack(value)?,
            "text_conv" => self.text_conv = parse_conv_stack(value)?,
            "batch_size" => self.batch_size = usize_of(value)?,
            "max_epochs" => self.max_epochs = usize_of(value)?,
            "patience" => self.patience = usize_of(value)?,
            "lr" => self.lr = f64_of(value)?,
            "l2" => self.l2 = f64_of(value)?,
            "val_fraction" => self.val_fraction = f64_of(value)?,
            "max_seconds" => self.max_seconds = f64_of(value)?,
            other => return Err(format!("unknown key '{other}'")),
        }
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            embed_dim: self.embed_dim,
            m_max: self.m_max,
            speech_conv: self.speech_conv.clone(),
            text_conv: self.text_conv.clone(),
            hidden_speech: self.hidden_speech,
            hidden_text: self.hidden_text,
            classifier_hidden: self.classifier_hidden,
            classes: crate::model::N_CLASSES,
            dropout: self.dropout,
            fusion: self.fusion,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            patience: self.patience,
            adam: AdamConfig {
                lr: self.lr,
                ..AdamConfig::default()
            },
            l2: self.l2,
            val_fraction: self.val_fraction,
            seed: self.seed,
        }
    }

    pub fn feature_config(&self) -> crate::features::FeatureConfig {
        crate::features::FeatureConfig {
            max_seconds: self.max_seconds,
            ..crate::features::FeatureConfig::default()
        }
    }

    /// Serializes back to the `key = value` form (documents defaults).
    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("seed = {}\n", self.seed));
        if let Some(m) = &self.manifest {
            s.push_str(&format!("manifest = {}\n", m.display()));
        }
        if let Some(v) = &self.vectors {
            s.push_str(&format!("vectors = {}\n", v.display()));
        }
        s.push_str(&format!("out = {}\n", self.out.display()));
        if let Some(k) = self.kfold {
            s.push_str(&format!("kfold = {k}\n"));
        }
        s.push_str(&format!("fusion = {}\n", self.fusion.name()));
        s.push_str(&format!("embed_dim = {}\n", self.embed_dim));
        s.push_str(&format!("m_max = {}\n", self.m_max));
        s.push_str(&format!("hidden_speech = {}\n", self.hidden_speech));
        s.push_str(&format!("hidden_text = {}\n", self.hidden_text));
        s.push_str(&format!("classifier_hidden = {}\n", self.classifier_hidden));
        s.push_str(&format!("dropout = {}\n", self.dropout));
        s.push_str(&format!("speech_conv = {}\n", conv_stack_string(&self.speech_conv)));
        s.push_str(&format!("text_conv = {}\n", conv_stack_string(&self.text_conv)));
        s.push_str(&format!("batch_size = {}\n", self.batch_size));
        s.push_str(&format!("max_epochs = {}\n", self.max_epochs));
        s.push_str(&format!("patience = {}\n", self.patience));
        s.push_str(&format!("lr = {}\n", self.lr));
        s.push_str(&format!("l2 = {}\n", self.l2));
        s.push_str(&format!("val_fraction = {}\n", self.val_fraction));
        s.push_str(&format!("max_seconds = {}\n", self.max_seconds));
        s
    }
}
