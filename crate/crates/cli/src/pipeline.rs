//! Shared dataset/vocabulary loading for the commands that consume a
//! run configuration.

use anyhow::{bail, Context, Result};
use gban_core::config::RunConfig;
use gban_core::dataset::{collect_tokens, prepare_dataset, preflight, DatasetEntry};
use gban_core::manifest::{load_manifest, ManifestEntry};
use gban_core::model::{GbanModel, PreparedSample};
use gban_core::rng::SeededRng;
use gban_core::text::{load_pretrained, vocabulary_from_tokens, Vocabulary};
use std::path::PathBuf;

pub struct Pipeline {
    pub cfg: RunConfig,
    pub vocab: Vocabulary,
    pub data: Vec<DatasetEntry>,
}

/// Loads manifest, vocabulary and features. All validation happens
/// before anything is written, so a failing run leaves no outputs.
pub fn load(cfg: RunConfig) -> Result<Pipeline> {
    let manifest_path = cfg
        .manifest
        .clone()
        .context("config has no 'manifest' key")?;
    let entries = load_manifest(&manifest_path)?;
    let base = manifest_path
        .parent()
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("."));
    preflight(&entries, &base)?;

    let vocab = match &cfg.vectors {
        Some(path) => {
            let v = load_pretrained(path, cfg.embed_dim)?;
            if v.warnings > 0 {
                eprintln!("warning: skipped {} malformed/duplicate vector lines", v.warnings);
            }
            v
        }
        None => {
            // no pretrained vectors supplied: seeded random rows over
            // the manifest's own tokens
            let tokens = collect_tokens(&entries);
            vocabulary_from_tokens(&tokens, cfg.embed_dim, &mut SeededRng::new(cfg.seed ^ 0x766f_6361))
        }
    };

    let cache_dir = std::env::var_os("GBAN_CACHE").map(PathBuf::from);
    let data = prepare_dataset(
        &entries,
        &base,
        &vocab,
        cfg.m_max,
        &cfg.feature_config(),
        cache_dir.as_deref(),
    )?;
    Ok(Pipeline {
        cfg,
        entries,
        vocab,
        data,
    })
}

impl Pipeline {
    pub fn build_model(&self, rng: &mut SeededRng) -> Result<GbanModel> {
        Ok(GbanModel::new(self.cfg.model_config(), &self.vocab, rng)?)
    }

    pub fn samples(&self) -> Vec<PreparedSample> {
        self.data.iter().map(|d| d.sample.clone()).collect()
    }

    pub fn grouped_samples(&self) -> Vec<(PreparedSample, String)> {
        self.data
            .iter()
            .map(|d| (d.sample.clone(), d.group.clone()))
            .collect()
    }

    pub fn groups_sorted(&self) -> Vec<String> {
        let mut groups: Vec<String> = self.data.iter().map(|d| d.group.clone()).collect();
        groups.sort();
        groups.dedup();
        groups
    }

    /// (train, heldout) split by group id.
    pub fn split_by_group(&self, group: &str) -> Result<(Vec<PreparedSample>, Vec<PreparedSample>)> {
        let mut train = Vec::new();
        let mut held = Vec::new();
        for d in &self.data {
            if d.group == group {
                held.push(d.sample.clone());
            } else {
                train.push(d.sample.clone());
            }
        }
        if held.is_empty() {
            bail!("holdout group '{group}' matches no utterances");
        }
        if train.is_empty() {
            bail!("holdout group '{group}' would leave an empty training set");
        }
        Ok((train, held))
    }
}
