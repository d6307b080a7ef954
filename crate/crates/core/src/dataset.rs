//! Manifest-to-model-input preparation: wav decoding, feature
//! extraction (with optional binary cache), tokenization and label
//! mapping.

use crate::error::{Error, Result};
use crate::features::{build_feature_sequence, read_feature_cache, read_wav, write_feature_cache, FeatureConfig};
use crate::manifest::{label_index, ManifestEntry};
use crate::model::PreparedSample;
use crate::text::{tokenize, Vocabulary};
use std::path::{Path, PathBuf};

/// A prepared utterance plus the bookkeeping the harnesses need.
#[derive(Debug, Clone)]
pub struct DatasetEntry {
    pub id: String,
    pub group: String,
    pub sample: PreparedSample,
}

/// Resolves a manifest-relative wav path.
pub fn resolve_wav(base: &Path, entry: &ManifestEntry) -> PathBuf {
    let p = Path::new(&entry.wav_path);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Verifies every referenced wav exists before any work starts; the
/// error lists all missing ids.
pub fn preflight(entries: &[ManifestEntry], base: &Path) -> Result<()> {
    let missing: Vec<String> = entries
        .iter()
        .filter(|e| !resolve_wav(base, e).exists())
        .map(|e| e.id.clone())
        .collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(Error::contract(format!(
            "missing wav files for ids: {}",
            missing.join(", ")
        )))
    }
}

/// All transcript tokens in manifest order, for building a fallback
/// vocabulary when no pretrained vectors are supplied.
pub fn collect_tokens(entries: &[ManifestEntry]) -> Vec<String> {
    entries.iter().flat_map(|e| tokenize(&e.transcript)).collect()
}

/// Extracts features (through the cache when `cache_dir` is set) and
/// encodes transcripts for every manifest entry.
pub fn prepare_dataset(
    entries: &[ManifestEntry],
    base: &Path,
    vocab: &Vocabulary,
    m_max: usize,
    feat_cfg: &FeatureConfig,
    cache_dir: Option<&Path>,
) -> Result<Vec<DatasetEntry>> {
    if let Some(dir) = cache_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    }
    let mut out = Vec::with_capacity(entries.len());
    for entry in entries {
        let features = match cache_dir {
            Some(dir) => {
                let cache_path = dir.join(format!("{}.feat", entry.id));
                if cache_path.exists() {
                    read_feature_cache(&cache_path, feat_cfg.hop_s)?
                } else {
                    let clip = read_wav(resolve_wav(base, entry))?;
                    let seq = build_feature_sequence(&clip, feat_cfg)?;
                    write_feature_cache(&cache_path, &seq)?;
                    seq
                }
            }
            None => {
                let clip = read_wav(resolve_wav(base, entry))?;
                build_feature_sequence(&clip, feat_cfg)?
            }
        };
        out.push(DatasetEntry {
            id: entry.id.clone(),
            group: entry.group.clone(),
            sample: PreparedSample {
                features,
                tokens: vocab.encode(&entry.transcript, m_max),
                label: label_index(&entry.label)?,
            },
        });
    }
    Ok(out)
}
