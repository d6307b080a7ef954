//! JSONL dataset manifests.
//!
//! One record per utterance: id, wav path (relative to the manifest's
//! directory), transcript, 4-class emotion label and a group id used
//! for leave-one-group-out cross-validation.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use std::path::Path;

pub const LABELS: [&str; 4] = ["happy", "angry", "sad", "neutral"];

/// Class index for a label string.
pub fn label_index(label: &str) -> Result<usize> {
    LABELS
        .iter()
        .position(|&l| l == label)
        .ok_or_else(|| Error::contract(format!("unknown label '{label}', expected one of {LABELS:?}")))
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ManifestEntry {
    pub id: String,
    pub wav_path: String,
    pub transcript: String,
    pub label: String,
    pub group: String,
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let display = path.as_ref().display().to_string();
    let file = std::fs::File::open(path.as_ref()).map_err(|e| Error::io(&display, e))?;
    let reader = std::io::BufReader::new(file);
    let mut entries = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(&display, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: ManifestEntry = serde_json::from_str(&line).map_err(|e| Error::Manifest {
            path: display.clone(),
            detail: format!("line {}: {e}", lineno + 1),
        })?;
        if !seen.insert(entry.id.clone()) {
            return Err(Error::Manifest {
                path: display,
                detail: format!("duplicate id '{}'", entry.id),
            });
        }
        label_index(&entry.label).map_err(|_| Error::Manifest {
            path: display.clone(),
            detail: format!("id '{}': unknown label '{}'", entry.id, entry.label),
        })?;
        if entry.group.is_empty() {
            return Err(Error::Manifest {
                path: display.clone(),
                detail: format!("id '{}': empty group", entry.id),
            });
        }
        entries.push(entry);
    }
    if entries.is_empty() {
        return Err(Error::Manifest {
            path: display,
            detail: "no entries".into(),
        });
    }
    Ok(entries)
}

pub fn save_manifest(path: impl AsRef<Path>, entries: &[ManifestEntry]) -> Result<()> {
    let display = path.as_ref().display().to_string();
    let mut file = std::fs::File::create(path.as_ref()).map_err(|e| Error::io(&display, e))?;
    for e in entries {
        let line = serde_json::to_string(e).map_err(|e| Error::Manifest {
            path: display.clone(),
            detail: e.to_string(),
        })?;
        writeln!(file, "{line}").map_err(|e| Error::io(&display, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(id: &str, label: &str, group: &str) -> ManifestEntry {
        ManifestEntry {
            id: id.into(),
            wav_path: format!("wav/{id}.wav"),
            transcript: "hello there".into(),
            label: label.into(),
            group: group.into(),
        }
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        let entries = vec![entry("a", "happy", "g0"), entry("b", "sad", "g1")];
        save_manifest(&path, &entries).unwrap();
        assert_eq!(load_manifest(&path).unwrap(), entries);
    }

    #[test]
    fn rejects_duplicate_ids_and_bad_labels() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        save_manifest(&path, &[entry("a", "happy", "g"), entry("a", "sad", "g")]).unwrap();
        assert!(matches!(load_manifest(&path), Err(Error::Manifest { .. })));

        save_manifest(&path, &[entry("a", "elated", "g")]).unwrap();
        assert!(matches!(load_manifest(&path), Err(Error::Manifest { .. })));
    }

    #[test]
    fn label_indices_are_fixed() {
        assert_eq!(label_index("happy").unwrap(), 0);
        assert_eq!(label_index("angry").unwrap(), 1);
        assert_eq!(label_index("sad").unwrap(), 2);
        assert_eq!(label_index("neutral").unwrap(), 3);
        assert!(label_index("bored").is_err());
    }
}
