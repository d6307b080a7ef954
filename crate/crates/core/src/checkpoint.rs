//! Versioned binary checkpoints.
//!
//! Layout (all integers little endian):
//! `magic "GBAN" | version: u32 | param count: u32`, then per parameter
//! `name length: u32 | name bytes | rank: u32 | dims: u32 x rank |
//! values: f64 x numel`. Loading validates the stored names and shapes
//! against the live model, so a checkpoint from a different
//! architecture fails loudly instead of half-applying.

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"GBAN";
const VERSION: u32 = 1;

pub fn save(path: impl AsRef<Path>, store: &ParamStore) -> Result<()> {
    let display = path.as_ref().display().to_string();
    let mut bytes = Vec::new();
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    bytes.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for p in store.iter() {
        bytes.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        bytes.extend_from_slice(p.name.as_bytes());
        let shape = p.value.shape();
        bytes.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &d in shape {
            bytes.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in p.value.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut file = std::fs::File::create(path.as_ref()).map_err(|e| Error::io(&display, e))?;
    file.write_all(&bytes).map_err(|e| Error::io(&display, e))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a str,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint {
                path: self.path.into(),
                detail: "truncated file".into(),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Reads a checkpoint into an existing store. Every stored parameter
/// must match a live parameter of the same name and shape, and vice
/// versa.
pub fn load_into(path: impl AsRef<Path>, store: &mut ParamStore) -> Result<()> {
    let display = path.as_ref().display().to_string();
    let mut bytes = Vec::new();
    std::fs::File::open(path.as_ref())
        .map_err(|e| Error::io(&display, e))?
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(&display, e))?;
    let mut cur = Cursor {
        bytes: &bytes,
        pos: 0,
        path: &display,
    };
    if cur.take(4)? != MAGIC {
        return Err(Error::Checkpoint {
            path: display,
            detail: "bad magic, not a checkpoint".into(),
        });
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint {
            path: display,
            detail: format!("unsupported version {version} (expected {VERSION})"),
        });
    }
    let count = cur.u32()? as usize;
    if count != store.len() {
        return Err(Error::Checkpoint {
            path: display,
            detail: format!(
                "checkpoint has {count} parameters, model expects {}",
                store.len()
            ),
        });
    }
    let mut loaded: Vec<(String, Tensor)> = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = cur.u32()? as usize;
        let name = String::from_utf8(cur.take(name_len)?.to_vec()).map_err(|_| Error::Checkpoint {
            path: display.clone(),
            detail: "non-utf8 parameter name".into(),
        })?;
        let rank = cur.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cur.u32()? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            data.push(cur.f64()?);
        }
        let live = store.by_name(&name).ok_or_else(|| Error::Checkpoint {
            path: display.clone(),
            detail: format!("parameter '{name}' not present in this model"),
        })?;
        if live.value.shape() != shape.as_slice() {
            return Err(Error::Checkpoint {
                path: display.clone(),
                detail: format!(
                    "parameter '{name}': checkpoint shape {:?} vs model shape {:?}",
                    shape,
                    live.value.shape()
                ),
            });
        }
        loaded.push((name, Tensor::new(shape, data)?));
    }
    store.restore(&loaded)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    fn store_with(names: &[(&str, Vec<usize>)]) -> ParamStore {
        let mut rng = SeededRng::new(8);
        let mut store = ParamStore::new();
        for (name, shape) in names {
            store.add(*name, Tensor::randn(shape.clone(), 1.0, &mut rng), true);
        }
        store
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let store = store_with(&[("w", vec![3, 4]), ("b", vec![4])]);
        save(&path, &store).unwrap();

        let mut fresh = store_with(&[("w", vec![3, 4]), ("b", vec![4])]);
        for p in fresh.iter_mut() {
            p.value.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        load_into(&path, &mut fresh).unwrap();
        for (a, b) in store.iter().zip(fresh.iter()) {
            assert_eq!(a.value, b.value);
        }
    }

    #[test]
    fn incompatible_shape_is_versioned_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save(&path, &store_with(&[("w", vec![3, 4])])).unwrap();
        let mut other = store_with(&[("w", vec![2, 4])]);
        let err = load_into(&path, &mut other).unwrap_err();
        assert!(matches!(err, Error::Checkpoint { .. }), "{err}");
        assert!(err.to_string().contains("shape"));
    }

    #[test]
    fn wrong_magic_and_version_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.ckpt");
        std::fs::write(&path, b"NOPE....").unwrap();
        let mut store = store_with(&[("w", vec![1])]);
        assert!(matches!(
            load_into(&path, &mut store),
            Err(Error::Checkpoint { .. })
        ));
    }
}
