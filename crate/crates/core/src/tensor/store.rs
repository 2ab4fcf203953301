//! Named tensors persisted as a flat little-endian `f64` blob plus a JSON
//! manifest of `(name, shape, byte offset)` entries.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TensorStore {
    entries: Vec<(String, Tensor)>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    blob: String,
    tensors: Vec<ManifestEntry>,
}

impl TensorStore {
    pub fn push(&mut self, name: impl Into<String>, t: Tensor) {
        self.entries.push((name.into(), t));
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::Contract(format!("tensor {name} missing from store")))
    }

    pub fn entries(&self) -> &[(String, Tensor)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Little-endian blob and manifest entries, without touching disk.
    pub fn encode(&self) -> (Vec<u8>, Vec<ManifestEntry>) {
        let total: usize = self.entries.iter().map(|(_, t)| t.len()).sum();
        let mut blob = Vec::with_capacity(total * 8);
        let mut manifest = Vec::with_capacity(self.entries.len());
        for (name, t) in &self.entries {
            manifest.push(ManifestEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                offset: blob.len() as u64,
            });
            for v in t.data() {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
        (blob, manifest)
    }

    pub fn decode(blob: &[u8], manifest: &[ManifestEntry]) -> Result<Self> {
        let mut entries = Vec::with_capacity(manifest.len());
        for e in manifest {
            let n: usize = e.shape.iter().product();
            let start = e.offset as usize;
            let end = start + n * 8;
            if end > blob.len() {
                return Err(Error::Shape(format!("tensor {} runs past end of blob", e.name)));
            }
            let data = blob[start..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            entries.push((e.name.clone(), Tensor::new(e.shape.clone(), data)?));
        }
        Ok(Self { entries })
    }

    /// Writes `<stem>.bin` and `<stem>.json` into `dir`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let (blob, tensors) = self.encode();
        let bin = dir.join(format!("{stem}.bin"));
        fs::write(&bin, blob).map_err(|e| Error::io(&bin, e))?;
        let manifest = Manifest {
            blob: format!("{stem}.bin"),
            tensors,
        };
        let json = dir.join(format!("{stem}.json"));
        fs::write(&json, serde_json::to_vec_pretty(&manifest)?).map_err(|e| Error::io(&json, e))?;
        Ok(())
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self> {
        let json = dir.join(format!("{stem}.json"));
        let text = fs::read(&json).map_err(|e| Error::io(&json, e))?;
        let manifest: Manifest = serde_json::from_slice(&text)?;
        let bin = dir.join(&manifest.blob);
        let blob = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
        Self::decode(&blob, &manifest.tensors)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blob_layout_is_little_endian_with_offsets() {
        let mut s = TensorStore::default();
        s.push("a", Tensor::vector(vec![1.0]));
        s.push("b", Tensor::matrix(1, 2, vec![2.0, -0.5]).unwrap());
        let (blob, manifest) = s.encode();
        assert_eq!(blob.len(), 24);
        assert_eq!(&blob[0..8], &1f64.to_le_bytes());
        assert_eq!(manifest[1].offset, 8);
        assert_eq!(manifest[1].shape, vec![1, 2]);
        assert_eq!(TensorStore::decode(&blob, &manifest).unwrap(), s);
    }

    #[test]
    fn disk_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = TensorStore::default();
        s.push("w", Tensor::matrix(2, 2, vec![0.1, 0.2, f64::MIN_POSITIVE, -3.0]).unwrap());
        s.save(dir.path(), "params").unwrap();
        assert_eq!(TensorStore::load(dir.path(), "params").unwrap(), s);
    }
}
