//! Named tensor storage with a JSON manifest and a raw little-endian blob.
//!
//! On disk a store is two files: `<stem>.json` (the manifest) and
//! `<stem>.bin` (the blob). Tensors are laid out back to back in manifest
//! order, so offset `k` starts where tensor `k − 1` ends.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::numerics::Tensor;

pub const MANIFEST_FORMAT: &str = "andehaze-weights";
pub const MANIFEST_VERSION: u32 = 1;

/// How a parameter is initialized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    Uniform { fan_in: usize },
    Ones,
    Zeros,
}

impl Init {
    pub fn bound(&self) -> f32 {
        match *self {
            Init::Uniform { fan_in } => 1.0 / (fan_in.max(1) as f32).sqrt(),
            Init::Ones => 1.0,
            Init::Zeros => 0.0,
        }
    }
}

/// Name, shape and initializer of one model parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn new(name: impl Into<String>, shape: &[usize], init: Init) -> Self {
        Self {
            name: name.into(),
            shape: shape.to_vec(),
            init,
        }
    }

    /// Conv weight `(out, in, k, k)` plus bias, both uniform over the conv fan-in.
    pub fn conv(prefix: &str, out_c: usize, in_c: usize, k: usize) -> [Self; 2] {
        let fan_in = in_c * k * k;
        [
            Self::new(format!("{prefix}.weight"), &[out_c, in_c, k, k], Init::Uniform { fan_in }),
            Self::new(format!("{prefix}.bias"), &[out_c], Init::Uniform { fan_in }),
        ]
    }

    /// Dense weight `(out, in)` plus bias.
    pub fn linear(prefix: &str, out_f: usize, in_f: usize) -> [Self; 2] {
        [
            Self::new(format!("{prefix}.weight"), &[out_f, in_f], Init::Uniform { fan_in: in_f }),
            Self::new(format!("{prefix}.bias"), &[out_f], Init::Uniform { fan_in: in_f }),
        ]
    }
}

/// One manifest row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub byte_offset: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    /// Blob file name, relative to the manifest's directory.
    pub blob: String,
    pub blob_bytes: usize,
    pub tensors: Vec<TensorEntry>,
}

impl Manifest {
    /// Checks format, names and the contiguous, non-overlapping layout.
    pub fn validate(&self) -> Result<()> {
        if self.format != MANIFEST_FORMAT {
            return Err(Error::Manifest(format!("unknown format `{}`", self.format)));
        }
        if self.version != MANIFEST_VERSION {
            return Err(Error::Manifest(format!("unsupported version {}", self.version)));
        }
        let mut seen = BTreeMap::new();
        let mut expected = 0usize;
        for e in &self.tensors {
            if seen.insert(e.name.as_str(), ()).is_some() {
                return Err(Error::Manifest(format!("duplicate tensor `{}`", e.name)));
            }
            if e.dtype != "f32" {
                return Err(Error::Manifest(format!(
                    "tensor `{}` has dtype `{}`, only f32 is supported",
                    e.name, e.dtype
                )));
            }
            if e.shape.is_empty() || e.shape.len() > 4 {
                return Err(Error::Manifest(format!(
                    "tensor `{}` has rank {}",
                    e.name,
                    e.shape.len()
                )));
            }
            if e.byte_offset != expected {
                return Err(Error::BadOffset {
                    name: e.name.clone(),
                    offset: e.byte_offset,
                    expected,
                });
            }
            expected += e.shape.iter().product::<usize>() * 4;
        }
        if expected != self.blob_bytes {
            return Err(Error::Manifest(format!(
                "blob_bytes {} but tensors need {expected}",
                self.blob_bytes
            )));
        }
        Ok(())
    }
}

/// Ordered collection of named tensors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WeightStore {
    entries: Vec<(String, Tensor)>,
    index: BTreeMap<String, usize>,
}

impl WeightStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Insert or replace a tensor, keeping first-insertion order.
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        let name = name.into();
        match self.index.get(&name) {
            Some(&i) => self.entries[i].1 = tensor,
            None => {
                self.index.insert(name.clone(), self.entries.len());
                self.entries.push((name, tensor));
            }
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.entries[i].1)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index.get(name).map(|&i| &mut self.entries[i].1)
    }

    /// Fetch a tensor and check its shape.
    pub fn require(&self, name: &str, shape: &[usize]) -> Result<Tensor> {
        let t = self
            .get(name)
            .ok_or_else(|| Error::MissingTensor(name.to_string()))?;
        if t.shape() != shape {
            return Err(Error::TensorShape {
                name: name.to_string(),
                expected: shape.to_vec(),
                found: t.shape().to_vec(),
            });
        }
        Ok(t.clone())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Apply `f` to every tensor whose name satisfies `select`.
    pub fn map_where(&mut self, select: impl Fn(&str) -> bool, f: impl Fn(f32) -> f32) {
        for (name, t) in &mut self.entries {
            if select(name) {
                *t = t.map(&f);
            }
        }
    }

    pub fn manifest(&self, blob_name: &str) -> Manifest {
        let mut offset = 0;
        let tensors = self
            .entries
            .iter()
            .map(|(name, t)| {
                let e = TensorEntry {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                    dtype: "f32".into(),
                    byte_offset: offset,
                };
                offset += t.len() * 4;
                e
            })
            .collect();
        Manifest {
            format: MANIFEST_FORMAT.into(),
            version: MANIFEST_VERSION,
            blob: blob_name.into(),
            blob_bytes: offset,
            tensors,
        }
    }

    pub fn blob(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for (_, t) in &self.entries {
            out.extend_from_slice(&t.to_le_bytes());
        }
        out
    }

    /// Hex SHA-256 over the layout-defining manifest fields and the blob.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for (name, t) in &self.entries {
            h.update(name.as_bytes());
            h.update([0]);
            for d in t.shape() {
                h.update((*d as u64).to_le_bytes());
            }
        }
        h.update(self.blob());
        hex(&h.finalize())
    }

    /// Rebuild a store from a manifest and blob bytes.
    pub fn from_parts(manifest: &Manifest, blob: &[u8]) -> Result<Self> {
        manifest.validate()?;
        if blob.len() < manifest.blob_bytes {
            return Err(Error::TruncatedBlob {
                expected: manifest.blob_bytes,
                found: blob.len(),
            });
        }
        if blob.len() > manifest.blob_bytes {
            return Err(Error::Manifest(format!(
                "blob has {} trailing bytes",
                blob.len() - manifest.blob_bytes
            )));
        }
        let mut store = Self::new();
        for e in &manifest.tensors {
            let n: usize = e.shape.iter().product();
            let bytes = &blob[e.byte_offset..e.byte_offset + n * 4];
            let data = bytes
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            store.insert(e.name.clone(), Tensor::new(&e.shape, data)?);
        }
        Ok(store)
    }

    /// Write `<stem>.json` and `<stem>.bin`. `path` may name either file or the stem.
    pub fn save(&self, path: &Path) -> Result<PathBuf> {
        let manifest_path = path.with_extension("json");
        let blob_path = path.with_extension("bin");
        let blob_name = blob_path
            .file_name()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::invalid(format!("bad weight path {}", path.display())))?
            .to_string();
        write_atomic(&blob_path, &self.blob())?;
        let manifest = serde_json::to_string_pretty(&self.manifest(&blob_name))?;
        write_atomic(&manifest_path, manifest.as_bytes())?;
        Ok(manifest_path)
    }

    /// Load a store from its manifest. The manifest is validated before the
    /// blob is opened.
    pub fn load(path: &Path) -> Result<Self> {
        let manifest_path = path.with_extension("json");
        let text = std::fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        manifest.validate()?;
        let blob_path = manifest_path
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join(&manifest.blob);
        let blob = std::fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
        Self::from_parts(&manifest, &blob)
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Deterministic initialization of `specs` from `seed`.
pub fn init_from_specs(specs: &[ParamSpec], seed: u64) -> WeightStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = WeightStore::new();
    for spec in specs {
        let n: usize = spec.shape.iter().product();
        let data = match spec.init {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::Uniform { .. } => {
                let b = spec.init.bound();
                let dist = Uniform::new_inclusive(-b, b);
                (0..n).map(|_| dist.sample(&mut rng)).collect()
            }
        };
        store.insert(spec.name.clone(), Tensor::new(&spec.shape, data).expect("spec shape"));
    }
    store
}
