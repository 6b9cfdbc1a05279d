//! Model checkpoints: a directory holding `manifest.json` and `weights.bin`.
//!
//! `weights.bin` layout (little endian): magic `SBWT`, format version `u32`,
//! tensor count `u32`, then per tensor `name_len u32`, UTF-8 name,
//! `ndim u32`, `dims u64 * ndim`, `f64 * prod(dims)`.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frontend::{hex_digest, FrontendParams, Spectrogram};
use crate::models::{BandAssignment, Classifier, JointModel, SubCnn, SubCnnConfig};
use crate::nn::Stack;

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const WEIGHTS_FILE: &str = "weights.bin";
const MAGIC: &[u8; 4] = b"SBWT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Architecture {
    SubCnn {
        config: SubCnnConfig,
        band: Option<BandAssignment>,
    },
    Joint {
        n_splits: usize,
        bands: Vec<usize>,
        configs: Vec<SubCnnConfig>,
        dropout: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub model_id: String,
    pub architecture: Architecture,
    pub frontend: FrontendParams,
    pub seed: u64,
    /// Hex SHA-256 of `weights.bin`.
    pub content_hash: String,
    pub param_count: usize,
    pub generator: String,
}

/// Either kind of trained countermeasure.
#[derive(Debug, Clone)]
pub enum Countermeasure {
    Sub(SubCnn),
    Joint(JointModel),
}

impl Countermeasure {
    pub fn architecture(&self) -> Architecture {
        match self {
            Countermeasure::Sub(m) => Architecture::SubCnn {
                config: m.config().clone(),
                band: m.band(),
            },
            Countermeasure::Joint(m) => Architecture::Joint {
                n_splits: m.n_splits(),
                bands: m.bands().to_vec(),
                configs: m.configs().to_vec(),
                dropout: m.dropout(),
            },
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Countermeasure::Sub(m) => m.param_count(),
            Countermeasure::Joint(m) => m.param_count(),
        }
    }

    /// Bonafide posteriors for normalized fullband spectrograms.
    pub fn scores(&self, specs: &[&Spectrogram]) -> Result<Vec<f64>> {
        match self {
            Countermeasure::Sub(m) => m.scores(specs),
            Countermeasure::Joint(m) => m.scores(specs),
        }
    }

    fn stacks(&self) -> Vec<(String, &Stack)> {
        match self {
            Countermeasure::Sub(m) => vec![
                ("embedding".into(), &m.embedding),
                ("output".into(), &m.output),
            ],
            Countermeasure::Joint(m) => {
                let mut v: Vec<(String, &Stack)> = m
                    .embeddings
                    .iter()
                    .enumerate()
                    .map(|(i, s)| (format!("embedding{i}"), s))
                    .collect();
                v.push(("head".into(), &m.head));
                v
            }
        }
    }

    fn stacks_mut(&mut self) -> Vec<(String, &mut Stack)> {
        match self {
            Countermeasure::Sub(m) => vec![
                ("embedding".into(), &mut m.embedding),
                ("output".into(), &mut m.output),
            ],
            Countermeasure::Joint(m) => {
                let mut v: Vec<(String, &mut Stack)> = m
                    .embeddings
                    .iter_mut()
                    .enumerate()
                    .map(|(i, s)| (format!("embedding{i}"), s))
                    .collect();
                v.push(("head".into(), &mut m.head));
                v
            }
        }
    }

    fn skeleton(arch: &Architecture) -> Result<Self> {
        Ok(match arch {
            Architecture::SubCnn { config, band } => {
                let m = SubCnn::custom(config.clone(), 0)?;
                Countermeasure::Sub(match band {
                    Some(b) => m.with_band(*b),
                    None => m,
                })
            }
            Architecture::Joint {
                n_splits,
                bands,
                configs,
                dropout,
            } => Countermeasure::Joint(JointModel::skeleton(
                *n_splits,
                bands.clone(),
                configs.clone(),
                *dropout,
            )?),
        })
    }
}

impl From<SubCnn> for Countermeasure {
    fn from(m: SubCnn) -> Self {
        Countermeasure::Sub(m)
    }
}

impl From<JointModel> for Countermeasure {
    fn from(m: JointModel) -> Self {
        Countermeasure::Joint(m)
    }
}

struct NamedTensor {
    name: String,
    dims: Vec<usize>,
    data: Vec<f64>,
}

fn collect_tensors(model: &Countermeasure) -> Vec<NamedTensor> {
    let mut out = Vec::new();
    for (prefix, stack) in model.stacks() {
        for p in stack.params() {
            out.push(NamedTensor {
                name: format!("{prefix}/{}", p.name),
                dims: p.shape.clone(),
                data: p.value.clone(),
            });
        }
        for b in stack.buffers() {
            out.push(NamedTensor {
                name: format!("{prefix}/{}", b.name),
                dims: vec![b.value.len()],
                data: b.value.clone(),
            });
        }
    }
    out
}

fn encode(tensors: &[NamedTensor]) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        buf.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
        buf.extend_from_slice(t.name.as_bytes());
        buf.extend_from_slice(&(t.dims.len() as u32).to_le_bytes());
        for &d in &t.dims {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in &t.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("weights file is truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn decode(bytes: &[u8]) -> Result<Vec<NamedTensor>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("not a weights file (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported weights format version {version}"
        )));
    }
    let count = r.u32()? as usize;
    let mut out = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
            .to_string();
        let ndim = r.u32()? as usize;
        let mut dims = Vec::with_capacity(ndim.min(8));
        for _ in 0..ndim {
            dims.push(r.u64()? as usize);
        }
        let len = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::Checkpoint(format!("tensor {name} is too large")))?;
        let raw = r.take(len.checked_mul(8).ok_or_else(|| {
            Error::Checkpoint(format!("tensor {name} is too large"))
        })?)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.push(NamedTensor { name, dims, data });
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes after last tensor".into()));
    }
    Ok(out)
}

fn assign(model: &mut Countermeasure, tensors: Vec<NamedTensor>) -> Result<()> {
    let mut by_name: HashMap<String, NamedTensor> =
        tensors.into_iter().map(|t| (t.name.clone(), t)).collect();
    let mut take = |name: String, len: usize| -> Result<NamedTensor> {
        let t = by_name
            .remove(&name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
        if t.data.len() != len {
            return Err(Error::Checkpoint(format!(
                "tensor {name} has {} values, expected {len}",
                t.data.len()
            )));
        }
        Ok(t)
    };
    for (prefix, stack) in model.stacks_mut() {
        for p in stack.params_mut() {
            let t = take(format!("{prefix}/{}", p.name), p.value.len())?;
            if t.dims != p.shape {
                return Err(Error::Checkpoint(format!(
                    "tensor {} has shape {:?}, expected {:?}",
                    t.name, t.dims, p.shape
                )));
            }
            p.value = t.data;
        }
        for b in stack.buffers_mut() {
            let t = take(format!("{prefix}/{}", b.name), b.value.len())?;
            b.value = t.data;
        }
    }
    if let Some(extra) = by_name.keys().next() {
        return Err(Error::Checkpoint(format!("unexpected tensor {extra}")));
    }
    Ok(())
}

/// Write `dir/manifest.json` and `dir/weights.bin`, creating `dir`.
pub fn save(
    dir: &Path,
    model: &Countermeasure,
    model_id: &str,
    frontend: &FrontendParams,
    seed: u64,
) -> Result<CheckpointManifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let bytes = encode(&collect_tensors(model));
    let manifest = CheckpointManifest {
        format_version: FORMAT_VERSION,
        model_id: model_id.to_string(),
        architecture: model.architecture(),
        frontend: frontend.clone(),
        seed,
        content_hash: hex_digest(&bytes),
        param_count: model.param_count(),
        generator: concat!("subband-spoof ", env!("CARGO_PKG_VERSION")).to_string(),
    };
    let wpath = dir.join(WEIGHTS_FILE);
    fs::write(&wpath, &bytes).map_err(|e| Error::io(&wpath, e))?;
    let mpath = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::json(&mpath, e))?;
    fs::write(&mpath, text + "\n").map_err(|e| Error::io(&mpath, e))?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<CheckpointManifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m: CheckpointManifest = serde_json::from_str(&text).map_err(|e| Error::json(&path, e))?;
    if m.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint format version {}",
            m.format_version
        )));
    }
    Ok(m)
}

/// Load and verify a checkpoint directory.
pub fn load(dir: &Path) -> Result<(Countermeasure, CheckpointManifest)> {
    let manifest = read_manifest(dir)?;
    let wpath = dir.join(WEIGHTS_FILE);
    let bytes = fs::read(&wpath).map_err(|e| Error::io(&wpath, e))?;
    let actual = hex_digest(&bytes);
    if actual != manifest.content_hash {
        return Err(Error::HashMismatch {
            expected: manifest.content_hash.clone(),
            actual,
        });
    }
    let mut model = Countermeasure::skeleton(&manifest.architecture)?;
    assign(&mut model, decode(&bytes)?)?;
    if model.param_count() != manifest.param_count {
        return Err(Error::Checkpoint(format!(
            "manifest declares {} parameters, model has {}",
            manifest.param_count,
            model.param_count()
        )));
    }
    Ok((model, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build_joint, Profile};
    use crate::subband::SubbandPlan;

    fn small_sub(width: usize, band: usize, seed: u64) -> SubCnn {
        let mut cfg = Profile::Reduced.config(width);
        cfg.input_frames = 64;
        SubCnn::custom(cfg, seed).unwrap().with_band(BandAssignment { n_splits: 8, band })
    }

    fn spec(bins: usize, seed: u64) -> Spectrogram {
        let data = (0..64 * bins)
            .map(|i| ((i as u64 * 2654435761 + seed) % 1000) as f64 / 500.0 - 1.0)
            .collect();
        Spectrogram::from_vec(64, bins, data).unwrap()
    }

    #[test]
    fn sub_cnn_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let m: Countermeasure = small_sub(32, 0, 7).into();
        save(dir.path(), &m, "M7", &FrontendParams::default(), 7).unwrap();
        let (back, manifest) = load(dir.path()).unwrap();
        assert_eq!(manifest.model_id, "M7");
        let s = spec(257, 1);
        assert_eq!(m.scores(&[&s]).unwrap(), back.scores(&[&s]).unwrap());
    }

    #[test]
    fn joint_roundtrip_and_tamper_detection() {
        let dir = tempfile::tempdir().unwrap();
        let plan = SubbandPlan::new(8).unwrap();
        let subs = vec![small_sub(32, 0, 1), small_sub(32, 1, 2)];
        let j: Countermeasure = build_joint(&subs, &plan, &[0, 1], true, 3).unwrap().into();
        save(dir.path(), &j, "J1", &FrontendParams::default(), 3).unwrap();
        let (back, _) = load(dir.path()).unwrap();
        let s = spec(257, 2);
        assert_eq!(j.scores(&[&s]).unwrap(), back.scores(&[&s]).unwrap());

        let wpath = dir.path().join(WEIGHTS_FILE);
        let mut bytes = fs::read(&wpath).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 1;
        fs::write(&wpath, bytes).unwrap();
        assert!(matches!(load(dir.path()), Err(Error::HashMismatch { .. })));
    }

    #[test]
    fn decode_rejects_truncation() {
        let m: Countermeasure = small_sub(32, 0, 0).into();
        let bytes = encode(&collect_tensors(&m));
        assert!(decode(&bytes[..bytes.len() - 3]).is_err());
        assert!(decode(b"XXXX").is_err());
    }
}
