//! Single-file checkpoints: a JSON header (config, vocabulary, tensor
//! directory, metadata) followed by little-endian tensor data.
//!
//! Writes go to a temporary file in the destination directory, are synced,
//! and are then renamed over the target, so the canonical path only ever
//! holds a complete checkpoint.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autograd::ParamStore;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, RewriteModel};
use crate::optim::{Adam, AdamConfig};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"SDIFCKP1";

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Serialize, Deserialize)]
struct OptimHeader {
    config: AdamConfig,
    step: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    dtype: String,
    config: ModelConfig,
    vocab: Option<Vec<String>>,
    tensors: Vec<TensorEntry>,
    optimizer: Option<OptimHeader>,
    #[serde(default)]
    meta: serde_json::Value,
}

/// Everything restored from a checkpoint file.
#[derive(Clone, Debug)]
pub struct Checkpoint<T> {
    pub model: RewriteModel<T>,
    pub vocab: Option<Vec<String>>,
    pub optimizer: Option<Adam<T>>,
    pub meta: serde_json::Value,
}

fn write_tensor<T: Scalar, W: Write>(w: &mut W, t: &Tensor<T>, dtype: &str) -> std::io::Result<()> {
    for &v in t.data() {
        if dtype == "f32" {
            w.write_all(&(v.as_f64() as f32).to_le_bytes())?;
        } else {
            w.write_all(&v.as_f64().to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_tensor<T: Scalar, R: Read>(r: &mut R, rows: usize, cols: usize, dtype: &str) -> Result<Tensor<T>> {
    let n = rows * cols;
    let width = if dtype == "f32" { 4 } else { 8 };
    let mut buf = vec![0u8; n * width];
    r.read_exact(&mut buf).map_err(|e| Error::Checkpoint(format!("truncated tensor data: {e}")))?;
    let data = buf
        .chunks_exact(width)
        .map(|c| {
            let v = if width == 4 {
                f32::from_le_bytes(c.try_into().unwrap()) as f64
            } else {
                f64::from_le_bytes(c.try_into().unwrap())
            };
            T::from_f64_lossy(v)
        })
        .collect();
    Ok(Tensor::from_vec(rows, cols, data))
}

fn temp_path(path: &Path) -> PathBuf {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "checkpoint".into());
    path.with_file_name(format!(".{name}.tmp-{}", std::process::id()))
}

/// Writes `contents` to `path` atomically (temp file, fsync, rename).
pub fn atomic_write(path: &Path, contents: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let tmp = temp_path(path);
    let result = (|| -> std::io::Result<()> {
        let file = File::create(&tmp)?;
        let mut w = BufWriter::new(file);
        contents(&mut w)?;
        let file = w.into_inner().map_err(|e| e.into_error())?;
        file.sync_all()?;
        fs::rename(&tmp, path)?;
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            // Persist the rename itself; not every platform allows this.
            if let Ok(d) = File::open(dir) {
                let _ = d.sync_all();
            }
        }
        Ok(())
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.map_err(Error::from)
}

/// Saves a model plus optional vocabulary, optimizer state and metadata.
pub fn save<T: Scalar>(
    path: &Path,
    model: &RewriteModel<T>,
    vocab: Option<&[String]>,
    optimizer: Option<&Adam<T>>,
    meta: serde_json::Value,
) -> Result<()> {
    let params = model.params();
    let header = Header {
        dtype: T::DTYPE.to_string(),
        config: model.config().clone(),
        vocab: vocab.map(<[String]>::to_vec),
        tensors: params
            .names()
            .iter()
            .zip(params.tensors())
            .map(|(n, t)| TensorEntry { name: n.clone(), rows: t.rows(), cols: t.cols() })
            .collect(),
        optimizer: optimizer.map(|o| OptimHeader { config: o.config.clone(), step: o.step }),
        meta,
    };
    let json = serde_json::to_vec(&header)?;
    atomic_write(path, |w| {
        w.write_all(MAGIC)?;
        w.write_all(&(json.len() as u64).to_le_bytes())?;
        w.write_all(&json)?;
        for t in params.tensors() {
            write_tensor(w, t, T::DTYPE)?;
        }
        if let Some(o) = optimizer {
            for t in o.m.iter().chain(&o.v) {
                write_tensor(w, t, T::DTYPE)?;
            }
        }
        Ok(())
    })
}

/// Loads a checkpoint, converting stored values to `T` and validating
/// every tensor shape against the stored config.
pub fn load<T: Scalar>(path: &Path) -> Result<Checkpoint<T>> {
    let file = File::open(path).map_err(|e| Error::Checkpoint(format!("cannot open {}: {e}", path.display())))?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| Error::Checkpoint("file too short".into()))?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!("{} is not a checkpoint file", path.display())));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len).map_err(|_| Error::Checkpoint("truncated header".into()))?;
    let len = u64::from_le_bytes(len) as usize;
    if len > 1 << 30 {
        return Err(Error::Checkpoint("implausible header length".into()));
    }
    let mut json = vec![0u8; len];
    r.read_exact(&mut json).map_err(|_| Error::Checkpoint("truncated header".into()))?;
    let header: Header = serde_json::from_slice(&json).map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
    if header.dtype != "f32" && header.dtype != "f64" {
        return Err(Error::Checkpoint(format!("unsupported dtype `{}`", header.dtype)));
    }
    let mut params = ParamStore::default();
    for e in &header.tensors {
        params.push(e.name.clone(), read_tensor(&mut r, e.rows, e.cols, &header.dtype)?);
    }
    let model = RewriteModel::from_params(header.config, params)?;
    let optimizer = match header.optimizer {
        Some(o) => {
            let mut m = Vec::with_capacity(header.tensors.len());
            let mut v = Vec::with_capacity(header.tensors.len());
            for e in &header.tensors {
                m.push(read_tensor(&mut r, e.rows, e.cols, &header.dtype)?);
            }
            for e in &header.tensors {
                v.push(read_tensor(&mut r, e.rows, e.cols, &header.dtype)?);
            }
            Some(Adam { config: o.config, step: o.step, m, v })
        }
        None => None,
    };
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Checkpoint("trailing bytes after tensor data".into()));
    }
    Ok(Checkpoint { model, vocab: header.vocab, optimizer, meta: header.meta })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig { vocab_size: 16, d_model: 8, n_heads: 2, d_ff: 8, max_seq_len: 8, ..ModelConfig::default() }
    }

    #[test]
    fn round_trip_preserves_parameters_and_optimizer() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let model = RewriteModel::<f32>::new(tiny(), 4).unwrap();
        let mut opt = Adam::new(AdamConfig::default(), model.params());
        opt.step = 7;
        opt.m[0].data_mut()[0] = 0.25;
        let vocab: Vec<String> = (0..16).map(|i| format!("t{i}")).collect();
        save(&path, &model, Some(&vocab), Some(&opt), serde_json::json!({"step": 7})).unwrap();
        let ck = load::<f32>(&path).unwrap();
        assert_eq!(ck.model.params(), model.params());
        assert_eq!(ck.vocab.as_deref(), Some(vocab.as_slice()));
        assert_eq!(ck.optimizer.unwrap(), opt);
        assert_eq!(ck.meta["step"], 7);
        let leftovers: Vec<_> = fs::read_dir(dir.path()).unwrap().collect();
        assert_eq!(leftovers.len(), 1);
    }

    #[test]
    fn truncated_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let model = RewriteModel::<f32>::new(tiny(), 4).unwrap();
        save(&path, &model, None, None, serde_json::Value::Null).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(load::<f32>(&path), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn f32_checkpoint_loads_as_f64() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let model = RewriteModel::<f32>::new(tiny(), 9).unwrap();
        save(&path, &model, None, None, serde_json::Value::Null).unwrap();
        let ck = load::<f64>(&path).unwrap();
        assert_eq!(ck.model.params().get(0).data()[3] as f32, model.params().get(0).data()[3]);
    }
}
