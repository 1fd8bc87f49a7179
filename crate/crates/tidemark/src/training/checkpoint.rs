//! Checkpoint archive: one file holding every parameter array keyed by
//! hierarchical name, optimizer moments, the full config, and the training
//! position.
//!
//! Layout: magic `TMRK`, u32 LE format version, u64 LE header length, a JSON
//! header, then a payload of little-endian f64 arrays at the offsets the
//! header records. Resume needs no serialized RNG state: per-epoch streams
//! are re-derived from the seed and the stored epoch count.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::config::Config;
use crate::error::{Error, Result};
use crate::models::params::ParamStore;
use crate::training::optim::AdamW;

const MAGIC: &[u8; 4] = b"TMRK";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ArrayMeta {
    name: String,
    shape: Vec<usize>,
    /// Offset into the payload, in f64 elements.
    offset: u64,
    len: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: Config,
    epochs_completed: usize,
    global_step: u64,
    /// AdamW step counters keyed by section name.
    opt_steps: HashMap<String, u64>,
    arrays: Vec<ArrayMeta>,
}

/// One model's slot in the archive: a name prefix, its parameters, and its
/// optimizer.
pub struct Section<'a> {
    pub name: &'a str,
    pub store: &'a ParamStore,
    pub opt: &'a AdamW,
}

pub fn save_checkpoint(
    path: &Path,
    config: &Config,
    epochs_completed: usize,
    global_step: u64,
    sections: &[Section<'_>],
) -> Result<()> {
    let mut arrays = Vec::new();
    let mut payload: Vec<f64> = Vec::new();
    let mut opt_steps = HashMap::new();

    let push = |arrays: &mut Vec<ArrayMeta>, name: String, shape: Vec<usize>, data: &[f64], payload: &mut Vec<f64>| {
        arrays.push(ArrayMeta {
            name,
            shape,
            offset: payload.len() as u64,
            len: data.len() as u64,
        });
        payload.extend_from_slice(data);
    };

    for s in sections {
        for (pname, tensor) in s.store.iter() {
            push(
                &mut arrays,
                format!("{}/param/{}", s.name, pname),
                tensor.shape().to_vec(),
                tensor.data(),
                &mut payload,
            );
        }
        let (m, v, t) = s.opt.state();
        opt_steps.insert(s.name.to_string(), t);
        for (i, buf) in m.iter().enumerate() {
            push(
                &mut arrays,
                format!("{}/opt/m/{i}", s.name),
                vec![buf.len()],
                buf,
                &mut payload,
            );
        }
        for (i, buf) in v.iter().enumerate() {
            push(
                &mut arrays,
                format!("{}/opt/v/{i}", s.name),
                vec![buf.len()],
                buf,
                &mut payload,
            );
        }
    }

    let header = Header {
        config: config.clone(),
        epochs_completed,
        global_step,
        opt_steps,
        arrays,
    };
    let header_json = serde_json::to_vec(&header)
        .map_err(|e| Error::Checkpoint {
            path: path.into(),
            detail: format!("header serialization: {e}"),
        })?;

    let tmp = path.with_extension("tmp");
    let write = |p: &Path| -> std::io::Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(p)?);
        f.write_all(MAGIC)?;
        f.write_all(&VERSION.to_le_bytes())?;
        f.write_all(&(header_json.len() as u64).to_le_bytes())?;
        f.write_all(&header_json)?;
        for v in &payload {
            f.write_all(&v.to_le_bytes())?;
        }
        f.flush()
    };
    write(&tmp).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// A parsed archive, ready to be applied to freshly constructed models.
pub struct LoadedCheckpoint {
    pub config: Config,
    pub epochs_completed: usize,
    pub global_step: u64,
    opt_steps: HashMap<String, u64>,
    tensors: HashMap<String, Tensor>,
}

pub fn load_checkpoint(path: &Path) -> Result<LoadedCheckpoint> {
    let fail = |detail: String| Error::Checkpoint {
        path: path.into(),
        detail,
    };
    let mut f = std::io::BufReader::new(std::fs::File::open(path).map_err(|e| Error::io(path, e))?);
    let mut magic = [0u8; 4];
    f.read_exact(&mut magic).map_err(|e| Error::io(path, e))?;
    if &magic != MAGIC {
        return Err(fail("not a checkpoint archive (bad magic)".into()));
    }
    let mut word = [0u8; 4];
    f.read_exact(&mut word).map_err(|e| Error::io(path, e))?;
    let version = u32::from_le_bytes(word);
    if version != VERSION {
        return Err(fail(format!("unsupported format version {version}")));
    }
    let mut len8 = [0u8; 8];
    f.read_exact(&mut len8).map_err(|e| Error::io(path, e))?;
    let header_len = u64::from_le_bytes(len8) as usize;
    let mut header_json = vec![0u8; header_len];
    f.read_exact(&mut header_json).map_err(|e| Error::io(path, e))?;
    let header: Header =
        serde_json::from_slice(&header_json).map_err(|e| fail(format!("header parse: {e}")))?;

    let mut raw = Vec::new();
    f.read_to_end(&mut raw).map_err(|e| Error::io(path, e))?;
    if raw.len() % 8 != 0 {
        return Err(fail("payload is not a whole number of f64 values".into()));
    }
    let payload: Vec<f64> = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();

    let mut tensors = HashMap::new();
    for meta in &header.arrays {
        let (start, end) = (meta.offset as usize, (meta.offset + meta.len) as usize);
        if end > payload.len() {
            return Err(fail(format!("array {} overruns the payload", meta.name)));
        }
        if meta.shape.iter().product::<usize>() != meta.len as usize {
            return Err(fail(format!("array {} shape does not match its length", meta.name)));
        }
        tensors.insert(
            meta.name.clone(),
            Tensor::new(meta.shape.clone(), payload[start..end].to_vec()),
        );
    }
    Ok(LoadedCheckpoint {
        config: header.config,
        epochs_completed: header.epochs_completed,
        global_step: header.global_step,
        opt_steps: header.opt_steps,
        tensors,
    })
}

impl LoadedCheckpoint {
    /// Restore one section's parameters and optimizer state.
    pub fn apply(&self, name: &str, store: &mut ParamStore, opt: &mut AdamW) -> Result<()> {
        let fail = |detail: String| Error::Checkpoint {
            path: std::path::PathBuf::from("<loaded checkpoint>"),
            detail,
        };
        let names: Vec<String> = store.iter().map(|(n, _)| n.to_string()).collect();
        for pname in &names {
            let key = format!("{name}/param/{pname}");
            let tensor = self
                .tensors
                .get(&key)
                .ok_or_else(|| fail(format!("missing array {key}")))?;
            store.set_by_name(pname, tensor.clone())?;
        }
        let t = *self
            .opt_steps
            .get(name)
            .ok_or_else(|| fail(format!("missing optimizer counter for {name}")))?;
        let mut m = Vec::new();
        let mut v = Vec::new();
        for i in 0..names.len() {
            let mk = format!("{name}/opt/m/{i}");
            let vk = format!("{name}/opt/v/{i}");
            m.push(
                self.tensors
                    .get(&mk)
                    .ok_or_else(|| fail(format!("missing array {mk}")))?
                    .data()
                    .to_vec(),
            );
            v.push(
                self.tensors
                    .get(&vk)
                    .ok_or_else(|| fail(format!("missing array {vk}")))?
                    .data()
                    .to_vec(),
            );
        }
        opt.restore(m, v, t);
        Ok(())
    }
}
