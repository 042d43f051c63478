use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{Adam, AdamConfig, NnError, ParamStore, Tensor};
use crate::binio::*;

const MAGIC: &[u8; 8] = b"SPCKPT\0\0";
pub const CHECKPOINT_VERSION: u32 = 1;
const LIMIT: u64 = 1 << 32;

/// First eight bytes of SHA-256 over a configuration document.
pub fn config_hash(config_json: &str) -> u64 {
    let d = Sha256::digest(config_json.as_bytes());
    u64::from_le_bytes(d[..8].try_into().unwrap())
}

/// Parameters, optimizer state and the configuration that produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub step: u64,
    pub config_json: String,
    pub params: ParamStore,
    pub adam: Adam,
    /// Opaque named blobs stored alongside the tensors.
    pub attachments: Vec<(String, Vec<u8>)>,
}

fn write_tensor(w: &mut impl Write, t: &Tensor) -> std::io::Result<()> {
    write_u64(w, t.rows() as u64)?;
    write_u64(w, t.cols() as u64)?;
    for &v in t.data() {
        write_f64(w, v)?;
    }
    Ok(())
}

fn read_tensor(r: &mut impl Read) -> Result<Tensor, NnError> {
    let rows = read_len(r, LIMIT)?;
    let cols = read_len(r, LIMIT)?;
    if rows.saturating_mul(cols) > LIMIT as usize {
        return Err(NnError::Checkpoint(format!("tensor {rows}x{cols} too large")));
    }
    let data = (0..rows * cols).map(|_| read_f64(r)).collect::<Result<Vec<_>, _>>()?;
    Tensor::new(rows, cols, data)
}

impl Checkpoint {
    pub fn config_hash(&self) -> u64 {
        config_hash(&self.config_json)
    }

    pub fn write(&self, w: &mut impl Write) -> Result<(), NnError> {
        w.write_all(MAGIC)?;
        write_u32(w, CHECKPOINT_VERSION)?;
        write_u64(w, self.config_hash())?;
        write_u64(w, self.step)?;
        write_str(w, &self.config_json)?;
        write_u64(w, self.params.len() as u64)?;
        for (_, name, t) in self.params.iter() {
            write_str(w, name)?;
            write_tensor(w, t)?;
        }
        let cfg = self.adam.config();
        write_f64(w, cfg.beta1)?;
        write_f64(w, cfg.beta2)?;
        write_f64(w, cfg.eps)?;
        write_u64(w, self.adam.t())?;
        let (m, v) = self.adam.moments();
        for t in m.iter().chain(v) {
            write_tensor(w, t)?;
        }
        write_u64(w, self.attachments.len() as u64)?;
        for (name, blob) in &self.attachments {
            write_str(w, name)?;
            write_u64(w, blob.len() as u64)?;
            w.write_all(blob)?;
        }
        Ok(())
    }

    pub fn read(r: &mut impl Read) -> Result<Self, NnError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(NnError::Checkpoint("not a checkpoint file".into()));
        }
        let version = read_u32(r)?;
        if version != CHECKPOINT_VERSION {
            return Err(NnError::Checkpoint(format!("unsupported checkpoint version {version}")));
        }
        let hash = read_u64(r)?;
        let step = read_u64(r)?;
        let config_json = read_str(r, LIMIT)?;
        if config_hash(&config_json) != hash {
            return Err(NnError::Checkpoint("config hash does not match embedded config".into()));
        }
        let n = read_len(r, 1 << 20)?;
        let mut params = ParamStore::new();
        for _ in 0..n {
            let name = read_str(r, 1 << 16)?;
            let t = read_tensor(r)?;
            params.add(name, t)?;
        }
        let config = AdamConfig {
            beta1: read_f64(r)?,
            beta2: read_f64(r)?,
            eps: read_f64(r)?,
        };
        let t = read_u64(r)?;
        let mut moments = Vec::with_capacity(2 * n);
        for _ in 0..2 * n {
            moments.push(read_tensor(r)?);
        }
        let v = moments.split_off(n);
        for (i, (_, _, p)) in params.iter().enumerate() {
            if moments[i].shape() != p.shape() || v[i].shape() != p.shape() {
                return Err(NnError::Checkpoint(format!("optimizer state for {i} has wrong shape")));
            }
        }
        let count = read_len(r, 1 << 10)?;
        let mut attachments = Vec::with_capacity(count);
        for _ in 0..count {
            let name = read_str(r, 1 << 16)?;
            let len = read_len(r, LIMIT)?;
            let mut blob = vec![0u8; len];
            r.read_exact(&mut blob)?;
            attachments.push((name, blob));
        }
        Ok(Self {
            step,
            config_json,
            params,
            adam: Adam::from_state(config, moments, v, t),
            attachments,
        })
    }

    pub fn attachment(&self, name: &str) -> Option<&[u8]> {
        self.attachments
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, b)| b.as_slice())
    }

    pub fn save(&self, path: &Path) -> Result<(), NnError> {
        let tmp = path.with_extension("tmp");
        {
            let mut w = BufWriter::new(fs::File::create(&tmp)?);
            self.write(&mut w)?;
            w.flush()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, NnError> {
        let mut r = BufReader::new(fs::File::open(path)?);
        Self::read(&mut r)
    }
}
