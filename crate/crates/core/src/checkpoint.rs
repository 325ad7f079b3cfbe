//! Binary checkpoints: model, run config, optional optimizer state and diagnostics.
//!
//! Layout (little-endian):
//!
//! ```text
//! "TNVC" | version u32 | iteration u64
//! config hash: u32 len + hex bytes | config text: u32 len + utf-8 bytes
//! grid block ("TNVX" ..., see voxels)
//! layer count u32, then per layer: out u32, in u32, weight f64[out*in], bias f64[out]
//! optimizer flag u8; if 1, per group: step u64, base_lr f64, tensors u32,
//!     then per tensor: len u64, m f64[len], v f64[len]
//! diagnostics flag u8; if 1: strides u32, dims 3 x u32, then per stride:
//!     stride u32, norm f64, per-vertex magnitude f32[dims product]
//! ```

use std::io::Read;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::nets::{Model, ParamGroupId};
use crate::optim::{Adam, ParamGroup};
use crate::raster::write_atomic;
use crate::voxels::{read_exact, read_f64, read_u32, StrideGradReport, VoxelGrid};

const MAGIC: &[u8; 4] = b"TNVC";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub iteration: u64,
    pub config: TrainConfig,
    pub model: Model,
    pub optimizer: Option<Adam>,
    pub diagnostics: Option<StrideGradReport>,
}

fn config_hash(text: &str) -> String {
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64s(out: &mut Vec<u8>, v: &[f64]) {
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_u8<R: Read>(r: &mut R) -> Result<u8> {
    let mut b = [0u8; 1];
    read_exact(r, &mut b)?;
    Ok(b[0])
}

/// Reads `n` f64 values, refusing lengths the remaining input cannot hold.
fn read_f64s(r: &mut &[u8], n: usize) -> Result<Vec<f64>> {
    if r.len() < n.saturating_mul(8) {
        return Err(Error::Checkpoint("truncated file".into()));
    }
    (0..n).map(|_| read_f64(r)).collect()
}

fn read_str(r: &mut &[u8]) -> Result<String> {
    let n = read_u32(r)? as usize;
    if r.len() < n {
        return Err(Error::Checkpoint("truncated file".into()));
    }
    let mut buf = vec![0u8; n];
    read_exact(r, &mut buf)?;
    String::from_utf8(buf).map_err(|_| Error::Checkpoint("config text is not utf-8".into()))
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(self.model.grid.serialized_len() + 1024);
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, VERSION);
        put_u64(&mut out, self.iteration);
        let text = self.config.to_text();
        put_str(&mut out, &config_hash(&text));
        put_str(&mut out, &text);
        self.model.grid.write_to(&mut out)?;

        let layers = self.model.network_layers();
        put_u32(&mut out, layers.len() as u32);
        for l in layers {
            put_u32(&mut out, l.out_dim as u32);
            put_u32(&mut out, l.in_dim as u32);
            put_f64s(&mut out, &l.weight);
            put_f64s(&mut out, &l.bias);
        }

        match &self.optimizer {
            None => out.push(0),
            Some(adam) => {
                out.push(1);
                for g in &adam.groups {
                    put_u64(&mut out, g.step_count);
                    out.extend_from_slice(&g.base_lr.to_le_bytes());
                    put_u32(&mut out, g.m.len() as u32);
                    for (m, v) in g.m.iter().zip(&g.v) {
                        put_u64(&mut out, m.len() as u64);
                        put_f64s(&mut out, m);
                        put_f64s(&mut out, v);
                    }
                }
            }
        }

        match &self.diagnostics {
            None => out.push(0),
            Some(d) => {
                out.push(1);
                put_u32(&mut out, d.strides.len() as u32);
                for n in d.dims {
                    put_u32(&mut out, n as u32);
                }
                for ((s, norm), field) in d.strides.iter().zip(&d.norms).zip(&d.fields) {
                    put_u32(&mut out, *s as u32);
                    out.extend_from_slice(&norm.to_le_bytes());
                    for v in field {
                        out.extend_from_slice(&(*v as f32).to_le_bytes());
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let r = &mut &bytes[..];
        let mut magic = [0u8; 4];
        read_exact(r, &mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("bad magic: not a checkpoint file".into()));
        }
        let version = read_u32(r)?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!(
                "version mismatch: file has {version}, expected {VERSION}"
            )));
        }
        let iteration = read_u64(r)?;
        let hash = read_str(r)?;
        let text = read_str(r)?;
        if config_hash(&text) != hash {
            return Err(Error::Checkpoint("config hash does not match stored config".into()));
        }
        let config = TrainConfig::parse(&text).map_err(|e| Error::Checkpoint(format!("stored config: {e}")))?;
        let grid = VoxelGrid::read_from(r)?;
        let mut model = Model::new(config.net.clone(), grid, 0)
            .map_err(|e| Error::Checkpoint(format!("model shape: {e}")))?;

        let count = read_u32(r)? as usize;
        let mut layers = model.network_layers_mut();
        if count != layers.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {count} layers, config implies {}",
                layers.len()
            )));
        }
        for (i, l) in layers.iter_mut().enumerate() {
            let (out_dim, in_dim) = (read_u32(r)? as usize, read_u32(r)? as usize);
            if (out_dim, in_dim) != (l.out_dim, l.in_dim) {
                return Err(Error::Checkpoint(format!(
                    "layer {i} is {out_dim}x{in_dim}, config implies {}x{}",
                    l.out_dim, l.in_dim
                )));
            }
            l.weight = read_f64s(r, out_dim * in_dim)?;
            l.bias = read_f64s(r, out_dim)?;
        }

        let optimizer = match read_u8(r)? {
            0 => None,
            1 => {
                let mut groups = Vec::with_capacity(3);
                for id in ParamGroupId::ALL {
                    let step_count = read_u64(r)?;
                    let base_lr = read_f64(r)?;
                    let n = read_u32(r)? as usize;
                    let mut g = ParamGroup { id, base_lr, step_count, m: Vec::new(), v: Vec::new() };
                    for _ in 0..n {
                        let len = read_u64(r)? as usize;
                        g.m.push(read_f64s(r, len)?);
                        g.v.push(read_f64s(r, len)?);
                    }
                    groups.push(g);
                }
                Some(Adam { groups })
            }
            f => return Err(Error::Checkpoint(format!("bad optimizer flag {f}"))),
        };

        let diagnostics = match read_u8(r)? {
            0 => None,
            1 => {
                let n = read_u32(r)? as usize;
                let dims = [read_u32(r)? as usize, read_u32(r)? as usize, read_u32(r)? as usize];
                let nv = dims[0] * dims[1] * dims[2];
                let mut d = StrideGradReport { strides: Vec::new(), norms: Vec::new(), fields: Vec::new(), dims };
                for _ in 0..n {
                    d.strides.push(read_u32(r)? as usize);
                    d.norms.push(read_f64(r)?);
                    if r.len() < nv * 4 {
                        return Err(Error::Checkpoint("truncated file".into()));
                    }
                    let field = r[..nv * 4]
                        .chunks_exact(4)
                        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
                        .collect();
                    *r = &r[nv * 4..];
                    d.fields.push(field);
                }
                Some(d)
            }
            f => return Err(Error::Checkpoint(format!("bad diagnostics flag {f}"))),
        };
        if !r.is_empty() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", r.len())));
        }
        Ok(Self { iteration, config, model, optimizer, diagnostics })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)
            .map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }
}
