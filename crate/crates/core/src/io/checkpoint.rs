//! Ranker checkpoint:
//!
//! ```text
//! b"SRM1"
//! u32 n_dims, then n_dims x u32 layer widths
//! u64 seed, u32 epoch, f32 loss
//! per layer: outputs x inputs f32 weights (row-major), outputs f32 biases
//! ```
//!
//! All integers and floats little-endian.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::ranker::{Dense, Mlp};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SRM1";

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TrainMeta {
    pub seed: u64,
    pub epoch: u32,
    pub loss: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankerCheckpoint {
    pub model: Mlp<f32>,
    pub meta: TrainMeta,
}

pub fn encode_checkpoint(ckpt: &RankerCheckpoint) -> Vec<u8> {
    let dims = ckpt.model.dims();
    let mut out = Vec::with_capacity(4 + 4 * dims.len() + 16 + ckpt.model.param_count() * 4);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for d in &dims {
        out.extend_from_slice(&(*d as u32).to_le_bytes());
    }
    out.extend_from_slice(&ckpt.meta.seed.to_le_bytes());
    out.extend_from_slice(&ckpt.meta.epoch.to_le_bytes());
    out.extend_from_slice(&ckpt.meta.loss.to_le_bytes());
    for layer in ckpt.model.layers() {
        for v in layer.weights.iter().chain(&layer.bias) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(
                self.path,
                format!("truncated while reading {what}"),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint(path: &Path, bytes: &[u8]) -> Result<RankerCheckpoint> {
    let mut r = Reader { path, bytes, pos: 0 };
    if r.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::format(path, "bad magic, expected SRM1"));
    }
    let n_dims = r.u32("layer count")? as usize;
    if !(2..=64).contains(&n_dims) {
        return Err(Error::format(path, format!("implausible layer count {n_dims}")));
    }
    let dims = (0..n_dims)
        .map(|_| r.u32("layer dims").map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    if dims.contains(&0) || *dims.last().unwrap() != 1 {
        return Err(Error::format(
            path,
            format!("layer chain inconsistent: dims {dims:?} (need positive widths ending in 1)"),
        ));
    }
    let seed = u64::from_le_bytes(r.take(8, "seed")?.try_into().unwrap());
    let epoch = r.u32("epoch")?;
    let loss = f32::from_le_bytes(r.take(4, "loss")?.try_into().unwrap());

    let expected: usize = dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum::<usize>() * 4;
    let remaining = bytes.len() - r.pos;
    if remaining != expected {
        return Err(Error::format(
            path,
            format!(
                "layer chain inconsistent: dims {dims:?} need {expected} parameter bytes, file holds {remaining}"
            ),
        ));
    }
    let mut layers = Vec::with_capacity(n_dims - 1);
    for w in dims.windows(2) {
        let (inputs, outputs) = (w[0], w[1]);
        let mut floats = |n: usize| -> Result<Vec<f32>> {
            let raw = r.take(n * 4, "parameters")?;
            let v: Vec<f32> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::format(path, "non-finite parameter"));
            }
            Ok(v)
        };
        let weights = floats(inputs * outputs)?;
        let bias = floats(outputs)?;
        layers.push(Dense {
            inputs,
            outputs,
            weights,
            bias,
        });
    }
    let model = Mlp::from_layers(layers).map_err(|e| Error::format(path, e.to_string()))?;
    Ok(RankerCheckpoint {
        model,
        meta: TrainMeta { seed, epoch, loss },
    })
}

pub fn save_checkpoint(ckpt: &RankerCheckpoint, path: &Path) -> Result<()> {
    fs::write(path, encode_checkpoint(ckpt)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<RankerCheckpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(path, &bytes)
}
