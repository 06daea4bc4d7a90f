//! Versioned binary serialization of [`RegressionHead`].
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic       8 bytes  "ACNEHEAD"
//! version     u32      1
//! d           u32      input dimension
//! n_layers    u32
//! widths      u32 x n_layers   output width of each layer
//! activation  u8       0 = rectifier
//! seed        u64
//! per layer:  weights f32 x (out * in), row-major; bias f32 x out
//! ```

use std::path::Path;

use ndarray::{Array1, Array2};
use sha2::{Digest, Sha256};

use super::head::{Activation, Dense, RegressionHead};
use crate::error::{Error, Result};
use crate::image_io::write_atomic;

pub const MAGIC: &[u8; 8] = b"ACNEHEAD";
pub const FORMAT_VERSION: u32 = 1;

pub fn encode_head(head: &RegressionHead) -> Vec<u8> {
    let mut out = Vec::with_capacity(32 + 4 * head.parameter_count());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(head.input_dim() as u32).to_le_bytes());
    out.extend_from_slice(&(head.layers().len() as u32).to_le_bytes());
    for l in head.layers() {
        out.extend_from_slice(&(l.weights.nrows() as u32).to_le_bytes());
    }
    out.push(head.activation().tag());
    out.extend_from_slice(&head.seed().to_le_bytes());
    for l in head.layers() {
        for v in l.weights.iter().chain(l.bias.iter()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::ModelFormat(format!(
                "truncated file: {what} needs {n} bytes at offset {}, file has {}",
                self.pos,
                self.bytes.len()
            )));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn floats(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| overflow(what))?, what)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

fn overflow(what: &str) -> Error {
    Error::ModelFormat(format!("{what}: size overflow"))
}

pub fn decode_head(bytes: &[u8]) -> Result<RegressionHead> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8, "magic")? != MAGIC {
        return Err(Error::ModelFormat("bad magic".into()));
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::ModelFormat(format!(
            "unsupported version {version}, expected {FORMAT_VERSION}"
        )));
    }
    let d = r.u32("input dimension")? as usize;
    let n_layers = r.u32("layer count")? as usize;
    if n_layers == 0 || n_layers > 64 {
        return Err(Error::ModelFormat(format!("implausible layer count {n_layers}")));
    }
    let widths = (0..n_layers)
        .map(|_| r.u32("layer width").map(|w| w as usize))
        .collect::<Result<Vec<_>>>()?;
    let tag = r.take(1, "activation")?[0];
    let activation = Activation::from_tag(tag)
        .ok_or_else(|| Error::ModelFormat(format!("unknown activation tag {tag}")))?;
    let seed = u64::from_le_bytes(r.take(8, "seed")?.try_into().unwrap());

    let mut layers = Vec::with_capacity(n_layers);
    let mut fan_in = d;
    for (i, &out) in widths.iter().enumerate() {
        let n = out.checked_mul(fan_in).ok_or_else(|| overflow("weights"))?;
        let w = r.floats(n, &format!("layer {i} weights"))?;
        let b = r.floats(out, &format!("layer {i} bias"))?;
        let weights = Array2::from_shape_vec((out, fan_in), w)
            .map_err(|e| Error::ModelFormat(e.to_string()))?;
        layers.push(Dense {
            weights,
            bias: Array1::from(b),
        });
        fan_in = out;
    }
    if r.pos != bytes.len() {
        return Err(Error::ModelFormat(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    RegressionHead::from_layers(layers, activation, seed)
}

/// Short hex digest of the encoded head.
pub fn fingerprint(head: &RegressionHead) -> String {
    hex::encode(&Sha256::digest(encode_head(head))[..8])
}

pub fn save_head(head: &RegressionHead, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &encode_head(head))
}

pub fn load_head(path: impl AsRef<Path>) -> Result<RegressionHead> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_head(&bytes)
}
