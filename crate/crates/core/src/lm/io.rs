//! Binary checkpoint format (all integers little-endian):
//!
//! ```text
//! magic "RLMCKPT\0" | version u32 | kind u8 | layers, embed, gru_hidden,
//! gru_proj, heads, ffn, vocab u32 | position_encoding u8 | seed u64 |
//! sentences_seen u64 | tag (u32 len + utf8) | dtype u8 (0 = f64, 1 = f32) |
//! tensor count u32 | per tensor: name (u32 len + utf8), ndim u32,
//! dims u64 × ndim, values
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::{ArchitectureSpec, ModelCheckpoint, ModelKind};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"RLMCKPT\0";
const VERSION: u32 = 1;

/// Storage precision for tensor values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F64,
    F32,
}

impl ModelCheckpoint {
    pub fn to_bytes(&self, precision: Precision) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, VERSION);
        out.push(match self.spec.kind {
            ModelKind::Gru => 0,
            ModelKind::Transformer => 1,
        });
        let s = &self.spec;
        for v in [s.layers, s.embed_dim, s.gru_hidden, s.gru_proj, s.heads, s.ffn_dim, s.vocab_size] {
            put_u32(&mut out, v as u32);
        }
        out.push(s.position_encoding as u8);
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&self.sentences_seen.to_le_bytes());
        put_str(&mut out, &self.checkpoint_tag);
        out.push(match precision {
            Precision::F64 => 0,
            Precision::F32 => 1,
        });
        put_u32(&mut out, self.tensors.len() as u32);
        for (name, t) in &self.tensors {
            put_str(&mut out, name);
            put_u32(&mut out, 2);
            out.extend_from_slice(&(t.rows() as u64).to_le_bytes());
            out.extend_from_slice(&(t.cols() as u64).to_le_bytes());
            for &v in t.data() {
                match precision {
                    Precision::F64 => out.extend_from_slice(&v.to_le_bytes()),
                    Precision::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, path };
        if r.take(8)? != MAGIC {
            return Err(r.err("not a checkpoint file"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(r.err(&format!("unsupported checkpoint version {version}")));
        }
        let kind = match r.u8()? {
            0 => ModelKind::Gru,
            1 => ModelKind::Transformer,
            k => return Err(r.err(&format!("unknown model kind {k}"))),
        };
        let mut dims = [0usize; 7];
        for d in &mut dims {
            *d = r.u32()? as usize;
        }
        let spec = ArchitectureSpec {
            kind,
            layers: dims[0],
            embed_dim: dims[1],
            gru_hidden: dims[2],
            gru_proj: dims[3],
            heads: dims[4],
            ffn_dim: dims[5],
            vocab_size: dims[6],
            position_encoding: r.u8()? != 0,
        };
        let seed = r.u64()?;
        let sentences_seen = r.u64()?;
        let checkpoint_tag = r.string()?;
        let f32_storage = match r.u8()? {
            0 => false,
            1 => true,
            d => return Err(r.err(&format!("unknown dtype {d}"))),
        };
        let count = r.u32()?;
        let mut tensors = BTreeMap::new();
        for _ in 0..count {
            let name = r.string()?;
            let ndim = r.u32()? as usize;
            let shape: Vec<usize> = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<_>>()?;
            let (rows, cols) = match shape.as_slice() {
                [n] => (1, *n),
                [a, b] => (*a, *b),
                _ => return Err(r.err(&format!("tensor {name} has {ndim} dimensions"))),
            };
            let n = rows * cols;
            let data = if f32_storage {
                let raw = r.take(4 * n)?;
                raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect()
            } else {
                let raw = r.take(8 * n)?;
                raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect()
            };
            tensors.insert(name, Tensor::from_vec(rows, cols, data));
        }
        let ckpt = ModelCheckpoint { spec, tensors, seed, sentences_seen, checkpoint_tag };
        ckpt.validate()?;
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path, precision: Precision) -> Result<()> {
        let tmp = path.with_extension("ckpt.partial");
        fs::write(&tmp, self.to_bytes(precision)).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    /// `{kind}{layers}_s{seed}_{tag}.ckpt`
    pub fn file_name(&self) -> String {
        checkpoint_file_name(&self.spec, self.seed, &self.checkpoint_tag)
    }
}

pub fn checkpoint_file_name(spec: &ArchitectureSpec, seed: u64, tag: &str) -> String {
    format!("{}_s{seed}_{tag}.ckpt", spec.label())
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn err(&self, msg: &str) -> Error {
        Error::Invalid(format!("{}: byte {}: {msg}", self.path.display(), self.pos))
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(self.err("unexpected end of file"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| self.err("invalid utf-8 string"))
    }
}
