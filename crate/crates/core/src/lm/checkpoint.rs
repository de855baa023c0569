//! Binary checkpoint container.
//!
//! Layout (little-endian):
//! ```text
//! magic   8 bytes  "XLNGCKPT"
//! version u32
//! header  u64 length + UTF-8 TOML (model config, step)
//! count   u32
//! tensor  u32 name length, name, u32 rank, u64 dims..., u8 dtype (0 = f32, 1 = f64),
//!         u64 byte length, data
//! ```

use std::fmt::Debug;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use serde::{Deserialize, Serialize};

use super::transformer::{Transformer, TransformerConfig};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"XLNGCKPT";
const VERSION: u32 = 1;

/// Scalar types the transformer is instantiated with.
pub trait Real: Float + FromPrimitive + ToPrimitive + Send + Sync + Debug + Default + 'static {
    const DTYPE: u8;
    const NAME: &'static str;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
    fn size() -> usize {
        std::mem::size_of::<Self>()
    }
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("representable")
    }
}

impl Real for f32 {
    const DTYPE: u8 = 0;
    const NAME: &'static str = "f32";
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }
}

impl Real for f64 {
    const DTYPE: u8 = 1;
    const NAME: &'static str = "f64";
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    step: usize,
    dtype: String,
    model: TransformerConfig,
}

pub fn save_checkpoint<F: Real>(path: &Path, model: &Transformer<F>, step: usize) -> Result<()> {
    let header = toml::to_string(&Header {
        step,
        dtype: F::NAME.into(),
        model: model.config().clone(),
    })
    .map_err(|e| Error::parse("checkpoint header", e.to_string()))?;
    let mut out = Vec::with_capacity(model.params().len() * F::size() + 4096);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    let tensors = model.tensors();
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
        for &d in &t.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        out.push(F::DTYPE);
        let n = t.len();
        out.extend_from_slice(&((n * F::size()) as u64).to_le_bytes());
        for &x in &model.params()[t.offset..t.offset + n] {
            x.write_le(&mut out);
        }
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&out)?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::parse("checkpoint", "truncated file"))?;
        let s = &self.buf[self.pos..end];
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

/// Returns the model and the step it was saved at.
pub fn load_checkpoint<F: Real>(path: &Path) -> Result<(Transformer<F>, usize)> {
    let mut buf = Vec::new();
    fs::File::open(path)?.read_to_end(&mut buf)?;
    let err = |r: &str| Error::parse("checkpoint", r);
    let mut c = Cursor { buf: &buf, pos: 0 };
    if c.take(8)? != MAGIC {
        return Err(err("bad magic"));
    }
    if c.u32()? != VERSION {
        return Err(err("unsupported version"));
    }
    let hlen = c.u64()? as usize;
    let header = std::str::from_utf8(c.take(hlen)?).map_err(|_| err("header is not UTF-8"))?;
    let header: Header = toml::from_str(header).map_err(|e| Error::parse("checkpoint header", e.to_string()))?;
    if header.dtype != F::NAME {
        return Err(err(&format!("stored dtype {} does not match {}", header.dtype, F::NAME)));
    }
    let mut model = Transformer::<F>::zeros(header.model)?;
    let expected = model.tensors().to_vec();
    let count = c.u32()? as usize;
    if count != expected.len() {
        return Err(err("tensor count mismatch"));
    }
    for t in expected {
        let nlen = c.u32()? as usize;
        let name = std::str::from_utf8(c.take(nlen)?).map_err(|_| err("tensor name is not UTF-8"))?;
        if name != t.name {
            return Err(err(&format!("expected tensor {} but found {name}", t.name)));
        }
        let rank = c.u32()? as usize;
        let shape = (0..rank).map(|_| c.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        if shape != t.shape {
            return Err(err(&format!("shape mismatch for {name}")));
        }
        if c.take(1)?[0] != F::DTYPE {
            return Err(err("dtype mismatch"));
        }
        let nbytes = c.u64()? as usize;
        if nbytes != t.len() * F::size() {
            return Err(err("byte length mismatch"));
        }
        let data = c.take(nbytes)?;
        let dst = &mut model.params_mut()[t.offset..t.offset + t.len()];
        for (x, chunk) in dst.iter_mut().zip(data.chunks_exact(F::size())) {
            *x = F::read_le(chunk);
        }
    }
    if c.pos != buf.len() {
        return Err(err("trailing bytes"));
    }
    Ok((model, header.step))
}
