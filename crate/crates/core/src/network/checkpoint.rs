//! Weight files.
//!
//! Layout, all integers `u32` little-endian:
//!
//! ```text
//! "SSPW" version
//! bands group_size overlap n_feats n_blocks scale branch_upscale flags
//! tensor_count
//! per tensor: name_len name_bytes ndim dims... values (f64 LE)
//! ```
//!
//! `flags` bits: 0 grouping, 1 progressive, 2 shared branches, 3 attention,
//! 4 attention pooled from the spatial features.

use std::path::Path;

use super::{init_params, NetworkConfig, SspsrParams};
use crate::error::{Error, Result};
use crate::ssb::AttentionSource;
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"SSPW";
const VERSION: u32 = 1;

fn fail(detail: impl Into<String>) -> Error {
    Error::Format {
        format: "SSPW",
        detail: detail.into(),
    }
}

fn put(buf: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| fail(format!("value {v} does not fit in u32")))?;
    buf.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub fn encode_checkpoint(params: &SspsrParams) -> Result<Vec<u8>> {
    let c = &params.config;
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    for v in [c.bands, c.group_size, c.overlap, c.n_feats, c.n_blocks, c.scale, c.branch_upscale] {
        put(&mut buf, v)?;
    }
    let flags = c.use_grouping as usize
        | (c.use_progressive as usize) << 1
        | (c.share_params as usize) << 2
        | (c.use_attention as usize) << 3
        | ((c.attention_source == AttentionSource::SpatialFeatures) as usize) << 4;
    put(&mut buf, flags)?;
    put(&mut buf, params.store.len())?;
    for (_, name, t) in params.store.iter() {
        put(&mut buf, name.len())?;
        buf.extend_from_slice(name.as_bytes());
        put(&mut buf, t.ndim())?;
        for &d in t.shape() {
            put(&mut buf, d)?;
        }
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(buf)
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
            .ok_or_else(|| fail(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        let b = self.take(8)?;
        Ok(f64::from_le_bytes(b.try_into().expect("8 bytes")))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<SspsrParams> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(fail("bad magic"));
    }
    let version = r.u32()?;
    if version != VERSION as usize {
        return Err(fail(format!("unsupported version {version}")));
    }
    let mut f = [0usize; 8];
    for v in &mut f {
        *v = r.u32()?;
    }
    let flags = f[7];
    let config = NetworkConfig {
        bands: f[0],
        group_size: f[1],
        overlap: f[2],
        n_feats: f[3],
        n_blocks: f[4],
        scale: f[5],
        branch_upscale: f[6],
        use_grouping: flags & 1 != 0,
        use_progressive: flags & 2 != 0,
        share_params: flags & 4 != 0,
        use_attention: flags & 8 != 0,
        attention_source: if flags & 16 != 0 {
            AttentionSource::SpatialFeatures
        } else {
            AttentionSource::SpectralBody
        },
    };
    let mut params = init_params(&config, 0)?;
    let count = r.u32()?;
    if count != params.store.len() {
        return Err(fail(format!(
            "configuration needs {} tensors, file has {count}",
            params.store.len()
        )));
    }
    let mut values = Vec::with_capacity(count);
    for id in params.store.ids() {
        let len = r.u32()?;
        let name = std::str::from_utf8(r.take(len)?).map_err(|_| fail("tensor name is not UTF-8"))?;
        let expected = params.store.name(id);
        if name != expected {
            return Err(fail(format!("expected tensor `{expected}`, found `{name}`")));
        }
        let ndim = r.u32()?;
        let shape = (0..ndim).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        if shape != params.store.get(id).shape() {
            return Err(fail(format!(
                "tensor `{name}` has shape {shape:?}, expected {:?}",
                params.store.get(id).shape()
            )));
        }
        let n = shape.iter().product::<usize>();
        let data = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        values.push(Tensor::new(&shape, data)?);
    }
    if r.pos != bytes.len() {
        return Err(fail(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    params.store.assign(values)?;
    Ok(params)
}

pub fn save_checkpoint(params: &SspsrParams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_checkpoint(params)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<SspsrParams> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
