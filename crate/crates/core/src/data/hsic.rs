//! The HSIC cube format.
//!
//! ```text
//! "HSIC" | version u32 | bands u32 | height u32 | width u32 | samples
//! ```
//!
//! Integers are little-endian; samples are little-endian `f32`, band-major,
//! each inside `[0, 1]`. Samples are widened to `f64` on load, so a cube
//! survives a round trip bit-exactly when its values are `f32`-representable.

use std::path::Path;

use crate::cube::HsiCube;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"HSIC";
const VERSION: u32 = 1;
const HEADER: usize = 20;

fn fail(detail: impl Into<String>) -> Error {
    Error::Format {
        format: "HSIC",
        detail: detail.into(),
    }
}

pub fn encode_cube(cube: &HsiCube) -> Result<Vec<u8>> {
    cube.validate_unit_range()?;
    let (c, h, w) = cube.dims();
    let mut buf = Vec::with_capacity(HEADER + 4 * cube.data().len());
    buf.extend_from_slice(MAGIC);
    for v in [VERSION as usize, c, h, w] {
        let v = u32::try_from(v).map_err(|_| fail(format!("dimension {v} does not fit in u32")))?;
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for &v in cube.data() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(buf)
}

pub fn decode_cube(bytes: &[u8]) -> Result<HsiCube> {
    if bytes.len() < HEADER {
        return Err(fail(format!("{} bytes is shorter than the header", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(fail(format!("bad magic {:?}", &bytes[..4])));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().expect("4 bytes"));
    let version = word(1);
    if version != VERSION {
        return Err(fail(format!("unsupported version {version}")));
    }
    let (c, h, w) = (word(2) as usize, word(3) as usize, word(4) as usize);
    let expected = c
        .checked_mul(h)
        .and_then(|n| n.checked_mul(w))
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(HEADER))
        .ok_or_else(|| fail(format!("header size {c}x{h}x{w} overflows")))?;
    if bytes.len() != expected {
        return Err(fail(format!(
            "header declares {c}x{h}x{w} ({expected} bytes) but payload has {} bytes",
            bytes.len()
        )));
    }
    let data = bytes[HEADER..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
        .collect();
    let cube = HsiCube::new(c, h, w, data)?;
    cube.validate_unit_range().map_err(|e| fail(e.to_string()))?;
    Ok(cube)
}

pub fn save_cube(cube: &HsiCube, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_cube(cube)?).map_err(|e| Error::io(path, e))
}

pub fn load_cube(path: impl AsRef<Path>) -> Result<HsiCube> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_cube(&bytes).map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))
}
