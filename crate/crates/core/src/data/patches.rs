use crate::cube::HsiCube;
use crate::error::{Error, Result};

/// Square training patches cut on a regular grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatchSpec {
    pub patch_size: usize,
    pub overlap: usize,
}

impl PatchSpec {
    pub fn new(patch_size: usize, overlap: usize) -> Result<Self> {
        if patch_size == 0 || overlap >= patch_size {
            return Err(Error::Config(format!(
                "patch overlap {overlap} must be smaller than patch size {patch_size}"
            )));
        }
        Ok(Self {
            patch_size,
            overlap,
        })
    }

    pub fn stride(&self) -> usize {
        self.patch_size - self.overlap
    }
}

/// Start offsets along an axis of length `len`, with one extra patch flush
/// to the far edge when the grid leaves a remainder.
pub fn patch_positions(len: usize, spec: PatchSpec) -> Result<Vec<usize>> {
    let p = spec.patch_size;
    if p > len {
        return Err(Error::Config(format!(
            "patch size {p} exceeds image extent {len}"
        )));
    }
    let mut pos: Vec<usize> = (0..=len - p).step_by(spec.stride()).collect();
    if pos.last().is_some_and(|&last| last + p < len) {
        pos.push(len - p);
    }
    Ok(pos)
}

/// All patches, row-major over the grid of positions.
pub fn extract_patches(cube: &HsiCube, spec: PatchSpec) -> Result<Vec<HsiCube>> {
    PatchSpec::new(spec.patch_size, spec.overlap)?;
    let rows = patch_positions(cube.height(), spec)?;
    let cols = patch_positions(cube.width(), spec)?;
    let mut out = Vec::with_capacity(rows.len() * cols.len());
    for &y in &rows {
        for &x in &cols {
            out.push(cube.crop(y, x, spec.patch_size, spec.patch_size)?);
        }
    }
    Ok(out)
}
