//! Degradation, patches, synthetic cubes and file formats.

pub mod bicubic;
pub mod composite;
pub mod hsic;
pub mod patches;
pub mod synth;

pub use bicubic::{bicubic_resize, Direction};
pub use composite::{save_composite, write_composite};
pub use hsic::{decode_cube, encode_cube, load_cube, save_cube};
pub use patches::{extract_patches, patch_positions, PatchSpec};
pub use synth::{synth_cube, SynthConfig};

use crate::cube::HsiCube;
use crate::error::Result;

/// The low-resolution observation of `hr`: bicubic downsampling by `scale`.
pub fn degrade(hr: &HsiCube, scale: usize) -> Result<HsiCube> {
    bicubic_resize(hr, scale, Direction::Down)
}
