use std::io::Write;
use std::path::Path;

use crate::cube::HsiCube;
use crate::error::{Error, Result};

/// Writes three bands as an 8-bit RGB PNG, clamping samples to `[0, 1]`.
pub fn write_composite(cube: &HsiCube, rgb: [usize; 3], out: impl Write) -> Result<()> {
    let (c, h, w) = cube.dims();
    if let Some(&b) = rgb.iter().find(|&&b| b >= c) {
        return Err(Error::Config(format!(
            "composite band {b} out of range for a {c}-band cube"
        )));
    }
    let to_u32 = |v: usize| {
        u32::try_from(v).map_err(|_| Error::Invalid(format!("image extent {v} too large for PNG")))
    };
    let mut encoder = png::Encoder::new(out, to_u32(w)?, to_u32(h)?);
    encoder.set_color(png::ColorType::Rgb);
    encoder.set_depth(png::BitDepth::Eight);
    let png_err = |e: png::EncodingError| Error::Invalid(format!("PNG encoding failed: {e}"));
    let mut writer = encoder.write_header().map_err(png_err)?;
    let mut pixels = Vec::with_capacity(h * w * 3);
    for i in 0..h * w {
        for &b in &rgb {
            pixels.push((cube.band(b)[i].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    writer.write_image_data(&pixels).map_err(png_err)?;
    writer.finish().map_err(png_err)
}

pub fn save_composite(cube: &HsiCube, rgb: [usize; 3], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_composite(cube, rgb, std::io::BufWriter::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decodes_back_to_the_chosen_bands() {
        let cube = HsiCube::new(3, 1, 2, vec![0.0, 1.0, 0.5, 0.5, 1.0, 0.0]).unwrap();
        let mut bytes = Vec::new();
        write_composite(&cube, [2, 0, 1], &mut bytes).unwrap();
        let mut reader = png::Decoder::new(std::io::Cursor::new(bytes)).read_info().unwrap();
        let mut buf = vec![0; reader.output_buffer_size().unwrap()];
        let info = reader.next_frame(&mut buf).unwrap();
        assert_eq!((info.width, info.height), (2, 1));
        assert_eq!(&buf[..6], &[255, 0, 128, 0, 255, 128]);
    }

    #[test]
    fn band_out_of_range() {
        let cube = HsiCube::zeros(2, 2, 2);
        assert!(write_composite(&cube, [0, 1, 2], Vec::new()).is_err());
    }
}
