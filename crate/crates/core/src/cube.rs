use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A hyperspectral image stored band-major as `[bands, height, width]`.
#[derive(Clone, Debug, PartialEq)]
pub struct HsiCube {
    data: Tensor,
}

impl HsiCube {
    pub fn new(bands: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        Ok(Self {
            data: Tensor::new(&[bands, height, width], data)?,
        })
    }

    pub fn zeros(bands: usize, height: usize, width: usize) -> Self {
        Self {
            data: Tensor::zeros(&[bands, height, width]),
        }
    }

    /// Wraps a `[C, H, W]` tensor, or a `[1, C, H, W]` batch of one.
    pub fn from_tensor(t: Tensor) -> Result<Self> {
        let shape = t.shape().to_vec();
        match shape.as_slice() {
            [_, _, _] => Ok(Self { data: t }),
            &[1, c, h, w] => Ok(Self {
                data: t.reshape(&[c, h, w])?,
            }),
            other => Err(Error::shape(
                "HsiCube",
                format!("expected [C, H, W] or [1, C, H, W], got {other:?}"),
            )),
        }
    }

    pub fn bands(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.data.shape()[2]
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.bands(), self.height(), self.width())
    }

    pub fn tensor(&self) -> &Tensor {
        &self.data
    }

    pub fn data(&self) -> &[f64] {
        self.data.data()
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        self.data.data_mut()
    }

    pub fn band(&self, b: usize) -> &[f64] {
        let plane = self.height() * self.width();
        &self.data.data()[b * plane..(b + 1) * plane]
    }

    pub fn band_mut(&mut self, b: usize) -> &mut [f64] {
        let plane = self.height() * self.width();
        &mut self.data.data_mut()[b * plane..(b + 1) * plane]
    }

    pub fn get(&self, b: usize, y: usize, x: usize) -> f64 {
        self.data.data()[(b * self.height() + y) * self.width() + x]
    }

    /// The cube as a `[1, C, H, W]` batch.
    pub fn to_batch(&self) -> Tensor {
        let (c, h, w) = self.dims();
        self.data
            .clone()
            .reshape(&[1, c, h, w])
            .expect("same element count")
    }

    pub fn clamp01(&self) -> Self {
        Self {
            data: self.data.map(|v| v.clamp(0.0, 1.0)),
        }
    }

    /// The spatial window `[y0, y0+h) × [x0, x0+w)` of every band.
    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<Self> {
        if y0 + h > self.height() || x0 + w > self.width() {
            return Err(Error::shape(
                "crop",
                format!(
                    "window {h}x{w} at ({y0}, {x0}) exceeds {}x{}",
                    self.height(),
                    self.width()
                ),
            ));
        }
        let mut out = Vec::with_capacity(self.bands() * h * w);
        for b in 0..self.bands() {
            let band = self.band(b);
            for y in y0..y0 + h {
                out.extend_from_slice(&band[y * self.width() + x0..][..w]);
            }
        }
        Self::new(self.bands(), h, w, out)
    }

    /// Checks that every sample is finite and inside `[0, 1]`.
    pub fn validate_unit_range(&self) -> Result<()> {
        let (_, h, w) = self.dims();
        for (i, &v) in self.data().iter().enumerate() {
            if !(0.0..=1.0).contains(&v) {
                let (b, rest) = (i / (h * w), i % (h * w));
                return Err(Error::Invalid(format!(
                    "sample {v} at band {b}, row {}, col {} is outside [0, 1]",
                    rest / w,
                    rest % w
                )));
            }
        }
        Ok(())
    }
}
