//! Synthetic hyperspectral scenes.
//!
//! A scene is a linear mixture of a few smooth random spectra (endmembers).
//! Abundance maps are smoothed white noise pushed through a softmax, which
//! gives piecewise-smooth regions with soft edges; a little Gaussian noise
//! is added and the result is clipped to `[0, 1]`.

use rand::SeedableRng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::cube::HsiCube;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub bands: usize,
    pub height: usize,
    pub width: usize,
    /// Gaussian sigma, in pixels, of the spatial low-pass on abundances.
    pub smoothness: f64,
    pub n_endmembers: usize,
    /// Softmax gain on the abundance fields; larger means sharper edges.
    pub sharpness: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl SynthConfig {
    pub fn new(bands: usize, height: usize, width: usize, seed: u64) -> Self {
        Self {
            bands,
            height,
            width,
            smoothness: 3.0,
            n_endmembers: 4.min(bands),
            sharpness: 3.0,
            noise_std: 0.002,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.bands == 0 || self.height == 0 || self.width == 0 {
            return Err(Error::Config("synthetic cube extents must be positive".into()));
        }
        if self.n_endmembers == 0 || self.n_endmembers > self.bands {
            return Err(Error::Config(format!(
                "n_endmembers must be in 1..={}, got {}",
                self.bands, self.n_endmembers
            )));
        }
        if !(self.smoothness >= 0.0 && self.sharpness >= 0.0 && self.noise_std >= 0.0) {
            return Err(Error::Config(
                "smoothness, sharpness and noise_std must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Normalised Gaussian taps out to three sigma.
fn gaussian_taps(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let r = (3.0 * sigma).ceil() as i64;
    let taps: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / total).collect()
}

/// Reflects an index into `0..len` (`d c b | a b c d | c b a`).
fn reflect(i: i64, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as i64 - 1);
    let m = i.rem_euclid(period);
    (if m < len as i64 { m } else { period - m }) as usize
}

/// Smooths `len` samples spaced `stride` apart in place.
fn smooth_line(data: &mut [f64], start: usize, stride: usize, len: usize, taps: &[f64]) {
    let r = (taps.len() / 2) as i64;
    let line: Vec<f64> = (0..len).map(|i| data[start + i * stride]).collect();
    for i in 0..len {
        data[start + i * stride] = taps
            .iter()
            .enumerate()
            .map(|(k, t)| t * line[reflect(i as i64 + k as i64 - r, len)])
            .sum();
    }
}

fn smooth_plane(plane: &mut [f64], h: usize, w: usize, sigma: f64) {
    let taps = gaussian_taps(sigma);
    for y in 0..h {
        smooth_line(plane, y * w, 1, w, &taps);
    }
    for x in 0..w {
        smooth_line(plane, x, w, h, &taps);
    }
}

/// Zero mean, unit variance.
fn standardise(v: &mut [f64]) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let std = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    let std = if std > 0.0 { std } else { 1.0 };
    v.iter_mut().for_each(|x| *x = (*x - mean) / std);
}

pub fn synth_cube(cfg: &SynthConfig) -> Result<HsiCube> {
    cfg.validate()?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed);
    let (c, h, w, k) = (cfg.bands, cfg.height, cfg.width, cfg.n_endmembers);

    let spectral_taps = gaussian_taps((c as f64 / 6.0).max(1.0));
    let spectra: Vec<Vec<f64>> = (0..k)
        .map(|_| {
            let mut s: Vec<f64> = (0..c).map(|_| StandardNormal.sample(&mut rng)).collect();
            smooth_line(&mut s, 0, 1, c, &spectral_taps);
            standardise(&mut s);
            let level = 0.25 + 0.5 * rand::Rng::random::<f64>(&mut rng);
            s.iter().map(|v| (level + 0.12 * v).clamp(0.02, 0.98)).collect()
        })
        .collect();

    let mut fields: Vec<Vec<f64>> = (0..k)
        .map(|_| {
            let mut f: Vec<f64> = (0..h * w).map(|_| StandardNormal.sample(&mut rng)).collect();
            smooth_plane(&mut f, h, w, cfg.smoothness);
            standardise(&mut f);
            f
        })
        .collect();
    for i in 0..h * w {
        let max = fields.iter().map(|f| f[i]).fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = fields
            .iter()
            .map(|f| (cfg.sharpness * (f[i] - max)).exp())
            .collect();
        let total: f64 = exps.iter().sum();
        for (f, e) in fields.iter_mut().zip(exps) {
            f[i] = e / total;
        }
    }

    let noise = Normal::new(0.0, cfg.noise_std)
        .map_err(|e| Error::Config(format!("noise_std: {e}")))?;
    let mut data = Vec::with_capacity(c * h * w);
    for b in 0..c {
        for i in 0..h * w {
            let clean: f64 = (0..k).map(|e| fields[e][i] * spectra[e][b]).sum();
            data.push((clean + noise.sample(&mut rng)).clamp(0.0, 1.0));
        }
    }
    HsiCube::new(c, h, w, data)
}

/// Mean absolute Pearson correlation between neighbouring bands.
pub fn adjacent_band_correlation(cube: &HsiCube) -> f64 {
    let pearson = |a: &[f64], b: &[f64]| {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
        for (x, y) in a.iter().zip(b) {
            sab += (x - ma) * (y - mb);
            saa += (x - ma) * (x - ma);
            sbb += (y - mb) * (y - mb);
        }
        if saa == 0.0 || sbb == 0.0 {
            0.0
        } else {
            sab / (saa * sbb).sqrt()
        }
    };
    let c = cube.bands();
    if c < 2 {
        return 1.0;
    }
    (0..c - 1)
        .map(|b| pearson(cube.band(b), cube.band(b + 1)).abs())
        .sum::<f64>()
        / (c - 1) as f64
}
