//! Full-reference quality indices for hyperspectral cubes.
//!
//! PSNR, SSIM and CC are computed per band and averaged over bands; SAM is
//! averaged over pixels; RMSE is global over all samples. CC and ERGAS take
//! the reference cube first.

use crate::cube::HsiCube;
use crate::error::{Error, Result};

/// PSNR reported for a band whose MSE falls below [`PSNR_MSE_FLOOR`].
pub const PSNR_CAP_DB: f64 = 100.0;
pub const PSNR_MSE_FLOOR: f64 = 1e-10;
/// Guards the SAM denominator for (near-)zero spectra.
pub const SAM_EPS: f64 = 1e-12;

fn check_shapes(op: &'static str, x: &HsiCube, y: &HsiCube) -> Result<()> {
    if x.dims() != y.dims() {
        return Err(Error::mismatch(op, x.tensor().shape(), y.tensor().shape()));
    }
    if x.data().is_empty() {
        return Err(Error::shape(op, "empty cube"));
    }
    Ok(())
}

fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn rmse(x: &HsiCube, y: &HsiCube) -> Result<f64> {
    check_shapes("rmse", x, y)?;
    Ok(mse(x.data(), y.data()).sqrt())
}

pub fn psnr_per_band(x: &HsiCube, y: &HsiCube, data_range: f64) -> Result<Vec<f64>> {
    check_shapes("psnr", x, y)?;
    Ok((0..x.bands())
        .map(|b| {
            let m = mse(x.band(b), y.band(b));
            if m < PSNR_MSE_FLOOR {
                PSNR_CAP_DB
            } else {
                10.0 * (data_range * data_range / m).log10()
            }
        })
        .collect())
}

/// Mean band PSNR in dB.
pub fn psnr(x: &HsiCube, y: &HsiCube, data_range: f64) -> Result<f64> {
    Ok(mean(&psnr_per_band(x, y, data_range)?))
}

/// Mean spectral angle in degrees.
///
/// The cosine is `⟨u, v⟩ / max(‖u‖‖v‖, ε)`, so identical spectra give an
/// angle of exactly zero. Two zero spectra count as identical; a zero
/// spectrum against a non-zero one is a right angle.
pub fn sam(x: &HsiCube, y: &HsiCube) -> Result<f64> {
    check_shapes("sam", x, y)?;
    let (c, h, w) = x.dims();
    let plane = h * w;
    let (xd, yd) = (x.data(), y.data());
    let mut total = 0.0;
    for i in 0..plane {
        let (mut dot, mut uu, mut vv) = (0.0, 0.0, 0.0);
        for b in 0..c {
            let (u, v) = (xd[b * plane + i], yd[b * plane + i]);
            dot += u * v;
            uu += u * u;
            vv += v * v;
        }
        let angle = if uu == 0.0 && vv == 0.0 {
            0.0
        } else {
            let cos = dot / (uu * vv).sqrt().max(SAM_EPS);
            cos.clamp(-1.0, 1.0).acos()
        };
        total += angle;
    }
    Ok((total / plane as f64).to_degrees())
}

/// Per-band Pearson correlation; bands constant in either cube get 0 and
/// are listed in the second return value.
pub fn cc_per_band(x_ref: &HsiCube, y_est: &HsiCube) -> Result<(Vec<f64>, Vec<usize>)> {
    check_shapes("cc", x_ref, y_est)?;
    let mut flagged = Vec::new();
    let values = (0..x_ref.bands())
        .map(|b| {
            let (a, e) = (x_ref.band(b), y_est.band(b));
            let (ma, me) = (mean(a), mean(e));
            let (mut sae, mut saa, mut see) = (0.0, 0.0, 0.0);
            for (p, q) in a.iter().zip(e) {
                sae += (p - ma) * (q - me);
                saa += (p - ma) * (p - ma);
                see += (q - me) * (q - me);
            }
            if saa == 0.0 || see == 0.0 {
                flagged.push(b);
                0.0
            } else {
                (sae / (saa * see).sqrt()).clamp(-1.0, 1.0)
            }
        })
        .collect();
    Ok((values, flagged))
}

/// Mean band correlation.
pub fn cc(x_ref: &HsiCube, y_est: &HsiCube) -> Result<f64> {
    Ok(mean(&cc_per_band(x_ref, y_est)?.0))
}

/// Relative dimensionless global error for scale factor `d`.
pub fn ergas(x_ref: &HsiCube, y_est: &HsiCube, d: f64) -> Result<f64> {
    check_shapes("ergas", x_ref, y_est)?;
    if !(d >= 1.0) {
        return Err(Error::Config(format!("ergas scale factor must be at least 1, got {d}")));
    }
    let mut acc = 0.0;
    for b in 0..x_ref.bands() {
        let m = mean(x_ref.band(b));
        if m == 0.0 {
            return Err(Error::Invalid(format!(
                "ergas undefined: reference band {b} has zero mean"
            )));
        }
        acc += mse(x_ref.band(b), y_est.band(b)) / (m * m);
    }
    Ok(100.0 / d * (acc / x_ref.bands() as f64).sqrt())
}

/// Structural similarity settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SsimParams {
    /// Side of the square Gaussian window.
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub data_range: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            data_range: 1.0,
        }
    }
}

impl SsimParams {
    /// Normalised `window × window` Gaussian weights, row-major.
    pub fn weights(&self) -> Vec<f64> {
        let r = (self.window as f64 - 1.0) / 2.0;
        let g: Vec<f64> = (0..self.window)
            .map(|i| (-(i as f64 - r).powi(2) / (2.0 * self.sigma * self.sigma)).exp())
            .collect();
        let mut w: Vec<f64> = g.iter().flat_map(|a| g.iter().map(move |b| a * b)).collect();
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= total);
        w
    }
}

fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize, p: &SsimParams, weights: &[f64]) -> f64 {
    let k = p.window;
    let c1 = (p.k1 * p.data_range).powi(2);
    let c2 = (p.k2 * p.data_range).powi(2);
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut total = 0.0;
    for y in 0..oh {
        for x in 0..ow {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for dy in 0..k {
                for dx in 0..k {
                    let g = weights[dy * k + dx];
                    let i = (y + dy) * w + x + dx;
                    let (u, v) = (a[i], b[i]);
                    ma += g * u;
                    mb += g * v;
                    saa += g * (u * u);
                    sbb += g * (v * v);
                    sab += g * (u * v);
                }
            }
            let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
            total += ((2.0 * (ma * mb) + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
    }
    total / (oh * ow) as f64
}

pub fn ssim_per_band(x: &HsiCube, y: &HsiCube, params: &SsimParams) -> Result<Vec<f64>> {
    check_shapes("ssim", x, y)?;
    let (c, h, w) = x.dims();
    if params.window == 0 || h < params.window || w < params.window {
        return Err(Error::shape(
            "ssim",
            format!("{h}x{w} bands are smaller than the {0}x{0} window", params.window),
        ));
    }
    let weights = params.weights();
    Ok((0..c)
        .map(|b| ssim_plane(x.band(b), y.band(b), h, w, params, &weights))
        .collect())
}

/// Mean band SSIM.
pub fn ssim(x: &HsiCube, y: &HsiCube, params: &SsimParams) -> Result<f64> {
    Ok(mean(&ssim_per_band(x, y, params)?))
}

/// The six indices for one reconstruction.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub cc: f64,
    pub sam_degrees: f64,
    pub rmse: f64,
    pub ergas: f64,
    pub psnr_db: f64,
    pub ssim: f64,
    pub psnr_per_band: Vec<f64>,
    pub ssim_per_band: Vec<f64>,
    /// Bands whose correlation was undefined and reported as 0.
    pub constant_bands: Vec<usize>,
}

/// Column names matching [`MetricReport::csv_row`].
pub const CSV_HEADER: &str = "cube-id,d,cc,sam,rmse,ergas,psnr,ssim";

impl MetricReport {
    pub fn csv_row(&self, id: &str, d: usize) -> String {
        format!(
            "{id},{d},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            self.cc, self.sam_degrees, self.rmse, self.ergas, self.psnr_db, self.ssim
        )
    }

    /// Field-wise arithmetic mean of the six indices.
    pub fn mean(reports: &[MetricReport]) -> Result<MetricReport> {
        if reports.is_empty() {
            return Err(Error::Invalid("cannot average zero reports".into()));
        }
        let n = reports.len() as f64;
        let avg = |f: fn(&MetricReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        Ok(MetricReport {
            cc: avg(|r| r.cc),
            sam_degrees: avg(|r| r.sam_degrees),
            rmse: avg(|r| r.rmse),
            ergas: avg(|r| r.ergas),
            psnr_db: avg(|r| r.psnr_db),
            ssim: avg(|r| r.ssim),
            psnr_per_band: Vec::new(),
            ssim_per_band: Vec::new(),
            constant_bands: Vec::new(),
        })
    }
}

/// All six indices with the default SSIM window and unit data range.
pub fn evaluate_all(x_ref: &HsiCube, y_est: &HsiCube, d: usize) -> Result<MetricReport> {
    evaluate_with(x_ref, y_est, d, &SsimParams::default())
}

pub fn evaluate_with(
    x_ref: &HsiCube,
    y_est: &HsiCube,
    d: usize,
    ssim_params: &SsimParams,
) -> Result<MetricReport> {
    let (cc_bands, constant_bands) = cc_per_band(x_ref, y_est)?;
    let psnr_per_band = psnr_per_band(x_ref, y_est, ssim_params.data_range)?;
    let ssim_per_band = ssim_per_band(x_ref, y_est, ssim_params)?;
    Ok(MetricReport {
        cc: mean(&cc_bands),
        sam_degrees: sam(x_ref, y_est)?,
        rmse: rmse(x_ref, y_est)?,
        ergas: ergas(x_ref, y_est, d as f64)?,
        psnr_db: mean(&psnr_per_band),
        ssim: mean(&ssim_per_band),
        psnr_per_band,
        ssim_per_band,
        constant_bands,
    })
}
