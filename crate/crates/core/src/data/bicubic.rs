//! Bicubic resizing that follows MATLAB's `imresize` conventions.
//!
//! Keys cubic kernel with `a = -0.5`; when shrinking, the kernel is
//! stretched by the inverse scale (antialiasing); source indices outside the
//! image are reflected symmetrically; each row of weights is normalised to
//! sum to one. Height is resized before width.

use crate::cube::HsiCube;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Down,
    Up,
}

/// Keys cubic convolution kernel with `a = -0.5`.
pub fn cubic(x: f64) -> f64 {
    let ax = x.abs();
    let ax2 = ax * ax;
    let ax3 = ax2 * ax;
    if ax <= 1.0 {
        1.5 * ax3 - 2.5 * ax2 + 1.0
    } else if ax <= 2.0 {
        -0.5 * ax3 + 2.5 * ax2 - 4.0 * ax + 2.0
    } else {
        0.0
    }
}

/// Source taps for each output sample along one axis.
#[derive(Clone, Debug)]
pub(crate) struct Contributions {
    /// `(source indices, weights)` per output sample, zero weights dropped.
    taps: Vec<(Vec<usize>, Vec<f64>)>,
}

impl Contributions {
    pub(crate) fn new(in_len: usize, out_len: usize, scale: f64) -> Self {
        const KERNEL_WIDTH: f64 = 4.0;
        let shrinking = scale < 1.0;
        let width = if shrinking {
            KERNEL_WIDTH / scale
        } else {
            KERNEL_WIDTH
        };
        let kernel = |x: f64| {
            if shrinking {
                scale * cubic(scale * x)
            } else {
                cubic(x)
            }
        };
        let taps_per_sample = width.ceil() as i64 + 2;
        let period = 2 * in_len as i64;
        let taps = (1..=out_len)
            .map(|i| {
                // 1-based coordinates, as in the reference implementation.
                let u = i as f64 / scale + 0.5 * (1.0 - 1.0 / scale);
                let left = (u - width / 2.0).floor() as i64;
                let mut idx = Vec::with_capacity(taps_per_sample as usize);
                let mut wts = Vec::with_capacity(taps_per_sample as usize);
                for j in 0..taps_per_sample {
                    let pos = left + j;
                    let w = kernel(u - pos as f64);
                    // Mirror into [1, in_len] with the edge sample repeated.
                    let m = (pos - 1).rem_euclid(period);
                    let src = if m < in_len as i64 { m } else { period - 1 - m };
                    idx.push(src as usize);
                    wts.push(w);
                }
                let total: f64 = wts.iter().sum();
                let (idx, wts): (Vec<usize>, Vec<f64>) = idx
                    .into_iter()
                    .zip(wts)
                    .filter(|(_, w)| *w != 0.0)
                    .map(|(i, w)| (i, w / total))
                    .unzip();
                (idx, wts)
            })
            .collect();
        Self { taps }
    }

    fn apply(&self, src: &[f64], stride: usize, dst: &mut [f64], dst_stride: usize) {
        for (o, (idx, wts)) in self.taps.iter().enumerate() {
            dst[o * dst_stride] = idx
                .iter()
                .zip(wts)
                .map(|(&i, &w)| w * src[i * stride])
                .sum();
        }
    }

    /// Transpose of [`Self::apply`]: scatters `grad` back onto the source
    /// positions, accumulating into `dst`.
    fn apply_transpose(&self, grad: &[f64], stride: usize, dst: &mut [f64], dst_stride: usize) {
        for (o, (idx, wts)) in self.taps.iter().enumerate() {
            let g = grad[o * stride];
            for (&i, &w) in idx.iter().zip(wts) {
                dst[i * dst_stride] += w * g;
            }
        }
    }
}

/// Resizes one `h × w` plane to `out_h × out_w`.
fn resize_plane(
    src: &[f64],
    w: usize,
    (out_h, out_w): (usize, usize),
    rows: &Contributions,
    cols: &Contributions,
) -> Vec<f64> {
    let mut tmp = vec![0.0; out_h * w];
    for x in 0..w {
        rows.apply(&src[x..], w, &mut tmp[x..], w);
    }
    let mut out = vec![0.0; out_h * out_w];
    for y in 0..out_h {
        cols.apply(&tmp[y * w..(y + 1) * w], 1, &mut out[y * out_w..(y + 1) * out_w], 1);
    }
    out
}

/// Adjoint of [`resize_plane`] for an `h × w` source plane.
fn resize_plane_transpose(
    grad: &[f64],
    (h, w): (usize, usize),
    (out_h, out_w): (usize, usize),
    rows: &Contributions,
    cols: &Contributions,
) -> Vec<f64> {
    let mut tmp = vec![0.0; out_h * w];
    for y in 0..out_h {
        cols.apply_transpose(&grad[y * out_w..(y + 1) * out_w], 1, &mut tmp[y * w..(y + 1) * w], 1);
    }
    let mut out = vec![0.0; h * w];
    for x in 0..w {
        rows.apply_transpose(&tmp[x..], w, &mut out[x..], w);
    }
    out
}

fn output_len(len: usize, factor: usize, direction: Direction) -> usize {
    match direction {
        Direction::Up => len * factor,
        Direction::Down => len.div_ceil(factor),
    }
}

fn check_factor(factor: usize, direction: Direction) -> Result<()> {
    match (direction, factor) {
        (_, 0) => Err(Error::Config("resize factor must be positive".into())),
        (Direction::Down, 2 | 4 | 8) | (Direction::Up, _) => Ok(()),
        (Direction::Down, f) => Err(Error::Config(format!(
            "downsampling factor must be 2, 4 or 8, got {f}"
        ))),
    }
}

struct Plan {
    h: usize,
    w: usize,
    out_shape: Vec<usize>,
    rows: Contributions,
    cols: Contributions,
}

impl Plan {
    fn new(shape: &[usize], factor: usize, direction: Direction) -> Result<Self> {
        check_factor(factor, direction)?;
        if shape.len() < 2 {
            return Err(Error::shape("bicubic_resize", format!("need spatial axes, got {shape:?}")));
        }
        let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
        if h == 0 || w == 0 {
            return Err(Error::shape("bicubic_resize", "empty spatial extent"));
        }
        let (out_h, out_w) = (output_len(h, factor, direction), output_len(w, factor, direction));
        let scale = match direction {
            Direction::Up => factor as f64,
            Direction::Down => 1.0 / factor as f64,
        };
        let mut out_shape = shape.to_vec();
        let n = out_shape.len();
        out_shape[n - 2] = out_h;
        out_shape[n - 1] = out_w;
        Ok(Self {
            h,
            w,
            out_shape,
            rows: Contributions::new(h, out_h, scale),
            cols: Contributions::new(w, out_w, scale),
        })
    }

    fn out_hw(&self) -> (usize, usize) {
        let n = self.out_shape.len();
        (self.out_shape[n - 2], self.out_shape[n - 1])
    }
}

/// Resizes every `H × W` plane of a tensor whose last two axes are spatial.
pub fn resize_planes(x: &Tensor, factor: usize, direction: Direction) -> Result<Tensor> {
    let plan = Plan::new(x.shape(), factor, direction)?;
    let out_hw = plan.out_hw();
    let mut data = Vec::with_capacity(x.len() / (plan.h * plan.w) * out_hw.0 * out_hw.1);
    for plane in x.data().chunks(plan.h * plan.w) {
        data.extend(resize_plane(plane, plan.w, out_hw, &plan.rows, &plan.cols));
    }
    Tensor::new(&plan.out_shape, data)
}

/// Adjoint of [`resize_planes`]: maps a gradient on the resized tensor
/// back to an input of shape `input_shape`.
pub fn resize_planes_backward(
    grad: &Tensor,
    input_shape: &[usize],
    factor: usize,
    direction: Direction,
) -> Result<Tensor> {
    let plan = Plan::new(input_shape, factor, direction)?;
    if grad.shape() != plan.out_shape.as_slice() {
        return Err(Error::mismatch("bicubic_resize_backward", &plan.out_shape, grad.shape()));
    }
    let out_hw = plan.out_hw();
    let mut data = Vec::with_capacity(grad.len() / (out_hw.0 * out_hw.1) * plan.h * plan.w);
    for g in grad.data().chunks(out_hw.0 * out_hw.1) {
        data.extend(resize_plane_transpose(g, (plan.h, plan.w), out_hw, &plan.rows, &plan.cols));
    }
    Tensor::new(input_shape, data)
}

/// Band-wise bicubic resize of a cube by an integer factor.
pub fn bicubic_resize(cube: &HsiCube, factor: usize, direction: Direction) -> Result<HsiCube> {
    HsiCube::from_tensor(resize_planes(cube.tensor(), factor, direction)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_is_the_adjoint() {
        // <R x, g> == <x, R^T g> for random x and g.
        let x = Tensor::from_fn(&[2, 5, 7], |i| ((i * 31) % 17) as f64 / 17.0 - 0.4);
        for (f, dir) in [(2, Direction::Up), (3, Direction::Up), (2, Direction::Down)] {
            let y = resize_planes(&x, f, dir).unwrap();
            let g = Tensor::from_fn(y.shape(), |i| ((i * 13) % 11) as f64 / 11.0 - 0.5);
            let lhs: f64 = y.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
            let back = resize_planes_backward(&g, x.shape(), f, dir).unwrap();
            let rhs: f64 = x.data().iter().zip(back.data()).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-12, "{f} {dir:?}: {lhs} vs {rhs}");
        }
    }

    #[test]
    fn kernel_values() {
        assert_eq!(cubic(0.0), 1.0);
        assert_eq!(cubic(1.0), 0.0);
        assert_eq!(cubic(2.0), 0.0);
        assert_eq!(cubic(0.5), 0.5625);
        assert_eq!(cubic(1.5), -0.0625);
    }

    #[test]
    fn constant_planes_stay_constant() {
        let cube = HsiCube::new(2, 16, 12, vec![0.375; 2 * 16 * 12]).unwrap();
        let down = bicubic_resize(&cube, 4, Direction::Down).unwrap();
        assert_eq!(down.dims(), (2, 4, 3));
        assert!(down.data().iter().all(|v| (v - 0.375).abs() < 1e-15));
        let up = bicubic_resize(&cube, 3, Direction::Up).unwrap();
        assert_eq!(up.dims(), (2, 48, 36));
        assert!(up.data().iter().all(|v| (v - 0.375).abs() < 1e-15));
    }

    #[test]
    fn shape_law() {
        let cube = HsiCube::zeros(1, 64, 64);
        assert_eq!(bicubic_resize(&cube, 4, Direction::Down).unwrap().dims(), (1, 16, 16));
    }

    #[test]
    fn bad_factors_rejected() {
        let cube = HsiCube::zeros(1, 8, 8);
        assert!(bicubic_resize(&cube, 0, Direction::Up).is_err());
        assert!(bicubic_resize(&cube, 3, Direction::Down).is_err());
    }

    #[test]
    fn upsampled_ramp_is_a_ramp_in_the_interior() {
        // Column ramp v(x) = 0.1 + 0.05 x, upsampled by 2. Output column j
        // sits at source coordinate (j + 0.5) / 2 - 0.5.
        let (h, w) = (6, 10);
        let data = (0..h * w).map(|i| 0.1 + 0.05 * (i % w) as f64).collect();
        let cube = HsiCube::new(1, h, w, data).unwrap();
        let up = bicubic_resize(&cube, 2, Direction::Up).unwrap();
        for y in 0..2 * h {
            for j in 4..2 * w - 4 {
                let u = (j as f64 + 0.5) / 2.0 - 0.5;
                assert!((up.get(0, y, j) - (0.1 + 0.05 * u)).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn downsampled_ramp_is_a_ramp_in_the_interior() {
        let (h, w) = (8, 32);
        let data = (0..h * w).map(|i| 0.02 * (i % w) as f64).collect();
        let cube = HsiCube::new(1, h, w, data).unwrap();
        let down = bicubic_resize(&cube, 4, Direction::Down).unwrap();
        for j in 2..6 {
            // Output j covers source pixels 4j..4j+3, centred at 4j + 1.5.
            let u = 4.0 * j as f64 + 1.5;
            assert!((down.get(0, 0, j) - 0.02 * u).abs() < 1e-13);
        }
    }
}
