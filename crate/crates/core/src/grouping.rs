//! Spectral band grouping.
//!
//! A cube with `C` bands is cut into `S = ceil((C - o) / (p - o))` groups of
//! `p` neighbouring bands, consecutive groups sharing `o` bands. Groups start
//! every `p - o` bands; the last group is anchored to the final `p` bands so
//! no band is left out. Branch outputs are merged back by averaging every
//! band over the groups that contain it.

use std::ops::Range;

use crate::error::{Error, Result};
use crate::tensor::{kernels, Tensor, Var};

/// The band intervals produced by [`plan_groups`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroupingScheme {
    total_bands: usize,
    group_size: usize,
    overlap: usize,
    intervals: Vec<Range<usize>>,
    clamped: bool,
}

/// Plans the band groups for `total_bands` bands, `group_size` bands per
/// group and `overlap` bands shared by neighbours.
///
/// A group size larger than the band count is clamped to a single group
/// over all bands; [`GroupingScheme::warning`] reports it.
pub fn plan_groups(total_bands: usize, group_size: usize, overlap: usize) -> Result<GroupingScheme> {
    if total_bands == 0 || group_size == 0 {
        return Err(Error::Config(format!(
            "band count ({total_bands}) and group size ({group_size}) must be positive"
        )));
    }
    if overlap >= group_size {
        return Err(Error::Config(format!(
            "overlap {overlap} must be smaller than group size {group_size}"
        )));
    }
    if group_size >= total_bands {
        return Ok(GroupingScheme {
            total_bands,
            group_size: total_bands,
            overlap: overlap.min(total_bands - 1),
            intervals: vec![0..total_bands],
            clamped: group_size > total_bands,
        });
    }
    let stride = group_size - overlap;
    let count = (total_bands - overlap).div_ceil(stride);
    let mut intervals: Vec<Range<usize>> = (0..count - 1)
        .map(|k| k * stride..k * stride + group_size)
        .collect();
    intervals.push(total_bands - group_size..total_bands);
    Ok(GroupingScheme {
        total_bands,
        group_size,
        overlap,
        intervals,
        clamped: false,
    })
}

impl GroupingScheme {
    pub fn total_bands(&self) -> usize {
        self.total_bands
    }

    /// Bands per group after clamping.
    pub fn group_size(&self) -> usize {
        self.group_size
    }

    pub fn overlap(&self) -> usize {
        self.overlap
    }

    pub fn intervals(&self) -> &[Range<usize>] {
        &self.intervals
    }

    /// Number of groups `S`.
    pub fn len(&self) -> usize {
        self.intervals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    pub fn warning(&self) -> Option<String> {
        self.clamped.then(|| {
            format!(
                "group size exceeds the {} available bands; using one group over all bands",
                self.total_bands
            )
        })
    }

    /// How many groups contain each band.
    pub fn coverage(&self) -> Vec<usize> {
        let mut counts = vec![0; self.total_bands];
        for r in &self.intervals {
            counts[r.clone()].iter_mut().for_each(|c| *c += 1);
        }
        counts
    }

    fn check_channels(&self, op: &'static str, shape: &[usize]) -> Result<()> {
        match shape {
            &[_, c, _, _] if c == self.total_bands => Ok(()),
            _ => Err(Error::shape(
                op,
                format!("expected {} bands in a 4-D tensor, got {shape:?}", self.total_bands),
            )),
        }
    }

    fn check_parts(&self, op: &'static str, shapes: &[Vec<usize>]) -> Result<[usize; 3]> {
        if shapes.len() != self.len() {
            return Err(Error::shape(
                op,
                format!("expected {} parts, got {}", self.len(), shapes.len()),
            ));
        }
        let first = &shapes[0];
        for s in shapes {
            match s.as_slice() {
                &[_, c, _, _] if c == self.group_size && s == first => {}
                _ => return Err(Error::mismatch(op, first, s)),
            }
        }
        Ok([first[0], first[2], first[3]])
    }
}

/// Slices a `[N, C, H, W]` tensor into one `[N, p, H, W]` tensor per group.
pub fn split(x: &Tensor, scheme: &GroupingScheme) -> Result<Vec<Tensor>> {
    scheme.check_channels("split", x.shape())?;
    scheme
        .intervals
        .iter()
        .map(|r| kernels::slice_channels(x, r.start, r.end))
        .collect()
}

/// [`split`] on a tape.
pub fn split_var<'t>(x: Var<'t>, scheme: &GroupingScheme) -> Result<Vec<Var<'t>>> {
    scheme.check_channels("split", &x.shape())?;
    scheme
        .intervals
        .iter()
        .map(|r| x.slice_channels(r.start, r.end))
        .collect()
}

/// Places every part back at its band positions and averages bands that
/// several parts cover.
pub fn merge_overlap_average(parts: &[Tensor], scheme: &GroupingScheme) -> Result<Tensor> {
    let shapes: Vec<Vec<usize>> = parts.iter().map(|p| p.shape().to_vec()).collect();
    let [n, h, w] = scheme.check_parts("merge_overlap_average", &shapes)?;
    let refs: Vec<&Tensor> = parts.iter().collect();
    Ok(merge_values(&refs, scheme, n, h, w))
}

fn merge_values(parts: &[&Tensor], scheme: &GroupingScheme, n: usize, h: usize, w: usize) -> Tensor {
    let c = scheme.total_bands;
    let p = scheme.group_size;
    let plane = h * w;
    let mut out = Tensor::zeros(&[n, c, h, w]);
    let dst = out.data_mut();
    for (part, range) in parts.iter().zip(&scheme.intervals) {
        let src = part.data();
        for b in 0..n {
            for (k, band) in range.clone().enumerate() {
                let s = &src[(b * p + k) * plane..][..plane];
                let d = &mut dst[(b * c + band) * plane..][..plane];
                d.iter_mut().zip(s).for_each(|(d, s)| *d += s);
            }
        }
    }
    let coverage = scheme.coverage();
    for b in 0..n {
        for (band, &count) in coverage.iter().enumerate() {
            if count > 1 {
                let inv = 1.0 / count as f64;
                dst[(b * c + band) * plane..][..plane]
                    .iter_mut()
                    .for_each(|v| *v *= inv);
            }
        }
    }
    out
}

/// [`merge_overlap_average`] on a tape.
pub fn merge_var<'t>(parts: &[Var<'t>], scheme: &GroupingScheme) -> Result<Var<'t>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::shape("merge_overlap_average", "no parts"))?;
    let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
    let shapes: Vec<Vec<usize>> = values.iter().map(|v| v.shape().to_vec()).collect();
    let [n, h, w] = scheme.check_parts("merge_overlap_average", &shapes)?;
    let refs: Vec<&Tensor> = values.iter().map(|v| v.as_ref()).collect();
    let out = merge_values(&refs, scheme, n, h, w);
    let scheme = scheme.clone();
    Ok(first.tape().custom(parts, out, move |g| {
        // Each part receives its slice of the output gradient, divided by
        // the band's coverage count.
        let coverage = scheme.coverage();
        let c = scheme.total_bands;
        let plane = h * w;
        Ok(scheme
            .intervals
            .iter()
            .map(|range| {
                let mut part = Tensor::zeros(&[n, range.len(), h, w]);
                for b in 0..n {
                    for (k, band) in range.clone().enumerate() {
                        let inv = 1.0 / coverage[band] as f64;
                        let src = &g.data()[(b * c + band) * plane..][..plane];
                        let dst = &mut part.data_mut()[(b * range.len() + k) * plane..][..plane];
                        dst.iter_mut().zip(src).for_each(|(d, s)| *d = s * inv);
                    }
                }
                part
            })
            .collect())
    }))
}
