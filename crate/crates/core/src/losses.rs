//! Training objectives on `[N, C, H, W]` tensors.

use crate::error::{Error, Result};
use crate::tensor::Var;

/// How the spatial-spectral total variation is scaled.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SstvNorm {
    /// Each axis's ℓ1 norm divided by its number of difference sites.
    #[default]
    PerSite,
    /// Plain ℓ1 norms, summed and averaged over the batch.
    RawSum,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    /// Weight of the SSTV term.
    pub alpha: f64,
    pub sstv_norm: SstvNorm,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: 1e-3,
            sstv_norm: SstvNorm::PerSite,
        }
    }
}

fn check_rank4(x: &Var<'_>, op: &'static str) -> Result<usize> {
    let [n, ..] = x.value().dims4(op)?;
    Ok(n)
}

/// Mean absolute difference over every element.
pub fn l1_loss<'t>(pred: Var<'t>, gt: Var<'t>) -> Result<Var<'t>> {
    check_rank4(&pred, "l1_loss")?;
    if pred.shape() != gt.shape() {
        return Err(Error::mismatch("l1_loss", &pred.shape(), &gt.shape()));
    }
    Ok(pred.sub(gt)?.abs().mean())
}

/// Total variation along height, width and bands.
///
/// An axis of extent 1 has no difference sites and contributes nothing.
pub fn sstv_loss<'t>(pred: Var<'t>, norm: SstvNorm) -> Result<Var<'t>> {
    let n = check_rank4(&pred, "sstv_loss")?;
    let mut total: Option<Var<'t>> = None;
    for axis in 1..4 {
        let diff = pred.forward_diff(axis)?.abs();
        let term = match norm {
            SstvNorm::PerSite => diff.mean(),
            SstvNorm::RawSum => diff.sum().scale(1.0 / n.max(1) as f64),
        };
        total = Some(match total {
            Some(t) => t.add(term)?,
            None => term,
        });
    }
    Ok(total.expect("three axes"))
}

/// `l1 + alpha * sstv`; with `alpha == 0` this is the L1 loss itself.
pub fn total_loss<'t>(pred: Var<'t>, gt: Var<'t>, cfg: &LossConfig) -> Result<Var<'t>> {
    if !(cfg.alpha >= 0.0) {
        return Err(Error::Config(format!("alpha must be non-negative, got {}", cfg.alpha)));
    }
    let l1 = l1_loss(pred, gt)?;
    if cfg.alpha == 0.0 {
        return Ok(l1);
    }
    l1.add(sstv_loss(pred, cfg.sstv_norm)?.scale(cfg.alpha))
}
