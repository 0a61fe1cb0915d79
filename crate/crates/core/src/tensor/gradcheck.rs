//! Central finite-difference checks for tape gradients.
//!
//! The numerical side only ever evaluates the forward pass, so it is
//! independent of every adjoint it checks.

use super::{ConvAlgo, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Step used by the checks unless a caller overrides it.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Outcome of a gradient check, one entry per input tensor.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// `‖g_analytic − g_fd‖∞ / (‖g_fd‖∞ + 1e-12)` for each input.
    pub relative_errors: Vec<f64>,
}

impl GradCheckReport {
    pub fn max_relative_error(&self) -> f64 {
        self.relative_errors.iter().copied().fold(0.0, f64::max)
    }
}

/// Compares tape gradients of a scalar function against central differences.
///
/// `f` builds the scalar on a fresh tape from leaves holding `inputs`.
pub fn check_gradients<F>(inputs: &[Tensor], step: f64, f: F) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    check_gradients_with(ConvAlgo::default(), inputs, step, f)
}

/// [`check_gradients`] on tapes that use the given convolution algorithm.
pub fn check_gradients_with<F>(
    algo: ConvAlgo,
    inputs: &[Tensor],
    step: f64,
    f: F,
) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let tape = Tape::with_conv_algo(algo);
    let leaves: Vec<Var<'_>> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = f(&tape, &leaves)?;
    let grads = tape.backward(loss)?;

    let eval = |probe: &[Tensor]| -> Result<f64> {
        let tape = Tape::with_conv_algo(algo);
        let vars: Vec<Var<'_>> = probe.iter().map(|t| tape.constant(t.clone())).collect();
        let v = f(&tape, &vars)?.value().item()?;
        if !v.is_finite() {
            return Err(Error::NonFinite("gradient check objective".into()));
        }
        Ok(v)
    };

    let mut probe = inputs.to_vec();
    let mut relative_errors = Vec::with_capacity(inputs.len());
    for (i, leaf) in leaves.iter().enumerate() {
        let analytic = grads
            .get(*leaf)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(inputs[i].shape()));
        let mut worst_diff = 0.0f64;
        let mut fd_norm = 0.0f64;
        for j in 0..inputs[i].len() {
            let orig = inputs[i].data()[j];
            probe[i].data_mut()[j] = orig + step;
            let plus = eval(&probe)?;
            probe[i].data_mut()[j] = orig - step;
            let minus = eval(&probe)?;
            probe[i].data_mut()[j] = orig;
            let fd = (plus - minus) / (2.0 * step);
            worst_diff = worst_diff.max((analytic.data()[j] - fd).abs());
            fd_norm = fd_norm.max(fd.abs());
        }
        relative_errors.push(worst_diff / (fd_norm + 1e-12));
    }
    Ok(GradCheckReport { relative_errors })
}

/// Fixed pseudo-random weights for turning a tensor output into a scalar.
///
/// Summing against non-uniform weights keeps every output element's
/// gradient distinct, which a plain `sum` would not.
pub fn projection_weights(shape: &[usize], seed: u64) -> Tensor {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// `Σ out ⊙ weights` for a fixed weight tensor.
pub fn project<'t>(out: Var<'t>, weights: &Tensor) -> Result<Var<'t>> {
    let w = out.tape().constant(weights.clone());
    Ok(out.mul(w)?.sum())
}
