use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use super::kernels::{self, Activation, Broadcast, ConvAlgo};
use super::Tensor;
use crate::error::{Error, Result};

type BackwardFn = Box<dyn Fn(&Tensor) -> Result<Vec<Tensor>>>;

struct Node {
    value: Rc<Tensor>,
    parents: Vec<usize>,
    backward: Option<BackwardFn>,
    requires_grad: bool,
}

/// Records operations for one forward pass so they can be differentiated.
///
/// Nodes are appended in evaluation order, which is already a topological
/// order, so the backward sweep is a single reverse scan.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    conv_algo: ConvAlgo,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape")
            .field("nodes", &self.nodes.borrow().len())
            .field("conv_algo", &self.conv_algo)
            .finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::with_conv_algo(ConvAlgo::default())
    }

    pub fn with_conv_algo(conv_algo: ConvAlgo) -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            conv_algo,
        }
    }

    pub fn conv_algo(&self) -> ConvAlgo {
        self.conv_algo
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Registers a value that gradients should flow into.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.insert(Rc::new(value), Vec::new(), None, true)
    }

    /// Registers a value that needs no gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.insert(Rc::new(value), Vec::new(), None, false)
    }

    fn insert(
        &self,
        value: Rc<Tensor>,
        parents: Vec<usize>,
        backward: Option<BackwardFn>,
        requires_grad: bool,
    ) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            parents,
            backward,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Records an operation with a caller-supplied adjoint.
    ///
    /// `backward` receives the gradient of the output and must return one
    /// gradient per parent, shaped like that parent's value.
    pub fn custom<'t>(
        &'t self,
        parents: &[Var<'t>],
        value: Tensor,
        backward: impl Fn(&Tensor) -> Result<Vec<Tensor>> + 'static,
    ) -> Var<'t> {
        let requires_grad = {
            let nodes = self.nodes.borrow();
            parents.iter().any(|p| nodes[p.id].requires_grad)
        };
        let backward: Option<BackwardFn> = requires_grad.then(|| Box::new(backward) as BackwardFn);
        self.insert(
            Rc::new(value),
            parents.iter().map(|p| p.id).collect(),
            backward,
            requires_grad,
        )
    }

    fn value_of(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be a scalar, got shape {:?}", root.value.shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[loss.id] = Some(Tensor::full(root.value.shape(), 1.0));
        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            let (Some(backward), Some(grad)) = (&node.backward, grads[id].as_ref()) else {
                continue;
            };
            let parent_grads = backward(grad)?;
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for (&pid, pg) in node.parents.iter().zip(parent_grads) {
                if !nodes[pid].requires_grad {
                    continue;
                }
                match &mut grads[pid] {
                    Some(acc) => acc.add_assign(&pg)?,
                    slot @ None => *slot = Some(pg),
                }
            }
            if !node.parents.is_empty() {
                // Interior gradients are no longer needed once propagated.
                grads[id] = None;
            }
        }
        Ok(Gradients { grads })
    }

    pub fn concat_channels<'t>(&'t self, xs: &[Var<'t>]) -> Result<Var<'t>> {
        let values: Vec<Rc<Tensor>> = xs.iter().map(|x| x.value()).collect();
        let refs: Vec<&Tensor> = values.iter().map(|v| v.as_ref()).collect();
        let out = kernels::concat_channels(&refs)?;
        let widths: Vec<usize> = values.iter().map(|v| v.shape()[1]).collect();
        Ok(self.custom(xs, out, move |g| {
            let mut start = 0;
            widths
                .iter()
                .map(|&c| {
                    let part = kernels::slice_channels(g, start, start + c);
                    start += c;
                    part
                })
                .collect()
        }))
    }
}

/// Gradients produced by [`Tape::backward`], indexed by variable.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// The gradient of a leaf, or `None` if the loss does not depend on it.
    pub fn get(&self, var: Var<'_>) -> Option<&Tensor> {
        self.grads.get(var.id).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, var: Var<'_>) -> Option<Tensor> {
        self.grads.get_mut(var.id).and_then(|g| g.take())
    }
}

/// A tensor attached to a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    fn unary(
        self,
        out: Tensor,
        backward: impl Fn(&Tensor) -> Result<Tensor> + 'static,
    ) -> Var<'t> {
        self.tape
            .custom(&[self], out, move |g| Ok(vec![backward(g)?]))
    }

    fn broadcast_binary(
        self,
        other: Var<'t>,
        op: &'static str,
        forward: fn(f64, f64) -> f64,
        // Partial derivatives with respect to (lhs, rhs) at (lhs, rhs).
        partials: fn(f64, f64) -> (f64, f64),
    ) -> Result<Var<'t>> {
        let (a, b) = (self.value(), other.value());
        let mode = kernels::broadcast_of(op, &a, &b)?;
        let out = kernels::binary(op, &a, &b, forward)?;
        Ok(self.tape.custom(&[self, other], out, move |g| {
            let mut ga = Tensor::zeros(a.shape());
            let mut gb = Tensor::zeros(a.shape());
            let plane = match mode {
                Broadcast::Same => 1,
                Broadcast::PerChannel(p) => p,
            };
            for (i, ((&x, &go), (da, db))) in a
                .data()
                .iter()
                .zip(g.data())
                .zip(ga.data_mut().iter_mut().zip(gb.data_mut()))
                .enumerate()
            {
                let y = b.data()[i / plane];
                let (px, py) = partials(x, y);
                *da = px * go;
                *db = py * go;
            }
            let gb = match mode {
                Broadcast::Same => gb,
                Broadcast::PerChannel(p) => kernels::reduce_per_channel(&gb, p, b.shape()),
            };
            Ok(vec![ga, gb])
        }))
    }

    /// Elementwise sum; `other` may be a `[N, C, 1, 1]` per-channel vector.
    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.broadcast_binary(other, "add", |a, b| a + b, |_, _| (1.0, 1.0))
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.broadcast_binary(other, "sub", |a, b| a - b, |_, _| (1.0, -1.0))
    }

    /// Elementwise product; `other` may be a `[N, C, 1, 1]` per-channel vector.
    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.broadcast_binary(other, "mul", |a, b| a * b, |a, b| (b, a))
    }

    pub fn scale(self, factor: f64) -> Var<'t> {
        let out = self.value().map(|v| v * factor);
        self.unary(out, move |g| Ok(g.map(|v| v * factor)))
    }

    pub fn activation(self, kind: Activation) -> Var<'t> {
        let x = self.value();
        let y = Rc::new(kernels::activation(&x, kind));
        let out = (*y).clone();
        self.unary(out, move |g| {
            Ok(Tensor::from_fn(g.shape(), |i| {
                g.data()[i] * kind.derivative(x.data()[i], y.data()[i])
            }))
        })
    }

    pub fn relu(self) -> Var<'t> {
        self.activation(Activation::Relu)
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.activation(Activation::Sigmoid)
    }

    /// Elementwise absolute value; the subgradient at zero is zero.
    pub fn abs(self) -> Var<'t> {
        let x = self.value();
        let out = x.map(f64::abs);
        self.unary(out, move |g| {
            g.zip_map(&x, |g, x| {
                if x > 0.0 {
                    g
                } else if x < 0.0 {
                    -g
                } else {
                    0.0
                }
            })
        })
    }

    pub fn conv2d(self, weight: Var<'t>, bias: Var<'t>, padding: usize) -> Result<Var<'t>> {
        let algo = self.tape.conv_algo;
        let (x, w) = (self.value(), weight.value());
        let out = kernels::conv2d(&x, &w, &bias.value(), padding, algo)?;
        Ok(self.tape.custom(&[self, weight, bias], out, move |g| {
            let (dx, dw, db) = kernels::conv2d_backward(&x, &w, g, padding, algo)?;
            Ok(vec![dx, dw, db])
        }))
    }

    pub fn global_avg_pool(self) -> Result<Var<'t>> {
        let x = self.value();
        let out = kernels::global_avg_pool(&x)?;
        let shape = x.shape().to_vec();
        let area = (shape[2] * shape[3]) as f64;
        Ok(self.unary(out, move |g| {
            let plane = shape[2] * shape[3];
            Ok(Tensor::from_fn(&shape, |i| g.data()[i / plane] / area))
        }))
    }

    pub fn pixel_shuffle(self, r: usize) -> Result<Var<'t>> {
        let out = kernels::pixel_shuffle(&self.value(), r)?;
        Ok(self.unary(out, move |g| kernels::pixel_unshuffle(g, r)))
    }

    pub fn pixel_unshuffle(self, r: usize) -> Result<Var<'t>> {
        let out = kernels::pixel_unshuffle(&self.value(), r)?;
        Ok(self.unary(out, move |g| kernels::pixel_shuffle(g, r)))
    }

    pub fn slice_channels(self, start: usize, end: usize) -> Result<Var<'t>> {
        let x = self.value();
        let out = kernels::slice_channels(&x, start, end)?;
        let shape = x.shape().to_vec();
        Ok(self.unary(out, move |g| {
            let [n, c, h, w] = [shape[0], shape[1], shape[2], shape[3]];
            let plane = h * w;
            let mut dx = Tensor::zeros(&shape);
            let width = end - start;
            for b in 0..n {
                dx.data_mut()[(b * c + start) * plane..(b * c + end) * plane]
                    .copy_from_slice(&g.data()[b * width * plane..(b + 1) * width * plane]);
            }
            Ok(dx)
        }))
    }

    pub fn fully_connected(self, weight: Var<'t>, bias: Var<'t>) -> Result<Var<'t>> {
        let (x, w) = (self.value(), weight.value());
        let out = kernels::fully_connected(&x, &w, &bias.value())?;
        Ok(self.tape.custom(&[self, weight, bias], out, move |g| {
            let (dx, dw, db) = kernels::fully_connected_backward(&x, &w, g)?;
            Ok(vec![dx, dw, db])
        }))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t>> {
        let x = self.value();
        let original = x.shape().to_vec();
        let out = (*x).clone().reshape(shape)?;
        Ok(self.unary(out, move |g| g.clone().reshape(&original)))
    }

    /// Sum of all elements as a scalar.
    pub fn sum(self) -> Var<'t> {
        let x = self.value();
        let shape = x.shape().to_vec();
        self.unary(Tensor::scalar(x.sum()), move |g| {
            Ok(Tensor::full(&shape, g.item()?))
        })
    }

    /// Mean of all elements as a scalar.
    pub fn mean(self) -> Var<'t> {
        let n = self.value().len().max(1) as f64;
        self.sum().scale(1.0 / n)
    }

    /// Forward difference along `axis`; that axis shrinks by one.
    pub fn forward_diff(self, axis: usize) -> Result<Var<'t>> {
        let x = self.value();
        let out = kernels::forward_diff(&x, axis)?;
        let shape = x.shape().to_vec();
        Ok(self.unary(out, move |g| {
            Ok(kernels::forward_diff_backward(g, &shape, axis))
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_ones() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::from_fn(&[2, 3, 4], |i| i as f64));
        let loss = x.sum();
        let grads = tape.backward(loss).unwrap();
        assert!(grads.get(x).unwrap().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn square_gradient() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::full(&[1], 3.0));
        let loss = x.mul(x).unwrap().sum();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[6.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(&[2, 2]));
        assert!(tape.backward(x.relu()).is_err());
    }

    #[test]
    fn constants_receive_no_gradient() {
        let tape = Tape::new();
        let c = tape.constant(Tensor::full(&[3], 2.0));
        let x = tape.leaf(Tensor::full(&[3], 1.0));
        let loss = x.mul(c).unwrap().sum();
        let grads = tape.backward(loss).unwrap();
        assert!(grads.get(c).is_none());
        assert_eq!(grads.get(x).unwrap().data(), &[2.0; 3]);
    }

    #[test]
    fn shared_leaf_accumulates() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::full(&[2], 1.5));
        let loss = x.add(x).unwrap().add(x).unwrap().sum();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[3.0, 3.0]);
    }

    #[test]
    fn repeated_passes_are_deterministic() {
        let run = || {
            let tape = Tape::new();
            let x = tape.leaf(Tensor::from_fn(&[1, 2, 3, 3], |i| (i as f64 * 0.37).sin()));
            let w = tape.leaf(Tensor::from_fn(&[2, 2, 3, 3], |i| (i as f64 * 0.11).cos()));
            let b = tape.leaf(Tensor::zeros(&[2]));
            let loss = x.conv2d(w, b, 1).unwrap().sigmoid().sum();
            let grads = tape.backward(loss).unwrap();
            (loss.value().item().unwrap(), grads.get(w).unwrap().clone())
        };
        let (l1, g1) = run();
        let (l2, g2) = run();
        assert_eq!(l1.to_bits(), l2.to_bits());
        assert_eq!(g1, g2);
    }
}
