//! Reverse-mode automatic differentiation on a flat tape.
//!
//! A [`Graph`] is an append-only tape of nodes. Each node owns its forward
//! value and, when any input requires gradients, a backward closure that maps
//! the node's output gradient to contributions on its parents. Because the
//! tape is append-only, every consumer of a node has a larger index, so a
//! single reverse sweep sees each node's gradient fully accumulated before
//! its backward closure runs.
//!
//! The engine owns accumulation: backward closures hand `(parent, contribution)`
//! pairs to a sink and never add into buffers themselves. Gradients for
//! parameters are retained; gradients for intermediate nodes are dropped as
//! soon as their closure has consumed them.

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(pub(crate) usize);

type BackwardFn = Box<dyn Fn(&Graph, &Tensor, &mut dyn FnMut(TensorId, Tensor))>;

struct Node {
    value: Tensor,
    requires_grad: bool,
    /// Parameters keep their gradient after the sweep; intermediates do not.
    is_param: bool,
    backward: Option<BackwardFn>,
}

/// Gradients produced by one backward sweep, indexed by [`TensorId`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the swept loss with respect to `id`, if one was retained.
    /// `None` means the node was unreachable from the loss (a true zero) or
    /// was not a parameter.
    pub fn get(&self, id: TensorId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    /// Remove and return the gradient for `id`.
    pub fn take(&mut self, id: TensorId) -> Option<Tensor> {
        self.grads.get_mut(id.0).and_then(|g| g.take())
    }
}

/// Append-only autodiff tape.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    /// Number of nodes currently on the tape.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant input: participates in forward math, receives no gradient.
    pub fn leaf(&mut self, value: Tensor) -> TensorId {
        self.push(value, false, false)
    }

    /// Trainable input: requires gradients and retains them after backward.
    pub fn param(&mut self, value: Tensor) -> TensorId {
        self.push(value, true, true)
    }

    /// Forward value of a node.
    pub fn value(&self, id: TensorId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn requires_grad(&self, id: TensorId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, is_param: bool) -> TensorId {
        self.nodes.push(Node {
            value,
            requires_grad,
            is_param,
            backward: None,
        });
        TensorId(self.nodes.len() - 1)
    }

    /// Append an op output whose gradient flows to `parents`. The backward
    /// closure is attached afterwards via [`set_backward`] so it can capture
    /// the returned id.
    pub(crate) fn push_op(&mut self, value: Tensor, parents: &[TensorId]) -> (TensorId, bool) {
        let requires = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        let id = self.push(value, requires, false);
        (id, requires)
    }

    pub(crate) fn set_backward(&mut self, id: TensorId, f: BackwardFn) {
        self.nodes[id.0].backward = Some(f);
    }

    /// Reverse sweep from a scalar `loss` node. Returns retained gradients
    /// (parameters and gradient-requiring leaves).
    pub fn backward(&self, loss: TensorId) -> Result<Gradients> {
        let ln = &self.nodes[loss.0];
        if ln.value.numel() != 1 {
            return Err(Error::ShapeMismatch {
                op: "backward",
                detail: format!("loss must be scalar, got shape {:?}", ln.value.shape()),
            });
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(ln.value.shape().to_vec(), 1.0));

        for i in (0..self.nodes.len()).rev() {
            let Some(grad_out) = grads[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            if let Some(backward) = &node.backward {
                // Split borrows: the closure reads the graph immutably while
                // the sink writes into the gradient table.
                let mut sink = |parent: TensorId, contribution: Tensor| {
                    debug_assert_eq!(
                        self.nodes[parent.0].value.shape(),
                        contribution.shape(),
                        "gradient shape mismatch on node {}",
                        parent.0
                    );
                    if !self.nodes[parent.0].requires_grad {
                        return;
                    }
                    match &mut grads[parent.0] {
                        Some(acc) => acc.add_assign(&contribution),
                        slot @ None => *slot = Some(contribution),
                    }
                };
                backward(self, &grad_out, &mut sink);
            }
            if node.is_param || (node.backward.is_none() && node.requires_grad) {
                grads[i] = Some(grad_out);
            }
        }
        Ok(Gradients { grads })
    }

    // ---- elementwise binary ops -------------------------------------------

    fn assert_same_shape(&self, op: &'static str, a: TensorId, b: TensorId) {
        assert_eq!(
            self.value(a).shape(),
            self.value(b).shape(),
            "{op}: operand shapes differ"
        );
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> TensorId {
        self.assert_same_shape("add", a, b);
        let value = {
            let (va, vb) = (self.value(a), self.value(b));
            let data = va
                .data()
                .iter()
                .zip(vb.data())
                .map(|(x, y)| x + y)
                .collect();
            Tensor::new(va.shape().to_vec(), data)
        };
        let (id, requires) = self.push_op(value, &[a, b]);
        if requires {
            self.set_backward(
                id,
                Box::new(move |_, g, sink| {
                    sink(a, g.clone());
                    sink(b, g.clone());
                }),
            );
        }
        id
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> TensorId {
        self.assert_same_shape("sub", a, b);
        let value = {
            let (va, vb) = (self.value(a), self.value(b));
            let data = va
                .data()
                .iter()
                .zip(vb.data())
                .map(|(x, y)| x - y)
                .collect();
            Tensor::new(va.shape().to_vec(), data)
        };
        let (id, requires) = self.push_op(value, &[a, b]);
        if requires {
            self.set_backward(
                id,
                Box::new(move |_, g, sink| {
                    sink(a, g.clone());
                    let mut neg = g.clone();
                    neg.scale(-1.0);
                    sink(b, neg);
                }),
            );
        }
        id
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> TensorId {
        self.assert_same_shape("mul", a, b);
        let value = {
            let (va, vb) = (self.value(a), self.value(b));
            let data = va
                .data()
                .iter()
                .zip(vb.data())
                .map(|(x, y)| x * y)
                .collect();
            Tensor::new(va.shape().to_vec(), data)
        };
        let (id, requires) = self.push_op(value, &[a, b]);
        if requires {
            self.set_backward(
                id,
                Box::new(move |graph, g, sink| {
                    let vb = graph.value(b);
                    let ga = g
                        .data()
                        .iter()
                        .zip(vb.data())
                        .map(|(gi, y)| gi * y)
                        .collect();
                    sink(a, Tensor::new(g.shape().to_vec(), ga));
                    let va = graph.value(a);
                    let gb = g
                        .data()
                        .iter()
                        .zip(va.data())
                        .map(|(gi, x)| gi * x)
                        .collect();
                    sink(b, Tensor::new(g.shape().to_vec(), gb));
                }),
            );
        }
        id
    }

    // ---- elementwise unary ops --------------------------------------------

    /// Generic unary elementwise op: `fwd` maps input to output, `dfd` maps
    /// (input, output) to the local derivative.
    fn unary(
        &mut self,
        a: TensorId,
        fwd: impl Fn(f64) -> f64,
        dfd: impl Fn(f64, f64) -> f64 + 'static,
    ) -> TensorId {
        let value = {
            let va = self.value(a);
            let data = va.data().iter().map(|&x| fwd(x)).collect();
            Tensor::new(va.shape().to_vec(), data)
        };
        let (id, requires) = self.push_op(value, &[a]);
        if requires {
            self.set_backward(
                id,
                Box::new(move |graph, g, sink| {
                    let va = graph.value(a);
                    let vy = graph.value(id);
                    let data = g
                        .data()
                        .iter()
                        .zip(va.data().iter().zip(vy.data()))
                        .map(|(gi, (&x, &y))| gi * dfd(x, y))
                        .collect();
                    sink(a, Tensor::new(g.shape().to_vec(), data));
                }),
            );
        }
        id
    }

    pub fn add_scalar(&mut self, a: TensorId, c: f64) -> TensorId {
        self.unary(a, move |x| x + c, |_, _| 1.0)
    }

    pub fn mul_scalar(&mut self, a: TensorId, c: f64) -> TensorId {
        self.unary(a, move |x| x * c, move |_, _| c)
    }

    pub fn square(&mut self, a: TensorId) -> TensorId {
        self.unary(a, |x| x * x, |x, _| 2.0 * x)
    }

    /// Absolute value with subgradient 0 at the origin.
    pub fn abs(&mut self, a: TensorId) -> TensorId {
        self.unary(
            a,
            |x| x.abs(),
            |x, _| {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            },
        )
    }

    /// Natural log of the input clamped below at `eps`; the clamped region
    /// is flat, so its gradient is zero.
    pub fn log_floor(&mut self, a: TensorId, eps: f64) -> TensorId {
        assert!(eps > 0.0, "log_floor needs a positive floor");
        self.unary(
            a,
            move |x| x.max(eps).ln(),
            move |x, _| if x >= eps { 1.0 / x } else { 0.0 },
        )
    }

    pub fn leaky_relu(&mut self, a: TensorId, slope: f64) -> TensorId {
        self.unary(
            a,
            move |x| if x > 0.0 { x } else { slope * x },
            move |x, _| if x > 0.0 { 1.0 } else { slope },
        )
    }

    pub fn tanh(&mut self, a: TensorId) -> TensorId {
        self.unary(a, |x| x.tanh(), |_, y| 1.0 - y * y)
    }

    // ---- reductions ---------------------------------------------------------

    pub fn sum_all(&mut self, a: TensorId) -> TensorId {
        let total: f64 = self.value(a).data().iter().sum();
        let (id, requires) = self.push_op(Tensor::scalar(total), &[a]);
        if requires {
            self.set_backward(
                id,
                Box::new(move |graph, g, sink| {
                    let gv = g.data()[0];
                    let shape = graph.value(a).shape().to_vec();
                    sink(a, Tensor::full(shape, gv));
                }),
            );
        }
        id
    }

    pub fn mean_all(&mut self, a: TensorId) -> TensorId {
        let n = self.value(a).numel();
        let total: f64 = self.value(a).data().iter().sum();
        let (id, requires) = self.push_op(Tensor::scalar(total / n as f64), &[a]);
        if requires {
            self.set_backward(
                id,
                Box::new(move |graph, g, sink| {
                    let gv = g.data()[0] / n as f64;
                    let shape = graph.value(a).shape().to_vec();
                    sink(a, Tensor::full(shape, gv));
                }),
            );
        }
        id
    }

    /// Mean over every dimension except the leading batch dimension:
    /// `[B, ...]` becomes `[B]`.
    pub fn global_mean_pool(&mut self, a: TensorId) -> TensorId {
        let va = self.value(a);
        assert!(!va.shape().is_empty(), "global_mean_pool needs a batch dim");
        let b = va.shape()[0];
        let per = va.numel() / b;
        assert!(per > 0);
        let mut out = vec![0.0; b];
        for (i, chunk) in va.data().chunks(per).enumerate() {
            out[i] = chunk.iter().sum::<f64>() / per as f64;
        }
        let (id, requires) = self.push_op(Tensor::new(vec![b], out), &[a]);
        if requires {
            self.set_backward(
                id,
                Box::new(move |graph, g, sink| {
                    let shape = graph.value(a).shape().to_vec();
                    let mut gx = Tensor::zeros(shape);
                    for (i, chunk) in gx.data_mut().chunks_mut(per).enumerate() {
                        let gv = g.data()[i] / per as f64;
                        for v in chunk {
                            *v = gv;
                        }
                    }
                    sink(a, gx);
                }),
            );
        }
        id
    }

    // ---- shape ops ----------------------------------------------------------

    pub fn reshape(&mut self, a: TensorId, shape: Vec<usize>) -> TensorId {
        let va = self.value(a);
        let numel: usize = shape.iter().product();
        assert_eq!(va.numel(), numel, "reshape changes element count");
        let value = Tensor::new(shape, va.data().to_vec());
        let (id, requires) = self.push_op(value, &[a]);
        if requires {
            self.set_backward(
                id,
                Box::new(move |graph, g, sink| {
                    let shape = graph.value(a).shape().to_vec();
                    sink(a, Tensor::new(shape, g.data().to_vec()));
                }),
            );
        }
        id
    }

    /// Zero-pad the trailing (time) dimension on the right.
    pub fn pad_right_time(&mut self, a: TensorId, pad: usize) -> TensorId {
        let va = self.value(a);
        let shape = va.shape().to_vec();
        let t = *shape.last().expect("pad_right_time needs a time dim");
        let rows = va.numel() / t;
        let mut out_shape = shape;
        *out_shape.last_mut().unwrap() = t + pad;
        let mut out = Tensor::zeros(out_shape);
        for r in 0..rows {
            out.data_mut()[r * (t + pad)..r * (t + pad) + t]
                .copy_from_slice(&va.data()[r * t..(r + 1) * t]);
        }
        let (id, requires) = self.push_op(out, &[a]);
        if requires {
            self.set_backward(
                id,
                Box::new(move |graph, g, sink| {
                    let shape = graph.value(a).shape().to_vec();
                    let mut gx = Tensor::zeros(shape);
                    for r in 0..rows {
                        gx.data_mut()[r * t..(r + 1) * t]
                            .copy_from_slice(&g.data()[r * (t + pad)..r * (t + pad) + t]);
                    }
                    sink(a, gx);
                }),
            );
        }
        id
    }

    /// Slice `[start, start + len)` of the trailing (time) dimension.
    pub fn narrow_time(&mut self, a: TensorId, start: usize, len: usize) -> TensorId {
        let va = self.value(a);
        let shape = va.shape().to_vec();
        let t = *shape.last().expect("narrow_time needs a time dim");
        assert!(start + len <= t, "narrow_time out of range");
        let rows = va.numel() / t;
        let mut out_shape = shape;
        *out_shape.last_mut().unwrap() = len;
        let mut out = Tensor::zeros(out_shape);
        for r in 0..rows {
            out.data_mut()[r * len..(r + 1) * len]
                .copy_from_slice(&va.data()[r * t + start..r * t + start + len]);
        }
        let (id, requires) = self.push_op(out, &[a]);
        if requires {
            self.set_backward(
                id,
                Box::new(move |graph, g, sink| {
                    let shape = graph.value(a).shape().to_vec();
                    let mut gx = Tensor::zeros(shape);
                    for r in 0..rows {
                        gx.data_mut()[r * t + start..r * t + start + len]
                            .copy_from_slice(&g.data()[r * len..(r + 1) * len]);
                    }
                    sink(a, gx);
                }),
            );
        }
        id
    }

    /// Swap the last two dimensions (at least rank 2).
    pub fn transpose_last2(&mut self, a: TensorId) -> TensorId {
        fn permute(src: &Tensor) -> Tensor {
            let shape = src.shape();
            let rank = shape.len();
            assert!(rank >= 2, "transpose_last2 needs rank >= 2");
            let (r, c) = (shape[rank - 2], shape[rank - 1]);
            let outer: usize = shape[..rank - 2].iter().product::<usize>().max(1);
            let mut out_shape = shape.to_vec();
            out_shape.swap(rank - 2, rank - 1);
            let mut out = Tensor::zeros(out_shape);
            for o in 0..outer {
                let src_block = &src.data()[o * r * c..(o + 1) * r * c];
                let dst_block = &mut out.data_mut()[o * r * c..(o + 1) * r * c];
                for i in 0..r {
                    for j in 0..c {
                        dst_block[j * r + i] = src_block[i * c + j];
                    }
                }
            }
            out
        }
        let value = permute(self.value(a));
        let (id, requires) = self.push_op(value, &[a]);
        if requires {
            self.set_backward(
                id,
                Box::new(move |_, g, sink| {
                    sink(a, permute(g));
                }),
            );
        }
        id
    }

    // ---- gradient routing ----------------------------------------------------

    /// Copy of `a`'s value that blocks gradient flow.
    pub fn detach(&mut self, a: TensorId) -> TensorId {
        self.leaf(self.nodes[a.0].value.clone())
    }

    /// Straight-through estimator. The forward value is exactly `surrogate`
    /// (typically a codec round-trip of `a`'s value, computed outside the
    /// graph); the backward pass copies the output gradient to `a` unchanged.
    pub fn straight_through(&mut self, a: TensorId, surrogate: Tensor) -> TensorId {
        assert_eq!(
            self.value(a).shape(),
            surrogate.shape(),
            "straight_through: surrogate shape differs from input"
        );
        let (id, requires) = self.push_op(surrogate, &[a]);
        if requires {
            self.set_backward(
                id,
                Box::new(move |_, g, sink| {
                    sink(a, g.clone());
                }),
            );
        }
        id
    }

    /// Row gather from a `[K, D]` codebook: output row `n` is codebook row
    /// `indices[n]`. Backward scatter-adds output gradients onto the selected
    /// codebook rows.
    pub fn gather_rows(&mut self, codebook: TensorId, indices: Vec<usize>) -> TensorId {
        let cb = self.value(codebook);
        assert_eq!(cb.shape().len(), 2, "gather_rows expects a [K, D] codebook");
        let (k, d) = (cb.shape()[0], cb.shape()[1]);
        let n = indices.len();
        let mut out = Tensor::zeros(vec![n, d]);
        for (row, &idx) in indices.iter().enumerate() {
            assert!(idx < k, "codebook index out of range");
            out.data_mut()[row * d..(row + 1) * d].copy_from_slice(&cb.data()[idx * d..idx * d + d]);
        }
        let (id, requires) = self.push_op(out, &[codebook]);
        if requires {
            self.set_backward(
                id,
                Box::new(move |_, g, sink| {
                    let mut gcb = Tensor::zeros(vec![k, d]);
                    for (row, &idx) in indices.iter().enumerate() {
                        let src = &g.data()[row * d..(row + 1) * d];
                        let dst = &mut gcb.data_mut()[idx * d..idx * d + d];
                        for (o, s) in dst.iter_mut().zip(src) {
                            *o += s;
                        }
                    }
                    sink(codebook, gcb);
                }),
            );
        }
        id
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Central finite difference of `f` at `x0` for a scalar-valued builder.
    fn finite_diff(
        x0: &[f64],
        shape: &[usize],
        f: &dyn Fn(&mut Graph, TensorId) -> TensorId,
    ) -> Vec<f64> {
        let h = 1e-6;
        let mut out = Vec::with_capacity(x0.len());
        for i in 0..x0.len() {
            let mut lo = x0.to_vec();
            let mut hi = x0.to_vec();
            lo[i] -= h;
            hi[i] += h;
            let eval = |data: Vec<f64>| {
                let mut g = Graph::new();
                let x = g.param(Tensor::new(shape.to_vec(), data));
                let y = f(&mut g, x);
                g.value(y).data()[0]
            };
            out.push((eval(hi) - eval(lo)) / (2.0 * h));
        }
        out
    }

    fn check_gradient(x0: &[f64], shape: &[usize], f: &dyn Fn(&mut Graph, TensorId) -> TensorId) {
        let mut g = Graph::new();
        let x = g.param(Tensor::new(shape.to_vec(), x0.to_vec()));
        let y = f(&mut g, x);
        let grads = g.backward(y).unwrap();
        let analytic = grads.get(x).expect("gradient missing").data().to_vec();
        let numeric = finite_diff(x0, shape, f);
        for (i, (a, n)) in analytic.iter().zip(numeric.iter()).enumerate() {
            assert!(
                (a - n).abs() < 1e-5 * (1.0 + n.abs()),
                "gradient mismatch at {i}: analytic {a}, numeric {n}"
            );
        }
    }

    #[test]
    fn elementwise_chain_matches_finite_difference() {
        let x0 = [0.3, -0.7, 1.2, 0.05, -2.0, 0.9];
        check_gradient(&x0, &[6], &|g, x| {
            let a = g.mul_scalar(x, 1.7);
            let b = g.add_scalar(a, -0.2);
            let c = g.tanh(b);
            let d = g.square(c);
            g.mean_all(d)
        });
    }

    #[test]
    fn mul_add_sub_match_finite_difference() {
        let x0 = [0.5, -0.4, 0.8, 0.1];
        check_gradient(&x0, &[4], &|g, x| {
            let two_x = g.mul_scalar(x, 2.0);
            let prod = g.mul(x, two_x);
            let diff = g.sub(prod, x);
            let sum = g.add(diff, x);
            g.sum_all(sum)
        });
    }

    #[test]
    fn abs_and_log_floor_match_finite_difference() {
        // Keep points away from the abs kink and the log floor boundary,
        // where the derivative genuinely jumps.
        let x0 = [0.6, -0.9, 1.4, -0.2];
        check_gradient(&x0, &[4], &|g, x| {
            let a = g.abs(x);
            let l = g.log_floor(a, 1e-5);
            g.mean_all(l)
        });
        // Below the floor the gradient must be exactly zero.
        let mut g = Graph::new();
        let x = g.param(Tensor::new(vec![2], vec![1e-7, 1e-6]));
        let l = g.log_floor(x, 1e-5);
        let m = g.mean_all(l);
        let grads = g.backward(m).unwrap();
        assert!(grads.get(x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn leaky_relu_matches_finite_difference() {
        let x0 = [0.5, -0.5, 2.0, -3.0];
        check_gradient(&x0, &[4], &|g, x| {
            let y = g.leaky_relu(x, 0.1);
            g.sum_all(y)
        });
    }

    #[test]
    fn shape_ops_match_finite_difference() {
        let x0: Vec<f64> = (0..12).map(|i| (i as f64 - 6.0) / 4.0).collect();
        check_gradient(&x0, &[1, 2, 6], &|g, x| {
            let p = g.pad_right_time(x, 2);
            let n = g.narrow_time(p, 1, 5);
            let r = g.reshape(n, vec![2, 5]);
            let s = g.square(r);
            g.sum_all(s)
        });
    }

    #[test]
    fn global_mean_pool_pools_per_batch_element() {
        let mut g = Graph::new();
        let x = g.param(Tensor::new(
            vec![2, 1, 3],
            vec![1.0, 2.0, 3.0, 10.0, 20.0, 30.0],
        ));
        let y = g.global_mean_pool(x);
        assert_eq!(g.value(y).data(), &[2.0, 20.0]);
        let s = g.sum_all(y);
        let grads = g.backward(s).unwrap();
        let gx = grads.get(x).unwrap();
        assert!(gx.data().iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn detach_blocks_gradient() {
        let mut g = Graph::new();
        let x = g.param(Tensor::new(vec![3], vec![1.0, 2.0, 3.0]));
        let d = g.detach(x);
        let y = g.square(d);
        let m = g.mean_all(y);
        let grads = g.backward(m).unwrap();
        assert!(grads.get(x).is_none(), "detach must cut the gradient path");
    }

    #[test]
    fn straight_through_forward_is_bit_exact_and_backward_is_identity() {
        let mut g = Graph::new();
        let x = g.param(Tensor::new(vec![4], vec![0.1, 0.2, 0.3, 0.4]));
        let decoded = Tensor::new(vec![4], vec![0.11, 0.18, 0.33, 0.39]);
        let expected = decoded.data().to_vec();
        let y = g.straight_through(x, decoded);
        // Forward: exactly the surrogate, bit for bit.
        assert!(g
            .value(y)
            .data()
            .iter()
            .zip(expected.iter())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
        // Backward: the gradient passes through unchanged.
        let s = g.sum_all(y);
        let grads = g.backward(s).unwrap();
        assert!(grads.get(x).unwrap().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn gather_rows_scatters_gradients_to_codebook() {
        let mut g = Graph::new();
        let cb = g.param(Tensor::new(vec![3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let picked = g.gather_rows(cb, vec![2, 0, 2]);
        assert_eq!(picked.0 > cb.0, true);
        assert_eq!(g.value(picked).data(), &[5.0, 6.0, 1.0, 2.0, 5.0, 6.0]);
        let s = g.sum_all(picked);
        let grads = g.backward(s).unwrap();
        // Row 2 was picked twice, row 0 once, row 1 never.
        assert_eq!(grads.get(cb).unwrap().data(), &[1.0, 1.0, 0.0, 0.0, 2.0, 2.0]);
    }

    #[test]
    fn transpose_last2_roundtrips_and_routes_gradients() {
        let mut g = Graph::new();
        let x = g.param(Tensor::new(vec![1, 2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let t = g.transpose_last2(x);
        assert_eq!(g.value(t).shape(), &[1, 3, 2]);
        assert_eq!(g.value(t).data(), &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
        let back = g.transpose_last2(t);
        assert_eq!(g.value(back).data(), g.value(x).data());
        // Weight one transposed element so the gradient landing spot is
        // unambiguous.
        let mask = g.leaf(Tensor::new(vec![1, 3, 2], vec![0.0, 0.0, 0.0, 1.0, 0.0, 0.0]));
        let picked = g.mul(t, mask);
        let s = g.sum_all(picked);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[0.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn grad_accumulates_across_multiple_uses() {
        let mut g = Graph::new();
        let x = g.param(Tensor::new(vec![2], vec![3.0, -1.0]));
        let y = g.add(x, x);
        let s = g.sum_all(y);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[2.0, 2.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut g = Graph::new();
        let x = g.param(Tensor::new(vec![2], vec![1.0, 2.0]));
        let y = g.square(x);
        assert!(g.backward(y).is_err());
    }
}
