//! Convolution ops: 1-d, transposed 1-d, and 2-d, with their backward kernels.
//!
//! The raw kernels live in [`kernels`] and are generic over an
//! [`Executor`](super::exec::Executor), so the criterion bench can run the
//! rayon and sequential instantiations of the same code side by side. Work is
//! always split over disjoint output rows (one `(batch, channel)` row or
//! plane per chunk) and every in-row reduction runs sequentially, which keeps
//! results bit-identical across executors and run counts.

use super::exec::{Executor, Parallel};
use super::graph::{Graph, TensorId};
use super::tensor::Tensor;

/// Geometry of a 1-d convolution.
#[derive(Debug, Clone, Copy)]
pub struct Conv1dDims {
    pub batch: usize,
    pub c_in: usize,
    pub t_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl Conv1dDims {
    /// Output length of the forward convolution.
    pub fn t_out(&self) -> usize {
        let span = self.dilation * (self.kernel - 1) + 1;
        let padded = self.t_in + 2 * self.padding;
        assert!(padded >= span, "conv1d kernel span exceeds padded input");
        (padded - span) / self.stride + 1
    }

    /// Output length when used as a transposed convolution.
    pub fn t_out_transpose(&self) -> usize {
        assert_eq!(self.dilation, 1, "transposed conv does not use dilation");
        let full = (self.t_in - 1) * self.stride + self.kernel;
        assert!(full >= 2 * self.padding, "conv_transpose1d padding too large");
        full - 2 * self.padding
    }
}

/// Geometry of a 2-d convolution (dilation fixed at 1).
#[derive(Debug, Clone, Copy)]
pub struct Conv2dDims {
    pub batch: usize,
    pub c_in: usize,
    pub h_in: usize,
    pub w_in: usize,
    pub c_out: usize,
    pub k_h: usize,
    pub k_w: usize,
    pub stride_h: usize,
    pub stride_w: usize,
    pub pad_h: usize,
    pub pad_w: usize,
}

impl Conv2dDims {
    pub fn h_out(&self) -> usize {
        (self.h_in + 2 * self.pad_h - self.k_h) / self.stride_h + 1
    }

    pub fn w_out(&self) -> usize {
        (self.w_in + 2 * self.pad_w - self.k_w) / self.stride_w + 1
    }
}

pub mod kernels {
    use super::*;

    /// Inclusive-exclusive output range `[lo, hi)` such that
    /// `0 <= ot * stride + offset < limit` for all `ot` in the range.
    #[inline]
    fn out_range(offset: isize, stride: usize, limit: usize, n_out: usize) -> (usize, usize) {
        let s = stride as isize;
        let lo = if offset >= 0 {
            0
        } else {
            ((-offset + s - 1) / s) as usize
        };
        let hi_signed = (limit as isize - offset + s - 1) / s;
        let hi = hi_signed.clamp(0, n_out as isize) as usize;
        (lo.min(hi), hi)
    }

    /// `out[b, co, ot] = bias[co] + sum_{ci, k} w[co, ci, k] * x[b, ci, ot*s + k*d - p]`
    pub fn conv1d_fwd<E: Executor>(
        x: &[f64],
        w: &[f64],
        bias: Option<&[f64]>,
        d: &Conv1dDims,
        out: &mut [f64],
    ) {
        let t_out = d.t_out();
        assert_eq!(out.len(), d.batch * d.c_out * t_out);
        let (c_in, t_in, k) = (d.c_in, d.t_in, d.kernel);
        E::chunks(out, t_out, |row, acc| {
            let (b, co) = (row / d.c_out, row % d.c_out);
            let init = bias.map_or(0.0, |bv| bv[co]);
            acc.fill(init);
            for ci in 0..c_in {
                let xrow = &x[(b * c_in + ci) * t_in..(b * c_in + ci + 1) * t_in];
                let wrow = &w[(co * c_in + ci) * k..(co * c_in + ci + 1) * k];
                for (kk, &wv) in wrow.iter().enumerate() {
                    let off = (kk * d.dilation) as isize - d.padding as isize;
                    let (lo, hi) = out_range(off, d.stride, t_in, t_out);
                    for ot in lo..hi {
                        let it = (ot * d.stride) as isize + off;
                        acc[ot] += wv * xrow[it as usize];
                    }
                }
            }
        });
    }

    /// Gradient of `conv1d_fwd` with respect to the input signal.
    pub fn conv1d_bwd_x<E: Executor>(gy: &[f64], w: &[f64], d: &Conv1dDims, gx: &mut [f64]) {
        let t_out = d.t_out();
        assert_eq!(gx.len(), d.batch * d.c_in * d.t_in);
        let (c_in, c_out, k) = (d.c_in, d.c_out, d.kernel);
        E::chunks(gx, d.t_in, |row, acc| {
            let (b, ci) = (row / c_in, row % c_in);
            acc.fill(0.0);
            for co in 0..c_out {
                let grow = &gy[(b * c_out + co) * t_out..(b * c_out + co + 1) * t_out];
                let wrow = &w[(co * c_in + ci) * k..(co * c_in + ci + 1) * k];
                for (kk, &wv) in wrow.iter().enumerate() {
                    let off = (kk * d.dilation) as isize - d.padding as isize;
                    let (lo, hi) = out_range(off, d.stride, d.t_in, t_out);
                    for ot in lo..hi {
                        let it = (ot * d.stride) as isize + off;
                        acc[it as usize] += wv * grow[ot];
                    }
                }
            }
        });
    }

    /// Gradient of `conv1d_fwd` with respect to the weights.
    pub fn conv1d_bwd_w<E: Executor>(gy: &[f64], x: &[f64], d: &Conv1dDims, gw: &mut [f64]) {
        let t_out = d.t_out();
        assert_eq!(gw.len(), d.c_out * d.c_in * d.kernel);
        let (c_in, c_out, t_in, k) = (d.c_in, d.c_out, d.t_in, d.kernel);
        E::chunks(gw, c_in * k, |co, gslice| {
            gslice.fill(0.0);
            for b in 0..d.batch {
                let grow = &gy[(b * c_out + co) * t_out..(b * c_out + co + 1) * t_out];
                for ci in 0..c_in {
                    let xrow = &x[(b * c_in + ci) * t_in..(b * c_in + ci + 1) * t_in];
                    for kk in 0..k {
                        let off = (kk * d.dilation) as isize - d.padding as isize;
                        let (lo, hi) = out_range(off, d.stride, t_in, t_out);
                        let mut acc = 0.0;
                        for ot in lo..hi {
                            let it = (ot * d.stride) as isize + off;
                            acc += grow[ot] * xrow[it as usize];
                        }
                        gslice[ci * k + kk] += acc;
                    }
                }
            }
        });
    }

    /// Gradient of a per-output-channel bias: sum of `gy` over batch and time.
    pub fn conv_bwd_bias<E: Executor>(gy: &[f64], batch: usize, c_out: usize, gb: &mut [f64]) {
        assert_eq!(gy.len() % (batch * c_out), 0);
        let t_out = gy.len() / (batch * c_out);
        E::chunks(gb, 1, |co, slot| {
            let mut acc = 0.0;
            for b in 0..batch {
                let row = &gy[(b * c_out + co) * t_out..(b * c_out + co + 1) * t_out];
                acc += row.iter().sum::<f64>();
            }
            slot[0] = acc;
        });
    }

    /// `out[b, co, it*s + k - p] += x[b, ci, it] * w[ci, co, k]`, weights laid
    /// out `[c_in, c_out, k]`.
    pub fn conv_transpose1d_fwd<E: Executor>(
        x: &[f64],
        w: &[f64],
        bias: Option<&[f64]>,
        d: &Conv1dDims,
        out: &mut [f64],
    ) {
        let t_out = d.t_out_transpose();
        assert_eq!(out.len(), d.batch * d.c_out * t_out);
        let (c_in, c_out, t_in, k) = (d.c_in, d.c_out, d.t_in, d.kernel);
        E::chunks(out, t_out, |row, acc| {
            let (b, co) = (row / c_out, row % c_out);
            let init = bias.map_or(0.0, |bv| bv[co]);
            acc.fill(init);
            for ci in 0..c_in {
                let xrow = &x[(b * c_in + ci) * t_in..(b * c_in + ci + 1) * t_in];
                let wrow = &w[(ci * c_out + co) * k..(ci * c_out + co + 1) * k];
                for (kk, &wv) in wrow.iter().enumerate() {
                    let off = kk as isize - d.padding as isize;
                    // ot = it * s + off for it in [0, t_in): reuse the range
                    // helper with roles swapped.
                    let (lo, hi) = out_range(off, d.stride, t_out, t_in);
                    for it in lo..hi {
                        let ot = (it * d.stride) as isize + off;
                        acc[ot as usize] += wv * xrow[it];
                    }
                }
            }
        });
    }

    /// Gradient of `conv_transpose1d_fwd` with respect to the input.
    pub fn conv_transpose1d_bwd_x<E: Executor>(
        gy: &[f64],
        w: &[f64],
        d: &Conv1dDims,
        gx: &mut [f64],
    ) {
        let t_out = d.t_out_transpose();
        assert_eq!(gx.len(), d.batch * d.c_in * d.t_in);
        let (c_in, c_out, k) = (d.c_in, d.c_out, d.kernel);
        E::chunks(gx, d.t_in, |row, acc| {
            let (b, ci) = (row / c_in, row % c_in);
            acc.fill(0.0);
            for co in 0..c_out {
                let grow = &gy[(b * c_out + co) * t_out..(b * c_out + co + 1) * t_out];
                let wrow = &w[(ci * c_out + co) * k..(ci * c_out + co + 1) * k];
                for (kk, &wv) in wrow.iter().enumerate() {
                    let off = kk as isize - d.padding as isize;
                    let (lo, hi) = out_range(off, d.stride, t_out, d.t_in);
                    for it in lo..hi {
                        let ot = (it * d.stride) as isize + off;
                        acc[it] += wv * grow[ot as usize];
                    }
                }
            }
        });
    }

    /// Gradient of `conv_transpose1d_fwd` with respect to the weights.
    pub fn conv_transpose1d_bwd_w<E: Executor>(
        gy: &[f64],
        x: &[f64],
        d: &Conv1dDims,
        gw: &mut [f64],
    ) {
        let t_out = d.t_out_transpose();
        assert_eq!(gw.len(), d.c_in * d.c_out * d.kernel);
        let (c_in, c_out, t_in, k) = (d.c_in, d.c_out, d.t_in, d.kernel);
        E::chunks(gw, c_out * k, |ci, gslice| {
            gslice.fill(0.0);
            for b in 0..d.batch {
                let xrow = &x[(b * c_in + ci) * t_in..(b * c_in + ci + 1) * t_in];
                for co in 0..c_out {
                    let grow = &gy[(b * c_out + co) * t_out..(b * c_out + co + 1) * t_out];
                    for kk in 0..k {
                        let off = kk as isize - d.padding as isize;
                        let (lo, hi) = out_range(off, d.stride, t_out, t_in);
                        let mut acc = 0.0;
                        for it in lo..hi {
                            let ot = (it * d.stride) as isize + off;
                            acc += xrow[it] * grow[ot as usize];
                        }
                        gslice[co * k + kk] += acc;
                    }
                }
            }
        });
    }

    /// Plain 2-d convolution over `[b, c, h, w]` inputs.
    pub fn conv2d_fwd<E: Executor>(
        x: &[f64],
        w: &[f64],
        bias: Option<&[f64]>,
        d: &Conv2dDims,
        out: &mut [f64],
    ) {
        let (h_out, w_out) = (d.h_out(), d.w_out());
        assert_eq!(out.len(), d.batch * d.c_out * h_out * w_out);
        let plane_in = d.h_in * d.w_in;
        E::chunks(out, h_out * w_out, |row, acc| {
            let (b, co) = (row / d.c_out, row % d.c_out);
            let init = bias.map_or(0.0, |bv| bv[co]);
            for (o, slot) in acc.iter_mut().enumerate() {
                let (oh, ow) = (o / w_out, o % w_out);
                let mut s = init;
                for ci in 0..d.c_in {
                    let xplane = &x[(b * d.c_in + ci) * plane_in..(b * d.c_in + ci + 1) * plane_in];
                    let wbase = ((co * d.c_in + ci) * d.k_h) * d.k_w;
                    for kh in 0..d.k_h {
                        let ih = (oh * d.stride_h + kh) as isize - d.pad_h as isize;
                        if ih < 0 || ih >= d.h_in as isize {
                            continue;
                        }
                        for kw in 0..d.k_w {
                            let iw = (ow * d.stride_w + kw) as isize - d.pad_w as isize;
                            if iw < 0 || iw >= d.w_in as isize {
                                continue;
                            }
                            s += w[wbase + kh * d.k_w + kw]
                                * xplane[ih as usize * d.w_in + iw as usize];
                        }
                    }
                }
                *slot = s;
            }
        });
    }

    /// Gradient of `conv2d_fwd` with respect to the input.
    pub fn conv2d_bwd_x<E: Executor>(gy: &[f64], w: &[f64], d: &Conv2dDims, gx: &mut [f64]) {
        let (h_out, w_out) = (d.h_out(), d.w_out());
        assert_eq!(gx.len(), d.batch * d.c_in * d.h_in * d.w_in);
        let plane_out = h_out * w_out;
        E::chunks(gx, d.h_in * d.w_in, |row, acc| {
            let (b, ci) = (row / d.c_in, row % d.c_in);
            acc.fill(0.0);
            for co in 0..d.c_out {
                let gplane = &gy[(b * d.c_out + co) * plane_out..(b * d.c_out + co + 1) * plane_out];
                let wbase = ((co * d.c_in + ci) * d.k_h) * d.k_w;
                for oh in 0..h_out {
                    for ow in 0..w_out {
                        let g = gplane[oh * w_out + ow];
                        if g == 0.0 {
                            continue;
                        }
                        for kh in 0..d.k_h {
                            let ih = (oh * d.stride_h + kh) as isize - d.pad_h as isize;
                            if ih < 0 || ih >= d.h_in as isize {
                                continue;
                            }
                            for kw in 0..d.k_w {
                                let iw = (ow * d.stride_w + kw) as isize - d.pad_w as isize;
                                if iw < 0 || iw >= d.w_in as isize {
                                    continue;
                                }
                                acc[ih as usize * d.w_in + iw as usize] +=
                                    g * w[wbase + kh * d.k_w + kw];
                            }
                        }
                    }
                }
            }
        });
    }

    /// Gradient of `conv2d_fwd` with respect to the weights.
    pub fn conv2d_bwd_w<E: Executor>(gy: &[f64], x: &[f64], d: &Conv2dDims, gw: &mut [f64]) {
        let (h_out, w_out) = (d.h_out(), d.w_out());
        assert_eq!(gw.len(), d.c_out * d.c_in * d.k_h * d.k_w);
        let plane_in = d.h_in * d.w_in;
        let plane_out = h_out * w_out;
        E::chunks(gw, d.c_in * d.k_h * d.k_w, |co, gslice| {
            gslice.fill(0.0);
            for b in 0..d.batch {
                let gplane = &gy[(b * d.c_out + co) * plane_out..(b * d.c_out + co + 1) * plane_out];
                for ci in 0..d.c_in {
                    let xplane = &x[(b * d.c_in + ci) * plane_in..(b * d.c_in + ci + 1) * plane_in];
                    for kh in 0..d.k_h {
                        for kw in 0..d.k_w {
                            let mut acc = 0.0;
                            for oh in 0..h_out {
                                let ih = (oh * d.stride_h + kh) as isize - d.pad_h as isize;
                                if ih < 0 || ih >= d.h_in as isize {
                                    continue;
                                }
                                for ow in 0..w_out {
                                    let iw = (ow * d.stride_w + kw) as isize - d.pad_w as isize;
                                    if iw < 0 || iw >= d.w_in as isize {
                                        continue;
                                    }
                                    acc += gplane[oh * w_out + ow]
                                        * xplane[ih as usize * d.w_in + iw as usize];
                                }
                            }
                            gslice[(ci * d.k_h + kh) * d.k_w + kw] += acc;
                        }
                    }
                }
            }
        });
    }
}

fn conv1d_dims(graph: &Graph, x: TensorId, w: TensorId, transpose: bool) -> (usize, usize, usize, usize, usize) {
    let xs = graph.value(x).shape();
    let ws = graph.value(w).shape();
    assert_eq!(xs.len(), 3, "conv1d input must be [batch, channels, time]");
    assert_eq!(ws.len(), 3, "conv1d weight must be 3-d");
    let (batch, c_in, t_in) = (xs[0], xs[1], xs[2]);
    let (c_out, k) = if transpose {
        assert_eq!(ws[0], c_in, "conv_transpose1d weight is [c_in, c_out, k]");
        (ws[1], ws[2])
    } else {
        assert_eq!(ws[1], c_in, "conv1d weight is [c_out, c_in, k]");
        (ws[0], ws[2])
    };
    (batch, c_in, t_in, c_out, k)
}

fn check_bias(graph: &Graph, bias: Option<TensorId>, c_out: usize) {
    if let Some(b) = bias {
        assert_eq!(
            graph.value(b).shape(),
            &[c_out],
            "bias must be one value per output channel"
        );
    }
}

impl Graph {
    /// 1-d convolution of `[batch, c_in, t]` by `[c_out, c_in, k]` weights.
    pub fn conv1d(
        &mut self,
        x: TensorId,
        w: TensorId,
        bias: Option<TensorId>,
        stride: usize,
        padding: usize,
        dilation: usize,
    ) -> TensorId {
        let (batch, c_in, t_in, c_out, kernel) = conv1d_dims(self, x, w, false);
        check_bias(self, bias, c_out);
        let dims = Conv1dDims {
            batch,
            c_in,
            t_in,
            c_out,
            kernel,
            stride,
            padding,
            dilation,
        };
        let t_out = dims.t_out();
        let mut out = Tensor::zeros(vec![batch, c_out, t_out]);
        kernels::conv1d_fwd::<Parallel>(
            self.value(x).data(),
            self.value(w).data(),
            bias.map(|b| self.value(b).data().to_vec()).as_deref(),
            &dims,
            out.data_mut(),
        );
        let (id, requires) = self.push_op(out, &[x, w]);
        if requires {
            self.set_backward(
                id,
                Box::new(move |graph, g, sink| {
                    if graph.requires_grad(x) {
                        let mut gx = Tensor::zeros(vec![batch, c_in, t_in]);
                        kernels::conv1d_bwd_x::<Parallel>(
                            g.data(),
                            graph.value(w).data(),
                            &dims,
                            gx.data_mut(),
                        );
                        sink(x, gx);
                    }
                    if graph.requires_grad(w) {
                        let mut gw = Tensor::zeros(vec![c_out, c_in, kernel]);
                        kernels::conv1d_bwd_w::<Parallel>(
                            g.data(),
                            graph.value(x).data(),
                            &dims,
                            gw.data_mut(),
                        );
                        sink(w, gw);
                    }
                    if let Some(b) = bias {
                        if graph.requires_grad(b) {
                            let mut gb = Tensor::zeros(vec![c_out]);
                            kernels::conv_bwd_bias::<Parallel>(g.data(), batch, c_out, gb.data_mut());
                            sink(b, gb);
                        }
                    }
                }),
            );
        }
        id
    }

    /// Transposed 1-d convolution (fractionally strided upsampling) of
    /// `[batch, c_in, t]` by `[c_in, c_out, k]` weights.
    pub fn conv_transpose1d(
        &mut self,
        x: TensorId,
        w: TensorId,
        bias: Option<TensorId>,
        stride: usize,
        padding: usize,
    ) -> TensorId {
        let (batch, c_in, t_in, c_out, kernel) = conv1d_dims(self, x, w, true);
        check_bias(self, bias, c_out);
        let dims = Conv1dDims {
            batch,
            c_in,
            t_in,
            c_out,
            kernel,
            stride,
            padding,
            dilation: 1,
        };
        let t_out = dims.t_out_transpose();
        let mut out = Tensor::zeros(vec![batch, c_out, t_out]);
        kernels::conv_transpose1d_fwd::<Parallel>(
            self.value(x).data(),
            self.value(w).data(),
            bias.map(|b| self.value(b).data().to_vec()).as_deref(),
            &dims,
            out.data_mut(),
        );
        let (id, requires) = self.push_op(out, &[x, w]);
        if requires {
            self.set_backward(
                id,
                Box::new(move |graph, g, sink| {
                    if graph.requires_grad(x) {
                        let mut gx = Tensor::zeros(vec![batch, c_in, t_in]);
                        kernels::conv_transpose1d_bwd_x::<Parallel>(
                            g.data(),
                            graph.value(w).data(),
                            &dims,
                            gx.data_mut(),
                        );
                        sink(x, gx);
                    }
                    if graph.requires_grad(w) {
                        let mut gw = Tensor::zeros(vec![c_in, c_out, kernel]);
                        kernels::conv_transpose1d_bwd_w::<Parallel>(
                            g.data(),
                            graph.value(x).data(),
                            &dims,
                            gw.data_mut(),
                        );
                        sink(w, gw);
                    }
                    if let Some(b) = bias {
                        if graph.requires_grad(b) {
                            let mut gb = Tensor::zeros(vec![c_out]);
                            kernels::conv_bwd_bias::<Parallel>(g.data(), batch, c_out, gb.data_mut());
                            sink(b, gb);
                        }
                    }
                }),
            );
        }
        id
    }

    /// 2-d convolution of `[batch, c_in, h, w]` by `[c_out, c_in, kh, kw]`
    /// weights.
    #[allow(clippy::too_many_arguments)]
    pub fn conv2d(
        &mut self,
        x: TensorId,
        w: TensorId,
        bias: Option<TensorId>,
        stride: (usize, usize),
        padding: (usize, usize),
    ) -> TensorId {
        let xs = self.value(x).shape().to_vec();
        let ws = self.value(w).shape().to_vec();
        assert_eq!(xs.len(), 4, "conv2d input must be [batch, channels, h, w]");
        assert_eq!(ws.len(), 4, "conv2d weight must be [c_out, c_in, kh, kw]");
        assert_eq!(ws[1], xs[1], "conv2d channel mismatch");
        let dims = Conv2dDims {
            batch: xs[0],
            c_in: xs[1],
            h_in: xs[2],
            w_in: xs[3],
            c_out: ws[0],
            k_h: ws[2],
            k_w: ws[3],
            stride_h: stride.0,
            stride_w: stride.1,
            pad_h: padding.0,
            pad_w: padding.1,
        };
        check_bias(self, bias, dims.c_out);
        let (h_out, w_out) = (dims.h_out(), dims.w_out());
        let mut out = Tensor::zeros(vec![dims.batch, dims.c_out, h_out, w_out]);
        kernels::conv2d_fwd::<Parallel>(
            self.value(x).data(),
            self.value(w).data(),
            bias.map(|b| self.value(b).data().to_vec()).as_deref(),
            &dims,
            out.data_mut(),
        );
        let (id, requires) = self.push_op(out, &[x, w]);
        if requires {
            let (batch, c_in, c_out) = (dims.batch, dims.c_in, dims.c_out);
            let (h_in, w_in, k_h, k_w) = (dims.h_in, dims.w_in, dims.k_h, dims.k_w);
            self.set_backward(
                id,
                Box::new(move |graph, g, sink| {
                    if graph.requires_grad(x) {
                        let mut gx = Tensor::zeros(vec![batch, c_in, h_in, w_in]);
                        kernels::conv2d_bwd_x::<Parallel>(
                            g.data(),
                            graph.value(w).data(),
                            &dims,
                            gx.data_mut(),
                        );
                        sink(x, gx);
                    }
                    if graph.requires_grad(w) {
                        let mut gw = Tensor::zeros(vec![c_out, c_in, k_h, k_w]);
                        kernels::conv2d_bwd_w::<Parallel>(
                            g.data(),
                            graph.value(x).data(),
                            &dims,
                            gw.data_mut(),
                        );
                        sink(w, gw);
                    }
                    if let Some(b) = bias {
                        if graph.requires_grad(b) {
                            let mut gb = Tensor::zeros(vec![c_out]);
                            kernels::conv_bwd_bias::<Parallel>(g.data(), batch, c_out, gb.data_mut());
                            sink(b, gb);
                        }
                    }
                }),
            );
        }
        id
    }
}
