//! Spectral graph ops: STFT magnitudes, mel projection, and rational
//! resampling, each with an exact backward pass.
//!
//! The STFT forward caches the windowed complex spectra; the backward pass
//! turns output-magnitude gradients into bin gradients
//! `g_k * conj(X_k) / |X_k|`, runs one more FFT per frame, windows, and
//! scatter-adds through the reflect-pad index map. Zero-magnitude bins take
//! subgradient zero.

use std::sync::Arc;

use rustfft::num_complex::Complex;

use super::exec::{for_each_chunk, Executor};
use super::graph::{Graph, TensorId};
use super::tensor::Tensor;
use crate::dsp::{MelBank, ResamplePlan, StftPlan};

/// Split a shape into (rows, time): the trailing dimension is time, all
/// leading dimensions collapse into independent rows.
fn rows_and_time(shape: &[usize]) -> (usize, usize) {
    assert!(!shape.is_empty(), "spectral ops need a time dimension");
    let t = *shape.last().unwrap();
    let rows: usize = shape[..shape.len() - 1].iter().product();
    (rows.max(1), t)
}

impl Graph {
    /// STFT magnitude spectrogram. Input is any `[..., time]` tensor whose
    /// leading dimensions collapse into rows; output is
    /// `[rows, n_bins, frames]`.
    pub fn stft_magnitude(&mut self, x: TensorId, plan: &Arc<StftPlan>) -> TensorId {
        let (rows, t) = rows_and_time(self.value(x).shape());
        let p = plan.params;
        let frames = p.frames(t);
        let n_bins = p.n_bins();
        let map = plan.reflect_map(t);

        let mut mags = Tensor::zeros(vec![rows, n_bins, frames]);
        let mut spectra: Vec<Complex<f64>> = Vec::with_capacity(rows * frames * p.n_fft);
        {
            let xv = self.value(x).data();
            for r in 0..rows {
                plan.forward_row(
                    &xv[r * t..(r + 1) * t],
                    &map,
                    Some(&mut spectra),
                    &mut mags.data_mut()[r * n_bins * frames..(r + 1) * n_bins * frames],
                );
            }
        }
        let (id, requires) = self.push_op(mags, &[x]);
        if requires {
            let plan = Arc::clone(plan);
            self.set_backward(
                id,
                Box::new(move |graph, g, sink| {
                    let shape = graph.value(x).shape().to_vec();
                    let mut gx = Tensor::zeros(shape);
                    let gxd = gx.data_mut();
                    let mut c = vec![Complex::new(0.0, 0.0); p.n_fft];
                    for r in 0..rows {
                        for f in 0..frames {
                            let spec = &spectra[(r * frames + f) * p.n_fft..][..p.n_fft];
                            for (k, slot) in c.iter_mut().enumerate() {
                                *slot = if k < n_bins {
                                    let xk = spec[k];
                                    let m = xk.norm();
                                    if m > 0.0 {
                                        let gk = g.data()[(r * n_bins + k) * frames + f];
                                        xk.conj() * (gk / m)
                                    } else {
                                        Complex::new(0.0, 0.0)
                                    }
                                } else {
                                    Complex::new(0.0, 0.0)
                                };
                            }
                            plan.fft_inplace(&mut c);
                            let win = plan.window();
                            for n in 0..p.n_fft {
                                let contribution = win[n] * c[n].re;
                                if contribution != 0.0 {
                                    gxd[r * t + map[f * p.hop + n]] += contribution;
                                }
                            }
                        }
                    }
                    sink(x, gx);
                }),
            );
        }
        id
    }

    /// Project `[rows, n_bins, frames]` magnitudes onto mel bands:
    /// output `[rows, n_mels, frames]`.
    pub fn mel_project(&mut self, spec: TensorId, bank: &Arc<MelBank>) -> TensorId {
        let shape = self.value(spec).shape().to_vec();
        assert_eq!(shape.len(), 3, "mel_project expects [rows, bins, frames]");
        let (rows, n_bins, frames) = (shape[0], shape[1], shape[2]);
        assert_eq!(n_bins, bank.n_bins, "spectrogram bins do not match the filterbank");
        let n_mels = bank.n_mels;

        let mut out = Tensor::zeros(vec![rows, n_mels, frames]);
        {
            let sv = self.value(spec).data();
            let weights = &bank.weights;
            for_each_chunk(out.data_mut(), frames, |row, acc| {
                let (r, m) = (row / n_mels, row % n_mels);
                acc.fill(0.0);
                for k in 0..n_bins {
                    let w = weights[m * n_bins + k];
                    if w == 0.0 {
                        continue;
                    }
                    let srow = &sv[(r * n_bins + k) * frames..(r * n_bins + k + 1) * frames];
                    for (a, s) in acc.iter_mut().zip(srow) {
                        *a += w * s;
                    }
                }
            });
        }
        let (id, requires) = self.push_op(out, &[spec]);
        if requires {
            let bank = Arc::clone(bank);
            self.set_backward(
                id,
                Box::new(move |_, g, sink| {
                    let mut gs = Tensor::zeros(vec![rows, n_bins, frames]);
                    let gv = g.data();
                    let weights = &bank.weights;
                    for_each_chunk(gs.data_mut(), frames, |row, acc| {
                        let (r, k) = (row / n_bins, row % n_bins);
                        for m in 0..n_mels {
                            let w = weights[m * n_bins + k];
                            if w == 0.0 {
                                continue;
                            }
                            let grow = &gv[(r * n_mels + m) * frames..(r * n_mels + m + 1) * frames];
                            for (a, gvv) in acc.iter_mut().zip(grow) {
                                *a += w * gvv;
                            }
                        }
                    });
                    sink(spec, gs);
                }),
            );
        }
        id
    }

    /// Log-mel spectrogram: STFT magnitudes, mel projection, then a floored
    /// natural log.
    pub fn log_mel(
        &mut self,
        x: TensorId,
        plan: &Arc<StftPlan>,
        bank: &Arc<MelBank>,
        eps: f64,
    ) -> TensorId {
        let mag = self.stft_magnitude(x, plan);
        let mel = self.mel_project(mag, bank);
        self.log_floor(mel, eps)
    }

    /// Rational-rate resampling along the trailing time dimension; all other
    /// dimensions are preserved.
    pub fn resample(&mut self, x: TensorId, plan: &Arc<ResamplePlan>) -> TensorId {
        let in_shape = self.value(x).shape().to_vec();
        let (_rows, t) = rows_and_time(&in_shape);
        let out_t = plan.output_len(t);
        let mut out_shape = in_shape;
        *out_shape.last_mut().unwrap() = out_t;

        let mut out = Tensor::zeros(out_shape);
        {
            let xv = self.value(x).data();
            let plan_ref = plan.as_ref();
            for_each_chunk(out.data_mut(), out_t, |r, chunk| {
                let y = plan_ref.apply(&xv[r * t..(r + 1) * t]);
                chunk.copy_from_slice(&y);
            });
        }
        let (id, requires) = self.push_op(out, &[x]);
        if requires {
            let plan = Arc::clone(plan);
            self.set_backward(
                id,
                Box::new(move |graph, g, sink| {
                    let shape = graph.value(x).shape().to_vec();
                    let mut gx = Tensor::zeros(shape);
                    let gv = g.data();
                    let plan_ref = plan.as_ref();
                    for_each_chunk(gx.data_mut(), t, |r, chunk| {
                        let grow = &gv[r * out_t..(r + 1) * out_t];
                        let back = plan_ref.apply_transpose(grow, t);
                        chunk.copy_from_slice(&back);
                    });
                    sink(x, gx);
                }),
            );
        }
        id
    }
}

/// Value-level STFT magnitudes (no graph, no gradient): `[rows, bins, frames]`
/// flattened row-major.
pub fn stft_magnitude_value(x: &[f64], t: usize, plan: &StftPlan) -> (Vec<f64>, usize) {
    assert_eq!(x.len() % t, 0);
    let rows = x.len() / t;
    let frames = plan.params.frames(t);
    let n_bins = plan.params.n_bins();
    let map = plan.reflect_map(t);
    let mut mags = vec![0.0; rows * n_bins * frames];
    for r in 0..rows {
        plan.forward_row(
            &x[r * t..(r + 1) * t],
            &map,
            None,
            &mut mags[r * n_bins * frames..(r + 1) * n_bins * frames],
        );
    }
    (mags, frames)
}

/// Mel-project value-level magnitudes produced by [`stft_magnitude_value`].
pub fn mel_project_value(mags: &[f64], frames: usize, bank: &MelBank) -> Vec<f64> {
    let n_bins = bank.n_bins;
    assert_eq!(mags.len() % (n_bins * frames), 0);
    let rows = mags.len() / (n_bins * frames);
    let mut out = vec![0.0; rows * bank.n_mels * frames];
    for r in 0..rows {
        for m in 0..bank.n_mels {
            let dst = &mut out[(r * bank.n_mels + m) * frames..(r * bank.n_mels + m + 1) * frames];
            for k in 0..n_bins {
                let w = bank.weights[m * n_bins + k];
                if w == 0.0 {
                    continue;
                }
                let src = &mags[(r * n_bins + k) * frames..(r * n_bins + k + 1) * frames];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += w * s;
                }
            }
        }
    }
    out
}

/// Keep the generic executor machinery exercised from this module too: a
/// resample of many rows, parameterized over the executor, for benches.
pub fn resample_rows<E: Executor>(x: &[f64], rows: usize, plan: &ResamplePlan) -> Vec<f64> {
    assert_eq!(x.len() % rows, 0);
    let t = x.len() / rows;
    let out_t = plan.output_len(t);
    let mut out = vec![0.0; rows * out_t];
    E::chunks(&mut out, out_t, |r, chunk| {
        let y = plan.apply(&x[r * t..(r + 1) * t]);
        chunk.copy_from_slice(&y);
    });
    out
}
