//! Shared signal-processing primitives: windows, mel filterbanks, windowed-sinc
//! polyphase resampling plans, and FFT-based cross-correlation.
//!
//! Everything here is plain value-level math; the autodiff graph ops wrap
//! these where gradients are needed.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

/// Periodic Hann window of length `n`.
pub fn hann_window(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular mel filterbank (HTK mel scale, unnormalized triangles).
///
/// `weights` is row-major `[n_mels, n_bins]` where `n_bins = n_fft / 2 + 1`.
#[derive(Debug, Clone)]
pub struct MelBank {
    pub n_mels: usize,
    pub n_bins: usize,
    pub weights: Vec<f64>,
}

impl MelBank {
    pub fn new(sample_rate: u32, n_fft: usize, n_mels: usize, f_min: f64, f_max: f64) -> Self {
        assert!(f_min < f_max && f_max <= sample_rate as f64 / 2.0 + 1e-9);
        let n_bins = n_fft / 2 + 1;
        let mel_lo = hz_to_mel(f_min);
        let mel_hi = hz_to_mel(f_max);
        let edges: Vec<f64> = (0..n_mels + 2)
            .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (n_mels + 1) as f64))
            .collect();
        let bin_hz = sample_rate as f64 / n_fft as f64;
        let mut weights = vec![0.0; n_mels * n_bins];
        for m in 0..n_mels {
            let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            for k in 0..n_bins {
                let f = k as f64 * bin_hz;
                let w = if f <= lo || f >= hi {
                    0.0
                } else if f <= mid {
                    (f - lo) / (mid - lo)
                } else {
                    (hi - f) / (hi - mid)
                };
                weights[m * n_bins + k] = w.max(0.0);
            }
        }
        MelBank {
            n_mels,
            n_bins,
            weights,
        }
    }
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

fn gcd(mut a: usize, mut b: usize) -> usize {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

/// Precomputed windowed-sinc polyphase resampling filter.
///
/// Output sample `m` sits at input time `m * down / up`; each of the `up`
/// phases holds `taps` Hann-windowed sinc coefficients normalized to unit DC
/// gain. Out-of-range taps read zeros, so the operation is a fixed linear map
/// of the input signal (which is what makes its adjoint — the backward pass —
/// exact).
#[derive(Debug, Clone)]
pub struct ResamplePlan {
    pub from_rate: u32,
    pub to_rate: u32,
    up: usize,
    down: usize,
    taps: usize,
    half: usize,
    /// Row-major `[up, taps]`.
    filters: Vec<f64>,
}

impl ResamplePlan {
    /// Design a plan. `zero_crossings` controls filter length (quality),
    /// `rolloff` shrinks the cutoff below Nyquist to tame aliasing.
    pub fn new(from_rate: u32, to_rate: u32, zero_crossings: usize, rolloff: f64) -> Self {
        assert!(from_rate > 0 && to_rate > 0 && from_rate != to_rate);
        let g = gcd(from_rate as usize, to_rate as usize);
        let up = to_rate as usize / g;
        let down = from_rate as usize / g;
        // Cutoff in cycles per input sample.
        let fc = 0.5 * rolloff * (up as f64 / down as f64).min(1.0);
        let half = (zero_crossings as f64 / (2.0 * fc)).ceil() as usize;
        let taps = 2 * half + 1;
        let support = half as f64 + 1.0;
        let mut filters = vec![0.0; up * taps];
        for phase in 0..up {
            // Fractional offset of this phase's output instant past its
            // base input sample.
            let frac = (phase * down % up) as f64 / up as f64;
            let row = &mut filters[phase * taps..(phase + 1) * taps];
            let mut sum = 0.0;
            for (j, w) in row.iter_mut().enumerate() {
                let d = j as f64 - half as f64 - frac;
                let hann = 0.5 * (1.0 + (std::f64::consts::PI * d / support).cos());
                *w = 2.0 * fc * sinc(2.0 * fc * d) * hann;
                sum += *w;
            }
            for w in row.iter_mut() {
                *w /= sum;
            }
        }
        ResamplePlan {
            from_rate,
            to_rate,
            up,
            down,
            taps,
            half,
            filters,
        }
    }

    /// Rounded rational output length for an input of `in_len` samples.
    pub fn output_len(&self, in_len: usize) -> usize {
        (in_len * self.up + self.down / 2) / self.down
    }

    #[inline]
    fn tap_origin(&self, m: usize) -> (usize, isize) {
        let phase = m % self.up;
        let base = (m * self.down) / self.up;
        (phase, base as isize - self.half as isize)
    }

    /// Resample `input` into a fresh buffer of `output_len` samples.
    pub fn apply(&self, input: &[f64]) -> Vec<f64> {
        let out_len = self.output_len(input.len());
        let n = input.len() as isize;
        let mut out = vec![0.0; out_len];
        for (m, y) in out.iter_mut().enumerate() {
            let (phase, origin) = self.tap_origin(m);
            let row = &self.filters[phase * self.taps..(phase + 1) * self.taps];
            let mut acc = 0.0;
            for (j, &w) in row.iter().enumerate() {
                let idx = origin + j as isize;
                if idx >= 0 && idx < n {
                    acc += w * input[idx as usize];
                }
            }
            *y = acc;
        }
        out
    }

    /// Adjoint of [`apply`]: scatter output-side gradients back onto an
    /// input-length buffer.
    pub fn apply_transpose(&self, grad_out: &[f64], in_len: usize) -> Vec<f64> {
        let mut gx = vec![0.0; in_len];
        let n = in_len as isize;
        for (m, &g) in grad_out.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let (phase, origin) = self.tap_origin(m);
            let row = &self.filters[phase * self.taps..(phase + 1) * self.taps];
            for (j, &w) in row.iter().enumerate() {
                let idx = origin + j as isize;
                if idx >= 0 && idx < n {
                    gx[idx as usize] += w * g;
                }
            }
        }
        gx
    }
}

/// Short-time Fourier transform geometry.
///
/// Signals are reflect-padded by `(n_fft - hop) / 2` on each side, so an
/// input of length `T` yields exactly `T / hop` frames when `hop` divides
/// `T` (and `floor(T / hop)` otherwise). Frame `f` covers padded samples
/// `[f * hop, f * hop + n_fft)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StftParams {
    pub n_fft: usize,
    pub win_length: usize,
    pub hop: usize,
}

impl StftParams {
    pub fn validate(&self) {
        assert!(self.hop > 0 && self.n_fft >= self.hop, "hop must divide into n_fft's span");
        assert!(self.win_length <= self.n_fft, "window longer than FFT size");
        assert_eq!((self.n_fft - self.hop) % 2, 0, "n_fft - hop must be even");
        assert_eq!((self.n_fft - self.win_length) % 2, 0, "window must center in the frame");
    }

    /// Reflect padding applied to each side of the signal.
    pub fn pad(&self) -> usize {
        (self.n_fft - self.hop) / 2
    }

    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    /// Number of frames for a `t`-sample signal.
    pub fn frames(&self, t: usize) -> usize {
        assert!(t >= self.hop, "signal shorter than one hop");
        (t - self.hop) / self.hop + 1
    }
}

/// Reusable STFT machinery: window, FFT plan, and reflect-pad index maps.
pub struct StftPlan {
    pub params: StftParams,
    /// `n_fft`-long window: a `win_length` periodic Hann centered in the frame.
    window: Vec<f64>,
    fft: std::sync::Arc<dyn rustfft::Fft<f64>>,
}

impl StftPlan {
    pub fn new(params: StftParams) -> Self {
        params.validate();
        let mut window = vec![0.0; params.n_fft];
        let lead = (params.n_fft - params.win_length) / 2;
        window[lead..lead + params.win_length].copy_from_slice(&hann_window(params.win_length));
        let fft = FftPlanner::new().plan_fft_forward(params.n_fft);
        StftPlan {
            params,
            window,
            fft,
        }
    }

    pub fn window(&self) -> &[f64] {
        &self.window
    }

    /// Run the `n_fft`-point forward FFT in place.
    pub fn fft_inplace(&self, buf: &mut [Complex<f64>]) {
        self.fft.process(buf);
    }

    /// Index map from padded positions to source positions for mirror
    /// (edge-excluding) reflection of a `t`-sample signal.
    pub fn reflect_map(&self, t: usize) -> Vec<usize> {
        let pad = self.params.pad();
        assert!(pad < t, "signal too short to reflect-pad: {t} samples, pad {pad}");
        (0..t + 2 * pad)
            .map(|j| {
                let pos = j as isize - pad as isize;
                if pos < 0 {
                    (-pos) as usize
                } else if pos >= t as isize {
                    2 * (t - 1) - pos as usize
                } else {
                    pos as usize
                }
            })
            .collect()
    }

    /// STFT magnitudes of one signal row. `mags` is `[n_bins, frames]`
    /// row-major. When `spectra` is given, the windowed complex spectra are
    /// appended frame by frame (`n_fft` values each) for later backward use.
    pub fn forward_row(
        &self,
        row: &[f64],
        map: &[usize],
        mut spectra: Option<&mut Vec<Complex<f64>>>,
        mags: &mut [f64],
    ) {
        let p = &self.params;
        let frames = p.frames(row.len());
        let n_bins = p.n_bins();
        assert_eq!(mags.len(), n_bins * frames);
        let mut buf = vec![Complex::new(0.0, 0.0); p.n_fft];
        for f in 0..frames {
            for (n, slot) in buf.iter_mut().enumerate() {
                *slot = Complex::new(row[map[f * p.hop + n]] * self.window[n], 0.0);
            }
            self.fft.process(&mut buf);
            for k in 0..n_bins {
                mags[k * frames + f] = buf[k].norm();
            }
            if let Some(acc) = spectra.as_deref_mut() {
                acc.extend_from_slice(&buf);
            }
        }
    }
}

fn next_pow2(n: usize) -> usize {
    n.next_power_of_two()
}

/// Linear cross-correlation of `x` against `y` over lags in
/// `[-max_lag, max_lag]`, returning `(best_lag, normalized_peak)`.
///
/// A positive lag `d` means `y` is `x` delayed by `d` samples, i.e. the
/// aligned signal is `y[n + d]`. The peak is normalized by `‖x‖·‖y‖`, so it
/// lies in `[-1, 1]`; degenerate (all-zero) inputs report a peak of 0.
pub fn correlate_delay(x: &[f64], y: &[f64], max_lag: usize) -> (isize, f64) {
    assert_eq!(x.len(), y.len());
    let len = x.len();
    let max_lag = max_lag.min(len.saturating_sub(1));
    let n = next_pow2(len + max_lag + 1).max(2);
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(n);
    let ifft = planner.plan_fft_inverse(n);

    let mut xf: Vec<Complex<f64>> = x
        .iter()
        .map(|&v| Complex::new(v, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(n)
        .collect();
    let mut yf: Vec<Complex<f64>> = y
        .iter()
        .map(|&v| Complex::new(v, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(n)
        .collect();
    fft.process(&mut xf);
    fft.process(&mut yf);
    // conj(X) * Y, inverse-transformed, gives sum_n x[n] * y[n + lag] at
    // index `lag` (negative lags wrap around).
    let mut prod: Vec<Complex<f64>> = xf
        .iter()
        .zip(yf.iter())
        .map(|(a, b)| a.conj() * b)
        .collect();
    ifft.process(&mut prod);

    let norm = (x.iter().map(|v| v * v).sum::<f64>() * y.iter().map(|v| v * v).sum::<f64>()).sqrt();
    let mut best_lag = 0isize;
    let mut best_val = f64::NEG_INFINITY;
    for d in -(max_lag as isize)..=(max_lag as isize) {
        let idx = if d >= 0 { d as usize } else { n - d.unsigned_abs() };
        let v = prod[idx].re / n as f64;
        if v > best_val {
            best_val = v;
            best_lag = d;
        }
    }
    if norm <= 0.0 {
        (0, 0.0)
    } else {
        (best_lag, best_val / norm)
    }
}

/// Dominant frequency of a signal in Hz, from the zero-padded FFT peak with
/// parabolic interpolation.
pub fn dominant_frequency(x: &[f64], sample_rate: u32) -> f64 {
    let n = next_pow2(x.len() * 4).max(16);
    let win = hann_window(x.len());
    let mut buf: Vec<Complex<f64>> = x
        .iter()
        .zip(win.iter())
        .map(|(&v, &w)| Complex::new(v * w, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(n)
        .collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let half = n / 2;
    let mags: Vec<f64> = buf[..half].iter().map(|c| c.norm()).collect();
    let peak = mags
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let refined = if peak > 0 && peak + 1 < half {
        let (a, b, c) = (mags[peak - 1], mags[peak], mags[peak + 1]);
        let denom = a - 2.0 * b + c;
        if denom.abs() > 1e-12 {
            peak as f64 + 0.5 * (a - c) / denom
        } else {
            peak as f64
        }
    } else {
        peak as f64
    };
    refined * sample_rate as f64 / n as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hann_is_symmetric_periodic() {
        let w = hann_window(8);
        assert!(w[0].abs() < 1e-12);
        assert!((w[4] - 1.0).abs() < 1e-12);
        for i in 1..8 {
            assert!((w[i] - w[8 - i]).abs() < 1e-12);
        }
    }

    #[test]
    fn mel_bank_rows_cover_band() {
        let bank = MelBank::new(22050, 1024, 80, 0.0, 8000.0);
        for m in 0..bank.n_mels {
            let s: f64 = bank.weights[m * bank.n_bins..(m + 1) * bank.n_bins]
                .iter()
                .sum();
            assert!(s > 0.0, "mel row {m} is all-zero");
        }
        assert!(bank.weights.iter().all(|&w| w >= 0.0));
    }

    #[test]
    fn resample_preserves_tone_frequency() {
        let plan = ResamplePlan::new(22050, 16000, 16, 0.99);
        let x: Vec<f64> = (0..22050)
            .map(|i| (2.0 * std::f64::consts::PI * 1000.0 * i as f64 / 22050.0).sin())
            .collect();
        let y = plan.apply(&x);
        assert_eq!(y.len(), 16000);
        let f = dominant_frequency(&y, 16000);
        assert!((f - 1000.0).abs() < 1.0, "peak at {f} Hz");
    }

    #[test]
    fn resample_transpose_is_adjoint() {
        // <A x, g> must equal <x, A^T g> for the linear map to be
        // self-consistent.
        let plan = ResamplePlan::new(22050, 16000, 8, 0.99);
        let x: Vec<f64> = (0..200).map(|i| ((i * 37 % 101) as f64 - 50.0) / 50.0).collect();
        let y = plan.apply(&x);
        let g: Vec<f64> = (0..y.len()).map(|i| ((i * 13 % 97) as f64 - 48.0) / 48.0).collect();
        let gx = plan.apply_transpose(&g, x.len());
        let lhs: f64 = y.iter().zip(g.iter()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(gx.iter()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn correlate_finds_known_delay() {
        let mut x = vec![0.0; 4000];
        for (i, v) in x.iter_mut().enumerate() {
            *v = (2.0 * std::f64::consts::PI * 440.0 * i as f64 / 22050.0).sin()
                * (-(i as f64) / 2000.0).exp();
        }
        let mut y = vec![0.0; 4000];
        let delay = 123usize;
        for i in 0..4000 - delay {
            y[i + delay] = x[i];
        }
        let (d, peak) = correlate_delay(&x, &y, 512);
        assert_eq!(d, delay as isize);
        assert!(peak > 0.9);
    }
}
