//! Waveform values, WAV file I/O, and the shared log-mel frontend.

use std::path::Path;
use std::sync::Arc;

use crate::autodiff::{Graph, TensorId};
use crate::dsp::{MelBank, ResamplePlan, StftParams, StftPlan};
use crate::error::{Error, Result};

/// Working sample rate of the corpus and the generator output.
pub const SAMPLE_RATE: u32 = 22050;

/// Sample rate the watermark detector operates at.
pub const DETECTOR_SAMPLE_RATE: u32 = 16000;

/// A mono audio signal with its sample rate, samples in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        assert!(sample_rate > 0);
        Waveform {
            samples,
            sample_rate,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        (self.samples.iter().map(|v| v * v).sum::<f64>() / self.samples.len() as f64).sqrt()
    }

    /// Read a WAV file, downmixing multi-channel audio by averaging.
    /// Accepts 16/24/32-bit integer and 32-bit float encodings.
    pub fn read_wav(path: &Path) -> Result<Waveform> {
        let mut reader = hound::WavReader::open(path).map_err(|source| Error::Wav {
            path: path.to_path_buf(),
            source,
        })?;
        let spec = reader.spec();
        let channels = spec.channels as usize;
        if channels == 0 {
            return Err(Error::UnsupportedWav {
                path: path.to_path_buf(),
                detail: "zero channels".into(),
            });
        }
        let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
            (hound::SampleFormat::Int, 16) => reader
                .samples::<i16>()
                .map(|s| s.map(|v| v as f64 / 32768.0))
                .collect::<std::result::Result<_, _>>(),
            (hound::SampleFormat::Int, 24) => reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 / 8388608.0))
                .collect::<std::result::Result<_, _>>(),
            (hound::SampleFormat::Int, 32) => reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 / 2147483648.0))
                .collect::<std::result::Result<_, _>>(),
            (hound::SampleFormat::Float, 32) => reader
                .samples::<f32>()
                .map(|s| s.map(|v| v as f64))
                .collect::<std::result::Result<_, _>>(),
            (format, bits) => {
                return Err(Error::UnsupportedWav {
                    path: path.to_path_buf(),
                    detail: format!("{bits}-bit {format:?}"),
                })
            }
        }
        .map_err(|source| Error::Wav {
            path: path.to_path_buf(),
            source,
        })?;
        let samples = if channels == 1 {
            interleaved
        } else {
            interleaved
                .chunks(channels)
                .map(|frame| frame.iter().sum::<f64>() / channels as f64)
                .collect()
        };
        Ok(Waveform::new(samples, spec.sample_rate))
    }

    /// Write as 16-bit PCM. Out-of-range samples are clamped (with a warning)
    /// rather than wrapped.
    pub fn write_wav(&self, path: &Path) -> Result<()> {
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: self.sample_rate,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut writer = hound::WavWriter::create(path, spec).map_err(|source| Error::Wav {
            path: path.to_path_buf(),
            source,
        })?;
        let mut clipped = 0usize;
        for &v in &self.samples {
            let clamped = v.clamp(-1.0, 1.0);
            if clamped != v {
                clipped += 1;
            }
            let q = (clamped * 32767.0).round() as i16;
            writer.write_sample(q).map_err(|source| Error::Wav {
                path: path.to_path_buf(),
                source,
            })?;
        }
        writer.finalize().map_err(|source| Error::Wav {
            path: path.to_path_buf(),
            source,
        })?;
        if clipped > 0 {
            log::warn!(
                "clamped {clipped} of {} samples while writing {}",
                self.samples.len(),
                path.display()
            );
        }
        Ok(())
    }

    /// A `len`-sample window starting at `start`, zero-padded past the end.
    pub fn crop_or_pad(&self, start: usize, len: usize) -> Vec<f64> {
        let mut out = vec![0.0; len];
        if start < self.samples.len() {
            let avail = (self.samples.len() - start).min(len);
            out[..avail].copy_from_slice(&self.samples[start..start + avail]);
        }
        out
    }

    /// Windowed-sinc resample to `to_rate` (identity when rates match).
    pub fn resampled(&self, to_rate: u32) -> Waveform {
        if to_rate == self.sample_rate {
            return self.clone();
        }
        let plan = ResamplePlan::new(self.sample_rate, to_rate, 16, 0.99);
        Waveform::new(plan.apply(&self.samples), to_rate)
    }
}

/// Log-mel spectrogram configuration.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MelParams {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub win_length: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub f_min: f64,
    pub f_max: f64,
    /// Magnitudes are floored here before the natural log.
    pub log_floor: f64,
}

impl Default for MelParams {
    fn default() -> Self {
        MelParams {
            sample_rate: SAMPLE_RATE,
            n_fft: 1024,
            win_length: 1024,
            hop: 256,
            n_mels: 80,
            f_min: 0.0,
            f_max: 8000.0,
            log_floor: 1e-5,
        }
    }
}

impl MelParams {
    pub fn stft(&self) -> StftParams {
        StftParams {
            n_fft: self.n_fft,
            win_length: self.win_length,
            hop: self.hop,
        }
    }

    /// Frames produced for a `t`-sample signal.
    pub fn frames(&self, t: usize) -> usize {
        self.stft().frames(t)
    }
}

/// Reusable log-mel machinery: one STFT plan plus one filterbank, shared by
/// graph ops and value-level evaluation.
pub struct MelFrontend {
    pub params: MelParams,
    pub plan: Arc<StftPlan>,
    pub bank: Arc<MelBank>,
}

impl MelFrontend {
    pub fn new(params: MelParams) -> Self {
        let plan = Arc::new(StftPlan::new(params.stft()));
        let bank = Arc::new(MelBank::new(
            params.sample_rate,
            params.n_fft,
            params.n_mels,
            params.f_min,
            params.f_max,
        ));
        MelFrontend { params, plan, bank }
    }

    /// Differentiable log-mel of a `[..., time]` node: `[rows, n_mels, frames]`.
    pub fn log_mel_graph(&self, g: &mut Graph, x: TensorId) -> TensorId {
        g.log_mel(x, &self.plan, &self.bank, self.params.log_floor)
    }

    /// Value-level log-mel of rows of `t` samples, flattened
    /// `[rows, n_mels, frames]`; also returns the frame count.
    pub fn log_mel_value(&self, x: &[f64], t: usize) -> (Vec<f64>, usize) {
        let (mags, frames) = crate::autodiff::spectral::stft_magnitude_value(x, t, &self.plan);
        let mut mel = crate::autodiff::spectral::mel_project_value(&mags, frames, &self.bank);
        for v in &mut mel {
            *v = v.max(self.params.log_floor).ln();
        }
        (mel, frames)
    }
}
