//! Pseudo-differentiable codec channel.
//!
//! Waveforms round-trip through a black-box codec process (or the internal
//! neural codec), get re-aligned by cross-correlation, and re-enter the
//! autodiff graph through a straight-through estimator, so a loss computed on
//! the decoded signal still trains whatever produced the input.

pub mod neural;

use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{Waveform, SAMPLE_RATE};
use crate::autodiff::{Graph, Tensor, TensorId};
use crate::dsp::correlate_delay;
use crate::error::{Error, Result};
pub use neural::RvqCodec;

/// Maximum codec delay searched during alignment, in samples.
pub const ALIGN_SEARCH: usize = 4096;

/// Correlation peaks below this trigger the zero-delay fallback.
pub const ALIGN_MIN_PEAK: f64 = 0.1;

/// Which coding family a [`CodecSpec`] selects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CodecKind {
    None,
    Mp3,
    OggOpus,
    OggVorbis,
    NeuralRvq,
}

/// One channel condition: a codec plus its rate parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodecSpec {
    pub kind: CodecKind,
    /// Constant bitrate in kbps (mp3, opus, and the neural codec's label).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bitrate_kbps: Option<u32>,
    /// Vorbis quality scale (no constant-bitrate mode).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quality: Option<u32>,
    /// Sample rate the codec runs at.
    #[serde(default = "default_codec_rate")]
    pub codec_sample_rate: u32,
}

fn default_codec_rate() -> u32 {
    SAMPLE_RATE
}

pub const BITRATES_KBPS: [u32; 5] = [8, 16, 32, 64, 128];
pub const VORBIS_QUALITIES: [u32; 3] = [1, 2, 3];

impl CodecSpec {
    pub fn none() -> Self {
        CodecSpec {
            kind: CodecKind::None,
            bitrate_kbps: None,
            quality: None,
            codec_sample_rate: SAMPLE_RATE,
        }
    }

    pub fn mp3(bitrate_kbps: u32) -> Self {
        CodecSpec {
            kind: CodecKind::Mp3,
            bitrate_kbps: Some(bitrate_kbps),
            quality: None,
            codec_sample_rate: SAMPLE_RATE,
        }
    }

    pub fn ogg_opus(bitrate_kbps: u32) -> Self {
        CodecSpec {
            kind: CodecKind::OggOpus,
            bitrate_kbps: Some(bitrate_kbps),
            quality: None,
            codec_sample_rate: SAMPLE_RATE,
        }
    }

    pub fn ogg_vorbis(quality: u32) -> Self {
        CodecSpec {
            kind: CodecKind::OggVorbis,
            bitrate_kbps: None,
            quality: Some(quality),
            codec_sample_rate: SAMPLE_RATE,
        }
    }

    /// The toy neural codec, labeled with its nominal 8 kbps rate.
    pub fn neural_rvq() -> Self {
        CodecSpec {
            kind: CodecKind::NeuralRvq,
            bitrate_kbps: Some(8),
            quality: None,
            codec_sample_rate: SAMPLE_RATE,
        }
    }

    /// Enforce the per-kind rate-parameter rules.
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Invalid(msg));
        match self.kind {
            CodecKind::None => {
                if self.bitrate_kbps.is_some() || self.quality.is_some() {
                    return fail("the identity channel carries no rate parameter".into());
                }
            }
            CodecKind::Mp3 | CodecKind::OggOpus => {
                let Some(kbps) = self.bitrate_kbps else {
                    return fail(format!("{} requires a bitrate", self.label()));
                };
                if self.quality.is_some() {
                    return fail("bitrate codecs do not take a quality scale".into());
                }
                if !BITRATES_KBPS.contains(&kbps) {
                    return fail(format!("bitrate {kbps} kbps not in {BITRATES_KBPS:?}"));
                }
            }
            CodecKind::OggVorbis => {
                let Some(q) = self.quality else {
                    return fail("vorbis has no constant-bitrate mode; use a quality scale".into());
                };
                if self.bitrate_kbps.is_some() {
                    return fail("vorbis takes a quality scale, not a bitrate".into());
                }
                if !VORBIS_QUALITIES.contains(&q) {
                    return fail(format!("vorbis quality {q} not in {VORBIS_QUALITIES:?}"));
                }
            }
            CodecKind::NeuralRvq => {
                if self.bitrate_kbps != Some(8) {
                    return fail("the neural codec is labeled at 8 kbps".into());
                }
            }
        }
        Ok(())
    }

    /// Stable condition label, e.g. `mp3@64` or `ogg_vorbis@q2`.
    pub fn label(&self) -> String {
        match self.kind {
            CodecKind::None => "none".into(),
            CodecKind::Mp3 => format!("mp3@{}", self.bitrate_kbps.unwrap_or(0)),
            CodecKind::OggOpus => format!("ogg_opus@{}", self.bitrate_kbps.unwrap_or(0)),
            CodecKind::OggVorbis => format!("ogg_vorbis@q{}", self.quality.unwrap_or(0)),
            CodecKind::NeuralRvq => format!("neural_rvq@{}", self.bitrate_kbps.unwrap_or(0)),
        }
    }

    pub fn is_lossy(&self) -> bool {
        self.kind != CodecKind::None
    }
}

/// One codec round-trip: the aligned decoded signal plus diagnostics.
#[derive(Debug, Clone)]
pub struct ChannelResult {
    /// Decoded, aligned, exactly as long as the input.
    pub output: Waveform,
    /// Estimated codec delay compensated during alignment.
    pub delay_samples: isize,
    /// `10 log10(sum x^2 / sum (x - x_hat)^2)`; `+inf` for the identity
    /// channel.
    pub snr_db: f64,
    pub spec: CodecSpec,
}

/// Serialize an SNR, mapping non-finite values to the string `"inf"`/`"-inf"`
/// instead of an out-of-range float.
pub fn snr_to_json(snr_db: f64) -> serde_json::Value {
    if snr_db.is_finite() {
        serde_json::json!(snr_db)
    } else if snr_db > 0.0 {
        serde_json::json!("inf")
    } else {
        serde_json::json!("-inf")
    }
}

/// Uniform per-minibatch codec sampler.
#[derive(Debug, Clone)]
pub struct AugmentationPool {
    specs: Vec<CodecSpec>,
    rng: ChaCha8Rng,
}

impl AugmentationPool {
    pub fn new(specs: Vec<CodecSpec>, rng: ChaCha8Rng) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::Invalid("augmentation pool must be non-empty".into()));
        }
        for s in &specs {
            s.validate()?;
        }
        Ok(AugmentationPool { specs, rng })
    }

    /// Identity-only pool (no codec augmentation).
    pub fn identity(rng: ChaCha8Rng) -> Self {
        AugmentationPool::new(vec![CodecSpec::none()], rng).unwrap()
    }

    /// MP3 and Opus at 16/32/64/128 kbps: the widest traditional-codec
    /// training pool. Vorbis is deliberately held out for evaluation.
    pub fn mp3_opus_all(rng: ChaCha8Rng) -> Self {
        let mut specs = Vec::new();
        for &kbps in &[16, 32, 64, 128] {
            specs.push(CodecSpec::mp3(kbps));
            specs.push(CodecSpec::ogg_opus(kbps));
        }
        AugmentationPool::new(specs, rng).unwrap()
    }

    pub fn specs(&self) -> &[CodecSpec] {
        &self.specs
    }

    /// Draw the next per-minibatch spec (uniform, seeded).
    pub fn sample(&mut self) -> CodecSpec {
        let idx = self.rng.random_range(0..self.specs.len());
        self.specs[idx]
    }
}

/// Locate the external codec binary: `CODEC_BIN`, then `ffmpeg` on `PATH`,
/// then a `codecbox` binary next to the current executable.
pub fn resolve_codec_binary() -> Result<PathBuf> {
    if let Ok(p) = std::env::var("CODEC_BIN") {
        let path = PathBuf::from(p);
        if path.is_file() {
            return Ok(path);
        }
        return Err(Error::CodecBinaryMissing(format!(
            "CODEC_BIN points at {}, which does not exist",
            path.display()
        )));
    }
    if let Some(path) = find_on_path("ffmpeg") {
        return Ok(path);
    }
    if let Some(path) = sibling_binary("codecbox") {
        return Ok(path);
    }
    Err(Error::CodecBinaryMissing(
        "set CODEC_BIN, or install ffmpeg, or build the codecbox binary".into(),
    ))
}

fn find_on_path(name: &str) -> Option<PathBuf> {
    let path_var = std::env::var_os("PATH")?;
    std::env::split_paths(&path_var)
        .map(|dir| dir.join(name))
        .find(|p| p.is_file())
}

/// Look for `name` beside the running executable and one directory up
/// (test binaries live in `target/debug/deps`).
fn sibling_binary(name: &str) -> Option<PathBuf> {
    let exe = std::env::current_exe().ok()?;
    let mut dir = exe.parent()?;
    for _ in 0..2 {
        let candidate = dir.join(name);
        if candidate.is_file() {
            return Some(candidate);
        }
        dir = dir.parent()?;
    }
    None
}

fn run_codec(binary: &Path, args: &[String]) -> Result<()> {
    let output = Command::new(binary).args(args).output().map_err(|e| {
        Error::CodecProcess {
            program: binary.display().to_string(),
            status: None,
            stderr: e.to_string(),
        }
    })?;
    if !output.status.success() {
        let mut stderr = String::from_utf8_lossy(&output.stderr).into_owned();
        stderr.truncate(2000);
        return Err(Error::CodecProcess {
            program: binary.display().to_string(),
            status: output.status.code(),
            stderr,
        });
    }
    Ok(())
}

/// A ready-to-use channel: external codec binary plus the internal neural
/// codec. The binary is optional so identity-only pipelines run on machines
/// without one; lossy external specs then fail at use time.
#[derive(Clone)]
pub struct Channel {
    pub binary: Option<PathBuf>,
    pub neural: Arc<RvqCodec>,
}

impl Channel {
    pub fn new(binary: Option<PathBuf>, neural: Arc<RvqCodec>) -> Self {
        Channel { binary, neural }
    }

    /// Resolve the binary if one is available and build an untrained neural
    /// codec.
    pub fn with_defaults(seed: u64) -> Self {
        Channel {
            binary: resolve_codec_binary().ok(),
            neural: Arc::new(RvqCodec::new(seed)),
        }
    }

    /// Encode and decode one waveform through `spec`, align, and score.
    pub fn codec_roundtrip(&self, w: &Waveform, spec: &CodecSpec) -> Result<ChannelResult> {
        spec.validate()?;
        if w.sample_rate != spec.codec_sample_rate {
            return Err(Error::Invalid(format!(
                "waveform rate {} does not match codec rate {}",
                w.sample_rate, spec.codec_sample_rate
            )));
        }
        match spec.kind {
            CodecKind::None => Ok(ChannelResult {
                output: w.clone(),
                delay_samples: 0,
                snr_db: f64::INFINITY,
                spec: *spec,
            }),
            CodecKind::NeuralRvq => {
                let decoded = self.neural.roundtrip_value(&w.samples);
                let output = Waveform::new(decoded, w.sample_rate);
                let snr_db = snr(&w.samples, &output.samples);
                Ok(ChannelResult {
                    output,
                    delay_samples: 0,
                    snr_db,
                    spec: *spec,
                })
            }
            _ => self.external_roundtrip(w, spec),
        }
    }

    fn external_roundtrip(&self, w: &Waveform, spec: &CodecSpec) -> Result<ChannelResult> {
        let binary = self.binary.as_deref().ok_or_else(|| {
            Error::CodecBinaryMissing(format!(
                "codec {} needs an external binary; set CODEC_BIN, install ffmpeg, \
                 or build the codecbox binary",
                spec.label()
            ))
        })?;
        let dir = tempfile::tempdir().map_err(|e| Error::io(Path::new("tempdir"), e))?;
        let input = dir.path().join("in.wav");
        let coded = dir.path().join(match spec.kind {
            CodecKind::Mp3 => "coded.mp3",
            _ => "coded.ogg",
        });
        let back = dir.path().join("out.wav");
        w.write_wav(&input)?;

        let mut encode = vec![
            "-hide_banner".into(),
            "-loglevel".into(),
            "error".into(),
            "-y".into(),
            "-i".into(),
            input.to_string_lossy().into_owned(),
        ];
        match spec.kind {
            CodecKind::Mp3 => {
                encode.push("-c:a".into());
                encode.push("libmp3lame".into());
                encode.push("-b:a".into());
                encode.push(format!("{}k", spec.bitrate_kbps.unwrap()));
            }
            CodecKind::OggOpus => {
                encode.push("-c:a".into());
                encode.push("libopus".into());
                encode.push("-b:a".into());
                encode.push(format!("{}k", spec.bitrate_kbps.unwrap()));
            }
            CodecKind::OggVorbis => {
                encode.push("-c:a".into());
                encode.push("libvorbis".into());
                encode.push("-q:a".into());
                encode.push(spec.quality.unwrap().to_string());
            }
            CodecKind::None | CodecKind::NeuralRvq => unreachable!("handled by codec_roundtrip"),
        }
        encode.push(coded.to_string_lossy().into_owned());
        run_codec(binary, &encode)?;

        let decode = vec![
            "-hide_banner".into(),
            "-loglevel".into(),
            "error".into(),
            "-y".into(),
            "-i".into(),
            coded.to_string_lossy().into_owned(),
            "-ar".into(),
            spec.codec_sample_rate.to_string(),
            back.to_string_lossy().into_owned(),
        ];
        run_codec(binary, &decode)?;

        let decoded = Waveform::read_wav(&back)?;
        // TempDir cleans up on drop, so failures above also remove the files.
        let (aligned, delay_samples) = align(&w.samples, &decoded.samples, spec);
        let snr_db = snr(&w.samples, &aligned);
        Ok(ChannelResult {
            output: Waveform::new(aligned, w.sample_rate),
            delay_samples,
            snr_db,
            spec: *spec,
        })
    }

    /// Round-trip every batch element through one codec spec. The plain
    /// decoded signals model the real path; callers wanting the generated
    /// path wrap the result with [`Graph::straight_through`] via
    /// [`channel_augment_graph`].
    pub fn channel_augment(
        &self,
        batch: &[Waveform],
        spec: &CodecSpec,
    ) -> Result<Vec<ChannelResult>> {
        if batch.is_empty() {
            return Err(Error::Invalid("channel batch is empty".into()));
        }
        batch.iter().map(|w| self.codec_roundtrip(w, spec)).collect()
    }
}

/// Align `decoded` to `x` by the cross-correlation peak within
/// [`ALIGN_SEARCH`] samples, then trim/pad to the input length. Falls back to
/// zero delay (with a warning) when the normalized peak is below
/// [`ALIGN_MIN_PEAK`].
fn align(x: &[f64], decoded: &[f64], spec: &CodecSpec) -> (Vec<f64>, isize) {
    let n = x.len().max(decoded.len());
    let mut a = x.to_vec();
    a.resize(n, 0.0);
    let mut b = decoded.to_vec();
    b.resize(n, 0.0);
    let (mut delay, peak) = correlate_delay(&a, &b, ALIGN_SEARCH);
    if peak < ALIGN_MIN_PEAK {
        log::warn!(
            "{}: alignment peak {peak:.3} below {ALIGN_MIN_PEAK}, assuming zero delay",
            spec.label()
        );
        delay = 0;
    }
    let mut aligned = vec![0.0; x.len()];
    for (i, slot) in aligned.iter_mut().enumerate() {
        let src = i as isize + delay;
        if src >= 0 && (src as usize) < decoded.len() {
            *slot = decoded[src as usize];
        }
    }
    (aligned, delay)
}

/// `10 log10(sum x^2 / sum (x - x_hat)^2)`, `+inf` when the residual is zero.
pub fn snr(x: &[f64], x_hat: &[f64]) -> f64 {
    assert_eq!(x.len(), x_hat.len());
    let signal: f64 = x.iter().map(|v| v * v).sum();
    let noise: f64 = x.iter().zip(x_hat).map(|(a, b)| (a - b) * (a - b)).sum();
    if noise == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (signal / noise).log10()
    }
}

/// Batched channel application inside a graph: rows of `x` (shaped
/// `[batch, 1, t]` or `[batch, t]`) round-trip through `spec`; the result
/// re-enters the graph via straight-through estimation when `differentiable`
/// (the generated path) or as a plain constant (the real path).
pub fn channel_augment_graph(
    g: &mut Graph,
    x: TensorId,
    channel: &Channel,
    spec: &CodecSpec,
    differentiable: bool,
    sample_rate: u32,
) -> Result<(TensorId, Vec<ChannelResult>)> {
    let shape = g.value(x).shape().to_vec();
    let t = *shape.last().ok_or_else(|| Error::Invalid("empty channel input".into()))?;
    let rows = g.value(x).numel() / t;
    let batch: Vec<Waveform> = (0..rows)
        .map(|r| Waveform::new(g.value(x).data()[r * t..(r + 1) * t].to_vec(), sample_rate))
        .collect();
    let results = channel.channel_augment(&batch, spec)?;
    let mut decoded = Tensor::zeros(shape);
    for (r, res) in results.iter().enumerate() {
        decoded.data_mut()[r * t..(r + 1) * t].copy_from_slice(&res.output.samples);
    }
    let out = if differentiable {
        g.straight_through(x, decoded)
    } else {
        g.leaf(decoded)
    };
    Ok((out, results))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn spec_validation_enforces_rate_rules() {
        assert!(CodecSpec::none().validate().is_ok());
        assert!(CodecSpec::mp3(64).validate().is_ok());
        assert!(CodecSpec::ogg_opus(8).validate().is_ok());
        assert!(CodecSpec::ogg_vorbis(2).validate().is_ok());
        assert!(CodecSpec::neural_rvq().validate().is_ok());

        assert!(CodecSpec::mp3(48).validate().is_err());
        assert!(CodecSpec::ogg_vorbis(4).validate().is_err());
        let mut bad = CodecSpec::none();
        bad.bitrate_kbps = Some(64);
        assert!(bad.validate().is_err());
        let mut vorbis_cbr = CodecSpec::ogg_vorbis(2);
        vorbis_cbr.bitrate_kbps = Some(64);
        assert!(vorbis_cbr.validate().is_err());
    }

    #[test]
    fn spec_serde_roundtrips() {
        for spec in [
            CodecSpec::none(),
            CodecSpec::mp3(64),
            CodecSpec::ogg_opus(16),
            CodecSpec::ogg_vorbis(3),
            CodecSpec::neural_rvq(),
        ] {
            let json = serde_json::to_string(&spec).unwrap();
            let back: CodecSpec = serde_json::from_str(&json).unwrap();
            assert_eq!(spec, back);
        }
    }

    #[test]
    fn labels_are_stable() {
        assert_eq!(CodecSpec::none().label(), "none");
        assert_eq!(CodecSpec::mp3(64).label(), "mp3@64");
        assert_eq!(CodecSpec::ogg_opus(16).label(), "ogg_opus@16");
        assert_eq!(CodecSpec::ogg_vorbis(2).label(), "ogg_vorbis@q2");
        assert_eq!(CodecSpec::neural_rvq().label(), "neural_rvq@8");
    }

    #[test]
    fn pool_sampling_is_seeded_and_uniform() {
        let rng = ChaCha8Rng::seed_from_u64(11);
        let mut pool = AugmentationPool::mp3_opus_all(rng.clone());
        let mut pool2 = AugmentationPool::mp3_opus_all(rng);
        let draws: Vec<CodecSpec> = (0..100).map(|_| pool.sample()).collect();
        let draws2: Vec<CodecSpec> = (0..100).map(|_| pool2.sample()).collect();
        assert_eq!(draws, draws2, "same seed must give the same sequence");

        let mut counts = std::collections::HashMap::new();
        let mut pool = AugmentationPool::mp3_opus_all(ChaCha8Rng::seed_from_u64(5));
        for _ in 0..10_000 {
            *counts.entry(pool.sample().label()).or_insert(0usize) += 1;
        }
        assert_eq!(counts.len(), 8);
        for (label, count) in counts {
            let freq = count as f64 / 10_000.0;
            assert!(
                (0.10..=0.15).contains(&freq),
                "{label} drawn with frequency {freq}"
            );
        }
    }

    #[test]
    fn snr_handles_identity_and_noise() {
        let x = vec![0.5, -0.5, 0.25];
        assert!(snr(&x, &x).is_infinite());
        let y = vec![0.45, -0.55, 0.25];
        let s = snr(&x, &y);
        assert!(s.is_finite() && s > 0.0);
    }

    #[test]
    fn align_compensates_known_delay() {
        let x: Vec<f64> = (0..8000)
            .map(|i| (2.0 * std::f64::consts::PI * 440.0 * i as f64 / 22050.0).sin())
            .collect();
        let mut delayed = vec![0.0; 300];
        delayed.extend_from_slice(&x);
        let (aligned, delay) = align(&x, &delayed, &CodecSpec::mp3(64));
        assert_eq!(delay, 300);
        assert_eq!(aligned.len(), x.len());
        let err: f64 = x.iter().zip(&aligned).map(|(a, b)| (a - b) * (a - b)).sum();
        assert!(err < 1e-18);
    }

    #[test]
    fn identity_channel_is_bit_exact() {
        let channel = Channel::new(None, Arc::new(RvqCodec::new(0)));
        let w = Waveform::new(vec![0.1, -0.2, 0.3], SAMPLE_RATE);
        let res = channel.codec_roundtrip(&w, &CodecSpec::none()).unwrap();
        assert_eq!(res.output.samples, w.samples);
        assert_eq!(res.delay_samples, 0);
        assert!(res.snr_db.is_infinite());
    }

    #[test]
    fn missing_binary_fails_only_for_external_codecs() {
        let channel = Channel::new(None, Arc::new(RvqCodec::new(0)));
        let w = Waveform::new(vec![0.05; 4096], SAMPLE_RATE);
        assert!(channel.codec_roundtrip(&w, &CodecSpec::neural_rvq()).is_ok());
        let err = channel.codec_roundtrip(&w, &CodecSpec::mp3(64)).unwrap_err();
        assert!(matches!(err, Error::CodecBinaryMissing(_)), "{err}");
    }
}
