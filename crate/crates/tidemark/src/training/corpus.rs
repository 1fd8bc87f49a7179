//! Synthetic speech-like corpus: harmonic tones with pitch drift, amplitude
//! modulation, and filtered noise. Stands in for a real speech dataset at
//! desk scale while exercising the same loader contracts.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{Waveform, SAMPLE_RATE};
use crate::error::{Error, Result};

/// Which partition a manifest describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Dev,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub duration_secs: f64,
}

/// A split's clip list, persisted as JSON next to the audio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub split: Split,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Invalid(format!("manifest serialization: {e}")))?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<DatasetManifest> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Invalid(format!("manifest parse: {e}")))
    }

    /// Check every referenced file is readable.
    pub fn validate(&self) -> Result<()> {
        for entry in &self.entries {
            if !entry.path.is_file() {
                return Err(Error::Invalid(format!(
                    "manifest entry {} is not a readable file",
                    entry.path.display()
                )));
            }
        }
        Ok(())
    }

    /// Read every clip into memory (toy corpora are small).
    pub fn load_clips(&self) -> Result<Vec<Waveform>> {
        self.entries.iter().map(|e| Waveform::read_wav(&e.path)).collect()
    }
}

/// Synthesize one clip: a handful of drifting harmonics under an envelope,
/// plus low-passed noise, normalized away from silence and clipping.
pub fn synth_clip(rng: &mut ChaCha8Rng) -> Vec<f64> {
    let sr = SAMPLE_RATE as f64;
    let len = rng.random_range(SAMPLE_RATE..=3 * SAMPLE_RATE) as usize;
    let f0 = 90.0 * (300.0f64 / 90.0).powf(rng.random_range(0.0..1.0));
    let drift = rng.random_range(-0.02..0.02);
    let n_harmonics = rng.random_range(6..=12usize);
    let rolloff = rng.random_range(0.8..1.5);
    let am_rate = rng.random_range(2.0..6.0);
    let am_depth = rng.random_range(0.0..0.3);
    let noise_mix = rng.random_range(0.05..0.15);
    let target_rms = rng.random_range(0.05..0.2);

    let harmonic_amps: Vec<f64> = (1..=n_harmonics)
        .map(|k| (k as f64).powf(-rolloff))
        .collect();
    let phases: Vec<f64> = (0..n_harmonics).map(|_| rng.random_range(0.0..2.0 * PI)).collect();

    let mut x = vec![0.0; len];
    let mut phase_acc = 0.0;
    let mut lp = 0.0;
    let alpha = 0.2;
    for (i, slot) in x.iter_mut().enumerate() {
        let t = i as f64 / len as f64;
        let f = f0 * (1.0 + drift * t);
        phase_acc += 2.0 * PI * f / sr;
        let mut tone = 0.0;
        for (k, (&a, &p)) in harmonic_amps.iter().zip(&phases).enumerate() {
            tone += a * ((k + 1) as f64 * phase_acc + p).sin();
        }
        let white: f64 = rng.random_range(-1.0..1.0);
        lp += alpha * (white - lp);
        let env = attack_decay(i, len) * (1.0 - am_depth * (0.5 + 0.5 * (2.0 * PI * am_rate * i as f64 / sr).sin()));
        *slot = env * (tone + noise_mix * lp * harmonic_amps.iter().sum::<f64>());
    }

    let rms = (x.iter().map(|v| v * v).sum::<f64>() / len as f64).sqrt();
    let mut scale = if rms > 0.0 { target_rms / rms } else { 0.0 };
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak * scale > 0.95 {
        scale = 0.95 / peak;
    }
    for v in &mut x {
        *v *= scale;
    }
    x
}

/// Short raised-cosine attack and decay so clips do not click.
fn attack_decay(i: usize, len: usize) -> f64 {
    let ramp = (len / 20).max(1);
    if i < ramp {
        0.5 - 0.5 * (PI * i as f64 / ramp as f64).cos()
    } else if i + ramp > len {
        let j = len - i;
        0.5 - 0.5 * (PI * j as f64 / ramp as f64).cos()
    } else {
        1.0
    }
}

/// Write `n` deterministic clips into `out_dir` and return their manifest.
pub fn make_toy_corpus(n: usize, seed: u64, split: Split, out_dir: &Path) -> Result<DatasetManifest> {
    if n == 0 {
        return Err(Error::Invalid("corpus size must be at least 1".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tag = match split {
        Split::Train => "train",
        Split::Dev => "dev",
        Split::Test => "test",
    };
    let mut entries = Vec::new();
    for i in 0..n {
        let samples = synth_clip(&mut rng);
        let w = Waveform::new(samples, SAMPLE_RATE);
        let path = out_dir.join(format!("{tag}_{i:04}.wav"));
        w.write_wav(&path)?;
        entries.push(ManifestEntry {
            path,
            duration_secs: w.duration_secs(),
        });
    }
    let manifest = DatasetManifest { split, entries };
    manifest.save(&out_dir.join(format!("{tag}_manifest.json")))?;
    Ok(manifest)
}
