//! Helpers shared by the integration suites: a desk-scale model profile and
//! codec binary provisioning.

#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use tidemark::audio::Waveform;
use tidemark::channel::{resolve_codec_binary, Channel, CodecSpec, RvqCodec};
use tidemark::config::Config;
use tidemark::eval::{evaluate_system, DetectorScorer, EvalOptions, SystemColumn};
use tidemark::losses::RoleMode;
use tidemark::training::step::Trainer;

/// Locate the codec backend, building the bundled one on first use so the
/// suite works without ffmpeg installed.
pub fn codec_binary() -> PathBuf {
    static BIN: OnceLock<PathBuf> = OnceLock::new();
    BIN.get_or_init(|| {
        if let Ok(path) = resolve_codec_binary() {
            return path;
        }
        let status = std::process::Command::new(env!("CARGO"))
            .args(["build", "-p", "codecbox"])
            .current_dir(env!("CARGO_MANIFEST_DIR"))
            .status()
            .expect("cargo build -p codecbox");
        assert!(status.success(), "building the codec backend failed");
        resolve_codec_binary().expect("codec backend missing even after building it")
    })
    .clone()
}

/// Channel with the external codec backend available.
pub fn codec_channel(seed: u64) -> Channel {
    Channel::new(Some(codec_binary()), std::sync::Arc::new(RvqCodec::new(seed)))
}

/// Identity-only channel; no external binary required.
pub fn identity_channel(seed: u64) -> Channel {
    Channel::new(None, std::sync::Arc::new(RvqCodec::new(seed)))
}

/// Desk-scale training profile: small models and short crops so trend checks
/// finish on one CPU. `pool` is the codec augmentation pool (empty for the
/// identity channel).
pub fn toy_config(mode: RoleMode, seed: u64, steps: usize, pool: Vec<CodecSpec>) -> Config {
    let mut cfg = Config::default();
    cfg.training.mode = mode;
    cfg.training.pool = pool;
    cfg.training.batch_size = 4;
    cfg.training.crop_len = 4096;
    cfg.training.epochs = 1;
    cfg.training.steps_per_epoch = Some(steps);
    cfg.training.seed = seed;
    cfg.model.gen_width = 32;
    cfg.model.detector.widths = vec![4, 8, 8];
    cfg.model.mel.n_fft = 512;
    cfg.model.mel.win_length = 512;
    cfg.model.mel.n_mels = 32;
    cfg.validate().expect("toy profile must validate");
    cfg
}

/// Held-out EER (percent) of `trainer`'s detector on `clips` under
/// `conditions`, pooled over repetitions.
pub fn heldout_eer(
    trainer: &Trainer,
    clips: &[Waveform],
    conditions: Vec<CodecSpec>,
    seed: u64,
) -> f64 {
    column(trainer, clips, conditions, seed).pooled.eer_percent
}

pub fn column(
    trainer: &Trainer,
    clips: &[Waveform],
    conditions: Vec<CodecSpec>,
    seed: u64,
) -> SystemColumn {
    let opts = EvalOptions {
        system: "toy".into(),
        conditions,
        repetitions: 3,
        crop_len: 2048,
        seed,
    };
    let scorer = DetectorScorer { wm: &trainer.wm };
    let (column, _) = evaluate_system(
        &trainer.gen,
        &trainer.frontend,
        &scorer,
        &trainer.channel,
        clips,
        &opts,
    )
    .expect("held-out evaluation");
    column
}

/// Train `cfg` from scratch for its configured budget and return the trainer.
pub fn train_to_end(cfg: &Config, channel: Channel, clips: &[Waveform], out_dir: &Path) -> Trainer {
    let manifest = manifest_from(clips, out_dir);
    let outcome =
        tidemark::training::run::train(cfg, &manifest, out_dir, channel.clone()).expect("training");
    let loaded =
        tidemark::training::checkpoint::load_checkpoint(&outcome.checkpoint).expect("checkpoint");
    Trainer::resume(&loaded, channel).expect("resume")
}

/// Write `clips` as WAVs and return a manifest covering them.
pub fn manifest_from(
    clips: &[Waveform],
    dir: &Path,
) -> tidemark::training::corpus::DatasetManifest {
    use tidemark::training::corpus::{DatasetManifest, ManifestEntry, Split};
    std::fs::create_dir_all(dir).unwrap();
    let entries = clips
        .iter()
        .enumerate()
        .map(|(i, w)| {
            let path = dir.join(format!("clip_{i:04}.wav"));
            w.write_wav(&path).unwrap();
            ManifestEntry {
                path,
                duration_secs: w.duration_secs(),
            }
        })
        .collect();
    DatasetManifest {
        split: Split::Train,
        entries,
    }
}

/// Deterministic corpus of `n` synthetic clips.
pub fn corpus(n: usize, seed: u64) -> Vec<Waveform> {
    use rand::SeedableRng;
    use tidemark::audio::SAMPLE_RATE;
    use tidemark::training::corpus::synth_clip;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| Waveform::new(synth_clip(&mut rng), SAMPLE_RATE))
        .collect()
}

/// Deterministic harmonic probe: a six-partial tone with a seeded
/// fundamental, `n` samples long at the corpus rate.
pub fn harmonic_probe(seed: u64, n: usize) -> Waveform {
    use rand::{Rng, SeedableRng};
    use tidemark::audio::SAMPLE_RATE;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let f0 = rng.random_range(120.0..240.0);
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / SAMPLE_RATE as f64;
            let mut v = 0.0;
            for k in 1..=6 {
                v += (2.0 * std::f64::consts::PI * f0 * k as f64 * t).sin() / k as f64;
            }
            0.3 * v
        })
        .collect();
    Waveform::new(samples, SAMPLE_RATE)
}
