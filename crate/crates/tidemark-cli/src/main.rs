//! Command-line driver: corpus synthesis, training, evaluation, gradient
//! checks, codec probes, and report re-rendering, all deterministic under
//! `--seed`. Exit codes: 0 success, 1 usage error, 2 runtime failure.

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use tidemark::audio::{MelFrontend, Waveform, SAMPLE_RATE};
use tidemark::autodiff::check::{finite_difference, max_abs_diff, max_rel_diff};
use tidemark::autodiff::{Graph, Tensor};
use tidemark::channel::{Channel, CodecKind, CodecSpec};
use tidemark::config::Config;
use tidemark::error::Error;
use tidemark::eval::{
    emit_report, evaluate_system, evaluation_conditions, DetectorScorer, EvalOptions, RawScores,
    RobustnessMatrix,
};
use tidemark::losses::RoleMode;
use tidemark::models::{Detector, DetectorConfig};
use tidemark::training::corpus::{make_toy_corpus, DatasetManifest, Split};
use tidemark::training::run::train;
use tidemark::training::step::Trainer;

#[derive(Parser)]
#[command(
    name = "tidemark",
    version,
    about = "Train and evaluate codec-robust collaborative speech watermarking"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a seeded toy corpus and its manifest.
    MakeCorpus {
        /// Directory receiving the WAV files and manifest.
        #[arg(long, value_name = "DIR")]
        out_dir: PathBuf,
        /// Number of clips.
        #[arg(long, default_value_t = 100)]
        count: usize,
        #[arg(long, default_value_t = 1234)]
        seed: u64,
        /// Corpus split tag: train, dev, or test.
        #[arg(long, default_value = "train")]
        split: String,
    },
    /// Train the three-player system per the configuration.
    Train {
        /// TOML configuration; defaults apply when omitted.
        #[arg(long, value_name = "FILE")]
        config: Option<PathBuf>,
        /// Dotted-path config override, e.g. training.mode=collaborator.
        /// Repeatable; unknown keys are rejected.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Corpus manifest produced by make-corpus.
        #[arg(long, value_name = "FILE")]
        manifest: PathBuf,
        /// Directory receiving the checkpoint and metrics log.
        #[arg(long, value_name = "DIR")]
        out_dir: PathBuf,
        /// Overrides training.seed from the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score a checkpoint over codec conditions and write the EER report.
    Evaluate {
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        /// Held-out corpus manifest.
        #[arg(long, value_name = "FILE")]
        manifest: PathBuf,
        /// Directory receiving report.csv, report.json, and scores.json.
        #[arg(long, value_name = "DIR")]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 5)]
        repetitions: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Evaluation window per clip, in samples.
        #[arg(long, default_value_t = 16_384)]
        crop_len: usize,
        /// Column label in the report; defaults to the trained role.
        #[arg(long)]
        system: Option<String>,
        /// Restrict to one codec condition (default: the full matrix).
        #[arg(long)]
        codec: Option<String>,
        #[arg(long)]
        bitrate: Option<u32>,
        #[arg(long)]
        qscale: Option<u32>,
    },
    /// Verify gradients: straight-through exactness and finite differences.
    GradCheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Round-trip a waveform through one codec and print delay and SNR.
    CodecProbe {
        /// none, mp3, opus, vorbis, or neural.
        #[arg(long)]
        codec: String,
        #[arg(long)]
        bitrate: Option<u32>,
        #[arg(long)]
        qscale: Option<u32>,
        /// Input WAV; a seeded 1 s harmonic tone is synthesized when omitted.
        #[arg(long = "in", value_name = "FILE")]
        input: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Re-render report artifacts from stored raw scores.
    Report {
        /// scores.json written by evaluate.
        #[arg(long, value_name = "FILE")]
        scores: PathBuf,
        #[arg(long, value_name = "DIR")]
        out_dir: PathBuf,
    },
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    if let Err(e) = run(cli.command) {
        eprintln!("error: {e}");
        let code = match e {
            Error::Config(_) | Error::UnknownConfigKey(_) => 1,
            _ => 2,
        };
        std::process::exit(code);
    }
}

fn run(command: Command) -> tidemark::Result<()> {
    match command {
        Command::MakeCorpus {
            out_dir,
            count,
            seed,
            split,
        } => {
            let tag = split;
            let split = parse_split(&tag)?;
            let manifest = make_toy_corpus(count, seed, split, &out_dir)?;
            println!(
                "wrote {} clips and {}",
                manifest.len(),
                out_dir.join(format!("{tag}_manifest.json")).display()
            );
            Ok(())
        }
        Command::Train {
            config,
            overrides,
            manifest,
            out_dir,
            seed,
        } => {
            let mut cfg = match config {
                Some(path) => Config::load(&path, &overrides)?,
                None => Config::from_toml(&Config::default().to_toml(), &overrides)?,
            };
            if let Some(seed) = seed {
                cfg.training.seed = seed;
            }
            let manifest = DatasetManifest::load(&manifest)?;
            let channel = Channel::with_defaults(cfg.training.seed);
            let outcome = train(&cfg, &manifest, &out_dir, channel)?;
            println!(
                "trained {} epochs ({} steps): checkpoint {} metrics {}",
                outcome.epochs_completed,
                outcome.final_step,
                outcome.checkpoint.display(),
                outcome.metrics_log.display()
            );
            Ok(())
        }
        Command::Evaluate {
            checkpoint,
            manifest,
            out_dir,
            repetitions,
            seed,
            crop_len,
            system,
            codec,
            bitrate,
            qscale,
        } => {
            let manifest = DatasetManifest::load(&manifest)?;
            let clips = manifest.load_clips()?;
            // The channel's neural codec is reconstructed from the training
            // seed so evaluation sees the same fixed black box as training.
            let probe = tidemark::training::checkpoint::load_checkpoint(&checkpoint)?;
            let channel = Channel::with_defaults(probe.config.training.seed);
            let trainer = Trainer::resume(&probe, channel)?;
            let conditions = match codec {
                Some(name) => vec![parse_codec_spec(&name, bitrate, qscale)?],
                None => evaluation_conditions(),
            };
            let system = system.unwrap_or_else(|| {
                role_label(trainer.config().training.mode).to_string()
            });
            let opts = EvalOptions {
                system,
                conditions,
                repetitions,
                crop_len,
                seed,
            };
            let scorer = DetectorScorer { wm: &trainer.wm };
            let (column, sets) = evaluate_system(
                &trainer.gen,
                &trainer.frontend,
                &scorer,
                &trainer.channel,
                &clips,
                &opts,
            )?;
            let matrix =
                RobustnessMatrix::single(opts.conditions.clone(), opts.repetitions, column);
            std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
            let csv = out_dir.join("report.csv");
            let json = out_dir.join("report.json");
            emit_report(&matrix, &sets, &csv, &json)?;
            RawScores {
                system: opts.system.clone(),
                conditions: opts.conditions.clone(),
                repetitions: opts.repetitions,
                sets,
            }
            .save(&out_dir.join("scores.json"))?;
            print!("{}", std::fs::read_to_string(&csv).map_err(|e| Error::io(&csv, e))?);
            println!("report written to {}", out_dir.display());
            Ok(())
        }
        Command::GradCheck { seed } => grad_check(seed),
        Command::CodecProbe {
            codec,
            bitrate,
            qscale,
            input,
            seed,
        } => {
            let spec = parse_codec_spec(&codec, bitrate, qscale)?;
            let w = match input {
                Some(path) => Waveform::read_wav(&path)?,
                None => probe_tone(seed),
            };
            let channel = Channel::with_defaults(seed);
            let result = channel.codec_roundtrip(&w, &spec)?;
            let snr = if result.snr_db.is_finite() {
                format!("{:.2}", result.snr_db)
            } else {
                "inf".into()
            };
            println!(
                "codec={} delay_samples={} snr_db={}",
                spec.label(),
                result.delay_samples,
                snr
            );
            Ok(())
        }
        Command::Report { scores, out_dir } => {
            let raw = RawScores::load(&scores)?;
            let matrix = raw.to_matrix()?;
            std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
            let csv = out_dir.join("report.csv");
            let json = out_dir.join("report.json");
            emit_report(&matrix, &raw.sets, &csv, &json)?;
            print!("{}", std::fs::read_to_string(&csv).map_err(|e| Error::io(&csv, e))?);
            println!("report written to {}", out_dir.display());
            Ok(())
        }
    }
}

fn parse_split(name: &str) -> tidemark::Result<Split> {
    match name {
        "train" => Ok(Split::Train),
        "dev" => Ok(Split::Dev),
        "test" => Ok(Split::Test),
        other => Err(Error::Config(format!(
            "unknown split `{other}` (expected train, dev, or test)"
        ))),
    }
}

fn role_label(mode: RoleMode) -> &'static str {
    match mode {
        RoleMode::Observer => "observer",
        RoleMode::Collaborator => "collaborator",
    }
}

fn parse_codec_spec(
    name: &str,
    bitrate: Option<u32>,
    qscale: Option<u32>,
) -> tidemark::Result<CodecSpec> {
    let spec = match name {
        "none" => CodecSpec::none(),
        "mp3" => CodecSpec::mp3(bitrate.ok_or_else(|| {
            Error::Config("mp3 needs --bitrate (8, 16, 32, 64, or 128)".into())
        })?),
        "opus" | "ogg_opus" => CodecSpec::ogg_opus(bitrate.ok_or_else(|| {
            Error::Config("opus needs --bitrate (8, 16, 32, 64, or 128)".into())
        })?),
        "vorbis" | "ogg_vorbis" => CodecSpec::ogg_vorbis(qscale.ok_or_else(|| {
            Error::Config("vorbis needs --qscale (1, 2, or 3)".into())
        })?),
        "neural" | "neural_rvq" => CodecSpec::neural_rvq(),
        other => {
            return Err(Error::Config(format!(
                "unknown codec `{other}` (expected none, mp3, opus, vorbis, or neural)"
            )))
        }
    };
    if spec.kind != CodecKind::OggVorbis && qscale.is_some() {
        return Err(Error::Config(format!("{name} does not take --qscale")));
    }
    if matches!(spec.kind, CodecKind::None | CodecKind::OggVorbis) && bitrate.is_some() {
        return Err(Error::Config(format!("{name} does not take --bitrate")));
    }
    spec.validate()?;
    Ok(spec)
}

/// A seeded 1 s harmonic probe signal.
fn probe_tone(seed: u64) -> Waveform {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let f0 = rng.random_range(120.0..240.0);
    let n = SAMPLE_RATE as usize;
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

/// Straight-through exactness on the identity channel plus central
/// finite-difference checks on the smooth pipeline pieces. Deviations above
/// tolerance are a runtime failure.
fn grad_check(seed: u64) -> tidemark::Result<()> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);

    // Identity-channel straight-through: same values, same gradients, exactly.
    let x: Vec<f64> = (0..256).map(|_| rng.random_range(-0.5..0.5)).collect();
    let direct = {
        let mut g = Graph::new();
        let p = g.param(Tensor::new(vec![256], x.clone()));
        let sq = g.square(p);
        let loss = g.mean_all(sq);
        let mut grads = g.backward(loss)?;
        grads.take(p).unwrap().data().to_vec()
    };
    let through = {
        let mut g = Graph::new();
        let p = g.param(Tensor::new(vec![256], x.clone()));
        let ste = g.straight_through(p, Tensor::new(vec![256], x.clone()));
        let sq = g.square(ste);
        let loss = g.mean_all(sq);
        let mut grads = g.backward(loss)?;
        grads.take(p).unwrap().data().to_vec()
    };
    let ste_dev = max_abs_diff(&direct, &through);
    println!("ste_identity_gradient_deviation={ste_dev:.1}");

    // Mel L1 loss against a fixed reference, autodiff vs finite differences.
    let mel = {
        let mut params = tidemark::audio::MelParams::default();
        params.n_fft = 256;
        params.win_length = 256;
        params.hop = 64;
        params.n_mels = 16;
        MelFrontend::new(params)
    };
    let t = 512;
    let base: Vec<f64> = (0..t).map(|_| rng.random_range(-0.4..0.4)).collect();
    let target: Vec<f64> = (0..t).map(|_| rng.random_range(-0.4..0.4)).collect();
    let mel_loss = |v: &[f64]| -> f64 {
        let mut g = Graph::new();
        let p = g.leaf(Tensor::new(vec![1, 1, t], v.to_vec()));
        let r = g.leaf(Tensor::new(vec![1, 1, t], target.clone()));
        let loss = tidemark::losses::loss_mel(&mut g, &mel, r, p).unwrap();
        g.value(loss).data()[0]
    };
    let analytic = {
        let mut g = Graph::new();
        let p = g.param(Tensor::new(vec![1, 1, t], base.clone()));
        let r = g.leaf(Tensor::new(vec![1, 1, t], target.clone()));
        let loss = tidemark::losses::loss_mel(&mut g, &mel, r, p)?;
        let mut grads = g.backward(loss)?;
        grads.take(p).unwrap().data().to_vec()
    };
    let fd = finite_difference(mel_loss, &base, 1e-5);
    let mel_dev = max_rel_diff(&analytic, &fd, 1e-6);
    println!("mel_loss_fd_max_rel_deviation={mel_dev:.3e}");

    // Detector score for one short window, autodiff vs finite differences.
    let mut det_cfg = DetectorConfig::default();
    det_cfg.widths = vec![2, 4, 4];
    let wm = Detector::new(det_cfg, seed);
    let n = wm.min_input_len().max(2048);
    let clip: Vec<f64> = (0..n).map(|_| rng.random_range(-0.3..0.3)).collect();
    let score = |v: &[f64]| -> f64 {
        let mut g = Graph::new();
        let b = wm.bind_frozen(&mut g);
        let p = g.leaf(Tensor::new(vec![1, 1, n], v.to_vec()));
        let s = wm.forward(&mut g, &b, p).unwrap();
        g.value(s).data()[0]
    };
    let analytic = {
        let mut g = Graph::new();
        let b = wm.bind_frozen(&mut g);
        let p = g.param(Tensor::new(vec![1, 1, n], clip.clone()));
        let s = wm.forward(&mut g, &b, p)?;
        let mut grads = g.backward(s)?;
        grads.take(p).unwrap().data().to_vec()
    };
    // Full finite differences over thousands of samples would dominate the
    // runtime; spot-check a strided subset instead.
    let stride = n / 64;
    let mut worst = 0.0f64;
    for i in (0..n).step_by(stride) {
        let mut probe = clip.clone();
        probe[i] += 1e-5;
        let up = score(&probe);
        probe[i] = clip[i] - 1e-5;
        let down = score(&probe);
        let fd = (up - down) / 2e-5;
        let denom = analytic[i].abs().max(fd.abs()).max(1e-6);
        worst = worst.max((analytic[i] - fd).abs() / denom);
    }
    println!("detector_score_fd_max_rel_deviation={worst:.3e}");

    if ste_dev != 0.0 {
        return Err(Error::Invalid(
            "straight-through gradient deviates on the identity channel".into(),
        ));
    }
    if mel_dev > 1e-5 || worst > 1e-4 {
        return Err(Error::Invalid("finite-difference deviation above tolerance".into()));
    }
    println!("gradients verified");
    Ok(())
}
