//! The epoch loop: drives [`Trainer`] over a corpus, appends per-step
//! metrics, and checkpoints after every epoch. A run interrupted at an epoch
//! boundary resumes from its checkpoint and produces the same remaining
//! steps as an uninterrupted run.

use std::path::{Path, PathBuf};

use crate::audio::Waveform;
use crate::channel::Channel;
use crate::config::Config;
use crate::error::{Error, Result};
use crate::training::checkpoint::load_checkpoint;
use crate::training::corpus::DatasetManifest;
use crate::training::metrics::MetricsWriter;
use crate::training::step::Trainer;

/// Filenames produced inside the output directory.
pub const CHECKPOINT_FILE: &str = "checkpoint.tmrk";
pub const METRICS_FILE: &str = "metrics.jsonl";

#[derive(Debug)]
pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    pub metrics_log: PathBuf,
    pub epochs_completed: usize,
    pub final_step: u64,
}

/// Train per `cfg` over the manifest's clips, writing everything into
/// `out_dir`. If `out_dir` already holds a checkpoint, training resumes
/// after its last completed epoch; the config must then match the stored one
/// except for the epoch budget.
pub fn train(
    cfg: &Config,
    manifest: &DatasetManifest,
    out_dir: &Path,
    channel: Channel,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let ckpt_path = out_dir.join(CHECKPOINT_FILE);
    let metrics_path = out_dir.join(METRICS_FILE);

    let clips = manifest.load_clips()?;
    let (mut trainer, mut writer) = if ckpt_path.exists() {
        let loaded = load_checkpoint(&ckpt_path)?;
        let mut stored = loaded.config.clone();
        stored.training.epochs = cfg.training.epochs;
        if stored != *cfg {
            return Err(Error::Config(format!(
                "checkpoint in {} was trained under a different configuration; \
                 only the epoch budget may change on resume",
                out_dir.display()
            )));
        }
        let trainer = Trainer::resume(&loaded, channel)?;
        log::info!(
            "resuming after {} completed epochs (step {})",
            loaded.epochs_completed,
            loaded.global_step
        );
        (trainer, MetricsWriter::open(&metrics_path)?)
    } else {
        (Trainer::new(cfg, channel)?, MetricsWriter::create(&metrics_path)?)
    };

    let steps_per_epoch = steps_per_epoch(&cfg.training, &clips);
    let start_epoch = trainer.epoch;
    for epoch in start_epoch..cfg.training.epochs {
        trainer.begin_epoch(epoch);
        for _ in 0..steps_per_epoch {
            let m = trainer.train_step(&clips)?;
            writer.append(&m)?;
        }
        trainer.save_checkpoint(&ckpt_path, epoch + 1)?;
        log::info!(
            "epoch {epoch} done: step {} lr {:.3e}",
            trainer.global_step,
            trainer.lr()
        );
    }
    Ok(TrainOutcome {
        checkpoint: ckpt_path,
        metrics_log: metrics_path,
        epochs_completed: cfg.training.epochs.max(start_epoch),
        final_step: trainer.global_step,
    })
}

fn steps_per_epoch(cfg: &crate::training::config::TrainingConfig, clips: &[Waveform]) -> usize {
    cfg.steps_per_epoch
        .unwrap_or_else(|| clips.len().div_ceil(cfg.batch_size).max(1))
}
