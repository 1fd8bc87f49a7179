//! One optimizer step of the three-player game: discriminator, watermark
//! detector, and generator, all trained from the same minibatch.
//!
//! Every forward pass in a step is built on one graph from the parameter
//! values the step started with, so the three updates are simultaneous: the
//! discriminator update does not see the new generator, and vice versa. The
//! codec condition is drawn once per minibatch and applied to both the real
//! and the generated path before the watermark detector sees them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio::{MelFrontend, Waveform, SAMPLE_RATE};
use crate::autodiff::{Graph, Tensor, TensorId};
use crate::channel::{AugmentationPool, Channel, channel_augment_graph};
use crate::config::Config;
use crate::error::{Error, Result};
use crate::losses::{
    loss_discriminator, loss_feature_matching, loss_generator_adv, loss_mel_from_specs,
    loss_watermark, route_generator_loss, GeneratorLossParts, RoleMode,
};
use crate::models::{Detector, DiscOutput, Ensemble, Generator};
use crate::training::checkpoint::{
    load_checkpoint, save_checkpoint, LoadedCheckpoint, Section,
};
use crate::training::metrics::StepMetrics;
use crate::training::optim::{clip_gradient_norm, gradient_norm, AdamW};

/// RNG stream purposes. Epoch-scoped streams are re-derived from the base
/// seed at every epoch start, so resuming from a checkpoint at an epoch
/// boundary reproduces an uninterrupted run exactly without serializing any
/// RNG state.
mod streams {
    pub const INIT: u64 = 1;
    pub const CROP: u64 = 2;
    pub const POOL: u64 = 3;
}

fn epoch_stream(seed: u64, purpose: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((purpose << 32) | epoch as u64);
    rng
}

/// Per-model init seeds drawn from the base seed's init stream.
fn derived_seeds(seed: u64) -> (u64, u64, u64) {
    use rand::RngCore;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(streams::INIT);
    (rng.next_u64(), rng.next_u64(), rng.next_u64())
}

/// The three players, their optimizers, and the sampling state for one run.
pub struct Trainer {
    cfg: Config,
    pub gen: Generator,
    pub disc: Ensemble,
    pub wm: Detector,
    pub frontend: MelFrontend,
    pub channel: Channel,
    opt_gen: AdamW,
    opt_disc: AdamW,
    opt_wm: AdamW,
    pool: AugmentationPool,
    crop_rng: ChaCha8Rng,
    pub epoch: usize,
    pub global_step: u64,
}

impl Trainer {
    /// Build fresh models and optimizers from the config seed.
    pub fn new(cfg: &Config, channel: Channel) -> Result<Trainer> {
        let (gs, ds, ws) = derived_seeds(cfg.training.seed);
        Trainer::with_model_seeds(cfg, channel, gs, ds, ws)
    }

    /// Build with explicit per-model init seeds (the data order still follows
    /// the config seed). Varying one model's init in isolation is how the
    /// observer-independence property is checked.
    pub fn with_model_seeds(
        cfg: &Config,
        channel: Channel,
        gen_seed: u64,
        disc_seed: u64,
        wm_seed: u64,
    ) -> Result<Trainer> {
        cfg.validate()?;
        let gen = Generator::new(cfg.model.generator_config(), gen_seed);
        let disc = Ensemble::new(cfg.model.discriminator.clone(), disc_seed);
        let wm = Detector::new(cfg.model.detector.clone(), wm_seed);
        let frontend = MelFrontend::new(cfg.model.mel);
        if cfg.training.crop_len < wm.min_input_len() {
            return Err(Error::Config(format!(
                "crop_len {} is shorter than the detector minimum {}",
                cfg.training.crop_len,
                wm.min_input_len()
            )));
        }
        for spec in cfg.training.pool_specs() {
            if spec.codec_sample_rate != SAMPLE_RATE {
                return Err(Error::Config(format!(
                    "pool condition {} runs at {} Hz, not the pipeline rate {}",
                    spec.label(),
                    spec.codec_sample_rate,
                    SAMPLE_RATE
                )));
            }
        }
        let lr = cfg.training.lr_init();
        let betas = cfg.training.betas;
        let wd = cfg.training.weight_decay;
        let opt_gen = AdamW::new(gen.store(), lr, betas, wd);
        let opt_disc = AdamW::new(disc.store(), lr, betas, wd);
        let opt_wm = AdamW::new(wm.store(), lr, betas, wd);
        let seed = cfg.training.seed;
        let pool = AugmentationPool::new(
            cfg.training.pool_specs(),
            epoch_stream(seed, streams::POOL, 0),
        )?;
        Ok(Trainer {
            cfg: cfg.clone(),
            gen,
            disc,
            wm,
            frontend,
            channel,
            opt_gen,
            opt_disc,
            opt_wm,
            pool,
            crop_rng: epoch_stream(seed, streams::CROP, 0),
            epoch: 0,
            global_step: 0,
        })
    }

    pub fn config(&self) -> &Config {
        &self.cfg
    }

    pub fn lr(&self) -> f64 {
        self.opt_gen.lr()
    }

    /// Enter an epoch: set the decayed learning rate on every optimizer and
    /// re-derive the epoch's sampling streams.
    pub fn begin_epoch(&mut self, epoch: usize) {
        self.epoch = epoch;
        let lr = self.cfg.training.lr_at_epoch(epoch);
        self.opt_gen.set_lr(lr);
        self.opt_disc.set_lr(lr);
        self.opt_wm.set_lr(lr);
        let seed = self.cfg.training.seed;
        self.crop_rng = epoch_stream(seed, streams::CROP, epoch);
        self.pool = AugmentationPool::new(
            self.cfg.training.pool_specs(),
            epoch_stream(seed, streams::POOL, epoch),
        )
        .expect("pool already validated");
    }

    /// Crop a random window from a random clip for each batch row, zero-padded
    /// at the tail when a clip is shorter than the crop.
    fn assemble_batch(&mut self, clips: &[Waveform]) -> Result<Tensor> {
        if clips.is_empty() {
            return Err(Error::Invalid("cannot train on an empty corpus".into()));
        }
        let b = self.cfg.training.batch_size;
        let t = self.cfg.training.crop_len;
        let mut data = vec![0.0; b * t];
        for row in 0..b {
            let clip = &clips[self.crop_rng.random_range(0..clips.len())];
            if clip.sample_rate != SAMPLE_RATE {
                return Err(Error::Invalid(format!(
                    "clip rate {} does not match the pipeline rate {}",
                    clip.sample_rate, SAMPLE_RATE
                )));
            }
            let n = clip.len();
            if n > t {
                let offset = self.crop_rng.random_range(0..=n - t);
                data[row * t..(row + 1) * t].copy_from_slice(&clip.samples[offset..offset + t]);
            } else {
                data[row * t..row * t + n].copy_from_slice(&clip.samples);
            }
        }
        Ok(Tensor::new(vec![b, 1, t], data))
    }

    /// Run one full step over `clips` and return its metrics. No parameter is
    /// updated if any loss comes out non-finite.
    pub fn train_step(&mut self, clips: &[Waveform]) -> Result<StepMetrics> {
        let x_real = self.assemble_batch(clips)?;
        let spec = self.pool.sample();
        let mode = self.cfg.training.mode;
        let weights = self.cfg.training.weights;

        let mut g = Graph::new();
        let bg = self.gen.bind(&mut g);
        let bd = self.disc.bind(&mut g);
        let bw = self.wm.bind(&mut g);
        let x_real = g.leaf(x_real);

        // Generator path: analysis mel is both its input and the mel-loss
        // reference.
        let mel_real = self.frontend.log_mel_graph(&mut g, x_real);
        let x_gen = self.gen.forward(&mut g, &bg, mel_real);
        debug_assert_eq!(g.value(x_gen).shape(), g.value(x_real).shape());

        // Discriminator loss on the detached generated batch.
        let x_gen_det = g.detach(x_gen);
        let d_real = self.disc.forward(&mut g, &bd, x_real);
        let d_gen_det = self.disc.forward(&mut g, &bd, x_gen_det);
        let l_disc = loss_discriminator(&mut g, &scores(&d_real), &scores(&d_gen_det));

        // Codec channel, one condition per minibatch. The real path is always
        // gradient-opaque; the generated path is straight-through only for a
        // collaborator, so an observer's watermark loss cannot reach the
        // generator.
        let differentiable = mode == RoleMode::Collaborator;
        let (x_hat_real, _) =
            channel_augment_graph(&mut g, x_real, &self.channel, &spec, false, SAMPLE_RATE)?;
        let (x_tilde_gen, _) = channel_augment_graph(
            &mut g,
            x_gen,
            &self.channel,
            &spec,
            differentiable,
            SAMPLE_RATE,
        )?;

        // Watermark detection loss on the channel outputs.
        let wm_real = self.wm.forward(&mut g, &bw, x_hat_real)?;
        let wm_gen = self.wm.forward(&mut g, &bw, x_tilde_gen)?;
        let l_wm = loss_watermark(&mut g, wm_real, wm_gen);

        // Generator losses against the live (attached) generated batch.
        let d_gen = self.disc.forward(&mut g, &bd, x_gen);
        let l_adv = loss_generator_adv(&mut g, &scores(&d_gen));
        let l_fm = loss_feature_matching(
            &mut g,
            &features(&d_real),
            &features(&d_gen),
            self.cfg.training.fm_kind,
        )?;
        let mel_gen = self.frontend.log_mel_graph(&mut g, x_gen);
        let l_mel = loss_mel_from_specs(&mut g, mel_real, mel_gen);
        let parts = GeneratorLossParts {
            adv: l_adv,
            fm: l_fm,
            mel: l_mel,
            wm: l_wm,
        };
        let l_total = route_generator_loss(&mut g, mode, parts, &weights);

        let scalar = |g: &Graph, id: TensorId| g.value(id).data()[0];
        let terms = [
            ("discriminator", l_disc),
            ("adversarial", l_adv),
            ("feature_matching", l_fm),
            ("mel", l_mel),
            ("watermark", l_wm),
            ("generator_total", l_total),
        ];
        for (name, id) in terms {
            if !scalar(&g, id).is_finite() {
                return Err(Error::NonFinite { term: name.into() });
            }
        }

        // Three backward sweeps over the one graph, then the updates, all from
        // step-start values.
        let mut grads_d = g.backward(l_disc)?;
        let grads_d = bd.collect_grads(&mut grads_d);
        let norm_d = gradient_norm(&grads_d);

        let mut grads_w = g.backward(l_wm)?;
        let mut grads_w = bw.collect_grads(&mut grads_w);
        let norm_w = clip_gradient_norm(&mut grads_w, self.cfg.training.clip_norm);

        let mut grads_g = g.backward(l_total)?;
        let grads_g = bg.collect_grads(&mut grads_g);
        let norm_g = gradient_norm(&grads_g);

        for (name, norm) in [
            ("discriminator gradients", norm_d),
            ("watermark gradients", norm_w),
            ("generator gradients", norm_g),
        ] {
            if !norm.is_finite() {
                return Err(Error::NonFinite { term: name.into() });
            }
        }

        self.opt_disc.step(self.disc.store_mut(), &grads_d);
        self.opt_wm.step(self.wm.store_mut(), &grads_w);
        self.opt_gen.step(self.gen.store_mut(), &grads_g);

        let metrics = StepMetrics {
            step: self.global_step,
            epoch: self.epoch,
            loss_disc: scalar(&g, l_disc),
            loss_adv: scalar(&g, l_adv),
            loss_fm: scalar(&g, l_fm),
            loss_mel: scalar(&g, l_mel),
            loss_wm: scalar(&g, l_wm),
            loss_gen_total: scalar(&g, l_total),
            grad_norm_gen: norm_g,
            grad_norm_disc: norm_d,
            grad_norm_wm: norm_w,
            lr: self.opt_gen.lr(),
            codec: spec.label(),
        };
        self.global_step += 1;
        Ok(metrics)
    }

    /// Write the full run state (config, position, parameters, optimizer
    /// moments) to one archive. `epochs_completed` counts fully finished
    /// epochs; a resumed run starts at that epoch index.
    pub fn save_checkpoint(&self, path: &std::path::Path, epochs_completed: usize) -> Result<()> {
        save_checkpoint(
            path,
            &self.cfg,
            epochs_completed,
            self.global_step,
            &[
                Section {
                    name: "gen",
                    store: self.gen.store(),
                    opt: &self.opt_gen,
                },
                Section {
                    name: "disc",
                    store: self.disc.store(),
                    opt: &self.opt_disc,
                },
                Section {
                    name: "wm",
                    store: self.wm.store(),
                    opt: &self.opt_wm,
                },
            ],
        )
    }

    /// Rebuild a trainer from an archive written by [`Trainer::save_checkpoint`].
    /// The stored epoch count is the number of completed epochs; the caller
    /// resumes by calling [`Trainer::begin_epoch`] with it.
    pub fn from_checkpoint(path: &std::path::Path, channel: Channel) -> Result<Trainer> {
        let loaded = load_checkpoint(path)?;
        Trainer::resume(&loaded, channel)
    }

    pub fn resume(loaded: &LoadedCheckpoint, channel: Channel) -> Result<Trainer> {
        let mut trainer = Trainer::new(&loaded.config, channel)?;
        loaded.apply("gen", trainer.gen.store_mut(), &mut trainer.opt_gen)?;
        loaded.apply("disc", trainer.disc.store_mut(), &mut trainer.opt_disc)?;
        loaded.apply("wm", trainer.wm.store_mut(), &mut trainer.opt_wm)?;
        trainer.epoch = loaded.epochs_completed;
        trainer.global_step = loaded.global_step;
        Ok(trainer)
    }
}

fn scores(outs: &[DiscOutput]) -> Vec<TensorId> {
    outs.iter().map(|o| o.score).collect()
}

fn features(outs: &[DiscOutput]) -> Vec<Vec<TensorId>> {
    outs.iter().map(|o| o.features.clone()).collect()
}
