//! The five training losses and the gradient-routing switch between the
//! observer and collaborator detector roles.

use serde::{Deserialize, Serialize};

use crate::audio::MelFrontend;
use crate::autodiff::{Graph, TensorId};
use crate::error::{Error, Result};

/// Scalar weights on the generator's composite loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub fm: f64,
    pub mel: f64,
    pub wm: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            fm: 2.0,
            mel: 45.0,
            wm: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.fm < 0.0 || self.mel < 0.0 || self.wm < 0.0 {
            return Err(Error::Invalid("loss weights must be non-negative".into()));
        }
        Ok(())
    }
}

/// Whether the watermark detector's loss trains the generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoleMode {
    /// Detector watches generator outputs; no watermark gradient reaches G.
    Observer,
    /// Detector loss flows into G through the straight-through channel, so G
    /// actively shapes its output to be detectable.
    Collaborator,
}

impl std::str::FromStr for RoleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "observer" => Ok(RoleMode::Observer),
            "collaborator" => Ok(RoleMode::Collaborator),
            other => Err(Error::Invalid(format!(
                "unknown role mode `{other}` (expected observer|collaborator)"
            ))),
        }
    }
}

/// Distance used by feature matching: the squared form is the primary
/// definition; the absolute form is the conventional vocoder recipe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMatchKind {
    #[default]
    Squared,
    Absolute,
}

/// Least-squares discriminator loss: mean over batch, timesteps, and
/// sub-discriminators of `(D(real) - 1)^2 + D(gen)^2`. The generated scores
/// must come from a detached waveform.
pub fn loss_discriminator(g: &mut Graph, real_scores: &[TensorId], gen_scores: &[TensorId]) -> TensorId {
    assert_eq!(real_scores.len(), gen_scores.len());
    assert!(!real_scores.is_empty(), "no sub-discriminator scores");
    let mut total = None;
    for (&r, &f) in real_scores.iter().zip(gen_scores) {
        let rm1 = g.add_scalar(r, -1.0);
        let rsq = g.square(rm1);
        let rmean = g.mean_all(rsq);
        let fsq = g.square(f);
        let fmean = g.mean_all(fsq);
        let sub = g.add(rmean, fmean);
        total = Some(match total {
            None => sub,
            Some(t) => g.add(t, sub),
        });
    }
    let total = total.unwrap();
    g.mul_scalar(total, 1.0 / real_scores.len() as f64)
}

/// Least-squares adversarial generator loss: mean of `(D(gen) - 1)^2`.
pub fn loss_generator_adv(g: &mut Graph, gen_scores: &[TensorId]) -> TensorId {
    assert!(!gen_scores.is_empty(), "no sub-discriminator scores");
    let mut total = None;
    for &f in gen_scores {
        let fm1 = g.add_scalar(f, -1.0);
        let sq = g.square(fm1);
        let mean = g.mean_all(sq);
        total = Some(match total {
            None => mean,
            Some(t) => g.add(t, mean),
        });
    }
    let total = total.unwrap();
    g.mul_scalar(total, 1.0 / gen_scores.len() as f64)
}

/// Feature matching: sum over every hidden activation of the mean distance
/// between real and generated features.
pub fn loss_feature_matching(
    g: &mut Graph,
    real_feats: &[Vec<TensorId>],
    gen_feats: &[Vec<TensorId>],
    kind: FeatureMatchKind,
) -> Result<TensorId> {
    if real_feats.len() != gen_feats.len() {
        return Err(Error::ShapeMismatch {
            op: "loss_feature_matching",
            detail: format!(
                "{} real vs {} generated sub-discriminators",
                real_feats.len(),
                gen_feats.len()
            ),
        });
    }
    let mut total = None;
    for (sub, (rs, fs)) in real_feats.iter().zip(gen_feats).enumerate() {
        if rs.len() != fs.len() {
            return Err(Error::ShapeMismatch {
                op: "loss_feature_matching",
                detail: format!("sub-discriminator {sub}: {} vs {} layers", rs.len(), fs.len()),
            });
        }
        for (layer, (&r, &f)) in rs.iter().zip(fs).enumerate() {
            if g.value(r).shape() != g.value(f).shape() {
                return Err(Error::ShapeMismatch {
                    op: "loss_feature_matching",
                    detail: format!("sub {sub} layer {layer}: shapes differ"),
                });
            }
            let d = g.sub(r, f);
            let dist = match kind {
                FeatureMatchKind::Squared => g.square(d),
                FeatureMatchKind::Absolute => g.abs(d),
            };
            let mean = g.mean_all(dist);
            total = Some(match total {
                None => mean,
                Some(t) => g.add(t, mean),
            });
        }
    }
    total.ok_or(Error::ShapeMismatch {
        op: "loss_feature_matching",
        detail: "no features".into(),
    })
}

/// L1 distance between log-mel spectrograms of two equal-length waveform
/// batches.
pub fn loss_mel(
    g: &mut Graph,
    frontend: &MelFrontend,
    real: TensorId,
    gen: TensorId,
) -> Result<TensorId> {
    if g.value(real).shape() != g.value(gen).shape() {
        return Err(Error::ShapeMismatch {
            op: "loss_mel",
            detail: format!(
                "{:?} vs {:?}",
                g.value(real).shape(),
                g.value(gen).shape()
            ),
        });
    }
    let mr = frontend.log_mel_graph(g, real);
    let mg = frontend.log_mel_graph(g, gen);
    Ok(loss_mel_from_specs(g, mr, mg))
}

/// Same distance on log-mel spectrograms that were already computed, so a
/// caller that feeds the generator from a mel node can reuse it as the loss
/// reference instead of running a second analysis pass.
pub fn loss_mel_from_specs(g: &mut Graph, mel_real: TensorId, mel_gen: TensorId) -> TensorId {
    let d = g.sub(mel_real, mel_gen);
    let a = g.abs(d);
    g.mean_all(a)
}

/// Watermark detection loss: mean of `(WM(real) - 1)^2 + WM(gen)^2` over the
/// batch. The real path carries codec-augmented real speech; the generated
/// path carries the straight-through codec output.
pub fn loss_watermark(g: &mut Graph, real_score: TensorId, gen_score: TensorId) -> TensorId {
    let rm1 = g.add_scalar(real_score, -1.0);
    let rsq = g.square(rm1);
    let rmean = g.mean_all(rsq);
    let fsq = g.square(gen_score);
    let fmean = g.mean_all(fsq);
    g.add(rmean, fmean)
}

/// All generator-facing loss terms, already built on the live graph.
#[derive(Debug, Clone, Copy)]
pub struct GeneratorLossParts {
    pub adv: TensorId,
    pub fm: TensorId,
    pub mel: TensorId,
    pub wm: TensorId,
}

/// Combine the generator's loss terms according to the detector role.
/// Observers contribute the watermark term as a detached constant, so its
/// gradient never reaches the generator; collaborators let it flow through
/// the straight-through channel. Zero-weighted terms are dropped entirely.
pub fn route_generator_loss(
    g: &mut Graph,
    mode: RoleMode,
    parts: GeneratorLossParts,
    weights: &LossWeights,
) -> TensorId {
    let mut total = parts.adv;
    if weights.fm != 0.0 {
        let t = g.mul_scalar(parts.fm, weights.fm);
        total = g.add(total, t);
    }
    if weights.mel != 0.0 {
        let t = g.mul_scalar(parts.mel, weights.mel);
        total = g.add(total, t);
    }
    if weights.wm != 0.0 {
        let wm = match mode {
            RoleMode::Observer => g.detach(parts.wm),
            RoleMode::Collaborator => parts.wm,
        };
        let t = g.mul_scalar(wm, weights.wm);
        total = g.add(total, t);
    }
    total
}
