//! Adversarial discriminator ensemble: multi-period sub-discriminators that
//! view the waveform folded into period-strided frames, plus one multi-scale
//! sub-discriminator running strided 1-D convolutions on the raw waveform.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, TensorId};
use crate::error::{Error, Result};
use crate::models::params::{add_normal, add_zeros, Binding, ParamId, ParamStore};
use crate::models::LayerKind;

const SLOPE: f64 = 0.1;

/// Structural hyperparameters for the ensemble.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscriminatorConfig {
    pub mpd_periods: Vec<usize>,
    pub msd_scales: usize,
    /// Hidden channel widths shared by every sub-discriminator.
    pub widths: Vec<usize>,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        DiscriminatorConfig {
            mpd_periods: vec![2, 3],
            msd_scales: 1,
            widths: vec![8, 16, 32],
        }
    }
}

impl DiscriminatorConfig {
    pub fn validate(&self) -> Result<()> {
        for (i, &p) in self.mpd_periods.iter().enumerate() {
            if p < 2 {
                return Err(Error::Invalid(format!("mpd period {p} must be >= 2")));
            }
            if self.mpd_periods[..i].contains(&p) {
                return Err(Error::Invalid(format!("duplicate mpd period {p}")));
            }
        }
        if self.msd_scales != 1 {
            return Err(Error::Invalid("only one msd scale is implemented".into()));
        }
        if self.widths.is_empty() {
            return Err(Error::Invalid("discriminator needs hidden widths".into()));
        }
        Ok(())
    }

    pub fn n_subs(&self) -> usize {
        self.mpd_periods.len() + self.msd_scales
    }
}

struct PeriodDisc {
    period: usize,
    convs: Vec<(ParamId, ParamId)>,
    post: (ParamId, ParamId),
}

struct ScaleDisc {
    convs: Vec<(ParamId, ParamId)>,
    /// (kernel, stride) per conv layer.
    layout: Vec<(usize, usize)>,
    post: (ParamId, ParamId),
}

/// One sub-discriminator's outputs: a per-timestep score map and the hidden
/// activations feeding the feature-matching loss.
pub struct DiscOutput {
    pub score: TensorId,
    pub features: Vec<TensorId>,
}

/// The full ensemble under one parameter store.
pub struct Ensemble {
    config: DiscriminatorConfig,
    store: ParamStore,
    periods: Vec<PeriodDisc>,
    scale: ScaleDisc,
}

impl Ensemble {
    pub fn new(config: DiscriminatorConfig, seed: u64) -> Self {
        config.validate().expect("invalid discriminator config");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let widths = &config.widths;

        let mut periods = Vec::new();
        for &period in &config.mpd_periods {
            let mut convs = Vec::new();
            let mut c_in = 1;
            for (l, &c_out) in widths.iter().enumerate() {
                convs.push((
                    add_normal(
                        &mut store,
                        format!("d.p{period}.conv{l}.weight"),
                        vec![c_out, c_in, 5, 1],
                        0.01,
                        &mut rng,
                    ),
                    add_zeros(&mut store, format!("d.p{period}.conv{l}.bias"), vec![c_out]),
                ));
                c_in = c_out;
            }
            let post = (
                add_normal(
                    &mut store,
                    format!("d.p{period}.post.weight"),
                    vec![1, c_in, 3, 1],
                    0.01,
                    &mut rng,
                ),
                add_zeros(&mut store, format!("d.p{period}.post.bias"), vec![1]),
            );
            periods.push(PeriodDisc {
                period,
                convs,
                post,
            });
        }

        // Scale branch: a wide first view, two stride-4 reductions, then a
        // score head.
        let mut layout = vec![(15, 1)];
        layout.extend(std::iter::repeat_n((21, 4), widths.len().saturating_sub(1)));
        let mut convs = Vec::new();
        let mut c_in = 1;
        for (l, (&c_out, &(k, _))) in widths.iter().zip(&layout).enumerate() {
            convs.push((
                add_normal(
                    &mut store,
                    format!("d.s0.conv{l}.weight"),
                    vec![c_out, c_in, k],
                    0.01,
                    &mut rng,
                ),
                add_zeros(&mut store, format!("d.s0.conv{l}.bias"), vec![c_out]),
            ));
            c_in = c_out;
        }
        let post = (
            add_normal(&mut store, "d.s0.post.weight", vec![1, c_in, 3], 0.01, &mut rng),
            add_zeros(&mut store, "d.s0.post.bias", vec![1]),
        );
        let scale = ScaleDisc {
            convs,
            layout,
            post,
        };

        Ensemble {
            config,
            store,
            periods,
            scale,
        }
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn bind(&self, g: &mut Graph) -> Binding {
        self.store.bind(g)
    }

    pub fn bind_frozen(&self, g: &mut Graph) -> Binding {
        self.store.bind_frozen(g)
    }

    /// Score a waveform batch `[batch, 1, t]` with every sub-discriminator.
    pub fn forward(&self, g: &mut Graph, b: &Binding, x: TensorId) -> Vec<DiscOutput> {
        let mut out = Vec::new();
        for p in &self.periods {
            out.push(self.forward_period(g, b, x, p));
        }
        out.push(self.forward_scale(g, b, x));
        out
    }

    /// Fold `[batch, 1, t]` into `[batch, 1, ceil(t/period), period]` and run
    /// height-strided 2-D convolutions.
    fn forward_period(&self, g: &mut Graph, b: &Binding, x: TensorId, p: &PeriodDisc) -> DiscOutput {
        let shape = g.value(x).shape().to_vec();
        let (batch, t) = (shape[0], shape[2]);
        let frames = t.div_ceil(p.period);
        let mut h = x;
        if frames * p.period > t {
            h = g.pad_right_time(h, frames * p.period - t);
        }
        h = g.reshape(h, vec![batch, 1, frames, p.period]);
        let mut features = Vec::new();
        for &(w, bias) in &p.convs {
            h = g.conv2d(h, b.id(w), Some(b.id(bias)), (3, 1), (2, 0));
            h = g.leaky_relu(h, SLOPE);
            features.push(h);
        }
        let score = g.conv2d(h, b.id(p.post.0), Some(b.id(p.post.1)), (1, 1), (1, 0));
        DiscOutput { score, features }
    }

    fn forward_scale(&self, g: &mut Graph, b: &Binding, x: TensorId) -> DiscOutput {
        let mut h = x;
        let mut features = Vec::new();
        for (&(w, bias), &(k, stride)) in self.scale.convs.iter().zip(&self.scale.layout) {
            h = g.conv1d(h, b.id(w), Some(b.id(bias)), stride, k / 2, 1);
            h = g.leaky_relu(h, SLOPE);
            features.push(h);
        }
        let score = g.conv1d(h, b.id(self.scale.post.0), Some(b.id(self.scale.post.1)), 1, 1, 1);
        DiscOutput { score, features }
    }

    pub fn layer_inventory(&self) -> Vec<LayerKind> {
        let mut layers = Vec::new();
        for p in &self.periods {
            for _ in &p.convs {
                layers.push(LayerKind::Conv2d);
                layers.push(LayerKind::LeakyRelu);
            }
            layers.push(LayerKind::Conv2d);
        }
        for _ in &self.scale.convs {
            layers.push(LayerKind::Conv1d);
            layers.push(LayerKind::LeakyRelu);
        }
        layers.push(LayerKind::Conv1d);
        layers
    }
}
