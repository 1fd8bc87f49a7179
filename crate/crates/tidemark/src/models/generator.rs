//! Waveform generator: a fully convolutional mel-to-waveform vocoder that
//! upsamples mel frames back to sample rate through transposed convolutions
//! interleaved with dilated residual blocks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, TensorId};
use crate::error::{Error, Result};
use crate::models::params::{add_normal, add_zeros, Binding, ParamId, ParamStore};
use crate::models::LayerKind;

const SLOPE: f64 = 0.1;
const RES_DILATIONS: [usize; 2] = [1, 3];
const RES_KERNEL: usize = 3;

/// Structural hyperparameters for the generator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub n_mels: usize,
    /// Per-stage upsampling factors; their product must equal the mel hop.
    pub upsample_factors: Vec<usize>,
    /// Channel widths: entry 0 feeds the first stage, entry i+1 is stage i's
    /// output width.
    pub widths: Vec<usize>,
}

impl GeneratorConfig {
    /// Halving-width tower over upsampling factors (8, 8, 2, 2).
    pub fn toy(n_mels: usize, base_width: usize) -> Self {
        assert!(
            base_width % 16 == 0 && base_width >= 16,
            "base width must be a positive multiple of 16"
        );
        GeneratorConfig {
            n_mels,
            upsample_factors: vec![8, 8, 2, 2],
            widths: (0..5).map(|i| base_width >> i).collect(),
        }
    }

    pub fn hop(&self) -> usize {
        self.upsample_factors.iter().product()
    }

    pub fn validate(&self, mel_hop: usize) -> Result<()> {
        if self.widths.len() != self.upsample_factors.len() + 1 {
            return Err(Error::Invalid(
                "generator needs one width per stage plus the input width".into(),
            ));
        }
        if self.hop() != mel_hop {
            return Err(Error::Invalid(format!(
                "upsample product {} must equal the mel hop {mel_hop}",
                self.hop()
            )));
        }
        if self.upsample_factors.iter().any(|&u| u < 2 || u % 2 != 0) {
            return Err(Error::Invalid("upsample factors must be even and >= 2".into()));
        }
        if self.widths.iter().any(|&w| w == 0) {
            return Err(Error::Invalid("zero generator width".into()));
        }
        Ok(())
    }
}

struct UpStage {
    factor: usize,
    up: (ParamId, ParamId),
    /// One conv per residual dilation.
    res: Vec<(ParamId, ParamId)>,
}

/// The generator's parameters plus the layout to run them.
pub struct Generator {
    config: GeneratorConfig,
    store: ParamStore,
    pre: (ParamId, ParamId),
    stages: Vec<UpStage>,
    post: (ParamId, ParamId),
}

impl Generator {
    pub fn new(config: GeneratorConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let w0 = config.widths[0];
        let pre = (
            add_normal(&mut store, "g.pre.weight", vec![w0, config.n_mels, 7], 0.01, &mut rng),
            add_zeros(&mut store, "g.pre.bias", vec![w0]),
        );
        let mut stages = Vec::new();
        for (i, &factor) in config.upsample_factors.iter().enumerate() {
            let (c_in, c_out) = (config.widths[i], config.widths[i + 1]);
            let up = (
                add_normal(
                    &mut store,
                    format!("g.up{i}.weight"),
                    vec![c_in, c_out, 2 * factor],
                    0.01,
                    &mut rng,
                ),
                add_zeros(&mut store, format!("g.up{i}.bias"), vec![c_out]),
            );
            let mut res = Vec::new();
            for d in RES_DILATIONS {
                res.push((
                    add_normal(
                        &mut store,
                        format!("g.res{i}.d{d}.weight"),
                        vec![c_out, c_out, RES_KERNEL],
                        0.01,
                        &mut rng,
                    ),
                    add_zeros(&mut store, format!("g.res{i}.d{d}.bias"), vec![c_out]),
                ));
            }
            stages.push(UpStage { factor, up, res });
        }
        let w_last = *config.widths.last().unwrap();
        let post = (
            add_normal(&mut store, "g.post.weight", vec![1, w_last, 7], 0.01, &mut rng),
            add_zeros(&mut store, "g.post.bias", vec![1]),
        );
        Generator {
            config,
            store,
            pre,
            stages,
            post,
        }
    }

    pub fn config(&self) -> &GeneratorConfig {
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

    /// Mel `[batch, n_mels, frames]` to waveform `[batch, 1, frames * hop]`.
    pub fn forward(&self, g: &mut Graph, b: &Binding, mel: TensorId) -> TensorId {
        let shape = g.value(mel).shape().to_vec();
        assert_eq!(shape.len(), 3, "generator input must be [batch, n_mels, frames]");
        assert_eq!(
            shape[1], self.config.n_mels,
            "mel band count does not match the generator config"
        );
        let mut h = g.conv1d(mel, b.id(self.pre.0), Some(b.id(self.pre.1)), 1, 3, 1);
        for stage in &self.stages {
            h = g.leaky_relu(h, SLOPE);
            h = g.conv_transpose1d(
                h,
                b.id(stage.up.0),
                Some(b.id(stage.up.1)),
                stage.factor,
                stage.factor / 2,
            );
            for (&d, &(w, bias)) in RES_DILATIONS.iter().zip(&stage.res) {
                let a = g.leaky_relu(h, SLOPE);
                let c = g.conv1d(a, b.id(w), Some(b.id(bias)), 1, d, d);
                h = g.add(h, c);
            }
        }
        h = g.leaky_relu(h, SLOPE);
        h = g.conv1d(h, b.id(self.post.0), Some(b.id(self.post.1)), 1, 3, 1);
        g.tanh(h)
    }

    pub fn layer_inventory(&self) -> Vec<LayerKind> {
        let mut layers = vec![LayerKind::Conv1d];
        for _ in &self.stages {
            layers.push(LayerKind::LeakyRelu);
            layers.push(LayerKind::ConvTranspose1d);
            for _ in RES_DILATIONS {
                layers.push(LayerKind::LeakyRelu);
                layers.push(LayerKind::Conv1d);
            }
        }
        layers.push(LayerKind::LeakyRelu);
        layers.push(LayerKind::Conv1d);
        layers.push(LayerKind::Tanh);
        layers
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::MelParams;
    use crate::autodiff::Tensor;
    use rand::Rng;

    fn toy_gen(width: usize) -> Generator {
        Generator::new(GeneratorConfig::toy(80, width), 42)
    }

    #[test]
    fn config_validates_against_mel_hop() {
        let cfg = GeneratorConfig::toy(80, 32);
        assert_eq!(cfg.hop(), 256);
        assert!(cfg.validate(MelParams::default().hop).is_ok());
        assert!(cfg.validate(512).is_err());
    }

    #[test]
    fn output_length_is_frames_times_hop() {
        let gen = toy_gen(16);
        for frames in [4, 9, 32] {
            let mut g = Graph::new();
            let b = gen.bind_frozen(&mut g);
            let mel = g.leaf(Tensor::zeros(vec![1, 80, frames]));
            let out = gen.forward(&mut g, &b, mel);
            assert_eq!(g.value(out).shape(), &[1, 1, frames * 256]);
        }
    }

    #[test]
    fn forward_is_deterministic_and_finite() {
        let gen = toy_gen(16);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let data: Vec<f64> = (0..80 * 8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let run = || {
            let mut g = Graph::new();
            let b = gen.bind_frozen(&mut g);
            let mel = g.leaf(Tensor::new(vec![1, 80, 8], data.clone()));
            let out = gen.forward(&mut g, &b, mel);
            g.value(out).data().to_vec()
        };
        let a = run();
        let b = run();
        assert_eq!(a, b);
        assert!(a.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn mel_l1_gradient_reaches_every_parameter() {
        let gen = toy_gen(16);
        let mut g = Graph::new();
        let b = gen.bind(&mut g);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data: Vec<f64> = (0..80 * 4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mel = g.leaf(Tensor::new(vec![1, 80, 4], data));
        let out = gen.forward(&mut g, &b, mel);
        let target: Vec<f64> = (0..4 * 256).map(|_| rng.random_range(-0.5..0.5)).collect();
        let t = g.leaf(Tensor::new(vec![1, 1, 1024], target));
        let diff = g.sub(out, t);
        let a = g.abs(diff);
        let loss = g.mean_all(a);
        let mut grads = g.backward(loss).unwrap();
        let collected = b.collect_grads(&mut grads);
        for (i, (name, _)) in gen.store().iter().enumerate() {
            let grad = collected[i].as_ref().unwrap_or_else(|| panic!("no grad for {name}"));
            assert!(grad.data().iter().all(|v| v.is_finite()), "{name} grad not finite");
            assert!(
                grad.data().iter().any(|v| *v != 0.0),
                "{name} grad identically zero"
            );
        }
    }
}
