//! Watermark detector: scores a whole waveform with one scalar (higher =
//! more real). The input is resampled differentiably to 16 kHz, projected to
//! a log-mel spectrogram, and passed through a small strided 2-D conv stack
//! with global mean pooling. The stack deliberately contains no
//! normalization and no dropout layers, so collaborative gradients reach the
//! generator undistorted.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{MelFrontend, MelParams, DETECTOR_SAMPLE_RATE, SAMPLE_RATE};
use crate::autodiff::{Graph, TensorId};
use crate::dsp::ResamplePlan;
use crate::error::{Error, Result};
use crate::models::params::{add_normal, add_zeros, Binding, ParamId, ParamStore};
use crate::models::LayerKind;

const SLOPE: f64 = 0.1;
const KERNEL: usize = 3;

/// Structural hyperparameters for the detector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorConfig {
    /// Hidden channel widths of the strided conv stack.
    pub widths: Vec<usize>,
    /// Internal rate the detector hears, independent of the corpus rate.
    pub input_rate: u32,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            widths: vec![8, 16, 32],
            input_rate: DETECTOR_SAMPLE_RATE,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() {
            return Err(Error::Invalid("detector needs hidden widths".into()));
        }
        if self.input_rate == 0 {
            return Err(Error::Invalid("detector input rate must be positive".into()));
        }
        Ok(())
    }
}

/// The detector's parameters plus its fixed signal-processing front end.
pub struct Detector {
    config: DetectorConfig,
    store: ParamStore,
    convs: Vec<(ParamId, ParamId)>,
    head: (ParamId, ParamId),
    resample: Arc<ResamplePlan>,
    frontend: MelFrontend,
}

impl Detector {
    pub fn new(config: DetectorConfig, seed: u64) -> Self {
        config.validate().expect("invalid detector config");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let mut convs = Vec::new();
        let mut c_in = 1;
        for (l, &c_out) in config.widths.iter().enumerate() {
            convs.push((
                add_normal(
                    &mut store,
                    format!("wm.conv{l}.weight"),
                    vec![c_out, c_in, KERNEL, KERNEL],
                    0.01,
                    &mut rng,
                ),
                add_zeros(&mut store, format!("wm.conv{l}.bias"), vec![c_out]),
            ));
            c_in = c_out;
        }
        let head = (
            add_normal(&mut store, "wm.head.weight", vec![1, c_in, KERNEL, KERNEL], 0.01, &mut rng),
            add_zeros(&mut store, "wm.head.bias", vec![1]),
        );
        let resample = Arc::new(ResamplePlan::new(SAMPLE_RATE, config.input_rate, 16, 0.99));
        let frontend = MelFrontend::new(MelParams {
            sample_rate: config.input_rate,
            ..MelParams::default()
        });
        Detector {
            config,
            store,
            convs,
            head,
            resample,
            frontend,
        }
    }

    pub fn config(&self) -> &DetectorConfig {
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

    /// Shortest waveform (at the corpus rate) the front end can score.
    pub fn min_input_len(&self) -> usize {
        let win = self.frontend.params.win_length;
        // Invert the resampler's floor-rounded length map with headroom.
        (win * SAMPLE_RATE as usize).div_ceil(self.config.input_rate as usize) + 1
    }

    /// Score `[batch, 1, t]` waveforms at the corpus rate; returns `[batch]`.
    pub fn forward(&self, g: &mut Graph, b: &Binding, x: TensorId) -> Result<TensorId> {
        let shape = g.value(x).shape().to_vec();
        assert_eq!(shape.len(), 3, "detector input must be [batch, 1, t]");
        if shape[2] < self.min_input_len() {
            return Err(Error::Invalid(format!(
                "input of {} samples is shorter than one detector frame ({})",
                shape[2],
                self.min_input_len()
            )));
        }
        let down = g.resample(x, &self.resample);
        let mel = self.frontend.log_mel_graph(g, down);
        // The front end collapses to [batch, n_mels, frames]; convs want a
        // single-channel image.
        let ms = g.value(mel).shape().to_vec();
        let mut h = g.reshape(mel, vec![shape[0], 1, ms[1], ms[2]]);
        for &(w, bias) in &self.convs {
            h = g.conv2d(h, b.id(w), Some(b.id(bias)), (2, 2), (1, 1));
            h = g.leaky_relu(h, SLOPE);
        }
        h = g.conv2d(h, b.id(self.head.0), Some(b.id(self.head.1)), (1, 1), (1, 1));
        Ok(g.global_mean_pool(h))
    }

    pub fn layer_inventory(&self) -> Vec<LayerKind> {
        let mut layers = vec![LayerKind::Resample, LayerKind::LogMel];
        for _ in &self.convs {
            layers.push(LayerKind::Conv2d);
            layers.push(LayerKind::LeakyRelu);
        }
        layers.push(LayerKind::Conv2d);
        layers.push(LayerKind::GlobalMeanPool);
        layers
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;
    use rand::Rng;

    fn noise(b: usize, t: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..b * t).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::new(vec![b, 1, t], data)
    }

    #[test]
    fn variable_lengths_yield_one_scalar_per_element() {
        let det = Detector::new(DetectorConfig::default(), 1);
        for t in [22050, 7 * 22050] {
            let mut g = Graph::new();
            let b = det.bind_frozen(&mut g);
            let x = g.leaf(noise(2, t, 8));
            let score = det.forward(&mut g, &b, x).unwrap();
            assert_eq!(g.value(score).shape(), &[2]);
            assert!(g.value(score).data().iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn too_short_input_is_rejected() {
        let det = Detector::new(DetectorConfig::default(), 1);
        let mut g = Graph::new();
        let b = det.bind_frozen(&mut g);
        let x = g.leaf(noise(1, 512, 9));
        assert!(det.forward(&mut g, &b, x).is_err());
    }

    #[test]
    fn no_normalization_or_dropout_layers() {
        let det = Detector::new(DetectorConfig::default(), 1);
        let inv = det.layer_inventory();
        assert!(!inv.contains(&LayerKind::BatchNorm));
        assert!(!inv.contains(&LayerKind::Dropout));
        assert!(inv.contains(&LayerKind::Resample));
        assert!(inv.contains(&LayerKind::GlobalMeanPool));
    }

    #[test]
    fn score_gradient_wrt_input_exists_and_is_finite() {
        let det = Detector::new(DetectorConfig::default(), 1);
        let mut g = Graph::new();
        let b = det.bind_frozen(&mut g);
        let x = g.param(noise(1, 4096, 10));
        let score = det.forward(&mut g, &b, x).unwrap();
        let loss = g.mean_all(score);
        let grads = g.backward(loss).unwrap();
        let gx = grads.get(x).expect("input gradient");
        assert!(gx.data().iter().all(|v| v.is_finite()));
        assert!(gx.data().iter().any(|v| *v != 0.0));
    }

    #[test]
    fn deterministic_scoring() {
        let det = Detector::new(DetectorConfig::default(), 2);
        let run = || {
            let mut g = Graph::new();
            let b = det.bind_frozen(&mut g);
            let x = g.leaf(noise(1, 8192, 11));
            let score = det.forward(&mut g, &b, x).unwrap();
            g.value(score).data()[0]
        };
        assert_eq!(run().to_bits(), run().to_bits());
    }
}
