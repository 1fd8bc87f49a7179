//! Toy neural audio codec with residual vector quantization.
//!
//! A small convolutional encoder compresses the waveform 256x in time, two
//! RVQ stages snap each latent frame to learned codebook entries, and a
//! mirrored transposed-convolution decoder reconstructs the waveform. The
//! quantizer is non-differentiable, so the decoder path re-enters the graph
//! through a straight-through estimator and the codebooks train on their own
//! quantization loss. Trained briefly on a handful of clips it becomes a
//! crude but genuinely learned codec for channel augmentation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Tensor, TensorId};
use crate::models::params::{add_normal, add_zeros, Binding, ParamId, ParamStore};
use crate::training::optim::AdamW;

/// Total time compression: four conv stages of stride 4.
pub const FRAME: usize = 256;
/// Latent channels per frame vector.
pub const LATENT: usize = 64;
/// Codebook entries per RVQ stage.
pub const CODEBOOK: usize = 256;
/// RVQ stages.
pub const STAGES: usize = 2;

const KERNEL: usize = 8;
const STRIDE: usize = 4;
const PAD: usize = 2;
const SLOPE: f64 = 0.1;
const ENC_WIDTHS: [usize; 5] = [1, 16, 32, LATENT, LATENT];
const COMMITMENT: f64 = 0.25;

struct ConvParams {
    weight: ParamId,
    bias: ParamId,
}

/// The codec's learnable state.
pub struct RvqCodec {
    store: ParamStore,
    enc: Vec<ConvParams>,
    dec: Vec<ConvParams>,
    codebooks: Vec<ParamId>,
}

/// Graph handles produced by one codec forward pass.
pub struct RvqForward {
    /// Reconstruction, same shape as the input.
    pub recon: TensorId,
    /// Codebook plus commitment loss (scalar).
    pub vq_loss: TensorId,
    /// Chosen codebook rows, one list per stage.
    pub indices: Vec<Vec<usize>>,
}

impl RvqCodec {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let mut enc = Vec::new();
        for i in 0..4 {
            let (c_in, c_out) = (ENC_WIDTHS[i], ENC_WIDTHS[i + 1]);
            enc.push(ConvParams {
                weight: add_normal(
                    &mut store,
                    format!("enc{i}.weight"),
                    vec![c_out, c_in, KERNEL],
                    0.01,
                    &mut rng,
                ),
                bias: add_zeros(&mut store, format!("enc{i}.bias"), vec![c_out]),
            });
        }
        let mut codebooks = Vec::new();
        for s in 0..STAGES {
            codebooks.push(add_normal(
                &mut store,
                format!("codebook{s}"),
                vec![CODEBOOK, LATENT],
                0.01,
                &mut rng,
            ));
        }
        let mut dec = Vec::new();
        for i in 0..4 {
            // Transposed-conv weights are laid out [c_in, c_out, k]; the
            // decoder walks the encoder widths in reverse.
            let (c_in, c_out) = (ENC_WIDTHS[4 - i], ENC_WIDTHS[3 - i]);
            dec.push(ConvParams {
                weight: add_normal(
                    &mut store,
                    format!("dec{i}.weight"),
                    vec![c_in, c_out, KERNEL],
                    0.01,
                    &mut rng,
                ),
                bias: add_zeros(&mut store, format!("dec{i}.bias"), vec![c_out]),
            });
        }
        RvqCodec {
            store,
            enc,
            dec,
            codebooks,
        }
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn bind(&self, g: &mut Graph) -> Binding {
        self.store.bind(g)
    }

    pub fn bind_frozen(&self, g: &mut Graph) -> Binding {
        self.store.bind_frozen(g)
    }

    /// Encode `[batch, 1, t]` (t a multiple of [`FRAME`]) to latent frames
    /// `[batch, LATENT, t / FRAME]`.
    fn encode(&self, g: &mut Graph, b: &Binding, x: TensorId) -> TensorId {
        let mut h = x;
        for layer in &self.enc {
            h = g.conv1d(h, b.id(layer.weight), Some(b.id(layer.bias)), STRIDE, PAD, 1);
            h = g.leaky_relu(h, SLOPE);
        }
        h
    }

    fn decode(&self, g: &mut Graph, b: &Binding, z: TensorId) -> TensorId {
        let mut h = z;
        for (i, layer) in self.dec.iter().enumerate() {
            h = g.conv_transpose1d(h, b.id(layer.weight), Some(b.id(layer.bias)), STRIDE, PAD);
            if i + 1 < self.dec.len() {
                h = g.leaky_relu(h, SLOPE);
            }
        }
        g.tanh(h)
    }

    /// Residual quantization of latent frames `[batch, LATENT, frames]`.
    /// Returns the straight-through latents (same shape), the VQ loss, and
    /// the per-stage indices.
    fn quantize(&self, g: &mut Graph, b: &Binding, z: TensorId) -> (TensorId, TensorId, Vec<Vec<usize>>) {
        let shape = g.value(z).shape().to_vec();
        let (batch, frames) = (shape[0], shape[2]);
        let zt = g.transpose_last2(z);
        let flat = g.reshape(zt, vec![batch * frames, LATENT]);

        let mut residual = g.value(flat).data().to_vec();
        let mut indices = Vec::new();
        let mut q = None;
        for &cb in &self.codebooks {
            let codebook = g.value(b.id(cb)).data().to_vec();
            let idx = nearest_rows(&residual, &codebook);
            for (row, &k) in idx.iter().enumerate() {
                for d in 0..LATENT {
                    residual[row * LATENT + d] -= codebook[k * LATENT + d];
                }
            }
            let q_stage = g.gather_rows(b.id(cb), idx.clone());
            indices.push(idx);
            q = Some(match q {
                None => q_stage,
                Some(prev) => g.add(prev, q_stage),
            });
        }
        let q = q.expect("at least one RVQ stage");

        let detached_z = g.detach(flat);
        let codebook_err = g.sub(detached_z, q);
        let codebook_sq = g.square(codebook_err);
        let codebook_loss = g.mean_all(codebook_sq);
        let detached_q = g.detach(q);
        let commit_err = g.sub(flat, detached_q);
        let commit_sq = g.square(commit_err);
        let commit_loss = g.mean_all(commit_sq);
        let commit_scaled = g.mul_scalar(commit_loss, COMMITMENT);
        let vq_loss = g.add(codebook_loss, commit_scaled);

        let q_value = g.value(q).clone();
        let ste = g.straight_through(flat, q_value);
        let unflat = g.reshape(ste, vec![batch, frames, LATENT]);
        let z_q = g.transpose_last2(unflat);
        (z_q, vq_loss, indices)
    }

    /// Full round-trip inside a graph. Input `[batch, 1, t]` for any `t`;
    /// the waveform is zero-padded to a frame multiple and trimmed back.
    pub fn forward_graph(&self, g: &mut Graph, b: &Binding, x: TensorId) -> RvqForward {
        let shape = g.value(x).shape().to_vec();
        assert_eq!(shape.len(), 3, "codec input must be [batch, 1, t]");
        let t = shape[2];
        let padded_t = t.div_ceil(FRAME) * FRAME;
        let mut h = x;
        if padded_t > t {
            h = g.pad_right_time(h, padded_t - t);
        }
        let z = self.encode(g, b, h);
        let (z_q, vq_loss, indices) = self.quantize(g, b, z);
        let mut recon = self.decode(g, b, z_q);
        if padded_t > t {
            recon = g.narrow_time(recon, 0, t);
        }
        RvqForward {
            recon,
            vq_loss,
            indices,
        }
    }

    /// Value-only round-trip for channel use: no gradients, output exactly
    /// as long as the input. The codec introduces no delay.
    pub fn roundtrip_value(&self, samples: &[f64]) -> Vec<f64> {
        let mut g = Graph::new();
        let binding = self.bind_frozen(&mut g);
        let x = g.leaf(Tensor::new(vec![1, 1, samples.len()], samples.to_vec()));
        let fwd = self.forward_graph(&mut g, &binding, x);
        g.value(fwd.recon).data().to_vec()
    }

    /// Train briefly on `clips` (cycled) with reconstruction plus VQ loss.
    /// Returns the final combined loss.
    pub fn train_brief(&mut self, clips: &[Vec<f64>], steps: usize, lr: f64) -> f64 {
        assert!(!clips.is_empty(), "need at least one training clip");
        let mut opt = AdamW::new(&self.store, lr, (0.8, 0.99), 0.0);
        let mut last = f64::NAN;
        for step in 0..steps {
            let clip = &clips[step % clips.len()];
            let mut g = Graph::new();
            let binding = self.bind(&mut g);
            let x = g.leaf(Tensor::new(vec![1, 1, clip.len()], clip.clone()));
            let fwd = self.forward_graph(&mut g, &binding, x);
            let err = g.sub(fwd.recon, x);
            let sq = g.square(err);
            let recon_loss = g.mean_all(sq);
            let loss = g.add(recon_loss, fwd.vq_loss);
            last = g.value(loss).data()[0];
            let mut grads = g.backward(loss).expect("scalar codec loss");
            let collected = binding.collect_grads(&mut grads);
            opt.step(&mut self.store, &collected);
        }
        last
    }
}

/// For each row of `rows` (`[n, LATENT]` flattened), the index of the nearest
/// codebook row by squared distance.
fn nearest_rows(rows: &[f64], codebook: &[f64]) -> Vec<usize> {
    let n = rows.len() / LATENT;
    let k = codebook.len() / LATENT;
    (0..n)
        .map(|r| {
            let row = &rows[r * LATENT..(r + 1) * LATENT];
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (c, entry) in codebook.chunks_exact(LATENT).enumerate().take(k) {
                let d: f64 = row
                    .iter()
                    .zip(entry)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            best
        })
        .collect()
}
