//! AdamW with decoupled weight decay, plus global gradient-norm clipping.

use crate::autodiff::Tensor;
use crate::models::params::ParamStore;

/// AdamW optimizer state for one parameter store.
///
/// Moment buffers are allocated per parameter and indexed by store order, so
/// gradients must be collected with [`crate::models::params::Binding::collect_grads`]
/// against the same store.
#[derive(Debug, Clone)]
pub struct AdamW {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamW {
    pub fn new(store: &ParamStore, lr: f64, betas: (f64, f64), weight_decay: f64) -> Self {
        let sizes: Vec<usize> = store.iter().map(|(_, t)| t.numel()).collect();
        AdamW {
            lr,
            beta1: betas.0,
            beta2: betas.1,
            eps: 1e-8,
            weight_decay,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    /// Moment buffers and step counter, in store order, for checkpointing.
    pub fn state(&self) -> (&[Vec<f64>], &[Vec<f64>], u64) {
        (&self.m, &self.v, self.t)
    }

    /// Restore a snapshot taken with [`AdamW::state`].
    pub fn restore(&mut self, m: Vec<Vec<f64>>, v: Vec<Vec<f64>>, t: u64) {
        assert_eq!(m.len(), self.m.len(), "moment count mismatch");
        assert_eq!(v.len(), self.v.len(), "moment count mismatch");
        for (new, old) in m.iter().zip(&self.m).chain(v.iter().zip(&self.v)) {
            assert_eq!(new.len(), old.len(), "moment size mismatch");
        }
        self.m = m;
        self.v = v;
        self.t = t;
    }

    /// Apply one update. Parameters whose gradient is `None` are skipped
    /// entirely (no decay, no moment update).
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Option<Tensor>]) {
        assert_eq!(grads.len(), store.len(), "gradient list does not match store");
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, grad) in grads.iter().enumerate() {
            let Some(g) = grad else { continue };
            let param = store.get_mut_index(i);
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            debug_assert_eq!(g.numel(), param.numel());
            for (((p, gi), mi), vi) in param
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *p -= self.lr * (m_hat / (v_hat.sqrt() + self.eps) + self.weight_decay * *p);
            }
        }
    }
}

/// Scale `grads` in place so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
/// Global l2 norm over a gradient list; `None` entries contribute nothing.
pub fn gradient_norm(grads: &[Option<Tensor>]) -> f64 {
    grads
        .iter()
        .flatten()
        .map(|g| g.data().iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}

pub fn clip_gradient_norm(grads: &mut [Option<Tensor>], max_norm: f64) -> f64 {
    let norm = gradient_norm(grads);
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for g in grads.iter_mut().flatten() {
            for v in g.data_mut() {
                *v *= scale;
            }
        }
    }
    norm
}
