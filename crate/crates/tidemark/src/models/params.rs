//! Named parameter storage shared by all models.
//!
//! Model structs hold [`ParamId`]s into a [`ParamStore`]; per training step
//! the store is bound into a fresh graph (trainably or frozen) and the model
//! forward code looks tensor ids up through the [`Binding`]. Checkpointing
//! serializes stores by name, so parameter names are stable identifiers.

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Gradients, Graph, Tensor, TensorId};

/// Handle to one parameter tensor in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

/// An ordered, named collection of parameter tensors.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: Vec<(String, Tensor)>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(
            self.entries.iter().all(|(n, _)| *n != name),
            "duplicate parameter name '{name}'"
        );
        self.entries.push((name, value));
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total scalar count across all parameters.
    pub fn numel(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].1
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].1
    }

    /// Mutable access by store order, for optimizers walking a gradient list
    /// collected in the same order.
    pub fn get_mut_index(&mut self, index: usize) -> &mut Tensor {
        &mut self.entries[index].1
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].0
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    /// Replace a tensor by name (used when loading checkpoints).
    pub fn set_by_name(&mut self, name: &str, value: Tensor) -> crate::Result<()> {
        for (n, t) in &mut self.entries {
            if n == name {
                if t.shape() != value.shape() {
                    return Err(crate::Error::Invalid(format!(
                        "parameter '{name}' shape {:?} does not match stored {:?}",
                        value.shape(),
                        t.shape()
                    )));
                }
                *t = value;
                return Ok(());
            }
        }
        Err(crate::Error::Invalid(format!("unknown parameter '{name}'")))
    }

    /// Insert every parameter as a trainable graph input.
    pub fn bind(&self, g: &mut Graph) -> Binding {
        Binding {
            ids: self.entries.iter().map(|(_, t)| g.param(t.clone())).collect(),
        }
    }

    /// Insert every parameter as a gradient-opaque constant.
    pub fn bind_frozen(&self, g: &mut Graph) -> Binding {
        Binding {
            ids: self.entries.iter().map(|(_, t)| g.leaf(t.clone())).collect(),
        }
    }
}

/// Graph tensor ids for one store bound into one graph.
#[derive(Debug, Clone)]
pub struct Binding {
    ids: Vec<TensorId>,
}

impl Binding {
    pub fn id(&self, p: ParamId) -> TensorId {
        self.ids[p.0]
    }

    pub fn ids(&self) -> &[TensorId] {
        &self.ids
    }

    /// Pull this store's gradients out of a backward sweep, `None` where a
    /// parameter was unreachable from the loss.
    pub fn collect_grads(&self, grads: &mut Gradients) -> Vec<Option<Tensor>> {
        self.ids.iter().map(|&id| grads.take(id)).collect()
    }
}

/// Standard normal draw via Box-Muller on the store's RNG stream.
fn normal(rng: &mut ChaCha8Rng) -> f64 {
    use rand::Rng;
    loop {
        let u1: f64 = rng.random();
        if u1 <= f64::MIN_POSITIVE {
            continue;
        }
        let u2: f64 = rng.random();
        return (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
    }
}

/// Add a weight tensor initialized from N(0, std^2).
pub fn add_normal(
    store: &mut ParamStore,
    name: impl Into<String>,
    shape: Vec<usize>,
    std: f64,
    rng: &mut ChaCha8Rng,
) -> ParamId {
    let numel: usize = shape.iter().product();
    let data = (0..numel).map(|_| normal(rng) * std).collect();
    store.add(name, Tensor::new(shape, data))
}

/// Add a zero-initialized tensor (biases).
pub fn add_zeros(store: &mut ParamStore, name: impl Into<String>, shape: Vec<usize>) -> ParamId {
    store.add(name, Tensor::zeros(shape))
}
