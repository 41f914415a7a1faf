//! Named parameter storage shared by layers, the optimizer and checkpoints.

use std::collections::HashMap;

use rand::Rng;

use crate::error::{Result, RtfnError};
use crate::tensor::{Gradients, Graph, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
struct Entry {
    name: String,
    value: Tensor,
    grad: Option<Tensor>,
    trainable: bool,
}

/// Ordered collection of named tensors.
///
/// Trainable entries carry a gradient buffer that is `None` until a backward
/// pass populates it. Non-trainable entries hold running statistics and are
/// serialized with the model but never touched by the optimizer.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: Vec<Entry>,
    by_name: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor, trainable: bool) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(RtfnError::Contract(format!("duplicate parameter name {name}")));
        }
        let id = ParamId(self.entries.len());
        self.by_name.insert(name.clone(), id.0);
        self.entries.push(Entry {
            name,
            value,
            grad: None,
            trainable,
        });
        Ok(id)
    }

    /// Adds a trainable tensor with entries drawn uniformly from `[-bound, bound]`.
    pub fn add_uniform<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        bound: f64,
        rng: &mut R,
    ) -> Result<ParamId> {
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
        self.add(name, Tensor::new(shape, data)?, true)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).map(|&i| ParamId(i))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> Option<&Tensor> {
        self.entries[id.0].grad.as_ref()
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.entries[id.0].trainable
    }

    /// Number of trainable scalars.
    pub fn num_trainable(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.trainable)
            .map(|e| e.value.len())
            .sum()
    }

    pub fn zero_grad(&mut self) {
        for e in &mut self.entries {
            e.grad = None;
        }
    }

    /// Adds `grad` into the buffer of `id`, creating it if needed.
    pub fn accumulate_grad(&mut self, id: ParamId, grad: &Tensor) -> Result<()> {
        let e = &mut self.entries[id.0];
        if grad.shape() != e.value.shape() {
            return Err(RtfnError::Dimension(format!(
                "gradient {:?} does not match parameter {} {:?}",
                grad.shape(),
                e.name,
                e.value.shape()
            )));
        }
        match &mut e.grad {
            Some(g) => {
                for (a, b) in g.data_mut().iter_mut().zip(grad.data()) {
                    *a += b;
                }
            }
            None => e.grad = Some(grad.clone()),
        }
        Ok(())
    }

    /// Parameter values and gradients, split for the optimizer.
    pub(crate) fn trainable_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor, Option<&Tensor>)> {
        self.entries
            .iter_mut()
            .filter(|e| e.trainable)
            .map(|e| (e.name.as_str(), &mut e.value, e.grad.as_ref()))
    }

    /// True when names, shapes and values all match bit for bit.
    pub fn bitwise_eq(&self, other: &ParamStore) -> bool {
        self.entries.len() == other.entries.len()
            && self.entries.iter().zip(&other.entries).all(|(a, b)| {
                a.name == b.name
                    && a.trainable == b.trainable
                    && a.value.shape() == b.value.shape()
                    && a.value
                        .data()
                        .iter()
                        .zip(b.value.data())
                        .all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }
}

/// One forward (and optional backward) evaluation against a [`ParamStore`].
///
/// Binds parameters into the graph on first use, carries the training flag
/// and dropout generator, and collects batch-norm running-stat updates that
/// the caller applies once the pass is done.
pub struct Session<'a> {
    pub graph: Graph,
    store: &'a ParamStore,
    training: bool,
    rng: Option<&'a mut dyn rand::RngCore>,
    bound: HashMap<ParamId, Var>,
    order: Vec<(ParamId, Var)>,
    stat_updates: Vec<StatUpdate>,
}

/// Pending exponential-moving-average update of batch-norm statistics.
#[derive(Clone, Debug)]
pub struct StatUpdate {
    pub mean: ParamId,
    pub var: ParamId,
    pub batch_mean: Vec<f64>,
    pub batch_var: Vec<f64>,
    pub momentum: f64,
}

impl<'a> Session<'a> {
    pub fn eval(store: &'a ParamStore) -> Self {
        Self::build(store, false, None)
    }

    pub fn train(store: &'a ParamStore, rng: &'a mut dyn rand::RngCore) -> Self {
        Self::build(store, true, Some(rng))
    }

    /// Training-mode session without a dropout generator (dropout rate must be 0).
    pub fn train_deterministic(store: &'a ParamStore) -> Self {
        Self::build(store, true, None)
    }

    fn build(store: &'a ParamStore, training: bool, rng: Option<&'a mut dyn rand::RngCore>) -> Self {
        Session {
            graph: Graph::new(),
            store,
            training,
            rng,
            bound: HashMap::new(),
            order: Vec::new(),
            stat_updates: Vec::new(),
        }
    }

    pub fn training(&self) -> bool {
        self.training
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    pub fn rng(&mut self) -> Option<&mut (dyn rand::RngCore + 'a)> {
        self.rng.as_deref_mut()
    }

    /// Graph node for a parameter; trainable ones become gradient leaves.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.bound.get(&id) {
            return v;
        }
        let value = self.store.value(id).clone();
        let v = if self.store.is_trainable(id) {
            self.graph.variable(value)
        } else {
            self.graph.constant(value)
        };
        self.bound.insert(id, v);
        self.order.push((id, v));
        v
    }

    pub(crate) fn record_stats(&mut self, update: StatUpdate) {
        self.stat_updates.push(update);
    }

    /// Runs backward from `loss` and returns per-parameter gradients for every
    /// trainable parameter bound during the forward pass (zeros if unreachable).
    pub fn backward(&self, loss: Var) -> Result<Vec<(ParamId, Tensor)>> {
        let mut grads = self.graph.backward(loss)?;
        Ok(self
            .order
            .iter()
            .filter(|(id, _)| self.store.is_trainable(*id))
            .map(|&(id, v)| {
                let g = grads
                    .take(v)
                    .unwrap_or_else(|| Tensor::zeros(self.graph.value(v).shape()));
                (id, g)
            })
            .collect())
    }

    /// Raw graph gradients, for callers that need non-parameter leaves.
    pub fn backward_raw(&self, loss: Var) -> Result<Gradients> {
        self.graph.backward(loss)
    }

    pub fn into_stat_updates(self) -> Vec<StatUpdate> {
        self.stat_updates
    }
}

impl ParamStore {
    pub fn apply_stat_updates(&mut self, updates: &[StatUpdate]) {
        for u in updates {
            for (id, batch) in [(u.mean, &u.batch_mean), (u.var, &u.batch_var)] {
                for (r, b) in self.value_mut(id).data_mut().iter_mut().zip(batch) {
                    *r = u.momentum * *r + (1.0 - u.momentum) * b;
                }
            }
        }
    }

    pub fn accumulate_all(&mut self, grads: &[(ParamId, Tensor)]) -> Result<()> {
        for (id, g) in grads {
            self.accumulate_grad(*id, g)?;
        }
        Ok(())
    }
}
