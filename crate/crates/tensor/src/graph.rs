use indexmap::IndexMap;

use crate::store::ParamStore;
use crate::tape::{Tape, TensorError, TensorId};

/// A single forward/backward pass: a fresh tape with parameters bound in
/// from a read-only [`ParamStore`]. Parameters bind once per graph; after
/// `backward`, their gradients are collected by name.
pub struct Graph<'a> {
    pub tape: Tape,
    store: &'a ParamStore,
    bound: IndexMap<String, TensorId>,
    /// Training mode: dropout active; model code consults this flag.
    pub train: bool,
}

impl<'a> Graph<'a> {
    pub fn new(store: &'a ParamStore, train: bool) -> Self {
        Graph { tape: Tape::new(), store, bound: IndexMap::new(), train }
    }

    /// Bind a named parameter as a leaf (cached per graph).
    pub fn param(&mut self, name: &str) -> Result<TensorId, TensorError> {
        if let Some(&id) = self.bound.get(name) {
            return Ok(id);
        }
        let p = self
            .store
            .get(name)
            .ok_or_else(|| TensorError::UnknownParam(name.to_string()))?;
        let id = self.tape.param_leaf(name, &p.shape, p.data.clone());
        self.bound.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn backward(&mut self, loss: TensorId) -> Result<(), TensorError> {
        self.tape.backward(loss)
    }

    /// Gradients of all bound parameters that received one.
    pub fn param_grads(&self) -> IndexMap<String, Vec<f32>> {
        let mut out = IndexMap::new();
        for (name, &id) in &self.bound {
            if let Some(g) = self.tape.grad(id) {
                out.insert(name.clone(), g.to_vec());
            }
        }
        out
    }

    pub fn bound_params(&self) -> &IndexMap<String, TensorId> {
        &self.bound
    }
}
