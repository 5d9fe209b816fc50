use crate::error::{Error, Result};
use crate::tensor::{NormMode, Scalar, Tape, Tensor, Var};

/// Index of a tensor inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// Learnable; receives gradients and optimizer updates.
    Trainable,
    /// Non-learnable state such as running normalization statistics.
    Buffer,
}

#[derive(Clone, Debug, PartialEq)]
struct Entry<T> {
    name: String,
    kind: ParamKind,
    tensor: Tensor<T>,
}

/// Named tensors owned by a model.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    entries: Vec<Entry<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { entries: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<T>, kind: ParamKind) -> ParamId {
        let mut tensor = tensor;
        tensor.requires_grad = kind == ParamKind::Trainable;
        tensor.grad = None;
        self.entries.push(Entry {
            name: name.into(),
            kind,
            tensor,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].tensor
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn kind(&self, id: ParamId) -> ParamKind {
        self.entries[id.0].kind
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, ParamKind, &Tensor<T>)> {
        self.entries.iter().map(|e| (e.name.as_str(), e.kind, &e.tensor))
    }

    pub fn trainable(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries
            .iter()
            .filter(|e| e.kind == ParamKind::Trainable)
            .map(|e| (e.name.as_str(), &e.tensor))
    }

    pub fn trainable_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.entries
            .iter_mut()
            .filter(|e| e.kind == ParamKind::Trainable)
            .map(|e| (e.name.as_str(), &mut e.tensor))
    }

    /// Number of learnable scalars.
    pub fn count_trainable(&self) -> usize {
        self.trainable().map(|(_, t)| t.numel()).sum()
    }

    pub fn zero_grad(&mut self) {
        for e in &mut self.entries {
            e.tensor.grad = None;
        }
    }

    pub fn accumulate(&mut self, grads: ParamGrads<T>) {
        for (id, g) in grads.0 {
            self.entries[id.0].tensor.accumulate_grad(&g);
        }
    }

    pub fn apply_updates(&mut self, updates: Vec<(ParamId, Vec<T>)>) {
        for (id, data) in updates {
            self.entries[id.0].tensor.data_mut().copy_from_slice(&data);
        }
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|e| Entry {
                    name: e.name.clone(),
                    kind: e.kind,
                    tensor: e.tensor.cast(),
                })
                .collect(),
        }
    }

    /// Overwrites the tensor named `name`, keeping its kind and checking its shape.
    pub fn set(&mut self, name: &str, tensor: Tensor<T>) -> Result<()> {
        let id = self
            .find(name)
            .ok_or_else(|| Error::invalid(format!("no tensor named `{name}`")))?;
        let slot = &mut self.entries[id.0].tensor;
        if slot.shape() != tensor.shape() {
            return Err(Error::shape("set", slot.shape(), tensor.shape()));
        }
        slot.data_mut().copy_from_slice(tensor.data());
        Ok(())
    }
}

/// Gradients keyed by parameter.
#[derive(Debug, Default)]
pub struct ParamGrads<T>(pub Vec<(ParamId, Vec<T>)>);

impl<T: Scalar> ParamGrads<T> {
    pub fn get(&self, id: ParamId) -> Option<&[T]> {
        self.0.iter().find(|(i, _)| *i == id).map(|(_, g)| g.as_slice())
    }
}

/// One forward pass over a model: a fresh tape, lazily bound parameters, and
/// the running-statistic updates produced along the way.
pub struct Session<'a, T> {
    pub tape: Tape<T>,
    store: &'a ParamStore<T>,
    bound: Vec<Option<Var>>,
    mode: NormMode,
    updates: Vec<(ParamId, Vec<T>)>,
}

impl<'a, T: Scalar> Session<'a, T> {
    pub fn new(store: &'a ParamStore<T>, mode: NormMode) -> Self {
        Session {
            tape: Tape::new(),
            store,
            bound: vec![None; store.len()],
            mode,
            updates: Vec::new(),
        }
    }

    pub fn mode(&self) -> NormMode {
        self.mode
    }

    pub fn store(&self) -> &ParamStore<T> {
        self.store
    }

    /// Records parameter `id` on the tape (once per session).
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let v = self.tape.leaf(self.store.get(id).clone());
        self.bound[id.0] = Some(v);
        v
    }

    pub fn bound_var(&self, id: ParamId) -> Option<Var> {
        self.bound[id.0]
    }

    pub fn buffer(&self, id: ParamId) -> &Tensor<T> {
        self.store.get(id)
    }

    pub(crate) fn record_update(&mut self, id: ParamId, data: Vec<T>) {
        self.updates.push((id, data));
    }

    /// Gradients of `loss` for every parameter bound in this session.
    pub fn backward(&self, loss: Var) -> Result<ParamGrads<T>> {
        let mut grads = self.tape.backward(loss)?;
        let mut out = Vec::new();
        for (i, v) in self.bound.iter().enumerate() {
            let Some(v) = v else { continue };
            if self.store.entries[i].kind != ParamKind::Trainable {
                continue;
            }
            let g = grads
                .take(*v)
                .unwrap_or_else(|| vec![T::zero(); self.store.entries[i].tensor.numel()]);
            out.push((ParamId(i), g));
        }
        Ok(ParamGrads(out))
    }

    pub fn into_updates(self) -> Vec<(ParamId, Vec<T>)> {
        self.updates
    }
}
