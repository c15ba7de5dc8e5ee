use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::numerics::{AdamW, AdamWState, Element, Shape, Tensor};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(usize);

/// Named parameter tensors in registration order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<F> {
    names: Vec<String>,
    tensors: Vec<Tensor<F>>,
    index: BTreeMap<String, usize>,
}

impl<F: Element> Default for ParamStore<F> {
    fn default() -> Self {
        ParamStore {
            names: Vec::new(),
            tensors: Vec::new(),
            index: BTreeMap::new(),
        }
    }
}

impl<F: Element> ParamStore<F> {
    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<F>) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        let id = self.tensors.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.tensors.push(tensor);
        ParamId(id)
    }

    /// He-normal tensor: std `sqrt(2 / fan_in)`.
    pub fn add_he(
        &mut self,
        name: impl Into<String>,
        shape: Shape,
        fan_in: usize,
        rng: &mut impl Rng,
    ) -> ParamId {
        let std = (2.0 / fan_in as f64).sqrt();
        self.add_normal(name, shape, std, rng)
    }

    pub fn add_normal(
        &mut self,
        name: impl Into<String>,
        shape: Shape,
        std: f64,
        rng: &mut impl Rng,
    ) -> ParamId {
        let data = (0..shape.len())
            .map(|_| F::from_f64_lossy(std * rng.sample::<f64, _>(StandardNormal)))
            .collect();
        self.add(name, Tensor::from_vec(shape, data).expect("length matches"))
    }

    pub fn add_const(&mut self, name: impl Into<String>, shape: Shape, value: F) -> ParamId {
        self.add(name, Tensor::full(shape, value))
    }

    pub fn get(&self, id: ParamId) -> &Tensor<F> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<F> {
        &mut self.tensors[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<F>> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Tensor<F>> {
        self.id(name).map(|id| self.get_mut(id))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<F>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<F>)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter_mut())
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn zero_grads(&mut self) {
        for t in &mut self.tensors {
            t.zero_grad();
        }
    }

    pub fn accumulate(&mut self, id: ParamId, grad: &[F]) {
        self.tensors[id.0].accumulate_grad(grad);
    }

    /// Copy without gradient buffers.
    pub fn values_only(&self) -> ParamStore<F> {
        let mut out = self.clone();
        out.tensors.iter_mut().for_each(Tensor::clear_grad);
        out
    }

    pub fn cast<G: Element>(&self) -> ParamStore<G> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            index: self.index.clone(),
        }
    }

    /// Overwrites values from `other`, which must hold the same names and
    /// shapes.
    pub fn load_from(&mut self, other: &ParamStore<F>) -> Result<()> {
        if other.len() != self.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, found {}",
                self.len(),
                other.len()
            )));
        }
        for (name, t) in self.names.iter().zip(self.tensors.iter_mut()) {
            let src = other
                .by_name(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{name}`")))?;
            if src.shape() != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter `{name}` has shape {}, expected {}",
                    src.shape(),
                    t.shape()
                )));
            }
            t.data_mut().copy_from_slice(src.data());
        }
        Ok(())
    }

    /// Fresh optimizer state for every tensor.
    pub fn optimizer(&self, hyper: AdamW) -> Vec<AdamWState<F>> {
        self.tensors
            .iter()
            .map(|t| AdamWState::new(t.len(), hyper))
            .collect()
    }

    /// Applies one AdamW step to every tensor from its accumulated gradient.
    /// Nothing is modified if any gradient is non-finite.
    pub fn adamw_step(&mut self, states: &mut [AdamWState<F>]) -> Result<()> {
        if states.len() != self.tensors.len() {
            return Err(Error::Dimension {
                op: "adamw_step",
                axis: "tensors",
                expected: self.tensors.len(),
                actual: states.len(),
            });
        }
        for (name, t) in self.names.iter().zip(&self.tensors) {
            if t.grad().is_some_and(|g| g.iter().any(|v| !v.is_finite())) {
                return Err(Error::NonFinite(format!("gradient of `{name}`")));
            }
        }
        for (t, st) in self.tensors.iter_mut().zip(states) {
            let (data, grad) = t.data_and_grad();
            st.step(data, grad)?;
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::all_finite)
    }
}

pub(crate) fn vector_shape(n: usize) -> Shape {
    Shape::new(n, 1, 1, 1)
}
