use std::collections::HashMap;

use rand::Rng;

use crate::error::{Result, TensorError};
use crate::graph::Gradients;
use crate::{Element, Shape, Tensor};

/// Index of a parameter inside its [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A learned tensor together with its gradient and Adam moments.
#[derive(Debug, Clone)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub(crate) first_moment: Tensor<T>,
    pub(crate) second_moment: Tensor<T>,
    pub(crate) step: u64,
}

impl<T: Element> Parameter<T> {
    fn new(name: String, value: Tensor<T>) -> Self {
        let shape = value.shape();
        Self {
            name,
            value,
            grad: Tensor::zeros(shape),
            first_moment: Tensor::zeros(shape),
            second_moment: Tensor::zeros(shape),
            step: 0,
        }
    }

    pub fn shape(&self) -> Shape {
        self.value.shape()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&Tensor<T>, &Tensor<T>) {
        (&self.first_moment, &self.second_moment)
    }
}

/// Ordered, uniquely named collection of parameters.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<T> {
    params: Vec<Parameter<T>>,
    index: HashMap<String, ParamId>,
}

impl<T: Element> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: Vec::new(), index: HashMap::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(TensorError::DuplicateParameter(name));
        }
        let id = ParamId(self.params.len());
        self.index.insert(name.clone(), id);
        self.params.push(Parameter::new(name, value));
        Ok(id)
    }

    /// Zero-initialised parameter.
    pub fn zeros(&mut self, name: impl Into<String>, shape: impl Into<Shape>) -> Result<ParamId> {
        self.add(name, Tensor::zeros(shape))
    }

    /// He-uniform initialisation, `U(−√(6/fan_in), √(6/fan_in))`.
    ///
    /// Samples are drawn in `f64` so that stores of either precision built
    /// from the same generator agree after rounding.
    pub fn kaiming<R: Rng>(
        &mut self,
        name: impl Into<String>,
        shape: impl Into<Shape>,
        fan_in: usize,
        rng: &mut R,
    ) -> Result<ParamId> {
        let shape = shape.into();
        let bound = (6.0 / fan_in.max(1) as f64).sqrt();
        let data = (0..shape.numel()).map(|_| T::from_f64_lossy(rng.gen_range(-bound..bound))).collect();
        self.add(name, Tensor::from_vec(shape, data)?)
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter<T>> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.iter_mut()
    }

    /// Total number of learned scalars.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(T::zero());
        }
    }

    /// Adds the parameter gradients of one backward pass to the stored ones.
    pub fn accumulate(&mut self, grads: &Gradients<T>) {
        for (id, g) in grads.param_grads() {
            self.params[id.0].grad.add_assign(g);
        }
    }

    /// Overwrites the values of the parameters whose names appear in
    /// `tensors`. Unknown names, missing names (within `scope`) and shape
    /// mismatches are all reported together.
    ///
    /// Only parameters whose name starts with `scope` must be present.
    pub fn load_named(&mut self, tensors: &[(String, Tensor<T>)], scope: &str) -> Result<()> {
        let mut problems = Vec::new();
        let mut seen = vec![false; self.params.len()];
        for (name, t) in tensors {
            match self.index.get(name) {
                Some(id) if name.starts_with(scope) => {
                    let expected = self.params[id.0].shape();
                    if expected != t.shape() {
                        problems.push(format!("`{name}` has shape {}, expected {expected}", t.shape()));
                    }
                    seen[id.0] = true;
                }
                _ => problems.push(format!("unknown tensor `{name}`")),
            }
        }
        for (i, p) in self.params.iter().enumerate() {
            if p.name.starts_with(scope) && !seen[i] {
                problems.push(format!("missing tensor `{}`", p.name));
            }
        }
        if !problems.is_empty() {
            return Err(TensorError::ParameterMismatch(problems.join("; ")));
        }
        for (name, t) in tensors {
            let id = self.index[name];
            self.params[id.0].value = t.clone();
        }
        Ok(())
    }
}
