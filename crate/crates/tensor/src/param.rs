use std::collections::BTreeMap;

use crate::error::TensorError;
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A named learnable tensor with its gradient and Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter<F> {
    pub name: String,
    pub value: Tensor<F>,
    pub grad: Vec<F>,
    pub adam_m: Vec<F>,
    pub adam_v: Vec<F>,
    pub step_count: u64,
}

impl<F: Real> Parameter<F> {
    fn new(name: String, value: Tensor<F>) -> Self {
        let n = value.len();
        Self {
            name,
            value,
            grad: vec![F::zero(); n],
            adam_m: vec![F::zero(); n],
            adam_v: vec![F::zero(); n],
            step_count: 0,
        }
    }

    pub fn reset_moments(&mut self) {
        self.adam_m.iter_mut().for_each(|x| *x = F::zero());
        self.adam_v.iter_mut().for_each(|x| *x = F::zero());
        self.step_count = 0;
    }
}

/// Ordered collection of parameters with unique names.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<F> {
    params: Vec<Parameter<F>>,
    index: BTreeMap<String, ParamId>,
}

impl<F: Real> ParamStore<F> {
    pub fn new() -> Self {
        Self { params: Vec::new(), index: BTreeMap::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<F>) -> Result<ParamId, TensorError> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(TensorError::DuplicateParameter(name));
        }
        let id = ParamId(self.params.len());
        self.index.insert(name.clone(), id);
        self.params.push(Parameter::new(name, value));
        Ok(id)
    }

    pub fn id(&self, name: &str) -> Result<ParamId, TensorError> {
        self.index.get(name).copied().ok_or_else(|| TensorError::UnknownParameter(name.to_string()))
    }

    pub fn get(&self, id: ParamId) -> &Parameter<F> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<F> {
        &mut self.params[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter<F>> {
        self.index.get(name).map(|id| &self.params[id.0])
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<F>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<F>> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Replaces a parameter's value; gradient and moment buffers are resized
    /// and the new tail is zero.
    pub fn replace_value(&mut self, id: ParamId, value: Tensor<F>) {
        let p = &mut self.params[id.0];
        let n = value.len();
        p.value = value;
        p.grad.resize(n, F::zero());
        p.adam_m.resize(n, F::zero());
        p.adam_v.resize(n, F::zero());
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = F::zero());
        }
    }

    /// Adds a backward pass's gradients into the stored gradient buffers.
    pub fn accumulate(&mut self, grads: &Gradients<F>) {
        for (p, g) in self.params.iter_mut().zip(&grads.per_param) {
            if let Some(g) = g {
                for (dst, src) in p.grad.iter_mut().zip(g) {
                    *dst += *src;
                }
            }
        }
    }

    pub fn reset_moments(&mut self) {
        self.params.iter_mut().for_each(Parameter::reset_moments);
    }

    /// L2 norm over every stored gradient, accumulated in f64.
    pub fn grad_norm(&self) -> f64 {
        self.params
            .iter()
            .flat_map(|p| p.grad.iter())
            .map(|g| {
                let g = g.as_f64();
                g * g
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales gradients so their global norm is at most `max_norm`.
    /// Returns the norm before clipping.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.grad_norm();
        if norm > max_norm && norm.is_finite() {
            let scale = F::from_f64(max_norm / norm);
            for p in &mut self.params {
                p.grad.iter_mut().for_each(|g| *g *= scale);
            }
        }
        norm
    }

    pub fn cast<G: Real>(&self) -> ParamStore<G> {
        let cast_vec = |v: &[F]| v.iter().map(|x| G::from_f64(x.as_f64())).collect::<Vec<G>>();
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Parameter {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    grad: cast_vec(&p.grad),
                    adam_m: cast_vec(&p.adam_m),
                    adam_v: cast_vec(&p.adam_v),
                    step_count: p.step_count,
                })
                .collect(),
            index: self.index.clone(),
        }
    }
}

/// Gradients produced by one backward pass, indexed by parameter.
#[derive(Debug, Clone)]
pub struct Gradients<F> {
    pub(crate) per_param: Vec<Option<Vec<F>>>,
}

impl<F: Real> Gradients<F> {
    pub fn get(&self, id: ParamId) -> Option<&[F]> {
        self.per_param.get(id.0).and_then(|g| g.as_deref())
    }
}
