//! Parameter storage, binding to a graph, and the Adam optimizer.

use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::graph::{Gradients, Graph, Var};
use crate::tensor::Tensor;
use crate::NnError;

/// Handle to a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// Projection applied to a parameter after every optimizer step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Constraint {
    None,
    /// Every entry is kept `>= bound`.
    LowerBound(f64),
}

#[derive(Clone, Debug)]
struct Param {
    name: String,
    value: Rc<Tensor>,
    constraint: Constraint,
}

/// Shape summary of one parameter, used to verify checkpoints against a model.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

/// An ordered collection of named parameters.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor, constraint: Constraint) -> ParamId {
        let name = name.into();
        assert!(self.params.iter().all(|p| p.name != name), "duplicate parameter name {name}");
        self.params.push(Param { name, value: Rc::new(value), constraint });
        ParamId(self.params.len() - 1)
    }

    /// Adds a tensor drawn uniformly from `[-bound, bound]`.
    pub fn add_uniform(&mut self, name: impl Into<String>, shape: &[usize], bound: f64, rng: &mut impl Rng) -> ParamId {
        let t = Tensor::from_fn(shape, |_| rng.gen_range(-bound..=bound));
        self.add(name, t, Constraint::None)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        Rc::make_mut(&mut self.params[id.0].value)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn layer_plan(&self) -> Vec<LayerEntry> {
        self.params
            .iter()
            .map(|p| LayerEntry { name: p.name.clone(), shape: p.value.shape().to_vec() })
            .collect()
    }

    /// Registers every parameter as a leaf of `graph`.
    pub fn bind(&self, graph: &Graph) -> Bound {
        Bound { vars: self.params.iter().map(|p| graph.leaf_rc(p.value.clone())).collect() }
    }

    /// Registers every parameter as a constant (no gradients).
    pub fn bind_frozen(&self, graph: &Graph) -> Bound {
        Bound { vars: self.params.iter().map(|p| graph.constant_rc(p.value.clone())).collect() }
    }

    /// Re-applies every constraint in place.
    pub fn project(&mut self) {
        for p in &mut self.params {
            if let Constraint::LowerBound(lo) = p.constraint {
                for v in Rc::make_mut(&mut p.value).data_mut() {
                    *v = v.max(lo);
                }
            }
        }
    }

    /// `(name, tensor)` pairs in registration order.
    pub fn named_tensors(&self) -> Vec<(String, Tensor)> {
        self.params.iter().map(|p| (p.name.clone(), (*p.value).clone())).collect()
    }

    /// Replaces all values, refusing tensors whose names or shapes differ from the model.
    pub fn load_named(&mut self, tensors: Vec<(String, Tensor)>) -> Result<(), NnError> {
        if tensors.len() != self.params.len() {
            return Err(NnError::PlanMismatch(format!(
                "checkpoint has {} tensors, model expects {}",
                tensors.len(),
                self.params.len()
            )));
        }
        for (p, (name, t)) in self.params.iter().zip(&tensors) {
            if &p.name != name || p.value.shape() != t.shape() {
                return Err(NnError::PlanMismatch(format!(
                    "checkpoint tensor {name} {:?} does not match model tensor {} {:?}",
                    t.shape(),
                    p.name,
                    p.value.shape()
                )));
            }
        }
        for (p, (_, t)) in self.params.iter_mut().zip(tensors) {
            p.value = Rc::new(t);
        }
        Ok(())
    }

    /// Little-endian bytes of every parameter, in order. Used for fingerprints.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.num_scalars() * 8);
        for p in &self.params {
            for v in p.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }
}

/// Parameters bound to one graph.
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    /// Binds explicit variables in store order, e.g. to differentiate a
    /// module with respect to externally supplied parameter values.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self { vars }
    }

    pub fn var(&self, id: ParamId) -> &Var {
        &self.vars[id.0]
    }

    /// Gradients for every parameter in store order (zeros where unused).
    pub fn grads(&self, grads: &Gradients) -> Vec<Tensor> {
        self.vars.iter().map(|v| grads.get_or_zeros(v)).collect()
    }
}

/// Scales `grads` so their joint L2 norm is at most `max_norm`; returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads.iter().map(Tensor::sq_norm).sum::<f64>().sqrt();
    if norm > max_norm && norm.is_finite() {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.scale_assign(s);
        }
    }
    norm
}

/// Adam with bias correction.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    #[serde(skip)]
    m: Vec<Tensor>,
    #[serde(skip)]
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Self {
        Self { beta1, beta2, eps, step: 0, m: Vec::new(), v: Vec::new() }
    }

    /// Applies one update with learning rate `lr`, then projects constraints.
    pub fn update(&mut self, store: &mut ParamStore, grads: &[Tensor], lr: f64) {
        assert_eq!(grads.len(), store.len(), "one gradient per parameter");
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| Tensor::zeros(g.shape())).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (i, id) in store.ids().collect::<Vec<_>>().into_iter().enumerate() {
            let (m, v, g) = (&mut self.m[i], &mut self.v[i], &grads[i]);
            let p = store.get_mut(id);
            for (((p, m), v), g) in p.data_mut().iter_mut().zip(m.data_mut()).zip(v.data_mut()).zip(g.data()) {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let mh = *m / bc1;
                let vh = *v / bc2;
                *p -= lr * mh / (vh.sqrt() + self.eps);
            }
        }
        store.project();
    }

    /// Moment tensors as `(name, tensor)` pairs for checkpointing.
    pub fn state_tensors(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for (i, (m, v)) in self.m.iter().zip(&self.v).enumerate() {
            out.push((format!("m.{i}"), m.clone()));
            out.push((format!("v.{i}"), v.clone()));
        }
        out
    }

    pub fn load_state_tensors(&mut self, tensors: Vec<(String, Tensor)>) -> Result<(), NnError> {
        if !tensors.len().is_multiple_of(2) {
            return Err(NnError::Format("optimizer state must hold moment pairs".into()));
        }
        let (mut m, mut v) = (Vec::new(), Vec::new());
        for (i, pair) in tensors.chunks(2).enumerate() {
            if pair[0].0 != format!("m.{i}") || pair[1].0 != format!("v.{i}") {
                return Err(NnError::Format(format!("unexpected optimizer tensor {}", pair[0].0)));
            }
            m.push(pair[0].1.clone());
            v.push(pair[1].1.clone());
        }
        self.m = m;
        self.v = v;
        Ok(())
    }
}

impl Default for Adam {
    fn default() -> Self {
        Self::new(0.9, 0.999, 1e-8)
    }
}
