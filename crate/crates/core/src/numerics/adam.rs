//! Named parameter sets and the Adam optimizer.

use super::graph::{Graph, GraphError, Var};
use super::tensor::{Real, Tensor};
use crate::util::fnv1a64;

/// Handle to a parameter inside a [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Debug)]
pub struct ParamEntry<T: Real> {
    pub name: String,
    pub value: Tensor<T>,
}

/// Ordered collection of named parameters. Registration order is stable and
/// defines gradient/checkpoint order.
#[derive(Clone, Debug)]
pub struct ParamSet<T: Real> {
    entries: Vec<ParamEntry<T>>,
}

impl<T: Real> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet { entries: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        self.entries.push(ParamEntry { name: name.into(), value });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn iter(&self) -> impl Iterator<Item = &ParamEntry<T>> {
        self.entries.iter()
    }

    pub fn total_values(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    /// Registers every parameter as a differentiable leaf of `graph`, in
    /// registration order. Index the result with [`ParamId`].
    pub fn leaf_all(&self, graph: &mut Graph<T>) -> Vec<Var> {
        self.entries.iter().map(|e| graph.leaf(e.value.clone(), true)).collect()
    }

    /// Order-sensitive hash of all parameter bit patterns; identical replicas
    /// hash identically.
    pub fn state_hash(&self) -> u64 {
        let mut bytes = Vec::with_capacity(self.total_values() * 8);
        for e in &self.entries {
            bytes.extend_from_slice(e.name.as_bytes());
            for &v in e.value.data() {
                bytes.extend_from_slice(&v.bits().to_le_bytes());
            }
        }
        fnv1a64(&bytes)
    }

    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        ParamSet {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry { name: e.name.clone(), value: e.value.cast::<U>() })
                .collect(),
        }
    }
}

/// Gradients for a [`ParamSet`], in registration order.
#[derive(Clone, Debug)]
pub struct GradSet<T: Real> {
    grads: Vec<Tensor<T>>,
}

impl<T: Real> GradSet<T> {
    /// Collects gradients for the leaves in `vars` after a backward pass.
    /// Parameters the loss never touched get zero gradients.
    pub fn collect(graph: &Graph<T>, params: &ParamSet<T>, vars: &[Var]) -> Result<Self, GraphError> {
        if !graph.consumed() {
            return Err(GraphError::MissingGradient("<no backward pass has run>".into()));
        }
        let mut grads = Vec::with_capacity(vars.len());
        for (entry, &v) in params.iter().zip(vars) {
            match graph.grad(v) {
                Some(g) => grads.push(g.clone()),
                None => grads.push(Tensor::zeros(entry.value.shape())),
            }
        }
        Ok(GradSet { grads })
    }

    pub fn zeros_like(params: &ParamSet<T>) -> Self {
        GradSet { grads: params.iter().map(|e| Tensor::zeros(e.value.shape())).collect() }
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.grads[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.grads.iter()
    }

    /// `self += other * weight`.
    pub fn add_scaled(&mut self, other: &GradSet<T>, weight: T) {
        assert_eq!(self.grads.len(), other.grads.len());
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x = *x + *y * weight;
            }
        }
    }

    pub fn scale(&mut self, weight: T) {
        for g in &mut self.grads {
            for x in g.data_mut() {
                *x = *x * weight;
            }
        }
    }

    pub fn l2_norm(&self) -> f64 {
        self.grads
            .iter()
            .flat_map(|g| g.data().iter())
            .map(|v| v.as_f64() * v.as_f64())
            .sum::<f64>()
            .sqrt()
    }

    /// Fixed-order arithmetic mean of worker gradient sets, ascending index.
    pub fn mean_of(sets: &[GradSet<T>]) -> GradSet<T> {
        assert!(!sets.is_empty());
        let mut acc = sets[0].clone();
        for s in &sets[1..] {
            acc.add_scaled(s, T::one());
        }
        acc.scale(T::from_f64(1.0 / sets.len() as f64));
        acc
    }
}

/// Adam state: per-parameter moment buffers plus hyperparameters. Moment
/// arithmetic runs in f64 regardless of the parameter dtype so updates are
/// deterministic and precise.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(lr: f64) -> Self {
        AdamState { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One Adam update with bias correction. Gradients are consumed by the call;
/// the next step starts from fresh ones.
pub fn adam_step<T: Real>(
    params: &mut ParamSet<T>,
    grads: &GradSet<T>,
    state: &mut AdamState,
) -> Result<(), GraphError> {
    if grads.len() != params.len() {
        return Err(GraphError::MissingGradient(format!(
            "{} gradients for {} parameters",
            grads.len(),
            params.len()
        )));
    }
    if state.m.is_empty() {
        state.m = params.iter().map(|e| vec![0.0; e.value.len()]).collect();
        state.v = params.iter().map(|e| vec![0.0; e.value.len()]).collect();
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for (idx, entry) in params.entries.iter_mut().enumerate() {
        let g = grads.grads[idx].data();
        debug_assert_eq!(g.len(), entry.value.len());
        let m = &mut state.m[idx];
        let v = &mut state.v[idx];
        for (i, p) in entry.value.data_mut().iter_mut().enumerate() {
            let gi = g[i].as_f64();
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * gi;
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * gi * gi;
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            let delta = state.lr * mhat / (vhat.sqrt() + state.eps);
            *p = T::from_f64(p.as_f64() - delta);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_param(v: f64) -> ParamSet<f64> {
        let mut p = ParamSet::new();
        p.add("x", Tensor::scalar(v));
        p
    }

    #[test]
    fn zero_gradients_leave_params_unchanged() {
        let mut params = single_param(1.5);
        let grads = GradSet::zeros_like(&params);
        let mut state = AdamState::new(0.1);
        adam_step(&mut params, &grads, &mut state).unwrap();
        assert_eq!(params.value(ParamId(0)).item(), 1.5);
    }

    #[test]
    fn first_step_is_bias_corrected_unit_step() {
        let mut params = single_param(0.0);
        let mut grads = GradSet::zeros_like(&params);
        grads.grads[0] = Tensor::scalar(1.0);
        let mut state = AdamState::new(0.1);
        adam_step(&mut params, &grads, &mut state).unwrap();
        let x = params.value(ParamId(0)).item();
        assert!((x + 0.1).abs() < 1e-8, "first step was {x}, expected ~-0.1");
    }

    #[test]
    fn lr_zero_is_bit_identical() {
        let mut params = single_param(0.123456789);
        let before = params.value(ParamId(0)).item().to_bits();
        let mut grads = GradSet::zeros_like(&params);
        grads.grads[0] = Tensor::scalar(-3.25);
        let mut state = AdamState::new(0.0);
        adam_step(&mut params, &grads, &mut state).unwrap();
        assert_eq!(params.value(ParamId(0)).item().to_bits(), before);
    }

    #[test]
    fn gradient_count_mismatch_errors() {
        let mut params = single_param(0.0);
        let grads: GradSet<f64> = GradSet { grads: Vec::new() };
        let mut state = AdamState::new(0.1);
        assert!(adam_step(&mut params, &grads, &mut state).is_err());
    }

    #[test]
    fn quadratic_bowl_converges() {
        // Minimize f(x) = x² from x = 3 by feeding the analytic gradient.
        let mut params = single_param(3.0);
        let mut state = AdamState::new(0.05);
        for _ in 0..500 {
            let x = params.value(ParamId(0)).item();
            let mut grads = GradSet::zeros_like(&params);
            grads.grads[0] = Tensor::scalar(2.0 * x);
            adam_step(&mut params, &grads, &mut state).unwrap();
        }
        let x = params.value(ParamId(0)).item();
        assert!(x.abs() < 1e-3, "|x| = {} after 500 steps", x.abs());
    }

    #[test]
    fn state_hash_tracks_values() {
        let a = single_param(1.0);
        let b = single_param(1.0);
        let c = single_param(2.0);
        assert_eq!(a.state_hash(), b.state_hash());
        assert_ne!(a.state_hash(), c.state_hash());
    }
}
