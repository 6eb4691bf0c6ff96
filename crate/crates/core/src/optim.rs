//! Adagrad.

use crate::params::{GradBuffer, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct Adagrad<S> {
    pub lr: S,
    pub eps: S,
    accumulators: Vec<Tensor<S>>,
}

/// Outcome of one optimizer step.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct StepReport {
    pub updated: usize,
    /// Names of parameters whose gradient was non-finite; they were left untouched.
    pub rejected: Vec<String>,
}

impl<S: Scalar> Adagrad<S> {
    pub fn new(store: &ParamStore<S>, lr: S) -> Self {
        Self::with_eps(store, lr, S::lit(1e-10))
    }

    pub fn with_eps(store: &ParamStore<S>, lr: S, eps: S) -> Self {
        Self {
            lr,
            eps,
            accumulators: store.iter().map(|(_, p)| Tensor::zeros(p.value.shape().to_vec())).collect(),
        }
    }

    pub fn accumulator(&self, index: usize) -> &Tensor<S> {
        &self.accumulators[index]
    }

    /// `acc += g²; θ -= lr · g / (√acc + ε)` for every trainable parameter.
    pub fn step(&mut self, store: &mut ParamStore<S>, grads: &GradBuffer<S>) -> StepReport {
        let mut report = StepReport::default();
        for (id, g) in grads.iter() {
            if !store.is_trainable(id) {
                continue;
            }
            if !g.is_finite() {
                log::warn!("adagrad: non-finite gradient for {}, step skipped", store.name(id));
                report.rejected.push(store.name(id).to_string());
                continue;
            }
            let acc = &mut self.accumulators[id.index()];
            let param = store.get_mut(id);
            for ((p, a), &gk) in param.data_mut().iter_mut().zip(acc.data_mut()).zip(g.data()) {
                *a += gk * gk;
                *p -= self.lr * gk / (a.sqrt() + self.eps);
            }
            report.updated += 1;
        }
        report
    }
}
