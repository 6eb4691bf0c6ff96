//! Central finite-difference verification of tape gradients.

use crate::error::Result;
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Finite-difference step used by [`grad_check`].
pub const FD_STEP: f64 = 1e-5;

/// Largest relative disagreement between the tape gradient of a scalar-valued `f`
/// and its central-difference estimate at `input`:
/// `max_k |a_k - n_k| / max(1e-8, |a_k| + |n_k|)`.
///
/// Returns infinity when any evaluation fails or produces a non-finite value.
pub fn grad_check<S, F>(f: F, input: &Tensor<S>) -> S
where
    S: Scalar,
    F: for<'t> Fn(&'t Tape<S>, Var<'t, S>) -> Result<Var<'t, S>>,
{
    grad_check_with_step(f, input, S::lit(FD_STEP))
}

pub fn grad_check_with_step<S, F>(f: F, input: &Tensor<S>, step: S) -> S
where
    S: Scalar,
    F: for<'t> Fn(&'t Tape<S>, Var<'t, S>) -> Result<Var<'t, S>>,
{
    let analytic = match analytic_gradient(&f, input) {
        Some(g) => g,
        None => return S::infinity(),
    };
    let two = S::lit(2.0);
    let floor = S::lit(1e-8);
    let mut worst = S::zero();
    for k in 0..input.len() {
        let mut plus = input.clone();
        plus.data_mut()[k] += step;
        let mut minus = input.clone();
        minus.data_mut()[k] -= step;
        let (Some(fp), Some(fm)) = (evaluate(&f, &plus), evaluate(&f, &minus)) else {
            return S::infinity();
        };
        let numeric = (fp - fm) / (two * step);
        let a = analytic.data()[k];
        if !numeric.is_finite() || !a.is_finite() {
            return S::infinity();
        }
        let rel = (a - numeric).abs() / floor.max(a.abs() + numeric.abs());
        worst = worst.max(rel);
    }
    worst
}

/// Tape gradient of a scalar-valued `f` at `input`.
pub fn analytic_gradient<S, F>(f: &F, input: &Tensor<S>) -> Option<Tensor<S>>
where
    S: Scalar,
    F: for<'t> Fn(&'t Tape<S>, Var<'t, S>) -> Result<Var<'t, S>>,
{
    let tape = Tape::new();
    let x = tape.leaf(input.clone());
    let y = f(&tape, x).ok()?;
    if !y.item().is_finite() {
        return None;
    }
    let g = y.backward().ok()?.wrt(x);
    g.is_finite().then_some(g)
}

fn evaluate<S, F>(f: &F, input: &Tensor<S>) -> Option<S>
where
    S: Scalar,
    F: for<'t> Fn(&'t Tape<S>, Var<'t, S>) -> Result<Var<'t, S>>,
{
    let tape = Tape::new();
    let x = tape.constant(input.clone());
    let y = f(&tape, x).ok()?.item();
    y.is_finite().then_some(y)
}
