use alloc::vec::Vec;

use super::{Real, Tensor};
use crate::{Error, Result};

/// Bias-corrected Adam moments for a list of parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<F = f32> {
    pub first_moment: Vec<Tensor<F>>,
    pub second_moment: Vec<Tensor<F>>,
    pub step_count: u64,
    pub beta1: F,
    pub beta2: F,
    pub eps: F,
}

impl<F: Real> AdamState<F> {
    /// Fresh state with the usual `(0.9, 0.999, 1e-8)` hyperparameters.
    pub fn new<'a, I>(params: I) -> Self
    where
        I: IntoIterator<Item = &'a Tensor<F>>,
    {
        let first_moment: Vec<Tensor<F>> = params.into_iter().map(Tensor::zeros_like).collect();
        let second_moment = first_moment.clone();
        Self {
            first_moment,
            second_moment,
            step_count: 0,
            beta1: F::of(0.9),
            beta2: F::of(0.999),
            eps: F::of(1e-8),
        }
    }
}

/// One Adam update of `params` in place.
pub fn adam_step<F: Real>(
    params: &mut [&mut Tensor<F>],
    grads: &[&Tensor<F>],
    state: &mut AdamState<F>,
    lr: F,
) -> Result<()> {
    if !(lr > F::zero()) {
        return Err(Error::Domain("learning rate must be positive"));
    }
    if params.len() != grads.len() || params.len() != state.first_moment.len() {
        return Err(Error::Shape {
            expected: state.first_moment.len(),
            found: params.len().min(grads.len()),
        });
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.first_moment) {
        if p.shape() != g.shape() || p.shape() != m.shape() {
            return Err(Error::Shape {
                expected: p.len(),
                found: g.len(),
            });
        }
    }

    state.step_count += 1;
    let t = state.step_count as i32;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let bias1 = F::one() - b1.powi(t);
    let bias2 = F::one() - b2.powi(t);

    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = state.first_moment[i].data_mut();
        let v = state.second_moment[i].data_mut();
        for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
            *mi = b1 * *mi + (F::one() - b1) * gi;
            *vi = b2 * *vi + (F::one() - b2) * gi * gi;
            let m_hat = *mi / bias1;
            let v_hat = *vi / bias2;
            *w = *w - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
