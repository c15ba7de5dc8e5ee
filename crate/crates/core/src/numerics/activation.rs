use super::{Element, Tensor};
use crate::Result;

/// Logistic function. `exp(-x)` saturates to `inf` or `0` at the extremes,
/// where the quotient still lands on 0 or 1.
#[inline]
pub fn sigmoid<F: Element>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}

pub fn silu<F: Element>(input: &Tensor<F>) -> Tensor<F> {
    input.map(|x| x * sigmoid(x))
}

pub fn silu_backward<F: Element>(input: &Tensor<F>, d_out: &Tensor<F>) -> Result<Tensor<F>> {
    input.zip_map(d_out, |x, g| {
        let s = sigmoid(x);
        g * s * (F::one() + x * (F::one() - s))
    })
}

pub fn relu<F: Element>(input: &Tensor<F>) -> Tensor<F> {
    input.map(|x| x.max(F::zero()))
}

pub fn relu_backward<F: Element>(input: &Tensor<F>, d_out: &Tensor<F>) -> Result<Tensor<F>> {
    input.zip_map(d_out, |x, g| if x > F::zero() { g } else { F::zero() })
}
