use super::NoiseSchedule;
use crate::numerics::{Element, Shape, Tensor};
use crate::{Error, Result};

/// A conditional noise predictor `eps_theta(y_t, cond, t)` with an explicit
/// backward pass.
///
/// `y_t` is `(B, 1, H, W)`, `cond` is `(B, C, H, W)` as produced by
/// [`stack_conditions`](super::stack_conditions) and `t` holds one 1-based
/// step per batch element.
pub trait NoisePredictor<F: Element> {
    type Tape;

    fn forward(&self, y_t: &Tensor<F>, cond: &Tensor<F>, t: &[usize]) -> Result<(Tensor<F>, Self::Tape)>;

    /// Accumulates parameter gradients for `d_out = dL/d(eps_hat)`.
    fn backward(&mut self, tape: Self::Tape, d_out: &Tensor<F>) -> Result<()>;

    fn predict(&self, y_t: &Tensor<F>, cond: &Tensor<F>, t: &[usize]) -> Result<Tensor<F>> {
        Ok(self.forward(y_t, cond, t)?.0)
    }
}

/// `y_t = sqrt(abar_t) y0 + sqrt(1 - abar_t) eps`.
pub fn q_sample<F: Element>(
    y0: &Tensor<F>,
    t: usize,
    eps: &Tensor<F>,
    schedule: &NoiseSchedule,
) -> Result<Tensor<F>> {
    schedule.check_step(t)?;
    let ab = schedule.alpha_bar(t);
    let (a, b) = (F::from_f64_lossy(ab.sqrt()), F::from_f64_lossy((1.0 - ab).sqrt()));
    y0.zip_map(eps, |x, e| a * x + b * e)
}

/// [`q_sample`] with one step per batch element.
pub fn q_sample_batch<F: Element>(
    y0: &Tensor<F>,
    t: &[usize],
    eps: &Tensor<F>,
    schedule: &NoiseSchedule,
) -> Result<Tensor<F>> {
    let shape = y0.shape();
    eps.expect_shape("q_sample", shape)?;
    if t.len() != shape.batch {
        return Err(Error::Dimension {
            op: "q_sample",
            axis: "batch",
            expected: shape.batch,
            actual: t.len(),
        });
    }
    let per = shape.sample();
    let mut out = Tensor::zeros(shape);
    for (b, &tb) in t.iter().enumerate() {
        schedule.check_step(tb)?;
        let ab = schedule.alpha_bar(tb);
        let (ca, cb) = (F::from_f64_lossy(ab.sqrt()), F::from_f64_lossy((1.0 - ab).sqrt()));
        let dst = &mut out.data_mut()[b * per..(b + 1) * per];
        for ((d, &x), &e) in dst.iter_mut().zip(y0.sample(b)).zip(eps.sample(b)) {
            *d = ca * x + cb * e;
        }
    }
    Ok(out)
}

/// Mean squared error between `eps` and the model's prediction from the
/// noised input; backpropagates into the model's parameter gradients and
/// returns the loss.
pub fn training_loss<F: Element, M: NoisePredictor<F>>(
    model: &mut M,
    y0: &Tensor<F>,
    cond: &Tensor<F>,
    t: &[usize],
    eps: &Tensor<F>,
    schedule: &NoiseSchedule,
) -> Result<f64> {
    let y_t = q_sample_batch(y0, t, eps, schedule)?;
    let (eps_hat, tape) = model.forward(&y_t, cond, t)?;
    eps_hat.expect_shape("training_loss", y0.shape())?;
    let n = eps_hat.len() as f64;
    let loss = eps_hat
        .data()
        .iter()
        .zip(eps.data())
        .map(|(&p, &e)| {
            let d = p.as_f64() - e.as_f64();
            d * d
        })
        .sum::<f64>()
        / n;
    if !loss.is_finite() {
        let per = y0.shape().sample();
        let bad = (0..y0.shape().batch)
            .find(|&b| eps_hat.data()[b * per..(b + 1) * per].iter().any(|v| !v.is_finite()))
            .unwrap_or(0);
        return Err(Error::NonFinite(format!(
            "training loss at batch element {bad} (t = {})",
            t[bad]
        )));
    }
    let scale = F::from_f64_lossy(2.0 / n);
    let d_out = eps_hat.zip_map(eps, |p, e| scale * (p - e))?;
    model.backward(tape, &d_out)?;
    Ok(loss)
}

/// Shape helper for single-channel image batches.
pub(crate) fn image_shape(batch: usize, h: usize, w: usize) -> Shape {
    Shape::new(batch, 1, h, w)
}
