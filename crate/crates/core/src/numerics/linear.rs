use super::{Element, Shape, Tensor};
use crate::{Error, Result};

pub struct LinearGrads<F> {
    pub d_input: Tensor<F>,
    pub d_weight: Tensor<F>,
    pub d_bias: Vec<F>,
}

fn check(input: Shape, weight: Shape, bias_len: usize) -> Result<(usize, usize, usize)> {
    if input.plane() != 1 || weight.plane() != 1 {
        return Err(Error::Shape {
            op: "linear",
            detail: format!("expects (rows, features, 1, 1); got input {input}, weight {weight}"),
        });
    }
    if input.channels != weight.channels {
        return Err(Error::Dimension {
            op: "linear",
            axis: "features",
            expected: weight.channels,
            actual: input.channels,
        });
    }
    if bias_len != weight.batch {
        return Err(Error::Dimension {
            op: "linear",
            axis: "bias",
            expected: weight.batch,
            actual: bias_len,
        });
    }
    Ok((input.batch, input.channels, weight.batch))
}

/// Affine map `y = x W^T + b`. Rows of the matrix live on the batch axis of
/// a `(rows, features, 1, 1)` tensor; `weight` is `(out, in, 1, 1)`.
pub fn linear<F: Element>(input: &Tensor<F>, weight: &Tensor<F>, bias: &[F]) -> Result<Tensor<F>> {
    let (rows, fin, fout) = check(input.shape(), weight.shape(), bias.len())?;
    let mut out = Tensor::zeros(Shape::new(rows, fout, 1, 1));
    for row in out.data_mut().chunks_exact_mut(fout) {
        row.copy_from_slice(bias);
    }
    F::gemm(
        rows,
        fin,
        fout,
        F::one(),
        input.data(),
        fin,
        1,
        weight.data(),
        1,
        fin,
        F::one(),
        out.data_mut(),
        fout,
        1,
    );
    Ok(out)
}

pub fn linear_backward<F: Element>(
    input: &Tensor<F>,
    weight: &Tensor<F>,
    d_out: &Tensor<F>,
) -> Result<LinearGrads<F>> {
    let (rows, fin, fout) = check(input.shape(), weight.shape(), weight.shape().batch)?;
    d_out.expect_shape("linear_backward", Shape::new(rows, fout, 1, 1))?;
    let mut d_input = Tensor::zeros(input.shape());
    let mut d_weight = Tensor::zeros(weight.shape());
    F::gemm(
        rows,
        fout,
        fin,
        F::one(),
        d_out.data(),
        fout,
        1,
        weight.data(),
        fin,
        1,
        F::zero(),
        d_input.data_mut(),
        fin,
        1,
    );
    F::gemm(
        fout,
        rows,
        fin,
        F::one(),
        d_out.data(),
        1,
        fout,
        input.data(),
        fin,
        1,
        F::zero(),
        d_weight.data_mut(),
        fin,
        1,
    );
    let mut d_bias = vec![F::zero(); fout];
    for row in d_out.data().chunks_exact(fout) {
        for (acc, v) in d_bias.iter_mut().zip(row) {
            *acc = *acc + *v;
        }
    }
    Ok(LinearGrads {
        d_input,
        d_weight,
        d_bias,
    })
}
