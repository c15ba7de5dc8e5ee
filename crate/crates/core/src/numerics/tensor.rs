use std::fmt;

use super::Element;
use crate::{Error, Result};

/// `(batch, channels, height, width)`; every axis is at least 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub const fn new(batch: usize, channels: usize, height: usize, width: usize) -> Self {
        Shape {
            batch,
            channels,
            height,
            width,
        }
    }

    pub const fn len(&self) -> usize {
        self.batch * self.channels * self.height * self.width
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub const fn plane(&self) -> usize {
        self.height * self.width
    }

    pub const fn sample(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn with_channels(self, channels: usize) -> Self {
        Shape { channels, ..self }
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.batch, self.channels, self.height, self.width]
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}x{}x{}x{}",
            self.batch, self.channels, self.height, self.width
        )
    }
}

/// Dense row-major `(b, c, h, w)` array with an optional gradient buffer of
/// the same length.
#[derive(Clone, PartialEq)]
pub struct Tensor<F> {
    shape: Shape,
    data: Vec<F>,
    grad: Option<Vec<F>>,
}

impl<F: fmt::Debug> fmt::Debug for Tensor<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("has_grad", &self.grad.is_some())
            .finish()
    }
}

impl<F: Element> Tensor<F> {
    pub fn zeros(shape: Shape) -> Self {
        Tensor {
            shape,
            data: vec![F::zero(); shape.len()],
            grad: None,
        }
    }

    pub fn full(shape: Shape, value: F) -> Self {
        Tensor {
            shape,
            data: vec![value; shape.len()],
            grad: None,
        }
    }

    pub fn from_vec(shape: Shape, data: Vec<F>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::Shape {
                op: "tensor",
                detail: format!(
                    "shape {shape} needs {} values, got {}",
                    shape.len(),
                    data.len()
                ),
            });
        }
        if shape.dims().contains(&0) {
            return Err(Error::Shape {
                op: "tensor",
                detail: format!("shape {shape} has a zero axis"),
            });
        }
        Ok(Tensor {
            shape,
            data,
            grad: None,
        })
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<F> {
        self.data
    }

    pub fn grad(&self) -> Option<&[F]> {
        self.grad.as_deref()
    }

    /// Gradient buffer, allocated as zeros on first access.
    pub fn grad_mut(&mut self) -> &mut [F] {
        let n = self.data.len();
        self.grad.get_or_insert_with(|| vec![F::zero(); n])
    }

    /// Values and gradient borrowed together, for in-place optimizer steps.
    pub fn data_and_grad(&mut self) -> (&mut [F], &[F]) {
        let n = self.data.len();
        let grad = self.grad.get_or_insert_with(|| vec![F::zero(); n]);
        (&mut self.data, grad)
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.iter_mut().for_each(|v| *v = F::zero());
        }
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    pub fn accumulate_grad(&mut self, delta: &[F]) {
        assert_eq!(delta.len(), self.data.len(), "gradient length mismatch");
        for (g, d) in self.grad_mut().iter_mut().zip(delta) {
            *g = *g + *d;
        }
    }

    pub fn reshape(self, shape: Shape) -> Result<Self> {
        if shape.len() != self.data.len() {
            return Err(Error::Shape {
                op: "reshape",
                detail: format!("cannot view {} as {shape}", self.shape),
            });
        }
        Ok(Tensor { shape, ..self })
    }

    pub fn index(&self, b: usize, c: usize, y: usize, x: usize) -> usize {
        ((b * self.shape.channels + c) * self.shape.height + y) * self.shape.width + x
    }

    pub fn at(&self, b: usize, c: usize, y: usize, x: usize) -> F {
        self.data[self.index(b, c, y, x)]
    }

    pub fn plane(&self, b: usize, c: usize) -> &[F] {
        let p = self.shape.plane();
        let start = (b * self.shape.channels + c) * p;
        &self.data[start..start + p]
    }

    pub fn plane_mut(&mut self, b: usize, c: usize) -> &mut [F] {
        let p = self.shape.plane();
        let start = (b * self.shape.channels + c) * p;
        &mut self.data[start..start + p]
    }

    pub fn sample(&self, b: usize) -> &[F] {
        let s = self.shape.sample();
        &self.data[b * s..(b + 1) * s]
    }

    pub fn map(&self, f: impl Fn(F) -> F) -> Self {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
            grad: None,
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(F, F) -> F) -> Result<Self> {
        self.expect_shape("zip_map", other.shape)?;
        Ok(Tensor {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
            grad: None,
        })
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.expect_shape("add", other.shape)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + *b;
        }
        Ok(())
    }

    pub fn cast<G: Element>(&self) -> Tensor<G> {
        Tensor {
            shape: self.shape,
            data: self
                .data
                .iter()
                .map(|v| G::from_f64_lossy(v.as_f64()))
                .collect(),
            grad: self.grad.as_ref().map(|g| {
                g.iter()
                    .map(|v| G::from_f64_lossy(v.as_f64()))
                    .collect()
            }),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum_sq(&self) -> f64 {
        self.data.iter().map(|v| v.as_f64() * v.as_f64()).sum()
    }

    /// Fails with a dimension error naming the first axis that disagrees.
    pub fn expect_shape(&self, op: &'static str, want: Shape) -> Result<()> {
        expect_shape(op, self.shape, want)
    }
}

pub(crate) fn expect_shape(op: &'static str, got: Shape, want: Shape) -> Result<()> {
    const AXES: [&str; 4] = ["batch", "channels", "height", "width"];
    for ((axis, g), w) in AXES.iter().zip(got.dims()).zip(want.dims()) {
        if g != w {
            return Err(Error::Dimension {
                op,
                axis,
                expected: w,
                actual: g,
            });
        }
    }
    Ok(())
}

/// Concatenates along the channel axis; all parts share batch and spatial
/// dims.
pub fn concat_channels<F: Element>(parts: &[&Tensor<F>]) -> Result<Tensor<F>> {
    let first = parts.first().ok_or_else(|| Error::Shape {
        op: "concat",
        detail: "no inputs".into(),
    })?;
    let base = first.shape();
    let mut channels = 0;
    for p in parts {
        expect_shape("concat", p.shape().with_channels(base.channels), base)?;
        channels += p.shape().channels;
    }
    let shape = base.with_channels(channels);
    let mut data = Vec::with_capacity(shape.len());
    for b in 0..base.batch {
        for p in parts {
            data.extend_from_slice(p.sample(b));
        }
    }
    Tensor::from_vec(shape, data)
}

/// Inverse of [`concat_channels`]: splits into consecutive channel groups.
pub fn split_channels<F: Element>(t: &Tensor<F>, sizes: &[usize]) -> Result<Vec<Tensor<F>>> {
    let shape = t.shape();
    let total: usize = sizes.iter().sum();
    if total != shape.channels {
        return Err(Error::Dimension {
            op: "split",
            axis: "channels",
            expected: total,
            actual: shape.channels,
        });
    }
    let plane = shape.plane();
    let mut out: Vec<Vec<F>> = sizes
        .iter()
        .map(|c| Vec::with_capacity(shape.batch * c * plane))
        .collect();
    for b in 0..shape.batch {
        let s = t.sample(b);
        let mut off = 0;
        for (buf, &c) in out.iter_mut().zip(sizes) {
            buf.extend_from_slice(&s[off..off + c * plane]);
            off += c * plane;
        }
    }
    out.into_iter()
        .zip(sizes)
        .map(|(d, &c)| Tensor::from_vec(shape.with_channels(c), d))
        .collect()
}
