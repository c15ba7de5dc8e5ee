use super::tensor::expect_shape;
use super::{Element, Shape, Tensor};
use crate::{Error, Result};

/// Stride and zero padding of a square-kernel convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub padding: usize,
}

impl ConvSpec {
    pub const fn same(kernel: usize) -> Self {
        ConvSpec {
            stride: 1,
            padding: kernel / 2,
        }
    }
}

pub struct Conv2dGrads<F> {
    pub d_input: Tensor<F>,
    pub d_weight: Tensor<F>,
    pub d_bias: Vec<F>,
}

#[derive(Debug, Clone, Copy)]
struct Geometry {
    in_c: usize,
    out_c: usize,
    k: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
}

impl Geometry {
    fn new(input: Shape, weight: Shape, bias_len: usize, spec: ConvSpec) -> Result<Self> {
        if spec.stride == 0 {
            return Err(Error::Shape {
                op: "conv2d",
                detail: "stride must be at least 1".into(),
            });
        }
        if weight.height != weight.width {
            return Err(Error::Dimension {
                op: "conv2d",
                axis: "width",
                expected: weight.height,
                actual: weight.width,
            });
        }
        if input.channels != weight.channels {
            return Err(Error::Dimension {
                op: "conv2d",
                axis: "channels",
                expected: weight.channels,
                actual: input.channels,
            });
        }
        if bias_len != weight.batch {
            return Err(Error::Dimension {
                op: "conv2d",
                axis: "bias",
                expected: weight.batch,
                actual: bias_len,
            });
        }
        let k = weight.height;
        let span = |n: usize| -> Result<usize> {
            let padded = n + 2 * spec.padding;
            if padded < k {
                return Err(Error::Shape {
                    op: "conv2d",
                    detail: format!("kernel {k} larger than padded input extent {padded}"),
                });
            }
            Ok((padded - k) / spec.stride + 1)
        };
        Ok(Geometry {
            in_c: input.channels,
            out_c: weight.batch,
            k,
            h: input.height,
            w: input.width,
            oh: span(input.height)?,
            ow: span(input.width)?,
            stride: spec.stride,
            pad: spec.padding,
        })
    }

    fn patch(&self) -> usize {
        self.in_c * self.k * self.k
    }

    fn out_plane(&self) -> usize {
        self.oh * self.ow
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    /// Output columns `[lo, hi)` whose tap `kx` lands inside the input row.
    #[inline]
    fn valid_cols(&self, kx: usize) -> (usize, usize) {
        let lo = self.pad.saturating_sub(kx).div_ceil(self.stride).min(self.ow);
        let hi = if self.w + self.pad <= kx {
            0
        } else {
            ((self.w + self.pad - kx - 1) / self.stride + 1).min(self.ow)
        };
        (lo, hi.max(lo))
    }

    /// Input row for output row `oy` and tap `ky`, if not in the padding.
    #[inline]
    fn source_row(&self, oy: usize, ky: usize) -> Option<usize> {
        (oy * self.stride + ky)
            .checked_sub(self.pad)
            .filter(|&iy| iy < self.h)
    }

    fn im2col<F: Element>(&self, sample: &[F], col: &mut [F]) {
        let op = self.out_plane();
        let plane = self.h * self.w;
        for c in 0..self.in_c {
            let src = &sample[c * plane..(c + 1) * plane];
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (c * self.k + ky) * self.k + kx;
                    let dst = &mut col[row * op..(row + 1) * op];
                    let (lo, hi) = self.valid_cols(kx);
                    for (oy, out) in dst.chunks_exact_mut(self.ow).enumerate() {
                        let Some(iy) = self.source_row(oy, ky) else {
                            out.fill(F::zero());
                            continue;
                        };
                        out[..lo].fill(F::zero());
                        out[hi..].fill(F::zero());
                        let base = iy * self.w + lo * self.stride + kx - self.pad;
                        if self.stride == 1 {
                            out[lo..hi].copy_from_slice(&src[base..base + hi - lo]);
                        } else {
                            for (j, v) in out[lo..hi].iter_mut().enumerate() {
                                *v = src[base + j * self.stride];
                            }
                        }
                    }
                }
            }
        }
    }

    /// Pixel-major patches from a channel-last sample: row `p` holds the
    /// receptive field of output pixel `p` in `(ky, kx, c)` order.
    fn patch_rows<F: Element>(&self, hwc: &[F], rows: &mut [F]) {
        let c = self.in_c;
        let patch = self.patch();
        for oy in 0..self.oh {
            for ox in 0..self.ow {
                let dst = &mut rows[(oy * self.ow + ox) * patch..][..patch];
                for ky in 0..self.k {
                    let iy = self.source_row(oy, ky);
                    for kx in 0..self.k {
                        let out = &mut dst[(ky * self.k + kx) * c..][..c];
                        let ix = (ox * self.stride + kx)
                            .checked_sub(self.pad)
                            .filter(|&ix| ix < self.w);
                        match (iy, ix) {
                            (Some(iy), Some(ix)) => {
                                out.copy_from_slice(&hwc[(iy * self.w + ix) * c..][..c])
                            }
                            _ => out.fill(F::zero()),
                        }
                    }
                }
            }
        }
    }

    fn col2im<F: Element>(&self, col: &[F], sample: &mut [F]) {
        let op = self.out_plane();
        let plane = self.h * self.w;
        for c in 0..self.in_c {
            let dst = &mut sample[c * plane..(c + 1) * plane];
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (c * self.k + ky) * self.k + kx;
                    let src = &col[row * op..(row + 1) * op];
                    let (lo, hi) = self.valid_cols(kx);
                    for (oy, g) in src.chunks_exact(self.ow).enumerate() {
                        let Some(iy) = self.source_row(oy, ky) else {
                            continue;
                        };
                        let base = iy * self.w + lo * self.stride + kx - self.pad;
                        for (j, &v) in g[lo..hi].iter().enumerate() {
                            let d = &mut dst[base + j * self.stride];
                            *d = *d + v;
                        }
                    }
                }
            }
        }
    }
}

/// Zero-padded 2-D cross-correlation.
///
/// `weight` has shape `(out_c, in_c, k, k)`; output spatial dims are
/// `floor((H + 2p - k) / stride) + 1`.
pub fn conv2d<F: Element>(
    input: &Tensor<F>,
    weight: &Tensor<F>,
    bias: &[F],
    spec: ConvSpec,
) -> Result<Tensor<F>> {
    let g = Geometry::new(input.shape(), weight.shape(), bias.len(), spec)?;
    let batch = input.shape().batch;
    let out_shape = Shape::new(batch, g.out_c, g.oh, g.ow);
    let mut out = Tensor::zeros(out_shape);
    let op = g.out_plane();
    let patch = g.patch();
    let mut col = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![F::zero(); patch * op]
    };
    for b in 0..batch {
        let src = input.sample(b);
        let colref: &[F] = if g.is_pointwise() {
            src
        } else {
            g.im2col(src, &mut col);
            &col
        };
        let dst = &mut out.data_mut()[b * g.out_c * op..(b + 1) * g.out_c * op];
        for (co, plane) in dst.chunks_exact_mut(op).enumerate() {
            plane.iter_mut().for_each(|v| *v = bias[co]);
        }
        F::gemm(
            g.out_c,
            patch,
            op,
            F::one(),
            weight.data(),
            patch,
            1,
            colref,
            op,
            1,
            F::one(),
            dst,
            op,
            1,
        );
    }
    Ok(out)
}

/// Writes the transpose of the row-major `rows x cols` matrix `src`.
fn transpose<F: Element>(src: &[F], rows: usize, cols: usize, dst: &mut [F]) {
    const TILE: usize = 16;
    for r0 in (0..rows).step_by(TILE) {
        for c0 in (0..cols).step_by(TILE) {
            for r in r0..(r0 + TILE).min(rows) {
                for c in c0..(c0 + TILE).min(cols) {
                    dst[c * rows + r] = src[r * cols + c];
                }
            }
        }
    }
}

/// Gradients of [`conv2d`] with respect to input, weight and bias, given the
/// gradient of the output.
pub fn conv2d_backward<F: Element>(
    input: &Tensor<F>,
    weight: &Tensor<F>,
    spec: ConvSpec,
    d_out: &Tensor<F>,
) -> Result<Conv2dGrads<F>> {
    let g = Geometry::new(input.shape(), weight.shape(), weight.shape().batch, spec)?;
    let batch = input.shape().batch;
    expect_shape(
        "conv2d_backward",
        d_out.shape(),
        Shape::new(batch, g.out_c, g.oh, g.ow),
    )?;
    let op = g.out_plane();
    let patch = g.patch();
    let taps = g.k * g.k;
    let mut d_bias = vec![F::zero(); g.out_c];
    // weight gradient in (out_c, ky, kx, in_c) order, permuted at the end
    let mut d_w_taps = vec![F::zero(); g.out_c * patch];
    let mut hwc = vec![F::zero(); g.h * g.w * g.in_c];
    let mut rows = vec![F::zero(); op * patch];

    for b in 0..batch {
        let dout_b = &d_out.data()[b * g.out_c * op..(b + 1) * g.out_c * op];
        for (co, plane) in dout_b.chunks_exact(op).enumerate() {
            d_bias[co] = d_bias[co] + plane.iter().copied().sum::<F>();
        }
        transpose(input.sample(b), g.in_c, g.h * g.w, &mut hwc);
        g.patch_rows(&hwc, &mut rows);
        F::gemm(
            g.out_c,
            op,
            patch,
            F::one(),
            dout_b,
            op,
            1,
            &rows,
            patch,
            1,
            F::one(),
            &mut d_w_taps,
            patch,
            1,
        );
    }
    let mut d_weight = Tensor::zeros(weight.shape());
    for co in 0..g.out_c {
        let src = &d_w_taps[co * patch..(co + 1) * patch];
        let dst = &mut d_weight.data_mut()[co * patch..(co + 1) * patch];
        for tap in 0..taps {
            for ci in 0..g.in_c {
                dst[ci * taps + tap] = src[tap * g.in_c + ci];
            }
        }
    }

    let d_input = if g.stride == 1 && g.pad < g.k {
        // stride-1 adjoint is a full correlation with the flipped,
        // channel-swapped kernel
        let mut flipped = Tensor::zeros(Shape::new(g.in_c, g.out_c, g.k, g.k));
        for co in 0..g.out_c {
            for ci in 0..g.in_c {
                for tap in 0..taps {
                    flipped.data_mut()[(ci * g.out_c + co) * taps + taps - 1 - tap] =
                        weight.data()[(co * g.in_c + ci) * taps + tap];
                }
            }
        }
        let zeros = vec![F::zero(); g.in_c];
        conv2d(
            d_out,
            &flipped,
            &zeros,
            ConvSpec {
                stride: 1,
                padding: g.k - 1 - g.pad,
            },
        )?
    } else {
        let mut d_input = Tensor::zeros(input.shape());
        let mut d_col = vec![F::zero(); patch * op];
        let sample_len = input.shape().sample();
        for b in 0..batch {
            let dout_b = &d_out.data()[b * g.out_c * op..(b + 1) * g.out_c * op];
            F::gemm(
                patch,
                g.out_c,
                op,
                F::one(),
                weight.data(),
                1,
                patch,
                dout_b,
                op,
                1,
                F::zero(),
                &mut d_col,
                op,
                1,
            );
            g.col2im(&d_col, &mut d_input.data_mut()[b * sample_len..(b + 1) * sample_len]);
        }
        d_input
    };
    Ok(Conv2dGrads {
        d_input,
        d_weight,
        d_bias,
    })
}
