use super::{Element, Shape, Tensor};
use crate::{Error, Result};

/// One output coordinate's pair of source indices and blend fraction under
/// the half-pixel (align-corners-false) convention with edge clamping.
#[derive(Debug, Clone, Copy)]
struct Tap<F> {
    lo: usize,
    hi: usize,
    frac: F,
}

fn taps<F: Element>(input: usize, output: usize) -> Vec<Tap<F>> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|d| {
            let s = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (input - 1) as f64);
            let lo = s.floor() as usize;
            let hi = (lo + 1).min(input - 1);
            Tap {
                lo,
                hi,
                frac: F::from_f64_lossy(s - lo as f64),
            }
        })
        .collect()
}

fn check_target(out_h: usize, out_w: usize) -> Result<()> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::Shape {
            op: "bilinear_resize",
            detail: format!("target size {out_h}x{out_w} must be positive"),
        });
    }
    Ok(())
}

/// Resamples a single row-major plane. Constants map to the same constant
/// exactly (the blend is written as `a + f (b - a)`).
pub fn bilinear_resize_plane<F: Element>(
    src: &[F],
    height: usize,
    width: usize,
    out_h: usize,
    out_w: usize,
) -> Vec<F> {
    assert_eq!(src.len(), height * width, "plane length mismatch");
    let ty = taps::<F>(height, out_h);
    let tx = taps::<F>(width, out_w);
    let mut out = Vec::with_capacity(out_h * out_w);
    for y in &ty {
        let r0 = &src[y.lo * width..(y.lo + 1) * width];
        let r1 = &src[y.hi * width..(y.hi + 1) * width];
        for x in &tx {
            let top = r0[x.lo] + x.frac * (r0[x.hi] - r0[x.lo]);
            let bot = r1[x.lo] + x.frac * (r1[x.hi] - r1[x.lo]);
            out.push(top + y.frac * (bot - top));
        }
    }
    out
}

pub fn bilinear_resize<F: Element>(
    input: &Tensor<F>,
    out_h: usize,
    out_w: usize,
) -> Result<Tensor<F>> {
    check_target(out_h, out_w)?;
    let s = input.shape();
    let mut data = Vec::with_capacity(s.batch * s.channels * out_h * out_w);
    for b in 0..s.batch {
        for c in 0..s.channels {
            data.extend(bilinear_resize_plane(
                input.plane(b, c),
                s.height,
                s.width,
                out_h,
                out_w,
            ));
        }
    }
    Tensor::from_vec(Shape::new(s.batch, s.channels, out_h, out_w), data)
}

/// Adjoint of [`bilinear_resize`]: scatters the output gradient back onto
/// the source grid of shape `input_shape`.
pub fn bilinear_resize_backward<F: Element>(
    input_shape: Shape,
    d_out: &Tensor<F>,
) -> Result<Tensor<F>> {
    let o = d_out.shape();
    check_target(o.height, o.width)?;
    d_out.expect_shape(
        "bilinear_resize_backward",
        Shape::new(input_shape.batch, input_shape.channels, o.height, o.width),
    )?;
    let (h, w) = (input_shape.height, input_shape.width);
    let ty = taps::<F>(h, o.height);
    let tx = taps::<F>(w, o.width);
    let mut d_in = Tensor::zeros(input_shape);
    let one = F::one();
    for b in 0..o.batch {
        for c in 0..o.channels {
            let g = d_out.plane(b, c).to_vec();
            let dst = d_in.plane_mut(b, c);
            for (oy, y) in ty.iter().enumerate() {
                for (ox, x) in tx.iter().enumerate() {
                    let v = g[oy * o.width + ox];
                    let top = v * (one - y.frac);
                    let bot = v * y.frac;
                    dst[y.lo * w + x.lo] = dst[y.lo * w + x.lo] + top * (one - x.frac);
                    dst[y.lo * w + x.hi] = dst[y.lo * w + x.hi] + top * x.frac;
                    dst[y.hi * w + x.lo] = dst[y.hi * w + x.lo] + bot * (one - x.frac);
                    dst[y.hi * w + x.hi] = dst[y.hi * w + x.hi] + bot * x.frac;
                }
            }
        }
    }
    Ok(d_in)
}

/// Nearest-neighbour 2x upsampling.
pub fn upsample_nearest2x<F: Element>(input: &Tensor<F>) -> Tensor<F> {
    let s = input.shape();
    let out_shape = Shape::new(s.batch, s.channels, 2 * s.height, 2 * s.width);
    let mut out = Vec::with_capacity(out_shape.len());
    for b in 0..s.batch {
        for c in 0..s.channels {
            let p = input.plane(b, c);
            for y in 0..2 * s.height {
                let row = &p[(y / 2) * s.width..(y / 2 + 1) * s.width];
                for x in 0..2 * s.width {
                    out.push(row[x / 2]);
                }
            }
        }
    }
    Tensor::from_vec(out_shape, out).expect("length matches shape")
}

pub fn upsample_nearest2x_backward<F: Element>(d_out: &Tensor<F>) -> Result<Tensor<F>> {
    let o = d_out.shape();
    if !o.height.is_multiple_of(2) || !o.width.is_multiple_of(2) {
        return Err(Error::Shape {
            op: "upsample_nearest2x_backward",
            detail: format!("gradient {o} has odd spatial dims"),
        });
    }
    let (h, w) = (o.height / 2, o.width / 2);
    let mut d_in = Tensor::zeros(Shape::new(o.batch, o.channels, h, w));
    for b in 0..o.batch {
        for c in 0..o.channels {
            let g = d_out.plane(b, c).to_vec();
            let dst = d_in.plane_mut(b, c);
            for y in 0..o.height {
                for x in 0..o.width {
                    let i = (y / 2) * w + x / 2;
                    dst[i] = dst[i] + g[y * o.width + x];
                }
            }
        }
    }
    Ok(d_in)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::{grad_check, random_tensor};
    use crate::rng::rng_from;

    fn plane(h: usize, w: usize, data: Vec<f32>) -> Tensor<f32> {
        Tensor::from_vec(Shape::new(1, 1, h, w), data).unwrap()
    }

    #[test]
    fn constants_are_preserved_exactly() {
        let x = Tensor::<f32>::full(Shape::new(1, 1, 16, 16), 7.0);
        for (h, w) in [(2, 2), (5, 3), (16, 16), (37, 128)] {
            let y = bilinear_resize(&x, h, w).unwrap();
            assert!(y.data().iter().all(|&v| v == 7.0), "{h}x{w}");
        }
    }

    #[test]
    fn two_by_two_to_one_is_mean_of_corners() {
        let x = plane(2, 2, vec![0.0, 1.0, 2.0, 3.0]);
        let y = bilinear_resize(&x, 1, 1).unwrap();
        assert_eq!(y.data(), &[1.5]);
    }

    fn nearest(src: &[f64], h: usize, w: usize, oh: usize, ow: usize) -> Vec<f64> {
        let mut out = Vec::new();
        for y in 0..oh {
            for x in 0..ow {
                let sy = ((y as f64 + 0.5) * h as f64 / oh as f64).floor() as usize;
                let sx = ((x as f64 + 0.5) * w as f64 / ow as f64).floor() as usize;
                out.push(src[sy.min(h - 1) * w + sx.min(w - 1)]);
            }
        }
        out
    }

    fn rmse(a: &[f64], b: &[f64]) -> f64 {
        (a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64).sqrt()
    }

    #[test]
    fn ramp_roundtrip_beats_nearest_neighbour() {
        let ramp: Vec<f64> = (0..16).map(|i| ((i / 4) + (i % 4)) as f64).collect();
        let down = bilinear_resize_plane(&ramp, 4, 4, 2, 2);
        let back = bilinear_resize_plane(&down, 2, 2, 4, 4);
        let nn_back = nearest(&nearest(&ramp, 4, 4, 2, 2), 2, 2, 4, 4);
        let e_bilinear = rmse(&back, &ramp);
        let e_nearest = rmse(&nn_back, &ramp);
        assert!(e_bilinear < e_nearest, "{e_bilinear} vs {e_nearest}");
    }

    #[test]
    fn zero_target_rejected() {
        let x = plane(2, 2, vec![0.0; 4]);
        assert!(bilinear_resize(&x, 0, 3).is_err());
    }

    #[test]
    fn backward_is_adjoint() {
        let mut rng = rng_from(9, "resize");
        let x = random_tensor(Shape::new(2, 1, 8, 8), &mut rng);
        for (oh, ow) in [(1, 1), (3, 5), (16, 16)] {
            let err = grad_check(
                |x| bilinear_resize(x, oh, ow).unwrap(),
                |x, d| bilinear_resize_backward(x.shape(), d).unwrap(),
                &x,
                64,
                &mut rng,
            );
            assert!(err <= 1e-6, "{oh}x{ow}: {err}");
        }
    }

    #[test]
    fn nearest_upsample_backward_matches() {
        let mut rng = rng_from(10, "resize");
        let x = random_tensor(Shape::new(1, 2, 4, 4), &mut rng);
        let err = grad_check(
            upsample_nearest2x,
            |_, d| upsample_nearest2x_backward(d).unwrap(),
            &x,
            32,
            &mut rng,
        );
        assert!(err <= 1e-6, "{err}");
    }
}
