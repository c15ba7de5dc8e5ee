use super::{Element, Tensor};
use crate::{Error, Result};

/// Variance stabiliser of [`group_norm`].
pub const GROUP_NORM_EPS: f64 = 1e-5;

/// Saved activations needed by [`group_norm_backward`].
pub struct GroupNormCache<F> {
    groups: usize,
    normalized: Tensor<F>,
    inv_std: Vec<F>,
}

pub struct GroupNormGrads<F> {
    pub d_input: Tensor<F>,
    pub d_gain: Vec<F>,
    pub d_shift: Vec<F>,
}

fn check_groups(channels: usize, groups: usize, gain: usize, shift: usize) -> Result<()> {
    if groups == 0 || !channels.is_multiple_of(groups) {
        return Err(Error::Config(format!(
            "group_norm: {channels} channels not divisible into {groups} groups"
        )));
    }
    for (axis, len) in [("gain", gain), ("shift", shift)] {
        if len != channels {
            return Err(Error::Dimension {
                op: "group_norm",
                axis,
                expected: channels,
                actual: len,
            });
        }
    }
    Ok(())
}

/// Normalises each `(batch, group)` slice to zero mean and unit variance,
/// then applies a per-channel affine `gain * x + shift`.
pub fn group_norm<F: Element>(
    input: &Tensor<F>,
    groups: usize,
    gain: &[F],
    shift: &[F],
) -> Result<(Tensor<F>, GroupNormCache<F>)> {
    let shape = input.shape();
    check_groups(shape.channels, groups, gain.len(), shift.len())?;
    let cpg = shape.channels / groups;
    let span = cpg * shape.plane();
    let count = F::from_usize(span).expect("group size fits");
    let eps = F::from_f64_lossy(GROUP_NORM_EPS);

    let mut normalized = Tensor::zeros(shape);
    let mut out = Tensor::zeros(shape);
    let mut inv_std = Vec::with_capacity(shape.batch * groups);
    for (gi, (src, (xhat, dst))) in input
        .data()
        .chunks_exact(span)
        .zip(
            normalized
                .data_mut()
                .chunks_exact_mut(span)
                .zip(out.data_mut().chunks_exact_mut(span)),
        )
        .enumerate()
    {
        let mean = src.iter().copied().sum::<F>() / count;
        let var = src
            .iter()
            .map(|&v| (v - mean) * (v - mean))
            .sum::<F>()
            / count;
        let rstd = F::one() / (var + eps).sqrt();
        inv_std.push(rstd);
        let c0 = (gi % groups) * cpg;
        let plane = shape.plane();
        for (ci, ((src, xhat), dst)) in src
            .chunks_exact(plane)
            .zip(xhat.chunks_exact_mut(plane))
            .zip(dst.chunks_exact_mut(plane))
            .enumerate()
        {
            let (g, b) = (gain[c0 + ci], shift[c0 + ci]);
            for ((&x, xh), y) in src.iter().zip(xhat.iter_mut()).zip(dst.iter_mut()) {
                *xh = (x - mean) * rstd;
                *y = *xh * g + b;
            }
        }
    }
    Ok((
        out,
        GroupNormCache {
            groups,
            normalized,
            inv_std,
        },
    ))
}

pub fn group_norm_backward<F: Element>(
    cache: &GroupNormCache<F>,
    gain: &[F],
    d_out: &Tensor<F>,
) -> Result<GroupNormGrads<F>> {
    let shape = cache.normalized.shape();
    d_out.expect_shape("group_norm_backward", shape)?;
    let groups = cache.groups;
    let cpg = shape.channels / groups;
    let plane = shape.plane();
    let span = cpg * plane;
    let count = F::from_usize(span).expect("group size fits");

    let mut d_gain = vec![F::zero(); shape.channels];
    let mut d_shift = vec![F::zero(); shape.channels];
    let mut d_input = Tensor::zeros(shape);
    let mut dxhat = vec![F::zero(); span];
    for (gi, ((xhat, dy), dx)) in cache
        .normalized
        .data()
        .chunks_exact(span)
        .zip(d_out.data().chunks_exact(span))
        .zip(d_input.data_mut().chunks_exact_mut(span))
        .enumerate()
    {
        let c0 = (gi % groups) * cpg;
        let mut sum_d = F::zero();
        let mut sum_dx = F::zero();
        for (ci, ((xh, dy), dxh)) in xhat
            .chunks_exact(plane)
            .zip(dy.chunks_exact(plane))
            .zip(dxhat.chunks_exact_mut(plane))
            .enumerate()
        {
            let c = c0 + ci;
            let (mut dg, mut ds) = (F::zero(), F::zero());
            for ((&x, &g), d) in xh.iter().zip(dy).zip(dxh.iter_mut()) {
                dg = dg + g * x;
                ds = ds + g;
                *d = g * gain[c];
            }
            d_gain[c] = d_gain[c] + dg;
            d_shift[c] = d_shift[c] + ds;
            sum_d = sum_d + ds * gain[c];
            sum_dx = sum_dx + dg * gain[c];
        }
        let scale = cache.inv_std[gi] / count;
        for ((d, &dh), &x) in dx.iter_mut().zip(&dxhat).zip(xhat) {
            *d = scale * (count * dh - sum_d - x * sum_dx);
        }
    }
    Ok(GroupNormGrads {
        d_input,
        d_gain,
        d_shift,
    })
}
