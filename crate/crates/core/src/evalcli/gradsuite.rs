//! Finite-difference gradient suite behind `downscale grad-check`.
//!
//! Layer checks run in `f64` against central differences. The end-to-end
//! check takes analytic U-Net parameter gradients of the noise-prediction
//! loss in `f32` and compares them with `f64` central differences of the
//! same loss.

use std::fmt;

use rand::Rng;

use crate::denoiser::{UNet, UNetConfig};
use crate::diffusion::{
    guidance_gradient, q_sample_batch, training_loss, BiasSpace, ConditionInput, GuidanceConfig,
    NoisePredictor, NoiseSchedule, ScheduleKind,
};
use crate::grids::Grid;
use crate::numerics::gradcheck::{random_tensor, FD_STEP};
use crate::numerics::{
    bilinear_resize, bilinear_resize_backward, concat_channels, conv2d, conv2d_backward, grad_check,
    group_norm, group_norm_backward, linear, linear_backward, relative_error, relu, relu_backward,
    silu, silu_backward, split_channels, upsample_nearest2x, upsample_nearest2x_backward, ConvSpec,
    Shape, Tensor,
};
use crate::rng::rng_from;
use crate::Result;

pub const LAYER_TOLERANCE: f64 = 1e-6;
pub const END_TO_END_TOLERANCE: f64 = 1e-3;
const PROBES: usize = 48;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckRow {
    pub name: String,
    pub rel_err: f64,
    pub tolerance: f64,
}

impl GradCheckRow {
    pub fn passed(&self) -> bool {
        self.rel_err <= self.tolerance
    }
}

impl fmt::Display for GradCheckRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<4} {:<34} rel_err {:.3e} (tol {:.0e})",
            if self.passed() { "ok" } else { "FAIL" },
            self.name,
            self.rel_err,
            self.tolerance
        )
    }
}

fn tensor_from(shape: Shape, data: Vec<f64>) -> Tensor<f64> {
    Tensor::from_vec(shape, data).expect("length matches shape")
}

fn layer_rows(seed: u64) -> Vec<GradCheckRow> {
    let mut rng = rng_from(seed, "grad-suite-layers");
    let mut rows = Vec::new();
    let mut push = |name: String, rel_err: f64| {
        rows.push(GradCheckRow {
            name,
            rel_err,
            tolerance: LAYER_TOLERANCE,
        })
    };

    let x = random_tensor(Shape::new(2, 4, 16, 16), &mut rng);
    push(
        "silu".into(),
        grad_check(silu, |x, d| silu_backward(x, d).unwrap(), &x, PROBES, &mut rng),
    );
    // keep coordinates away from the kink by more than the FD step
    let xr = x.map(|v| if v.abs() < 1e-2 { v.signum() * 0.5 } else { v });
    push(
        "relu".into(),
        grad_check(relu, |x, d| relu_backward(x, d).unwrap(), &xr, PROBES, &mut rng),
    );

    let li = random_tensor(Shape::new(3, 16, 1, 1), &mut rng);
    let lw = random_tensor(Shape::new(8, 16, 1, 1), &mut rng);
    let lb: Vec<f64> = random_tensor(Shape::new(8, 1, 1, 1), &mut rng).into_data();
    push(
        "linear.input".into(),
        grad_check(
            |x| linear(x, &lw, &lb).unwrap(),
            |x, d| linear_backward(x, &lw, d).unwrap().d_input,
            &li,
            PROBES,
            &mut rng,
        ),
    );
    push(
        "linear.weight".into(),
        grad_check(
            |w| linear(&li, w, &lb).unwrap(),
            |w, d| linear_backward(&li, w, d).unwrap().d_weight,
            &lw,
            PROBES,
            &mut rng,
        ),
    );
    let lbt = tensor_from(Shape::new(8, 1, 1, 1), lb.clone());
    push(
        "linear.bias".into(),
        grad_check(
            |b| linear(&li, &lw, b.data()).unwrap(),
            |b, d| tensor_from(b.shape(), linear_backward(&li, &lw, d).unwrap().d_bias),
            &lbt,
            PROBES,
            &mut rng,
        ),
    );

    for (k, stride, padding) in [(3, 1, 1), (3, 2, 1), (1, 1, 0)] {
        let spec = ConvSpec { stride, padding };
        let ci = random_tensor(Shape::new(2, 4, 16, 16), &mut rng);
        let cw = random_tensor(Shape::new(6, 4, k, k), &mut rng);
        let cb: Vec<f64> = random_tensor(Shape::new(6, 1, 1, 1), &mut rng).into_data();
        let tag = format!("conv{k}x{k}/s{stride}");
        push(
            format!("{tag}.input"),
            grad_check(
                |x| conv2d(x, &cw, &cb, spec).unwrap(),
                |x, d| conv2d_backward(x, &cw, spec, d).unwrap().d_input,
                &ci,
                PROBES,
                &mut rng,
            ),
        );
        push(
            format!("{tag}.weight"),
            grad_check(
                |w| conv2d(&ci, w, &cb, spec).unwrap(),
                |w, d| conv2d_backward(&ci, w, spec, d).unwrap().d_weight,
                &cw,
                PROBES,
                &mut rng,
            ),
        );
        let cbt = tensor_from(Shape::new(6, 1, 1, 1), cb.clone());
        push(
            format!("{tag}.bias"),
            grad_check(
                |b| conv2d(&ci, &cw, b.data(), spec).unwrap(),
                |b, d| tensor_from(b.shape(), conv2d_backward(&ci, &cw, spec, d).unwrap().d_bias),
                &cbt,
                PROBES,
                &mut rng,
            ),
        );
    }

    let gain = random_tensor(Shape::new(1, 4, 1, 1), &mut rng);
    let shift = random_tensor(Shape::new(1, 4, 1, 1), &mut rng);
    push(
        "group_norm.input".into(),
        grad_check(
            |x| group_norm(x, 2, gain.data(), shift.data()).unwrap().0,
            |x, d| {
                let (_, cache) = group_norm(x, 2, gain.data(), shift.data()).unwrap();
                group_norm_backward(&cache, gain.data(), d).unwrap().d_input
            },
            &x,
            PROBES,
            &mut rng,
        ),
    );
    push(
        "group_norm.gain".into(),
        grad_check(
            |g| group_norm(&x, 2, g.data(), shift.data()).unwrap().0,
            |g, d| {
                let (_, cache) = group_norm(&x, 2, g.data(), shift.data()).unwrap();
                tensor_from(g.shape(), group_norm_backward(&cache, g.data(), d).unwrap().d_gain)
            },
            &gain,
            PROBES,
            &mut rng,
        ),
    );
    push(
        "group_norm.shift".into(),
        grad_check(
            |s| group_norm(&x, 2, gain.data(), s.data()).unwrap().0,
            |s, d| {
                let (_, cache) = group_norm(&x, 2, gain.data(), s.data()).unwrap();
                tensor_from(s.shape(), group_norm_backward(&cache, gain.data(), d).unwrap().d_shift)
            },
            &shift,
            PROBES,
            &mut rng,
        ),
    );

    let small = random_tensor(Shape::new(2, 2, 8, 8), &mut rng);
    push(
        "upsample_nearest2x".into(),
        grad_check(
            upsample_nearest2x,
            |_, d| upsample_nearest2x_backward(d).unwrap(),
            &small,
            PROBES,
            &mut rng,
        ),
    );
    for (oh, ow) in [(16, 16), (2, 2)] {
        let src = if oh > 8 { small.clone() } else { x.clone() };
        push(
            format!("bilinear_resize->{oh}x{ow}"),
            grad_check(
                |x| bilinear_resize(x, oh, ow).unwrap(),
                |x, d| bilinear_resize_backward(x.shape(), d).unwrap(),
                &src,
                PROBES,
                &mut rng,
            ),
        );
    }
    let other = random_tensor(Shape::new(2, 3, 16, 16), &mut rng);
    push(
        "concat_channels".into(),
        grad_check(
            |x| concat_channels(&[x, &other]).unwrap(),
            |_, d| split_channels(d, &[4, 3]).unwrap().remove(0),
            &x,
            PROBES,
            &mut rng,
        ),
    );
    rows
}

/// `f(y) = ||y - lr_up||` (high-resolution space) or
/// `||resize(y) - lr||` (low-resolution space) for one chain.
fn bias_functional(y: &Tensor<f64>, cond: &ConditionInput, space: BiasSpace) -> f64 {
    let (target, pred) = match space {
        BiasSpace::Hr => (cond.lr_up.values().to_vec(), y.data().to_vec()),
        BiasSpace::Lr => {
            let (h, w) = cond.lr.dims();
            (cond.lr.values().to_vec(), bilinear_resize(y, h, w).unwrap().into_data())
        }
    };
    pred.iter()
        .zip(&target)
        .map(|(a, &b)| (a - f64::from(b)).powi(2))
        .sum::<f64>()
        .sqrt()
}

fn guidance_rows(seed: u64) -> Result<Vec<GradCheckRow>> {
    let mut rng = rng_from(seed, "grad-suite-guidance");
    let lr_vals: Vec<f32> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
    let lr = Grid::new(2, 2, lr_vals)?;
    let lr_up = lr.resize_bilinear(16, 16)?;
    let cond = ConditionInput::new(lr, lr_up, Grid::filled(16, 16, 0.0)?, true)?;
    let y = random_tensor(Shape::new(1, 1, 16, 16), &mut rng);
    let mut rows = Vec::new();
    for space in [BiasSpace::Hr, BiasSpace::Lr] {
        let g = GuidanceConfig {
            space,
            ..GuidanceConfig::default()
        };
        let analytic = guidance_gradient(&y, std::slice::from_ref(&cond), &g)?;
        let mut worst: f64 = 0.0;
        let mut probe = y.clone();
        for i in rand::seq::index::sample(&mut rng, y.len(), PROBES) {
            let orig = y.data()[i];
            probe.data_mut()[i] = orig + FD_STEP;
            let up = bias_functional(&probe, &cond, space);
            probe.data_mut()[i] = orig - FD_STEP;
            let down = bias_functional(&probe, &cond, space);
            probe.data_mut()[i] = orig;
            worst = worst.max(relative_error(analytic.data()[i], (up - down) / (2.0 * FD_STEP)));
        }
        rows.push(GradCheckRow {
            name: format!("bgs.grad_f[{space}]"),
            rel_err: worst,
            tolerance: LAYER_TOLERANCE,
        });
    }
    Ok(rows)
}

/// Small U-Net on 16x16 inputs used by the end-to-end check.
pub fn toy_unet_config() -> UNetConfig {
    UNetConfig {
        base_channels: 8,
        depth: 2,
        time_embed_dim: 16,
        in_channels: 3,
        groups: 4,
    }
}

fn end_to_end_rows(seed: u64) -> Result<Vec<GradCheckRow>> {
    let mut rng = rng_from(seed, "grad-suite-unet");
    let mut net64 = UNet::<f64>::new(toy_unet_config(), seed)?;
    // the output conv starts at zero, which would leave every upstream
    // gradient at exactly zero
    for name in ["out.conv.weight", "out.conv.bias"] {
        let t = net64.params_mut().by_name_mut(name).expect("output conv");
        let r = random_tensor(t.shape(), &mut rng).map(|v| 0.1 * v);
        t.data_mut().copy_from_slice(r.data());
    }
    let schedule = NoiseSchedule::new(200, ScheduleKind::Cosine)?;
    let y0 = random_tensor(Shape::new(2, 1, 16, 16), &mut rng);
    let cond = random_tensor(Shape::new(2, 2, 16, 16), &mut rng);
    let eps = random_tensor(Shape::new(2, 1, 16, 16), &mut rng);
    let t = [17usize, 150];

    let mut net32: UNet<f32> = net64.cast();
    net32.params_mut().zero_grads();
    training_loss(&mut net32, &y0.cast(), &cond.cast(), &t, &eps.cast(), &schedule)?;

    let y_t = q_sample_batch(&y0, &t, &eps, &schedule)?;
    let loss = |net: &UNet<f64>| -> Result<f64> {
        let out = net.predict(&y_t, &cond, &t)?;
        Ok(out
            .data()
            .iter()
            .zip(eps.data())
            .map(|(p, e)| (p - e).powi(2))
            .sum::<f64>()
            / out.len() as f64)
    };
    let names: Vec<String> = net64.params().iter().map(|(n, _)| n.to_string()).collect();
    let mut worst: f64 = 0.0;
    let mut worst_name = String::new();
    for name in &names {
        let len = net64.params().by_name(name).expect("listed").len();
        let k = rng.random_range(0..len);
        let analytic = f64::from(net32.params().by_name(name).expect("listed").grad().expect("grad")[k]);
        let base = net64.params().by_name(name).expect("listed").data()[k];
        net64.params_mut().by_name_mut(name).expect("listed").data_mut()[k] = base + FD_STEP;
        let up = loss(&net64)?;
        net64.params_mut().by_name_mut(name).expect("listed").data_mut()[k] = base - FD_STEP;
        let down = loss(&net64)?;
        net64.params_mut().by_name_mut(name).expect("listed").data_mut()[k] = base;
        let err = relative_error(analytic, (up - down) / (2.0 * FD_STEP));
        if err > worst || worst_name.is_empty() {
            worst = err;
            worst_name = format!("{name}[{k}]");
        }
    }
    Ok(vec![GradCheckRow {
        name: format!("unet.loss (worst {worst_name})"),
        rel_err: worst,
        tolerance: END_TO_END_TOLERANCE,
    }])
}

/// Runs every check; one row per layer gradient, the guidance gradient in
/// both spaces and the U-Net loss.
pub fn grad_suite(seed: u64) -> Result<Vec<GradCheckRow>> {
    let mut rows = layer_rows(seed);
    rows.extend(guidance_rows(seed)?);
    rows.extend(end_to_end_rows(seed)?);
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_check_passes() {
        let rows = grad_suite(0).unwrap();
        assert!(rows.len() > 20);
        for r in &rows {
            assert!(r.passed(), "{r}");
        }
    }
}
