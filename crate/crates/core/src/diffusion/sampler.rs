use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;

use super::process::image_shape;
use super::{stack_conditions, ConditionInput, NoisePredictor, NoiseSchedule};
use crate::grids::Grid;
use crate::numerics::{bilinear_resize, bilinear_resize_backward, Element, Shape, Tensor};
use crate::rng::rng_from;
use crate::{Error, Result};

/// Grid on which the bias functional compares sample and condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BiasSpace {
    /// `||y_t - up(x)||` on the high-resolution grid.
    Hr,
    /// `||down(y_t) - x||` on the low-resolution grid.
    Lr,
}

impl fmt::Display for BiasSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BiasSpace::Hr => "hr",
            BiasSpace::Lr => "lr",
        })
    }
}

impl FromStr for BiasSpace {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hr" => Ok(BiasSpace::Hr),
            "lr" => Ok(BiasSpace::Lr),
            other => Err(Error::Config(format!("unknown bias space `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GuidanceConfig {
    pub w: f64,
    pub eps_num: f64,
    pub enabled: bool,
    pub space: BiasSpace,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        GuidanceConfig {
            w: 100.0,
            eps_num: 1e-8,
            enabled: true,
            space: BiasSpace::Hr,
        }
    }
}

impl GuidanceConfig {
    pub fn disabled() -> Self {
        GuidanceConfig {
            enabled: false,
            ..Self::default()
        }
    }

    pub fn with_weight(w: f64) -> Self {
        GuidanceConfig {
            w,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.w >= 0.0 && self.w.is_finite()) {
            return Err(Error::config_key("guidance.w", format!("must be >= 0, got {}", self.w)));
        }
        if !(self.eps_num > 0.0) {
            return Err(Error::config_key(
                "guidance.eps",
                format!("must be > 0, got {}", self.eps_num),
            ));
        }
        Ok(())
    }
}

/// Whether the reverse chain injects `sigma_t z` noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReverseMode {
    #[default]
    Ancestral,
    /// Drops the noise term at every step.
    Deterministic,
}

impl fmt::Display for ReverseMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReverseMode::Ancestral => "ancestral",
            ReverseMode::Deterministic => "deterministic",
        })
    }
}

impl FromStr for ReverseMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ancestral" => Ok(ReverseMode::Ancestral),
            "deterministic" => Ok(ReverseMode::Deterministic),
            other => Err(Error::Config(format!("unknown reverse mode `{other}`"))),
        }
    }
}

/// `y_{t-1} = (y_t - (1 - a_t)/sqrt(1 - abar_t) eps_hat) / sqrt(a_t) + sigma_t z`.
///
/// `z = None` drops the noise term; it is ignored at `t = 1` where
/// `sigma_1 = 0`.
pub fn ddpm_step<F: Element>(
    y_t: &Tensor<F>,
    eps_hat: &Tensor<F>,
    t: usize,
    z: Option<&Tensor<F>>,
    schedule: &NoiseSchedule,
) -> Result<Tensor<F>> {
    schedule.check_step(t)?;
    let alpha = schedule.alpha(t);
    let c_in = F::from_f64_lossy(1.0 / alpha.sqrt());
    let c_eps = F::from_f64_lossy((1.0 - alpha) / (1.0 - schedule.alpha_bar(t)).sqrt());
    let mean = y_t.zip_map(eps_hat, |y, e| c_in * (y - c_eps * e))?;
    match z {
        Some(z) if t > 1 => {
            let sigma = F::from_f64_lossy(schedule.sigma2(t).sqrt());
            mean.zip_map(z, |m, n| m + sigma * n)
        }
        _ => Ok(mean),
    }
}

fn residual_unit(residual: &[f64], eps_num: f64) -> Vec<f64> {
    let norm = residual.iter().map(|r| r * r).sum::<f64>().sqrt();
    if norm <= eps_num {
        vec![0.0; residual.len()]
    } else {
        residual.iter().map(|r| r / norm).collect()
    }
}

/// Gradient of `f = ||y_t - x||_2` per batch element, where `x` is the
/// condition on the grid selected by `g.space`. Zero when the residual norm
/// is at most `g.eps_num`.
pub fn guidance_gradient<F: Element>(
    y_t: &Tensor<F>,
    conds: &[ConditionInput],
    g: &GuidanceConfig,
) -> Result<Tensor<F>> {
    let shape = y_t.shape();
    if conds.len() != shape.batch || shape.channels != 1 {
        return Err(Error::Shape {
            op: "guidance_gradient",
            detail: format!("{} conditions for samples {shape}", conds.len()),
        });
    }
    let mut out = Vec::with_capacity(shape.len());
    for (b, cond) in conds.iter().enumerate() {
        if cond.hr_dims() != (shape.height, shape.width) {
            return Err(Error::Shape {
                op: "guidance_gradient",
                detail: format!("condition grid {:?} vs sample {shape}", cond.hr_dims()),
            });
        }
        let y: Vec<f64> = y_t.sample(b).iter().map(|v| v.as_f64()).collect();
        match g.space {
            BiasSpace::Hr => {
                let r: Vec<f64> = y
                    .iter()
                    .zip(cond.lr_up.values())
                    .map(|(a, &x)| a - f64::from(x))
                    .collect();
                out.extend(residual_unit(&r, g.eps_num).into_iter().map(F::from_f64_lossy));
            }
            BiasSpace::Lr => {
                let (lh, lw) = cond.lr.dims();
                let single = image_shape(1, shape.height, shape.width);
                let y = Tensor::from_vec(single, y)?;
                let down = bilinear_resize(&y, lh, lw)?;
                let r: Vec<f64> = down
                    .data()
                    .iter()
                    .zip(cond.lr.values())
                    .map(|(a, &x)| a - f64::from(x))
                    .collect();
                let unit = Tensor::from_vec(Shape::new(1, 1, lh, lw), residual_unit(&r, g.eps_num))?;
                let back = bilinear_resize_backward(single, &unit)?;
                out.extend(back.data().iter().map(|&v| F::from_f64_lossy(v)));
            }
        }
    }
    Tensor::from_vec(shape, out)
}

/// Bias-aware guided step: [`ddpm_step`] minus `w` times the gradient of the
/// bias functional evaluated at `y_t`.
#[allow(clippy::too_many_arguments)]
pub fn bgs_step<F: Element>(
    y_t: &Tensor<F>,
    eps_hat: &Tensor<F>,
    t: usize,
    z: Option<&Tensor<F>>,
    schedule: &NoiseSchedule,
    conds: &[ConditionInput],
    g: &GuidanceConfig,
) -> Result<Tensor<F>> {
    let base = ddpm_step(y_t, eps_hat, t, z, schedule)?;
    if !g.enabled {
        return Ok(base);
    }
    let grad = guidance_gradient(y_t, conds, g)?;
    let w = F::from_f64_lossy(g.w);
    base.zip_map(&grad, |d, gr| d - w * gr)
}

fn normal_into<F: Element>(rng: &mut impl Rng, dst: &mut [F]) {
    for v in dst {
        *v = F::from_f64_lossy(rng.sample::<f64, _>(StandardNormal));
    }
}

/// Runs one reverse chain per condition, each driven by its own seed, and
/// returns the final samples in model range.
pub fn sample_batch<F: Element, M: NoisePredictor<F>>(
    model: &M,
    conds: &[ConditionInput],
    seeds: &[u64],
    schedule: &NoiseSchedule,
    g: &GuidanceConfig,
    mode: ReverseMode,
) -> Result<Vec<Grid>> {
    if conds.len() != seeds.len() {
        return Err(Error::Dimension {
            op: "sample",
            axis: "batch",
            expected: conds.len(),
            actual: seeds.len(),
        });
    }
    g.validate()?;
    let cond = stack_conditions::<F>(conds)?;
    let (h, w) = conds[0].hr_dims();
    let shape = image_shape(conds.len(), h, w);
    let per = shape.sample();
    let mut rngs: Vec<_> = seeds.iter().map(|&s| rng_from(s, "reverse-chain")).collect();
    let mut y = Tensor::zeros(shape);
    for (b, rng) in rngs.iter_mut().enumerate() {
        normal_into(rng, &mut y.data_mut()[b * per..(b + 1) * per]);
    }
    let mut z = Tensor::zeros(shape);
    for t in (1..=schedule.steps()).rev() {
        let steps = vec![t; conds.len()];
        let eps_hat = model.predict(&y, &cond, &steps)?;
        let noise = if t > 1 && mode == ReverseMode::Ancestral {
            for (b, rng) in rngs.iter_mut().enumerate() {
                normal_into(rng, &mut z.data_mut()[b * per..(b + 1) * per]);
            }
            Some(&z)
        } else {
            None
        };
        y = bgs_step(&y, &eps_hat, t, noise, schedule, conds, g)?;
        if !y.all_finite() {
            return Err(Error::NonFinite(format!("reverse chain at step t = {t}")));
        }
    }
    (0..conds.len())
        .map(|b| Grid::new(h, w, y.sample(b).iter().map(|v| v.as_f64() as f32).collect()))
        .collect()
}

pub fn sample<F: Element, M: NoisePredictor<F>>(
    model: &M,
    cond: &ConditionInput,
    schedule: &NoiseSchedule,
    g: &GuidanceConfig,
    mode: ReverseMode,
    seed: u64,
) -> Result<Grid> {
    Ok(sample_batch(model, std::slice::from_ref(cond), &[seed], schedule, g, mode)?
        .pop()
        .expect("one chain"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::ScheduleKind;
    use crate::numerics::gradcheck::{random_tensor, relative_error, FD_STEP};

    fn cond_for(lr_up: Vec<f32>, h: usize, w: usize) -> ConditionInput {
        let up = Grid::new(h, w, lr_up).unwrap();
        let lr = up.resize_bilinear((h / 8).max(1), (w / 8).max(1)).unwrap();
        ConditionInput::new(lr, up, Grid::filled(h, w, 0.0).unwrap(), false).unwrap()
    }

    fn single(values: Vec<f64>) -> Tensor<f64> {
        let n = values.len();
        Tensor::from_vec(Shape::new(1, 1, 1, n), values).unwrap()
    }

    /// Sample-independent predictor: eps_hat = 0.1 * y_t.
    struct Shrink;

    impl NoisePredictor<f64> for Shrink {
        type Tape = ();
        fn forward(&self, y: &Tensor<f64>, _: &Tensor<f64>, _: &[usize]) -> Result<(Tensor<f64>, ())> {
            Ok((y.map(|v| 0.1 * v), ()))
        }
        fn backward(&mut self, _: (), _: &Tensor<f64>) -> Result<()> {
            Ok(())
        }
    }

    #[test]
    fn zero_prediction_without_noise_rescales() {
        let s = NoiseSchedule::new(20, ScheduleKind::Linear).unwrap();
        let y = single(vec![1.0, -2.0]);
        let out = ddpm_step(&y, &Tensor::zeros(y.shape()), 1, None, &s).unwrap();
        let c = 1.0 / s.alpha(1).sqrt();
        assert_eq!(out.data(), &[c, -2.0 * c]);
    }

    #[test]
    fn first_step_ignores_noise() {
        let s = NoiseSchedule::new(20, ScheduleKind::Cosine).unwrap();
        let y = single(vec![0.3]);
        let e = single(vec![0.1]);
        let z = single(vec![5.0]);
        assert_eq!(
            ddpm_step(&y, &e, 1, Some(&z), &s).unwrap(),
            ddpm_step(&y, &e, 1, None, &s).unwrap()
        );
    }

    #[test]
    fn hand_evaluated_reverse_step() {
        // step 2 has alpha = 0.99 and abar = 0.5
        let s = NoiseSchedule::with_betas(vec![1.0 - 0.5 / 0.99, 0.01]);
        assert!((s.alpha(2) - 0.99).abs() < 1e-15);
        assert!((s.alpha_bar(2) - 0.5).abs() < 1e-15);
        let out = ddpm_step(&single(vec![1.0]), &single(vec![0.2]), 2, Some(&single(vec![0.0])), &s)
            .unwrap();
        let want = (1.0 - (0.01 / 0.5f64.sqrt()) * 0.2) / 0.99f64.sqrt();
        assert!((out.data()[0] - want).abs() < 1e-14);
        assert!((out.data()[0] - 1.002_195_139).abs() < 1e-9);
    }

    #[test]
    fn guidance_is_unit_residual() {
        let cond = cond_for(vec![0.0, 0.0], 1, 2);
        let y = single(vec![3.0, 4.0]);
        let g = guidance_gradient(&y, std::slice::from_ref(&cond), &GuidanceConfig::with_weight(1.0))
            .unwrap();
        assert!((g.data()[0] - 0.6).abs() < 1e-15 && (g.data()[1] - 0.8).abs() < 1e-15);

        let s = NoiseSchedule::new(10, ScheduleKind::Linear).unwrap();
        let e = single(vec![0.1, -0.1]);
        let d = ddpm_step(&y, &e, 4, None, &s).unwrap();
        let out = bgs_step(&y, &e, 4, None, &s, &[cond], &GuidanceConfig::with_weight(1.0)).unwrap();
        assert!((out.data()[0] - (d.data()[0] - 0.6)).abs() < 1e-12);
        assert!((out.data()[1] - (d.data()[1] - 0.8)).abs() < 1e-12);
    }

    #[test]
    fn zero_weight_and_zero_residual_are_plain_ddpm() {
        let s = NoiseSchedule::new(10, ScheduleKind::Linear).unwrap();
        let y = single(vec![0.25, -0.5]);
        let e = single(vec![0.1, 0.2]);
        let z = single(vec![1.0, -1.0]);
        let d = ddpm_step(&y, &e, 5, Some(&z), &s).unwrap();
        let off = cond_for(vec![1.0, 1.0], 1, 2);
        let zero_w = bgs_step(&y, &e, 5, Some(&z), &s, &[off], &GuidanceConfig::with_weight(0.0));
        assert_eq!(zero_w.unwrap(), d);
        let same = cond_for(vec![0.25, -0.5], 1, 2);
        let on_target = bgs_step(&y, &e, 5, Some(&z), &s, &[same], &GuidanceConfig::default());
        assert_eq!(on_target.unwrap(), d);
    }

    fn bias_norm(y: &Tensor<f64>, cond: &ConditionInput, space: BiasSpace) -> f64 {
        let (h, w) = cond.hr_dims();
        match space {
            BiasSpace::Hr => y
                .data()
                .iter()
                .zip(cond.lr_up.values())
                .map(|(a, &b)| (a - f64::from(b)).powi(2))
                .sum::<f64>()
                .sqrt(),
            BiasSpace::Lr => {
                let y = y.clone().reshape(Shape::new(1, 1, h, w)).unwrap();
                let (lh, lw) = cond.lr.dims();
                bilinear_resize(&y, lh, lw)
                    .unwrap()
                    .data()
                    .iter()
                    .zip(cond.lr.values())
                    .map(|(a, &b)| (a - f64::from(b)).powi(2))
                    .sum::<f64>()
                    .sqrt()
            }
        }
    }

    #[test]
    fn guidance_gradient_matches_finite_differences() {
        let mut rng = rng_from(31, "bgs-fd");
        let lr_up: Vec<f32> = random_tensor(Shape::new(1, 1, 16, 16), &mut rng)
            .data()
            .iter()
            .map(|&v| v as f32)
            .collect();
        let cond = cond_for(lr_up, 16, 16);
        let y = random_tensor(Shape::new(1, 1, 16, 16), &mut rng);
        for space in [BiasSpace::Hr, BiasSpace::Lr] {
            let g = GuidanceConfig { space, ..GuidanceConfig::default() };
            let grad = guidance_gradient(&y, std::slice::from_ref(&cond), &g).unwrap();
            let mut worst: f64 = 0.0;
            for _ in 0..32 {
                let i = rng.random_range(0..y.len());
                let mut p = y.clone();
                p.data_mut()[i] += FD_STEP;
                let up = bias_norm(&p, &cond, space);
                p.data_mut()[i] -= 2.0 * FD_STEP;
                let down = bias_norm(&p, &cond, space);
                let numeric = (up - down) / (2.0 * FD_STEP);
                worst = worst.max(relative_error(grad.data()[i], numeric));
            }
            assert!(worst <= 1e-6, "{space}: {worst}");
        }
    }

    #[test]
    fn guidance_norm_never_exceeds_weight() {
        let mut rng = rng_from(32, "bgs-norm");
        let lr_up: Vec<f32> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
        let cond = cond_for(lr_up, 8, 8);
        for space in [BiasSpace::Hr, BiasSpace::Lr] {
            let g = GuidanceConfig { space, ..GuidanceConfig::default() };
            let y = random_tensor(Shape::new(1, 1, 8, 8), &mut rng);
            let grad = guidance_gradient(&y, std::slice::from_ref(&cond), &g).unwrap();
            let norm = (g.w * g.w * grad.sum_sq()).sqrt();
            assert!(norm <= g.w * (1.0 + 1e-12), "{space}: {norm}");
        }
    }

    #[test]
    fn sampling_is_deterministic_and_degenerates_at_zero_weight() {
        let s = NoiseSchedule::new(12, ScheduleKind::Cosine).unwrap();
        let mut rng = rng_from(33, "sampler");
        let lr_up: Vec<f32> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
        let cond = cond_for(lr_up, 8, 8);
        let off = GuidanceConfig::disabled();
        let a = sample::<f64, _>(&Shrink, &cond, &s, &off, ReverseMode::Ancestral, 5).unwrap();
        let b = sample::<f64, _>(&Shrink, &cond, &s, &off, ReverseMode::Ancestral, 5).unwrap();
        assert_eq!(a, b);
        let zero = GuidanceConfig::with_weight(0.0);
        let c = sample::<f64, _>(&Shrink, &cond, &s, &zero, ReverseMode::Ancestral, 5).unwrap();
        for (x, y) in a.values().iter().zip(c.values()) {
            assert!((x - y).abs() <= 1e-6);
        }
        let other = sample::<f64, _>(&Shrink, &cond, &s, &off, ReverseMode::Ancestral, 6).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn batched_chains_match_single_chains() {
        let s = NoiseSchedule::new(8, ScheduleKind::Linear).unwrap();
        let c1 = cond_for(vec![0.5; 64], 8, 8);
        let c2 = cond_for(vec![-0.5; 64], 8, 8);
        let g = GuidanceConfig::with_weight(2.0);
        let both = sample_batch::<f64, _>(&Shrink, &[c1.clone(), c2.clone()], &[1, 2], &s, &g, ReverseMode::Ancestral)
            .unwrap();
        let one = sample::<f64, _>(&Shrink, &c2, &s, &g, ReverseMode::Ancestral, 2).unwrap();
        assert_eq!(both[1], one);
    }

    #[test]
    fn deterministic_reverse_ignores_seed_after_init() {
        let s = NoiseSchedule::new(8, ScheduleKind::Linear).unwrap();
        let cond = cond_for(vec![0.0; 64], 8, 8);
        let g = GuidanceConfig::disabled();
        let a = sample::<f64, _>(&Shrink, &cond, &s, &g, ReverseMode::Deterministic, 1).unwrap();
        let b = sample::<f64, _>(&Shrink, &cond, &s, &g, ReverseMode::Ancestral, 1).unwrap();
        assert_ne!(a, b);
    }
}
