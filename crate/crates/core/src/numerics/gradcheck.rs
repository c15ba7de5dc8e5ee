//! Central finite-difference gradient checks, always evaluated in `f64`.

use rand_distr::StandardNormal;

use super::{Shape, Tensor};

/// Step used for central differences.
pub const FD_STEP: f64 = 1e-4;

/// `|a - n| / max(|a|, |n|)`, and `0` when both are exactly zero.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale == 0.0 {
        0.0
    } else {
        (analytic - numeric).abs() / scale
    }
}

pub fn random_tensor(shape: Shape, rng: &mut impl rand::Rng) -> Tensor<f64> {
    let data = (0..shape.len()).map(|_| rng.sample(StandardNormal)).collect();
    Tensor::from_vec(shape, data).expect("length matches shape")
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Checks `backward` against central differences of `forward`.
///
/// The scalar probed is `L(x) = <seed, forward(x)>` for a random
/// cotangent `seed`; `backward(x, seed)` must return `dL/dx`. Returns the
/// worst relative error over `probes` randomly chosen coordinates of `x`.
pub fn grad_check<Fwd, Bwd>(
    forward: Fwd,
    backward: Bwd,
    input: &Tensor<f64>,
    probes: usize,
    rng: &mut impl rand::Rng,
) -> f64
where
    Fwd: Fn(&Tensor<f64>) -> Tensor<f64>,
    Bwd: Fn(&Tensor<f64>, &Tensor<f64>) -> Tensor<f64>,
{
    let out = forward(input);
    let seed = random_tensor(out.shape(), rng);
    let analytic = backward(input, &seed);
    assert_eq!(analytic.shape(), input.shape(), "backward returned wrong shape");
    let loss = |x: &Tensor<f64>| dot(&seed, &forward(x));

    let n = input.len();
    let coords: Vec<usize> = if probes >= n {
        (0..n).collect()
    } else {
        rand::seq::index::sample(rng, n, probes).into_vec()
    };
    let mut worst: f64 = 0.0;
    let mut probe = input.clone();
    for i in coords {
        let orig = input.data()[i];
        probe.data_mut()[i] = orig + FD_STEP;
        let up = loss(&probe);
        probe.data_mut()[i] = orig - FD_STEP;
        let down = loss(&probe);
        probe.data_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * FD_STEP);
        worst = worst.max(relative_error(analytic.data()[i], numeric));
    }
    worst
}

/// Picks a uniformly random coordinate; shared by callers that probe
/// parameters rather than inputs.
pub fn random_index(len: usize, rng: &mut impl rand::Rng) -> usize {
    rng.random_range(0..len)
}
