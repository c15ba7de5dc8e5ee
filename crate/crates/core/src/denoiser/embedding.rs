use crate::numerics::Element;
use crate::{Error, Result};

/// Sinusoidal embedding of step `t`: slots `2i` and `2i + 1` hold
/// `sin(t w_i)` and `cos(t w_i)` with `w_i = exp(-ln(10000) i / (dim / 2))`.
pub fn time_embedding<F: Element>(t: usize, dim: usize) -> Result<Vec<F>> {
    if dim == 0 || !dim.is_multiple_of(2) {
        return Err(Error::Config(format!(
            "time embedding dimension must be even and positive, got {dim}"
        )));
    }
    let half = dim / 2;
    let mut out = Vec::with_capacity(dim);
    for i in 0..half {
        let freq = (-(10000f64.ln()) * i as f64 / half as f64).exp();
        let arg = t as f64 * freq;
        out.push(F::from_f64_lossy(arg.sin()));
        out.push(F::from_f64_lossy(arg.cos()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_pair_is_unit_frequency() {
        for t in [1, 7, 200] {
            let e: Vec<f64> = time_embedding(t, 16).unwrap();
            assert_eq!(e[0], (t as f64).sin());
            assert_eq!(e[1], (t as f64).cos());
        }
    }

    #[test]
    fn bounded_entries() {
        let e: Vec<f64> = time_embedding(999, 128).unwrap();
        assert!(e.iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn matches_scalar_reimplementation() {
        // dim 4: frequencies 1 and 10000^(-1/2) = 1e-2
        let e: Vec<f64> = time_embedding(1, 4).unwrap();
        let want = [1f64.sin(), 1f64.cos(), 0.01f64.sin(), 0.01f64.cos()];
        for (a, b) in e.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn odd_dimension_rejected() {
        assert!(matches!(time_embedding::<f32>(1, 5), Err(Error::Config(_))));
    }
}
