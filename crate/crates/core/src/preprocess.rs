//! Gamma correction of precipitation and the reversible mapping into the
//! model's `[-1, 1]` working range.

use crate::grids::{Grid, PrecipField};
use crate::{Error, Result};

pub const DEFAULT_GAMMA: f64 = 0.15;

/// Exponent plus the training-split maximum of the gamma-corrected values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormStats {
    pub gamma: f64,
    pub vmax_gamma: f64,
}

impl NormStats {
    pub fn new(gamma: f64, vmax_gamma: f64) -> Result<Self> {
        check_gamma(gamma)?;
        if !(vmax_gamma > 0.0 && vmax_gamma.is_finite()) {
            return Err(Error::Config(format!(
                "vmax_gamma must be positive and finite, got {vmax_gamma}"
            )));
        }
        Ok(NormStats { gamma, vmax_gamma })
    }

    /// Physical value that maps to the top of the model range.
    pub fn vmax(&self) -> f64 {
        self.vmax_gamma.powf(1.0 / self.gamma)
    }

    /// Physical field straight to model range.
    pub fn encode(&self, field: &Grid) -> Result<Grid> {
        Ok(to_model_range(&gamma_correct(field, self.gamma)?, self))
    }

    pub fn decode(&self, u: &Grid) -> PrecipField {
        from_model_range(u, self)
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::Config(format!("gamma must lie in (0, 1], got {gamma}")));
    }
    Ok(())
}

/// Elementwise `a^gamma`.
pub fn gamma_correct(field: &Grid, gamma: f64) -> Result<Grid> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::Domain(format!("gamma must be positive, got {gamma}")));
    }
    if let Some(v) = field.values().iter().find(|v| !(**v >= 0.0)) {
        return Err(Error::Domain(format!(
            "gamma correction needs non-negative input, found {v}"
        )));
    }
    Ok(field.map(|a| f64::from(a).powf(gamma) as f32))
}

/// `u = 2 * a_hat / vmax_gamma - 1`, clamped to `[-1, 1]`.
pub fn to_model_range(corrected: &Grid, stats: &NormStats) -> Grid {
    corrected.map(|a| (2.0 * f64::from(a) / stats.vmax_gamma - 1.0).clamp(-1.0, 1.0) as f32)
}

/// Inverse of [`to_model_range`] followed by inverse gamma; out-of-range
/// inputs are clamped first.
pub fn from_model_range(u: &Grid, stats: &NormStats) -> PrecipField {
    let inv = 1.0 / stats.gamma;
    let g = u.map(|v| {
        let v = if v.is_nan() { -1.0 } else { f64::from(v).clamp(-1.0, 1.0) };
        ((v + 1.0) * 0.5 * stats.vmax_gamma).powf(inv) as f32
    });
    PrecipField::new(g).expect("inverse mapping is non-negative")
}

/// Fits `vmax_gamma` as the maximum corrected value over all fields.
pub fn fit_stats<'a>(
    fields: impl IntoIterator<Item = &'a PrecipField>,
    gamma: f64,
) -> Result<NormStats> {
    check_gamma(gamma)?;
    let max = fields
        .into_iter()
        .flat_map(|f| f.values().iter().copied())
        .fold(0.0f32, f32::max);
    if max <= 0.0 {
        return Err(Error::Config(
            "cannot fit normalisation: training split has no positive precipitation".into(),
        ));
    }
    NormStats::new(gamma, f64::from(max).powf(gamma))
}
