use std::fmt;

use crate::grids::PrecipField;
use crate::{Error, Result};

/// Scores of one prediction/observation pair.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleMetrics {
    pub id: String,
    pub rmse: f64,
    pub corr: Option<f64>,
    pub bias: f64,
}

/// Metrics pooled over every pixel of an evaluation set, in mm/day.
/// `corr` is `None` when either side has zero variance.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub method: String,
    pub rmse: f64,
    pub corr: Option<f64>,
    pub bias: f64,
    pub n_samples: usize,
    pub per_sample: Vec<SampleMetrics>,
}

pub const RESULTS_HEADER: &str = "method,rmse,corr,bias,n";

fn fmt_corr(corr: Option<f64>) -> String {
    corr.map_or_else(|| "undefined".to_string(), |c| c.to_string())
}

impl MetricsReport {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.method,
            self.rmse,
            fmt_corr(self.corr),
            self.bias,
            self.n_samples
        )
    }

    /// Unweighted mean of the per-sample correlations that are defined.
    pub fn mean_sample_corr(&self) -> Option<f64> {
        let defined: Vec<f64> = self.per_sample.iter().filter_map(|s| s.corr).collect();
        (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<28} rmse {:>9.5}  corr {:>9}  bias {:>+10.5}  n {}",
            self.method,
            self.rmse,
            self.corr.map_or("undefined".into(), |c| format!("{c:.5}")),
            self.bias,
            self.n_samples
        )
    }
}

fn check(pred: &[PrecipField], obs: &[PrecipField]) -> Result<()> {
    if pred.len() != obs.len() {
        return Err(Error::Dimension {
            op: "metrics",
            axis: "samples",
            expected: obs.len(),
            actual: pred.len(),
        });
    }
    if pred.is_empty() {
        return Err(Error::Shape {
            op: "metrics",
            detail: "no samples".into(),
        });
    }
    for (p, o) in pred.iter().zip(obs) {
        if p.dims() != o.dims() {
            return Err(Error::Shape {
                op: "metrics",
                detail: format!("prediction {:?} vs observation {:?}", p.dims(), o.dims()),
            });
        }
    }
    Ok(())
}

fn pixels<'a>(fields: &'a [PrecipField]) -> impl Iterator<Item = f64> + Clone + 'a {
    fields
        .iter()
        .flat_map(|f| f.values().iter().map(|&v| f64::from(v)))
}

pub fn rmse(pred: &[PrecipField], obs: &[PrecipField]) -> Result<f64> {
    check(pred, obs)?;
    let (mut sum, mut n) = (0.0, 0usize);
    for (p, o) in pixels(pred).zip(pixels(obs)) {
        sum += (p - o) * (p - o);
        n += 1;
    }
    Ok((sum / n as f64).sqrt())
}

/// Mean of `pred - obs`.
pub fn bias(pred: &[PrecipField], obs: &[PrecipField]) -> Result<f64> {
    check(pred, obs)?;
    let (mut sum, mut n) = (0.0, 0usize);
    for (p, o) in pixels(pred).zip(pixels(obs)) {
        sum += p - o;
        n += 1;
    }
    Ok(sum / n as f64)
}

/// Pearson correlation over all pooled pixels; `None` for a constant side.
pub fn pearson_corr(pred: &[PrecipField], obs: &[PrecipField]) -> Result<Option<f64>> {
    check(pred, obs)?;
    let n = pixels(pred).count() as f64;
    let mp = pixels(pred).sum::<f64>() / n;
    let mo = pixels(obs).sum::<f64>() / n;
    let (mut cov, mut vp, mut vo) = (0.0, 0.0, 0.0);
    for (p, o) in pixels(pred).zip(pixels(obs)) {
        let (dp, d_o) = (p - mp, o - mo);
        cov += dp * d_o;
        vp += dp * dp;
        vo += d_o * d_o;
    }
    if vp == 0.0 || vo == 0.0 {
        return Ok(None);
    }
    Ok(Some((cov / (vp.sqrt() * vo.sqrt())).clamp(-1.0, 1.0)))
}

/// Pooled and per-sample metrics; `ids` label the pairs.
pub fn metrics_report(
    method: &str,
    ids: &[String],
    pred: &[PrecipField],
    obs: &[PrecipField],
) -> Result<MetricsReport> {
    if ids.len() != pred.len() {
        return Err(Error::Dimension {
            op: "metrics",
            axis: "ids",
            expected: pred.len(),
            actual: ids.len(),
        });
    }
    let per_sample = ids
        .iter()
        .zip(pred.iter().zip(obs))
        .map(|(id, (p, o))| {
            let (p, o) = (std::slice::from_ref(p), std::slice::from_ref(o));
            Ok(SampleMetrics {
                id: id.clone(),
                rmse: rmse(p, o)?,
                corr: pearson_corr(p, o)?,
                bias: bias(p, o)?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(MetricsReport {
        method: method.to_string(),
        rmse: rmse(pred, obs)?,
        corr: pearson_corr(pred, obs)?,
        bias: bias(pred, obs)?,
        n_samples: pred.len(),
        per_sample,
    })
}
