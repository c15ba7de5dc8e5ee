//! Synthetic orographic rainfall: smooth long-tailed precipitation tilted
//! toward high terrain, on a fixed random topography.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;

use super::{
    io::save_field, DatasetManifest, Grid, ManifestEntry, PrecipField, Split, TopoField,
    DOWNSCALE_FACTOR,
};
use crate::rng::rng_from;
use crate::{Error, Result};

pub const BUMP_COUNT: usize = 4;
pub const BLUR_PASSES: usize = 3;
pub const TOPO_TILT: f64 = 0.5;
pub const FIELD_STD: f64 = 1.2;
const BUMP_HEIGHT_M: (f64, f64) = (300.0, 1500.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyntheticSpec {
    pub seed: u64,
    /// Training samples.
    pub count: usize,
    /// Evaluation samples, generated after the training ones.
    pub eval_count: usize,
    pub size: usize,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.size == 0 || !self.size.is_multiple_of(DOWNSCALE_FACTOR) {
            return Err(Error::Config(format!(
                "synthetic size {} must be a positive multiple of {DOWNSCALE_FACTOR}",
                self.size
            )));
        }
        if self.count == 0 {
            return Err(Error::Config("synthetic count must be at least 1".into()));
        }
        Ok(())
    }

    pub fn blur_radius(&self) -> usize {
        self.size / 8
    }
}

/// Sum of Gaussian bumps with random centres, widths and heights.
pub fn synthetic_topography(seed: u64, size: usize) -> TopoField {
    let mut rng = rng_from(seed, "topography");
    let n = size as f64;
    let bumps: Vec<(f64, f64, f64, f64)> = (0..BUMP_COUNT)
        .map(|_| {
            let cy = rng.random_range(0.0..n);
            let cx = rng.random_range(0.0..n);
            let sigma = rng.random_range(n / 10.0..n / 4.0);
            let height = rng.random_range(BUMP_HEIGHT_M.0..BUMP_HEIGHT_M.1);
            (cy, cx, sigma, height)
        })
        .collect();
    let mut values = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let z: f64 = bumps
                .iter()
                .map(|&(cy, cx, s, h)| {
                    let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                    h * (-d2 / (2.0 * s * s)).exp()
                })
                .sum();
            values.push(z as f32);
        }
    }
    TopoField::new(Grid::new(size, size, values).expect("square grid")).expect("finite bumps")
}

fn box_blur_rows(src: &[f64], size: usize, radius: usize, dst: &mut [f64]) {
    let window = (2 * radius + 1) as f64;
    for y in 0..size {
        let row = &src[y * size..(y + 1) * size];
        for x in 0..size {
            let s: f64 = (0..=2 * radius)
                .map(|k| row[(x + k).saturating_sub(radius).min(size - 1)])
                .sum();
            dst[y * size + x] = s / window;
        }
    }
}

fn transpose(src: &[f64], size: usize) -> Vec<f64> {
    let mut out = vec![0.0; size * size];
    for y in 0..size {
        for x in 0..size {
            out[x * size + y] = src[y * size + x];
        }
    }
    out
}

/// Separable box blur with edge replication, repeated `passes` times.
fn low_pass(mut field: Vec<f64>, size: usize, radius: usize, passes: usize) -> Vec<f64> {
    let mut tmp = vec![0.0; size * size];
    for _ in 0..passes {
        box_blur_rows(&field, size, radius, &mut tmp);
        let t = transpose(&tmp, size);
        box_blur_rows(&t, size, radius, &mut tmp);
        field = transpose(&tmp, size);
    }
    field
}

/// One precipitation sample: `max(exp(g) - 1, 0)` where `g` is blurred white
/// noise standardised to std [`FIELD_STD`] plus [`TOPO_TILT`] times the
/// normalised topography.
pub fn synthetic_precip(seed: u64, index: usize, topo: &TopoField) -> PrecipField {
    let size = topo.height();
    let mut rng = rng_from(seed, &format!("precip-{index}"));
    let noise: Vec<f64> = (0..size * size).map(|_| rng.sample(StandardNormal)).collect();
    let g = low_pass(noise, size, (size / 8).max(1), BLUR_PASSES);
    let n = g.len() as f64;
    let mean = g.iter().sum::<f64>() / n;
    let std = (g.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n)
        .sqrt()
        .max(1e-12);
    let (tm, ts) = topo.moments();
    let values = g
        .iter()
        .zip(topo.values())
        .map(|(&v, &z)| {
            let tilted = FIELD_STD * (v - mean) / std + TOPO_TILT * (f64::from(z) - tm) / ts;
            (tilted.exp() - 1.0).max(0.0) as f32
        })
        .collect();
    PrecipField::new(Grid::new(size, size, values).expect("square grid"))
        .expect("generator output is non-negative")
}

pub fn sample_id(index: usize) -> String {
    format!("s{index:05}")
}

/// Writes `topo.pfld`, `hr/<id>.pfld` for every sample and `manifest.tsv`
/// into `out_dir`; returns the manifest with paths relative to `out_dir`.
pub fn gen_synthetic_dataset(spec: SyntheticSpec, out_dir: impl AsRef<Path>) -> Result<DatasetManifest> {
    spec.validate()?;
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir.join("hr"))
        .map_err(|e| Error::io(format!("creating {}", out_dir.display()), e))?;
    let topo = synthetic_topography(spec.seed, spec.size);
    let topo_rel = PathBuf::from("topo.pfld");
    save_field(topo.grid(), out_dir.join(&topo_rel))?;
    let mut manifest = DatasetManifest {
        entries: Vec::with_capacity(spec.count + spec.eval_count),
        seed: Some(spec.seed),
    };
    for i in 0..spec.count + spec.eval_count {
        let id = sample_id(i);
        let hr_rel = PathBuf::from("hr").join(format!("{id}.pfld"));
        save_field(synthetic_precip(spec.seed, i, &topo).grid(), out_dir.join(&hr_rel))?;
        manifest.entries.push(ManifestEntry {
            id,
            split: if i < spec.count { Split::Train } else { Split::Eval },
            hr_path: hr_rel,
            topo_path: topo_rel.clone(),
        });
    }
    manifest.save(out_dir.join("manifest.tsv"))?;
    Ok(manifest)
}
