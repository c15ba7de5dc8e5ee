use super::{load_field, DatasetManifest, PrecipField, Split, TopoField};
use crate::{Error, Result};

/// Resolution ratio between high- and low-resolution grids.
pub const DOWNSCALE_FACTOR: usize = 8;

/// High-resolution field, its 8x bilinear reduction and the matching
/// high-resolution topography.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePair {
    pub id: String,
    pub hr: PrecipField,
    pub lr: PrecipField,
    pub topo: TopoField,
}

pub fn make_pair(id: impl Into<String>, hr: PrecipField, topo: TopoField) -> Result<SamplePair> {
    let (h, w) = hr.dims();
    if h % DOWNSCALE_FACTOR != 0 || w % DOWNSCALE_FACTOR != 0 {
        return Err(Error::Config(format!(
            "high-resolution dims {h}x{w} are not divisible by {DOWNSCALE_FACTOR}"
        )));
    }
    if topo.dims() != (h, w) {
        return Err(Error::Config(format!(
            "topography {}x{} does not match precipitation {h}x{w}",
            topo.height(),
            topo.width()
        )));
    }
    let lr = hr
        .resize_bilinear(h / DOWNSCALE_FACTOR, w / DOWNSCALE_FACTOR)?
        .map(|v| v.max(0.0));
    Ok(SamplePair {
        id: id.into(),
        hr,
        lr: PrecipField::new(lr)?,
        topo,
    })
}

/// Loads every pair of one split, in manifest order.
pub fn load_pairs(manifest: &DatasetManifest, split: Split) -> Result<Vec<SamplePair>> {
    let mut topo_cache: Option<(std::path::PathBuf, TopoField)> = None;
    manifest
        .split(split)
        .map(|e| {
            let topo = match &topo_cache {
                Some((p, t)) if *p == e.topo_path => t.clone(),
                _ => {
                    let t = TopoField::new(load_field(&e.topo_path)?)?;
                    topo_cache = Some((e.topo_path.clone(), t.clone()));
                    t
                }
            };
            let hr = PrecipField::new(load_field(&e.hr_path)?)?;
            make_pair(e.id.clone(), hr, topo)
        })
        .collect()
}
