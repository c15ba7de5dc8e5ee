//! Precipitation and topography grids, their file formats, 8x training
//! pairs and the synthetic orographic-rainfall generator.

mod field;
mod io;
mod manifest;
mod pair;
mod synthetic;

pub use field::{Grid, PrecipField, TopoField};
pub use io::{export_pgm, load_field, pgm_bytes, save_field, FIELD_MAGIC, FIELD_VERSION};
pub use manifest::{DatasetManifest, ManifestEntry, Split};
pub use pair::{load_pairs, make_pair, SamplePair, DOWNSCALE_FACTOR};
pub use synthetic::{
    gen_synthetic_dataset, synthetic_precip, synthetic_topography, SyntheticSpec,
    BLUR_PASSES, BUMP_COUNT, FIELD_STD, TOPO_TILT,
};
