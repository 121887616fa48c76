//! Domain types, file formats, manifests and seeded RNG shared by every module.

pub mod manifest;
pub mod png_io;
pub mod provenance;
pub mod raster;
pub mod tensor;

pub use manifest::{load_manifest, write_manifest, DatasetManifest, Domain, ManifestEntry};
pub use png_io::{
    read_disparity, read_disparity_with_scale, read_image, read_segmap, sidecar_path,
    write_disparity, write_image, write_segmap, DEFAULT_DISPARITY_SCALE,
};
pub use provenance::{seeded_rng, Provenance, SeededRng, TOOL_VERSION};
pub use raster::{
    DisparityMap, FeatureEmbedding, ImageRaster, ParameterVector, ProbMap, SegMap,
    DEFAULT_IGNORE_INDEX,
};
pub use tensor::{read_tensor, write_tensor, Tensor};

use std::path::Path;

use crate::error::{Error, Result};

/// Reads an H x W confidence map stored as a rank-2 `DFT1` tensor.
pub fn read_prob_map(path: impl AsRef<Path>) -> Result<ProbMap> {
    let path = path.as_ref();
    let t = read_tensor(path)?;
    match *t.dims() {
        [h, w] => ProbMap::new(w, h, t.to_f64()).map_err(|e| Error::format(path, e.to_string())),
        _ => Err(Error::format(path, format!("expected rank-2 (H, W) tensor, got {:?}", t.dims()))),
    }
}

pub fn write_prob_map(map: &ProbMap, path: impl AsRef<Path>) -> Result<()> {
    write_tensor(&Tensor::from_f64(vec![map.height(), map.width()], map.data())?, path)
}
