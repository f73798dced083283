//! Synthetic pseudo X-ray scenes: translucent colored shapes composited by
//! multiplying transmittances over a white background, with tight boxes and
//! per-instance occlusion fractions.

pub mod dataset;
pub mod error;
pub mod ppm;
pub mod scene;

pub use dataset::{read_manifest, write_dataset, DatasetConfig, Manifest, ManifestEntry, Split};
pub use error::{Error, Result};
pub use ppm::{read_ppm, read_ppm_dims, write_ppm, RgbImage};
pub use scene::{generate_scene, Instance, MaterialClass, Scene, SceneSpec, ShapeKind};
