//! Procedural two-domain toy corpus: shared scene layouts, divergent textures.

mod dataset;
mod loader;
mod raster;
mod scene;
mod texture;

pub use dataset::{class_names, record_seed, write_dataset, DatasetManifest, DatasetParams, Record, MANIFEST_FILE, MANIFEST_VERSION};
pub use loader::{LoadMode, LoadedBatch, Loader, LoaderOptions, LoaderState};
pub use raster::{rasters_to_tensor, tensor_to_rasters, Raster};
pub use scene::{generate_scene, GenConfig, Shape, ShapeKind, SceneObject, SceneSpec, MIN_CANVAS};
pub use texture::{render, FillRule, Modulation, TextureProfile};
