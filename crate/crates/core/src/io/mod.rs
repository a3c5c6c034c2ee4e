//! On-disk formats: model manifest + tensor blob, JSON-lines inputs, SVG heatmaps.

pub mod heatmap;
pub mod inputs;
pub mod manifest;

pub use heatmap::{render_svg, HeatmapSpec};
pub use inputs::{load_inputs, parse_inputs, InputRecord};
pub use manifest::{load_model, read_manifest, save_model, LoadedModel, ModelManifest, TensorEntry, TokenizerMeta};
