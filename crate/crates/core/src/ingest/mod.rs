//! Loading labeled image corpora: CheXpert-style manifests, a seeded synthetic
//! generator that emits the same schema, preprocessing, and splits.

mod manifest;
mod preprocess;
mod record;
mod split;
mod synthetic;

pub use manifest::{load_manifest, read_manifest, write_manifest, ManifestEntry, UncertainPolicy};
pub use preprocess::{
    preprocess_image, preprocess_pixels, tensor_to_png, ChannelNorm, CropMode, PreprocessConfig,
};
pub use record::{ImageRecord, ImageStore, Label, PixelTensor};
pub use split::{split_dataset, split_id};
pub use synthetic::{generate_synthetic_dataset, marker_center, write_synthetic_dataset, SyntheticSpec};
