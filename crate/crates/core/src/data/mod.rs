//! Datasets: JSON-lines manifests, `CANT` image blobs, identity-balanced
//! PK batch sampling and a synthetic identity generator.

mod image;
mod manifest;
mod sampler;
mod synth;

pub use image::{bilinear_resize, load_image_tensor, Normalization, PIXEL_SCALE};
pub use manifest::{
    load_manifest, manifest_from_market_dir, parse_market_filename, Manifest, SampleRecord, Split,
    MANIFEST_FILE,
};
pub use sampler::PkSampler;
pub use synth::{generate_synthetic, SynthConfig};
