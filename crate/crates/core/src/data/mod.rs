//! Captioned image datasets and the `(x, t, t')` triplet sampler.

mod dataset;
mod manifest;
mod sampler;
pub mod synthetic;
mod vocab;

pub use dataset::{CaptionedImage, Dataset, Image};
pub use manifest::{load_caption_dataset, save_dataset, LoadOptions, Manifest, ManifestEntry, MANIFEST_FORMAT, MANIFEST_VERSION};
pub use sampler::{sample_triplet_batch, TripletBatch, TripletSampler};
pub use synthetic::{generate_synthetic_dataset, SyntheticSpec};
pub use vocab::{normalize_caption, Vocabulary, PAD_TOKEN};

/// SplitMix64 finaliser; derives independent stream seeds from a base seed.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
