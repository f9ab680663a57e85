//! Contrastive consistency training for text-to-image GANs.
//!
//! The crate is organised the way the pipeline runs:
//!
//! * [`data`] renders a captioned synthetic dataset (or loads a real one) and
//!   samples `(x, t, t')` triplet batches, two captions per image.
//! * [`contrastive`] holds the NT-Xent loss over two paired embedding branches.
//! * [`matching`] pretrains the image/text encoders with DAMSM plus the
//!   caption-caption contrastive term.
//! * [`gan`] trains a stacked conditional generator with two Siamese caption
//!   branches and an image-image contrastive term on the final stage.
//! * [`metrics`] computes Inception Score, FID and R-precision.
//!
//! Data-parallel kernels (metrics, dataset rendering) go through [`par::Exec`],
//! which uses rayon when the `parallel` feature is on and falls back to a
//! sequential loop otherwise.

pub mod checkpoint;
pub mod contrastive;
pub mod data;
pub mod error;
pub mod gan;
pub mod matching;
pub mod metrics;
pub mod nn;
pub mod par;

pub use error::{Error, Result};
