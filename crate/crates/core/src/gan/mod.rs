//! Stacked conditional GAN with two Siamese caption branches and an
//! image-image contrastive term on the final stage.
//!
//! Every iteration samples a triplet batch `(x, t, t')`, updates the
//! per-stage discriminators on real/fake pairs of both branches, then
//! samples a fresh batch and updates the generator with
//! `L_G = L_G1 + L_G2 + lambda_c * NT-Xent(f(G(z, e)), f(G(z, e')))`
//! plus an optional weighted DAMSM term. The encoders `f` and `g` stay
//! frozen throughout.

mod ab;
mod model;
mod train;

pub use ab::{lc_drop, run_ab, AbArm, AbConfig, AbReport, AbRun};
pub use model::{image_pyramid, ArchConfig, Discriminator, Generator, StageDiscriminator};
pub use train::{
    generate_for_captions, paraphrase_consistency, sample_noise, train_gan, write_loss_csv, DiscriminatorLosses,
    GanConfig, GanLossRow, GanModel, GanTrainer, GeneratorForward, GeneratorLosses, GAN_CSV_HEADER,
};
