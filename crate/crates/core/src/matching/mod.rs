//! Image/text encoders, the DAMSM matching loss and contrastive caption
//! pretraining.

mod damsm;
mod encoders;
mod pretrain;

pub use damsm::{damsm_loss, DamsmConfig, DamsmTerms};
pub use encoders::{
    EncoderConfig, EncoderMode, EncoderPair, ImageEmbeddingBatch, ImageEncoder, TextEmbeddingBatch,
    TextEncoder, TokenBatch,
};
pub use pretrain::{
    caption_similarity, load_encoders, pretrain, write_history_csv, CaptionSimilarity, EpochLosses, PretrainConfig, PretrainLosses, PretrainForward, PretrainOutcome, Pretrainer, PRETRAIN_CSV_HEADER,
};
