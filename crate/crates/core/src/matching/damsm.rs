//! DAMSM image-text matching loss.
//!
//! Word level: for caption `i` and image `j`, word features attend over the
//! image's region features (softmax over words, then a `gamma1`-sharpened
//! softmax over regions), each word is compared with its attended region
//! context by cosine similarity, and the word scores pool as
//! `log sum_t exp(gamma2 * cos_t)`. Sentence level: cosine similarity of the
//! global image vector and the sentence vector. Both score matrices are
//! scaled by `gamma3` and turned into batch posteriors in each retrieval
//! direction, with the matched pair on the diagonal.

use candle_core::{Tensor, D};
use serde::{Deserialize, Serialize};

use super::encoders::{ImageEmbeddingBatch, TextEmbeddingBatch};
use crate::error::{Error, Result};
use crate::nn::{cosine_matrix, diagonal_cross_entropy};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DamsmConfig {
    pub gamma1: f64,
    pub gamma2: f64,
    pub gamma3: f64,
}

impl Default for DamsmConfig {
    fn default() -> Self {
        Self {
            gamma1: 4.0,
            gamma2: 5.0,
            gamma3: 10.0,
        }
    }
}

/// The four negative log-posterior terms, each a scalar tensor.
#[derive(Debug, Clone)]
pub struct DamsmTerms {
    pub word_image_to_text: Tensor,
    pub word_text_to_image: Tensor,
    pub sentence_image_to_text: Tensor,
    pub sentence_text_to_image: Tensor,
}

impl DamsmTerms {
    pub fn total(&self) -> Result<Tensor> {
        Ok((((&self.word_image_to_text + &self.word_text_to_image)? + &self.sentence_image_to_text)?
            + &self.sentence_text_to_image)?)
    }

    pub fn values(&self) -> Result<[f64; 4]> {
        let v = |t: &Tensor| -> Result<f64> { Ok(t.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?) };
        Ok([
            v(&self.word_image_to_text)?,
            v(&self.word_text_to_image)?,
            v(&self.sentence_image_to_text)?,
            v(&self.sentence_text_to_image)?,
        ])
    }
}

/// Word-level score matrix `(captions, images)`, before `gamma3` scaling.
pub(crate) fn word_scores(img: &ImageEmbeddingBatch, txt: &TextEmbeddingBatch, cfg: &DamsmConfig) -> Result<Tensor> {
    let (b, t, _) = txt.words.dims3()?;
    let regions = &img.regions;
    // (B_cap, 1, T, d) x (1, B_img, d, R) -> (B_cap, B_img, T, R)
    let words4 = txt.words.unsqueeze(1)?;
    let scores = words4.broadcast_matmul(&regions.transpose(1, 2)?.unsqueeze(0)?)?;
    let mask = txt.mask.to_dtype(scores.dtype())?;
    let pad = ((mask.reshape((b, 1, t, 1))? - 1.0)? * 1.0e9)?;
    let over_words = candle_nn::ops::softmax(&scores.broadcast_add(&pad)?, 2)?;
    let over_regions = candle_nn::ops::softmax(&(over_words * cfg.gamma1)?, 3)?;
    // (B_cap, B_img, T, R) x (1, B_img, R, d) -> (B_cap, B_img, T, d)
    let context = over_regions.broadcast_matmul(&regions.unsqueeze(0)?)?;
    let dot = context.broadcast_mul(&words4)?.sum(D::Minus1)?;
    // Padded word rows are zero; clamping before the root keeps their
    // gradient finite.
    let wn = words4.sqr()?.sum(D::Minus1)?.clamp(1e-16, f64::MAX)?.sqrt()?;
    let cn = context.sqr()?.sum(D::Minus1)?.clamp(1e-16, f64::MAX)?.sqrt()?;
    let cos = (dot / wn.broadcast_mul(&cn)?)?;
    let pooled = ((cos * cfg.gamma2)?.exp()?.broadcast_mul(&mask.reshape((b, 1, t))?)?).sum(D::Minus1)?;
    Ok(pooled.log()?)
}

pub fn damsm_loss(img: &ImageEmbeddingBatch, txt: &TextEmbeddingBatch, cfg: &DamsmConfig) -> Result<DamsmTerms> {
    let bi = img.global.dims()[0];
    let bt = txt.sentence.dims()[0];
    if bi != bt {
        return Err(Error::Shape(format!("DAMSM batch sizes differ: {bi} images, {bt} captions")));
    }
    if bi < 2 {
        return Err(Error::InvalidInput(
            "DAMSM needs a batch of at least 2 pairs; the batch posterior is degenerate otherwise".into(),
        ));
    }
    if img.regions.dims()[2] != txt.words.dims()[2] {
        return Err(Error::Shape("image and text embedding dimensions differ".into()));
    }
    // rows: captions, cols: images
    let words = (word_scores(img, txt, cfg)? * cfg.gamma3)?;
    // rows: images, cols: captions
    let sentences = (cosine_matrix(&img.global, &txt.sentence)? * cfg.gamma3)?;
    Ok(DamsmTerms {
        word_image_to_text: diagonal_cross_entropy(&words.t()?)?,
        word_text_to_image: diagonal_cross_entropy(&words)?,
        sentence_image_to_text: diagonal_cross_entropy(&sentences)?,
        sentence_text_to_image: diagonal_cross_entropy(&sentences.t()?)?,
    })
}
