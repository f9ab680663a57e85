use candle_core::{DType, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::derive_seed;
use crate::error::{Error, Result};
use crate::matching::{EncoderMode, EncoderPair};
use crate::par::Exec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RPrecisionConfig {
    /// Candidates per query, the true caption included.
    pub pool_size: usize,
    pub repeats: usize,
    pub seed: u64,
}

impl Default for RPrecisionConfig {
    fn default() -> Self {
        Self {
            pool_size: 100,
            repeats: 5,
            seed: 0,
        }
    }
}

/// Retrieval candidates for one image, as indices into a caption bank.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaptionPool {
    pub true_index: usize,
    pub mismatches: Vec<usize>,
}

/// One pool per query: the true caption plus `pool_size - 1` distinct bank
/// entries other than it, drawn from `seed`. The bank must not contain
/// duplicate captions.
pub fn build_pools(true_indices: &[usize], bank_len: usize, pool_size: usize, seed: u64) -> Result<Vec<CaptionPool>> {
    if pool_size < 2 {
        return Err(Error::InvalidInput("R-precision pool size must be at least 2".into()));
    }
    if bank_len < pool_size {
        return Err(Error::InvalidInput(format!(
            "caption bank has {bank_len} distinct captions, a pool needs {pool_size}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    true_indices
        .iter()
        .map(|&t| {
            if t >= bank_len {
                return Err(Error::InvalidInput(format!("caption index {t} outside the bank")));
            }
            // Sample from the bank with `t` removed.
            let mismatches = rand::seq::index::sample(&mut rng, bank_len - 1, pool_size - 1)
                .into_iter()
                .map(|k| if k >= t { k + 1 } else { k })
                .collect();
            Ok(CaptionPool {
                true_index: t,
                mismatches,
            })
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalized(rows: &[Vec<f64>], what: &str) -> Result<Vec<Vec<f64>>> {
    rows.iter()
        .enumerate()
        .map(|(i, r)| {
            let n = dot(r, r).sqrt();
            if !(n > 0.0 && n.is_finite()) {
                return Err(Error::InvalidInput(format!("{what} vector {i} has zero or non-finite norm")));
            }
            Ok(r.iter().map(|v| v / n).collect())
        })
        .collect()
}

/// Fraction of queries whose true caption strictly outscores every mismatch
/// by cosine similarity.
pub fn r_precision_embeddings(
    images: &[Vec<f64>],
    bank: &[Vec<f64>],
    pools: &[CaptionPool],
    exec: Exec,
) -> Result<f64> {
    if images.len() != pools.len() || images.is_empty() {
        return Err(Error::InvalidInput(format!(
            "{} image vectors for {} pools",
            images.len(),
            pools.len()
        )));
    }
    for (i, p) in pools.iter().enumerate() {
        if p.mismatches.contains(&p.true_index) {
            return Err(Error::InvalidInput(format!(
                "pool {i} contains a duplicate of its true caption"
            )));
        }
        if p.true_index >= bank.len() || p.mismatches.iter().any(|&k| k >= bank.len()) {
            return Err(Error::InvalidInput(format!("pool {i} refers outside the caption bank")));
        }
    }
    let images = normalized(images, "image")?;
    let bank = normalized(bank, "caption")?;
    let hits = exec.map_range(images.len(), |i| {
        let p = &pools[i];
        let truth = dot(&images[i], &bank[p.true_index]);
        p.mismatches.iter().all(|&k| dot(&images[i], &bank[k]) < truth)
    });
    Ok(hits.iter().filter(|&&h| h).count() as f64 / images.len() as f64)
}

/// R-precision in percent (mean and population std over `repeats` pool
/// draws) of `images` against their `true_captions`. Mismatched candidates
/// come from the distinct captions of `true_captions` and `caption_bank`.
pub fn r_precision(
    images: &Tensor,
    true_captions: &[Vec<u32>],
    caption_bank: &[Vec<u32>],
    encoders: &EncoderPair,
    config: &RPrecisionConfig,
    exec: Exec,
) -> Result<(f64, f64)> {
    if encoders.mode() != EncoderMode::Eval {
        return Err(Error::Config("R-precision needs the encoders in eval mode".into()));
    }
    if images.dims()[0] != true_captions.len() {
        return Err(Error::Shape(format!(
            "{} images for {} captions",
            images.dims()[0],
            true_captions.len()
        )));
    }
    if config.repeats == 0 {
        return Err(Error::InvalidInput("R-precision needs at least one repeat".into()));
    }
    let mut bank: Vec<Vec<u32>> = true_captions.iter().chain(caption_bank).cloned().collect();
    bank.sort();
    bank.dedup();
    let true_indices: Vec<usize> = true_captions
        .iter()
        .map(|c| bank.binary_search(c).expect("caption is in the bank"))
        .collect();
    let image_vecs = embed_images(images, encoders)?;
    let bank_vecs = embed_captions(&bank, encoders)?;
    let mut scores = Vec::with_capacity(config.repeats);
    for r in 0..config.repeats {
        let pools = build_pools(&true_indices, bank.len(), config.pool_size, derive_seed(config.seed, r as u64))?;
        scores.push(100.0 * r_precision_embeddings(&image_vecs, &bank_vecs, &pools, exec)?);
    }
    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / scores.len() as f64;
    Ok((mean, var.sqrt()))
}

const EMBED_CHUNK: usize = 128;

pub(crate) fn embed_images(images: &Tensor, encoders: &EncoderPair) -> Result<Vec<Vec<f64>>> {
    let n = images.dims()[0];
    let mut out = Vec::with_capacity(n);
    for s in (0..n).step_by(EMBED_CHUNK) {
        let chunk = images.narrow(0, s, EMBED_CHUNK.min(n - s))?;
        out.extend(encoders.encode_image(&chunk)?.global.to_dtype(DType::F64)?.to_vec2::<f64>()?);
    }
    Ok(out)
}

pub(crate) fn embed_captions(captions: &[Vec<u32>], encoders: &EncoderPair) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(captions.len());
    for chunk in captions.chunks(EMBED_CHUNK) {
        out.extend(encoders.encode_captions(chunk)?.sentence.to_dtype(DType::F64)?.to_vec2::<f64>()?);
    }
    Ok(out)
}

/// Random unit vectors, for chance-level checks.
pub fn random_unit_vectors(n: usize, d: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            let v: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal)).collect();
            let norm = dot(&v, &v).sqrt();
            v.into_iter().map(|x| x / norm).collect()
        })
        .collect()
}
