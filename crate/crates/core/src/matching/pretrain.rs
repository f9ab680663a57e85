//! Contrastive image-text matching pretraining.
//!
//! Each step encodes a triplet batch `(x, t, t')` and minimises
//! `L = DAMSM(f(x), g(t)) + DAMSM(f(x), g(t')) + NT-Xent(g(t), g(t'))`
//! over both encoders, the contrastive term taken on sentence vectors.

use std::io::Write;
use std::path::{Path, PathBuf};

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use super::damsm::{damsm_loss, DamsmConfig};
use super::encoders::{EncoderConfig, EncoderMode, EncoderPair, ImageEmbeddingBatch, TextEmbeddingBatch};
use crate::checkpoint::{Checkpoint, CheckpointKind};
use crate::contrastive::nt_xent;
use crate::data::{derive_seed, Dataset, TripletBatch, TripletSampler};
use crate::error::{Error, Result};
use crate::nn::{Adam, AdamConfig, ParamStore};

pub const PRETRAIN_CSV_HEADER: &str = "epoch,L1,L2,Lc";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub tau: f64,
    pub adam: AdamConfig,
    pub damsm: DamsmConfig,
    pub encoder: EncoderConfig,
    pub seed: u64,
    /// Write a checkpoint every this many epochs (and after the last one).
    pub checkpoint_every: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 16,
            tau: 0.5,
            adam: AdamConfig {
                lr: 1e-3,
                ..AdamConfig::default()
            },
            damsm: DamsmConfig::default(),
            encoder: EncoderConfig::default(),
            seed: 0,
            checkpoint_every: 50,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::Config(format!("matching.tau must be > 0, got {}", self.tau)));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("matching.batch_size must be at least 2".into()));
        }
        if self.checkpoint_every == 0 {
            return Err(Error::Config("matching.checkpoint_every must be positive".into()));
        }
        if !(self.adam.lr > 0.0) {
            return Err(Error::Config("matching.adam.lr must be positive".into()));
        }
        Ok(())
    }
}

/// Losses of one step (or epoch means).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PretrainLosses {
    pub l1: f64,
    pub l2: f64,
    pub lc: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLosses {
    pub epoch: u64,
    pub l1: f64,
    pub l2: f64,
    pub lc: f64,
}

/// Everything one forward pass produces.
#[derive(Debug)]
pub struct PretrainForward {
    pub image: ImageEmbeddingBatch,
    pub text: TextEmbeddingBatch,
    pub text_prime: TextEmbeddingBatch,
    pub l1: Tensor,
    pub l2: Tensor,
    pub lc: Tensor,
    pub total: Tensor,
}

impl PretrainForward {
    pub fn losses(&self) -> Result<PretrainLosses> {
        let v = |t: &Tensor| -> Result<f64> { Ok(t.to_scalar::<f32>()? as f64) };
        Ok(PretrainLosses {
            l1: v(&self.l1)?,
            l2: v(&self.l2)?,
            lc: v(&self.lc)?,
            total: v(&self.total)?,
        })
    }
}

#[derive(Debug)]
pub struct Pretrainer {
    encoders: EncoderPair,
    optimizer: Adam,
    config: PretrainConfig,
    epochs_done: u64,
    steps: u64,
    history: Vec<EpochLosses>,
}

impl Pretrainer {
    pub fn new(config: PretrainConfig) -> Result<Self> {
        config.validate()?;
        let encoders = EncoderPair::new(config.encoder.clone(), derive_seed(config.seed, 0))?;
        let optimizer = Adam::new(encoders.store().vars(), config.adam)?;
        Ok(Self {
            encoders,
            optimizer,
            config,
            epochs_done: 0,
            steps: 0,
            history: Vec::new(),
        })
    }

    /// Resumes from an encoder checkpoint. `config` supplies the schedule
    /// (total epochs, cadence); the architecture comes from the checkpoint.
    pub fn from_checkpoint(ckpt: &Checkpoint, mut config: PretrainConfig) -> Result<Self> {
        ckpt.expect_kind(CheckpointKind::Encoders)?;
        let saved: PretrainConfig = serde_json::from_value(ckpt.config.clone())
            .map_err(|e| Error::Checkpoint(format!("bad config snapshot: {e}")))?;
        config.encoder = saved.encoder;
        config.validate()?;
        let encoders = load_encoders(ckpt, derive_seed(config.seed, 0))?.set_mode(EncoderMode::Train)?;
        let mut optimizer = Adam::new(encoders.store().vars(), config.adam)?;
        let adam_steps = ckpt.counters.get("adam").copied().unwrap_or(0);
        optimizer.load_state("adam", &ckpt.tensors, adam_steps)?;
        Ok(Self {
            encoders,
            optimizer,
            config,
            epochs_done: ckpt.epoch,
            steps: ckpt.step,
            history: Vec::new(),
        })
    }

    pub fn encoders(&self) -> &EncoderPair {
        &self.encoders
    }

    pub fn config(&self) -> &PretrainConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn epochs_done(&self) -> u64 {
        self.epochs_done
    }

    pub fn history(&self) -> &[EpochLosses] {
        &self.history
    }

    pub fn into_encoders(self) -> Result<EncoderPair> {
        self.encoders.set_mode(EncoderMode::Eval)
    }

    pub fn forward(&self, batch: &TripletBatch) -> Result<PretrainForward> {
        let image = self.encoders.encode_image(&batch.images)?;
        let text = self.encoders.encode_captions(&batch.captions)?;
        let text_prime = self.encoders.encode_captions(&batch.captions_prime)?;
        let l1 = damsm_loss(&image, &text, &self.config.damsm)?.total()?;
        let l2 = damsm_loss(&image, &text_prime, &self.config.damsm)?.total()?;
        let lc = nt_xent(&text.sentence, &text_prime.sentence, self.config.tau)?;
        let total = ((&l1 + &l2)? + &lc)?;
        Ok(PretrainForward {
            image,
            text,
            text_prime,
            l1,
            l2,
            lc,
            total,
        })
    }

    /// One optimizer step on `f` and `g`.
    pub fn step(&mut self, batch: &TripletBatch) -> Result<PretrainLosses> {
        let fwd = self.forward(batch)?;
        let losses = fwd.losses()?;
        if !losses.total.is_finite() {
            return Err(Error::NonFinite(format!(
                "pretraining loss at step {}: L1={} L2={} Lc={}",
                self.steps, losses.l1, losses.l2, losses.lc
            )));
        }
        let grads = fwd.total.backward()?;
        self.optimizer.step(&grads)?;
        self.steps += 1;
        Ok(losses)
    }

    /// One pass over `dataset`; returns the epoch's mean losses.
    pub fn run_epoch(&mut self, dataset: &Dataset) -> Result<EpochLosses> {
        let mut sampler =
            TripletSampler::new(dataset.len(), self.config.batch_size, derive_seed(self.config.seed, 1))?;
        sampler.start_epoch(self.epochs_done);
        let (mut l1, mut l2, mut lc, mut n) = (0.0, 0.0, 0.0, 0usize);
        while let Some(batch) = sampler.next_in_epoch(dataset)? {
            let s = self.step(&batch)?;
            l1 += s.l1;
            l2 += s.l2;
            lc += s.lc;
            n += 1;
        }
        self.epochs_done += 1;
        let n = n.max(1) as f64;
        let row = EpochLosses {
            epoch: self.epochs_done,
            l1: l1 / n,
            l2: l2 / n,
            lc: lc / n,
        };
        self.history.push(row);
        Ok(row)
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let mut ckpt = Checkpoint::new(CheckpointKind::Encoders, serde_json::to_value(&self.config)?);
        ckpt.step = self.steps;
        ckpt.epoch = self.epochs_done;
        ckpt.counters.insert("adam".into(), self.optimizer.step_count());
        ckpt.insert_all(
            self.encoders
                .store()
                .tensors()
                .into_iter()
                .map(|(k, v)| (format!("encoders.{k}"), v)),
        );
        ckpt.insert_all(self.optimizer.state("adam"));
        Ok(ckpt)
    }

    /// Runs until `config.epochs` epochs are done, checkpointing into `out`
    /// at the configured cadence and after the final epoch.
    pub fn train(&mut self, dataset: &Dataset, out: Option<&Path>) -> Result<Vec<PathBuf>> {
        check_dataset(dataset, &self.config.encoder)?;
        let mut written = Vec::new();
        while (self.epochs_done as usize) < self.config.epochs {
            self.run_epoch(dataset)?;
            let last = self.epochs_done as usize == self.config.epochs;
            if let Some(dir) = out {
                if last || self.epochs_done as usize % self.config.checkpoint_every == 0 {
                    let path = dir.join(format!("encoders_epoch{:04}.ckpt", self.epochs_done));
                    self.checkpoint()?.save(&path)?;
                    written.push(path);
                }
            }
        }
        Ok(written)
    }
}

fn check_dataset(dataset: &Dataset, enc: &EncoderConfig) -> Result<()> {
    if dataset.vocab().len() != enc.vocab_size {
        return Err(Error::Config(format!(
            "dataset vocabulary has {} tokens, encoder expects {}",
            dataset.vocab().len(),
            enc.vocab_size
        )));
    }
    if dataset.resolution() != enc.resolution {
        return Err(Error::Config(format!(
            "dataset resolution {} differs from encoder resolution {}",
            dataset.resolution(),
            enc.resolution
        )));
    }
    Ok(())
}

/// Restores encoders stored under `encoders.` in an encoder or GAN
/// checkpoint; the pair is returned in eval mode.
pub fn load_encoders(ckpt: &Checkpoint, seed: u64) -> Result<EncoderPair> {
    let cfg: EncoderConfig = serde_json::from_value(
        ckpt.config
            .get("encoder")
            .cloned()
            .ok_or_else(|| Error::Checkpoint("checkpoint has no encoder configuration".into()))?,
    )
    .map_err(|e| Error::Checkpoint(format!("bad encoder configuration: {e}")))?;
    let store = ParamStore::new(seed);
    let params = ckpt.with_prefix("encoders");
    for (name, t) in &params {
        store.insert(name, t)?;
    }
    let pair = EncoderPair::from_store(store, cfg)?;
    if pair.store().len() != params.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint holds {} encoder tensors, the architecture has {}",
            params.len(),
            pair.store().len()
        )));
    }
    pair.set_mode(EncoderMode::Eval)
}

#[derive(Debug)]
pub struct PretrainOutcome {
    /// Trained encoders in eval mode.
    pub encoders: EncoderPair,
    pub history: Vec<EpochLosses>,
    pub checkpoints: Vec<PathBuf>,
}

/// Full pretraining run from scratch. The encoder vocabulary size and
/// resolution are taken from the dataset when left at zero.
pub fn pretrain(dataset: &Dataset, mut config: PretrainConfig, out: Option<&Path>) -> Result<PretrainOutcome> {
    if config.encoder.vocab_size == 0 {
        config.encoder.vocab_size = dataset.vocab().len();
    }
    if dataset.items().iter().any(|i| i.captions.len() < 2) {
        return Err(Error::InvalidInput("every image needs at least 2 captions".into()));
    }
    let mut trainer = Pretrainer::new(config)?;
    let checkpoints = trainer.train(dataset, out)?;
    let history = trainer.history().to_vec();
    Ok(PretrainOutcome {
        encoders: trainer.into_encoders()?,
        history,
        checkpoints,
    })
}

/// Mean cosine similarity of sentence embeddings over caption pairs of the
/// same image (`intra`) and of different images (`inter`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CaptionSimilarity {
    pub intra: f64,
    pub inter: f64,
}

impl CaptionSimilarity {
    pub fn gap(&self) -> f64 {
        self.intra - self.inter
    }
}

pub fn caption_similarity(encoders: &EncoderPair, dataset: &Dataset) -> Result<CaptionSimilarity> {
    let mut owner = Vec::new();
    let mut captions = Vec::new();
    for (i, item) in dataset.items().iter().enumerate() {
        for c in &item.captions {
            owner.push(i);
            captions.push(c.clone());
        }
    }
    let mut unit = Vec::with_capacity(captions.len());
    for chunk in captions.chunks(128) {
        let s = encoders.encode_captions(chunk)?.sentence.to_dtype(candle_core::DType::F64)?;
        for row in s.to_vec2::<f64>()? {
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !(n > 0.0) {
                return Err(Error::ZeroNorm { row: unit.len(), branch: "caption" });
            }
            unit.push(row.into_iter().map(|v| v / n).collect::<Vec<_>>());
        }
    }
    let (mut intra, mut n_intra, mut inter, mut n_inter) = (0.0, 0usize, 0.0, 0usize);
    for a in 0..unit.len() {
        for b in a + 1..unit.len() {
            let c: f64 = unit[a].iter().zip(&unit[b]).map(|(x, y)| x * y).sum();
            if owner[a] == owner[b] {
                intra += c;
                n_intra += 1;
            } else {
                inter += c;
                n_inter += 1;
            }
        }
    }
    if n_intra == 0 || n_inter == 0 {
        return Err(Error::InvalidInput("need two images with at least two captions each".into()));
    }
    Ok(CaptionSimilarity {
        intra: intra / n_intra as f64,
        inter: inter / n_inter as f64,
    })
}

pub fn write_history_csv(path: &Path, rows: &[EpochLosses]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "{PRETRAIN_CSV_HEADER}")?;
    for r in rows {
        writeln!(f, "{},{},{},{}", r.epoch, r.l1, r.l2, r.lc)?;
    }
    f.flush()?;
    Ok(())
}
