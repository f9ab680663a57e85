use std::io::Write;
use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::model::{image_pyramid, ArchConfig, Discriminator, Generator};
use crate::checkpoint::{Checkpoint, CheckpointKind};
use crate::contrastive::nt_xent;
use crate::data::{derive_seed, sample_triplet_batch, Dataset, TripletBatch};
use crate::error::{Error, Result};
use crate::matching::{damsm_loss, load_encoders, DamsmConfig, EncoderMode, EncoderPair, TextEmbeddingBatch};
use crate::nn::{bce_with_logits, Adam, AdamConfig, ParamStore};

pub const GAN_CSV_HEADER: &str = "step,L_D,L_G1,L_G2,L_c,L_G";

// Seed streams derived from `GanConfig::seed`.
const STREAM_GENERATOR: u64 = 20;
const STREAM_DISCRIMINATOR: u64 = 21;
const STREAM_BATCH: u64 = 22;
const STREAM_NOISE: u64 = 23;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GanConfig {
    /// Weight of the image-image contrastive term; 0 gives the baseline.
    pub lambda_c: f64,
    pub tau: f64,
    /// Weight of the DAMSM term in the generator loss.
    pub lambda_damsm: f64,
    pub damsm_in_generator: bool,
    /// Use `log(1 - D(G(z)))` instead of `-log D(G(z))` for the generator.
    pub saturating_generator: bool,
    pub batch_size: usize,
    pub steps: u64,
    pub checkpoint_every: u64,
    pub arch: ArchConfig,
    pub adam_g: AdamConfig,
    pub adam_d: AdamConfig,
    pub damsm: DamsmConfig,
    pub seed: u64,
}

impl Default for GanConfig {
    fn default() -> Self {
        Self {
            lambda_c: 0.2,
            tau: 0.5,
            lambda_damsm: 10.0,
            damsm_in_generator: true,
            saturating_generator: false,
            batch_size: 8,
            steps: 1000,
            checkpoint_every: 500,
            arch: ArchConfig::default(),
            adam_g: AdamConfig::default(),
            adam_d: AdamConfig::default(),
            damsm: DamsmConfig::default(),
            seed: 0,
        }
    }
}

impl GanConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::Config(format!("gan.tau must be > 0, got {}", self.tau)));
        }
        if !(self.lambda_c.is_finite() && self.lambda_c >= 0.0) {
            return Err(Error::Config(format!("gan.lambda_c must be >= 0, got {}", self.lambda_c)));
        }
        if !(self.lambda_damsm.is_finite() && self.lambda_damsm >= 0.0) {
            return Err(Error::Config(format!(
                "gan.lambda_damsm must be >= 0, got {}",
                self.lambda_damsm
            )));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("gan.batch_size must be at least 2".into()));
        }
        if self.checkpoint_every == 0 {
            return Err(Error::Config("gan.checkpoint_every must be positive".into()));
        }
        self.arch.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscriminatorLosses {
    pub total: f64,
    /// `(x, e)` real vs `(G(z, e), e)` fake, summed over stages.
    pub branch1: f64,
    /// The same for `e'`.
    pub branch2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorLosses {
    pub g1: f64,
    pub g2: f64,
    pub lc: f64,
    /// Unweighted DAMSM sum over both branches (0 when disabled).
    pub damsm: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GanLossRow {
    pub step: u64,
    pub l_d: f64,
    pub g: GeneratorLosses,
}

/// Differentiable pieces of one generator step.
#[derive(Debug)]
pub struct GeneratorForward {
    pub images: Vec<Tensor>,
    pub images_prime: Vec<Tensor>,
    /// Final-stage global image vectors `f(G(z, e))` and `f(G(z, e'))`.
    pub v: Tensor,
    pub v_prime: Tensor,
    pub g1: Tensor,
    pub g2: Tensor,
    pub lc: Tensor,
    pub damsm: Option<Tensor>,
    pub total: Tensor,
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

/// `n x z_dim` standard normal noise from a seed.
pub fn sample_noise(n: usize, z_dim: usize, seed: u64) -> Result<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v: Vec<f32> = (0..n * z_dim).map(|_| rng.sample::<f32, _>(StandardNormal)).collect();
    Ok(Tensor::from_vec(v, (n, z_dim), &Device::Cpu)?)
}

fn load_store(ckpt: &Checkpoint, prefix: &str, seed: u64) -> Result<(ParamStore, usize)> {
    let store = ParamStore::new(seed);
    let params = ckpt.with_prefix(prefix);
    for (name, t) in &params {
        store.insert(name, t)?;
    }
    Ok((store, params.len()))
}

fn check_complete(store: &ParamStore, loaded: usize, what: &str) -> Result<()> {
    if store.len() != loaded {
        return Err(Error::Checkpoint(format!(
            "checkpoint holds {loaded} {what} tensors, the architecture has {}",
            store.len()
        )));
    }
    Ok(())
}

fn check_encoders(encoders: &EncoderPair, config: &GanConfig) -> Result<()> {
    if encoders.mode() != EncoderMode::Eval {
        return Err(Error::Config(
            "the image/text encoders must be frozen (eval mode) during GAN training".into(),
        ));
    }
    let enc = encoders.config();
    if enc.embed_dim != config.arch.embed_dim {
        return Err(Error::Config(format!(
            "encoder embedding size {} differs from gan.arch.embed_dim {}",
            enc.embed_dim, config.arch.embed_dim
        )));
    }
    if enc.resolution != config.arch.resolution {
        return Err(Error::Config(format!(
            "encoder resolution {} differs from gan.arch.resolution {}",
            enc.resolution, config.arch.resolution
        )));
    }
    Ok(())
}

/// Trained generator plus the frozen encoders it was trained against.
#[derive(Debug)]
pub struct GanModel {
    pub generator: Generator,
    pub encoders: EncoderPair,
    pub config: GanConfig,
    pub step: u64,
}

impl GanModel {
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        ckpt.expect_kind(CheckpointKind::Gan)?;
        let config = gan_config_of(ckpt)?;
        let encoders = load_encoders(ckpt, derive_seed(config.seed, 0))?;
        let (mut store, n) = load_store(ckpt, "generator", derive_seed(config.seed, STREAM_GENERATOR))?;
        store.set_frozen(true);
        let generator = Generator::new(store.root(), &config.arch)?;
        check_complete(&store, n, "generator")?;
        Ok(Self {
            generator,
            encoders,
            config,
            step: ckpt.step,
        })
    }

    /// Final-stage images for `captions`, one noise row per caption drawn
    /// from `seed`.
    pub fn generate_for_captions(&self, captions: &[Vec<u32>], seed: u64) -> Result<Tensor> {
        generate_for_captions(&self.generator, &self.encoders, captions, seed)
    }
}

fn gan_config_of(ckpt: &Checkpoint) -> Result<GanConfig> {
    let v = ckpt
        .config
        .get("gan")
        .cloned()
        .ok_or_else(|| Error::Checkpoint("checkpoint has no gan configuration".into()))?;
    serde_json::from_value(v).map_err(|e| Error::Checkpoint(format!("bad gan configuration: {e}")))
}

const GENERATE_CHUNK: usize = 64;

pub fn generate_for_captions(
    generator: &Generator,
    encoders: &EncoderPair,
    captions: &[Vec<u32>],
    seed: u64,
) -> Result<Tensor> {
    let z_dim = generator.config().z_dim;
    let z_all = sample_noise(captions.len(), z_dim, seed)?;
    let mut out = Vec::new();
    for (k, chunk) in captions.chunks(GENERATE_CHUNK).enumerate() {
        let z = z_all.narrow(0, k * GENERATE_CHUNK, chunk.len())?;
        let e = encoders.encode_captions(chunk)?.sentence.detach();
        let images = generator.forward(&z, &e)?;
        out.push(images.last().expect("at least one stage").detach());
    }
    Ok(Tensor::cat(&out, 0)?)
}

/// Mean cosine similarity of `f(G(z, e))` and `f(G(z, e'))` over `pairs`
/// paraphrase pairs (two distinct captions of one image, shared `z`).
pub fn paraphrase_consistency(
    generator: &Generator,
    encoders: &EncoderPair,
    dataset: &Dataset,
    pairs: usize,
    seed: u64,
) -> Result<f64> {
    if pairs == 0 {
        return Err(Error::InvalidInput("need at least one caption pair".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Vec::with_capacity(pairs);
    let mut t_prime = Vec::with_capacity(pairs);
    for _ in 0..pairs {
        let item = dataset.get(rng.random_range(0..dataset.len()));
        let pick = rand::seq::index::sample(&mut rng, item.captions.len(), 2);
        t.push(item.captions[pick.index(0)].clone());
        t_prime.push(item.captions[pick.index(1)].clone());
    }
    let noise_seed = rng.random();
    let a = generate_for_captions(generator, encoders, &t, noise_seed)?;
    let b = generate_for_captions(generator, encoders, &t_prime, noise_seed)?;
    let va = encoders.encode_image(&a)?.global.to_dtype(DType::F64)?.to_vec2::<f64>()?;
    let vb = encoders.encode_image(&b)?.global.to_dtype(DType::F64)?.to_vec2::<f64>()?;
    let mut sum = 0.0;
    for (x, y) in va.iter().zip(&vb) {
        sum += crate::contrastive::cosine_similarity(x, y)?;
    }
    Ok(sum / pairs as f64)
}

/// Two-branch conditional GAN trainer with frozen encoders.
#[derive(Debug)]
pub struct GanTrainer {
    encoders: EncoderPair,
    g_store: ParamStore,
    d_store: ParamStore,
    generator: Generator,
    discriminator: Discriminator,
    opt_g: Adam,
    opt_d: Adam,
    config: GanConfig,
    step: u64,
    history: Vec<GanLossRow>,
}

impl GanTrainer {
    pub fn new(encoders: EncoderPair, config: GanConfig) -> Result<Self> {
        config.validate()?;
        check_encoders(&encoders, &config)?;
        let g_store = ParamStore::new(derive_seed(config.seed, STREAM_GENERATOR));
        let d_store = ParamStore::new(derive_seed(config.seed, STREAM_DISCRIMINATOR));
        Self::assemble(encoders, g_store, d_store, config, None)
    }

    fn assemble(
        encoders: EncoderPair,
        g_store: ParamStore,
        d_store: ParamStore,
        config: GanConfig,
        resume: Option<&Checkpoint>,
    ) -> Result<Self> {
        let generator = Generator::new(g_store.root(), &config.arch)?;
        let discriminator = Discriminator::new(d_store.root(), &config.arch)?;
        let mut opt_g = Adam::new(g_store.vars(), config.adam_g)?;
        let mut opt_d = Adam::new(d_store.vars(), config.adam_d)?;
        let mut step = 0;
        if let Some(ckpt) = resume {
            let count = |k: &str| ckpt.counters.get(k).copied().unwrap_or(0);
            opt_g.load_state("adam_g", &ckpt.tensors, count("adam_g"))?;
            opt_d.load_state("adam_d", &ckpt.tensors, count("adam_d"))?;
            step = ckpt.step;
        }
        Ok(Self {
            encoders,
            g_store,
            d_store,
            generator,
            discriminator,
            opt_g,
            opt_d,
            config,
            step,
            history: Vec::new(),
        })
    }

    /// Resumes training from a GAN checkpoint; `steps` overrides the total
    /// step count stored in it.
    pub fn from_checkpoint(ckpt: &Checkpoint, steps: Option<u64>) -> Result<Self> {
        ckpt.expect_kind(CheckpointKind::Gan)?;
        let mut config = gan_config_of(ckpt)?;
        if let Some(s) = steps {
            config.steps = s;
        }
        config.validate()?;
        let encoders = load_encoders(ckpt, derive_seed(config.seed, 0))?;
        check_encoders(&encoders, &config)?;
        let (g_store, ng) = load_store(ckpt, "generator", derive_seed(config.seed, STREAM_GENERATOR))?;
        let (d_store, nd) = load_store(ckpt, "discriminator", derive_seed(config.seed, STREAM_DISCRIMINATOR))?;
        let trainer = Self::assemble(encoders, g_store, d_store, config, Some(ckpt))?;
        check_complete(&trainer.g_store, ng, "generator")?;
        check_complete(&trainer.d_store, nd, "discriminator")?;
        Ok(trainer)
    }

    pub fn config(&self) -> &GanConfig {
        &self.config
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn history(&self) -> &[GanLossRow] {
        &self.history
    }

    pub fn encoders(&self) -> &EncoderPair {
        &self.encoders
    }

    pub fn generator(&self) -> &Generator {
        &self.generator
    }

    pub fn discriminator(&self) -> &Discriminator {
        &self.discriminator
    }

    pub fn generator_store(&self) -> &ParamStore {
        &self.g_store
    }

    pub fn discriminator_store(&self) -> &ParamStore {
        &self.d_store
    }

    /// Swaps in different encoders, e.g. to probe the freeze check.
    pub fn replace_encoders(&mut self, encoders: EncoderPair) -> EncoderPair {
        std::mem::replace(&mut self.encoders, encoders)
    }

    /// The triplet batch and noise for `(step, phase)`; phase 0 feeds the
    /// discriminator update, phase 1 the generator update.
    pub fn sample_inputs(&self, dataset: &Dataset, step: u64, phase: u64) -> Result<(TripletBatch, Tensor)> {
        let stream = step * 2 + phase;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(derive_seed(self.config.seed, STREAM_BATCH), stream));
        let batch = sample_triplet_batch(dataset, self.config.batch_size, &mut rng)?;
        let z = sample_noise(
            batch.len(),
            self.config.arch.z_dim,
            derive_seed(derive_seed(self.config.seed, STREAM_NOISE), stream),
        )?;
        Ok((batch, z))
    }

    fn encode_text(&self, batch: &TripletBatch) -> Result<(TextEmbeddingBatch, TextEmbeddingBatch)> {
        check_encoders(&self.encoders, &self.config)?;
        Ok((
            self.encoders.encode_captions(&batch.captions)?,
            self.encoders.encode_captions(&batch.captions_prime)?,
        ))
    }

    /// `(total, branch1, branch2)` discriminator loss tensors; generated
    /// images are detached so no gradient reaches `G`.
    pub fn discriminator_loss(&self, batch: &TripletBatch, z: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
        let (text, text_prime) = self.encode_text(batch)?;
        let reals = image_pyramid(&batch.images.to_dtype(DType::F32)?, &self.config.arch.stage_resolutions())?;
        let mut branches = Vec::with_capacity(2);
        for e in [&text.sentence, &text_prime.sentence] {
            let fakes = self.generator.forward(z, e)?;
            let mut loss: Option<Tensor> = None;
            for ((d, real), fake) in self.discriminator.stages().iter().zip(&reals).zip(&fakes) {
                let real_term = bce_with_logits(&d.forward(real, e)?, 1.0)?;
                let fake_term = bce_with_logits(&d.forward(&fake.detach(), e)?, 0.0)?;
                let s = (real_term + fake_term)?;
                loss = Some(match loss {
                    Some(l) => (l + s)?,
                    None => s,
                });
            }
            branches.push(loss.expect("at least one stage"));
        }
        let total = (&branches[0] + &branches[1])?;
        let b2 = branches.pop().expect("two branches");
        let b1 = branches.pop().expect("two branches");
        Ok((total, b1, b2))
    }

    /// One discriminator update; `G` and the encoders are untouched.
    pub fn discriminator_step(&mut self, batch: &TripletBatch, z: &Tensor) -> Result<DiscriminatorLosses> {
        let (total, b1, b2) = self.discriminator_loss(batch, z)?;
        let losses = DiscriminatorLosses {
            total: scalar(&total)?,
            branch1: scalar(&b1)?,
            branch2: scalar(&b2)?,
        };
        if !losses.total.is_finite() {
            return Err(Error::NonFinite(format!(
                "discriminator loss at step {}: branch1={} branch2={}",
                self.step, losses.branch1, losses.branch2
            )));
        }
        let grads = total.backward()?;
        self.opt_d.step(&grads)?;
        Ok(losses)
    }

    fn adversarial(&self, fakes: &[Tensor], e: &Tensor) -> Result<Tensor> {
        let mut loss: Option<Tensor> = None;
        for (d, fake) in self.discriminator.stages().iter().zip(fakes) {
            let logits = d.forward(fake, e)?;
            let s = if self.config.saturating_generator {
                bce_with_logits(&logits, 0.0)?.neg()?
            } else {
                bce_with_logits(&logits, 1.0)?
            };
            loss = Some(match loss {
                Some(l) => (l + s)?,
                None => s,
            });
        }
        Ok(loss.expect("at least one stage"))
    }

    pub fn generator_forward(&self, batch: &TripletBatch, z: &Tensor) -> Result<GeneratorForward> {
        let (text, text_prime) = self.encode_text(batch)?;
        let images = self.generator.forward(z, &text.sentence)?;
        let images_prime = self.generator.forward(z, &text_prime.sentence)?;
        let g1 = self.adversarial(&images, &text.sentence)?;
        let g2 = self.adversarial(&images_prime, &text_prime.sentence)?;
        let last = images.last().expect("at least one stage");
        let last_prime = images_prime.last().expect("at least one stage");
        let contrastive_on = self.config.lambda_c > 0.0;
        let damsm_on = self.config.damsm_in_generator && self.config.lambda_damsm > 0.0;
        // With the term disabled the encoder still runs (for the reported
        // L_c), but on detached images so G's graph is the baseline one.
        let (fa, fb) = if contrastive_on || damsm_on {
            (self.encoders.encode_image(last)?, self.encoders.encode_image(last_prime)?)
        } else {
            (
                self.encoders.encode_image(&last.detach())?,
                self.encoders.encode_image(&last_prime.detach())?,
            )
        };
        let (v, v_prime) = if contrastive_on {
            (fa.global.clone(), fb.global.clone())
        } else {
            (fa.global.detach(), fb.global.detach())
        };
        let lc = nt_xent(&v, &v_prime, self.config.tau)?;
        let mut total = (&g1 + &g2)?;
        if contrastive_on {
            total = (total + (&lc * self.config.lambda_c)?)?;
        }
        let damsm = if damsm_on {
            let d1 = damsm_loss(&fa, &text, &self.config.damsm)?.total()?;
            let d2 = damsm_loss(&fb, &text_prime, &self.config.damsm)?.total()?;
            let d = (d1 + d2)?;
            total = (total + (&d * self.config.lambda_damsm)?)?;
            Some(d)
        } else {
            None
        };
        Ok(GeneratorForward {
            images,
            images_prime,
            v,
            v_prime,
            g1,
            g2,
            lc,
            damsm,
            total,
        })
    }

    /// One generator update; `D` and the encoders are untouched.
    pub fn generator_step(&mut self, batch: &TripletBatch, z: &Tensor) -> Result<GeneratorLosses> {
        let fwd = self.generator_forward(batch, z)?;
        let losses = GeneratorLosses {
            g1: scalar(&fwd.g1)?,
            g2: scalar(&fwd.g2)?,
            lc: scalar(&fwd.lc)?,
            damsm: fwd.damsm.as_ref().map(scalar).transpose()?.unwrap_or(0.0),
            total: scalar(&fwd.total)?,
        };
        if !losses.total.is_finite() {
            return Err(Error::NonFinite(format!(
                "generator loss at step {}: G1={} G2={} Lc={} DAMSM={}",
                self.step, losses.g1, losses.g2, losses.lc, losses.damsm
            )));
        }
        let grads = fwd.total.backward()?;
        self.opt_g.step(&grads)?;
        Ok(losses)
    }

    /// One full iteration: a discriminator update, then a generator update
    /// on freshly sampled noise and captions.
    pub fn train_step(&mut self, dataset: &Dataset) -> Result<GanLossRow> {
        let (batch, z) = self.sample_inputs(dataset, self.step, 0)?;
        let d = self.discriminator_step(&batch, &z)?;
        let (batch, z) = self.sample_inputs(dataset, self.step, 1)?;
        let g = self.generator_step(&batch, &z)?;
        self.step += 1;
        let row = GanLossRow {
            step: self.step,
            l_d: d.total,
            g,
        };
        self.history.push(row);
        Ok(row)
    }

    pub fn check_dataset(&self, dataset: &Dataset) -> Result<()> {
        let enc = self.encoders.config();
        if dataset.vocab().len() != enc.vocab_size {
            return Err(Error::Config(format!(
                "dataset vocabulary has {} tokens, the text encoder was trained on {}",
                dataset.vocab().len(),
                enc.vocab_size
            )));
        }
        if dataset.resolution() != self.config.arch.resolution {
            return Err(Error::Config(format!(
                "dataset resolution {} differs from gan.arch.resolution {}",
                dataset.resolution(),
                self.config.arch.resolution
            )));
        }
        if dataset.len() < self.config.batch_size {
            return Err(Error::Config(format!(
                "dataset has {} images, fewer than gan.batch_size {}",
                dataset.len(),
                self.config.batch_size
            )));
        }
        Ok(())
    }

    /// Trains until `config.steps`, checkpointing into `out` at the
    /// configured cadence and after the last step.
    pub fn train(&mut self, dataset: &Dataset, out: Option<&Path>) -> Result<Vec<PathBuf>> {
        self.check_dataset(dataset)?;
        let mut written = Vec::new();
        while self.step < self.config.steps {
            self.train_step(dataset)?;
            let last = self.step == self.config.steps;
            if let Some(dir) = out {
                if last || self.step % self.config.checkpoint_every == 0 {
                    let path = dir.join(format!("gan_step{:06}.ckpt", self.step));
                    self.checkpoint()?.save(&path)?;
                    written.push(path);
                }
            }
        }
        Ok(written)
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let config = serde_json::json!({
            "encoder": self.encoders.config(),
            "gan": self.config,
        });
        let mut ckpt = Checkpoint::new(CheckpointKind::Gan, config);
        ckpt.step = self.step;
        ckpt.counters.insert("adam_g".into(), self.opt_g.step_count());
        ckpt.counters.insert("adam_d".into(), self.opt_d.step_count());
        let prefixed = |prefix: &str, store: &ParamStore| {
            store
                .tensors()
                .into_iter()
                .map(|(k, v)| (format!("{prefix}.{k}"), v))
                .collect::<Vec<_>>()
        };
        ckpt.insert_all(prefixed("generator", &self.g_store));
        ckpt.insert_all(prefixed("discriminator", &self.d_store));
        ckpt.insert_all(prefixed("encoders", self.encoders.store()));
        ckpt.insert_all(self.opt_g.state("adam_g"));
        ckpt.insert_all(self.opt_d.state("adam_d"));
        Ok(ckpt)
    }

    pub fn into_model(self) -> GanModel {
        GanModel {
            generator: self.generator,
            encoders: self.encoders,
            config: self.config,
            step: self.step,
        }
    }
}

/// Runs a full GAN training from scratch.
pub fn train_gan(
    dataset: &Dataset,
    encoders: EncoderPair,
    config: GanConfig,
    out: Option<&Path>,
) -> Result<(GanTrainer, Vec<PathBuf>)> {
    let mut trainer = GanTrainer::new(encoders, config)?;
    let written = trainer.train(dataset, out)?;
    Ok((trainer, written))
}

pub fn write_loss_csv(path: &Path, rows: &[GanLossRow]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "{GAN_CSV_HEADER}")?;
    for r in rows {
        writeln!(f, "{},{},{},{},{},{}", r.step, r.l_d, r.g.g1, r.g.g2, r.g.lc, r.g.total)?;
    }
    f.flush()?;
    Ok(())
}
