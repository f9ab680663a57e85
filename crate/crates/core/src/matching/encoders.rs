use candle_core::{DType, Device, Module, Tensor, D};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{leaky_relu, Conv2d, Embedding, Linear, Lstm, ParamStore, Params};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    /// Shared image/text embedding dimension; must be even (two LSTM halves).
    pub embed_dim: usize,
    pub word_dim: usize,
    pub vocab_size: usize,
    pub resolution: usize,
    /// Channels of the four convolution blocks; the first three halve the
    /// resolution, the last keeps it.
    pub channels: [usize; 4],
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            embed_dim: 32,
            word_dim: 32,
            vocab_size: 0,
            resolution: 32,
            channels: [16, 32, 64, 64],
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.embed_dim % 2 != 0 {
            return Err(Error::Config(format!(
                "encoder.embed_dim must be a positive even number, got {}",
                self.embed_dim
            )));
        }
        if self.vocab_size < 2 {
            return Err(Error::Config("encoder.vocab_size must be at least 2".into()));
        }
        if self.resolution < 8 || self.resolution % 8 != 0 {
            return Err(Error::Config(format!(
                "encoder.resolution must be a positive multiple of 8, got {}",
                self.resolution
            )));
        }
        Ok(())
    }

    pub fn regions(&self) -> usize {
        (self.resolution / 8) * (self.resolution / 8)
    }
}

/// Global vectors `(B, d)` and sub-region features `(B, R, d)`.
#[derive(Debug, Clone)]
pub struct ImageEmbeddingBatch {
    pub global: Tensor,
    pub regions: Tensor,
}

/// Sentence vectors `(B, d)`, word features `(B, T, d)` and the `(B, T)` mask.
#[derive(Debug, Clone)]
pub struct TextEmbeddingBatch {
    pub sentence: Tensor,
    pub words: Tensor,
    pub mask: Tensor,
    pub lengths: Vec<usize>,
}

/// Padded token ids `(B, T)` with a `(B, T)` validity mask.
#[derive(Debug, Clone)]
pub struct TokenBatch {
    pub ids: Tensor,
    pub mask: Tensor,
    pub lengths: Vec<usize>,
}

impl TokenBatch {
    /// Pads to the longest caption.
    pub fn new(captions: &[Vec<u32>], vocab_size: usize) -> Result<Self> {
        let len = captions.iter().map(Vec::len).max().unwrap_or(0);
        Self::padded(captions, len, vocab_size)
    }

    /// Pads to `len` (at least the longest caption).
    pub fn padded(captions: &[Vec<u32>], len: usize, vocab_size: usize) -> Result<Self> {
        if captions.is_empty() {
            return Err(Error::InvalidInput("empty caption batch".into()));
        }
        let longest = captions.iter().map(Vec::len).max().unwrap_or(0);
        if longest > len {
            return Err(Error::InvalidInput(format!("caption of length {longest} exceeds padding length {len}")));
        }
        let mut ids = Vec::with_capacity(captions.len() * len);
        let mut mask = Vec::with_capacity(captions.len() * len);
        for c in captions {
            if c.is_empty() {
                return Err(Error::InvalidInput("empty caption".into()));
            }
            if let Some(&id) = c.iter().find(|&&id| id as usize >= vocab_size) {
                return Err(Error::OutOfVocabulary { id, size: vocab_size });
            }
            ids.extend(c.iter().copied().chain(std::iter::repeat_n(0, len - c.len())));
            mask.extend((0..len).map(|t| if t < c.len() { 1.0f32 } else { 0.0 }));
        }
        let b = captions.len();
        Ok(Self {
            ids: Tensor::from_vec(ids, (b, len), &Device::Cpu)?,
            mask: Tensor::from_vec(mask, (b, len), &Device::Cpu)?,
            lengths: captions.iter().map(Vec::len).collect(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct ImageEncoder {
    convs: Vec<Conv2d>,
    region: Linear,
    global: Linear,
    resolution: usize,
}

impl ImageEncoder {
    pub fn new(p: Params, cfg: &EncoderConfig) -> Result<Self> {
        let mut convs = Vec::with_capacity(4);
        let mut in_ch = 3;
        for (k, &out) in cfg.channels.iter().enumerate() {
            let stride = if k < 3 { 2 } else { 1 };
            convs.push(Conv2d::new(p.pp(&format!("conv{k}")), in_ch, out, 3, stride, 1)?);
            in_ch = out;
        }
        Ok(Self {
            convs,
            region: Linear::new(p.pp("region"), in_ch, cfg.embed_dim)?,
            global: Linear::new(p.pp("global"), in_ch, cfg.embed_dim)?,
            resolution: cfg.resolution,
        })
    }

    pub fn forward(&self, images: &Tensor) -> Result<ImageEmbeddingBatch> {
        let dims = images.dims();
        if dims.len() != 4 || dims[1] != 3 || dims[2] != self.resolution || dims[3] != self.resolution {
            return Err(Error::Shape(format!(
                "image encoder expects (B, 3, {r}, {r}), got {dims:?}",
                r = self.resolution
            )));
        }
        let mut h = images.clone();
        for conv in &self.convs {
            h = leaky_relu(&conv.forward(&h)?)?;
        }
        let (b, c, hh, ww) = h.dims4()?;
        let cells = h.reshape((b, c, hh * ww))?.transpose(1, 2)?;
        let regions = self.region.forward(&cells)?;
        let pooled = cells.mean(1)?;
        let global = self.global.forward(&pooled)?;
        Ok(ImageEmbeddingBatch { global, regions })
    }
}

#[derive(Debug, Clone)]
pub struct TextEncoder {
    embed: Embedding,
    forward_rnn: Lstm,
    backward_rnn: Lstm,
}

impl TextEncoder {
    pub fn new(p: Params, cfg: &EncoderConfig) -> Result<Self> {
        let half = cfg.embed_dim / 2;
        Ok(Self {
            embed: Embedding::new(p.pp("embed"), cfg.vocab_size, cfg.word_dim)?,
            forward_rnn: Lstm::new(p.pp("lstm_fwd"), cfg.word_dim, half)?,
            backward_rnn: Lstm::new(p.pp("lstm_bwd"), cfg.word_dim, half)?,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.embed.vocab_size()
    }

    pub fn forward(&self, tokens: &TokenBatch) -> Result<TextEmbeddingBatch> {
        let x = self.embed.forward(&tokens.ids)?;
        let (fwd, h_fwd) = self.forward_rnn.run(&x, &tokens.mask, false)?;
        let (bwd, h_bwd) = self.backward_rnn.run(&x, &tokens.mask, true)?;
        Ok(TextEmbeddingBatch {
            sentence: Tensor::cat(&[h_fwd, h_bwd], D::Minus1)?,
            words: Tensor::cat(&[fwd, bwd], D::Minus1)?,
            mask: tokens.mask.clone(),
            lengths: tokens.lengths.clone(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncoderMode {
    Train,
    /// Parameters are detached from autograd and never updated.
    Eval,
}

/// Image encoder `f` and text encoder `g`, one shared `g` for both caption
/// branches.
#[derive(Debug)]
pub struct EncoderPair {
    store: ParamStore,
    image: ImageEncoder,
    text: TextEncoder,
    config: EncoderConfig,
}

impl EncoderPair {
    pub fn new(config: EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        Self::from_store(ParamStore::new(seed), config)
    }

    /// Builds the encoders over an existing store (e.g. one restored from a
    /// checkpoint); missing parameters are initialised from the store's seed.
    pub fn from_store(store: ParamStore, config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        let root = store.root();
        let image = ImageEncoder::new(root.pp("image_encoder"), &config)?;
        let text = TextEncoder::new(root.pp("text_encoder"), &config)?;
        Ok(Self {
            store,
            image,
            text,
            config,
        })
    }

    /// Independent copy with the same weights and mode.
    pub fn duplicate(&self) -> Result<Self> {
        let store = ParamStore::new(0);
        for (name, t) in self.store.tensors() {
            store.insert(&name, &t.copy()?)?;
        }
        Self::from_store(store, self.config.clone())?.set_mode(self.mode())
    }

    pub fn mode(&self) -> EncoderMode {
        if self.store.is_frozen() {
            EncoderMode::Eval
        } else {
            EncoderMode::Train
        }
    }

    pub fn set_mode(self, mode: EncoderMode) -> Result<Self> {
        let mut store = self.store;
        store.set_frozen(mode == EncoderMode::Eval);
        Self::from_store(store, self.config)
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn image_encoder(&self) -> &ImageEncoder {
        &self.image
    }

    pub fn text_encoder(&self) -> &TextEncoder {
        &self.text
    }

    pub fn encode_image(&self, images: &Tensor) -> Result<ImageEmbeddingBatch> {
        self.image.forward(&images.to_dtype(DType::F32)?)
    }

    pub fn encode_text(&self, tokens: &TokenBatch) -> Result<TextEmbeddingBatch> {
        self.text.forward(tokens)
    }

    pub fn encode_captions(&self, captions: &[Vec<u32>]) -> Result<TextEmbeddingBatch> {
        self.encode_text(&TokenBatch::new(captions, self.config.vocab_size)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair() -> EncoderPair {
        EncoderPair::new(
            EncoderConfig {
                vocab_size: 12,
                ..Default::default()
            },
            4,
        )
        .unwrap()
        .set_mode(EncoderMode::Eval)
        .unwrap()
    }

    fn images(b: usize, seed: f32) -> Tensor {
        let n = b * 3 * 32 * 32;
        let v: Vec<f32> = (0..n).map(|i| (i as f32 * 0.37 + seed).sin()).collect();
        Tensor::from_vec(v, (b, 3, 32, 32), &Device::Cpu).unwrap()
    }

    #[test]
    fn zero_image_with_zero_projection_gives_bias() {
        let enc = pair();
        let w = enc.store().tensors().into_iter().find(|(n, _)| n == "image_encoder.global.weight").unwrap().1;
        enc.store().insert("image_encoder.global.weight", &w.zeros_like().unwrap()).unwrap();
        let bias = enc.store().tensors().into_iter().find(|(n, _)| n == "image_encoder.global.bias").unwrap().1;
        let out = enc.encode_image(&Tensor::zeros((2, 3, 32, 32), DType::F32, &Device::Cpu).unwrap()).unwrap();
        let g = out.global.to_vec2::<f32>().unwrap();
        assert_eq!(g[0], bias.to_vec1::<f32>().unwrap());
        assert_eq!(g[1], g[0]);
    }

    #[test]
    fn image_encoding_is_deterministic_and_order_preserving() {
        let enc = pair();
        let x = images(3, 0.0);
        let a = enc.encode_image(&x).unwrap();
        let b = enc.encode_image(&x).unwrap();
        assert_eq!(a.global.to_vec2::<f32>().unwrap(), b.global.to_vec2::<f32>().unwrap());
        assert_eq!(a.global.dims(), &[3, 32]);
        assert_eq!(a.regions.dims(), &[3, 16, 32]);
        let single = enc.encode_image(&x.narrow(0, 2, 1).unwrap()).unwrap();
        let last = a.global.get(2).unwrap().to_vec1::<f32>().unwrap();
        let one = single.global.get(0).unwrap().to_vec1::<f32>().unwrap();
        for (p, q) in last.iter().zip(&one) {
            assert!((p - q).abs() < 1e-5);
        }
    }

    #[test]
    fn wrong_resolution_is_rejected() {
        let enc = pair();
        let x = Tensor::zeros((1, 3, 16, 16), DType::F32, &Device::Cpu).unwrap();
        assert!(matches!(enc.encode_image(&x), Err(Error::Shape(_))));
    }

    #[test]
    fn padding_does_not_change_sentence_vectors() {
        let enc = pair();
        let caps = vec![vec![3, 4, 5], vec![6, 7]];
        let tight = enc.encode_text(&TokenBatch::new(&caps, 12).unwrap()).unwrap();
        let loose = enc.encode_text(&TokenBatch::padded(&caps, 6, 12).unwrap()).unwrap();
        assert_eq!(tight.sentence.to_vec2::<f32>().unwrap(), loose.sentence.to_vec2::<f32>().unwrap());
        assert_eq!(loose.words.dims(), &[2, 6, 32]);
    }

    #[test]
    fn identical_and_permuted_captions() {
        let enc = pair();
        let caps = vec![vec![3, 4, 5], vec![3, 4, 5], vec![9, 1]];
        let out = enc.encode_captions(&caps).unwrap().sentence.to_vec2::<f32>().unwrap();
        assert_eq!(out[0], out[1]);
        let perm = vec![caps[2].clone(), caps[0].clone(), caps[1].clone()];
        let p = enc.encode_captions(&perm).unwrap().sentence.to_vec2::<f32>().unwrap();
        assert_eq!(p[0], out[2]);
        assert_eq!(p[1], out[0]);
    }

    #[test]
    fn out_of_vocabulary_is_rejected() {
        assert!(matches!(
            TokenBatch::new(&[vec![1, 12]], 12),
            Err(Error::OutOfVocabulary { id: 12, size: 12 })
        ));
    }
}
