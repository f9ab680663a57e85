use candle_core::{DType, Module, Tensor, D};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::fid::{FeatureSet, FeatureSource};
use super::inception::ClassProbabilities;
use crate::checkpoint::{Checkpoint, CheckpointKind};
use crate::data::{derive_seed, Dataset};
use crate::error::{Error, Result};
use crate::nn::{leaky_relu, Adam, AdamConfig, Conv2d, Linear, ParamStore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    /// Channels of three stride-2 convolutions.
    pub channels: [usize; 3],
    pub feature_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            channels: [16, 32, 64],
            feature_dim: 64,
            epochs: 8,
            batch_size: 32,
            adam: AdamConfig {
                lr: 1e-3,
                beta1: 0.9,
                ..AdamConfig::default()
            },
            seed: 0,
        }
    }
}

const INFER_CHUNK: usize = 128;

/// Small CNN over the dataset's class labels; its penultimate activations
/// are the FID features and its softmax the IS class posterior.
#[derive(Debug)]
pub struct Classifier {
    store: ParamStore,
    convs: Vec<Conv2d>,
    fc: Linear,
    head: Linear,
    num_classes: usize,
    resolution: usize,
    config: ClassifierConfig,
}

impl Classifier {
    pub fn new(config: ClassifierConfig, num_classes: usize, resolution: usize) -> Result<Self> {
        Self::on_store(ParamStore::new(derive_seed(config.seed, 30)), config, num_classes, resolution)
    }

    fn on_store(store: ParamStore, config: ClassifierConfig, num_classes: usize, resolution: usize) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::Config("the classifier needs at least 2 classes".into()));
        }
        if resolution < 8 {
            return Err(Error::Config("classifier resolution must be at least 8".into()));
        }
        let root = store.root();
        let mut convs = Vec::with_capacity(3);
        let mut in_ch = 3;
        for (k, &out) in config.channels.iter().enumerate() {
            convs.push(Conv2d::new(root.pp(&format!("conv{k}")), in_ch, out, 3, 2, 1)?);
            in_ch = out;
        }
        let fc = Linear::new(root.pp("fc"), in_ch, config.feature_dim)?;
        let head = Linear::new(root.pp("head"), config.feature_dim, num_classes)?;
        Ok(Self {
            store,
            convs,
            fc,
            head,
            num_classes,
            resolution,
            config,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn config(&self) -> &ClassifierConfig {
        &self.config
    }

    /// `(logits, features)` for a `(B, 3, H, W)` batch.
    pub fn forward(&self, images: &Tensor) -> Result<(Tensor, Tensor)> {
        let d = images.dims();
        if d.len() != 4 || d[1] != 3 || d[2] != self.resolution || d[3] != self.resolution {
            return Err(Error::Shape(format!(
                "classifier expects (B, 3, {r}, {r}), got {d:?}",
                r = self.resolution
            )));
        }
        let mut h = images.to_dtype(DType::F32)?;
        for conv in &self.convs {
            h = leaky_relu(&conv.forward(&h)?)?;
        }
        let pooled = h.mean(D::Minus1)?.mean(D::Minus1)?;
        let features = leaky_relu(&self.fc.forward(&pooled)?)?;
        let logits = self.head.forward(&features)?;
        Ok((logits, features))
    }

    fn chunked<T>(&self, images: &Tensor, mut f: impl FnMut(Tensor, Tensor) -> Result<T>) -> Result<Vec<T>> {
        let n = images.dims()[0];
        let mut out = Vec::new();
        for s in (0..n).step_by(INFER_CHUNK) {
            let (logits, feats) = self.forward(&images.narrow(0, s, INFER_CHUNK.min(n - s))?)?;
            out.push(f(logits.detach(), feats.detach())?);
        }
        Ok(out)
    }

    pub fn features(&self, images: &Tensor, source: FeatureSource) -> Result<FeatureSet> {
        let parts = self.chunked(images, |_, f| Ok(f.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?))?;
        let values: Vec<f64> = parts.into_iter().flatten().collect();
        FeatureSet::from_flat(values, images.dims()[0], self.config.feature_dim, source)
    }

    pub fn probabilities(&self, images: &Tensor) -> Result<ClassProbabilities> {
        let parts = self.chunked(images, |l, _| {
            Ok(candle_nn::ops::softmax(&l.to_dtype(DType::F64)?, D::Minus1)?.to_vec2::<f64>()?)
        })?;
        let rows: Vec<Vec<f64>> = parts
            .into_iter()
            .flatten()
            .map(|r| {
                let s: f64 = r.iter().sum();
                r.into_iter().map(|p| p / s).collect()
            })
            .collect();
        ClassProbabilities::new(&rows)
    }

    pub fn accuracy(&self, dataset: &Dataset) -> Result<f64> {
        let idx: Vec<usize> = (0..dataset.len()).collect();
        let images = dataset.image_tensor(&idx)?;
        let preds = self.chunked(&images, |l, _| Ok(l.argmax(D::Minus1)?.to_vec1::<u32>()?))?;
        let correct = preds
            .into_iter()
            .flatten()
            .zip(dataset.items())
            .filter(|(p, item)| *p == item.label)
            .count();
        Ok(correct as f64 / dataset.len().max(1) as f64)
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let config = serde_json::json!({
            "classifier": self.config,
            "num_classes": self.num_classes,
            "resolution": self.resolution,
        });
        let mut ckpt = Checkpoint::new(CheckpointKind::Classifier, config);
        ckpt.epoch = self.config.epochs as u64;
        ckpt.insert_all(
            self.store
                .tensors()
                .into_iter()
                .map(|(k, v)| (format!("classifier.{k}"), v)),
        );
        Ok(ckpt)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        ckpt.expect_kind(CheckpointKind::Classifier)?;
        let field = |k: &str| {
            ckpt.config
                .get(k)
                .cloned()
                .ok_or_else(|| Error::Checkpoint(format!("classifier checkpoint lacks {k}")))
        };
        let bad = |e: serde_json::Error| Error::Checkpoint(format!("bad classifier configuration: {e}"));
        let config: ClassifierConfig = serde_json::from_value(field("classifier")?).map_err(bad)?;
        let num_classes: usize = serde_json::from_value(field("num_classes")?).map_err(bad)?;
        let resolution: usize = serde_json::from_value(field("resolution")?).map_err(bad)?;
        let mut store = ParamStore::new(0);
        let params = ckpt.with_prefix("classifier");
        for (name, t) in &params {
            store.insert(name, t)?;
        }
        store.set_frozen(true);
        let c = Self::on_store(store, config, num_classes, resolution)?;
        if c.store.len() != params.len() {
            return Err(Error::Checkpoint("classifier checkpoint does not match its architecture".into()));
        }
        Ok(c)
    }
}

/// Trains the classifier on `dataset` labels; returns it with per-epoch mean
/// cross-entropy.
pub fn train_classifier(dataset: &Dataset, config: ClassifierConfig) -> Result<(Classifier, Vec<f64>)> {
    let mut clf = Classifier::new(config.clone(), dataset.num_classes(), dataset.resolution())?;
    let mut opt = Adam::new(clf.store.vars(), config.adam)?;
    let batch = config.batch_size.clamp(1, dataset.len());
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(derive_seed(config.seed, 31), epoch as u64));
        order.sort_unstable();
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
        let (mut sum, mut n) = (0.0, 0);
        for idx in order.chunks(batch) {
            let images = dataset.image_tensor(idx)?;
            let labels: Vec<u32> = idx.iter().map(|&i| dataset.get(i).label).collect();
            let labels = Tensor::from_vec(labels, idx.len(), images.device())?;
            let (logits, _) = clf.forward(&images)?;
            let loss = candle_nn::loss::cross_entropy(&logits, &labels)?;
            let v = loss.to_scalar::<f32>()? as f64;
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("classifier loss in epoch {epoch}")));
            }
            opt.step(&loss.backward()?)?;
            sum += v;
            n += 1;
        }
        history.push(sum / n.max(1) as f64);
    }
    clf.store.set_frozen(true);
    let frozen = Classifier::on_store(clf.store, clf.config, clf.num_classes, clf.resolution)?;
    Ok((frozen, history))
}
