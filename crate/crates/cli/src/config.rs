//! Run configuration, read from TOML.
//!
//! ```toml
//! seed = 0
//! out_dir = "runs/default"
//!
//! [data]          # dataset directory and synthetic generator
//! [matching]      # encoder pretraining
//! [gan]           # GAN training
//! [metrics]       # evaluation and the metrics classifier
//! ```
//!
//! Every section is optional and falls back to its defaults. The global
//! `seed` overrides the `seed` fields of all sections.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use t2i_core::data::SyntheticSpec;
use t2i_core::gan::GanConfig;
use t2i_core::matching::PretrainConfig;
use t2i_core::metrics::{ClassifierConfig, EvalConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Dataset directory; `<out_dir>/data` when unset.
    pub dir: Option<PathBuf>,
    /// Images of the synthetic set held out as the `test` split.
    pub test_images: usize,
    pub synthetic: SyntheticSpec,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            dir: None,
            test_images: 100,
            synthetic: SyntheticSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct GanSection {
    /// Pretrained encoder checkpoint; the newest one under
    /// `<out_dir>/pretrain` when unset.
    pub encoder_checkpoint: Option<PathBuf>,
    #[serde(flatten)]
    pub train: GanConfig,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricsSection {
    /// Classifier checkpoint; `<out_dir>/classifier/classifier.ckpt` when unset.
    pub classifier_checkpoint: Option<PathBuf>,
    #[serde(flatten)]
    pub eval: EvalConfig,
    pub classifier: ClassifierConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub data: DataSection,
    pub matching: PretrainConfig,
    pub gan: GanSection,
    pub metrics: MetricsSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("runs/default"),
            data: DataSection::default(),
            matching: PretrainConfig::default(),
            gan: GanSection::default(),
            metrics: MetricsSection::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))
    }

    pub fn to_toml(&self) -> anyhow::Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    /// Pushes the global seed into every section.
    pub fn apply_seed(&mut self) {
        let s = self.seed;
        self.data.synthetic.seed = s;
        self.matching.seed = s;
        self.gan.train.seed = s;
        self.metrics.eval.seed = s;
        self.metrics.eval.r_precision.seed = s;
        self.metrics.classifier.seed = s;
    }

    /// Domain checks on every hyperparameter; runs before any compute.
    pub fn validate(&self) -> anyhow::Result<()> {
        self.data.synthetic.validate()?;
        if self.data.test_images == 0 || self.data.test_images >= self.data.synthetic.n_images {
            bail!(
                "data.test_images must be between 1 and data.synthetic.n_images - 1, got {}",
                self.data.test_images
            );
        }
        self.matching.validate()?;
        self.gan.train.validate()?;
        self.metrics.eval.validate()?;
        if self.metrics.classifier.epochs == 0 || self.metrics.classifier.batch_size == 0 {
            bail!("metrics.classifier.epochs and batch_size must be positive");
        }
        for (name, path) in [
            ("gan.encoder_checkpoint", &self.gan.encoder_checkpoint),
            ("metrics.classifier_checkpoint", &self.metrics.classifier_checkpoint),
        ] {
            if let Some(p) = path {
                if !p.exists() {
                    bail!("{name}: {} does not exist", p.display());
                }
            }
        }
        Ok(())
    }

    pub fn data_dir(&self) -> PathBuf {
        self.data.dir.clone().unwrap_or_else(|| self.out_dir.join("data"))
    }

    pub fn classifier_path(&self) -> PathBuf {
        self.metrics
            .classifier_checkpoint
            .clone()
            .unwrap_or_else(|| self.out_dir.join("classifier").join("classifier.ckpt"))
    }
}
