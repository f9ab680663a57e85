use std::path::Path;

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use super::classifier::Classifier;
use super::fid::{fid_with, FeatureSource};
use super::inception::inception_score_with;
use super::rprecision::{r_precision, RPrecisionConfig};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::gan::GanModel;
use crate::matching::EncoderPair;
use crate::par::Exec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Generated images per evaluation.
    pub samples: usize,
    pub is_splits: usize,
    pub r_precision: RPrecisionConfig,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            samples: 2000,
            is_splits: 10,
            r_precision: RPrecisionConfig::default(),
            seed: 0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples < 2 {
            return Err(Error::Config("metrics.samples must be at least 2".into()));
        }
        if self.is_splits == 0 {
            return Err(Error::Config("metrics.is_splits must be positive".into()));
        }
        if self.r_precision.pool_size < 2 || self.r_precision.repeats == 0 {
            return Err(Error::Config(
                "metrics.r_precision needs pool_size >= 2 and repeats >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub checkpoint_id: String,
    pub is_mean: f64,
    pub is_std: f64,
    pub fid: f64,
    pub rp_mean: f64,
    pub rp_std: f64,
    pub sample_count: usize,
    pub seed: u64,
}

impl MetricsReport {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Index of the report with the lowest FID (first on ties).
pub fn best_by_fid(reports: &[MetricsReport]) -> Option<usize> {
    reports
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.fid.total_cmp(&b.1.fid))
        .map(|(i, _)| i)
}

/// `n` conditioning captions cycling through the test set: image `k % len`,
/// its caption number `(k / len) % captions`.
pub fn evaluation_captions(test: &Dataset, n: usize) -> Vec<(usize, Vec<u32>)> {
    (0..n)
        .map(|k| {
            let i = k % test.len();
            let caps = &test.get(i).captions;
            (i, caps[(k / test.len()) % caps.len()].clone())
        })
        .collect()
}

/// IS, FID against the real test images and R-precision of `images`
/// conditioned on `captions`.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_images(
    images: &Tensor,
    captions: &[Vec<u32>],
    test: &Dataset,
    classifier: &Classifier,
    encoders: &EncoderPair,
    config: &EvalConfig,
    checkpoint_id: &str,
    exec: Exec,
) -> Result<MetricsReport> {
    config.validate()?;
    let m = images.dims()[0];
    let all: Vec<usize> = (0..test.len()).collect();
    let real = classifier.features(&test.image_tensor(&all)?, FeatureSource::Real)?;
    let fake = classifier.features(images, FeatureSource::Generated)?;
    let probs = classifier.probabilities(images)?;
    let (is_mean, is_std) = inception_score_with(&probs, config.is_splits.min(m), exec)?;
    let fid = fid_with(&real, &fake, exec)?;
    let bank: Vec<Vec<u32>> = test.items().iter().flat_map(|it| it.captions.iter().cloned()).collect();
    let (rp_mean, rp_std) = r_precision(images, captions, &bank, encoders, &config.r_precision, exec)?;
    Ok(MetricsReport {
        checkpoint_id: checkpoint_id.to_string(),
        is_mean,
        is_std,
        fid,
        rp_mean,
        rp_std,
        sample_count: m,
        seed: config.seed,
    })
}

/// Generates `config.samples` images from test captions and scores them.
pub fn evaluate_model(
    model: &GanModel,
    test: &Dataset,
    classifier: &Classifier,
    config: &EvalConfig,
    checkpoint_id: &str,
    exec: Exec,
) -> Result<MetricsReport> {
    config.validate()?;
    let captions: Vec<Vec<u32>> = evaluation_captions(test, config.samples).into_iter().map(|(_, c)| c).collect();
    let images = model.generate_for_captions(&captions, config.seed)?;
    evaluate_images(&images, &captions, test, classifier, &model.encoders, config, checkpoint_id, exec)
}

/// Scores each real test image once, conditioned on its first caption, as
/// if generated (a sanity baseline: FID near zero).
pub fn evaluate_real_as_fake(
    test: &Dataset,
    classifier: &Classifier,
    encoders: &EncoderPair,
    config: &EvalConfig,
    exec: Exec,
) -> Result<MetricsReport> {
    let idx: Vec<usize> = (0..test.len()).collect();
    let captions: Vec<Vec<u32>> = test.items().iter().map(|it| it.captions[0].clone()).collect();
    let images = test.image_tensor(&idx)?;
    evaluate_images(&images, &captions, test, classifier, encoders, config, "real-as-fake", exec)
}
