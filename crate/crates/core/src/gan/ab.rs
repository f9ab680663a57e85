//! Seeds-matched comparison of a contrastive run against a `lambda_c = 0`
//! baseline.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::train::{paraphrase_consistency, GanConfig, GanLossRow, GanTrainer};
use crate::data::{derive_seed, Dataset};
use crate::error::{Error, Result};
use crate::matching::EncoderPair;

const STREAM_PAIRS: u64 = 40;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AbConfig {
    /// Contrastive weight of the treatment run; the baseline uses 0.
    pub lambda_c: f64,
    /// Paraphrase pairs drawn for the consistency score.
    pub pairs: usize,
    /// Leading generator steps averaged for the initial `L_c`.
    pub initial_window: usize,
    /// Trailing generator steps averaged for the final `L_c`.
    pub final_window: usize,
}

impl Default for AbConfig {
    fn default() -> Self {
        Self {
            lambda_c: 0.2,
            pairs: 200,
            initial_window: 10,
            final_window: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbArm {
    pub lambda_c: f64,
    pub lc_initial: f64,
    pub lc_final: f64,
    /// `1 - lc_final / lc_initial`.
    pub lc_drop: f64,
    /// Mean cosine of `f(G(z, e))` and `f(G(z, e'))` after training.
    pub consistency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbReport {
    pub steps: u64,
    pub tau: f64,
    pub seed: u64,
    pub pairs: usize,
    pub contrastive: AbArm,
    pub baseline: AbArm,
}

impl AbReport {
    pub fn consistency_gain(&self) -> f64 {
        self.contrastive.consistency - self.baseline.consistency
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }
}

/// Mean `L_c` of the first `initial` and last `last` rows and the relative
/// drop between them.
pub fn lc_drop(history: &[GanLossRow], initial: usize, last: usize) -> Result<(f64, f64, f64)> {
    if history.is_empty() || initial == 0 || last == 0 {
        return Err(Error::InvalidInput("L_c drop needs a non-empty history and windows".into()));
    }
    let mean = |rows: &[GanLossRow]| rows.iter().map(|r| r.g.lc).sum::<f64>() / rows.len() as f64;
    let first = mean(&history[..initial.min(history.len())]);
    let end = mean(&history[history.len() - last.min(history.len())..]);
    Ok((first, end, 1.0 - end / first))
}

/// Trained arm: its trainer, summary and written checkpoints.
#[derive(Debug)]
pub struct AbRun {
    pub trainer: GanTrainer,
    pub arm: AbArm,
    pub checkpoints: Vec<PathBuf>,
}

fn run_arm(
    train: &Dataset,
    probe: &Dataset,
    encoders: EncoderPair,
    config: GanConfig,
    ab: &AbConfig,
    out: Option<&Path>,
) -> Result<AbRun> {
    let lambda_c = config.lambda_c;
    let seed = config.seed;
    let mut trainer = GanTrainer::new(encoders, config)?;
    let checkpoints = trainer.train(train, out)?;
    let (lc_initial, lc_final, lc_drop) = lc_drop(trainer.history(), ab.initial_window, ab.final_window)?;
    let consistency = paraphrase_consistency(
        trainer.generator(),
        trainer.encoders(),
        probe,
        ab.pairs,
        derive_seed(seed, STREAM_PAIRS),
    )?;
    Ok(AbRun {
        trainer,
        arm: AbArm {
            lambda_c,
            lc_initial,
            lc_final,
            lc_drop,
            consistency,
        },
        checkpoints,
    })
}

/// Trains `config` with `ab.lambda_c` and with `lambda_c = 0` from the same
/// seed and encoders, then scores paraphrase consistency on `probe`.
/// `out` receives one checkpoint directory per arm.
pub fn run_ab(
    train: &Dataset,
    probe: &Dataset,
    encoders: &EncoderPair,
    config: &GanConfig,
    ab: &AbConfig,
    out: Option<(&Path, &Path)>,
) -> Result<(AbReport, AbRun, AbRun)> {
    if !(ab.lambda_c > 0.0) {
        return Err(Error::Config("ab.lambda_c must be positive".into()));
    }
    if ab.pairs == 0 {
        return Err(Error::Config("ab.pairs must be positive".into()));
    }
    let treated = run_arm(
        train,
        probe,
        encoders.duplicate()?,
        GanConfig {
            lambda_c: ab.lambda_c,
            ..config.clone()
        },
        ab,
        out.map(|o| o.0),
    )?;
    let baseline = run_arm(
        train,
        probe,
        encoders.duplicate()?,
        GanConfig {
            lambda_c: 0.0,
            ..config.clone()
        },
        ab,
        out.map(|o| o.1),
    )?;
    let report = AbReport {
        steps: config.steps,
        tau: config.tau,
        seed: config.seed,
        pairs: ab.pairs,
        contrastive: treated.arm.clone(),
        baseline: baseline.arm.clone(),
    };
    Ok((report, treated, baseline))
}
