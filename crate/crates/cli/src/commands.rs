use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use t2i_core::checkpoint::Checkpoint;
use t2i_core::data::{generate_synthetic_dataset, load_caption_dataset, save_dataset, Dataset, LoadOptions};
use t2i_core::gan::{run_ab, write_loss_csv, AbConfig, GanModel, GanTrainer};
use t2i_core::matching::{load_encoders, write_history_csv, EncoderPair, Pretrainer};
use t2i_core::metrics::{
    best_by_fid, evaluate_model, evaluate_real_as_fake, Classifier, MetricsReport,
};
use t2i_core::par::Exec;

use crate::config::RunConfig;
use crate::{CmdResult, Failure, RuntimeExt, ValidationExt};

fn invalid(msg: String) -> Failure {
    Failure::Validation(anyhow!(msg))
}

fn create_dir(dir: &Path) -> CmdResult<()> {
    fs::create_dir_all(dir)
        .with_context(|| format!("cannot create {}", dir.display()))
        .runtime()
}

fn load_split(cfg: &RunConfig, split: &str) -> CmdResult<Dataset> {
    let dir = cfg.data_dir();
    if !dir.join("manifest.json").exists() {
        return Err(invalid(format!(
            "no dataset at {}; run `t2i make-data` first",
            dir.display()
        )));
    }
    let options = LoadOptions {
        split: Some(split.to_string()),
        ..LoadOptions::default()
    };
    load_caption_dataset(&dir, &options).invalid()
}

fn load_checkpoint(path: &Path) -> CmdResult<Checkpoint> {
    Checkpoint::load(path)
        .with_context(|| format!("cannot load checkpoint {}", path.display()))
        .invalid()
}

/// Checkpoint files in `dir` whose names start with `prefix`, sorted by name.
fn checkpoints_in(dir: &Path, prefix: &str) -> CmdResult<Vec<PathBuf>> {
    let mut found: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("cannot list {}", dir.display()))
        .invalid()?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().is_some_and(|x| x == "ckpt")
                && p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with(prefix))
        })
        .collect();
    found.sort();
    Ok(found)
}

/// Keeps the header and the rows of `path` whose first field is at most
/// `upto`, then appends the data rows of `fresh`.
fn merge_csv(path: &Path, upto: u64, fresh: &Path) -> CmdResult<()> {
    let old = fs::read_to_string(path).unwrap_or_default();
    let new = fs::read_to_string(fresh).runtime()?;
    let mut lines = new.lines();
    let header = lines.next().unwrap_or_default();
    let mut out = format!("{header}\n");
    for line in old.lines().skip(1) {
        let keep = line
            .split(',')
            .next()
            .and_then(|f| f.parse::<u64>().ok())
            .is_some_and(|v| v <= upto);
        if keep {
            out.push_str(line);
            out.push('\n');
        }
    }
    for line in lines {
        out.push_str(line);
        out.push('\n');
    }
    fs::write(path, out).runtime()?;
    fs::remove_file(fresh).runtime()
}

pub fn make_data(cfg: &RunConfig) -> CmdResult<()> {
    let spec = &cfg.data.synthetic;
    let all = generate_synthetic_dataset(spec).runtime()?;
    let cut = spec.n_images - cfg.data.test_images;
    let train = all.subset(&(0..cut).collect::<Vec<_>>()).runtime()?;
    let test = all.subset(&(cut..spec.n_images).collect::<Vec<_>>()).runtime()?;
    let dir = cfg.data_dir();
    create_dir(&dir)?;
    save_dataset(&dir, &[("train", &train), ("test", &test)]).runtime()?;
    println!(
        "wrote {} train and {} test images ({} classes, vocabulary {}) to {}",
        train.len(),
        test.len(),
        all.num_classes(),
        all.vocab().len(),
        dir.display()
    );
    Ok(())
}

pub fn pretrain(cfg: &RunConfig, resume: Option<&Path>) -> CmdResult<()> {
    let train = load_split(cfg, "train")?;
    let dir = cfg.out_dir.join("pretrain");
    let mut trainer = match resume {
        Some(path) => Pretrainer::from_checkpoint(&load_checkpoint(path)?, cfg.matching.clone()).invalid()?,
        None => {
            let mut mc = cfg.matching.clone();
            if mc.encoder.vocab_size == 0 {
                mc.encoder.vocab_size = train.vocab().len();
            }
            Pretrainer::new(mc).invalid()?
        }
    };
    let start = trainer.epochs_done();
    create_dir(&dir)?;
    let written = trainer.train(&train, Some(&dir)).runtime()?;
    let csv = dir.join("losses.csv");
    if resume.is_some() {
        let fresh = dir.join("losses.csv.new");
        write_history_csv(&fresh, trainer.history()).runtime()?;
        merge_csv(&csv, start, &fresh)?;
    } else {
        write_history_csv(&csv, trainer.history()).runtime()?;
    }
    if let Some(last) = trainer.history().last() {
        println!(
            "epoch {}: L1 {:.4} L2 {:.4} Lc {:.4}",
            last.epoch, last.l1, last.l2, last.lc
        );
    }
    for p in &written {
        println!("checkpoint {}", p.display());
    }
    Ok(())
}

fn encoder_checkpoint(cfg: &RunConfig) -> CmdResult<PathBuf> {
    if let Some(p) = &cfg.gan.encoder_checkpoint {
        return Ok(p.clone());
    }
    let dir = cfg.out_dir.join("pretrain");
    let found = if dir.is_dir() {
        checkpoints_in(&dir, "encoders_epoch")?
    } else {
        Vec::new()
    };
    found.last().cloned().ok_or_else(|| {
        invalid(format!(
            "no encoder checkpoint under {}; run `t2i pretrain` or set gan.encoder_checkpoint",
            dir.display()
        ))
    })
}

fn load_frozen_encoders(cfg: &RunConfig) -> CmdResult<EncoderPair> {
    let path = encoder_checkpoint(cfg)?;
    load_encoders(&load_checkpoint(&path)?, cfg.seed)
        .with_context(|| format!("incompatible encoder checkpoint {}", path.display()))
        .invalid()
}

fn write_gan_csv(dir: &Path, trainer: &GanTrainer, resumed_at: Option<u64>) -> CmdResult<()> {
    let csv = dir.join("losses.csv");
    match resumed_at {
        Some(step) => {
            let fresh = dir.join("losses.csv.new");
            write_loss_csv(&fresh, trainer.history()).runtime()?;
            merge_csv(&csv, step, &fresh)
        }
        None => write_loss_csv(&csv, trainer.history()).runtime(),
    }
}

pub fn train(cfg: &RunConfig, resume: Option<&Path>) -> CmdResult<()> {
    let train = load_split(cfg, "train")?;
    let (mut trainer, resumed_at) = match resume {
        Some(path) => {
            let t = GanTrainer::from_checkpoint(&load_checkpoint(path)?, Some(cfg.gan.train.steps)).invalid()?;
            let at = t.step();
            (t, Some(at))
        }
        None => (
            GanTrainer::new(load_frozen_encoders(cfg)?, cfg.gan.train.clone()).invalid()?,
            None,
        ),
    };
    trainer.check_dataset(&train).invalid()?;
    let dir = cfg.out_dir.join("gan");
    create_dir(&dir)?;
    println!(
        "training {} generator steps (lambda_c {}, tau {})",
        trainer.config().steps,
        trainer.config().lambda_c,
        trainer.config().tau
    );
    let written = trainer.train(&train, Some(&dir)).runtime()?;
    write_gan_csv(&dir, &trainer, resumed_at)?;
    if let Some(r) = trainer.history().last() {
        println!(
            "step {}: L_D {:.4} L_G1 {:.4} L_G2 {:.4} L_c {:.4} L_G {:.4}",
            r.step, r.l_d, r.g.g1, r.g.g2, r.g.lc, r.g.total
        );
    }
    for p in &written {
        println!("checkpoint {}", p.display());
    }
    Ok(())
}

pub fn train_ab(cfg: &RunConfig) -> CmdResult<()> {
    let lambda_c = cfg.gan.train.lambda_c;
    if lambda_c <= 0.0 {
        return Err(invalid("--ab needs a positive lambda_c for the contrastive arm".into()));
    }
    let train = load_split(cfg, "train")?;
    let test = load_split(cfg, "test")?;
    let encoders = load_frozen_encoders(cfg)?;
    let root = cfg.out_dir.join("ab");
    let (dir_c, dir_b) = (root.join(format!("lambda_c_{lambda_c}")), root.join("lambda_c_0"));
    create_dir(&dir_c)?;
    create_dir(&dir_b)?;
    let ab = AbConfig {
        lambda_c,
        ..AbConfig::default()
    };
    println!("A/B: {} steps per arm at lambda_c {lambda_c} and 0", cfg.gan.train.steps);
    let (report, treated, baseline) =
        run_ab(&train, &test, &encoders, &cfg.gan.train, &ab, Some((&dir_c, &dir_b))).runtime()?;
    write_gan_csv(&dir_c, &treated.trainer, None)?;
    write_gan_csv(&dir_b, &baseline.trainer, None)?;
    let path = root.join("ab_report.json");
    report.save(&path).runtime()?;
    for arm in [&report.contrastive, &report.baseline] {
        println!(
            "lambda_c {}: L_c {:.4} -> {:.4} ({:.1}% drop), paraphrase consistency {:.4}",
            arm.lambda_c,
            arm.lc_initial,
            arm.lc_final,
            100.0 * arm.lc_drop,
            arm.consistency
        );
    }
    println!("report {}", path.display());
    Ok(())
}

pub fn train_classifier(cfg: &RunConfig) -> CmdResult<()> {
    let train = load_split(cfg, "train")?;
    let test = load_split(cfg, "test")?;
    let (clf, history) = t2i_core::metrics::train_classifier(&train, cfg.metrics.classifier.clone()).runtime()?;
    let path = cfg.classifier_path();
    if let Some(parent) = path.parent() {
        create_dir(parent)?;
    }
    clf.checkpoint().and_then(|c| c.save(&path)).runtime()?;
    let acc = clf.accuracy(&test).runtime()?;
    println!(
        "final loss {:.4}, test accuracy {:.1}%, saved {}",
        history.last().copied().unwrap_or(f64::NAN),
        100.0 * acc,
        path.display()
    );
    Ok(())
}

fn load_classifier(cfg: &RunConfig) -> CmdResult<Classifier> {
    let path = cfg.classifier_path();
    if !path.exists() {
        return Err(invalid(format!(
            "classifier checkpoint {} is missing; run `t2i train-classifier` first",
            path.display()
        )));
    }
    Classifier::from_checkpoint(&load_checkpoint(&path)?).invalid()
}

fn checkpoint_id(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "checkpoint".into())
}

fn print_report(r: &MetricsReport) {
    println!(
        "{}: IS {:.3} ± {:.3}, FID {:.3}, R-precision {:.2}% ± {:.2} ({} samples)",
        r.checkpoint_id, r.is_mean, r.is_std, r.fid, r.rp_mean, r.rp_std, r.sample_count
    );
}

pub fn evaluate(cfg: &RunConfig, checkpoint: Option<&Path>, real_as_fake: bool) -> CmdResult<()> {
    let test = load_split(cfg, "test")?;
    let classifier = load_classifier(cfg)?;
    let dir = cfg.out_dir.join("eval");
    let exec = Exec::default();
    let eval = &cfg.metrics.eval;
    if real_as_fake {
        let encoders = match checkpoint.filter(|p| p.is_file()) {
            Some(p) => load_encoders(&load_checkpoint(p)?, cfg.seed).invalid()?,
            None => load_frozen_encoders(cfg)?,
        };
        let report = evaluate_real_as_fake(&test, &classifier, &encoders, eval, exec).runtime()?;
        create_dir(&dir)?;
        report.save(&dir.join("real-as-fake.json")).runtime()?;
        print_report(&report);
        return Ok(());
    }
    let target = match checkpoint {
        Some(p) => p.to_path_buf(),
        None => cfg.out_dir.join("gan"),
    };
    let paths = if target.is_dir() {
        checkpoints_in(&target, "gan_step")?
    } else {
        vec![target.clone()]
    };
    if paths.is_empty() {
        return Err(invalid(format!("no GAN checkpoints in {}", target.display())));
    }
    let models = paths
        .iter()
        .map(|p| Ok((checkpoint_id(p), GanModel::from_checkpoint(&load_checkpoint(p)?).invalid()?)))
        .collect::<CmdResult<Vec<_>>>()?;
    create_dir(&dir)?;
    let mut reports = Vec::with_capacity(models.len());
    for (id, model) in &models {
        let report = evaluate_model(model, &test, &classifier, eval, id, exec).runtime()?;
        report.save(&dir.join(format!("{id}.json"))).runtime()?;
        print_report(&report);
        reports.push(report);
    }
    if reports.len() > 1 {
        let best = &reports[best_by_fid(&reports).expect("non-empty")];
        best.save(&dir.join("best.json")).runtime()?;
        println!("best by FID: {}", best.checkpoint_id);
    }
    Ok(())
}
