use std::fs;

use proptest::prelude::*;
use t2i_core::checkpoint::{Checkpoint, CheckpointKind};
use t2i_core::data::{
    generate_synthetic_dataset, load_caption_dataset, save_dataset, Dataset, LoadOptions, SyntheticSpec,
    TripletSampler,
};
use t2i_core::matching::{load_encoders, pretrain, EncoderConfig, EncoderMode, PretrainConfig, Pretrainer};
use t2i_core::Error;

fn small(n: usize, seed: u64) -> Dataset {
    generate_synthetic_dataset(&SyntheticSpec {
        n_images: n,
        resolution: 16,
        seed,
        ..SyntheticSpec::default()
    })
    .unwrap()
}

fn pretrain_config(ds: &Dataset, epochs: usize) -> PretrainConfig {
    PretrainConfig {
        epochs,
        batch_size: 8,
        checkpoint_every: 1,
        seed: 2,
        encoder: EncoderConfig {
            embed_dim: 16,
            word_dim: 16,
            vocab_size: ds.vocab().len(),
            resolution: 16,
            channels: [8, 8, 8, 8],
        },
        ..PretrainConfig::default()
    }
}

#[test]
fn datasets_round_trip_through_disk() {
    let ds = small(20, 1);
    let train = ds.subset(&(0..15).collect::<Vec<_>>()).unwrap();
    let test = ds.subset(&(15..20).collect::<Vec<_>>()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_dataset(dir.path(), &[("train", &train), ("test", &test)]).unwrap();
    let back = load_caption_dataset(
        dir.path(),
        &LoadOptions {
            split: Some("test".into()),
            ..LoadOptions::default()
        },
    )
    .unwrap();
    assert_eq!(back.items(), test.items());
    assert_eq!(back.vocab(), test.vocab());
    let all = load_caption_dataset(dir.path(), &LoadOptions::default()).unwrap();
    assert_eq!(all.len(), 20);

    let again = tempfile::tempdir().unwrap();
    save_dataset(again.path(), &[("train", &train), ("test", &test)]).unwrap();
    for f in ["manifest.json", "vocab.txt", "images/test_00002.png", "text/train_00007.txt"] {
        assert_eq!(fs::read(dir.path().join(f)).unwrap(), fs::read(again.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn manifest_problems_are_reported() {
    let ds = small(6, 1);
    let dir = tempfile::tempdir().unwrap();
    save_dataset(dir.path(), &[("train", &ds)]).unwrap();
    let path = dir.path().join("manifest.json");
    let text = fs::read_to_string(&path).unwrap();
    fs::write(&path, text.replace("\"version\": 1", "\"version\": 9")).unwrap();
    let err = load_caption_dataset(dir.path(), &LoadOptions::default()).unwrap_err();
    assert!(matches!(err, Error::Dataset { .. }), "{err}");
    fs::write(&path, text).unwrap();
    fs::write(dir.path().join("text/train_00003.txt"), "only one caption\n").unwrap();
    let err = load_caption_dataset(dir.path(), &LoadOptions::default()).unwrap_err();
    assert!(err.to_string().contains("train_00003"), "{err}");
}

#[test]
fn checkpoints_round_trip_bit_exactly() {
    let ds = small(16, 3);
    let p = Pretrainer::new(pretrain_config(&ds, 1)).unwrap();
    let bytes = p.checkpoint().unwrap().to_bytes().unwrap();
    let back = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(back.kind, CheckpointKind::Encoders);
    assert_eq!(back.to_bytes().unwrap(), bytes);
    let mut wrong = bytes.clone();
    wrong[8] = 2;
    assert!(matches!(Checkpoint::from_bytes(&wrong), Err(Error::Checkpoint(m)) if m.contains("version")));
    assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    assert!(Checkpoint::from_bytes(b"not a checkpoint at all").is_err());
    assert!(back.expect_kind(CheckpointKind::Gan).is_err());
}

#[test]
fn pretraining_resumes_exactly() {
    let ds = small(32, 4);
    let dir = tempfile::tempdir().unwrap();
    let mut full = Pretrainer::new(pretrain_config(&ds, 3)).unwrap();
    let written = full.train(&ds, Some(dir.path())).unwrap();
    assert_eq!(written.len(), 3);
    assert_eq!(full.history().len(), 3);

    let mid = Checkpoint::load(&written[0]).unwrap();
    assert_eq!(mid.epoch, 1);
    let mut resumed = Pretrainer::from_checkpoint(&mid, pretrain_config(&ds, 3)).unwrap();
    assert_eq!(resumed.steps(), mid.step);
    assert_eq!(resumed.encoders().mode(), EncoderMode::Train);
    resumed.train(&ds, None).unwrap();
    assert_eq!(resumed.history(), &full.history()[1..]);
    assert!(resumed.steps() > mid.step);
    assert_eq!(
        resumed.checkpoint().unwrap().to_bytes().unwrap(),
        full.checkpoint().unwrap().to_bytes().unwrap()
    );

    let enc = load_encoders(&Checkpoint::load(written.last().unwrap()).unwrap(), 0).unwrap();
    assert_eq!(enc.mode(), EncoderMode::Eval);
}

#[test]
fn pretraining_is_deterministic() {
    let ds = small(24, 5);
    let a = pretrain(&ds, pretrain_config(&ds, 2), None).unwrap();
    let b = pretrain(&ds, pretrain_config(&ds, 2), None).unwrap();
    assert_eq!(a.history, b.history);
    assert_eq!(a.encoders.mode(), EncoderMode::Eval);
}

#[test]
fn pretraining_rejects_bad_configuration() {
    let ds = small(8, 1);
    let mut cfg = pretrain_config(&ds, 1);
    cfg.tau = 0.0;
    assert!(matches!(Pretrainer::new(cfg), Err(Error::Config(_))));
    let mut cfg = pretrain_config(&ds, 1);
    cfg.batch_size = 1;
    assert!(Pretrainer::new(cfg).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn sampled_caption_pairs_are_distinct_and_owned(seed in any::<u64>(), batch in 2usize..8) {
        let ds = small(12, 6);
        let mut s = TripletSampler::new(ds.len(), batch, seed).unwrap();
        for _ in 0..3 {
            let b = s.next_batch(&ds).unwrap();
            let mut idx = b.indices.clone();
            idx.sort();
            idx.dedup();
            prop_assert_eq!(idx.len(), batch);
            for (k, &i) in b.indices.iter().enumerate() {
                let (x, y) = b.caption_choice[k];
                prop_assert_ne!(x, y);
                prop_assert_eq!(&b.captions[k], &ds.get(i).captions[x]);
                prop_assert_eq!(&b.captions_prime[k], &ds.get(i).captions[y]);
            }
        }
    }
}
