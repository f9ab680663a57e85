use candle_core::Tensor;
use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::dataset::Dataset;
use super::derive_seed;
use crate::error::{Error, Result};

/// `N` images with two distinct captions each, both belonging to that image.
#[derive(Debug, Clone)]
pub struct TripletBatch {
    pub indices: Vec<usize>,
    /// `(N, 3, H, W)`.
    pub images: Tensor,
    pub captions: Vec<Vec<u32>>,
    pub captions_prime: Vec<Vec<u32>>,
    /// Which caption of each image went to `captions` / `captions_prime`.
    pub caption_choice: Vec<(usize, usize)>,
}

impl TripletBatch {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Batch with both branches pointed at the same captions.
    pub fn with_identical_branches(&self) -> Self {
        Self {
            captions_prime: self.captions.clone(),
            caption_choice: self.caption_choice.iter().map(|&(a, _)| (a, a)).collect(),
            ..self.clone()
        }
    }

    fn assemble(dataset: &Dataset, indices: Vec<usize>, rng: &mut impl Rng) -> Result<Self> {
        let mut captions = Vec::with_capacity(indices.len());
        let mut captions_prime = Vec::with_capacity(indices.len());
        let mut caption_choice = Vec::with_capacity(indices.len());
        for &i in &indices {
            let caps = &dataset.get(i).captions;
            if caps.len() < 2 {
                return Err(Error::InvalidInput(format!("image {i} has fewer than 2 captions")));
            }
            // An ordered pair of distinct positions, uniform over all such pairs.
            let pair = index::sample(rng, caps.len(), 2);
            let (a, b) = (pair.index(0), pair.index(1));
            captions.push(caps[a].clone());
            captions_prime.push(caps[b].clone());
            caption_choice.push((a, b));
        }
        Ok(Self {
            images: dataset.image_tensor(&indices)?,
            indices,
            captions,
            captions_prime,
            caption_choice,
        })
    }
}

/// One triplet batch: `n` distinct images drawn uniformly, with `t_i` and
/// `t'_i` drawn without replacement from image `i`'s captions.
pub fn sample_triplet_batch(dataset: &Dataset, n: usize, rng: &mut impl Rng) -> Result<TripletBatch> {
    if n == 0 {
        return Err(Error::InvalidInput("batch size must be positive".into()));
    }
    if n > dataset.len() {
        return Err(Error::InvalidInput(format!(
            "batch size {n} exceeds dataset size {}",
            dataset.len()
        )));
    }
    let indices = index::sample(rng, dataset.len(), n).into_vec();
    TripletBatch::assemble(dataset, indices, rng)
}

/// Epoch-based sampler: each epoch is one pass over the images in a shuffled
/// order, cut into full batches (a short tail is dropped). The shuffle and
/// caption choices of epoch `k` depend only on `(seed, k)`.
#[derive(Debug, Clone)]
pub struct TripletSampler {
    batch_size: usize,
    seed: u64,
    epoch: u64,
    order: Vec<usize>,
    cursor: usize,
    rng: ChaCha8Rng,
}

impl TripletSampler {
    pub fn new(dataset_len: usize, batch_size: usize, seed: u64) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::InvalidInput("batch size must be positive".into()));
        }
        if batch_size > dataset_len {
            return Err(Error::InvalidInput(format!(
                "batch size {batch_size} exceeds dataset size {dataset_len}"
            )));
        }
        let mut s = Self {
            batch_size,
            seed,
            epoch: 0,
            order: (0..dataset_len).collect(),
            cursor: 0,
            rng: ChaCha8Rng::seed_from_u64(0),
        };
        s.start_epoch(0);
        Ok(s)
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.order.len() / self.batch_size
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn start_epoch(&mut self, epoch: u64) {
        self.epoch = epoch;
        self.rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, epoch));
        self.order.sort_unstable();
        self.order.shuffle(&mut self.rng);
        self.cursor = 0;
    }

    /// Next batch of the current epoch, `None` once it is exhausted.
    pub fn next_in_epoch(&mut self, dataset: &Dataset) -> Result<Option<TripletBatch>> {
        if self.cursor + self.batch_size > self.order.len() {
            return Ok(None);
        }
        let indices = self.order[self.cursor..self.cursor + self.batch_size].to_vec();
        self.cursor += self.batch_size;
        TripletBatch::assemble(dataset, indices, &mut self.rng).map(Some)
    }

    /// Next batch, rolling over into the following epoch when needed.
    pub fn next_batch(&mut self, dataset: &Dataset) -> Result<TripletBatch> {
        if let Some(b) = self.next_in_epoch(dataset)? {
            return Ok(b);
        }
        self.start_epoch(self.epoch + 1);
        self.next_in_epoch(dataset)?
            .ok_or_else(|| Error::InvalidInput("dataset smaller than one batch".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic::{generate_synthetic_dataset, SyntheticSpec};
    use std::collections::HashSet;

    fn dataset(n: usize, caps: usize) -> Dataset {
        generate_synthetic_dataset(&SyntheticSpec {
            n_images: n,
            captions_per_image: caps,
            seed: 3,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn same_image_constraint_and_distinct_captions() {
        let ds = dataset(20, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let b = sample_triplet_batch(&ds, 8, &mut rng).unwrap();
            let uniq: HashSet<_> = b.indices.iter().collect();
            assert_eq!(uniq.len(), 8);
            for k in 0..8 {
                let (a, c) = b.caption_choice[k];
                assert_ne!(a, c);
                let caps = &ds.get(b.indices[k]).captions;
                assert_eq!(&caps[a], &b.captions[k]);
                assert_eq!(&caps[c], &b.captions_prime[k]);
            }
            assert_eq!(b.images.dims(), &[8, 3, 32, 32]);
        }
    }

    #[test]
    fn two_caption_images_always_yield_that_pair() {
        let ds = dataset(5, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let b = sample_triplet_batch(&ds, 5, &mut rng).unwrap();
            for &(a, c) in &b.caption_choice {
                assert_eq!(a + c, 1);
            }
        }
    }

    #[test]
    fn oversized_batch_is_rejected() {
        let ds = dataset(4, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(sample_triplet_batch(&ds, 5, &mut rng).is_err());
        assert!(TripletSampler::new(4, 5, 0).is_err());
    }

    #[test]
    fn epochs_cover_every_image_once_and_replay_from_seed() {
        let ds = dataset(10, 3);
        let mut s = TripletSampler::new(10, 3, 9).unwrap();
        let mut seen = Vec::new();
        while let Some(b) = s.next_in_epoch(&ds).unwrap() {
            seen.extend(b.indices);
        }
        assert_eq!(seen.len(), 9);
        assert_eq!(seen.iter().collect::<HashSet<_>>().len(), 9);

        let mut a = TripletSampler::new(10, 3, 9).unwrap();
        let mut b = TripletSampler::new(10, 3, 9).unwrap();
        for _ in 0..7 {
            let x = a.next_batch(&ds).unwrap();
            let y = b.next_batch(&ds).unwrap();
            assert_eq!(x.indices, y.indices);
            assert_eq!(x.caption_choice, y.caption_choice);
        }
        assert_eq!(a.epoch(), 2);
        b.start_epoch(2);
        a.start_epoch(2);
        assert_eq!(a.next_batch(&ds).unwrap().indices, b.next_batch(&ds).unwrap().indices);
    }
}
