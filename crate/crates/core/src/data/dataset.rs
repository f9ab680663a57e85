use candle_core::{Device, Tensor};

use super::vocab::Vocabulary;
use crate::error::{Error, Result};

/// RGB image, row-major `H x W x 3`, values in `[-1, 1]` on the 8-bit grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f32>,
}

impl Image {
    pub fn from_rgb8(height: usize, width: usize, rgb: &[u8]) -> Self {
        debug_assert_eq!(rgb.len(), height * width * 3);
        Self {
            height,
            width,
            pixels: rgb.iter().map(|&v| v as f32 / 127.5 - 1.0).collect(),
        }
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        self.pixels
            .iter()
            .map(|&v| ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8)
            .collect()
    }

    /// Channel-major copy, `3 x H x W`.
    pub fn to_chw(&self) -> Vec<f32> {
        let plane = self.height * self.width;
        let mut out = vec![0.0; 3 * plane];
        for (p, px) in self.pixels.chunks_exact(3).enumerate() {
            for c in 0..3 {
                out[c * plane + p] = px[c];
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaptionedImage {
    pub image: Image,
    /// Token id sequences, at least two per image.
    pub captions: Vec<Vec<u32>>,
    pub label: u32,
}

/// Immutable collection of captioned images sharing one resolution and
/// vocabulary.
#[derive(Debug, Clone)]
pub struct Dataset {
    items: Vec<CaptionedImage>,
    vocab: Vocabulary,
    resolution: usize,
    class_names: Vec<String>,
}

impl Dataset {
    pub fn new(
        items: Vec<CaptionedImage>,
        vocab: Vocabulary,
        resolution: usize,
        class_names: Vec<String>,
    ) -> Result<Self> {
        for (i, item) in items.iter().enumerate() {
            if item.captions.len() < 2 {
                return Err(Error::InvalidInput(format!(
                    "image {i} has {} caption(s); at least 2 are required",
                    item.captions.len()
                )));
            }
            if item.image.height != resolution || item.image.width != resolution {
                return Err(Error::InvalidInput(format!(
                    "image {i} is {}x{}, dataset resolution is {resolution}",
                    item.image.height, item.image.width
                )));
            }
            if item.captions.iter().any(|c| c.is_empty()) {
                return Err(Error::InvalidInput(format!("image {i} has an empty caption")));
            }
            if let Some(&id) = item.captions.iter().flatten().find(|&&id| id as usize >= vocab.len() || id == 0) {
                return Err(Error::OutOfVocabulary { id, size: vocab.len() });
            }
            if item.label as usize >= class_names.len() {
                return Err(Error::InvalidInput(format!(
                    "image {i} has label {} but only {} classes are named",
                    item.label,
                    class_names.len()
                )));
            }
        }
        Ok(Self {
            items,
            vocab,
            resolution,
            class_names,
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[CaptionedImage] {
        &self.items
    }

    pub fn get(&self, i: usize) -> &CaptionedImage {
        &self.items[i]
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    /// `(B, 3, H, W)` f32 tensor of the selected images, in order.
    pub fn image_tensor(&self, indices: &[usize]) -> Result<Tensor> {
        let r = self.resolution;
        let mut data = Vec::with_capacity(indices.len() * 3 * r * r);
        for &i in indices {
            data.extend(self.items[i].image.to_chw());
        }
        Ok(Tensor::from_vec(data, (indices.len(), 3, r, r), &Device::Cpu)?)
    }

    /// A dataset over a subset of items (e.g. a split).
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        Self::new(
            indices.iter().map(|&i| self.items[i].clone()).collect(),
            self.vocab.clone(),
            self.resolution,
            self.class_names.clone(),
        )
    }
}
