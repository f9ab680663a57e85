use candle_core::{DType, Module, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{leaky_relu, Conv2d, Linear, Params};

/// Network sizes shared by the generator and the discriminators.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArchConfig {
    pub z_dim: usize,
    /// Sentence embedding size; must match the text encoder.
    pub embed_dim: usize,
    /// Output resolution of the last stage.
    pub resolution: usize,
    /// Number of stages; stage `k` renders at `resolution / 2^(stages - 1 - k)`.
    pub stages: usize,
    pub gen_channels: usize,
    pub disc_channels: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            z_dim: 16,
            embed_dim: 32,
            resolution: 32,
            stages: 2,
            gen_channels: 8,
            disc_channels: 8,
        }
    }
}

impl ArchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stages == 0 {
            return Err(Error::Config("gan.stages must be at least 1".into()));
        }
        if self.z_dim == 0 || self.embed_dim == 0 || self.gen_channels == 0 || self.disc_channels == 0 {
            return Err(Error::Config("gan layer sizes must be positive".into()));
        }
        let first = self.resolution >> (self.stages - 1);
        if !self.resolution.is_power_of_two() || first < 8 || first << (self.stages - 1) != self.resolution {
            return Err(Error::Config(format!(
                "gan.resolution {} with {} stages: need a power of two whose first stage is at least 8 px",
                self.resolution, self.stages
            )));
        }
        Ok(())
    }

    pub fn stage_resolutions(&self) -> Vec<usize> {
        (0..self.stages).map(|k| self.resolution >> (self.stages - 1 - k)).collect()
    }
}

/// Appends `e` as constant feature maps to `h`.
fn concat_condition(h: &Tensor, e: &Tensor) -> Result<Tensor> {
    let (b, _, hh, ww) = h.dims4()?;
    let ed = e.dims()[1];
    let e_map = e.reshape((b, ed, 1, 1))?.broadcast_as((b, ed, hh, ww))?;
    Ok(Tensor::cat(&[h, &e_map.contiguous()?], 1)?)
}

fn upsample(h: &Tensor) -> Result<Tensor> {
    let (_, _, hh, ww) = h.dims4()?;
    Ok(h.upsample_nearest2d(hh * 2, ww * 2)?)
}

#[derive(Debug, Clone)]
struct UpBlock {
    conv: Conv2d,
}

impl UpBlock {
    fn new(p: Params, in_ch: usize, out_ch: usize) -> Result<Self> {
        Ok(Self {
            conv: Conv2d::new(p.pp("conv"), in_ch, out_ch, 3, 1, 1)?,
        })
    }

    fn forward(&self, h: &Tensor) -> Result<Tensor> {
        leaky_relu(&self.conv.forward(&upsample(h)?)?)
    }
}

#[derive(Debug, Clone)]
struct Stage {
    /// Only for refinement stages: fuses the previous hidden state with `e`.
    joint: Option<Conv2d>,
    blocks: Vec<UpBlock>,
    to_rgb: Conv2d,
}

/// Stacked conditional generator `G(z, e)`.
///
/// A linear projection of `[z; e]` gives a 4x4 hidden state; the first stage
/// upsamples it to its resolution, every later stage concatenates `e` to the
/// previous hidden state and doubles the resolution. Each stage emits an
/// image through a `tanh` head.
#[derive(Debug, Clone)]
pub struct Generator {
    fc: Linear,
    stages: Vec<Stage>,
    base_channels: usize,
    config: ArchConfig,
}

impl Generator {
    pub fn new(p: Params, config: &ArchConfig) -> Result<Self> {
        config.validate()?;
        let ngf = config.gen_channels;
        let base = ngf * 4;
        let fc = Linear::new(p.pp("fc"), config.z_dim + config.embed_dim, base * 16)?;
        let first_res = config.stage_resolutions()[0];
        let mut stages = Vec::with_capacity(config.stages);
        let mut ch = base;
        let mut blocks = Vec::new();
        let mut res = 4;
        let p0 = p.pp("stage0");
        while res < first_res {
            let out = (ch / 2).max(ngf);
            blocks.push(UpBlock::new(p0.pp(&format!("up{}", blocks.len())), ch, out)?);
            ch = out;
            res *= 2;
        }
        stages.push(Stage {
            joint: None,
            blocks,
            to_rgb: Conv2d::new(p0.pp("to_rgb"), ch, 3, 3, 1, 1)?,
        });
        for k in 1..config.stages {
            let pk = p.pp(&format!("stage{k}"));
            stages.push(Stage {
                joint: Some(Conv2d::new(pk.pp("joint"), ch + config.embed_dim, ngf, 3, 1, 1)?),
                blocks: vec![UpBlock::new(pk.pp("up0"), ngf, ngf)?],
                to_rgb: Conv2d::new(pk.pp("to_rgb"), ngf, 3, 3, 1, 1)?,
            });
            ch = ngf;
        }
        Ok(Self {
            fc,
            stages,
            base_channels: base,
            config: config.clone(),
        })
    }

    pub fn config(&self) -> &ArchConfig {
        &self.config
    }

    /// Images of every stage, lowest resolution first, values in `[-1, 1]`.
    pub fn forward(&self, z: &Tensor, e: &Tensor) -> Result<Vec<Tensor>> {
        let (b, zd) = z.dims2()?;
        let (be, ed) = e.dims2()?;
        if b != be {
            return Err(Error::Shape(format!("noise batch {b} differs from embedding batch {be}")));
        }
        if zd != self.config.z_dim || ed != self.config.embed_dim {
            return Err(Error::Shape(format!(
                "generator expects z of width {} and e of width {}, got {zd} and {ed}",
                self.config.z_dim, self.config.embed_dim
            )));
        }
        let ze = Tensor::cat(&[&z.to_dtype(DType::F32)?, &e.to_dtype(DType::F32)?], 1)?;
        let mut h = leaky_relu(&self.fc.forward(&ze)?)?.reshape((b, self.base_channels, 4, 4))?;
        let mut images = Vec::with_capacity(self.stages.len());
        for stage in &self.stages {
            if let Some(joint) = &stage.joint {
                h = leaky_relu(&joint.forward(&concat_condition(&h, e)?)?)?;
            }
            for block in &stage.blocks {
                h = block.forward(&h)?;
            }
            images.push(stage.to_rgb.forward(&h)?.tanh()?);
        }
        Ok(images)
    }
}

/// Joint image-text discriminator for one stage: strided convolutions down
/// to 4x4, then `e` is appended as feature maps and a final 4x4 convolution
/// gives one realness logit per pair.
#[derive(Debug, Clone)]
pub struct StageDiscriminator {
    down: Vec<Conv2d>,
    joint: Conv2d,
    head: Conv2d,
    resolution: usize,
}

impl StageDiscriminator {
    pub fn new(p: Params, resolution: usize, config: &ArchConfig) -> Result<Self> {
        let ndf = config.disc_channels;
        let mut down = Vec::new();
        let (mut ch, mut res) = (3, resolution);
        while res > 4 {
            let out = if down.is_empty() { ndf } else { (ch * 2).min(ndf * 8) };
            down.push(Conv2d::new(p.pp(&format!("down{}", down.len())), ch, out, 4, 2, 1)?);
            ch = out;
            res /= 2;
        }
        Ok(Self {
            down,
            joint: Conv2d::new(p.pp("joint"), ch + config.embed_dim, ndf * 2, 3, 1, 1)?,
            head: Conv2d::new(p.pp("head"), ndf * 2, 1, 4, 1, 0)?,
            resolution,
        })
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    /// Logits `(B,)`.
    pub fn forward(&self, images: &Tensor, e: &Tensor) -> Result<Tensor> {
        let (b, c, h, w) = images.dims4()?;
        if c != 3 || h != self.resolution || w != self.resolution {
            return Err(Error::Shape(format!(
                "discriminator for {0}x{0} got images {1:?}",
                self.resolution,
                images.dims()
            )));
        }
        let mut x = images.to_dtype(DType::F32)?;
        for conv in &self.down {
            x = leaky_relu(&conv.forward(&x)?)?;
        }
        let x = leaky_relu(&self.joint.forward(&concat_condition(&x, &e.to_dtype(DType::F32)?)?)?)?;
        Ok(self.head.forward(&x)?.reshape(b)?)
    }
}

/// One discriminator per generator stage.
#[derive(Debug, Clone)]
pub struct Discriminator {
    stages: Vec<StageDiscriminator>,
}

impl Discriminator {
    pub fn new(p: Params, config: &ArchConfig) -> Result<Self> {
        config.validate()?;
        let stages = config
            .stage_resolutions()
            .into_iter()
            .enumerate()
            .map(|(k, r)| StageDiscriminator::new(p.pp(&format!("stage{k}")), r, config))
            .collect::<Result<_>>()?;
        Ok(Self { stages })
    }

    pub fn stages(&self) -> &[StageDiscriminator] {
        &self.stages
    }
}

/// Area-downsamples real images to each stage resolution.
pub fn image_pyramid(images: &Tensor, resolutions: &[usize]) -> Result<Vec<Tensor>> {
    let full = images.dims()[3];
    resolutions
        .iter()
        .map(|&r| {
            if r == full {
                Ok(images.clone())
            } else {
                Ok(images.avg_pool2d(full / r)?)
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamStore;

    fn wave(rows: usize, cols: usize, freq: f32) -> Tensor {
        let v: Vec<f32> = (0..rows * cols).map(|i| 3.0 * (i as f32 * freq).sin()).collect();
        Tensor::from_vec(v, (rows, cols), &candle_core::Device::Cpu).unwrap()
    }

    #[test]
    fn stage_shapes_and_range() {
        let cfg = ArchConfig::default();
        let store = ParamStore::new(1);
        let g = Generator::new(store.root().pp("generator"), &cfg).unwrap();
        let z = wave(5, cfg.z_dim, 0.37);
        let e = wave(5, cfg.embed_dim, 1.3);
        let imgs = g.forward(&z, &e).unwrap();
        assert_eq!(imgs.len(), 2);
        assert_eq!(imgs[0].dims(), &[5, 3, 16, 16]);
        assert_eq!(imgs[1].dims(), &[5, 3, 32, 32]);
        for im in &imgs {
            let v = im.flatten_all().unwrap().to_vec1::<f32>().unwrap();
            assert!(v.iter().all(|x| (-1.0..=1.0).contains(x)));
        }
        let again = g.forward(&z, &e).unwrap();
        assert_eq!(
            imgs[1].flatten_all().unwrap().to_vec1::<f32>().unwrap(),
            again[1].flatten_all().unwrap().to_vec1::<f32>().unwrap()
        );

        let d = Discriminator::new(store.root().pp("discriminator"), &cfg).unwrap();
        for (s, im) in d.stages().iter().zip(&imgs) {
            assert_eq!(s.forward(im, &e).unwrap().dims(), &[5]);
        }
        assert!(d.stages()[0].forward(&imgs[1], &e).is_err());
    }

    #[test]
    fn mismatched_inputs_are_rejected() {
        let cfg = ArchConfig::default();
        let store = ParamStore::new(1);
        let g = Generator::new(store.root(), &cfg).unwrap();
        let z = Tensor::zeros((2, cfg.z_dim), DType::F32, &candle_core::Device::Cpu).unwrap();
        let e = Tensor::zeros((3, cfg.embed_dim), DType::F32, &candle_core::Device::Cpu).unwrap();
        assert!(g.forward(&z, &e).is_err());
        let e = Tensor::zeros((2, cfg.embed_dim + 1), DType::F32, &candle_core::Device::Cpu).unwrap();
        assert!(g.forward(&z, &e).is_err());
    }

    #[test]
    fn resolution_validation() {
        let bad = ArchConfig {
            resolution: 24,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let three = ArchConfig {
            resolution: 64,
            stages: 3,
            ..Default::default()
        };
        assert_eq!(three.stage_resolutions(), vec![16, 32, 64]);
    }
}
