//! On-disk dataset layout.
//!
//! ```text
//! <root>/manifest.json       dataset index (fields below)
//! <root>/vocab.txt           one token per line; line number = token id, line 0 = <pad>
//! <root>/images/<name>.png   any format the `image` crate decodes
//! <root>/text/<name>.txt     one caption per line, at least two per image
//! ```
//!
//! `manifest.json` fields:
//!
//! * `format`: always `"t2i-captioned-images"`
//! * `version`: layout version, currently 1
//! * `resolution`: side length images are resized to on load
//! * `vocabulary`: optional path of the vocabulary file; when absent the
//!   vocabulary is built from every caption in the manifest
//! * `classes`: class names, indexed by `label`
//! * `entries[]`: `{ image, captions, label, split }` where `image` and
//!   `captions` are paths relative to the root and `split` is a free-form tag
//!   such as `"train"` or `"test"`
//!
//! A CUB- or COCO-style dataset is adapted by writing one caption file per
//! image and listing both in the manifest.

use std::fs;
use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use serde::{Deserialize, Serialize};

use super::dataset::{CaptionedImage, Dataset, Image};
use super::vocab::{normalize_caption, Vocabulary};
use crate::error::{Error, Result};

pub const MANIFEST_FORMAT: &str = "t2i-captioned-images";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image: String,
    pub captions: String,
    pub label: u32,
    pub split: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub resolution: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocabulary: Option<String>,
    pub classes: Vec<String>,
    pub entries: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    /// Only entries with this split tag; all entries when `None`.
    pub split: Option<String>,
    /// Overrides the manifest resolution.
    pub resolution: Option<usize>,
    /// Overrides the manifest vocabulary.
    pub vocab: Option<Vocabulary>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::dataset(path, e.to_string()))?;
        let m: Manifest =
            serde_json::from_str(&text).map_err(|e| Error::dataset(path, format!("invalid manifest: {e}")))?;
        if m.format != MANIFEST_FORMAT {
            return Err(Error::dataset(path, format!("unknown manifest format {:?}", m.format)));
        }
        if m.version != MANIFEST_VERSION {
            return Err(Error::dataset(
                path,
                format!("manifest version {} is not supported (expected {MANIFEST_VERSION})", m.version),
            ));
        }
        Ok(m)
    }
}

/// Writes `splits` (tag, dataset) under `root`. All datasets must share a
/// vocabulary and class list. Output is byte-identical for identical input.
pub fn save_dataset(root: &Path, splits: &[(&str, &Dataset)]) -> Result<Manifest> {
    let first = splits
        .first()
        .ok_or_else(|| Error::InvalidInput("no dataset splits to save".into()))?
        .1;
    fs::create_dir_all(root.join("images"))?;
    fs::create_dir_all(root.join("text"))?;
    let vocab = first.vocab();
    fs::write(root.join("vocab.txt"), vocab.tokens().join("\n") + "\n")?;

    let mut entries = Vec::new();
    for (tag, ds) in splits {
        if ds.vocab() != vocab || ds.class_names() != first.class_names() {
            return Err(Error::InvalidInput(format!(
                "split {tag} does not share the vocabulary and classes of the first split"
            )));
        }
        for (i, item) in ds.items().iter().enumerate() {
            let name = format!("{tag}_{i:05}");
            let image = format!("images/{name}.png");
            let captions = format!("text/{name}.txt");
            let img = &item.image;
            image::save_buffer(
                root.join(&image),
                &img.to_rgb8(),
                img.width as u32,
                img.height as u32,
                image::ColorType::Rgb8,
            )?;
            let text = item
                .captions
                .iter()
                .map(|c| vocab.detokenize(c))
                .collect::<Result<Vec<_>>>()?
                .join("\n");
            fs::write(root.join(&captions), text + "\n")?;
            entries.push(ManifestEntry {
                image,
                captions,
                label: item.label,
                split: tag.to_string(),
            });
        }
    }
    let manifest = Manifest {
        format: MANIFEST_FORMAT.into(),
        version: MANIFEST_VERSION,
        resolution: first.resolution(),
        vocabulary: Some("vocab.txt".into()),
        classes: first.class_names().to_vec(),
        entries,
    };
    fs::write(root.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(manifest)
}

fn read_captions(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::dataset(path, e.to_string()))?;
    Ok(text
        .lines()
        .map(normalize_caption)
        .filter(|c| !c.is_empty())
        .collect())
}

fn read_image(path: &Path, resolution: usize) -> Result<Image> {
    let img = image::open(path).map_err(|e| Error::dataset(path, format!("cannot decode image: {e}")))?;
    let mut rgb = img.to_rgb8();
    if rgb.width() as usize != resolution || rgb.height() as usize != resolution {
        rgb = image::imageops::resize(&rgb, resolution as u32, resolution as u32, FilterType::Triangle);
    }
    Ok(Image::from_rgb8(resolution, resolution, rgb.as_raw()))
}

/// Loads the dataset described by `root/manifest.json` (or by `root` itself
/// when it names a JSON file).
pub fn load_caption_dataset(root: &Path, options: &LoadOptions) -> Result<Dataset> {
    let (root, manifest_path): (PathBuf, PathBuf) = if root.is_file() {
        (
            root.parent().map(Path::to_path_buf).unwrap_or_default(),
            root.to_path_buf(),
        )
    } else {
        (root.to_path_buf(), root.join("manifest.json"))
    };
    let manifest = Manifest::read(&manifest_path)?;
    let resolution = options.resolution.unwrap_or(manifest.resolution);

    let selected: Vec<&ManifestEntry> = manifest
        .entries
        .iter()
        .filter(|e| options.split.as_ref().is_none_or(|s| &e.split == s))
        .collect();

    let mut captions = Vec::with_capacity(selected.len());
    for entry in &selected {
        let path = root.join(&entry.captions);
        let caps = read_captions(&path)?;
        if caps.len() < 2 {
            return Err(Error::dataset(
                path,
                format!("{} caption(s) found, at least 2 are required", caps.len()),
            ));
        }
        if entry.label as usize >= manifest.classes.len() {
            return Err(Error::dataset(
                &manifest_path,
                format!("entry {} has label {} outside the class list", entry.image, entry.label),
            ));
        }
        captions.push(caps);
    }

    let vocab = match (&options.vocab, &manifest.vocabulary) {
        (Some(v), _) => v.clone(),
        (None, Some(file)) => {
            let path = root.join(file);
            let text = fs::read_to_string(&path).map_err(|e| Error::dataset(&path, e.to_string()))?;
            Vocabulary::from_tokens(text.lines().map(str::to_string).collect())
                .map_err(|e| Error::dataset(&path, e.to_string()))?
        }
        (None, None) => {
            // Built over every entry, not just the selected split, so that
            // splits of one manifest agree on token ids.
            let mut all = Vec::new();
            for entry in &manifest.entries {
                all.extend(read_captions(&root.join(&entry.captions))?);
            }
            Vocabulary::build(all.iter().map(String::as_str))
        }
    };

    let mut items = Vec::with_capacity(selected.len());
    for (entry, caps) in selected.iter().zip(captions) {
        let cap_path = root.join(&entry.captions);
        let tokens = caps
            .iter()
            .map(|c| vocab.tokenize(c))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| Error::dataset(&cap_path, e.to_string()))?;
        items.push(CaptionedImage {
            image: read_image(&root.join(&entry.image), resolution)?,
            captions: tokens,
            label: entry.label,
        });
    }
    Dataset::new(items, vocab, resolution, manifest.classes.clone())
}
