//! Synthetic dataset generation from a settings file.

use std::path::Path;

use anyhow::{bail, Result};
use lim_synth::{write_dataset, DatasetConfig, Manifest};

use crate::settings::Settings;

/// Scene seeds of different dataset seeds never overlap for datasets smaller than this.
pub const SEED_STRIDE: u64 = 1 << 24;

/// First scene seed of the dataset generated for `seed`.
pub fn base_seed(seed: u64) -> u64 {
    seed.wrapping_mul(SEED_STRIDE)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenDataSettings {
    /// Total images; every fifth goes to the test split.
    pub images: usize,
    pub seed: u64,
    pub dataset: DatasetConfig,
}

impl Default for GenDataSettings {
    fn default() -> Self {
        Self {
            images: 625,
            seed: 1,
            dataset: DatasetConfig::default(),
        }
    }
}

impl Settings for GenDataSettings {
    const KEYS: &'static [&'static str] = &["images", "seed", "width", "height", "classes", "min_size", "max_size"];

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "images" => self.images = value.parse()?,
            "seed" => self.seed = value.parse()?,
            "width" => self.dataset.width = value.parse()?,
            "height" => self.dataset.height = value.parse()?,
            "classes" => self.dataset.classes = value.parse()?,
            "min_size" => self.dataset.min_size = value.parse()?,
            _ => self.dataset.max_size = value.parse()?,
        }
        Ok(())
    }
}

pub fn generate(s: &GenDataSettings, out: &Path) -> Result<Manifest> {
    if s.images == 0 {
        bail!("images must be positive");
    }
    if s.images as u64 > SEED_STRIDE {
        bail!("at most {SEED_STRIDE} images per dataset");
    }
    Ok(write_dataset(s.images, out, base_seed(s.seed), &s.dataset)?)
}
