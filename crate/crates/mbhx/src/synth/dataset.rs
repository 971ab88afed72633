//! Dataset generation and loading.
//!
//! Layout: `<out_dir>/<split>/sample_NNNNNN/{image.png, alpha.png,
//! fg.png, bg.png}` — RGB as 8-bit PNG, alpha as 16-bit grayscale PNG —
//! plus `<out_dir>/manifest.json`. With `exact` set, each buffer is
//! mirrored losslessly as a `.tsr` tensor file, and loading prefers the
//! mirror.
//!
//! Per-sample seeds are `base_seed + split_offset + index` with a distinct
//! 2^32 offset per split, so the three splits never share a seed.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;

use crate::compositing::ImageBuffer;
use crate::error::{Error, Result};
use crate::io::{self, Dtype, Manifest, SplitRecord};
use crate::synth::{make_sample, BackgroundSource};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    /// Desk-scale default sample counts (train/val/test).
    pub fn default_count(self) -> usize {
        match self {
            Split::Train => 256,
            Split::Val => 64,
            Split::Test => 64,
        }
    }

    fn seed_offset(self) -> u64 {
        match self {
            Split::Train => 0,
            Split::Val => 1u64 << 32,
            Split::Test => 2u64 << 32,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Split> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!(
                "unknown split {other:?} (expected train, val, or test)"
            ))),
        }
    }
}

pub(crate) fn sample_seed(base_seed: u64, split: Split, index: usize) -> u64 {
    base_seed
        .wrapping_add(split.seed_offset())
        .wrapping_add(index as u64)
}

fn sample_dir(out_dir: &Path, split: Split, index: usize) -> PathBuf {
    out_dir
        .join(split.as_str())
        .join(format!("sample_{index:06}"))
}

/// Generate `count` samples for one split and merge the split record into
/// `<out_dir>/manifest.json`. Pure function of its arguments: regenerating
/// reproduces the directory byte for byte.
pub fn generate_dataset(
    seed: u64,
    count: usize,
    split: Split,
    out_dir: &Path,
    extent: (usize, usize),
    exact: bool,
    background: &BackgroundSource,
) -> Result<Manifest> {
    if count == 0 {
        return Err(Error::Config("count must be at least 1".into()));
    }
    let manifest_path = out_dir.join("manifest.json");
    let mut manifest = if manifest_path.exists() {
        let existing = Manifest::load(&manifest_path)?;
        if existing.extent != extent {
            return Err(Error::Config(format!(
                "out dir already holds a {}x{} dataset, refusing to mix in {}x{}",
                existing.extent.0, existing.extent.1, extent.0, extent.1
            )));
        }
        existing
    } else {
        Manifest::new(extent)
    };

    std::fs::create_dir_all(out_dir.join(split.as_str()))
        .map_err(|e| Error::io(out_dir.join(split.as_str()), e))?;

    let seeds: Vec<u64> = (0..count).map(|i| sample_seed(seed, split, i)).collect();
    seeds
        .par_iter()
        .enumerate()
        .try_for_each(|(index, &sample_seed)| -> Result<()> {
            let sample = make_sample(sample_seed, extent, background)?;
            let dir = sample_dir(out_dir, split, index);
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            io::write_image(&dir.join("image.png"), &sample.image)?;
            io::write_image(&dir.join("alpha.png"), &sample.alpha)?;
            io::write_image(&dir.join("fg.png"), &sample.foreground)?;
            io::write_image(&dir.join("bg.png"), &sample.background)?;
            if exact {
                io::write_tensor(&dir.join("image.tsr"), &sample.image.to_tensor(), Dtype::F64)?;
                io::write_tensor(&dir.join("alpha.tsr"), &sample.alpha.to_tensor(), Dtype::F64)?;
                io::write_tensor(&dir.join("fg.tsr"), &sample.foreground.to_tensor(), Dtype::F64)?;
                io::write_tensor(&dir.join("bg.tsr"), &sample.background.to_tensor(), Dtype::F64)?;
            }
            Ok(())
        })?;

    manifest.upsert_split(SplitRecord {
        name: split.as_str().to_string(),
        count,
        seeds,
    });
    manifest.save(&manifest_path)?;
    Ok(manifest)
}

/// One dataset record loaded back as `[1, c, h, w]` tensors.
#[derive(Clone, Debug)]
pub struct LoadedSample {
    pub image: Tensor,
    pub alpha: Tensor,
    pub foreground: Tensor,
    pub background: Tensor,
}

impl LoadedSample {
    fn read_buffer(dir: &Path, stem: &str) -> Result<Tensor> {
        let tsr = dir.join(format!("{stem}.tsr"));
        if tsr.exists() {
            return io::read_tensor(&tsr);
        }
        Ok(io::read_image(&dir.join(format!("{stem}.png")))?.to_tensor())
    }

    fn load(dir: &Path) -> Result<LoadedSample> {
        Ok(LoadedSample {
            image: Self::read_buffer(dir, "image")?,
            alpha: Self::read_buffer(dir, "alpha")?,
            foreground: Self::read_buffer(dir, "fg")?,
            background: Self::read_buffer(dir, "bg")?,
        })
    }

    pub fn alpha_buffer(&self) -> Result<ImageBuffer> {
        ImageBuffer::from_tensor(&self.alpha)
    }
}

/// Load every sample of a split listed in the manifest. Corrupt samples
/// are skipped with a warning; an entirely corrupt split is fatal.
pub fn load_dataset_split(dataset_dir: &Path, split: Split) -> Result<Vec<LoadedSample>> {
    let manifest = Manifest::load(&dataset_dir.join("manifest.json"))?;
    let record = manifest.split(split.as_str()).ok_or_else(|| {
        Error::Config(format!(
            "manifest in {} has no {split} split",
            dataset_dir.display()
        ))
    })?;
    let mut samples = Vec::with_capacity(record.count);
    let mut skipped = 0usize;
    for index in 0..record.count {
        let dir = sample_dir(dataset_dir, split, index);
        match LoadedSample::load(&dir) {
            Ok(sample) => samples.push(sample),
            Err(err) => {
                skipped += 1;
                log::warn!("skipping corrupt sample {}: {err}", dir.display());
            }
        }
    }
    if samples.is_empty() {
        return Err(Error::Format(format!(
            "all {skipped} samples of split {split} failed to load"
        )));
    }
    Ok(samples)
}
