use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::imaging::{center_crop_resize, load_image, synth, ImageTensor};
use crate::siren::{SirenConfig, TrainRecord};

use super::args::{ArchArgs, CorpusArgs, ImageArgs};
use super::{usage, CliResult};

pub const SYNTHETIC_SIDE: usize = 64;

pub fn single_image(a: &ImageArgs) -> CliResult<ImageTensor> {
    match (&a.image, a.synthetic) {
        (Some(p), None) => {
            let img = load_image(p)?;
            let side = a.size.unwrap_or(img.height.min(img.width));
            Ok(resized(&img, side))
        }
        (None, Some(seed)) => Ok(synth::dead_leaves(a.size.unwrap_or(SYNTHETIC_SIDE), seed)),
        _ => usage("give exactly one of --image or --synthetic"),
    }
}

fn resized(img: &ImageTensor, side: usize) -> ImageTensor {
    if img.height == side && img.width == side {
        img.clone()
    } else {
        center_crop_resize(img, side)
    }
}

fn image_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "ppm" | "pnm"))
        })
        .collect();
    paths.sort();
    Ok(paths)
}

/// An image corpus that can be produced at any square side.
pub enum Corpus {
    Files(Vec<ImageTensor>),
    Synthetic { count: usize, seed: u64 },
}

impl Corpus {
    pub fn from_args(a: &CorpusArgs) -> CliResult<Self> {
        match (&a.images, a.synthetic_count) {
            (Some(dir), None) => {
                let files = image_files(dir)?;
                if files.is_empty() {
                    return Err(Error::InsufficientData { needed: 1, got: 0 }.into());
                }
                Ok(Corpus::Files(files.iter().map(load_image).collect::<Result<_>>()?))
            }
            (None, Some(count)) => Ok(Corpus::Synthetic {
                count,
                seed: a.synthetic_seed,
            }),
            _ => usage("give exactly one of --images or --synthetic-count"),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Corpus::Files(v) => v.len(),
            Corpus::Synthetic { count, .. } => *count,
        }
    }

    pub fn at_size(&self, side: usize) -> Vec<Arc<ImageTensor>> {
        match self {
            Corpus::Files(v) => v.iter().map(|i| Arc::new(resized(i, side))).collect(),
            Corpus::Synthetic { count, seed } => synth::corpus(*count, side, *seed).into_iter().map(Arc::new).collect(),
        }
    }

    /// Images referenced by `records`, keyed by id, regenerated at each record's size.
    pub fn for_records(&self, records: &[&TrainRecord]) -> Result<HashMap<String, Arc<ImageTensor>>> {
        let sizes: BTreeSet<usize> = records.iter().map(|r| r.config.image_size).collect();
        let mut by_id = HashMap::new();
        for s in sizes {
            for img in self.at_size(s) {
                by_id.insert(img.id.clone(), img);
            }
        }
        if let Some(r) = records.iter().find(|r| !by_id.contains_key(&r.image_id)) {
            return Err(Error::Argument(format!(
                "record {} was trained on image {}, which is not in the corpus",
                r.id, r.image_id
            )));
        }
        Ok(by_id)
    }
}

pub fn siren_config(a: &ArchArgs, side: usize) -> SirenConfig {
    let mut c = SirenConfig::new(a.width, a.depth, a.gamma, side, a.seed)
        .with_steps(a.steps)
        .with_learning_rate(a.learning_rate);
    if let Some(o) = a.omega0 {
        c.omega0 = o;
        c.gamma = o / side as f64;
    }
    c
}

pub fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> CliResult<Vec<T>> {
    let v: std::result::Result<Vec<T>, _> = s
        .split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(str::parse)
        .collect();
    match v {
        Ok(v) if !v.is_empty() => Ok(v),
        _ => usage(format!("--{what} must be a comma-separated list of numbers")),
    }
}
