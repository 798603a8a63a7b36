//! Dataset generation: configuration sampling, parallel training, manifests.

mod manifest;
mod sampling;

use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::imaging::ImageTensor;
use crate::siren::{train, RunStatus, SirenConfig, TrainRecord};

pub use manifest::{blob_ref, corpus_hash, read_blob, write_blob, Manifest, ManifestHeader, ManifestWriter, WEIGHTS_DIR};
pub use sampling::{sample_config, sample_config_with_target, width_for_bpp, SamplingSpec, MAX_RESAMPLES, MIN_WIDTH};

pub const WORKERS_ENV: &str = "SIRENLAB_WORKERS";

/// Worker count from `SIRENLAB_WORKERS`, else the number of CPUs.
pub fn default_workers() -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .filter(|&n: &usize| n >= 1)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// A training job: one configuration applied to one image.
#[derive(Clone, Debug)]
pub struct Job {
    pub config: SirenConfig,
    pub image: Arc<ImageTensor>,
}

impl Job {
    pub fn new(config: SirenConfig, image: Arc<ImageTensor>) -> Self {
        Job { config, image }
    }

    pub fn id(&self) -> String {
        job_id(&self.config, &self.image.id)
    }
}

/// Stable record id derived from the configuration and the image hash.
pub fn job_id(config: &SirenConfig, image_id: &str) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(config).expect("configs serialize"));
    h.update(image_id.as_bytes());
    h.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug)]
pub struct RunOptions {
    pub workers: usize,
    /// Manifest path; weight blobs go next to it. `None` keeps everything in memory.
    pub manifest: Option<PathBuf>,
    pub header: ManifestHeader,
}

impl RunOptions {
    pub fn in_memory(workers: usize) -> Self {
        RunOptions {
            workers,
            manifest: None,
            header: ManifestHeader::new(None, ""),
        }
    }

    pub fn to_file(workers: usize, path: impl Into<PathBuf>, header: ManifestHeader) -> Self {
        RunOptions {
            workers,
            manifest: Some(path.into()),
            header,
        }
    }
}

fn run_one(job: &Job, id: &str, root: Option<&Path>) -> Result<TrainRecord> {
    let mut record = match train(&job.config, &job.image) {
        Ok(out) => {
            let mut r = out.record;
            if let Some(root) = root {
                r.best_weights_ref = write_blob(root, id, &out.best_weights)?;
            }
            r
        }
        Err(e @ Error::Io { .. }) => return Err(e),
        Err(e) => TrainRecord {
            id: String::new(),
            config: job.config.clone(),
            image_id: job.image.id.clone(),
            max_psnr: f64::NAN,
            argmax_step: 0,
            loss_curve: Vec::new(),
            best_weights_ref: String::new(),
            wallclock_seconds: 0.0,
            status: RunStatus::Failed { reason: e.to_string() },
        },
    };
    record.id = id.to_string();
    Ok(record)
}

/// Trains every job exactly once. With a manifest path, completed rows are
/// appended as they finish, rows already present are skipped, and the file
/// is finally rewritten in job order (rows of other jobs follow, sorted by id).
/// Output does not depend on `workers`.
pub fn run_jobs(jobs: &[Job], opts: &RunOptions) -> Result<Manifest> {
    if opts.workers == 0 {
        return Err(Error::Argument("workers must be >= 1".into()));
    }
    let ids: Vec<String> = jobs.iter().map(Job::id).collect();
    let unique: HashSet<&String> = ids.iter().collect();
    if unique.len() != ids.len() {
        return Err(Error::Argument("duplicate jobs (same config and image)".into()));
    }

    let root = opts
        .manifest
        .as_ref()
        .map(|p| p.parent().map(Path::to_path_buf).unwrap_or_default());
    let mut done: HashMap<String, TrainRecord> = HashMap::new();
    let mut header = opts.header.clone();
    if let Some(dir) = root.as_ref().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    if let Some(path) = &opts.manifest {
        if path.is_file() {
            let existing = Manifest::load(path)?;
            header = existing.header;
            // Rewrite so a torn tail does not precede new appends.
            let mut m = Manifest::new(header.clone());
            m.records = existing.records;
            m.save(path)?;
            for r in m.records {
                done.insert(r.id.clone(), r);
            }
        }
    }
    let foreign: Vec<String> = {
        let mine: HashSet<&String> = ids.iter().collect();
        let mut v: Vec<String> = done.keys().filter(|k| !mine.contains(k)).cloned().collect();
        v.sort();
        v
    };

    let pending: Vec<(usize, &Job)> = jobs
        .iter()
        .enumerate()
        .filter(|(i, _)| !done.contains_key(&ids[*i]))
        .collect();
    log::info!("{} jobs, {} already done, {} to run", jobs.len(), jobs.len() - pending.len(), pending.len());

    let writer = match &opts.manifest {
        Some(p) => Some(Mutex::new(ManifestWriter::open(p, &header)?)),
        None => None,
    };
    let results: Mutex<HashMap<String, TrainRecord>> = Mutex::new(HashMap::new());
    let first_error: Mutex<Option<Error>> = Mutex::new(None);

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers)
        .build()
        .map_err(|e| Error::Argument(format!("cannot start worker pool: {e}")))?;
    pool.install(|| {
        pending.par_iter().for_each(|(i, job)| {
            let outcome = run_one(job, &ids[*i], root.as_deref()).and_then(|rec| {
                if let Some(w) = &writer {
                    w.lock().expect("writer lock").append(&rec)?;
                }
                log::info!("job {} finished: {:.3} dB", rec.id, rec.max_psnr);
                results.lock().expect("results lock").insert(rec.id.clone(), rec);
                Ok(())
            });
            if let Err(e) = outcome {
                first_error.lock().expect("error lock").get_or_insert(e);
            }
        })
    });
    if let Some(e) = first_error.into_inner().expect("error lock") {
        return Err(e);
    }

    done.extend(results.into_inner().expect("results lock"));
    let mut manifest = Manifest::new(header);
    manifest.records = ids.iter().chain(&foreign).filter_map(|id| done.remove(id)).collect();
    if let Some(path) = &opts.manifest {
        drop(writer);
        manifest.save(path)?;
    }
    Ok(manifest)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    /// Completed records with finite max PSNR.
    pub n: usize,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub min: f64,
    pub max: f64,
    /// Completed records that reached infinite PSNR (excluded from the statistics).
    pub perfect: usize,
    pub failed: usize,
    pub histogram: Vec<HistogramBin>,
}

pub const DEFAULT_BIN_WIDTH: f64 = 1.0;

pub fn summarize(manifest: &Manifest) -> Result<Summary> {
    summarize_with(manifest, DEFAULT_BIN_WIDTH)
}

pub fn summarize_with(manifest: &Manifest, bin_width: f64) -> Result<Summary> {
    if !(bin_width > 0.0) {
        return Err(Error::Argument("bin width must be positive".into()));
    }
    let mut failed = 0;
    let mut perfect = 0;
    let mut values = Vec::new();
    for r in &manifest.records {
        if !r.status.is_ok() {
            failed += 1;
        } else if r.max_psnr.is_finite() {
            values.push(r.max_psnr);
        } else {
            perfect += 1;
        }
    }
    if values.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let first = (min / bin_width).floor() as i64;
    let last = (max / bin_width).floor() as i64;
    let mut histogram: Vec<HistogramBin> = (first..=last)
        .map(|k| HistogramBin {
            lo: k as f64 * bin_width,
            hi: (k + 1) as f64 * bin_width,
            count: 0,
        })
        .collect();
    for v in &values {
        let k = ((v / bin_width).floor() as i64 - first) as usize;
        histogram[k].count += 1;
    }
    Ok(Summary {
        n: values.len(),
        mean,
        std,
        min,
        max,
        perfect,
        failed,
        histogram,
    })
}

pub fn write_histogram_csv(path: &Path, bins: &[HistogramBin]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for b in bins {
        w.serialize(b)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::synth;
    use crate::siren::CurvePoint;

    fn rec(psnr: f64, status: RunStatus) -> TrainRecord {
        TrainRecord {
            id: format!("{psnr}"),
            config: SirenConfig::new(2, 2, 0.1, 4, 0),
            image_id: "i".into(),
            max_psnr: psnr,
            argmax_step: 0,
            loss_curve: vec![CurvePoint { step: 0, psnr }],
            best_weights_ref: String::new(),
            wallclock_seconds: 0.0,
            status,
        }
    }

    fn manifest(records: Vec<TrainRecord>) -> Manifest {
        let mut m = Manifest::new(ManifestHeader::new(None, ""));
        m.records = records;
        m
    }

    #[test]
    fn summary_examples() {
        let s = summarize(&manifest(vec![rec(30.0, RunStatus::Completed)])).unwrap();
        assert_eq!((s.mean, s.std), (30.0, 0.0));
        let s = summarize(&manifest(vec![rec(20.0, RunStatus::Completed), rec(40.0, RunStatus::Completed)])).unwrap();
        assert_eq!((s.mean, s.std), (30.0, 10.0));
        assert_eq!(s.histogram.len(), 21);
        assert_eq!(s.histogram.iter().map(|b| b.count).sum::<usize>(), 2);
        let failed = rec(f64::NAN, RunStatus::Failed { reason: "x".into() });
        assert!(matches!(
            summarize(&manifest(vec![failed])),
            Err(Error::InsufficientData { .. })
        ));
    }

    #[test]
    fn empty_job_list() {
        let m = run_jobs(&[], &RunOptions::in_memory(2)).unwrap();
        assert!(m.records.is_empty());
    }

    #[test]
    fn failed_job_does_not_stop_others() {
        let img = Arc::new(synth::dead_leaves(8, 0));
        let jobs = vec![
            Job::new(SirenConfig::new(4, 3, 0.1, 8, 0).with_steps(5), img.clone()),
            Job::new(SirenConfig::new(4, 3, 0.1, 16, 0).with_steps(5), img),
        ];
        let m = run_jobs(&jobs, &RunOptions::in_memory(2)).unwrap();
        assert!(m.records[0].status.is_ok());
        assert!(matches!(m.records[1].status, RunStatus::Failed { .. }));
    }

    #[test]
    fn ids_depend_on_config_and_image() {
        let c = SirenConfig::new(4, 3, 0.1, 8, 0);
        assert_eq!(job_id(&c, "a"), job_id(&c, "a"));
        assert_ne!(job_id(&c, "a"), job_id(&c, "b"));
        assert_ne!(job_id(&c, "a"), job_id(&c.clone().with_seed(1), "a"));
    }
}
