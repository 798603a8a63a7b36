//! Controlled studies built on the harness: seed variation, first-layer
//! attribution, depth bootstrap, power laws, codec correlation and the
//! confident architecture search.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::harness::{run_jobs, Job, RunOptions};
use crate::imaging::ImageTensor;
use crate::siren::{SirenConfig, TrainRecord};

pub mod bootstrap;
pub mod correlation;
pub mod ladder;
pub mod plot;
pub mod power;
pub mod seeds;

pub use bootstrap::{bootstrap_depth_selection, depth_sweep, write_sweep_csv, DepthSelection, MIN_RESAMPLES};
pub use correlation::{codec_correlation_study, CorrelationReport, CorrelationRow};
pub use ladder::{
    anchor_rmse, build_ladder, calibrate_rmse, confident_search, interpolate_rmse, select_rung, ArchLadder, Rung, SearchResult,
    CONFIDENCE_SIGMAS, DEFAULT_BUCKETS,
};
pub use plot::{Chart, Mark, Series};
pub use power::{power_chart, power_law_fit, power_law_from_records, width_sweep, write_power_csv, PowerLawFit};
pub use seeds::{
    f_test_greater, first_layer_attribution, pe_transfer, repetition_seed, sample_std, seed_variation, Attribution, PeTransfer,
    SeedVariation, TransferCell,
};

/// Trains every config on `image` through the harness, in config order.
pub fn train_records(configs: &[SirenConfig], image: &Arc<ImageTensor>, workers: usize) -> Result<Vec<TrainRecord>> {
    let jobs: Vec<Job> = configs.iter().map(|c| Job::new(c.clone(), Arc::clone(image))).collect();
    let manifest = run_jobs(&jobs, &RunOptions::in_memory(workers))?;
    for r in &manifest.records {
        if !r.status.is_ok() {
            return Err(Error::Training(format!("job {} did not complete: {:?}", r.id, r.status)));
        }
    }
    Ok(manifest.records)
}

/// Max PSNR of each config trained on `image`, in config order.
pub fn train_psnrs(configs: &[SirenConfig], image: &Arc<ImageTensor>, workers: usize) -> Result<Vec<f64>> {
    Ok(train_records(configs, image, workers)?.iter().map(|r| r.max_psnr).collect())
}
