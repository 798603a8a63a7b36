use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::imaging::{mean_color_psnr, ImageTensor};
use crate::siren::{init_siren, psnr_from_mse, train_observed, SirenConfig, SirenWeights, TrainRecord};

use super::{spectrum_at, NtkOptions};

/// Largest default snapshot step.
pub const MAX_SNAPSHOT: usize = 1 << 15;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RolloutPoint {
    /// Global training step (snapshot step plus rollout steps).
    pub step: usize,
    pub mse: f64,
    pub psnr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SnapshotCurve {
    pub snapshot_step: usize,
    /// Training loss of the snapshot weights.
    pub start_mse: f64,
    /// Largest eigenvalue of the scaled kernel, times η.
    pub eta_lambda_max: f64,
    /// Rollout steps until growing modes dominate, if any grow.
    pub divergence_step: Option<usize>,
    pub points: Vec<RolloutPoint>,
    /// Rollout PSNR `horizon` steps after the snapshot.
    pub asymptote_psnr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SnapshotStudy {
    pub record: TrainRecord,
    pub curves: Vec<SnapshotCurve>,
    /// PSNR of predicting every pixel as the mean color.
    pub dc_psnr: f64,
    pub horizon: usize,
}

/// `1, 2, 4, ...` up to `min(total, 2^15)`.
pub fn default_snapshot_steps(total: usize) -> Vec<usize> {
    std::iter::successors(Some(1usize), |s| Some(s * 2))
        .take_while(|&s| s <= total.min(MAX_SNAPSHOT))
        .collect()
}

fn psnr_or_floor(mse: f64) -> f64 {
    psnr_from_mse(mse).unwrap_or(f64::NAN)
}

/// Trains `config` on `image`, snapshotting weights at `snapshots`, and rolls
/// the linearized dynamics forward from each snapshot.
///
/// Each rollout is evaluated at every step of the recorded training curve
/// from its snapshot on, and once more `horizon` steps after the snapshot.
pub fn snapshot_extrapolate(
    config: &SirenConfig,
    image: &ImageTensor,
    snapshots: &[usize],
    opts: &NtkOptions,
    horizon: usize,
) -> Result<SnapshotStudy> {
    if let Some(&bad) = snapshots.iter().find(|&&s| s > config.steps) {
        return Err(Error::Argument(format!(
            "snapshot step {bad} is beyond the {} training steps",
            config.steps
        )));
    }
    let wanted: BTreeSet<usize> = snapshots.iter().copied().collect();
    let mut taken: BTreeMap<usize, (SirenWeights, f64)> = BTreeMap::new();
    let outcome = train_observed(config, image, init_siren(config), |step, w, psnr| {
        if wanted.contains(&step) {
            taken.insert(step, (w.clone(), psnr));
        }
    })?;
    let record = outcome.record;
    if let Some(&missing) = wanted.iter().find(|s| !taken.contains_key(s)) {
        return Err(Error::Training(format!("training stopped before snapshot step {missing}")));
    }

    let mut curves = Vec::with_capacity(taken.len());
    for (&n, (weights, psnr)) in &taken {
        let spec = spectrum_at(weights, config.omega0, image, opts)?;
        let start_mse = 4.0 * 10f64.powf(-psnr / 10.0);
        let points = record
            .loss_curve
            .iter()
            .filter(|p| p.step >= n)
            .map(|p| {
                let mse = spec.mse_at(p.step - n);
                RolloutPoint {
                    step: p.step,
                    mse,
                    psnr: psnr_or_floor(mse),
                }
            })
            .collect();
        log::debug!("snapshot {n}: eta*lambda_max = {:.4}", spec.eta * spec.lambda_max());
        curves.push(SnapshotCurve {
            snapshot_step: n,
            start_mse,
            eta_lambda_max: spec.eta * spec.lambda_max(),
            divergence_step: spec.divergence_step(),
            points,
            asymptote_psnr: psnr_or_floor(spec.mse_at(horizon)),
        });
    }
    Ok(SnapshotStudy {
        record,
        curves,
        dc_psnr: mean_color_psnr(image),
        horizon,
    })
}

/// One row per recorded training step: the true curve and every rollout,
/// as both PSNR and MSE. Rollouts are blank before their snapshot.
pub fn write_curves_csv(study: &SnapshotStudy, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["step".to_string(), "true_psnr".into(), "true_mse".into()];
    for c in &study.curves {
        header.push(format!("rollout_psnr_{}", c.snapshot_step));
        header.push(format!("rollout_mse_{}", c.snapshot_step));
    }
    w.write_record(&header)?;
    for p in &study.record.loss_curve {
        let mut row = vec![
            p.step.to_string(),
            p.psnr.to_string(),
            (4.0 * 10f64.powf(-p.psnr / 10.0)).to_string(),
        ];
        for c in &study.curves {
            match c.points.iter().find(|q| q.step == p.step) {
                Some(q) => {
                    row.push(q.psnr.to_string());
                    row.push(q.mse.to_string());
                }
                None => row.extend([String::new(), String::new()]),
            }
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::synth;

    #[test]
    fn default_steps() {
        assert_eq!(default_snapshot_steps(10), vec![1, 2, 4, 8]);
        assert_eq!(default_snapshot_steps(0), Vec::<usize>::new());
        assert_eq!(*default_snapshot_steps(1 << 20).last().unwrap(), 1 << 15);
    }

    #[test]
    fn curves_start_at_true_loss() {
        let img = synth::dead_leaves(8, 3);
        let cfg = SirenConfig::new(8, 3, 0.1, 8, 1).with_steps(20);
        let study = snapshot_extrapolate(&cfg, &img, &[0, 1, 4, 20], &NtkOptions::default(), 100).unwrap();
        assert_eq!(study.curves.len(), 4);
        for c in &study.curves {
            let first = c.points[0];
            assert_eq!(first.step, c.snapshot_step);
            assert!((first.mse - c.start_mse).abs() <= 1e-6 * c.start_mse);
        }
        let last = study.curves.last().unwrap();
        assert_eq!(last.points.len(), 1);
        let true_final = study.record.loss_curve.last().unwrap().psnr;
        assert!((last.points[0].psnr - true_final).abs() < 1e-9);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("curves.csv");
        write_curves_csv(&study, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("step,true_psnr,true_mse,rollout_psnr_0,rollout_mse_0"));
        assert_eq!(text.lines().count(), study.record.loss_curve.len() + 1);
    }

    #[test]
    fn snapshot_beyond_training_is_rejected() {
        let img = synth::dead_leaves(8, 3);
        let cfg = SirenConfig::new(4, 3, 0.1, 8, 1).with_steps(5);
        assert!(snapshot_extrapolate(&cfg, &img, &[8], &NtkOptions::default(), 10).is_err());
    }
}
