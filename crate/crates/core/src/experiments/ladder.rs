use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::ImageTensor;
use crate::predictors::{rmse, PsnrPredictor, Query};
use crate::siren::{SirenConfig, TrainRecord};

use super::train_psnrs;

pub const DEFAULT_BUCKETS: usize = 30;
pub const ANCHORS: usize = 5;
pub const MIN_CALIBRATION_IMAGES: usize = 5;
/// Standard deviations of prediction error required above the target.
pub const CONFIDENCE_SIGMAS: f64 = 2.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rung {
    pub config: SirenConfig,
    pub size_bits: usize,
    /// Prediction RMSE in dB; NaN until calibrated.
    #[serde(with = "crate::floatser")]
    pub rmse: f64,
}

/// Architectures of strictly increasing size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchLadder {
    pub rungs: Vec<Rung>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SearchResult {
    pub rung: usize,
    pub config: SirenConfig,
    pub predicted_psnr: f64,
    pub rmse: f64,
    /// `predicted_psnr ± 2·rmse`.
    pub interval: (f64, f64),
}

fn arch_key(c: &SirenConfig) -> (usize, usize, u64, usize) {
    (c.width, c.depth, c.omega0.to_bits(), c.image_size)
}

/// Keeps, per log-uniform size bucket, the architecture with the highest
/// mean PSNR. Empty buckets are skipped.
pub fn build_ladder(records: &[TrainRecord], buckets: usize) -> Result<ArchLadder> {
    if buckets == 0 {
        return Err(Error::Argument("need at least one bucket".into()));
    }
    let mut archs: BTreeMap<(usize, usize, u64, usize), (SirenConfig, f64, usize)> = BTreeMap::new();
    for r in records.iter().filter(|r| r.status.is_ok() && r.max_psnr.is_finite()) {
        let e = archs.entry(arch_key(&r.config)).or_insert((r.config.clone(), 0.0, 0));
        e.1 += r.max_psnr;
        e.2 += 1;
    }
    if archs.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let sizes: Vec<f64> = archs.values().map(|a| a.0.size_bits() as f64).collect();
    let lo = sizes.iter().cloned().fold(f64::INFINITY, f64::min).ln();
    let hi = sizes.iter().cloned().fold(0.0, f64::max).ln();
    let span = (hi - lo).max(f64::MIN_POSITIVE);

    let mut best: Vec<Option<(SirenConfig, f64)>> = vec![None; buckets];
    for (cfg, sum, n) in archs.into_values() {
        let b = (((cfg.size_bits() as f64).ln() - lo) / span * buckets as f64).floor() as usize;
        let slot = &mut best[b.min(buckets - 1)];
        let m = sum / n as f64;
        if slot.as_ref().is_none_or(|(c, bm)| m > *bm || (m == *bm && cfg.size_bits() < c.size_bits())) {
            *slot = Some((cfg, m));
        }
    }
    let mut rungs: Vec<Rung> = Vec::new();
    for (b, slot) in best.into_iter().enumerate() {
        let Some((config, _)) = slot else {
            log::warn!("size bucket {b} has no records, skipped");
            continue;
        };
        let size_bits = config.size_bits();
        if rungs.last().is_some_and(|r| r.size_bits >= size_bits) {
            continue;
        }
        rungs.push(Rung {
            config,
            size_bits,
            rmse: f64::NAN,
        });
    }
    Ok(ArchLadder { rungs })
}

/// Piecewise-linear in size, constant beyond the outermost anchors.
pub fn interpolate_rmse(anchors: &[(usize, f64)], size_bits: usize) -> f64 {
    let x = size_bits as f64;
    match anchors {
        [] => f64::NAN,
        [(_, r)] => *r,
        _ => {
            if size_bits <= anchors[0].0 {
                return anchors[0].1;
            }
            for w in anchors.windows(2) {
                let ((x0, y0), (x1, y1)) = (w[0], w[1]);
                if size_bits <= x1 {
                    let t = (x - x0 as f64) / (x1 - x0) as f64;
                    return y0 + t * (y1 - y0);
                }
            }
            anchors[anchors.len() - 1].1
        }
    }
}

/// `ANCHORS` rung indices spread evenly over the ladder.
pub fn anchor_indices(n: usize) -> Vec<usize> {
    if n <= ANCHORS {
        return (0..n).collect();
    }
    let mut v: Vec<usize> = (0..ANCHORS)
        .map(|k| ((k * (n - 1)) as f64 / (ANCHORS - 1) as f64).round() as usize)
        .collect();
    v.dedup();
    v
}

/// RMSE of `predictor` against trained PSNRs for one architecture.
pub fn anchor_rmse(config: &SirenConfig, images: &[Arc<ImageTensor>], predictor: &dyn PsnrPredictor, workers: usize) -> Result<f64> {
    let mut actual = Vec::with_capacity(images.len());
    for img in images {
        let c = config.clone().with_image_size(img.width);
        actual.extend(train_psnrs(&[c], img, workers)?);
    }
    let preds: Vec<f64> = images
        .iter()
        .map(|img| predictor.predict(&Query::new(&config.clone().with_image_size(img.width), img)))
        .collect::<Result<_>>()?;
    rmse(&preds, &actual)
}

/// Trains the anchor architectures on held-out `images` and interpolates
/// prediction RMSE for every other rung.
pub fn calibrate_rmse(
    ladder: &ArchLadder,
    images: &[Arc<ImageTensor>],
    predictor: &dyn PsnrPredictor,
    workers: usize,
) -> Result<ArchLadder> {
    if images.len() < MIN_CALIBRATION_IMAGES {
        return Err(Error::InsufficientData {
            needed: MIN_CALIBRATION_IMAGES,
            got: images.len(),
        });
    }
    if ladder.rungs.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let anchors: Vec<(usize, f64)> = anchor_indices(ladder.rungs.len())
        .into_iter()
        .map(|i| {
            let r = &ladder.rungs[i];
            let e = anchor_rmse(&r.config, images, predictor, workers)?;
            log::info!("anchor {i} ({} bits): rmse {e:.3} dB", r.size_bits);
            Ok((r.size_bits, e))
        })
        .collect::<Result<_>>()?;
    Ok(ArchLadder {
        rungs: ladder
            .rungs
            .iter()
            .map(|r| Rung {
                rmse: interpolate_rmse(&anchors, r.size_bits),
                ..r.clone()
            })
            .collect(),
    })
}

/// Smallest index with `pred - 2·rmse >= target`.
pub fn select_rung(preds: &[f64], rmses: &[f64], target: f64) -> Result<usize> {
    if preds.len() != rmses.len() {
        return Err(Error::Dimension(format!("{} predictions vs {} RMSEs", preds.len(), rmses.len())));
    }
    if preds.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let bounds: Vec<f64> = preds.iter().zip(rmses).map(|(p, r)| p - CONFIDENCE_SIGMAS * r).collect();
    if let Some(i) = bounds.iter().position(|b| *b >= target) {
        return Ok(i);
    }
    let (best, bound) = bounds
        .iter()
        .copied()
        .enumerate()
        .filter(|(_, b)| !b.is_nan())
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap_or((0, f64::NAN));
    Err(Error::Infeasible { best, bound })
}

pub fn confident_search(image: &ImageTensor, target_psnr: f64, ladder: &ArchLadder, predictor: &dyn PsnrPredictor) -> Result<SearchResult> {
    if ladder.rungs.iter().any(|r| !(r.rmse >= 0.0)) {
        return Err(Error::Argument("ladder is not calibrated".into()));
    }
    let configs: Vec<SirenConfig> = ladder
        .rungs
        .iter()
        .map(|r| r.config.clone().with_image_size(image.width))
        .collect();
    let preds: Vec<f64> = configs
        .iter()
        .map(|c| predictor.predict(&Query::new(c, image)))
        .collect::<Result<_>>()?;
    let rmses: Vec<f64> = ladder.rungs.iter().map(|r| r.rmse).collect();
    let i = select_rung(&preds, &rmses, target_psnr)?;
    let half = CONFIDENCE_SIGMAS * rmses[i];
    Ok(SearchResult {
        rung: i,
        config: configs[i].clone(),
        predicted_psnr: preds[i],
        rmse: rmses[i],
        interval: (preds[i] - half, preds[i] + half),
    })
}

impl ArchLadder {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let l: ArchLadder = serde_json::from_str(&text)?;
        if l.rungs.windows(2).any(|w| w[0].size_bits >= w[1].size_bits) {
            return Err(Error::Format(format!("{}: rung sizes must strictly increase", path.display())));
        }
        Ok(l)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["rung", "width", "depth", "omega0", "size_bits", "rmse"])?;
        for (i, r) in self.rungs.iter().enumerate() {
            w.write_record([
                i.to_string(),
                r.config.width.to_string(),
                r.config.depth.to_string(),
                r.config.omega0.to_string(),
                r.size_bits.to_string(),
                r.rmse.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::siren::{CurvePoint, RunStatus};
    use proptest::prelude::*;

    #[test]
    fn hand_example() {
        let preds = [28.0, 29.5, 31.2, 33.0];
        assert_eq!(select_rung(&preds, &[0.5; 4], 30.0).unwrap(), 2);
        assert_eq!(select_rung(&preds, &[0.0; 4], 29.5).unwrap(), 1);
        match select_rung(&preds, &[0.5; 4], 40.0) {
            Err(Error::Infeasible { best, bound }) => {
                assert_eq!(best, 3);
                assert!((bound - 32.0).abs() < 1e-12);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn interpolation() {
        let a = [(100_000, 0.5), (200_000, 1.0)];
        assert!((interpolate_rmse(&a, 150_000) - 0.75).abs() < 1e-12);
        assert_eq!(interpolate_rmse(&a, 10), 0.5);
        assert_eq!(interpolate_rmse(&a, 10_000_000), 1.0);
    }

    #[test]
    fn uncalibrated_ladder_roundtrips() {
        let l = build_ladder(&[rec(8, 3, 20.0), rec(16, 3, 24.0)], 30).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("l.json");
        l.save(&p).unwrap();
        let back = ArchLadder::load(&p).unwrap();
        assert_eq!(back.rungs.len(), 2);
        assert!(back.rungs[0].rmse.is_nan());
    }

    struct Validating;

    impl PsnrPredictor for Validating {
        fn predict(&self, q: &Query) -> Result<f64> {
            let c = q.config.unwrap();
            c.validate()?;
            Ok(c.width as f64)
        }
    }

    #[test]
    fn search_moves_rungs_to_the_query_size() {
        let mut l = build_ladder(&[rec(8, 3, 20.0), rec(16, 3, 24.0)], 30).unwrap();
        for r in &mut l.rungs {
            r.rmse = 1.0;
        }
        let img = crate::imaging::synth::dead_leaves(20, 1);
        let s = confident_search(&img, 12.0, &l, &Validating).unwrap();
        assert_eq!(s.config.width, 16);
        assert_eq!(s.config.image_size, 20);
        assert!((s.config.omega0 - 0.1 * 20.0).abs() < 1e-12);
    }

    #[test]
    fn anchors_cover_ends() {
        assert_eq!(anchor_indices(3), vec![0, 1, 2]);
        assert_eq!(anchor_indices(30), vec![0, 7, 15, 22, 29]);
    }

    fn rec(width: usize, depth: usize, psnr: f64) -> TrainRecord {
        TrainRecord {
            id: String::new(),
            config: SirenConfig::new(width, depth, 0.1, 32, 1),
            image_id: "x".into(),
            max_psnr: psnr,
            argmax_step: 0,
            loss_curve: vec![CurvePoint { step: 0, psnr }],
            best_weights_ref: String::new(),
            wallclock_seconds: 0.0,
            status: RunStatus::Completed,
        }
    }

    #[test]
    fn ladder_keeps_best_per_bucket() {
        let mut recs = Vec::new();
        for w in [4usize, 8, 12, 16, 24, 32, 48, 64] {
            for d in [3usize, 5] {
                recs.push(rec(w, d, w as f64 + if d == 5 { 1.0 } else { 0.0 }));
            }
        }
        let l = build_ladder(&recs, 30).unwrap();
        assert!(l.rungs.windows(2).all(|w| w[0].size_bits < w[1].size_bits));
        assert!(l.rungs.len() >= 8);
        let one = build_ladder(&recs, 1).unwrap();
        assert_eq!(one.rungs.len(), 1);
        assert_eq!((one.rungs[0].config.width, one.rungs[0].config.depth), (64, 5));
    }

    proptest! {
        #[test]
        fn monotone_in_rmse_and_target(
            preds in prop::collection::vec(10.0f64..50.0, 1..30),
            r in 0.0f64..3.0,
            dr in 0.0f64..2.0,
            target in 10.0f64..50.0,
            dt in 0.0f64..5.0,
        ) {
            let mut sorted = preds.clone();
            sorted.sort_by(f64::total_cmp);
            let n = sorted.len();
            let tight = select_rung(&sorted, &vec![r; n], target).ok();
            let loose = select_rung(&sorted, &vec![r + dr; n], target);
            if let Ok(l) = loose {
                prop_assert!(tight.is_some_and(|t| t <= l));
            }
            let higher = select_rung(&sorted, &vec![r; n], target + dt);
            if let Ok(h) = higher {
                prop_assert!(tight.is_some_and(|t| t <= h));
            }
        }
    }
}
