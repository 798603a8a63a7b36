use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::siren::TrainRecord;

use super::metrics::{LinearFit, MetricReport};

/// Linear map from the best PSNR seen by step `m` to the best PSNR seen by step `n`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepExtrapolation {
    pub m: usize,
    pub n: usize,
    pub fit: LinearFit,
    /// In-sample metrics of the fit.
    pub report: MetricReport,
}

impl StepExtrapolation {
    pub fn predict(&self, psnr_at_m: f64) -> f64 {
        self.fit.predict(psnr_at_m)
    }
}

fn running_max(r: &TrainRecord, step: usize) -> Result<f64> {
    let last = r.loss_curve.last().map(|p| p.step).unwrap_or(0);
    if r.psnr_at(step).is_none() || step > last {
        return Err(Error::Argument(format!("record {} has no curve point at step {step}", r.id)));
    }
    Ok(r.max_psnr_until(step).expect("curve is non-empty"))
}

/// Fits PSNR@n on PSNR@m over completed records, where PSNR@k is the best
/// PSNR reached within the first `k` steps. Metrics are in-sample.
pub fn extrapolate_from_step(records: &[TrainRecord], m: usize, n: usize) -> Result<StepExtrapolation> {
    let usable: Vec<&TrainRecord> = records
        .iter()
        .filter(|r| r.status.is_ok() && r.max_psnr.is_finite())
        .collect();
    if usable.len() < 3 {
        return Err(Error::InsufficientData {
            needed: 3,
            got: usable.len(),
        });
    }
    let mut x = Vec::with_capacity(usable.len());
    let mut y = Vec::with_capacity(usable.len());
    for r in usable {
        x.push(running_max(r, m)?);
        y.push(running_max(r, n)?);
    }
    let fit = LinearFit::fit(&x, &y)?;
    let report = MetricReport::compute(&fit.predict_all(&x), &y)?;
    Ok(StepExtrapolation { m, n, fit, report })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::siren::{CurvePoint, RunStatus, SirenConfig};

    fn record(points: &[(usize, f64)]) -> TrainRecord {
        TrainRecord {
            id: String::new(),
            config: SirenConfig::new(2, 2, 0.1, 4, 0),
            image_id: String::new(),
            max_psnr: points.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max),
            argmax_step: 0,
            loss_curve: points.iter().map(|&(step, psnr)| CurvePoint { step, psnr }).collect(),
            best_weights_ref: String::new(),
            wallclock_seconds: 0.0,
            status: RunStatus::Completed,
        }
    }

    #[test]
    fn converged_curves_give_identity() {
        let recs: Vec<TrainRecord> = (0..5).map(|i| record(&[(0, 10.0), (100, 20.0 + i as f64), (200, 20.0 + i as f64)])).collect();
        let e = extrapolate_from_step(&recs, 100, 200).unwrap();
        assert!((e.fit.slope - 1.0).abs() < 1e-12);
        assert!((e.report.explained_variance - 1.0).abs() < 1e-12);
    }

    #[test]
    fn recovers_planted_slope() {
        let mut r = rng::stream(4, 0);
        let recs: Vec<TrainRecord> = (0..400)
            .map(|_| {
                let a = rng::uniform(&mut r, 15.0, 35.0);
                record(&[(0, 5.0), (100, a), (1000, 1.1 * a + 0.1 * rng::normal(&mut r))])
            })
            .collect();
        let e = extrapolate_from_step(&recs, 100, 1000).unwrap();
        assert!((e.fit.slope - 1.1).abs() < 0.02, "{}", e.fit.slope);
    }

    #[test]
    fn needs_three_records_and_covered_steps() {
        let recs = vec![record(&[(0, 1.0), (10, 2.0)]); 2];
        assert!(matches!(
            extrapolate_from_step(&recs, 0, 10),
            Err(Error::InsufficientData { .. })
        ));
        let recs = vec![record(&[(0, 1.0), (10, 2.0)]); 3];
        assert!(extrapolate_from_step(&recs, 0, 20).is_err());
    }
}
