use std::path::Path;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::imaging::ImageTensor;
use crate::predictors::{explained_variance, LinearFit};
use crate::siren::{SirenConfig, TrainRecord};

use super::plot::{Chart, Series};
use super::train_records;

/// `20 log10(2)`.
pub const DB_PER_DOUBLING_NUMERATOR: f64 = 6.020599913279624;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PowerLawFit {
    pub slope_per_doubling: f64,
    pub intercept: f64,
    pub r2: f64,
    /// `d` in `MSE ∝ P^(-2/d)`: `20 log10(2) / slope`.
    pub implied_manifold_dim: f64,
}

impl PowerLawFit {
    pub fn predict(&self, params: f64) -> f64 {
        self.intercept + self.slope_per_doubling * params.log2()
    }
}

/// Least squares `PSNR = intercept + slope * log2(P)`.
pub fn power_law_fit(points: &[(usize, f64)]) -> Result<PowerLawFit> {
    let mut distinct: Vec<usize> = points.iter().map(|p| p.0).collect();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(Error::InsufficientData {
            needed: 3,
            got: distinct.len(),
        });
    }
    if points.iter().any(|p| p.0 == 0 || !p.1.is_finite()) {
        return Err(Error::Fit("parameter counts must be positive and PSNRs finite".into()));
    }
    let x: Vec<f64> = points.iter().map(|p| (p.0 as f64).log2()).collect();
    let y: Vec<f64> = points.iter().map(|p| p.1).collect();
    let fit = LinearFit::fit(&x, &y)?;
    let r2 = match explained_variance(&fit.predict_all(&x), &y) {
        Ok(ev) => ev,
        Err(Error::UndefinedVariance) => 1.0,
        Err(e) => return Err(e),
    };
    Ok(PowerLawFit {
        slope_per_doubling: fit.slope,
        intercept: fit.intercept,
        r2,
        implied_manifold_dim: DB_PER_DOUBLING_NUMERATOR / fit.slope,
    })
}

/// Fit over completed records, using each record's parameter count.
pub fn power_law_from_records(records: &[TrainRecord]) -> Result<PowerLawFit> {
    let pts: Vec<(usize, f64)> = records
        .iter()
        .filter(|r| r.status.is_ok())
        .map(|r| (r.config.param_count(), r.max_psnr))
        .collect();
    power_law_fit(&pts)
}

/// Trains the template at each width.
pub fn width_sweep(template: &SirenConfig, widths: &[usize], image: &Arc<ImageTensor>, workers: usize) -> Result<Vec<TrainRecord>> {
    let configs: Vec<SirenConfig> = widths
        .iter()
        .map(|&w| {
            let mut c = template.clone();
            c.width = w;
            c
        })
        .collect();
    train_records(&configs, image, workers)
}

pub fn write_power_csv(records: &[TrainRecord], fit: &PowerLawFit, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["image_id", "width", "depth", "params", "max_psnr", "fitted_psnr"])?;
    for r in records {
        let p = r.config.param_count();
        w.write_record([
            r.image_id.clone(),
            r.config.width.to_string(),
            r.config.depth.to_string(),
            p.to_string(),
            r.max_psnr.to_string(),
            fit.predict(p as f64).to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn power_chart(records: &[TrainRecord], fit: &PowerLawFit) -> Chart {
    let pts: Vec<(f64, f64)> = records
        .iter()
        .map(|r| (r.config.param_count() as f64, r.max_psnr))
        .collect();
    let (lo, hi) = pts
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(a, b), p| (a.min(p.0), b.max(p.0)));
    let line = if lo.is_finite() {
        vec![(lo, fit.predict(lo)), (hi, fit.predict(hi))]
    } else {
        Vec::new()
    };
    Chart::new(
        &format!(
            "{:.2} dB per doubling, r2 {:.3}, d {:.2}",
            fit.slope_per_doubling, fit.r2, fit.implied_manifold_dim
        ),
        "parameters",
        "max PSNR (dB)",
    )
    .log_x()
    .with(Series::points("runs", pts))
    .with(Series::line("fit", line))
}
