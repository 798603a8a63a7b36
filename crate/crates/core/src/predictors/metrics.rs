use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Prediction quality on a set of examples.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rmse: f64,
    pub explained_variance: f64,
    pub n: usize,
}

impl MetricReport {
    pub fn compute(pred: &[f64], actual: &[f64]) -> Result<Self> {
        Ok(MetricReport {
            rmse: rmse(pred, actual)?,
            explained_variance: explained_variance(pred, actual)?,
            n: pred.len(),
        })
    }
}

fn check(pred: &[f64], actual: &[f64], min: usize) -> Result<()> {
    if pred.len() != actual.len() {
        return Err(Error::Dimension(format!(
            "{} predictions vs {} targets",
            pred.len(),
            actual.len()
        )));
    }
    if pred.len() < min {
        return Err(Error::InsufficientData {
            needed: min,
            got: pred.len(),
        });
    }
    Ok(())
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Population variance.
pub fn variance(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64
}

pub fn rmse(pred: &[f64], actual: &[f64]) -> Result<f64> {
    check(pred, actual, 1)?;
    let s: f64 = pred.iter().zip(actual).map(|(p, a)| (p - a) * (p - a)).sum();
    Ok((s / pred.len() as f64).sqrt())
}

/// `1 - Var[Y - Yhat] / Var[Y]` with population variances.
pub fn explained_variance(pred: &[f64], actual: &[f64]) -> Result<f64> {
    check(pred, actual, 2)?;
    let var_y = variance(actual);
    if var_y <= 0.0 {
        return Err(Error::UndefinedVariance);
    }
    let resid: Vec<f64> = actual.iter().zip(pred).map(|(a, p)| a - p).collect();
    Ok(1.0 - variance(&resid) / var_y)
}

/// Lowest RMSE any predictor can reach when targets carry seed noise,
/// estimated from pairs of runs that differ only in seed:
/// `sqrt(sum (y1 - y2)^2 / 2N)`.
pub fn irreducible_error(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Argument("no pairs".into()));
    }
    let s: f64 = pairs.iter().map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((s / (2.0 * pairs.len() as f64)).sqrt())
}

/// Ordinary least squares `y = slope * x + intercept`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
}

impl LinearFit {
    pub fn fit(x: &[f64], y: &[f64]) -> Result<Self> {
        check(x, y, 2)?;
        let (mx, my) = (mean(x), mean(y));
        let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
        if !(sxx > 1e-300) {
            return Err(Error::Fit("predictor has zero variance".into()));
        }
        let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let slope = sxy / sxx;
        Ok(LinearFit {
            slope,
            intercept: my - slope * mx,
        })
    }

    pub fn predict(&self, x: f64) -> f64 {
        self.slope * x + self.intercept
    }

    pub fn predict_all(&self, x: &[f64]) -> Vec<f64> {
        x.iter().map(|&v| self.predict(v)).collect()
    }
}
