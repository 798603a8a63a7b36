//! Gaussian-process regression with a scaled RBF kernel plus white noise.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

use super::metrics::{mean, variance};

/// Cubic-cost guard on the training-set size.
pub const MAX_TRAINING_POINTS: usize = 5000;
/// Jitters tried in order, relative to the signal variance.
pub const JITTERS: [f64; 5] = [0.0, 1e-12, 1e-10, 1e-8, 1e-6];

/// `k(a, b) = signal_var * exp(-|a - b|^2 / (2 length_scale^2)) + noise_var * [a == b]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpHyper {
    pub signal_var: f64,
    pub length_scale: f64,
    pub noise_var: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GpOptions {
    pub starts: usize,
    pub iterations: usize,
    /// Hyperparameters are searched on at most this many training points.
    pub search_subsample: Option<usize>,
    pub seed: u64,
    /// Skips the search and uses these values.
    pub fixed: Option<GpHyper>,
}

impl Default for GpOptions {
    fn default() -> Self {
        GpOptions {
            starts: 8,
            iterations: 200,
            search_subsample: Some(400),
            seed: 0,
            fixed: None,
        }
    }
}

/// A fitted GP. Only the hyperparameters and the scaled training data are
/// serialized; the factorization is rebuilt on load.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GpModel {
    pub hyper: GpHyper,
    /// Per-dimension training-set standard deviations (1 for constant columns).
    pub scales: Vec<f64>,
    pub dim: usize,
    /// Scaled training features, row-major `n x dim`.
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub y_mean: f64,
    pub jitter: f64,
    pub log_marginal_likelihood: f64,
    #[serde(skip)]
    factor: Option<Factor>,
}

#[derive(Clone, Debug)]
struct Factor {
    chol: DMatrix<f64>,
    alpha: DVector<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn kernel_matrix(x: &[f64], dim: usize, h: &GpHyper, extra_diag: f64) -> DMatrix<f64> {
    let n = x.len() / dim;
    let inv = -0.5 / (h.length_scale * h.length_scale);
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        let xi = &x[i * dim..(i + 1) * dim];
        for j in 0..i {
            let v = h.signal_var * (inv * sq_dist(xi, &x[j * dim..(j + 1) * dim])).exp();
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
        k[(i, i)] = h.signal_var + h.noise_var + extra_diag;
    }
    k
}

/// Cholesky with escalating jitter. Returns the factor, the jitter used and
/// the log marginal likelihood of the centered targets.
fn factorize(x: &[f64], dim: usize, yc: &[f64], h: &GpHyper) -> Result<(Factor, f64, f64)> {
    for j in JITTERS {
        let jitter = j * h.signal_var;
        let Some(ch) = kernel_matrix(x, dim, h, jitter).cholesky() else {
            continue;
        };
        let y = DVector::from_column_slice(yc);
        let alpha = ch.solve(&y);
        let l = ch.l();
        let log_det_half: f64 = l.diagonal().iter().map(|v| v.ln()).sum();
        let n = yc.len() as f64;
        let lml = -0.5 * y.dot(&alpha) - log_det_half - 0.5 * n * (2.0 * std::f64::consts::PI).ln();
        return Ok((Factor { chol: l, alpha }, jitter, lml));
    }
    Err(Error::Conditioning {
        jitter: JITTERS[JITTERS.len() - 1],
    })
}

// Search space, in log units relative to the target variance.
const BOUNDS: [(f64, f64); 3] = [(-6.9, 6.9), (-4.6, 4.6), (-18.4, 0.0)];

fn hyper_from(u: &[f64; 3], var_y: f64) -> GpHyper {
    GpHyper {
        signal_var: var_y * u[0].exp(),
        length_scale: u[1].exp(),
        noise_var: var_y * u[2].exp(),
    }
}

fn coordinate_search(x: &[f64], dim: usize, yc: &[f64], var_y: f64, opts: &GpOptions) -> GpHyper {
    let lml = |u: &[f64; 3]| -> f64 {
        factorize(x, dim, yc, &hyper_from(u, var_y)).map_or(f64::NEG_INFINITY, |(_, _, l)| l)
    };
    let mut r = rng::stream(opts.seed, 0x6A7);
    let mut best_u = [0.0, 0.0, (0.1f64).ln()];
    let mut best = f64::NEG_INFINITY;
    for s in 0..opts.starts.max(1) {
        let mut u = if s == 0 {
            [0.0, 0.0, (0.1f64).ln()]
        } else {
            [0, 1, 2].map(|k| rng::uniform(&mut r, BOUNDS[k].0, BOUNDS[k].1))
        };
        let mut f = lml(&u);
        let mut step = 1.0;
        for _ in 0..opts.iterations {
            let mut improved = false;
            for k in 0..3 {
                for dir in [1.0, -1.0] {
                    let mut c = u;
                    c[k] = (c[k] + dir * step).clamp(BOUNDS[k].0, BOUNDS[k].1);
                    let fc = lml(&c);
                    if fc > f {
                        u = c;
                        f = fc;
                        improved = true;
                        break;
                    }
                }
            }
            if !improved {
                step *= 0.5;
                if step < 1e-3 {
                    break;
                }
            }
        }
        if f > best {
            best = f;
            best_u = u;
        }
    }
    hyper_from(&best_u, var_y)
}

impl GpModel {
    /// Fits a GP to rows of `x` (row-major, `y.len()` rows).
    pub fn fit(x: &[f64], y: &[f64], opts: &GpOptions) -> Result<Self> {
        let n = y.len();
        if n == 0 {
            return Err(Error::InsufficientData { needed: 1, got: 0 });
        }
        if n > MAX_TRAINING_POINTS {
            return Err(Error::Argument(format!(
                "{n} training points exceeds the limit of {MAX_TRAINING_POINTS}"
            )));
        }
        if x.len() % n != 0 || x.is_empty() {
            return Err(Error::Dimension(format!("{} feature values for {n} rows", x.len())));
        }
        let dim = x.len() / n;
        if x.iter().chain(y).any(|v| !v.is_finite()) {
            return Err(Error::Argument("non-finite training data".into()));
        }

        let scales: Vec<f64> = (0..dim)
            .map(|d| {
                let col: Vec<f64> = (0..n).map(|i| x[i * dim + d]).collect();
                let s = variance(&col).sqrt();
                if s > 0.0 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        let xs: Vec<f64> = x.iter().enumerate().map(|(i, v)| v / scales[i % dim]).collect();
        let y_mean = mean(y);
        let yc: Vec<f64> = y.iter().map(|v| v - y_mean).collect();
        let var_y = variance(y).max(1e-12);

        let hyper = match opts.fixed {
            Some(h) => h,
            None => {
                let idx: Vec<usize> = match opts.search_subsample {
                    Some(m) if m < n => {
                        let mut all: Vec<usize> = (0..n).collect();
                        rng::shuffle(&mut rng::stream(opts.seed, 0x5B), &mut all);
                        let mut pick = all[..m].to_vec();
                        pick.sort_unstable();
                        pick
                    }
                    _ => (0..n).collect(),
                };
                let sx: Vec<f64> = idx.iter().flat_map(|&i| xs[i * dim..(i + 1) * dim].iter().copied()).collect();
                let sy: Vec<f64> = idx.iter().map(|&i| yc[i]).collect();
                coordinate_search(&sx, dim, &sy, var_y, opts)
            }
        };
        let (factor, jitter, lml) = factorize(&xs, dim, &yc, &hyper)?;
        Ok(GpModel {
            hyper,
            scales,
            dim,
            x: xs,
            y: y.to_vec(),
            y_mean,
            jitter,
            log_marginal_likelihood: lml,
            factor: Some(factor),
        })
    }

    fn factor(&self) -> Result<&Factor> {
        self.factor
            .as_ref()
            .ok_or_else(|| Error::Format("GP factorization missing; call rebuild()".into()))
    }

    /// Recomputes the factorization after deserialization.
    pub fn rebuild(&mut self) -> Result<()> {
        let yc: Vec<f64> = self.y.iter().map(|v| v - self.y_mean).collect();
        let k = kernel_matrix(&self.x, self.dim, &self.hyper, self.jitter);
        let ch = k.cholesky().ok_or(Error::Conditioning { jitter: self.jitter })?;
        let alpha = ch.solve(&DVector::from_column_slice(&yc));
        self.factor = Some(Factor { chol: ch.l(), alpha });
        Ok(())
    }

    /// Predictive mean and variance (including the noise term) at one point.
    pub fn predict(&self, x: &[f64]) -> Result<(f64, f64)> {
        if x.len() != self.dim {
            return Err(Error::Dimension(format!("expected {} features, got {}", self.dim, x.len())));
        }
        let f = self.factor()?;
        let q: Vec<f64> = x.iter().zip(&self.scales).map(|(v, s)| v / s).collect();
        let inv = -0.5 / (self.hyper.length_scale * self.hyper.length_scale);
        let n = self.y.len();
        let k = DVector::from_iterator(
            n,
            (0..n).map(|i| self.hyper.signal_var * (inv * sq_dist(&q, &self.x[i * self.dim..(i + 1) * self.dim])).exp()),
        );
        let mean = self.y_mean + k.dot(&f.alpha);
        let v = f
            .chol
            .solve_lower_triangular(&k)
            .ok_or(Error::Conditioning { jitter: self.jitter })?;
        let var = (self.hyper.signal_var + self.hyper.noise_var - v.dot(&v)).max(self.hyper.noise_var);
        Ok((mean, var))
    }

    pub fn predict_many(&self, x: &[f64]) -> Result<Vec<(f64, f64)>> {
        x.chunks(self.dim).map(|row| self.predict(row)).collect()
    }
}
