//! Empirical tangent-kernel analysis: linearized full-batch gradient descent
//! `r_t = (I - ηΘ)^t r_0` rolled out through the kernel's eigenbasis.
//!
//! Dense kernels need `8 (3N)²` bytes and Jacobians `8 · 3N · P` bytes;
//! both are checked against [`NtkOptions::memory_budget`].

mod kernel;
mod snapshot;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{coord_grid, normalize, ImageTensor};
use crate::siren::{forward, SirenWeights, OUT_DIM};

pub use kernel::{empirical_ntk, jacobian, siren_ntk};
pub use snapshot::{
    default_snapshot_steps, snapshot_extrapolate, write_curves_csv, RolloutPoint, SnapshotCurve, SnapshotStudy,
};

pub const DEFAULT_ETA: f64 = 0.002;
pub const DEFAULT_MAX_IMAGE_SIZE: usize = 32;
pub const DEFAULT_MEMORY_BUDGET: usize = 1 << 30;

/// How the kernel is scaled before the rollout.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelScale {
    /// `Θ = J Jᵀ` as is.
    Raw,
    /// `Θ · 2 / 3N`, the kernel of gradient descent on the mean squared error
    /// the network is trained with.
    #[default]
    MeanSquaredError,
}

impl KernelScale {
    pub fn factor(self, outputs: usize) -> f64 {
        match self {
            KernelScale::Raw => 1.0,
            KernelScale::MeanSquaredError => 2.0 / outputs as f64,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectrumRoute {
    /// Gram route when there are fewer parameters than outputs.
    #[default]
    Auto,
    /// Eigendecomposition of the `3N x 3N` kernel.
    Dense,
    /// Eigendecomposition of `JᵀJ` (`P x P`).
    Gram,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NtkOptions {
    pub eta: f64,
    pub scale: KernelScale,
    pub route: SpectrumRoute,
    pub memory_budget: usize,
    pub max_image_size: usize,
}

impl Default for NtkOptions {
    fn default() -> Self {
        NtkOptions {
            eta: DEFAULT_ETA,
            scale: KernelScale::default(),
            route: SpectrumRoute::default(),
            memory_budget: DEFAULT_MEMORY_BUDGET,
            max_image_size: DEFAULT_MAX_IMAGE_SIZE,
        }
    }
}

/// Eigenvalues of the (scaled) kernel, descending, with the residual
/// `y - y_0` expressed in the matching eigenvectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NtkSpectrum {
    pub eigenvalues: Vec<f64>,
    pub coefficients: Vec<f64>,
    pub eta: f64,
    pub pixels: usize,
}

fn log_sum_exp(terms: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = terms.filter(|t| *t > f64::NEG_INFINITY).collect();
    let Some(max) = v.iter().copied().reduce(f64::max) else {
        return f64::NEG_INFINITY;
    };
    if max == f64::INFINITY {
        return max;
    }
    max + v.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

impl NtkSpectrum {
    pub fn new(mut eigenvalues: Vec<f64>, mut coefficients: Vec<f64>, eta: f64, pixels: usize) -> Result<Self> {
        if eigenvalues.len() != coefficients.len() {
            return Err(Error::Dimension(format!(
                "{} eigenvalues vs {} coefficients",
                eigenvalues.len(),
                coefficients.len()
            )));
        }
        if !(eta >= 0.0 && eta.is_finite()) {
            return Err(Error::Argument(format!("eta must be finite and >= 0, got {eta}")));
        }
        if eigenvalues.iter().chain(&coefficients).any(|v| !v.is_finite()) {
            return Err(Error::Argument("non-finite spectrum".into()));
        }
        let mut order: Vec<usize> = (0..eigenvalues.len()).collect();
        order.sort_by(|&a, &b| eigenvalues[b].total_cmp(&eigenvalues[a]));
        eigenvalues = order.iter().map(|&i| eigenvalues[i]).collect();
        coefficients = order.iter().map(|&i| coefficients[i]).collect();
        Ok(NtkSpectrum {
            eigenvalues,
            coefficients,
            eta,
            pixels,
        })
    }

    /// Decomposes a symmetric kernel after explicit symmetrization.
    pub fn from_kernel(theta: &DMatrix<f64>, residual: &[f64], eta: f64) -> Result<Self> {
        let m = residual.len();
        if theta.nrows() != m || theta.ncols() != m {
            return Err(Error::Dimension(format!(
                "kernel is {}x{}, residual has {m} entries",
                theta.nrows(),
                theta.ncols()
            )));
        }
        let sym = (theta + theta.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sym);
        let c = eig.eigenvectors.tr_mul(&DVector::from_column_slice(residual));
        Self::new(eig.eigenvalues.as_slice().to_vec(), c.as_slice().to_vec(), eta, m / OUT_DIM)
    }

    /// Spectrum of `scale · J Jᵀ` through the `P x P` Gram matrix `JᵀJ`.
    ///
    /// Nonzero eigenvalues are shared; the left singular vectors are
    /// `J v / sqrt(λ)`. Whatever part of the residual lies outside their span
    /// is assigned to a zero eigenvalue, and the rest of the null space is
    /// padded with zeros.
    pub fn from_jacobian_gram(j: &DMatrix<f64>, scale: f64, residual: &[f64], eta: f64) -> Result<Self> {
        let m = j.nrows();
        if residual.len() != m {
            return Err(Error::Dimension(format!("{m} Jacobian rows vs {} residuals", residual.len())));
        }
        let g = j.tr_mul(j);
        let g = (&g + g.transpose()) * 0.5;
        let eig = SymmetricEigen::new(g);
        let r = DVector::from_column_slice(residual);
        let jtr = j.tr_mul(&r);
        let lmax = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
        let cutoff = lmax * 1e-12 * (m.max(j.ncols()) as f64);
        let mut lambdas = Vec::with_capacity(m);
        let mut coeffs = Vec::with_capacity(m);
        let mut captured = 0.0;
        for (k, &lam) in eig.eigenvalues.iter().enumerate() {
            if lam > cutoff && lambdas.len() < m {
                let c = eig.eigenvectors.column(k).dot(&jtr) / lam.sqrt();
                captured += c * c;
                lambdas.push(lam * scale);
                coeffs.push(c);
            }
        }
        if lambdas.len() < m {
            lambdas.push(0.0);
            coeffs.push((r.norm_squared() - captured).max(0.0).sqrt());
        }
        lambdas.resize(m, 0.0);
        coeffs.resize(m, 0.0);
        Self::new(lambdas, coeffs, eta, m / OUT_DIM)
    }

    pub fn outputs(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn lambda_max(&self) -> f64 {
        self.eigenvalues.first().copied().unwrap_or(0.0)
    }

    /// Checks the PSD and norm-preservation invariants.
    pub fn validate(&self, residual_norm_sq: f64) -> Result<()> {
        let lmax = self.lambda_max();
        if let Some(&low) = self.eigenvalues.last() {
            if low < -1e-8 * lmax.abs() {
                return Err(Error::Fit(format!("kernel is not PSD: eigenvalue {low} vs max {lmax}")));
            }
        }
        let total: f64 = self.coefficients.iter().map(|c| c * c).sum();
        if (total - residual_norm_sq).abs() > 1e-6 * residual_norm_sq.max(f64::MIN_POSITIVE) {
            return Err(Error::Fit(format!("coefficients carry {total}, residual has {residual_norm_sq}")));
        }
        Ok(())
    }

    fn log_terms(&self, t: f64) -> impl Iterator<Item = (bool, f64)> + '_ {
        self.eigenvalues.iter().zip(&self.coefficients).map(move |(&lam, &c)| {
            let rate = (1.0 - self.eta * lam).abs();
            let lc = 2.0 * c.abs().ln();
            let term = if t == 0.0 {
                lc
            } else if rate == 0.0 {
                f64::NEG_INFINITY
            } else {
                lc + 2.0 * t * rate.ln()
            };
            (rate > 1.0, term)
        })
    }

    /// `ℒ(t) = Σ c_k² (1 - ηλ_k)^{2t}`, a sum of squares over all `3N` outputs.
    pub fn loss_at(&self, t: usize) -> f64 {
        log_sum_exp(self.log_terms(t as f64).map(|(_, v)| v)).exp()
    }

    /// Mean squared error after `t` linearized steps.
    pub fn mse_at(&self, t: usize) -> f64 {
        self.loss_at(t) / self.outputs().max(1) as f64
    }

    /// Whether any mode has `ηλ > 1`, where its factor `1 - ηλ` turns negative.
    pub fn has_oscillating_mode(&self) -> bool {
        self.eta * self.lambda_max() > 1.0
    }

    /// Whether any mode has `ηλ > 2` and so grows without bound.
    pub fn has_divergent_mode(&self) -> bool {
        self.eta * self.lambda_max() > 2.0
    }

    /// First step at which the growing modes carry more loss than the decaying ones.
    pub fn divergence_step(&self) -> Option<usize> {
        if !self.has_divergent_mode() {
            return None;
        }
        let gap = |t: f64| -> f64 {
            let (mut grow, mut rest) = (Vec::new(), Vec::new());
            for (g, v) in self.log_terms(t) {
                if g {
                    grow.push(v);
                } else {
                    rest.push(v);
                }
            }
            log_sum_exp(grow.into_iter()) - log_sum_exp(rest.into_iter())
        };
        let growing_mass = self
            .eigenvalues
            .iter()
            .zip(&self.coefficients)
            .any(|(&l, &c)| self.eta * l > 2.0 && c != 0.0);
        if !growing_mass {
            return None;
        }
        if gap(0.0) > 0.0 {
            return Some(0);
        }
        let mut hi = 1usize;
        while gap(hi as f64) <= 0.0 {
            hi = hi.checked_mul(2)?;
            if hi > 1 << 50 {
                return None;
            }
        }
        let mut lo = hi / 2;
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if gap(mid as f64) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Some(hi)
    }
}

/// `ℒ(0..=steps)`.
pub fn ntk_rollout(spectrum: &NtkSpectrum, steps: usize) -> Vec<f64> {
    (0..=steps).map(|t| spectrum.loss_at(t)).collect()
}

fn check_image(image: &ImageTensor, opts: &NtkOptions) -> Result<()> {
    if image.height != image.width {
        return Err(Error::Dimension("tangent-kernel analysis needs a square image".into()));
    }
    if image.width > opts.max_image_size {
        return Err(Error::Argument(format!(
            "image is {0}x{0}; the dense kernel is limited to {1}x{1}",
            image.width, opts.max_image_size
        )));
    }
    Ok(())
}

/// Kernel spectrum at `weights` for fitting `image`, choosing the dense or
/// Gram route per `opts.route`.
pub fn spectrum_at(weights: &SirenWeights, omega0: f64, image: &ImageTensor, opts: &NtkOptions) -> Result<NtkSpectrum> {
    check_image(image, opts)?;
    let coords = coord_grid(image.width);
    let targets = normalize(image);
    let y0 = forward(weights, omega0, &coords)?;
    let residual: Vec<f64> = targets.iter().zip(&y0).map(|(y, f)| y - f).collect();
    let m = residual.len();
    let p = weights.param_count();
    let scale = opts.scale.factor(m);
    let gram = match opts.route {
        SpectrumRoute::Dense => false,
        SpectrumRoute::Gram => true,
        SpectrumRoute::Auto => p < m && (m * p).saturating_mul(8) <= opts.memory_budget,
    };
    let spec = if gram {
        let j = jacobian(weights, omega0, &coords, opts.memory_budget)?;
        NtkSpectrum::from_jacobian_gram(&j, scale, &residual, opts.eta)?
    } else {
        let theta = siren_ntk(weights, omega0, &coords, opts.memory_budget)? * scale;
        NtkSpectrum::from_kernel(&theta, &residual, opts.eta)?
    };
    let norm_sq: f64 = residual.iter().map(|r| r * r).sum();
    spec.validate(norm_sq)?;
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::siren::{init_siren, loss_and_grad, SirenConfig};
    use proptest::prelude::*;

    fn single(lam: f64, c: f64, eta: f64) -> NtkSpectrum {
        NtkSpectrum::new(vec![lam], vec![c], eta, 1).unwrap()
    }

    #[test]
    fn identity_kernel_decays_geometrically() {
        let theta = DMatrix::<f64>::identity(3, 3);
        let r = [0.6, 0.0, 0.8];
        let s = NtkSpectrum::from_kernel(&theta, &r, 0.1).unwrap();
        for t in 0..50 {
            let want = 0.81f64.powi(t as i32);
            assert!((s.loss_at(t) - want).abs() <= 1e-12, "t={t}");
        }
    }

    #[test]
    fn zero_eta_is_flat() {
        let s = NtkSpectrum::new(vec![5.0, 1.0], vec![1.0, 2.0], 0.0, 1).unwrap();
        assert!(ntk_rollout(&s, 20).iter().all(|&l| (l - 5.0).abs() < 1e-12));
    }

    #[test]
    fn large_eigenvalue_eventually_grows() {
        let s = NtkSpectrum::new(vec![1100.0, 10.0], vec![1e-3, 1.0], 0.002, 1).unwrap();
        let curve = ntk_rollout(&s, 400);
        assert!(curve[400] > curve[100]);
        assert!(s.has_oscillating_mode() && s.has_divergent_mode());
        let t = s.divergence_step().unwrap();
        assert!(t > 0 && t < 400);
        let grow = 1e-6 * 1.44f64.powi(t as i32);
        let before = 1e-6 * 1.44f64.powi(t as i32 - 1);
        assert!(before <= s.loss_at(t - 1) - before);
        assert!(grow > s.loss_at(t) - grow);
    }

    #[test]
    fn divergence_examples() {
        assert_eq!(single(250.0, 1.0, 0.002).divergence_step(), None);
        assert_eq!(single(1100.0, 1.0, 0.002).divergence_step(), Some(0));
        assert_eq!(single(1000.0, 1.0, 0.002).divergence_step(), None);
        assert!(single(600.0, 1.0, 0.002).has_oscillating_mode());
        assert!(!single(600.0, 1.0, 0.002).has_divergent_mode());
    }

    #[test]
    fn extreme_exponents_stay_finite() {
        let s = NtkSpectrum::new(vec![0.5, 1e-6], vec![1e-200, 1e-3], 1.0, 1).unwrap();
        let l = s.loss_at(1_000_000);
        assert!(l.is_finite() && l > 0.0);
    }

    fn tiny_problem() -> (SirenWeights, f64, ImageTensor) {
        let cfg = SirenConfig::new(6, 3, 0.1, 4, 5);
        let img = ImageTensor::from_fn(4, 4, |r, c| [r as f64 / 4.0, c as f64 / 4.0, 0.3]);
        (init_siren(&cfg), cfg.omega0, img)
    }

    #[test]
    fn one_step_matches_linearized_gradient_descent() {
        let (w, omega0, img) = tiny_problem();
        let coords = coord_grid(4);
        let targets = normalize(&img);
        let opts = NtkOptions {
            eta: 0.05,
            route: SpectrumRoute::Dense,
            ..NtkOptions::default()
        };
        let spec = spectrum_at(&w, omega0, &img, &opts).unwrap();
        // One exact gradient step on the linearized network f0 + J (θ - θ0).
        let (_, g) = loss_and_grad(&w, omega0, &coords, &targets).unwrap();
        let j = jacobian(&w, omega0, &coords, DEFAULT_MEMORY_BUDGET).unwrap();
        let step = DVector::from_vec(g.to_flat()) * -opts.eta;
        let y0 = DVector::from_vec(forward(&w, omega0, &coords).unwrap());
        let y1 = y0 + &j * step;
        let l1: f64 = y1.iter().zip(&targets).map(|(a, b)| (a - b) * (a - b)).sum();
        assert!((spec.loss_at(1) - l1).abs() <= 1e-6 * l1);
    }

    #[test]
    fn routes_agree() {
        let (w, omega0, img) = tiny_problem();
        let dense = spectrum_at(&w, omega0, &img, &NtkOptions { route: SpectrumRoute::Dense, ..NtkOptions::default() }).unwrap();
        let gram = spectrum_at(&w, omega0, &img, &NtkOptions { route: SpectrumRoute::Gram, ..NtkOptions::default() }).unwrap();
        let p = w.param_count().min(48);
        for k in 0..p {
            let tol = 1e-8 * dense.lambda_max();
            assert!((dense.eigenvalues[k] - gram.eigenvalues[k]).abs() <= tol, "{k}");
        }
        for t in [0, 1, 10, 1000, 100000] {
            let (a, b) = (dense.loss_at(t), gram.loss_at(t));
            assert!((a - b).abs() <= 1e-8 * a, "t={t}: {a} vs {b}");
        }
    }

    #[test]
    fn eigenvalue_sum_is_jacobian_norm() {
        let (w, omega0, img) = tiny_problem();
        let opts = NtkOptions {
            scale: KernelScale::Raw,
            route: SpectrumRoute::Dense,
            ..NtkOptions::default()
        };
        let spec = spectrum_at(&w, omega0, &img, &opts).unwrap();
        let j = jacobian(&w, omega0, &coord_grid(4), DEFAULT_MEMORY_BUDGET).unwrap();
        let sum: f64 = spec.eigenvalues.iter().sum();
        assert!((sum - j.norm_squared()).abs() <= 1e-6 * sum);
        let lmax = spec.lambda_max();
        assert!(spec.eigenvalues.iter().all(|&l| l >= -1e-8 * lmax));
    }

    #[test]
    fn oversized_images_are_rejected() {
        let (w, omega0, _) = tiny_problem();
        let big = ImageTensor::from_fn(40, 40, |_, _| [0.5; 3]);
        assert!(spectrum_at(&w, omega0, &big, &NtkOptions::default()).is_err());
        let opts = NtkOptions {
            max_image_size: 64,
            memory_budget: 1 << 20,
            ..NtkOptions::default()
        };
        assert!(matches!(spectrum_at(&w, omega0, &big, &opts), Err(Error::Budget { .. })));
    }

    proptest! {
        #[test]
        fn stable_rollouts_are_monotone(
            lams in prop::collection::vec(0.0f64..999.0, 1..8),
            cs in prop::collection::vec(-2.0f64..2.0, 8),
        ) {
            let n = lams.len();
            let s = NtkSpectrum::new(lams, cs[..n].to_vec(), 0.002, 1).unwrap();
            let curve = ntk_rollout(&s, 200);
            for w in curve.windows(2) {
                prop_assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-300);
            }
            prop_assert_eq!(s.divergence_step(), None);
        }

        #[test]
        fn initial_loss_is_residual_norm(
            lams in prop::collection::vec(0.0f64..3000.0, 1..8),
            cs in prop::collection::vec(-2.0f64..2.0, 8),
        ) {
            let n = lams.len();
            let want: f64 = cs[..n].iter().map(|c| c * c).sum();
            let s = NtkSpectrum::new(lams, cs[..n].to_vec(), 0.002, 1).unwrap();
            prop_assert!((s.loss_at(0) - want).abs() <= 1e-12 * want.max(1e-300));
        }
    }
}
