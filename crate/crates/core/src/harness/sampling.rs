use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::siren::{SirenConfig, BITS_PER_PARAM, DEFAULT_LEARNING_RATE, DEFAULT_STEPS};

/// Ranges from which dataset configurations are drawn.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingSpec {
    pub image_size_min: usize,
    pub image_size_max: usize,
    pub depth_min: usize,
    pub depth_max: usize,
    /// Target bits per pixel, log-uniform.
    pub bpp_min: f64,
    pub bpp_max: f64,
    /// `omega0 / image_size`, log-uniform.
    pub gamma_min: f64,
    pub gamma_max: f64,
    pub steps: usize,
    pub learning_rate: f64,
}

impl Default for SamplingSpec {
    fn default() -> Self {
        SamplingSpec {
            image_size_min: 112,
            image_size_max: 512,
            depth_min: 2,
            depth_max: 12,
            bpp_min: 0.5,
            bpp_max: 9.0,
            gamma_min: 0.02,
            gamma_max: 0.12,
            steps: DEFAULT_STEPS,
            learning_rate: DEFAULT_LEARNING_RATE,
        }
    }
}

/// Attempts at drawing a target rate that yields width >= 2.
pub const MAX_RESAMPLES: usize = 100;
pub const MIN_WIDTH: usize = 2;

impl SamplingSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.image_size_min == 0 || self.image_size_min > self.image_size_max {
            return bad("image size range is empty");
        }
        if self.depth_min < 2 || self.depth_min > self.depth_max {
            return bad("depth range must lie in [2, inf) and be non-empty");
        }
        if !(self.bpp_min > 0.0 && self.bpp_min <= self.bpp_max && self.bpp_max.is_finite()) {
            return bad("bpp range must be positive and non-empty");
        }
        if !(self.gamma_min > 0.0 && self.gamma_min <= self.gamma_max && self.gamma_max.is_finite()) {
            return bad("gamma range must be positive and non-empty");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning rate must be positive");
        }
        Ok(())
    }

    pub fn sample_image_size<R: Rng + ?Sized>(&self, r: &mut R) -> usize {
        rng::int_inclusive(r, self.image_size_min, self.image_size_max)
    }
}

/// Real width whose parameter count matches `bpp` on a `size x size` image:
/// the positive root of `(d-2) w^2 + (d+4) w + 3 = bpp * size^2 / 16`.
pub fn width_for_bpp(depth: usize, size: usize, bpp: f64) -> f64 {
    let target = bpp * (size * size) as f64 / BITS_PER_PARAM as f64;
    let a = depth as f64 - 2.0;
    let b = depth as f64 + 4.0;
    let c = 3.0 - target;
    if a == 0.0 {
        -c / b
    } else {
        (-b + (b * b - 4.0 * a * c).sqrt()) / (2.0 * a)
    }
}

/// Draws depth, gamma and a target rate, then inverts the rate to a width.
pub fn sample_config<R: Rng + ?Sized>(spec: &SamplingSpec, r: &mut R, image_size: usize) -> Result<SirenConfig> {
    Ok(sample_config_with_target(spec, r, image_size)?.0)
}

/// Like [`sample_config`], also returning the drawn target bpp before the
/// width is rounded.
pub fn sample_config_with_target<R: Rng + ?Sized>(spec: &SamplingSpec, r: &mut R, image_size: usize) -> Result<(SirenConfig, f64)> {
    spec.validate()?;
    if image_size < spec.image_size_min || image_size > spec.image_size_max {
        return Err(Error::Range(format!(
            "image side {image_size} outside [{}, {}]",
            spec.image_size_min, spec.image_size_max
        )));
    }
    let depth = rng::int_inclusive(r, spec.depth_min, spec.depth_max);
    let gamma = rng::log_uniform(r, spec.gamma_min, spec.gamma_max);
    for _ in 0..MAX_RESAMPLES {
        let bpp = rng::log_uniform(r, spec.bpp_min, spec.bpp_max);
        let width = width_for_bpp(depth, image_size, bpp).round();
        if width >= MIN_WIDTH as f64 {
            let seed = r.next_u64();
            let c = SirenConfig::new(width as usize, depth, gamma, image_size, seed)
                .with_steps(spec.steps)
                .with_learning_rate(spec.learning_rate);
            return Ok((c, bpp));
        }
    }
    Err(Error::Range(format!(
        "no width >= {MIN_WIDTH} fits the bpp range at depth {depth}, size {image_size}"
    )))
}
