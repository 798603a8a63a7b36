//! NeRF-style positional encoding of SIREN hyperparameters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::{width_for_bpp, SamplingSpec, MIN_WIDTH};
use crate::siren::SirenConfig;

/// Frequencies `2^0 .. 2^10`.
pub const FREQUENCIES: usize = 11;
pub const PER_PARAM: usize = 2 * FREQUENCIES;
/// Width, depth, image size, omega0.
pub const ENCODING_DIM: usize = 4 * PER_PARAM;

/// `(sin(2^k pi p), cos(2^k pi p))` for `k = 0..10`.
pub fn gamma_encode(p: f64) -> [f64; PER_PARAM] {
    let mut out = [0.0; PER_PARAM];
    for k in 0..FREQUENCIES {
        // t = 2^k p is exact, so multiples of pi/2 give exact values.
        let t = (1u64 << k) as f64 * p;
        let (s, c) = if t.fract() == 0.0 {
            (0.0, if (t as i64) % 2 == 0 { 1.0 } else { -1.0 })
        } else if (2.0 * t).fract() == 0.0 {
            (if ((2.0 * t) as i64).rem_euclid(4) == 1 { 1.0 } else { -1.0 }, 0.0)
        } else {
            (std::f64::consts::PI * t).sin_cos()
        };
        out[2 * k] = s;
        out[2 * k + 1] = c;
    }
    out
}

/// Hyperparameter box used to normalize inputs to `[0, 1]`. Width and
/// omega0 are normalized in log space.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncodingRanges {
    pub width: (f64, f64),
    pub depth: (f64, f64),
    pub size: (f64, f64),
    pub omega0: (f64, f64),
}

impl EncodingRanges {
    /// The box spanned by a sampling spec: widths from the minimum up to the
    /// widest net the spec can produce.
    pub fn from_spec(spec: &SamplingSpec) -> Self {
        let max_width = width_for_bpp(spec.depth_min, spec.image_size_max, spec.bpp_max).round().max(MIN_WIDTH as f64 + 1.0);
        EncodingRanges {
            width: (MIN_WIDTH as f64, max_width),
            depth: (spec.depth_min as f64, spec.depth_max as f64),
            size: (spec.image_size_min as f64, spec.image_size_max as f64),
            omega0: (
                spec.gamma_min * spec.image_size_min as f64,
                spec.gamma_max * spec.image_size_max as f64,
            ),
        }
    }
}

const RANGE_SLACK: f64 = 1e-9;

fn unit(name: &str, v: f64, (lo, hi): (f64, f64)) -> Result<f64> {
    let t = if hi > lo { (v - lo) / (hi - lo) } else { 0.0 };
    if !(t >= -RANGE_SLACK && t <= 1.0 + RANGE_SLACK) {
        return Err(Error::Range(format!("{name} {v} outside the encoding range [{lo}, {hi}]")));
    }
    Ok(t.clamp(0.0, 1.0))
}

/// Normalized `(width, depth, size, omega0)` in `[0, 1]`.
pub fn normalized_hyperparameters(config: &SirenConfig, r: &EncodingRanges) -> Result<[f64; 4]> {
    Ok([
        unit("width", (config.width as f64).ln(), (r.width.0.ln(), r.width.1.ln()))?,
        unit("depth", config.depth as f64, r.depth)?,
        unit("image size", config.image_size as f64, r.size)?,
        unit("omega0", config.omega0.ln(), (r.omega0.0.ln(), r.omega0.1.ln()))?,
    ])
}

/// The 88-dimensional encoding `(gamma(w), gamma(d), gamma(s), gamma(omega0))`.
pub fn positional_encode(config: &SirenConfig, ranges: &EncodingRanges) -> Result<Vec<f64>> {
    let p = normalized_hyperparameters(config, ranges)?;
    let mut out = Vec::with_capacity(ENCODING_DIM);
    for v in p {
        out.extend_from_slice(&gamma_encode(v));
    }
    Ok(out)
}
