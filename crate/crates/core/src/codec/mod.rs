//! A quality-parameterized block-DCT codec used as a rate-distortion proxy.
//!
//! Pixels are shifted by their per-channel means (stored at 8-bit precision in
//! the header), converted to YCbCr, transformed in 8x8 blocks and quantized
//! with a uniform step of `2 / quality` on the 0..255 scale. The bit count is
//! an estimate: header bits plus the zero-order entropy of JPEG-style
//! `(run, size)` symbols and DPCM DC categories, plus raw magnitude bits.

mod dct;
mod table;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{image_psnr, ImageTensor};

pub use table::{read_rd_csv, write_rd_csv, RdRecord, RdTable};

pub const MIN_QUALITY: f64 = 1e-4;
pub const MAX_QUALITY: f64 = 1.0;
/// Compression ratios whose PSNRs form the proxy feature vector.
pub const FEATURE_RATIOS: [f64; 3] = [7.0, 25.0, 100.0];
/// Infinite PSNRs are replaced by this value in feature vectors.
pub const PSNR_CAP: f64 = 80.0;
pub const RATE_TOLERANCE: f64 = 0.02;
pub const MAX_BISECTIONS: usize = 40;
/// Uncompressed 8-bit RGB.
pub const SOURCE_BPP: f64 = 24.0;
/// Two u16 dimensions, three 8-bit means, and an f32 quality.
pub const HEADER_BITS: f64 = 88.0;

/// One rate-distortion point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RdPoint {
    pub bpp: f64,
    #[serde(with = "crate::floatser")]
    pub psnr: f64,
    pub quality: f64,
    pub ratio: f64,
}

impl RdPoint {
    pub fn new(bpp: f64, psnr: f64, quality: f64) -> Self {
        RdPoint {
            bpp,
            psnr,
            quality,
            ratio: SOURCE_BPP / bpp,
        }
    }
}

pub struct Encoded {
    pub reconstruction: ImageTensor,
    pub bits: f64,
}

fn to_ycbcr(r: f64, g: f64, b: f64) -> [f64; 3] {
    [
        0.299 * r + 0.587 * g + 0.114 * b,
        -0.168_736 * r - 0.331_264 * g + 0.5 * b,
        0.5 * r - 0.418_688 * g - 0.081_312 * b,
    ]
}

fn from_ycbcr(y: f64, cb: f64, cr: f64) -> [f64; 3] {
    [
        y + 1.402 * cr,
        y - 0.344_136 * cb - 0.714_136 * cr,
        y + 1.772 * cb,
    ]
}

fn size_category(v: i64) -> u8 {
    (64 - v.unsigned_abs().leading_zeros()) as u8
}

fn entropy_bits(counts: &HashMap<u8, u64>) -> f64 {
    let total: u64 = counts.values().sum();
    if total == 0 {
        return 0.0;
    }
    let t = total as f64;
    counts
        .values()
        .map(|&c| {
            let c = c as f64;
            c * (t / c).log2()
        })
        .sum()
}

#[derive(Default)]
struct SymbolStats {
    dc: HashMap<u8, u64>,
    ac: HashMap<u8, u64>,
    magnitude_bits: u64,
}

impl SymbolStats {
    fn block(&mut self, q: &[i64; 64], prev_dc: &mut i64) {
        let diff = q[0] - *prev_dc;
        *prev_dc = q[0];
        let s = size_category(diff);
        *self.dc.entry(s).or_default() += 1;
        self.magnitude_bits += u64::from(s);

        let zz = dct::zigzag();
        let last = (1..64).rev().find(|&i| q[zz[i]] != 0);
        let mut run = 0u8;
        if let Some(last) = last {
            for &pos in &zz[1..=last] {
                let v = q[pos];
                if v == 0 {
                    run += 1;
                    continue;
                }
                while run > 15 {
                    *self.ac.entry(0xF0).or_default() += 1;
                    run -= 16;
                }
                let s = size_category(v);
                *self.ac.entry((run << 4) | s).or_default() += 1;
                self.magnitude_bits += u64::from(s);
                run = 0;
            }
        }
        if last != Some(63) {
            *self.ac.entry(0x00).or_default() += 1;
        }
    }

    fn bits(&self) -> f64 {
        entropy_bits(&self.dc) + entropy_bits(&self.ac) + self.magnitude_bits as f64
    }
}

/// Compresses and reconstructs `img`, returning the reconstruction and the
/// estimated compressed size in bits.
pub fn encode_decode(img: &ImageTensor, quality: f64) -> Result<Encoded> {
    if !(quality > 0.0 && quality <= MAX_QUALITY) {
        return Err(Error::Range(format!("quality {quality} outside (0, 1]")));
    }
    let (h, w) = (img.height, img.width);
    if h == 0 || w == 0 {
        return Err(Error::Argument("empty image".into()));
    }
    let step = 2.0 / quality;
    let means = img.channel_means().map(|m| (m * 255.0).round());

    let (bh, bw) = (h.div_ceil(dct::B), w.div_ceil(dct::B));
    let (ph, pw) = (bh * dct::B, bw * dct::B);
    // Mean-shifted YCbCr planes on the 0..255 scale, edge-replicated to whole blocks.
    let mut planes = vec![vec![0.0; ph * pw]; 3];
    for r in 0..ph {
        for c in 0..pw {
            let px = img.pixel(r.min(h - 1), c.min(w - 1));
            let ycc = to_ycbcr(
                px[0] * 255.0 - means[0],
                px[1] * 255.0 - means[1],
                px[2] * 255.0 - means[2],
            );
            for k in 0..3 {
                planes[k][r * pw + c] = ycc[k];
            }
        }
    }

    let mut stats = SymbolStats::default();
    let mut recon = vec![vec![0.0; ph * pw]; 3];
    for k in 0..3 {
        let mut prev_dc = 0;
        for by in 0..bh {
            for bx in 0..bw {
                let mut block = [0.0; 64];
                for i in 0..dct::B {
                    for j in 0..dct::B {
                        block[i * dct::B + j] = planes[k][(by * dct::B + i) * pw + bx * dct::B + j];
                    }
                }
                let coef = dct::forward(&block);
                let q = coef.map(|v| (v / step).round() as i64);
                stats.block(&q, &mut prev_dc);
                let out = dct::inverse(&q.map(|v| v as f64 * step));
                for i in 0..dct::B {
                    for j in 0..dct::B {
                        recon[k][(by * dct::B + i) * pw + bx * dct::B + j] = out[i * dct::B + j];
                    }
                }
            }
        }
    }

    let reconstruction = ImageTensor::from_fn(h, w, |r, c| {
        let i = r * pw + c;
        let rgb = from_ycbcr(recon[0][i], recon[1][i], recon[2][i]);
        [0, 1, 2].map(|k| (rgb[k] + means[k]) / 255.0)
    });
    Ok(Encoded {
        reconstruction,
        bits: HEADER_BITS + stats.bits(),
    })
}

/// Bits per pixel and PSNR at a given quality.
pub fn rd_point(img: &ImageTensor, quality: f64) -> Result<RdPoint> {
    let enc = encode_decode(img, quality)?;
    let bpp = enc.bits / img.pixel_count() as f64;
    Ok(RdPoint::new(bpp, image_psnr(img, &enc.reconstruction)?, quality))
}

/// Lowest achievable rate for `img`.
pub fn rate_floor(img: &ImageTensor) -> Result<f64> {
    Ok(rd_point(img, MIN_QUALITY)?.bpp)
}

/// Finds the quality whose rate is within 2% of `target_bpp`.
pub fn rate_target(img: &ImageTensor, target_bpp: f64) -> Result<RdPoint> {
    rate_target_tol(img, target_bpp, RATE_TOLERANCE)
}

/// Bisection on log-quality until the relative rate error is at most `tol`
/// or [`MAX_BISECTIONS`] steps have run; returns the closest point seen.
/// Targets above the rate at full quality return the full-quality point.
pub fn rate_target_tol(img: &ImageTensor, target_bpp: f64, tol: f64) -> Result<RdPoint> {
    if !(target_bpp > 0.0 && target_bpp.is_finite()) {
        return Err(Error::Argument(format!("target rate {target_bpp} must be positive")));
    }
    let floor = rd_point(img, MIN_QUALITY)?;
    if floor.bpp > target_bpp * (1.0 + tol) {
        return Err(Error::BelowRateFloor {
            target: target_bpp,
            floor: floor.bpp,
        });
    }
    let top = rd_point(img, MAX_QUALITY)?;
    if top.bpp <= target_bpp {
        return Ok(top);
    }
    let rel = |p: &RdPoint| (p.bpp - target_bpp).abs() / target_bpp;
    let mut best = if rel(&floor) < rel(&top) { floor } else { top };
    if rel(&best) <= tol {
        return Ok(best);
    }
    let (mut lo, mut hi) = (MIN_QUALITY.ln(), MAX_QUALITY.ln());
    for _ in 0..MAX_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        let p = rd_point(img, mid.exp())?;
        if rel(&p) < rel(&best) {
            best = p;
        }
        if rel(&p) <= tol {
            break;
        }
        if p.bpp < target_bpp {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(best)
}

/// Finds the cheapest quality reaching `target_psnr` (within 0.01 dB when the
/// rate-distortion curve allows).
pub fn psnr_target(img: &ImageTensor, target_psnr: f64) -> Result<RdPoint> {
    let top = rd_point(img, MAX_QUALITY)?;
    if top.psnr < target_psnr {
        return Err(Error::Range(format!(
            "target {target_psnr:.2} dB exceeds the codec maximum of {:.2} dB",
            top.psnr
        )));
    }
    let floor = rd_point(img, MIN_QUALITY)?;
    if floor.psnr >= target_psnr {
        return Ok(floor);
    }
    let (mut lo, mut hi) = (MIN_QUALITY.ln(), MAX_QUALITY.ln());
    let mut best = top;
    for _ in 0..MAX_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        let p = rd_point(img, mid.exp())?;
        if p.psnr >= target_psnr {
            best = p;
            hi = mid;
            if p.psnr - target_psnr <= 0.01 {
                break;
            }
        } else {
            lo = mid;
        }
    }
    Ok(best)
}

pub fn cap_psnr(psnr: f64) -> f64 {
    if psnr.is_nan() {
        psnr
    } else {
        psnr.min(PSNR_CAP)
    }
}

/// Anything that can report the PSNR an image reaches at a compression ratio.
pub trait RateDistortion: Send + Sync {
    fn psnr_at_ratio(&self, img: &ImageTensor, ratio: f64) -> Result<f64>;
}

/// The built-in DCT codec with a configurable rate tolerance.
#[derive(Clone, Copy, Debug)]
pub struct DctCodec {
    pub tolerance: f64,
}

impl Default for DctCodec {
    fn default() -> Self {
        DctCodec {
            tolerance: RATE_TOLERANCE,
        }
    }
}

impl RateDistortion for DctCodec {
    fn psnr_at_ratio(&self, img: &ImageTensor, ratio: f64) -> Result<f64> {
        Ok(rate_target_tol(img, SOURCE_BPP / ratio, self.tolerance)?.psnr)
    }
}

/// PSNR at compression ratios 7, 25 and 100, capped at [`PSNR_CAP`].
pub fn proxy_features(img: &ImageTensor) -> Result<[f64; 3]> {
    proxy_features_with(&DctCodec::default(), img)
}

pub fn proxy_features_with(codec: &dyn RateDistortion, img: &ImageTensor) -> Result<[f64; 3]> {
    let mut out = [0.0; 3];
    for (o, r) in out.iter_mut().zip(FEATURE_RATIOS) {
        *o = cap_psnr(codec.psnr_at_ratio(img, r)?);
    }
    Ok(out)
}
