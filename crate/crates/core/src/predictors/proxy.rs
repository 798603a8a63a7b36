use serde::{Deserialize, Serialize};

use crate::codec::{cap_psnr, DctCodec, RateDistortion};
use crate::error::{Error, Result};
use crate::imaging::ImageTensor;

use super::metrics::{variance, LinearFit, MetricReport};

pub const MIN_RATIO: f64 = 2.0;
pub const MAX_RATIO: f64 = 200.0;
/// Rate tolerance used while searching; tighter than the default so the
/// objective is smooth in the ratio.
pub const SEARCH_TOLERANCE: f64 = 0.002;
const GOLDEN_ITERATIONS: usize = 60;
const LOG_RATIO_TOL: f64 = 1e-4;

/// Linear predictor of SIREN PSNR from codec PSNR at one compression ratio.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProxyFit {
    pub ratio: f64,
    pub fit: LinearFit,
    pub report: MetricReport,
}

impl ProxyFit {
    pub fn predict(&self, codec: &dyn RateDistortion, img: &ImageTensor) -> Result<f64> {
        Ok(self.fit.predict(cap_psnr(codec.psnr_at_ratio(img, self.ratio)?)))
    }
}

fn codec_psnrs(codec: &dyn RateDistortion, images: &[&ImageTensor], ratio: f64) -> Result<Vec<f64>> {
    images.iter().map(|img| Ok(cap_psnr(codec.psnr_at_ratio(img, ratio)?))).collect()
}

/// Explained variance of the best linear map from codec PSNR at `ratio`.
pub fn proxy_ev_at(codec: &dyn RateDistortion, images: &[&ImageTensor], siren: &[f64], ratio: f64) -> Result<ProxyFit> {
    let x = codec_psnrs(codec, images, ratio)?;
    let fit = LinearFit::fit(&x, siren)?;
    let report = MetricReport::compute(&fit.predict_all(&x), siren)?;
    Ok(ProxyFit { ratio, fit, report })
}

/// Golden-section search over log-ratio in `[ln 2, ln 200]` for the ratio
/// whose codec PSNRs best explain `siren_psnrs`.
pub fn fit_codec_proxy(images: &[&ImageTensor], siren_psnrs: &[f64]) -> Result<ProxyFit> {
    fit_codec_proxy_with(&DctCodec { tolerance: SEARCH_TOLERANCE }, images, siren_psnrs)
}

pub fn fit_codec_proxy_with(codec: &dyn RateDistortion, images: &[&ImageTensor], siren_psnrs: &[f64]) -> Result<ProxyFit> {
    if images.len() != siren_psnrs.len() {
        return Err(Error::Dimension(format!(
            "{} images vs {} PSNRs",
            images.len(),
            siren_psnrs.len()
        )));
    }
    if images.len() < 4 {
        return Err(Error::InsufficientData {
            needed: 4,
            got: images.len(),
        });
    }
    if variance(siren_psnrs) <= 0.0 {
        return Err(Error::UndefinedVariance);
    }

    let eval = |u: f64| -> Result<Option<ProxyFit>> {
        match proxy_ev_at(codec, images, siren_psnrs, u.exp()) {
            Ok(f) => Ok(Some(f)),
            Err(Error::Fit(_)) => Ok(None),
            Err(e) => Err(e),
        }
    };
    let score = |f: &Option<ProxyFit>| f.as_ref().map_or(f64::NEG_INFINITY, |f| f.report.explained_variance);

    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (MIN_RATIO.ln(), MAX_RATIO.ln());
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = eval(c)?;
    let mut fd = eval(d)?;
    let mut best: Option<ProxyFit> = None;
    let consider = |f: &Option<ProxyFit>, best: &mut Option<ProxyFit>| {
        if let Some(f) = f {
            let better = match best {
                None => true,
                Some(b) => {
                    f.report.explained_variance > b.report.explained_variance
                        || (f.report.explained_variance == b.report.explained_variance && f.ratio < b.ratio)
                }
            };
            if better {
                *best = Some(*f);
            }
        }
    };
    consider(&fc, &mut best);
    consider(&fd, &mut best);
    for _ in 0..GOLDEN_ITERATIONS {
        if b - a < LOG_RATIO_TOL {
            break;
        }
        // Ties keep the lower (smaller-ratio) bracket.
        if score(&fc) >= score(&fd) {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = eval(c)?;
            consider(&fc, &mut best);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = eval(d)?;
            consider(&fd, &mut best);
        }
    }
    best.ok_or_else(|| Error::Fit("codec PSNRs are constant at every ratio".into()))
}
