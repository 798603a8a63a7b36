use std::collections::HashMap;
use std::path::Path;

use serde::Serialize;

use crate::codec::{psnr_target, RateDistortion};
use crate::error::{Error, Result};
use crate::imaging::ImageTensor;
use crate::predictors::{fit_codec_proxy_with, ProxyFit};
use crate::siren::TrainRecord;

use super::plot::{Chart, Series};

pub const MIN_RECORDS: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CorrelationRow {
    pub record_id: String,
    pub image_id: String,
    pub siren_bpp: f64,
    pub siren_psnr: f64,
    pub proxy_psnr: f64,
    /// Codec bpp reaching the SIREN's PSNR; NaN when the codec cannot.
    pub equal_psnr_bpp: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CorrelationReport {
    pub proxy: ProxyFit,
    pub rows: Vec<CorrelationRow>,
}

/// Fits the rate-matched codec proxy over completed `records` and finds,
/// per record, the codec rate giving the same PSNR.
pub fn codec_correlation_study(records: &[TrainRecord], images: &[ImageTensor], codec: &dyn RateDistortion) -> Result<CorrelationReport> {
    let by_id: HashMap<&str, &ImageTensor> = images.iter().map(|i| (i.id.as_str(), i)).collect();
    let done: Vec<&TrainRecord> = records.iter().filter(|r| r.status.is_ok()).collect();
    if done.len() < MIN_RECORDS {
        return Err(Error::InsufficientData {
            needed: MIN_RECORDS,
            got: done.len(),
        });
    }
    let imgs: Vec<&ImageTensor> = done
        .iter()
        .map(|r| {
            by_id
                .get(r.image_id.as_str())
                .copied()
                .ok_or_else(|| Error::Argument(format!("record {} uses unknown image {}", r.id, r.image_id)))
        })
        .collect::<Result<_>>()?;
    let psnrs: Vec<f64> = done.iter().map(|r| r.max_psnr).collect();
    let proxy = fit_codec_proxy_with(codec, &imgs, &psnrs)?;

    let mut rows = Vec::with_capacity(done.len());
    for (r, img) in done.iter().zip(&imgs) {
        let equal = match psnr_target(img, r.max_psnr) {
            Ok(p) => p.bpp,
            Err(Error::Range(_)) => f64::NAN,
            Err(e) => return Err(e),
        };
        rows.push(CorrelationRow {
            record_id: r.id.clone(),
            image_id: r.image_id.clone(),
            siren_bpp: r.config.bpp(),
            siren_psnr: r.max_psnr,
            proxy_psnr: proxy.predict(codec, img)?,
            equal_psnr_bpp: equal,
        });
    }
    Ok(CorrelationReport { proxy, rows })
}

impl CorrelationReport {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["record_id", "image_id", "siren_bpp", "siren_psnr", "proxy_psnr", "equal_psnr_bpp"])?;
        for r in &self.rows {
            w.write_record([
                r.record_id.clone(),
                r.image_id.clone(),
                r.siren_bpp.to_string(),
                r.siren_psnr.to_string(),
                r.proxy_psnr.to_string(),
                r.equal_psnr_bpp.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn chart(&self) -> Chart {
        let pts = self.rows.iter().map(|r| (r.proxy_psnr, r.siren_psnr)).collect();
        let (lo, hi) = self
            .rows
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), r| (a.min(r.siren_psnr), b.max(r.siren_psnr)));
        Chart::new(
            &format!(
                "Codec proxy at ratio {:.1}: EV {:.3}",
                self.proxy.ratio, self.proxy.report.explained_variance
            ),
            "proxy PSNR (dB)",
            "SIREN PSNR (dB)",
        )
        .with(Series::points("records", pts))
        .with(Series::line("y = x", vec![(lo, lo), (hi, hi)]))
    }

    /// SIREN bpp against the codec bpp of equal quality.
    pub fn rate_chart(&self) -> Chart {
        let pts = self.rows.iter().map(|r| (r.siren_bpp, r.equal_psnr_bpp)).collect();
        Chart::new("Codec rate at equal PSNR", "SIREN bpp", "codec bpp")
            .with(Series::points("records", pts))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::DctCodec;
    use crate::imaging::synth;
    use crate::siren::{CurvePoint, RunStatus, SirenConfig};

    fn record(img: &ImageTensor, psnr: f64, k: usize) -> TrainRecord {
        TrainRecord {
            id: format!("r{k}"),
            config: SirenConfig::new(8, 3, 0.1, img.width, k as u64),
            image_id: img.id.clone(),
            max_psnr: psnr,
            argmax_step: 0,
            loss_curve: vec![CurvePoint { step: 0, psnr }],
            best_weights_ref: String::new(),
            wallclock_seconds: 0.0,
            status: RunStatus::Completed,
        }
    }

    #[test]
    fn planted_proxy_and_equal_rate() {
        let codec = DctCodec::default();
        let imgs: Vec<ImageTensor> = (0..12).map(|s| synth::dead_leaves(16, 100 + s)).collect();
        let recs: Vec<TrainRecord> = imgs
            .iter()
            .enumerate()
            .map(|(k, img)| {
                let p = codec.psnr_at_ratio(img, 25.0).unwrap();
                record(img, 0.9 * p + 2.0, k)
            })
            .collect();
        let rep = codec_correlation_study(&recs, &imgs, &codec).unwrap();
        assert!(rep.proxy.report.explained_variance > 0.95, "{:?}", rep.proxy);
        assert_eq!(rep.rows.len(), 12);
        for r in &rep.rows {
            assert!(r.equal_psnr_bpp.is_nan() || r.equal_psnr_bpp > 0.0);
        }

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.csv");
        rep.write_csv(&path).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), 13);
    }

    #[test]
    fn unreachable_psnr_gives_nan_rate() {
        let codec = DctCodec::default();
        let imgs: Vec<ImageTensor> = (0..10).map(|s| synth::dead_leaves(16, 7 + s)).collect();
        let mut recs: Vec<TrainRecord> = imgs.iter().enumerate().map(|(k, img)| record(img, 20.0 + k as f64, k)).collect();
        recs[0].max_psnr = 500.0;
        let rep = codec_correlation_study(&recs, &imgs, &codec).unwrap();
        assert!(rep.rows[0].equal_psnr_bpp.is_nan());
    }

    #[test]
    fn needs_ten_records() {
        let imgs = vec![synth::dead_leaves(16, 1)];
        let recs: Vec<TrainRecord> = (0..9).map(|k| record(&imgs[0], 20.0 + k as f64, k)).collect();
        assert!(matches!(
            codec_correlation_study(&recs, &imgs, &DctCodec::default()),
            Err(Error::InsufficientData { needed: 10, got: 9 })
        ));
    }
}
