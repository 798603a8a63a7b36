//! Externally computed rate-distortion tables.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::ImageTensor;

use super::RateDistortion;

/// One CSV row: `image_id, ratio, bpp, psnr`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RdRecord {
    pub image_id: String,
    pub ratio: f64,
    pub bpp: f64,
    #[serde(with = "crate::floatser")]
    pub psnr: f64,
}

pub fn write_rd_csv(path: &Path, rows: &[RdRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_rd_csv(path: &Path) -> Result<Vec<RdRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    let rows: std::result::Result<Vec<RdRecord>, _> = r.deserialize().collect();
    Ok(rows?)
}

/// A codec backed by a table, interpolating PSNR linearly in log-ratio.
#[derive(Clone, Debug, Default)]
pub struct RdTable {
    curves: HashMap<String, Vec<(f64, f64)>>,
}

impl RdTable {
    pub fn new(rows: &[RdRecord]) -> Result<Self> {
        let mut curves: HashMap<String, Vec<(f64, f64)>> = HashMap::new();
        for r in rows {
            if !(r.ratio > 0.0) {
                return Err(Error::Format(format!("ratio {} for image {}", r.ratio, r.image_id)));
            }
            curves.entry(r.image_id.clone()).or_default().push((r.ratio.ln(), r.psnr));
        }
        for c in curves.values_mut() {
            c.sort_by(|a, b| a.0.total_cmp(&b.0));
        }
        Ok(RdTable { curves })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::new(&read_rd_csv(path)?)
    }

    pub fn psnr(&self, image_id: &str, ratio: f64) -> Result<f64> {
        let curve = self
            .curves
            .get(image_id)
            .ok_or_else(|| Error::Argument(format!("no rate-distortion rows for image {image_id}")))?;
        let x = ratio.ln();
        let (first, last) = (curve[0], curve[curve.len() - 1]);
        if x < first.0 - 1e-12 || x > last.0 + 1e-12 {
            return Err(Error::Range(format!(
                "ratio {ratio} outside the table range [{}, {}] for image {image_id}",
                first.0.exp(),
                last.0.exp()
            )));
        }
        let i = curve.partition_point(|p| p.0 < x);
        if i == 0 {
            return Ok(first.1);
        }
        if i == curve.len() {
            return Ok(last.1);
        }
        let (a, b) = (curve[i - 1], curve[i]);
        let t = (x - a.0) / (b.0 - a.0);
        Ok(a.1 + t * (b.1 - a.1))
    }
}

impl RateDistortion for RdTable {
    fn psnr_at_ratio(&self, img: &ImageTensor, ratio: f64) -> Result<f64> {
        self.psnr(&img.id, ratio)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(id: &str, ratio: f64, psnr: f64) -> RdRecord {
        RdRecord {
            image_id: id.into(),
            ratio,
            bpp: 24.0 / ratio,
            psnr,
        }
    }

    #[test]
    fn csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rd.csv");
        let rows = vec![row("a", 7.0, 33.5), row("a", 25.0, f64::INFINITY)];
        write_rd_csv(&p, &rows).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("image_id,ratio,bpp,psnr"));
        assert_eq!(read_rd_csv(&p).unwrap(), rows);
    }

    #[test]
    fn interpolates_in_log_ratio() {
        let t = RdTable::new(&[row("a", 10.0, 30.0), row("a", 100.0, 20.0)]).unwrap();
        assert!((t.psnr("a", 10f64.powf(1.5)).unwrap() - 25.0).abs() < 1e-9);
        assert_eq!(t.psnr("a", 100.0).unwrap(), 20.0);
        assert!(t.psnr("a", 1000.0).is_err());
        assert!(t.psnr("b", 10.0).is_err());
    }
}
