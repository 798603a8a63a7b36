//! JSON-lines manifests: a header line followed by one record per line.

use std::collections::HashSet;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::siren::{QuantizedWeights, SirenWeights, TrainRecord};

use super::SamplingSpec;

pub const WEIGHTS_DIR: &str = "weights";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampling: Option<SamplingSpec>,
    pub code_version: String,
    pub corpus_hash: String,
}

impl ManifestHeader {
    pub fn new(sampling: Option<SamplingSpec>, corpus_hash: impl Into<String>) -> Self {
        ManifestHeader {
            kind: "header".into(),
            sampling,
            code_version: env!("CARGO_PKG_VERSION").into(),
            corpus_hash: corpus_hash.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub header: ManifestHeader,
    pub records: Vec<TrainRecord>,
}

/// Hash of a set of image ids, independent of their order.
pub fn corpus_hash<'a>(ids: impl IntoIterator<Item = &'a str>) -> String {
    use sha2::{Digest, Sha256};
    let mut ids: Vec<&str> = ids.into_iter().collect();
    ids.sort_unstable();
    ids.dedup();
    let mut h = Sha256::new();
    for id in ids {
        h.update(id.as_bytes());
        h.update([0]);
    }
    h.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
}

fn header_line(header: &ManifestHeader) -> Result<String> {
    Ok(serde_json::to_string(header)?)
}

impl Manifest {
    pub fn new(header: ManifestHeader) -> Self {
        Manifest {
            header,
            records: Vec::new(),
        }
    }

    /// Writes the whole manifest, replacing `path` atomically.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("jsonl.tmp");
        {
            let mut f = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
            let mut text = header_line(&self.header)?;
            text.push('\n');
            for r in &self.records {
                text.push_str(&serde_json::to_string(r)?);
                text.push('\n');
            }
            f.write_all(text.as_bytes()).map_err(|e| Error::io(&tmp, e))?;
            f.sync_all().map_err(|e| Error::io(&tmp, e))?;
        }
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    /// Reads a manifest. A truncated final line (from an interrupted append)
    /// is dropped; malformed lines elsewhere are errors.
    pub fn load(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        let lines: Vec<String> = BufReader::new(f)
            .lines()
            .collect::<std::io::Result<_>>()
            .map_err(|e| Error::io(path, e))?;
        let mut it = lines.iter().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = it
            .next()
            .ok_or_else(|| Error::Format(format!("{}: empty manifest", path.display())))?;
        let header: ManifestHeader = serde_json::from_str(first)
            .map_err(|e| Error::Format(format!("{}: bad header: {e}", path.display())))?;
        if header.kind != "header" {
            return Err(Error::Format(format!("{}: first line is not a header", path.display())));
        }
        let last_index = lines.len() - 1;
        let mut records = Vec::new();
        let mut seen = HashSet::new();
        for (i, line) in it {
            match serde_json::from_str::<TrainRecord>(line) {
                Ok(r) => {
                    if !seen.insert(r.id.clone()) {
                        return Err(Error::Format(format!("duplicate record id {}", r.id)));
                    }
                    records.push(r);
                }
                Err(_) if i == last_index => log::warn!("dropping truncated final line of {}", path.display()),
                Err(e) => return Err(Error::Format(format!("{}:{}: {e}", path.display(), i + 1))),
            }
        }
        Ok(Manifest { header, records })
    }

    /// Records that finished training.
    pub fn completed(&self) -> impl Iterator<Item = &TrainRecord> {
        self.records.iter().filter(|r| r.status.is_ok())
    }

    /// Checks that every weight reference under `root` exists.
    pub fn verify_blobs(&self, root: &Path) -> Result<()> {
        for r in &self.records {
            if !r.best_weights_ref.is_empty() && !root.join(&r.best_weights_ref).is_file() {
                return Err(Error::Format(format!(
                    "record {} references missing blob {}",
                    r.id, r.best_weights_ref
                )));
            }
        }
        Ok(())
    }
}

/// Appends rows to a manifest file, creating it with `header` if needed.
pub struct ManifestWriter {
    path: PathBuf,
    file: File,
}

impl ManifestWriter {
    pub fn open(path: &Path, header: &ManifestHeader) -> Result<Self> {
        let exists = path.is_file() && fs::metadata(path).map(|m| m.len() > 0).unwrap_or(false);
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        if !exists {
            writeln!(file, "{}", header_line(header)?).map_err(|e| Error::io(path, e))?;
        }
        Ok(ManifestWriter {
            path: path.to_path_buf(),
            file,
        })
    }

    pub fn append(&mut self, record: &TrainRecord) -> Result<()> {
        let mut line = serde_json::to_string(record)?;
        line.push('\n');
        self.file
            .write_all(line.as_bytes())
            .and_then(|_| self.file.flush())
            .map_err(|e| Error::io(&self.path, e))
    }
}

/// Relative path of a record's weight blob.
pub fn blob_ref(id: &str) -> String {
    format!("{WEIGHTS_DIR}/{id}.sirn")
}

pub fn write_blob(root: &Path, id: &str, weights: &SirenWeights) -> Result<String> {
    let dir = root.join(WEIGHTS_DIR);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let rel = blob_ref(id);
    let path = root.join(&rel);
    let bytes = crate::siren::quantize_weights(weights).to_bytes();
    let tmp = path.with_extension("sirn.tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
    Ok(rel)
}

pub fn read_blob(root: &Path, reference: &str) -> Result<SirenWeights> {
    let path = root.join(reference);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    Ok(crate::siren::dequantize(&QuantizedWeights::from_bytes(&bytes)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::siren::{CurvePoint, RunStatus, SirenConfig};

    fn record(id: &str, psnr: f64) -> TrainRecord {
        TrainRecord {
            id: id.into(),
            config: SirenConfig::new(4, 3, 0.05, 8, 1).with_steps(10),
            image_id: "img".into(),
            max_psnr: psnr,
            argmax_step: 3,
            loss_curve: vec![CurvePoint { step: 0, psnr: 1.0 / 3.0 }, CurvePoint { step: 3, psnr }],
            best_weights_ref: String::new(),
            wallclock_seconds: 0.125,
            status: RunStatus::Completed,
        }
    }

    #[test]
    fn roundtrip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        let mut m = Manifest::new(ManifestHeader::new(Some(SamplingSpec::default()), "abc"));
        m.records.push(record("a", 0.1 + 0.2));
        m.records.push(record("b", f64::INFINITY));
        m.save(&p).unwrap();
        let back = Manifest::load(&p).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.records[0].max_psnr.to_bits(), (0.1f64 + 0.2).to_bits());
    }

    #[test]
    fn torn_tail_is_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        let header = ManifestHeader::new(None, "x");
        let mut w = ManifestWriter::open(&p, &header).unwrap();
        w.append(&record("a", 20.0)).unwrap();
        drop(w);
        let mut text = fs::read_to_string(&p).unwrap();
        text.push_str("{\"id\":\"b\",\"conf");
        fs::write(&p, text).unwrap();
        let m = Manifest::load(&p).unwrap();
        assert_eq!(m.records.len(), 1);
    }

    #[test]
    fn duplicate_ids_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        let mut m = Manifest::new(ManifestHeader::new(None, "x"));
        m.records = vec![record("a", 1.0), record("a", 2.0)];
        m.save(&p).unwrap();
        assert!(Manifest::load(&p).is_err());
    }

    #[test]
    fn corpus_hash_is_order_free() {
        assert_eq!(corpus_hash(["a", "b"]), corpus_hash(["b", "a"]));
        assert_ne!(corpus_hash(["a"]), corpus_hash(["b"]));
    }

    #[test]
    fn blobs_roundtrip_through_half_precision() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SirenConfig::new(5, 3, 0.05, 8, 1);
        let w = crate::siren::init_siren(&cfg);
        let rel = write_blob(dir.path(), "abc", &w).unwrap();
        assert_eq!(rel, "weights/abc.sirn");
        let back = read_blob(dir.path(), &rel).unwrap();
        assert!(back.same_shape(&w));
        assert!(back.max_abs_diff(&w) < 1e-3);
    }
}
