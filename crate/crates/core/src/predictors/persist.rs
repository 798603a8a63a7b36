//! Model files: magic `SLPM`, u32 version, u32 kind tag, u64 payload length,
//! then a JSON payload (all integers little-endian).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::extrapolate::StepExtrapolation;
use super::gp::GpModel;
use super::mlp::FeatureMlp;
use super::proxy::ProxyFit;

pub const MODEL_MAGIC: &[u8; 4] = b"SLPM";
pub const MODEL_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum SavedModel {
    Extrapolation(StepExtrapolation),
    Proxy(ProxyFit),
    Gp(GpModel),
    Mlp(FeatureMlp),
}

impl SavedModel {
    pub fn kind_tag(&self) -> u32 {
        match self {
            SavedModel::Extrapolation(_) => 1,
            SavedModel::Proxy(_) => 2,
            SavedModel::Gp(_) => 3,
            SavedModel::Mlp(_) => 4,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            SavedModel::Extrapolation(_) => "extrapolate",
            SavedModel::Proxy(_) => "proxy",
            SavedModel::Gp(_) => "gp",
            SavedModel::Mlp(_) => "mlp",
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let payload = match self {
            SavedModel::Extrapolation(m) => serde_json::to_vec(m)?,
            SavedModel::Proxy(m) => serde_json::to_vec(m)?,
            SavedModel::Gp(m) => serde_json::to_vec(m)?,
            SavedModel::Mlp(m) => serde_json::to_vec(m)?,
        };
        let mut out = Vec::with_capacity(payload.len() + 20);
        out.extend_from_slice(MODEL_MAGIC);
        out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
        out.extend_from_slice(&self.kind_tag().to_le_bytes());
        out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 20 || &bytes[..4] != MODEL_MAGIC {
            return Err(Error::Format("not a model file (bad magic)".into()));
        }
        let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
        let version = u32_at(4);
        if version != MODEL_VERSION {
            return Err(Error::Format(format!("unsupported model version {version}")));
        }
        let kind = u32_at(8);
        let len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        if bytes.len() != 20 + len {
            return Err(Error::Format(format!(
                "payload length {len} does not match file size {}",
                bytes.len()
            )));
        }
        let payload = &bytes[20..];
        Ok(match kind {
            1 => SavedModel::Extrapolation(serde_json::from_slice(payload)?),
            2 => SavedModel::Proxy(serde_json::from_slice(payload)?),
            3 => {
                let mut gp: GpModel = serde_json::from_slice(payload)?;
                gp.rebuild()?;
                SavedModel::Gp(gp)
            }
            4 => SavedModel::Mlp(serde_json::from_slice(payload)?),
            other => return Err(Error::Format(format!("unknown model kind {other}"))),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictors::gp::{GpHyper, GpOptions};
    use crate::predictors::metrics::{LinearFit, MetricReport};

    #[test]
    fn roundtrip_and_header() {
        let m = SavedModel::Proxy(ProxyFit {
            ratio: 25.0,
            fit: LinearFit {
                slope: 1.1,
                intercept: -0.5,
            },
            report: MetricReport {
                rmse: 0.3,
                explained_variance: 0.9,
                n: 10,
            },
        });
        let bytes = m.to_bytes().unwrap();
        assert_eq!(&bytes[..4], b"SLPM");
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 2);
        match SavedModel::from_bytes(&bytes).unwrap() {
            SavedModel::Proxy(p) => assert_eq!(p.ratio, 25.0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn gp_is_usable_after_load() {
        let opts = GpOptions {
            fixed: Some(GpHyper {
                signal_var: 1.0,
                length_scale: 1.0,
                noise_var: 0.01,
            }),
            ..GpOptions::default()
        };
        let gp = GpModel::fit(&[0.0, 1.0], &[1.0, 2.0], &opts).unwrap();
        let want = gp.predict(&[0.5]).unwrap();
        let back = SavedModel::from_bytes(&SavedModel::Gp(gp).to_bytes().unwrap()).unwrap();
        let SavedModel::Gp(g) = back else { panic!() };
        assert_eq!(g.predict(&[0.5]).unwrap(), want);
    }

    #[test]
    fn rejects_corruption() {
        assert!(SavedModel::from_bytes(b"XXXX").is_err());
        let m = SavedModel::Extrapolation(StepExtrapolation {
            m: 1,
            n: 2,
            fit: LinearFit {
                slope: 1.0,
                intercept: 0.0,
            },
            report: MetricReport {
                rmse: 0.0,
                explained_variance: 1.0,
                n: 3,
            },
        });
        let mut b = m.to_bytes().unwrap();
        b.pop();
        assert!(SavedModel::from_bytes(&b).is_err());
        let mut b = m.to_bytes().unwrap();
        b[8] = 9;
        assert!(SavedModel::from_bytes(&b).is_err());
    }
}
