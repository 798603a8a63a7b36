//! Half-precision weight storage and the `SIRN` blob format.
//!
//! Layout (little-endian): magic `SIRN`, u32 version, u32 depth, u32 width,
//! then for each layer the row-major weight matrix followed by the bias, as
//! IEEE binary16 values.

use half::f16;

use crate::error::{Error, Result};

use super::weights::{layer_shapes, Layer, SirenWeights};

pub const BLOB_MAGIC: &[u8; 4] = b"SIRN";
pub const BLOB_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct QuantizedLayer {
    pub rows: usize,
    pub cols: usize,
    pub weight: Vec<f16>,
    pub bias: Vec<f16>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuantizedWeights {
    pub version: u32,
    pub depth: usize,
    pub width: usize,
    pub layers: Vec<QuantizedLayer>,
    /// Entries that were outside the half-precision range and got clamped.
    pub clamped: usize,
}

fn to_half(v: f64, clamped: &mut usize) -> f16 {
    let max = f64::from(f16::MAX);
    let c = if v > max {
        *clamped += 1;
        max
    } else if v < -max {
        *clamped += 1;
        -max
    } else {
        v
    };
    // half rounds to nearest, ties to even.
    f16::from_f64(c)
}

pub fn quantize_weights(weights: &SirenWeights) -> QuantizedWeights {
    let mut clamped = 0;
    let layers = weights
        .layers
        .iter()
        .map(|l| QuantizedLayer {
            rows: l.rows,
            cols: l.cols,
            weight: l.weight.iter().map(|&v| to_half(v, &mut clamped)).collect(),
            bias: l.bias.iter().map(|&v| to_half(v, &mut clamped)).collect(),
        })
        .collect();
    QuantizedWeights {
        version: BLOB_VERSION,
        depth: weights.depth(),
        width: weights.width(),
        layers,
        clamped,
    }
}

pub fn dequantize(q: &QuantizedWeights) -> SirenWeights {
    SirenWeights {
        layers: q
            .layers
            .iter()
            .map(|l| Layer {
                rows: l.rows,
                cols: l.cols,
                weight: l.weight.iter().map(|v| v.to_f64()).collect(),
                bias: l.bias.iter().map(|v| v.to_f64()).collect(),
            })
            .collect(),
    }
}

impl QuantizedWeights {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 2 * self.param_count());
        out.extend_from_slice(BLOB_MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&(self.depth as u32).to_le_bytes());
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        for l in &self.layers {
            for v in l.weight.iter().chain(&l.bias) {
                out.extend_from_slice(&v.to_bits().to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..4] != BLOB_MAGIC {
            return Err(Error::Format("not a SIRN weight blob".into()));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
        let version = word(4);
        if version != BLOB_VERSION {
            return Err(Error::Format(format!("unsupported SIRN version {version}")));
        }
        let depth = word(8) as usize;
        let width = word(12) as usize;
        if depth < 2 || width == 0 {
            return Err(Error::Format(format!("bad SIRN header: depth {depth}, width {width}")));
        }
        let shapes = layer_shapes(width, depth);
        let total: usize = shapes.iter().map(|(r, c)| r * c + r).sum();
        let body = &bytes[16..];
        if body.len() != 2 * total {
            return Err(Error::Format(format!(
                "SIRN body has {} bytes, expected {}",
                body.len(),
                2 * total
            )));
        }
        let mut values = body
            .chunks_exact(2)
            .map(|c| f16::from_bits(u16::from_le_bytes([c[0], c[1]])));
        let layers = shapes
            .into_iter()
            .map(|(rows, cols)| QuantizedLayer {
                rows,
                cols,
                weight: values.by_ref().take(rows * cols).collect(),
                bias: values.by_ref().take(rows).collect(),
            })
            .collect();
        Ok(QuantizedWeights {
            version,
            depth,
            width,
            layers,
            clamped: 0,
        })
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }
}
