use crate::error::{Error, Result};
use crate::rng;

use super::config::{InitPolicy, LayerInit, SirenConfig};

/// Number of input coordinates (x, y).
pub const IN_DIM: usize = 2;
/// Number of output channels (r, g, b).
pub const OUT_DIM: usize = 3;

/// One affine layer. `weight` is row-major `rows x cols` (out x in).
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub rows: usize,
    pub cols: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Layer {
            rows,
            cols,
            weight: vec![0.0; rows * cols],
            bias: vec![0.0; rows],
        }
    }

    #[inline]
    pub fn w(&self, r: usize, c: usize) -> f64 {
        self.weight[r * self.cols + c]
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

/// Ordered weights and biases of a SIREN.
#[derive(Clone, Debug, PartialEq)]
pub struct SirenWeights {
    pub layers: Vec<Layer>,
}

/// Shapes `(out, in)` of each layer of a `width`/`depth` SIREN.
pub fn layer_shapes(width: usize, depth: usize) -> Vec<(usize, usize)> {
    (0..depth)
        .map(|l| {
            let fan_in = if l == 0 { IN_DIM } else { width };
            let out = if l + 1 == depth { OUT_DIM } else { width };
            (out, fan_in)
        })
        .collect()
}

impl SirenWeights {
    pub fn zeros(width: usize, depth: usize) -> Self {
        SirenWeights {
            layers: layer_shapes(width, depth)
                .into_iter()
                .map(|(r, c)| Layer::zeros(r, c))
                .collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        SirenWeights {
            layers: self.layers.iter().map(|l| Layer::zeros(l.rows, l.cols)).collect(),
        }
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn width(&self) -> usize {
        self.layers.first().map_or(0, |l| l.rows)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    /// Checks the dimension chain and that every entry is finite.
    pub fn validate(&self) -> Result<()> {
        if self.layers.len() < 2 {
            return Err(Error::Dimension(format!(
                "need at least 2 layers, got {}",
                self.layers.len()
            )));
        }
        let mut fan_in = IN_DIM;
        for (i, l) in self.layers.iter().enumerate() {
            if l.cols != fan_in {
                return Err(Error::Dimension(format!(
                    "layer {i} expects {} inputs, previous layer gives {fan_in}",
                    l.cols
                )));
            }
            if l.weight.len() != l.rows * l.cols || l.bias.len() != l.rows {
                return Err(Error::Dimension(format!("layer {i} storage does not match its shape")));
            }
            if l.weight.iter().chain(&l.bias).any(|v| !v.is_finite()) {
                return Err(Error::Numeric { layer: i });
            }
            fan_in = l.rows;
        }
        if fan_in != OUT_DIM {
            return Err(Error::Dimension(format!("output layer has {fan_in} rows, expected {OUT_DIM}")));
        }
        let width = self.width();
        if self.layers[..self.layers.len() - 1].iter().any(|l| l.rows != width) {
            return Err(Error::Dimension("hidden layers must share one width".into()));
        }
        Ok(())
    }

    pub fn same_shape(&self, other: &SirenWeights) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.rows == b.rows && a.cols == b.cols)
    }

    /// Flattens as layer by layer, weight row-major then bias.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(&l.weight);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.param_count());
        let mut at = 0;
        for l in &mut self.layers {
            let nw = l.weight.len();
            l.weight.copy_from_slice(&flat[at..at + nw]);
            at += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&flat[at..at + nb]);
            at += nb;
        }
    }

    pub fn fill(&mut self, value: f64) {
        for l in &mut self.layers {
            l.weight.fill(value);
            l.bias.fill(value);
        }
    }

    pub fn max_abs_diff(&self, other: &SirenWeights) -> f64 {
        self.to_flat()
            .iter()
            .zip(other.to_flat())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl crate::optim::Parameters for SirenWeights {
    fn blocks(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
            .collect()
    }

    fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }
}

fn init_layer(layer: &mut Layer, rule: LayerInit, rng: &mut rng::Prng) {
    let wb = rule.weight_bound(layer.cols);
    let bb = rule.bias_bound(layer.cols);
    for w in &mut layer.weight {
        *w = if wb > 0.0 { rng::uniform(rng, -wb, wb) } else { 0.0 };
    }
    for b in &mut layer.bias {
        *b = if bb > 0.0 { rng::uniform(rng, -bb, bb) } else { 0.0 };
    }
}

/// Draws initial weights for `config`.
///
/// Layer `l` is drawn from its own stream `(seed, l)`, where the seed is the
/// job seed unless the init policy pins it. Pinning only the first-layer seed
/// therefore reproduces the same first layer under any remainder.
pub fn init_siren(config: &SirenConfig) -> SirenWeights {
    init_with_policy(config.width, config.depth, config.seed, &config.init)
}

pub fn init_with_policy(width: usize, depth: usize, seed: u64, policy: &InitPolicy) -> SirenWeights {
    let mut weights = SirenWeights::zeros(width, depth);
    for (l, layer) in weights.layers.iter_mut().enumerate() {
        let (rule, layer_seed) = if l == 0 {
            (policy.first, policy.first_seed.unwrap_or(seed))
        } else {
            (policy.rest, policy.rest_seed.unwrap_or(seed))
        };
        let mut rng = rng::stream(layer_seed, l as u64);
        init_layer(layer, rule, &mut rng);
    }
    weights
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_chain() {
        let w = init_siren(&SirenConfig::new(3, 2, 0.05, 16, 7));
        let shapes: Vec<_> = w.layers.iter().map(|l| (l.rows, l.cols, l.bias.len())).collect();
        assert_eq!(shapes, vec![(3, 2, 3), (3, 3, 3)]);
        assert!(w.validate().is_ok());
    }

    #[test]
    fn deterministic() {
        let c = SirenConfig::new(5, 4, 0.05, 16, 7);
        assert_eq!(init_siren(&c), init_siren(&c));
        assert_ne!(init_siren(&c), init_siren(&c.clone().with_seed(8)));
    }

    #[test]
    fn hidden_bound() {
        let w = init_siren(&SirenConfig::new(28, 10, 0.05, 16, 3));
        let bound = (6.0f64 / 28.0).sqrt();
        assert!((bound - 0.4629).abs() < 1e-4);
        for l in &w.layers[1..] {
            assert!(l.weight.iter().all(|v| v.abs() <= bound));
        }
        let first = 1.0 / 2f64.sqrt();
        assert!(w.layers[0].weight.iter().all(|v| v.abs() <= first));
    }

    #[test]
    fn pinned_first_layer_survives_seed_change() {
        let policy = InitPolicy::default().with_first_seed(99);
        let a = init_siren(&SirenConfig::new(6, 4, 0.05, 16, 1).with_init(policy));
        let b = init_siren(&SirenConfig::new(6, 4, 0.05, 16, 2).with_init(policy));
        assert_eq!(a.layers[0], b.layers[0]);
        assert_ne!(a.layers[1], b.layers[1]);
    }

    #[test]
    fn validate_rejects_broken_chain() {
        let mut w = SirenWeights::zeros(4, 3);
        w.layers[1] = Layer::zeros(4, 5);
        assert!(matches!(w.validate(), Err(Error::Dimension(_))));
        let mut w = SirenWeights::zeros(4, 3);
        w.layers[2].bias[0] = f64::NAN;
        assert!(matches!(w.validate(), Err(Error::Numeric { layer: 2 })));
    }

    #[test]
    fn flat_roundtrip() {
        let w = init_siren(&SirenConfig::new(4, 3, 0.05, 16, 5));
        let mut z = w.zeros_like();
        z.set_flat(&w.to_flat());
        assert_eq!(z, w);
    }
}
