use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_STEPS: usize = 20_000;
pub const DEFAULT_LEARNING_RATE: f64 = 1e-3;

/// Bits used to store one parameter of a compressed SIREN.
pub const BITS_PER_PARAM: usize = 16;

/// How the entries of one layer are initialized.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LayerInit {
    /// Weights `U(-scale/sqrt(fan_in), scale/sqrt(fan_in))`, biases `U(±1/sqrt(fan_in))`.
    ScaledUniform { scale: f64 },
    /// Weights `U(-1/fan_in, 1/fan_in)` (the original SIREN first-layer rule).
    InverseFanIn,
    /// All weights and biases zero.
    Zero,
}

impl LayerInit {
    pub fn weight_bound(&self, fan_in: usize) -> f64 {
        let n = fan_in as f64;
        match *self {
            LayerInit::ScaledUniform { scale } => scale / n.sqrt(),
            LayerInit::InverseFanIn => 1.0 / n,
            LayerInit::Zero => 0.0,
        }
    }

    pub fn bias_bound(&self, fan_in: usize) -> f64 {
        match self {
            LayerInit::Zero => 0.0,
            _ => 1.0 / (fan_in as f64).sqrt(),
        }
    }
}

/// Initialization policy: one rule for the first layer, one for every later
/// layer, and optional seed overrides so either part can be pinned while the
/// other varies with the job seed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitPolicy {
    pub first: LayerInit,
    pub rest: LayerInit,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first_seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rest_seed: Option<u64>,
}

impl Default for InitPolicy {
    fn default() -> Self {
        InitPolicy {
            first: LayerInit::ScaledUniform { scale: 1.0 },
            rest: LayerInit::ScaledUniform {
                scale: 6f64.sqrt(),
            },
            first_seed: None,
            rest_seed: None,
        }
    }
}

impl InitPolicy {
    /// The original SIREN scheme with the frequency factor moved to the input.
    pub fn classic() -> Self {
        InitPolicy {
            first: LayerInit::InverseFanIn,
            ..Self::default()
        }
    }

    pub fn with_first_seed(mut self, seed: u64) -> Self {
        self.first_seed = Some(seed);
        self
    }

    pub fn with_rest_seed(mut self, seed: u64) -> Self {
        self.rest_seed = Some(seed);
        self
    }

    pub fn is_default(&self) -> bool {
        *self == Self::default()
    }
}

/// Hyperparameters of one SIREN training job.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SirenConfig {
    pub width: usize,
    /// Number of weight matrices, including the output layer.
    pub depth: usize,
    pub omega0: f64,
    /// `omega0 / image_size`.
    pub gamma: f64,
    pub image_size: usize,
    pub seed: u64,
    pub steps: usize,
    pub learning_rate: f64,
    #[serde(default, skip_serializing_if = "InitPolicy::is_default")]
    pub init: InitPolicy,
}

impl SirenConfig {
    /// Builds a config with `omega0 = gamma * image_size` and the default
    /// step count and learning rate.
    pub fn new(width: usize, depth: usize, gamma: f64, image_size: usize, seed: u64) -> Self {
        SirenConfig {
            width,
            depth,
            omega0: gamma * image_size as f64,
            gamma,
            image_size,
            seed,
            steps: DEFAULT_STEPS,
            learning_rate: DEFAULT_LEARNING_RATE,
            init: InitPolicy::default(),
        }
    }

    pub fn with_steps(mut self, steps: usize) -> Self {
        self.steps = steps;
        self
    }

    /// Same architecture for an image of side `size`; gamma is kept and
    /// omega0 follows.
    pub fn with_image_size(mut self, size: usize) -> Self {
        self.image_size = size;
        self.omega0 = self.gamma * size as f64;
        self
    }

    pub fn with_learning_rate(mut self, lr: f64) -> Self {
        self.learning_rate = lr;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_init(mut self, init: InitPolicy) -> Self {
        self.init = init;
        self
    }

    /// A step count of zero is accepted: it is the degenerate run that only
    /// evaluates the initialization.
    pub fn validate(&self) -> Result<()> {
        if self.depth < 2 {
            return Err(Error::Config(format!("depth must be >= 2, got {}", self.depth)));
        }
        if self.width == 0 {
            return Err(Error::Config("width must be >= 1".into()));
        }
        if self.image_size == 0 {
            return Err(Error::Config("image_size must be >= 1".into()));
        }
        if !(self.omega0 > 0.0 && self.omega0.is_finite()) {
            return Err(Error::Config(format!("omega0 must be positive, got {}", self.omega0)));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config(format!("gamma must be positive, got {}", self.gamma)));
        }
        let implied = self.gamma * self.image_size as f64;
        if (implied - self.omega0).abs() > 1e-9 * self.omega0 {
            return Err(Error::Config(format!(
                "omega0 {} != gamma {} * image_size {}",
                self.omega0, self.gamma, self.image_size
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        param_count(self.width, self.depth)
    }

    /// Size of the half-precision representation in bits.
    pub fn size_bits(&self) -> usize {
        self.param_count() * BITS_PER_PARAM
    }

    pub fn bpp(&self) -> f64 {
        bits_per_pixel(self.param_count(), self.image_size * self.image_size)
    }
}

/// Trainable parameter count of a SIREN with 2 inputs and 3 outputs.
pub fn param_count(width: usize, depth: usize) -> usize {
    assert!(depth >= 2, "depth must be >= 2");
    let w = width;
    (2 * w + w) + (depth - 2) * (w * w + w) + (3 * w + 3)
}

pub fn bits_per_pixel(params: usize, pixels: usize) -> f64 {
    (params * BITS_PER_PARAM) as f64 / pixels as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn param_count_examples() {
        assert_eq!(param_count(28, 10), 6667);
        assert_eq!(param_count(1, 2), 9);
        let bpp = bits_per_pixel(6667, 512 * 768);
        assert!((bpp - 0.271).abs() < 5e-4, "{bpp}");
    }

    #[test]
    fn param_count_matches_layer_shapes() {
        for w in 1..10 {
            for d in 2..8 {
                let mut total = 0;
                let mut fan_in = 2;
                for l in 0..d {
                    let out = if l + 1 == d { 3 } else { w };
                    total += out * fan_in + out;
                    fan_in = out;
                }
                assert_eq!(param_count(w, d), total);
            }
        }
    }

    #[test]
    fn validation() {
        assert!(SirenConfig::new(8, 3, 0.05, 32, 1).validate().is_ok());
        assert!(SirenConfig::new(8, 1, 0.05, 32, 1).validate().is_err());
        assert!(SirenConfig::new(0, 3, 0.05, 32, 1).validate().is_err());
        let mut c = SirenConfig::new(8, 3, 0.05, 32, 1);
        c.omega0 *= 1.0 + 1e-6;
        assert!(c.validate().is_err());
        let c = SirenConfig::new(8, 3, 0.05, 32, 1).with_learning_rate(0.0);
        assert!(c.validate().is_err());
    }

    #[test]
    fn default_policy_roundtrips_without_noise() {
        let c = SirenConfig::new(8, 3, 0.05, 32, 1);
        let s = serde_json::to_string(&c).unwrap();
        assert!(!s.contains("init"));
        let back: SirenConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(back, c);
        let c = c.with_init(InitPolicy::default().with_first_seed(4));
        let back: SirenConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }
}
