//! Encoding-error predictors and the metrics used to judge them.

mod ablation;
mod encoding;
mod extrapolate;
mod gp;
mod metrics;
mod mlp;
mod persist;
mod proxy;

use crate::codec::{proxy_features_with, DctCodec, RateDistortion};
use crate::error::{Error, Result};
use crate::imaging::ImageTensor;
use crate::siren::SirenConfig;

pub use ablation::{feature_ablation, AblationRow, FeatureGroup};
pub use encoding::{gamma_encode, normalized_hyperparameters, positional_encode, EncodingRanges, ENCODING_DIM, FREQUENCIES, PER_PARAM};
pub use extrapolate::{extrapolate_from_step, StepExtrapolation};
pub use gp::{GpHyper, GpModel, GpOptions, JITTERS, MAX_TRAINING_POINTS};
pub use metrics::{explained_variance, irreducible_error, mean, rmse, variance, LinearFit, MetricReport};
pub use mlp::{mlp_fit, mlp_fit_with, Dense, FeatureMlp, Mlp, MlpConfig, MlpRow, Split, MIN_ROWS};
pub use persist::{SavedModel, MODEL_MAGIC, MODEL_VERSION};
pub use proxy::{fit_codec_proxy, fit_codec_proxy_with, proxy_ev_at, ProxyFit, MAX_RATIO, MIN_RATIO, SEARCH_TOLERANCE};

/// Per-image feature vectors consumed by the GP and MLP predictors.
pub trait ImageFeatures: Send + Sync {
    fn dim(&self) -> usize;
    fn extract(&self, img: &ImageTensor) -> Result<Vec<f64>>;
}

/// Codec PSNRs at compression ratios 7, 25 and 100.
pub struct CodecFeatures<C: RateDistortion = DctCodec>(pub C);

impl Default for CodecFeatures {
    fn default() -> Self {
        CodecFeatures(DctCodec::default())
    }
}

impl<C: RateDistortion> ImageFeatures for CodecFeatures<C> {
    fn dim(&self) -> usize {
        3
    }

    fn extract(&self, img: &ImageTensor) -> Result<Vec<f64>> {
        Ok(proxy_features_with(&self.0, img)?.to_vec())
    }
}

/// GP inputs: image features followed by width, depth, omega0 and image size.
pub fn gp_input(config: &SirenConfig, image_features: &[f64]) -> Vec<f64> {
    let mut v = image_features.to_vec();
    v.extend([
        config.width as f64,
        config.depth as f64,
        config.omega0,
        config.image_size as f64,
    ]);
    v
}

/// Everything a predictor may need about one prospective training job.
#[derive(Clone, Copy, Debug, Default)]
pub struct Query<'a> {
    pub config: Option<&'a SirenConfig>,
    pub image: Option<&'a ImageTensor>,
    /// Precomputed image features (codec PSNRs at ratios 7/25/100).
    pub image_features: Option<&'a [f64]>,
    /// Best PSNR seen within the first `m` steps, for step extrapolation.
    pub early_psnr: Option<f64>,
}

impl<'a> Query<'a> {
    pub fn new(config: &'a SirenConfig, image: &'a ImageTensor) -> Self {
        Query {
            config: Some(config),
            image: Some(image),
            ..Query::default()
        }
    }

    fn config(&self) -> Result<&'a SirenConfig> {
        self.config.ok_or_else(|| Error::Argument("predictor needs a configuration".into()))
    }

    fn image(&self) -> Result<&'a ImageTensor> {
        self.image.ok_or_else(|| Error::Argument("predictor needs an image".into()))
    }

    fn features(&self) -> Result<Vec<f64>> {
        match self.image_features {
            Some(f) => Ok(f.to_vec()),
            None => CodecFeatures::default().extract(self.image()?),
        }
    }
}

/// Predicts the PSNR a training job will reach.
pub trait PsnrPredictor {
    fn predict(&self, q: &Query) -> Result<f64>;
}

impl PsnrPredictor for StepExtrapolation {
    fn predict(&self, q: &Query) -> Result<f64> {
        let early = q
            .early_psnr
            .ok_or_else(|| Error::Argument(format!("needs the PSNR reached by step {}", self.m)))?;
        Ok(StepExtrapolation::predict(self, early))
    }
}

impl PsnrPredictor for ProxyFit {
    fn predict(&self, q: &Query) -> Result<f64> {
        let codec = DctCodec {
            tolerance: SEARCH_TOLERANCE,
        };
        ProxyFit::predict(self, &codec, q.image()?)
    }
}

impl PsnrPredictor for GpModel {
    fn predict(&self, q: &Query) -> Result<f64> {
        Ok(GpModel::predict(self, &gp_input(q.config()?, &q.features()?))?.0)
    }
}

impl PsnrPredictor for FeatureMlp {
    fn predict(&self, q: &Query) -> Result<f64> {
        FeatureMlp::predict(self, q.config()?, &q.features()?)
    }
}

impl PsnrPredictor for SavedModel {
    fn predict(&self, q: &Query) -> Result<f64> {
        match self {
            SavedModel::Extrapolation(m) => PsnrPredictor::predict(m, q),
            SavedModel::Proxy(m) => PsnrPredictor::predict(m, q),
            SavedModel::Gp(m) => PsnrPredictor::predict(m, q),
            SavedModel::Mlp(m) => PsnrPredictor::predict(m, q),
        }
    }
}
