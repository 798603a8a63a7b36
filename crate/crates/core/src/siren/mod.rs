//! The sine-activated coordinate network: configuration, initialization,
//! forward/backward passes, training, and half-precision storage.

mod config;
mod net;
mod quant;
mod train;
mod weights;

pub use config::{
    bits_per_pixel, param_count, InitPolicy, LayerInit, SirenConfig, BITS_PER_PARAM, DEFAULT_LEARNING_RATE,
    DEFAULT_STEPS,
};
pub use net::{forward, loss_and_grad, mse, ForwardTrace, Workspace};
pub use quant::{dequantize, quantize_weights, QuantizedLayer, QuantizedWeights, BLOB_MAGIC, BLOB_VERSION};
pub use train::{
    is_curve_step, train, train_from, train_observed, CurvePoint, RunStatus, TrainOutcome, TrainRecord,
    CURVE_STRIDE, DENSE_CURVE_STEPS,
};
pub use weights::{init_siren, init_with_policy, layer_shapes, Layer, SirenWeights, IN_DIM, OUT_DIM};

use crate::error::{Error, Result};

/// PSNR in dB of an MSE measured on `[-1, 1]`-scaled pixels.
///
/// The MSE is first brought to the `[0, 1]` scale (divided by 4), so peak
/// signal is 1. Zero error gives `+inf`.
pub fn psnr_from_mse(mse: f64) -> Result<f64> {
    if mse.is_nan() || mse < 0.0 {
        return Err(Error::Argument(format!("mse must be >= 0, got {mse}")));
    }
    Ok(psnr_from_unit_mse(mse / 4.0))
}

/// PSNR in dB of an MSE already on the `[0, 1]` scale.
pub fn psnr_from_unit_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    }
}
