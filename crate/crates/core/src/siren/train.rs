use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{coord_grid, normalize, ImageTensor};
use crate::optim::AdamState;

use super::config::SirenConfig;
use super::net::Workspace;
use super::weights::{init_siren, SirenWeights};
use super::psnr_from_mse;

/// Steps at or below this are always recorded on the loss curve.
pub const DENSE_CURVE_STEPS: usize = 100;
/// Recording stride beyond the dense prefix.
pub const CURVE_STRIDE: usize = 10;

/// Whether `step` appears on the recorded loss curve of a `total`-step run.
pub fn is_curve_step(step: usize, total: usize) -> bool {
    step <= DENSE_CURVE_STEPS || step % CURVE_STRIDE == 0 || step == total
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    /// Number of optimizer updates applied before this evaluation.
    pub step: usize,
    #[serde(with = "crate::floatser")]
    pub psnr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "state")]
pub enum RunStatus {
    Completed,
    /// Loss became non-finite at `step`; the curve holds every finite point before it.
    Diverged { step: usize, reason: String },
    Failed { reason: String },
}

impl RunStatus {
    pub fn is_ok(&self) -> bool {
        matches!(self, RunStatus::Completed)
    }
}

/// One dataset row: a training job and what it achieved.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    #[serde(default)]
    pub id: String,
    pub config: SirenConfig,
    pub image_id: String,
    #[serde(with = "crate::floatser")]
    pub max_psnr: f64,
    pub argmax_step: usize,
    pub loss_curve: Vec<CurvePoint>,
    #[serde(default)]
    pub best_weights_ref: String,
    pub wallclock_seconds: f64,
    pub status: RunStatus,
}

impl TrainRecord {
    /// PSNR recorded at exactly `step`, if the curve has it.
    pub fn psnr_at(&self, step: usize) -> Option<f64> {
        self.loss_curve
            .binary_search_by_key(&step, |p| p.step)
            .ok()
            .map(|i| self.loss_curve[i].psnr)
    }

    /// Running maximum of the curve up to and including `step`.
    pub fn max_psnr_until(&self, step: usize) -> Option<f64> {
        self.loss_curve
            .iter()
            .take_while(|p| p.step <= step)
            .map(|p| p.psnr)
            .reduce(f64::max)
    }
}

pub struct TrainOutcome {
    pub record: TrainRecord,
    pub best_weights: SirenWeights,
    pub final_weights: SirenWeights,
}

/// Fits a SIREN to `image` from the config's own initialization.
pub fn train(config: &SirenConfig, image: &ImageTensor) -> Result<TrainOutcome> {
    train_from(config, image, init_siren(config))
}

pub fn train_from(config: &SirenConfig, image: &ImageTensor, init: SirenWeights) -> Result<TrainOutcome> {
    train_observed(config, image, init, |_, _, _| {})
}

/// Full-batch Adam training. `observer(step, weights, psnr)` sees the
/// weights after `step` updates together with their PSNR.
pub fn train_observed<F>(
    config: &SirenConfig,
    image: &ImageTensor,
    init: SirenWeights,
    mut observer: F,
) -> Result<TrainOutcome>
where
    F: FnMut(usize, &SirenWeights, f64),
{
    config.validate()?;
    if image.height != config.image_size || image.width != config.image_size {
        return Err(Error::Dimension(format!(
            "image is {}x{}, config expects {}x{}",
            image.height, image.width, config.image_size, config.image_size
        )));
    }
    if init.width() != config.width || init.depth() != config.depth {
        return Err(Error::Dimension("initial weights do not match the config".into()));
    }
    init.validate()?;

    let start = Instant::now();
    let coords = coord_grid(config.image_size);
    let targets = normalize(image);
    let mut weights = init;
    let mut grads = weights.zeros_like();
    let mut adam = AdamState::new(&weights);
    let mut ws = Workspace::new();

    let mut best_psnr = f64::NEG_INFINITY;
    let mut best_step = 0;
    let mut best_weights = weights.clone();
    let mut curve = Vec::new();
    let mut status = RunStatus::Completed;

    for step in 0..=config.steps {
        let loss = if step < config.steps {
            ws.loss_and_grad_into(&weights, config.omega0, &coords, &targets, &mut grads)
        } else {
            ws.loss(&weights, config.omega0, &coords, &targets)
        };
        let loss = match loss {
            Ok(l) => l,
            Err(Error::Numeric { layer }) => {
                status = RunStatus::Diverged {
                    step,
                    reason: format!("non-finite value in layer {layer}"),
                };
                break;
            }
            Err(e) => return Err(e),
        };
        let psnr = psnr_from_mse(loss)?;
        observer(step, &weights, psnr);
        if psnr > best_psnr {
            best_psnr = psnr;
            best_step = step;
            best_weights.clone_from(&weights);
        }
        if is_curve_step(step, config.steps) {
            curve.push(CurvePoint { step, psnr });
        }
        if step < config.steps {
            adam.step(&mut weights, &grads, config.learning_rate)?;
        }
    }

    Ok(TrainOutcome {
        record: TrainRecord {
            id: String::new(),
            config: config.clone(),
            image_id: image.id.clone(),
            max_psnr: best_psnr,
            argmax_step: best_step,
            loss_curve: curve,
            best_weights_ref: String::new(),
            wallclock_seconds: start.elapsed().as_secs_f64(),
            status,
        },
        best_weights,
        final_weights: weights,
    })
}
