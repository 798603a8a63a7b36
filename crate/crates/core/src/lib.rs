//! Train sine-activated coordinate networks (SIRENs) on images, build
//! reproducible performance datasets, and predict the PSNR a network will
//! reach before training it.

pub mod cli;
pub mod codec;
pub mod error;
pub mod experiments;
pub mod floatser;
pub mod harness;
pub mod imaging;
pub mod linalg;
pub mod ntk;
pub mod optim;
pub mod predictors;
pub mod rng;
pub mod siren;
pub mod trig;

pub use error::{Error, Result};
