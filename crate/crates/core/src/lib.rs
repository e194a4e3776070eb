//! Coded-exposure blur decomposition.
//!
//! * [`code`]: exposure code representation, spectrum scoring and search.
//! * [`forward`]: the coded-exposure image formation model.
//! * [`data`]: dataset indexing, window sampling, augmentation.
//! * [`nn`]: the BDINR decomposition network.
//! * [`loss`]: training losses and PSNR/SSIM metrics.
//! * [`train`]: optimizer, schedule, checkpoints, training and evaluation.

pub mod code;
pub mod data;
pub mod error;
pub mod forward;
pub mod frames;
pub mod loss;
pub mod nn;
pub mod train;

pub use code::{dft_magnitude_spectrum, is_symmetric, search_codes, ExposureCode, SearchParams, SpectrumScore};
pub use error::{Error, Result};
pub use forward::{
    add_noise, reblur, reblur_tensor, synthesize_coded_blur, toy_translation_scene, CodedSnapshot,
    Direction, Normalization,
};
pub use frames::{FrameStack, Image};
pub use nn::{Bdinr, Mode, NetworkConfig};
pub use train::{evaluate, train, Checkpoint, EvalReport, TrainConfig, Trainer};
