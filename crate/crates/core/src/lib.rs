//! EEG electrode-frequency distribution maps, a from-scratch denoising
//! diffusion model, and the classifier experiments used to judge whether
//! synthetic maps help as training data.
//!
//! Pipeline: [`datagen`] or a loaded [`signal::Recording`] →
//! [`signal::stft`] → [`efdm::build_efdms`] → [`diffusion`] training and
//! sampling → [`classifier`] → [`harness`] reports.

pub mod checkpoint;
pub mod classifier;
mod codec;
pub mod datagen;
pub mod diffusion;
pub mod efdm;
pub mod harness;
pub mod nn;
pub mod error;
pub mod rng;
pub mod signal;
pub mod tensor;

pub use error::{Error, Result};
pub use rng::SeededRng;
pub use tensor::{Adam, ParamStore, Tape, Tensor, Var};
