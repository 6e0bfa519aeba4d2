//! EEG anonymization with a transformer autoencoder trained against frozen
//! sleep-staging and subject re-identification classifiers.

pub mod autograd;
mod error;
pub mod evaluation;
pub mod models;
pub mod signal_io;
pub mod synthetic;
pub mod training;

pub use error::{Error, Result};
