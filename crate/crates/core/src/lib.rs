pub mod augment;
pub mod codec;
pub mod error;
pub mod gradcheck;
pub mod image;
pub mod io;
pub mod metrics;
pub mod model;
pub mod registration;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
