pub mod error;
pub mod grad;
pub mod model;
pub mod rpm;
pub mod train;
pub mod vsa;

pub use error::{Error, Result};
