//! Scale-aware crowd localization: per-scene Gaussian mixture scale modelling,
//! row-band zoom planning, a small trainable locator and a scoped EMA teacher.

pub mod error;
pub mod eval;
pub mod gmm;
pub mod io;
pub mod locator;
pub mod pipeline;
pub mod resample;
pub mod scope;
pub mod seed;
pub mod synth;
pub mod teacher;
pub mod types;

pub use error::{Error, Result};
pub use locator::Locator;
pub use types::{ImageGrid, InstanceAnnotation, MapKind, PixelMap, Scene};
