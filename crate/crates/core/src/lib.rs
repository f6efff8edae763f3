//! Numerical laboratory for the inverse heat-kernel problem on discrete
//! metric-measure spaces: observe p(x, y, t) on a window V, recover the
//! spectral data on V, then the interior geometry by boundary control.

pub mod audit;
pub mod control;
pub mod error;
pub mod fit;
pub mod gelfand;
pub mod linalg;
pub mod mms;
pub mod reconstruct;
pub mod spectral;
pub mod stability;
pub mod wave;
pub mod window;

pub use error::{Error, Result};
