//! Independence-based sample reweighting and sample-weight averaging for
//! stable prediction under covariate shift.
//!
//! The modules build on each other: [`numeric`] and [`nn`] supply the linear
//! algebra and networks, [`datagen`] and [`dataio`] produce designs,
//! [`reweight`] learns decorrelating weights, [`sawa`] averages them,
//! [`regress`] fits weighted models and [`eval`] scores them across test
//! environments. [`experiment`] wires everything to a config file.

// `!(x >= 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop, clippy::too_many_arguments)]

pub mod datagen;
pub mod dataio;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod nn;
pub mod numeric;
pub mod regress;
pub mod reweight;
pub mod sawa;

pub use error::{Error, Result};
