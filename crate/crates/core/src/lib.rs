//! Numerical linearization of non-autonomous ODEs under exponential
//! trichotomy.
//!
//! The crate is organised along the pipeline it implements:
//!
//! * [`dynamics`]: flows, fundamental matrices, separation envelopes;
//! * [`trichotomy`]: projections, certification of the decay inequalities,
//!   Green kernels;
//! * [`conjugacy`]: the equivalence maps `H` and `L` computed by orbit-wise
//!   fixed-point iteration;
//! * [`verify`]: property checks on the constructed maps.

pub mod dynamics;
pub mod linalg;
pub mod report;
pub mod trichotomy;
pub mod conjugacy;
pub mod verify;
