//! Numerical laboratory for mean-field control at desk scale.
//!
//! The crate is organized around one state object, the probability measure
//! on the flat torus `T^d` or the unit cube (module [`measures`]), the
//! distances used to compare such measures (module [`metrics`]), and four
//! consumers of those representations:
//!
//! * [`quantize`]: optimal quantization and empirical sampling rates,
//! * [`hopflax`]: zero-noise value functions via inf-convolution formulas,
//! * [`pde`]: finite-difference HJB and Fokker-Planck solvers with
//!   idiosyncratic and common noise,
//! * [`regularize`]: mollification / sup-convolution / shrink operators on a
//!   finite lattice of measures.

pub mod domain;
pub mod error;
pub mod fourier;
pub mod hopflax;
pub mod measures;
pub mod metrics;
pub mod pde;
pub mod quantize;
pub mod rates;
pub mod regularize;
pub mod seeds;

pub use domain::Domain;
pub use error::{Error, Result};
pub use measures::{EmpiricalMeasure, GridDensity, Measure, MollifierKernel};
