//! Periodic fields on the 3-torus: grids, transforms, calculus, projections,
//! filters, norms and dumps.

pub mod grid;
pub mod io;
pub mod ops;
pub mod random;
pub mod spectral;
pub mod timeseries;
pub mod types;

pub use grid::{Grid, GridSpec, Period};
pub use ops::{
    advect, curl, div, div_tensor, dot, grad, grad_sup, gradients, inverse_divergence, laplacian,
    leray_project, low_pass, momentum_residual, solenoidal_band, mul, norms, pressure_from_force, pressure_solve,
    self_outer, sup_norm, sym_outer, Norms,
};
pub use spectral::{Spectral, C64};
pub use timeseries::TimeSeries;
pub use types::{
    sym_index, GridField, ScalarField, SymTensorField, VectorField, SYM_PAIRS, SYM_WEIGHTS,
};

pub type VectorSeries = TimeSeries<VectorField>;
pub type ScalarSeries = TimeSeries<ScalarField>;
pub type TensorSeries = TimeSeries<SymTensorField>;
