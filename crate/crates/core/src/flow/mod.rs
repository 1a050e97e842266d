//! ODE flows of vector fields on Gaussian space and their densities.

pub mod adapted;
pub mod engine;
pub mod field;
pub mod moments;
pub mod solver;
pub mod transport;

pub use adapted::{adaptedness_check, AdaptednessReport};
pub use engine::{
    density_along_flow, flow_law_residual, galerkin_convergence, group_law_residual, integrate_flow, DensityMode,
    FlowOptions, FlowResult,
};
pub use field::{ChaosPath, ClosedForm, VectorField};
pub use moments::{density_derivative_check, density_lp_check, exp_moment_diagnostics, MomentDiagnostics};
pub use solver::Solver;
pub use transport::{transport_pde_residual, TransportReport};
