//! Discrete Laplace-Beltrami operator: mixed-Voronoi mass, cotangent
//! stiffness, and the lowest generalized eigenpairs.

mod operator;
mod spectrum;

pub use operator::{cotan_laplacian, voronoi_areas, SparseSym};
pub use spectrum::{
    lb_spectrum, max_residual, mesh_spectrum, EigenSolver, LbSpectrum, DEFAULT_EIGEN_COUNT, DENSE_LIMIT, RESIDUAL_TOL,
};
