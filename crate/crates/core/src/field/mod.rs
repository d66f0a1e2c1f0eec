//! Periodic fields on the 2π-torus and their spectral operators.

mod fields;
mod grid;
pub mod ops;
mod spectral;

pub use fields::{MatrixField, ScalarField, VectorField};
pub(crate) use fields::{sync_spectra_all, sync_values_all};
pub use grid::{Dealias, GridError, GridSpec};
pub use ops::{
    curl_curl, curl_curl_rows, dealias, divergence, gradient, inverse_laplacian, laplacian, leray_complement,
    leray_project, matrix_divergence, resample, vector_gradient, vector_laplacian,
};
pub use spectral::Spectral;
