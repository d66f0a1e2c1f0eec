//! Pseudo-spectral solver and verification lab for two-dimensional
//! incompressible Oldroyd-B flow with biharmonic regularization on the
//! 2π-periodic torus.
//!
//! The numerical core is generic over [`real::Real`] (`f32` or `f64`); the
//! aliases below fix the precision for the common cases.

pub mod alloc;
pub mod dynamics;
pub mod family;
pub mod field;
pub mod flux;
pub mod io;
pub(crate) mod kernels;
pub mod mat2;
pub mod quadrature;
pub mod real;
pub mod state;
pub mod trajectory;

pub type Spectral64 = field::Spectral<f64>;
pub type Spectral32 = field::Spectral<f32>;
pub type ScalarField64 = field::ScalarField<f64>;
pub type ScalarField32 = field::ScalarField<f32>;
pub type VectorField64 = field::VectorField<f64>;
pub type VectorField32 = field::VectorField<f32>;
pub type MatrixField64 = field::MatrixField<f64>;
pub type MatrixField32 = field::MatrixField<f32>;
pub type SimState64 = state::SimState<f64>;
pub type SimState32 = state::SimState<f32>;
pub type Stepper64 = dynamics::Stepper<f64>;
pub type Stepper32 = dynamics::Stepper<f32>;
pub type FluxFields64 = flux::FluxFields<f64>;
pub type FluxFields32 = flux::FluxFields<f32>;
