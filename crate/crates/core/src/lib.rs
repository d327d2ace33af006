//! Probability distributions on the rotation group.
//!
//! The crate implements the Rotation Laplace and matrix Fisher distributions
//! on SO(3) and their quaternion counterparts (Quaternion Laplace, Bingham)
//! on S³. Normalization constants, entropies and likelihood gradients are
//! evaluated on equivolumetric Hopf grids; [`fit`] estimates parameters by
//! maximum likelihood and [`experiments`] holds the robustness analyses.
//!
//! All numerics are generic over [`Real`] (`f32` or `f64`); the aliases below
//! fix the scalar to `f64`, which is what the CLI and experiments use.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod distributions;
pub mod error;
pub mod experiments;
pub mod fit;
pub mod grid;
pub mod io;
pub mod scalar;
pub mod so3;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Rotation = so3::RotationMatrix<f64>;
pub type Quaternion = so3::UnitQuaternion<f64>;
pub type SvdF64 = so3::ProperSvd<f64>;
pub type Grid = grid::So3Grid<f64>;
pub type QuatGrid = grid::S3Grid<f64>;
