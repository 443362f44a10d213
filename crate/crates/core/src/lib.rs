//! Steklov eigenvalues on circular multiply-connected domains.
//!
//! The domain is a disk with disjoint circular holes. Each boundary circle
//! carries a positive conformal weight `g`, and the Steklov problem
//! `Δu = 0`, `∂_ν u = λ g u` is solved through single- and double-layer
//! potentials. On top of the spectrum the crate provides comparison with the
//! arclength model spectrum, cluster-wise quasimode decompositions, interior
//! extensions and nodal-set measurement.

pub mod annulus_oracle;
pub mod dtn_solver;
pub mod error;
pub mod field;
pub mod fourier;
pub mod geometry;
pub mod layer_ops;
pub mod nodal;
pub mod quadrature;
pub mod quasimode;
pub mod rates;

pub use error::{Error, Result};
pub use field::ScalarField;
pub use geometry::{validate_domain, Circle, KoebeDomain, Point, ValidDomain, WeightSeries};
