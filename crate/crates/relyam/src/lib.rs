//! Relative Yamabe invariants on compact 3-manifolds with boundary.
//!
//! The crate computes the relative Yamabe invariant and the relative first
//! Laplacian eigenvalue of region pairs (Omega, Sigma), classifies the
//! conformal class by sign, and solves the prescribed nonpositive scalar /
//! boundary mean curvature problem by subcritical minimization continued to
//! the critical exponents, including the Lichnerowicz variant with
//! negative-power source terms.
//!
//! Everything is built on P1 finite elements over tetrahedral meshes; the
//! metric enters only through volume and area weights, per-element inverse
//! metrics for gradients, and nodal curvature fields.

pub mod assembly;
pub mod cli;
pub mod error;
pub mod geometry;
pub mod mesh;
pub mod prescribe;
pub mod quadrature;
pub mod region;
pub mod sparse;
pub mod util;
pub mod variational;

#[cfg(test)]
pub mod testutil;

pub use error::{Error, Result};
pub use mesh::{
    flat_background, generate_unit_ball, generate_unit_cube, load_mesh, save_mesh, BoundaryField,
    Field, RiemannianBackground, SimplicialMesh,
};
pub use region::{active_dofs, is_nested, zero_set, DofSet, RegionPair};
