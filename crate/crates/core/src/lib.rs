//! Fractional Sobolev norms and a constructive extension operator on
//! discretized compact manifolds: closed polylines in the plane and closed
//! triangle meshes in space.

pub mod error;
pub mod extension;
pub mod geometry;
pub mod harness;
pub mod atlas;
pub mod quad;
pub mod sobolev;

pub use error::{Error, Result};
pub use geometry::{Point, Region, Selector, SimplicialManifold};
pub use quad::QuadratureSpec;
