pub mod builtin;
pub mod io;
pub mod mesh;
pub mod primitives;
pub mod region;

pub use mesh::{MeshPoint, SimplicialManifold};
pub use primitives::Point;
pub use region::{conforming_refinement, make_region, ConformingMesh, Region, Selector};
