//! Triangulated genus-2 domain: halfedge mesh, discrete hyperbolic metrics,
//! uniformization, developing maps, systole monitoring, and serialization.

pub mod build;
pub mod develop;
pub mod io;
pub mod mesh;
pub mod metric;
pub mod systole;

pub use build::{build_genus2_octagon, OctagonSurface};
pub use mesh::{Mesh, MeshError, Word};
pub use metric::{HypMetric, MetricError};
