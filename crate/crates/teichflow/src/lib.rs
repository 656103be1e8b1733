//! Desk-scale numerical laboratory for the Teichmüller harmonic map flow:
//! a coupled evolution of a map from a closed genus-2 hyperbolic surface into
//! a nonpositively curved target together with the domain's hyperbolic
//! metric, driven by the map's tension field and the real part of its Hopf
//! differential projected onto the holomorphic quadratic differentials.

pub mod expcli;
pub mod flow;
pub mod geom;
pub mod maps;
pub mod qdiff;
pub mod sparse;
pub mod surface;
pub mod targets;
