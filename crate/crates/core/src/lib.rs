//! Voronoi diagrams on triangle-mesh surfaces.
//!
//! Sites sweep across the mesh in distance order ([`propagation`]); every
//! face keeps the sites that are not strictly farther than another one at all
//! three corners. Each face is then partitioned by the lower envelope of the
//! planes that interpolate those sites' squared distances ([`envelope`]), and
//! the per-face partitions are stitched into a surface diagram with
//! validators, dual extraction and exports ([`diagram`]).

pub mod breaklines;
pub mod diagram;
pub mod envelope;
pub mod fixtures;
pub mod io;
pub mod mesh;
pub mod propagation;
pub mod solvers;

pub use breaklines::{BreaklineError, BreaklineSet};
pub use diagram::{
    assemble, cell_source_histogram, compute_diagram, DiagramError, DualMesh, SurfaceVoronoiDiagram,
};
pub use envelope::{lift_plane, partition_face, FacePartition, LiftedPlane, LowerEnvelope};
pub use mesh::{MeshError, TriangleMesh, UnfoldFrame, Vec2, Vec3};
pub use propagation::{dominates, over_propagate, DistanceTriple, FaceSourceList, Propagation};
pub use solvers::{DensityField, Metric, Site, SiteSet, SiteSpec, Solver};
