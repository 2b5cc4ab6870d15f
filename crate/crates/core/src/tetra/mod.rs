//! Tetrahedral-grid geometry: the DMTet representation, surface extraction,
//! mesh utilities, octree ray queries and landmark alignment.

pub mod align;
pub mod grid;
pub mod mesh;
pub mod mt;
pub mod octree;
pub mod sdf;

pub use align::{
    align_landmarks_to_mesh, estimate_similarity_transform, Alignment, LandmarkSet, SimTransform,
    SimilarityFit,
};
pub use grid::{build_tet_grid, Aabb, DmtetParams, TetGrid};
pub use mesh::{compute_vertex_normals, icosphere, TriMesh};
pub use mt::{marching_tetrahedra, ExtractedSurface, ParamGradients};
pub use octree::{build_octree, ray_intersect, Octree, RayHit};
pub use sdf::{eval_sdf_primitive, MeshSdf, SdfShape};
