//! Mesh and point-cloud carriers, file formats, surface sampling and
//! dataset manifests.

mod formats;
mod manifest;
mod mesh;
mod sampling;

pub use formats::{load_mesh, parse_mesh, parse_obj, parse_off, parse_ply, save_mesh, to_obj_string, to_off_string, MeshFormat};
pub use manifest::{load_manifest, parse_manifest, DatasetManifest, ManifestEntry, Split};
pub use mesh::{PointCloud, TriMesh};
pub use sampling::{sample_points, sample_points_with_faces};
