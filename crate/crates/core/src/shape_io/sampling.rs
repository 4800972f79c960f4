use nalgebra::{Point3, Vector3};
use rand::Rng;
use tracing::warn;

use super::mesh::{PointCloud, TriMesh};
use crate::error::{Error, Result};
use crate::rng;

/// Relative area below which a face counts as degenerate.
const DEGENERATE_REL_AREA: f64 = 1e-14;

/// Uniform surface sampling: faces drawn proportionally to area, then a
/// uniform barycentric position inside the face. Normals are face normals.
pub fn sample_points(mesh: &TriMesh, n: usize, seed: u64) -> Result<PointCloud> {
    sample_points_with_faces(mesh, n, seed).map(|(cloud, _)| cloud)
}

/// Same as [`sample_points`], also returning the face each point came from.
pub fn sample_points_with_faces(mesh: &TriMesh, n: usize, seed: u64) -> Result<(PointCloud, Vec<usize>)> {
    if n == 0 {
        return Err(Error::invalid("sample count must be at least 1"));
    }
    let areas: Vec<f64> = (0..mesh.face_count()).map(|f| mesh.face_area(f)).collect();
    let total: f64 = areas.iter().sum();
    if !(total > 0.0) {
        return Err(Error::InvalidMesh("mesh has zero total area".into()));
    }
    let degenerate = areas.iter().filter(|&&a| a <= DEGENERATE_REL_AREA * total).count();
    if degenerate > 0 {
        warn!(degenerate, "dropping zero-area faces before sampling");
    }

    let mut cumulative = Vec::with_capacity(areas.len());
    let mut face_ids = Vec::with_capacity(areas.len());
    let mut acc = 0.0;
    for (f, &a) in areas.iter().enumerate() {
        if a > DEGENERATE_REL_AREA * total {
            acc += a;
            cumulative.push(acc);
            face_ids.push(f);
        }
    }

    let mut rng = rng::substream(seed, "sample_points");
    let mut points = Vec::with_capacity(n);
    let mut normals = Vec::with_capacity(n);
    let mut faces = Vec::with_capacity(n);
    for _ in 0..n {
        let target = rng.random::<f64>() * acc;
        let slot = cumulative.partition_point(|&c| c <= target).min(cumulative.len() - 1);
        let face = face_ids[slot];
        let [a, b, c] = mesh.corners(face);
        let r1: f64 = rng.random::<f64>().sqrt();
        let r2: f64 = rng.random();
        let p: Vector3<f64> = a.coords * (1.0 - r1) + b.coords * (r1 * (1.0 - r2)) + c.coords * (r1 * r2);
        points.push(Point3::from(p));
        normals.push(mesh.face_cross(face).normalize());
        faces.push(face);
    }
    Ok((PointCloud::new(points, normals)?, faces))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn triangle() -> TriMesh {
        TriMesh::new(
            vec![Point3::new(0.0, 0.0, 0.0), Point3::new(2.0, 0.0, 0.0), Point3::new(0.0, 1.0, 0.5)],
            vec![[0, 1, 2]],
        )
        .unwrap()
    }

    /// Two disjoint right triangles with areas 9 and 1.
    fn two_faces() -> TriMesh {
        TriMesh::new(
            vec![
                Point3::new(0.0, 0.0, 0.0),
                Point3::new(6.0, 0.0, 0.0),
                Point3::new(0.0, 3.0, 0.0),
                Point3::new(10.0, 0.0, 0.0),
                Point3::new(12.0, 0.0, 0.0),
                Point3::new(10.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2], [3, 4, 5]],
        )
        .unwrap()
    }

    #[test]
    fn single_triangle_points_share_face_normal() {
        let m = triangle();
        let cloud = sample_points(&m, 3, 11).unwrap();
        assert_eq!(cloud.len(), 3);
        let n = m.face_cross(0).normalize();
        for (p, nn) in cloud.points().iter().zip(cloud.normals()) {
            assert_eq!(*nn, n);
            // on the plane of the face
            assert!((p - m.vertices()[0]).dot(&n).abs() < 1e-12);
        }
    }

    #[test]
    fn area_proportional_face_selection() {
        let (_, faces) = sample_points_with_faces(&two_faces(), 10_000, 0).unwrap();
        let big = faces.iter().filter(|&&f| f == 0).count() as f64 / 10_000.0;
        assert!((0.88..=0.92).contains(&big), "fraction on large face {big}");
    }

    #[test]
    fn deterministic_given_seed() {
        let a = sample_points(&two_faces(), 500, 3).unwrap();
        let b = sample_points(&two_faces(), 500, 3).unwrap();
        let c = sample_points(&two_faces(), 500, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn degenerate_faces_are_never_sampled() {
        let m = TriMesh::new(
            vec![
                Point3::new(0.0, 0.0, 0.0),
                Point3::new(1.0, 0.0, 0.0),
                Point3::new(0.0, 1.0, 0.0),
                Point3::new(2.0, 0.0, 0.0),
            ],
            vec![[0, 1, 2], [0, 1, 3]],
        )
        .unwrap();
        let (_, faces) = sample_points_with_faces(&m, 200, 1).unwrap();
        assert!(faces.iter().all(|&f| f == 0));
    }

    #[test]
    fn zero_area_mesh_is_rejected() {
        let m = TriMesh::new(
            vec![Point3::new(0.0, 0.0, 0.0), Point3::new(1.0, 0.0, 0.0), Point3::new(2.0, 0.0, 0.0)],
            vec![[0, 1, 2]],
        )
        .unwrap();
        assert!(sample_points(&m, 10, 0).is_err());
        assert!(sample_points(&triangle(), 0, 0).is_err());
    }

    /// Pearson chi-square over 6 faces of unequal area; critical value for
    /// 5 degrees of freedom at significance 0.01 is 15.086.
    #[test]
    fn chi_square_face_frequencies() {
        let mut verts = Vec::new();
        let mut faces = Vec::new();
        for k in 0..6 {
            let x = 10.0 * k as f64;
            let s = 1.0 + k as f64 * 0.7;
            let base = verts.len();
            verts.extend([Point3::new(x, 0.0, 0.0), Point3::new(x + s, 0.0, 0.0), Point3::new(x, s, 0.0)]);
            faces.push([base, base + 1, base + 2]);
        }
        let m = TriMesh::new(verts, faces).unwrap();
        let n = 100_000;
        let (_, picked) = sample_points_with_faces(&m, n, 5).unwrap();
        let total = m.total_area();
        let chi2: f64 = (0..6)
            .map(|f| {
                let expected = n as f64 * m.face_area(f) / total;
                let observed = picked.iter().filter(|&&p| p == f).count() as f64;
                (observed - expected).powi(2) / expected
            })
            .sum();
        assert!(chi2 < 15.086, "chi2 = {chi2}");
    }
}
