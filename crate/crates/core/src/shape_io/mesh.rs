use nalgebra::{Point3, Vector3};

use crate::error::{Error, Result};

/// Triangle mesh with 0-based vertex indices.
#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    vertices: Vec<Point3<f64>>,
    faces: Vec<[usize; 3]>,
}

impl TriMesh {
    pub fn new(vertices: Vec<Point3<f64>>, faces: Vec<[usize; 3]>) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(Error::InvalidMesh(format!(
                "need at least 3 vertices, got {}",
                vertices.len()
            )));
        }
        if faces.is_empty() {
            return Err(Error::InvalidMesh("mesh has no faces".into()));
        }
        let n = vertices.len();
        for (fi, f) in faces.iter().enumerate() {
            if let Some(&bad) = f.iter().find(|&&v| v >= n) {
                return Err(Error::InvalidMesh(format!(
                    "face {fi} references vertex {bad} but mesh has {n} vertices"
                )));
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::InvalidMesh(format!("face {fi} repeats a vertex: {f:?}")));
            }
        }
        if let Some(i) = vertices.iter().position(|p| !p.coords.iter().all(|c| c.is_finite())) {
            return Err(Error::InvalidMesh(format!("vertex {i} has a non-finite coordinate")));
        }
        Ok(Self { vertices, faces })
    }

    pub fn vertices(&self) -> &[Point3<f64>] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    pub fn corners(&self, face: usize) -> [Point3<f64>; 3] {
        let [a, b, c] = self.faces[face];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    /// Unnormalized face normal; its length is twice the face area.
    pub fn face_cross(&self, face: usize) -> Vector3<f64> {
        let [a, b, c] = self.corners(face);
        (b - a).cross(&(c - a))
    }

    pub fn face_area(&self, face: usize) -> f64 {
        0.5 * self.face_cross(face).norm()
    }

    pub fn total_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    /// Applies `f` to every vertex, keeping connectivity.
    pub fn map_vertices(&self, f: impl FnMut(&Point3<f64>) -> Point3<f64>) -> TriMesh {
        TriMesh {
            vertices: self.vertices.iter().map(f).collect(),
            faces: self.faces.clone(),
        }
    }

    /// Radius of the smallest sphere around the centroid enclosing all vertices.
    pub fn bounding_radius(&self) -> f64 {
        bounding_radius(&self.vertices)
    }

    /// Number of connected components of the face graph (isolated vertices count
    /// as their own components).
    pub fn component_count(&self) -> usize {
        let mut parent: Vec<usize> = (0..self.vertices.len()).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for f in &self.faces {
            for k in 0..2 {
                let ra = find(&mut parent, f[k]);
                let rb = find(&mut parent, f[k + 1]);
                if ra != rb {
                    parent[ra.max(rb)] = ra.min(rb);
                }
            }
        }
        (0..self.vertices.len()).filter(|&i| find(&mut parent, i) == i).count()
    }
}

pub(crate) fn bounding_radius(points: &[Point3<f64>]) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let c = points.iter().fold(Vector3::zeros(), |acc, p| acc + p.coords) / points.len() as f64;
    points.iter().map(|p| (p.coords - c).norm()).fold(0.0, f64::max)
}

/// Oriented point set.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Point3<f64>>,
    normals: Vec<Vector3<f64>>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3<f64>>, normals: Vec<Vector3<f64>>) -> Result<Self> {
        if points.len() != normals.len() {
            return Err(Error::invalid(format!(
                "{} points but {} normals",
                points.len(),
                normals.len()
            )));
        }
        if let Some(i) = normals.iter().position(|n| (n.norm() - 1.0).abs() > 1e-6) {
            return Err(Error::invalid(format!("normal {i} is not unit length")));
        }
        Ok(Self { points, normals })
    }

    pub fn points(&self) -> &[Point3<f64>] {
        &self.points
    }

    pub fn normals(&self) -> &[Vector3<f64>] {
        &self.normals
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn bounding_radius(&self) -> f64 {
        bounding_radius(&self.points)
    }

    /// Rigid motion applied to points and normals alike.
    pub fn transformed(&self, rotation: &nalgebra::Rotation3<f64>, translation: &Vector3<f64>) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|p| rotation * p + translation).collect(),
            normals: self.normals.iter().map(|n| rotation * n).collect(),
        }
    }
}
