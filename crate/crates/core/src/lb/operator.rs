use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::shape_io::TriMesh;

/// Symmetric sparse matrix in CSR layout with sorted column indices.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSym {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseSym {
    /// Builds from (row, col, value) triplets; duplicates are summed in input
    /// order so the result does not depend on hashing.
    pub fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_by_key(|&(i, j, _)| (i, j));
        let mut row_ptr = vec![0usize; n + 1];
        let mut cols = Vec::with_capacity(triplets.len());
        let mut vals: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in triplets {
            if last == Some((i, j)) {
                *vals.last_mut().expect("non-empty") += v;
            } else {
                cols.push(j);
                vals.push(v);
                row_ptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        Self { n, row_ptr, cols, vals }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|&(c, _)| c == j).map_or(0.0, |(_, v)| v)
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |i| self.row(i).map(move |(j, v)| (i, j, v)))
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n).map(|i| self.row(i).map(|(j, v)| v * x[j]).sum()).collect()
    }

    pub fn to_dense(&self) -> faer::Mat<f64> {
        let mut m = faer::Mat::zeros(self.n, self.n);
        for (i, j, v) in self.triplets() {
            m[(i, j)] = v;
        }
        m
    }
}

/// Cotangents of the three corner angles of a triangle, plus twice its area.
fn corner_cotangents(p: [Vector3<f64>; 3]) -> ([f64; 3], f64) {
    let double_area = (p[1] - p[0]).cross(&(p[2] - p[0])).norm();
    let mut cot = [0.0; 3];
    for k in 0..3 {
        let e1 = p[(k + 1) % 3] - p[k];
        let e2 = p[(k + 2) % 3] - p[k];
        cot[k] = e1.dot(&e2) / double_area;
    }
    (cot, double_area)
}

fn corners(mesh: &TriMesh, f: usize) -> [Vector3<f64>; 3] {
    mesh.corners(f).map(|p| p.coords)
}

/// Mixed Voronoi vertex areas: circumcentric regions on non-obtuse
/// triangles, with the obtuse corner taking half the triangle and the other
/// two a quarter each on obtuse ones.
pub fn voronoi_areas(mesh: &TriMesh) -> Result<Vec<f64>> {
    let mut area = vec![0.0; mesh.vertex_count()];
    for (f, face) in mesh.faces().iter().enumerate() {
        let p = corners(mesh, f);
        let (cot, double_area) = corner_cotangents(p);
        if double_area == 0.0 {
            continue;
        }
        let tri_area = 0.5 * double_area;
        let obtuse = (0..3).find(|&k| (p[(k + 1) % 3] - p[k]).dot(&(p[(k + 2) % 3] - p[k])) < 0.0);
        for k in 0..3 {
            let (i, j) = ((k + 1) % 3, (k + 2) % 3);
            area[face[k]] += match obtuse {
                None => {
                    ((p[k] - p[i]).norm_squared() * cot[j] + (p[k] - p[j]).norm_squared() * cot[i]) / 8.0
                }
                Some(o) if o == k => tri_area / 2.0,
                Some(_) => tri_area / 4.0,
            };
        }
    }
    if let Some(v) = area.iter().position(|&a| !(a > 0.0)) {
        return Err(Error::InvalidMesh(format!("vertex {v} has zero Voronoi area (isolated or only in degenerate faces)")));
    }
    Ok(area)
}

/// Cotangent stiffness matrix: `L_ij = -(cot a_ij + cot b_ij) / 2` over the
/// angles opposite edge `ij`, and `L_ii = -sum_j L_ij`.
pub fn cotan_laplacian(mesh: &TriMesh) -> Result<SparseSym> {
    let mut trip = Vec::with_capacity(mesh.face_count() * 12);
    for (f, face) in mesh.faces().iter().enumerate() {
        let (cot, double_area) = corner_cotangents(corners(mesh, f));
        if !(double_area > 0.0) {
            return Err(Error::InvalidMesh(format!("face {f} is degenerate (zero area)")));
        }
        for k in 0..3 {
            let (i, j) = (face[(k + 1) % 3], face[(k + 2) % 3]);
            let w = 0.5 * cot[k];
            trip.push((i, j, -w));
            trip.push((j, i, -w));
            trip.push((i, i, w));
            trip.push((j, j, w));
        }
    }
    Ok(SparseSym::from_triplets(mesh.vertex_count(), trip))
}
