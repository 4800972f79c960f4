use std::collections::HashMap;
use std::f64::consts::PI;

use nalgebra::{Point3, Vector3};
use rand::Rng;
use tracing::warn;

use super::{DescriptorField, DescriptorKind};
use crate::error::{Error, Result};
use crate::rng;
use crate::shape_io::PointCloud;
use crate::stats;

#[derive(Debug, Clone, PartialEq)]
pub struct LsfParams {
    /// Neighborhood radius in model units. When `None` it is
    /// `radius_fraction` times the bounding-sphere diameter of the cloud.
    pub radius: Option<f64>,
    pub radius_fraction: f64,
    pub bins_per_dim: usize,
    pub neighbor_cap: usize,
    pub seed: u64,
}

impl Default for LsfParams {
    fn default() -> Self {
        Self { radius: None, radius_fraction: 0.15, bins_per_dim: 5, neighbor_cap: 512, seed: 0 }
    }
}

impl LsfParams {
    pub fn resolve_radius(&self, cloud: &PointCloud) -> f64 {
        self.radius.unwrap_or_else(|| self.radius_fraction * 2.0 * cloud.bounding_radius())
    }
}

/// Orthonormal frame `(u, v, w)` of a center point with `u = n1`,
/// `v = d x u / |d x u|`, `w = u x v` and `d = p2 - p1`.
///
/// Returns `None` when the frame is undefined (coincident points, or `d`
/// parallel to `n1`).
pub fn darboux_frame(p1: &Point3<f64>, n1: &Vector3<f64>, p2: &Point3<f64>) -> Option<[Vector3<f64>; 3]> {
    let d = p2 - p1;
    let dist = d.norm();
    if dist == 0.0 {
        return None;
    }
    let c = d.cross(n1);
    let cn = c.norm();
    if cn <= 1e-12 * dist {
        return None;
    }
    let v = c / cn;
    Some([*n1, v, n1.cross(&v)])
}

/// The four pair features `(atan2(w.n2, u.n2), v.n2, u.d/|d|, |d|)` of a
/// center point (`p1`, `n1`) and a neighbor (`p2`, `n2`), or `None` when
/// the frame is undefined and the pair is skipped.
pub fn pair_features(p1: &Point3<f64>, n1: &Vector3<f64>, p2: &Point3<f64>, n2: &Vector3<f64>) -> Option<[f64; 4]> {
    let [u, v, w] = darboux_frame(p1, n1, p2)?;
    let d = p2 - p1;
    let dist = d.norm();
    Some([w.dot(n2).atan2(u.dot(n2)), v.dot(n2), u.dot(&d) / dist, dist])
}

/// Right-closed uniform bins over `[lo, hi]`; the left edge maps to bin 0.
#[inline]
pub fn bin_index(x: f64, lo: f64, hi: f64, bins: usize) -> usize {
    let pos = ((x - lo) / (hi - lo) * bins as f64).ceil() as i64 - 1;
    pos.clamp(0, bins as i64 - 1) as usize
}

/// Joint histogram slot of one feature tuple.
pub fn histogram_slot(f: &[f64; 4], radius: f64, bins: usize) -> usize {
    let b1 = bin_index(f[0], -PI, PI, bins);
    let b2 = bin_index(f[1], -1.0, 1.0, bins);
    let b3 = bin_index(f[2], -1.0, 1.0, bins);
    let b4 = bin_index(f[3], 0.0, radius, bins);
    ((b1 * bins + b2) * bins + b3) * bins + b4
}

/// Uniform grid for fixed-radius neighbor queries.
struct Grid {
    cell: f64,
    cells: HashMap<(i64, i64, i64), Vec<usize>>,
}

impl Grid {
    fn new(points: &[Point3<f64>], cell: f64) -> Self {
        let mut cells: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(Self::key(p, cell)).or_default().push(i);
        }
        Self { cell, cells }
    }

    fn key(p: &Point3<f64>, cell: f64) -> (i64, i64, i64) {
        ((p.x / cell).floor() as i64, (p.y / cell).floor() as i64, (p.z / cell).floor() as i64)
    }

    /// Indices within `radius` of point `i` (excluding `i`), ascending.
    fn neighbors(&self, points: &[Point3<f64>], i: usize, radius: f64) -> Vec<usize> {
        let p = &points[i];
        let (x, y, z) = Self::key(p, self.cell);
        let mut out = Vec::new();
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(bucket) = self.cells.get(&(x + dx, y + dy, z + dz)) {
                        out.extend(bucket.iter().copied().filter(|&j| j != i && (points[j] - p).norm() <= radius));
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }
}

/// Localized statistical features: per point, a `bins^4` joint histogram of
/// the pair features against every neighbor within the radius. Entries are
/// raw counts.
pub fn lsf(cloud: &PointCloud, params: &LsfParams) -> Result<DescriptorField> {
    let radius = params.resolve_radius(cloud);
    if !(radius > 0.0) {
        return Err(Error::invalid("LSF radius must be positive"));
    }
    if params.bins_per_dim < 2 {
        return Err(Error::invalid("LSF needs at least 2 bins per dimension"));
    }
    if params.neighbor_cap == 0 {
        return Err(Error::invalid("LSF neighbor cap must be positive"));
    }
    stats::count_descriptor();
    let bins = params.bins_per_dim;
    let dim = bins.pow(4);
    let points = cloud.points();
    let normals = cloud.normals();
    let grid = Grid::new(points, radius);
    let mut values = vec![0.0; points.len() * dim];
    let mut isolated = 0usize;
    for i in 0..points.len() {
        let mut nbrs = grid.neighbors(points, i, radius);
        if nbrs.is_empty() {
            isolated += 1;
            continue;
        }
        if nbrs.len() > params.neighbor_cap {
            let mut r = rng::indexed(params.seed, "lsf_neighbors", i as u64);
            for k in 0..params.neighbor_cap {
                let j = r.random_range(k..nbrs.len());
                nbrs.swap(k, j);
            }
            nbrs.truncate(params.neighbor_cap);
            nbrs.sort_unstable();
        }
        let row = &mut values[i * dim..(i + 1) * dim];
        for j in nbrs {
            if let Some(f) = pair_features(&points[i], &normals[i], &points[j], &normals[j]) {
                row[histogram_slot(&f, radius, bins)] += 1.0;
            }
        }
    }
    if isolated > 0 {
        warn!(isolated, radius, "points without neighbors get an all-zero LSF histogram");
    }
    DescriptorField::new(values, dim, DescriptorKind::Lsf)
}
