//! Deterministic synthetic non-rigid benchmark.
//!
//! Each class is a parametric surface with its own genus and proportions.
//! Instances are the class surface under a smooth low-frequency normal
//! displacement followed by a random rigid motion, so instances of a class
//! are near-isometric while classes stay spectrally distinct.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{Point3, Rotation3, UnitQuaternion, Vector3};
use rand::Rng;
use tracing::warn;

use crate::error::{Error, Result};
use crate::rng;
use crate::shape_io::{save_mesh, DatasetManifest, ManifestEntry, Split, TriMesh};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ShapeKind {
    Sphere,
    Ellipsoid,
    Torus,
    Capsule,
    BumpySphere,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 5] =
        [ShapeKind::Sphere, ShapeKind::Ellipsoid, ShapeKind::Torus, ShapeKind::Capsule, ShapeKind::BumpySphere];

    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Sphere => "sphere",
            ShapeKind::Ellipsoid => "ellipsoid",
            ShapeKind::Torus => "torus",
            ShapeKind::Capsule => "capsule",
            ShapeKind::BumpySphere => "bumpy_sphere",
        }
    }
}

impl std::str::FromStr for ShapeKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        ShapeKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown shape kind `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub classes: Vec<ShapeKind>,
    pub instances_per_class: usize,
    /// Latitude rings (genus 0) or minor-circle segments (torus); the other
    /// grid direction gets `5/3` as many samples.
    pub resolution: usize,
    /// Normal displacement amplitude relative to the shape scale.
    pub amplitude: f64,
    /// Overall size in model units.
    pub scale: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            classes: vec![ShapeKind::Sphere, ShapeKind::Ellipsoid, ShapeKind::Torus, ShapeKind::Capsule],
            instances_per_class: 20,
            resolution: 30,
            amplitude: 0.06,
            scale: 50.0,
            seed: 7,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes.len() < 2 {
            return Err(Error::invalid("synthetic benchmark needs at least 2 classes"));
        }
        if self.instances_per_class < 4 {
            return Err(Error::invalid("synthetic benchmark needs at least 4 instances per class"));
        }
        if self.resolution < 4 {
            return Err(Error::invalid("resolution must be at least 4"));
        }
        if !(self.amplitude >= 0.0 && self.amplitude < 0.5) || !(self.scale > 0.0) {
            return Err(Error::invalid("amplitude must be in [0, 0.5) and scale positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SynthShape {
    pub shape_id: String,
    pub label: usize,
    pub kind: ShapeKind,
    pub mesh: TriMesh,
}

/// Unit-size class template.
pub fn base_mesh(kind: ShapeKind, resolution: usize) -> TriMesh {
    let rings = resolution;
    let segments = (resolution * 5).div_ceil(3);
    match kind {
        ShapeKind::Torus => torus(1.0, 0.4, segments, rings),
        _ => lat_long(rings, segments, |t, phi| genus0_point(kind, t, phi)),
    }
}

/// Point of a genus-0 template at meridian parameter `t` in (0, 1) and
/// longitude `phi`.
fn genus0_point(kind: ShapeKind, t: f64, phi: f64) -> Point3<f64> {
    let theta = PI * t;
    let dir = Vector3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos());
    match kind {
        ShapeKind::Sphere => Point3::from(dir),
        ShapeKind::Ellipsoid => Point3::new(1.5 * dir.x, 0.9 * dir.y, 0.6 * dir.z),
        ShapeKind::BumpySphere => {
            let bump = dir.x.powi(4) + dir.y.powi(4) + dir.z.powi(4) - 0.6;
            Point3::from(dir * (1.0 + 0.5 * bump))
        }
        ShapeKind::Capsule => {
            let (r, h) = (0.55, 0.9);
            let cap = 0.5 * PI * r;
            let s = t * (2.0 * cap + 2.0 * h);
            let (z, rho) = if s < cap {
                let a = s / r;
                (h + r * a.cos(), r * a.sin())
            } else if s < cap + 2.0 * h {
                (h - (s - cap), r)
            } else {
                let a = (s - cap - 2.0 * h) / r + 0.5 * PI;
                (-h + r * a.cos(), r * a.sin())
            };
            Point3::new(rho * phi.cos(), rho * phi.sin(), z)
        }
        ShapeKind::Torus => unreachable!("torus is not genus 0"),
    }
}

/// Closed genus-0 grid: two poles plus `rings x segments` vertices.
fn lat_long(rings: usize, segments: usize, point: impl Fn(f64, f64) -> Point3<f64>) -> TriMesh {
    let mut v = vec![point(0.0, 0.0)];
    for r in 0..rings {
        let t = (r + 1) as f64 / (rings + 1) as f64;
        for s in 0..segments {
            v.push(point(t, 2.0 * PI * s as f64 / segments as f64));
        }
    }
    v.push(point(1.0, 0.0));
    let south = v.len() - 1;
    let idx = |r: usize, s: usize| 1 + r * segments + s % segments;
    let mut f = Vec::with_capacity(2 * rings * segments);
    for s in 0..segments {
        f.push([0, idx(0, s), idx(0, s + 1)]);
    }
    for r in 0..rings - 1 {
        for s in 0..segments {
            f.push([idx(r, s), idx(r + 1, s), idx(r + 1, s + 1)]);
            f.push([idx(r, s), idx(r + 1, s + 1), idx(r, s + 1)]);
        }
    }
    for s in 0..segments {
        f.push([south, idx(rings - 1, s + 1), idx(rings - 1, s)]);
    }
    TriMesh::new(v, f).expect("grid construction is valid")
}

fn torus(major: f64, minor: f64, around: usize, tube: usize) -> TriMesh {
    let mut v = Vec::with_capacity(around * tube);
    for i in 0..around {
        let u = 2.0 * PI * i as f64 / around as f64;
        for j in 0..tube {
            let w = 2.0 * PI * j as f64 / tube as f64;
            let rho = major + minor * w.cos();
            v.push(Point3::new(rho * u.cos(), rho * u.sin(), minor * w.sin()));
        }
    }
    let idx = |i: usize, j: usize| (i % around) * tube + j % tube;
    let mut f = Vec::with_capacity(2 * around * tube);
    for i in 0..around {
        for j in 0..tube {
            f.push([idx(i, j), idx(i + 1, j), idx(i + 1, j + 1)]);
            f.push([idx(i, j), idx(i + 1, j + 1), idx(i, j + 1)]);
        }
    }
    TriMesh::new(v, f).expect("grid construction is valid")
}

/// Unit icosphere after `level` rounds of 4-to-1 subdivision
/// (`10 * 4^level + 2` vertices).
pub fn icosphere(level: usize) -> TriMesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut v: Vec<Vector3<f64>> = [
        [-1.0, t, 0.0], [1.0, t, 0.0], [-1.0, -t, 0.0], [1.0, -t, 0.0],
        [0.0, -1.0, t], [0.0, 1.0, t], [0.0, -1.0, -t], [0.0, 1.0, -t],
        [t, 0.0, -1.0], [t, 0.0, 1.0], [-t, 0.0, -1.0], [-t, 0.0, 1.0],
    ]
    .iter()
    .map(|c| Vector3::new(c[0], c[1], c[2]).normalize())
    .collect();
    let mut f: Vec<[usize; 3]> = vec![
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ];
    for _ in 0..level {
        let mut mid: HashMap<(usize, usize), usize> = HashMap::new();
        let mut midpoint = |a: usize, b: usize, v: &mut Vec<Vector3<f64>>| {
            *mid.entry((a.min(b), a.max(b))).or_insert_with(|| {
                v.push(((v[a] + v[b]) * 0.5).normalize());
                v.len() - 1
            })
        };
        let mut next = Vec::with_capacity(f.len() * 4);
        for [a, b, c] in f {
            let ab = midpoint(a, b, &mut v);
            let bc = midpoint(b, c, &mut v);
            let ca = midpoint(c, a, &mut v);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        f = next;
    }
    TriMesh::new(v.into_iter().map(Point3::from).collect(), f).expect("icosphere is valid")
}

/// Area-weighted vertex normals.
pub fn vertex_normals(mesh: &TriMesh) -> Vec<Vector3<f64>> {
    let mut n = vec![Vector3::zeros(); mesh.vertex_count()];
    for (fi, f) in mesh.faces().iter().enumerate() {
        let c = mesh.face_cross(fi);
        for &v in f {
            n[v] += c;
        }
    }
    n.into_iter().map(|x| x.normalize()).collect()
}

/// Uniformly random rotation (Shoemake) and a translation in `[-extent, extent]^3`.
pub fn random_rigid(rng: &mut impl Rng, extent: f64) -> (Rotation3<f64>, Vector3<f64>) {
    let (u1, u2, u3): (f64, f64, f64) = (rng.random(), rng.random(), rng.random());
    let q = nalgebra::Quaternion::new(
        (1.0 - u1).sqrt() * (2.0 * PI * u2).sin(),
        (1.0 - u1).sqrt() * (2.0 * PI * u2).cos(),
        u1.sqrt() * (2.0 * PI * u3).sin(),
        u1.sqrt() * (2.0 * PI * u3).cos(),
    );
    let rot = UnitQuaternion::from_quaternion(q).to_rotation_matrix();
    let t = Vector3::new(
        rng.random_range(-extent..=extent),
        rng.random_range(-extent..=extent),
        rng.random_range(-extent..=extent),
    );
    (rot, t)
}

struct Displacement {
    dirs: [Vector3<f64>; 3],
    freqs: [f64; 3],
    phases: [f64; 3],
    weights: [f64; 3],
}

impl Displacement {
    fn sample(rng: &mut impl Rng) -> Self {
        let mut unit = || {
            let v = Vector3::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
            if v.norm() < 1e-3 { Vector3::x() } else { v.normalize() }
        };
        let dirs = [unit(), unit(), unit()];
        let mut draw = |lo: f64, hi: f64| rng.random_range(lo..hi);
        Self {
            dirs,
            freqs: [draw(1.0, 3.0), draw(1.0, 3.0), draw(1.0, 3.0)],
            phases: [draw(0.0, 2.0 * PI), draw(0.0, 2.0 * PI), draw(0.0, 2.0 * PI)],
            weights: [draw(-1.0, 1.0) / 3.0, draw(-1.0, 1.0) / 3.0, draw(-1.0, 1.0) / 3.0],
        }
    }

    fn at(&self, p: &Point3<f64>) -> f64 {
        (0..3).map(|j| self.weights[j] * (self.freqs[j] * p.coords.dot(&self.dirs[j]) + self.phases[j]).sin()).sum()
    }
}

/// Faces keep positive area and their orientation relative to the template.
fn is_sound(template: &TriMesh, mesh: &TriMesh) -> bool {
    (0..mesh.face_count()).all(|f| {
        let c = mesh.face_cross(f);
        c.norm() > 1e-12 && c.dot(&template.face_cross(f)) > 0.0
    })
}

fn instance(template: &TriMesh, normals: &[Vector3<f64>], spec: &SynthSpec, label: usize, i: usize) -> TriMesh {
    let mut rng = rng::indexed(spec.seed, "synth_instance", (label * 100_000 + i) as u64);
    let disp = Displacement::sample(&mut rng);
    let (rot, shift) = random_rigid(&mut rng, spec.scale);
    let mut amplitude = spec.amplitude;
    loop {
        let deformed = {
            let mut k = 0;
            template.map_vertices(|p| {
                let out = p + normals[k] * (amplitude * disp.at(p));
                k += 1;
                out
            })
        };
        if is_sound(template, &deformed) || amplitude == 0.0 {
            return deformed.map_vertices(|p| rot * (p * spec.scale) + shift);
        }
        warn!(label, instance = i, amplitude, "degenerate deformation, halving amplitude");
        amplitude *= 0.5;
        if amplitude < 1e-6 {
            amplitude = 0.0;
        }
    }
}

pub fn generate(spec: &SynthSpec) -> Result<Vec<SynthShape>> {
    spec.validate()?;
    let mut out = Vec::with_capacity(spec.classes.len() * spec.instances_per_class);
    for (label, &kind) in spec.classes.iter().enumerate() {
        let template = base_mesh(kind, spec.resolution);
        let normals = vertex_normals(&template);
        for i in 0..spec.instances_per_class {
            out.push(SynthShape {
                shape_id: format!("c{label}_{}_{i:02}", kind.name()),
                label,
                kind,
                mesh: instance(&template, &normals, spec, label, i),
            });
        }
    }
    Ok(out)
}

/// Writes every shape as OFF plus `manifest.tsv` (all entries in the train
/// split; use the split tools to reassign).
pub fn write_benchmark(spec: &SynthSpec, dir: &Path) -> Result<DatasetManifest> {
    let shapes = generate(spec)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(shapes.len());
    for s in &shapes {
        let rel = format!("{}.off", s.shape_id);
        save_mesh(&s.mesh, &dir.join(&rel))?;
        entries.push(ManifestEntry { shape_id: s.shape_id.clone(), path: rel.into(), label: s.label, split: Split::Train });
    }
    let manifest = DatasetManifest::new(entries, spec.classes.len(), dir.to_path_buf())?;
    manifest.save(&dir.join("manifest.tsv"))?;
    Ok(manifest)
}

/// Removes the faces whose centroid lies within a seeded cap around a random
/// surface point, keeping `1 - fraction` of the area or so. Vertices left
/// without faces are dropped and indices compacted.
pub fn punch_hole(mesh: &TriMesh, fraction: f64, seed: u64) -> Result<TriMesh> {
    let mut r = rng::substream(seed, "punch_hole");
    let center = mesh.vertices()[r.random_range(0..mesh.vertex_count())];
    let centroids: Vec<(usize, f64)> = (0..mesh.face_count())
        .map(|f| {
            let [a, b, c] = mesh.corners(f);
            (f, (((a.coords + b.coords + c.coords) / 3.0) - center.coords).norm())
        })
        .collect();
    let mut order = centroids.clone();
    order.sort_by(|x, y| x.1.total_cmp(&y.1));
    let drop = ((fraction.clamp(0.0, 0.9)) * mesh.face_count() as f64) as usize;
    let mut keep = vec![true; mesh.face_count()];
    for &(f, _) in &order[..drop] {
        keep[f] = false;
    }
    let mut remap = vec![usize::MAX; mesh.vertex_count()];
    let mut verts = Vec::new();
    let mut faces = Vec::new();
    for (f, face) in mesh.faces().iter().enumerate().filter(|(f, _)| keep[*f]) {
        let _ = f;
        let mut nf = [0; 3];
        for (slot, &v) in nf.iter_mut().zip(face) {
            if remap[v] == usize::MAX {
                remap[v] = verts.len();
                verts.push(mesh.vertices()[v]);
            }
            *slot = remap[v];
        }
        faces.push(nf);
    }
    TriMesh::new(verts, faces)
}
