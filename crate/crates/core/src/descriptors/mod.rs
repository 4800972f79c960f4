//! Per-point raw descriptors: spectral signatures on meshes (HKS, SIHKS,
//! WKS) and local pair-feature histograms on oriented point clouds (LSF).

mod lsf;
mod spectral;

pub use lsf::{bin_index, darboux_frame, histogram_slot, lsf, pair_features, LsfParams};
pub use spectral::{default_hks_times, hks, sihks, wks, SihksParams, WksParams, HKS_FLOOR};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DescriptorKind {
    Hks,
    Sihks,
    Wks,
    Lsf,
    Concat,
}

impl DescriptorKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Hks => "hks",
            Self::Sihks => "sihks",
            Self::Wks => "wks",
            Self::Lsf => "lsf",
            Self::Concat => "concat",
        }
    }
}

/// Row-major `points x dim` matrix of per-point descriptor vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorField {
    values: Vec<f64>,
    dim: usize,
    kind: DescriptorKind,
}

impl DescriptorField {
    pub fn new(values: Vec<f64>, dim: usize, kind: DescriptorKind) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("descriptor dimension must be positive"));
        }
        if !values.len().is_multiple_of(dim) {
            return Err(Error::invalid(format!("{} values do not split into rows of {dim}", values.len())));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("descriptor point {} has a non-finite entry", i / dim)));
        }
        Ok(Self { values, dim, kind })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> DescriptorKind {
        self.kind
    }

    pub fn point_count(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.values[s * self.dim..(s + 1) * self.dim]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.dim)
    }
}

/// Point-wise concatenation in argument order.
pub fn concat(fields: &[&DescriptorField]) -> Result<DescriptorField> {
    let first = fields.first().ok_or_else(|| Error::invalid("concat needs at least one field"))?;
    if fields.len() == 1 {
        return Ok((*first).clone());
    }
    let n = first.point_count();
    if let Some(bad) = fields.iter().find(|f| f.point_count() != n) {
        return Err(Error::DimensionMismatch { expected: n, got: bad.point_count() });
    }
    let dim: usize = fields.iter().map(|f| f.dim()).sum();
    let mut values = Vec::with_capacity(n * dim);
    for s in 0..n {
        for f in fields {
            values.extend_from_slice(f.row(s));
        }
    }
    DescriptorField::new(values, dim, DescriptorKind::Concat)
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use nalgebra::{DMatrix, Point3, Rotation3, Vector3};
    use proptest::prelude::*;
    use rand::Rng;

    use super::*;
    use crate::lb::{mesh_spectrum, EigenSolver, LbSpectrum};
    use crate::rng;
    use crate::shape_io::PointCloud;
    use crate::synth::{base_mesh, icosphere, random_rigid, ShapeKind};

    fn random_spectrum(n: usize, k: usize, seed: u64) -> LbSpectrum {
        let mut r = rng::substream(seed, "test_spectrum");
        let mut eigenvalues: Vec<f64> = (0..k).map(|i| if i == 0 { 0.0 } else { r.random_range(0.1..20.0) }).collect();
        eigenvalues.sort_by(f64::total_cmp);
        LbSpectrum {
            eigenvalues,
            eigenfunctions: DMatrix::from_fn(n, k, |_, _| r.random_range(-1.0..1.0)),
            mass: vec![1.0; n],
        }
    }

    fn max_rel(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-300)).fold(0.0, f64::max)
    }

    // HKS

    #[test]
    fn hks_single_constant_eigenpair() {
        let spec = LbSpectrum { eigenvalues: vec![0.0], eigenfunctions: DMatrix::from_element(4, 1, 0.5), mass: vec![1.0; 4] };
        let f = hks(&spec, &[0.1, 1.0, 10.0]).unwrap();
        assert!(f.values().iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn hks_long_time_limit() {
        let spec = random_spectrum(6, 5, 1);
        let t = 50.0;
        let f = hks(&spec, &[t]).unwrap();
        let bound = (-spec.eigenvalues[1] * t).exp() * 5.0;
        for s in 0..6 {
            assert!((f.row(s)[0] - spec.phi_sq(s, 0)).abs() <= bound);
        }
    }

    #[test]
    fn hks_matches_direct_sum() {
        let spec = random_spectrum(7, 5, 2);
        let t = 0.37;
        let f = hks(&spec, &[t]).unwrap();
        for s in 0..7 {
            let mut want = 0.0;
            for k in 0..5 {
                let p = spec.eigenfunctions[(s, k)];
                want += (-spec.eigenvalues[k] * t).exp() * p * p;
            }
            assert!((f.row(s)[0] - want).abs() <= 1e-12 * want.abs());
        }
    }

    #[test]
    fn hks_rejects_bad_times() {
        let spec = random_spectrum(3, 2, 3);
        assert!(hks(&spec, &[]).is_err());
        assert!(hks(&spec, &[1.0, 0.5]).is_err());
        assert!(hks(&spec, &[0.0, 1.0]).is_err());
    }

    // SIHKS

    fn sihks_oracle(spec: &LbSpectrum, p: &SihksParams, s: usize) -> Vec<f64> {
        let count = ((p.tau_max - p.tau_min) / p.tau_step).round() as usize + 1;
        let mut logs = Vec::new();
        for j in 0..count {
            let t = p.base.powf(p.tau_min + j as f64 * p.tau_step);
            let mut h = 0.0;
            for k in 0..spec.len() {
                let v = spec.eigenfunctions[(s, k)];
                h += (-spec.eigenvalues[k] * t).exp() * v * v;
            }
            logs.push(h.max(1e-300).ln());
        }
        let d: Vec<f64> = logs.windows(2).map(|w| w[1] - w[0]).collect();
        let m = d.len();
        (0..p.frequencies)
            .map(|f| {
                let (mut re, mut im) = (0.0, 0.0);
                for (i, x) in d.iter().enumerate() {
                    let a = -2.0 * PI * (f * i) as f64 / m as f64;
                    re += x * a.cos();
                    im += x * a.sin();
                }
                re.hypot(im)
            })
            .collect()
    }

    #[test]
    fn sihks_grid_shape() {
        let p = SihksParams::default();
        assert_eq!(p.taus().len(), 385);
        let spec = random_spectrum(3, 4, 4);
        let f = sihks(&spec, &p).unwrap();
        assert_eq!(f.dim(), 50);
        assert!(f.values().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn sihks_matches_naive_dft() {
        let spec = random_spectrum(5, 6, 5);
        let p = SihksParams { tau_min: -4.0, tau_max: 6.0, tau_step: 0.125, ..SihksParams::default() };
        let f = sihks(&spec, &p).unwrap();
        for s in 0..5 {
            let want = sihks_oracle(&spec, &p, s);
            for (a, b) in f.row(s).iter().zip(&want) {
                assert!((a - b).abs() <= 1e-10 * b.abs().max(1.0), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn sihks_constant_hks_is_zero() {
        let spec = LbSpectrum { eigenvalues: vec![0.0], eigenfunctions: DMatrix::from_element(3, 1, 0.7), mass: vec![1.0; 3] };
        let f = sihks(&spec, &SihksParams::default()).unwrap();
        assert!(f.values().iter().all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn sihks_is_scale_invariant() {
        let mesh = icosphere(3).map_vertices(|p| p * 1000.0);
        let scaled = mesh.map_vertices(|p| p * 2.0);
        let p = SihksParams::default();
        let a = sihks(&mesh_spectrum(&mesh, 100, EigenSolver::Dense).unwrap(), &p).unwrap();
        let b = sihks(&mesh_spectrum(&scaled, 100, EigenSolver::Dense).unwrap(), &p).unwrap();
        for s in 0..mesh.vertex_count() {
            let (ra, rb) = (a.row(s), b.row(s));
            let norm = ra.iter().map(|x| x * x).sum::<f64>().sqrt();
            let diff = ra.iter().zip(rb).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            assert!(diff <= 1e-3 * norm, "point {s}: {diff} vs {norm}");
        }
    }

    #[test]
    fn sihks_rejects_bad_grid() {
        let spec = random_spectrum(3, 3, 6);
        assert!(sihks(&spec, &SihksParams { base: 1.0, ..SihksParams::default() }).is_err());
        assert!(sihks(&spec, &SihksParams { frequencies: 400, ..SihksParams::default() }).is_err());
    }

    // WKS

    fn wks_oracle(spec: &LbSpectrum, energies: usize, sigma_factor: f64, s: usize) -> Vec<f64> {
        let lmax = spec.eigenvalues[spec.len() - 1];
        let ks: Vec<usize> = (0..spec.len()).filter(|&k| spec.eigenvalues[k] > 1e-8 * lmax).collect();
        let lo = spec.eigenvalues[ks[0]].ln();
        let hi = lmax.ln();
        let de = (hi - lo) / (energies - 1) as f64;
        let sigma = sigma_factor * de;
        (0..energies)
            .map(|i| {
                let e = lo + i as f64 * de;
                let (mut num, mut den) = (0.0, 0.0);
                for &k in &ks {
                    let w = (-(e - spec.eigenvalues[k].ln()).powi(2) / (2.0 * sigma * sigma)).exp();
                    let v = spec.eigenfunctions[(s, k)];
                    num += w * v * v;
                    den += w;
                }
                num / den
            })
            .collect()
    }

    #[test]
    fn wks_matches_oracle() {
        let spec = random_spectrum(6, 12, 7);
        let f = wks(&spec, &WksParams::default()).unwrap();
        assert_eq!(f.dim(), 100);
        for s in 0..6 {
            let want = wks_oracle(&spec, 100, 7.0, s);
            for (a, b) in f.row(s).iter().zip(&want) {
                assert!((a - b).abs() <= 1e-12 * b.abs().max(1e-3), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn wks_single_nonzero_eigenpair() {
        let spec = LbSpectrum {
            eigenvalues: vec![0.0, 3.0],
            eigenfunctions: DMatrix::from_row_slice(2, 2, &[0.5, 0.3, 0.5, -0.8]),
            mass: vec![1.0; 2],
        };
        let f = wks(&spec, &WksParams::default()).unwrap();
        assert!(f.row(0).iter().all(|&v| (v - 0.09).abs() < 1e-15));
        assert!(f.row(1).iter().all(|&v| (v - 0.64).abs() < 1e-15));
    }

    #[test]
    fn wks_narrow_sigma_selects_eigenpair() {
        let spec = random_spectrum(4, 6, 8);
        // with 2 energies the grid is exactly {log lambda_2, log lambda_K}
        let f = wks(&spec, &WksParams { energies: 2, sigma_factor: 7.0, sigma: Some(1e-4) }).unwrap();
        for s in 0..4 {
            assert!((f.row(s)[0] - spec.phi_sq(s, 1)).abs() < 1e-12);
            assert!((f.row(s)[1] - spec.phi_sq(s, 5)).abs() < 1e-12);
        }
    }

    #[test]
    fn wks_rejects_zero_spectrum() {
        let spec = LbSpectrum { eigenvalues: vec![0.0, 0.0], eigenfunctions: DMatrix::from_element(2, 2, 1.0), mass: vec![1.0; 2] };
        assert!(wks(&spec, &WksParams::default()).is_err());
    }

    // Spectral invariances

    #[test]
    fn spectral_descriptors_ignore_eigenfunction_signs() {
        let spec = random_spectrum(5, 8, 9);
        let mut flipped = spec.clone();
        for k in [1, 4, 6] {
            flipped.eigenfunctions.column_mut(k).neg_mut();
        }
        let times = [0.1, 1.0];
        assert_eq!(hks(&spec, &times).unwrap(), hks(&flipped, &times).unwrap());
        assert_eq!(sihks(&spec, &SihksParams::default()).unwrap(), sihks(&flipped, &SihksParams::default()).unwrap());
        assert_eq!(wks(&spec, &WksParams::default()).unwrap(), wks(&flipped, &WksParams::default()).unwrap());
    }

    #[test]
    fn spectral_descriptors_are_rigid_invariant() {
        let mesh = base_mesh(ShapeKind::Ellipsoid, 10);
        let (rot, t) = random_rigid(&mut rng::substream(11, "test"), 5.0);
        let moved = mesh.map_vertices(|p| rot * p + t);
        let a = mesh_spectrum(&mesh, 30, EigenSolver::Dense).unwrap();
        let b = mesh_spectrum(&moved, 30, EigenSolver::Dense).unwrap();
        let times = default_hks_times(&a, 10).unwrap();
        assert!(max_rel(hks(&a, &times).unwrap().values(), hks(&b, &times).unwrap().values()) < 1e-6);
        let wa = wks(&a, &WksParams::default()).unwrap();
        let wb = wks(&b, &WksParams::default()).unwrap();
        let scale = wa.values().iter().copied().fold(0.0, f64::max);
        let worst = wa.values().iter().zip(wb.values()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(worst < 1e-6 * scale);
    }

    // LSF

    fn random_cloud(n: usize, seed: u64) -> PointCloud {
        let mut r = rng::substream(seed, "test_cloud");
        let points = (0..n).map(|_| Point3::new(r.random(), r.random(), r.random())).collect();
        let normals = (0..n)
            .map(|_| Vector3::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)).normalize())
            .collect();
        PointCloud::new(points, normals).unwrap()
    }

    #[test]
    fn lsf_aligned_pair_is_skipped() {
        let n = Vector3::z();
        let (p1, p2) = (Point3::origin(), Point3::new(0.0, 0.0, 0.3));
        assert!(pair_features(&p1, &n, &p2, &n).is_none());
        let cloud = PointCloud::new(vec![p1, p2], vec![n, n]).unwrap();
        let f = lsf(&cloud, &LsfParams { radius: Some(1.0), ..LsfParams::default() }).unwrap();
        assert!(f.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lsf_tilted_pair_features() {
        let n = Vector3::z();
        let p2 = Point3::new(0.3, 0.0, 0.4);
        let f = pair_features(&Point3::origin(), &n, &p2, &n).unwrap();
        assert!(f[0].abs() < 1e-15);
        assert!(f[1].abs() < 1e-15);
        assert!((f[2] - 0.8).abs() < 1e-15);
        assert!((f[3] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn bins_are_right_closed() {
        assert_eq!(bin_index(-1.0, -1.0, 1.0, 5), 0);
        assert_eq!(bin_index(-0.6, -1.0, 1.0, 5), 0);
        assert_eq!(bin_index(-0.6 + 1e-12, -1.0, 1.0, 5), 1);
        assert_eq!(bin_index(1.0, -1.0, 1.0, 5), 4);
        assert_eq!(bin_index(PI, -PI, PI, 5), 4);
    }

    #[test]
    fn lsf_matches_brute_force() {
        let cloud = random_cloud(10, 12);
        let r = 0.6;
        let f = lsf(&cloud, &LsfParams { radius: Some(r), ..LsfParams::default() }).unwrap();
        assert_eq!(f.dim(), 625);
        let (p, nrm) = (cloud.points(), cloud.normals());
        for i in 0..10 {
            let mut want = vec![0.0; 625];
            for j in 0..10 {
                if i == j || (p[j] - p[i]).norm() > r {
                    continue;
                }
                let d = p[j] - p[i];
                let u = nrm[i];
                let v = d.cross(&u).normalize();
                let w = u.cross(&v);
                let b = [w.dot(&nrm[j]).atan2(u.dot(&nrm[j])), v.dot(&nrm[j]), u.dot(&d) / d.norm(), d.norm()];
                let bin = |x: f64, lo: f64, hi: f64| (((x - lo) / (hi - lo) * 5.0).ceil() as i64 - 1).clamp(0, 4) as usize;
                let idx = ((bin(b[0], -PI, PI) * 5 + bin(b[1], -1.0, 1.0)) * 5 + bin(b[2], -1.0, 1.0)) * 5 + bin(b[3], 0.0, r);
                want[idx] += 1.0;
            }
            assert_eq!(f.row(i), &want[..]);
        }
    }

    #[test]
    fn lsf_rows_sum_to_neighbor_counts() {
        let cloud = random_cloud(60, 13);
        let r = 0.3;
        let f = lsf(&cloud, &LsfParams { radius: Some(r), ..LsfParams::default() }).unwrap();
        let p = cloud.points();
        for i in 0..60 {
            let count = (0..60).filter(|&j| j != i && (p[j] - p[i]).norm() <= r).count();
            assert_eq!(f.row(i).iter().sum::<f64>(), count as f64);
        }
    }

    #[test]
    fn lsf_neighbor_cap_is_deterministic() {
        let cloud = random_cloud(200, 14);
        let params = LsfParams { radius: Some(0.8), neighbor_cap: 20, seed: 5, ..LsfParams::default() };
        let a = lsf(&cloud, &params).unwrap();
        assert!(a.rows().all(|row| row.iter().sum::<f64>() <= 20.0));
        assert_eq!(a, lsf(&cloud, &params).unwrap());
        let other = lsf(&cloud, &LsfParams { seed: 6, ..params }).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn lsf_rejects_bad_params() {
        let cloud = random_cloud(5, 15);
        assert!(lsf(&cloud, &LsfParams { radius: Some(0.0), ..LsfParams::default() }).is_err());
        assert!(lsf(&cloud, &LsfParams { bins_per_dim: 1, ..LsfParams::default() }).is_err());
    }

    #[test]
    fn lsf_isolated_point_is_zero() {
        let mut pts = random_cloud(5, 16).points().to_vec();
        pts.push(Point3::new(100.0, 100.0, 100.0));
        let cloud = PointCloud::new(pts, vec![Vector3::x(); 6]).unwrap();
        let f = lsf(&cloud, &LsfParams { radius: Some(2.0), ..LsfParams::default() }).unwrap();
        assert!(f.row(5).iter().all(|&v| v == 0.0));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn frame_is_orthonormal_and_features_in_range(
            a in prop::array::uniform3(-1.0f64..1.0),
            b in prop::array::uniform3(-1.0f64..1.0),
            n1 in prop::array::uniform3(-1.0f64..1.0),
            n2 in prop::array::uniform3(-1.0f64..1.0),
        ) {
            let (n1, n2) = (Vector3::from(n1), Vector3::from(n2));
            prop_assume!(n1.norm() > 0.1 && n2.norm() > 0.1);
            let (n1, n2) = (n1.normalize(), n2.normalize());
            let (p1, p2) = (Point3::from(a), Point3::from(b));
            if let Some([u, v, w]) = darboux_frame(&p1, &n1, &p2) {
                prop_assert!(u.dot(&v).abs() < 1e-12 && u.dot(&w).abs() < 1e-12 && v.dot(&w).abs() < 1e-12);
                prop_assert!((w.norm() - 1.0).abs() < 1e-12);
                let f = pair_features(&p1, &n1, &p2, &n2).unwrap();
                prop_assert!(f[0] > -PI - 1e-15 && f[0] <= PI);
                prop_assert!(f[1].abs() <= 1.0 + 1e-12 && f[2].abs() <= 1.0 + 1e-12);
                prop_assert!(f[3] > 0.0);
            }
        }

        #[test]
        fn lsf_is_rotation_invariant(seed in 0u64..1000) {
            let cloud = random_cloud(40, seed);
            let (rot, t): (Rotation3<f64>, Vector3<f64>) = random_rigid(&mut rng::substream(seed, "rot"), 3.0);
            let params = LsfParams { radius: Some(0.5), ..LsfParams::default() };
            let a = lsf(&cloud, &params).unwrap();
            let b = lsf(&cloud.transformed(&rot, &t), &params).unwrap();
            prop_assert_eq!(a, b);
        }
    }

    // concat

    #[test]
    fn concat_dimensions_and_order() {
        let a = DescriptorField::new((0..6).map(f64::from).collect(), 2, DescriptorKind::Sihks).unwrap();
        let b = DescriptorField::new((10..13).map(f64::from).collect(), 1, DescriptorKind::Wks).unwrap();
        let c = concat(&[&a, &b]).unwrap();
        assert_eq!(c.dim(), 3);
        assert_eq!(c.row(1), &[2.0, 3.0, 11.0]);
        assert_eq!(concat(&[&a]).unwrap(), a);
        assert!(concat(&[]).is_err());
        let short = DescriptorField::new(vec![1.0; 2], 1, DescriptorKind::Wks).unwrap();
        assert!(concat(&[&a, &short]).is_err());
    }

    #[test]
    fn concat_sihks_wks_is_150d() {
        let spec = random_spectrum(4, 10, 17);
        let s = sihks(&spec, &SihksParams::default()).unwrap();
        let w = wks(&spec, &WksParams::default()).unwrap();
        assert_eq!(concat(&[&s, &w]).unwrap().dim(), 150);
    }

    #[test]
    fn field_rejects_non_finite() {
        assert!(DescriptorField::new(vec![1.0, f64::NAN], 2, DescriptorKind::Hks).is_err());
        assert!(DescriptorField::new(vec![1.0; 3], 2, DescriptorKind::Hks).is_err());
    }
}
