use std::sync::Once;

use faer::sparse::{SparseColMat, Triplet};
use faer::linalg::solvers::Solve;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::operator::{cotan_laplacian, voronoi_areas, SparseSym};
use crate::error::{Error, Result};
use crate::rng;
use crate::shape_io::TriMesh;
use crate::stats;

/// Meshes up to this many vertices use the dense solver.
pub const DENSE_LIMIT: usize = 4000;
pub const DEFAULT_EIGEN_COUNT: usize = 100;
/// Required relative residual `|L phi - lambda A phi| / |A phi|` per eigenpair.
pub const RESIDUAL_TOL: f64 = 1e-6;

/// Lowest generalized eigenpairs of `L phi = lambda A phi` with `A = diag(mass)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LbSpectrum {
    /// Ascending, non-negative.
    pub eigenvalues: Vec<f64>,
    /// `n x K`, column `k` is the eigenfunction of `eigenvalues[k]`,
    /// orthonormal in the mass inner product.
    pub eigenfunctions: DMatrix<f64>,
    pub mass: Vec<f64>,
}

impl LbSpectrum {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn vertex_count(&self) -> usize {
        self.mass.len()
    }

    /// `phi_k(s)^2`, the only quantity spectral descriptors consume.
    #[inline]
    pub fn phi_sq(&self, s: usize, k: usize) -> f64 {
        let v = self.eigenfunctions[(s, k)];
        v * v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EigenSolver {
    /// Dense up to [`DENSE_LIMIT`] vertices, Lanczos above.
    #[default]
    Auto,
    Dense,
    Lanczos,
}

fn sequential_faer() {
    static INIT: Once = Once::new();
    INIT.call_once(|| faer::set_global_parallelism(faer::Par::Seq));
}

/// Full LB pipeline for a mesh: connectivity check, mass, stiffness, eigenpairs.
pub fn mesh_spectrum(mesh: &TriMesh, k: usize, solver: EigenSolver) -> Result<LbSpectrum> {
    let components = mesh.component_count();
    if components != 1 {
        return Err(Error::Disconnected { components });
    }
    let mass = voronoi_areas(mesh)?;
    let stiffness = cotan_laplacian(mesh)?;
    lb_spectrum(&stiffness, &mass, k, solver)
}

/// Solves `L phi = lambda A phi` for the `k` smallest eigenvalues.
pub fn lb_spectrum(stiffness: &SparseSym, mass: &[f64], k: usize, solver: EigenSolver) -> Result<LbSpectrum> {
    let n = stiffness.dim();
    if mass.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: mass.len() });
    }
    if k == 0 || k > n {
        return Err(Error::invalid(format!("requested {k} eigenpairs from a {n}-vertex operator")));
    }
    if mass.iter().any(|&a| !(a > 0.0)) {
        return Err(Error::invalid("mass entries must be strictly positive"));
    }
    sequential_faer();
    stats::count_spectrum();
    let use_dense = match solver {
        EigenSolver::Dense => true,
        EigenSolver::Lanczos => false,
        EigenSolver::Auto => n <= DENSE_LIMIT,
    };
    let (mut values, mut funcs) = if use_dense {
        dense_pairs(stiffness, mass, k)?
    } else {
        lanczos_pairs(stiffness, mass, k)?
    };

    for (j, v) in values.iter_mut().enumerate() {
        // Round-off can push the null eigenvalue slightly negative.
        if *v < 0.0 {
            *v = 0.0;
        }
        let mut col = funcs.column_mut(j);
        let pivot = col.iter().copied().fold(0.0f64, |best, x| if x.abs() > best.abs() { x } else { best });
        if pivot < 0.0 {
            col.neg_mut();
        }
    }
    let spec = LbSpectrum { eigenvalues: values, eigenfunctions: funcs, mass: mass.to_vec() };
    let residual = max_residual(stiffness, &spec);
    if !(residual < RESIDUAL_TOL) {
        return Err(Error::EigenNonConvergence { residual });
    }
    Ok(spec)
}

/// Largest relative residual over all eigenpairs.
pub fn max_residual(stiffness: &SparseSym, spec: &LbSpectrum) -> f64 {
    let mut worst: f64 = 0.0;
    for k in 0..spec.len() {
        let phi: Vec<f64> = spec.eigenfunctions.column(k).iter().copied().collect();
        let lphi = stiffness.matvec(&phi);
        let (mut num, mut den) = (0.0, 0.0);
        for s in 0..phi.len() {
            let aphi = spec.mass[s] * phi[s];
            num += (lphi[s] - spec.eigenvalues[k] * aphi).powi(2);
            den += aphi * aphi;
        }
        worst = worst.max((num / den).sqrt());
    }
    worst
}

fn dense_pairs(stiffness: &SparseSym, mass: &[f64], k: usize) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = stiffness.dim();
    let inv_sqrt: Vec<f64> = mass.iter().map(|a| 1.0 / a.sqrt()).collect();
    let mut m = faer::Mat::<f64>::zeros(n, n);
    for (i, j, v) in stiffness.triplets() {
        m[(i, j)] = v * inv_sqrt[i] * inv_sqrt[j];
    }
    let evd = m
        .self_adjoint_eigen(faer::Side::Lower)
        .map_err(|_| Error::EigenNonConvergence { residual: f64::NAN })?;
    let s = evd.S().column_vector();
    let u = evd.U();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| s[a].total_cmp(&s[b]));
    let values: Vec<f64> = order[..k].iter().map(|&i| s[i]).collect();
    let funcs = DMatrix::from_fn(n, k, |r, c| u[(r, order[c])] * inv_sqrt[r]);
    Ok((values, funcs))
}

/// Shift-invert Lanczos with full reorthogonalization on the symmetric
/// operator `A^{1/2} (L + sigma A)^{-1} A^{1/2}`.
fn lanczos_pairs(stiffness: &SparseSym, mass: &[f64], k: usize) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = stiffness.dim();
    let sqrt_mass: Vec<f64> = mass.iter().map(|a| a.sqrt()).collect();
    let typical = (0..n).map(|i| stiffness.get(i, i) / mass[i]).sum::<f64>() / n as f64;
    let sigma = 1e-6 * typical;

    let mut trip: Vec<Triplet<usize, usize, f64>> = stiffness
        .triplets()
        .filter(|&(i, j, _)| i >= j)
        .map(|(i, j, v)| Triplet::new(i, j, v))
        .collect();
    trip.extend((0..n).map(|i| Triplet::new(i, i, sigma * mass[i])));
    let shifted = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &trip)
        .map_err(|e| Error::invalid(format!("sparse assembly failed: {e:?}")))?;
    let llt = shifted
        .sp_cholesky(faer::Side::Lower)
        .map_err(|e| Error::invalid(format!("shifted stiffness is not positive definite: {e:?}")))?;

    let apply = |x: &DVector<f64>| -> DVector<f64> {
        let mut rhs = faer::Mat::<f64>::from_fn(n, 1, |i, _| sqrt_mass[i] * x[i]);
        llt.solve_in_place(rhs.as_mut());
        DVector::from_fn(n, |i, _| sqrt_mass[i] * rhs[(i, 0)])
    };

    let mut steps = n.min((3 * k + 20).max(60));
    let mut start_rng = rng::substream(0, "lanczos_start");
    let start = DVector::from_fn(n, |_, _| start_rng.random::<f64>() - 0.5);
    let mut last_residual = f64::INFINITY;
    loop {
        let (values, funcs) = lanczos_run(&apply, &start, steps, k, sigma, &sqrt_mass);
        let spec = LbSpectrum { eigenvalues: values.clone(), eigenfunctions: funcs.clone(), mass: mass.to_vec() };
        last_residual = max_residual(stiffness, &spec).min(last_residual);
        if last_residual < RESIDUAL_TOL * 0.1 {
            return Ok((values, funcs));
        }
        if steps == n {
            return Err(Error::EigenNonConvergence { residual: last_residual });
        }
        steps = n.min(steps * 3 / 2);
    }
}

fn lanczos_run(
    apply: &impl Fn(&DVector<f64>) -> DVector<f64>,
    start: &DVector<f64>,
    steps: usize,
    k: usize,
    sigma: f64,
    sqrt_mass: &[f64],
) -> (Vec<f64>, DMatrix<f64>) {
    let n = start.len();
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(steps);
    let mut alpha = Vec::with_capacity(steps);
    let mut beta: Vec<f64> = Vec::with_capacity(steps);
    let mut q = start.normalize();
    for j in 0..steps {
        basis.push(q.clone());
        let mut w = apply(&q);
        let a = q.dot(&w);
        alpha.push(a);
        // two passes of classical Gram-Schmidt against the whole basis
        for _ in 0..2 {
            for b in &basis {
                let c = b.dot(&w);
                w.axpy(-c, b, 1.0);
            }
        }
        let norm = w.norm();
        if j + 1 == steps {
            break;
        }
        if norm < 1e-13 * a.abs().max(1e-300) {
            // invariant subspace: restart with a vector orthogonal to the basis
            let mut r = DVector::from_fn(n, |i, _| ((i * 7919 + j * 104_729) % 1000) as f64 / 1000.0 - 0.5);
            for _ in 0..2 {
                for b in &basis {
                    let c = b.dot(&r);
                    r.axpy(-c, b, 1.0);
                }
            }
            beta.push(0.0);
            q = r.normalize();
        } else {
            beta.push(norm);
            q = w / norm;
        }
    }
    let m = basis.len();
    let mut t = DMatrix::<f64>::zeros(m, m);
    for i in 0..m {
        t[(i, i)] = alpha[i];
        if i + 1 < m {
            t[(i, i + 1)] = beta[i];
            t[(i + 1, i)] = beta[i];
        }
    }
    let eig = t.symmetric_eigen();
    let mut order: Vec<usize> = (0..m).collect();
    // largest theta <-> smallest lambda
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let take = k.min(m);
    let mut values = Vec::with_capacity(take);
    let mut funcs = DMatrix::<f64>::zeros(n, take);
    for (c, &idx) in order[..take].iter().enumerate() {
        values.push(1.0 / eig.eigenvalues[idx] - sigma);
        let s = eig.eigenvectors.column(idx);
        let mut y = DVector::<f64>::zeros(n);
        for (b, &coef) in basis.iter().zip(s.iter()) {
            y.axpy(coef, b, 1.0);
        }
        for i in 0..n {
            funcs[(i, c)] = y[i] / sqrt_mass[i];
        }
    }
    (values, funcs)
}
