//! Spectral transform of pooled matrices: eigendecomposition, normalized
//! spectrum, learnable mixture-of-powers map, reconstruction and
//! upper-triangle vectorization, plus fixed spectral maps for comparison.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pooling::PooledSpd;
use crate::stats;

/// Default number of non-zero powers: exponents are `i / N_m`, `i = 0..=N_m`.
pub const DEFAULT_POWERS: usize = 10;

/// Length of the upper-triangle vectorization of a `d x d` matrix.
pub fn triangle_len(d: usize) -> usize {
    d * (d + 1) / 2
}

/// Row-major upper triangle, diagonal included.
pub fn upper_triangle(m: &DMatrix<f64>) -> Vec<f64> {
    let d = m.nrows();
    let mut out = Vec::with_capacity(triangle_len(d));
    for i in 0..d {
        for j in i..d {
            out.push(m[(i, j)]);
        }
    }
    out
}

/// Inverse of [`upper_triangle`] for a symmetric matrix.
pub fn from_upper_triangle(v: &[f64], d: usize) -> Result<DMatrix<f64>> {
    if v.len() != triangle_len(d) {
        return Err(Error::DimensionMismatch { expected: triangle_len(d), got: v.len() });
    }
    let mut m = DMatrix::zeros(d, d);
    let mut k = 0;
    for i in 0..d {
        for j in i..d {
            m[(i, j)] = v[k];
            m[(j, i)] = v[k];
            k += 1;
        }
    }
    Ok(m)
}

/// Side length `d` with `d(d+1)/2 = len`.
pub fn triangle_side(len: usize) -> Result<usize> {
    let d = (((8 * len + 1) as f64).sqrt() as usize).saturating_sub(1) / 2;
    if triangle_len(d) == len {
        Ok(d)
    } else {
        Err(Error::invalid(format!("{len} is not a triangular number")))
    }
}

/// Eigendecomposition of a symmetric matrix, eigenvalues descending and
/// clamped at zero. Diagonal input returns a permutation matrix for `U`.
pub fn eig_sym(h: &DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let d = h.nrows();
    if d == 0 || h.ncols() != d {
        return Err(Error::invalid(format!("eig_sym needs a square matrix, got {}x{}", h.nrows(), h.ncols())));
    }
    if h.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("matrix has non-finite entries"));
    }
    let scale = h.amax();
    let asym = (0..d).flat_map(|i| (0..i).map(move |j| (i, j))).map(|(i, j)| (h[(i, j)] - h[(j, i)]).abs()).fold(0.0, f64::max);
    if asym > 1e-10 * scale {
        return Err(Error::invalid(format!("matrix is not symmetric (max asymmetry {asym:e})")));
    }
    stats::count_spd_eig();
    let diagonal = (0..d).all(|i| (0..d).all(|j| i == j || h[(i, j)] == 0.0));
    let (mut values, vectors): (Vec<f64>, DMatrix<f64>) = if diagonal {
        (h.diagonal().iter().copied().collect(), DMatrix::identity(d, d))
    } else {
        let m = faer::Mat::<f64>::from_fn(d, d, |i, j| 0.5 * (h[(i, j)] + h[(j, i)]));
        let evd = m
            .self_adjoint_eigen(faer::Side::Lower)
            .map_err(|e| Error::invalid(format!("symmetric eigendecomposition failed: {e:?}")))?;
        let s = evd.S().column_vector();
        let u = evd.U();
        ((0..d).map(|i| s[i]).collect(), DMatrix::from_fn(d, d, |i, j| u[(i, j)]))
    };
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    let u = DMatrix::from_fn(d, d, |i, j| vectors[(i, order[j])]);
    values = order.iter().map(|&k| values[k].max(0.0)).collect();
    Ok((u, values))
}

/// `x^a` with `x^0 = 1` for every `x >= 0`.
#[inline]
pub fn power(x: f64, a: f64) -> f64 {
    if a == 0.0 {
        1.0
    } else {
        x.powf(a)
    }
}

/// Learnable mixture logits `Omega`; the weights are `softmax(Omega)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpfParams {
    pub omega: Vec<f64>,
}

impl MpfParams {
    /// Zero logits, i.e. uniform weights over `n_powers + 1` exponents.
    pub fn new(n_powers: usize) -> Result<Self> {
        if n_powers == 0 {
            return Err(Error::invalid("the power grid needs N_m >= 1"));
        }
        Ok(Self { omega: vec![0.0; n_powers + 1] })
    }

    pub fn n_powers(&self) -> usize {
        self.omega.len() - 1
    }

    pub fn alphas(&self) -> Vec<f64> {
        alpha_grid(self.n_powers())
    }

    pub fn gamma(&self) -> Vec<f64> {
        softmax(&self.omega)
    }
}

/// `alpha_i = i / n`, `i = 0..=n`.
pub fn alpha_grid(n: usize) -> Vec<f64> {
    (0..=n).map(|i| i as f64 / n as f64).collect()
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let total: f64 = e.iter().sum();
    e.iter().map(|v| v / total).collect()
}

/// `f(x) = sum_i gamma_i x^{alpha_i} / sum_i gamma_i`.
///
/// On the simplex the denominator is one; dividing by it makes `f(1) = 1`
/// hold exactly in floating point.
pub fn mpf_eval(gamma: &[f64], alphas: &[f64], x: f64) -> Result<f64> {
    if gamma.len() != alphas.len() {
        return Err(Error::DimensionMismatch { expected: alphas.len(), got: gamma.len() });
    }
    if !(x >= 0.0) {
        return Err(Error::invalid(format!("f_MPF is defined on x >= 0, got {x}")));
    }
    Ok(mpf_unchecked(gamma, alphas.iter().map(|&a| power(x, a))))
}

#[inline]
fn mpf_unchecked(gamma: &[f64], powers: impl Iterator<Item = f64>) -> f64 {
    let num: f64 = gamma.iter().zip(powers).map(|(g, p)| g * p).sum();
    num / gamma.iter().sum::<f64>()
}

/// How the upstream gradient of the vectorized triangle is scattered back
/// into a symmetric matrix before projecting onto eigenvectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GradScatter {
    /// Off-diagonal entries placed at `(i,j)` and `(j,i)`, each halved.
    #[default]
    Symmetric,
    /// Entries placed at `(i,j)` only, `i <= j`.
    UpperTriangular,
    /// Off-diagonal entries placed at both positions unhalved. This is wrong
    /// by a factor of two and exists to show the gradient checker catches it.
    DoubledOffDiagonal,
}

/// Offline part of the transform for one pooled matrix: eigenvectors,
/// L2-normalized spectrum and its power table.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdmtCache {
    pub u: DMatrix<f64>,
    /// Descending, non-negative, unit Euclidean norm.
    pub lambda: Vec<f64>,
    /// `lambda_k^{alpha_i}` laid out `[k * (N_m + 1) + i]`.
    pub powers: Vec<f64>,
    pub alphas: Vec<f64>,
}

impl SpdmtCache {
    pub fn new(h: &PooledSpd, n_powers: usize) -> Result<Self> {
        let (u, values) = eig_sym(&h.h)?;
        Self::from_eigen(u, values, n_powers)
    }

    /// Builds the cache from a descending non-negative eigendecomposition.
    pub fn from_eigen(u: DMatrix<f64>, values: Vec<f64>, n_powers: usize) -> Result<Self> {
        if n_powers == 0 {
            return Err(Error::invalid("the power grid needs N_m >= 1"));
        }
        if u.nrows() != values.len() || u.ncols() != values.len() {
            return Err(Error::DimensionMismatch { expected: values.len(), got: u.ncols() });
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm > 0.0) {
            return Err(Error::invalid("zero pooled matrix: spectrum cannot be L2-normalized"));
        }
        let lambda: Vec<f64> = values.iter().map(|v| v / norm).collect();
        let alphas = alpha_grid(n_powers);
        let powers = lambda.iter().flat_map(|&l| alphas.iter().map(move |&a| power(l, a))).collect();
        Ok(Self { u, lambda, powers, alphas })
    }

    pub fn dim(&self) -> usize {
        self.lambda.len()
    }

    /// Transformed spectrum `f(lambda_k)`.
    pub fn mapped_spectrum(&self, gamma: &[f64]) -> Result<Vec<f64>> {
        let p = self.alphas.len();
        if gamma.len() != p {
            return Err(Error::DimensionMismatch { expected: p, got: gamma.len() });
        }
        Ok((0..self.dim()).map(|k| mpf_unchecked(gamma, self.powers[k * p..(k + 1) * p].iter().copied())).collect())
    }

    /// Number of strictly positive eigenvalues.
    pub fn rank(&self) -> usize {
        self.lambda.iter().take_while(|&&l| l > 0.0).count()
    }

    /// `g(U diag(values) U^T)`.
    ///
    /// When the null eigenvalues all carry the same value `v0` (always the
    /// case for a mapped spectrum), this evaluates the equivalent
    /// `v0 I + U_r diag(values_r - v0) U_r^T` over the `r` positive
    /// eigenvalues only.
    pub fn reconstruct(&self, values: &[f64]) -> Vec<f64> {
        let d = self.dim();
        let r = self.rank();
        let (cols, shift) = match values.get(r) {
            Some(&v0) if values[r..].iter().all(|&v| v == v0) => (r, v0),
            _ => (d, 0.0),
        };
        let u = self.u.columns(0, cols);
        let mut scaled = u.clone_owned();
        for (k, v) in values[..cols].iter().enumerate() {
            scaled.column_mut(k).scale_mut(*v - shift);
        }
        let mut m = scaled * u.transpose();
        for i in 0..d {
            m[(i, i)] += shift;
        }
        upper_triangle(&m)
    }

    /// Forward pass: `g(H')` with `H' = U diag(f(lambda)) U^T`.
    pub fn forward(&self, gamma: &[f64]) -> Result<Vec<f64>> {
        Ok(self.reconstruct(&self.mapped_spectrum(gamma)?))
    }

    /// Gradient with respect to the logits given the gradient of `g(H')`.
    pub fn backward(&self, gamma: &[f64], d_gh: &[f64]) -> Result<Vec<f64>> {
        self.backward_with(gamma, d_gh, GradScatter::default())
    }

    pub fn backward_with(&self, gamma: &[f64], d_gh: &[f64], scatter: GradScatter) -> Result<Vec<f64>> {
        let d = self.dim();
        let p = self.alphas.len();
        if d_gh.len() != triangle_len(d) {
            return Err(Error::DimensionMismatch { expected: triangle_len(d), got: d_gh.len() });
        }
        if gamma.len() != p {
            return Err(Error::DimensionMismatch { expected: p, got: gamma.len() });
        }
        let s = scatter_gradient(d_gh, d, scatter);
        // dL/df_k = u_k^T S u_k; the null eigenvalues share one power row,
        // so only their sum, tr(S) minus the range part, is needed
        let r = self.rank();
        let u = self.u.columns(0, r);
        let su = &s * u;
        let mut d_f: Vec<f64> = (0..r).map(|k| u.column(k).dot(&su.column(k))).collect();
        if r < d {
            d_f.push(s.trace() - d_f.iter().sum::<f64>());
        }
        let mut d_gamma = vec![0.0; p];
        for (k, df) in d_f.iter().enumerate() {
            for (i, g) in d_gamma.iter_mut().enumerate() {
                *g += self.powers[k * p + i] * df;
            }
        }
        Ok(softmax_backward(gamma, &d_gamma))
    }
}

fn scatter_gradient(d_gh: &[f64], d: usize, scatter: GradScatter) -> DMatrix<f64> {
    let mut s = DMatrix::zeros(d, d);
    let mut k = 0;
    for i in 0..d {
        for j in i..d {
            let g = d_gh[k];
            k += 1;
            if i == j {
                s[(i, i)] = g;
                continue;
            }
            match scatter {
                GradScatter::Symmetric => {
                    s[(i, j)] = 0.5 * g;
                    s[(j, i)] = 0.5 * g;
                }
                GradScatter::UpperTriangular => s[(i, j)] = g,
                GradScatter::DoubledOffDiagonal => {
                    s[(i, j)] = g;
                    s[(j, i)] = g;
                }
            }
        }
    }
    s
}

/// `dL/dOmega = (dL/dGamma - Gamma^T dL/dGamma) * Gamma`, elementwise.
pub fn softmax_backward(gamma: &[f64], d_gamma: &[f64]) -> Vec<f64> {
    let dot: f64 = gamma.iter().zip(d_gamma).map(|(g, d)| g * d).sum();
    gamma.iter().zip(d_gamma).map(|(g, d)| (d - dot) * g).collect()
}

/// Full forward from a pooled matrix.
pub fn spdmt_forward(h: &PooledSpd, mpf: &MpfParams) -> Result<(Vec<f64>, SpdmtCache)> {
    let cache = SpdmtCache::new(h, mpf.n_powers())?;
    let gh = cache.forward(&mpf.gamma())?;
    Ok((gh, cache))
}

/// Non-learnable transforms compared against the learned mixture.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FixedTransform {
    /// `log(x)`
    LogE,
    /// `log(x + eps)`
    LogReg(f64),
    /// `log(max(x, eps))`
    LogMax(f64),
    /// `sqrt(x)`
    HalfPower,
    /// `g(H) / |g(H)|`
    L2Norm,
    /// Signed square root of `g(H)`, then L2 normalization.
    Ssn,
}

/// Default `eps` of the regularized logarithms.
pub const DEFAULT_LOG_EPS: f64 = 1e-3;

impl FixedTransform {
    pub const ALL_DEFAULT: [FixedTransform; 6] = [
        Self::LogE,
        Self::LogReg(DEFAULT_LOG_EPS),
        Self::LogMax(DEFAULT_LOG_EPS),
        Self::L2Norm,
        Self::Ssn,
        Self::HalfPower,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Self::LogE => "log_e",
            Self::LogReg(_) => "log_reg",
            Self::LogMax(_) => "log_max",
            Self::HalfPower => "half_power",
            Self::L2Norm => "l2_norm",
            Self::Ssn => "ssn",
        }
    }

    /// Applies the transform using an existing eigendecomposition.
    pub fn apply(&self, cache: &SpdmtCache) -> Result<Vec<f64>> {
        let map = |f: &dyn Fn(f64) -> f64| cache.reconstruct(&cache.lambda.iter().map(|&x| f(x)).collect::<Vec<_>>());
        match *self {
            Self::LogE => {
                if let Some(k) = cache.lambda.iter().position(|&x| x == 0.0) {
                    return Err(Error::invalid(format!("log transform of a zero eigenvalue (index {k})")));
                }
                Ok(map(&f64::ln))
            }
            Self::LogReg(eps) => Ok(map(&|x| (x + eps).ln())),
            Self::LogMax(eps) => Ok(map(&|x| x.max(eps).ln())),
            Self::HalfPower => Ok(map(&f64::sqrt)),
            Self::L2Norm => Ok(l2_normalized(map(&|x| x))),
            Self::Ssn => Ok(l2_normalized(map(&|x| x).into_iter().map(|v| v.signum() * v.abs().sqrt()).collect())),
        }
    }
}

fn l2_normalized(mut v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    v
}

impl fmt::Display for FixedTransform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::LogReg(e) | Self::LogMax(e) => write!(f, "{}:{e}", self.name()),
            _ => f.write_str(self.name()),
        }
    }
}

impl FromStr for FixedTransform {
    type Err = Error;

    /// `name` or `name:eps` for the regularized logarithms.
    fn from_str(s: &str) -> Result<Self> {
        let (name, eps) = match s.split_once(':') {
            Some((n, e)) => {
                let eps: f64 = e.parse().map_err(|_| Error::invalid(format!("bad epsilon in transform '{s}'")))?;
                if !(eps > 0.0) {
                    return Err(Error::invalid(format!("epsilon must be positive in '{s}'")));
                }
                (n, Some(eps))
            }
            None => (s, None),
        };
        let t = match name {
            "log_e" => Self::LogE,
            "log_reg" => Self::LogReg(eps.unwrap_or(DEFAULT_LOG_EPS)),
            "log_max" => Self::LogMax(eps.unwrap_or(DEFAULT_LOG_EPS)),
            "half_power" => Self::HalfPower,
            "l2_norm" => Self::L2Norm,
            "ssn" => Self::Ssn,
            _ => return Err(Error::invalid(format!("unknown transform '{s}'"))),
        };
        if eps.is_some() && !matches!(t, Self::LogReg(_) | Self::LogMax(_)) {
            return Err(Error::invalid(format!("transform '{name}' takes no epsilon")));
        }
        Ok(t)
    }
}

/// Fixed transform of a pooled matrix.
pub fn fixed_transform(h: &PooledSpd, kind: FixedTransform) -> Result<Vec<f64>> {
    kind.apply(&SpdmtCache::new(h, 1)?)
}
