//! Weighted first- and second-order pooling of per-point descriptors.

use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::descriptors::DescriptorField;
use crate::error::{Error, Result};
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    MeshWeighted,
    CloudAverage,
}

/// Per-point pooling weights, positive and summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolWeights {
    weights: Vec<f64>,
    provenance: Provenance,
}

impl PoolWeights {
    /// `pi(s) = a(s) / sum_p a(p)`. Equal areas give exactly `1/n`.
    pub fn from_areas(areas: &[f64]) -> Result<Self> {
        if areas.is_empty() {
            return Err(Error::invalid("pooling weights need at least one point"));
        }
        if let Some(i) = areas.iter().position(|&a| !(a > 0.0) || !a.is_finite()) {
            return Err(Error::invalid(format!("area of point {i} is not positive: {}", areas[i])));
        }
        if areas.iter().all(|&a| a == areas[0]) {
            return Ok(Self { weights: vec![1.0 / areas.len() as f64; areas.len()], provenance: Provenance::MeshWeighted });
        }
        let total: f64 = areas.iter().sum();
        Ok(Self { weights: areas.iter().map(|a| a / total).collect(), provenance: Provenance::MeshWeighted })
    }

    /// `pi(s) = 1/|S|`.
    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("pooling weights need at least one point"));
        }
        Ok(Self { weights: vec![1.0 / n as f64; n], provenance: Provenance::CloudAverage })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }
}

/// Pooled second-order matrix `H = sum_s pi(s) h(s) h(s)^T`.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledSpd {
    pub h: DMatrix<f64>,
    pub provenance: Provenance,
}

impl PooledSpd {
    pub fn dim(&self) -> usize {
        self.h.nrows()
    }
}

/// Points visited in a canonical order (lexicographic on weight, then row),
/// so the floating-point sum does not depend on the input point order.
fn canonical_order(field: &DescriptorField, weights: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..field.point_count()).collect();
    order.sort_by(|&a, &b| {
        weights[a].total_cmp(&weights[b]).then_with(|| {
            field
                .row(a)
                .iter()
                .zip(field.row(b))
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| *o != Ordering::Equal)
                .unwrap_or(Ordering::Equal)
        })
    });
    order
}

fn check(field: &DescriptorField, weights: &PoolWeights) -> Result<()> {
    if weights.len() != field.point_count() {
        return Err(Error::DimensionMismatch { expected: field.point_count(), got: weights.len() });
    }
    Ok(())
}

/// Second-order pooling. Zero descriptor entries are skipped, which keeps
/// sparse histogram fields cheap.
pub fn pool_second_order(field: &DescriptorField, weights: &PoolWeights) -> Result<PooledSpd> {
    check(field, weights)?;
    stats::count_pooling();
    let d = field.dim();
    let pi = weights.as_slice();
    let mut upper = vec![0.0; d * d];
    let mut nz: Vec<(usize, f64)> = Vec::with_capacity(d);
    for s in canonical_order(field, pi) {
        nz.clear();
        nz.extend(field.row(s).iter().copied().enumerate().filter(|&(_, v)| v != 0.0));
        for (a, &(i, hi)) in nz.iter().enumerate() {
            let scaled = pi[s] * hi;
            let row = &mut upper[i * d..(i + 1) * d];
            for &(j, hj) in &nz[a..] {
                row[j] += scaled * hj;
            }
        }
    }
    let h = DMatrix::from_fn(d, d, |i, j| if i <= j { upper[i * d + j] } else { upper[j * d + i] });
    Ok(PooledSpd { h, provenance: weights.provenance() })
}

/// First-order pooling `sum_s pi(s) h(s)`.
pub fn pool_first_order(field: &DescriptorField, weights: &PoolWeights) -> Result<DVector<f64>> {
    check(field, weights)?;
    let pi = weights.as_slice();
    let mut out = DVector::zeros(field.dim());
    for s in canonical_order(field, pi) {
        for (o, v) in out.iter_mut().zip(field.row(s)) {
            *o += pi[s] * v;
        }
    }
    Ok(out)
}
