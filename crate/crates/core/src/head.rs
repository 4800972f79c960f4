//! Linear metric-learning head: L2-normalized input, embedding `F = W g`,
//! triplet retrieval loss and softmax classification loss with gradients.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Fully connected classifier on top of the embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    /// `M x D_m`.
    pub c: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl Classifier {
    pub fn classes(&self) -> usize {
        self.bias.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingParams {
    /// `D_m x D_p`.
    pub w: DMatrix<f64>,
    pub classifier: Option<Classifier>,
}

/// Uniform in `[-b, b]` with `b = sqrt(6 / (fan_in + fan_out))`.
fn uniform_init(rows: usize, cols: usize, seed: u64, name: &str) -> DMatrix<f64> {
    let b = (6.0 / (rows + cols) as f64).sqrt();
    let mut r = rng::substream(seed, name);
    DMatrix::from_fn(rows, cols, |_, _| r.random_range(-b..=b))
}

impl EmbeddingParams {
    /// Random initialization; `classes` adds a classifier with zero bias.
    pub fn init(d_m: usize, d_p: usize, classes: Option<usize>, seed: u64) -> Result<Self> {
        if d_m == 0 || d_p == 0 {
            return Err(Error::invalid("embedding dimensions must be positive"));
        }
        if d_m > d_p {
            return Err(Error::invalid(format!("D_m = {d_m} exceeds the input dimension {d_p}")));
        }
        let classifier = match classes {
            Some(m) if m < 2 => return Err(Error::invalid("classification needs at least 2 classes")),
            Some(m) => Some(Classifier { c: uniform_init(m, d_m, seed, "init_classifier"), bias: DVector::zeros(m) }),
            None => None,
        };
        Ok(Self { w: uniform_init(d_m, d_p, seed, "init_embedding"), classifier })
    }

    pub fn d_m(&self) -> usize {
        self.w.nrows()
    }

    pub fn d_p(&self) -> usize {
        self.w.ncols()
    }
}

/// Normalized input kept for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbedCache {
    pub g_tilde: DVector<f64>,
    pub norm: f64,
}

/// `F = W (gH / |gH|)`.
pub fn embed(params: &EmbeddingParams, gh: &[f64]) -> Result<(DVector<f64>, EmbedCache)> {
    if gh.len() != params.d_p() {
        return Err(Error::DimensionMismatch { expected: params.d_p(), got: gh.len() });
    }
    let norm = gh.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::invalid("cannot L2-normalize a zero or non-finite input vector"));
    }
    let g_tilde = DVector::from_iterator(gh.len(), gh.iter().map(|v| v / norm));
    Ok((&params.w * &g_tilde, EmbedCache { g_tilde, norm }))
}

/// Gradient of `W` (the outer product `dF g~^T`) is accumulated into `d_w`;
/// the gradient with respect to the unnormalized input is returned.
pub fn embed_backward(params: &EmbeddingParams, cache: &EmbedCache, d_f: &DVector<f64>, d_w: &mut DMatrix<f64>) -> Result<Vec<f64>> {
    if d_f.len() != params.d_m() || cache.g_tilde.len() != params.d_p() {
        return Err(Error::DimensionMismatch { expected: params.d_m(), got: d_f.len() });
    }
    d_w.ger(1.0, d_f, &cache.g_tilde, 1.0);
    let d_gt = params.w.tr_mul(d_f);
    // Jacobian of x / |x| is (I - g~ g~^T) / |x|
    let proj = cache.g_tilde.dot(&d_gt);
    Ok(d_gt.iter().zip(cache.g_tilde.iter()).map(|(d, g)| (d - proj * g) / cache.norm).collect())
}

/// One triplet's loss and gradients with respect to the three embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct TripletTerms {
    pub loss: f64,
    /// Argument of the hinge, `mu + d_pos - d_neg`.
    pub hinge: f64,
    pub d_anchor: DVector<f64>,
    pub d_pos: DVector<f64>,
    pub d_neg: DVector<f64>,
}

/// `(mu + |a - p| - |a - n|)_+^2 + eta |a - p|`. The gradient of a distance
/// between coincident points is taken as zero.
pub fn triplet_loss(anchor: &DVector<f64>, pos: &DVector<f64>, neg: &DVector<f64>, margin: f64, eta: f64) -> Result<TripletTerms> {
    if !(margin >= 0.0) || !(eta >= 0.0) {
        return Err(Error::invalid("margin and eta must be non-negative"));
    }
    if pos.len() != anchor.len() || neg.len() != anchor.len() {
        return Err(Error::DimensionMismatch { expected: anchor.len(), got: pos.len().min(neg.len()) });
    }
    let ap = anchor - pos;
    let an = anchor - neg;
    let (dp, dn) = (ap.norm(), an.norm());
    let unit = |v: &DVector<f64>, d: f64| if d > 0.0 { v / d } else { DVector::zeros(v.len()) };
    let (up, un) = (unit(&ap, dp), unit(&an, dn));
    let hinge = margin + dp - dn;
    let active = hinge.max(0.0);
    let loss = active * active + eta * dp;
    let c = 2.0 * active;
    Ok(TripletTerms {
        loss,
        hinge,
        d_anchor: &up * (c + eta) - &un * c,
        d_pos: -&up * (c + eta),
        d_neg: un * c,
    })
}

/// Form of the classification objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassLoss {
    /// `-sum_j [y_j log p_j + (1 - y_j) log(1 - p_j)]` on softmax outputs.
    #[default]
    SoftmaxBce,
    /// `-log p_y`.
    Categorical,
}

/// Probabilities are clamped into this interval before taking logs.
pub const PROB_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct ClassTerms {
    pub loss: f64,
    pub probs: DVector<f64>,
    /// Gradient with respect to the logits.
    pub d_logits: DVector<f64>,
}

/// Loss and logit gradient for one sample given its logits.
pub fn class_loss_from_logits(logits: &DVector<f64>, label: usize, kind: ClassLoss) -> Result<ClassTerms> {
    let m = logits.len();
    if m < 2 {
        return Err(Error::invalid("classification needs at least 2 classes"));
    }
    if label >= m {
        return Err(Error::invalid(format!("label {label} out of range for {m} classes")));
    }
    let max = logits.max();
    let e = logits.map(|z| (z - max).exp());
    let probs = &e / e.sum();
    let clamped = |p: f64| p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    let inside = |p: f64| p > PROB_CLAMP && p < 1.0 - PROB_CLAMP;
    let mut loss = 0.0;
    let mut d_p = DVector::zeros(m);
    for j in 0..m {
        let p = probs[j];
        let q = clamped(p);
        let y = if j == label { 1.0 } else { 0.0 };
        match kind {
            ClassLoss::SoftmaxBce => {
                loss -= y * q.ln() + (1.0 - y) * (1.0 - q).ln();
                if inside(p) {
                    d_p[j] = -y / q + (1.0 - y) / (1.0 - q);
                }
            }
            ClassLoss::Categorical if j == label => {
                loss -= q.ln();
                if inside(p) {
                    d_p[j] = -1.0 / q;
                }
            }
            ClassLoss::Categorical => {}
        }
    }
    let dot = probs.dot(&d_p);
    let d_logits = probs.zip_map(&d_p, |p, d| p * (d - dot));
    Ok(ClassTerms { loss, probs, d_logits })
}

/// Classification loss for one embedding. Gradients of the classifier are
/// accumulated into `d_c` and `d_b`; the gradient with respect to `F` is
/// returned with the terms.
pub fn classify_loss(
    classifier: &Classifier,
    f: &DVector<f64>,
    label: usize,
    kind: ClassLoss,
    d_c: &mut DMatrix<f64>,
    d_b: &mut DVector<f64>,
) -> Result<(ClassTerms, DVector<f64>)> {
    if f.len() != classifier.c.ncols() {
        return Err(Error::DimensionMismatch { expected: classifier.c.ncols(), got: f.len() });
    }
    let logits = &classifier.c * f + &classifier.bias;
    let terms = class_loss_from_logits(&logits, label, kind)?;
    d_c.ger(1.0, &terms.d_logits, f, 1.0);
    *d_b += &terms.d_logits;
    let d_f = classifier.c.tr_mul(&terms.d_logits);
    Ok((terms, d_f))
}
