//! Mini-batch SGD over the mixture logits, the embedding and the optional
//! classifier, plus a finite-difference gradient checker for the whole chain.

use std::collections::BTreeMap;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use tracing::{debug, warn};

use crate::error::{Error, Result};
use crate::head::{self, ClassLoss, EmbedCache, EmbeddingParams};
use crate::rng;
use crate::spdmt::{triangle_len, GradScatter, MpfParams, SpdmtCache};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Retrieval,
    Classification,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub task: Task,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub margin: f64,
    pub eta: f64,
    pub epochs: usize,
    pub seed: u64,
    pub d_m: usize,
    pub n_powers: usize,
    /// Triplets per epoch are capped at this multiple of the training set size.
    pub triplet_cap_factor: usize,
    /// Stop when the epoch loss changed by less than `plateau_tol` (relative)
    /// over this many epochs. Zero disables early stopping.
    pub plateau_epochs: usize,
    pub plateau_tol: f64,
    pub class_loss: ClassLoss,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            task: Task::Retrieval,
            batch_size: 5,
            learning_rate: 0.5,
            margin: 1.0,
            eta: 1.0,
            epochs: 200,
            seed: 0,
            d_m: 32,
            n_powers: crate::spdmt::DEFAULT_POWERS,
            triplet_cap_factor: 10,
            plateau_epochs: 20,
            plateau_tol: 1e-4,
            class_loss: ClassLoss::SoftmaxBce,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::invalid("learning_rate must be finite and non-negative"));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if !(self.margin >= 0.0) || !(self.eta >= 0.0) {
            return Err(Error::invalid("margin and eta must be non-negative"));
        }
        if self.d_m == 0 || self.n_powers == 0 || self.triplet_cap_factor == 0 {
            return Err(Error::invalid("d_m, n_powers and triplet_cap_factor must be positive"));
        }
        Ok(())
    }
}

/// What the head sees for one shape: either the offline part of the
/// learnable spectral transform, or a fixed vector (baselines and fixed
/// transforms).
#[derive(Debug, Clone, PartialEq)]
pub enum ShapeInput {
    Spectral(SpdmtCache),
    Fixed(Vec<f64>),
}

impl ShapeInput {
    pub fn input_len(&self) -> usize {
        match self {
            Self::Spectral(c) => triangle_len(c.dim()),
            Self::Fixed(v) => v.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub shape_id: String,
    pub label: usize,
    pub input: ShapeInput,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// Present when the inputs are spectral caches.
    pub mpf: Option<MpfParams>,
    pub head: EmbeddingParams,
}

impl ModelParams {
    /// Fresh parameters for the given samples: zero logits, random head.
    pub fn init(config: &TrainConfig, samples: &[Sample], classes: usize) -> Result<Self> {
        let first = samples.first().ok_or_else(|| Error::invalid("no training samples"))?;
        let d_p = first.input.input_len();
        let spectral = matches!(first.input, ShapeInput::Spectral(_));
        for s in samples {
            if s.input.input_len() != d_p || matches!(s.input, ShapeInput::Spectral(_)) != spectral {
                return Err(Error::invalid(format!("shape {} has an input unlike the first shape's", s.shape_id)));
            }
        }
        let mpf = if spectral { Some(MpfParams::new(config.n_powers)?) } else { None };
        if let (Some(m), ShapeInput::Spectral(c)) = (&mpf, &first.input) {
            if c.alphas.len() != m.omega.len() {
                return Err(Error::invalid("spectral caches were built for a different power grid"));
            }
        }
        let classes = (config.task == Task::Classification).then_some(classes);
        Ok(Self { mpf, head: EmbeddingParams::init(config.d_m.min(d_p), d_p, classes, config.seed)? })
    }
}

/// Input vector `g(H')` (or the fixed vector) for one shape.
fn head_input(model: &ModelParams, input: &ShapeInput) -> Result<Vec<f64>> {
    match (input, &model.mpf) {
        (ShapeInput::Spectral(c), Some(m)) => c.forward(&m.gamma()),
        (ShapeInput::Fixed(v), None) => Ok(v.clone()),
        _ => Err(Error::invalid("model and sample disagree on whether the transform is learnable")),
    }
}

/// Embedding `F` of one shape.
pub fn embed_sample(model: &ModelParams, sample: &Sample) -> Result<DVector<f64>> {
    Ok(head::embed(&model.head, &head_input(model, &sample.input)?)?.0)
}

pub fn embed_all(model: &ModelParams, samples: &[Sample]) -> Result<Vec<DVector<f64>>> {
    samples.iter().map(|s| embed_sample(model, s)).collect()
}

/// Class probabilities of one shape (classification models only).
pub fn predict_probs(model: &ModelParams, sample: &Sample) -> Result<DVector<f64>> {
    let c = model.head.classifier.as_ref().ok_or_else(|| Error::invalid("model has no classifier"))?;
    let f = embed_sample(model, sample)?;
    let z = &c.c * f + &c.bias;
    let e = z.map(|v| (v - z.max()).exp());
    Ok(&e / e.sum())
}

/// Predicted class (ties to the lowest index).
pub fn predict(model: &ModelParams, sample: &Sample) -> Result<usize> {
    let p = predict_probs(model, sample)?;
    Ok((0..p.len()).fold(0, |best, j| if p[j] > p[best] { j } else { best }))
}

/// `(anchor, positive, negative)` indices into the training samples.
pub type Triplet = (usize, usize, usize);

/// Per-anchor layout of the valid triplets.
struct TripletSpace {
    members: BTreeMap<usize, Vec<usize>>,
    labels: Vec<usize>,
    /// Cumulative triplet counts per anchor.
    prefix: Vec<u64>,
}

impl TripletSpace {
    fn new(labels: &[usize]) -> Self {
        let mut members: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, &l) in labels.iter().enumerate() {
            members.entry(l).or_default().push(i);
        }
        let n = labels.len() as u64;
        let mut prefix = Vec::with_capacity(labels.len() + 1);
        prefix.push(0);
        for &l in labels {
            let c = members[&l].len() as u64;
            prefix.push(prefix.last().unwrap() + (c - 1) * (n - c));
        }
        Self { members, labels: labels.to_vec(), prefix }
    }

    fn total(&self) -> u64 {
        *self.prefix.last().unwrap()
    }

    fn decode(&self, t: u64) -> Triplet {
        let a = self.prefix.partition_point(|&p| p <= t) - 1;
        let mut k = t - self.prefix[a];
        let class = &self.members[&self.labels[a]];
        let negatives = (self.labels.len() - class.len()) as u64;
        let (pi, ni) = ((k / negatives) as usize, (k % negatives) as usize);
        let p = class.iter().copied().filter(|&i| i != a).nth(pi).unwrap();
        // ni-th index (ascending) outside the anchor's class
        let mut n = 0;
        k = ni as u64;
        for i in 0..self.labels.len() {
            if self.labels[i] != self.labels[a] {
                if k == 0 {
                    n = i;
                    break;
                }
                k -= 1;
            }
        }
        (a, p, n)
    }
}

/// Number of valid triplets `sum_c |c| (|c| - 1) (N - |c|)`.
pub fn count_triplets(labels: &[usize]) -> u64 {
    TripletSpace::new(labels).total()
}

/// The epoch's triplets: `min(cap, all)` valid triplets drawn uniformly
/// without replacement in seeded random order, chunked into batches.
pub fn build_triplets(labels: &[usize], batch_size: usize, cap: usize, seed: u64, epoch: usize) -> Result<Vec<Vec<Triplet>>> {
    if batch_size == 0 {
        return Err(Error::invalid("batch_size must be at least 1"));
    }
    let space = TripletSpace::new(labels);
    if space.members.len() < 2 {
        return Err(Error::invalid("triplets need at least 2 classes"));
    }
    let singletons: Vec<usize> = space.members.iter().filter(|(_, m)| m.len() < 2).map(|(&l, _)| l).collect();
    if !singletons.is_empty() && epoch == 0 {
        warn!(?singletons, "classes with a single member only serve as negatives");
    }
    let total = space.total();
    if total == 0 {
        return Err(Error::invalid("no valid triplets: every class has a single member"));
    }
    let take = (cap as u64).min(total) as usize;
    let mut r = rng::indexed(seed, "triplets", epoch as u64);
    let picked: Vec<u64> = if total <= usize::MAX as u64 {
        let mut v: Vec<u64> = index::sample(&mut r, total as usize, take).into_iter().map(|i| i as u64).collect();
        v.shuffle(&mut r);
        v
    } else {
        return Err(Error::invalid("triplet space too large"));
    };
    let triplets: Vec<Triplet> = picked.into_iter().map(|t| space.decode(t)).collect();
    Ok(triplets.chunks(batch_size).map(<[Triplet]>::to_vec).collect())
}

/// Gradients of every parameter block.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub omega: Option<Vec<f64>>,
    pub w: DMatrix<f64>,
    pub c: Option<DMatrix<f64>>,
    pub bias: Option<DVector<f64>>,
}

impl Grads {
    fn zeros(model: &ModelParams) -> Self {
        Self {
            omega: model.mpf.as_ref().map(|m| vec![0.0; m.omega.len()]),
            w: DMatrix::zeros(model.head.d_m(), model.head.d_p()),
            c: model.head.classifier.as_ref().map(|c| DMatrix::zeros(c.c.nrows(), c.c.ncols())),
            bias: model.head.classifier.as_ref().map(|c| DVector::zeros(c.classes())),
        }
    }
}

/// One unit of work for a gradient evaluation.
#[derive(Debug, Clone, PartialEq)]
pub enum Batch {
    Triplets(Vec<Triplet>),
    Shapes(Vec<usize>),
}

impl Batch {
    fn len(&self) -> usize {
        match self {
            Self::Triplets(t) => t.len(),
            Self::Shapes(s) => s.len(),
        }
    }

    fn shapes(&self) -> Vec<usize> {
        let mut v: Vec<usize> = match self {
            Self::Triplets(t) => t.iter().flat_map(|&(a, p, n)| [a, p, n]).collect(),
            Self::Shapes(s) => s.clone(),
        };
        v.sort_unstable();
        v.dedup();
        v
    }
}

struct Forward {
    f: DVector<f64>,
    cache: EmbedCache,
}

/// Mean loss over the batch and its gradients.
pub fn batch_gradients(
    model: &ModelParams,
    samples: &[Sample],
    batch: &Batch,
    config: &TrainConfig,
    scatter: GradScatter,
) -> Result<(f64, Grads)> {
    if batch.len() == 0 {
        return Err(Error::invalid("empty batch"));
    }
    let shapes = batch.shapes();
    if let Some(&bad) = shapes.iter().find(|&&i| i >= samples.len()) {
        return Err(Error::invalid(format!("batch references sample {bad} of {}", samples.len())));
    }
    let mut fwd: BTreeMap<usize, Forward> = BTreeMap::new();
    for &i in &shapes {
        let (f, cache) = head::embed(&model.head, &head_input(model, &samples[i].input)?)?;
        fwd.insert(i, Forward { f, cache });
    }
    let scale = 1.0 / batch.len() as f64;
    let mut grads = Grads::zeros(model);
    let mut d_f: BTreeMap<usize, DVector<f64>> = shapes.iter().map(|&i| (i, DVector::zeros(model.head.d_m()))).collect();
    let mut loss = 0.0;
    match batch {
        Batch::Triplets(ts) => {
            for &(a, p, n) in ts {
                let t = head::triplet_loss(&fwd[&a].f, &fwd[&p].f, &fwd[&n].f, config.margin, config.eta)?;
                loss += t.loss;
                *d_f.get_mut(&a).unwrap() += t.d_anchor * scale;
                *d_f.get_mut(&p).unwrap() += t.d_pos * scale;
                *d_f.get_mut(&n).unwrap() += t.d_neg * scale;
            }
        }
        Batch::Shapes(ids) => {
            let classifier = model.head.classifier.as_ref().ok_or_else(|| Error::invalid("classification needs a classifier"))?;
            let (d_c, d_b) = (grads.c.as_mut().unwrap(), grads.bias.as_mut().unwrap());
            for &i in ids {
                let mut dc = DMatrix::zeros(d_c.nrows(), d_c.ncols());
                let mut db = DVector::zeros(d_b.len());
                let (t, df) = head::classify_loss(classifier, &fwd[&i].f, samples[i].label, config.class_loss, &mut dc, &mut db)?;
                loss += t.loss;
                *d_c += dc * scale;
                *d_b += db * scale;
                *d_f.get_mut(&i).unwrap() += df * scale;
            }
        }
    }
    for (&i, df) in &d_f {
        let d_gh = head::embed_backward(&model.head, &fwd[&i].cache, df, &mut grads.w)?;
        if let (ShapeInput::Spectral(c), Some(m), Some(d_omega)) = (&samples[i].input, &model.mpf, grads.omega.as_mut()) {
            for (g, v) in d_omega.iter_mut().zip(c.backward_with(&m.gamma(), &d_gh, scatter)?) {
                *g += v;
            }
        }
    }
    Ok((loss * scale, grads))
}

/// `theta <- theta - lr * grad` for every block. Non-finite gradients abort
/// with the offending block named and leave the parameters untouched.
pub fn sgd_step(model: &mut ModelParams, grads: &Grads, learning_rate: f64) -> Result<()> {
    let finite = |name: &str, v: &[f64]| {
        if v.iter().all(|x| x.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFiniteGradient { block: name.to_string() })
        }
    };
    if let Some(o) = &grads.omega {
        finite("omega", o)?;
    }
    finite("w", grads.w.as_slice())?;
    if let Some(c) = &grads.c {
        finite("classifier", c.as_slice())?;
    }
    if let Some(b) = &grads.bias {
        finite("bias", b.as_slice())?;
    }
    if let (Some(m), Some(o)) = (model.mpf.as_mut(), &grads.omega) {
        for (p, g) in m.omega.iter_mut().zip(o) {
            *p -= learning_rate * g;
        }
    }
    model.head.w -= &grads.w * learning_rate;
    if let (Some(c), Some(gc), Some(gb)) = (model.head.classifier.as_mut(), &grads.c, &grads.bias) {
        c.c -= gc * learning_rate;
        c.bias -= gb * learning_rate;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub wall_ms: u128,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub stopped_early: bool,
}

impl TrainLog {
    /// Tab-separated `epoch, mean_loss, wall_ms`, one line per epoch.
    pub fn to_tsv(&self) -> String {
        self.epochs.iter().map(|e| format!("{}\t{:.9e}\t{}\n", e.epoch, e.mean_loss, e.wall_ms)).collect()
    }
}

/// Resumable training state.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ModelParams,
    pub next_epoch: usize,
    pub seed: u64,
    pub losses: Vec<f64>,
}

fn epoch_batches(config: &TrainConfig, samples: &[Sample], epoch: usize) -> Result<Vec<Batch>> {
    match config.task {
        Task::Retrieval => {
            let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
            let cap = config.triplet_cap_factor * samples.len();
            Ok(build_triplets(&labels, config.batch_size, cap, config.seed, epoch)?.into_iter().map(Batch::Triplets).collect())
        }
        Task::Classification => {
            let mut order: Vec<usize> = (0..samples.len()).collect();
            order.shuffle(&mut rng::indexed(config.seed, "batches", epoch as u64));
            Ok(order.chunks(config.batch_size).map(|c| Batch::Shapes(c.to_vec())).collect())
        }
    }
}

fn plateaued(config: &TrainConfig, losses: &[f64]) -> bool {
    let w = config.plateau_epochs;
    if w == 0 || losses.len() <= w {
        return false;
    }
    let (now, then) = (losses[losses.len() - 1], losses[losses.len() - 1 - w]);
    (now - then).abs() <= config.plateau_tol * then.abs()
}

/// Trains from scratch.
pub fn train(config: &TrainConfig, samples: &[Sample], classes: usize) -> Result<(ModelParams, TrainLog)> {
    config.validate()?;
    let model = ModelParams::init(config, samples, classes)?;
    let start = Checkpoint { model, next_epoch: 0, seed: config.seed, losses: Vec::new() };
    let (ckpt, log) = resume(config, samples, start, config.epochs, |_| Ok(()))?;
    Ok((ckpt.model, log))
}

/// Continues training from a checkpoint until epoch `until` (exclusive) or
/// early stop. `on_epoch` receives the state after every epoch.
pub fn resume(
    config: &TrainConfig,
    samples: &[Sample],
    mut state: Checkpoint,
    until: usize,
    mut on_epoch: impl FnMut(&Checkpoint) -> Result<()>,
) -> Result<(Checkpoint, TrainLog)> {
    config.validate()?;
    if state.seed != config.seed {
        return Err(Error::invalid(format!("checkpoint seed {} differs from config seed {}", state.seed, config.seed)));
    }
    let mut log = TrainLog::default();
    if plateaued(config, &state.losses) {
        log.stopped_early = true;
        return Ok((state, log));
    }
    while state.next_epoch < until.min(config.epochs) {
        let epoch = state.next_epoch;
        let clock = Instant::now();
        let mut total = 0.0;
        let mut count = 0usize;
        for batch in epoch_batches(config, samples, epoch)? {
            let (loss, grads) = batch_gradients(&state.model, samples, &batch, config, GradScatter::default())?;
            sgd_step(&mut state.model, &grads, config.learning_rate)?;
            total += loss * batch.len() as f64;
            count += batch.len();
        }
        let mean_loss = total / count as f64;
        state.losses.push(mean_loss);
        state.next_epoch += 1;
        log.epochs.push(EpochRecord { epoch, mean_loss, wall_ms: clock.elapsed().as_millis() });
        debug!(epoch, mean_loss, "epoch done");
        on_epoch(&state)?;
        if plateaued(config, &state.losses) {
            log.stopped_early = true;
            break;
        }
    }
    Ok((state, log))
}

/// Maximum relative error of one parameter block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockError {
    pub block: String,
    pub params: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub blocks: Vec<BlockError>,
    pub threshold: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.blocks.iter().all(|b| b.max_rel_error < self.threshold)
    }

    pub fn max_error(&self) -> f64 {
        self.blocks.iter().map(|b| b.max_rel_error).fold(0.0, f64::max)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("block\tparams\tmax_rel_error\n");
        for b in &self.blocks {
            s.push_str(&format!("{}\t{}\t{:.3e}\n", b.block, b.params, b.max_rel_error));
        }
        s.push_str(&format!("{} (threshold {:.0e}, max {:.3e})\n", if self.passed() { "PASS" } else { "FAIL" }, self.threshold, self.max_error()));
        s
    }
}

/// Central-difference step of the gradient checker.
pub const GRADCHECK_STEP: f64 = 1e-5;
/// A block passes when its maximum relative error is below this.
pub const GRADCHECK_TOL: f64 = 1e-5;

fn block_slice<'a>(model: &'a mut ModelParams, block: &str) -> &'a mut [f64] {
    match block {
        "omega" => model.mpf.as_mut().unwrap().omega.as_mut_slice(),
        "w" => model.head.w.as_mut_slice(),
        "classifier" => model.head.classifier.as_mut().unwrap().c.as_mut_slice(),
        "bias" => model.head.classifier.as_mut().unwrap().bias.as_mut_slice(),
        _ => unreachable!("unknown block {block}"),
    }
}

fn grad_slice<'a>(grads: &'a Grads, block: &str) -> &'a [f64] {
    match block {
        "omega" => grads.omega.as_deref().unwrap(),
        "w" => grads.w.as_slice(),
        "classifier" => grads.c.as_ref().unwrap().as_slice(),
        "bias" => grads.bias.as_ref().unwrap().as_slice(),
        _ => unreachable!("unknown block {block}"),
    }
}

/// Compares analytic gradients of the retrieval and the classification
/// losses against central differences, for every parameter block. The
/// parameters are randomly initialized from the config seed, with random
/// mixture logits so the check does not sit at the uniform point.
pub fn gradcheck(config: &TrainConfig, samples: &[Sample], classes: usize, scatter: GradScatter) -> Result<GradcheckReport> {
    let mut blocks = Vec::new();
    for task in [Task::Retrieval, Task::Classification] {
        let cfg = TrainConfig { task, ..config.clone() };
        let mut model = ModelParams::init(&cfg, samples, classes)?;
        if let Some(m) = model.mpf.as_mut() {
            let mut r = rng::substream(config.seed, "gradcheck_omega");
            m.omega.iter_mut().for_each(|o| *o = rand::Rng::random_range(&mut r, -1.0..1.0));
        }
        let batch = match task {
            Task::Retrieval => {
                let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
                let all = count_triplets(&labels) as usize;
                let t = build_triplets(&labels, all.max(1), all, config.seed, 0)?;
                Batch::Triplets(t.into_iter().flatten().collect())
            }
            Task::Classification => Batch::Shapes((0..samples.len()).collect()),
        };
        let (_, analytic) = batch_gradients(&model, samples, &batch, &cfg, scatter)?;
        let mut names = vec!["w"];
        if model.mpf.is_some() {
            names.insert(0, "omega");
        }
        if task == Task::Classification {
            names.extend(["classifier", "bias"]);
        }
        for name in names {
            let a = grad_slice(&analytic, name).to_vec();
            let mut numeric = vec![0.0; a.len()];
            for (k, slot) in numeric.iter_mut().enumerate() {
                let orig = block_slice(&mut model, name)[k];
                block_slice(&mut model, name)[k] = orig + GRADCHECK_STEP;
                let lp = batch_gradients(&model, samples, &batch, &cfg, scatter)?.0;
                block_slice(&mut model, name)[k] = orig - GRADCHECK_STEP;
                let lm = batch_gradients(&model, samples, &batch, &cfg, scatter)?.0;
                block_slice(&mut model, name)[k] = orig;
                *slot = (lp - lm) / (2.0 * GRADCHECK_STEP);
            }
            let diff = a.iter().zip(&numeric).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            let scale = a.iter().chain(&numeric).map(|x| x.abs()).fold(0.0, f64::max).max(1e-300);
            let label = match task {
                Task::Retrieval => format!("retrieval/{name}"),
                Task::Classification => format!("classification/{name}"),
            };
            blocks.push(BlockError { block: label, params: a.len(), max_rel_error: diff / scale });
        }
    }
    Ok(GradcheckReport { blocks, threshold: GRADCHECK_TOL })
}

/// Small bundled dataset for gradient checks: 8 coarse synthetic meshes
/// (4 classes x 2), 12-d HKS, area-weighted pooling.
pub fn toy_samples(n_powers: usize) -> Result<Vec<Sample>> {
    use crate::descriptors::{default_hks_times, hks};
    use crate::lb::{mesh_spectrum, EigenSolver};
    use crate::pooling::{pool_second_order, PoolWeights};
    use crate::synth::{generate, ShapeKind, SynthSpec};

    let spec = SynthSpec {
        classes: vec![ShapeKind::Sphere, ShapeKind::Ellipsoid, ShapeKind::Torus, ShapeKind::Capsule],
        instances_per_class: 4,
        resolution: 8,
        ..SynthSpec::default()
    };
    let mut out = Vec::new();
    let mut kept = [0usize; 4];
    for shape in generate(&spec)? {
        if kept[shape.label] == 2 {
            continue;
        }
        kept[shape.label] += 1;
        let spectrum = mesh_spectrum(&shape.mesh, 20, EigenSolver::Dense)?;
        let field = hks(&spectrum, &default_hks_times(&spectrum, 12)?)?;
        let pooled = pool_second_order(&field, &PoolWeights::from_areas(&spectrum.mass)?)?;
        out.push(Sample { shape_id: shape.shape_id, label: shape.label, input: ShapeInput::Spectral(SpdmtCache::new(&pooled, n_powers)?) });
    }
    Ok(out)
}
