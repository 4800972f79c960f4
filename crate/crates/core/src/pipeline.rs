//! End-to-end orchestration: cached offline extraction, splits, the method
//! ladder, model and checkpoint files, evaluation, and f_MPF export.
//!
//! Extraction writes four record kinds per shape under
//! `cache_dir/<shape_id>/`: the LB spectrum (spectral descriptors only), the
//! descriptor field, the pooled matrix with its first-order mean, and the
//! pooled matrix's eigendecomposition. File names carry a hash of the mesh
//! content and every descriptor setting, so a changed mesh or setting never
//! reuses a stale file. Unreadable or corrupt files are recomputed with a
//! warning.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde_json::json;
use tracing::{info, warn};

use crate::config::{DescriptorConfig, Method, RunConfig, SplitScheme};
use crate::descriptors::{concat, default_hks_times, hks, lsf, sihks, wks, DescriptorField, DescriptorKind, LsfParams};
use crate::error::{Error, Result};
use crate::evaluation::{
    disjoint_class_split, evaluate_retrieval, fraction_split, kfold, leave_one_out, ranked_lists_text, retrieval_metrics,
    RankedList, RetrievalReport,
};
use crate::head::{Classifier, EmbeddingParams};
use crate::lb::{mesh_spectrum, EigenSolver, LbSpectrum};
use crate::pooling::{pool_first_order, pool_second_order, PoolWeights};
use crate::rng;
use crate::shape_io::{load_mesh, sample_points, DatasetManifest, ManifestEntry, Split, TriMesh};
use crate::spdmt::{alpha_grid, eig_sym, mpf_eval, upper_triangle, MpfParams, SpdmtCache};
use crate::store::{self, Record};
use crate::trainer::{self, Checkpoint, ModelParams, Sample, ShapeInput, Task, TrainLog};

/// Environment variable overriding the cache directory.
pub const CACHE_ENV: &str = "STNET_CACHE_DIR";

/// Cache directory: the environment variable wins over the configured one,
/// which wins over `default`.
pub fn cache_dir(configured: Option<&Path>, default: &Path) -> PathBuf {
    match std::env::var_os(CACHE_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => configured.map_or_else(|| default.to_path_buf(), Path::to_path_buf),
    }
}

/// Offline products of one shape that training and evaluation consume.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeFeatures {
    pub shape_id: String,
    pub label: usize,
    pub split: Split,
    /// First-order pooled descriptor.
    pub mean: Vec<f64>,
    /// Second-order pooled matrix `H`.
    pub pooled: DMatrix<f64>,
    /// Eigenvectors of `H` by descending eigenvalue.
    pub eigvecs: DMatrix<f64>,
    pub eigvals: Vec<f64>,
}

/// Stages recomputed during an extraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StageCounts {
    pub spectra: usize,
    pub fields: usize,
    pub pooled: usize,
    pub eigs: usize,
}

impl StageCounts {
    pub fn total(&self) -> usize {
        self.spectra + self.fields + self.pooled + self.eigs
    }

    fn add(&mut self, o: &StageCounts) {
        self.spectra += o.spectra;
        self.fields += o.fields;
        self.pooled += o.pooled;
        self.eigs += o.eigs;
    }
}

#[derive(Debug)]
pub struct Extraction {
    /// Successfully extracted shapes, in manifest order.
    pub features: Vec<ShapeFeatures>,
    pub class_count: usize,
    pub computed: StageCounts,
    /// Cache files that were present but unreadable.
    pub repaired: usize,
    /// Shapes that failed, with the reason.
    pub failures: Vec<(String, Error)>,
}

/// Hex SHA-256 of the vertex coordinates and face indices.
pub fn mesh_hash(mesh: &TriMesh) -> String {
    let mut bytes = Vec::with_capacity(24 * mesh.vertex_count() + 24 * mesh.face_count());
    for v in mesh.vertices() {
        for c in v.coords.iter() {
            bytes.extend_from_slice(&c.to_le_bytes());
        }
    }
    for f in mesh.faces() {
        for &i in f {
            bytes.extend_from_slice(&(i as u64).to_le_bytes());
        }
    }
    store::sha256_hex(&bytes)
}

/// Per-shape seed for a named random stage.
fn shape_seed(seed: u64, stage: &str, shape_id: &str) -> u64 {
    rng::substream(seed, &format!("{stage}/{shape_id}")).random()
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

fn matrix(record: &Record, name: &str) -> Result<DMatrix<f64>> {
    let a = record.array(name)?;
    match a.shape.as_slice() {
        &[r, c] => Ok(DMatrix::from_row_slice(r, c, &a.data)),
        _ => Err(Error::invalid(format!("array `{name}` is not a matrix"))),
    }
}

/// Loads a cache record when present and keyed as expected; a missing file
/// is `None`, a damaged one is `None` plus a warning.
fn try_cache(path: &Path, kind: &str, key: &str, repaired: &mut usize) -> Option<Record> {
    if !path.exists() {
        return None;
    }
    match store::load(path, kind) {
        Ok(r) if r.meta_str("key") == Some(key) => Some(r),
        Ok(_) => {
            warn!(path = %path.display(), "cache key mismatch; recomputing");
            *repaired += 1;
            None
        }
        Err(e) => {
            warn!(path = %path.display(), error = %e, "unreadable cache; recomputing");
            *repaired += 1;
            None
        }
    }
}

/// Whether extraction may compute missing stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExtractMode {
    Compute,
    /// Only read caches; a shape without its pooled and eigen records fails
    /// with [`Error::MissingCache`].
    CacheOnly,
}

struct ShapeJob<'a> {
    mode: ExtractMode,
    entry: &'a ManifestEntry,
    manifest: &'a DatasetManifest,
    config: &'a DescriptorConfig,
    seed: u64,
    cache: &'a Path,
}

struct ShapeOutcome {
    features: ShapeFeatures,
    computed: StageCounts,
    repaired: usize,
}

fn spectrum_for(job: &ShapeJob, mesh: &TriMesh, mesh_key: &str, computed: &mut StageCounts, repaired: &mut usize) -> Result<LbSpectrum> {
    let key = store::sha256_hex(format!("{mesh_key}|spectrum|K={}", job.config.eigen_count).as_bytes());
    let path = job.cache.join(&job.entry.shape_id).join(format!("spectrum-{}.bin", &key[..16]));
    if let Some(r) = try_cache(&path, "spectrum", &key, repaired) {
        let parsed = (|| -> Result<LbSpectrum> {
            Ok(LbSpectrum {
                eigenvalues: r.array("eigenvalues")?.data.clone(),
                eigenfunctions: matrix(&r, "eigenfunctions")?,
                mass: r.array("mass")?.data.clone(),
            })
        })();
        match parsed {
            Ok(s) => return Ok(s),
            Err(e) => {
                warn!(path = %path.display(), error = %e, "malformed spectrum cache; recomputing");
                *repaired += 1;
            }
        }
    }
    let k = job.config.eigen_count.min(mesh.vertex_count());
    let s = mesh_spectrum(mesh, k, EigenSolver::Auto)?;
    computed.spectra += 1;
    let (n, kk) = s.eigenfunctions.shape();
    let rec = Record::new("spectrum", json!({"key": key, "shape_id": job.entry.shape_id}))
        .with("eigenvalues", &[kk], s.eigenvalues.clone())
        .with("eigenfunctions", &[n, kk], row_major(&s.eigenfunctions))
        .with("mass", &[n], s.mass.clone());
    store::save(&rec, &path)?;
    Ok(s)
}

/// Descriptor field and its pooling weights.
fn field_for(
    job: &ShapeJob,
    mesh: &TriMesh,
    mesh_key: &str,
    key: &str,
    computed: &mut StageCounts,
    repaired: &mut usize,
) -> Result<(DescriptorField, PoolWeights)> {
    let path = job.cache.join(&job.entry.shape_id).join(format!("field-{}.bin", &key[..16]));
    let kind = if job.config.kinds.len() == 1 { job.config.kinds[0] } else { DescriptorKind::Concat };
    if let Some(r) = try_cache(&path, "field", key, repaired) {
        let parsed = (|| -> Result<(DescriptorField, PoolWeights)> {
            let v = r.array("values")?;
            let field = DescriptorField::new(v.data.clone(), *v.shape.get(1).unwrap_or(&0), kind)?;
            let weights = match r.arrays.get("areas") {
                Some(a) => PoolWeights::from_areas(&a.data)?,
                None => PoolWeights::uniform(field.point_count())?,
            };
            Ok((field, weights))
        })();
        match parsed {
            Ok(x) => return Ok(x),
            Err(e) => {
                warn!(path = %path.display(), error = %e, "malformed field cache; recomputing");
                *repaired += 1;
            }
        }
    }
    let c = job.config;
    let id = &job.entry.shape_id;
    let (field, areas) = if c.is_lsf() {
        let cloud = sample_points(mesh, c.cloud_points, shape_seed(job.seed, "sampling", id))?;
        let params = LsfParams { seed: shape_seed(job.seed, "lsf", id), ..c.lsf.clone() };
        (lsf(&cloud, &params)?, None)
    } else {
        let s = spectrum_for(job, mesh, mesh_key, computed, repaired)?;
        let mut parts = Vec::with_capacity(c.kinds.len());
        for k in &c.kinds {
            parts.push(match k {
                DescriptorKind::Hks => hks(&s, &default_hks_times(&s, c.hks_times)?)?,
                DescriptorKind::Sihks => sihks(&s, &c.sihks)?,
                DescriptorKind::Wks => wks(&s, &c.wks)?,
                _ => unreachable!("validated descriptor list"),
            });
        }
        let field = if parts.len() == 1 { parts.pop().expect("one part") } else { concat(&parts.iter().collect::<Vec<_>>())? };
        (field, Some(s.mass))
    };
    computed.fields += 1;
    let weights = match &areas {
        Some(a) => PoolWeights::from_areas(a)?,
        None => PoolWeights::uniform(field.point_count())?,
    };
    let mut rec = Record::new("field", json!({"key": key, "shape_id": id, "kind": field.kind().name()}))
        .with("values", &[field.point_count(), field.dim()], field.values().to_vec());
    if let Some(a) = areas {
        rec = rec.with("areas", &[a.len()], a);
    }
    store::save(&rec, &path)?;
    Ok((field, weights))
}

fn extract_shape(job: &ShapeJob) -> Result<ShapeOutcome> {
    let mut computed = StageCounts::default();
    let mut repaired = 0;
    let mesh = load_mesh(&job.manifest.resolve(job.entry))?;
    let mesh_key = mesh_hash(&mesh);
    let seed_part = if job.config.is_lsf() { format!("|seed={}", job.seed) } else { String::new() };
    let key = store::sha256_hex(format!("{mesh_key}|{}{seed_part}", job.config.key_text()).as_bytes());
    let dir = job.cache.join(&job.entry.shape_id);
    let pooled_path = dir.join(format!("pooled-{}.bin", &key[..16]));
    let eig_path = dir.join(format!("eig-{}.bin", &key[..16]));

    let missing = || Error::MissingCache(vec![job.entry.shape_id.clone()]);
    let pooled_rec = match try_cache(&pooled_path, "pooled", &key, &mut repaired) {
        Some(r) => r,
        None if job.mode == ExtractMode::CacheOnly => return Err(missing()),
        None => {
            let (field, weights) = field_for(job, &mesh, &mesh_key, &key, &mut computed, &mut repaired)?;
            let pooled = pool_second_order(&field, &weights)?;
            let mean = pool_first_order(&field, &weights)?;
            computed.pooled += 1;
            let d = pooled.dim();
            let rec = Record::new("pooled", json!({"key": key, "shape_id": job.entry.shape_id, "provenance": pooled.provenance}))
                .with("h", &[d, d], row_major(&pooled.h))
                .with("mean", &[d], mean.as_slice().to_vec());
            store::save(&rec, &pooled_path)?;
            rec
        }
    };
    let pooled = matrix(&pooled_rec, "h")?;
    let mean = pooled_rec.array("mean")?.data.clone();
    let (eigvecs, eigvals) = match try_cache(&eig_path, "eig", &key, &mut repaired) {
        Some(r) => (matrix(&r, "u")?, r.array("values")?.data.clone()),
        None if job.mode == ExtractMode::CacheOnly => return Err(missing()),
        None => {
            let (u, values) = eig_sym(&pooled)?;
            computed.eigs += 1;
            let d = values.len();
            let rec = Record::new("eig", json!({"key": key, "shape_id": job.entry.shape_id}))
                .with("u", &[d, d], row_major(&u))
                .with("values", &[d], values.clone());
            store::save(&rec, &eig_path)?;
            (u, values)
        }
    };
    Ok(ShapeOutcome {
        features: ShapeFeatures { shape_id: job.entry.shape_id.clone(), label: job.entry.label, split: job.entry.split, mean, pooled, eigvecs, eigvals },
        computed,
        repaired,
    })
}

/// Extracts (or loads from cache) every shape of the manifest. Shapes are
/// processed by `workers` threads; with one worker everything runs on the
/// calling thread. Failures are collected rather than aborting the run.
pub fn extract(
    manifest: &DatasetManifest,
    config: &DescriptorConfig,
    seed: u64,
    cache: &Path,
    workers: usize,
    mode: ExtractMode,
) -> Result<Extraction> {
    config.validate()?;
    std::fs::create_dir_all(cache).map_err(|e| Error::io(cache, e))?;
    let n = manifest.entries.len();
    let job = |i: usize| {
        extract_shape(&ShapeJob { mode, entry: &manifest.entries[i], manifest, config, seed, cache })
    };
    let results: Vec<Result<ShapeOutcome>> = if workers <= 1 {
        (0..n).map(job).collect()
    } else {
        let next = AtomicUsize::new(0);
        let slots: Mutex<Vec<Option<Result<ShapeOutcome>>>> = Mutex::new((0..n).map(|_| None).collect());
        std::thread::scope(|s| {
            for _ in 0..workers.min(n) {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= n {
                        break;
                    }
                    let r = job(i);
                    slots.lock().expect("no worker panics while holding the lock")[i] = Some(r);
                });
            }
        });
        slots.into_inner().expect("workers joined").into_iter().map(|r| r.expect("every slot filled")).collect()
    };
    let mut out = Extraction { features: Vec::new(), class_count: manifest.class_count, computed: StageCounts::default(), repaired: 0, failures: Vec::new() };
    for (entry, r) in manifest.entries.iter().zip(results) {
        match r {
            Ok(o) => {
                out.computed.add(&o.computed);
                out.repaired += o.repaired;
                out.features.push(o.features);
            }
            Err(e) => {
                if !matches!(e, Error::MissingCache(_)) {
                    warn!(shape = %entry.shape_id, error = %e, "extraction failed");
                }
                out.failures.push((entry.shape_id.clone(), e));
            }
        }
    }
    info!(shapes = out.features.len(), recomputed = out.computed.total(), "extraction done");
    Ok(out)
}

/// Train/test assignments: one for a plain split, `k` for k-fold (fold `f`
/// is the test set of partition `f`). `listed` is the manifest's own split
/// column.
pub fn partitions(labels: &[usize], listed: &[Split], scheme: SplitScheme, seed: u64) -> Result<Vec<Vec<Split>>> {
    Ok(match scheme {
        SplitScheme::Manifest => vec![listed.to_vec()],
        SplitScheme::Fraction { p, by_class } => vec![fraction_split(labels, p, by_class, seed)?],
        SplitScheme::DisjointClasses(p) => vec![disjoint_class_split(labels, p, seed)?],
        SplitScheme::KFold(k) => {
            let folds = kfold(labels, k, seed)?;
            (0..k).map(|f| folds.iter().map(|&x| if x == f { Split::Test } else { Split::Train }).collect()).collect()
        }
    })
}

/// [`partitions`] over extracted shapes.
pub fn feature_partitions(features: &[ShapeFeatures], scheme: SplitScheme, seed: u64) -> Result<Vec<Vec<Split>>> {
    let labels: Vec<usize> = features.iter().map(|f| f.label).collect();
    let listed: Vec<Split> = features.iter().map(|f| f.split).collect();
    partitions(&labels, &listed, scheme, seed)
}

fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter().map(|x| x / n).collect()
    } else {
        v.to_vec()
    }
}

/// Network inputs of the selected shapes for a method.
pub fn samples(features: &[ShapeFeatures], indices: &[usize], method: Method, n_powers: usize) -> Result<Vec<Sample>> {
    indices
        .iter()
        .map(|&i| {
            let f = &features[i];
            let input = match method {
                Method::SurfO1 | Method::SurfO1Ml => ShapeInput::Fixed(f.mean.clone()),
                Method::SurfO2 | Method::SurfO2Ml => ShapeInput::Fixed(upper_triangle(&f.pooled)),
                Method::StNet => ShapeInput::Spectral(SpdmtCache::from_eigen(f.eigvecs.clone(), f.eigvals.clone(), n_powers)?),
                Method::Transform(t) => ShapeInput::Fixed(t.apply(&SpdmtCache::from_eigen(f.eigvecs.clone(), f.eigvals.clone(), 1)?)?),
            };
            Ok(Sample { shape_id: f.shape_id.clone(), label: f.label, input })
        })
        .collect()
}

fn indices_of(partition: &[Split], split: Split) -> Vec<usize> {
    (0..partition.len()).filter(|&i| partition[i] == split).collect()
}

/// Trains the method on the training part of `partition`. Untrained
/// baselines return `None`. `on_epoch` sees the trainer state after every
/// epoch.
pub fn fit(
    config: &RunConfig,
    features: &[ShapeFeatures],
    classes: usize,
    partition: &[Split],
    on_epoch: impl FnMut(&Checkpoint) -> Result<()>,
) -> Result<Option<(ModelParams, TrainLog)>> {
    if !config.method.is_trained() {
        if config.train.task == Task::Classification {
            return Err(Error::invalid(format!("{} has no classifier to train", config.method)));
        }
        return Ok(None);
    }
    let train_set = samples(features, &indices_of(partition, Split::Train), config.method, config.train.n_powers)?;
    config.train.validate()?;
    let model = ModelParams::init(&config.train, &train_set, classes)?;
    let start = Checkpoint { model, next_epoch: 0, seed: config.train.seed, losses: Vec::new() };
    let (end, log) = trainer::resume(&config.train, &train_set, start, config.train.epochs, on_epoch)?;
    Ok(Some((end.model, log)))
}

/// Evaluation of one partition.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub method: String,
    /// Leave-one-out retrieval over the test shapes.
    pub test: RetrievalReport,
    /// Same protocol over the training shapes.
    pub train: RetrievalReport,
    /// Classification accuracy on the test shapes, when the model has a
    /// classifier.
    pub accuracy: Option<f64>,
    /// Largest `|sum(p) - 1|` over the test softmax outputs.
    pub max_prob_sum_error: Option<f64>,
    pub lists: Vec<RankedList>,
    pub test_ids: Vec<String>,
}

impl Evaluation {
    pub fn ranked_lists_text(&self) -> String {
        ranked_lists_text(&self.lists, &self.test_ids)
    }
}

fn embeddings(model: Option<&ModelParams>, set: &[Sample]) -> Result<Vec<DVector<f64>>> {
    match model {
        Some(m) => trainer::embed_all(m, set),
        None => set
            .iter()
            .map(|s| match &s.input {
                ShapeInput::Fixed(v) => Ok(DVector::from_vec(unit(v))),
                ShapeInput::Spectral(_) => Err(Error::invalid("spectral input needs a trained model")),
            })
            .collect(),
    }
}

/// Evaluates a (possibly absent) model on a partition.
pub fn evaluate(config: &RunConfig, model: Option<&ModelParams>, features: &[ShapeFeatures], partition: &[Split]) -> Result<Evaluation> {
    if config.method.is_trained() != model.is_some() {
        return Err(Error::invalid(format!("method {} {} a model", config.method, if model.is_some() { "does not take" } else { "needs" })));
    }
    let test_idx = indices_of(partition, Split::Test);
    let train_idx = indices_of(partition, Split::Train);
    let test_set = samples(features, &test_idx, config.method, config.train.n_powers)?;
    let train_set = samples(features, &train_idx, config.method, config.train.n_powers)?;
    let test_labels: Vec<usize> = test_set.iter().map(|s| s.label).collect();
    let train_labels: Vec<usize> = train_set.iter().map(|s| s.label).collect();
    let test_emb = embeddings(model, &test_set)?;
    let lists = leave_one_out(&test_emb, &test_labels)?;
    let test = retrieval_metrics(&lists, &test_labels)?;
    let train = evaluate_retrieval(&embeddings(model, &train_set)?, &train_labels)?;
    let (mut accuracy, mut max_prob_sum_error) = (None, None);
    if let Some(m) = model.filter(|m| m.head.classifier.is_some()) {
        let mut correct = 0usize;
        let mut worst = 0.0f64;
        for s in &test_set {
            let p = trainer::predict_probs(m, s)?;
            worst = worst.max((p.sum() - 1.0).abs());
            correct += usize::from(trainer::predict(m, s)? == s.label);
        }
        accuracy = Some(correct as f64 / test_set.len() as f64);
        max_prob_sum_error = Some(worst);
    }
    Ok(Evaluation {
        method: config.method.name(),
        test,
        train,
        accuracy,
        max_prob_sum_error,
        lists,
        test_ids: test_set.iter().map(|s| s.shape_id.clone()).collect(),
    })
}

/// Mean of several reports, weighting folds equally.
pub fn mean_report(reports: &[RetrievalReport]) -> RetrievalReport {
    let k = reports.len().max(1) as f64;
    let sum = |f: fn(&RetrievalReport) -> f64| reports.iter().map(f).sum::<f64>() / k;
    RetrievalReport {
        nn: sum(|r| r.nn),
        tier1: sum(|r| r.tier1),
        tier2: sum(|r| r.tier2),
        e_measure: sum(|r| r.e_measure),
        dcg: sum(|r| r.dcg),
        map: sum(|r| r.map),
        queries: reports.iter().map(|r| r.queries).sum(),
    }
}

/// Tab-separated report: one row per fold (suffixed when there are
/// several) plus a mean row, and an accuracy table when available.
pub fn report_text(evals: &[Evaluation]) -> String {
    let mut s = format!("{}\n", RetrievalReport::HEADER);
    let many = evals.len() > 1;
    for (k, e) in evals.iter().enumerate() {
        let name = if many { format!("{}#{k}", e.method) } else { e.method.clone() };
        s.push_str(&e.test.row(&name));
        s.push('\n');
    }
    if many {
        let mean = mean_report(&evals.iter().map(|e| e.test).collect::<Vec<_>>());
        s.push_str(&mean.row(&format!("{}#mean", evals[0].method)));
        s.push('\n');
    }
    let accs: Vec<f64> = evals.iter().filter_map(|e| e.accuracy).collect();
    if accs.len() == evals.len() && !accs.is_empty() {
        s.push_str("\nmethod\tfold\taccuracy\n");
        for (k, a) in accs.iter().enumerate() {
            s.push_str(&format!("{}\t{k}\t{:.2}\n", evals[0].method, 100.0 * a));
        }
        s.push_str(&format!("{}\tmean\t{:.2}\n", evals[0].method, 100.0 * accs.iter().sum::<f64>() / accs.len() as f64));
    }
    s
}

/// Identity of the offline inputs a model was trained on.
pub fn descriptor_hash(config: &DescriptorConfig, seed: u64) -> String {
    let seed_part = if config.is_lsf() { format!("|seed={seed}") } else { String::new() };
    store::sha256_hex(format!("{}{seed_part}", config.key_text()).as_bytes())
}

fn model_record(kind: &str, model: &ModelParams, method: &str, task: Task, desc_hash: &str) -> Record {
    let head = &model.head;
    let classes = head.classifier.as_ref().map(Classifier::classes);
    let mut r = Record::new(
        kind,
        json!({
            "method": method,
            "task": task,
            "d_m": head.d_m(),
            "d_p": head.d_p(),
            "n_m": model.mpf.as_ref().map(MpfParams::n_powers),
            "classes": classes,
            "descriptor_hash": desc_hash,
        }),
    )
    .with("w", &[head.d_m(), head.d_p()], row_major(&head.w));
    if let Some(m) = &model.mpf {
        let alphas = m.alphas();
        r = r.with("omega", &[m.omega.len()], m.omega.clone()).with("alphas", &[alphas.len()], alphas);
    }
    if let Some(c) = &head.classifier {
        r = r.with("c", &[c.classes(), head.d_m()], row_major(&c.c)).with("bias", &[c.classes()], c.bias.as_slice().to_vec());
    }
    r
}

fn parse_model(r: &Record, path: &Path) -> Result<ModelParams> {
    let corrupt = |msg: String| Error::Corrupt { path: path.to_path_buf(), msg };
    let w = matrix(r, "w").map_err(|e| corrupt(e.to_string()))?;
    let mpf = match r.arrays.get("omega") {
        Some(o) => {
            let m = MpfParams { omega: o.data.clone() };
            let alphas = r.array("alphas").map_err(|e| corrupt(e.to_string()))?;
            if o.data.len() < 2 || alphas.data != alpha_grid(m.n_powers()) {
                return Err(corrupt("power grid does not match the stored logits".into()));
            }
            Some(m)
        }
        None => None,
    };
    let classifier = match r.arrays.get("c") {
        Some(_) => {
            let c = matrix(r, "c").map_err(|e| corrupt(e.to_string()))?;
            let bias = DVector::from_vec(r.array("bias").map_err(|e| corrupt(e.to_string()))?.data.clone());
            if c.ncols() != w.nrows() || bias.len() != c.nrows() {
                return Err(corrupt("classifier shape does not match the embedding".into()));
            }
            Some(Classifier { c, bias })
        }
        None => None,
    };
    Ok(ModelParams { mpf, head: EmbeddingParams { w, classifier } })
}

/// Model file with the metadata needed to check it against a run.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub model: ModelParams,
    pub method: String,
    pub descriptor_hash: String,
}

pub fn save_model(path: &Path, model: &ModelParams, config: &RunConfig) -> Result<()> {
    let hash = descriptor_hash(&config.descriptors, config.train.seed);
    store::save(&model_record("model", model, &config.method.name(), config.train.task, &hash), path)
}

pub fn load_model(path: &Path) -> Result<ModelFile> {
    let r = store::load(path, "model")?;
    Ok(ModelFile {
        model: parse_model(&r, path)?,
        method: r.meta_str("method").unwrap_or_default().to_string(),
        descriptor_hash: r.meta_str("descriptor_hash").unwrap_or_default().to_string(),
    })
}

pub fn save_checkpoint(path: &Path, state: &Checkpoint, config: &RunConfig) -> Result<()> {
    let hash = descriptor_hash(&config.descriptors, config.train.seed);
    let mut r = model_record("checkpoint", &state.model, &config.method.name(), config.train.task, &hash)
        .with("losses", &[state.losses.len()], state.losses.clone());
    r.meta["next_epoch"] = json!(state.next_epoch);
    r.meta["seed"] = json!(state.seed);
    store::save(&r, path)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let r = store::load(path, "checkpoint")?;
    let corrupt = |msg: &str| Error::Corrupt { path: path.to_path_buf(), msg: msg.to_string() };
    Ok(Checkpoint {
        model: parse_model(&r, path)?,
        next_epoch: r.meta_u64("next_epoch").ok_or_else(|| corrupt("missing next_epoch"))? as usize,
        seed: r.meta_u64("seed").ok_or_else(|| corrupt("missing seed"))?,
        losses: r.array("losses").map_err(|e| corrupt(&e.to_string()))?.data.clone(),
    })
}

/// Sampled `f_MPF` with its mixture weights.
#[derive(Debug, Clone, PartialEq)]
pub struct MpfCurve {
    pub alphas: Vec<f64>,
    pub gamma: Vec<f64>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl MpfCurve {
    pub fn is_non_decreasing(&self) -> bool {
        self.y.windows(2).all(|w| w[0] <= w[1])
    }

    /// Weights table, a blank line, then the `(x, f(x))` table.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("alpha\tgamma\n");
        for (a, g) in self.alphas.iter().zip(&self.gamma) {
            s.push_str(&format!("{a}\t{g}\n"));
        }
        s.push_str("\nx\tf_mpf\n");
        for (x, y) in self.x.iter().zip(&self.y) {
            s.push_str(&format!("{x}\t{y}\n"));
        }
        s
    }
}

/// `f_MPF` on `points` evenly spaced abscissae of `[0, 1]`. Fails if the
/// curve is not non-decreasing.
pub fn mpf_curve(mpf: &MpfParams, points: usize) -> Result<MpfCurve> {
    if points < 2 {
        return Err(Error::invalid("an f_MPF curve needs at least 2 points"));
    }
    let alphas = mpf.alphas();
    let gamma = mpf.gamma();
    let x: Vec<f64> = (0..points).map(|i| i as f64 / (points - 1) as f64).collect();
    let y = x.iter().map(|&v| mpf_eval(&gamma, &alphas, v)).collect::<Result<Vec<_>>>()?;
    let curve = MpfCurve { alphas, gamma, x, y };
    if !curve.is_non_decreasing() {
        return Err(Error::invalid("exported f_MPF curve is not non-decreasing"));
    }
    Ok(curve)
}
