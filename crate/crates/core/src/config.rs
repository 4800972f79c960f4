//! Run configuration and its plain-text `key = value` format.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys,
//! repeated keys and unparsable values are errors carrying the line number.
//! Relative paths are resolved against the config file's directory.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::descriptors::{DescriptorKind, LsfParams, SihksParams, WksParams};
use crate::error::{Error, Result};
use crate::head::ClassLoss;
use crate::lb::DEFAULT_EIGEN_COUNT;
use crate::spdmt::FixedTransform;
use crate::trainer::{Task, TrainConfig};

/// Raw descriptor settings; everything that changes the cached fields.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorConfig {
    /// Either spectral kinds (concatenated in order) or `[Lsf]` alone.
    pub kinds: Vec<DescriptorKind>,
    pub eigen_count: usize,
    pub hks_times: usize,
    pub sihks: SihksParams,
    pub wks: WksParams,
    pub lsf: LsfParams,
    /// Points sampled per mesh for LSF.
    pub cloud_points: usize,
}

impl Default for DescriptorConfig {
    fn default() -> Self {
        Self {
            kinds: vec![DescriptorKind::Sihks, DescriptorKind::Wks],
            eigen_count: DEFAULT_EIGEN_COUNT,
            hks_times: 16,
            sihks: SihksParams::default(),
            wks: WksParams::default(),
            lsf: LsfParams::default(),
            cloud_points: 3000,
        }
    }
}

impl DescriptorConfig {
    pub fn is_lsf(&self) -> bool {
        self.kinds == [DescriptorKind::Lsf]
    }

    pub fn validate(&self) -> Result<()> {
        if self.kinds.is_empty() {
            return Err(Error::invalid("no descriptor kind selected"));
        }
        if self.kinds.contains(&DescriptorKind::Concat) {
            return Err(Error::invalid("`concat` is implied by listing several kinds"));
        }
        if self.kinds.contains(&DescriptorKind::Lsf) && self.kinds.len() > 1 {
            return Err(Error::invalid("lsf lives on sampled points and cannot be combined with spectral descriptors"));
        }
        if self.eigen_count < 2 || self.hks_times == 0 || self.cloud_points < 2 {
            return Err(Error::invalid("eigen_count >= 2, hks_times >= 1 and cloud_points >= 2 are required"));
        }
        Ok(())
    }

    /// Canonical text of every setting; hashed into cache keys.
    pub fn key_text(&self) -> String {
        if self.is_lsf() {
            format!("lsf {:?} points={}", self.lsf, self.cloud_points)
        } else {
            let kinds: Vec<&str> = self.kinds.iter().map(|k| k.name()).collect();
            format!("{} K={} hks={} {:?} {:?}", kinds.join(","), self.eigen_count, self.hks_times, self.sihks, self.wks)
        }
    }
}

/// How shapes are divided into training and test sets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SplitScheme {
    /// Use the split column of the manifest.
    Manifest,
    /// `round(p * n)` training shapes, per class when `by_class`.
    Fraction { p: f64, by_class: bool },
    /// Stratified k-fold cross-validation.
    KFold(usize),
    /// `round(p * classes)` whole classes for training.
    DisjointClasses(f64),
}

impl fmt::Display for SplitScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Manifest => f.write_str("manifest"),
            Self::Fraction { p, by_class: true } => write!(f, "fraction:{p}"),
            Self::Fraction { p, by_class: false } => write!(f, "fraction:{p}:flat"),
            Self::KFold(k) => write!(f, "kfold:{k}"),
            Self::DisjointClasses(p) => write!(f, "disjoint_classes:{p}"),
        }
    }
}

impl FromStr for SplitScheme {
    type Err = Error;

    /// `manifest`, `fraction:P`, `fraction:P:flat`, `kfold:K` or
    /// `disjoint_classes:P`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let num = |i: usize| -> Result<f64> {
            parts.get(i).and_then(|v| v.parse().ok()).ok_or_else(|| Error::invalid(format!("bad split scheme `{s}`")))
        };
        Ok(match parts.as_slice() {
            ["manifest"] => Self::Manifest,
            ["fraction", _] => Self::Fraction { p: num(1)?, by_class: true },
            ["fraction", _, "flat"] => Self::Fraction { p: num(1)?, by_class: false },
            ["kfold", k] => Self::KFold(k.parse().map_err(|_| Error::invalid(format!("bad fold count in `{s}`")))?),
            ["disjoint_classes", _] => Self::DisjointClasses(num(1)?),
            _ => return Err(Error::invalid(format!("unknown split scheme `{s}`"))),
        })
    }
}

/// Pipeline variant: the baseline ladder, the full network, or the network
/// with the learnable transform replaced by a fixed one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Method {
    /// First-order pooled descriptor, no metric learning.
    SurfO1,
    /// Second-order pooled descriptor, no metric learning.
    SurfO2,
    SurfO1Ml,
    SurfO2Ml,
    StNet,
    /// Fixed spectral transform followed by the learned embedding.
    Transform(FixedTransform),
}

impl Method {
    pub const LADDER: [Method; 5] = [Method::SurfO1, Method::SurfO2, Method::SurfO1Ml, Method::SurfO2Ml, Method::StNet];

    pub fn is_trained(&self) -> bool {
        !matches!(self, Self::SurfO1 | Self::SurfO2)
    }

    pub fn name(&self) -> String {
        match self {
            Self::SurfO1 => "surf_o1".into(),
            Self::SurfO2 => "surf_o2".into(),
            Self::SurfO1Ml => "surf_o1_ml".into(),
            Self::SurfO2Ml => "surf_o2_ml".into(),
            Self::StNet => "st_net".into(),
            Self::Transform(t) => t.to_string(),
        }
    }

    /// Parses an ablation name.
    pub fn ablation(s: &str) -> Result<Self> {
        Self::LADDER.into_iter().find(|m| m.name() == s).ok_or_else(|| {
            Error::invalid(format!("unknown ablation `{s}` (expected surf_o1, surf_o2, surf_o1_ml, surf_o2_ml or st_net)"))
        })
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub descriptors: DescriptorConfig,
    pub manifest: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
    pub split: SplitScheme,
    /// Write a checkpoint every this many epochs; 0 disables.
    pub checkpoint_every: usize,
    pub method: Method,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            descriptors: DescriptorConfig::default(),
            manifest: None,
            cache_dir: None,
            split: SplitScheme::Manifest,
            checkpoint_every: 0,
            method: Method::StNet,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.descriptors.validate()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new("")))
    }

    /// Parses config text; relative paths are taken against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut c = Self::default();
        let mut seen: Vec<String> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let t = raw.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            let err = |msg: String| Error::Config { line, msg };
            let (key, value) = t.split_once('=').ok_or_else(|| err(format!("expected `key = value`, found `{t}`")))?;
            let (key, value) = (key.trim(), value.trim());
            if seen.iter().any(|k| k == key) {
                return Err(err(format!("`{key}` is set twice")));
            }
            seen.push(key.to_string());
            c.set(key, value, base).map_err(err)?;
        }
        c.validate().map_err(|e| Error::Config { line: 0, msg: e.to_string() })?;
        Ok(c)
    }

    /// Applies one setting; also used for command-line overrides.
    pub fn set(&mut self, key: &str, value: &str, base: &Path) -> std::result::Result<(), String> {
        fn num<T: FromStr>(key: &str, v: &str) -> std::result::Result<T, String> {
            v.parse().map_err(|_| format!("`{key}`: cannot parse `{v}`"))
        }
        let t = &mut self.train;
        let d = &mut self.descriptors;
        match key {
            "task" => {
                t.task = match value {
                    "retrieval" => Task::Retrieval,
                    "classification" => Task::Classification,
                    _ => return Err(format!("`task` must be retrieval or classification, got `{value}`")),
                }
            }
            "batch_size" => t.batch_size = num(key, value)?,
            "learning_rate" => t.learning_rate = num(key, value)?,
            "margin" => t.margin = num(key, value)?,
            "eta" => t.eta = num(key, value)?,
            "epochs" => t.epochs = num(key, value)?,
            "seed" => t.seed = num(key, value)?,
            "d_m" => t.d_m = num(key, value)?,
            "n_m" => t.n_powers = num(key, value)?,
            "triplet_cap_factor" => t.triplet_cap_factor = num(key, value)?,
            "plateau_epochs" => t.plateau_epochs = num(key, value)?,
            "plateau_tol" => t.plateau_tol = num(key, value)?,
            "class_loss" => {
                t.class_loss = match value {
                    "softmax_bce" => ClassLoss::SoftmaxBce,
                    "categorical" => ClassLoss::Categorical,
                    _ => return Err(format!("`class_loss` must be softmax_bce or categorical, got `{value}`")),
                }
            }
            "descriptors" => {
                d.kinds = value
                    .split(',')
                    .map(|k| match k.trim() {
                        "hks" => Ok(DescriptorKind::Hks),
                        "sihks" => Ok(DescriptorKind::Sihks),
                        "wks" => Ok(DescriptorKind::Wks),
                        "lsf" => Ok(DescriptorKind::Lsf),
                        other => Err(format!("unknown descriptor `{other}`")),
                    })
                    .collect::<std::result::Result<_, _>>()?
            }
            "eigen_count" => d.eigen_count = num(key, value)?,
            "hks_times" => d.hks_times = num(key, value)?,
            "sihks_base" => d.sihks.base = num(key, value)?,
            "sihks_tau_min" => d.sihks.tau_min = num(key, value)?,
            "sihks_tau_max" => d.sihks.tau_max = num(key, value)?,
            "sihks_tau_step" => d.sihks.tau_step = num(key, value)?,
            "sihks_frequencies" => d.sihks.frequencies = num(key, value)?,
            "wks_energies" => d.wks.energies = num(key, value)?,
            "wks_sigma_factor" => d.wks.sigma_factor = num(key, value)?,
            "wks_sigma" => d.wks.sigma = Some(num(key, value)?),
            "lsf_bins" => d.lsf.bins_per_dim = num(key, value)?,
            "lsf_radius" => d.lsf.radius = Some(num(key, value)?),
            "lsf_radius_fraction" => d.lsf.radius_fraction = num(key, value)?,
            "lsf_neighbor_cap" => d.lsf.neighbor_cap = num(key, value)?,
            "cloud_points" => d.cloud_points = num(key, value)?,
            "manifest" => self.manifest = Some(base.join(value)),
            "cache_dir" => self.cache_dir = Some(base.join(value)),
            "split" => self.split = value.parse().map_err(|e: Error| e.to_string())?,
            "checkpoint_every" => self.checkpoint_every = num(key, value)?,
            "ablation" => self.method = Method::ablation(value).map_err(|e| e.to_string())?,
            "transform" => self.method = Method::Transform(value.parse().map_err(|e: Error| e.to_string())?),
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }
}
