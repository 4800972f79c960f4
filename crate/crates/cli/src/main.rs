//! `stnet` command-line front end.
//!
//! Exit codes: 0 success, 1 usage or config error, 2 gradient check
//! failure, 3 data error.

use std::io::IsTerminal;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use stnet::config::{Method, RunConfig, SplitScheme};
use stnet::pipeline::{self, ExtractMode, ShapeFeatures};
use stnet::shape_io::{load_manifest, DatasetManifest, Split};
use stnet::spdmt::GradScatter;
use stnet::synth::{write_benchmark, ShapeKind, SynthSpec};
use stnet::trainer::{self, TrainConfig};
use stnet::Error;
use tracing::{info, warn};

#[derive(Parser, Debug)]
#[command(name = "stnet", version, about = "Spectral transform network for non-rigid shape retrieval and classification")]
struct Cli {
    /// More log output (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
struct Common {
    /// Run configuration (`key = value` lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Cache directory; overrides the config and STNET_CACHE_DIR.
    #[arg(long)]
    cache: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "stnet-out")]
    out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Baseline ladder step: surf_o1, surf_o2, surf_o1_ml, surf_o2_ml, st_net.
    #[arg(long, conflicts_with = "transform")]
    ablation: Option<String>,
    /// Fixed spectral transform replacing the learned one, e.g. half_power
    /// or log_max:0.001.
    #[arg(long)]
    transform: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Compute descriptor, pooling and eigendecomposition caches.
    Extract(Common),
    /// Train on cached features and write the model file(s).
    Train(Common),
    /// Evaluate trained model(s) or an untrained baseline.
    Eval(Common),
    /// Check analytic gradients on the bundled toy data.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        /// Use the deliberately wrong gradient scatter (must fail).
        #[arg(long)]
        corrupt_scatter: bool,
    },
    /// Export the learned f_MPF curve of a model file.
    ExportMpf {
        #[command(flatten)]
        common: Common,
        /// Model file; defaults to OUT/model.bin.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Grid points on [0, 1].
        #[arg(long, default_value_t = 256)]
        points: usize,
    },
    /// Write manifests with reassigned train/test splits.
    MakeSplits {
        #[command(flatten)]
        common: Common,
        /// Split scheme; overrides the config's `split`.
        #[arg(long)]
        scheme: Option<String>,
    },
    /// Generate the synthetic benchmark (OFF meshes plus manifest.tsv).
    Synth {
        #[command(flatten)]
        common: Common,
        /// Comma-separated shape kinds.
        #[arg(long, default_value = "sphere,ellipsoid,torus,capsule")]
        classes: String,
        #[arg(long, default_value_t = 20)]
        instances: usize,
        #[arg(long, default_value_t = 30)]
        resolution: usize,
        #[arg(long, default_value_t = 0.06)]
        amplitude: f64,
    },
}

enum Failure {
    Usage(String),
    Gradcheck,
    Data(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config { .. } => Failure::Usage(e.to_string()),
            e => Failure::Data(e),
        }
    }
}

type CliResult<T> = Result<T, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let filter = tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(level));
    tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).with_ansi(std::io::stderr().is_terminal()).init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Gradcheck) => ExitCode::from(2),
        Err(Failure::Data(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
    }
}

fn run(command: Command) -> CliResult<()> {
    match command {
        Command::Extract(c) => cmd_extract(&c),
        Command::Train(c) => cmd_train(&c),
        Command::Eval(c) => cmd_eval(&c),
        Command::Gradcheck { common, corrupt_scatter } => cmd_gradcheck(&common, corrupt_scatter),
        Command::ExportMpf { common, model, points } => cmd_export_mpf(&common, model, points),
        Command::MakeSplits { common, scheme } => cmd_make_splits(&common, scheme),
        Command::Synth { common, classes, instances, resolution, amplitude } => cmd_synth(&common, &classes, instances, resolution, amplitude),
    }
}

fn load_config(c: &Common) -> CliResult<RunConfig> {
    let mut config = match &c.config {
        Some(p) => RunConfig::load(p).map_err(|e| match e {
            Error::Io { .. } => Failure::Usage(e.to_string()),
            e => Failure::from(e),
        })?,
        None => RunConfig::default(),
    };
    if let Some(s) = c.seed {
        config.train.seed = s;
    }
    if let Some(a) = &c.ablation {
        config.method = Method::ablation(a).map_err(|e| Failure::Usage(e.to_string()))?;
    }
    if let Some(t) = &c.transform {
        config.method = Method::Transform(t.parse().map_err(|e: Error| Failure::Usage(e.to_string()))?);
    }
    Ok(config)
}

fn manifest_of(config: &RunConfig) -> CliResult<DatasetManifest> {
    let path = config.manifest.as_ref().ok_or_else(|| Failure::Usage("the config sets no `manifest`".into()))?;
    Ok(load_manifest(path)?)
}

fn cache_of(c: &Common, config: &RunConfig) -> PathBuf {
    c.cache.clone().unwrap_or_else(|| pipeline::cache_dir(config.cache_dir.as_deref(), Path::new("stnet-cache")))
}

fn workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn write(path: &Path, text: &str) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Failure::Data(Error::Io { path: dir.to_path_buf(), source: e }))?;
    }
    std::fs::write(path, text).map_err(|e| Failure::Data(Error::Io { path: path.to_path_buf(), source: e }))
}

/// Extracted features, failing with the list of unusable shapes.
fn features(c: &Common, config: &RunConfig, mode: ExtractMode) -> CliResult<(Vec<ShapeFeatures>, usize)> {
    let manifest = manifest_of(config)?;
    let cache = cache_of(c, config);
    let ex = pipeline::extract(&manifest, &config.descriptors, config.train.seed, &cache, workers(), mode)?;
    if !ex.failures.is_empty() {
        let missing: Vec<String> = ex
            .failures
            .iter()
            .filter(|(_, e)| matches!(e, Error::MissingCache(_)))
            .map(|(id, _)| id.clone())
            .collect();
        for (id, e) in &ex.failures {
            if !matches!(e, Error::MissingCache(_)) {
                eprintln!("{id}: {e}");
            }
        }
        if !missing.is_empty() {
            return Err(Failure::Data(Error::MissingCache(missing)));
        }
        return Err(Failure::Data(Error::InvalidInput(format!("{} shape(s) failed extraction", ex.failures.len()))));
    }
    Ok((ex.features, ex.class_count))
}

fn cmd_extract(c: &Common) -> CliResult<()> {
    let config = load_config(c)?;
    let manifest = manifest_of(&config)?;
    let cache = cache_of(c, &config);
    let clock = Instant::now();
    let ex = pipeline::extract(&manifest, &config.descriptors, config.train.seed, &cache, workers(), ExtractMode::Compute)?;
    println!(
        "extracted {} shape(s) into {} in {:.1}s: {} spectra, {} fields, {} pooled, {} eigendecompositions computed; {} damaged cache file(s) replaced",
        ex.features.len(),
        cache.display(),
        clock.elapsed().as_secs_f64(),
        ex.computed.spectra,
        ex.computed.fields,
        ex.computed.pooled,
        ex.computed.eigs,
        ex.repaired
    );
    if !ex.failures.is_empty() {
        for (id, e) in &ex.failures {
            eprintln!("{id}: {e}");
        }
        return Err(Failure::Data(Error::InvalidInput(format!("{} shape(s) failed extraction", ex.failures.len()))));
    }
    Ok(())
}

fn suffix(k: usize, folds: usize) -> String {
    if folds > 1 {
        format!("_fold{k}")
    } else {
        String::new()
    }
}

fn cmd_train(c: &Common) -> CliResult<()> {
    let config = load_config(c)?;
    if !config.method.is_trained() {
        println!("{} has no learnable parameters; nothing to train", config.method);
        return Ok(());
    }
    let (features, classes) = features(c, &config, ExtractMode::CacheOnly)?;
    let parts = pipeline::feature_partitions(&features, config.split, config.train.seed)?;
    for (k, part) in parts.iter().enumerate() {
        let sfx = suffix(k, parts.len());
        let every = config.checkpoint_every;
        let fitted = pipeline::fit(&config, &features, classes, part, |state| {
            if every > 0 && state.next_epoch % every == 0 {
                pipeline::save_checkpoint(&c.out.join(format!("checkpoint{sfx}_e{}.bin", state.next_epoch)), state, &config)?;
            }
            Ok(())
        })?;
        let (model, log) = fitted.expect("trained methods return a model");
        let path = c.out.join(format!("model{sfx}.bin"));
        pipeline::save_model(&path, &model, &config)?;
        write(&c.out.join(format!("train_log{sfx}.tsv")), &log.to_tsv())?;
        let last = log.epochs.last().map_or(f64::NAN, |e| e.mean_loss);
        println!("{}{sfx}: {} epoch(s), final loss {last:.6}{}, model {}", config.method, log.epochs.len(), if log.stopped_early { " (plateau)" } else { "" }, path.display());
    }
    Ok(())
}

fn cmd_eval(c: &Common) -> CliResult<()> {
    let config = load_config(c)?;
    let (features, _) = features(c, &config, ExtractMode::CacheOnly)?;
    let parts = pipeline::feature_partitions(&features, config.split, config.train.seed)?;
    let want_hash = pipeline::descriptor_hash(&config.descriptors, config.train.seed);
    let mut evals = Vec::with_capacity(parts.len());
    for (k, part) in parts.iter().enumerate() {
        let sfx = suffix(k, parts.len());
        let model = if config.method.is_trained() {
            let path = c.out.join(format!("model{sfx}.bin"));
            let file = pipeline::load_model(&path)?;
            if file.method != config.method.name() || file.descriptor_hash != want_hash {
                return Err(Failure::Data(Error::InvalidInput(format!(
                    "{} was trained as {} on other descriptor settings than this run ({})",
                    path.display(),
                    file.method,
                    config.method
                ))));
            }
            Some(file.model)
        } else {
            None
        };
        let e = pipeline::evaluate(&config, model.as_ref(), &features, part)?;
        write(&c.out.join(format!("ranked_lists_{}{sfx}.tsv", config.method)), &e.ranked_lists_text())?;
        evals.push(e);
    }
    let report = pipeline::report_text(&evals);
    write(&c.out.join(format!("report_{}.tsv", config.method)), &report)?;
    print!("{report}");
    Ok(())
}

fn cmd_gradcheck(c: &Common, corrupt: bool) -> CliResult<()> {
    let config = load_config(c)?;
    let train = TrainConfig { d_m: config.train.d_m.min(8), ..config.train.clone() };
    let clock = Instant::now();
    let samples = trainer::toy_samples(train.n_powers)?;
    let scatter = if corrupt { GradScatter::DoubledOffDiagonal } else { GradScatter::Symmetric };
    let report = trainer::gradcheck(&train, &samples, 4, scatter)?;
    print!("{}", report.to_text());
    println!("{} shapes, N_m = {}, {:.2}s", samples.len(), train.n_powers, clock.elapsed().as_secs_f64());
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::Gradcheck)
    }
}

fn cmd_export_mpf(c: &Common, model: Option<PathBuf>, points: usize) -> CliResult<()> {
    let path = model.unwrap_or_else(|| c.out.join("model.bin"));
    let file = pipeline::load_model(&path)?;
    let mpf = file.model.mpf.ok_or_else(|| Failure::Data(Error::InvalidInput(format!("{} has no learnable transform", path.display()))))?;
    let curve = pipeline::mpf_curve(&mpf, points)?;
    let text = curve.to_tsv();
    write(&c.out.join("mpf_curve.tsv"), &text)?;
    print!("{text}");
    Ok(())
}

fn cmd_make_splits(c: &Common, scheme: Option<String>) -> CliResult<()> {
    let config = load_config(c)?;
    let scheme: SplitScheme = match scheme {
        Some(s) => s.parse().map_err(|e: Error| Failure::Usage(e.to_string()))?,
        None => config.split,
    };
    let manifest = manifest_of(&config)?;
    let labels: Vec<usize> = manifest.entries.iter().map(|e| e.label).collect();
    let listed: Vec<Split> = manifest.entries.iter().map(|e| e.split).collect();
    let parts = pipeline::partitions(&labels, &listed, scheme, config.train.seed)?;
    let root = std::path::absolute(&manifest.root).map_err(|e| Failure::Data(Error::Io { path: manifest.root.clone(), source: e }))?;
    for (k, part) in parts.iter().enumerate() {
        let mut m = manifest.with_splits(|i| part[i]);
        for e in &mut m.entries {
            e.path = root.join(&e.path);
        }
        let path = c.out.join(format!("manifest{}.tsv", suffix(k, parts.len())));
        write(&path, &m.to_text())?;
        let train = part.iter().filter(|&&s| s == Split::Train).count();
        println!("{}: {train} train, {} test", path.display(), part.len() - train);
    }
    Ok(())
}

fn cmd_synth(c: &Common, classes: &str, instances: usize, resolution: usize, amplitude: f64) -> CliResult<()> {
    let kinds = classes
        .split(',')
        .map(|k| k.trim().parse::<ShapeKind>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(Failure::Usage)?;
    let spec = SynthSpec { classes: kinds, instances_per_class: instances, resolution, amplitude, seed: c.seed.unwrap_or(SynthSpec::default().seed), ..SynthSpec::default() };
    spec.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let manifest = write_benchmark(&spec, &c.out)?;
    info!(shapes = manifest.entries.len(), "benchmark written");
    if manifest.entries.is_empty() {
        warn!("no shapes generated");
    }
    println!("wrote {} meshes and {}", manifest.entries.len(), c.out.join("manifest.tsv").display());
    Ok(())
}
