//! Command-line front end: `generate`, `pretrain`, `compare`,
//! `export-filters`.
//!
//! `--config FILE` reads `key=value` lines (`#` comments allowed) whose keys
//! are flag names without dashes (`N=3`, `epochs=30`, `shapes=true`). Config
//! values are applied first, so flags given on the command line win.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::data::LabeledData;
use crate::error::Error;
use crate::io::archive::{read_noise_dataset, write_noise_dataset};
use crate::io::checkpoint::{read_checkpoint, write_checkpoint};
use crate::io::idx::load_idx;
use crate::io::image::write_image_grid;
use crate::io::metrics::{write_history, write_results};
use crate::io::shapes::{make_shapes_dataset, ShapesTask};
use crate::nn::{NetworkSpec, TrainConfig};
use crate::perlin::{build_dataset, DatasetConfig};
use crate::pipeline::{
    export_conv1_filters, export_curves, mean_accuracy, pretrain_on, result_rows, run_comparison, Comparison, Scheme,
};

/// Environment variable holding the worker-thread count.
pub const WORKERS_ENV: &str = "NOISEINIT_WORKERS";

#[derive(Debug, Parser)]
#[command(name = "noiseinit", version, about = "Perlin-noise pretraining as network initialization")]
#[command(args_override_self = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a labeled Perlin-noise dataset archive.
    Generate(GenerateArgs),
    /// Pretrain a network on a noise archive and write a checkpoint.
    Pretrain(PretrainArgs),
    /// Compare initialization schemes on a downstream task.
    Compare(CompareArgs),
    /// Write the first-layer filters of a checkpoint as a PGM grid.
    ExportFilters(ExportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Arch {
    Minicnn,
    Mlp,
}

impl Arch {
    pub fn build(self, input: [usize; 3], classes: usize) -> crate::Result<NetworkSpec> {
        match self {
            Arch::Minicnn => NetworkSpec::mini_cnn(input, classes),
            Arch::Mlp => NetworkSpec::mlp(input, 64, classes),
        }
    }
}

#[derive(Debug, Args)]
pub struct NoiseArgs {
    /// Largest horizontal grid exponent n
    #[arg(short = 'N', default_value_t = 3)]
    pub n_max: u32,
    /// Largest vertical grid exponent m
    #[arg(short = 'M', default_value_t = 3)]
    pub m_max: u32,
    /// Samples per noise category
    #[arg(short = 'K', default_value_t = 100)]
    pub per_category: u32,
    /// Image width in pixels
    #[arg(short = 'W', default_value_t = 32)]
    pub width: usize,
    /// Image height in pixels
    #[arg(short = 'H', default_value_t = 32)]
    pub height: usize,
    /// Channels (the grayscale plane is replicated)
    #[arg(short = 'C', default_value_t = 1)]
    pub channels: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Network architecture
    #[arg(long, value_enum, default_value_t = Arch::Minicnn)]
    pub arch: Arch,
    /// Training epochs
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Initial learning rate
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    /// SGD momentum
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    /// Mini-batch size
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
}

impl TrainArgs {
    fn config(&self, default_epochs: usize, seed: u64) -> Result<TrainConfig, CliError> {
        let epochs = self.epochs.unwrap_or(default_epochs);
        let cfg = TrainConfig {
            learning_rate: self.lr,
            momentum: self.momentum,
            batch_size: self.batch,
            ..TrainConfig::new(epochs, seed)
        };
        cfg.validate().map_err(|e| {
            let flag = match () {
                _ if !(self.lr > 0.0) => "--lr",
                _ if !(0.0..1.0).contains(&self.momentum) => "--momentum",
                _ => "--batch",
            };
            CliError::flag(flag, e)
        })?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub noise: NoiseArgs,
    /// Master seed
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output archive path
    #[arg(long)]
    pub out: PathBuf,
    /// Also write one sample per category as a PGM grid
    #[arg(long)]
    pub preview: Option<PathBuf>,
    /// key=value file with flag defaults
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    /// Noise archive to train on
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub train: TrainArgs,
    /// Seed for He initialization and shuffling
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output checkpoint path; the history CSV goes to <out>.history.csv
    #[arg(long)]
    pub out: PathBuf,
    /// key=value file with flag defaults
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Use the built-in shapes task (5 classes, 50 train / 100 test per class)
    #[arg(long)]
    pub shapes: bool,
    /// IDX image file for the downstream task
    #[arg(long, requires = "idx_labels")]
    pub idx_images: Option<PathBuf>,
    /// IDX label file for the downstream task
    #[arg(long, requires = "idx_images")]
    pub idx_labels: Option<PathBuf>,
    /// Comma-separated schemes: he, xavier, sparse[:k], normal, zero, perlin
    #[arg(long, default_value = "he,perlin")]
    pub schemes: String,
    /// Comma-separated run seeds
    #[arg(long, default_value = "0,1,2,3,4")]
    pub seeds: String,
    /// Noise-pretrained checkpoint for the perlin scheme
    #[arg(long)]
    pub perlin_ckpt: Option<PathBuf>,
    #[command(flatten)]
    pub train: TrainArgs,
    /// Seed of the downstream data
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Results CSV path; curves go to <out>.curves.csv
    #[arg(long)]
    pub out: PathBuf,
    /// key=value file with flag defaults
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// Checkpoint to read
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Output PGM path
    #[arg(long)]
    pub out: PathBuf,
    /// key=value file with flag defaults
    #[arg(long)]
    pub config: Option<PathBuf>,
}

/// An error attributed to the flag or file that caused it.
#[derive(Debug, thiserror::Error)]
#[error("{context}: {source}")]
pub struct CliError {
    pub context: String,
    #[source]
    pub source: Error,
}

impl CliError {
    pub fn flag(flag: &str, source: Error) -> Self {
        CliError {
            context: flag.to_string(),
            source,
        }
    }

    fn file(flag: &str, path: &Path, source: Error) -> Self {
        CliError {
            context: format!("{flag} {}", path.display()),
            source,
        }
    }
}

/// Expands `--config FILE` into leading flags. Returns the argument list
/// clap should parse.
pub fn expand_config(args: Vec<OsString>) -> Result<Vec<OsString>, CliError> {
    let pos = args.iter().position(|a| a == "--config");
    let path = match pos {
        Some(i) => match args.get(i + 1) {
            Some(p) => PathBuf::from(p),
            None => return Ok(args),
        },
        None => match args.iter().find_map(|a| a.to_str()?.strip_prefix("--config=").map(PathBuf::from)) {
            Some(p) => p,
            None => return Ok(args),
        },
    };
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::file("--config", &path, Error::io(&path, e)))?;
    let mut injected = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            CliError::file(
                "--config",
                &path,
                Error::InvalidConfig(format!("line {}: expected key=value", lineno + 1)),
            )
        })?;
        let (key, value) = (key.trim(), value.trim());
        let flag = if key.len() == 1 { format!("-{key}") } else { format!("--{key}") };
        match value {
            "true" => injected.push(OsString::from(flag)),
            "false" => {}
            _ => {
                injected.push(OsString::from(flag));
                injected.push(OsString::from(value));
            }
        }
    }
    // Insert right after the subcommand so later command-line flags override.
    let sub = args.iter().skip(1).position(|a| !a.to_string_lossy().starts_with('-')).map(|i| i + 2);
    let at = sub.unwrap_or(args.len()).min(args.len());
    let mut out = args[..at].to_vec();
    out.extend(injected);
    out.extend_from_slice(&args[at..]);
    Ok(out)
}

/// Configures the global worker pool from [`WORKERS_ENV`].
pub fn init_workers() -> Result<(), CliError> {
    let Ok(raw) = std::env::var(WORKERS_ENV) else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().ok().filter(|&n| n >= 1).ok_or_else(|| {
        CliError::flag(WORKERS_ENV, Error::InvalidConfig(format!("expected a positive integer, got {raw:?}")))
    })?;
    // A pool may already exist when called twice in one process; keep it.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Runs a parsed command, writing progress lines to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    match cli.command {
        Command::Generate(a) => generate(a, out),
        Command::Pretrain(a) => pretrain(a, out),
        Command::Compare(a) => compare(a, out),
        Command::ExportFilters(a) => export(a, out),
    }
}

fn say(out: &mut dyn Write, line: String) {
    let _ = writeln!(out, "{line}");
}

fn generate(a: GenerateArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let n = &a.noise;
    let cfg = DatasetConfig::new(n.n_max, n.m_max, n.per_category, n.width, n.height, n.channels, a.seed);
    cfg.validate().map_err(|e| {
        let flag = if n.n_max < 1 || (n.n_max < usize::BITS && (1usize << n.n_max) > n.width) {
            "-N/-W"
        } else if n.m_max < 1 || (n.m_max < usize::BITS && (1usize << n.m_max) > n.height) {
            "-M/-H"
        } else if n.per_category == 0 {
            "-K"
        } else {
            "-C"
        };
        CliError::flag(flag, e)
    })?;
    let ds = build_dataset(&cfg).map_err(|e| CliError::flag("generate", e))?;
    write_noise_dataset(&ds, &a.out).map_err(|e| CliError::file("--out", &a.out, e))?;
    say(
        out,
        format!(
            "generated samples={} categories={} fingerprint={:016x} out={}",
            ds.len(),
            cfg.num_categories(),
            cfg.fingerprint(),
            a.out.display()
        ),
    );
    if let Some(path) = &a.preview {
        let k = cfg.per_category as usize;
        let planes: Vec<_> = ds.samples.iter().step_by(k).map(|s| s.values.clone()).collect();
        write_image_grid(&planes, path).map_err(|e| CliError::file("--preview", path, e))?;
        say(out, format!("preview tiles={} out={}", planes.len(), path.display()));
    }
    Ok(())
}

/// `<path>.<suffix>` next to `path`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(suffix);
    PathBuf::from(s)
}

fn pretrain(a: PretrainArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let cfg = a.train.config(30, a.seed)?;
    let ds = read_noise_dataset(&a.data).map_err(|e| CliError::file("--data", &a.data, e))?;
    let spec = a
        .train
        .arch
        .build(ds.config.input_shape(), ds.config.num_categories())
        .map_err(|e| CliError::flag("--arch", e))?;
    let ckpt = pretrain_on(&ds, &spec, &cfg, a.seed, &mut |m| {
        say(
            out,
            format!(
                "epoch={} lr={} train_loss={} train_accuracy={}",
                m.epoch, m.learning_rate, m.train_loss, m.train_accuracy
            ),
        )
    })
    .map_err(|e| CliError::flag("pretrain", e))?;
    write_checkpoint(&ckpt, &a.out).map_err(|e| CliError::file("--out", &a.out, e))?;
    let history = sibling(&a.out, "history.csv");
    write_history(&ckpt.history, &history).map_err(|e| CliError::file("--out", &history, e))?;
    say(out, format!("checkpoint out={} history={}", a.out.display(), history.display()));
    Ok(())
}

fn parse_list<T: std::str::FromStr>(flag: &str, raw: &str) -> Result<Vec<T>, CliError>
where
    T::Err: std::fmt::Display,
{
    raw.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|e: T::Err| CliError::flag(flag, Error::InvalidConfig(format!("{s:?}: {e}"))))
        })
        .collect()
}

/// Every fifth sample (index % 5 == 4) becomes test data.
fn split_idx(data: &LabeledData) -> (LabeledData, LabeledData) {
    let (test, train): (Vec<usize>, Vec<usize>) = (0..data.len()).partition(|i| i % 5 == 4);
    (data.select(&train), data.select(&test))
}

fn compare(a: CompareArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let schemes: Vec<Scheme> = parse_list("--schemes", &a.schemes)?;
    let seeds: Vec<u64> = parse_list("--seeds", &a.seeds)?;
    if schemes.is_empty() {
        return Err(CliError::flag("--schemes", Error::InvalidConfig("no schemes given".into())));
    }
    if seeds.is_empty() {
        return Err(CliError::flag("--seeds", Error::InvalidConfig("no seeds given".into())));
    }
    let cfg = a.train.config(20, 0)?;
    let ckpt = match (&a.perlin_ckpt, schemes.contains(&Scheme::Perlin)) {
        (Some(p), true) => Some(read_checkpoint(p).map_err(|e| CliError::file("--perlin-ckpt", p, e))?),
        (None, true) => {
            return Err(CliError::flag(
                "--perlin-ckpt",
                Error::InvalidConfig("scheme perlin needs a checkpoint".into()),
            ))
        }
        _ => None,
    };
    let (name, train, test) = match (a.shapes, &a.idx_images, &a.idx_labels) {
        (true, None, _) => {
            let (train, test) =
                make_shapes_dataset(&ShapesTask::standard(a.seed)).map_err(|e| CliError::flag("--shapes", e))?;
            ("shapes".to_string(), train, test)
        }
        (false, Some(images), Some(labels)) => {
            let data = load_idx(images, labels).map_err(|e| CliError::file("--idx-images/--idx-labels", images, e))?;
            let (train, test) = split_idx(&data);
            let name = images.file_name().map_or("idx".into(), |n| n.to_string_lossy().into_owned());
            (name, train, test)
        }
        _ => {
            return Err(CliError::flag(
                "--shapes",
                Error::InvalidConfig("give exactly one of --shapes or --idx-images with --idx-labels".into()),
            ))
        }
    };
    let classes = train.num_classes().max(test.num_classes());
    let spec = a
        .train
        .arch
        .build(train.input_shape(), classes)
        .map_err(|e| CliError::flag("--arch", e))?;
    if let Some(c) = &ckpt {
        if c.spec.input_shape() != spec.input_shape() {
            return Err(CliError::flag(
                "--perlin-ckpt",
                Error::Transfer(format!(
                    "checkpoint input {:?} does not match downstream input {:?}",
                    c.spec.input_shape(),
                    spec.input_shape()
                )),
            ));
        }
    }
    let cmp = Comparison {
        dataset: name,
        train: &train,
        test: &test,
        spec,
        train_cfg: cfg,
        schemes: schemes.clone(),
        seeds,
        perlin: ckpt.as_ref(),
    };
    let reports = run_comparison(&cmp).map_err(|e| CliError::flag("compare", e))?;
    for r in &reports {
        for e in &r.history {
            say(
                out,
                format!(
                    "scheme={} seed={} epoch={} train_loss={} val_accuracy={}",
                    r.scheme,
                    r.seed,
                    e.epoch,
                    e.train_loss,
                    e.val_accuracy.unwrap_or(f64::NAN)
                ),
            );
        }
        say(
            out,
            format!(
                "result scheme={} seed={} epoch0_val_accuracy={} final_test_accuracy={}",
                r.scheme, r.seed, r.initial_val_accuracy, r.final_test_accuracy
            ),
        );
    }
    write_results(&result_rows(&reports), &a.out).map_err(|e| CliError::file("--out", &a.out, e))?;
    let curves = sibling(&a.out, "curves.csv");
    export_curves(&reports, &curves).map_err(|e| CliError::file("--out", &curves, e))?;
    for s in schemes {
        if let Some(m) = mean_accuracy(&reports, s) {
            say(out, format!("mean scheme={s} final_test_accuracy={m}"));
        }
    }
    say(out, format!("results out={} curves={}", a.out.display(), curves.display()));
    Ok(())
}

fn export(a: ExportArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let ckpt = read_checkpoint(&a.ckpt).map_err(|e| CliError::file("--ckpt", &a.ckpt, e))?;
    export_conv1_filters(&ckpt, &a.out).map_err(|e| match e {
        Error::Io { .. } => CliError::file("--out", &a.out, e),
        other => CliError::file("--ckpt", &a.ckpt, other),
    })?;
    say(out, format!("filters out={}", a.out.display()));
    Ok(())
}
