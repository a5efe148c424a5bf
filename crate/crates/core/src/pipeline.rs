//! Noise pretraining, weight transfer and initialization comparisons.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;

use crate::data::LabeledData;
use crate::error::{Error, Result};
use crate::io::image::write_image_grid;
use crate::io::metrics::{write_curves, CurveRow, ResultRow};
use crate::nn::{
    evaluate, init_params, train_observed, EpochMetrics, InitKind, InitScheme, Layer, NetworkSpec, ParamSet,
    Provenance, TrainConfig,
};
use crate::perlin::{build_dataset, normalize_plane, DatasetConfig, NoiseDataset};
use crate::tensor::Tensor;

/// Trained (or freshly initialized) network plus where it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub spec: NetworkSpec,
    pub params: ParamSet,
    /// Scheme the training run started from.
    pub init: Provenance,
    pub history: Vec<EpochMetrics>,
    /// Fingerprint of the noise dataset config, for noise-pretrained weights.
    pub fingerprint: Option<u64>,
}

impl Checkpoint {
    pub fn validate(&self) -> Result<()> {
        self.params.check(&self.spec)
    }
}

/// Builds the noise dataset for `dataset_cfg` and pretrains on it, starting
/// from He initialization seeded with `train_cfg.shuffle_seed`.
pub fn pretrain(dataset_cfg: &DatasetConfig, spec: &NetworkSpec, train_cfg: &TrainConfig) -> Result<Checkpoint> {
    check_pretrain(dataset_cfg, spec)?;
    let ds = build_dataset(dataset_cfg)?;
    pretrain_on(&ds, spec, train_cfg, train_cfg.shuffle_seed, &mut |_| {})
}

fn check_pretrain(cfg: &DatasetConfig, spec: &NetworkSpec) -> Result<()> {
    cfg.validate()?;
    if spec.num_classes() != cfg.num_categories() {
        return Err(Error::InvalidConfig(format!(
            "network head has {} classes but N*M = {}*{} = {} noise categories",
            spec.num_classes(),
            cfg.n_max,
            cfg.m_max,
            cfg.num_categories()
        )));
    }
    if spec.input_shape() != cfg.input_shape() {
        return Err(Error::InvalidConfig(format!(
            "network input {:?} does not match noise samples {:?}",
            spec.input_shape(),
            cfg.input_shape()
        )));
    }
    Ok(())
}

/// Pretrains on an already generated (or loaded) noise dataset.
pub fn pretrain_on(
    ds: &NoiseDataset,
    spec: &NetworkSpec,
    train_cfg: &TrainConfig,
    init_seed: u64,
    observer: &mut dyn FnMut(&EpochMetrics),
) -> Result<Checkpoint> {
    check_pretrain(&ds.config, spec)?;
    let init = InitScheme::he(init_seed);
    let params = init_params(spec, init)?;
    let (params, history) = train_observed(spec, params, &ds.to_labeled(), train_cfg, None, observer)?;
    Ok(Checkpoint {
        spec: spec.clone(),
        params,
        init: Provenance::Init(init),
        history,
        fingerprint: Some(ds.config.fingerprint()),
    })
}

/// Copies every layer below the classifier head and attaches a fresh
/// He-initialized head with `classes` outputs.
pub fn transfer(ckpt: &Checkpoint, classes: usize, head_seed: u64) -> Result<(NetworkSpec, ParamSet)> {
    ckpt.validate().map_err(|e| Error::Transfer(format!("checkpoint is inconsistent: {e}")))?;
    let head = ckpt
        .spec
        .head_index()
        .ok_or_else(|| Error::Transfer("checkpoint network has no dense head".into()))?;
    let spec = ckpt.spec.with_head(classes).map_err(|e| Error::Transfer(e.to_string()))?;
    let origin = ckpt.fingerprint.map(|fingerprint| Provenance::NoisePretrained { fingerprint });
    let mut layers = ckpt.params.layers.clone();
    for p in layers.iter_mut().flatten() {
        if let Some(o) = origin {
            p.weight_origin = o;
            p.bias_origin = o;
        }
    }
    layers[head] = crate::nn::init_layer(&spec, head, InitScheme::he(head_seed))?;
    let params = ParamSet { layers };
    params.check(&spec).map_err(|e| Error::Transfer(e.to_string()))?;
    Ok((spec, params))
}

/// [`transfer`] that also checks the downstream input shape.
pub fn transfer_to(ckpt: &Checkpoint, data: &LabeledData, head_seed: u64) -> Result<(NetworkSpec, ParamSet)> {
    if data.input_shape() != ckpt.spec.input_shape() {
        return Err(Error::Transfer(format!(
            "downstream inputs {:?} do not match checkpoint input {:?}",
            data.input_shape(),
            ckpt.spec.input_shape()
        )));
    }
    transfer(ckpt, data.num_classes(), head_seed)
}

/// Initialization strategies compared downstream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scheme {
    He,
    Xavier,
    /// `None` picks `min(15, smallest fan-in)`.
    Sparse(Option<usize>),
    Normal,
    Zero,
    /// Transfer from a noise-pretrained checkpoint.
    Perlin,
}

pub const DEFAULT_SPARSE_K: usize = 15;

impl Scheme {
    pub fn name(&self) -> &'static str {
        match self {
            Scheme::He => "he",
            Scheme::Xavier => "xavier",
            Scheme::Sparse(_) => "sparse",
            Scheme::Normal => "normal",
            Scheme::Zero => "zero",
            Scheme::Perlin => "perlin",
        }
    }

    fn init_kind(&self, spec: &NetworkSpec) -> Option<InitKind> {
        Some(match *self {
            Scheme::He => InitKind::He,
            Scheme::Xavier => InitKind::Xavier,
            Scheme::Sparse(Some(k)) => InitKind::Sparse { k },
            Scheme::Sparse(None) => {
                let min_fan = (0..spec.layers().len())
                    .filter_map(|i| spec.fans(i))
                    .map(|(fi, _)| fi)
                    .min()
                    .unwrap_or(DEFAULT_SPARSE_K);
                InitKind::Sparse {
                    k: DEFAULT_SPARSE_K.min(min_fan),
                }
            }
            Scheme::Normal => InitKind::Normal,
            Scheme::Zero => InitKind::Zero,
            Scheme::Perlin => return None,
        })
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scheme::Sparse(Some(k)) => write!(f, "sparse:{k}"),
            other => f.write_str(other.name()),
        }
    }
}

impl FromStr for Scheme {
    type Err = Error;

    /// `he`, `xavier`, `sparse`, `sparse:K`, `normal`, `zero`, `perlin`.
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim() {
            "he" => Scheme::He,
            "xavier" => Scheme::Xavier,
            "sparse" => Scheme::Sparse(None),
            "normal" => Scheme::Normal,
            "zero" => Scheme::Zero,
            "perlin" => Scheme::Perlin,
            other => match other.strip_prefix("sparse:").map(str::parse::<usize>) {
                Some(Ok(k)) if k >= 1 => Scheme::Sparse(Some(k)),
                _ => return Err(Error::InvalidConfig(format!("unknown init scheme {other:?}"))),
            },
        })
    }
}

/// One (scheme, seed) downstream run.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub scheme: Scheme,
    pub seed: u64,
    pub dataset: String,
    /// Provenance of the starting weights, e.g. `he(seed=3)`.
    pub init: String,
    /// Test accuracy before any fine-tuning.
    pub initial_val_accuracy: f64,
    /// One entry per configured epoch; `val_*` are measured on the test split.
    pub history: Vec<EpochMetrics>,
    pub final_test_accuracy: f64,
    /// First epoch (one-based) whose activations became non-finite; later
    /// epochs carry NaN metrics.
    pub diverged_at: Option<usize>,
}

/// Downstream comparison setup. `spec` is the architecture used for
/// from-scratch schemes and must already have the downstream class count.
#[derive(Debug, Clone)]
pub struct Comparison<'a> {
    pub dataset: String,
    pub train: &'a LabeledData,
    pub test: &'a LabeledData,
    pub spec: NetworkSpec,
    pub train_cfg: TrainConfig,
    pub schemes: Vec<Scheme>,
    pub seeds: Vec<u64>,
    pub perlin: Option<&'a Checkpoint>,
}

/// Runs every scheme with every seed. Seed `s` fixes both the init seed and
/// the shuffle stream, so all schemes of one seed see the same batches.
/// Reports are sorted by scheme name, then seed.
pub fn run_comparison(cmp: &Comparison) -> Result<Vec<ExperimentReport>> {
    if cmp.seeds.is_empty() {
        return Err(Error::InvalidConfig("at least one seed is required".into()));
    }
    if cmp.schemes.is_empty() {
        return Err(Error::InvalidConfig("at least one scheme is required".into()));
    }
    if cmp.schemes.contains(&Scheme::Perlin) && cmp.perlin.is_none() {
        return Err(Error::InvalidConfig("scheme perlin requires a pretrained checkpoint".into()));
    }
    if cmp.spec.num_classes() != cmp.train.num_classes().max(cmp.test.num_classes()) {
        return Err(Error::InvalidConfig(format!(
            "network predicts {} classes, downstream data has {}",
            cmp.spec.num_classes(),
            cmp.train.num_classes().max(cmp.test.num_classes())
        )));
    }
    cmp.train_cfg.validate()?;
    let mut runs: Vec<(Scheme, u64)> = cmp
        .schemes
        .iter()
        .flat_map(|&s| cmp.seeds.iter().map(move |&seed| (s, seed)))
        .collect();
    runs.sort_by(|a, b| (a.0.name(), a.1).cmp(&(b.0.name(), b.1)));
    runs.dedup();
    runs.par_iter().map(|&(scheme, seed)| run_one(cmp, scheme, seed)).collect()
}

fn run_one(cmp: &Comparison, scheme: Scheme, seed: u64) -> Result<ExperimentReport> {
    let (spec, params, init) = match scheme.init_kind(&cmp.spec) {
        Some(kind) => {
            let s = InitScheme::new(kind, seed);
            (cmp.spec.clone(), init_params(&cmp.spec, s)?, Provenance::Init(s).to_string())
        }
        None => {
            let ckpt = cmp.perlin.expect("checked by caller");
            let (spec, params) = transfer_to(ckpt, cmp.train, seed)?;
            let init = match ckpt.fingerprint {
                Some(fingerprint) => Provenance::NoisePretrained { fingerprint }.to_string(),
                None => ckpt.init.to_string(),
            };
            (spec, params, init)
        }
    };
    let cfg = TrainConfig {
        shuffle_seed: seed,
        ..cmp.train_cfg.clone()
    };
    let (_, initial_val_accuracy) = evaluate(&spec, &params, cmp.test)?;
    let mut seen = Vec::with_capacity(cfg.epochs);
    let outcome = train_observed(&spec, params, cmp.train, &cfg, Some(cmp.test), &mut |m| seen.push(*m));
    let (history, final_test_accuracy, diverged_at) = match outcome {
        Ok((params, history)) => {
            let (_, acc) = evaluate(&spec, &params, cmp.test)?;
            (history, acc, None)
        }
        Err(Error::Numeric { .. }) => {
            let at = seen.len() + 1;
            for epoch in at..=cfg.epochs {
                seen.push(EpochMetrics {
                    epoch,
                    learning_rate: cfg.lr_at(epoch - 1),
                    train_loss: f64::NAN,
                    train_accuracy: f64::NAN,
                    val_loss: Some(f64::NAN),
                    val_accuracy: Some(f64::NAN),
                });
            }
            (seen, f64::NAN, Some(at))
        }
        Err(e) => return Err(e),
    };
    Ok(ExperimentReport {
        scheme,
        seed,
        dataset: cmp.dataset.clone(),
        init,
        initial_val_accuracy,
        history,
        final_test_accuracy,
        diverged_at,
    })
}

/// Mean final test accuracy of `scheme` across its reports.
pub fn mean_accuracy(reports: &[ExperimentReport], scheme: Scheme) -> Option<f64> {
    mean(reports.iter().filter(|r| r.scheme == scheme).map(|r| r.final_test_accuracy))
}

/// Mean pre-fine-tuning accuracy of `scheme` across its reports.
pub fn mean_initial_accuracy(reports: &[ExperimentReport], scheme: Scheme) -> Option<f64> {
    mean(reports.iter().filter(|r| r.scheme == scheme).map(|r| r.initial_val_accuracy))
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = values.collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Long-format curve rows: one per report and epoch.
pub fn curve_rows(reports: &[ExperimentReport]) -> Result<Vec<CurveRow>> {
    if reports.is_empty() {
        return Err(Error::InvalidInput("no reports to export".into()));
    }
    Ok(reports
        .iter()
        .flat_map(|r| {
            r.history.iter().map(move |e| CurveRow {
                scheme: r.scheme.to_string(),
                seed: r.seed,
                epoch: e.epoch,
                train_loss: e.train_loss,
                val_accuracy: e.val_accuracy.unwrap_or(f64::NAN),
            })
        })
        .collect())
}

pub fn result_rows(reports: &[ExperimentReport]) -> Vec<ResultRow> {
    reports
        .iter()
        .map(|r| ResultRow {
            scheme: r.scheme.to_string(),
            seed: r.seed,
            dataset: r.dataset.clone(),
            init: r.init.clone(),
            epoch0_val_accuracy: r.initial_val_accuracy,
            final_test_accuracy: r.final_test_accuracy,
        })
        .collect()
}

pub fn export_curves(reports: &[ExperimentReport], path: &Path) -> Result<()> {
    write_curves(&curve_rows(reports)?, path)
}

/// First-layer filters as `[k, k]` planes, each min-max normalized on its
/// own. Multi-channel filters are averaged over input channels.
pub fn conv1_filters(spec: &NetworkSpec, params: &ParamSet) -> Result<Vec<Tensor>> {
    let Some(Layer::Conv { .. }) = spec.layers().first() else {
        return Err(Error::InvalidRequest(format!(
            "first layer is {}, filter export needs a conv layer",
            spec.layers().first().map_or("missing", |l| l.name())
        )));
    };
    let p = params
        .conv1()
        .ok_or_else(|| Error::InvalidRequest("first layer has no parameters".into()))?;
    let &[out, kx, ky, cin] = p.weight.shape() else {
        return Err(Error::Shape(format!("conv weight has shape {:?}", p.weight.shape())));
    };
    (0..out)
        .map(|o| {
            let w = p.weight.row(o);
            let plane: Vec<f64> = (0..kx * ky)
                .map(|xy| w[xy * cin..(xy + 1) * cin].iter().sum::<f64>() / cin as f64)
                .collect();
            Ok(normalize_plane(&Tensor::from_vec(&[kx, ky], plane)?))
        })
        .collect()
}

/// Writes the first-layer filters as a PGM tile grid.
pub fn export_conv1_filters(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    write_image_grid(&conv1_filters(&ckpt.spec, &ckpt.params)?, path)
}
