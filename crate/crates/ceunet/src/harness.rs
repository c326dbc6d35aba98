//! Experiment orchestration: declarative configs, the reduce -> patch ->
//! train -> evaluate trial loop, cluster/weight/timing studies, and file
//! emission (report.txt, ledger.csv, series/*.tsv).
//!
//! Studies that compare arms (weight schemes, patching on/off, grid cells)
//! share one split seed, so every arm sees identical train/test membership.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::cluster::ClusterMethod;
use crate::ensemble::{
    predict_ensemble, train_ensemble, EnsembleConfig, TrialLedger, TrialRow, WeightScheme,
};
use crate::error::{Error, Result};
use crate::hsi::{
    load_dataset, remove_background, split_indices, GroundTruth, HsiCube, LabeledPixelSet,
    SplitSpec,
};
use crate::patching::{
    downsample_exclusive, downsample_majority, extract_cpc_subset, PatchConfig, PatchMode,
    PadPolicy,
};
use crate::reduce::{fit_reducer, ReducerConfig, ReducerMethod};
use crate::seeds;
use crate::unet::{build_unet, TrainConfig, UNet, UNetSpec};

// ---------------------------------------------------------------------------
// Declarative config
// ---------------------------------------------------------------------------

fn default_seed() -> u64 {
    0
}
fn default_lr() -> f64 {
    1e-4
}
fn default_batch128() -> usize {
    128
}
fn default_k() -> usize {
    1
}
fn default_cluster() -> String {
    "kmeans".into()
}
fn default_weights() -> String {
    "constant".into()
}
fn default_min_cluster() -> usize {
    50
}
fn default_dropout() -> f64 {
    0.2
}
fn default_fraction() -> f64 {
    0.25
}
fn default_trials() -> usize {
    5
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReducerSection {
    pub method: String,
    pub dim: usize,
    #[serde(default)]
    pub epochs: Option<usize>,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_batch128")]
    pub batch_size: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PatchSection {
    pub mode: String,
    pub n: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelSection {
    /// "unet" or "ceunet".
    pub kind: String,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_cluster")]
    pub cluster: String,
    #[serde(default = "default_weights")]
    pub weights: String,
    /// Default 150 for a single U-Net, 200 per ensemble sub-net. 0 = dry run
    /// (phases up to clustering only).
    #[serde(default)]
    pub epochs: Option<usize>,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default)]
    pub batch_size: Option<usize>,
    #[serde(default = "default_min_cluster")]
    pub min_cluster_size: usize,
    #[serde(default)]
    pub widths: Option<[usize; 3]>,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitSection {
    #[serde(default = "default_fraction")]
    pub test_fraction: f64,
    #[serde(default = "default_trials")]
    pub trials: usize,
}

impl Default for SplitSection {
    fn default() -> Self {
        SplitSection {
            test_fraction: default_fraction(),
            trials: default_trials(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: Option<String>,
    pub dataset: String,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub reducer: Option<ReducerSection>,
    #[serde(default)]
    pub patch: Option<PatchSection>,
    pub model: ModelSection,
    #[serde(default)]
    pub split: SplitSection,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<ExperimentConfig> {
        toml::from_str(text).map_err(|e| Error::Config(format!("bad config: {e}")))
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
        let path = path.as_ref();
        let text =
            fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

/// A validated, enum-typed view of the config.
#[derive(Debug, Clone)]
pub struct ResolvedExperiment {
    pub name: String,
    pub dataset: PathBuf,
    pub seed: u64,
    pub reducer: Option<ReducerConfig>,
    pub patch: Option<(PatchMode, usize)>,
    pub model: ModelKind,
    pub split: SplitSpec,
}

#[derive(Debug, Clone)]
pub enum ModelKind {
    Unet {
        epochs: usize,
        learning_rate: f64,
        batch_size: Option<usize>,
        widths: [usize; 3],
        dropout: f64,
    },
    Ceunet(EnsembleConfig),
}

impl ModelKind {
    pub fn describe(&self) -> String {
        match self {
            ModelKind::Unet { epochs, .. } => format!("unet e{epochs}"),
            ModelKind::Ceunet(cfg) => format!(
                "ceunet k={} {} {} e{}",
                cfg.k, cfg.method, cfg.weight_scheme, cfg.epochs_per_subnet
            ),
        }
    }

    pub fn epochs(&self) -> usize {
        match self {
            ModelKind::Unet { epochs, .. } => *epochs,
            ModelKind::Ceunet(cfg) => cfg.epochs_per_subnet,
        }
    }
}

pub fn resolve(cfg: &ExperimentConfig) -> Result<ResolvedExperiment> {
    let reducer = match &cfg.reducer {
        None => None,
        Some(r) => {
            if r.dim == 0 {
                return Err(Error::Config("reducer dim must be >= 1".into()));
            }
            let method: ReducerMethod = r.method.parse()?;
            Some(ReducerConfig {
                method,
                dim: r.dim,
                epochs: r.epochs,
                learning_rate: r.learning_rate,
                batch_size: r.batch_size,
            })
        }
    };

    let patch = match &cfg.patch {
        None => None,
        Some(p) => {
            if p.n == 0 {
                return Err(Error::Config("patch n must be >= 1".into()));
            }
            Some((p.mode.parse::<PatchMode>()?, p.n))
        }
    };

    let model = match cfg.model.kind.as_str() {
        "unet" => {
            if cfg.model.k > 1 {
                return Err(Error::Config(
                    "model kind `unet` cannot take k > 1; use kind `ceunet`".into(),
                ));
            }
            if cfg.model.weights != "constant" {
                return Err(Error::Config(
                    "weight schemes apply to `ceunet` only".into(),
                ));
            }
            ModelKind::Unet {
                epochs: cfg.model.epochs.unwrap_or(150),
                learning_rate: cfg.model.learning_rate,
                batch_size: cfg.model.batch_size,
                widths: cfg.model.widths.unwrap_or([64, 128, 256]),
                dropout: cfg.model.dropout,
            }
        }
        "ceunet" => {
            if cfg.model.k == 0 {
                return Err(Error::Config("ceunet needs k >= 1".into()));
            }
            let method: ClusterMethod = cfg.model.cluster.parse()?;
            let scheme: WeightScheme = cfg.model.weights.parse()?;
            ModelKind::Ceunet(EnsembleConfig {
                k: cfg.model.k,
                method,
                weight_scheme: scheme,
                epochs_per_subnet: cfg.model.epochs.unwrap_or(200),
                min_cluster_size: cfg.model.min_cluster_size,
                learning_rate: cfg.model.learning_rate,
                batch_size: cfg.model.batch_size,
                widths: cfg.model.widths.unwrap_or([64, 128, 256]),
                dropout_rate: cfg.model.dropout,
                kmeans_restarts: 10,
            })
        }
        other => {
            return Err(Error::Config(format!(
                "unknown model kind `{other}` (unet | ceunet)"
            )))
        }
    };

    if !(cfg.split.test_fraction > 0.0 && cfg.split.test_fraction < 1.0) {
        return Err(Error::Config(format!(
            "test_fraction {} outside (0,1)",
            cfg.split.test_fraction
        )));
    }
    if cfg.split.trials == 0 {
        return Err(Error::Config("need at least one trial".into()));
    }

    Ok(ResolvedExperiment {
        name: cfg
            .name
            .clone()
            .unwrap_or_else(|| "experiment".to_string()),
        dataset: PathBuf::from(&cfg.dataset),
        seed: cfg.seed,
        reducer,
        patch,
        model,
        split: SplitSpec {
            test_fraction: cfg.split.test_fraction,
            num_trials: cfg.split.trials,
            seed: cfg.seed,
        },
    })
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PhaseSeconds {
    pub reduce: f64,
    pub cluster: f64,
    pub train: f64,
    pub predict: f64,
}

#[derive(Debug, Clone)]
pub struct Report {
    pub config_snapshot: String,
    pub dataset_name: String,
    pub model_desc: String,
    pub ledger: TrialLedger,
    pub phases: PhaseSeconds,
    /// Mean wall seconds per training epoch, warm-up epoch excluded.
    pub per_epoch_seconds: f64,
    pub hardware: String,
    pub failed: Option<(String, String)>,
}

impl Report {
    pub fn is_ok(&self) -> bool {
        self.failed.is_none()
    }

    pub fn mean_accuracy(&self) -> f64 {
        self.ledger.average_accuracy()
    }

    pub fn std_accuracy(&self) -> f64 {
        self.ledger.accuracy_std()
    }

    pub fn render_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("dataset:  {}\n", self.dataset_name));
        out.push_str(&format!("model:    {}\n", self.model_desc));
        out.push_str(&format!("hardware: {}\n", self.hardware));
        match &self.failed {
            Some((stage, cause)) => {
                out.push_str(&format!("status:   FAILED at {stage}: {cause}\n"));
            }
            None => {
                out.push_str("status:   ok\n");
                let accs = self.ledger.per_trial_accuracies();
                out.push_str(&format!(
                    "overall accuracy: {:.4} +/- {:.4} over {} trials\n",
                    self.mean_accuracy(),
                    self.std_accuracy(),
                    accs.len()
                ));
                for (t, a) in accs.iter().enumerate() {
                    out.push_str(&format!("  trial {t}: {a:.4}\n"));
                }
                out.push_str(&format!(
                    "phase seconds: reduce {:.2}, cluster {:.2}, train {:.2}, predict {:.2}\n",
                    self.phases.reduce, self.phases.cluster, self.phases.train, self.phases.predict
                ));
                out.push_str(&format!(
                    "per-epoch seconds (warm-up excluded): {:.4}\n",
                    self.per_epoch_seconds
                ));
            }
        }
        out
    }
}

pub fn hardware_note() -> String {
    let threads = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1);
    format!(
        "{}-{} ({} threads)",
        std::env::consts::OS,
        std::env::consts::ARCH,
        threads
    )
}

// ---------------------------------------------------------------------------
// The trial engine
// ---------------------------------------------------------------------------

pub struct DatasetBundle {
    pub cube: HsiCube,
    pub gt: GroundTruth,
    pub labeled: LabeledPixelSet,
}

/// Load a dataset directory and apply exclusive/majority downsampling when
/// the experiment asks for it (a dataset-level transform, done before any
/// split).
pub fn load_bundle(exp: &ResolvedExperiment) -> Result<DatasetBundle> {
    let (cube, gt) = load_dataset(&exp.dataset)?;
    let (cube, gt) = match exp.patch {
        Some((PatchMode::Exclusive, n)) => {
            let cfg = PatchConfig {
                n,
                mode: PatchMode::Exclusive,
                pad_policy: PadPolicy::Zero,
            };
            downsample_exclusive(&cube, &gt, &cfg)?
        }
        Some((PatchMode::Majority, n)) => {
            let cfg = PatchConfig {
                n,
                mode: PatchMode::Majority,
                pad_policy: PadPolicy::Zero,
            };
            downsample_majority(&cube, &gt, &cfg)?
        }
        _ => (cube, gt),
    };
    let labeled = remove_background(&cube, &gt)?;
    Ok(DatasetBundle { cube, gt, labeled })
}

struct TrialOutput {
    rows: Vec<TrialRow>,
    phases: PhaseSeconds,
    epoch_seconds_sum: f64,
    epoch_seconds_count: usize,
}

fn cpc_n(exp: &ResolvedExperiment) -> Option<usize> {
    match exp.patch {
        Some((PatchMode::Cpc, n)) => Some(n),
        _ => None,
    }
}

/// Split one trial, fit the reducer on its training pixels only, transform,
/// and patch when configured. Returns (train, test, reduce seconds).
pub fn prepare_trial_data(
    exp: &ResolvedExperiment,
    bundle: &DatasetBundle,
    t: usize,
) -> Result<(crate::ensemble::OwnedData, crate::ensemble::OwnedData, f64)> {
    let labeled = &bundle.labeled;
    let (train_idx, test_idx) = split_indices(labeled.len(), &exp.split, t)?;
    let train_px = labeled.subset(&train_idx);
    let test_px = labeled.subset(&test_idx);
    let trial_seed = seeds::derive(exp.seed, "trial", t as u64);

    let started = Instant::now();
    let reducer = match &exp.reducer {
        Some(cfg) => Some(fit_reducer(
            train_px.samples.view(),
            cfg,
            seeds::derive(trial_seed, "reduce", 0),
        )?),
        None => None,
    };
    let reduce_seconds = started.elapsed().as_secs_f64();

    let data = match cpc_n(exp) {
        None => {
            let (train_s, test_s) = match &reducer {
                Some(r) => (
                    train_px.with_samples(r.transform(train_px.samples.view())?)?,
                    test_px.with_samples(r.transform(test_px.samples.view())?)?,
                ),
                None => (train_px.clone(), test_px.clone()),
            };
            (
                crate::ensemble::OwnedData::Pixels(train_s),
                crate::ensemble::OwnedData::Pixels(test_s),
            )
        }
        Some(n) => {
            // transform the whole cube so patches carry reduced context
            let cube = match &reducer {
                Some(r) => {
                    let (h, w, b) = bundle.cube.data.dim();
                    let flat = bundle
                        .cube
                        .data
                        .view()
                        .into_shape_with_order((h * w, b))
                        .expect("standard layout");
                    let reduced = r.transform(flat)?;
                    let d = reduced.shape()[1];
                    HsiCube {
                        data: reduced
                            .into_shape_with_order((h, w, d))
                            .expect("standard layout"),
                        name: bundle.cube.name.clone(),
                    }
                }
                None => bundle.cube.clone(),
            };
            let train_patches = extract_cpc_subset(
                &cube,
                &train_px.coords,
                &train_px.labels,
                labeled.num_classes,
                n,
            )?;
            let test_patches = extract_cpc_subset(
                &cube,
                &test_px.coords,
                &test_px.labels,
                labeled.num_classes,
                n,
            )?;
            (
                crate::ensemble::OwnedData::Patches(train_patches),
                crate::ensemble::OwnedData::Patches(test_patches),
            )
        }
    };
    Ok((data.0, data.1, reduce_seconds))
}

fn run_one_trial(exp: &ResolvedExperiment, bundle: &DatasetBundle, t: usize) -> Result<TrialOutput> {
    let mut phases = PhaseSeconds::default();
    let trial_seed = seeds::derive(exp.seed, "trial", t as u64);
    let (train_data, test_data, reduce_seconds) = prepare_trial_data(exp, bundle, t)?;
    phases.reduce += reduce_seconds;
    let train_idx_len = train_data.as_class_data().len();
    let test_total = test_data.as_class_data().len();
    match &exp.model {
        ModelKind::Unet {
            epochs,
            learning_rate,
            batch_size,
            widths,
            dropout,
        } => {
            let train_ref = train_data.as_class_data();
            let spec = UNetSpec {
                patch_side: train_ref.patch_side(),
                features: train_ref.dim(),
                num_classes: train_ref.num_classes() as usize,
                dropout_rate: *dropout,
                widths: *widths,
                leaky_slope: 0.01,
            };
            if *epochs == 0 {
                // dry run: phases before training only
                return Ok(TrialOutput {
                    rows: vec![TrialRow {
                        trial: t,
                        cluster: 0,
                        train_size: train_idx_len,
                        test_size: test_total,
                        correct: 0,
                        test_total,
                        seconds: 0.0,
                    }],
                    phases,
                    epoch_seconds_sum: 0.0,
                    epoch_seconds_count: 0,
                });
            }
            let mut net = build_unet::<f32>(&spec, trial_seed)?;
            let started = Instant::now();
            net.train(
                train_ref,
                &TrainConfig {
                    epochs: *epochs,
                    learning_rate: *learning_rate,
                    loss_weight: 1.0,
                    batch_size: *batch_size,
                    seed: trial_seed,
                },
            )?;
            phases.train += started.elapsed().as_secs_f64();

            let started = Instant::now();
            let pred = net.predict(test_data.as_class_data())?;
            phases.predict += started.elapsed().as_secs_f64();
            let acc_n = pred
                .labels
                .iter()
                .zip(test_data.as_class_data().labels())
                .filter(|(a, b)| a == b)
                .count();
            let times = &net.epoch_seconds;
            let slice: &[f64] = if times.len() > 1 { &times[1..] } else { times };
            Ok(TrialOutput {
                rows: vec![TrialRow {
                    trial: t,
                    cluster: 0,
                    train_size: train_idx_len,
                    test_size: test_total,
                    correct: acc_n,
                    test_total,
                    seconds: phases.train,
                }],
                phases,
                epoch_seconds_sum: slice.iter().sum(),
                epoch_seconds_count: slice.len(),
            })
        }
        ModelKind::Ceunet(cfg) => {
            if cfg.epochs_per_subnet == 0 {
                // dry run: reduce + cluster phases only
                let started = Instant::now();
                let (_, _, sizes) = crate::ensemble::fit_cluster(
                    &train_data.as_class_data(),
                    cfg.method,
                    cfg.k,
                    seeds::derive(trial_seed, "cluster", 0),
                    cfg.min_cluster_size,
                    cfg.kmeans_restarts,
                )?;
                phases.cluster += started.elapsed().as_secs_f64();
                let rows = sizes
                    .iter()
                    .enumerate()
                    .map(|(j, &sz)| TrialRow {
                        trial: t,
                        cluster: j,
                        train_size: sz,
                        test_size: 0,
                        correct: 0,
                        test_total,
                        seconds: 0.0,
                    })
                    .collect();
                return Ok(TrialOutput {
                    rows,
                    phases,
                    epoch_seconds_sum: 0.0,
                    epoch_seconds_count: 0,
                });
            }
            let model = train_ensemble(train_data.as_class_data(), cfg, trial_seed)?;
            phases.cluster += model.cluster_seconds;
            phases.train += model.train_seconds;
            let started = Instant::now();
            let pred = predict_ensemble(&model, test_data.as_class_data())?;
            phases.predict += started.elapsed().as_secs_f64();

            let mut epoch_sum = 0.0;
            let mut epoch_count = 0usize;
            for net in &model.subnets {
                let times = &net.epoch_seconds;
                let slice: &[f64] = if times.len() > 1 { &times[1..] } else { times };
                epoch_sum += slice.iter().sum::<f64>();
                epoch_count += slice.len();
            }
            let rows = (0..model.k())
                .map(|j| TrialRow {
                    trial: t,
                    cluster: j,
                    train_size: model.train_sizes[j],
                    test_size: pred.per_cluster[j].test_size,
                    correct: pred.per_cluster[j].correct,
                    test_total,
                    seconds: model.subnet_seconds[j],
                })
                .collect();
            Ok(TrialOutput {
                rows,
                phases,
                epoch_seconds_sum: epoch_sum,
                epoch_seconds_count: epoch_count,
            })
        }
    }
}

/// Execute the full experiment. Stage errors come back as a failed report,
/// not an `Err`, so sweeps can record and continue.
pub fn run_experiment(cfg: &ExperimentConfig) -> Report {
    let snapshot = cfg.to_toml();
    let hardware = hardware_note();
    let fail = |stage: &str, cause: String, dataset: String, model: String| Report {
        config_snapshot: snapshot.clone(),
        dataset_name: dataset,
        model_desc: model,
        ledger: TrialLedger::default(),
        phases: PhaseSeconds::default(),
        per_epoch_seconds: 0.0,
        hardware: hardware.clone(),
        failed: Some((stage.to_string(), cause)),
    };

    let exp = match resolve(cfg) {
        Ok(e) => e,
        Err(e) => return fail("config", e.to_string(), cfg.dataset.clone(), String::new()),
    };
    let model_desc = exp.model.describe();
    let bundle = match load_bundle(&exp) {
        Ok(b) => b,
        Err(e) => {
            return fail(
                "load",
                e.to_string(),
                exp.dataset.display().to_string(),
                model_desc,
            )
        }
    };

    let mut ledger = TrialLedger::default();
    let mut phases = PhaseSeconds::default();
    let mut epoch_sum = 0.0;
    let mut epoch_count = 0usize;
    for t in 0..exp.split.num_trials {
        match run_one_trial(&exp, &bundle, t) {
            Ok(out) => {
                ledger.rows.extend(out.rows);
                phases.reduce += out.phases.reduce;
                phases.cluster += out.phases.cluster;
                phases.train += out.phases.train;
                phases.predict += out.phases.predict;
                epoch_sum += out.epoch_seconds_sum;
                epoch_count += out.epoch_seconds_count;
            }
            Err(e) => {
                return fail(
                    &format!("trial {t}"),
                    e.to_string(),
                    bundle.cube.name.clone(),
                    model_desc,
                )
            }
        }
    }

    Report {
        config_snapshot: snapshot,
        dataset_name: bundle.cube.name.clone(),
        model_desc,
        ledger,
        phases,
        per_epoch_seconds: if epoch_count == 0 {
            0.0
        } else {
            epoch_sum / epoch_count as f64
        },
        hardware,
        failed: None,
    }
}

// ---------------------------------------------------------------------------
// Studies
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct GridCell {
    pub method: ClusterMethod,
    pub k: usize,
    pub outcome: std::result::Result<(f64, f64), String>,
}

/// Sweep (method, k) over the grid; infeasible cells are recorded, never
/// abort the sweep. All cells share split membership.
pub fn grid_cluster_tuning(
    base: &ExperimentConfig,
    methods: &[ClusterMethod],
    k_range: std::ops::RangeInclusive<usize>,
) -> Vec<GridCell> {
    let mut cells = Vec::new();
    for &method in methods {
        for k in k_range.clone() {
            let mut cfg = base.clone();
            cfg.model.kind = "ceunet".into();
            cfg.model.k = k;
            cfg.model.cluster = method.to_string();
            let report = run_experiment(&cfg);
            let outcome = match report.failed {
                None => Ok((report.mean_accuracy(), report.std_accuracy())),
                Some((stage, cause)) => Err(format!("{stage}: {cause}")),
            };
            cells.push(GridCell { method, k, outcome });
        }
    }
    cells
}

/// Best feasible cell by mean accuracy.
pub fn best_cell(cells: &[GridCell]) -> Option<&GridCell> {
    cells
        .iter()
        .filter(|c| c.outcome.is_ok())
        .max_by(|a, b| {
            let am = a.outcome.as_ref().map(|v| v.0).unwrap_or(f64::NEG_INFINITY);
            let bm = b.outcome.as_ref().map(|v| v.0).unwrap_or(f64::NEG_INFINITY);
            am.partial_cmp(&bm).expect("finite accuracies")
        })
}

/// One mean accuracy per weight scheme, identical splits across schemes.
pub fn weight_study(
    base: &ExperimentConfig,
    schemes: &[WeightScheme],
) -> Vec<(WeightScheme, Report)> {
    schemes
        .iter()
        .map(|&scheme| {
            let mut cfg = base.clone();
            cfg.model.kind = "ceunet".into();
            cfg.model.weights = scheme.to_string();
            (scheme, run_experiment(&cfg))
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct TimingRow {
    pub model: String,
    pub patched: bool,
    pub per_epoch_seconds: f64,
    pub train_seconds: f64,
    pub reduce_seconds: f64,
    pub cluster_seconds: f64,
}

/// Train-time comparison: {unet, ceunet} x {no patching, CPC n}. Reduction
/// stays as configured in `base`; clustering overhead is reported separately.
pub fn timing_comparison(base: &ExperimentConfig, patch_n: usize) -> Vec<TimingRow> {
    let mut rows = Vec::new();
    for kind in ["unet", "ceunet"] {
        for patched in [false, true] {
            let mut cfg = base.clone();
            cfg.model.kind = kind.into();
            if kind == "unet" {
                cfg.model.k = 1;
                cfg.model.weights = "constant".into();
            }
            cfg.patch = patched.then(|| PatchSection {
                mode: "cpc".into(),
                n: patch_n,
            });
            let report = run_experiment(&cfg);
            rows.push(TimingRow {
                model: kind.to_string(),
                patched,
                per_epoch_seconds: report.per_epoch_seconds,
                train_seconds: report.phases.train,
                reduce_seconds: report.phases.reduce,
                cluster_seconds: report.phases.cluster,
            });
        }
    }
    rows
}

// ---------------------------------------------------------------------------
// Emission
// ---------------------------------------------------------------------------

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent.display().to_string(), e))?;
        }
    }
    fs::write(path, contents).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Persist one report: report.txt, ledger.csv, config.toml.
pub fn write_report_dir(dir: impl AsRef<Path>, report: &Report) -> Result<()> {
    let dir = dir.as_ref();
    write_file(&dir.join("report.txt"), &report.render_text())?;
    write_file(&dir.join("ledger.csv"), &report.ledger.to_csv())?;
    write_file(&dir.join("config.toml"), &report.config_snapshot)
}

/// Reload the machine-readable halves of a persisted report.
pub fn load_report_dir(dir: impl AsRef<Path>) -> Result<(ExperimentConfig, TrialLedger)> {
    let dir = dir.as_ref();
    let cfg = ExperimentConfig::from_file(dir.join("config.toml"))?;
    let csv_path = dir.join("ledger.csv");
    let text =
        fs::read_to_string(&csv_path).map_err(|e| Error::io(csv_path.display().to_string(), e))?;
    Ok((cfg, TrialLedger::from_csv(&text)?))
}

/// Summary table over several reports (one line per report), plus per-report
/// directories with their ledgers. Empty input writes nothing.
pub fn emit_outputs(reports: &[Report], out: impl AsRef<Path>) -> Result<String> {
    if reports.is_empty() {
        return Ok("no reports to emit; nothing written".into());
    }
    let out = out.as_ref();
    let mut table = String::new();
    table.push_str(&format!(
        "{:<24} {:<28} {:>10} {:>8}  {}\n",
        "dataset", "model", "mean-acc", "std", "status"
    ));
    for (i, report) in reports.iter().enumerate() {
        let status = match &report.failed {
            None => "ok".to_string(),
            Some((stage, _)) => format!("FAILED ({stage})"),
        };
        if report.is_ok() {
            table.push_str(&format!(
                "{:<24} {:<28} {:>10.4} {:>8.4}  {}\n",
                report.dataset_name,
                report.model_desc,
                report.mean_accuracy(),
                report.std_accuracy(),
                status
            ));
        } else {
            table.push_str(&format!(
                "{:<24} {:<28} {:>10} {:>8}  {}\n",
                report.dataset_name, report.model_desc, "-", "-", status
            ));
        }
        write_report_dir(out.join(format!("run_{i:02}")), report)?;
    }
    write_file(&out.join("report.txt"), &table)?;
    Ok(format!("wrote {} report(s) under {}", reports.len(), out.display()))
}

pub fn write_grid_series(cells: &[GridCell], out: impl AsRef<Path>) -> Result<()> {
    let out = out.as_ref();
    for method in [ClusterMethod::KMeans, ClusterMethod::Gmm] {
        let rows: Vec<&GridCell> = cells.iter().filter(|c| c.method == method).collect();
        if rows.is_empty() {
            continue;
        }
        let mut text = String::from("k\tmean\tstd\tstatus\n");
        for cell in rows {
            match &cell.outcome {
                Ok((mean, std)) => {
                    text.push_str(&format!("{}\t{mean}\t{std}\tok\n", cell.k));
                }
                Err(cause) => {
                    text.push_str(&format!("{}\tnan\tnan\t{}\n", cell.k, cause.replace('\t', " ")));
                }
            }
        }
        write_file(&out.join(format!("series/grid_{method}.tsv")), &text)?;
    }
    Ok(())
}

pub fn write_weight_series(results: &[(WeightScheme, Report)], out: impl AsRef<Path>) -> Result<()> {
    let mut text = String::from("scheme\tmean\tstd\tstatus\n");
    for (scheme, report) in results {
        if report.is_ok() {
            text.push_str(&format!(
                "{scheme}\t{}\t{}\tok\n",
                report.mean_accuracy(),
                report.std_accuracy()
            ));
        } else {
            text.push_str(&format!("{scheme}\tnan\tnan\tfailed\n"));
        }
    }
    write_file(&out.as_ref().join("series/weights.tsv"), &text)
}

/// Train one single U-Net on trial 0's training split and hand it back for
/// checkpointing (the `train-unet` subcommand's model artifact).
pub fn train_final_unet(cfg: &ExperimentConfig) -> Result<UNet<f32>> {
    let exp = resolve(cfg)?;
    let (epochs, learning_rate, batch_size, widths, dropout) = match &exp.model {
        ModelKind::Unet {
            epochs,
            learning_rate,
            batch_size,
            widths,
            dropout,
        } => (*epochs, *learning_rate, *batch_size, *widths, *dropout),
        ModelKind::Ceunet(_) => {
            return Err(Error::Config(
                "train-unet requires model kind `unet`".into(),
            ))
        }
    };
    if epochs == 0 {
        return Err(Error::Config("cannot checkpoint a 0-epoch run".into()));
    }
    let bundle = load_bundle(&exp)?;
    let (train_data, _, _) = prepare_trial_data(&exp, &bundle, 0)?;
    let train_ref = train_data.as_class_data();
    let spec = UNetSpec {
        patch_side: train_ref.patch_side(),
        features: train_ref.dim(),
        num_classes: train_ref.num_classes() as usize,
        dropout_rate: dropout,
        widths,
        leaky_slope: 0.01,
    };
    let trial_seed = seeds::derive(exp.seed, "trial", 0);
    let mut net = build_unet::<f32>(&spec, trial_seed)?;
    net.train(
        train_ref,
        &TrainConfig {
            epochs,
            learning_rate,
            loss_weight: 1.0,
            batch_size,
            seed: trial_seed,
        },
    )?;
    Ok(net)
}

pub fn write_timing_series(rows: &[TimingRow], out: impl AsRef<Path>) -> Result<()> {
    let mut text = String::from("model\tpatched\tper_epoch_s\ttrain_s\treduce_s\tcluster_s\n");
    for r in rows {
        text.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\n",
            r.model, r.patched, r.per_epoch_seconds, r.train_seconds, r.reduce_seconds, r.cluster_seconds
        ));
    }
    write_file(&out.as_ref().join("series/timing.tsv"), &text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{self, SynthConfig};

    fn write_synth_dataset(dir: &Path, seed: u64) -> std::path::PathBuf {
        let cfg = SynthConfig {
            height: 18,
            width: 18,
            bands: 10,
            num_classes: 4,
            spectral_groups: 2,
            noise: 0.01,
            labeled_fraction: 0.9,
            seed,
        };
        let (cube, gt) = synth::generate(&cfg);
        let path = dir.join("ds");
        crate::hsi::save_dataset(&path, &cube, &gt, false).unwrap();
        path
    }

    fn tiny_config(dataset: &Path, kind: &str, k: usize) -> ExperimentConfig {
        ExperimentConfig {
            name: Some("tiny".into()),
            dataset: dataset.display().to_string(),
            seed: 9,
            reducer: Some(ReducerSection {
                method: "pca".into(),
                dim: 4,
                epochs: None,
                learning_rate: 1e-4,
                batch_size: 64,
            }),
            patch: None,
            model: ModelSection {
                kind: kind.into(),
                k,
                cluster: "kmeans".into(),
                weights: "constant".into(),
                epochs: Some(4),
                learning_rate: 1e-3,
                batch_size: Some(32),
                min_cluster_size: 2,
                widths: Some([6, 8, 10]),
                dropout: 0.2,
            },
            split: SplitSection {
                test_fraction: 0.25,
                trials: 2,
            },
        }
    }

    #[test]
    fn config_round_trips_through_toml() {
        let dir = tempfile::tempdir().unwrap();
        let ds = write_synth_dataset(dir.path(), 1);
        let cfg = tiny_config(&ds, "ceunet", 2);
        let text = cfg.to_toml();
        let back = ExperimentConfig::from_toml(&text).unwrap();
        assert_eq!(back.dataset, cfg.dataset);
        assert_eq!(back.model.k, 2);
        assert_eq!(back.split.trials, 2);
    }

    #[test]
    fn resolve_rejects_invalid_combinations() {
        let dir = tempfile::tempdir().unwrap();
        let ds = write_synth_dataset(dir.path(), 2);
        let mut cfg = tiny_config(&ds, "unet", 1);
        cfg.model.k = 3;
        assert!(matches!(resolve(&cfg), Err(Error::Config(_))));

        let mut cfg = tiny_config(&ds, "unet", 1);
        cfg.model.weights = "random".into();
        assert!(matches!(resolve(&cfg), Err(Error::Config(_))));

        let mut cfg = tiny_config(&ds, "ceunet", 2);
        cfg.split.test_fraction = 1.5;
        assert!(matches!(resolve(&cfg), Err(Error::Config(_))));

        let mut cfg = tiny_config(&ds, "ceunet", 2);
        cfg.patch = Some(PatchSection {
            mode: "sideways".into(),
            n: 3,
        });
        assert!(matches!(resolve(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn run_experiment_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let ds = write_synth_dataset(dir.path(), 3);
        let cfg = tiny_config(&ds, "ceunet", 2);
        let a = run_experiment(&cfg);
        let b = run_experiment(&cfg);
        assert!(a.is_ok(), "{:?}", a.failed);
        assert_eq!(
            a.ledger.per_trial_accuracies(),
            b.ledger.per_trial_accuracies()
        );
        assert_eq!(a.mean_accuracy(), b.mean_accuracy());
    }

    #[test]
    fn failed_stage_is_reported_not_panicked() {
        let cfg = ExperimentConfig {
            name: None,
            dataset: "/nonexistent/path".into(),
            seed: 0,
            reducer: None,
            patch: None,
            model: ModelSection {
                kind: "unet".into(),
                k: 1,
                cluster: "kmeans".into(),
                weights: "constant".into(),
                epochs: Some(1),
                learning_rate: 1e-3,
                batch_size: None,
                min_cluster_size: 2,
                widths: Some([4, 6, 8]),
                dropout: 0.2,
            },
            split: SplitSection::default(),
        };
        let report = run_experiment(&cfg);
        let (stage, _) = report.failed.expect("must fail");
        assert_eq!(stage, "load");
    }

    #[test]
    fn cpc_trials_work_and_slow_down_epochs() {
        let dir = tempfile::tempdir().unwrap();
        let ds = write_synth_dataset(dir.path(), 4);
        let mut flat = tiny_config(&ds, "unet", 1);
        flat.split.trials = 1;
        let mut patched = flat.clone();
        patched.patch = Some(PatchSection {
            mode: "cpc".into(),
            n: 5,
        });
        let a = run_experiment(&flat);
        let b = run_experiment(&patched);
        assert!(a.is_ok(), "{:?}", a.failed);
        assert!(b.is_ok(), "{:?}", b.failed);
        assert!(b.per_epoch_seconds > a.per_epoch_seconds);
    }

    #[test]
    fn downsample_modes_run_end_to_end() {
        let dir = tempfile::tempdir().unwrap();
        let ds = write_synth_dataset(dir.path(), 5);
        for mode in ["majority", "exclusive"] {
            let mut cfg = tiny_config(&ds, "unet", 1);
            cfg.split.trials = 1;
            cfg.reducer = None;
            cfg.patch = Some(PatchSection {
                mode: mode.into(),
                n: 2,
            });
            let report = run_experiment(&cfg);
            assert!(report.is_ok(), "{mode}: {:?}", report.failed);
        }
    }

    #[test]
    fn dry_run_times_phases_only() {
        let dir = tempfile::tempdir().unwrap();
        let ds = write_synth_dataset(dir.path(), 6);
        let mut cfg = tiny_config(&ds, "ceunet", 2);
        cfg.model.epochs = Some(0);
        cfg.split.trials = 1;
        let report = run_experiment(&cfg);
        assert!(report.is_ok(), "{:?}", report.failed);
        assert_eq!(report.phases.train, 0.0);
        assert_eq!(report.phases.predict, 0.0);
        assert!(report.phases.cluster > 0.0);
        assert!(report.phases.reduce > 0.0);
    }

    #[test]
    fn grid_records_infeasible_cells_and_finds_best() {
        let dir = tempfile::tempdir().unwrap();
        let ds = write_synth_dataset(dir.path(), 7);
        let mut base = tiny_config(&ds, "ceunet", 2);
        // a large min size makes high k infeasible
        base.model.min_cluster_size = 60;
        let cells = grid_cluster_tuning(&base, &[ClusterMethod::KMeans], 2..=4);
        assert_eq!(cells.len(), 3);
        assert!(
            cells.iter().any(|c| c.outcome.is_err()),
            "expected at least one infeasible cell"
        );
        if cells.iter().any(|c| c.outcome.is_ok()) {
            assert!(best_cell(&cells).is_some());
        }
    }

    #[test]
    fn weight_study_shares_splits_across_arms() {
        let dir = tempfile::tempdir().unwrap();
        let ds = write_synth_dataset(dir.path(), 8);
        let mut base = tiny_config(&ds, "ceunet", 2);
        base.split.trials = 1;
        let results = weight_study(
            &base,
            &[
                WeightScheme::Constant,
                WeightScheme::Abundance,
                WeightScheme::Random,
            ],
        );
        assert_eq!(results.len(), 3);
        // identical split membership: same test totals per trial
        let sizes: Vec<usize> = results
            .iter()
            .map(|(_, r)| r.ledger.rows.iter().map(|row| row.test_size).sum())
            .collect();
        assert!(sizes.windows(2).all(|w| w[0] == w[1]), "{sizes:?}");
    }

    #[test]
    fn emit_and_reload_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = write_synth_dataset(dir.path(), 10);
        let mut cfg = tiny_config(&ds, "ceunet", 2);
        cfg.split.trials = 1;
        let report = run_experiment(&cfg);
        assert!(report.is_ok(), "{:?}", report.failed);
        let out = dir.path().join("out");
        let note = emit_outputs(std::slice::from_ref(&report), &out).unwrap();
        assert!(note.contains("1 report"));
        assert!(out.join("report.txt").is_file());
        let (cfg2, ledger2) = load_report_dir(out.join("run_00")).unwrap();
        assert_eq!(cfg2.dataset, cfg.dataset);
        assert_eq!(ledger2, report.ledger);

        // empty emission: notice, no files
        let empty_out = dir.path().join("empty");
        let note = emit_outputs(&[], &empty_out).unwrap();
        assert!(note.contains("nothing written"));
        assert!(!empty_out.exists());
    }
}
