//! The clustering ensemble: fit an unsupervised clusterer on training
//! spectra, train one U-Net per cluster with a weighted loss, route test
//! pixels through the fitted clusterer, and concatenate the per-cluster
//! predictions back into input order.
//!
//! Sub-nets train concurrently (their cluster data are disjoint and each owns
//! a derived seed, so results do not depend on scheduling).

use ndarray::Array2;
use rand::Rng;
use rayon::prelude::*;
use std::time::Instant;

use crate::cluster::{self, ClusterMethod, ClusterModel, ClusterSpec};
use crate::error::{Error, Result};
use crate::hsi::{random_split, LabeledPixelSet, SplitSpec};
use crate::patching::PatchDataset;
use crate::seeds;
use crate::unet::{build_unet, ClassData, TrainConfig, UNet, UNetSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightScheme {
    Constant,
    Abundance,
    Random,
}

impl std::str::FromStr for WeightScheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(WeightScheme::Constant),
            "abundance" => Ok(WeightScheme::Abundance),
            "random" => Ok(WeightScheme::Random),
            other => Err(Error::Config(format!("unknown weight scheme `{other}`"))),
        }
    }
}

impl std::fmt::Display for WeightScheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            WeightScheme::Constant => write!(f, "constant"),
            WeightScheme::Abundance => write!(f, "abundance"),
            WeightScheme::Random => write!(f, "random"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EnsembleConfig {
    pub k: usize,
    pub method: ClusterMethod,
    pub weight_scheme: WeightScheme,
    pub epochs_per_subnet: usize,
    pub min_cluster_size: usize,
    pub learning_rate: f64,
    pub batch_size: Option<usize>,
    pub widths: [usize; 3],
    pub dropout_rate: f64,
    pub kmeans_restarts: usize,
}

impl EnsembleConfig {
    pub fn new(k: usize, method: ClusterMethod) -> Self {
        EnsembleConfig {
            k,
            method,
            weight_scheme: WeightScheme::Constant,
            epochs_per_subnet: 200,
            min_cluster_size: 50,
            learning_rate: 1e-4,
            batch_size: None,
            widths: [64, 128, 256],
            dropout_rate: 0.2,
            kmeans_restarts: 10,
        }
    }
}

/// Owned training input, pixel or patch flavored.
pub enum OwnedData {
    Pixels(LabeledPixelSet),
    Patches(PatchDataset),
}

impl OwnedData {
    pub fn as_class_data(&self) -> ClassData<'_> {
        match self {
            OwnedData::Pixels(p) => ClassData::Pixels(p),
            OwnedData::Patches(p) => ClassData::Patches(p),
        }
    }
}

fn subset_of(data: &ClassData<'_>, indices: &[usize]) -> OwnedData {
    match data {
        ClassData::Pixels(p) => OwnedData::Pixels(p.subset(indices)),
        ClassData::Patches(p) => OwnedData::Patches(p.subset(indices)),
    }
}

/// Spectra the clusterer sees: raw pixels, or patch centers in patched mode.
fn routing_spectra(data: &ClassData<'_>) -> Array2<f32> {
    match data {
        ClassData::Pixels(p) => p.samples.clone(),
        ClassData::Patches(p) => p.center_spectra(),
    }
}

/// Fit the clusterer on training spectra and reject starved clusters.
/// Returns (model, per-sample assignment, per-cluster sizes).
pub fn fit_cluster(
    train: &ClassData<'_>,
    method: ClusterMethod,
    k: usize,
    seed: u64,
    min_cluster_size: usize,
    restarts: usize,
) -> Result<(ClusterModel, Vec<usize>, Vec<usize>)> {
    let spectra = routing_spectra(train);
    let mut spec = ClusterSpec::new(method, k, seed);
    spec.restarts = restarts;
    let model = cluster::fit(spectra.view(), &spec)?;
    let assignment = model.assign(spectra.view())?;
    let mut sizes = vec![0usize; k];
    for &j in &assignment {
        sizes[j] += 1;
    }
    if let Some((j, &size)) = sizes
        .iter()
        .enumerate()
        .find(|&(_, &s)| s < min_cluster_size)
    {
        return Err(Error::SmallCluster {
            cluster: j,
            size,
            min: min_cluster_size,
            sizes,
        });
    }
    Ok((model, assignment, sizes))
}

/// Ensemble loss weights. Constant: 1/k each; abundance: cluster share of the
/// training data; random: seeded positive draws normalized to sum 1.
pub fn make_weights(scheme: WeightScheme, sizes: &[usize], seed: u64) -> Result<Vec<f64>> {
    let k = sizes.len();
    if k == 0 {
        return Err(Error::Weight("no clusters".into()));
    }
    if let Some(j) = sizes.iter().position(|&s| s == 0) {
        return Err(Error::Weight(format!("cluster {j} has zero size")));
    }
    let omega = match scheme {
        WeightScheme::Constant => vec![1.0 / k as f64; k],
        WeightScheme::Abundance => {
            let total: usize = sizes.iter().sum();
            sizes.iter().map(|&s| s as f64 / total as f64).collect()
        }
        WeightScheme::Random => {
            let mut rng = seeds::rng(seed);
            let draws: Vec<f64> = (0..k).map(|_| rng.random::<f64>().max(1e-9)).collect();
            let total: f64 = draws.iter().sum();
            draws.into_iter().map(|w| w / total).collect()
        }
    };
    Ok(omega)
}

/// The trained ensemble.
pub struct EnsembleModel {
    pub cluster: ClusterModel,
    pub subnets: Vec<UNet<f32>>,
    pub omega: Vec<f64>,
    pub train_sizes: Vec<usize>,
    /// Wall time of the clustering fit.
    pub cluster_seconds: f64,
    /// Wall time of the (parallel) training section.
    pub train_seconds: f64,
    /// Per-subnet training wall time.
    pub subnet_seconds: Vec<f64>,
}

impl EnsembleModel {
    pub fn k(&self) -> usize {
        self.subnets.len()
    }

    /// Mean per-epoch seconds across sub-nets, first (warm-up) epoch excluded
    /// when more than one epoch ran.
    pub fn per_epoch_seconds(&self) -> f64 {
        let mut total = 0.0;
        let mut count = 0usize;
        for net in &self.subnets {
            let times = &net.epoch_seconds;
            let slice: &[f64] = if times.len() > 1 { &times[1..] } else { times };
            total += slice.iter().sum::<f64>();
            count += slice.len();
        }
        if count == 0 {
            0.0
        } else {
            total / count as f64
        }
    }
}

/// Cluster the training data, then train one sub-net per cluster with its
/// loss scaled by the ensemble weight.
pub fn train_ensemble(
    train: ClassData<'_>,
    cfg: &EnsembleConfig,
    seed: u64,
) -> Result<EnsembleModel> {
    if train.is_empty() {
        return Err(Error::EmptyDataset("no training samples".into()));
    }
    let clustering_started = Instant::now();
    let (cluster_model, assignment, sizes) = fit_cluster(
        &train,
        cfg.method,
        cfg.k,
        seeds::derive(seed, "cluster", 0),
        cfg.min_cluster_size,
        cfg.kmeans_restarts,
    )?;
    let cluster_seconds = clustering_started.elapsed().as_secs_f64();
    let omega = make_weights(cfg.weight_scheme, &sizes, seeds::derive(seed, "weights", 0))?;

    let mut members: Vec<Vec<usize>> = vec![Vec::new(); cfg.k];
    for (i, &j) in assignment.iter().enumerate() {
        members[j].push(i);
    }

    let spec = UNetSpec {
        patch_side: train.patch_side(),
        features: train.dim(),
        num_classes: train.num_classes() as usize,
        dropout_rate: cfg.dropout_rate,
        widths: cfg.widths,
        leaky_slope: 0.01,
    };

    let train_started = Instant::now();
    let results: Vec<Result<(UNet<f32>, f64)>> = members
        .par_iter()
        .enumerate()
        .map(|(j, indices)| {
            let sub = subset_of(&train, indices);
            let sub_seed = seeds::subnet_seed(seed, j);
            let mut net = build_unet::<f32>(&spec, sub_seed)?;
            let sub_cfg = TrainConfig {
                epochs: cfg.epochs_per_subnet,
                learning_rate: cfg.learning_rate,
                loss_weight: omega[j],
                batch_size: cfg.batch_size,
                seed: sub_seed,
            };
            let started = Instant::now();
            net.train(sub.as_class_data(), &sub_cfg)
                .map_err(|e| match e {
                    Error::Divergence(msg) => Error::Divergence(format!("sub-net {j}: {msg}")),
                    other => other,
                })?;
            Ok((net, started.elapsed().as_secs_f64()))
        })
        .collect();
    let train_seconds = train_started.elapsed().as_secs_f64();

    let mut subnets = Vec::with_capacity(cfg.k);
    let mut subnet_seconds = Vec::with_capacity(cfg.k);
    for r in results {
        let (net, secs) = r?;
        subnets.push(net);
        subnet_seconds.push(secs);
    }

    Ok(EnsembleModel {
        cluster: cluster_model,
        subnets,
        omega,
        train_sizes: sizes,
        cluster_seconds,
        train_seconds,
        subnet_seconds,
    })
}

/// Per-cluster outcome of one evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClusterOutcome {
    pub test_size: usize,
    pub correct: usize,
}

/// Predictions re-assembled into input order plus per-cluster counts.
pub struct EnsemblePrediction {
    pub labels: Vec<u16>,
    pub per_cluster: Vec<ClusterOutcome>,
    pub test_total: usize,
}

impl EnsemblePrediction {
    /// AC_tj for cluster j: correct_j over the whole test size, so the sum
    /// over clusters is exactly the overall accuracy.
    pub fn ac_tj(&self, j: usize) -> f64 {
        self.per_cluster[j].correct as f64 / self.test_total as f64
    }

    pub fn total_correct(&self) -> usize {
        self.per_cluster.iter().map(|o| o.correct).sum()
    }

    pub fn overall_accuracy(&self) -> f64 {
        self.total_correct() as f64 / self.test_total as f64
    }
}

/// Route each test sample to its cluster's sub-net; an empty test cluster is
/// legal and contributes nothing.
pub fn predict_ensemble(model: &EnsembleModel, test: ClassData<'_>) -> Result<EnsemblePrediction> {
    if test.is_empty() {
        return Err(Error::Metric("empty test set".into()));
    }
    let spectra = routing_spectra(&test);
    let assignment = model.cluster.assign(spectra.view())?;
    let k = model.k();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &j) in assignment.iter().enumerate() {
        members[j].push(i);
    }

    let truth = test.labels();
    let mut labels = vec![0u16; test.len()];
    let mut per_cluster = Vec::with_capacity(k);
    for (j, indices) in members.iter().enumerate() {
        if indices.is_empty() {
            per_cluster.push(ClusterOutcome {
                test_size: 0,
                correct: 0,
            });
            continue;
        }
        let sub = subset_of(&test, indices);
        let pred = model.subnets[j].predict(sub.as_class_data())?;
        let mut correct = 0usize;
        for (pos, &orig) in indices.iter().enumerate() {
            labels[orig] = pred.labels[pos];
            if pred.labels[pos] == truth[orig] {
                correct += 1;
            }
        }
        per_cluster.push(ClusterOutcome {
            test_size: indices.len(),
            correct,
        });
    }

    Ok(EnsemblePrediction {
        labels,
        per_cluster,
        test_total: test.len(),
    })
}

// ---------------------------------------------------------------------------
// Trial ledger
// ---------------------------------------------------------------------------

/// One row per trial x cluster; counts stay integral so accuracy identities
/// hold exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRow {
    pub trial: usize,
    pub cluster: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub correct: usize,
    pub test_total: usize,
    pub seconds: f64,
}

impl TrialRow {
    pub fn ac_tj(&self) -> f64 {
        self.correct as f64 / self.test_total as f64
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrialLedger {
    pub rows: Vec<TrialRow>,
}

impl TrialLedger {
    pub fn trials(&self) -> Vec<usize> {
        let mut ts: Vec<usize> = self.rows.iter().map(|r| r.trial).collect();
        ts.sort_unstable();
        ts.dedup();
        ts
    }

    /// Overall accuracy of one trial, computed from summed integer counts.
    pub fn trial_accuracy(&self, trial: usize) -> Option<f64> {
        let mut correct = 0usize;
        let mut total = None;
        for row in self.rows.iter().filter(|r| r.trial == trial) {
            correct += row.correct;
            total = Some(row.test_total);
        }
        total.map(|t| correct as f64 / t as f64)
    }

    pub fn per_trial_accuracies(&self) -> Vec<f64> {
        self.trials()
            .into_iter()
            .filter_map(|t| self.trial_accuracy(t))
            .collect()
    }

    /// Mean of the per-trial overall accuracies (the reported AC).
    pub fn average_accuracy(&self) -> f64 {
        let accs = self.per_trial_accuracies();
        if accs.is_empty() {
            return f64::NAN;
        }
        accs.iter().sum::<f64>() / accs.len() as f64
    }

    pub fn accuracy_std(&self) -> f64 {
        let accs = self.per_trial_accuracies();
        if accs.len() < 2 {
            return 0.0;
        }
        let mean = accs.iter().sum::<f64>() / accs.len() as f64;
        (accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (accs.len() - 1) as f64).sqrt()
    }

    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("trial,cluster,train_size,test_size,correct,test_total,ac_tj,seconds\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.trial,
                r.cluster,
                r.train_size,
                r.test_size,
                r.correct,
                r.test_total,
                r.ac_tj(),
                r.seconds
            ));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<TrialLedger> {
        let mut rows = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if i == 0 || line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 8 {
                return Err(Error::Format {
                    path: "<ledger>".into(),
                    msg: format!("line {}: expected 8 fields, got {}", i + 1, fields.len()),
                });
            }
            let parse_usize = |s: &str, what: &str| -> Result<usize> {
                s.trim().parse().map_err(|_| Error::Format {
                    path: "<ledger>".into(),
                    msg: format!("line {}: bad {what} `{s}`", i + 1),
                })
            };
            let seconds: f64 = fields[7].trim().parse().map_err(|_| Error::Format {
                path: "<ledger>".into(),
                msg: format!("line {}: bad seconds", i + 1),
            })?;
            rows.push(TrialRow {
                trial: parse_usize(fields[0], "trial")?,
                cluster: parse_usize(fields[1], "cluster")?,
                train_size: parse_usize(fields[2], "train_size")?,
                test_size: parse_usize(fields[3], "test_size")?,
                correct: parse_usize(fields[4], "correct")?,
                test_total: parse_usize(fields[5], "test_total")?,
                seconds,
            });
        }
        Ok(TrialLedger { rows })
    }
}

/// Algorithm core: T random splits, each clustered, trained and evaluated.
pub fn run_trials(
    ds: &LabeledPixelSet,
    cfg: &EnsembleConfig,
    split: &SplitSpec,
) -> Result<TrialLedger> {
    if split.num_trials == 0 {
        return Err(Error::Config("need at least one trial".into()));
    }
    let mut ledger = TrialLedger::default();
    for t in 0..split.num_trials {
        let (train, test) = random_split(ds, split, t).map_err(|e| e.in_trial(t))?;
        let trial_seed = seeds::derive(split.seed, "trial", t as u64);
        let model = train_ensemble(ClassData::Pixels(&train), cfg, trial_seed)
            .map_err(|e| e.in_trial(t))?;
        let pred =
            predict_ensemble(&model, ClassData::Pixels(&test)).map_err(|e| e.in_trial(t))?;
        for j in 0..model.k() {
            ledger.rows.push(TrialRow {
                trial: t,
                cluster: j,
                train_size: model.train_sizes[j],
                test_size: pred.per_cluster[j].test_size,
                correct: pred.per_cluster[j].correct,
                test_total: pred.test_total,
                seconds: model.subnet_seconds[j],
            });
        }
    }
    Ok(ledger)
}
