//! Command-line harness for the clustering-ensemble U-Net pipeline.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use ceunet::cluster::ClusterMethod;
use ceunet::ensemble::WeightScheme;
use ceunet::harness::{
    best_cell, emit_outputs, grid_cluster_tuning, load_report_dir, run_experiment,
    timing_comparison, train_final_unet, weight_study, write_grid_series, write_report_dir,
    write_timing_series, write_weight_series, ExperimentConfig, ModelSection, PatchSection,
    ReducerSection, Report, SplitSection,
};
use ceunet::hsi;
use ceunet::patching::{
    downsample_exclusive, downsample_majority, extract_cpc, save_patches, PatchConfig, PatchMode,
    PadPolicy,
};
use ceunet::reduce::{cae_fit, pca_fit, CaeConfig, CaeVariant, ReducerMethod};
use ceunet::synth::{self, SynthConfig};

#[derive(Parser)]
#[command(
    name = "ceunet",
    version,
    about = "Hyperspectral pixel classification with a clustering ensemble of U-Nets"
)]
struct Cli {
    /// Base seed for splits, clustering and training.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Directory for reports, ledgers and series files.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Experiment config (TOML); flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print dataset metadata (bands, classes, pixel counts, labeled fraction).
    Inspect { dir: PathBuf },

    /// Generate a synthetic labeled scene in the dataset directory format.
    Synth {
        #[arg(long, default_value_t = 64)]
        height: usize,
        #[arg(long, default_value_t = 64)]
        width: usize,
        #[arg(long, default_value_t = 32)]
        bands: usize,
        #[arg(long, default_value_t = 8)]
        classes: u16,
        #[arg(long, default_value_t = 2)]
        groups: usize,
        #[arg(long, default_value_t = 0.01)]
        noise: f64,
        #[arg(long, default_value_t = 0.6)]
        labeled: f64,
    },

    /// Fit a reducer on a dataset's labeled pixels and write the reduced
    /// dataset (plus the model file).
    Reduce {
        dir: PathBuf,
        #[arg(long)]
        method: String,
        #[arg(long)]
        dim: usize,
        /// CAE epochs override.
        #[arg(long)]
        epochs: Option<usize>,
    },

    /// Apply a patching strategy and persist the result.
    Patch {
        dir: PathBuf,
        #[arg(long)]
        mode: String,
        #[arg(long)]
        n: usize,
    },

    /// Train and evaluate a single U-Net from a config file; saves a
    /// checkpoint of the trial-0 model.
    TrainUnet,

    /// Run the clustering-ensemble experiment.
    Ceunet {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        cluster: Option<String>,
        #[arg(long)]
        weights: Option<String>,
        /// Center-pixel patching with this side length.
        #[arg(long)]
        patch_n: Option<usize>,
        /// Epochs per sub-net.
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        trials: Option<usize>,
        /// PCA dimension (default 30); --raw skips reduction.
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long, default_value_t = false)]
        raw: bool,
    },

    /// Sweep cluster method and count, reporting the grid and its best cell.
    Grid {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, default_value_t = 2)]
        k_min: usize,
        #[arg(long, default_value_t = 6)]
        k_max: usize,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        dim: Option<usize>,
    },

    /// Compare constant / abundance / random ensemble loss weights on
    /// identical splits.
    Weights {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        cluster: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        dim: Option<usize>,
    },

    /// Patched vs unpatched training-time comparison for both models.
    Timing {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        patch_n: usize,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        dim: Option<usize>,
    },

    /// Regenerate report.txt from a persisted ledger directory.
    Report {
        #[arg(long)]
        from: PathBuf,
    },
}

fn main() -> Result<()> {
    // die quietly when a downstream pipe (head, less) closes stdout
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => Ok(()),
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::exit(1);
        }
    }
}

/// Build the experiment config: file if given, defaults otherwise, then
/// apply CLI overrides.
fn base_config(
    config: &Option<PathBuf>,
    dataset: Option<&Path>,
    seed: Option<u64>,
) -> Result<ExperimentConfig> {
    let mut cfg = match config {
        Some(path) => ExperimentConfig::from_file(path)
            .with_context(|| format!("reading config {}", path.display()))?,
        None => {
            let dataset = dataset.context("--dataset (or --config) is required")?;
            ExperimentConfig {
                name: None,
                dataset: dataset.display().to_string(),
                seed: 0,
                reducer: Some(ReducerSection {
                    method: "pca".into(),
                    dim: 30,
                    epochs: None,
                    learning_rate: 1e-4,
                    batch_size: 128,
                }),
                patch: None,
                model: ModelSection {
                    kind: "ceunet".into(),
                    k: 2,
                    cluster: "kmeans".into(),
                    weights: "constant".into(),
                    epochs: None,
                    learning_rate: 1e-4,
                    batch_size: None,
                    min_cluster_size: 50,
                    widths: None,
                    dropout: 0.2,
                },
                split: SplitSection::default(),
            }
        }
    };
    if let Some(dataset) = dataset {
        cfg.dataset = dataset.display().to_string();
    }
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn clamp_reducer_dim(cfg: &mut ExperimentConfig) -> Result<()> {
    // keep the default dim valid on narrow datasets
    if let Some(reducer) = &mut cfg.reducer {
        let info = hsi::inspect(&cfg.dataset)
            .with_context(|| format!("inspecting {}", cfg.dataset))?;
        if reducer.dim > info.bands {
            reducer.dim = info.bands;
        }
    }
    Ok(())
}

fn print_and_write(report: &Report, out: &Option<PathBuf>) -> Result<()> {
    print!("{}", report.render_text());
    if let Some(out) = out {
        write_report_dir(out, report)?;
        println!("report written to {}", out.display());
    }
    if let Some((stage, cause)) = &report.failed {
        bail!("experiment failed at {stage}: {cause}");
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Inspect { dir } => {
            let info = hsi::inspect(dir)?;
            println!("name:             {}", info.name);
            println!("grid:             {} x {}", info.height, info.width);
            println!("spectral bands:   {}", info.bands);
            println!("classes:          {}", info.num_classes);
            println!("pixels:           {}", info.pixels);
            println!("labeled pixels:   {}", info.labeled_pixels);
            println!(
                "labeled fraction: {:.2}%",
                100.0 * info.labeled_fraction()
            );
        }

        Command::Synth {
            height,
            width,
            bands,
            classes,
            groups,
            noise,
            labeled,
        } => {
            let out = cli.out.clone().context("--out <dir> is required")?;
            let cfg = SynthConfig {
                height: *height,
                width: *width,
                bands: *bands,
                num_classes: *classes,
                spectral_groups: *groups,
                noise: *noise,
                labeled_fraction: *labeled,
                seed: cli.seed.unwrap_or(0),
            };
            let (cube, gt) = synth::generate(&cfg);
            hsi::save_dataset(&out, &cube, &gt, false)?;
            println!(
                "wrote synthetic scene {} ({}x{}x{}, {} classes) to {}",
                cube.name,
                height,
                width,
                bands,
                classes,
                out.display()
            );
        }

        Command::Reduce { dir, method, dim, epochs } => {
            let out = cli.out.clone().context("--out <dir> is required")?;
            let method: ReducerMethod = method.parse::<ReducerMethod>()?;
            let (cube, gt) = hsi::load_dataset(dir)?;
            let labeled = hsi::remove_background(&cube, &gt)?;
            let seed = cli.seed.unwrap_or(0);

            let (h, w, b) = cube.data.dim();
            if *dim == 0 || *dim > b {
                bail!("dim must be in 1..={b}");
            }
            let flat = cube
                .data
                .view()
                .into_shape_with_order((h * w, b))
                .expect("standard layout");

            let reduced = match method {
                ReducerMethod::Pca => {
                    let model = pca_fit(labeled.samples.view(), *dim)?;
                    model.save(out.join("model.pca"))?;
                    model.transform(flat)?
                }
                ReducerMethod::Cae2d | ReducerMethod::Cae3d => {
                    let variant = if method == ReducerMethod::Cae2d {
                        CaeVariant::Cae2d
                    } else {
                        CaeVariant::Cae3d
                    };
                    let mut cae_cfg = CaeConfig::for_variant(variant, seed);
                    cae_cfg.latent_dim = *dim;
                    if let Some(epochs) = epochs {
                        cae_cfg.epochs = *epochs;
                    }
                    let mut model = cae_fit(labeled.samples.view(), &cae_cfg)?;
                    model.save(out.join("model.cae"))?;
                    model.encode(flat)?
                }
            };
            let reduced_cube = hsi::HsiCube {
                data: reduced
                    .into_shape_with_order((h, w, *dim))
                    .expect("standard layout"),
                name: format!("{}-{}{}", cube.name, method, dim),
            };
            hsi::save_dataset(&out, &reduced_cube, &gt, true)?;
            println!(
                "reduced {} bands -> {} features with {}; dataset written to {}",
                b,
                dim,
                method,
                out.display()
            );
        }

        Command::Patch { dir, mode, n } => {
            let out = cli.out.clone().context("--out <dir> is required")?;
            let mode: PatchMode = mode.parse::<PatchMode>()?;
            let (cube, gt) = hsi::load_dataset(dir)?;
            let cfg = PatchConfig {
                n: *n,
                mode,
                pad_policy: PadPolicy::Zero,
            };
            match mode {
                PatchMode::Cpc => {
                    let ds = extract_cpc(&cube, &gt, &cfg)?;
                    save_patches(&out, &ds, &format!("{}-cpc{}", cube.name, n))?;
                    println!(
                        "wrote {} patches of {}x{}x{} to {}",
                        ds.len(),
                        n,
                        n,
                        ds.dim(),
                        out.display()
                    );
                }
                PatchMode::Exclusive | PatchMode::Majority => {
                    let (cube2, gt2) = if mode == PatchMode::Exclusive {
                        downsample_exclusive(&cube, &gt, &cfg)?
                    } else {
                        downsample_majority(&cube, &gt, &cfg)?
                    };
                    let survivors = gt2.labeled_count();
                    hsi::save_dataset(&out, &cube2, &gt2, true)?;
                    println!(
                        "downsampled to {}x{} blocks ({} labeled) at {}",
                        cube2.height(),
                        cube2.width(),
                        survivors,
                        out.display()
                    );
                }
            }
        }

        Command::TrainUnet => {
            let mut cfg = base_config(&cli.config, None, cli.seed)?;
            cfg.model.kind = "unet".into();
            cfg.model.k = 1;
            cfg.model.weights = "constant".into();
            clamp_reducer_dim(&mut cfg)?;
            let report = run_experiment(&cfg);
            if report.is_ok() {
                if let Some(out) = &cli.out {
                    let net = train_final_unet(&cfg)?;
                    net.save(out.join("model.unet"))?;
                    println!("checkpoint written to {}", out.join("model.unet").display());
                }
            }
            print_and_write(&report, &cli.out)?;
        }

        Command::Ceunet {
            dataset,
            k,
            cluster,
            weights,
            patch_n,
            epochs,
            trials,
            dim,
            raw,
        } => {
            let mut cfg = base_config(&cli.config, dataset.as_deref(), cli.seed)?;
            cfg.model.kind = "ceunet".into();
            if let Some(k) = k {
                cfg.model.k = *k;
            }
            if let Some(cluster) = cluster {
                cfg.model.cluster = cluster.clone();
            }
            if let Some(weights) = weights {
                cfg.model.weights = weights.clone();
            }
            if let Some(epochs) = epochs {
                cfg.model.epochs = Some(*epochs);
            }
            if let Some(trials) = trials {
                cfg.split.trials = *trials;
            }
            if let Some(n) = patch_n {
                cfg.patch = Some(PatchSection {
                    mode: "cpc".into(),
                    n: *n,
                });
            }
            if *raw {
                cfg.reducer = None;
            } else if let Some(dim) = dim {
                if let Some(reducer) = &mut cfg.reducer {
                    reducer.dim = *dim;
                }
            }
            clamp_reducer_dim(&mut cfg)?;
            let report = run_experiment(&cfg);
            print_and_write(&report, &cli.out)?;
        }

        Command::Grid {
            dataset,
            k_min,
            k_max,
            epochs,
            trials,
            dim,
        } => {
            let mut cfg = base_config(&cli.config, dataset.as_deref(), cli.seed)?;
            if let Some(epochs) = epochs {
                cfg.model.epochs = Some(*epochs);
            }
            if let Some(trials) = trials {
                cfg.split.trials = *trials;
            }
            if let Some(dim) = dim {
                if let Some(reducer) = &mut cfg.reducer {
                    reducer.dim = *dim;
                }
            }
            clamp_reducer_dim(&mut cfg)?;
            if *k_min == 0 || k_max < k_min {
                bail!("need 1 <= k_min <= k_max");
            }
            let cells = grid_cluster_tuning(
                &cfg,
                &[ClusterMethod::KMeans, ClusterMethod::Gmm],
                *k_min..=*k_max,
            );
            println!("{:<8} {:<4} {:>10} {:>8}  status", "method", "k", "mean", "std");
            for cell in &cells {
                match &cell.outcome {
                    Ok((mean, std)) => println!(
                        "{:<8} {:<4} {:>10.4} {:>8.4}  ok",
                        cell.method.to_string(),
                        cell.k,
                        mean,
                        std
                    ),
                    Err(cause) => println!(
                        "{:<8} {:<4} {:>10} {:>8}  infeasible: {}",
                        cell.method.to_string(),
                        cell.k,
                        "-",
                        "-",
                        cause
                    ),
                }
            }
            match best_cell(&cells) {
                Some(best) => println!(
                    "best: {} k={} (mean {:.4})",
                    best.method,
                    best.k,
                    best.outcome.as_ref().map(|v| v.0).unwrap_or(f64::NAN)
                ),
                None => println!("best: none (every cell infeasible)"),
            }
            if let Some(out) = &cli.out {
                write_grid_series(&cells, out)?;
                println!("series written under {}", out.join("series").display());
            }
        }

        Command::Weights {
            dataset,
            k,
            cluster,
            epochs,
            trials,
            dim,
        } => {
            let mut cfg = base_config(&cli.config, dataset.as_deref(), cli.seed)?;
            if let Some(k) = k {
                cfg.model.k = *k;
            }
            if let Some(cluster) = cluster {
                cfg.model.cluster = cluster.clone();
            }
            if let Some(epochs) = epochs {
                cfg.model.epochs = Some(*epochs);
            }
            if let Some(trials) = trials {
                cfg.split.trials = *trials;
            }
            if let Some(dim) = dim {
                if let Some(reducer) = &mut cfg.reducer {
                    reducer.dim = *dim;
                }
            }
            clamp_reducer_dim(&mut cfg)?;
            let results = weight_study(
                &cfg,
                &[
                    WeightScheme::Constant,
                    WeightScheme::Abundance,
                    WeightScheme::Random,
                ],
            );
            println!("{:<10} {:>10} {:>8}", "scheme", "mean", "std");
            for (scheme, report) in &results {
                if report.is_ok() {
                    println!(
                        "{:<10} {:>10.4} {:>8.4}",
                        scheme.to_string(),
                        report.mean_accuracy(),
                        report.std_accuracy()
                    );
                } else {
                    println!("{:<10} {:>10} {:>8}  failed", scheme.to_string(), "-", "-");
                }
            }
            if let Some(out) = &cli.out {
                write_weight_series(&results, out)?;
                let reports: Vec<Report> = results.iter().map(|(_, r)| r.clone()).collect();
                let note = emit_outputs(&reports, out)?;
                println!("{note}");
            }
        }

        Command::Timing {
            dataset,
            patch_n,
            epochs,
            trials,
            dim,
        } => {
            let mut cfg = base_config(&cli.config, dataset.as_deref(), cli.seed)?;
            if let Some(epochs) = epochs {
                cfg.model.epochs = Some(*epochs);
            }
            if let Some(trials) = trials {
                cfg.split.trials = *trials;
            }
            if let Some(dim) = dim {
                if let Some(reducer) = &mut cfg.reducer {
                    reducer.dim = *dim;
                }
            }
            clamp_reducer_dim(&mut cfg)?;
            let rows = timing_comparison(&cfg, *patch_n);
            println!(
                "{:<8} {:<8} {:>14} {:>12} {:>10} {:>10}",
                "model", "patched", "per-epoch (s)", "train (s)", "reduce", "cluster"
            );
            for r in &rows {
                println!(
                    "{:<8} {:<8} {:>14.4} {:>12.2} {:>10.2} {:>10.2}",
                    r.model, r.patched, r.per_epoch_seconds, r.train_seconds, r.reduce_seconds, r.cluster_seconds
                );
            }
            if let Some(out) = &cli.out {
                write_timing_series(&rows, out)?;
                println!("series written under {}", out.join("series").display());
            }
        }

        Command::Report { from } => {
            let (cfg, ledger) = load_report_dir(from)?;
            println!("dataset: {}", cfg.dataset);
            println!("model:   {} (k={})", cfg.model.kind, cfg.model.k);
            let accs = ledger.per_trial_accuracies();
            println!(
                "overall accuracy: {:.4} +/- {:.4} over {} trials",
                ledger.average_accuracy(),
                ledger.accuracy_std(),
                accs.len()
            );
            for (t, a) in accs.iter().enumerate() {
                println!("  trial {t}: {a:.4}");
            }
            let regenerated = from.join("report.regenerated.txt");
            let mut text = String::new();
            text.push_str(&format!("dataset: {}\n", cfg.dataset));
            text.push_str(&format!(
                "overall accuracy: {:.4} +/- {:.4} over {} trials\n",
                ledger.average_accuracy(),
                ledger.accuracy_std(),
                accs.len()
            ));
            std::fs::write(&regenerated, text)
                .with_context(|| format!("writing {}", regenerated.display()))?;
            println!("regenerated report at {}", regenerated.display());
        }
    }
    Ok(())
}
