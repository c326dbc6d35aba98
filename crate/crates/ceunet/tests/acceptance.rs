//! Acceptance suite. One test per criterion; each prints a PASS/FAIL/SKIP
//! line (run with `--nocapture` to see them all).
//!
//! Criteria that reproduce published sensor-dataset numbers need the real
//! cubes mounted as dataset directories under `$CEUNET_DATA/<name>`
//! (indian_pines, salinas, pavia_university, ksc, botswana). Without that
//! variable they report SKIP and do not fail the suite; every tolerance is
//! still pinned here.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Mutex, OnceLock};

use ndarray::{Array2, Array3, Array4};
use rand::Rng;

use ceunet::cluster::{self, ClusterMethod, ClusterModel, ClusterSpec};
use ceunet::ensemble::{
    make_weights, predict_ensemble, train_ensemble, EnsembleConfig, WeightScheme,
};
use ceunet::harness::{
    run_experiment, ExperimentConfig, ModelSection, PatchSection, ReducerSection, SplitSection,
};
use ceunet::hsi::{GroundTruth, HsiCube, LabeledPixelSet};
use ceunet::patching::{
    downsample_exclusive, downsample_majority, extract_cpc, PatchConfig, PatchMode, PadPolicy,
};
use ceunet::reduce::pca_fit;
use ceunet::seeds;
use ceunet::synth::{self, SynthConfig};
use ceunet::unet::{build_unet, overall_accuracy, ClassData, TrainConfig, UNetSpec};

fn pass(criterion: u32, what: &str) {
    println!("[criterion {criterion:2}] PASS  {what}");
}

fn skip(criterion: u32, what: &str) {
    println!("[criterion {criterion:2}] SKIP  {what}");
}

/// Dataset directory under $CEUNET_DATA, when mounted.
fn real_dataset(name: &str) -> Option<PathBuf> {
    let root = std::env::var_os("CEUNET_DATA")?;
    let dir = PathBuf::from(root).join(name);
    dir.join("header").is_file().then_some(dir)
}

// =============================================================================
// Criterion 1: exact parameter count (< 1 s)
// =============================================================================

#[test]
fn criterion_01_parameter_count() {
    let started = std::time::Instant::now();
    let net = build_unet::<f32>(&UNetSpec::new(30, 9), 0).unwrap();
    assert_eq!(
        net.param_count(),
        1_435_337,
        "trainable parameter count for d=30, m=9, n=1"
    );
    let net10 = build_unet::<f32>(&UNetSpec::new(30, 9).with_patch(10), 0).unwrap();
    assert_eq!(net10.param_count(), 1_435_337, "patched net same count");
    assert!(started.elapsed().as_secs_f64() < 1.0, "must build in < 1 s");
    pass(1, "d=30, m=9 network has exactly 1,435,337 trainable parameters");
}

// =============================================================================
// Criteria 2 + 3: published no-patching accuracies and the ordering claim
// (needs real datasets; paired splits; PCA-30; T=5)
// =============================================================================

struct Table4Row {
    dataset: &'static str,
    k: usize,
    ceunet_expected: f64,
    unet_expected: f64,
}

const TABLE4: &[Table4Row] = &[
    Table4Row { dataset: "indian_pines", k: 2, ceunet_expected: 0.89, unet_expected: 0.8701 },
    Table4Row { dataset: "salinas", k: 3, ceunet_expected: 0.9836, unet_expected: 0.9635 },
    Table4Row { dataset: "pavia_university", k: 2, ceunet_expected: 0.9608, unet_expected: 0.9592 },
    Table4Row { dataset: "ksc", k: 2, ceunet_expected: 0.9501, unet_expected: 0.9485 },
    Table4Row { dataset: "botswana", k: 3, ceunet_expected: 0.9689, unet_expected: 0.9677 },
];

const TABLE4_TOLERANCE: f64 = 0.03;

fn paper_protocol_config(dataset: &std::path::Path, kind: &str, k: usize) -> ExperimentConfig {
    ExperimentConfig {
        name: None,
        dataset: dataset.display().to_string(),
        seed: 20,
        reducer: Some(ReducerSection {
            method: "pca".into(),
            dim: 30,
            epochs: None,
            learning_rate: 1e-4,
            batch_size: 128,
        }),
        patch: None,
        model: ModelSection {
            kind: kind.into(),
            k,
            cluster: "kmeans".into(),
            weights: "constant".into(),
            epochs: None, // 150 unet / 200 per sub-net
            learning_rate: 1e-4,
            batch_size: None, // 256 pixels
            min_cluster_size: 50,
            widths: None,
            dropout: 0.2,
        },
        split: SplitSection {
            test_fraction: 0.25,
            trials: 5,
        },
    }
}

/// (ceunet mean, unet mean) per dataset, computed once and shared between
/// criteria 2 and 3 (identical split seed keeps the comparison paired).
fn table4_results(row: &Table4Row) -> Option<(f64, f64)> {
    static CACHE: OnceLock<Mutex<HashMap<&'static str, (f64, f64)>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(hit) = cache.lock().unwrap().get(row.dataset) {
        return Some(*hit);
    }
    let dir = real_dataset(row.dataset)?;
    let ceu = run_experiment(&paper_protocol_config(&dir, "ceunet", row.k));
    assert!(
        ceu.is_ok(),
        "{}: ceunet run failed: {:?}",
        row.dataset,
        ceu.failed
    );
    let unet = run_experiment(&paper_protocol_config(&dir, "unet", 1));
    assert!(
        unet.is_ok(),
        "{}: unet run failed: {:?}",
        row.dataset,
        unet.failed
    );
    let out = (ceu.mean_accuracy(), unet.mean_accuracy());
    cache.lock().unwrap().insert(row.dataset, out);
    Some(out)
}

#[test]
fn criterion_02_table4_accuracies() {
    let mut ran = 0;
    for row in TABLE4 {
        match table4_results(row) {
            None => skip(
                2,
                &format!("{}: dataset not mounted under $CEUNET_DATA", row.dataset),
            ),
            Some((ceu, unet)) => {
                assert!(
                    (ceu - row.ceunet_expected).abs() <= TABLE4_TOLERANCE,
                    "{}: ceunet {ceu:.4} vs published {:.4} (tol {TABLE4_TOLERANCE})",
                    row.dataset,
                    row.ceunet_expected
                );
                assert!(
                    (unet - row.unet_expected).abs() <= TABLE4_TOLERANCE,
                    "{}: unet {unet:.4} vs published {:.4} (tol {TABLE4_TOLERANCE})",
                    row.dataset,
                    row.unet_expected
                );
                pass(
                    2,
                    &format!(
                        "{}: ceunet {ceu:.4} ~ {:.4}, unet {unet:.4} ~ {:.4} (±{TABLE4_TOLERANCE})",
                        row.dataset, row.ceunet_expected, row.unet_expected
                    ),
                );
                ran += 1;
            }
        }
    }
    if ran == 0 {
        skip(2, "no real datasets mounted; tolerances remain pinned above");
    }
}

#[test]
fn criterion_03_ensemble_beats_single_on_every_dataset() {
    let mut ran = 0;
    for row in TABLE4 {
        match table4_results(row) {
            None => skip(
                3,
                &format!("{}: dataset not mounted under $CEUNET_DATA", row.dataset),
            ),
            Some((ceu, unet)) => {
                assert!(
                    ceu >= unet,
                    "{}: ceunet {ceu:.4} < unet {unet:.4} under paired splits",
                    row.dataset
                );
                pass(
                    3,
                    &format!("{}: ceunet {ceu:.4} >= unet {unet:.4}", row.dataset),
                );
                ran += 1;
            }
        }
    }
    if ran == 0 {
        skip(3, "no real datasets mounted");
    }
}

// =============================================================================
// Criterion 4: feature-reduction ordering on Indian Pines (data-gated)
// =============================================================================

#[test]
fn criterion_04_feature_reduction_ordering() {
    let Some(dir) = real_dataset("indian_pines") else {
        skip(4, "indian_pines not mounted under $CEUNET_DATA");
        return;
    };
    let mut accs = Vec::new();
    for (method, dim) in [("pca", 30usize), ("cae3d", 30), ("cae2d", 32)] {
        let mut cfg = paper_protocol_config(&dir, "ceunet", 2);
        cfg.reducer = Some(ReducerSection {
            method: method.into(),
            dim,
            epochs: None, // 100 (2d) / 150 (3d) defaults
            learning_rate: 1e-4,
            batch_size: 128,
        });
        let report = run_experiment(&cfg);
        assert!(report.is_ok(), "{method}: {:?}", report.failed);
        accs.push((method, report.mean_accuracy()));
    }
    let (pca, cae3d, cae2d) = (accs[0].1, accs[1].1, accs[2].1);
    assert!(
        pca > cae3d && cae3d > cae2d,
        "ordering violated: pca {pca:.4}, cae3d {cae3d:.4}, cae2d {cae2d:.4} \
         (published 0.89 / 0.816 / 0.5738)"
    );
    pass(
        4,
        &format!("indian_pines ordering pca {pca:.4} > cae3d {cae3d:.4} > cae2d {cae2d:.4}"),
    );
}

// =============================================================================
// Criterion 5: patched (CPC n=10) spot checks (data-gated, hours)
// =============================================================================

#[test]
fn criterion_05_patched_spot_checks() {
    // thresholds from the published values with the stated -0.01 tolerance
    let checks: &[(&str, usize, f64)] = &[
        ("ksc", 2, 0.97 - 0.01),
        ("salinas", 3, 0.99 - 0.01),
    ];
    let run_salinas = std::env::var_os("CEUNET_RUN_SALINAS_PATCHED").is_some();
    let mut ran = 0;
    for &(name, k, threshold) in checks {
        if name == "salinas" && !run_salinas {
            skip(
                5,
                "salinas patched run disabled (set CEUNET_RUN_SALINAS_PATCHED=1; takes hours)",
            );
            continue;
        }
        let Some(dir) = real_dataset(name) else {
            skip(5, &format!("{name} not mounted under $CEUNET_DATA"));
            continue;
        };
        let mut cfg = paper_protocol_config(&dir, "ceunet", k);
        cfg.patch = Some(PatchSection {
            mode: "cpc".into(),
            n: 10,
        });
        let report = run_experiment(&cfg);
        assert!(report.is_ok(), "{name}: {:?}", report.failed);
        let acc = report.mean_accuracy();
        assert!(
            acc >= threshold,
            "{name} patched ceunet {acc:.4} below threshold {threshold:.4}"
        );
        pass(5, &format!("{name} patched ceunet {acc:.4} >= {threshold:.4}"));
        ran += 1;
    }
    if ran == 0 {
        skip(5, "no patched spot checks ran");
    }
}

// =============================================================================
// Criterion 6: CPC n=10 costs >= 10x per epoch vs no patching (synthetic)
// =============================================================================

#[test]
fn criterion_06_patching_time_ratio() {
    let dir = tempfile::tempdir().unwrap();
    let (cube, gt) = synth::generate(&SynthConfig {
        height: 40,
        width: 40,
        bands: 24,
        num_classes: 5,
        spectral_groups: 2,
        noise: 0.01,
        labeled_fraction: 0.8,
        seed: 60,
    });
    let ds = dir.path().join("ds");
    ceunet::hsi::save_dataset(&ds, &cube, &gt, false).unwrap();

    let mut flat = paper_protocol_config(&ds, "unet", 1);
    flat.reducer.as_mut().unwrap().dim = 8;
    flat.model.epochs = Some(3);
    flat.model.learning_rate = 1e-3;
    flat.split.trials = 1;
    let mut patched = flat.clone();
    patched.patch = Some(PatchSection {
        mode: "cpc".into(),
        n: 10,
    });

    let a = run_experiment(&flat);
    let b = run_experiment(&patched);
    assert!(a.is_ok(), "{:?}", a.failed);
    assert!(b.is_ok(), "{:?}", b.failed);
    let ratio = b.per_epoch_seconds / a.per_epoch_seconds;
    assert!(
        ratio >= 10.0,
        "per-epoch ratio {ratio:.1} (patched {:.4}s vs flat {:.4}s) below 10x",
        b.per_epoch_seconds,
        a.per_epoch_seconds
    );
    pass(
        6,
        &format!("CPC 10x10 per-epoch time is {ratio:.0}x the unpatched time"),
    );
}

// =============================================================================
// Criterion 7: CPC extraction bit-identical to a naive oracle
// =============================================================================

/// Independent nested-loop extractor (no shared code with the library path).
fn naive_cpc(
    cube: &HsiCube,
    gt: &GroundTruth,
    n: usize,
) -> (Vec<Vec<f32>>, Vec<u16>, Vec<(u32, u32)>) {
    let (h, w, d) = cube.data.dim();
    let c = (n / 2) as isize;
    let mut patches = Vec::new();
    let mut labels = Vec::new();
    let mut coords = Vec::new();
    for r in 0..h {
        for col in 0..w {
            let label = gt.labels[[r, col]];
            if label == 0 {
                continue;
            }
            let mut patch = vec![0.0f32; n * n * d];
            for u in 0..n {
                for v in 0..n {
                    let sr = r as isize + u as isize - c;
                    let sc = col as isize + v as isize - c;
                    if sr < 0 || sc < 0 || sr >= h as isize || sc >= w as isize {
                        continue;
                    }
                    for band in 0..d {
                        patch[(u * n + v) * d + band] =
                            cube.data[[sr as usize, sc as usize, band]];
                    }
                }
            }
            patches.push(patch);
            labels.push(label);
            coords.push((r as u32, col as u32));
        }
    }
    (patches, labels, coords)
}

#[test]
fn criterion_07_cpc_matches_naive_oracle() {
    let mut rng = seeds::rng(7007);
    let mut total_patches = 0usize;
    for case in 0..200 {
        let h = rng.random_range(1..=20);
        let w = rng.random_range(1..=20);
        let d = rng.random_range(1..=8);
        let cube = HsiCube {
            data: Array3::from_shape_fn((h, w, d), |_| rng.random_range(-2.0..2.0f32)),
            name: format!("case{case}"),
        };
        let gt = GroundTruth {
            labels: Array2::from_shape_fn((h, w), |_| rng.random_range(0..4u16)),
            num_classes: 3,
        };
        if gt.labels.iter().all(|&l| l == 0) {
            continue;
        }
        for n in [1usize, 2, 3, 5, 10] {
            let got = extract_cpc(&cube, &gt, &PatchConfig::cpc(n)).unwrap();
            let (want_patches, want_labels, want_coords) = naive_cpc(&cube, &gt, n);
            assert_eq!(got.len(), want_patches.len(), "case {case} n={n}");
            assert_eq!(got.labels, want_labels);
            assert_eq!(got.coords, want_coords);
            for (i, want) in want_patches.iter().enumerate() {
                let flat: Vec<f32> = got
                    .patches
                    .index_axis(ndarray::Axis(0), i)
                    .iter()
                    .copied()
                    .collect();
                assert_eq!(&flat, want, "case {case} n={n} patch {i} must be bit-exact");
            }
            total_patches += got.len();
        }
    }
    pass(
        7,
        &format!("CPC bit-identical to the naive extractor over 200 cubes ({total_patches} patches)"),
    );
}

// =============================================================================
// Criterion 8: exclusive/majority match a block-enumeration oracle
// =============================================================================

#[test]
fn criterion_08_downsampling_matches_block_oracle() {
    let mut rng = seeds::rng(8008);
    let mut checked = 0usize;
    for case in 0..120 {
        let h = rng.random_range(1..=14);
        let w = rng.random_range(1..=14);
        let d = rng.random_range(1..=4);
        let n = rng.random_range(1..=4usize);
        // low label range makes unanimous blocks and ties common; label 0
        // (background) appears often
        let cube = HsiCube {
            data: Array3::from_shape_fn((h, w, d), |_| rng.random_range(0.0..1.0f32)),
            name: format!("case{case}"),
        };
        let gt = GroundTruth {
            labels: Array2::from_shape_fn((h, w), |_| rng.random_range(0..3u16)),
            num_classes: 2,
        };
        let cfg_e = PatchConfig { n, mode: PatchMode::Exclusive, pad_policy: PadPolicy::Zero };
        let cfg_m = PatchConfig { n, mode: PatchMode::Majority, pad_policy: PadPolicy::Zero };

        // oracle: enumerate complete blocks by hand
        let (oh, ow) = (h / n, w / n);
        let mut want_excl: Vec<Vec<u16>> = vec![vec![0; ow]; oh];
        let mut want_majo: Vec<Vec<u16>> = vec![vec![0; ow]; oh];
        let mut want_mean = vec![vec![vec![0.0f32; d]; ow]; oh];
        for br in 0..oh {
            for bc in 0..ow {
                let mut counts: HashMap<u16, usize> = HashMap::new();
                let mut mean = vec![0.0f64; d];
                for r in br * n..(br + 1) * n {
                    for c in bc * n..(bc + 1) * n {
                        *counts.entry(gt.labels[[r, c]]).or_insert(0) += 1;
                        for band in 0..d {
                            mean[band] += f64::from(cube.data[[r, c, band]]);
                        }
                    }
                }
                for band in 0..d {
                    want_mean[br][bc][band] = (mean[band] / (n * n) as f64) as f32;
                }
                // exclusive: one nonzero label covering the whole block
                if counts.len() == 1 {
                    let (&label, &count) = counts.iter().next().unwrap();
                    if label != 0 && count == n * n {
                        want_excl[br][bc] = label;
                    }
                }
                // majority: most frequent nonzero, ties -> smallest id
                let mut best: Option<(u16, usize)> = None;
                let mut sorted: Vec<(&u16, &usize)> = counts.iter().collect();
                sorted.sort();
                for (&label, &count) in sorted {
                    if label == 0 {
                        continue;
                    }
                    match best {
                        None => best = Some((label, count)),
                        Some((_, bc2)) if count > bc2 => best = Some((label, count)),
                        _ => {}
                    }
                }
                if let Some((label, _)) = best {
                    want_majo[br][bc] = label;
                }
            }
        }
        let any_excl = want_excl.iter().flatten().any(|&l| l != 0);
        let any_majo = want_majo.iter().flatten().any(|&l| l != 0);

        match downsample_exclusive(&cube, &gt, &cfg_e) {
            Ok((out, ogt)) => {
                assert!(any_excl, "case {case}: oracle says empty but call succeeded");
                assert_eq!(out.data.dim(), (oh, ow, d));
                for br in 0..oh {
                    for bc in 0..ow {
                        assert_eq!(ogt.labels[[br, bc]], want_excl[br][bc], "case {case} excl");
                        for band in 0..d {
                            assert_eq!(out.data[[br, bc, band]], want_mean[br][bc][band]);
                        }
                    }
                }
            }
            Err(_) => assert!(
                !any_excl || oh == 0 || ow == 0,
                "case {case}: exclusive errored but oracle found survivors"
            ),
        }
        match downsample_majority(&cube, &gt, &cfg_m) {
            Ok((_, ogt)) => {
                for br in 0..oh {
                    for bc in 0..ow {
                        assert_eq!(ogt.labels[[br, bc]], want_majo[br][bc], "case {case} majo");
                    }
                }
            }
            Err(_) => assert!(
                !any_majo || oh == 0 || ow == 0,
                "case {case}: majority errored but oracle found survivors"
            ),
        }
        checked += 1;
    }
    pass(
        8,
        &format!("exclusive/majority match the hand block oracle on {checked} random grids"),
    );
}

// =============================================================================
// Criterion 9: PCA vs brute-force eigendecomposition; MSE monotone in d
// =============================================================================

/// Jacobi sweep eigensolver: the independent route.
fn jacobi_eigen(mut a: Array2<f64>) -> (Vec<f64>, Array2<f64>) {
    let n = a.shape()[0];
    let mut v = Array2::<f64>::eye(n);
    for _ in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[[p, q]] * a[[p, q]];
            }
        }
        if off < 1e-24 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if a[[p, q]].abs() < 1e-18 {
                    continue;
                }
                let theta = (a[[q, q]] - a[[p, p]]) / (2.0 * a[[p, q]]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for i in 0..n {
                    let aip = a[[i, p]];
                    let aiq = a[[i, q]];
                    a[[i, p]] = c * aip - s * aiq;
                    a[[i, q]] = s * aip + c * aiq;
                }
                for i in 0..n {
                    let api = a[[p, i]];
                    let aqi = a[[q, i]];
                    a[[p, i]] = c * api - s * aqi;
                    a[[q, i]] = s * api + c * aqi;
                }
                for i in 0..n {
                    let vip = v[[i, p]];
                    let viq = v[[i, q]];
                    v[[i, p]] = c * vip - s * viq;
                    v[[i, q]] = s * vip + c * viq;
                }
            }
        }
    }
    ((0..n).map(|i| a[[i, i]]).collect(), v)
}

#[test]
fn criterion_09_pca_matches_bruteforce_eigendecomposition() {
    let mut rng = seeds::rng(9009);
    for case in 0..12 {
        let n = rng.random_range(20..=100);
        let b = rng.random_range(3..=16);
        let samples = Array2::<f32>::from_shape_fn((n, b), |_| rng.random_range(-1.0..1.0f32));
        let d = rng.random_range(1..=b);
        let model = pca_fit(samples.view(), d).unwrap();

        // oracle covariance + Jacobi
        let mut mean = vec![0.0f64; b];
        for row in samples.rows() {
            for (j, &x) in row.iter().enumerate() {
                mean[j] += f64::from(x);
            }
        }
        for m in mean.iter_mut() {
            *m /= n as f64;
        }
        let mut cov = Array2::<f64>::zeros((b, b));
        for row in samples.rows() {
            for r in 0..b {
                let dr = f64::from(row[r]) - mean[r];
                for c in 0..b {
                    cov[[r, c]] += dr * (f64::from(row[c]) - mean[c]);
                }
            }
        }
        cov.mapv_inplace(|x| x / (n - 1) as f64);
        let (vals, vecs) = jacobi_eigen(cov);
        let mut order: Vec<usize> = (0..b).collect();
        order.sort_by(|&i, &j| vals[j].partial_cmp(&vals[i]).unwrap());

        for r in 0..d {
            let idx = order[r];
            assert!(
                (model.explained_variance[r] - vals[idx]).abs() < 1e-6,
                "case {case}: eigenvalue {r}"
            );
            let dot: f64 = (0..b).map(|c| model.components[[r, c]] * vecs[[c, idx]]).sum();
            for c in 0..b {
                let expect = vecs[[c, idx]] * dot.signum();
                assert!(
                    (model.components[[r, c]] - expect).abs() < 1e-6,
                    "case {case}: component [{r},{c}] differs beyond sign"
                );
            }
        }

        // reconstruction error is non-increasing in d
        let mut last = f64::INFINITY;
        for dd in 1..=b {
            let m = pca_fit(samples.view(), dd).unwrap();
            let mse = m.reconstruction_mse(samples.view()).unwrap();
            assert!(mse <= last + 1e-9, "case {case}: MSE rose at d={dd}");
            last = mse;
        }
    }
    pass(9, "PCA equals the Jacobi covariance oracle (1e-6, up to sign); MSE monotone in d");
}

// =============================================================================
// Criterion 10: softmax normalization + final-layer gradient check
// =============================================================================

#[test]
fn criterion_10_softmax_and_final_layer_gradients() {
    // softmax rows over random logits
    let mut rng = seeds::rng(1010);
    let spec = UNetSpec::new(7, 5).with_widths([8, 12, 16]).with_patch(2);
    let net = build_unet::<f32>(&spec, 33).unwrap();
    let mut patches = Array4::<f32>::zeros((6, 2, 2, 7));
    for v in patches.iter_mut() {
        *v = rng.random_range(-1.0..1.0);
    }
    let ds = ceunet::patching::PatchDataset {
        patches,
        labels: vec![1; 6],
        coords: (0..6).map(|i| (0, i as u32)).collect(),
        num_classes: 5,
    };
    let map = net.forward_probability_map(ClassData::Patches(&ds), &[0, 1, 2, 3, 4, 5]);
    for b in 0..6 {
        for u in 0..2 {
            for v in 0..2 {
                let s: f32 = (0..5).map(|m| map[[b, u, v, m]]).sum();
                assert!((s - 1.0).abs() < 1e-6, "softmax row sums to {s}");
            }
        }
    }

    // finite differences on the output layer, f64, 10-sample batch
    let centers = vec![vec![0.0; 6], vec![1.2; 6], vec![-0.8; 6]];
    let pixels = synth::blobs_pixelset(4, 6, &centers, 0.4, 10);
    let fd_spec = UNetSpec::new(6, 3).with_widths([6, 8, 10]).with_dropout(0.0);
    let mut fd_net = build_unet::<f64>(&fd_spec, 77).unwrap();
    let data = ClassData::Pixels(&pixels);
    let idx: Vec<usize> = (0..10).collect();
    let x = data.gather::<f64>(&idx);
    let y: Vec<usize> = idx.iter().map(|&i| pixels.labels[i] as usize - 1).collect();
    fd_net.compute_gradients(&x, &y, 1.0, &mut seeds::rng(0));
    let analytic = fd_net.head_gradients();

    let h = 1e-6;
    let total = fd_net.head_weight_count();
    let mut checked = 0;
    for probe in (0..total).step_by(total / 29 + 1) {
        let orig = *fd_net.head_weight_mut(probe);
        *fd_net.head_weight_mut(probe) = orig + h;
        let lp = fd_net.compute_gradients(&x, &y, 1.0, &mut seeds::rng(0));
        *fd_net.head_weight_mut(probe) = orig - h;
        let lm = fd_net.compute_gradients(&x, &y, 1.0, &mut seeds::rng(0));
        *fd_net.head_weight_mut(probe) = orig;
        let numeric = (lp - lm) / (2.0 * h);
        let a = analytic[probe];
        let denom = numeric.abs().max(a.abs()).max(1e-8);
        assert!(
            (numeric - a).abs() / denom < 1e-4,
            "head weight {probe}: numeric {numeric} vs analytic {a}"
        );
        checked += 1;
    }
    pass(
        10,
        &format!("softmax rows sum to 1 (1e-6); {checked} final-layer gradients match FD (1e-4)"),
    );
}

// =============================================================================
// Criterion 11: loss-weight linearity at step 0
// =============================================================================

#[test]
fn criterion_11_loss_weight_linearity() {
    let centers = vec![vec![0.0; 6], vec![1.5; 6]];
    let pixels = synth::blobs_pixelset(8, 6, &centers, 0.3, 11);
    let spec = UNetSpec::new(6, 2).with_widths([6, 8, 10]);
    let data = ClassData::Pixels(&pixels);
    let idx: Vec<usize> = (0..16).collect();
    let x = data.gather::<f64>(&idx);
    let targets: Vec<usize> = idx.iter().map(|&i| pixels.labels[i] as usize - 1).collect();

    for &c in &[0.5f64, 2.0, 7.3] {
        let mut base = build_unet::<f64>(&spec, 21).unwrap();
        base.compute_gradients(&x, &targets, 1.0, &mut seeds::rng(5));
        let g1 = base.flat_gradients();
        let mut scaled = build_unet::<f64>(&spec, 21).unwrap();
        scaled.compute_gradients(&x, &targets, c, &mut seeds::rng(5));
        let gc = scaled.flat_gradients();
        for (a, b) in g1.iter().zip(gc.iter()) {
            let expect = c * a;
            assert!(
                (b - expect).abs() <= 1e-6 * expect.abs().max(1e-12),
                "gradient {b} differs from {c} * {a}"
            );
        }
    }
    pass(11, "scaling the loss weight by c scales every step-0 gradient by exactly c (1e-6)");
}

// =============================================================================
// Criterion 12: accuracy decomposition identity
// =============================================================================

#[test]
fn criterion_12_accuracy_decomposition() {
    // pure counting simulation over random routings
    let mut rng = seeds::rng(1212);
    for _ in 0..50 {
        let total = rng.random_range(3..200usize);
        let k = rng.random_range(1..6usize);
        let mut correct = vec![0usize; k];
        let mut overall_correct = 0usize;
        for _ in 0..total {
            let j = rng.random_range(0..k);
            if rng.random_bool(0.7) {
                correct[j] += 1;
                overall_correct += 1;
            }
        }
        let sum_counts: usize = correct.iter().sum();
        assert_eq!(sum_counts, overall_correct, "integer identity");
        let overall = overall_correct as f64 / total as f64;
        let from_counts = sum_counts as f64 / total as f64;
        assert_eq!(overall, from_counts, "single-division equality is bitwise");
        let float_sum: f64 = correct.iter().map(|&c| c as f64 / total as f64).sum();
        assert!((float_sum - overall).abs() < 1e-12);
    }

    // and through a real trained ensemble
    let centers = vec![vec![0.0; 8], vec![6.0; 8]];
    let train = synth::blobs_pixelset(60, 8, &centers, 0.4, 1);
    let test = synth::blobs_pixelset(30, 8, &centers, 0.4, 2);
    let cfg = EnsembleConfig {
        k: 2,
        method: ClusterMethod::KMeans,
        weight_scheme: WeightScheme::Constant,
        epochs_per_subnet: 8,
        min_cluster_size: 2,
        learning_rate: 1e-3,
        batch_size: Some(16),
        widths: [6, 8, 10],
        dropout_rate: 0.2,
        kmeans_restarts: 3,
    };
    let model = train_ensemble(ClassData::Pixels(&train), &cfg, 3).unwrap();
    let pred = predict_ensemble(&model, ClassData::Pixels(&test)).unwrap();
    let direct = overall_accuracy(&pred.labels, &test.labels).unwrap();
    assert_eq!(pred.overall_accuracy(), direct, "bitwise via integer counts");
    let joined: f64 = (0..cfg.k).map(|j| pred.ac_tj(j)).sum();
    assert!((joined - direct).abs() < 1e-12);
    pass(12, "overall accuracy decomposes exactly into per-cluster AC_tj counts");
}

// =============================================================================
// Criterion 13: k=1 ensemble replays the single U-Net bit for bit
// =============================================================================

#[test]
fn criterion_13_degenerate_ensemble_equivalence() {
    let centers = vec![vec![0.0; 8], vec![5.0; 8]];
    let ds = synth::blobs_pixelset(40, 8, &centers, 0.5, 131);
    let seed = 999u64;
    let epochs = 7usize;
    let cfg = EnsembleConfig {
        k: 1,
        method: ClusterMethod::KMeans,
        weight_scheme: WeightScheme::Constant,
        epochs_per_subnet: epochs,
        min_cluster_size: 2,
        learning_rate: 1e-3,
        batch_size: Some(16),
        widths: [6, 8, 10],
        dropout_rate: 0.2,
        kmeans_restarts: 3,
    };
    let ensemble = train_ensemble(ClassData::Pixels(&ds), &cfg, seed).unwrap();

    let spec = UNetSpec {
        patch_side: 1,
        features: 8,
        num_classes: 2,
        dropout_rate: 0.2,
        widths: [6, 8, 10],
        leaky_slope: 0.01,
    };
    let mut single = build_unet::<f32>(&spec, seed).unwrap();
    single
        .train(
            ClassData::Pixels(&ds),
            &TrainConfig {
                epochs,
                learning_rate: 1e-3,
                loss_weight: 1.0,
                batch_size: Some(16),
                seed,
            },
        )
        .unwrap();

    assert_eq!(
        ensemble.subnets[0].loss_history, single.loss_history,
        "loss histories must be bitwise identical"
    );
    let a = predict_ensemble(&ensemble, ClassData::Pixels(&ds)).unwrap();
    let b = single.predict(ClassData::Pixels(&ds)).unwrap();
    assert_eq!(a.labels, b.labels);
    let acc_a = a.overall_accuracy();
    let acc_b = overall_accuracy(&b.labels, &ds.labels).unwrap();
    assert_eq!(acc_a, acc_b, "accuracies must be bit-for-bit equal");
    pass(13, "k=1 ensemble reproduces the standalone U-Net exactly (losses, labels, accuracy)");
}

// =============================================================================
// Criterion 14: clustering numerics and label-blindness
// =============================================================================

#[test]
fn criterion_14_clustering_properties() {
    let centers = vec![vec![0.0; 5], vec![4.0; 5], vec![-3.5; 5]];
    let (samples, _) = synth::blobs(70, 5, &centers, 1.0, 14);

    let km = cluster::fit(
        samples.view(),
        &ClusterSpec::new(ClusterMethod::KMeans, 3, 1),
    )
    .unwrap();
    if let ClusterModel::KMeans(m) = &km {
        assert!(m.inertia_trace.len() >= 2);
        for w in m.inertia_trace.windows(2) {
            assert!(
                w[1] <= w[0] * (1.0 + 1e-12) + 1e-9,
                "inertia rose {} -> {}",
                w[0],
                w[1]
            );
        }
    } else {
        panic!("expected kmeans");
    }

    let gm = cluster::fit(samples.view(), &ClusterSpec::new(ClusterMethod::Gmm, 3, 2)).unwrap();
    if let ClusterModel::Gmm(m) = &gm {
        assert!(m.log_likelihood_trace.len() >= 2);
        for w in m.log_likelihood_trace.windows(2) {
            assert!(
                w[1] >= w[0] - 1e-8 * w[0].abs().max(1.0),
                "log-likelihood fell {} -> {}",
                w[0],
                w[1]
            );
        }
    } else {
        panic!("expected gmm");
    }

    // label permutations cannot change the fit (clustering sees spectra only)
    let labels_a: Vec<u16> = (0..samples.shape()[0]).map(|i| (i % 3 + 1) as u16).collect();
    let mut labels_b = labels_a.clone();
    labels_b.rotate_left(11);
    let coords: Vec<(u32, u32)> = (0..samples.shape()[0] as u32).map(|i| (0, i)).collect();
    let ds_a = LabeledPixelSet {
        samples: samples.clone(),
        labels: labels_a,
        coords: coords.clone(),
        num_classes: 3,
    };
    let ds_b = LabeledPixelSet {
        samples: samples.clone(),
        labels: labels_b,
        coords,
        num_classes: 3,
    };
    let fit_a = ceunet::ensemble::fit_cluster(
        &ClassData::Pixels(&ds_a),
        ClusterMethod::KMeans,
        3,
        9,
        1,
        3,
    )
    .unwrap();
    let fit_b = ceunet::ensemble::fit_cluster(
        &ClassData::Pixels(&ds_b),
        ClusterMethod::KMeans,
        3,
        9,
        1,
        3,
    )
    .unwrap();
    assert_eq!(fit_a.1, fit_b.1, "assignment must be label-blind");
    pass(
        14,
        "k-means inertia non-increasing; GMM log-likelihood non-decreasing (1e-8); label-blind",
    );
}

// =============================================================================
// Criterion 15: weight-scheme contracts
// =============================================================================

#[test]
fn criterion_15_weight_contracts() {
    for scheme in [
        WeightScheme::Constant,
        WeightScheme::Abundance,
        WeightScheme::Random,
    ] {
        for seed in 0..10u64 {
            let sizes = [
                vec![60usize, 40],
                vec![10, 10, 10],
                vec![1, 2, 3, 4, 5],
                vec![1000],
            ];
            for s in &sizes {
                let w = make_weights(scheme, s, seed).unwrap();
                let sum: f64 = w.iter().sum();
                assert!((sum - 1.0).abs() < 1e-9, "{scheme}: sum {sum}");
                assert!(w.iter().all(|&x| x > 0.0), "{scheme}: nonpositive weight");
            }
        }
    }
    let w = make_weights(WeightScheme::Abundance, &[60, 40], 0).unwrap();
    assert_eq!(w[0], 0.6, "abundance on (60,40) is exactly 0.6");
    assert_eq!(w[1], 0.4, "abundance on (60,40) is exactly 0.4");
    pass(15, "every scheme sums to 1 within 1e-9 with positive entries; (60,40) -> (0.6,0.4) exact");
}
