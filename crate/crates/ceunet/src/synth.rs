//! Deterministic synthetic hyperspectral scenes.
//!
//! Real sensor cubes are not bundled with the repo; this generator produces
//! scenes with the same gross structure (spatially contiguous class regions,
//! smooth per-class spectral signatures grouped into a few spectral families,
//! partial labeling) so the whole pipeline can be exercised end to end.

use ndarray::{Array2, Array3};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::hsi::{GroundTruth, HsiCube, LabeledPixelSet};
use crate::seeds;

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub num_classes: u16,
    /// Spectral families the classes are drawn from; a clustering ensemble
    /// separates these cleanly, so values >= 2 make ensemble runs meaningful.
    pub spectral_groups: usize,
    /// Per-band additive Gaussian noise.
    pub noise: f64,
    /// Fraction of pixels that keep a label; the rest become background.
    pub labeled_fraction: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            height: 32,
            width: 32,
            bands: 24,
            num_classes: 6,
            spectral_groups: 2,
            noise: 0.01,
            labeled_fraction: 0.7,
            seed: 0,
        }
    }
}

/// Smooth curve over the spectral axis from a handful of random harmonics.
fn smooth_curve(bands: usize, amplitude: f64, rng: &mut impl Rng) -> Vec<f64> {
    let mut curve = vec![0.0; bands];
    for harmonic in 1..=4 {
        let amp = amplitude / harmonic as f64 * rng.random_range(0.5..1.0);
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        for (b, v) in curve.iter_mut().enumerate() {
            let x = b as f64 / bands as f64 * std::f64::consts::TAU * harmonic as f64;
            *v += amp * (x + phase).sin();
        }
    }
    curve
}

/// Generate a scene: Voronoi class regions, grouped spectral signatures,
/// per-pixel noise, and a random background mask.
pub fn generate(cfg: &SynthConfig) -> (HsiCube, GroundTruth) {
    assert!(cfg.num_classes >= 1 && cfg.spectral_groups >= 1);
    let mut rng = seeds::rng(seeds::derive(cfg.seed, "synth", 0));
    let m = cfg.num_classes as usize;

    // spectral family baselines, spread far apart
    let group_levels: Vec<f64> = (0..cfg.spectral_groups)
        .map(|g| 0.25 + 0.5 * g as f64 / (cfg.spectral_groups.max(2) - 1).max(1) as f64)
        .collect();
    let group_curves: Vec<Vec<f64>> = (0..cfg.spectral_groups)
        .map(|_| smooth_curve(cfg.bands, 0.08, &mut rng))
        .collect();

    // per-class signature = family baseline + family curve + small class tweak
    let mut signatures = vec![vec![0.0f64; cfg.bands]; m];
    for (class, sig) in signatures.iter_mut().enumerate() {
        let g = class % cfg.spectral_groups;
        let tweak = smooth_curve(cfg.bands, 0.03, &mut rng);
        for b in 0..cfg.bands {
            sig[b] = group_levels[g] + group_curves[g][b] + tweak[b];
        }
    }

    // Voronoi layout over a few seed points per class
    let mut sites: Vec<(f64, f64, u16)> = Vec::new();
    for class in 0..m {
        let repeats = 1 + (class % 2);
        for _ in 0..=repeats {
            sites.push((
                rng.random_range(0.0..cfg.height as f64),
                rng.random_range(0.0..cfg.width as f64),
                (class + 1) as u16,
            ));
        }
    }

    let noise = Normal::new(0.0, cfg.noise).expect("valid noise sigma");
    let mut data = Array3::<f32>::zeros((cfg.height, cfg.width, cfg.bands));
    let mut labels = Array2::<u16>::zeros((cfg.height, cfg.width));
    for r in 0..cfg.height {
        for c in 0..cfg.width {
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for (i, &(sr, sc, _)) in sites.iter().enumerate() {
                let d = (sr - r as f64).powi(2) + (sc - c as f64).powi(2);
                if d < best_d {
                    best_d = d;
                    best = i;
                }
            }
            let class = sites[best].2;
            let sig = &signatures[(class - 1) as usize];
            for b in 0..cfg.bands {
                data[[r, c, b]] = (sig[b] + noise.sample(&mut rng)) as f32;
            }
            labels[[r, c]] = if rng.random_bool(cfg.labeled_fraction) {
                class
            } else {
                0
            };
        }
    }

    // keep every class represented even on tiny grids
    for class in 1..=m as u16 {
        if !labels.iter().any(|&l| l == class) {
            let r = rng.random_range(0..cfg.height);
            let c = rng.random_range(0..cfg.width);
            labels[[r, c]] = class;
            let sig = &signatures[(class - 1) as usize];
            for b in 0..cfg.bands {
                data[[r, c, b]] = (sig[b] + noise.sample(&mut rng)) as f32;
            }
        }
    }

    (
        HsiCube {
            data,
            name: format!("synthetic-{}", cfg.seed),
        },
        GroundTruth {
            labels,
            num_classes: cfg.num_classes,
        },
    )
}

/// Isotropic Gaussian blobs; returns samples plus blob membership (0-based).
pub fn blobs(
    per_blob: usize,
    dim: usize,
    centers: &[Vec<f64>],
    sigma: f64,
    seed: u64,
) -> (Array2<f32>, Vec<usize>) {
    let mut rng = seeds::rng(seeds::derive(seed, "blobs", 0));
    let normal = Normal::new(0.0, sigma).expect("valid sigma");
    let n = per_blob * centers.len();
    let mut samples = Array2::<f32>::zeros((n, dim));
    let mut membership = Vec::with_capacity(n);
    for (b, center) in centers.iter().enumerate() {
        assert_eq!(center.len(), dim);
        for i in 0..per_blob {
            let row = b * per_blob + i;
            for d in 0..dim {
                samples[[row, d]] = (center[d] + normal.sample(&mut rng)) as f32;
            }
            membership.push(b);
        }
    }
    (samples, membership)
}

/// Blobs wrapped as a LabeledPixelSet (label = blob index + 1, fake coords).
pub fn blobs_pixelset(
    per_blob: usize,
    dim: usize,
    centers: &[Vec<f64>],
    sigma: f64,
    seed: u64,
) -> LabeledPixelSet {
    let (samples, membership) = blobs(per_blob, dim, centers, sigma, seed);
    let labels: Vec<u16> = membership.iter().map(|&b| (b + 1) as u16).collect();
    let coords: Vec<(u32, u32)> = (0..labels.len() as u32).map(|i| (0, i)).collect();
    LabeledPixelSet {
        samples,
        labels,
        coords,
        num_classes: centers.len() as u16,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generate_is_deterministic_and_finite() {
        let cfg = SynthConfig::default();
        let (a, gta) = generate(&cfg);
        let (b, gtb) = generate(&cfg);
        assert_eq!(a.data, b.data);
        assert_eq!(gta.labels, gtb.labels);
        assert!(a.data.iter().all(|v| v.is_finite()));
        // all classes present
        for class in 1..=cfg.num_classes {
            assert!(gta.labels.iter().any(|&l| l == class), "class {class} missing");
        }
    }

    #[test]
    fn blobs_have_expected_layout() {
        let centers = vec![vec![0.0; 4], vec![10.0; 4]];
        let (samples, membership) = blobs(50, 4, &centers, 0.5, 3);
        assert_eq!(samples.shape(), &[100, 4]);
        assert!(membership[..50].iter().all(|&b| b == 0));
        assert!(membership[50..].iter().all(|&b| b == 1));
    }
}
