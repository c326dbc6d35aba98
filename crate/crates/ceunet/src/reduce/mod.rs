//! Spectral dimensionality reduction: PCA (baseline) and convolutional
//! autoencoders, behind one fit/transform surface for the harness.

pub mod cae;
pub mod pca;

pub use cae::{cae_fit, CaeConfig, CaeModel, CaeVariant};
pub use pca::{pca_fit, PcaModel};

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReducerMethod {
    Pca,
    Cae2d,
    Cae3d,
}

impl std::str::FromStr for ReducerMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pca" => Ok(ReducerMethod::Pca),
            "cae2d" => Ok(ReducerMethod::Cae2d),
            "cae3d" => Ok(ReducerMethod::Cae3d),
            other => Err(Error::Config(format!("unknown reducer `{other}`"))),
        }
    }
}

impl std::fmt::Display for ReducerMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ReducerMethod::Pca => write!(f, "pca"),
            ReducerMethod::Cae2d => write!(f, "cae2d"),
            ReducerMethod::Cae3d => write!(f, "cae3d"),
        }
    }
}

/// How to fit a reducer; the CAE fields are ignored for PCA.
#[derive(Debug, Clone)]
pub struct ReducerConfig {
    pub method: ReducerMethod,
    pub dim: usize,
    /// Override the per-variant default epochs.
    pub epochs: Option<usize>,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl ReducerConfig {
    pub fn pca(dim: usize) -> Self {
        ReducerConfig {
            method: ReducerMethod::Pca,
            dim,
            epochs: None,
            learning_rate: 1e-4,
            batch_size: 128,
        }
    }

    pub fn cae(method: ReducerMethod, dim: usize) -> Self {
        ReducerConfig {
            method,
            dim,
            epochs: None,
            learning_rate: 1e-4,
            batch_size: 128,
        }
    }
}

pub enum FittedReducer {
    Pca(PcaModel),
    Cae(CaeModel),
}

impl FittedReducer {
    pub fn output_dim(&self) -> usize {
        match self {
            FittedReducer::Pca(m) => m.output_dim(),
            FittedReducer::Cae(m) => m.latent_dim,
        }
    }

    pub fn transform(&self, samples: ArrayView2<'_, f32>) -> Result<Array2<f32>> {
        match self {
            FittedReducer::Pca(m) => m.transform(samples),
            FittedReducer::Cae(m) => m.encode(samples),
        }
    }
}

/// Fit a reducer on training spectra only.
pub fn fit_reducer(
    train: ArrayView2<'_, f32>,
    cfg: &ReducerConfig,
    seed: u64,
) -> Result<FittedReducer> {
    match cfg.method {
        ReducerMethod::Pca => Ok(FittedReducer::Pca(pca_fit(train, cfg.dim)?)),
        ReducerMethod::Cae2d | ReducerMethod::Cae3d => {
            let variant = if cfg.method == ReducerMethod::Cae2d {
                CaeVariant::Cae2d
            } else {
                CaeVariant::Cae3d
            };
            let mut cae_cfg = CaeConfig::for_variant(variant, seed);
            cae_cfg.latent_dim = cfg.dim;
            if let Some(epochs) = cfg.epochs {
                cae_cfg.epochs = epochs;
            }
            cae_cfg.learning_rate = cfg.learning_rate;
            cae_cfg.batch_size = cfg.batch_size;
            Ok(FittedReducer::Cae(cae_fit(train, &cae_cfg)?))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;

    #[test]
    fn reducer_surface_round_trips_both_methods() {
        let centers = vec![vec![0.2; 12], vec![0.8; 12]];
        let (samples, _) = synth::blobs(30, 12, &centers, 0.05, 1);
        for method in [ReducerMethod::Pca, ReducerMethod::Cae3d] {
            let mut cfg = ReducerConfig {
                method,
                dim: 3,
                epochs: Some(2),
                learning_rate: 1e-3,
                batch_size: 16,
            };
            if method == ReducerMethod::Pca {
                cfg.epochs = None;
            }
            let reducer = fit_reducer(samples.view(), &cfg, 4).unwrap();
            assert_eq!(reducer.output_dim(), 3);
            let out = reducer.transform(samples.view()).unwrap();
            assert_eq!(out.shape(), &[60, 3]);
        }
    }
}
