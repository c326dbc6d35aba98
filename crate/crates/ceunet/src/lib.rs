//! Hyperspectral pixel classification with a clustering ensemble of U-Nets.
//!
//! The pipeline: load a hyperspectral cube and its ground truth, strip
//! background pixels, optionally reduce the spectral dimension (PCA or a
//! convolutional autoencoder), optionally patch (exclusive / majority
//! downsampling or center-pixel windows), then classify every labeled pixel
//! either with a single U-Net or with an ensemble of U-Nets where an
//! unsupervised clusterer (k-means++ or a Gaussian mixture) routes each pixel
//! to the sub-net that specializes in its spectral cluster.
//!
//! The [`harness`] module drives repeated-random-split experiments from
//! declarative configs and persists ledgers, reports and plot series.

pub mod cluster;
pub mod ensemble;
pub mod error;
pub mod harness;
pub mod hsi;
pub mod nn;
pub mod patching;
pub mod reduce;
pub mod seeds;
pub mod synth;
pub mod unet;

pub use error::{Error, Result};
