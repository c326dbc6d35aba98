//! Hyperspectral cubes, ground truth, background removal and random splits.
//!
//! Datasets live on disk as a directory in a deliberately plain interchange
//! format:
//!
//! ```text
//! <dir>/
//!   header       key: value lines (name, height, width, bands, classes,
//!                dtype, endianness, normalized)
//!   cube.bin     height*width*bands little-endian f32, band-interleaved
//!                by pixel, pixels in row-major order
//!   labels.bin   height*width little-endian u16, row-major; 0 = background
//! ```
//!
//! Raw reflectance dirs carry `normalized: false` and are min-max scaled per
//! band to [0,1] at load. Derived dirs (reducer output, downsampled grids)
//! carry `normalized: true` and load verbatim, so scaling happens exactly
//! once along any pipeline.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array2, Array3};
use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::seeds;

/// A reflectance cube of shape height x width x bands.
#[derive(Debug, Clone)]
pub struct HsiCube {
    pub data: Array3<f32>,
    pub name: String,
}

impl HsiCube {
    pub fn height(&self) -> usize {
        self.data.shape()[0]
    }
    pub fn width(&self) -> usize {
        self.data.shape()[1]
    }
    pub fn bands(&self) -> usize {
        self.data.shape()[2]
    }
}

/// Per-pixel class labels; 0 marks background, classes run 1..=num_classes.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub labels: Array2<u16>,
    pub num_classes: u16,
}

impl GroundTruth {
    pub fn labeled_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l != 0).count()
    }
}

/// Flat samples for the labeled pixels of a cube, in row-major grid order.
#[derive(Debug, Clone)]
pub struct LabeledPixelSet {
    /// N x d spectra (d = bands, or the reduced dimension downstream).
    pub samples: Array2<f32>,
    /// N labels in 1..=num_classes.
    pub labels: Vec<u16>,
    /// Original (row, col) of each sample.
    pub coords: Vec<(u32, u32)>,
    pub num_classes: u16,
}

impl LabeledPixelSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples.shape()[1]
    }

    /// New set containing `indices` rows, in the order given.
    pub fn subset(&self, indices: &[usize]) -> LabeledPixelSet {
        let d = self.dim();
        let mut samples = Array2::<f32>::zeros((indices.len(), d));
        let mut labels = Vec::with_capacity(indices.len());
        let mut coords = Vec::with_capacity(indices.len());
        for (row, &i) in indices.iter().enumerate() {
            samples.row_mut(row).assign(&self.samples.row(i));
            labels.push(self.labels[i]);
            coords.push(self.coords[i]);
        }
        LabeledPixelSet {
            samples,
            labels,
            coords,
            num_classes: self.num_classes,
        }
    }

    /// Replace the spectra, keeping labels/coords (used after reduction).
    pub fn with_samples(&self, samples: Array2<f32>) -> Result<LabeledPixelSet> {
        if samples.shape()[0] != self.len() {
            return Err(Error::dimension(
                format!("{} rows", self.len()),
                format!("{} rows", samples.shape()[0]),
            ));
        }
        Ok(LabeledPixelSet {
            samples,
            labels: self.labels.clone(),
            coords: self.coords.clone(),
            num_classes: self.num_classes,
        })
    }
}

/// Repeated random split protocol: T independent (1-f)/f splits.
#[derive(Debug, Clone, Copy)]
pub struct SplitSpec {
    pub test_fraction: f64,
    pub num_trials: usize,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            test_fraction: 0.25,
            num_trials: 5,
            seed: 0,
        }
    }
}

/// Table-style metadata for `inspect`.
#[derive(Debug, Clone)]
pub struct DatasetInfo {
    pub name: String,
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub num_classes: u16,
    pub pixels: usize,
    pub labeled_pixels: usize,
}

impl DatasetInfo {
    pub fn labeled_fraction(&self) -> f64 {
        self.labeled_pixels as f64 / self.pixels as f64
    }
}

// ---------------------------------------------------------------------------
// Directory IO
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
struct Header {
    name: String,
    height: usize,
    width: usize,
    bands: usize,
    classes: u16,
    normalized: bool,
}

fn parse_header(path: &Path) -> Result<Header> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut name = None;
    let mut height = None;
    let mut width = None;
    let mut bands = None;
    let mut classes = None;
    let mut dtype = None;
    let mut endianness = None;
    let mut normalized = false;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once(':').ok_or_else(|| Error::Format {
            path: path.display().to_string(),
            msg: format!("line {}: expected `key: value`", lineno + 1),
        })?;
        let value = value.trim();
        let bad = |what: &str| Error::Format {
            path: path.display().to_string(),
            msg: format!("line {}: bad {what} `{value}`", lineno + 1),
        };
        match key.trim() {
            "name" => name = Some(value.to_string()),
            "height" => height = Some(value.parse().map_err(|_| bad("height"))?),
            "width" => width = Some(value.parse().map_err(|_| bad("width"))?),
            "bands" => bands = Some(value.parse().map_err(|_| bad("bands"))?),
            "classes" => classes = Some(value.parse().map_err(|_| bad("classes"))?),
            "dtype" => dtype = Some(value.to_string()),
            "endianness" => endianness = Some(value.to_string()),
            "normalized" => normalized = value.parse().map_err(|_| bad("normalized"))?,
            _ => {} // tolerate extra keys
        }
    }
    let missing = |what: &str| Error::Format {
        path: path.display().to_string(),
        msg: format!("missing `{what}`"),
    };
    if let Some(d) = dtype {
        if d != "f32" {
            return Err(Error::Format {
                path: path.display().to_string(),
                msg: format!("unsupported dtype `{d}` (only f32)"),
            });
        }
    }
    if let Some(e) = endianness {
        if e != "little" {
            return Err(Error::Format {
                path: path.display().to_string(),
                msg: format!("unsupported endianness `{e}` (only little)"),
            });
        }
    }
    Ok(Header {
        name: name.ok_or_else(|| missing("name"))?,
        height: height.ok_or_else(|| missing("height"))?,
        width: width.ok_or_else(|| missing("width"))?,
        bands: bands.ok_or_else(|| missing("bands"))?,
        classes: classes.ok_or_else(|| missing("classes"))?,
        normalized,
    })
}

fn read_f32_le(path: &Path, count: usize) -> Result<Vec<f32>> {
    let mut file = fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    if bytes.len() != count * 4 {
        return Err(Error::Integrity(format!(
            "{}: expected {} bytes ({count} f32), found {}",
            path.display(),
            count * 4,
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

fn read_u16_le(path: &Path, count: usize) -> Result<Vec<u16>> {
    let mut file = fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    if bytes.len() != count * 2 {
        return Err(Error::Integrity(format!(
            "{}: expected {} bytes ({count} u16), found {}",
            path.display(),
            count * 2,
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes([c[0], c[1]]))
        .collect())
}

/// Load a dataset directory, validating shapes and value sanity.
///
/// Raw dirs are min-max scaled to [0,1] per band here; dirs marked
/// `normalized: true` are taken as-is.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<(HsiCube, GroundTruth)> {
    let dir = dir.as_ref();
    let header = parse_header(&dir.join("header"))?;
    let (h, w, b) = (header.height, header.width, header.bands);
    if h == 0 || w == 0 || b == 0 {
        return Err(Error::Integrity(format!(
            "degenerate dimensions {h}x{w}x{b}"
        )));
    }

    let raw = read_f32_le(&dir.join("cube.bin"), h * w * b)?;
    if let Some(bad) = raw.iter().find(|v| !v.is_finite()) {
        return Err(Error::Data(format!(
            "cube contains non-finite value {bad}"
        )));
    }
    let mut data = Array3::from_shape_vec((h, w, b), raw)
        .expect("shape checked against byte count");

    let labels_raw = read_u16_le(&dir.join("labels.bin"), h * w)?;
    let labels = Array2::from_shape_vec((h, w), labels_raw)
        .expect("shape checked against byte count");
    if let Some(&bad) = labels.iter().find(|&&l| l > header.classes) {
        return Err(Error::Label(format!(
            "label {bad} exceeds declared class count {}",
            header.classes
        )));
    }

    if !header.normalized {
        normalize_bands(&mut data);
    }

    Ok((
        HsiCube {
            data,
            name: header.name,
        },
        GroundTruth {
            labels,
            num_classes: header.classes,
        },
    ))
}

/// Min-max scale each band to [0,1] in place. Constant bands map to 0.
pub fn normalize_bands(data: &mut Array3<f32>) {
    let bands = data.shape()[2];
    for band in 0..bands {
        let mut lo = f32::INFINITY;
        let mut hi = f32::NEG_INFINITY;
        for &v in data.slice(ndarray::s![.., .., band]).iter() {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        let span = hi - lo;
        for v in data.slice_mut(ndarray::s![.., .., band]).iter_mut() {
            *v = if span > 0.0 { (*v - lo) / span } else { 0.0 };
        }
    }
}

/// Write a dataset directory. `normalized` records whether the values are
/// already in their final scale.
pub fn save_dataset(
    dir: impl AsRef<Path>,
    cube: &HsiCube,
    gt: &GroundTruth,
    normalized: bool,
) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let header = format!(
        "name: {}\nheight: {}\nwidth: {}\nbands: {}\nclasses: {}\ndtype: f32\nendianness: little\nnormalized: {}\n",
        cube.name,
        cube.height(),
        cube.width(),
        cube.bands(),
        gt.num_classes,
        normalized
    );
    fs::write(dir.join("header"), header)
        .map_err(|e| Error::io(dir.join("header").display().to_string(), e))?;

    let cube_path = dir.join("cube.bin");
    let mut f = fs::File::create(&cube_path)
        .map_err(|e| Error::io(cube_path.display().to_string(), e))?;
    let std_cube = cube
        .data
        .as_standard_layout();
    let mut bytes = Vec::with_capacity(std_cube.len() * 4);
    for &v in std_cube.iter() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    f.write_all(&bytes)
        .map_err(|e| Error::io(cube_path.display().to_string(), e))?;

    let labels_path = dir.join("labels.bin");
    let mut f = fs::File::create(&labels_path)
        .map_err(|e| Error::io(labels_path.display().to_string(), e))?;
    let std_labels = gt.labels.as_standard_layout();
    let mut bytes = Vec::with_capacity(std_labels.len() * 2);
    for &v in std_labels.iter() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    f.write_all(&bytes)
        .map_err(|e| Error::io(labels_path.display().to_string(), e))?;
    Ok(())
}

/// Metadata summary of a dataset directory without holding the cube.
pub fn inspect(dir: impl AsRef<Path>) -> Result<DatasetInfo> {
    let (cube, gt) = load_dataset(&dir)?;
    Ok(DatasetInfo {
        name: cube.name.clone(),
        height: cube.height(),
        width: cube.width(),
        bands: cube.bands(),
        num_classes: gt.num_classes,
        pixels: cube.height() * cube.width(),
        labeled_pixels: gt.labeled_count(),
    })
}

// ---------------------------------------------------------------------------
// Background removal and splits
// ---------------------------------------------------------------------------

/// Drop background (label 0) and flatten the rest to N x bands samples in
/// row-major grid order.
pub fn remove_background(cube: &HsiCube, gt: &GroundTruth) -> Result<LabeledPixelSet> {
    if cube.height() != gt.labels.shape()[0] || cube.width() != gt.labels.shape()[1] {
        return Err(Error::Integrity(format!(
            "cube {}x{} does not match labels {}x{}",
            cube.height(),
            cube.width(),
            gt.labels.shape()[0],
            gt.labels.shape()[1]
        )));
    }
    let n = gt.labeled_count();
    if n == 0 {
        return Err(Error::EmptyDataset(
            "ground truth has no nonzero labels".into(),
        ));
    }
    let bands = cube.bands();
    let mut samples = Array2::<f32>::zeros((n, bands));
    let mut labels = Vec::with_capacity(n);
    let mut coords = Vec::with_capacity(n);
    let mut row_idx = 0;
    for r in 0..cube.height() {
        for c in 0..cube.width() {
            let label = gt.labels[[r, c]];
            if label == 0 {
                continue;
            }
            samples
                .row_mut(row_idx)
                .assign(&cube.data.slice(ndarray::s![r, c, ..]));
            labels.push(label);
            coords.push((r as u32, c as u32));
            row_idx += 1;
        }
    }
    Ok(LabeledPixelSet {
        samples,
        labels,
        coords,
        num_classes: gt.num_classes,
    })
}

/// Index sets for one trial's split; a pure function of (seed, trial_index).
/// Indices come back sorted so subset order stays row-major.
pub fn split_indices(
    n: usize,
    spec: &SplitSpec,
    trial_index: usize,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 {
        return Err(Error::Split(format!("cannot split {n} samples")));
    }
    if !(spec.test_fraction > 0.0 && spec.test_fraction < 1.0) {
        return Err(Error::Split(format!(
            "test_fraction {} outside (0,1)",
            spec.test_fraction
        )));
    }
    if trial_index >= spec.num_trials {
        return Err(Error::Split(format!(
            "trial index {trial_index} out of range 0..{}",
            spec.num_trials
        )));
    }
    let n_test = (spec.test_fraction * n as f64).round() as usize;
    let n_test = n_test.clamp(1, n - 1);
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = seeds::rng(seeds::derive(spec.seed, "split", trial_index as u64));
    indices.shuffle(&mut rng);
    let mut test: Vec<usize> = indices[..n_test].to_vec();
    let mut train: Vec<usize> = indices[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    Ok((train, test))
}

/// One of T independent random train/test splits.
pub fn random_split(
    ds: &LabeledPixelSet,
    spec: &SplitSpec,
    trial_index: usize,
) -> Result<(LabeledPixelSet, LabeledPixelSet)> {
    let (train_idx, test_idx) = split_indices(ds.len(), spec, trial_index)?;
    Ok((ds.subset(&train_idx), ds.subset(&test_idx)))
}
