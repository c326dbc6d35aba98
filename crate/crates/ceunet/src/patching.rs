//! Patching strategies: exclusive / majority block downsampling and
//! center-pixel windows (CPC).
//!
//! Exclusive and majority tile the grid into non-overlapping n x n blocks and
//! shrink the dataset; CPC keeps every labeled pixel and attaches its n x n
//! neighborhood as input context.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array2, Array3, Array4};

use crate::error::{Error, Result};
use crate::hsi::{GroundTruth, HsiCube};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PatchMode {
    Exclusive,
    Majority,
    Cpc,
}

impl std::str::FromStr for PatchMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exclusive" => Ok(PatchMode::Exclusive),
            "majority" => Ok(PatchMode::Majority),
            "cpc" => Ok(PatchMode::Cpc),
            other => Err(Error::Config(format!("unknown patch mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PadPolicy {
    Zero,
    None,
}

#[derive(Debug, Clone, Copy)]
pub struct PatchConfig {
    pub n: usize,
    pub mode: PatchMode,
    pub pad_policy: PadPolicy,
}

impl PatchConfig {
    pub fn cpc(n: usize) -> Self {
        PatchConfig {
            n,
            mode: PatchMode::Cpc,
            pad_policy: PadPolicy::Zero,
        }
    }
}

/// One n x n x d window per labeled pixel, labeled by its center.
#[derive(Debug, Clone)]
pub struct PatchDataset {
    /// N x n x n x d.
    pub patches: Array4<f32>,
    pub labels: Vec<u16>,
    /// Center pixel (row, col) of each patch in the source grid.
    pub coords: Vec<(u32, u32)>,
    pub num_classes: u16,
}

impl PatchDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn patch_side(&self) -> usize {
        self.patches.shape()[1]
    }

    pub fn dim(&self) -> usize {
        self.patches.shape()[3]
    }

    pub fn subset(&self, indices: &[usize]) -> PatchDataset {
        let (n, d) = (self.patch_side(), self.dim());
        let mut patches = Array4::<f32>::zeros((indices.len(), n, n, d));
        let mut labels = Vec::with_capacity(indices.len());
        let mut coords = Vec::with_capacity(indices.len());
        for (row, &i) in indices.iter().enumerate() {
            patches
                .index_axis_mut(ndarray::Axis(0), row)
                .assign(&self.patches.index_axis(ndarray::Axis(0), i));
            labels.push(self.labels[i]);
            coords.push(self.coords[i]);
        }
        PatchDataset {
            patches,
            labels,
            coords,
            num_classes: self.num_classes,
        }
    }

    /// Spectra at the patch centers, N x d (what the clusterer routes on).
    pub fn center_spectra(&self) -> Array2<f32> {
        let c = self.patch_side() / 2;
        let n = self.len();
        let d = self.dim();
        let mut out = Array2::<f32>::zeros((n, d));
        for i in 0..n {
            out.row_mut(i)
                .assign(&self.patches.slice(ndarray::s![i, c, c, ..]));
        }
        out
    }
}

/// Center offset inside an n x n window: floor(n/2) on both axes.
pub fn center_offset(n: usize) -> usize {
    n / 2
}

/// Extract one center-pixel patch per labeled pixel, row-major.
pub fn extract_cpc(cube: &HsiCube, gt: &GroundTruth, cfg: &PatchConfig) -> Result<PatchDataset> {
    if cfg.mode != PatchMode::Cpc {
        return Err(Error::Config(format!("extract_cpc called with {:?}", cfg.mode)));
    }
    if cfg.n == 0 {
        return Err(Error::Config("patch side must be >= 1".into()));
    }
    let (h, w) = (cube.height(), cube.width());
    if h != gt.labels.shape()[0] || w != gt.labels.shape()[1] {
        return Err(Error::Integrity(format!(
            "cube {h}x{w} does not match labels {}x{}",
            gt.labels.shape()[0],
            gt.labels.shape()[1]
        )));
    }
    let n = cfg.n;
    let c = center_offset(n);
    let d = cube.bands();
    let count = gt.labeled_count();
    if count == 0 {
        return Err(Error::EmptyDataset("no labeled pixels to patch".into()));
    }

    let mut patches = Array4::<f32>::zeros((count, n, n, d));
    let mut labels = Vec::with_capacity(count);
    let mut coords = Vec::with_capacity(count);
    let mut out_idx = 0;
    for r in 0..h {
        for col in 0..w {
            let label = gt.labels[[r, col]];
            if label == 0 {
                continue;
            }
            for u in 0..n {
                for v in 0..n {
                    let sr = r as isize + u as isize - c as isize;
                    let sc = col as isize + v as isize - c as isize;
                    if sr < 0 || sc < 0 || sr >= h as isize || sc >= w as isize {
                        if cfg.pad_policy == PadPolicy::None {
                            return Err(Error::Boundary(format!(
                                "pixel ({r},{col}) needs out-of-bounds cell ({sr},{sc}) and padding is disabled"
                            )));
                        }
                        // zeros already in place
                        continue;
                    }
                    patches
                        .slice_mut(ndarray::s![out_idx, u, v, ..])
                        .assign(&cube.data.slice(ndarray::s![sr as usize, sc as usize, ..]));
                }
            }
            labels.push(label);
            coords.push((r as u32, col as u32));
            out_idx += 1;
        }
    }
    Ok(PatchDataset {
        patches,
        labels,
        coords,
        num_classes: gt.num_classes,
    })
}

/// CPC extraction for an explicit coordinate list, preserving its order.
/// Same window/padding semantics as [`extract_cpc`]; the trial loop uses this
/// to patch train/test subsets without materializing every labeled pixel.
pub fn extract_cpc_subset(
    cube: &HsiCube,
    coords: &[(u32, u32)],
    labels: &[u16],
    num_classes: u16,
    n: usize,
) -> Result<PatchDataset> {
    if n == 0 {
        return Err(Error::Config("patch side must be >= 1".into()));
    }
    if coords.len() != labels.len() {
        return Err(Error::Integrity(format!(
            "{} coords vs {} labels",
            coords.len(),
            labels.len()
        )));
    }
    let (h, w, d) = (cube.height(), cube.width(), cube.bands());
    let c = center_offset(n);
    let mut patches = Array4::<f32>::zeros((coords.len(), n, n, d));
    for (i, &(r, col)) in coords.iter().enumerate() {
        let (r, col) = (r as usize, col as usize);
        if r >= h || col >= w {
            return Err(Error::Integrity(format!(
                "coord ({r},{col}) outside {h}x{w} grid"
            )));
        }
        for u in 0..n {
            for v in 0..n {
                let sr = r as isize + u as isize - c as isize;
                let sc = col as isize + v as isize - c as isize;
                if sr < 0 || sc < 0 || sr >= h as isize || sc >= w as isize {
                    continue;
                }
                patches
                    .slice_mut(ndarray::s![i, u, v, ..])
                    .assign(&cube.data.slice(ndarray::s![sr as usize, sc as usize, ..]));
            }
        }
    }
    Ok(PatchDataset {
        patches,
        labels: labels.to_vec(),
        coords: coords.to_vec(),
        num_classes,
    })
}

fn block_mean(cube: &HsiCube, r0: usize, c0: usize, n: usize) -> Vec<f32> {
    let d = cube.bands();
    let mut mean = vec![0.0f64; d];
    for r in r0..r0 + n {
        for c in c0..c0 + n {
            for b in 0..d {
                mean[b] += f64::from(cube.data[[r, c, b]]);
            }
        }
    }
    let count = (n * n) as f64;
    mean.iter().map(|&s| (s / count) as f32).collect()
}

fn downsample(
    cube: &HsiCube,
    gt: &GroundTruth,
    cfg: &PatchConfig,
    label_rule: impl Fn(&[u16]) -> Option<u16>,
) -> Result<(HsiCube, GroundTruth)> {
    if cfg.n == 0 {
        return Err(Error::Config("block side must be >= 1".into()));
    }
    let (h, w) = (cube.height(), cube.width());
    if h != gt.labels.shape()[0] || w != gt.labels.shape()[1] {
        return Err(Error::Integrity("cube/labels shape mismatch".into()));
    }
    let n = cfg.n;
    let (oh, ow) = (h / n, w / n);
    if oh == 0 || ow == 0 {
        return Err(Error::EmptyDataset(format!(
            "{h}x{w} grid has no complete {n}x{n} block"
        )));
    }
    let d = cube.bands();
    let mut out = Array3::<f32>::zeros((oh, ow, d));
    let mut out_labels = Array2::<u16>::zeros((oh, ow));
    let mut survivors = 0usize;
    for br in 0..oh {
        for bc in 0..ow {
            let (r0, c0) = (br * n, bc * n);
            let mut block_labels = Vec::with_capacity(n * n);
            for r in r0..r0 + n {
                for c in c0..c0 + n {
                    block_labels.push(gt.labels[[r, c]]);
                }
            }
            let mean = block_mean(cube, r0, c0, n);
            for (b, &v) in mean.iter().enumerate() {
                out[[br, bc, b]] = v;
            }
            if let Some(label) = label_rule(&block_labels) {
                out_labels[[br, bc]] = label;
                survivors += 1;
            }
        }
    }
    if survivors == 0 {
        return Err(Error::EmptyDataset(
            "no block survived downsampling".into(),
        ));
    }
    Ok((
        HsiCube {
            data: out,
            name: format!("{}-{}x{}", cube.name, n, n),
        },
        GroundTruth {
            labels: out_labels,
            num_classes: gt.num_classes,
        },
    ))
}

/// Keep a block only when all n*n labels agree and are nonzero; the output
/// pixel is the blockwise mean spectrum with the shared label.
pub fn downsample_exclusive(
    cube: &HsiCube,
    gt: &GroundTruth,
    cfg: &PatchConfig,
) -> Result<(HsiCube, GroundTruth)> {
    if cfg.mode != PatchMode::Exclusive {
        return Err(Error::Config(format!(
            "downsample_exclusive called with {:?}",
            cfg.mode
        )));
    }
    downsample(cube, gt, cfg, |labels| {
        let first = labels[0];
        if first != 0 && labels.iter().all(|&l| l == first) {
            Some(first)
        } else {
            None
        }
    })
}

/// Label each block with its most frequent nonzero class (ties go to the
/// smallest class id); all-background blocks are dropped.
pub fn downsample_majority(
    cube: &HsiCube,
    gt: &GroundTruth,
    cfg: &PatchConfig,
) -> Result<(HsiCube, GroundTruth)> {
    if cfg.mode != PatchMode::Majority {
        return Err(Error::Config(format!(
            "downsample_majority called with {:?}",
            cfg.mode
        )));
    }
    downsample(cube, gt, cfg, majority_label)
}

fn majority_label(labels: &[u16]) -> Option<u16> {
    let mut counts = std::collections::BTreeMap::new();
    for &l in labels {
        if l != 0 {
            *counts.entry(l).or_insert(0usize) += 1;
        }
    }
    // BTreeMap iterates in ascending label order, so the first maximum is the
    // smallest class id
    counts
        .into_iter()
        .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
        .map(|(label, _)| label)
}

// ---------------------------------------------------------------------------
// Patch dataset persistence (same header + binary convention as datasets)
// ---------------------------------------------------------------------------

pub fn save_patches(dir: impl AsRef<Path>, ds: &PatchDataset, name: &str) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let header = format!(
        "name: {name}\nkind: patches\ncount: {}\npatch: {}\nbands: {}\nclasses: {}\ndtype: f32\nendianness: little\n",
        ds.len(),
        ds.patch_side(),
        ds.dim(),
        ds.num_classes
    );
    fs::write(dir.join("header"), header)
        .map_err(|e| Error::io(dir.join("header").display().to_string(), e))?;

    let write_bytes = |file: &str, bytes: Vec<u8>| -> Result<()> {
        let path = dir.join(file);
        fs::File::create(&path)
            .and_then(|mut f| f.write_all(&bytes))
            .map_err(|e| Error::io(path.display().to_string(), e))
    };

    let std_patches = ds.patches.as_standard_layout();
    let mut bytes = Vec::with_capacity(std_patches.len() * 4);
    for &v in std_patches.iter() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    write_bytes("patches.bin", bytes)?;

    let mut bytes = Vec::with_capacity(ds.labels.len() * 2);
    for &v in &ds.labels {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    write_bytes("labels.bin", bytes)?;

    let mut bytes = Vec::with_capacity(ds.coords.len() * 8);
    for &(r, c) in &ds.coords {
        bytes.extend_from_slice(&r.to_le_bytes());
        bytes.extend_from_slice(&c.to_le_bytes());
    }
    write_bytes("coords.bin", bytes)
}

pub fn load_patches(dir: impl AsRef<Path>) -> Result<PatchDataset> {
    let dir = dir.as_ref();
    let header_path = dir.join("header");
    let text = fs::read_to_string(&header_path)
        .map_err(|e| Error::io(header_path.display().to_string(), e))?;
    let mut count = None;
    let mut patch = None;
    let mut bands = None;
    let mut classes = None;
    for line in text.lines() {
        if let Some((key, value)) = line.split_once(':') {
            let value = value.trim();
            match key.trim() {
                "count" => count = value.parse().ok(),
                "patch" => patch = value.parse().ok(),
                "bands" => bands = value.parse().ok(),
                "classes" => classes = value.parse().ok(),
                _ => {}
            }
        }
    }
    let (count, patch, bands, classes): (usize, usize, usize, u16) =
        match (count, patch, bands, classes) {
            (Some(a), Some(b), Some(c), Some(d)) => (a, b, c, d),
            _ => {
                return Err(Error::Format {
                    path: header_path.display().to_string(),
                    msg: "missing count/patch/bands/classes".into(),
                })
            }
        };

    let read_all = |file: &str| -> Result<Vec<u8>> {
        let path = dir.join(file);
        let mut bytes = Vec::new();
        fs::File::open(&path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Ok(bytes)
    };

    let bytes = read_all("patches.bin")?;
    if bytes.len() != count * patch * patch * bands * 4 {
        return Err(Error::Integrity("patches.bin size mismatch".into()));
    }
    let values: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let patches = Array4::from_shape_vec((count, patch, patch, bands), values)
        .expect("shape checked against byte count");

    let bytes = read_all("labels.bin")?;
    if bytes.len() != count * 2 {
        return Err(Error::Integrity("labels.bin size mismatch".into()));
    }
    let labels: Vec<u16> = bytes
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes([c[0], c[1]]))
        .collect();

    let bytes = read_all("coords.bin")?;
    if bytes.len() != count * 8 {
        return Err(Error::Integrity("coords.bin size mismatch".into()));
    }
    let coords: Vec<(u32, u32)> = bytes
        .chunks_exact(8)
        .map(|c| {
            (
                u32::from_le_bytes([c[0], c[1], c[2], c[3]]),
                u32::from_le_bytes([c[4], c[5], c[6], c[7]]),
            )
        })
        .collect();

    Ok(PatchDataset {
        patches,
        labels,
        coords,
        num_classes: classes,
    })
}
