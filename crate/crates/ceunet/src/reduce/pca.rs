//! Principal component analysis over pixel spectra.
//!
//! Fit: eigendecomposition of the (N-1)-normalized covariance of the centered
//! training spectra. Component rows are orthonormal, ordered by decreasing
//! explained variance, and sign-fixed so each row's largest-magnitude entry
//! is positive (stable across linear-algebra backends).

use std::fs;
use std::io::Read;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView2};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct PcaModel {
    /// Per-band mean of the training spectra, length B.
    pub mean: Array1<f64>,
    /// [d, B], rows orthonormal.
    pub components: Array2<f64>,
    /// Eigenvalues of the covariance for the kept components, non-increasing.
    pub explained_variance: Vec<f64>,
}

/// Covariance of the centered samples with the (N-1) normalization.
fn covariance(samples: ArrayView2<'_, f32>, mean: &Array1<f64>) -> DMatrix<f64> {
    let (n, b) = (samples.shape()[0], samples.shape()[1]);
    let mut cov = DMatrix::<f64>::zeros(b, b);
    let mut centered = vec![0.0f64; b];
    for row in samples.rows() {
        for (j, &v) in row.iter().enumerate() {
            centered[j] = f64::from(v) - mean[j];
        }
        for r in 0..b {
            let cr = centered[r];
            for c in r..b {
                cov[(r, c)] += cr * centered[c];
            }
        }
    }
    let norm = (n - 1) as f64;
    for r in 0..b {
        for c in r..b {
            let v = cov[(r, c)] / norm;
            cov[(r, c)] = v;
            cov[(c, r)] = v;
        }
    }
    cov
}

pub fn pca_fit(samples: ArrayView2<'_, f32>, d: usize) -> Result<PcaModel> {
    let (n, b) = (samples.shape()[0], samples.shape()[1]);
    if d == 0 || d > b {
        return Err(Error::dimension(
            format!("1..={b} components"),
            format!("{d}"),
        ));
    }
    if n < 2 {
        return Err(Error::dimension("at least 2 samples", format!("{n}")));
    }

    let mut mean = Array1::<f64>::zeros(b);
    for row in samples.rows() {
        for (j, &v) in row.iter().enumerate() {
            mean[j] += f64::from(v);
        }
    }
    mean.mapv_inplace(|v| v / n as f64);

    let cov = covariance(samples, &mean);
    let eigen = SymmetricEigen::new(cov);

    // order eigenpairs by decreasing eigenvalue
    let mut order: Vec<usize> = (0..b).collect();
    order.sort_by(|&i, &j| {
        eigen.eigenvalues[j]
            .partial_cmp(&eigen.eigenvalues[i])
            .expect("finite eigenvalues")
    });

    let mut components = Array2::<f64>::zeros((d, b));
    let mut explained_variance = Vec::with_capacity(d);
    for (row, &idx) in order.iter().take(d).enumerate() {
        explained_variance.push(eigen.eigenvalues[idx].max(0.0));
        let col = eigen.eigenvectors.column(idx);
        // sign fix: largest-magnitude entry positive
        let mut flip = 1.0;
        let mut best = 0.0f64;
        for &v in col.iter() {
            if v.abs() > best {
                best = v.abs();
                flip = if v < 0.0 { -1.0 } else { 1.0 };
            }
        }
        for (c, &v) in col.iter().enumerate() {
            components[[row, c]] = flip * v;
        }
    }

    Ok(PcaModel {
        mean,
        components,
        explained_variance,
    })
}

impl PcaModel {
    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn output_dim(&self) -> usize {
        self.components.shape()[0]
    }

    /// Project spectra: components . (x - mean).
    pub fn transform(&self, samples: ArrayView2<'_, f32>) -> Result<Array2<f32>> {
        let b = self.input_dim();
        if samples.shape()[1] != b {
            return Err(Error::dimension(
                format!("{b} features"),
                format!("{} features", samples.shape()[1]),
            ));
        }
        let d = self.output_dim();
        let n = samples.shape()[0];
        let mut out = Array2::<f32>::zeros((n, d));
        let mut centered = vec![0.0f64; b];
        for (i, row) in samples.rows().into_iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                centered[j] = f64::from(v) - self.mean[j];
            }
            for r in 0..d {
                let mut acc = 0.0;
                for c in 0..b {
                    acc += self.components[[r, c]] * centered[c];
                }
                out[[i, r]] = acc as f32;
            }
        }
        Ok(out)
    }

    /// Map reduced coordinates back to spectra: mean + y . components.
    pub fn inverse_transform(&self, reduced: ArrayView2<'_, f32>) -> Result<Array2<f32>> {
        let d = self.output_dim();
        if reduced.shape()[1] != d {
            return Err(Error::dimension(
                format!("{d} features"),
                format!("{} features", reduced.shape()[1]),
            ));
        }
        let b = self.input_dim();
        let n = reduced.shape()[0];
        let mut out = Array2::<f32>::zeros((n, b));
        for (i, row) in reduced.rows().into_iter().enumerate() {
            for c in 0..b {
                let mut acc = self.mean[c];
                for r in 0..d {
                    acc += f64::from(row[r]) * self.components[[r, c]];
                }
                out[[i, c]] = acc as f32;
            }
        }
        Ok(out)
    }

    /// Mean squared reconstruction error over all entries.
    pub fn reconstruction_mse(&self, samples: ArrayView2<'_, f32>) -> Result<f64> {
        let reduced = self.transform(samples)?;
        let back = self.inverse_transform(reduced.view())?;
        let mut acc = 0.0f64;
        for (a, b) in samples.iter().zip(back.iter()) {
            let d = f64::from(a - b);
            acc += d * d;
        }
        Ok(acc / samples.len() as f64)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                fs::create_dir_all(parent)
                    .map_err(|e| Error::io(parent.display().to_string(), e))?;
            }
        }
        let mut buf = Vec::new();
        buf.extend_from_slice(
            format!(
                "CEUNET-PCA v1\nbands: {}\ncomponents: {}\n---\n",
                self.input_dim(),
                self.output_dim()
            )
            .as_bytes(),
        );
        for &v in self.mean.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for &v in self.components.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for &v in &self.explained_variance {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(path, buf).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<PcaModel> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let marker = b"---\n";
        let split = bytes
            .windows(marker.len())
            .position(|w| w == marker)
            .ok_or_else(|| Error::Format {
                path: path.display().to_string(),
                msg: "missing header terminator".into(),
            })?;
        let header = std::str::from_utf8(&bytes[..split]).unwrap_or("");
        if !header.starts_with("CEUNET-PCA v1") {
            return Err(Error::Format {
                path: path.display().to_string(),
                msg: "not a v1 pca model".into(),
            });
        }
        let mut bands = None;
        let mut comps = None;
        for line in header.lines().skip(1) {
            if let Some((k, v)) = line.split_once(':') {
                match k.trim() {
                    "bands" => bands = v.trim().parse().ok(),
                    "components" => comps = v.trim().parse().ok(),
                    _ => {}
                }
            }
        }
        let (b, d): (usize, usize) = match (bands, comps) {
            (Some(b), Some(d)) => (b, d),
            _ => {
                return Err(Error::Format {
                    path: path.display().to_string(),
                    msg: "missing bands/components".into(),
                })
            }
        };
        let mut cursor = split + marker.len();
        let mut next = || -> Result<f64> {
            if cursor + 8 > bytes.len() {
                return Err(Error::Format {
                    path: path.display().to_string(),
                    msg: "payload truncated".into(),
                });
            }
            let mut raw = [0u8; 8];
            raw.copy_from_slice(&bytes[cursor..cursor + 8]);
            cursor += 8;
            Ok(f64::from_le_bytes(raw))
        };
        let mut mean = Array1::<f64>::zeros(b);
        for v in mean.iter_mut() {
            *v = next()?;
        }
        let mut components = Array2::<f64>::zeros((d, b));
        for v in components.iter_mut() {
            *v = next()?;
        }
        let mut explained_variance = vec![0.0; d];
        for v in explained_variance.iter_mut() {
            *v = next()?;
        }
        Ok(PcaModel {
            mean,
            components,
            explained_variance,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds;
    use rand::Rng;

    fn random_matrix(n: usize, b: usize, seed: u64) -> Array2<f32> {
        let mut rng = seeds::rng(seed);
        Array2::from_shape_fn((n, b), |_| rng.random_range(-1.0..1.0f32))
    }

    /// Jacobi eigenvalue sweep; the independent oracle for symmetric matrices.
    fn jacobi_eigen(mut a: Array2<f64>) -> (Vec<f64>, Array2<f64>) {
        let n = a.shape()[0];
        let mut v = Array2::<f64>::eye(n);
        for _sweep in 0..100 {
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
        let eigenvalues: Vec<f64> = (0..n).map(|i| a[[i, i]]).collect();
        (eigenvalues, v) // columns of v are eigenvectors
    }

    fn oracle_pca(samples: &Array2<f32>, d: usize) -> (Vec<f64>, Array2<f64>) {
        let (n, b) = (samples.shape()[0], samples.shape()[1]);
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
        let mut top = Array2::<f64>::zeros((d, b));
        let mut top_vals = Vec::with_capacity(d);
        for (row, &idx) in order.iter().take(d).enumerate() {
            top_vals.push(vals[idx]);
            for c in 0..b {
                top[[row, c]] = vecs[[c, idx]];
            }
        }
        (top_vals, top)
    }

    #[test]
    fn matches_jacobi_oracle_up_to_sign() {
        for (n, b, d, seed) in [(50, 8, 3, 1u64), (100, 16, 5, 2), (40, 12, 12, 3)] {
            let samples = random_matrix(n, b, seed);
            let model = pca_fit(samples.view(), d).unwrap();
            let (oracle_vals, oracle_vecs) = oracle_pca(&samples, d);
            for r in 0..d {
                assert!(
                    (model.explained_variance[r] - oracle_vals[r]).abs() < 1e-6,
                    "eigenvalue {r}: {} vs {}",
                    model.explained_variance[r],
                    oracle_vals[r]
                );
                // match up to sign
                let dot: f64 = (0..b)
                    .map(|c| model.components[[r, c]] * oracle_vecs[[r, c]])
                    .sum();
                for c in 0..b {
                    let expect = oracle_vecs[[r, c]] * dot.signum();
                    assert!(
                        (model.components[[r, c]] - expect).abs() < 1e-6,
                        "component [{r},{c}]"
                    );
                }
            }
        }
    }

    #[test]
    fn rank_one_data_explains_everything() {
        let mut samples = Array2::<f32>::zeros((40, 3));
        let mut rng = seeds::rng(4);
        for mut row in samples.rows_mut() {
            let t: f32 = rng.random_range(-2.0..2.0);
            row[0] = t;
            row[1] = 2.0 * t;
            row[2] = -t;
        }
        let model = pca_fit(samples.view(), 3).unwrap();
        let total: f64 = model.explained_variance.iter().sum();
        assert!(model.explained_variance[0] / total > 0.999999);
    }

    #[test]
    fn full_basis_reconstructs_exactly() {
        let samples = random_matrix(30, 6, 5);
        let model = pca_fit(samples.view(), 6).unwrap();
        let mse = model.reconstruction_mse(samples.view()).unwrap();
        assert!(mse < 1e-10, "mse {mse}");
    }

    #[test]
    fn rows_are_orthonormal() {
        let samples = random_matrix(60, 10, 6);
        let model = pca_fit(samples.view(), 4).unwrap();
        for r1 in 0..4 {
            for r2 in 0..4 {
                let dot: f64 = (0..10)
                    .map(|c| model.components[[r1, c]] * model.components[[r2, c]])
                    .sum();
                let expect = if r1 == r2 { 1.0 } else { 0.0 };
                assert!((dot - expect).abs() < 1e-6, "rows {r1},{r2}: {dot}");
            }
        }
    }

    #[test]
    fn explained_variance_non_increasing_and_mse_monotone() {
        let samples = random_matrix(80, 12, 7);
        let mut last_mse = f64::INFINITY;
        for d in 1..=12 {
            let model = pca_fit(samples.view(), d).unwrap();
            for w in model.explained_variance.windows(2) {
                assert!(w[1] <= w[0] + 1e-12);
            }
            let mse = model.reconstruction_mse(samples.view()).unwrap();
            assert!(
                mse <= last_mse + 1e-9,
                "reconstruction error rose at d={d}: {last_mse} -> {mse}"
            );
            last_mse = mse;
        }
    }

    #[test]
    fn transform_of_mean_is_zero() {
        let samples = random_matrix(25, 5, 8);
        let model = pca_fit(samples.view(), 3).unwrap();
        let mean_row = Array2::from_shape_fn((1, 5), |(_, j)| model.mean[j] as f32);
        let out = model.transform(mean_row.view()).unwrap();
        for &v in out.iter() {
            assert!(v.abs() < 1e-5, "got {v}");
        }
    }

    #[test]
    fn unit_step_along_first_component() {
        let samples = random_matrix(50, 6, 9);
        let model = pca_fit(samples.view(), 3).unwrap();
        // x = mean + 1.0 * component_0 -> transform = (1, 0, 0)
        let x = Array2::from_shape_fn((1, 6), |(_, j)| {
            (model.mean[j] + model.components[[0, j]]) as f32
        });
        let out = model.transform(x.view()).unwrap();
        assert!((out[[0, 0]] - 1.0).abs() < 1e-5);
        assert!(out[[0, 1]].abs() < 1e-5);
        assert!(out[[0, 2]].abs() < 1e-5);
    }

    #[test]
    fn rejects_bad_dimensions() {
        let samples = random_matrix(10, 4, 10);
        assert!(matches!(
            pca_fit(samples.view(), 5),
            Err(Error::Dimension { .. })
        ));
        assert!(matches!(
            pca_fit(samples.view(), 0),
            Err(Error::Dimension { .. })
        ));
        let one = random_matrix(1, 4, 11);
        assert!(matches!(
            pca_fit(one.view(), 2),
            Err(Error::Dimension { .. })
        ));
        let model = pca_fit(samples.view(), 2).unwrap();
        let wrong = random_matrix(3, 7, 12);
        assert!(matches!(
            model.transform(wrong.view()),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn fit_is_deterministic() {
        let samples = random_matrix(40, 8, 13);
        let a = pca_fit(samples.view(), 4).unwrap();
        let b = pca_fit(samples.view(), 4).unwrap();
        assert_eq!(a.components, b.components);
        assert_eq!(a.explained_variance, b.explained_variance);
    }

    #[test]
    fn model_round_trip() {
        let samples = random_matrix(30, 6, 14);
        let model = pca_fit(samples.view(), 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pca.bin");
        model.save(&path).unwrap();
        let back = PcaModel::load(&path).unwrap();
        assert_eq!(model.components, back.components);
        assert_eq!(model.mean, back.mean);
        let ta = model.transform(samples.view()).unwrap();
        let tb = back.transform(samples.view()).unwrap();
        assert_eq!(ta, tb);
    }
}
