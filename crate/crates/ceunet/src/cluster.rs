//! Unsupervised spectral clustering: k-means++ (Lloyd with restarts) and
//! Gaussian mixtures fitted by EM, initialized from a k-means run.
//!
//! Clustering sees spectra only; labels never enter this module, which is
//! what lets the ensemble route test pixels it has no labels for.

use std::fs;
use std::io::Read;
use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector};
use ndarray::{Array2, ArrayView2};
use rand::Rng;

use crate::error::{Error, Result};
use crate::seeds;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClusterMethod {
    KMeans,
    Gmm,
}

impl std::str::FromStr for ClusterMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kmeans" => Ok(ClusterMethod::KMeans),
            "gmm" => Ok(ClusterMethod::Gmm),
            other => Err(Error::Config(format!("unknown cluster method `{other}`"))),
        }
    }
}

impl std::fmt::Display for ClusterMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ClusterMethod::KMeans => write!(f, "kmeans"),
            ClusterMethod::Gmm => write!(f, "gmm"),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ClusterSpec {
    pub method: ClusterMethod,
    pub k: usize,
    pub seed: u64,
    /// k-means restarts; the lowest-inertia run wins.
    pub restarts: usize,
    pub max_iter: usize,
}

impl ClusterSpec {
    pub fn new(method: ClusterMethod, k: usize, seed: u64) -> Self {
        ClusterSpec {
            method,
            k,
            seed,
            restarts: 10,
            max_iter: if matches!(method, ClusterMethod::KMeans) {
                300
            } else {
                100
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct KMeansModel {
    /// [k, d]
    pub centroids: Array2<f64>,
    /// Final within-cluster sum of squares.
    pub inertia: f64,
    /// Inertia after each assignment step of the winning restart.
    pub inertia_trace: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct GmmModel {
    /// [k, d]
    pub means: Array2<f64>,
    pub covariances: Vec<Array2<f64>>,
    pub mixing_weights: Vec<f64>,
    /// Total log-likelihood after each EM iteration.
    pub log_likelihood_trace: Vec<f64>,
}

#[derive(Debug, Clone)]
pub enum ClusterModel {
    KMeans(KMeansModel),
    Gmm(GmmModel),
}

impl ClusterModel {
    pub fn k(&self) -> usize {
        match self {
            ClusterModel::KMeans(m) => m.centroids.shape()[0],
            ClusterModel::Gmm(m) => m.means.shape()[0],
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            ClusterModel::KMeans(m) => m.centroids.shape()[1],
            ClusterModel::Gmm(m) => m.means.shape()[1],
        }
    }

    pub fn method(&self) -> ClusterMethod {
        match self {
            ClusterModel::KMeans(_) => ClusterMethod::KMeans,
            ClusterModel::Gmm(_) => ClusterMethod::Gmm,
        }
    }

    /// Route samples: nearest centroid (k-means) or maximum posterior
    /// responsibility (GMM). Ties go to the smallest cluster index.
    pub fn assign(&self, samples: ArrayView2<'_, f32>) -> Result<Vec<usize>> {
        if samples.shape()[1] != self.dim() {
            return Err(Error::dimension(
                format!("{} features", self.dim()),
                format!("{} features", samples.shape()[1]),
            ));
        }
        match self {
            ClusterModel::KMeans(m) => Ok(samples
                .rows()
                .into_iter()
                .map(|row| nearest_centroid(&row_to_f64(&row), &m.centroids).0)
                .collect()),
            ClusterModel::Gmm(m) => {
                let comps = GmmComponents::prepare(m)?;
                Ok(samples
                    .rows()
                    .into_iter()
                    .map(|row| comps.argmax_posterior(&row_to_f64(&row)))
                    .collect())
            }
        }
    }

    // -- persistence ---------------------------------------------------------

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                fs::create_dir_all(parent)
                    .map_err(|e| Error::io(parent.display().to_string(), e))?;
            }
        }
        let mut buf = Vec::new();
        let (method, k, d) = (self.method(), self.k(), self.dim());
        buf.extend_from_slice(
            format!("CEUNET-CLUSTER v1\nmethod: {method}\nk: {k}\ndim: {d}\n---\n").as_bytes(),
        );
        let mut push = |v: f64| buf.extend_from_slice(&v.to_le_bytes());
        match self {
            ClusterModel::KMeans(m) => {
                for &v in m.centroids.iter() {
                    push(v);
                }
            }
            ClusterModel::Gmm(m) => {
                for &v in m.means.iter() {
                    push(v);
                }
                for cov in &m.covariances {
                    for &v in cov.iter() {
                        push(v);
                    }
                }
                for &v in &m.mixing_weights {
                    push(v);
                }
            }
        }
        fs::write(path, buf).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<ClusterModel> {
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
        if !header.starts_with("CEUNET-CLUSTER v1") {
            return Err(Error::Format {
                path: path.display().to_string(),
                msg: "not a v1 cluster checkpoint".into(),
            });
        }
        let mut method = None;
        let mut k = None;
        let mut dim = None;
        for line in header.lines().skip(1) {
            if let Some((key, value)) = line.split_once(':') {
                match key.trim() {
                    "method" => method = Some(value.trim().to_string()),
                    "k" => k = value.trim().parse().ok(),
                    "dim" => dim = value.trim().parse().ok(),
                    _ => {}
                }
            }
        }
        let (method, k, dim): (String, usize, usize) = match (method, k, dim) {
            (Some(m), Some(k), Some(d)) => (m, k, d),
            _ => {
                return Err(Error::Format {
                    path: path.display().to_string(),
                    msg: "missing method/k/dim".into(),
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
            let mut b = [0u8; 8];
            b.copy_from_slice(&bytes[cursor..cursor + 8]);
            cursor += 8;
            Ok(f64::from_le_bytes(b))
        };
        match method.as_str() {
            "kmeans" => {
                let mut centroids = Array2::<f64>::zeros((k, dim));
                for v in centroids.iter_mut() {
                    *v = next()?;
                }
                Ok(ClusterModel::KMeans(KMeansModel {
                    centroids,
                    inertia: f64::NAN,
                    inertia_trace: Vec::new(),
                }))
            }
            "gmm" => {
                let mut means = Array2::<f64>::zeros((k, dim));
                for v in means.iter_mut() {
                    *v = next()?;
                }
                let mut covariances = Vec::with_capacity(k);
                for _ in 0..k {
                    let mut cov = Array2::<f64>::zeros((dim, dim));
                    for v in cov.iter_mut() {
                        *v = next()?;
                    }
                    covariances.push(cov);
                }
                let mut mixing_weights = vec![0.0; k];
                for v in mixing_weights.iter_mut() {
                    *v = next()?;
                }
                Ok(ClusterModel::Gmm(GmmModel {
                    means,
                    covariances,
                    mixing_weights,
                    log_likelihood_trace: Vec::new(),
                }))
            }
            other => Err(Error::Format {
                path: path.display().to_string(),
                msg: format!("unknown method `{other}`"),
            }),
        }
    }
}

fn row_to_f64(row: &ndarray::ArrayView1<'_, f32>) -> Vec<f64> {
    row.iter().map(|&v| f64::from(v)).collect()
}

fn sq_dist(a: &[f64], b: ndarray::ArrayView1<'_, f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum()
}

/// (index, squared distance) of the nearest centroid; strict `<` keeps the
/// smallest index on ties.
fn nearest_centroid(point: &[f64], centroids: &Array2<f64>) -> (usize, f64) {
    let mut best = 0usize;
    let mut best_d = f64::INFINITY;
    for (j, c) in centroids.rows().into_iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best_d {
            best_d = d;
            best = j;
        }
    }
    (best, best_d)
}

/// Fit the requested clusterer on raw spectra.
pub fn fit(samples: ArrayView2<'_, f32>, spec: &ClusterSpec) -> Result<ClusterModel> {
    let n = samples.shape()[0];
    if spec.k == 0 {
        return Err(Error::Clustering("k must be >= 1".into()));
    }
    if spec.k > n {
        return Err(Error::Clustering(format!(
            "k = {} exceeds sample count {n}",
            spec.k
        )));
    }
    let data = samples.mapv(f64::from);
    match spec.method {
        ClusterMethod::KMeans => Ok(ClusterModel::KMeans(fit_kmeans(&data, spec)?)),
        ClusterMethod::Gmm => Ok(ClusterModel::Gmm(fit_gmm(&data, spec)?)),
    }
}

// ---------------------------------------------------------------------------
// k-means++
// ---------------------------------------------------------------------------

/// D^2-weighted seeding (k-means++), then Lloyd iterations.
fn kmeans_once(data: &Array2<f64>, k: usize, max_iter: usize, seed: u64) -> KMeansModel {
    let n = data.shape()[0];
    let d = data.shape()[1];
    let mut rng = seeds::rng(seed);

    // seeding
    let mut centroids = Array2::<f64>::zeros((k, d));
    let first = rng.random_range(0..n);
    centroids.row_mut(0).assign(&data.row(first));
    let mut min_d2 = vec![0.0f64; n];
    for (i, row) in data.rows().into_iter().enumerate() {
        min_d2[i] = sq_dist(row.as_slice().unwrap(), centroids.row(0));
    }
    for next in 1..k {
        let total: f64 = min_d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in min_d2.iter().enumerate() {
                target -= w;
                if target <= 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..n) // every point already coincides with a centroid
        };
        centroids.row_mut(next).assign(&data.row(pick));
        for (i, row) in data.rows().into_iter().enumerate() {
            let dist = sq_dist(row.as_slice().unwrap(), centroids.row(next));
            if dist < min_d2[i] {
                min_d2[i] = dist;
            }
        }
    }

    // Lloyd
    let mut assignment = vec![0usize; n];
    let mut inertia_trace: Vec<f64> = Vec::new();
    let mut inertia = f64::INFINITY;
    for iter in 0..max_iter {
        let mut new_inertia = 0.0;
        let mut changed = false;
        for (i, row) in data.rows().into_iter().enumerate() {
            let (j, dist) = nearest_centroid(row.as_slice().unwrap(), &centroids);
            if assignment[i] != j {
                changed = true;
                assignment[i] = j;
            }
            new_inertia += dist;
        }
        inertia_trace.push(new_inertia);
        inertia = new_inertia;
        if !changed && iter > 0 {
            break;
        }

        // update step; an empty cluster steals the point farthest from its
        // assigned centroid (an empty centroid contributes nothing to the
        // objective, so the trace stays monotone)
        let mut sums = Array2::<f64>::zeros((k, d));
        let mut counts = vec![0usize; k];
        for (i, row) in data.rows().into_iter().enumerate() {
            let j = assignment[i];
            let mut target = sums.row_mut(j);
            target += &row;
            counts[j] += 1;
        }
        for j in 0..k {
            if counts[j] > 0 {
                let c = counts[j] as f64;
                let mut row = centroids.row_mut(j);
                row.assign(&sums.row(j));
                row.mapv_inplace(|v| v / c);
            } else {
                let mut far_i = 0;
                let mut far_d = -1.0;
                for (i, row) in data.rows().into_iter().enumerate() {
                    let dist = sq_dist(row.as_slice().unwrap(), centroids.row(assignment[i]));
                    if dist > far_d {
                        far_d = dist;
                        far_i = i;
                    }
                }
                centroids.row_mut(j).assign(&data.row(far_i));
            }
        }
    }

    KMeansModel {
        centroids,
        inertia,
        inertia_trace,
    }
}

fn fit_kmeans(data: &Array2<f64>, spec: &ClusterSpec) -> Result<KMeansModel> {
    let restarts = spec.restarts.max(1);
    let mut best: Option<KMeansModel> = None;
    for r in 0..restarts {
        let model = kmeans_once(
            data,
            spec.k,
            spec.max_iter,
            seeds::derive(spec.seed, "kmeans", r as u64),
        );
        if best.as_ref().is_none_or(|b| model.inertia < b.inertia) {
            best = Some(model);
        }
    }
    Ok(best.expect("at least one restart"))
}

// ---------------------------------------------------------------------------
// Gaussian mixture via EM
// ---------------------------------------------------------------------------

const COV_REG: f64 = 1e-6;

/// Cached Cholesky factors for density evaluation.
struct GmmComponents {
    means: Array2<f64>,
    factors: Vec<Cholesky<f64, nalgebra::Dyn>>,
    log_det: Vec<f64>,
    log_weights: Vec<f64>,
    dim: usize,
}

impl GmmComponents {
    fn prepare(model: &GmmModel) -> Result<GmmComponents> {
        let d = model.means.shape()[1];
        let mut factors = Vec::new();
        let mut log_det = Vec::new();
        for cov in &model.covariances {
            let m = DMatrix::from_fn(d, d, |r, c| cov[[r, c]]);
            let chol = cholesky_regularized(m)?;
            let det = chol
                .l_dirty()
                .diagonal()
                .iter()
                .map(|&v| 2.0 * v.ln())
                .sum();
            factors.push(chol);
            log_det.push(det);
        }
        Ok(GmmComponents {
            means: model.means.clone(),
            factors,
            log_det,
            log_weights: model
                .mixing_weights
                .iter()
                .map(|&w| w.max(1e-300).ln())
                .collect(),
            dim: d,
        })
    }

    /// log N(x | mu_j, Sigma_j)
    fn log_pdf(&self, j: usize, x: &[f64]) -> f64 {
        let d = self.dim;
        let diff = DVector::from_fn(d, |i, _| x[i] - self.means[[j, i]]);
        let solved = self.factors[j]
            .l_dirty()
            .solve_lower_triangular(&diff)
            .expect("cholesky factor is invertible");
        let maha: f64 = solved.iter().map(|&v| v * v).sum();
        -0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + self.log_det[j] + maha)
    }

    fn argmax_posterior(&self, x: &[f64]) -> usize {
        let mut best = 0usize;
        let mut best_v = f64::NEG_INFINITY;
        for j in 0..self.factors.len() {
            let v = self.log_weights[j] + self.log_pdf(j, x);
            if v > best_v {
                best_v = v;
                best = j;
            }
        }
        best
    }
}

fn cholesky_regularized(mut m: DMatrix<f64>) -> Result<Cholesky<f64, nalgebra::Dyn>> {
    let d = m.nrows();
    let mut bump = 0.0;
    for _ in 0..8 {
        if bump > 0.0 {
            for i in 0..d {
                m[(i, i)] += bump;
            }
        }
        match Cholesky::new(m.clone()) {
            Some(c) => return Ok(c),
            None => bump = if bump == 0.0 { COV_REG } else { bump * 10.0 },
        }
    }
    Err(Error::Clustering(
        "covariance not positive definite after regularization".into(),
    ))
}

fn fit_gmm(data: &Array2<f64>, spec: &ClusterSpec) -> Result<GmmModel> {
    let (n, d) = (data.shape()[0], data.shape()[1]);
    let k = spec.k;

    // initialize from a k-means run
    let km = fit_kmeans(
        data,
        &ClusterSpec {
            method: ClusterMethod::KMeans,
            k,
            seed: seeds::derive(spec.seed, "gmm-init", 0),
            restarts: spec.restarts,
            max_iter: 100,
        },
    )?;
    let assignment: Vec<usize> = data
        .rows()
        .into_iter()
        .map(|row| nearest_centroid(row.as_slice().unwrap(), &km.centroids).0)
        .collect();

    let mut means = km.centroids.clone();
    let mut weights = vec![0.0f64; k];
    for &j in &assignment {
        weights[j] += 1.0;
    }

    // global covariance backs starved components
    let global_mean: Vec<f64> = (0..d)
        .map(|c| data.column(c).mean().unwrap_or(0.0))
        .collect();
    let mut global_cov = Array2::<f64>::zeros((d, d));
    for row in data.rows() {
        for r in 0..d {
            let dr = row[r] - global_mean[r];
            for c in 0..d {
                global_cov[[r, c]] += dr * (row[c] - global_mean[c]);
            }
        }
    }
    global_cov.mapv_inplace(|v| v / n as f64);
    for i in 0..d {
        global_cov[[i, i]] += COV_REG;
    }

    let mut covariances: Vec<Array2<f64>> = Vec::with_capacity(k);
    for j in 0..k {
        if weights[j] < 2.0 {
            covariances.push(global_cov.clone());
            continue;
        }
        let mut cov = Array2::<f64>::zeros((d, d));
        for (i, row) in data.rows().into_iter().enumerate() {
            if assignment[i] != j {
                continue;
            }
            for r in 0..d {
                let dr = row[r] - means[[j, r]];
                for c in 0..d {
                    cov[[r, c]] += dr * (row[c] - means[[j, c]]);
                }
            }
        }
        cov.mapv_inplace(|v| v / weights[j]);
        for i in 0..d {
            cov[[i, i]] += COV_REG;
        }
        covariances.push(cov);
    }
    let total: f64 = weights.iter().sum();
    for w in weights.iter_mut() {
        *w = (*w / total).max(1e-12);
    }
    let wsum: f64 = weights.iter().sum();
    for w in weights.iter_mut() {
        *w /= wsum;
    }

    // EM
    let mut trace: Vec<f64> = Vec::new();
    let mut resp = Array2::<f64>::zeros((n, k));
    for _ in 0..spec.max_iter {
        // E step
        let snapshot = GmmModel {
            means: means.clone(),
            covariances: covariances.clone(),
            mixing_weights: weights.clone(),
            log_likelihood_trace: Vec::new(),
        };
        let comps = GmmComponents::prepare(&snapshot)?;
        let mut loglik = 0.0;
        for (i, row) in data.rows().into_iter().enumerate() {
            let x = row.as_slice().unwrap();
            let mut logp = vec![0.0f64; k];
            let mut max = f64::NEG_INFINITY;
            for (j, lp) in logp.iter_mut().enumerate() {
                *lp = comps.log_weights[j] + comps.log_pdf(j, x);
                max = max.max(*lp);
            }
            let lse = max + logp.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
            loglik += lse;
            for j in 0..k {
                resp[[i, j]] = (logp[j] - lse).exp();
            }
        }
        let improved = trace
            .last()
            .map(|&prev| loglik - prev)
            .unwrap_or(f64::INFINITY);
        trace.push(loglik);
        if improved.abs() < 1e-7 * loglik.abs().max(1.0) {
            break;
        }

        // M step
        for j in 0..k {
            let nk: f64 = resp.column(j).sum();
            if nk < 1e-10 {
                continue; // starved component keeps its parameters
            }
            weights[j] = nk / n as f64;
            for c in 0..d {
                let mut acc = 0.0;
                for (i, row) in data.rows().into_iter().enumerate() {
                    acc += resp[[i, j]] * row[c];
                }
                means[[j, c]] = acc / nk;
            }
            let mut cov = Array2::<f64>::zeros((d, d));
            for (i, row) in data.rows().into_iter().enumerate() {
                let r_ij = resp[[i, j]];
                if r_ij < 1e-14 {
                    continue;
                }
                for r in 0..d {
                    let dr = row[r] - means[[j, r]];
                    for c in 0..d {
                        cov[[r, c]] += r_ij * dr * (row[c] - means[[j, c]]);
                    }
                }
            }
            cov.mapv_inplace(|v| v / nk);
            for i in 0..d {
                cov[[i, i]] += COV_REG;
            }
            covariances[j] = cov;
        }
        let wsum: f64 = weights.iter().sum();
        for w in weights.iter_mut() {
            *w /= wsum;
        }
    }

    Ok(GmmModel {
        means,
        covariances,
        mixing_weights: weights,
        log_likelihood_trace: trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;

    fn two_blob_samples() -> (Array2<f32>, Vec<usize>) {
        let centers = vec![vec![0.0; 6], vec![8.0; 6]];
        synth::blobs(120, 6, &centers, 0.6, 42)
    }

    fn blob_agreement(assign: &[usize], truth: &[usize]) -> f64 {
        let agree = assign.iter().zip(truth).filter(|(a, b)| a == b).count();
        agree.max(assign.len() - agree) as f64 / assign.len() as f64
    }

    #[test]
    fn kmeans_recovers_two_blobs() {
        let (samples, truth) = two_blob_samples();
        let spec = ClusterSpec::new(ClusterMethod::KMeans, 2, 1);
        let model = fit(samples.view(), &spec).unwrap();
        let assign = model.assign(samples.view()).unwrap();
        let agreement = blob_agreement(&assign, &truth);
        assert!(agreement >= 0.99, "agreement {agreement}");
    }

    #[test]
    fn gmm_recovers_two_blobs() {
        let (samples, truth) = two_blob_samples();
        let spec = ClusterSpec::new(ClusterMethod::Gmm, 2, 3);
        let model = fit(samples.view(), &spec).unwrap();
        let assign = model.assign(samples.view()).unwrap();
        let agreement = blob_agreement(&assign, &truth);
        assert!(agreement >= 0.99, "agreement {agreement}");
        if let ClusterModel::Gmm(m) = &model {
            let s: f64 = m.mixing_weights.iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
            assert!(m.mixing_weights.iter().all(|&w| w > 0.0));
        } else {
            panic!("expected gmm");
        }
    }

    #[test]
    fn k1_puts_everything_in_one_cluster() {
        let (samples, _) = two_blob_samples();
        for method in [ClusterMethod::KMeans, ClusterMethod::Gmm] {
            let model = fit(samples.view(), &ClusterSpec::new(method, 1, 0)).unwrap();
            let assign = model.assign(samples.view()).unwrap();
            assert!(assign.iter().all(|&j| j == 0));
        }
    }

    #[test]
    fn k_larger_than_n_is_rejected() {
        let (samples, _) = two_blob_samples();
        let few = samples.slice(ndarray::s![..3, ..]).to_owned();
        let spec = ClusterSpec::new(ClusterMethod::KMeans, 5, 0);
        assert!(matches!(fit(few.view(), &spec), Err(Error::Clustering(_))));
    }

    #[test]
    fn kmeans_assignment_matches_linear_scan() {
        let (samples, _) = two_blob_samples();
        let spec = ClusterSpec::new(ClusterMethod::KMeans, 3, 7);
        let model = fit(samples.view(), &spec).unwrap();
        let assign = model.assign(samples.view()).unwrap();
        if let ClusterModel::KMeans(m) = &model {
            for (i, row) in samples.rows().into_iter().enumerate() {
                // brute-force scan, strict < tie rule
                let p: Vec<f64> = row.iter().map(|&v| f64::from(v)).collect();
                let mut best = 0;
                let mut best_d = f64::INFINITY;
                for (j, c) in m.centroids.rows().into_iter().enumerate() {
                    let d: f64 = p
                        .iter()
                        .zip(c.iter())
                        .map(|(&a, &b)| (a - b) * (a - b))
                        .sum();
                    if d < best_d {
                        best_d = d;
                        best = j;
                    }
                }
                assert_eq!(assign[i], best, "sample {i}");
            }
        }
    }

    #[test]
    fn centroid_is_a_fixed_point_of_assignment() {
        let (samples, _) = two_blob_samples();
        let spec = ClusterSpec::new(ClusterMethod::KMeans, 2, 5);
        let model = fit(samples.view(), &spec).unwrap();
        if let ClusterModel::KMeans(m) = &model {
            let centroids_f32 = m.centroids.mapv(|v| v as f32);
            let assign = model.assign(centroids_f32.view()).unwrap();
            assert_eq!(assign, vec![0, 1]);
        }
    }

    #[test]
    fn kmeans_inertia_trace_is_non_increasing() {
        let centers = vec![vec![0.0; 4], vec![3.0; 4], vec![-4.0; 4]];
        let (samples, _) = synth::blobs(60, 4, &centers, 1.2, 9);
        let spec = ClusterSpec::new(ClusterMethod::KMeans, 3, 2);
        let model = fit(samples.view(), &spec).unwrap();
        if let ClusterModel::KMeans(m) = &model {
            assert!(!m.inertia_trace.is_empty());
            for w in m.inertia_trace.windows(2) {
                assert!(
                    w[1] <= w[0] * (1.0 + 1e-12) + 1e-9,
                    "inertia rose: {} -> {}",
                    w[0],
                    w[1]
                );
            }
        }
    }

    #[test]
    fn gmm_loglik_trace_is_non_decreasing() {
        let centers = vec![vec![0.0; 4], vec![4.0; 4]];
        let (samples, _) = synth::blobs(80, 4, &centers, 0.9, 13);
        let spec = ClusterSpec::new(ClusterMethod::Gmm, 2, 4);
        let model = fit(samples.view(), &spec).unwrap();
        if let ClusterModel::Gmm(m) = &model {
            assert!(m.log_likelihood_trace.len() >= 2);
            for w in m.log_likelihood_trace.windows(2) {
                assert!(
                    w[1] >= w[0] - 1e-8 * w[0].abs().max(1.0),
                    "loglik fell: {} -> {}",
                    w[0],
                    w[1]
                );
            }
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let (samples, _) = two_blob_samples();
        for method in [ClusterMethod::KMeans, ClusterMethod::Gmm] {
            let spec = ClusterSpec::new(method, 2, 11);
            let a = fit(samples.view(), &spec).unwrap();
            let b = fit(samples.view(), &spec).unwrap();
            assert_eq!(
                a.assign(samples.view()).unwrap(),
                b.assign(samples.view()).unwrap()
            );
        }
    }

    #[test]
    fn identical_points_get_identical_assignments() {
        let (samples, _) = two_blob_samples();
        let spec = ClusterSpec::new(ClusterMethod::KMeans, 2, 1);
        let model = fit(samples.view(), &spec).unwrap();
        let mut dup = Array2::<f32>::zeros((2, 6));
        dup.row_mut(0).assign(&samples.row(5));
        dup.row_mut(1).assign(&samples.row(5));
        let assign = model.assign(dup.view()).unwrap();
        assert_eq!(assign[0], assign[1]);
    }

    #[test]
    fn assign_rejects_dimension_mismatch() {
        let (samples, _) = two_blob_samples();
        let spec = ClusterSpec::new(ClusterMethod::KMeans, 2, 1);
        let model = fit(samples.view(), &spec).unwrap();
        let wrong = Array2::<f32>::zeros((3, 4));
        assert!(matches!(
            model.assign(wrong.view()),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn cluster_model_round_trip() {
        let (samples, _) = two_blob_samples();
        for method in [ClusterMethod::KMeans, ClusterMethod::Gmm] {
            let spec = ClusterSpec::new(method, 2, 17);
            let model = fit(samples.view(), &spec).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("cluster.bin");
            model.save(&path).unwrap();
            let back = ClusterModel::load(&path).unwrap();
            assert_eq!(
                model.assign(samples.view()).unwrap(),
                back.assign(samples.view()).unwrap()
            );
        }
    }
}
