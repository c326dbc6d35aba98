//! Batch norm, activations, dropout, dense, pooling, upsampling and losses.
//!
//! Channelwise layers take `[rows, channels]` views; callers reshape their
//! `[batch, h, w, c]` activations (channels-last, contiguous) for free.

use ndarray::{s, Array1, Array2, Array3, Array4, Axis, Ix1};
use rand::Rng;

use super::{fl, fl64, glorot_uniform, Param, Scalar};

// ---------------------------------------------------------------------------
// Batch normalization
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct BatchNorm<F> {
    pub gamma: Param<F>,
    pub beta: Param<F>,
    pub running_mean: Array1<F>,
    pub running_var: Array1<F>,
    pub eps: f64,
    pub momentum: f64,
}

pub struct BnCache<F> {
    xhat: Array2<F>,
    ivar: Array1<F>,
}

impl<F: Scalar> BatchNorm<F> {
    pub fn new(channels: usize) -> Self {
        BatchNorm {
            gamma: Param::new(ndarray::ArrayD::from_elem(
                ndarray::IxDyn(&[channels]),
                F::one(),
            )),
            beta: Param::new(ndarray::ArrayD::zeros(ndarray::IxDyn(&[channels]))),
            running_mean: Array1::zeros(channels),
            running_var: Array1::from_elem(channels, F::one()),
            eps: 1e-3,
            momentum: 0.99,
        }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }

    pub fn forward_train(&mut self, x: &Array2<F>) -> (Array2<F>, BnCache<F>) {
        let m = x.shape()[0];
        assert!(m > 0);
        let inv_m: F = fl(1.0 / m as f64);
        let mean = x.sum_axis(Axis(0)) * inv_m;
        let mut var = Array1::<F>::zeros(self.channels());
        for row in x.rows() {
            ndarray::Zip::from(&mut var)
                .and(&row)
                .and(&mean)
                .for_each(|v, &xi, &mu| {
                    let d = xi - mu;
                    *v += d * d;
                });
        }
        var *= inv_m;

        let eps: F = fl(self.eps);
        let ivar = var.mapv(|v| F::one() / (v + eps).sqrt());
        let mut xhat = x.clone();
        for mut row in xhat.rows_mut() {
            ndarray::Zip::from(&mut row)
                .and(&mean)
                .and(&ivar)
                .for_each(|h, &mu, &iv| *h = (*h - mu) * iv);
        }
        let gamma = self.gamma.value.view().into_dimensionality::<Ix1>().unwrap();
        let beta = self.beta.value.view().into_dimensionality::<Ix1>().unwrap();
        let mut y = xhat.clone();
        for mut row in y.rows_mut() {
            ndarray::Zip::from(&mut row)
                .and(&gamma)
                .and(&beta)
                .for_each(|o, &g, &b| *o = g * *o + b);
        }

        let mom: F = fl(self.momentum);
        let one = F::one();
        ndarray::Zip::from(&mut self.running_mean)
            .and(&mean)
            .for_each(|r, &b| *r = mom * *r + (one - mom) * b);
        ndarray::Zip::from(&mut self.running_var)
            .and(&var)
            .for_each(|r, &b| *r = mom * *r + (one - mom) * b);

        (y, BnCache { xhat, ivar })
    }

    pub fn forward_eval(&self, x: &Array2<F>) -> Array2<F> {
        let eps: F = fl(self.eps);
        let gamma = self.gamma.value.view().into_dimensionality::<Ix1>().unwrap();
        let beta = self.beta.value.view().into_dimensionality::<Ix1>().unwrap();
        let mut y = x.clone();
        for mut row in y.rows_mut() {
            ndarray::Zip::from(&mut row)
                .and(&self.running_mean)
                .and(&self.running_var)
                .and(&gamma)
                .and(&beta)
                .for_each(|o, &mu, &var, &g, &b| {
                    *o = g * (*o - mu) / (var + eps).sqrt() + b;
                });
        }
        y
    }

    pub fn backward(&mut self, cache: &BnCache<F>, dy: &Array2<F>) -> Array2<F> {
        let m = dy.shape()[0];
        let mf: F = fl(m as f64);
        let gamma = self.gamma.value.view().into_dimensionality::<Ix1>().unwrap();

        let mut dgamma = Array1::<F>::zeros(self.channels());
        let mut dbeta = Array1::<F>::zeros(self.channels());
        for (dy_row, xhat_row) in dy.rows().into_iter().zip(cache.xhat.rows()) {
            ndarray::Zip::from(&mut dgamma)
                .and(&mut dbeta)
                .and(&dy_row)
                .and(&xhat_row)
                .for_each(|dg, db, &d, &h| {
                    *dg += d * h;
                    *db += d;
                });
        }

        // dx = ivar/m * (m*dxhat - sum(dxhat) - xhat * sum(dxhat*xhat))
        // with dxhat = dy * gamma
        let mut sum_dxhat = Array1::<F>::zeros(self.channels());
        let mut sum_dxhat_xhat = Array1::<F>::zeros(self.channels());
        for (dy_row, xhat_row) in dy.rows().into_iter().zip(cache.xhat.rows()) {
            ndarray::Zip::from(&mut sum_dxhat)
                .and(&mut sum_dxhat_xhat)
                .and(&dy_row)
                .and(&xhat_row)
                .and(&gamma)
                .for_each(|sd, sdx, &d, &h, &g| {
                    let dxh = d * g;
                    *sd += dxh;
                    *sdx += dxh * h;
                });
        }
        let channels = self.channels();
        let mut dx = Array2::<F>::zeros(dy.raw_dim());
        for ((mut dx_row, dy_row), xhat_row) in dx
            .rows_mut()
            .into_iter()
            .zip(dy.rows())
            .zip(cache.xhat.rows())
        {
            for ch in 0..channels {
                let dxh = dy_row[ch] * gamma[ch];
                dx_row[ch] = cache.ivar[ch] / mf
                    * (mf * dxh - sum_dxhat[ch] - xhat_row[ch] * sum_dxhat_xhat[ch]);
            }
        }

        {
            let mut g = self.gamma.grad.view_mut().into_dimensionality::<Ix1>().unwrap();
            g += &dgamma;
            let mut b = self.beta.grad.view_mut().into_dimensionality::<Ix1>().unwrap();
            b += &dbeta;
        }
        dx
    }

    pub fn zero_grad(&mut self) {
        self.gamma.zero_grad();
        self.beta.zero_grad();
    }

    pub fn param_count(&self) -> usize {
        self.gamma.len() + self.beta.len()
    }
}

// ---------------------------------------------------------------------------
// Activations and dropout
// ---------------------------------------------------------------------------

pub fn leaky_relu_forward<F: Scalar>(mut x: Array2<F>, slope: f64) -> Array2<F> {
    let a: F = fl(slope);
    x.mapv_inplace(|v| if v > F::zero() { v } else { a * v });
    x
}

/// The forward output is enough to recover the gate (slope > 0 keeps signs).
pub fn leaky_relu_backward<F: Scalar>(y: &Array2<F>, mut dy: Array2<F>, slope: f64) -> Array2<F> {
    let a: F = fl(slope);
    ndarray::Zip::from(&mut dy).and(y).for_each(|d, &o| {
        if o <= F::zero() {
            *d *= a;
        }
    });
    dy
}

/// Inverted dropout: zero with probability `rate`, scale survivors by
/// 1/(1-rate). Mask entries are drawn row-major. `rate == 0` is the identity
/// and consumes no randomness.
pub fn dropout_forward<F: Scalar>(
    mut x: Array2<F>,
    rate: f64,
    rng: &mut impl Rng,
) -> (Array2<F>, Option<Array2<F>>) {
    if rate <= 0.0 {
        return (x, None);
    }
    assert!(rate < 1.0, "dropout rate must be < 1");
    let scale: F = fl(1.0 / (1.0 - rate));
    let mut mask = Array2::<F>::zeros(x.raw_dim());
    for (m, v) in mask.iter_mut().zip(x.iter_mut()) {
        if rng.random::<f64>() < rate {
            *v = F::zero();
        } else {
            *m = scale;
            *v *= scale;
        }
    }
    (x, Some(mask))
}

pub fn dropout_backward<F: Scalar>(mask: &Option<Array2<F>>, mut dy: Array2<F>) -> Array2<F> {
    if let Some(mask) = mask {
        dy *= mask;
    }
    dy
}

// ---------------------------------------------------------------------------
// Dense
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct Dense<F> {
    /// [in, out]
    pub weight: Param<F>,
    pub bias: Param<F>,
}

impl<F: Scalar> Dense<F> {
    pub fn new(input: usize, output: usize, rng: &mut impl Rng) -> Self {
        Dense {
            weight: Param::new(glorot_uniform(&[input, output], input, output, rng)),
            bias: Param::new(ndarray::ArrayD::zeros(ndarray::IxDyn(&[output]))),
        }
    }

    pub fn forward(&self, x: &Array2<F>) -> (Array2<F>, Array2<F>) {
        let w = self
            .weight
            .value
            .view()
            .into_dimensionality::<ndarray::Ix2>()
            .unwrap();
        let b = self.bias.value.view().into_dimensionality::<Ix1>().unwrap();
        let mut y = x.dot(&w);
        y += &b;
        (y, x.clone())
    }

    pub fn backward(&mut self, x: &Array2<F>, dy: &Array2<F>) -> Array2<F> {
        let w = self
            .weight
            .value
            .view()
            .into_dimensionality::<ndarray::Ix2>()
            .unwrap();
        {
            let dw = x.t().dot(dy);
            let mut gw = self
                .weight
                .grad
                .view_mut()
                .into_dimensionality::<ndarray::Ix2>()
                .unwrap();
            gw += &dw;
            let db = dy.sum_axis(Axis(0));
            let mut gb = self.bias.grad.view_mut().into_dimensionality::<Ix1>().unwrap();
            gb += &db;
        }
        dy.dot(&w.t())
    }

    pub fn zero_grad(&mut self) {
        self.weight.zero_grad();
        self.bias.zero_grad();
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

// ---------------------------------------------------------------------------
// Pooling and upsampling (kernel 2, stride 2, ceil at ragged borders)
// ---------------------------------------------------------------------------

pub fn maxpool2d_forward<F: Scalar>(x: &Array4<F>) -> (Array4<F>, Vec<usize>) {
    let (n, h, w, c) = x.dim();
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    let mut y = Array4::<F>::zeros((n, oh, ow, c));
    let mut argmax = vec![0usize; n * oh * ow * c];
    for b in 0..n {
        for orow in 0..oh {
            for ocol in 0..ow {
                for ch in 0..c {
                    let mut best = F::neg_infinity();
                    let mut best_idx = 0usize;
                    for dr in 0..2 {
                        for dc in 0..2 {
                            let (r, col) = (orow * 2 + dr, ocol * 2 + dc);
                            if r >= h || col >= w {
                                continue;
                            }
                            let v = x[[b, r, col, ch]];
                            if v > best {
                                best = v;
                                best_idx = ((b * h + r) * w + col) * c + ch;
                            }
                        }
                    }
                    y[[b, orow, ocol, ch]] = best;
                    argmax[((b * oh + orow) * ow + ocol) * c + ch] = best_idx;
                }
            }
        }
    }
    (y, argmax)
}

pub fn maxpool2d_backward<F: Scalar>(
    argmax: &[usize],
    in_dim: (usize, usize, usize, usize),
    dy: &Array4<F>,
) -> Array4<F> {
    let mut dx = Array4::<F>::zeros(in_dim);
    let flat = dx.as_slice_mut().expect("contiguous");
    for (i, d) in dy.iter().enumerate() {
        flat[argmax[i]] += *d;
    }
    dx
}

pub fn maxpool1d_forward<F: Scalar>(x: &Array3<F>) -> (Array3<F>, Vec<usize>) {
    let (n, l, c) = x.dim();
    let ol = l.div_ceil(2);
    let mut y = Array3::<F>::zeros((n, ol, c));
    let mut argmax = vec![0usize; n * ol * c];
    for b in 0..n {
        for opos in 0..ol {
            for ch in 0..c {
                let mut best = F::neg_infinity();
                let mut best_idx = 0usize;
                for d in 0..2 {
                    let pos = opos * 2 + d;
                    if pos >= l {
                        continue;
                    }
                    let v = x[[b, pos, ch]];
                    if v > best {
                        best = v;
                        best_idx = (b * l + pos) * c + ch;
                    }
                }
                y[[b, opos, ch]] = best;
                argmax[(b * ol + opos) * c + ch] = best_idx;
            }
        }
    }
    (y, argmax)
}

pub fn maxpool1d_backward<F: Scalar>(
    argmax: &[usize],
    in_dim: (usize, usize, usize),
    dy: &Array3<F>,
) -> Array3<F> {
    let mut dx = Array3::<F>::zeros(in_dim);
    let flat = dx.as_slice_mut().expect("contiguous");
    for (i, d) in dy.iter().enumerate() {
        flat[argmax[i]] += *d;
    }
    dx
}

pub fn upsample2d_forward<F: Scalar>(x: &Array4<F>) -> Array4<F> {
    let (n, h, w, c) = x.dim();
    Array4::from_shape_fn((n, h * 2, w * 2, c), |(b, r, col, ch)| {
        x[[b, r / 2, col / 2, ch]]
    })
}

pub fn upsample2d_backward<F: Scalar>(dy: &Array4<F>) -> Array4<F> {
    let (n, h2, w2, c) = dy.dim();
    let (h, w) = (h2 / 2, w2 / 2);
    let mut dx = Array4::<F>::zeros((n, h, w, c));
    for b in 0..n {
        for r in 0..h2 {
            for col in 0..w2 {
                for ch in 0..c {
                    dx[[b, r / 2, col / 2, ch]] += dy[[b, r, col, ch]];
                }
            }
        }
    }
    dx
}

pub fn upsample1d_forward<F: Scalar>(x: &Array3<F>) -> Array3<F> {
    let (n, l, c) = x.dim();
    Array3::from_shape_fn((n, l * 2, c), |(b, pos, ch)| x[[b, pos / 2, ch]])
}

pub fn upsample1d_backward<F: Scalar>(dy: &Array3<F>) -> Array3<F> {
    let (n, l2, c) = dy.dim();
    let l = l2 / 2;
    let mut dx = Array3::<F>::zeros((n, l, c));
    for b in 0..n {
        for pos in 0..l2 {
            for ch in 0..c {
                dx[[b, pos / 2, ch]] += dy[[b, pos, ch]];
            }
        }
    }
    dx
}

// ---------------------------------------------------------------------------
// Channel concatenation (U-Net skips)
// ---------------------------------------------------------------------------

pub fn concat_channels<F: Scalar>(a: &Array4<F>, b: &Array4<F>) -> Array4<F> {
    ndarray::concatenate(Axis(3), &[a.view(), b.view()])
        .expect("matching spatial dims")
        .as_standard_layout()
        .to_owned()
}

pub fn split_channels<F: Scalar>(dy: &Array4<F>, first: usize) -> (Array4<F>, Array4<F>) {
    let da = dy.slice(s![.., .., .., ..first]).to_owned();
    let db = dy.slice(s![.., .., .., first..]).to_owned();
    (
        da.as_standard_layout().to_owned(),
        db.as_standard_layout().to_owned(),
    )
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

/// Row-wise stable softmax.
pub fn softmax_rows<F: Scalar>(logits: &Array2<F>) -> Array2<F> {
    let mut probs = logits.clone();
    for mut row in probs.rows_mut() {
        let max = row.iter().cloned().fold(F::neg_infinity(), F::max);
        let mut sum = F::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
    probs
}

/// Weighted mean categorical cross-entropy from logits.
///
/// Returns (loss, dloss/dlogits); `targets` are 0-based class indices. The
/// weight multiplies both the loss and its gradient, making gradient scaling
/// exactly linear in the weight.
pub fn softmax_ce<F: Scalar>(
    logits: &Array2<F>,
    targets: &[usize],
    weight: f64,
) -> (f64, Array2<F>) {
    let batch = logits.shape()[0];
    assert_eq!(batch, targets.len());
    let probs = softmax_rows(logits);
    let mut loss = 0.0f64;
    for (row, &t) in logits.rows().into_iter().zip(targets) {
        let max = row.iter().cloned().fold(F::neg_infinity(), F::max);
        let lse: F = row.iter().map(|&v| (v - max).exp()).sum::<F>().ln() + max;
        loss -= fl64(row[t] - lse);
    }
    loss = loss / batch as f64 * weight;

    let scale: F = fl(weight / batch as f64);
    let mut dlogits = probs;
    for (mut row, &t) in dlogits.rows_mut().into_iter().zip(targets) {
        row[t] = row[t] - F::one();
        row.mapv_inplace(|v| v * scale);
    }
    (loss, dlogits)
}

/// Mean squared error over every element; returns (loss, dloss/dpred).
pub fn mse_loss<F: Scalar>(pred: &Array2<F>, target: &Array2<F>) -> (f64, Array2<F>) {
    assert_eq!(pred.raw_dim(), target.raw_dim());
    let count = pred.len().max(1);
    let mut loss = 0.0f64;
    let mut grad = Array2::<F>::zeros(pred.raw_dim());
    ndarray::Zip::from(&mut grad)
        .and(pred)
        .and(target)
        .for_each(|g, &p, &t| {
            let d = p - t;
            loss += fl64(d * d);
            *g = fl::<F>(2.0 / count as f64) * d;
        });
    (loss / count as f64, grad)
}
