//! The single U-Net: three conv blocks down, three transposed-conv blocks up
//! with two skip concatenations, per-pixel softmax over the class logits.
//!
//! Layer stack (channels for the default widths, spatial size preserved
//! throughout; n is the patch side, 1 when unpatched):
//!
//! ```text
//! input  (n,n,d)
//! conv    3x3 -> 64   + batchnorm + leaky ReLU + dropout
//! conv    3x3 -> 128  + batchnorm + leaky ReLU + dropout
//! conv    3x3 -> 256  + batchnorm + leaky ReLU + dropout
//! deconv  3x3 -> 256  + batchnorm + leaky ReLU + dropout
//! concat  [deconv out, second conv block out]          -> 384
//! deconv  3x3 -> 128  + batchnorm + leaky ReLU + dropout
//! concat  [deconv out, first conv block out]           -> 192
//! deconv  3x3 -> m    (bias)
//! softmax per pixel
//! ```
//!
//! Convolutions preceding batch norm carry no bias; the output layer does.
//! Classification supervises the window's center position, which for n = 1
//! is the whole output.

use std::fs;
use std::io::Read;
use std::path::Path;
use std::time::Instant;

use ndarray::{s, Array2, Array4};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::hsi::LabeledPixelSet;
use crate::nn::{
    concat_channels, dropout_backward, dropout_forward, leaky_relu_backward, leaky_relu_forward,
    softmax_ce, softmax_rows, split_channels, AdamConfig, BatchNorm, BnCache, Conv2d, Conv2dCache,
    Param, Scalar,
};
use crate::patching::PatchDataset;
use crate::seeds;

/// Architecture parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct UNetSpec {
    /// Patch side n; 1 for plain pixel classification.
    pub patch_side: usize,
    /// Input features per cell (bands or reduced dimension).
    pub features: usize,
    pub num_classes: usize,
    pub dropout_rate: f64,
    pub widths: [usize; 3],
    pub leaky_slope: f64,
}

impl UNetSpec {
    pub fn new(features: usize, num_classes: usize) -> Self {
        UNetSpec {
            patch_side: 1,
            features,
            num_classes,
            dropout_rate: 0.2,
            widths: [64, 128, 256],
            leaky_slope: 0.01,
        }
    }

    pub fn with_patch(mut self, n: usize) -> Self {
        self.patch_side = n;
        self
    }

    pub fn with_widths(mut self, widths: [usize; 3]) -> Self {
        self.widths = widths;
        self
    }

    pub fn with_dropout(mut self, rate: f64) -> Self {
        self.dropout_rate = rate;
        self
    }
}

/// Optimization parameters for one training run.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Loss multiplier (the ensemble weight for a sub-net; 1.0 standalone).
    pub loss_weight: f64,
    /// Default: 256 for 1x1 inputs, 32 for patches.
    pub batch_size: Option<usize>,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(epochs: usize, seed: u64) -> Self {
        TrainConfig {
            epochs,
            learning_rate: 1e-4,
            loss_weight: 1.0,
            batch_size: None,
            seed,
        }
    }
}

/// Training/prediction input: flat pixels or center-labeled patches.
#[derive(Debug, Clone, Copy)]
pub enum ClassData<'a> {
    Pixels(&'a LabeledPixelSet),
    Patches(&'a PatchDataset),
}

impl<'a> ClassData<'a> {
    pub fn len(&self) -> usize {
        match self {
            ClassData::Pixels(p) => p.len(),
            ClassData::Patches(p) => p.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        match self {
            ClassData::Pixels(p) => p.dim(),
            ClassData::Patches(p) => p.dim(),
        }
    }

    pub fn patch_side(&self) -> usize {
        match self {
            ClassData::Pixels(_) => 1,
            ClassData::Patches(p) => p.patch_side(),
        }
    }

    pub fn labels(&self) -> &[u16] {
        match self {
            ClassData::Pixels(p) => &p.labels,
            ClassData::Patches(p) => &p.labels,
        }
    }

    pub fn num_classes(&self) -> u16 {
        match self {
            ClassData::Pixels(p) => p.num_classes,
            ClassData::Patches(p) => p.num_classes,
        }
    }

    /// Gather rows `idx` into a [batch, n, n, d] input tensor.
    pub fn gather<F: Scalar>(&self, idx: &[usize]) -> Array4<F> {
        let n = self.patch_side();
        let d = self.dim();
        let mut x = Array4::<F>::zeros((idx.len(), n, n, d));
        match self {
            ClassData::Pixels(p) => {
                for (row, &i) in idx.iter().enumerate() {
                    for (b, &v) in p.samples.row(i).iter().enumerate() {
                        x[[row, 0, 0, b]] = crate::nn::fl(f64::from(v));
                    }
                }
            }
            ClassData::Patches(p) => {
                for (row, &i) in idx.iter().enumerate() {
                    ndarray::Zip::from(&mut x.index_axis_mut(ndarray::Axis(0), row))
                        .and(&p.patches.index_axis(ndarray::Axis(0), i))
                        .for_each(|o, &v| *o = crate::nn::fl(f64::from(v)));
                }
            }
        }
        x
    }
}

struct BlockCache<F: Scalar> {
    conv: Conv2dCache<F>,
    bn: BnCache<F>,
    mask: Option<Array2<F>>,
    /// Post-dropout activations (the block output), flattened [rows, c].
    out2: Array2<F>,
}

struct ForwardCache<F: Scalar> {
    b1: BlockCache<F>,
    b2: BlockCache<F>,
    b3: BlockCache<F>,
    b4: BlockCache<F>,
    b5: BlockCache<F>,
    head: Conv2dCache<F>,
}

/// The network. Build it untrained, then [`UNet::train`].
pub struct UNet<F: Scalar> {
    pub spec: UNetSpec,
    pub seed: u64,
    conv1: Conv2d<F>,
    bn1: BatchNorm<F>,
    conv2: Conv2d<F>,
    bn2: BatchNorm<F>,
    conv3: Conv2d<F>,
    bn3: BatchNorm<F>,
    deconv3: Conv2d<F>,
    bn4: BatchNorm<F>,
    deconv2: Conv2d<F>,
    bn5: BatchNorm<F>,
    deconv1: Conv2d<F>,
    step: u64,
    pub loss_history: Vec<f64>,
    pub epoch_seconds: Vec<f64>,
}

/// Per-sample class decisions plus the full probability rows.
pub struct Prediction<F> {
    /// Labels in 1..=m.
    pub labels: Vec<u16>,
    /// N x m softmax rows at the supervised (center) position.
    pub probabilities: Array2<F>,
}

pub fn build_unet<F: Scalar>(spec: &UNetSpec, seed: u64) -> Result<UNet<F>> {
    if spec.num_classes < 2 {
        return Err(Error::Spec(format!(
            "need at least 2 classes, got {}",
            spec.num_classes
        )));
    }
    if spec.features == 0 || spec.patch_side == 0 {
        return Err(Error::Spec("features and patch side must be >= 1".into()));
    }
    let [w1, w2, w3] = spec.widths;
    let mut rng = seeds::rng(seeds::derive(seed, "unet-init", 0));
    Ok(UNet {
        conv1: Conv2d::new(3, 3, spec.features, w1, false, false, &mut rng),
        bn1: BatchNorm::new(w1),
        conv2: Conv2d::new(3, 3, w1, w2, false, false, &mut rng),
        bn2: BatchNorm::new(w2),
        conv3: Conv2d::new(3, 3, w2, w3, false, false, &mut rng),
        bn3: BatchNorm::new(w3),
        deconv3: Conv2d::new(3, 3, w3, w3, false, true, &mut rng),
        bn4: BatchNorm::new(w3),
        deconv2: Conv2d::new(3, 3, w3 + w2, w2, false, true, &mut rng),
        bn5: BatchNorm::new(w2),
        deconv1: Conv2d::new(3, 3, w2 + w1, spec.num_classes, true, true, &mut rng),
        spec: spec.clone(),
        seed,
        step: 0,
        loss_history: Vec::new(),
        epoch_seconds: Vec::new(),
    })
}

fn flatten2<F: Scalar>(x: Array4<F>) -> (Array2<F>, (usize, usize, usize, usize)) {
    let dim = x.dim();
    let (n, h, w, c) = dim;
    (
        x.into_shape_with_order((n * h * w, c))
            .expect("standard layout"),
        dim,
    )
}

fn unflatten2<F: Scalar>(x: Array2<F>, dim: (usize, usize, usize, usize)) -> Array4<F> {
    x.into_shape_with_order(dim).expect("standard layout")
}

impl<F: Scalar> UNet<F> {
    fn params_mut(&mut self) -> Vec<&mut Param<F>> {
        let mut ps: Vec<&mut Param<F>> = vec![
            &mut self.conv1.weight,
            &mut self.bn1.gamma,
            &mut self.bn1.beta,
            &mut self.conv2.weight,
            &mut self.bn2.gamma,
            &mut self.bn2.beta,
            &mut self.conv3.weight,
            &mut self.bn3.gamma,
            &mut self.bn3.beta,
            &mut self.deconv3.weight,
            &mut self.bn4.gamma,
            &mut self.bn4.beta,
            &mut self.deconv2.weight,
            &mut self.bn5.gamma,
            &mut self.bn5.beta,
            &mut self.deconv1.weight,
        ];
        if let Some(b) = &mut self.deconv1.bias {
            ps.push(b);
        }
        ps
    }

    fn params(&self) -> Vec<&Param<F>> {
        let mut ps: Vec<&Param<F>> = vec![
            &self.conv1.weight,
            &self.bn1.gamma,
            &self.bn1.beta,
            &self.conv2.weight,
            &self.bn2.gamma,
            &self.bn2.beta,
            &self.conv3.weight,
            &self.bn3.gamma,
            &self.bn3.beta,
            &self.deconv3.weight,
            &self.bn4.gamma,
            &self.bn4.beta,
            &self.deconv2.weight,
            &self.bn5.gamma,
            &self.bn5.beta,
            &self.deconv1.weight,
        ];
        if let Some(b) = &self.deconv1.bias {
            ps.push(b);
        }
        ps
    }

    /// Trainable parameter count (batch-norm running stats excluded).
    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    /// Flattened gradient snapshot, parameter order fixed.
    pub fn flat_gradients(&self) -> Vec<f64> {
        self.params()
            .iter()
            .flat_map(|p| p.grad.iter().map(|&g| crate::nn::fl64(g)))
            .collect()
    }

    /// Gradient of the output layer only (weights then bias).
    pub fn head_gradients(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self
            .deconv1
            .weight
            .grad
            .iter()
            .map(|&g| crate::nn::fl64(g))
            .collect();
        if let Some(b) = &self.deconv1.bias {
            out.extend(b.grad.iter().map(|&g| crate::nn::fl64(g)));
        }
        out
    }

    /// Mutable access to one output-layer weight (finite-difference checks).
    pub fn head_weight_mut(&mut self, flat_index: usize) -> &mut F {
        let w = self
            .deconv1
            .weight
            .value
            .as_slice_mut()
            .expect("contiguous");
        &mut w[flat_index]
    }

    pub fn head_weight_count(&self) -> usize {
        self.deconv1.weight.len()
    }

    fn block_forward(
        conv: &Conv2d<F>,
        bn: &mut BatchNorm<F>,
        x: &Array4<F>,
        slope: f64,
        rate: f64,
        rng: &mut impl Rng,
    ) -> (Array4<F>, BlockCache<F>) {
        let (z, conv_cache) = conv.forward(x);
        let (z2, dim) = flatten2(z);
        let (zn2, bn_cache) = bn.forward_train(&z2);
        let a2 = leaky_relu_forward(zn2, slope);
        let (h2, mask) = dropout_forward(a2, rate, rng);
        let out = unflatten2(h2.clone(), dim);
        (
            out,
            BlockCache {
                conv: conv_cache,
                bn: bn_cache,
                mask,
                out2: h2,
            },
        )
    }

    fn block_backward(
        conv: &mut Conv2d<F>,
        bn: &mut BatchNorm<F>,
        cache: &BlockCache<F>,
        dout: &Array4<F>,
        slope: f64,
    ) -> Array4<F> {
        let (dout2, _) = flatten2(dout.clone());
        let d = dropout_backward(&cache.mask, dout2);
        // dropped positions already carry zero gradient, so gating on the
        // post-dropout activations is exact
        let d = leaky_relu_backward(&cache.out2, d, slope);
        let d = bn.backward(&cache.bn, &d);
        let (n, c) = (dout.dim().0, d.dim().1);
        let dz = unflatten2(d, (n, dout.dim().1, dout.dim().2, c));
        conv.backward(&cache.conv, &dz)
    }

    fn block_eval(conv: &Conv2d<F>, bn: &BatchNorm<F>, x: &Array4<F>, slope: f64) -> Array4<F> {
        let (z, _) = conv.forward(x);
        let (z2, dim) = flatten2(z);
        let zn2 = bn.forward_eval(&z2);
        let a2 = leaky_relu_forward(zn2, slope);
        unflatten2(a2, dim)
    }

    /// Training-mode forward; returns the full logit map [n, s, s, m].
    fn forward_train(&mut self, x: &Array4<F>, rng: &mut impl Rng) -> (Array4<F>, ForwardCache<F>) {
        let slope = self.spec.leaky_slope;
        let rate = self.spec.dropout_rate;
        let (h1, b1) = Self::block_forward(&self.conv1, &mut self.bn1, x, slope, rate, rng);
        let (h2, b2) = Self::block_forward(&self.conv2, &mut self.bn2, &h1, slope, rate, rng);
        let (h3, b3) = Self::block_forward(&self.conv3, &mut self.bn3, &h2, slope, rate, rng);
        let (u3, b4) = Self::block_forward(&self.deconv3, &mut self.bn4, &h3, slope, rate, rng);
        let c3 = concat_channels(&u3, &h2);
        let (u2, b5) = Self::block_forward(&self.deconv2, &mut self.bn5, &c3, slope, rate, rng);
        let c2 = concat_channels(&u2, &h1);
        let (logits, head) = self.deconv1.forward(&c2);
        (
            logits,
            ForwardCache {
                b1,
                b2,
                b3,
                b4,
                b5,
                head,
            },
        )
    }

    fn backward(&mut self, cache: &ForwardCache<F>, dlogits: &Array4<F>) {
        let [_, w2, w3] = self.spec.widths;
        let slope = self.spec.leaky_slope;
        let dc2 = self.deconv1.backward(&cache.head, dlogits);
        let (du2, dh1_skip) = split_channels(&dc2, w2);
        let dc3 = Self::block_backward(&mut self.deconv2, &mut self.bn5, &cache.b5, &du2, slope);
        let (du3, dh2_skip) = split_channels(&dc3, w3);
        let dh3 = Self::block_backward(&mut self.deconv3, &mut self.bn4, &cache.b4, &du3, slope);
        let mut dh2 = Self::block_backward(&mut self.conv3, &mut self.bn3, &cache.b3, &dh3, slope);
        dh2 += &dh2_skip;
        let mut dh1 = Self::block_backward(&mut self.conv2, &mut self.bn2, &cache.b2, &dh2, slope);
        dh1 += &dh1_skip;
        Self::block_backward(&mut self.conv1, &mut self.bn1, &cache.b1, &dh1, slope);
    }

    /// One forward/backward pass; gradients stay in the params. Returns the
    /// weighted loss. No optimizer step is taken.
    pub fn compute_gradients(
        &mut self,
        x: &Array4<F>,
        targets: &[usize],
        loss_weight: f64,
        rng: &mut impl Rng,
    ) -> f64 {
        self.zero_grad();
        let (logits, cache) = self.forward_train(x, rng);
        let c = self.spec.patch_side / 2;
        let center = logits.slice(s![.., c, c, ..]).to_owned();
        let (loss, dcenter) = softmax_ce(&center, targets, loss_weight);
        let mut dlogits = Array4::<F>::zeros(logits.raw_dim());
        dlogits.slice_mut(s![.., c, c, ..]).assign(&dcenter);
        self.backward(&cache, &dlogits);
        loss
    }

    /// Minimize `loss_weight * cross-entropy` with Adam mini-batches.
    pub fn train(&mut self, data: ClassData<'_>, cfg: &TrainConfig) -> Result<()> {
        let n = data.len();
        if n == 0 {
            return Err(Error::EmptyDataset("no training samples".into()));
        }
        if data.dim() != self.spec.features {
            return Err(Error::dimension(
                format!("{} features", self.spec.features),
                format!("{} features", data.dim()),
            ));
        }
        if data.patch_side() != self.spec.patch_side {
            return Err(Error::dimension(
                format!("patch side {}", self.spec.patch_side),
                format!("patch side {}", data.patch_side()),
            ));
        }
        let m = self.spec.num_classes;
        if let Some(&bad) = data.labels().iter().find(|&&l| l == 0 || l as usize > m) {
            return Err(Error::Label(format!(
                "label {bad} outside 1..={m}"
            )));
        }
        if cfg.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if cfg.learning_rate <= 0.0 {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if cfg.loss_weight <= 0.0 {
            return Err(Error::Weight("loss weight must be positive".into()));
        }

        let batch = cfg
            .batch_size
            .unwrap_or(if self.spec.patch_side == 1 { 256 } else { 32 });
        let opt = AdamConfig {
            lr: cfg.learning_rate,
            ..AdamConfig::default()
        };
        let targets: Vec<usize> = data.labels().iter().map(|&l| l as usize - 1).collect();
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = seeds::rng(seeds::derive(cfg.seed, "unet-train", 0));

        for _epoch in 0..cfg.epochs {
            let started = Instant::now();
            order.shuffle(&mut rng);
            let mut loss_sum = 0.0;
            for chunk in order.chunks(batch) {
                let x = data.gather::<F>(chunk);
                let y: Vec<usize> = chunk.iter().map(|&i| targets[i]).collect();
                let loss = self.compute_gradients(&x, &y, cfg.loss_weight, &mut rng);
                if !loss.is_finite() {
                    return Err(Error::Divergence(format!(
                        "non-finite loss {loss} at epoch {_epoch}"
                    )));
                }
                self.step += 1;
                let step = self.step;
                for p in self.params_mut() {
                    p.adam_step(&opt, step);
                }
                loss_sum += loss * chunk.len() as f64;
            }
            self.loss_history.push(loss_sum / n as f64);
            self.epoch_seconds.push(started.elapsed().as_secs_f64());
        }
        Ok(())
    }

    /// Deterministic inference; dropout off, batch norm on running stats.
    pub fn predict(&self, data: ClassData<'_>) -> Result<Prediction<F>> {
        if data.dim() != self.spec.features {
            return Err(Error::dimension(
                format!("{} features", self.spec.features),
                format!("{} features", data.dim()),
            ));
        }
        if data.patch_side() != self.spec.patch_side {
            return Err(Error::dimension(
                format!("patch side {}", self.spec.patch_side),
                format!("patch side {}", data.patch_side()),
            ));
        }
        let n = data.len();
        let m = self.spec.num_classes;
        let mut probabilities = Array2::<F>::zeros((n, m));
        let mut labels = Vec::with_capacity(n);
        let c = self.spec.patch_side / 2;
        let slope = self.spec.leaky_slope;
        let chunk_size = if self.spec.patch_side == 1 { 1024 } else { 64 };
        let all: Vec<usize> = (0..n).collect();
        for chunk in all.chunks(chunk_size) {
            let x = data.gather::<F>(chunk);
            let h1 = Self::block_eval(&self.conv1, &self.bn1, &x, slope);
            let h2 = Self::block_eval(&self.conv2, &self.bn2, &h1, slope);
            let h3 = Self::block_eval(&self.conv3, &self.bn3, &h2, slope);
            let u3 = Self::block_eval(&self.deconv3, &self.bn4, &h3, slope);
            let c3 = concat_channels(&u3, &h2);
            let u2 = Self::block_eval(&self.deconv2, &self.bn5, &c3, slope);
            let c2 = concat_channels(&u2, &h1);
            let (logits, _) = self.deconv1.forward(&c2);
            let center = logits.slice(s![.., c, c, ..]).to_owned();
            let probs = softmax_rows(&center);
            for (row_i, &orig) in chunk.iter().enumerate() {
                let row = probs.row(row_i);
                labels.push(argmax_label(row.as_slice().expect("contiguous row")));
                probabilities.row_mut(orig).assign(&row);
            }
        }
        Ok(Prediction {
            labels,
            probabilities,
        })
    }

    /// Full softmax map for one batch: every spatial position normalized.
    pub fn forward_probability_map(&self, data: ClassData<'_>, idx: &[usize]) -> Array4<F> {
        let x = data.gather::<F>(idx);
        let slope = self.spec.leaky_slope;
        let h1 = Self::block_eval(&self.conv1, &self.bn1, &x, slope);
        let h2 = Self::block_eval(&self.conv2, &self.bn2, &h1, slope);
        let h3 = Self::block_eval(&self.conv3, &self.bn3, &h2, slope);
        let u3 = Self::block_eval(&self.deconv3, &self.bn4, &h3, slope);
        let c3 = concat_channels(&u3, &h2);
        let u2 = Self::block_eval(&self.deconv2, &self.bn5, &c3, slope);
        let c2 = concat_channels(&u2, &h1);
        let (logits, _) = self.deconv1.forward(&c2);
        let (l2, dim) = flatten2(logits);
        unflatten2(softmax_rows(&l2), dim)
    }

    // -- checkpointing ------------------------------------------------------

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                fs::create_dir_all(parent).map_err(|e| Error::io(parent.display().to_string(), e))?;
            }
        }
        let mut buf = Vec::new();
        let header = format!(
            "CEUNET-UNET v1\npatch: {}\nfeatures: {}\nclasses: {}\ndropout: {}\nwidths: {},{},{}\nslope: {}\nseed: {}\nepochs: {}\n---\n",
            self.spec.patch_side,
            self.spec.features,
            self.spec.num_classes,
            self.spec.dropout_rate,
            self.spec.widths[0],
            self.spec.widths[1],
            self.spec.widths[2],
            self.spec.leaky_slope,
            self.seed,
            self.loss_history.len(),
        );
        buf.extend_from_slice(header.as_bytes());
        for p in self.params() {
            for &v in p.value.iter() {
                buf.extend_from_slice(&crate::nn::fl64(v).to_le_bytes());
            }
        }
        for bn in [&self.bn1, &self.bn2, &self.bn3, &self.bn4, &self.bn5] {
            for arr in [&bn.running_mean, &bn.running_var] {
                for &v in arr.iter() {
                    buf.extend_from_slice(&crate::nn::fl64(v).to_le_bytes());
                }
            }
        }
        for &v in &self.loss_history {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(path, buf).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<UNet<F>> {
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
        let header = std::str::from_utf8(&bytes[..split]).map_err(|_| Error::Format {
            path: path.display().to_string(),
            msg: "header is not utf-8".into(),
        })?;
        if !header.starts_with("CEUNET-UNET v1") {
            return Err(Error::Format {
                path: path.display().to_string(),
                msg: "not a v1 unet checkpoint".into(),
            });
        }
        let mut fields = std::collections::HashMap::new();
        for line in header.lines().skip(1) {
            if let Some((k, v)) = line.split_once(':') {
                fields.insert(k.trim().to_string(), v.trim().to_string());
            }
        }
        let get = |k: &str| -> Result<&String> {
            fields.get(k).ok_or_else(|| Error::Format {
                path: path.display().to_string(),
                msg: format!("missing `{k}`"),
            })
        };
        let widths_raw = get("widths")?;
        let widths: Vec<usize> = widths_raw
            .split(',')
            .filter_map(|s| s.trim().parse().ok())
            .collect();
        if widths.len() != 3 {
            return Err(Error::Format {
                path: path.display().to_string(),
                msg: format!("bad widths `{widths_raw}`"),
            });
        }
        let spec = UNetSpec {
            patch_side: get("patch")?.parse().map_err(|_| Error::Format {
                path: path.display().to_string(),
                msg: "bad patch".into(),
            })?,
            features: get("features")?.parse().unwrap_or(0),
            num_classes: get("classes")?.parse().unwrap_or(0),
            dropout_rate: get("dropout")?.parse().unwrap_or(0.2),
            widths: [widths[0], widths[1], widths[2]],
            leaky_slope: get("slope")?.parse().unwrap_or(0.01),
        };
        let seed: u64 = get("seed")?.parse().unwrap_or(0);
        let epochs: usize = get("epochs")?.parse().unwrap_or(0);

        let mut net = build_unet::<F>(&spec, seed)?;
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
        for p in net.params_mut() {
            for v in p.value.iter_mut() {
                *v = crate::nn::fl(next()?);
            }
        }
        for bn in [
            &mut net.bn1,
            &mut net.bn2,
            &mut net.bn3,
            &mut net.bn4,
            &mut net.bn5,
        ] {
            for v in bn.running_mean.iter_mut() {
                *v = crate::nn::fl(next()?);
            }
            for v in bn.running_var.iter_mut() {
                *v = crate::nn::fl(next()?);
            }
        }
        net.loss_history = (0..epochs).map(|_| next()).collect::<Result<_>>()?;
        Ok(net)
    }
}

/// Argmax over a probability row; ties go to the smallest class id.
/// Returned labels are 1-based.
pub fn argmax_label<F: Scalar>(row: &[F]) -> u16 {
    let mut best = 0usize;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    (best + 1) as u16
}

/// Fraction of positions where prediction equals truth.
pub fn overall_accuracy(pred: &[u16], truth: &[u16]) -> Result<f64> {
    if pred.is_empty() || truth.is_empty() {
        return Err(Error::Metric("empty prediction or truth".into()));
    }
    if pred.len() != truth.len() {
        return Err(Error::Metric(format!(
            "length mismatch: {} vs {}",
            pred.len(),
            truth.len()
        )));
    }
    let correct = pred.iter().zip(truth).filter(|(a, b)| a == b).count();
    Ok(correct as f64 / pred.len() as f64)
}
