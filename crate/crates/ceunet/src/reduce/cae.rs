//! Convolutional autoencoders for spectral dimensionality reduction.
//!
//! Both variants consume single-pixel spectra (length B) and compress them to
//! a small latent vector through three conv+pool blocks, a dense bottleneck,
//! and a mirrored upsample+transposed-conv decoder trained with MSE.
//!
//! - `Cae2d` reshapes the spectrum into a near-square single-channel image
//!   and convolves it spatially, which breaks band adjacency at row
//!   boundaries.
//! - `Cae3d` is the volumetric equivalent; with a 1x1 spatial footprint its
//!   3-D kernels degenerate to convolutions along the spectral axis, which
//!   keeps band ordering intact.

use std::fs;
use std::io::Read;
use std::path::Path;
use std::time::Instant;

use ndarray::{s, Array2, Array3, Array4};
use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::nn::{
    leaky_relu_backward, leaky_relu_forward, maxpool1d_backward, maxpool1d_forward,
    maxpool2d_backward, maxpool2d_forward, mse_loss, upsample1d_backward, upsample1d_forward,
    upsample2d_backward, upsample2d_forward, AdamConfig, Conv1d, Conv2d, Dense, Param,
};
use crate::seeds;

const ENC_WIDTHS: [usize; 3] = [8, 16, 32];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CaeVariant {
    Cae2d,
    Cae3d,
}

impl std::fmt::Display for CaeVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CaeVariant::Cae2d => write!(f, "cae2d"),
            CaeVariant::Cae3d => write!(f, "cae3d"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CaeConfig {
    pub variant: CaeVariant,
    pub latent_dim: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl CaeConfig {
    /// Paper defaults: 32 latent / 100 epochs for 2-D, 30 / 150 for 3-D.
    pub fn for_variant(variant: CaeVariant, seed: u64) -> Self {
        let (latent_dim, epochs) = match variant {
            CaeVariant::Cae2d => (32, 100),
            CaeVariant::Cae3d => (30, 150),
        };
        CaeConfig {
            variant,
            latent_dim,
            epochs,
            learning_rate: 1e-4,
            batch_size: 128,
            seed,
        }
    }
}

fn relu_fwd(x: Array2<f32>) -> Array2<f32> {
    leaky_relu_forward(x, 0.0)
}

fn relu_bwd(y: &Array2<f32>, dy: Array2<f32>) -> Array2<f32> {
    leaky_relu_backward(y, dy, 0.0)
}

fn flat4(x: Array4<f32>) -> (Array2<f32>, (usize, usize, usize, usize)) {
    let dim = x.dim();
    (
        x.into_shape_with_order((dim.0 * dim.1 * dim.2, dim.3))
            .expect("standard layout"),
        dim,
    )
}

fn unflat4(x: Array2<f32>, dim: (usize, usize, usize, usize)) -> Array4<f32> {
    x.into_shape_with_order(dim).expect("standard layout")
}

fn flat3(x: Array3<f32>) -> (Array2<f32>, (usize, usize, usize)) {
    let dim = x.dim();
    (
        x.into_shape_with_order((dim.0 * dim.1, dim.2))
            .expect("standard layout"),
        dim,
    )
}

fn unflat3(x: Array2<f32>, dim: (usize, usize, usize)) -> Array3<f32> {
    x.into_shape_with_order(dim).expect("standard layout")
}

/// Spectrum length -> (rows, cols) of the zero-padded square-ish image.
pub fn grid_dims(bands: usize) -> (usize, usize) {
    let gh = (bands as f64).sqrt().ceil() as usize;
    let gw = bands.div_ceil(gh);
    (gh.max(1), gw.max(1))
}

// ---------------------------------------------------------------------------
// 2-D net
// ---------------------------------------------------------------------------

struct Net2d {
    c1: Conv2d<f32>,
    c2: Conv2d<f32>,
    c3: Conv2d<f32>,
    enc_fc: Dense<f32>,
    dec_fc: Dense<f32>,
    d3: Conv2d<f32>,
    d2: Conv2d<f32>,
    d1: Conv2d<f32>,
    gh: usize,
    gw: usize,
    g3: (usize, usize),
}

impl Net2d {
    fn new(bands: usize, latent: usize, rng: &mut impl rand::Rng) -> Net2d {
        let (gh, gw) = grid_dims(bands);
        let (h3, w3) = (
            gh.div_ceil(2).div_ceil(2).div_ceil(2),
            gw.div_ceil(2).div_ceil(2).div_ceil(2),
        );
        let [w_a, w_b, w_c] = ENC_WIDTHS;
        let flat = h3 * w3 * w_c;
        Net2d {
            c1: Conv2d::new(3, 3, 1, w_a, true, false, rng),
            c2: Conv2d::new(3, 3, w_a, w_b, true, false, rng),
            c3: Conv2d::new(3, 3, w_b, w_c, true, false, rng),
            enc_fc: Dense::new(flat, latent, rng),
            dec_fc: Dense::new(latent, flat, rng),
            d3: Conv2d::new(3, 3, w_c, w_b, true, true, rng),
            d2: Conv2d::new(3, 3, w_b, w_a, true, true, rng),
            d1: Conv2d::new(3, 3, w_a, 1, true, true, rng),
            gh,
            gw,
            g3: (h3, w3),
        }
    }

    fn to_image(&self, batch: &Array2<f32>) -> Array4<f32> {
        let n = batch.shape()[0];
        let b = batch.shape()[1];
        let mut img = Array4::<f32>::zeros((n, self.gh, self.gw, 1));
        for i in 0..n {
            for j in 0..b {
                img[[i, j / self.gw, j % self.gw, 0]] = batch[[i, j]];
            }
        }
        img
    }

    fn params_mut(&mut self) -> Vec<&mut Param<f32>> {
        let mut ps = vec![&mut self.c1.weight];
        if let Some(b) = &mut self.c1.bias {
            ps.push(b);
        }
        ps.push(&mut self.c2.weight);
        if let Some(b) = &mut self.c2.bias {
            ps.push(b);
        }
        ps.push(&mut self.c3.weight);
        if let Some(b) = &mut self.c3.bias {
            ps.push(b);
        }
        ps.push(&mut self.enc_fc.weight);
        ps.push(&mut self.enc_fc.bias);
        ps.push(&mut self.dec_fc.weight);
        ps.push(&mut self.dec_fc.bias);
        ps.push(&mut self.d3.weight);
        if let Some(b) = &mut self.d3.bias {
            ps.push(b);
        }
        ps.push(&mut self.d2.weight);
        if let Some(b) = &mut self.d2.bias {
            ps.push(b);
        }
        ps.push(&mut self.d1.weight);
        if let Some(b) = &mut self.d1.bias {
            ps.push(b);
        }
        ps
    }

    fn encode(&self, batch: &Array2<f32>) -> Array2<f32> {
        let img = self.to_image(batch);
        let (z1, _) = self.c1.forward(&img);
        let (z1f, d1m) = flat4(z1);
        let z1r = unflat4(relu_fwd(z1f), d1m);
        let (p1, _) = maxpool2d_forward(&z1r);
        let (z2, _) = self.c2.forward(&p1);
        let (z2f, d2m) = flat4(z2);
        let z2r = unflat4(relu_fwd(z2f), d2m);
        let (p2, _) = maxpool2d_forward(&z2r);
        let (z3, _) = self.c3.forward(&p2);
        let (z3f, d3m) = flat4(z3);
        let z3r = unflat4(relu_fwd(z3f), d3m);
        let (p3, _) = maxpool2d_forward(&z3r);
        let n = p3.dim().0;
        let flat = p3
            .into_shape_with_order((n, self.g3.0 * self.g3.1 * ENC_WIDTHS[2]))
            .expect("standard layout");
        let (lat, _) = self.enc_fc.forward(&flat);
        lat
    }

    /// Full pass; accumulates gradients and returns the reconstruction loss.
    fn train_step(&mut self, batch: &Array2<f32>) -> f64 {
        let img = self.to_image(batch);
        let n = img.dim().0;
        let w_c = ENC_WIDTHS[2];

        // encoder
        let (z1, c1c) = self.c1.forward(&img);
        let (z1f, dim1) = flat4(z1);
        let z1r = relu_fwd(z1f);
        let z1r4 = unflat4(z1r.clone(), dim1);
        let (p1, a1) = maxpool2d_forward(&z1r4);
        let (z2, c2c) = self.c2.forward(&p1);
        let (z2f, dim2) = flat4(z2);
        let z2r = relu_fwd(z2f);
        let z2r4 = unflat4(z2r.clone(), dim2);
        let (p2, a2) = maxpool2d_forward(&z2r4);
        let (z3, c3c) = self.c3.forward(&p2);
        let (z3f, dim3) = flat4(z3);
        let z3r = relu_fwd(z3f);
        let z3r4 = unflat4(z3r.clone(), dim3);
        let (p3, a3) = maxpool2d_forward(&z3r4);
        let p3dim = p3.dim();
        let flat = p3
            .into_shape_with_order((n, self.g3.0 * self.g3.1 * w_c))
            .expect("standard layout");
        let (lat, enc_x) = self.enc_fc.forward(&flat);

        // decoder
        let (df, dec_x) = self.dec_fc.forward(&lat);
        let dfr = relu_fwd(df);
        let u = unflat4(dfr.clone(), (n, self.g3.0, self.g3.1, w_c));
        let up3 = upsample2d_forward(&u);
        let (q3, d3c) = self.d3.forward(&up3);
        let (q3f, qdim3) = flat4(q3);
        let q3r = relu_fwd(q3f);
        let q3r4 = unflat4(q3r.clone(), qdim3);
        let up2 = upsample2d_forward(&q3r4);
        let (q2, d2c) = self.d2.forward(&up2);
        let (q2f, qdim2) = flat4(q2);
        let q2r = relu_fwd(q2f);
        let q2r4 = unflat4(q2r.clone(), qdim2);
        let up1 = upsample2d_forward(&q2r4);
        let (out_img, d1c) = self.d1.forward(&up1);

        // loss over the (padded) image
        let recon = out_img.slice(s![.., ..self.gh, ..self.gw, ..]).to_owned();
        let recon2 = recon
            .as_standard_layout()
            .to_owned()
            .into_shape_with_order((n, self.gh * self.gw))
            .expect("standard layout");
        let target2 = img
            .clone()
            .into_shape_with_order((n, self.gh * self.gw))
            .expect("standard layout");
        let (loss, grad2) = mse_loss(&recon2, &target2);

        // backward
        let grad_img = unflat4(grad2, (n, self.gh, self.gw, 1));
        let mut dout = Array4::<f32>::zeros(out_img.dim());
        dout.slice_mut(s![.., ..self.gh, ..self.gw, ..])
            .assign(&grad_img);
        let dup1 = self.d1.backward(&d1c, &dout);
        let dq2r4 = upsample2d_backward(&dup1);
        let (dq2f, _) = flat4(dq2r4);
        let dq2 = relu_bwd(&q2r, dq2f);
        let dq2_4 = unflat4(dq2, qdim2);
        let dup2 = self.d2.backward(&d2c, &dq2_4);
        let dq3r4 = upsample2d_backward(&dup2);
        let (dq3f, _) = flat4(dq3r4);
        let dq3 = relu_bwd(&q3r, dq3f);
        let dq3_4 = unflat4(dq3, qdim3);
        let dup3 = self.d3.backward(&d3c, &dq3_4);
        let du = upsample2d_backward(&dup3);
        let duf = du
            .into_shape_with_order((n, self.g3.0 * self.g3.1 * w_c))
            .expect("standard layout");
        let ddfr = relu_bwd(&dfr, duf);
        let dlat = self.dec_fc.backward(&dec_x, &ddfr);
        let dflat = self.enc_fc.backward(&enc_x, &dlat);
        let dp3 = dflat
            .into_shape_with_order(p3dim)
            .expect("standard layout");
        let dz3r4 = maxpool2d_backward(&a3, z3r4.dim(), &dp3);
        let (dz3f, _) = flat4(dz3r4);
        let dz3 = relu_bwd(&z3r, dz3f);
        let dp2 = self.c3.backward(&c3c, &unflat4(dz3, dim3));
        let dz2r4 = maxpool2d_backward(&a2, z2r4.dim(), &dp2);
        let (dz2f, _) = flat4(dz2r4);
        let dz2 = relu_bwd(&z2r, dz2f);
        let dp1 = self.c2.backward(&c2c, &unflat4(dz2, dim2));
        let dz1r4 = maxpool2d_backward(&a1, z1r4.dim(), &dp1);
        let (dz1f, _) = flat4(dz1r4);
        let dz1 = relu_bwd(&z1r, dz1f);
        self.c1.backward(&c1c, &unflat4(dz1, dim1));

        loss
    }
}

// ---------------------------------------------------------------------------
// Spectral-axis (3-D equivalent) net
// ---------------------------------------------------------------------------

struct Net1d {
    c1: Conv1d<f32>,
    c2: Conv1d<f32>,
    c3: Conv1d<f32>,
    enc_fc: Dense<f32>,
    dec_fc: Dense<f32>,
    d3: Conv1d<f32>,
    d2: Conv1d<f32>,
    d1: Conv1d<f32>,
    bands: usize,
    l3: usize,
}

impl Net1d {
    fn new(bands: usize, latent: usize, rng: &mut impl rand::Rng) -> Net1d {
        let l3 = bands.div_ceil(2).div_ceil(2).div_ceil(2);
        let [w_a, w_b, w_c] = ENC_WIDTHS;
        Net1d {
            c1: Conv1d::new(3, 1, w_a, false, rng),
            c2: Conv1d::new(3, w_a, w_b, false, rng),
            c3: Conv1d::new(3, w_b, w_c, false, rng),
            enc_fc: Dense::new(l3 * w_c, latent, rng),
            dec_fc: Dense::new(latent, l3 * w_c, rng),
            d3: Conv1d::new(3, w_c, w_b, true, rng),
            d2: Conv1d::new(3, w_b, w_a, true, rng),
            d1: Conv1d::new(3, w_a, 1, true, rng),
            bands,
            l3,
        }
    }

    fn to_seq(&self, batch: &Array2<f32>) -> Array3<f32> {
        let n = batch.shape()[0];
        let mut seq = Array3::<f32>::zeros((n, self.bands, 1));
        for i in 0..n {
            for j in 0..self.bands {
                seq[[i, j, 0]] = batch[[i, j]];
            }
        }
        seq
    }

    fn params_mut(&mut self) -> Vec<&mut Param<f32>> {
        vec![
            &mut self.c1.weight,
            &mut self.c1.bias,
            &mut self.c2.weight,
            &mut self.c2.bias,
            &mut self.c3.weight,
            &mut self.c3.bias,
            &mut self.enc_fc.weight,
            &mut self.enc_fc.bias,
            &mut self.dec_fc.weight,
            &mut self.dec_fc.bias,
            &mut self.d3.weight,
            &mut self.d3.bias,
            &mut self.d2.weight,
            &mut self.d2.bias,
            &mut self.d1.weight,
            &mut self.d1.bias,
        ]
    }

    fn encode(&self, batch: &Array2<f32>) -> Array2<f32> {
        let seq = self.to_seq(batch);
        let (z1, _) = self.c1.forward(&seq);
        let (z1f, d1m) = flat3(z1);
        let z1r = unflat3(relu_fwd(z1f), d1m);
        let (p1, _) = maxpool1d_forward(&z1r);
        let (z2, _) = self.c2.forward(&p1);
        let (z2f, d2m) = flat3(z2);
        let z2r = unflat3(relu_fwd(z2f), d2m);
        let (p2, _) = maxpool1d_forward(&z2r);
        let (z3, _) = self.c3.forward(&p2);
        let (z3f, d3m) = flat3(z3);
        let z3r = unflat3(relu_fwd(z3f), d3m);
        let (p3, _) = maxpool1d_forward(&z3r);
        let n = p3.dim().0;
        let flat = p3
            .into_shape_with_order((n, self.l3 * ENC_WIDTHS[2]))
            .expect("standard layout");
        let (lat, _) = self.enc_fc.forward(&flat);
        lat
    }

    fn train_step(&mut self, batch: &Array2<f32>) -> f64 {
        let seq = self.to_seq(batch);
        let n = seq.dim().0;
        let w_c = ENC_WIDTHS[2];

        let (z1, c1c) = self.c1.forward(&seq);
        let (z1f, dim1) = flat3(z1);
        let z1r = relu_fwd(z1f);
        let z1r3 = unflat3(z1r.clone(), dim1);
        let (p1, a1) = maxpool1d_forward(&z1r3);
        let (z2, c2c) = self.c2.forward(&p1);
        let (z2f, dim2) = flat3(z2);
        let z2r = relu_fwd(z2f);
        let z2r3 = unflat3(z2r.clone(), dim2);
        let (p2, a2) = maxpool1d_forward(&z2r3);
        let (z3, c3c) = self.c3.forward(&p2);
        let (z3f, dim3) = flat3(z3);
        let z3r = relu_fwd(z3f);
        let z3r3 = unflat3(z3r.clone(), dim3);
        let (p3, a3) = maxpool1d_forward(&z3r3);
        let p3dim = p3.dim();
        let flat = p3
            .into_shape_with_order((n, self.l3 * w_c))
            .expect("standard layout");
        let (lat, enc_x) = self.enc_fc.forward(&flat);

        let (df, dec_x) = self.dec_fc.forward(&lat);
        let dfr = relu_fwd(df);
        let u = unflat3(dfr.clone(), (n, self.l3, w_c));
        let up3 = upsample1d_forward(&u);
        let (q3, d3c) = self.d3.forward(&up3);
        let (q3f, qdim3) = flat3(q3);
        let q3r = relu_fwd(q3f);
        let q3r3 = unflat3(q3r.clone(), qdim3);
        let up2 = upsample1d_forward(&q3r3);
        let (q2, d2c) = self.d2.forward(&up2);
        let (q2f, qdim2) = flat3(q2);
        let q2r = relu_fwd(q2f);
        let q2r3 = unflat3(q2r.clone(), qdim2);
        let up1 = upsample1d_forward(&q2r3);
        let (out_seq, d1c) = self.d1.forward(&up1);

        let recon = out_seq.slice(s![.., ..self.bands, ..]).to_owned();
        let recon2 = recon
            .as_standard_layout()
            .to_owned()
            .into_shape_with_order((n, self.bands))
            .expect("standard layout");
        let (loss, grad2) = mse_loss(&recon2, batch);

        let grad_seq = unflat3(grad2, (n, self.bands, 1));
        let mut dout = Array3::<f32>::zeros(out_seq.dim());
        dout.slice_mut(s![.., ..self.bands, ..]).assign(&grad_seq);
        let dup1 = self.d1.backward(&d1c, &dout);
        let dq2r3 = upsample1d_backward(&dup1);
        let (dq2f, _) = flat3(dq2r3);
        let dq2 = relu_bwd(&q2r, dq2f);
        let dup2 = self.d2.backward(&d2c, &unflat3(dq2, qdim2));
        let dq3r3 = upsample1d_backward(&dup2);
        let (dq3f, _) = flat3(dq3r3);
        let dq3 = relu_bwd(&q3r, dq3f);
        let dup3 = self.d3.backward(&d3c, &unflat3(dq3, qdim3));
        let du = upsample1d_backward(&dup3);
        let duf = du
            .into_shape_with_order((n, self.l3 * w_c))
            .expect("standard layout");
        let ddfr = relu_bwd(&dfr, duf);
        let dlat = self.dec_fc.backward(&dec_x, &ddfr);
        let dflat = self.enc_fc.backward(&enc_x, &dlat);
        let dp3 = dflat
            .into_shape_with_order(p3dim)
            .expect("standard layout");
        let dz3r3 = maxpool1d_backward(&a3, z3r3.dim(), &dp3);
        let (dz3f, _) = flat3(dz3r3);
        let dz3 = relu_bwd(&z3r, dz3f);
        let dp2 = self.c3.backward(&c3c, &unflat3(dz3, dim3));
        let dz2r3 = maxpool1d_backward(&a2, z2r3.dim(), &dp2);
        let (dz2f, _) = flat3(dz2r3);
        let dz2 = relu_bwd(&z2r, dz2f);
        let dp1 = self.c2.backward(&c2c, &unflat3(dz2, dim2));
        let dz1r3 = maxpool1d_backward(&a1, z1r3.dim(), &dp1);
        let (dz1f, _) = flat3(dz1r3);
        let dz1 = relu_bwd(&z1r, dz1f);
        self.c1.backward(&c1c, &unflat3(dz1, dim1));

        loss
    }
}

enum Net {
    TwoD(Net2d),
    OneD(Net1d),
}

/// A fitted autoencoder plus its training record.
pub struct CaeModel {
    pub variant: CaeVariant,
    pub input_dim: usize,
    pub latent_dim: usize,
    pub loss_history: Vec<f64>,
    pub epoch_seconds: Vec<f64>,
    net: Net,
}

/// Train an autoencoder on N x B pixel spectra.
pub fn cae_fit(samples: ndarray::ArrayView2<'_, f32>, cfg: &CaeConfig) -> Result<CaeModel> {
    let (n, bands) = (samples.shape()[0], samples.shape()[1]);
    if n == 0 || bands == 0 {
        return Err(Error::EmptyDataset("no samples to fit".into()));
    }
    if cfg.epochs == 0 {
        return Err(Error::Config("epochs must be >= 1".into()));
    }
    if cfg.latent_dim == 0 {
        return Err(Error::Config("latent dim must be >= 1".into()));
    }

    let mut rng = seeds::rng(seeds::derive(cfg.seed, "cae-init", 0));
    let mut net = match cfg.variant {
        CaeVariant::Cae2d => Net::TwoD(Net2d::new(bands, cfg.latent_dim, &mut rng)),
        CaeVariant::Cae3d => Net::OneD(Net1d::new(bands, cfg.latent_dim, &mut rng)),
    };

    let opt = AdamConfig {
        lr: cfg.learning_rate,
        ..AdamConfig::default()
    };
    let mut order: Vec<usize> = (0..n).collect();
    let mut train_rng = seeds::rng(seeds::derive(cfg.seed, "cae-train", 0));
    let mut loss_history = Vec::with_capacity(cfg.epochs);
    let mut epoch_seconds = Vec::with_capacity(cfg.epochs);
    let mut step = 0u64;
    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        order.shuffle(&mut train_rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let mut batch = Array2::<f32>::zeros((chunk.len(), bands));
            for (row, &i) in chunk.iter().enumerate() {
                batch.row_mut(row).assign(&samples.row(i));
            }
            let loss = match &mut net {
                Net::TwoD(net) => {
                    for p in net.params_mut() {
                        p.zero_grad();
                    }
                    net.train_step(&batch)
                }
                Net::OneD(net) => {
                    for p in net.params_mut() {
                        p.zero_grad();
                    }
                    net.train_step(&batch)
                }
            };
            if !loss.is_finite() {
                return Err(Error::Divergence(format!(
                    "non-finite reconstruction loss at epoch {epoch}"
                )));
            }
            step += 1;
            match &mut net {
                Net::TwoD(net) => {
                    for p in net.params_mut() {
                        p.adam_step(&opt, step);
                    }
                }
                Net::OneD(net) => {
                    for p in net.params_mut() {
                        p.adam_step(&opt, step);
                    }
                }
            }
            loss_sum += loss * chunk.len() as f64;
        }
        loss_history.push(loss_sum / n as f64);
        epoch_seconds.push(started.elapsed().as_secs_f64());
    }

    Ok(CaeModel {
        variant: cfg.variant,
        input_dim: bands,
        latent_dim: cfg.latent_dim,
        loss_history,
        epoch_seconds,
        net,
    })
}

impl CaeModel {
    /// Latent features for a batch of spectra; deterministic.
    pub fn encode(&self, samples: ndarray::ArrayView2<'_, f32>) -> Result<Array2<f32>> {
        if samples.shape()[1] != self.input_dim {
            return Err(Error::dimension(
                format!("{} features", self.input_dim),
                format!("{} features", samples.shape()[1]),
            ));
        }
        let n = samples.shape()[0];
        let mut out = Array2::<f32>::zeros((n, self.latent_dim));
        let idx: Vec<usize> = (0..n).collect();
        for chunk in idx.chunks(512) {
            let mut batch = Array2::<f32>::zeros((chunk.len(), self.input_dim));
            for (row, &i) in chunk.iter().enumerate() {
                batch.row_mut(row).assign(&samples.row(i));
            }
            let lat = match &self.net {
                Net::TwoD(net) => net.encode(&batch),
                Net::OneD(net) => net.encode(&batch),
            };
            for (row, &i) in chunk.iter().enumerate() {
                out.row_mut(i).assign(&lat.row(row));
            }
        }
        Ok(out)
    }

    pub fn final_loss(&self) -> f64 {
        self.loss_history.last().copied().unwrap_or(f64::NAN)
    }

    // -- persistence ---------------------------------------------------------

    fn params_ordered(&mut self) -> Vec<&mut Param<f32>> {
        match &mut self.net {
            Net::TwoD(net) => net.params_mut(),
            Net::OneD(net) => net.params_mut(),
        }
    }

    pub fn save(&mut self, path: impl AsRef<Path>) -> Result<()> {
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
                "CEUNET-CAE v1\nvariant: {}\nbands: {}\nlatent: {}\nepochs: {}\n---\n",
                self.variant,
                self.input_dim,
                self.latent_dim,
                self.loss_history.len()
            )
            .as_bytes(),
        );
        let history = self.loss_history.clone();
        for p in self.params_ordered() {
            for &v in p.value.iter() {
                buf.extend_from_slice(&f64::from(v).to_le_bytes());
            }
        }
        for v in history {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(path, buf).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<CaeModel> {
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
        if !header.starts_with("CEUNET-CAE v1") {
            return Err(Error::Format {
                path: path.display().to_string(),
                msg: "not a v1 cae model".into(),
            });
        }
        let mut variant = None;
        let mut bands = None;
        let mut latent = None;
        let mut epochs = 0usize;
        for line in header.lines().skip(1) {
            if let Some((k, v)) = line.split_once(':') {
                match k.trim() {
                    "variant" => {
                        variant = match v.trim() {
                            "cae2d" => Some(CaeVariant::Cae2d),
                            "cae3d" => Some(CaeVariant::Cae3d),
                            _ => None,
                        }
                    }
                    "bands" => bands = v.trim().parse().ok(),
                    "latent" => latent = v.trim().parse().ok(),
                    "epochs" => epochs = v.trim().parse().unwrap_or(0),
                    _ => {}
                }
            }
        }
        let (variant, bands, latent): (CaeVariant, usize, usize) = match (variant, bands, latent) {
            (Some(v), Some(b), Some(l)) => (v, b, l),
            _ => {
                return Err(Error::Format {
                    path: path.display().to_string(),
                    msg: "missing variant/bands/latent".into(),
                })
            }
        };

        let mut rng = seeds::rng(0);
        let net = match variant {
            CaeVariant::Cae2d => Net::TwoD(Net2d::new(bands, latent, &mut rng)),
            CaeVariant::Cae3d => Net::OneD(Net1d::new(bands, latent, &mut rng)),
        };
        let mut model = CaeModel {
            variant,
            input_dim: bands,
            latent_dim: latent,
            loss_history: Vec::new(),
            epoch_seconds: Vec::new(),
            net,
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
        for p in model.params_ordered() {
            for v in p.value.iter_mut() {
                *v = next()? as f32;
            }
        }
        model.loss_history = (0..epochs).map(|_| next()).collect::<Result<_>>()?;
        Ok(model)
    }
}
