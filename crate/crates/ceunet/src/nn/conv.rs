//! Same-padding stride-1 convolutions (2-D and 1-D) with im2col backing.
//!
//! A stride-1 "transposed" convolution with same padding is a convolution
//! with the kernel spatially flipped; `flip` selects that behaviour, so the
//! U-Net's Conv2DTranspose layers share this code path. With 1x1 spatial
//! inputs only the kernel's center tap ever touches data (everything else
//! multiplies padding), so that case short-circuits to a plain matrix
//! product; gradients for the other taps are exactly zero either way.

use ndarray::{s, Array2, Array3, Array4, ArrayView2, Axis, Ix1, Ix4};
use rand::Rng;

use super::{glorot_uniform, Param, Scalar};

#[derive(Debug, Clone)]
pub struct Conv2d<F> {
    /// [kh, kw, c_in, c_out]
    pub weight: Param<F>,
    pub bias: Option<Param<F>>,
    pub flip: bool,
}

pub enum Conv2dCache<F> {
    /// 1x1 spatial fast path: the flattened input batch.
    Center { x2: Array2<F> },
    /// General path: the im2col matrix, rows = n*h*w.
    Cols { cols: Array2<F>, h: usize, w: usize },
}

impl<F: Scalar> Conv2d<F> {
    pub fn new(
        kh: usize,
        kw: usize,
        c_in: usize,
        c_out: usize,
        bias: bool,
        flip: bool,
        rng: &mut impl Rng,
    ) -> Self {
        assert!(kh % 2 == 1 && kw % 2 == 1, "same padding needs odd kernels");
        let fan_in = kh * kw * c_in;
        let fan_out = kh * kw * c_out;
        let weight = Param::new(glorot_uniform(&[kh, kw, c_in, c_out], fan_in, fan_out, rng));
        let bias = bias.then(|| Param::new(ndarray::ArrayD::zeros(ndarray::IxDyn(&[c_out]))));
        Conv2d { weight, bias, flip }
    }

    pub fn c_in(&self) -> usize {
        self.weight.value.shape()[2]
    }

    pub fn c_out(&self) -> usize {
        self.weight.value.shape()[3]
    }

    fn kernel(&self) -> (usize, usize) {
        (self.weight.value.shape()[0], self.weight.value.shape()[1])
    }

    /// Weight slice seen by the center tap, [c_in, c_out].
    fn center_weight(&self) -> ArrayView2<'_, F> {
        let (kh, kw) = self.kernel();
        let w4 = self
            .weight
            .value
            .view()
            .into_dimensionality::<Ix4>()
            .expect("conv weight is 4-d");
        w4.slice_move(s![kh / 2, kw / 2, .., ..])
    }

    /// Map an output position and tap to its source coordinates.
    #[inline]
    fn source(&self, yh: usize, yw: usize, u: usize, v: usize) -> (isize, isize) {
        let (kh, kw) = self.kernel();
        let (ch, cw) = ((kh / 2) as isize, (kw / 2) as isize);
        if self.flip {
            (yh as isize + ch - u as isize, yw as isize + cw - v as isize)
        } else {
            (yh as isize + u as isize - ch, yw as isize + v as isize - cw)
        }
    }

    fn im2col(&self, x: &Array4<F>) -> Array2<F> {
        let (n, h, w, ci) = x.dim();
        let (kh, kw) = self.kernel();
        let mut cols = Array2::<F>::zeros((n * h * w, kh * kw * ci));
        for b in 0..n {
            for yh in 0..h {
                for yw in 0..w {
                    let row = (b * h + yh) * w + yw;
                    for u in 0..kh {
                        for v in 0..kw {
                            let (sr, sc) = self.source(yh, yw, u, v);
                            if sr < 0 || sc < 0 || sr >= h as isize || sc >= w as isize {
                                continue; // zero padding
                            }
                            let tap = u * kw + v;
                            cols.slice_mut(s![row, tap * ci..(tap + 1) * ci])
                                .assign(&x.slice(s![b, sr as usize, sc as usize, ..]));
                        }
                    }
                }
            }
        }
        cols
    }

    pub fn forward(&self, x: &Array4<F>) -> (Array4<F>, Conv2dCache<F>) {
        let (n, h, w, ci) = x.dim();
        assert_eq!(ci, self.c_in(), "conv input channels");
        let co = self.c_out();
        if h == 1 && w == 1 {
            let x2 = x
                .view()
                .into_shape_with_order((n, ci))
                .expect("contiguous batch")
                .to_owned();
            let mut y2 = x2.dot(&self.center_weight());
            if let Some(bias) = &self.bias {
                let b = bias.value.view().into_dimensionality::<Ix1>().unwrap();
                y2 += &b;
            }
            let y = y2
                .into_shape_with_order((n, 1, 1, co))
                .expect("contiguous result");
            return (y, Conv2dCache::Center { x2 });
        }

        let cols = self.im2col(x);
        let (kh, kw) = self.kernel();
        let w_flat = self
            .weight
            .value
            .view()
            .into_shape_with_order((kh * kw * ci, co))
            .expect("contiguous weight");
        let mut y2 = cols.dot(&w_flat);
        if let Some(bias) = &self.bias {
            let b = bias.value.view().into_dimensionality::<Ix1>().unwrap();
            y2 += &b;
        }
        let y = y2
            .into_shape_with_order((n, h, w, co))
            .expect("contiguous result");
        (y, Conv2dCache::Cols { cols, h, w })
    }

    /// Accumulate weight/bias gradients and return the input gradient.
    pub fn backward(&mut self, cache: &Conv2dCache<F>, dy: &Array4<F>) -> Array4<F> {
        let (n, h, w, co) = dy.dim();
        assert_eq!(co, self.c_out());
        let ci = self.c_in();
        let (kh, kw) = self.kernel();
        let dy2 = dy
            .view()
            .into_shape_with_order((n * h * w, co))
            .expect("contiguous dy")
            .to_owned();

        if let Some(bias) = &mut self.bias {
            let db = dy2.sum_axis(Axis(0));
            let mut g = bias.grad.view_mut().into_dimensionality::<Ix1>().unwrap();
            g += &db;
        }

        match cache {
            Conv2dCache::Center { x2 } => {
                let dw_center = x2.t().dot(&dy2); // [ci, co]
                {
                    let mut gw = self
                        .weight
                        .grad
                        .view_mut()
                        .into_dimensionality::<Ix4>()
                        .unwrap();
                    let mut center = gw.slice_mut(s![kh / 2, kw / 2, .., ..]);
                    center += &dw_center;
                }
                let dx2 = dy2.dot(&self.center_weight().t());
                dx2.into_shape_with_order((n, 1, 1, ci))
                    .expect("contiguous dx")
            }
            Conv2dCache::Cols { cols, h: ch, w: cw } => {
                assert_eq!((h, w), (*ch, *cw));
                let dw_flat = cols.t().dot(&dy2); // [kh*kw*ci, co]
                {
                    let mut gw = self
                        .weight
                        .grad
                        .view_mut()
                        .into_shape_with_order((kh * kw * ci, co))
                        .expect("contiguous grad");
                    gw += &dw_flat;
                }
                let w_flat = self
                    .weight
                    .value
                    .view()
                    .into_shape_with_order((kh * kw * ci, co))
                    .expect("contiguous weight");
                let dcols = dy2.dot(&w_flat.t()); // [n*h*w, kh*kw*ci]
                let mut dx = Array4::<F>::zeros((n, h, w, ci));
                for b in 0..n {
                    for yh in 0..h {
                        for yw in 0..w {
                            let row = (b * h + yh) * w + yw;
                            for u in 0..kh {
                                for v in 0..kw {
                                    let (sr, sc) = self.source(yh, yw, u, v);
                                    if sr < 0 || sc < 0 || sr >= h as isize || sc >= w as isize {
                                        continue;
                                    }
                                    let tap = u * kw + v;
                                    let mut target =
                                        dx.slice_mut(s![b, sr as usize, sc as usize, ..]);
                                    target += &dcols.slice(s![row, tap * ci..(tap + 1) * ci]);
                                }
                            }
                        }
                    }
                }
                dx
            }
        }
    }

    pub fn zero_grad(&mut self) {
        self.weight.zero_grad();
        if let Some(b) = &mut self.bias {
            b.zero_grad();
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.as_ref().map_or(0, Param::len)
    }
}

// ---------------------------------------------------------------------------
// 1-D convolution along a sequence axis (used by the autoencoders)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct Conv1d<F> {
    /// [k, c_in, c_out]
    pub weight: Param<F>,
    pub bias: Param<F>,
    pub flip: bool,
}

pub struct Conv1dCache<F> {
    cols: Array2<F>,
    len: usize,
}

impl<F: Scalar> Conv1d<F> {
    pub fn new(k: usize, c_in: usize, c_out: usize, flip: bool, rng: &mut impl Rng) -> Self {
        assert!(k % 2 == 1, "same padding needs an odd kernel");
        let weight = Param::new(glorot_uniform(&[k, c_in, c_out], k * c_in, k * c_out, rng));
        let bias = Param::new(ndarray::ArrayD::zeros(ndarray::IxDyn(&[c_out])));
        Conv1d { weight, bias, flip }
    }

    fn k(&self) -> usize {
        self.weight.value.shape()[0]
    }
    pub fn c_in(&self) -> usize {
        self.weight.value.shape()[1]
    }
    pub fn c_out(&self) -> usize {
        self.weight.value.shape()[2]
    }

    #[inline]
    fn source(&self, pos: usize, tap: usize) -> isize {
        let c = (self.k() / 2) as isize;
        if self.flip {
            pos as isize + c - tap as isize
        } else {
            pos as isize + tap as isize - c
        }
    }

    fn im2col(&self, x: &Array3<F>) -> Array2<F> {
        let (n, l, ci) = x.dim();
        let k = self.k();
        let mut cols = Array2::<F>::zeros((n * l, k * ci));
        for b in 0..n {
            for pos in 0..l {
                let row = b * l + pos;
                for tap in 0..k {
                    let src = self.source(pos, tap);
                    if src < 0 || src >= l as isize {
                        continue;
                    }
                    cols.slice_mut(s![row, tap * ci..(tap + 1) * ci])
                        .assign(&x.slice(s![b, src as usize, ..]));
                }
            }
        }
        cols
    }

    pub fn forward(&self, x: &Array3<F>) -> (Array3<F>, Conv1dCache<F>) {
        let (n, l, ci) = x.dim();
        assert_eq!(ci, self.c_in());
        let (k, co) = (self.k(), self.c_out());
        let cols = self.im2col(x);
        let w_flat = self
            .weight
            .value
            .view()
            .into_shape_with_order((k * ci, co))
            .expect("contiguous weight");
        let mut y2 = cols.dot(&w_flat);
        let b = self.bias.value.view().into_dimensionality::<Ix1>().unwrap();
        y2 += &b;
        let y = y2
            .into_shape_with_order((n, l, co))
            .expect("contiguous result");
        (y, Conv1dCache { cols, len: l })
    }

    pub fn backward(&mut self, cache: &Conv1dCache<F>, dy: &Array3<F>) -> Array3<F> {
        let (n, l, co) = dy.dim();
        assert_eq!(l, cache.len);
        let (k, ci) = (self.k(), self.c_in());
        let dy2 = dy
            .view()
            .into_shape_with_order((n * l, co))
            .expect("contiguous dy")
            .to_owned();

        {
            let db = dy2.sum_axis(Axis(0));
            let mut g = self.bias.grad.view_mut().into_dimensionality::<Ix1>().unwrap();
            g += &db;
        }
        {
            let dw = cache.cols.t().dot(&dy2);
            let mut gw = self
                .weight
                .grad
                .view_mut()
                .into_shape_with_order((k * ci, co))
                .expect("contiguous grad");
            gw += &dw;
        }

        let w_flat = self
            .weight
            .value
            .view()
            .into_shape_with_order((k * ci, co))
            .expect("contiguous weight");
        let dcols = dy2.dot(&w_flat.t());
        let mut dx = Array3::<F>::zeros((n, l, ci));
        for b in 0..n {
            for pos in 0..l {
                let row = b * l + pos;
                for tap in 0..k {
                    let src = self.source(pos, tap);
                    if src < 0 || src >= l as isize {
                        continue;
                    }
                    let mut target = dx.slice_mut(s![b, src as usize, ..]);
                    target += &dcols.slice(s![row, tap * ci..(tap + 1) * ci]);
                }
            }
        }
        dx
    }

    pub fn zero_grad(&mut self) {
        self.weight.zero_grad();
        self.bias.zero_grad();
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}
