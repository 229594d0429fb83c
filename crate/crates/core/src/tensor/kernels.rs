//! Forward kernels and their backward rules, on plain row-major buffers.
//!
//! The tape in [`super::Tape`] records which of these ran and calls the
//! matching `*_backward` during reverse accumulation.

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Elementwise nonlinearity. Subgradients at the kinks (0, and 6 for
/// `Relu6`) are 0.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Activation {
    Relu,
    Relu6,
    Linear,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BnMode {
    Train,
    Eval,
}

/// Per-channel running statistics of a batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Scalar> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        RunningStats { mean: vec![T::zero(); channels], var: vec![T::one(); channels] }
    }
}

fn dims4<T: Scalar>(t: &Tensor<T>, what: &str) -> Result<[usize; 4]> {
    match *t.shape() {
        [a, b, c, d] => Ok([a, b, c, d]),
        _ => Err(Error::invalid(format!("{what}: expected a 4-d tensor, got shape {:?}", t.shape()))),
    }
}

fn dims2<T: Scalar>(t: &Tensor<T>, what: &str) -> Result<[usize; 2]> {
    match *t.shape() {
        [a, b] => Ok([a, b]),
        _ => Err(Error::invalid(format!("{what}: expected a 2-d tensor, got shape {:?}", t.shape()))),
    }
}

fn check_bias<T: Scalar>(b: Option<&Tensor<T>>, len: usize, what: &str) -> Result<()> {
    if let Some(b) = b {
        if b.shape() != [len] {
            return Err(Error::invalid(format!("{what}: bias shape {:?}, expected [{len}]", b.shape())));
        }
    }
    Ok(())
}

fn out_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if stride == 0 || padded < kernel {
        None
    } else {
        Some((padded - kernel) / stride + 1)
    }
}

/// Geometry of a (grouped-as-dense or depthwise) 2-d convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub in_ch: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_ch: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    fn patch_len(&self) -> usize {
        self.in_ch * self.kh * self.kw
    }

    fn out_plane(&self) -> usize {
        self.out_h * self.out_w
    }

    fn in_plane(&self) -> usize {
        self.in_h * self.in_w
    }
}

fn conv_geom<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, stride: usize, pad: usize, depthwise: bool) -> Result<ConvGeom> {
    let what = if depthwise { "depthwise_conv2d" } else { "conv2d" };
    let [n, c, h, wd] = dims4(x, what)?;
    let [o, i, kh, kw] = dims4(w, what)?;
    if stride == 0 {
        return Err(Error::invalid(format!("{what}: stride must be >= 1")));
    }
    if depthwise {
        if i != 1 || o != c {
            return Err(Error::invalid(format!(
                "{what}: kernel {:?} does not match {c} input channels",
                w.shape()
            )));
        }
    } else if i != c {
        return Err(Error::invalid(format!("{what}: input has {c} channels, kernel expects {i}")));
    }
    let (oh, ow) = match (out_extent(h, kh, stride, pad), out_extent(wd, kw, stride, pad)) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            return Err(Error::invalid(format!(
                "{what}: zero-sized output for input {h}x{wd}, kernel {kh}x{kw}, pad {pad}"
            )))
        }
    };
    Ok(ConvGeom {
        batch: n,
        in_ch: c,
        in_h: h,
        in_w: wd,
        out_ch: o,
        kh,
        kw,
        stride,
        pad,
        out_h: oh,
        out_w: ow,
    })
}

fn im2col<T: Scalar>(g: &ConvGeom, x: &[T], cols: &mut [T]) {
    let p = g.out_plane();
    for ci in 0..g.in_ch {
        let plane = &x[ci * g.in_plane()..(ci + 1) * g.in_plane()];
        for u in 0..g.kh {
            for v in 0..g.kw {
                let row = &mut cols[((ci * g.kh + u) * g.kw + v) * p..][..p];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + u) as isize - g.pad as isize;
                    let dst = &mut row[oy * g.out_w..(oy + 1) * g.out_w];
                    if iy < 0 || iy >= g.in_h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.in_w..(iy as usize + 1) * g.in_w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * g.stride + v) as isize - g.pad as isize;
                        *d = if ix < 0 || ix >= g.in_w as isize { T::zero() } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

fn col2im_add<T: Scalar>(g: &ConvGeom, cols: &[T], dx: &mut [T]) {
    let p = g.out_plane();
    for ci in 0..g.in_ch {
        let plane = &mut dx[ci * g.in_plane()..(ci + 1) * g.in_plane()];
        for u in 0..g.kh {
            for v in 0..g.kw {
                let row = &cols[((ci * g.kh + u) * g.kw + v) * p..][..p];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + u) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.in_h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.in_w..(iy as usize + 1) * g.in_w];
                    for ox in 0..g.out_w {
                        let ix = (ox * g.stride + v) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.in_w as isize {
                            dst[ix as usize] += row[oy * g.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

/// `y[n,o,r,c] = b[o] + sum_{i,u,v} xpad[n,i,r*s+u,c*s+v] * w[o,i,u,v]`
/// with zero padding.
pub fn conv2d<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: Option<&Tensor<T>>, stride: usize, pad: usize) -> Result<(Tensor<T>, ConvGeom)> {
    let g = conv_geom(x, w, stride, pad, false)?;
    check_bias(b, g.out_ch, "conv2d")?;
    let p = g.out_plane();
    let k = g.patch_len();
    let mut y = vec![T::zero(); g.batch * g.out_ch * p];
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); k * p] };
    for n in 0..g.batch {
        let xn = &x.data()[n * g.in_ch * g.in_plane()..(n + 1) * g.in_ch * g.in_plane()];
        let yn = &mut y[n * g.out_ch * p..(n + 1) * g.out_ch * p];
        if let Some(b) = b {
            for (o, chunk) in yn.chunks_mut(p).enumerate() {
                chunk.fill(b.data()[o]);
            }
        }
        let beta = if b.is_some() { T::one() } else { T::zero() };
        let src = if g.is_pointwise() {
            xn
        } else {
            im2col(&g, xn, &mut cols);
            &cols[..]
        };
        T::gemm(g.out_ch, k, p, T::one(), w.data(), false, src, false, beta, yn);
    }
    Ok((Tensor::from_parts(vec![g.batch, g.out_ch, g.out_h, g.out_w], y), g))
}

/// Gradients of [`conv2d`] for the requested inputs, given `dy`.
#[allow(clippy::type_complexity)]
pub fn conv2d_backward<T: Scalar>(
    g: &ConvGeom,
    x: &[T],
    w: &[T],
    dy: &[T],
    need: [bool; 3],
) -> (Option<Vec<T>>, Option<Vec<T>>, Option<Vec<T>>) {
    let p = g.out_plane();
    let k = g.patch_len();
    let in_len = g.in_ch * g.in_plane();
    let mut dx = need[0].then(|| vec![T::zero(); g.batch * in_len]);
    let mut dw = need[1].then(|| vec![T::zero(); g.out_ch * k]);
    let db = need[2].then(|| {
        let mut db = vec![T::zero(); g.out_ch];
        for n in 0..g.batch {
            for (o, acc) in db.iter_mut().enumerate() {
                let start = (n * g.out_ch + o) * p;
                *acc += dy[start..start + p].iter().copied().sum::<T>();
            }
        }
        db
    });
    let mut cols = vec![T::zero(); if g.is_pointwise() { 0 } else { k * p }];
    let mut dcols = vec![T::zero(); if g.is_pointwise() || dx.is_none() { 0 } else { k * p }];
    for n in 0..g.batch {
        let xn = &x[n * in_len..(n + 1) * in_len];
        let dyn_ = &dy[n * g.out_ch * p..(n + 1) * g.out_ch * p];
        if let Some(dw) = dw.as_mut() {
            let src = if g.is_pointwise() {
                xn
            } else {
                im2col(g, xn, &mut cols);
                &cols[..]
            };
            // dW += dY_n (O x P) * cols^T (P x K)
            T::gemm(g.out_ch, p, k, T::one(), dyn_, false, src, true, T::one(), dw);
        }
        if let Some(dx) = dx.as_mut() {
            let dxn = &mut dx[n * in_len..(n + 1) * in_len];
            if g.is_pointwise() {
                T::gemm(k, g.out_ch, p, T::one(), w, true, dyn_, false, T::one(), dxn);
            } else {
                T::gemm(k, g.out_ch, p, T::one(), w, true, dyn_, false, T::zero(), &mut dcols);
                col2im_add(g, &dcols, dxn);
            }
        }
    }
    (dx, dw, db)
}

/// Per-channel spatial convolution; `w` has shape `C x 1 x kH x kW`.
pub fn depthwise_conv2d<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    stride: usize,
    pad: usize,
) -> Result<(Tensor<T>, ConvGeom)> {
    let g = conv_geom(x, w, stride, pad, true)?;
    check_bias(b, g.out_ch, "depthwise_conv2d")?;
    let (ph, pw) = (g.in_h + 2 * g.pad, g.in_w + 2 * g.pad);
    let mut padded = vec![T::zero(); ph * pw];
    let p = g.out_plane();
    let mut y = vec![T::zero(); g.batch * g.in_ch * p];
    for n in 0..g.batch {
        for c in 0..g.in_ch {
            let plane = &x.data()[(n * g.in_ch + c) * g.in_plane()..][..g.in_plane()];
            fill_padded(&g, plane, &mut padded);
            let kern = &w.data()[c * g.kh * g.kw..(c + 1) * g.kh * g.kw];
            let out = &mut y[(n * g.in_ch + c) * p..][..p];
            out.fill(b.map_or(T::zero(), |b| b.data()[c]));
            for u in 0..g.kh {
                for v in 0..g.kw {
                    let k = kern[u * g.kw + v];
                    for oy in 0..g.out_h {
                        let src = &padded[(oy * g.stride + u) * pw + v..];
                        let dst = &mut out[oy * g.out_w..(oy + 1) * g.out_w];
                        if g.stride == 1 {
                            for (o, &i) in dst.iter_mut().zip(&src[..g.out_w]) {
                                *o += k * i;
                            }
                        } else {
                            for (ox, o) in dst.iter_mut().enumerate() {
                                *o += k * src[ox * g.stride];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok((Tensor::from_parts(vec![g.batch, g.in_ch, g.out_h, g.out_w], y), g))
}

fn fill_padded<T: Scalar>(g: &ConvGeom, plane: &[T], padded: &mut [T]) {
    let pw = g.in_w + 2 * g.pad;
    if g.pad > 0 {
        padded.fill(T::zero());
    }
    for r in 0..g.in_h {
        let dst = &mut padded[(r + g.pad) * pw + g.pad..][..g.in_w];
        dst.copy_from_slice(&plane[r * g.in_w..(r + 1) * g.in_w]);
    }
}

/// Sum with eight independent accumulators (fixed order, vectorisable).
pub(crate) fn sum_lanes<T: Scalar>(a: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let chunks = a.chunks_exact(8);
    let tail = chunks.remainder();
    for c in chunks {
        for (s, &v) in acc.iter_mut().zip(c) {
            *s += v;
        }
    }
    let mut total = tail.iter().fold(T::zero(), |s, &v| s + v);
    for s in acc {
        total += s;
    }
    total
}

/// Dot product with eight independent accumulators.
pub(crate) fn dot_lanes<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let tail: T = ca.remainder().iter().zip(cb.remainder()).fold(T::zero(), |s, (&p, &q)| s + p * q);
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    let mut total = tail;
    for s in acc {
        total += s;
    }
    total
}

#[allow(clippy::type_complexity)]
pub fn depthwise_conv2d_backward<T: Scalar>(
    g: &ConvGeom,
    x: &[T],
    w: &[T],
    dy: &[T],
    need: [bool; 3],
) -> (Option<Vec<T>>, Option<Vec<T>>, Option<Vec<T>>) {
    let (ph, pw) = (g.in_h + 2 * g.pad, g.in_w + 2 * g.pad);
    let p = g.out_plane();
    let kk = g.kh * g.kw;
    let mut dx = need[0].then(|| vec![T::zero(); x.len()]);
    let mut dw = need[1].then(|| vec![T::zero(); w.len()]);
    let mut db = need[2].then(|| vec![T::zero(); g.in_ch]);
    let mut padded = vec![T::zero(); ph * pw];
    let mut dpadded = vec![T::zero(); ph * pw];
    let mut gathered = vec![T::zero(); g.out_w];
    for n in 0..g.batch {
        for c in 0..g.in_ch {
            let base = (n * g.in_ch + c) * g.in_plane();
            let dout = &dy[(n * g.in_ch + c) * p..][..p];
            if let Some(db) = db.as_mut() {
                db[c] += sum_lanes(dout);
            }
            if let Some(dw) = dw.as_mut() {
                fill_padded(g, &x[base..base + g.in_plane()], &mut padded);
                let dk = &mut dw[c * kk..(c + 1) * kk];
                for u in 0..g.kh {
                    for v in 0..g.kw {
                        let mut acc = T::zero();
                        for oy in 0..g.out_h {
                            let src = &padded[(oy * g.stride + u) * pw + v..];
                            let drow = &dout[oy * g.out_w..(oy + 1) * g.out_w];
                            if g.stride == 1 {
                                acc += dot_lanes(drow, &src[..g.out_w]);
                            } else {
                                for (ox, slot) in gathered.iter_mut().enumerate() {
                                    *slot = src[ox * g.stride];
                                }
                                acc += dot_lanes(drow, &gathered);
                            }
                        }
                        dk[u * g.kw + v] += acc;
                    }
                }
            }
            if let Some(dx) = dx.as_mut() {
                let kern = &w[c * kk..(c + 1) * kk];
                dpadded.fill(T::zero());
                for u in 0..g.kh {
                    for v in 0..g.kw {
                        let k = kern[u * g.kw + v];
                        for oy in 0..g.out_h {
                            let drow = &dout[oy * g.out_w..(oy + 1) * g.out_w];
                            let dst = &mut dpadded[(oy * g.stride + u) * pw + v..];
                            if g.stride == 1 {
                                for (o, &d) in dst[..g.out_w].iter_mut().zip(drow) {
                                    *o += k * d;
                                }
                            } else {
                                for (ox, &d) in drow.iter().enumerate() {
                                    dst[ox * g.stride] += k * d;
                                }
                            }
                        }
                    }
                }
                let dplane = &mut dx[base..base + g.in_plane()];
                for r in 0..g.in_h {
                    let src = &dpadded[(r + g.pad) * pw + g.pad..][..g.in_w];
                    for (d, &s) in dplane[r * g.in_w..(r + 1) * g.in_w].iter_mut().zip(src) {
                        *d += s;
                    }
                }
            }
        }
    }
    (dx, dw, db)
}

/// `y = x * w + b` for `x: N x F`, `w: F x G`, `b: G`.
pub fn dense<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    let [n, f] = dims2(x, "dense")?;
    let [f2, gdim] = dims2(w, "dense")?;
    if f != f2 {
        return Err(Error::invalid(format!("dense: input has {f} features, weight expects {f2}")));
    }
    check_bias(b, gdim, "dense")?;
    let mut y = vec![T::zero(); n * gdim];
    if let Some(b) = b {
        for row in y.chunks_mut(gdim) {
            row.copy_from_slice(b.data());
        }
    }
    let beta = if b.is_some() { T::one() } else { T::zero() };
    T::gemm(n, f, gdim, T::one(), x.data(), false, w.data(), false, beta, &mut y);
    Ok(Tensor::from_parts(vec![n, gdim], y))
}

#[allow(clippy::type_complexity)]
pub fn dense_backward<T: Scalar>(
    n: usize,
    f: usize,
    gdim: usize,
    x: &[T],
    w: &[T],
    dy: &[T],
    need: [bool; 3],
) -> (Option<Vec<T>>, Option<Vec<T>>, Option<Vec<T>>) {
    let dx = need[0].then(|| {
        let mut dx = vec![T::zero(); n * f];
        T::gemm(n, gdim, f, T::one(), dy, false, w, true, T::zero(), &mut dx);
        dx
    });
    let dw = need[1].then(|| {
        let mut dw = vec![T::zero(); f * gdim];
        T::gemm(f, n, gdim, T::one(), x, true, dy, false, T::zero(), &mut dw);
        dw
    });
    let db = need[2].then(|| {
        let mut db = vec![T::zero(); gdim];
        for row in dy.chunks(gdim) {
            for (a, &d) in db.iter_mut().zip(row) {
                *a += d;
            }
        }
        db
    });
    (dx, dw, db)
}

/// Per-channel statistics kept from a batch-norm forward pass; the
/// normalised input is recomputed from these in the backward rule.
#[derive(Clone, Debug)]
pub struct BnSaved<T> {
    pub mean: Vec<T>,
    pub inv_std: Vec<T>,
    pub mode: BnMode,
    pub act: Activation,
}

/// Batch normalisation over `N, H, W` for each channel of an NCHW tensor.
///
/// Train mode normalises with the biased batch variance and folds the batch
/// statistics into `running` as `running = momentum*running + (1-momentum)*batch`.
pub fn batchnorm<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running: &mut RunningStats<T>,
    mode: BnMode,
    momentum: T,
    eps: T,
) -> Result<(Tensor<T>, BnSaved<T>)> {
    batchnorm_act(x, gamma, beta, running, mode, momentum, eps, Activation::Linear)
}

/// [`batchnorm`] followed by an activation, in one pass over the output.
#[allow(clippy::too_many_arguments)]
pub fn batchnorm_act<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running: &mut RunningStats<T>,
    mode: BnMode,
    momentum: T,
    eps: T,
    act: Activation,
) -> Result<(Tensor<T>, BnSaved<T>)> {
    let [n, c, h, w] = dims4(x, "batchnorm")?;
    if gamma.shape() != [c] || beta.shape() != [c] || running.mean.len() != c || running.var.len() != c {
        return Err(Error::invalid(format!("batchnorm: parameters do not match {c} channels")));
    }
    let plane = h * w;
    let count = n * plane;
    if mode == BnMode::Train && count < 2 {
        return Err(Error::invalid("batchnorm: train mode needs at least 2 values per channel"));
    }
    let xd = x.data();
    let mut y = vec![T::zero(); xd.len()];
    let mut means = vec![T::zero(); c];
    let mut inv_std = vec![T::zero(); c];
    let inv_count = T::one() / T::from_usize(count).unwrap();
    let (zero, six) = (T::zero(), T::lit(6.0));
    for ch in 0..c {
        let planes = || (0..n).map(move |b| (b * c + ch) * plane);
        let (mean, var) = match mode {
            BnMode::Train => {
                let mean = planes().map(|o| sum_lanes(&xd[o..o + plane])).fold(T::zero(), |a, s| a + s) * inv_count;
                let mut sq = T::zero();
                for o in planes() {
                    let mut acc = [T::zero(); 8];
                    let chunks = xd[o..o + plane].chunks_exact(8);
                    for &v in chunks.remainder() {
                        sq += (v - mean) * (v - mean);
                    }
                    for ck in chunks {
                        for (a, &v) in acc.iter_mut().zip(ck) {
                            *a += (v - mean) * (v - mean);
                        }
                    }
                    sq += acc.iter().fold(T::zero(), |s, &v| s + v);
                }
                let var = sq * inv_count;
                running.mean[ch] = momentum * running.mean[ch] + (T::one() - momentum) * mean;
                running.var[ch] = momentum * running.var[ch] + (T::one() - momentum) * var;
                (mean, var)
            }
            BnMode::Eval => (running.mean[ch], running.var[ch]),
        };
        let istd = T::one() / (var + eps).sqrt();
        means[ch] = mean;
        inv_std[ch] = istd;
        let scale = gamma.data()[ch] * istd;
        let shift = beta.data()[ch] - mean * scale;
        for o in planes() {
            let dst = &mut y[o..o + plane];
            let src = &xd[o..o + plane];
            match act {
                Activation::Linear => dst.iter_mut().zip(src).for_each(|(d, &v)| *d = v * scale + shift),
                Activation::Relu => dst.iter_mut().zip(src).for_each(|(d, &v)| *d = (v * scale + shift).max(zero)),
                Activation::Relu6 => {
                    dst.iter_mut().zip(src).for_each(|(d, &v)| *d = (v * scale + shift).max(zero).min(six))
                }
            }
        }
    }
    Ok((Tensor::from_parts(x.shape().to_vec(), y), BnSaved { mean: means, inv_std, mode, act }))
}

/// Backward rule of [`batchnorm_act`]. `y` is the forward output, from
/// which the activation's pass-through mask is recovered.
#[allow(clippy::type_complexity, clippy::too_many_arguments)]
pub fn batchnorm_backward<T: Scalar>(
    shape: &[usize],
    saved: &BnSaved<T>,
    x: &[T],
    y: &[T],
    gamma: &[T],
    dy: &[T],
    need: [bool; 3],
) -> (Option<Vec<T>>, Option<Vec<T>>, Option<Vec<T>>) {
    let (n, c) = (shape[0], shape[1]);
    let plane = shape[2] * shape[3];
    let count = T::from_usize(n * plane).unwrap();
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    let mut dx = need[0].then(|| vec![T::zero(); dy.len()]);
    let mut dz = vec![T::zero(); plane];
    let mut xhat = vec![T::zero(); plane];
    let fill = |o: usize, ch: usize, dz: &mut [T], xhat: &mut [T]| {
        act_mask_grad(&y[o..o + plane], &dy[o..o + plane], saved.act, dz);
        let (m, s) = (saved.mean[ch], saved.inv_std[ch]);
        xhat.iter_mut().zip(&x[o..o + plane]).for_each(|(h, &v)| *h = (v - m) * s);
    };
    for ch in 0..c {
        let (mut sum_dz, mut sum_dz_xhat) = (T::zero(), T::zero());
        for b in 0..n {
            let o = (b * c + ch) * plane;
            fill(o, ch, &mut dz, &mut xhat);
            sum_dz += sum_lanes(&dz);
            sum_dz_xhat += dot_lanes(&dz, &xhat);
        }
        dgamma[ch] = sum_dz_xhat;
        dbeta[ch] = sum_dz;
        let Some(dx) = dx.as_mut() else { continue };
        let scale = gamma[ch] * saved.inv_std[ch];
        for b in 0..n {
            let o = (b * c + ch) * plane;
            fill(o, ch, &mut dz, &mut xhat);
            let dst = &mut dx[o..o + plane];
            match saved.mode {
                BnMode::Train => {
                    // dx = g*istd/M * (M*dz - sum(dz) - xhat*sum(dz*xhat))
                    let k = scale / count;
                    for ((d, &z), &h) in dst.iter_mut().zip(&dz).zip(&xhat) {
                        *d = k * (count * z - sum_dz - h * sum_dz_xhat);
                    }
                }
                BnMode::Eval => dst.iter_mut().zip(&dz).for_each(|(d, &z)| *d = scale * z),
            }
        }
    }
    (dx, need[1].then_some(dgamma), need[2].then_some(dbeta))
}

/// Gradient through an activation, given its *output* `y`.
fn act_mask_grad<T: Scalar>(y: &[T], dy: &[T], act: Activation, out: &mut [T]) {
    let (zero, six) = (T::zero(), T::lit(6.0));
    match act {
        Activation::Linear => out.copy_from_slice(dy),
        Activation::Relu => {
            for ((o, &v), &d) in out.iter_mut().zip(y).zip(dy) {
                *o = if v > zero { d } else { zero };
            }
        }
        Activation::Relu6 => {
            for ((o, &v), &d) in out.iter_mut().zip(y).zip(dy) {
                *o = if (v > zero) & (v < six) { d } else { zero };
            }
        }
    }
}

pub fn activation<T: Scalar>(x: &Tensor<T>, kind: Activation) -> Tensor<T> {
    let six = T::lit(6.0);
    let data = match kind {
        Activation::Linear => x.data().to_vec(),
        Activation::Relu => x.data().iter().map(|&v| if v > T::zero() { v } else { T::zero() }).collect(),
        Activation::Relu6 => x
            .data()
            .iter()
            .map(|&v| if v > T::zero() { v.min(six) } else { T::zero() })
            .collect(),
    };
    Tensor::from_parts(x.shape().to_vec(), data)
}

/// Gradient through an activation given its *input* `x`.
pub fn activation_backward<T: Scalar>(x: &[T], dy: &[T], kind: Activation) -> Vec<T> {
    let (zero, six) = (T::zero(), T::lit(6.0));
    match kind {
        Activation::Linear => dy.to_vec(),
        Activation::Relu => x.iter().zip(dy).map(|(&v, &d)| if v > zero { d } else { zero }).collect(),
        Activation::Relu6 => {
            x.iter().zip(dy).map(|(&v, &d)| if (v > zero) & (v < six) { d } else { zero }).collect()
        }
    }
}

/// Max pooling without padding. Also returns, for every output element,
/// the flat input index it was taken from (ties go to the lowest index).
pub fn maxpool2d<T: Scalar>(x: &Tensor<T>, k: usize, stride: usize) -> Result<(Tensor<T>, Vec<usize>)> {
    let [n, c, h, w] = dims4(x, "maxpool2d")?;
    if k == 0 || stride == 0 {
        return Err(Error::invalid("maxpool2d: window and stride must be >= 1"));
    }
    if k > h || k > w {
        return Err(Error::invalid(format!("maxpool2d: window {k} larger than input {h}x{w}")));
    }
    let (oh, ow) = ((h - k) / stride + 1, (w - k) / stride + 1);
    let xd = x.data();
    let mut y = Vec::with_capacity(n * c * oh * ow);
    let mut arg = Vec::with_capacity(n * c * oh * ow);
    for nc in 0..n * c {
        let base = nc * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + oy * stride * w + ox * stride;
                for u in 0..k {
                    for v in 0..k {
                        let i = base + (oy * stride + u) * w + ox * stride + v;
                        if xd[i] > xd[best] {
                            best = i;
                        }
                    }
                }
                y.push(xd[best]);
                arg.push(best);
            }
        }
    }
    Ok((Tensor::from_parts(vec![n, c, oh, ow], y), arg))
}

pub fn global_avg_pool<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = dims4(x, "global_avg_pool")?;
    let inv = T::one() / T::from_usize(h * w).unwrap();
    let data = x.data().chunks(h * w).map(|p| p.iter().copied().sum::<T>() * inv).collect();
    Ok(Tensor::from_parts(vec![n, c], data))
}

/// Row-wise concatenation of `N x F1` and `N x F2`, `a`'s columns first.
pub fn concat_features<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, f1] = dims2(a, "concat_features")?;
    let [n2, f2] = dims2(b, "concat_features")?;
    if n != n2 {
        return Err(Error::invalid(format!("concat_features: batch sizes {n} and {n2} differ")));
    }
    let mut data = Vec::with_capacity(n * (f1 + f2));
    for r in 0..n {
        data.extend_from_slice(&a.data()[r * f1..(r + 1) * f1]);
        data.extend_from_slice(&b.data()[r * f2..(r + 1) * f2]);
    }
    Ok(Tensor::from_parts(vec![n, f1 + f2], data))
}

/// Mean softmax cross-entropy over the batch, via log-sum-exp.
/// Returns the loss and the row-wise softmax probabilities.
pub fn softmax_cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<(T, Tensor<T>)> {
    let [n, k] = dims2(logits, "softmax_cross_entropy")?;
    if labels.len() != n {
        return Err(Error::invalid(format!("softmax_cross_entropy: {} labels for {n} rows", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::invalid(format!("softmax_cross_entropy: label {bad} out of range [0, {k})")));
    }
    let mut probs = vec![T::zero(); n * k];
    let mut total = T::zero();
    for (r, &label) in labels.iter().enumerate() {
        let row = &logits.data()[r * k..(r + 1) * k];
        let (arg, max) = row
            .iter()
            .copied()
            .enumerate()
            .fold((0, T::neg_infinity()), |best, (i, v)| if v > best.1 { (i, v) } else { best });
        let exps: Vec<T> = row.iter().map(|&v| (v - max).exp()).collect();
        // exps[arg] == 1, so ln(sum) = ln_1p(sum of the others).
        let rest: T = exps.iter().enumerate().filter(|&(i, _)| i != arg).map(|(_, &e)| e).sum();
        let denom = T::one() + rest;
        for (p, e) in probs[r * k..(r + 1) * k].iter_mut().zip(&exps) {
            *p = *e / denom;
        }
        total += rest.ln_1p() + (max - row[label]);
    }
    let loss = total / T::from_usize(n).unwrap();
    Ok((loss, Tensor::from_parts(vec![n, k], probs)))
}
