//! Layer primitives with hand-written backward passes.
//!
//! A network is a [`ParamStore`] plus one or more [`Block`]s. Blocks are
//! straight-line op sequences whose forward pass returns a cache that the
//! backward pass reads (never consumes), so one forward can be
//! differentiated against several objectives.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const LEAKY_SLOPE: f64 = 0.2;
pub const NORM_EPS: f64 = 1e-5;
pub const DROPOUT_RATE: f64 = 0.5;
pub const INIT_STD: f64 = 0.02;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub len: usize,
}

/// Named flat parameter buffers with matching gradient buffers.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T> {
    pub specs: Vec<ParamSpec>,
    pub values: Vec<Vec<T>>,
    pub grads: Vec<Vec<T>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    Weight,
    Zero,
    Gamma,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self { specs: Vec::new(), values: Vec::new(), grads: Vec::new() }
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn add(&mut self, name: String, len: usize, init: Init, rng: &mut ChaCha8Rng) -> usize {
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let values = (0..len)
            .map(|_| match init {
                Init::Weight => T::from_f64_lossy(normal.sample(rng)),
                Init::Zero => T::zero(),
                Init::Gamma => T::from_f64_lossy(1.0 + normal.sample(rng)),
            })
            .collect();
        self.specs.push(ParamSpec { name, len });
        self.values.push(values);
        self.grads.push(vec![T::zero(); len]);
        self.specs.len() - 1
    }

    pub fn count(&self) -> usize {
        self.values.iter().map(Vec::len).sum()
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            g.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.specs.iter().position(|s| s.name == name)
    }

    /// Flat `(buffer, offset)` address of the `i`-th scalar across all buffers.
    pub fn locate(&self, mut i: usize) -> Option<(usize, usize)> {
        for (b, v) in self.values.iter().enumerate() {
            if i < v.len() {
                return Some((b, i));
            }
            i -= v.len();
        }
        None
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        let conv = |bufs: &Vec<Vec<T>>| -> Vec<Vec<U>> {
            bufs.iter().map(|b| b.iter().map(|v| U::from_f64_lossy(v.as_f64())).collect()).collect()
        };
        ParamStore { specs: self.specs.clone(), values: conv(&self.values), grads: conv(&self.grads) }
    }
}

/// Geometry of a square-kernel convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub const fn new(kernel: usize, stride: usize, pad: usize) -> Self {
        Self { kernel, stride, pad }
    }

    /// Output side of a convolution over an input of side `n`, if positive.
    pub fn conv_out(&self, n: usize) -> Option<usize> {
        let padded = n + 2 * self.pad;
        (padded >= self.kernel).then(|| (padded - self.kernel) / self.stride + 1)
    }

    /// Output side of the matching transposed convolution.
    pub fn transpose_out(&self, n: usize) -> usize {
        (n - 1) * self.stride + self.kernel - 2 * self.pad
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Op {
    /// Weight `[cout, cin·k·k]`.
    Conv { weight: usize, bias: Option<usize>, cin: usize, cout: usize, geom: ConvGeom },
    /// Weight `[cin, cout·k·k]`.
    ConvTranspose { weight: usize, bias: Option<usize>, cin: usize, cout: usize, geom: ConvGeom },
    InstanceNorm { gamma: usize, beta: usize },
    LeakyRelu,
    Relu,
    Tanh,
    Dropout,
}

#[derive(Clone, Debug)]
enum OpCache<T> {
    Conv { cols: Vec<T>, in_shape: (usize, usize, usize) },
    ConvTranspose { input: Tensor<T> },
    Norm { xhat: Vec<T>, inv_std: Vec<T> },
    /// Pre-activation input.
    Input(Tensor<T>),
    /// Post-activation output.
    Output(Tensor<T>),
    /// Per-element multiplier; `None` when dropout was inactive.
    Mask(Option<Vec<T>>),
}

#[derive(Clone, Debug)]
pub struct BlockCache<T> {
    ops: Vec<OpCache<T>>,
}

impl<T: Scalar> BlockCache<T> {
    /// Appends the sign of every rectifier input, marking which linear piece each one is on.
    pub fn push_signs(&self, out: &mut Vec<bool>) {
        for c in &self.ops {
            if let OpCache::Input(x) = c {
                out.extend(x.data().iter().map(|&v| v > T::zero()));
            }
        }
    }
}

/// A straight-line sequence of ops.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Block {
    pub ops: Vec<Op>,
}

/// Unfolds `x` (C×H×W) into a `(C·k·k) × (ho·wo)` patch matrix.
#[allow(clippy::too_many_arguments)]
fn im2col<T: Scalar>(x: &[T], c: usize, h: usize, w: usize, g: ConvGeom, ho: usize, wo: usize) -> Vec<T> {
    let k = g.kernel;
    let p = ho * wo;
    let mut cols = vec![T::zero(); c * k * k * p];
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = ((ci * k + ky) * k + kx) * p;
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    let dst = &mut cols[row + oy * wo..row + (oy + 1) * wo];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < w as isize {
                            *d = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters patch columns back, summing overlaps.
#[allow(clippy::too_many_arguments)]
fn col2im<T: Scalar>(cols: &[T], c: usize, h: usize, w: usize, g: ConvGeom, ho: usize, wo: usize) -> Vec<T> {
    let k = g.kernel;
    let p = ho * wo;
    let mut x = vec![T::zero(); c * h * w];
    for ci in 0..c {
        let plane = &mut x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = ((ci * k + ky) * k + kx) * p;
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &cols[row + oy * wo..row + (oy + 1) * wo];
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, &s) in src.iter().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] += s;
                        }
                    }
                }
            }
        }
    }
    x
}

fn add_bias<T: Scalar>(y: &mut [T], bias: &[T], plane: usize) {
    for (row, &b) in y.chunks_mut(plane).zip(bias) {
        row.iter_mut().for_each(|v| *v += b);
    }
}

fn bias_grad<T: Scalar>(dy: &[T], grad: &mut [T], plane: usize) {
    for (row, g) in dy.chunks(plane).zip(grad) {
        *g += row.iter().copied().sum::<T>();
    }
}

impl Block {
    pub fn push(&mut self, op: Op) {
        self.ops.push(op);
    }

    /// Output shape for an input shape, or `None` if a convolution collapses.
    pub fn out_shape(&self, (mut c, mut h, mut w): (usize, usize, usize)) -> Option<(usize, usize, usize)> {
        for op in &self.ops {
            match *op {
                Op::Conv { cin, cout, geom, .. } => {
                    if cin != c {
                        return None;
                    }
                    (c, h, w) = (cout, geom.conv_out(h)?, geom.conv_out(w)?);
                    if h == 0 || w == 0 {
                        return None;
                    }
                }
                Op::ConvTranspose { cin, cout, geom, .. } => {
                    if cin != c {
                        return None;
                    }
                    (c, h, w) = (cout, geom.transpose_out(h), geom.transpose_out(w));
                }
                _ => {}
            }
        }
        Some((c, h, w))
    }

    /// Runs the block. `rng` enables dropout; `None` is inference mode.
    pub fn forward<T: Scalar>(
        &self,
        values: &[Vec<T>],
        x: &Tensor<T>,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Tensor<T>, BlockCache<T>)> {
        let mut caches = Vec::with_capacity(self.ops.len());
        let mut cur = x.clone();
        for op in &self.ops {
            let (next, cache) = match *op {
                Op::Conv { weight, bias, cin, cout, geom } => {
                    let (c, h, w) = cur.shape();
                    if c != cin {
                        return Err(Error::ShapeMismatch(format!("conv expects {cin} channels, got {c}")));
                    }
                    let (ho, wo) = match (geom.conv_out(h), geom.conv_out(w)) {
                        (Some(ho), Some(wo)) if ho > 0 && wo > 0 => (ho, wo),
                        _ => return Err(Error::ShapeMismatch(format!("input {h}×{w} too small for convolution"))),
                    };
                    let cols = im2col(cur.data(), c, h, w, geom, ho, wo);
                    let kk = cin * geom.kernel * geom.kernel;
                    let mut y = vec![T::zero(); cout * ho * wo];
                    T::gemm(cout, kk, ho * wo, &values[weight], false, &cols, false, T::zero(), &mut y);
                    if let Some(b) = bias {
                        add_bias(&mut y, &values[b], ho * wo);
                    }
                    (Tensor::from_vec(cout, ho, wo, y)?, OpCache::Conv { cols, in_shape: (c, h, w) })
                }
                Op::ConvTranspose { weight, bias, cin, cout, geom } => {
                    let (c, h, w) = cur.shape();
                    if c != cin {
                        return Err(Error::ShapeMismatch(format!("transpose conv expects {cin} channels, got {c}")));
                    }
                    let (ho, wo) = (geom.transpose_out(h), geom.transpose_out(w));
                    let ckk = cout * geom.kernel * geom.kernel;
                    let mut cols = vec![T::zero(); ckk * h * w];
                    T::gemm(ckk, cin, h * w, &values[weight], true, cur.data(), false, T::zero(), &mut cols);
                    let mut y = col2im(&cols, cout, ho, wo, geom, h, w);
                    if let Some(b) = bias {
                        add_bias(&mut y, &values[b], ho * wo);
                    }
                    (Tensor::from_vec(cout, ho, wo, y)?, OpCache::ConvTranspose { input: cur })
                }
                Op::InstanceNorm { gamma, beta } => {
                    let (c, h, w) = cur.shape();
                    let n = h * w;
                    let eps = T::from_f64_lossy(NORM_EPS);
                    let nf = T::from_usize(n).expect("plane size");
                    let mut xhat = vec![T::zero(); c * n];
                    let mut inv_std = vec![T::zero(); c];
                    let mut y = vec![T::zero(); c * n];
                    for ch in 0..c {
                        let xs = cur.plane(ch);
                        let mean = xs.iter().copied().sum::<T>() / nf;
                        let var = xs.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nf;
                        let is = T::one() / (var + eps).sqrt();
                        inv_std[ch] = is;
                        let (g, b) = (values[gamma][ch], values[beta][ch]);
                        for i in 0..n {
                            let xh = (xs[i] - mean) * is;
                            xhat[ch * n + i] = xh;
                            y[ch * n + i] = g * xh + b;
                        }
                    }
                    (Tensor::from_vec(c, h, w, y)?, OpCache::Norm { xhat, inv_std })
                }
                Op::LeakyRelu => {
                    let s = T::from_f64_lossy(LEAKY_SLOPE);
                    (cur.map(|v| if v > T::zero() { v } else { v * s }), OpCache::Input(cur))
                }
                Op::Relu => (cur.map(|v| v.max(T::zero())), OpCache::Input(cur)),
                Op::Tanh => {
                    let y = cur.map(T::tanh);
                    (y.clone(), OpCache::Output(y))
                }
                Op::Dropout => match rng.as_deref_mut() {
                    Some(r) => {
                        let keep = T::from_f64_lossy(1.0 / (1.0 - DROPOUT_RATE));
                        let mask: Vec<T> = (0..cur.len())
                            .map(|_| if r.random::<f64>() < DROPOUT_RATE { T::zero() } else { keep })
                            .collect();
                        let mut y = cur;
                        y.data_mut().iter_mut().zip(&mask).for_each(|(v, &m)| *v *= m);
                        (y, OpCache::Mask(Some(mask)))
                    }
                    None => (cur, OpCache::Mask(None)),
                },
            };
            caches.push(cache);
            cur = next;
        }
        Ok((cur, BlockCache { ops: caches }))
    }

    /// Back-propagates `dy`, returning the input gradient.
    ///
    /// Parameter gradients are accumulated into `grads` when given.
    pub fn backward<T: Scalar>(
        &self,
        values: &[Vec<T>],
        mut grads: Option<&mut [Vec<T>]>,
        cache: &BlockCache<T>,
        dy: Tensor<T>,
    ) -> Result<Tensor<T>> {
        let mut d = dy;
        for (op, c) in self.ops.iter().zip(&cache.ops).rev() {
            d = match (op, c) {
                (&Op::Conv { weight, bias, cin, cout, geom }, OpCache::Conv { cols, in_shape }) => {
                    let (_, ho, wo) = d.shape();
                    let p = ho * wo;
                    let kk = cin * geom.kernel * geom.kernel;
                    if let Some(g) = grads.as_deref_mut() {
                        T::gemm(cout, p, kk, d.data(), false, cols, true, T::one(), &mut g[weight]);
                        if let Some(b) = bias {
                            bias_grad(d.data(), &mut g[b], p);
                        }
                    }
                    let mut dcols = vec![T::zero(); kk * p];
                    T::gemm(kk, cout, p, &values[weight], true, d.data(), false, T::zero(), &mut dcols);
                    let (c, h, w) = *in_shape;
                    Tensor::from_vec(c, h, w, col2im(&dcols, c, h, w, geom, ho, wo))?
                }
                (&Op::ConvTranspose { weight, bias, cin, cout, geom }, OpCache::ConvTranspose { input }) => {
                    let (_, ho, wo) = d.shape();
                    let (_, h, w) = input.shape();
                    let ckk = cout * geom.kernel * geom.kernel;
                    let dcols = im2col(d.data(), cout, ho, wo, geom, h, w);
                    if let Some(g) = grads.as_deref_mut() {
                        T::gemm(cin, h * w, ckk, input.data(), false, &dcols, true, T::one(), &mut g[weight]);
                        if let Some(b) = bias {
                            bias_grad(d.data(), &mut g[b], ho * wo);
                        }
                    }
                    let mut dx = vec![T::zero(); cin * h * w];
                    T::gemm(cin, ckk, h * w, &values[weight], false, &dcols, false, T::zero(), &mut dx);
                    Tensor::from_vec(cin, h, w, dx)?
                }
                (&Op::InstanceNorm { gamma, beta }, OpCache::Norm { xhat, inv_std }) => {
                    let (c, h, w) = d.shape();
                    let n = h * w;
                    let nf = T::from_usize(n).expect("plane size");
                    let mut dx = vec![T::zero(); c * n];
                    for ch in 0..c {
                        let dys = d.plane(ch);
                        let xh = &xhat[ch * n..(ch + 1) * n];
                        let g = values[gamma][ch];
                        let sum_dy: T = dys.iter().copied().sum();
                        let sum_dy_xh: T = dys.iter().zip(xh).map(|(&a, &b)| a * b).sum();
                        if let Some(gr) = grads.as_deref_mut() {
                            gr[gamma][ch] += sum_dy_xh;
                            gr[beta][ch] += sum_dy;
                        }
                        // dxhat = g·dy, so the sums scale by g.
                        let k = g * inv_std[ch] / nf;
                        for i in 0..n {
                            dx[ch * n + i] = k * (nf * dys[i] - sum_dy - xh[i] * sum_dy_xh);
                        }
                    }
                    Tensor::from_vec(c, h, w, dx)?
                }
                (Op::LeakyRelu, OpCache::Input(x)) => {
                    let s = T::from_f64_lossy(LEAKY_SLOPE);
                    let mut dx = d;
                    dx.data_mut().iter_mut().zip(x.data()).for_each(|(g, &v)| {
                        if v <= T::zero() {
                            *g *= s
                        }
                    });
                    dx
                }
                (Op::Relu, OpCache::Input(x)) => {
                    let mut dx = d;
                    dx.data_mut().iter_mut().zip(x.data()).for_each(|(g, &v)| {
                        if v <= T::zero() {
                            *g = T::zero()
                        }
                    });
                    dx
                }
                (Op::Tanh, OpCache::Output(y)) => {
                    let mut dx = d;
                    dx.data_mut().iter_mut().zip(y.data()).for_each(|(g, &v)| *g *= T::one() - v * v);
                    dx
                }
                (Op::Dropout, OpCache::Mask(mask)) => {
                    let mut dx = d;
                    if let Some(m) = mask {
                        dx.data_mut().iter_mut().zip(m).for_each(|(g, &k)| *g *= k);
                    }
                    dx
                }
                _ => unreachable!("cache does not match op"),
            };
        }
        Ok(d)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn naive_conv(x: &Tensor<f64>, w: &[f64], cout: usize, g: ConvGeom) -> Tensor<f64> {
        let (c, h, wd) = x.shape();
        let ho = g.conv_out(h).unwrap();
        let wo = g.conv_out(wd).unwrap();
        let k = g.kernel;
        let mut y = Tensor::zeros(cout, ho, wo);
        for co in 0..cout {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut s = 0.0;
                    for ci in 0..c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                                let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                    s += w[co * c * k * k + (ci * k + ky) * k + kx]
                                        * x.data()[ci * h * wd + iy as usize * wd + ix as usize];
                                }
                            }
                        }
                    }
                    y.data_mut()[co * ho * wo + oy * wo + ox] = s;
                }
            }
        }
        y
    }

    fn random_tensor(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> Tensor<f64> {
        Tensor::from_vec(c, h, w, (0..c * h * w).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn conv_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut ps = ParamStore::<f64>::default();
        let g = ConvGeom::new(4, 2, 1);
        let w = ps.add("w".into(), 3 * 2 * 16, Init::Weight, &mut rng);
        let block = Block { ops: vec![Op::Conv { weight: w, bias: None, cin: 2, cout: 3, geom: g }] };
        let x = random_tensor(&mut rng, 2, 8, 8);
        let (y, _) = block.forward(&ps.values, &x, None).unwrap();
        let want = naive_conv(&x, &ps.values[w], 3, g);
        for (a, b) in y.data().iter().zip(want.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn transpose_conv_is_adjoint_of_conv() {
        // <conv(x), y> == <x, convT(y)> when both share one weight tensor.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = ConvGeom::new(4, 2, 1);
        let (cin, cout) = (2, 3);
        let wts: Vec<f64> = (0..cin * cout * 16).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut ps = ParamStore::<f64>::default();
        let w = ps.add("w".into(), wts.len(), Init::Zero, &mut rng);
        ps.values[w] = wts.clone();
        let x = random_tensor(&mut rng, cin, 8, 8);
        let y = random_tensor(&mut rng, cout, 4, 4);
        let cx = naive_conv(&x, &wts, cout, g);
        // Conv weight [cout, cin·kk] read as transpose weight [cin', cout'·kk] with cin' = cout.
        let t = Block { ops: vec![Op::ConvTranspose { weight: w, bias: None, cin: cout, cout: cin, geom: g }] };
        let (ty, _) = t.forward(&ps.values, &y, None).unwrap();
        let lhs: f64 = cx.data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(ty.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
    }

    #[test]
    fn geometry() {
        let s2 = ConvGeom::new(4, 2, 1);
        assert_eq!(s2.conv_out(64), Some(32));
        assert_eq!(s2.transpose_out(32), 64);
        let s1 = ConvGeom::new(4, 1, 1);
        assert_eq!(s1.conv_out(8), Some(7));
        assert_eq!(s1.conv_out(2), Some(1));
        assert_eq!(s1.conv_out(1), None);
    }
}
