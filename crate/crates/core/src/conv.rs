//! Direct convolution: dense reference, zero-skipping sparse, and pointwise.
//!
//! All three share one kernel driven by a list of `(dy, dx)` taps. The dense
//! path visits every tap of the `k x k` window, the sparse path only the taps
//! kept by its mask, so the work skipped is exactly the masked-out weights.
//! Inputs are zero-padded into a scratch buffer up front; every visited tap is
//! a real multiply-accumulate and the MAC counter reports exactly that.
//!
//! Convolution is cross-correlation (no kernel flip), no bias except on 1x1.
//! Per output element the accumulation order is input channel, then kernel
//! row, then kernel column.

use std::sync::atomic::{AtomicU64, Ordering};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::sc_kernels::{check_mask, MaskGrid};
use crate::scalar::Scalar;
use crate::tensor::{Shape4, Tensor4};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ConvGeometry {
    pub k: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn new(k: usize, stride: usize, padding: usize) -> Self {
        Self { k, stride, padding }
    }

    /// `floor((input + 2*padding - k) / stride) + 1`, rejecting empty outputs.
    pub fn output_dim(&self, input: usize) -> Result<usize> {
        if self.k == 0 || self.stride == 0 {
            return Err(Error::InvalidGeometry(format!(
                "kernel {} and stride {} must be positive",
                self.k, self.stride
            )));
        }
        let padded = input + 2 * self.padding;
        if padded < self.k {
            return Err(Error::InvalidGeometry(format!(
                "kernel {} larger than padded input {padded}",
                self.k
            )));
        }
        Ok((padded - self.k) / self.stride + 1)
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        Ok((self.output_dim(h)?, self.output_dim(w)?))
    }
}

/// Count of scalar multiply-accumulates actually executed.
#[derive(Debug, Default)]
pub struct MacCounter(AtomicU64);

impl MacCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&self, macs: u64) {
        self.0.fetch_add(macs, Ordering::Relaxed);
    }

    pub fn get(&self) -> u64 {
        self.0.load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        self.0.store(0, Ordering::Relaxed);
    }
}

impl Clone for MacCounter {
    fn clone(&self) -> Self {
        Self(AtomicU64::new(self.get()))
    }
}

fn full_taps(k: usize) -> Vec<(usize, usize)> {
    (0..k * k).map(|i| (i / k, i % k)).collect()
}

fn check_conv_shapes(x: Shape4, w: Shape4, geom: &ConvGeometry) -> Result<(usize, usize)> {
    if w.h != geom.k || w.w != geom.k {
        return Err(Error::InvalidGeometry(format!(
            "weight spatial size {}x{} does not match kernel size {}",
            w.h, w.w, geom.k
        )));
    }
    if x.c != w.c {
        return Err(Error::ShapeMismatch {
            op: "conv2d",
            expected: x.with_c(w.c),
            found: x,
        });
    }
    geom.output_hw(x.h, x.w)
}

/// Zero-padded copy of every `(n, c)` plane, laid out `(n, c, hp, wp)`.
fn pad_input<T: Scalar>(x: &Tensor4<T>, pad: usize) -> (Vec<T>, usize, usize) {
    let s = x.shape();
    let (hp, wp) = (s.h + 2 * pad, s.w + 2 * pad);
    if pad == 0 {
        return (x.data().to_vec(), hp, wp);
    }
    let mut buf = vec![T::zero(); s.n * s.c * hp * wp];
    for (plane, dst) in x.data().chunks(s.plane()).zip(buf.chunks_mut(hp * wp)) {
        for r in 0..s.h {
            let d = (r + pad) * wp + pad;
            dst[d..d + s.w].copy_from_slice(&plane[r * s.w..(r + 1) * s.w]);
        }
    }
    (buf, hp, wp)
}

/// `out_row[i] += wv * src[base + i*stride]`
#[inline]
fn axpy_strided<T: Scalar>(out_row: &mut [T], wv: T, src: &[T], base: usize, stride: usize) {
    if stride == 1 {
        let src = &src[base..base + out_row.len()];
        for (o, &v) in out_row.iter_mut().zip(src) {
            *o += wv * v;
        }
    } else {
        for (i, o) in out_row.iter_mut().enumerate() {
            *o += wv * src[base + i * stride];
        }
    }
}

pub(crate) fn conv_taps<T: Scalar>(
    x: &Tensor4<T>,
    w: &Tensor4<T>,
    geom: &ConvGeometry,
    taps: &[(usize, usize)],
    counter: &MacCounter,
) -> Result<Tensor4<T>> {
    let xs = x.shape();
    let ws = w.shape();
    let (ho, wo) = check_conv_shapes(xs, ws, geom)?;
    let out_shape = Shape4::new(xs.n, ws.n, ho, wo);
    let mut out = Tensor4::zeros(out_shape)?;
    let (xp, hp, wp) = pad_input(x, geom.padding);
    let in_plane = hp * wp;
    let kk = geom.k * geom.k;
    let s = geom.stride;
    let wdata = w.data();

    out.data_mut()
        .par_chunks_mut(ho * wo)
        .enumerate()
        .for_each(|(idx, plane)| {
            let (n, co) = (idx / ws.n, idx % ws.n);
            for ci in 0..xs.c {
                let src = &xp[(n * xs.c + ci) * in_plane..(n * xs.c + ci + 1) * in_plane];
                let wk = &wdata[(co * ws.c + ci) * kk..(co * ws.c + ci + 1) * kk];
                for &(dy, dx) in taps {
                    let wv = wk[dy * geom.k + dx];
                    for (oy, row) in plane.chunks_mut(wo).enumerate() {
                        axpy_strided(row, wv, src, (oy * s + dy) * wp + dx, s);
                    }
                }
            }
        });

    counter.add((xs.n * ws.n * xs.c * taps.len() * ho * wo) as u64);
    Ok(out)
}

/// Dense reference convolution, `w` shaped `(c_out, c_in, k, k)`.
pub fn conv2d_dense<T: Scalar>(
    x: &Tensor4<T>,
    w: &Tensor4<T>,
    geom: &ConvGeometry,
    counter: &MacCounter,
) -> Result<Tensor4<T>> {
    conv_taps(x, w, geom, &full_taps(geom.k), counter)
}

/// Zero-skipping convolution: only taps kept by `mask` are executed.
/// A nonzero weight at a masked position is a hard error.
pub fn conv2d_sparse<T: Scalar>(
    x: &Tensor4<T>,
    w: &Tensor4<T>,
    mask: &MaskGrid,
    geom: &ConvGeometry,
    counter: &MacCounter,
) -> Result<Tensor4<T>> {
    if mask.k() != geom.k {
        return Err(Error::InvalidGeometry(format!(
            "mask size {} does not match kernel size {}",
            mask.k(),
            geom.k
        )));
    }
    check_mask("conv2d_sparse weight", w, mask)?;
    conv_taps(x, w, geom, &mask.offsets(), counter)
}

/// Pointwise convolution plus per-output-channel bias.
pub fn conv1x1<T: Scalar>(
    x: &Tensor4<T>,
    w: &Tensor4<T>,
    bias: &[T],
    counter: &MacCounter,
) -> Result<Tensor4<T>> {
    if bias.len() != w.shape().n {
        return Err(Error::InvalidConfig(format!(
            "bias length {} does not match {} output channels",
            bias.len(),
            w.shape().n
        )));
    }
    let mut out = conv_taps(x, w, &ConvGeometry::new(1, 1, 0), &[(0, 0)], counter)?;
    let s = out.shape();
    for (i, plane) in out.data_mut().chunks_mut(s.plane()).enumerate() {
        let b = bias[i % s.c];
        plane.iter_mut().for_each(|v| *v += b);
    }
    Ok(out)
}

/// Gradient of a tap-restricted convolution with respect to its input.
pub(crate) fn conv_backward_input<T: Scalar>(
    gout: &Tensor4<T>,
    w: &Tensor4<T>,
    geom: &ConvGeometry,
    taps: &[(usize, usize)],
    in_shape: Shape4,
) -> Result<Tensor4<T>> {
    let ws = w.shape();
    let gs = gout.shape();
    let (ho, wo) = (gs.h, gs.w);
    let pad = geom.padding;
    let (hp, wp) = (in_shape.h + 2 * pad, in_shape.w + 2 * pad);
    let kk = geom.k * geom.k;
    let s = geom.stride;
    let wdata = w.data();
    let gdata = gout.data();
    let mut gin = Tensor4::zeros(in_shape)?;

    gin.data_mut()
        .par_chunks_mut(in_shape.plane())
        .enumerate()
        .for_each(|(idx, dst)| {
            let (n, ci) = (idx / in_shape.c, idx % in_shape.c);
            let mut gp = vec![T::zero(); hp * wp];
            for co in 0..ws.n {
                let g = &gdata[(n * gs.c + co) * ho * wo..(n * gs.c + co + 1) * ho * wo];
                let wk = &wdata[(co * ws.c + ci) * kk..(co * ws.c + ci + 1) * kk];
                for &(dy, dx) in taps {
                    let wv = wk[dy * geom.k + dx];
                    for oy in 0..ho {
                        let base = (oy * s + dy) * wp + dx;
                        let grow = &g[oy * wo..(oy + 1) * wo];
                        if s == 1 {
                            for (d, &gv) in gp[base..base + wo].iter_mut().zip(grow) {
                                *d += wv * gv;
                            }
                        } else {
                            for (ox, &gv) in grow.iter().enumerate() {
                                gp[base + ox * s] += wv * gv;
                            }
                        }
                    }
                }
            }
            for r in 0..in_shape.h {
                let src = (r + pad) * wp + pad;
                dst[r * in_shape.w..(r + 1) * in_shape.w]
                    .copy_from_slice(&gp[src..src + in_shape.w]);
            }
        });
    Ok(gin)
}

/// Gradient with respect to the weights. Taps not listed get exactly zero.
pub(crate) fn conv_backward_weight<T: Scalar>(
    x: &Tensor4<T>,
    gout: &Tensor4<T>,
    geom: &ConvGeometry,
    taps: &[(usize, usize)],
    w_shape: Shape4,
) -> Result<Tensor4<T>> {
    let xs = x.shape();
    let gs = gout.shape();
    let (ho, wo) = (gs.h, gs.w);
    let (xp, hp, wp) = pad_input(x, geom.padding);
    let in_plane = hp * wp;
    let kk = geom.k * geom.k;
    let s = geom.stride;
    let gdata = gout.data();
    let mut gw = Tensor4::zeros(w_shape)?;

    gw.data_mut()
        .par_chunks_mut(w_shape.c * kk)
        .enumerate()
        .for_each(|(co, dst)| {
            for ci in 0..xs.c {
                for &(dy, dx) in taps {
                    let mut acc = T::zero();
                    for n in 0..xs.n {
                        let src = &xp[(n * xs.c + ci) * in_plane..(n * xs.c + ci + 1) * in_plane];
                        let g = &gdata[(n * gs.c + co) * ho * wo..(n * gs.c + co + 1) * ho * wo];
                        for oy in 0..ho {
                            let base = (oy * s + dy) * wp + dx;
                            let grow = &g[oy * wo..(oy + 1) * wo];
                            if s == 1 {
                                for (&gv, &xv) in grow.iter().zip(&src[base..base + wo]) {
                                    acc += gv * xv;
                                }
                            } else {
                                for (ox, &gv) in grow.iter().enumerate() {
                                    acc += gv * src[base + ox * s];
                                }
                            }
                        }
                    }
                    dst[ci * kk + dy * geom.k + dx] = acc;
                }
            }
        });
    Ok(gw)
}

pub(crate) fn dense_taps(k: usize) -> Vec<(usize, usize)> {
    full_taps(k)
}

/// 2x2 max pooling with stride 2. Returns the pooled tensor and, for each
/// output element, the flat input index of the selected maximum (first
/// maximum in row-major scan order).
pub(crate) fn maxpool2x2_with_argmax<T: Scalar>(
    x: &Tensor4<T>,
) -> Result<(Tensor4<T>, Vec<usize>)> {
    let s = x.shape();
    if !s.h.is_multiple_of(2) || !s.w.is_multiple_of(2) {
        return Err(Error::InvalidGeometry(format!(
            "2x2 max pooling needs even spatial dims, got {}x{}",
            s.h, s.w
        )));
    }
    let (ho, wo) = (s.h / 2, s.w / 2);
    let mut out = Tensor4::zeros((s.n, s.c, ho, wo))?;
    let mut argmax = vec![0usize; out.len()];
    let data = x.data();
    let mut o = 0;
    for nc in 0..s.n * s.c {
        let base = nc * s.plane();
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = base + (2 * oy) * s.w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = base + (2 * oy + dy) * s.w + 2 * ox + dx;
                    if data[i] > data[best] {
                        best = i;
                    }
                }
                out.data_mut()[o] = data[best];
                argmax[o] = best;
                o += 1;
            }
        }
    }
    Ok((out, argmax))
}

pub fn maxpool2x2<T: Scalar>(x: &Tensor4<T>) -> Result<Tensor4<T>> {
    maxpool2x2_with_argmax(x).map(|(t, _)| t)
}

/// Per-channel spatial mean, output `(n, c, 1, 1)`.
pub fn global_avg_pool<T: Scalar>(x: &Tensor4<T>) -> Result<Tensor4<T>> {
    let s = x.shape();
    let inv = T::one() / T::lit(s.plane() as f64);
    let data = x
        .data()
        .chunks(s.plane())
        .map(|p| p.iter().fold(T::zero(), |a, &v| a + v) * inv)
        .collect();
    Tensor4::from_vec((s.n, s.c, 1, 1), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sc_kernels::{apply_mask, make_mask_pair};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(shape: (usize, usize, usize, usize), rng: &mut ChaCha8Rng) -> Tensor4<f32> {
        let s: Shape4 = shape.into();
        let data = (0..s.numel())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        Tensor4::from_vec(s, data).unwrap()
    }

    /// Independent sliding-window convolution in f64 with explicit bounds checks.
    fn brute_conv(x: &Tensor4<f32>, w: &Tensor4<f32>, g: &ConvGeometry) -> Vec<f64> {
        let xs = x.shape();
        let ws = w.shape();
        let ho = (xs.h + 2 * g.padding - g.k) / g.stride + 1;
        let wo = (xs.w + 2 * g.padding - g.k) / g.stride + 1;
        let mut out = Vec::new();
        for n in 0..xs.n {
            for co in 0..ws.n {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = 0.0f64;
                        for ci in 0..xs.c {
                            for ky in 0..g.k {
                                for kx in 0..g.k {
                                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                                    let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                                    if iy < 0
                                        || ix < 0
                                        || iy >= xs.h as isize
                                        || ix >= xs.w as isize
                                    {
                                        continue;
                                    }
                                    acc += x.get(n, ci, iy as usize, ix as usize) as f64
                                        * w.get(co, ci, ky, kx) as f64;
                                }
                            }
                        }
                        out.push(acc);
                    }
                }
            }
        }
        out
    }

    #[test]
    fn box_sum() {
        let x = Tensor4::<f32>::full((1, 1, 3, 3), 1.0).unwrap();
        let w = Tensor4::<f32>::full((1, 1, 3, 3), 1.0).unwrap();
        let c = MacCounter::new();
        let y = conv2d_dense(&x, &w, &ConvGeometry::new(3, 1, 1), &c).unwrap();
        assert_eq!(y.get(0, 0, 1, 1), 9.0);
        for (r, col) in [(0, 0), (0, 2), (2, 0), (2, 2)] {
            assert_eq!(y.get(0, 0, r, col), 4.0);
        }
        assert_eq!(c.get(), 81);
    }

    #[test]
    fn identity_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for k in [3usize, 5] {
            let x = rand_tensor((2, 1, 6, 7), &mut rng);
            let w = Tensor4::from_fn((1, 1, k, k), |_, _, r, c| {
                if r == k / 2 && c == k / 2 {
                    1.0
                } else {
                    0.0
                }
            })
            .unwrap();
            let y =
                conv2d_dense(&x, &w, &ConvGeometry::new(k, 1, k / 2), &MacCounter::new()).unwrap();
            assert_eq!(y, x);
        }
    }

    #[test]
    fn dense_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = rand_tensor((2, 3, 8, 8), &mut rng);
        let w = rand_tensor((4, 3, 3, 3), &mut rng);
        for g in [
            ConvGeometry::new(3, 1, 1),
            ConvGeometry::new(3, 2, 0),
            ConvGeometry::new(3, 2, 1),
        ] {
            let y = conv2d_dense(&x, &w, &g, &MacCounter::new()).unwrap();
            let want = brute_conv(&x, &w, &g);
            let err = y
                .data()
                .iter()
                .zip(&want)
                .map(|(&a, &b)| (a as f64 - b).abs())
                .fold(0.0, f64::max);
            assert!(err <= 1e-5, "max abs err {err}");
        }
    }

    #[test]
    fn sparse_mac_count_and_equivalence() {
        let p = make_mask_pair(3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = rand_tensor((1, 1, 4, 4), &mut rng);
        let w = apply_mask(&rand_tensor((1, 1, 3, 3), &mut rng), &p.even).unwrap();
        let g = ConvGeometry::new(3, 1, 1);
        let (cs, cd) = (MacCounter::new(), MacCounter::new());
        let ys = conv2d_sparse(&x, &w, &p.even, &g, &cs).unwrap();
        let yd = conv2d_dense(&x, &w, &g, &cd).unwrap();
        assert_eq!(cs.get(), 80);
        assert_eq!(cd.get(), 144);
        assert!(ys.max_abs_diff(&yd).unwrap() <= 1e-6 * yd.max_abs());
    }

    #[test]
    fn sparse_zero_weights_still_count() {
        let p = make_mask_pair(3).unwrap();
        let x = Tensor4::<f32>::full((1, 2, 5, 5), 3.0).unwrap();
        let w = Tensor4::<f32>::zeros((3, 2, 3, 3)).unwrap();
        let c = MacCounter::new();
        let y = conv2d_sparse(&x, &w, &p.odd, &ConvGeometry::new(3, 1, 0), &c).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
        assert_eq!(c.get(), 3 * 2 * 4 * 9);
    }

    #[test]
    fn sparse_rejects_mask_violation() {
        let p = make_mask_pair(3).unwrap();
        let x = Tensor4::<f32>::zeros((1, 1, 4, 4)).unwrap();
        let w = Tensor4::<f32>::full((1, 1, 3, 3), 1.0).unwrap();
        let r = conv2d_sparse(
            &x,
            &w,
            &p.even,
            &ConvGeometry::new(3, 1, 1),
            &MacCounter::new(),
        );
        assert!(matches!(r, Err(Error::MaskViolation { .. })));
    }

    #[test]
    fn pointwise() {
        let x = Tensor4::<f32>::from_vec((1, 1, 1, 1), vec![3.0]).unwrap();
        let w = Tensor4::<f32>::from_vec((1, 1, 1, 1), vec![2.0]).unwrap();
        let c = MacCounter::new();
        assert_eq!(conv1x1(&x, &w, &[1.0], &c).unwrap().data(), &[7.0]);
        assert_eq!(c.get(), 1);

        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = rand_tensor((2, 4, 3, 5), &mut rng);
        let eye =
            Tensor4::from_fn((4, 4, 1, 1), |o, i, _, _| if o == i { 1.0 } else { 0.0 }).unwrap();
        assert_eq!(conv1x1(&x, &eye, &[0.0; 4], &MacCounter::new()).unwrap(), x);

        let w = rand_tensor((6, 4, 1, 1), &mut rng);
        let c = MacCounter::new();
        let a = conv1x1(&x, &w, &[0.0; 6], &c).unwrap();
        assert_eq!(c.get(), 2 * 6 * 4 * 15);
        let b = conv2d_dense(&x, &w, &ConvGeometry::new(1, 1, 0), &MacCounter::new()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn shape_errors() {
        let x = Tensor4::<f32>::zeros((1, 2, 4, 4)).unwrap();
        let w = Tensor4::<f32>::zeros((1, 3, 3, 3)).unwrap();
        assert!(conv2d_dense(&x, &w, &ConvGeometry::new(3, 1, 1), &MacCounter::new()).is_err());
        let w = Tensor4::<f32>::zeros((1, 2, 3, 3)).unwrap();
        assert!(conv2d_dense(&x, &w, &ConvGeometry::new(5, 1, 0), &MacCounter::new()).is_err());
        assert!(ConvGeometry::new(3, 0, 1).output_dim(4).is_err());
        assert_eq!(ConvGeometry::new(3, 2, 1).output_dim(32).unwrap(), 16);
    }

    #[test]
    fn pooling() {
        let x = Tensor4::<f32>::from_vec((1, 1, 2, 2), vec![1., 2., 3., 4.]).unwrap();
        assert_eq!(maxpool2x2(&x).unwrap().data(), &[4.0]);
        assert!(maxpool2x2(&Tensor4::<f32>::zeros((1, 1, 3, 2)).unwrap()).is_err());

        let c = Tensor4::<f32>::full((2, 3, 4, 4), 2.5).unwrap();
        assert!(global_avg_pool(&c)
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 2.5));

        let g = Tensor4::<f64>::from_fn((1, 2, 3, 5), |_, c, h, w| (c * 15 + h * 5 + w) as f64)
            .unwrap();
        let avg = global_avg_pool(&g).unwrap();
        for c in 0..2 {
            let mut s = 0.0;
            for i in 0..15 {
                s += (c * 15 + i) as f64;
            }
            assert!((avg.get(0, c, 0, 0) - s / 15.0).abs() < 1e-12);
        }
    }

    #[test]
    fn linearity_in_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let x = rand_tensor((1, 3, 7, 7), &mut rng);
        let w1 = rand_tensor((2, 3, 3, 3), &mut rng);
        let w2 = rand_tensor((2, 3, 3, 3), &mut rng);
        let g = ConvGeometry::new(3, 1, 1);
        let c = MacCounter::new();
        let lhs = conv2d_dense(&x, &w1.add(&w2).unwrap(), &g, &c).unwrap();
        let rhs = conv2d_dense(&x, &w1, &g, &c)
            .unwrap()
            .add(&conv2d_dense(&x, &w2, &g, &c).unwrap())
            .unwrap();
        assert!(lhs.max_abs_diff(&rhs).unwrap() <= 1e-5 * lhs.max_abs().max(1.0));
    }

    #[test]
    fn translation_equivariance_interior() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = rand_tensor((1, 2, 10, 10), &mut rng);
        let w = rand_tensor((2, 2, 3, 3), &mut rng);
        let shifted = Tensor4::from_fn((1, 2, 10, 10), |n, c, h, w| {
            if h >= 1 && w >= 2 {
                x.get(n, c, h - 1, w - 2)
            } else {
                0.0
            }
        })
        .unwrap();
        let g = ConvGeometry::new(3, 1, 1);
        let y = conv2d_dense(&x, &w, &g, &MacCounter::new()).unwrap();
        let ys = conv2d_dense(&shifted, &w, &g, &MacCounter::new()).unwrap();
        for c in 0..2 {
            for h in 2..8 {
                for wi in 3..7 {
                    assert_eq!(ys.get(0, c, h + 1, wi + 2), y.get(0, c, h, wi));
                }
            }
        }
    }
}
