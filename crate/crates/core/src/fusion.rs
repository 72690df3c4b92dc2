//! The fused sparse-complementary convolution layer.
//!
//! Forward pipeline for the full configuration:
//!
//! ```text
//!   e = conv_sparse(x, W_even)        o = conv_sparse(x, W_odd)
//!   a = e + o                         v = -a
//!   z = relu(concat[e, o, a, v])      y = conv1x1(z, fuse_w) + fuse_bias
//! ```
//!
//! Disabled branches drop out of the concatenation entirely; the 1x1 weight
//! is sized to the branches that remain.

use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::conv::{conv1x1, conv2d_dense, conv2d_sparse, ConvGeometry, MacCounter};
use crate::error::{Error, Result};
use crate::sc_kernels::{
    check_mask, init_kernel_pair_with, make_mask_pair, normal_fill, validate_k, MaskGrid, MaskId,
    SCKernelPair,
};
use crate::scalar::Scalar;
use crate::tensor::{Shape4, Tensor4};

/// Rational complexity parameter `alpha = c_out / n_base`.
pub type Alpha = Ratio<u64>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FusionMode {
    ParallelFusion,
    SequentialStack,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum KernelKind {
    /// Regular `k x k` kernels (ablation A).
    Dense,
    /// Complementary sparse pair.
    Sparse,
}

/// Ablation configurations: A dense kernels, B sparse pair only,
/// C sparse pair plus addition, D sparse pair plus addition and inverse.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Ablation {
    A,
    B,
    C,
    D,
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Ablation::A => "A",
            Ablation::B => "B",
            Ablation::C => "C",
            Ablation::D => "D",
        })
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" | "a" => Ok(Ablation::A),
            "B" | "b" => Ok(Ablation::B),
            "C" | "c" => Ok(Ablation::C),
            "D" | "d" => Ok(Ablation::D),
            _ => Err(Error::InvalidConfig(format!(
                "unknown ablation label `{s}` (expected A, B, C or D)"
            ))),
        }
    }
}

/// `max(1, round(c_out / alpha))`, rounding half away from zero.
pub fn n_base_for(c_out: usize, alpha: Alpha) -> usize {
    let (num, den) = (*alpha.numer() as u128, *alpha.denom() as u128);
    let n = (2 * c_out as u128 * den + num) / (2 * num);
    (n as usize).max(1)
}

pub fn parse_alpha(s: &str) -> Result<Alpha> {
    let bad = || {
        Error::InvalidConfig(format!(
            "invalid alpha `{s}`: expected a positive integer or ratio p/q"
        ))
    };
    let alpha = match s.split_once('/') {
        Some((p, q)) => {
            let p: u64 = p.trim().parse().map_err(|_| bad())?;
            let q: u64 = q.trim().parse().map_err(|_| bad())?;
            if q == 0 {
                return Err(bad());
            }
            Ratio::new(p, q)
        }
        None => Ratio::from_integer(s.trim().parse().map_err(|_| bad())?),
    };
    if *alpha.numer() == 0 {
        return Err(bad());
    }
    Ok(alpha)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SCFusionConfig {
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub padding: usize,
    pub alpha: Alpha,
    pub use_addition: bool,
    pub use_inverse: bool,
    pub kernel: KernelKind,
    pub mode: FusionMode,
}

impl SCFusionConfig {
    /// Full configuration (ablation D) in parallel-fusion mode.
    pub fn new(
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        padding: usize,
        alpha: Alpha,
    ) -> Self {
        Self {
            c_in,
            c_out,
            k,
            stride,
            padding,
            alpha,
            use_addition: true,
            use_inverse: true,
            kernel: KernelKind::Sparse,
            mode: FusionMode::ParallelFusion,
        }
    }

    pub fn validate(&self) -> Result<()> {
        validate_k(self.k)?;
        if self.c_in == 0 || self.c_out == 0 {
            return Err(Error::InvalidConfig(
                "channel counts must be positive".into(),
            ));
        }
        if self.stride == 0 {
            return Err(Error::InvalidConfig("stride must be positive".into()));
        }
        if *self.alpha.numer() == 0 {
            return Err(Error::InvalidConfig("alpha must be positive".into()));
        }
        if self.use_inverse && !self.use_addition {
            return Err(Error::InvalidConfig(
                "the inverse branch negates the fused sum and requires addition".into(),
            ));
        }
        if self.kernel == KernelKind::Dense && (self.use_addition || self.use_inverse) {
            return Err(Error::InvalidConfig(
                "dense-kernel configuration has no addition or inverse branch".into(),
            ));
        }
        Ok(())
    }

    pub fn n_base(&self) -> usize {
        n_base_for(self.c_out, self.alpha)
    }

    /// Number of `n_base`-channel blocks fed to the 1x1 fusion.
    pub fn branches(&self) -> usize {
        match self.kernel {
            KernelKind::Dense => 1,
            KernelKind::Sparse => 2 + self.use_addition as usize + self.use_inverse as usize,
        }
    }

    pub fn fusion_in(&self) -> usize {
        self.n_base() * self.branches()
    }

    pub fn geometry(&self) -> ConvGeometry {
        ConvGeometry::new(self.k, self.stride, self.padding)
    }

    pub fn ablation(&self) -> Ablation {
        match (self.kernel, self.use_addition, self.use_inverse) {
            (KernelKind::Dense, ..) => Ablation::A,
            (KernelKind::Sparse, false, _) => Ablation::B,
            (KernelKind::Sparse, true, false) => Ablation::C,
            (KernelKind::Sparse, true, true) => Ablation::D,
        }
    }

    /// Trainable scalars: nonzero-capable base weights, 1x1 weights, bias.
    pub fn num_params(&self) -> u64 {
        let n = self.n_base() as u64;
        let base = (self.k * self.k * self.c_in) as u64 * n;
        base + (self.fusion_in() * self.c_out) as u64 + self.c_out as u64
    }
}

pub fn ablation_config(label: Ablation, base: &SCFusionConfig) -> SCFusionConfig {
    let mut cfg = base.clone();
    let (kernel, add, inv) = match label {
        Ablation::A => (KernelKind::Dense, false, false),
        Ablation::B => (KernelKind::Sparse, false, false),
        Ablation::C => (KernelKind::Sparse, true, false),
        Ablation::D => (KernelKind::Sparse, true, true),
    };
    cfg.kernel = kernel;
    cfg.use_addition = add;
    cfg.use_inverse = inv;
    cfg
}

#[derive(Clone, Debug, PartialEq)]
pub enum BaseKernels<T> {
    Sparse(SCKernelPair<T>),
    Dense(Tensor4<T>),
}

/// Pre-activation branch responses in concatenation order.
#[derive(Clone, Debug)]
pub struct Branches<T> {
    pub even: Tensor4<T>,
    pub odd: Option<Tensor4<T>>,
    pub add: Option<Tensor4<T>>,
    pub inv: Option<Tensor4<T>>,
}

impl<T: Scalar> Branches<T> {
    pub fn parts(&self) -> Vec<&Tensor4<T>> {
        std::iter::once(&self.even)
            .chain(self.odd.as_ref())
            .chain(self.add.as_ref())
            .chain(self.inv.as_ref())
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SCFusionLayer<T> {
    pub config: SCFusionConfig,
    pub kernels: BaseKernels<T>,
    pub fuse_w: Tensor4<T>,
    pub fuse_bias: Vec<T>,
}

impl<T: Scalar> SCFusionLayer<T> {
    pub fn init(config: SCFusionConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::init_with(config, &mut rng)
    }

    pub(crate) fn init_with(config: SCFusionConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let n = config.n_base();
        let kernels = match config.kernel {
            KernelKind::Sparse => {
                BaseKernels::Sparse(init_kernel_pair_with(n, config.c_in, config.k, rng)?)
            }
            KernelKind::Dense => {
                let shape = Shape4::new(n, config.c_in, config.k, config.k);
                let std = (2.0 / (config.c_in * config.k * config.k) as f64).sqrt();
                BaseKernels::Dense(normal_fill(shape, std, None, rng)?)
            }
        };
        let fin = config.fusion_in();
        let fuse_w = normal_fill(
            Shape4::new(config.c_out, fin, 1, 1),
            (2.0 / fin as f64).sqrt(),
            None,
            rng,
        )?;
        Ok(Self {
            fuse_bias: vec![T::zero(); config.c_out],
            config,
            kernels,
            fuse_w,
        })
    }

    /// Assemble a layer from explicit weights, checking every shape and mask.
    pub fn from_parts(
        config: SCFusionConfig,
        kernels: BaseKernels<T>,
        fuse_w: Tensor4<T>,
        fuse_bias: Vec<T>,
    ) -> Result<Self> {
        config.validate()?;
        let base_shape = Shape4::new(config.n_base(), config.c_in, config.k, config.k);
        let found = match (&kernels, config.kernel) {
            (BaseKernels::Sparse(p), KernelKind::Sparse) => {
                p.check()?;
                p.w_even.shape()
            }
            (BaseKernels::Dense(w), KernelKind::Dense) => w.shape(),
            _ => {
                return Err(Error::InvalidConfig(
                    "kernel kind does not match configuration".into(),
                ))
            }
        };
        if found != base_shape {
            return Err(Error::ShapeMismatch {
                op: "SCFusionLayer base kernels",
                expected: base_shape,
                found,
            });
        }
        let fshape = Shape4::new(config.c_out, config.fusion_in(), 1, 1);
        if fuse_w.shape() != fshape {
            return Err(Error::ShapeMismatch {
                op: "SCFusionLayer fusion weight",
                expected: fshape,
                found: fuse_w.shape(),
            });
        }
        if fuse_bias.len() != config.c_out {
            return Err(Error::InvalidConfig(
                "fusion bias length must equal c_out".into(),
            ));
        }
        Ok(Self {
            config,
            kernels,
            fuse_w,
            fuse_bias,
        })
    }

    pub fn branches(&self, x: &Tensor4<T>, counter: &MacCounter) -> Result<Branches<T>> {
        if x.shape().c != self.config.c_in {
            return Err(Error::ShapeMismatch {
                op: "scfusion forward",
                expected: x.shape().with_c(self.config.c_in),
                found: x.shape(),
            });
        }
        let geom = self.config.geometry();
        match &self.kernels {
            BaseKernels::Dense(w) => Ok(Branches {
                even: conv2d_dense(x, w, &geom, counter)?,
                odd: None,
                add: None,
                inv: None,
            }),
            BaseKernels::Sparse(pair) => {
                let even = conv2d_sparse(x, &pair.w_even, &pair.mask.even, &geom, counter)?;
                let odd = conv2d_sparse(x, &pair.w_odd, &pair.mask.odd, &geom, counter)?;
                let add = if self.config.use_addition {
                    Some(even.add(&odd)?)
                } else {
                    None
                };
                let inv = if self.config.use_inverse {
                    add.as_ref().map(Tensor4::negate)
                } else {
                    None
                };
                Ok(Branches {
                    even,
                    odd: Some(odd),
                    add,
                    inv,
                })
            }
        }
    }

    pub fn forward(&self, x: &Tensor4<T>, counter: &MacCounter) -> Result<Tensor4<T>> {
        let b = self.branches(x, counter)?;
        let z = Tensor4::concat_channels(&b.parts())?.relu();
        conv1x1(&z, &self.fuse_w, &self.fuse_bias, counter)
    }

    pub fn num_params(&self) -> u64 {
        self.config.num_params()
    }
}

/// A single sparse convolution used by the sequential-stacking comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseConv<T> {
    pub weight: Tensor4<T>,
    pub mask: MaskId,
    pub geom: ConvGeometry,
}

impl<T: Scalar> SparseConv<T> {
    pub fn new(weight: Tensor4<T>, mask: MaskId, geom: ConvGeometry) -> Result<Self> {
        check_mask("sparse conv", &weight, &mask.grid()?)?;
        Ok(Self { weight, mask, geom })
    }

    pub fn forward(&self, x: &Tensor4<T>, counter: &MacCounter) -> Result<Tensor4<T>> {
        conv2d_sparse(x, &self.weight, &self.mask.grid()?, &self.geom, counter)
    }
}

/// Sequential filtering: one sparse kernel, ReLU, then the next.
pub fn forward_sequential<T: Scalar>(
    first: &SparseConv<T>,
    second: &SparseConv<T>,
    x: &Tensor4<T>,
    counter: &MacCounter,
) -> Result<Tensor4<T>> {
    let h = first.forward(x, counter)?.relu();
    second.forward(&h, counter)
}

/// Positions of the effective receptive field that can receive nonzero
/// weight. Parallel fusion covers the `k x k` window; sequential stacking of
/// the even then odd kernel covers the support of their full 2-D
/// convolution over the `(2k-1) x (2k-1)` field.
pub fn effective_support(mode: FusionMode, k: usize) -> Result<MaskGrid> {
    let pair = make_mask_pair(k)?;
    Ok(match mode {
        FusionMode::ParallelFusion => pair.even.union(&pair.odd),
        FusionMode::SequentialStack => compose_support(&pair.even, &pair.odd),
    })
}

/// Support of the full binary convolution of two masks.
pub fn compose_support(a: &MaskGrid, b: &MaskGrid) -> MaskGrid {
    let (ka, kb) = (a.k(), b.k());
    let size = ka + kb - 1;
    let mut cells = vec![false; size * size];
    for (ar, ac) in a.offsets() {
        for (br, bc) in b.offsets() {
            cells[(ar + br) * size + ac + bc] = true;
        }
    }
    MaskGrid::from_fn(size, |r, c| cells[r * size + c])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn n_base_rounding() {
        assert_eq!(n_base_for(8, Ratio::from_integer(4)), 2);
        assert_eq!(n_base_for(8, Ratio::from_integer(8)), 1);
        assert_eq!(n_base_for(4, Ratio::from_integer(8)), 1);
        assert_eq!(n_base_for(10, Ratio::from_integer(4)), 3); // 2.5 rounds up
        assert_eq!(n_base_for(6, Ratio::from_integer(4)), 2); // 1.5 rounds up
        assert_eq!(n_base_for(9, Ratio::new(3, 2)), 6);
        assert_eq!(n_base_for(7, Ratio::from_integer(4)), 2); // 1.75
    }

    #[test]
    fn parse_alpha_forms() {
        assert_eq!(parse_alpha("4").unwrap(), Ratio::from_integer(4));
        assert_eq!(parse_alpha("3/2").unwrap(), Ratio::new(3, 2));
        assert!(parse_alpha("0").is_err());
        assert!(parse_alpha("1/0").is_err());
        assert!(parse_alpha("x").is_err());
    }

    #[test]
    fn ablation_labels() {
        let base = SCFusionConfig::new(3, 8, 3, 1, 1, Ratio::from_integer(4));
        let d = ablation_config(Ablation::D, &base);
        assert!(d.use_addition && d.use_inverse);
        assert_eq!(d.fusion_in(), 4 * d.n_base());
        let b = ablation_config(Ablation::B, &base);
        assert_eq!(b.fusion_in(), 2 * b.n_base());
        let c = ablation_config(Ablation::C, &base);
        assert_eq!(c.fusion_in(), 3 * c.n_base());
        let a = ablation_config(Ablation::A, &base);
        assert_eq!(a.kernel, KernelKind::Dense);
        // A: dense k^2 c_in n_base base weights, 1x1 over n_base channels, bias.
        assert_eq!(a.num_params(), (9 * 3 * 2 + 2 * 8 + 8) as u64);
        for l in [Ablation::A, Ablation::B, Ablation::C, Ablation::D] {
            assert_eq!(ablation_config(l, &base).ablation(), l);
            assert_eq!(l.to_string().parse::<Ablation>().unwrap(), l);
        }
        assert!("E".parse::<Ablation>().is_err());
    }

    #[test]
    fn inverse_requires_addition() {
        let mut cfg = SCFusionConfig::new(3, 8, 3, 1, 1, Ratio::from_integer(4));
        cfg.use_addition = false;
        assert!(cfg.validate().is_err());
        assert!(SCFusionLayer::<f32>::init(cfg, 0).is_err());
    }

    #[test]
    fn zero_input_gives_bias() {
        let cfg = SCFusionConfig::new(3, 5, 3, 1, 1, Ratio::from_integer(2));
        let mut layer = SCFusionLayer::<f32>::init(cfg, 1).unwrap();
        layer.fuse_bias = vec![0.5, -1.0, 2.0, 0.0, 3.25];
        let x = Tensor4::zeros((2, 3, 6, 6)).unwrap();
        let y = layer.forward(&x, &MacCounter::new()).unwrap();
        assert_eq!(y.shape(), Shape4::new(2, 5, 6, 6));
        for n in 0..2 {
            for c in 0..5 {
                assert!(y.plane(n, c).iter().all(|&v| v == layer.fuse_bias[c]));
            }
        }
    }

    #[test]
    fn output_shape_follows_geometry_for_all_flags() {
        let base = SCFusionConfig::new(2, 6, 5, 2, 2, Ratio::from_integer(3));
        for l in [Ablation::A, Ablation::B, Ablation::C, Ablation::D] {
            let layer = SCFusionLayer::<f32>::init(ablation_config(l, &base), 3).unwrap();
            let y = layer
                .forward(&Tensor4::zeros((1, 2, 9, 9)).unwrap(), &MacCounter::new())
                .unwrap();
            assert_eq!(y.shape(), Shape4::new(1, 6, 5, 5));
        }
    }

    #[test]
    fn coverage() {
        for k in [3, 5, 7] {
            assert!(effective_support(FusionMode::ParallelFusion, k)
                .unwrap()
                .is_full());
            let seq = effective_support(FusionMode::SequentialStack, k).unwrap();
            assert_eq!(seq.k(), 2 * k - 1);
            assert!(seq.nnz() < (2 * k - 1) * (2 * k - 1));
        }
        assert!(effective_support(FusionMode::SequentialStack, 4).is_err());
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn sequential_k3_support_brute_force() {
        // Enumerate every (even tap, odd tap) pair and mark its sum offset.
        let mut covered = [[false; 5]; 5];
        for a in 0..9 {
            for b in 0..9 {
                let (ar, ac, br, bc) = (a / 3, a % 3, b / 3, b % 3);
                if (ar + ac) % 2 == 0 && (br + bc) % 2 == 1 {
                    covered[ar + br][ac + bc] = true;
                }
            }
        }
        let seq = effective_support(FusionMode::SequentialStack, 3).unwrap();
        let mut count = 0;
        for r in 0..5 {
            for c in 0..5 {
                assert_eq!(seq.get(r, c), covered[r][c]);
                count += covered[r][c] as usize;
            }
        }
        assert_eq!(count, 12);
    }

    /// Direct nested-loop evaluation of the whole pipeline, one output at a time.
    fn scalar_oracle(layer: &SCFusionLayer<f64>, x: &Tensor4<f64>) -> Tensor4<f64> {
        let cfg = &layer.config;
        let BaseKernels::Sparse(pair) = &layer.kernels else {
            unreachable!()
        };
        let (k, p, st) = (cfg.k as isize, cfg.padding as isize, cfg.stride as isize);
        let s = x.shape();
        let (ho, wo) = cfg.geometry().output_hw(s.h, s.w).unwrap();
        let n_base = cfg.n_base();
        let tap = |w: &Tensor4<f64>, n: usize, o: usize, i: usize, j: usize| {
            let mut acc = 0.0;
            for c in 0..cfg.c_in {
                for r in 0..k {
                    for q in 0..k {
                        let (y, xx) = (i as isize * st + r - p, j as isize * st + q - p);
                        if y >= 0 && xx >= 0 && (y as usize) < s.h && (xx as usize) < s.w {
                            acc += w.get(o, c, r as usize, q as usize)
                                * x.get(n, c, y as usize, xx as usize);
                        }
                    }
                }
            }
            acc
        };
        Tensor4::from_fn((s.n, cfg.c_out, ho, wo), |n, co, i, j| {
            let mut z = Vec::with_capacity(cfg.fusion_in());
            let e: Vec<f64> = (0..n_base).map(|o| tap(&pair.w_even, n, o, i, j)).collect();
            let od: Vec<f64> = (0..n_base).map(|o| tap(&pair.w_odd, n, o, i, j)).collect();
            let a: Vec<f64> = e.iter().zip(&od).map(|(u, v)| u + v).collect();
            z.extend(&e);
            z.extend(&od);
            z.extend(&a);
            z.extend(a.iter().map(|v| -v));
            let mut out = layer.fuse_bias[co];
            for (ch, v) in z.iter().enumerate() {
                out += layer.fuse_w.get(co, ch, 0, 0) * v.max(0.0);
            }
            out
        })
        .unwrap()
    }

    #[test]
    fn forward_matches_scalar_oracle() {
        let mut layer: SCFusionLayer<f64> = SCFusionLayer::init(
            SCFusionConfig::new(3, 8, 3, 1, 1, Ratio::from_integer(4)),
            11,
        )
        .unwrap();
        layer.fuse_bias = (0..8).map(|i| i as f64 * 0.1 - 0.3).collect();
        assert_eq!(layer.config.n_base(), 2);
        assert_eq!(layer.config.fusion_in(), 8);
        let x = Tensor4::from_fn((2, 3, 6, 5), |n, c, h, w| {
            ((7 * n + 5 * c + 3 * h + w) % 11) as f64 / 5.0 - 1.0
        })
        .unwrap();
        let counter = MacCounter::new();
        let y = layer.forward(&x, &counter).unwrap();
        let oracle = scalar_oracle(&layer, &x);
        assert!(y.max_abs_diff(&oracle).unwrap() < 1e-12);
        // even 5 taps + odd 4 taps per base channel, plus the 1x1 fusion.
        assert_eq!(counter.get(), 2 * (9 * 3 * 2 + 8 * 8) * 30);

        let mut strided = layer.clone();
        strided.config.stride = 2;
        strided.config.padding = 0;
        let y = strided.forward(&x, &MacCounter::new()).unwrap();
        assert!(y.max_abs_diff(&scalar_oracle(&strided, &x)).unwrap() < 1e-12);
    }

    #[test]
    fn inverse_branch_is_negated_dense_sum() {
        let layer: SCFusionLayer<f64> = SCFusionLayer::init(
            SCFusionConfig::new(4, 8, 5, 2, 2, Ratio::from_integer(2)),
            3,
        )
        .unwrap();
        let x = Tensor4::from_fn((1, 4, 9, 9), |_, c, h, w| {
            ((c * 13 + h * 7 + w * 3) % 9) as f64 - 4.0
        })
        .unwrap();
        let b = layer.branches(&x, &MacCounter::new()).unwrap();
        let BaseKernels::Sparse(pair) = &layer.kernels else {
            unreachable!()
        };
        let dense = conv2d_dense(
            &x,
            &pair.dense_sum().negate(),
            &layer.config.geometry(),
            &MacCounter::new(),
        )
        .unwrap();
        assert!(b.inv.unwrap().max_abs_diff(&dense).unwrap() < 1e-12);
    }

    #[test]
    fn sequential_impulse_response_stays_in_composed_support() {
        let masks = make_mask_pair(3).unwrap();
        let ones = |m: &MaskGrid| {
            crate::sc_kernels::apply_mask(&Tensor4::full((1, 1, 3, 3), 1.0).unwrap(), m).unwrap()
        };
        let geom = ConvGeometry::new(3, 1, 2);
        let first = SparseConv::new(ones(&masks.even), "even3".parse().unwrap(), geom).unwrap();
        let second = SparseConv::new(ones(&masks.odd), "odd3".parse().unwrap(), geom).unwrap();
        let mut x = Tensor4::zeros((1, 1, 1, 1)).unwrap();
        x.set(0, 0, 0, 0, 1.0);
        let y: Tensor4<f64> = forward_sequential(&first, &second, &x, &MacCounter::new()).unwrap();
        assert_eq!(y.shape(), Shape4::new(1, 1, 5, 5));
        let support = effective_support(FusionMode::SequentialStack, 3).unwrap();
        // Cross-correlation flips the field, and the composed support is
        // symmetric under the flip, so positions line up directly.
        for r in 0..5 {
            for c in 0..5 {
                assert_eq!(
                    y.get(0, 0, r, c) != 0.0,
                    support.get(4 - r, 4 - c),
                    "({r},{c})"
                );
            }
        }
    }
}
