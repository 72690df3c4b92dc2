//! Complementary sparse kernel masks and the masked weight pairs built on them.
//!
//! A pair of `k x k` masks splits the grid by checkerboard parity: positions
//! with `(row + col)` even belong to the even mask (which always holds the
//! center, since `k` is odd), the rest to the odd mask. Masks are a pure
//! function of `k` and are never stored alongside weights.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape4, Tensor4};

/// Binary `k x k` grid, row-major.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct MaskGrid {
    k: usize,
    cells: Vec<bool>,
}

impl MaskGrid {
    pub fn full(k: usize) -> Self {
        Self {
            k,
            cells: vec![true; k * k],
        }
    }

    pub fn from_fn(k: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let cells = (0..k * k).map(|i| f(i / k, i % k)).collect();
        Self { k, cells }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.cells[row * self.k + col]
    }

    pub fn cells(&self) -> &[bool] {
        &self.cells
    }

    pub fn nnz(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    /// Kept `(row, col)` positions in row-major order.
    pub fn offsets(&self) -> Vec<(usize, usize)> {
        (0..self.k * self.k)
            .filter(|&i| self.cells[i])
            .map(|i| (i / self.k, i % self.k))
            .collect()
    }

    pub fn union(&self, other: &Self) -> Self {
        assert_eq!(self.k, other.k);
        Self {
            k: self.k,
            cells: self
                .cells
                .iter()
                .zip(&other.cells)
                .map(|(a, b)| *a || *b)
                .collect(),
        }
    }

    pub fn intersect(&self, other: &Self) -> Self {
        assert_eq!(self.k, other.k);
        Self {
            k: self.k,
            cells: self
                .cells
                .iter()
                .zip(&other.cells)
                .map(|(a, b)| *a && *b)
                .collect(),
        }
    }

    pub fn is_full(&self) -> bool {
        self.cells.iter().all(|&c| c)
    }

    pub fn is_empty(&self) -> bool {
        !self.cells.iter().any(|&c| c)
    }
}

impl fmt::Display for MaskGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in 0..self.k {
            for c in 0..self.k {
                f.write_str(if self.get(r, c) { "#" } else { "." })?;
            }
            if r + 1 < self.k {
                writeln!(f)?;
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Parity {
    Even,
    Odd,
}

/// Names a deterministic mask: parity plus kernel size. Rendered as `even3`, `odd5`, ...
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct MaskId {
    pub parity: Parity,
    pub k: usize,
}

impl MaskId {
    pub fn grid(&self) -> Result<MaskGrid> {
        let pair = make_mask_pair(self.k)?;
        Ok(match self.parity {
            Parity::Even => pair.even,
            Parity::Odd => pair.odd,
        })
    }
}

impl fmt::Display for MaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.parity {
            Parity::Even => write!(f, "even{}", self.k),
            Parity::Odd => write!(f, "odd{}", self.k),
        }
    }
}

impl FromStr for MaskId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (parity, rest) = if let Some(r) = s.strip_prefix("even") {
            (Parity::Even, r)
        } else if let Some(r) = s.strip_prefix("odd") {
            (Parity::Odd, r)
        } else {
            return Err(Error::InvalidConfig(format!("unknown mask id `{s}`")));
        };
        let k: usize = rest
            .parse()
            .map_err(|_| Error::InvalidConfig(format!("unknown mask id `{s}`")))?;
        validate_k(k)?;
        Ok(Self { parity, k })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SCMaskPair {
    pub k: usize,
    pub even: MaskGrid,
    pub odd: MaskGrid,
}

pub fn validate_k(k: usize) -> Result<()> {
    if k < 3 || k.is_multiple_of(2) {
        return Err(Error::InvalidKernelSize(k));
    }
    Ok(())
}

pub fn make_mask_pair(k: usize) -> Result<SCMaskPair> {
    validate_k(k)?;
    Ok(SCMaskPair {
        k,
        even: MaskGrid::from_fn(k, |r, c| (r + c) % 2 == 0),
        odd: MaskGrid::from_fn(k, |r, c| (r + c) % 2 == 1),
    })
}

/// Zero every weight whose spatial position is off in `mask`.
pub fn apply_mask<T: Scalar>(weights: &Tensor4<T>, mask: &MaskGrid) -> Result<Tensor4<T>> {
    let mut out = weights.clone();
    apply_mask_in_place(&mut out, mask)?;
    Ok(out)
}

pub fn apply_mask_in_place<T: Scalar>(weights: &mut Tensor4<T>, mask: &MaskGrid) -> Result<()> {
    let s = weights.shape();
    check_spatial(s, mask)?;
    let kk = mask.k * mask.k;
    for (i, w) in weights.data_mut().iter_mut().enumerate() {
        if !mask.cells[i % kk] {
            *w = T::zero();
        }
    }
    Ok(())
}

/// Error on the first nonzero weight at a masked-out position.
pub fn check_mask<T: Scalar>(name: &str, weights: &Tensor4<T>, mask: &MaskGrid) -> Result<()> {
    let s = weights.shape();
    check_spatial(s, mask)?;
    let kk = mask.k * mask.k;
    for (i, &w) in weights.data().iter().enumerate() {
        let pos = i % kk;
        if !mask.cells[pos] && w != T::zero() {
            let oc = i / kk;
            return Err(Error::MaskViolation {
                name: name.to_string(),
                out: oc / s.c,
                inp: oc % s.c,
                row: pos / mask.k,
                col: pos % mask.k,
                value: w.as_f64(),
            });
        }
    }
    Ok(())
}

fn check_spatial(s: Shape4, mask: &MaskGrid) -> Result<()> {
    if s.h != mask.k || s.w != mask.k {
        return Err(Error::ShapeMismatch {
            op: "apply_mask",
            expected: Shape4::new(s.n, s.c, mask.k, mask.k),
            found: s,
        });
    }
    Ok(())
}

/// Fill `shape` with zero-mean normal draws of standard deviation `std`,
/// drawing only at positions kept by `mask` (masked positions stay exactly 0).
pub(crate) fn normal_fill<T: Scalar>(
    shape: Shape4,
    std: f64,
    mask: Option<&MaskGrid>,
    rng: &mut ChaCha8Rng,
) -> Result<Tensor4<T>> {
    let mut t = Tensor4::zeros(shape)?;
    let normal = Normal::new(0.0, std)
        .map_err(|e| Error::InvalidConfig(format!("normal init with std {std}: {e}")))?;
    let kk = shape.plane();
    for (i, w) in t.data_mut().iter_mut().enumerate() {
        if mask.is_none_or(|m| m.cells[i % kk]) {
            *w = T::lit(normal.sample(rng));
        }
    }
    Ok(t)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SCKernelPair<T> {
    pub w_even: Tensor4<T>,
    pub w_odd: Tensor4<T>,
    pub mask: SCMaskPair,
}

impl<T: Scalar> SCKernelPair<T> {
    /// Wrap existing weights, verifying both mask contracts.
    pub fn new(w_even: Tensor4<T>, w_odd: Tensor4<T>) -> Result<Self> {
        if w_even.shape() != w_odd.shape() {
            return Err(Error::ShapeMismatch {
                op: "SCKernelPair::new",
                expected: w_even.shape(),
                found: w_odd.shape(),
            });
        }
        let s = w_even.shape();
        if s.h != s.w {
            return Err(Error::InvalidKernelSize(s.h.max(s.w)));
        }
        let mask = make_mask_pair(s.h)?;
        check_mask("w_even", &w_even, &mask.even)?;
        check_mask("w_odd", &w_odd, &mask.odd)?;
        Ok(Self {
            w_even,
            w_odd,
            mask,
        })
    }

    pub fn k(&self) -> usize {
        self.mask.k
    }

    pub fn n_base(&self) -> usize {
        self.w_even.shape().n
    }

    pub fn c_in(&self) -> usize {
        self.w_even.shape().c
    }

    /// `W_even + W_odd`: the dense kernel the pair jointly covers.
    pub fn dense_sum(&self) -> Tensor4<T> {
        self.w_even.add(&self.w_odd).expect("pair shapes match")
    }

    pub fn check(&self) -> Result<()> {
        check_mask("w_even", &self.w_even, &self.mask.even)?;
        check_mask("w_odd", &self.w_odd, &self.mask.odd)
    }
}

/// Standard deviation used for a sparse kernel: `sqrt(2 / (c_in * nnz))`.
pub fn init_std(c_in: usize, nnz: usize) -> f64 {
    (2.0 / (c_in * nnz) as f64).sqrt()
}

pub fn init_kernel_pair<T: Scalar>(
    n_base: usize,
    c_in: usize,
    k: usize,
    seed: u64,
) -> Result<SCKernelPair<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    init_kernel_pair_with(n_base, c_in, k, &mut rng)
}

pub(crate) fn init_kernel_pair_with<T: Scalar>(
    n_base: usize,
    c_in: usize,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Result<SCKernelPair<T>> {
    let mask = make_mask_pair(k)?;
    if n_base == 0 || c_in == 0 {
        return Err(Error::InvalidShape([n_base, c_in, k, k]));
    }
    let shape = Shape4::new(n_base, c_in, k, k);
    let w_even = normal_fill(
        shape,
        init_std(c_in, mask.even.nnz()),
        Some(&mask.even),
        rng,
    )?;
    let w_odd = normal_fill(shape, init_std(c_in, mask.odd.nnz()), Some(&mask.odd), rng)?;
    Ok(SCKernelPair {
        w_even,
        w_odd,
        mask,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_parity_counts(k: usize) -> (usize, usize) {
        let mut even = 0;
        let mut odd = 0;
        for r in 0..k {
            for c in 0..k {
                if (r + c) % 2 == 0 {
                    even += 1;
                } else {
                    odd += 1;
                }
            }
        }
        (even, odd)
    }

    #[test]
    fn k3_pattern() {
        let p = make_mask_pair(3).unwrap();
        assert_eq!(p.even.nnz(), 5);
        assert_eq!(p.odd.nnz(), 4);
        assert!(p.even.get(1, 1));
        for (r, c) in [(0, 0), (0, 2), (2, 0), (2, 2)] {
            assert!(p.even.get(r, c));
        }
        for (r, c) in [(0, 1), (1, 0), (1, 2), (2, 1)] {
            assert!(p.odd.get(r, c));
        }
        assert_eq!(p.even.to_string(), "#.#\n.#.\n#.#");
    }

    #[test]
    fn k5_counts() {
        let p = make_mask_pair(5).unwrap();
        assert_eq!((p.even.nnz(), p.odd.nnz()), brute_parity_counts(5));
        assert_eq!((p.even.nnz(), p.odd.nnz()), (13, 12));
    }

    #[test]
    fn complementary_for_odd_sizes() {
        for k in [3, 5, 7, 9] {
            let p = make_mask_pair(k).unwrap();
            assert!(p.even.union(&p.odd).is_full());
            assert!(p.even.intersect(&p.odd).is_empty());
            assert!(p.even.get(k / 2, k / 2));
            assert_eq!(p.even.nnz(), (k * k).div_ceil(2));
            assert_eq!(p.odd.nnz(), k * k / 2);
        }
    }

    #[test]
    fn rejects_even_and_small_k() {
        for k in [0, 1, 2, 4, 6] {
            assert!(matches!(
                make_mask_pair(k),
                Err(Error::InvalidKernelSize(_))
            ));
        }
    }

    #[test]
    fn mask_id_roundtrip() {
        for s in ["even3", "odd5", "even9"] {
            assert_eq!(s.parse::<MaskId>().unwrap().to_string(), s);
        }
        assert!("even4".parse::<MaskId>().is_err());
        assert!("full3".parse::<MaskId>().is_err());
    }

    #[test]
    fn apply_mask_behaviour() {
        let p = make_mask_pair(3).unwrap();
        let ones = Tensor4::<f32>::full((1, 1, 3, 3), 1.0).unwrap();
        let m = apply_mask(&ones, &p.even).unwrap();
        assert_eq!(m.data().iter().filter(|&&v| v == 1.0).count(), 5);
        assert_eq!(m.data().iter().filter(|&&v| v == 0.0).count(), 4);
        assert_eq!(apply_mask(&m, &p.even).unwrap(), m);
        let z = Tensor4::<f32>::zeros((2, 3, 3, 3)).unwrap();
        assert_eq!(apply_mask(&z, &p.odd).unwrap(), z);
        let bad = Tensor4::<f32>::zeros((1, 1, 5, 5)).unwrap();
        assert!(apply_mask(&bad, &p.even).is_err());
    }

    #[test]
    fn apply_mask_commutes_with_negate() {
        let pair: SCKernelPair<f32> = init_kernel_pair(3, 2, 5, 9).unwrap();
        let dense = pair.dense_sum();
        let a = apply_mask(&dense.negate(), &pair.mask.odd).unwrap();
        let b = apply_mask(&dense, &pair.mask.odd).unwrap().negate();
        assert_eq!(a, b);
    }

    #[test]
    fn init_respects_masks_and_seed() {
        let a: SCKernelPair<f32> = init_kernel_pair(4, 3, 3, 42).unwrap();
        let b: SCKernelPair<f32> = init_kernel_pair(4, 3, 3, 42).unwrap();
        assert_eq!(a, b);
        a.check().unwrap();
        let c: SCKernelPair<f32> = init_kernel_pair(4, 3, 3, 43).unwrap();
        assert_ne!(a, c);
        // Support of the sum is the full grid for every (out, in) pair.
        let d = a.dense_sum();
        assert!(d.data().iter().all(|&v| v != 0.0));
    }

    #[test]
    fn init_std_formula() {
        assert!((init_std(4, 5) - 0.1f64.sqrt()).abs() < 1e-15);
        assert!((init_std(4, 5) - 0.316).abs() < 1e-3);
        // Empirical std of a large even kernel draw tracks the formula.
        let p: SCKernelPair<f64> = init_kernel_pair(400, 4, 3, 1).unwrap();
        let vals: Vec<f64> = p
            .w_even
            .data()
            .iter()
            .copied()
            .filter(|&v| v != 0.0)
            .collect();
        let var = vals.iter().map(|v| v * v).sum::<f64>() / vals.len() as f64;
        assert!((var.sqrt() - init_std(4, 5)).abs() < 0.02);
    }

    #[test]
    fn check_mask_reports_position() {
        let mut p: SCKernelPair<f32> = init_kernel_pair(2, 2, 3, 0).unwrap();
        let i = p.w_even.offset(1, 0, 0, 1);
        p.w_even.data_mut()[i] = 0.5;
        match p.check() {
            Err(Error::MaskViolation {
                out, inp, row, col, ..
            }) => assert_eq!((out, inp, row, col), (1, 0, 0, 1)),
            other => panic!("expected violation, got {other:?}"),
        }
    }
}
