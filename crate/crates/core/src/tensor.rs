//! Dense NCHW tensors.
//!
//! Storage is a single contiguous buffer in `(n, c, h, w)` order with the
//! width index fastest. Every operation here walks the buffer in index order,
//! so results are bit-reproducible across runs.

use std::fmt;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Shape4 {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape4 {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self { n, c, h, w }
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    pub fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    /// Element count, or `None` when a dimension is zero or the product overflows.
    pub fn checked_numel(&self) -> Option<usize> {
        if self.dims().contains(&0) {
            return None;
        }
        self.dims()
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn with_c(self, c: usize) -> Self {
        Self { c, ..self }
    }
}

impl fmt::Display for Shape4 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.c, self.h, self.w)
    }
}

impl From<(usize, usize, usize, usize)> for Shape4 {
    fn from((n, c, h, w): (usize, usize, usize, usize)) -> Self {
        Self::new(n, c, h, w)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
}

impl BinaryOp {
    #[inline]
    fn apply<T: Scalar>(self, a: T, b: T) -> T {
        match self {
            BinaryOp::Add => a + b,
            BinaryOp::Sub => a - b,
            BinaryOp::Mul => a * b,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor4<T> {
    shape: Shape4,
    data: Vec<T>,
}

impl<T: Scalar> Tensor4<T> {
    pub fn zeros(shape: impl Into<Shape4>) -> Result<Self> {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: impl Into<Shape4>, value: T) -> Result<Self> {
        let shape = shape.into();
        let len = shape
            .checked_numel()
            .ok_or(Error::InvalidShape(shape.dims()))?;
        Ok(Self {
            shape,
            data: vec![value; len],
        })
    }

    pub fn from_vec(shape: impl Into<Shape4>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        let len = shape
            .checked_numel()
            .ok_or(Error::InvalidShape(shape.dims()))?;
        if len != data.len() {
            return Err(Error::LengthMismatch {
                shape,
                len: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn from_fn(
        shape: impl Into<Shape4>,
        mut f: impl FnMut(usize, usize, usize, usize) -> T,
    ) -> Result<Self> {
        let mut t = Self::zeros(shape)?;
        let s = t.shape;
        let mut i = 0;
        for n in 0..s.n {
            for c in 0..s.c {
                for h in 0..s.h {
                    for w in 0..s.w {
                        t.data[i] = f(n, c, h, w);
                        i += 1;
                    }
                }
            }
        }
        Ok(t)
    }

    pub fn shape(&self) -> Shape4 {
        self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn offset(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        let s = &self.shape;
        debug_assert!(n < s.n && c < s.c && h < s.h && w < s.w);
        ((n * s.c + c) * s.h + h) * s.w + w
    }

    #[inline]
    pub fn get(&self, n: usize, c: usize, h: usize, w: usize) -> T {
        self.data[self.offset(n, c, h, w)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, h: usize, w: usize, v: T) {
        let i = self.offset(n, c, h, w);
        self.data[i] = v;
    }

    /// Contiguous `h*w` plane for sample `n`, channel `c`.
    pub fn plane(&self, n: usize, c: usize) -> &[T] {
        let p = self.shape.plane();
        let start = (n * self.shape.c + c) * p;
        &self.data[start..start + p]
    }

    /// Elementwise `a op b`; both operands must have identical shapes.
    pub fn map_binary(a: &Self, b: &Self, op: BinaryOp) -> Result<Self> {
        if a.shape != b.shape {
            return Err(Error::ShapeMismatch {
                op: "map_binary",
                expected: a.shape,
                found: b.shape,
            });
        }
        let data = a
            .data
            .iter()
            .zip(&b.data)
            .map(|(&x, &y)| op.apply(x, y))
            .collect();
        Ok(Self {
            shape: a.shape,
            data,
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        Self::map_binary(self, other, BinaryOp::Add)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        Self::map_binary(self, other, BinaryOp::Sub)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        Self::map_binary(self, other, BinaryOp::Mul)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn negate(&self) -> Self {
        self.map(|x| -x)
    }

    pub fn relu(&self) -> Self {
        self.map(|x| if x > T::zero() { x } else { T::zero() })
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|x| x * s)
    }

    /// Sum of all elements, accumulated in index order.
    pub fn sum(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &x| acc + x)
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(
            T::zero(),
            |acc, &x| if x.abs() > acc { x.abs() } else { acc },
        )
    }

    /// Largest elementwise `|a - b|`; `None` for mismatched shapes.
    pub fn max_abs_diff(&self, other: &Self) -> Option<T> {
        if self.shape != other.shape {
            return None;
        }
        Some(
            self.data
                .iter()
                .zip(&other.data)
                .fold(T::zero(), |acc, (&a, &b)| acc.max((a - b).abs())),
        )
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Concatenate along channels. Channel `j` of part `i` lands at output
    /// channel `sum(parts[..i].c) + j`.
    pub fn concat_channels(parts: &[&Self]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidConfig("concat_channels of zero parts".into()))?;
        let base = first.shape;
        let mut c_total = 0;
        for p in parts {
            let s = p.shape;
            if (s.n, s.h, s.w) != (base.n, base.h, base.w) {
                return Err(Error::ShapeMismatch {
                    op: "concat_channels",
                    expected: base.with_c(s.c),
                    found: s,
                });
            }
            c_total += s.c;
        }
        let shape = base.with_c(c_total);
        let mut data = Vec::with_capacity(shape.numel());
        for n in 0..base.n {
            for p in parts {
                let chunk = p.shape.c * p.shape.plane();
                data.extend_from_slice(&p.data[n * chunk..(n + 1) * chunk]);
            }
        }
        Ok(Self { shape, data })
    }

    /// Channels `start..start + len` as a new tensor.
    pub fn slice_channels(&self, start: usize, len: usize) -> Result<Self> {
        let s = self.shape;
        if len == 0 || start + len > s.c {
            return Err(Error::InvalidConfig(format!(
                "channel slice {start}..{} outside 0..{}",
                start + len,
                s.c
            )));
        }
        let plane = s.plane();
        let mut data = Vec::with_capacity(s.n * len * plane);
        for n in 0..s.n {
            let from = (n * s.c + start) * plane;
            data.extend_from_slice(&self.data[from..from + len * plane]);
        }
        Ok(Self {
            shape: s.with_c(len),
            data,
        })
    }

    /// Same buffer under a new shape with equal element count.
    pub fn reshape(self, shape: impl Into<Shape4>) -> Result<Self> {
        let shape = shape.into();
        if shape.checked_numel() != Some(self.data.len()) {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                expected: self.shape,
                found: shape,
            });
        }
        Ok(Self {
            shape,
            data: self.data,
        })
    }

    /// Samples `indices` (in the given order) stacked into a new batch.
    pub fn gather_batch(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let per = self.shape.c * self.shape.plane();
        let mut data = Vec::with_capacity(indices.len() * per);
        for &i in indices {
            if i >= self.shape.n {
                return Err(Error::InvalidConfig(format!(
                    "sample index {i} out of range for batch of {}",
                    self.shape.n
                )));
            }
            data.extend_from_slice(&self.data[i * per..(i + 1) * per]);
        }
        Ok(Self {
            shape: Shape4::new(indices.len(), self.shape.c, self.shape.h, self.shape.w),
            data,
        })
    }

    pub fn cast<U: Scalar>(&self) -> Tensor4<U> {
        Tensor4 {
            shape: self.shape,
            data: self.data.iter().map(|&x| U::lit(x.as_f64())).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn row(v: &[f32]) -> Tensor4<f32> {
        Tensor4::from_vec((1, 1, 1, v.len()), v.to_vec()).unwrap()
    }

    fn lcg(seed: u64, n: usize) -> Vec<f32> {
        let mut s = seed;
        (0..n)
            .map(|_| {
                s = s
                    .wrapping_mul(6364136223846793005)
                    .wrapping_add(1442695040888963407);
                ((s >> 40) as f32 / (1u64 << 24) as f32) * 2.0 - 1.0
            })
            .collect()
    }

    #[test]
    fn zeros_shapes() {
        let t = Tensor4::<f32>::zeros((1, 1, 2, 2)).unwrap();
        assert_eq!(t.data(), &[0.0; 4]);
        assert_eq!(Tensor4::<f32>::zeros((2, 3, 4, 5)).unwrap().len(), 120);
        assert_eq!(Tensor4::<f32>::zeros((1, 1, 1, 1)).unwrap().data(), &[0.0]);
    }

    #[test]
    fn zeros_rejects_bad_dims() {
        assert!(matches!(
            Tensor4::<f32>::zeros((0, 1, 1, 1)),
            Err(Error::InvalidShape(_))
        ));
        assert!(matches!(
            Tensor4::<f32>::zeros((usize::MAX, 2, 2, 2)),
            Err(Error::InvalidShape(_))
        ));
    }

    #[test]
    fn binary_ops() {
        assert_eq!(
            row(&[1., 2.]).add(&row(&[3., 4.])).unwrap().data(),
            &[4., 6.]
        );
        let x = row(&[1.5, -7.0, 3.25]);
        assert!(x.sub(&x).unwrap().data().iter().all(|&v| v == 0.0));
        assert_eq!(
            row(&[2., 3.]).mul(&row(&[0., 5.])).unwrap().data(),
            &[0., 15.]
        );
        assert!(matches!(
            row(&[1.]).add(&row(&[1., 2.])),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn negate_and_relu() {
        assert_eq!(row(&[1.5, -2.0]).negate().data(), &[-1.5, 2.0]);
        let z = Tensor4::<f32>::zeros((1, 2, 2, 2)).unwrap();
        assert!(z.negate().data().iter().all(|&v| v == 0.0));
        assert_eq!(row(&[-1., 0., 2.]).relu().data(), &[0., 0., 2.]);
        assert!(row(&[-1., -3., -0.5])
            .relu()
            .data()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn relu_split_gives_abs() {
        for seed in 0..20 {
            let x = Tensor4::from_vec((2, 3, 4, 4), lcg(seed, 96)).unwrap();
            let s = x.relu().add(&x.negate().relu()).unwrap();
            for (a, b) in s.data().iter().zip(x.data()) {
                assert_eq!(*a, b.abs());
            }
        }
    }

    #[test]
    fn concat_layout() {
        let a = Tensor4::from_vec((1, 2, 3, 3), lcg(1, 18)).unwrap();
        let b = Tensor4::from_vec((1, 2, 3, 3), lcg(2, 18)).unwrap();
        let c = Tensor4::concat_channels(&[&a, &b]).unwrap();
        assert_eq!(c.shape(), Shape4::new(1, 4, 3, 3));
        assert_eq!(Tensor4::concat_channels(&[&a]).unwrap(), a);

        let parts: Vec<_> = (0..4)
            .map(|i| Tensor4::from_vec((1, 3, 2, 5), lcg(10 + i, 30)).unwrap())
            .collect();
        let refs: Vec<_> = parts.iter().collect();
        let cat = Tensor4::concat_channels(&refs).unwrap();
        assert_eq!(cat.shape(), Shape4::new(1, 12, 2, 5));
        for (i, p) in parts.iter().enumerate() {
            assert_eq!(&cat.slice_channels(3 * i, 3).unwrap(), p);
        }
    }

    #[test]
    fn concat_rejects_spatial_mismatch() {
        let a = Tensor4::<f32>::zeros((1, 1, 3, 3)).unwrap();
        let b = Tensor4::<f32>::zeros((1, 1, 3, 4)).unwrap();
        let c = Tensor4::<f32>::zeros((2, 1, 3, 3)).unwrap();
        assert!(Tensor4::concat_channels(&[&a, &b]).is_err());
        assert!(Tensor4::concat_channels(&[&a, &c]).is_err());
    }

    proptest! {
        #[test]
        fn negate_twice_roundtrips(seed in any::<u64>(), c in 1usize..4, h in 1usize..6) {
            let x = Tensor4::from_vec((2, c, h, 3), lcg(seed, 6 * c * h)).unwrap();
            prop_assert_eq!(x.negate().negate().max_abs_diff(&x), Some(0.0));
        }

        #[test]
        fn relu_idempotent(seed in any::<u64>()) {
            let x = Tensor4::from_vec((1, 2, 3, 4), lcg(seed, 24)).unwrap();
            prop_assert_eq!(x.relu().relu(), x.relu());
        }

        #[test]
        fn concat_then_slice_recovers(seed in any::<u64>(), n in 1usize..3, c1 in 1usize..4, c2 in 1usize..4) {
            let a = Tensor4::from_vec((n, c1, 2, 3), lcg(seed, n * c1 * 6)).unwrap();
            let b = Tensor4::from_vec((n, c2, 2, 3), lcg(seed ^ 7, n * c2 * 6)).unwrap();
            let cat = Tensor4::concat_channels(&[&a, &b]).unwrap();
            prop_assert_eq!(cat.slice_channels(0, c1).unwrap(), a);
            prop_assert_eq!(cat.slice_channels(c1, c2).unwrap(), b);
        }

        #[test]
        fn ops_are_deterministic(seed in any::<u64>()) {
            let a = Tensor4::from_vec((1, 2, 2, 2), lcg(seed, 8)).unwrap();
            let b = Tensor4::from_vec((1, 2, 2, 2), lcg(seed + 1, 8)).unwrap();
            let r1 = a.mul(&b).unwrap().relu().sum();
            let r2 = a.mul(&b).unwrap().relu().sum();
            prop_assert_eq!(r1.to_bits(), r2.to_bits());
        }
    }
}
