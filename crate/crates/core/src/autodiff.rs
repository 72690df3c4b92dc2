//! Tape-based reverse-mode differentiation over [`Tensor4`] operations.
//!
//! Every forward op appends a node holding its output value and the ids of
//! its inputs. [`Tape::backward`] walks the nodes in exact reverse order and
//! accumulates gradients into each input. A tape can be consumed only once.

use crate::conv::{
    conv1x1, conv_backward_input, conv_backward_weight, conv_taps, dense_taps, global_avg_pool,
    maxpool2x2_with_argmax, ConvGeometry, MacCounter,
};
use crate::error::{Error, Result};
use crate::sc_kernels::{check_mask, MaskGrid};
use crate::scalar::Scalar;
use crate::tensor::{Shape4, Tensor4};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Input,
    Param(usize),
    Conv {
        x: Var,
        w: Var,
        geom: ConvGeometry,
        taps: Vec<(usize, usize)>,
    },
    Conv1x1 {
        x: Var,
        w: Var,
        b: Var,
    },
    Add(Var, Var),
    Negate(Var),
    Relu(Var),
    Concat(Vec<Var>),
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    Gap(Var),
    Reshape(Var),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor4<T>,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    consumed: bool,
    counter: MacCounter,
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            consumed: false,
            counter: MacCounter::new(),
        }
    }

    fn push(&mut self, value: Tensor4<T>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor4<T> {
        &self.nodes[v.0].value
    }

    /// MACs executed by the convolutions recorded so far.
    pub fn macs(&self) -> u64 {
        self.counter.get()
    }

    pub fn input(&mut self, value: Tensor4<T>) -> Var {
        self.push(value, Op::Input)
    }

    /// A leaf whose gradient is reported under parameter id `id`.
    pub fn param(&mut self, id: usize, value: Tensor4<T>) -> Var {
        self.push(value, Op::Param(id))
    }

    fn conv_taps(
        &mut self,
        x: Var,
        w: Var,
        geom: ConvGeometry,
        taps: Vec<(usize, usize)>,
    ) -> Result<Var> {
        let y = {
            let (xv, wv) = (self.value(x), self.value(w));
            conv_taps(xv, wv, &geom, &taps, &self.counter)?
        };
        Ok(self.push(y, Op::Conv { x, w, geom, taps }))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, geom: ConvGeometry) -> Result<Var> {
        self.conv_taps(x, w, geom, dense_taps(geom.k))
    }

    pub fn conv2d_sparse(
        &mut self,
        x: Var,
        w: Var,
        mask: &MaskGrid,
        geom: ConvGeometry,
    ) -> Result<Var> {
        if mask.k() != geom.k {
            return Err(Error::InvalidGeometry(format!(
                "mask size {} does not match kernel size {}",
                mask.k(),
                geom.k
            )));
        }
        check_mask("conv2d_sparse weight", self.value(w), mask)?;
        self.conv_taps(x, w, geom, mask.offsets())
    }

    /// Pointwise convolution; `b` is a `(1, c_out, 1, 1)` bias.
    pub fn conv1x1(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = conv1x1(
            self.value(x),
            self.value(w),
            self.value(b).data(),
            &self.counter,
        )?;
        Ok(self.push(y, Op::Conv1x1 { x, w, b }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.value(a).add(self.value(b))?;
        Ok(self.push(y, Op::Add(a, b)))
    }

    pub fn negate(&mut self, a: Var) -> Var {
        let y = self.value(a).negate();
        self.push(y, Op::Negate(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let y = self.value(a).relu();
        self.push(y, Op::Relu(a))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let refs: Vec<&Tensor4<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let y = Tensor4::concat_channels(&refs)?;
        Ok(self.push(y, Op::Concat(parts.to_vec())))
    }

    pub fn maxpool2x2(&mut self, x: Var) -> Result<Var> {
        let (y, argmax) = maxpool2x2_with_argmax(self.value(x))?;
        Ok(self.push(y, Op::MaxPool { x, argmax }))
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let y = global_avg_pool(self.value(x))?;
        Ok(self.push(y, Op::Gap(x)))
    }

    pub fn reshape(&mut self, x: Var, shape: Shape4) -> Result<Var> {
        let y = self.value(x).clone().reshape(shape)?;
        Ok(self.push(y, Op::Reshape(x)))
    }

    /// Propagate `seed` (the gradient of the objective with respect to
    /// `output`) back through every recorded operation.
    pub fn backward(&mut self, output: Var, seed: Tensor4<T>) -> Result<Gradients<T>> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        self.consumed = true;
        if seed.shape() != self.value(output).shape() {
            return Err(Error::ShapeMismatch {
                op: "backward seed",
                expected: self.value(output).shape(),
                found: seed.shape(),
            });
        }
        let mut grads: Vec<Option<Tensor4<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(seed);
        let mut visited = Vec::new();

        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            if let Op::Input | Op::Param(_) = node.op {
                // Leaves keep their gradient for the caller.
                if grads[i].is_some() {
                    visited.push(i);
                }
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            visited.push(i);
            match &node.op {
                Op::Input | Op::Param(_) => unreachable!("leaves handled above"),
                Op::Conv { x, w, geom, taps } => {
                    let xv = &self.nodes[x.0].value;
                    let wv = &self.nodes[w.0].value;
                    let gx = conv_backward_input(&g, wv, geom, taps, xv.shape())?;
                    let gw = conv_backward_weight(xv, &g, geom, taps, wv.shape())?;
                    accumulate(&mut grads, *x, gx)?;
                    accumulate(&mut grads, *w, gw)?;
                }
                Op::Conv1x1 { x, w, b } => {
                    let xv = &self.nodes[x.0].value;
                    let wv = &self.nodes[w.0].value;
                    let geom = ConvGeometry::new(1, 1, 0);
                    let gx = conv_backward_input(&g, wv, &geom, &[(0, 0)], xv.shape())?;
                    let gw = conv_backward_weight(xv, &g, &geom, &[(0, 0)], wv.shape())?;
                    let gs = g.shape();
                    let mut gb = vec![T::zero(); gs.c];
                    for n in 0..gs.n {
                        for (c, acc) in gb.iter_mut().enumerate() {
                            *acc += g.plane(n, c).iter().fold(T::zero(), |a, &v| a + v);
                        }
                    }
                    accumulate(&mut grads, *x, gx)?;
                    accumulate(&mut grads, *w, gw)?;
                    accumulate(&mut grads, *b, Tensor4::from_vec((1, gs.c, 1, 1), gb)?)?;
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone())?;
                    accumulate(&mut grads, *b, g)?;
                }
                Op::Negate(a) => accumulate(&mut grads, *a, g.negate())?,
                Op::Relu(a) => {
                    let xv = &self.nodes[a.0].value;
                    let data = g
                        .data()
                        .iter()
                        .zip(xv.data())
                        .map(|(&gv, &x)| if x > T::zero() { gv } else { T::zero() })
                        .collect();
                    accumulate(&mut grads, *a, Tensor4::from_vec(g.shape(), data)?)?;
                }
                Op::Concat(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let c = self.nodes[p.0].value.shape().c;
                        accumulate(&mut grads, *p, g.slice_channels(start, c)?)?;
                        start += c;
                    }
                }
                Op::MaxPool { x, argmax } => {
                    let mut gx = Tensor4::zeros(self.nodes[x.0].value.shape())?;
                    for (&src, &gv) in argmax.iter().zip(g.data()) {
                        gx.data_mut()[src] += gv;
                    }
                    accumulate(&mut grads, *x, gx)?;
                }
                Op::Gap(x) => {
                    let s = self.nodes[x.0].value.shape();
                    let inv = T::one() / T::lit(s.plane() as f64);
                    let gx = Tensor4::from_fn(s, |n, c, _, _| g.get(n, c, 0, 0) * inv)?;
                    accumulate(&mut grads, *x, gx)?;
                }
                Op::Reshape(x) => {
                    let s = self.nodes[x.0].value.shape();
                    accumulate(&mut grads, *x, g.reshape(s)?)?;
                }
            }
        }

        Ok(Gradients {
            params: self
                .nodes
                .iter()
                .enumerate()
                .filter_map(|(i, n)| match n.op {
                    Op::Param(id) => Some((id, i)),
                    _ => None,
                })
                .collect(),
            grads,
            visited,
        })
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Tensor4<T>>], v: Var, g: Tensor4<T>) -> Result<()> {
    match &mut grads[v.0] {
        Some(existing) => *existing = existing.add(&g)?,
        slot @ None => *slot = Some(g),
    }
    Ok(())
}

/// Result of a backward pass.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor4<T>>>,
    params: Vec<(usize, usize)>,
    visited: Vec<usize>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient with respect to a leaf (input or parameter) node.
    pub fn wrt(&self, v: Var) -> Option<&Tensor4<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient for parameter id `id`, summed over every node bound to it.
    pub fn param(&self, id: usize) -> Option<Tensor4<T>> {
        let mut out: Option<Tensor4<T>> = None;
        for &(pid, node) in &self.params {
            if pid != id {
                continue;
            }
            if let Some(g) = &self.grads[node] {
                out = Some(match out {
                    Some(acc) => acc.add(g).expect("same parameter shape"),
                    None => g.clone(),
                });
            }
        }
        out
    }

    /// Per-parameter gradients for ids `0..count`.
    pub fn into_param_grads(self, count: usize) -> Vec<Option<Tensor4<T>>> {
        (0..count).map(|id| self.param(id)).collect()
    }

    /// Node indices in the order the backward pass processed them.
    pub fn visit_order(&self) -> &[usize] {
        &self.visited
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sc_kernels::make_mask_pair;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_t(shape: impl Into<Shape4>, rng: &mut ChaCha8Rng) -> Tensor4<f64> {
        Tensor4::from_fn(shape, |_, _, _, _| rng.random_range(-1.0..1.0)).unwrap()
    }

    fn weighted_sum(y: &Tensor4<f64>, r: &Tensor4<f64>) -> f64 {
        y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
    }

    #[test]
    fn second_backward_fails() {
        let mut tape = Tape::<f64>::new();
        let x = tape.input(Tensor4::full((1, 1, 2, 2), 1.0).unwrap());
        let y = tape.relu(x);
        let seed = Tensor4::full((1, 1, 2, 2), 1.0).unwrap();
        tape.backward(y, seed.clone()).unwrap();
        assert!(matches!(tape.backward(y, seed), Err(Error::TapeConsumed)));
    }

    #[test]
    fn seed_shape_checked() {
        let mut tape = Tape::<f64>::new();
        let x = tape.input(Tensor4::full((1, 1, 2, 2), 1.0).unwrap());
        assert!(tape
            .backward(x, Tensor4::full((1, 1, 1, 1), 1.0).unwrap())
            .is_err());
    }

    #[test]
    fn sparse_weight_gradient_is_zero_off_mask() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let masks = make_mask_pair(5).unwrap();
        let w = crate::sc_kernels::apply_mask(&rand_t((3, 2, 5, 5), &mut rng), &masks.odd).unwrap();
        let mut tape = Tape::new();
        let x = tape.input(rand_t((2, 2, 7, 7), &mut rng));
        let wv = tape.param(0, w);
        let y = tape
            .conv2d_sparse(x, wv, &masks.odd, ConvGeometry::new(5, 1, 2))
            .unwrap();
        let seed = rand_t(tape.value(y).shape(), &mut rng);
        let g = tape.backward(y, seed).unwrap().param(0).unwrap();
        for (i, &v) in g.data().iter().enumerate() {
            if !masks.odd.cells()[i % 25] {
                assert_eq!(v, 0.0);
            }
        }
        assert!(g.max_abs() > 0.0);
    }

    #[test]
    fn shared_parameter_gradients_sum() {
        // y = x*w + x*w through two nodes bound to the same id.
        let mut tape = Tape::<f64>::new();
        let x = tape.input(Tensor4::full((1, 1, 1, 1), 3.0).unwrap());
        let w1 = tape.param(0, Tensor4::full((1, 1, 1, 1), 2.0).unwrap());
        let w2 = tape.param(0, Tensor4::full((1, 1, 1, 1), 2.0).unwrap());
        let g = ConvGeometry::new(1, 1, 0);
        let a = tape.conv2d(x, w1, g).unwrap();
        let b = tape.conv2d(x, w2, g).unwrap();
        let y = tape.add(a, b).unwrap();
        let grads = tape
            .backward(y, Tensor4::full((1, 1, 1, 1), 1.0).unwrap())
            .unwrap();
        assert_eq!(grads.param(0).unwrap().data(), &[6.0]);
        assert_eq!(grads.wrt(x).unwrap().data(), &[4.0]);
    }

    #[test]
    fn reverse_visit_order() {
        let mut tape = Tape::<f64>::new();
        let x = tape.input(Tensor4::full((1, 1, 2, 2), 1.0).unwrap());
        let n = tape.negate(x);
        let r = tape.relu(n);
        let s = tape.add(r, x).unwrap();
        let grads = tape
            .backward(s, Tensor4::full((1, 1, 2, 2), 1.0).unwrap())
            .unwrap();
        assert_eq!(grads.visit_order(), &[3, 2, 1, 0]);
        assert_eq!(grads.wrt(x).unwrap().data(), &[1.0; 4]);
    }

    #[test]
    fn strided_conv_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x0 = rand_t((2, 3, 6, 5), &mut rng);
        let w0 = rand_t((4, 3, 3, 3), &mut rng);
        let geom = ConvGeometry::new(3, 2, 1);
        let f = |x: &Tensor4<f64>, w: &Tensor4<f64>| {
            crate::conv::conv2d_dense(x, w, &geom, &MacCounter::new()).unwrap()
        };
        let r = rand_t(f(&x0, &w0).shape(), &mut rng);

        let mut tape = Tape::new();
        let x = tape.input(x0.clone());
        let w = tape.param(0, w0.clone());
        let y = tape.conv2d(x, w, geom).unwrap();
        let grads = tape.backward(y, r.clone()).unwrap();
        let (gx, gw) = (grads.wrt(x).unwrap(), grads.param(0).unwrap());

        let eps = 1e-5;
        for i in (0..x0.len()).step_by(7) {
            let (mut up, mut dn) = (x0.clone(), x0.clone());
            up.data_mut()[i] += eps;
            dn.data_mut()[i] -= eps;
            let fd =
                (weighted_sum(&f(&up, &w0), &r) - weighted_sum(&f(&dn, &w0), &r)) / (2.0 * eps);
            assert!((fd - gx.data()[i]).abs() < 1e-7);
        }
        for i in 0..w0.len() {
            let (mut up, mut dn) = (w0.clone(), w0.clone());
            up.data_mut()[i] += eps;
            dn.data_mut()[i] -= eps;
            let fd =
                (weighted_sum(&f(&x0, &up), &r) - weighted_sum(&f(&x0, &dn), &r)) / (2.0 * eps);
            assert!((fd - gw.data()[i]).abs() < 1e-7);
        }
    }
}
