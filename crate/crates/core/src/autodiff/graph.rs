//! Tape of tensor operations with reverse-mode differentiation.
//!
//! Nodes are appended in evaluation order, so the node list is already a
//! topological order and `backward` walks it once in reverse.

use super::tensor::{axis_split, gemm, numel, Scalar, Tensor};
use crate::error::{ensure, Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    MatMul(Var, Var),
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Reshape(Var),
    Permute {
        input: Var,
        perm: Vec<usize>,
    },
    Gather {
        input: Var,
        axis: usize,
        indices: Vec<usize>,
    },
    Sum {
        input: Var,
        axis: usize,
    },
    SumAll(Var),
    Mean {
        input: Var,
        axis: usize,
    },
    MeanAll(Var),
    Max {
        input: Var,
        axis: usize,
        argmax: Vec<usize>,
    },
    Relu(Var),
    Tanh(Var),
    Softmax {
        input: Var,
        axis: usize,
    },
    Scale(Var, T),
    AddScalar(Var),
    Sqrt(Var),
    Square(Var),
    Norm {
        input: Var,
        axis: usize,
        eps: T,
    },
}

#[derive(Debug, Clone)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

#[derive(Debug, Clone, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf without gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    fn binary(&mut self, a: Var, b: Var, name: &str, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        x.same_shape(y, name)?;
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        let t = Tensor::new(x.shape(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, op, rg))
    }

    fn unary(&mut self, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let x = self.value(a);
        let t = Tensor::from_fn(x.shape(), |i| f(x.data()[i]));
        let rg = self.rg(a);
        self.push(t, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |p, q| p + q, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |p, q| p - q, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |p, q| p * q, Op::Mul(a, b))
    }

    /// Elementwise quotient; any zero divisor is an error.
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        ensure!(
            self.value(b).data().iter().all(|&v| v != T::zero()),
            InvalidInput,
            "division by zero"
        );
        self.binary(a, b, "div", |p, q| p / q, Op::Div(a, b))
    }

    /// Matrix product of rank-2 tensors, or batched product of rank-3 tensors
    /// sharing the leading extent.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        let (batch, m, k, n) = match (x.shape(), y.shape()) {
            (&[m, k], &[k2, n]) if k == k2 => (1, m, k, n),
            (&[b, m, k], &[b2, k2, n]) if b == b2 && k == k2 => (b, m, k, n),
            (sa, sb) => {
                return Err(Error::Shape(format!("matmul: {sa:?} x {sb:?}")));
            }
        };
        let mut out = vec![T::zero(); batch * m * n];
        for bi in 0..batch {
            gemm(
                &x.data()[bi * m * k..(bi + 1) * m * k],
                &y.data()[bi * k * n..(bi + 1) * k * n],
                &mut out[bi * m * n..(bi + 1) * m * n],
                m,
                k,
                n,
                false,
                false,
            );
        }
        let shape = if x.rank() == 2 {
            vec![m, n]
        } else {
            vec![batch, m, n]
        };
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(&shape, out)?, Op::MatMul(a, b), rg))
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        ensure!(!inputs.is_empty(), InvalidArgument, "concat of nothing");
        let first = self.value(inputs[0]).shape().to_vec();
        let (outer, _, inner) = axis_split(&first, axis)?;
        let mut total = 0;
        for &v in inputs {
            let s = self.value(v).shape();
            let ok = s.len() == first.len() && s.iter().enumerate().all(|(d, &e)| d == axis || e == first[d]);
            ensure!(ok, Shape, "concat along {axis}: {first:?} vs {s:?}");
            total += s[axis];
        }
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let t = self.value(v);
                let len = t.shape()[axis] * inner;
                out.extend_from_slice(&t.data()[o * len..(o + 1) * len]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let rg = inputs.iter().any(|&v| self.rg(v));
        Ok(self.push(
            Tensor::new(&shape, out)?,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            rg,
        ))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).clone().reshaped(shape)?;
        let rg = self.rg(a);
        Ok(self.push(t, Op::Reshape(a), rg))
    }

    /// Reorders axes: output axis `d` is input axis `perm[d]`.
    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Result<Var> {
        let x = self.value(a);
        let rank = x.rank();
        let mut seen = vec![false; rank];
        ensure!(perm.len() == rank, Shape, "permutation {perm:?} for rank {rank}");
        for &p in perm {
            ensure!(p < rank && !seen[p], Shape, "invalid permutation {perm:?}");
            seen[p] = true;
        }
        let t = permute_tensor(x, perm);
        let rg = self.rg(a);
        Ok(self.push(
            t,
            Op::Permute {
                input: a,
                perm: perm.to_vec(),
            },
            rg,
        ))
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let rank = self.value(a).rank();
        ensure!(rank >= 2, Shape, "transpose needs rank >= 2");
        let mut perm: Vec<usize> = (0..rank).collect();
        perm.swap(rank - 2, rank - 1);
        self.permute(a, &perm)
    }

    /// Index select along `axis`. Indices may repeat, which makes this the
    /// explicit tiling op as well.
    pub fn gather(&mut self, a: Var, axis: usize, indices: &[usize]) -> Result<Var> {
        let x = self.value(a);
        let (outer, len, inner) = axis_split(x.shape(), axis)?;
        ensure!(!indices.is_empty(), InvalidArgument, "gather with no indices");
        if let Some(&bad) = indices.iter().find(|&&i| i >= len) {
            return Err(Error::Index { index: bad, len });
        }
        let mut out = Vec::with_capacity(outer * indices.len() * inner);
        for o in 0..outer {
            for &i in indices {
                let start = (o * len + i) * inner;
                out.extend_from_slice(&x.data()[start..start + inner]);
            }
        }
        let mut shape = x.shape().to_vec();
        shape[axis] = indices.len();
        let rg = self.rg(a);
        Ok(self.push(
            Tensor::new(&shape, out)?,
            Op::Gather {
                input: a,
                axis,
                indices: indices.to_vec(),
            },
            rg,
        ))
    }

    fn reduce_axis(&self, a: Var, axis: usize) -> Result<(Vec<usize>, usize, usize, usize)> {
        let shape = self.value(a).shape();
        let (outer, len, inner) = axis_split(shape, axis)?;
        let mut out_shape = shape.to_vec();
        out_shape.remove(axis);
        Ok((out_shape, outer, len, inner))
    }

    pub fn sum(&mut self, a: Var, axis: usize) -> Result<Var> {
        let (shape, outer, len, inner) = self.reduce_axis(a, axis)?;
        let x = self.value(a).data();
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let src = &x[(o * len + l) * inner..(o * len + l + 1) * inner];
                for (d, &s) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(&shape, out)?, Op::Sum { input: a, axis }, rg))
    }

    pub fn mean(&mut self, a: Var, axis: usize) -> Result<Var> {
        let s = self.sum(a, axis)?;
        let len = T::from_usize(self.value(a).shape()[axis]).unwrap();
        let node = &mut self.nodes[s.0];
        for v in node.value.data_mut() {
            *v = *v / len;
        }
        node.op = Op::Mean { input: a, axis };
        Ok(s)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s: T = self.value(a).data().iter().copied().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::SumAll(a), rg)
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let s: T = x.data().iter().copied().sum::<T>() / T::from_usize(x.len()).unwrap();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::MeanAll(a), rg)
    }

    /// Maximum along `axis`; the adjoint goes to the lowest-index maximizer.
    pub fn max(&mut self, a: Var, axis: usize) -> Result<Var> {
        let (shape, outer, len, inner) = self.reduce_axis(a, axis)?;
        let x = self.value(a).data();
        let mut out = vec![T::neg_infinity(); outer * inner];
        let mut argmax = vec![0usize; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                for i in 0..inner {
                    let v = x[(o * len + l) * inner + i];
                    let slot = o * inner + i;
                    if v > out[slot] {
                        out[slot] = v;
                        argmax[slot] = l;
                    }
                }
            }
        }
        let rg = self.rg(a);
        Ok(self.push(
            Tensor::new(&shape, out)?,
            Op::Max {
                input: a,
                axis,
                argmax,
            },
            rg,
        ))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |v| if v > T::zero() { v } else { T::zero() }, Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, |v| v.tanh(), Op::Tanh(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |v| v * v, Op::Square(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        ensure!(
            self.value(a).data().iter().all(|&v| v >= T::zero()),
            InvalidInput,
            "sqrt of a negative value"
        );
        Ok(self.unary(a, |v| v.sqrt(), Op::Sqrt(a)))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        self.unary(a, |v| v * c, Op::Scale(a, c))
    }

    pub fn div_scalar(&mut self, a: Var, c: T) -> Result<Var> {
        ensure!(c != T::zero(), InvalidInput, "division by zero");
        Ok(self.unary(a, |v| v / c, Op::Scale(a, T::one() / c)))
    }

    pub fn add_scalar(&mut self, a: Var, c: T) -> Var {
        self.unary(a, |v| v + c, Op::AddScalar(a))
    }

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let x = self.value(a);
        let (outer, len, inner) = axis_split(x.shape(), axis)?;
        let xs = x.data();
        let mut out = vec![T::zero(); xs.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |l: usize| (o * len + l) * inner + i;
                let mx = (0..len).map(|l| xs[at(l)]).fold(T::neg_infinity(), T::max);
                let mut z = T::zero();
                for l in 0..len {
                    let e = (xs[at(l)] - mx).exp();
                    out[at(l)] = e;
                    z += e;
                }
                for l in 0..len {
                    out[at(l)] = out[at(l)] / z;
                }
            }
        }
        let t = Tensor::new(x.shape(), out)?;
        let rg = self.rg(a);
        Ok(self.push(t, Op::Softmax { input: a, axis }, rg))
    }

    /// Euclidean norm along `axis`, floored at `eps`. The adjoint is zero
    /// wherever the floor is active.
    pub fn norm(&mut self, a: Var, axis: usize, eps: T) -> Result<Var> {
        ensure!(eps >= T::zero(), InvalidArgument, "norm eps must be >= 0");
        let (shape, outer, len, inner) = self.reduce_axis(a, axis)?;
        let x = self.value(a).data();
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let mut s = T::zero();
                for l in 0..len {
                    let v = x[(o * len + l) * inner + i];
                    s += v * v;
                }
                out[o * inner + i] = s.sqrt().max(eps);
            }
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(&shape, out)?, Op::Norm { input: a, axis, eps }, rg))
    }

    /// Gradient of the last `backward` target with respect to `v`; zeros if
    /// `v` did not influence it.
    pub fn grad(&self, v: Var) -> Tensor<T> {
        self.grads
            .get(v.0)
            .and_then(|g| g.clone())
            .unwrap_or_else(|| Tensor::zeros(self.value(v).shape()))
    }

    /// Reverse sweep from a single-element `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.value(loss).shape().to_vec();
        ensure!(
            shape.iter().product::<usize>() == 1,
            InvalidArgument,
            "backward needs a scalar loss, got shape {shape:?}"
        );
        self.grads = vec![None; self.nodes.len()];
        self.grads[loss.0] = Some(Tensor::full(&shape, T::one()));
        for id in (0..=loss.0).rev() {
            if !self.nodes[id].requires_grad {
                continue;
            }
            let Some(g) = self.grads[id].take() else {
                continue;
            };
            self.propagate(id, &g)?;
            self.grads[id] = Some(g);
        }
        Ok(())
    }

    fn propagate(&mut self, id: usize, g: &Tensor<T>) -> Result<()> {
        let op = self.nodes[id].op.clone();
        let mut grads = std::mem::take(&mut self.grads);
        let gd = g.data();
        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                accumulate(&self.nodes, &mut grads, a, gd.to_vec());
                accumulate(&self.nodes, &mut grads, b, gd.to_vec());
            }
            Op::Sub(a, b) => {
                accumulate(&self.nodes, &mut grads, a, gd.to_vec());
                accumulate(&self.nodes, &mut grads, b, gd.iter().map(|&v| -v).collect());
            }
            Op::Mul(a, b) => {
                if self.rg(a) {
                    let y = self.value(b).data();
                    let d = gd.iter().zip(y).map(|(&g, &y)| g * y).collect();
                    accumulate(&self.nodes, &mut grads, a, d);
                }
                if self.rg(b) {
                    let x = self.value(a).data();
                    let d = gd.iter().zip(x).map(|(&g, &x)| g * x).collect();
                    accumulate(&self.nodes, &mut grads, b, d);
                }
            }
            Op::Div(a, b) => {
                let y = self.value(b).data();
                if self.rg(a) {
                    let d = gd.iter().zip(y).map(|(&g, &y)| g / y).collect();
                    accumulate(&self.nodes, &mut grads, a, d);
                }
                if self.rg(b) {
                    let out = self.nodes[id].value.data();
                    let d = gd
                        .iter()
                        .zip(out)
                        .zip(y)
                        .map(|((&g, &q), &y)| -g * q / y)
                        .collect();
                    accumulate(&self.nodes, &mut grads, b, d);
                }
            }
            Op::MatMul(a, b) => {
                let (xs, ys) = (self.value(a).shape().to_vec(), self.value(b).shape().to_vec());
                let (batch, m, k, n) = if xs.len() == 2 {
                    (1, xs[0], xs[1], ys[1])
                } else {
                    (xs[0], xs[1], xs[2], ys[2])
                };
                if self.rg(a) {
                    let y = self.value(b).data();
                    let mut d = vec![T::zero(); batch * m * k];
                    for bi in 0..batch {
                        gemm(
                            &gd[bi * m * n..(bi + 1) * m * n],
                            &y[bi * k * n..(bi + 1) * k * n],
                            &mut d[bi * m * k..(bi + 1) * m * k],
                            m,
                            n,
                            k,
                            false,
                            true,
                        );
                    }
                    accumulate(&self.nodes, &mut grads, a, d);
                }
                if self.rg(b) {
                    let x = self.value(a).data();
                    let mut d = vec![T::zero(); batch * k * n];
                    for bi in 0..batch {
                        gemm(
                            &x[bi * m * k..(bi + 1) * m * k],
                            &gd[bi * m * n..(bi + 1) * m * n],
                            &mut d[bi * k * n..(bi + 1) * k * n],
                            k,
                            m,
                            n,
                            true,
                            false,
                        );
                    }
                    accumulate(&self.nodes, &mut grads, b, d);
                }
            }
            Op::Concat { inputs, axis } => {
                let shape = g.shape().to_vec();
                let (outer, total, inner) = axis_split(&shape, axis)?;
                let mut offset = 0;
                for v in inputs {
                    let len = self.value(v).shape()[axis];
                    if self.rg(v) {
                        let mut d = Vec::with_capacity(outer * len * inner);
                        for o in 0..outer {
                            let start = (o * total + offset) * inner;
                            d.extend_from_slice(&gd[start..start + len * inner]);
                        }
                        accumulate(&self.nodes, &mut grads, v, d);
                    }
                    offset += len;
                }
            }
            Op::Reshape(a) => accumulate(&self.nodes, &mut grads, a, gd.to_vec()),
            Op::Permute { input, perm } => {
                let mut inverse = vec![0; perm.len()];
                for (d, &p) in perm.iter().enumerate() {
                    inverse[p] = d;
                }
                let back = permute_tensor(g, &inverse);
                accumulate(&self.nodes, &mut grads, input, back.into_data());
            }
            Op::Gather { input, axis, indices } => {
                let (outer, len, inner) = axis_split(self.value(input).shape(), axis)?;
                let mut d = vec![T::zero(); outer * len * inner];
                let k = indices.len();
                for o in 0..outer {
                    for (slot, &i) in indices.iter().enumerate() {
                        let src = &gd[(o * k + slot) * inner..(o * k + slot + 1) * inner];
                        let dst = &mut d[(o * len + i) * inner..(o * len + i + 1) * inner];
                        for (t, &s) in dst.iter_mut().zip(src) {
                            *t += s;
                        }
                    }
                }
                accumulate(&self.nodes, &mut grads, input, d);
            }
            Op::Sum { input, axis } | Op::Mean { input, axis } => {
                let (outer, len, inner) = axis_split(self.value(input).shape(), axis)?;
                let f = if matches!(self.nodes[id].op, Op::Mean { .. }) {
                    T::one() / T::from_usize(len).unwrap()
                } else {
                    T::one()
                };
                let mut d = Vec::with_capacity(outer * len * inner);
                for o in 0..outer {
                    for _ in 0..len {
                        d.extend(gd[o * inner..(o + 1) * inner].iter().map(|&v| v * f));
                    }
                }
                accumulate(&self.nodes, &mut grads, input, d);
            }
            Op::SumAll(a) => {
                let n = self.value(a).len();
                accumulate(&self.nodes, &mut grads, a, vec![gd[0]; n]);
            }
            Op::MeanAll(a) => {
                let n = self.value(a).len();
                let v = gd[0] / T::from_usize(n).unwrap();
                accumulate(&self.nodes, &mut grads, a, vec![v; n]);
            }
            Op::Max { input, axis, argmax } => {
                let (outer, len, inner) = axis_split(self.value(input).shape(), axis)?;
                let mut d = vec![T::zero(); outer * len * inner];
                for o in 0..outer {
                    for i in 0..inner {
                        let slot = o * inner + i;
                        d[(o * len + argmax[slot]) * inner + i] += gd[slot];
                    }
                }
                accumulate(&self.nodes, &mut grads, input, d);
            }
            Op::Relu(a) => {
                let x = self.value(a).data();
                let d = gd
                    .iter()
                    .zip(x)
                    .map(|(&g, &x)| if x > T::zero() { g } else { T::zero() })
                    .collect();
                accumulate(&self.nodes, &mut grads, a, d);
            }
            Op::Tanh(a) => {
                let y = self.nodes[id].value.data();
                let d = gd.iter().zip(y).map(|(&g, &y)| g * (T::one() - y * y)).collect();
                accumulate(&self.nodes, &mut grads, a, d);
            }
            Op::Softmax { input, axis } => {
                let y = self.nodes[id].value.data();
                let (outer, len, inner) = axis_split(g.shape(), axis)?;
                let mut d = vec![T::zero(); y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |l: usize| (o * len + l) * inner + i;
                        let dot: T = (0..len).map(|l| gd[at(l)] * y[at(l)]).sum();
                        for l in 0..len {
                            d[at(l)] = y[at(l)] * (gd[at(l)] - dot);
                        }
                    }
                }
                accumulate(&self.nodes, &mut grads, input, d);
            }
            Op::Scale(a, c) => accumulate(&self.nodes, &mut grads, a, gd.iter().map(|&v| v * c).collect()),
            Op::AddScalar(a) => accumulate(&self.nodes, &mut grads, a, gd.to_vec()),
            Op::Sqrt(a) => {
                let y = self.nodes[id].value.data();
                let two = T::lit(2.0);
                let d = gd
                    .iter()
                    .zip(y)
                    .map(|(&g, &y)| if y > T::zero() { g / (two * y) } else { T::zero() })
                    .collect();
                accumulate(&self.nodes, &mut grads, a, d);
            }
            Op::Square(a) => {
                let x = self.value(a).data();
                let two = T::lit(2.0);
                let d = gd.iter().zip(x).map(|(&g, &x)| two * g * x).collect();
                accumulate(&self.nodes, &mut grads, a, d);
            }
            Op::Norm { input, axis, eps } => {
                let (outer, len, inner) = axis_split(self.value(input).shape(), axis)?;
                let x = self.value(input).data();
                let y = self.nodes[id].value.data();
                let mut d = vec![T::zero(); x.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let slot = o * inner + i;
                        let n = y[slot];
                        // Floor active (or exact zero vector): zero adjoint.
                        if n <= eps || n == T::zero() {
                            continue;
                        }
                        let f = gd[slot] / n;
                        for l in 0..len {
                            let at = (o * len + l) * inner + i;
                            d[at] = f * x[at];
                        }
                    }
                }
                accumulate(&self.nodes, &mut grads, input, d);
            }
        }
        self.grads = grads;
        Ok(())
    }
}

fn accumulate<T: Scalar>(nodes: &[Node<T>], grads: &mut [Option<Tensor<T>>], v: Var, delta: Vec<T>) {
    if !nodes[v.0].requires_grad {
        return;
    }
    match &mut grads[v.0] {
        Some(g) => {
            for (a, d) in g.data_mut().iter_mut().zip(delta) {
                *a += d;
            }
        }
        slot @ None => {
            let shape = nodes[v.0].value.shape().to_vec();
            *slot = Some(Tensor::new(&shape, delta).expect("adjoint shape"));
        }
    }
}

fn permute_tensor<T: Scalar>(x: &Tensor<T>, perm: &[usize]) -> Tensor<T> {
    let in_shape = x.shape();
    let rank = in_shape.len();
    let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();
    let mut in_strides = vec![1; rank];
    for d in (0..rank.saturating_sub(1)).rev() {
        in_strides[d] = in_strides[d + 1] * in_shape[d + 1];
    }
    let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let n = numel(&out_shape);
    let mut out = Vec::with_capacity(n);
    let mut idx = vec![0usize; rank];
    let mut src = 0usize;
    for _ in 0..n {
        out.push(x.data()[src]);
        for d in (0..rank).rev() {
            idx[d] += 1;
            src += strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            src -= strides[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    Tensor::new(&out_shape, out).expect("permuted shape")
}
