//! Reverse-mode gradients over [`Tensor`] values.
//!
//! A [`Graph`] is an append-only tape. Every operation evaluates eagerly,
//! stores its output, and records which nodes it read. Because nodes can
//! only reference earlier nodes the recorded graph is acyclic, and
//! [`Graph::backward`] is a single reverse sweep.
//!
//! Nodes that do not depend on a trainable leaf are never visited during the
//! backward sweep, so frozen weights cost nothing beyond the forward pass.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::Real;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, Real),
    Matmul(Var, Var),
    Softmax(Var, usize),
    Silu(Var),
    Reshape(Var),
    Permute(Var, Vec<usize>),
    MeanAxes(Var),
    MeanAll(Var),
    AvgPool(Var),
    Upsample(Var),
    DepthwiseConv(Var, Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients indexed by node; `None` where no trainable path exists.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A value that gradients do not flow into.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).sub(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).mul(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, k: Real) -> Var {
        let out = self.value(a).scale(k);
        let rg = self.rg(&[a]);
        self.push(out, Op::Scale(a, k), rg)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Matmul(a, b), rg))
    }

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let out = self.value(a).softmax(axis)?;
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::Softmax(a, axis), rg))
    }

    /// x * sigmoid(x)
    pub fn silu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x / (1.0 + (-x).exp()));
        let rg = self.rg(&[a]);
        self.push(out, Op::Silu(a), rg)
    }

    pub fn reshape(&mut self, a: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let out = self.value(a).reshape(shape)?;
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::Reshape(a), rg))
    }

    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        let out = self.value(a).permute(axes)?;
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::Permute(a, axes.to_vec()), rg))
    }

    pub fn transpose_last(&mut self, a: Var) -> Result<Var> {
        let r = self.value(a).rank();
        if r < 2 {
            return Err(Error::invalid("transpose needs rank >= 2"));
        }
        let mut axes: Vec<usize> = (0..r).collect();
        axes.swap(r - 2, r - 1);
        self.permute(a, &axes)
    }

    /// Mean over `axes`, keeping them as extent-1 axes.
    pub fn mean_axes(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        let out = self.value(a).mean_axes(axes)?;
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::MeanAxes(a), rg))
    }

    /// Mean of all elements, as a shape-`[1]` scalar.
    pub fn mean(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).mean());
        let rg = self.rg(&[a]);
        self.push(out, Op::MeanAll(a), rg)
    }

    pub fn avg_pool2x2(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).avg_pool2x2()?;
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::AvgPool(a), rg))
    }

    pub fn upsample2x(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).upsample2x()?;
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::Upsample(a), rg))
    }

    /// See [`Tensor::depthwise_conv3x3`].
    pub fn depthwise_conv3x3(&mut self, x: Var, k: Var) -> Result<Var> {
        let out = self.value(x).depthwise_conv3x3(self.value(k))?;
        let rg = self.rg(&[x, k]);
        Ok(self.push(out, Op::DepthwiseConv(x, k), rg))
    }

    /// Mean squared difference between `a` and `b`.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.sub(a, b)?;
        let sq = self.mul(d, d)?;
        Ok(self.mean(sq))
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(lv.shape().to_vec(), 1.0));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let contributions = self.local_grads(node, &g)?;
            // Leaves keep their gradient.
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
                continue;
            }
            for (v, gv) in contributions {
                if !self.nodes[v.0].requires_grad {
                    continue;
                }
                match &mut grads[v.0] {
                    Some(acc) => acc.add_assign(&gv),
                    slot @ None => *slot = Some(gv),
                }
            }
        }
        grads.resize(self.nodes.len(), None);
        Ok(Gradients { grads })
    }

    /// Gradients of `loss` with respect to each of `leaves`; leaves the loss
    /// does not depend on get zeros.
    pub fn grad(&self, loss: Var, leaves: &[Var]) -> Result<Vec<Tensor>> {
        let mut g = self.backward(loss)?;
        Ok(leaves
            .iter()
            .map(|&v| {
                g.take(v)
                    .unwrap_or_else(|| Tensor::zeros(self.value(v).shape().to_vec()))
            })
            .collect())
    }

    fn local_grads(&self, node: &Node, g: &Tensor) -> Result<Vec<(Var, Tensor)>> {
        let val = |v: Var| self.value(v);
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        let mut out = Vec::with_capacity(2);
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if needs(*a) {
                    out.push((*a, g.sum_to_shape(val(*a).shape())?));
                }
                if needs(*b) {
                    out.push((*b, g.sum_to_shape(val(*b).shape())?));
                }
            }
            Op::Sub(a, b) => {
                if needs(*a) {
                    out.push((*a, g.sum_to_shape(val(*a).shape())?));
                }
                if needs(*b) {
                    out.push((*b, g.sum_to_shape(val(*b).shape())?.scale(-1.0)));
                }
            }
            Op::Mul(a, b) => {
                if needs(*a) {
                    out.push((*a, g.mul(val(*b))?.sum_to_shape(val(*a).shape())?));
                }
                if needs(*b) {
                    out.push((*b, g.mul(val(*a))?.sum_to_shape(val(*b).shape())?));
                }
            }
            Op::Scale(a, k) => out.push((*a, g.scale(*k))),
            Op::Matmul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                if needs(*a) {
                    let ga = g.matmul(&bv.transpose_last()?)?;
                    out.push((*a, ga.sum_to_shape(av.shape())?));
                }
                if needs(*b) {
                    let gb = if bv.rank() == 2 {
                        // Rows of every batch slice share one weight matrix.
                        let q = av.shape()[av.rank() - 1];
                        let r = bv.shape()[1];
                        let a2 = av.reshape([av.len() / q, q])?;
                        let g2 = g.reshape([g.len() / r, r])?;
                        a2.transpose_last()?.matmul(&g2)?
                    } else {
                        av.transpose_last()?.matmul(g)?.sum_to_shape(bv.shape())?
                    };
                    out.push((*b, gb));
                }
            }
            Op::Softmax(a, axis) => {
                let y = &node.value;
                let (outer, n, inner) = y.split_axis(*axis)?;
                let (yd, gd) = (y.data(), g.data());
                let mut data = vec![0.0 as Real; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * n * inner + i;
                        let dot: Real = (0..n)
                            .map(|k| yd[base + k * inner] * gd[base + k * inner])
                            .sum();
                        for k in 0..n {
                            let j = base + k * inner;
                            data[j] = yd[j] * (gd[j] - dot);
                        }
                    }
                }
                out.push((*a, Tensor::new(y.shape().to_vec(), data)?));
            }
            Op::Silu(a) => {
                let x = val(*a);
                let data = x
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&x, &gv)| {
                        let s = 1.0 / (1.0 + (-x).exp());
                        gv * s * (1.0 + x * (1.0 - s))
                    })
                    .collect();
                out.push((*a, Tensor::new(x.shape().to_vec(), data)?));
            }
            Op::Reshape(a) => out.push((*a, g.reshape(val(*a).shape().to_vec())?)),
            Op::Permute(a, axes) => {
                let mut inv = vec![0; axes.len()];
                for (i, &ax) in axes.iter().enumerate() {
                    inv[ax] = i;
                }
                out.push((*a, g.permute(&inv)?));
            }
            Op::MeanAxes(a) => {
                let shape = val(*a).shape();
                let count = (val(*a).len() / g.len()) as Real;
                let expanded = Tensor::zeros(shape.to_vec()).add(g)?;
                out.push((*a, expanded.scale(1.0 / count)));
            }
            Op::MeanAll(a) => {
                let x = val(*a);
                let k = g.data()[0] / x.len() as Real;
                out.push((*a, Tensor::full(x.shape().to_vec(), k)));
            }
            Op::AvgPool(a) => out.push((*a, g.upsample2x()?.scale(0.25))),
            Op::Upsample(a) => out.push((*a, g.avg_pool2x2()?.scale(4.0))),
            Op::DepthwiseConv(x, k) => {
                if needs(*x) {
                    out.push((*x, g.depthwise_conv3x3(&val(*k).flip3x3())?));
                }
                if needs(*k) {
                    out.push((*k, val(*x).depthwise_kernel_grad(g)?));
                }
            }
        }
        Ok(out)
    }
}

/// Central-difference gradient of `f` at `x`; test and diagnostics helper.
pub fn finite_difference(x: &Tensor, h: Real, mut f: impl FnMut(&Tensor) -> Real) -> Tensor {
    let mut probe = x.clone();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let fp = f(&probe);
        probe.data_mut()[i] = orig - h;
        let fm = f(&probe);
        probe.data_mut()[i] = orig;
        out.push((fp - fm) / (2.0 * h));
    }
    Tensor::new(x.shape().to_vec(), out).expect("same shape")
}

/// Largest relative error between two gradient tensors, with the
/// denominator floored at `floor` so near-zero entries compare absolutely.
pub fn max_relative_error(a: &Tensor, b: &Tensor, floor: Real) -> Real {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, Real::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use proptest::prelude::*;

    #[test]
    fn sum_gives_ones() {
        let mut g = Graph::new();
        let x = g.param(Tensor::new(vec![3], vec![1.0, -2.0, 5.0]).unwrap());
        let m = g.mean(x);
        let loss = g.scale(m, 3.0);
        let gx = g.grad(loss, &[x]).unwrap();
        for v in gx[0].data() {
            assert!((v - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn disconnected_leaf_gets_zero() {
        let mut g = Graph::new();
        let x = g.param(Tensor::ones([2]));
        let y = g.param(Tensor::ones([4]));
        let loss = g.mean(x);
        let gr = g.grad(loss, &[x, y]).unwrap();
        assert_eq!(gr[1], Tensor::zeros([4]));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut g = Graph::new();
        let x = g.param(Tensor::ones([2]));
        assert!(g.backward(x).is_err());
    }

    #[test]
    fn constants_do_not_require_grad() {
        let mut g = Graph::new();
        let w = g.constant(Tensor::ones([2, 2]));
        let x = g.constant(Tensor::ones([3, 2]));
        let y = g.matmul(x, w).unwrap();
        assert!(!g.requires_grad(y));
        let p = g.param(Tensor::ones([3, 2]));
        let z = g.add(y, p).unwrap();
        assert!(g.requires_grad(z));
    }

    /// Random op-chain, compared against central differences.
    fn check_chain(seed: u64, rows: usize, cols: usize) {
        let mut rng = Rng::seed_from(seed);
        let x0 = Tensor::randn([2, 2, rows, cols], &mut rng);
        let w = Tensor::randn([cols, cols], &mut rng);
        let bias = Tensor::randn([1, rows, cols], &mut rng);
        let target = Tensor::randn([2, 2, rows, cols], &mut rng);
        let build = |x: &Tensor| -> (Graph, Var, Var) {
            let mut g = Graph::new();
            let xv = g.param(x.clone());
            let wv = g.constant(w.clone());
            let bv = g.constant(bias.clone());
            let tv = g.constant(target.clone());
            let a = g.add(xv, bv).unwrap();
            let b = g.matmul(a, wv).unwrap();
            let s = g.silu(b);
            let bt = g.transpose_last(s).unwrap();
            let att = g.matmul(s, bt).unwrap();
            let att = g.scale(att, 0.3);
            let sm = g.softmax(att, 3).unwrap();
            let mixed = g.matmul(sm, a).unwrap();
            let pooled = g.avg_pool2x2(mixed).unwrap();
            let up = g.upsample2x(pooled).unwrap();
            let prod = g.mul(up, mixed).unwrap();
            let m = g.mean_axes(prod, &[2]).unwrap();
            let back = g.sub(prod, m).unwrap();
            let r = g.reshape(back, [4, rows * cols]).unwrap();
            let p = g.permute(r, &[1, 0]).unwrap();
            let p2 = g.reshape(p, [2, 2, rows, cols]).unwrap();
            let loss = g.mse(p2, tv).unwrap();
            (g, xv, loss)
        };
        let (g, xv, loss) = build(&x0);
        let analytic = g.grad(loss, &[xv]).unwrap().remove(0);
        let numeric = finite_difference(&x0, 1e-5, |x| {
            let (g, _, l) = build(x);
            g.value(l).data()[0]
        });
        let err = max_relative_error(&analytic, &numeric, 1e-6);
        assert!(err < 1e-4, "seed {seed}: rel err {err}");
    }

    #[test]
    fn op_chain_matches_finite_differences() {
        check_chain(42, 3, 4);
    }

    #[test]
    fn depthwise_conv_gradients() {
        let mut rng = Rng::seed_from(8);
        let x0 = Tensor::randn([4, 3, 2, 3], &mut rng);
        let k0 = Tensor::randn([3, 3, 3], &mut rng);
        let target = Tensor::randn([4, 3, 2, 3], &mut rng);
        let loss_of = |x: &Tensor, k: &Tensor| {
            let mut g = Graph::new();
            let (xv, kv) = (g.param(x.clone()), g.param(k.clone()));
            let tv = g.constant(target.clone());
            let y = g.depthwise_conv3x3(xv, kv).unwrap();
            let y = g.silu(y);
            let l = g.mse(y, tv).unwrap();
            (g, xv, kv, l)
        };
        let (g, xv, kv, l) = loss_of(&x0, &k0);
        let grads = g.grad(l, &[xv, kv]).unwrap();
        let nx = finite_difference(&x0, 1e-5, |x| {
            let (g, _, _, l) = loss_of(x, &k0);
            g.value(l).data()[0]
        });
        let nk = finite_difference(&k0, 1e-5, |k| {
            let (g, _, _, l) = loss_of(&x0, k);
            g.value(l).data()[0]
        });
        assert!(max_relative_error(&grads[0], &nx, 1e-6) < 1e-5);
        assert!(max_relative_error(&grads[1], &nk, 1e-6) < 1e-5);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn random_shapes_pass_gradient_check(seed in any::<u64>(), rows in 1usize..4, cols in 1usize..4) {
            check_chain(seed, rows, cols);
        }

        #[test]
        fn reshape_inverse_is_identity(seed in any::<u64>(), a in 1usize..5, b in 1usize..5, c in 1usize..5) {
            let mut rng = Rng::seed_from(seed);
            let x = Tensor::randn([a, b, c], &mut rng);
            let y = x.reshape([a * b * c]).unwrap().reshape([a, b, c]).unwrap();
            prop_assert!(y.bit_eq(&x));
        }
    }
}
