//! The recording graph and the reverse sweep.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::conv::{col2im, im2col, upsample_taps, ConvSpec, Geometry};
use super::params::{ParamId, ParamStore};
use super::{Real, Tensor};
use crate::error::{invalid, Result};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

pub(crate) enum Op<T> {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        spec: ConvSpec,
    },
    Upsample2 {
        x: Var,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        training: bool,
    },
    LeakyRelu {
        x: Var,
        slope: T,
    },
    Sigmoid {
        x: Var,
    },
    Tanh {
        x: Var,
    },
    Softmax {
        x: Var,
    },
    Dropout {
        x: Var,
        scale: Vec<T>,
    },
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    Concat {
        xs: Vec<Var>,
        dim: usize,
    },
    Slice {
        x: Var,
        dim: usize,
        start: usize,
    },
    Reshape {
        x: Var,
    },
    AdaptiveMaxPool1d {
        x: Var,
        argmax: Vec<usize>,
    },
    ChannelMax {
        x: Var,
        argmax: Vec<usize>,
    },
    ChannelAffine {
        x: Var,
        gamma: Var,
        beta: Option<Var>,
    },
    Add {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Sum {
        x: Var,
    },
    WeightedBce {
        pred: Var,
        target: Vec<T>,
        lambda: T,
        eps: T,
    },
    SquaredError {
        pred: Var,
        target: Vec<T>,
    },
}

pub(crate) struct Node<T> {
    pub value: Tensor<T>,
    pub grad: Option<Tensor<T>>,
    pub requires_grad: bool,
    pub op: Op<T>,
}

/// Batch statistics of one batch-norm call, kept for running-average updates.
#[derive(Debug, Clone)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Unbiased variance.
    pub var: Vec<T>,
}

/// One forward pass worth of recorded operations.
pub struct Graph<T: Real> {
    pub(crate) nodes: Vec<Node<T>>,
    pub(crate) training: bool,
    pub(crate) rng: ChaCha8Rng,
    bindings: Vec<(Var, ParamId)>,
    pub(crate) bn_stats: Vec<(Var, BatchStats<T>)>,
}

impl<T: Real> Graph<T> {
    /// `training` enables dropout and batch statistics; `seed` drives dropout.
    pub fn new(training: bool, seed: u64) -> Self {
        Self {
            nodes: Vec::new(),
            training,
            rng: ChaCha8Rng::seed_from_u64(seed),
            bindings: Vec::new(),
            bn_stats: Vec::new(),
        }
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        debug_assert!(value.is_finite(), "non-finite values produced by an operation");
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant input; never receives a gradient.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    /// Bind a parameter from `store` as a differentiable leaf.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let v = self.leaf(store.value(id).clone(), true);
        self.bindings.push((v, id));
        v
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of a leaf after [`Graph::backward`].
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    /// Batch statistics recorded by training-mode batch-norm calls, by output node.
    pub fn batch_stats(&self) -> &[(Var, BatchStats<T>)] {
        &self.bn_stats
    }

    /// Add the gradients of every bound parameter into `store`.
    pub fn accumulate_param_grads(&self, store: &mut ParamStore<T>) {
        for &(v, id) in &self.bindings {
            if let Some(g) = &self.nodes[v.0].grad {
                store.accumulate_grad(id, g.data());
            }
        }
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(gy) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.propagate(i, &gy, &mut grads);
            if matches!(self.nodes[i].op, Op::Leaf) {
                let shape = self.nodes[i].value.shape().to_vec();
                let g = Tensor::new(shape, gy).expect("gradient shape matches value");
                match &mut self.nodes[i].grad {
                    Some(acc) => acc.data_mut().iter_mut().zip(g.data()).for_each(|(a, &b)| *a += b),
                    slot => *slot = Some(g),
                }
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, gy: &[T], grads: &mut [Option<Vec<T>>]) {
        let nodes = &self.nodes;
        // Lazily allocated gradient buffer of input `v`, or None if no grad is needed.
        let slot = |v: Var, grads: &mut [Option<Vec<T>>]| -> bool {
            if !nodes[v.0].requires_grad {
                return false;
            }
            if grads[v.0].is_none() {
                grads[v.0] = Some(vec![T::zero(); nodes[v.0].value.numel()]);
            }
            true
        };
        let y = &nodes[i].value;
        match &nodes[i].op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, spec } => {
                let xs = nodes[x.0].value.shape();
                let (n, c, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
                let o = nodes[w.0].value.shape()[0];
                let (oh, ow) = (y.shape()[2], y.shape()[3]);
                let geo = Geometry { c, h, w: wd, oh, ow, spec: *spec };
                let (rows, area) = (geo.rows(), geo.cols());
                if slot(*b, grads) {
                    let db = grads[b.0].as_mut().unwrap();
                    for ni in 0..n {
                        for oc in 0..o {
                            db[oc] += gy[(ni * o + oc) * area..][..area].iter().copied().sum::<T>();
                        }
                    }
                }
                let need_w = slot(*w, grads);
                let need_x = slot(*x, grads);
                let xv = nodes[x.0].value.data();
                let wv = nodes[w.0].value.data();
                let mut cols = vec![T::zero(); rows * area];
                for ni in 0..n {
                    let gyn = &gy[ni * o * area..(ni + 1) * o * area];
                    if need_w {
                        im2col(&xv[ni * c * h * wd..(ni + 1) * c * h * wd], &geo, &mut cols);
                        let dw = grads[w.0].as_mut().unwrap();
                        // dW (o x rows) += dY (o x area) * cols^T (area x rows)
                        T::gemm(o, area, rows, T::one(), gyn, area as isize, 1, &cols, 1, area as isize, T::one(), dw, rows as isize, 1);
                    }
                    if need_x {
                        // dcols (rows x area) = W^T (rows x o) * dY (o x area)
                        T::gemm(rows, o, area, T::one(), wv, 1, rows as isize, gyn, area as isize, 1, T::zero(), &mut cols, area as isize, 1);
                        let dx = grads[x.0].as_mut().unwrap();
                        col2im(&cols, &geo, &mut dx[ni * c * h * wd..(ni + 1) * c * h * wd]);
                    }
                }
            }
            Op::Upsample2 { x } => {
                if slot(*x, grads) {
                    let xs = nodes[x.0].value.shape();
                    let (planes, h, w) = (xs[0] * xs[1], xs[2], xs[3]);
                    let ty = upsample_taps(h);
                    let tx = upsample_taps(w);
                    let dx = grads[x.0].as_mut().unwrap();
                    for p in 0..planes {
                        let src = &gy[p * 4 * h * w..(p + 1) * 4 * h * w];
                        let dst = &mut dx[p * h * w..(p + 1) * h * w];
                        for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
                            let ly = T::of(ly);
                            for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                                let lx = T::of(lx);
                                let g = src[oy * 2 * w + ox];
                                let top = g * (T::one() - ly);
                                let bot = g * ly;
                                dst[y0 * w + x0] += top * (T::one() - lx);
                                dst[y0 * w + x1] += top * lx;
                                dst[y1 * w + x0] += bot * (T::one() - lx);
                                dst[y1 * w + x1] += bot * lx;
                            }
                        }
                    }
                }
            }
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, training } => {
                let xs = nodes[x.0].value.shape();
                let (n, c) = (xs[0], xs[1]);
                let s: usize = xs[2..].iter().product();
                let m = T::of((n * s) as f64);
                let gv = nodes[gamma.0].value.data();
                let mut sum_dy = vec![T::zero(); c];
                let mut sum_dy_xhat = vec![T::zero(); c];
                for ni in 0..n {
                    for ci in 0..c {
                        let base = (ni * c + ci) * s;
                        for j in base..base + s {
                            sum_dy[ci] += gy[j];
                            sum_dy_xhat[ci] += gy[j] * xhat[j];
                        }
                    }
                }
                if slot(*beta, grads) {
                    let db = grads[beta.0].as_mut().unwrap();
                    db.iter_mut().zip(&sum_dy).for_each(|(a, &b)| *a += b);
                }
                if slot(*gamma, grads) {
                    let dg = grads[gamma.0].as_mut().unwrap();
                    dg.iter_mut().zip(&sum_dy_xhat).for_each(|(a, &b)| *a += b);
                }
                if slot(*x, grads) {
                    let dx = grads[x.0].as_mut().unwrap();
                    for ni in 0..n {
                        for ci in 0..c {
                            let k = gv[ci] * inv_std[ci];
                            let base = (ni * c + ci) * s;
                            for j in base..base + s {
                                dx[j] += if *training {
                                    k * (gy[j] - sum_dy[ci] / m - xhat[j] * sum_dy_xhat[ci] / m)
                                } else {
                                    k * gy[j]
                                };
                            }
                        }
                    }
                }
            }
            Op::LeakyRelu { x, slope } => {
                if slot(*x, grads) {
                    let xv = nodes[x.0].value.data();
                    let dx = grads[x.0].as_mut().unwrap();
                    for ((d, &g), &xi) in dx.iter_mut().zip(gy).zip(xv) {
                        *d += if xi > T::zero() { g } else { g * *slope };
                    }
                }
            }
            Op::Sigmoid { x } => {
                if slot(*x, grads) {
                    let dx = grads[x.0].as_mut().unwrap();
                    for ((d, &g), &s) in dx.iter_mut().zip(gy).zip(y.data()) {
                        *d += g * s * (T::one() - s);
                    }
                }
            }
            Op::Tanh { x } => {
                if slot(*x, grads) {
                    let dx = grads[x.0].as_mut().unwrap();
                    for ((d, &g), &t) in dx.iter_mut().zip(gy).zip(y.data()) {
                        *d += g * (T::one() - t * t);
                    }
                }
            }
            Op::Softmax { x } => {
                if slot(*x, grads) {
                    let dim = *y.shape().last().unwrap();
                    let dx = grads[x.0].as_mut().unwrap();
                    for ((drow, grow), yrow) in dx.chunks_mut(dim).zip(gy.chunks(dim)).zip(y.data().chunks(dim)) {
                        let dot: T = grow.iter().zip(yrow).map(|(&g, &s)| g * s).sum();
                        for ((d, &g), &s) in drow.iter_mut().zip(grow).zip(yrow) {
                            *d += s * (g - dot);
                        }
                    }
                }
            }
            Op::Dropout { x, scale } => {
                if slot(*x, grads) {
                    let dx = grads[x.0].as_mut().unwrap();
                    for ((d, &g), &s) in dx.iter_mut().zip(gy).zip(scale) {
                        *d += g * s;
                    }
                }
            }
            Op::Linear { x, w, b } => {
                let xs = nodes[x.0].value.shape();
                let (n, inp) = (xs[0], xs[1]);
                let out = nodes[w.0].value.shape()[0];
                if slot(*b, grads) {
                    let db = grads[b.0].as_mut().unwrap();
                    for row in gy.chunks(out) {
                        db.iter_mut().zip(row).for_each(|(a, &g)| *a += g);
                    }
                }
                if slot(*w, grads) {
                    let dw = grads[w.0].as_mut().unwrap();
                    // dW (out x in) += dY^T (out x n) * X (n x in)
                    T::gemm(out, n, inp, T::one(), gy, 1, out as isize, nodes[x.0].value.data(), inp as isize, 1, T::one(), dw, inp as isize, 1);
                }
                if slot(*x, grads) {
                    let dx = grads[x.0].as_mut().unwrap();
                    // dX (n x in) += dY (n x out) * W (out x in)
                    T::gemm(n, out, inp, T::one(), gy, out as isize, 1, nodes[w.0].value.data(), inp as isize, 1, T::one(), dx, inp as isize, 1);
                }
            }
            Op::Concat { xs, dim } => {
                let outer: usize = y.shape()[..*dim].iter().product();
                let inner: usize = y.shape()[dim + 1..].iter().product();
                let total = y.shape()[*dim];
                let mut offset = 0;
                for &v in xs {
                    let len = nodes[v.0].value.shape()[*dim];
                    if slot(v, grads) {
                        let dv = grads[v.0].as_mut().unwrap();
                        for o in 0..outer {
                            let src = &gy[(o * total + offset) * inner..][..len * inner];
                            dv[o * len * inner..][..len * inner].iter_mut().zip(src).for_each(|(a, &g)| *a += g);
                        }
                    }
                    offset += len;
                }
            }
            Op::Slice { x, dim, start } => {
                if slot(*x, grads) {
                    let xs = nodes[x.0].value.shape();
                    let outer: usize = xs[..*dim].iter().product();
                    let inner: usize = xs[dim + 1..].iter().product();
                    let (total, len) = (xs[*dim], y.shape()[*dim]);
                    let dx = grads[x.0].as_mut().unwrap();
                    for o in 0..outer {
                        let dst = &mut dx[(o * total + start) * inner..][..len * inner];
                        dst.iter_mut().zip(&gy[o * len * inner..][..len * inner]).for_each(|(a, &g)| *a += g);
                    }
                }
            }
            Op::Reshape { x } => {
                if slot(*x, grads) {
                    let dx = grads[x.0].as_mut().unwrap();
                    dx.iter_mut().zip(gy).for_each(|(a, &g)| *a += g);
                }
            }
            Op::AdaptiveMaxPool1d { x, argmax } | Op::ChannelMax { x, argmax } => {
                if slot(*x, grads) {
                    let dx = grads[x.0].as_mut().unwrap();
                    for (&src, &g) in argmax.iter().zip(gy) {
                        dx[src] += g;
                    }
                }
            }
            Op::ChannelAffine { x, gamma, beta } => {
                let xs = nodes[x.0].value.shape();
                let (n, c) = (xs[0], xs[1]);
                let s: usize = xs[2..].iter().product();
                let xv = nodes[x.0].value.data();
                let gv = nodes[gamma.0].value.data();
                if let Some(b) = beta {
                    if slot(*b, grads) {
                        let db = grads[b.0].as_mut().unwrap();
                        for nc in 0..n * c {
                            db[nc] += gy[nc * s..(nc + 1) * s].iter().copied().sum::<T>();
                        }
                    }
                }
                if slot(*gamma, grads) {
                    let dg = grads[gamma.0].as_mut().unwrap();
                    for nc in 0..n * c {
                        let r = nc * s..(nc + 1) * s;
                        dg[nc] += gy[r.clone()].iter().zip(&xv[r]).map(|(&g, &xi)| g * xi).sum::<T>();
                    }
                }
                if slot(*x, grads) {
                    let dx = grads[x.0].as_mut().unwrap();
                    for nc in 0..n * c {
                        let k = gv[nc];
                        for j in nc * s..(nc + 1) * s {
                            dx[j] += k * gy[j];
                        }
                    }
                }
            }
            Op::Add { a, b } => {
                for v in [a, b] {
                    if slot(*v, grads) {
                        let d = grads[v.0].as_mut().unwrap();
                        d.iter_mut().zip(gy).for_each(|(a, &g)| *a += g);
                    }
                }
            }
            Op::Mul { a, b } => {
                for (v, other) in [(a, b), (b, a)] {
                    if slot(*v, grads) {
                        let ov = nodes[other.0].value.data();
                        let d = grads[v.0].as_mut().unwrap();
                        for ((d, &g), &o) in d.iter_mut().zip(gy).zip(ov) {
                            *d += g * o;
                        }
                    }
                }
            }
            Op::Sum { x } => {
                if slot(*x, grads) {
                    let g = gy[0];
                    grads[x.0].as_mut().unwrap().iter_mut().for_each(|a| *a += g);
                }
            }
            Op::WeightedBce { pred, target, lambda, eps } => {
                if slot(*pred, grads) {
                    let g = gy[0];
                    let pv = nodes[pred.0].value.data();
                    let hi = T::one() - *eps;
                    let dp = grads[pred.0].as_mut().unwrap();
                    for ((d, &p), &t) in dp.iter_mut().zip(pv).zip(target) {
                        if p > *eps && p < hi {
                            *d += g * ((T::one() - t) / (T::one() - p) - *lambda * t / p);
                        }
                    }
                }
            }
            Op::SquaredError { pred, target } => {
                if slot(*pred, grads) {
                    let g = gy[0] + gy[0];
                    let pv = nodes[pred.0].value.data();
                    let dp = grads[pred.0].as_mut().unwrap();
                    for ((d, &p), &t) in dp.iter_mut().zip(pv).zip(target) {
                        *d += g * (p - t);
                    }
                }
            }
        }
    }
}
