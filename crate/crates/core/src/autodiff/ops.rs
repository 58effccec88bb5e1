//! Forward definitions of the layer set.

use rand::Rng;

use super::conv::{im2col, upsample_taps, ConvSpec, Geometry};
use super::graph::{BatchStats, Graph, Op, Var};
use super::{Real, Tensor};
use crate::error::{shape_err, Result};

pub const BN_EPS: f64 = 1e-5;

impl<T: Real> Graph<T> {
    fn dims<const N: usize>(&self, v: Var, what: &str) -> Result<[usize; N]> {
        let s = self.shape(v);
        s.try_into()
            .map_err(|_| shape_err(format!("{what} expects a rank-{N} tensor, got {s:?}")))
    }

    /// 2-D convolution of `(N, C, H, W)` with weights `(O, C, k, k)` and bias `(O)`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, spec: ConvSpec) -> Result<Var> {
        let [n, c, h, wd] = self.dims::<4>(x, "conv2d input")?;
        let [o, wc, kh, kw] = self.dims::<4>(w, "conv2d weight")?;
        if wc != c || kh != spec.kernel || kw != spec.kernel {
            return Err(shape_err(format!(
                "conv2d weight {:?} incompatible with input channels {c} and kernel {}",
                self.shape(w),
                spec.kernel
            )));
        }
        if self.shape(b) != [o] {
            return Err(shape_err(format!("conv2d bias {:?} != [{o}]", self.shape(b))));
        }
        let (oh, ow) = spec
            .output_size(h, wd)
            .ok_or_else(|| shape_err(format!("input {h}x{wd} too small for kernel {}", spec.kernel)))?;
        let geo = Geometry { c, h, w: wd, oh, ow, spec };
        let (rows, area) = (geo.rows(), geo.cols());
        let mut out = vec![T::zero(); n * o * area];
        let mut cols = vec![T::zero(); rows * area];
        {
            let xv = self.value(x).data();
            let wv = self.value(w).data();
            let bv = self.value(b).data();
            for ni in 0..n {
                im2col(&xv[ni * c * h * wd..(ni + 1) * c * h * wd], &geo, &mut cols);
                let dst = &mut out[ni * o * area..(ni + 1) * o * area];
                for (oc, row) in dst.chunks_mut(area).enumerate() {
                    row.fill(bv[oc]);
                }
                T::gemm(o, rows, area, T::one(), wv, rows as isize, 1, &cols, area as isize, 1, T::one(), dst, area as isize, 1);
            }
        }
        let value = Tensor::new(vec![n, o, oh, ow], out)?;
        Ok(self.push(value, Op::Conv2d { x, w, b, spec }, &[x, w, b]))
    }

    /// Factor-two bilinear up-sampling of `(N, C, H, W)` with half-pixel centers.
    pub fn upsample2(&mut self, x: Var) -> Result<Var> {
        let [n, c, h, w] = self.dims::<4>(x, "upsample")?;
        let ty = upsample_taps(h);
        let tx = upsample_taps(w);
        let xv = self.value(x).data();
        let mut out = vec![T::zero(); n * c * 4 * h * w];
        for p in 0..n * c {
            let src = &xv[p * h * w..(p + 1) * h * w];
            let dst = &mut out[p * 4 * h * w..(p + 1) * 4 * h * w];
            for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
                let ly = T::of(ly);
                for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                    let lx = T::of(lx);
                    let top = src[y0 * w + x0] + (src[y0 * w + x1] - src[y0 * w + x0]) * lx;
                    let bot = src[y1 * w + x0] + (src[y1 * w + x1] - src[y1 * w + x0]) * lx;
                    dst[oy * 2 * w + ox] = top + (bot - top) * ly;
                }
            }
        }
        let value = Tensor::new(vec![n, c, 2 * h, 2 * w], out)?;
        Ok(self.push(value, Op::Upsample2 { x }, &[x]))
    }

    /// Per-channel batch normalization of `(N, C, ...)`.
    ///
    /// Training mode normalizes with batch statistics and records them (see
    /// [`Graph::batch_stats`]); evaluation mode uses `running = (mean, var)`.
    pub fn batch_norm(&mut self, x: Var, gamma: Var, beta: Var, running: (&[T], &[T])) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() < 2 {
            return Err(shape_err("batch_norm needs at least (N, C)"));
        }
        let (n, c) = (xs[0], xs[1]);
        let s: usize = xs[2..].iter().product();
        if self.shape(gamma) != [c] || self.shape(beta) != [c] || running.0.len() != c || running.1.len() != c {
            return Err(shape_err(format!("batch_norm parameters must have {c} channels")));
        }
        let m = n * s;
        let eps = T::of(BN_EPS);
        let xv = self.value(x).data();
        let (mean, var) = if self.training {
            let mut mean = vec![T::zero(); c];
            let mut var = vec![T::zero(); c];
            for ni in 0..n {
                for ci in 0..c {
                    mean[ci] += xv[(ni * c + ci) * s..][..s].iter().copied().sum::<T>();
                }
            }
            mean.iter_mut().for_each(|v| *v /= T::of(m as f64));
            for ni in 0..n {
                for ci in 0..c {
                    let mu = mean[ci];
                    var[ci] += xv[(ni * c + ci) * s..][..s].iter().map(|&v| (v - mu) * (v - mu)).sum::<T>();
                }
            }
            var.iter_mut().for_each(|v| *v /= T::of(m as f64));
            (mean, var)
        } else {
            (running.0.to_vec(), running.1.to_vec())
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let gv = self.value(gamma).data();
        let bv = self.value(beta).data();
        let mut xhat = vec![T::zero(); xv.len()];
        let mut out = vec![T::zero(); xv.len()];
        for ni in 0..n {
            for ci in 0..c {
                for j in (ni * c + ci) * s..(ni * c + ci + 1) * s {
                    xhat[j] = (xv[j] - mean[ci]) * inv_std[ci];
                    out[j] = gv[ci] * xhat[j] + bv[ci];
                }
            }
        }
        let training = self.training;
        let value = Tensor::new(xs, out)?;
        let y = self.push(
            value,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                training,
            },
            &[x, gamma, beta],
        );
        if training {
            let unbias = if m > 1 { T::of(m as f64 / (m - 1) as f64) } else { T::one() };
            let var = var.iter().map(|&v| v * unbias).collect();
            self.bn_stats.push((y, BatchStats { mean, var }));
        }
        Ok(y)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let slope = T::of(slope);
        let data = self.value(x).data().iter().map(|&v| if v > T::zero() { v } else { v * slope }).collect();
        let value = Tensor::new(self.shape(x).to_vec(), data).expect("same shape");
        self.push(value, Op::LeakyRelu { x, slope }, &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.leaky_relu(x, 0.0)
    }

    fn map(&mut self, x: Var, f: impl Fn(T) -> T) -> Tensor<T> {
        let data = self.value(x).data().iter().map(|&v| f(v)).collect();
        Tensor::new(self.shape(x).to_vec(), data).expect("same shape")
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.map(x, |v| {
            if v >= T::zero() {
                T::one() / (T::one() + (-v).exp())
            } else {
                let e = v.exp();
                e / (T::one() + e)
            }
        });
        self.push(value, Op::Sigmoid { x }, &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = self.map(x, |v| v.tanh());
        self.push(value, Op::Tanh { x }, &[x])
    }

    /// Softmax over the last dimension.
    pub fn softmax(&mut self, x: Var) -> Var {
        let dim = *self.shape(x).last().expect("non-scalar");
        let mut data = self.value(x).data().to_vec();
        for row in data.chunks_mut(dim) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            row.iter_mut().for_each(|v| *v = (*v - max).exp());
            let sum: T = row.iter().copied().sum();
            row.iter_mut().for_each(|v| *v /= sum);
        }
        let value = Tensor::new(self.shape(x).to_vec(), data).expect("same shape");
        self.push(value, Op::Softmax { x }, &[x])
    }

    /// Inverted dropout; the identity outside training mode.
    pub fn dropout(&mut self, x: Var, p: f64) -> Var {
        if !self.training || p == 0.0 {
            return x;
        }
        let keep = T::of(1.0 / (1.0 - p));
        let n = self.value(x).numel();
        let scale: Vec<T> = (0..n)
            .map(|_| if self.rng.gen::<f64>() < p { T::zero() } else { keep })
            .collect();
        let data = self.value(x).data().iter().zip(&scale).map(|(&v, &s)| v * s).collect();
        let value = Tensor::new(self.shape(x).to_vec(), data).expect("same shape");
        self.push(value, Op::Dropout { x, scale }, &[x])
    }

    /// `x (N, in) * w^T (in, out) + b (out)`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let [n, inp] = self.dims::<2>(x, "linear input")?;
        let [out, win] = self.dims::<2>(w, "linear weight")?;
        if win != inp || self.shape(b) != [out] {
            return Err(shape_err(format!(
                "linear: input {:?}, weight {:?}, bias {:?}",
                self.shape(x),
                self.shape(w),
                self.shape(b)
            )));
        }
        let mut data = Vec::with_capacity(n * out);
        for _ in 0..n {
            data.extend_from_slice(self.value(b).data());
        }
        T::gemm(n, inp, out, T::one(), self.value(x).data(), inp as isize, 1, self.value(w).data(), 1, inp as isize, T::one(), &mut data, out as isize, 1);
        let value = Tensor::new(vec![n, out], data)?;
        Ok(self.push(value, Op::Linear { x, w, b }, &[x, w, b]))
    }

    /// Concatenate along `dim`; all other dimensions must agree.
    pub fn concat(&mut self, xs: &[Var], dim: usize) -> Result<Var> {
        let first = self.shape(*xs.first().ok_or_else(|| shape_err("concat of nothing"))?).to_vec();
        if dim >= first.len() {
            return Err(shape_err(format!("concat dim {dim} out of range for {first:?}")));
        }
        let mut total = 0;
        for &v in xs {
            let s = self.shape(v);
            if s.len() != first.len() || s[..dim] != first[..dim] || s[dim + 1..] != first[dim + 1..] {
                return Err(shape_err(format!("concat: {s:?} incompatible with {first:?} on dim {dim}")));
            }
            total += s[dim];
        }
        let outer: usize = first[..dim].iter().product();
        let inner: usize = first[dim + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in xs {
                let len = self.shape(v)[dim] * inner;
                data.extend_from_slice(&self.value(v).data()[o * len..(o + 1) * len]);
            }
        }
        let mut shape = first;
        shape[dim] = total;
        let value = Tensor::new(shape, data)?;
        Ok(self.push(value, Op::Concat { xs: xs.to_vec(), dim }, xs))
    }

    /// Take `len` entries starting at `start` along `dim`.
    pub fn slice(&mut self, x: Var, dim: usize, start: usize, len: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if dim >= xs.len() || start + len > xs[dim] {
            return Err(shape_err(format!("slice {start}..{} of dim {dim} in {xs:?}", start + len)));
        }
        let outer: usize = xs[..dim].iter().product();
        let inner: usize = xs[dim + 1..].iter().product();
        let total = xs[dim];
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            data.extend_from_slice(&src[(o * total + start) * inner..][..len * inner]);
        }
        let mut shape = xs;
        shape[dim] = len;
        let value = Tensor::new(shape, data)?;
        Ok(self.push(value, Op::Slice { x, dim, start }, &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        Ok(self.push(value, Op::Reshape { x }, &[x]))
    }

    /// Adaptive 1-d max pooling of `(N, L)` to `(N, out)`.
    pub fn adaptive_maxpool1d(&mut self, x: Var, out: usize) -> Result<Var> {
        let [n, l] = self.dims::<2>(x, "adaptive_maxpool1d")?;
        if out == 0 || out > l {
            return Err(shape_err(format!("cannot pool length {l} to {out}")));
        }
        let xv = self.value(x).data();
        let mut data = Vec::with_capacity(n * out);
        let mut argmax = Vec::with_capacity(n * out);
        for ni in 0..n {
            for i in 0..out {
                let start = i * l / out;
                let end = ((i + 1) * l).div_ceil(out);
                let mut best = ni * l + start;
                for j in ni * l + start..ni * l + end {
                    if xv[j] > xv[best] {
                        best = j;
                    }
                }
                data.push(xv[best]);
                argmax.push(best);
            }
        }
        let value = Tensor::new(vec![n, out], data)?;
        Ok(self.push(value, Op::AdaptiveMaxPool1d { x, argmax }, &[x]))
    }

    /// Element-wise maximum over the rows of `(S, D)`, giving `(1, D)`.
    pub fn channelwise_max(&mut self, x: Var) -> Result<Var> {
        let [s, d] = self.dims::<2>(x, "channelwise_max")?;
        if s == 0 {
            return Err(shape_err("channelwise_max over zero rows"));
        }
        let xv = self.value(x).data();
        let mut argmax: Vec<usize> = (0..d).collect();
        for r in 1..s {
            for (j, best) in argmax.iter_mut().enumerate() {
                if xv[r * d + j] > xv[*best] {
                    *best = r * d + j;
                }
            }
        }
        let data = argmax.iter().map(|&i| xv[i]).collect();
        let value = Tensor::new(vec![1, d], data)?;
        Ok(self.push(value, Op::ChannelMax { x, argmax }, &[x]))
    }

    /// `gamma[n, c] * x[n, c, ...] + beta[n, c]`: FiLM and mask weighting.
    pub fn channel_affine(&mut self, x: Var, gamma: Var, beta: Option<Var>) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() < 2 {
            return Err(shape_err("channel_affine needs at least (N, C)"));
        }
        let (n, c) = (xs[0], xs[1]);
        let s: usize = xs[2..].iter().product();
        if self.shape(gamma) != [n, c] || beta.is_some_and(|b| self.shape(b) != [n, c]) {
            return Err(shape_err(format!("channel_affine coefficients must be [{n}, {c}]")));
        }
        let xv = self.value(x).data();
        let gv = self.value(gamma).data();
        let bv = beta.map(|b| self.value(b).data());
        let mut data = Vec::with_capacity(xv.len());
        for nc in 0..n * c {
            let (g, b) = (gv[nc], bv.map_or(T::zero(), |b| b[nc]));
            data.extend(xv[nc * s..(nc + 1) * s].iter().map(|&v| g * v + b));
        }
        let value = Tensor::new(xs, data)?;
        let mut inputs = vec![x, gamma];
        inputs.extend(beta);
        Ok(self.push(value, Op::ChannelAffine { x, gamma, beta }, &inputs))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(format!("{what}: {:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| x + y).collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push(value, Op::Add { a, b }, &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| x * y).collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push(value, Op::Mul { a, b }, &[a, b]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total: T = self.value(x).data().iter().copied().sum();
        self.push(Tensor::scalar(total), Op::Sum { x }, &[x])
    }

    /// `-sum(lambda * t * ln p + (1 - t) ln(1 - p))` with `p` clamped to `[eps, 1 - eps]`.
    pub fn weighted_bce(&mut self, pred: Var, target: &Tensor<T>, lambda: f64, eps: f64) -> Result<Var> {
        if self.shape(pred) != target.shape() {
            return Err(shape_err(format!("bce: {:?} vs {:?}", self.shape(pred), target.shape())));
        }
        let (lambda, eps) = (T::of(lambda), T::of(eps));
        let hi = T::one() - eps;
        let loss: T = self
            .value(pred)
            .data()
            .iter()
            .zip(target.data())
            .map(|(&p, &t)| {
                let p = p.max(eps).min(hi);
                -(lambda * t * p.ln() + (T::one() - t) * (T::one() - p).ln())
            })
            .sum();
        let op = Op::WeightedBce {
            pred,
            target: target.data().to_vec(),
            lambda,
            eps,
        };
        Ok(self.push(Tensor::scalar(loss), op, &[pred]))
    }

    /// `sum((pred - target)^2)`.
    pub fn squared_error(&mut self, pred: Var, target: &Tensor<T>) -> Result<Var> {
        if self.shape(pred) != target.shape() {
            return Err(shape_err(format!("l2: {:?} vs {:?}", self.shape(pred), target.shape())));
        }
        let loss: T = self
            .value(pred)
            .data()
            .iter()
            .zip(target.data())
            .map(|(&p, &t)| (p - t) * (p - t))
            .sum();
        let op = Op::SquaredError {
            pred,
            target: target.data().to_vec(),
        };
        Ok(self.push(Tensor::scalar(loss), op, &[pred]))
    }

    /// One LSTM step with gate order (input, forget, cell, output).
    ///
    /// `x (S, in)`, `h, c (S, H)`, `w_ih (4H, in)`, `w_hh (4H, H)`, biases `(4H)`.
    #[allow(clippy::too_many_arguments)]
    pub fn lstm_cell(&mut self, x: Var, h: Var, c: Var, w_ih: Var, w_hh: Var, b_ih: Var, b_hh: Var) -> Result<(Var, Var)> {
        let hidden = self.dims::<2>(h, "lstm hidden")?[1];
        let a = self.linear(x, w_ih, b_ih)?;
        let r = self.linear(h, w_hh, b_hh)?;
        let gates = self.add(a, r)?;
        let i = self.slice(gates, 1, 0, hidden)?;
        let f = self.slice(gates, 1, hidden, hidden)?;
        let g = self.slice(gates, 1, 2 * hidden, hidden)?;
        let o = self.slice(gates, 1, 3 * hidden, hidden)?;
        let i = self.sigmoid(i);
        let f = self.sigmoid(f);
        let g = self.tanh(g);
        let o = self.sigmoid(o);
        let keep = self.mul(f, c)?;
        let write = self.mul(i, g)?;
        let c_next = self.add(keep, write)?;
        let t = self.tanh(c_next);
        let h_next = self.mul(o, t)?;
        Ok((h_next, c_next))
    }
}
