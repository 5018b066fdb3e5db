//! Differentiable operations on [`Var`].
//!
//! Channel-oriented operations treat their input as `[N, C, rest...]`.

use std::rc::Rc;

use rand::Rng;

use crate::autograd::Var;
use crate::conv::{conv_backward, conv_forward, ConvAlgorithm, ConvDescriptor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Batch-norm momentum for running statistics.
pub const BN_MOMENTUM: f64 = 0.1;
/// Batch-norm variance epsilon.
pub const BN_EPSILON: f64 = 1e-5;

fn tensor<T: Scalar>(shape: Vec<usize>, data: Vec<T>) -> Tensor<T> {
    Tensor::new(shape, data).expect("operation produced consistent shape")
}

/// `[N, C, inner]` view of a tensor of rank ≥ 2.
fn channel_view(shape: &[usize]) -> Result<(usize, usize, usize)> {
    if shape.len() < 2 {
        return Err(Error::shape(format!(
            "channel operation needs a rank ≥ 2 tensor, got shape {shape:?}"
        )));
    }
    Ok((shape[0], shape[1], shape[2..].iter().product()))
}

fn same_shape(a: &[usize], b: &[usize], op: &str) -> Result<()> {
    if a != b {
        return Err(Error::shape(format!("{op}: shape {a:?} vs {b:?}")));
    }
    Ok(())
}

/// Split of `channels` into a compute part of `floor(ratio * channels)` and a remainder.
pub fn split_sizes(channels: usize, ratio: f64) -> Result<(usize, usize)> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::invalid(format!("split ratio {ratio} outside (0, 1]")));
    }
    let first = (ratio * channels as f64 + 1e-9).floor() as usize;
    let first = first.min(channels);
    if first == 0 || (ratio < 1.0 && first == channels) {
        return Err(Error::invalid(format!(
            "ratio {ratio} of {channels} channels leaves an empty branch"
        )));
    }
    Ok((first, channels - first))
}

/// Source channel read by output channel `c` of a channel shuffle.
pub fn shuffle_source(c: usize, channels: usize, groups: usize) -> usize {
    (c % groups) * (channels / groups) + c / groups
}

impl<'t, T: Scalar> Var<'t, T> {
    fn unary(
        self,
        value: Tensor<T>,
        backward: impl Fn(&[T], &mut crate::autograd::GradSink<T>) -> Result<()> + 'static,
    ) -> Var<'t, T> {
        self.tape.record(value, &[self.id], backward)
    }

    fn elementwise(self, f: impl Fn(T) -> T, df: impl Fn(T, T) -> T + 'static) -> Var<'t, T> {
        let x = self.value();
        let out = x.map(f);
        let y = Rc::new(out.clone());
        let id = self.id;
        self.unary(out, move |g, sink| {
            let dx: Vec<T> = g
                .iter()
                .zip(x.data().iter().zip(y.data()))
                .map(|(&g, (&x, &y))| g * df(x, y))
                .collect();
            sink.add_owned(id, dx);
            Ok(())
        })
    }

    pub fn relu(self) -> Var<'t, T> {
        self.elementwise(
            |v| if v > T::zero() { v } else { T::zero() },
            |x, _| if x > T::zero() { T::one() } else { T::zero() },
        )
    }

    pub fn sigmoid(self) -> Var<'t, T> {
        self.elementwise(
            |v| T::one() / (T::one() + (-v).exp()),
            |_, y| y * (T::one() - y),
        )
    }

    pub fn tanh(self) -> Var<'t, T> {
        self.elementwise(|v| v.tanh(), |_, y| T::one() - y * y)
    }

    pub fn scale(self, factor: T) -> Var<'t, T> {
        self.elementwise(move |v| v * factor, move |_, _| factor)
    }

    fn binary(
        self,
        other: Var<'t, T>,
        op: &str,
        f: impl Fn(T, T) -> T,
        da: impl Fn(T, T) -> T + 'static,
        db: impl Fn(T, T) -> T + 'static,
    ) -> Result<Var<'t, T>> {
        self.same_tape(&other)?;
        let a = self.value();
        let b = other.value();
        same_shape(a.shape(), b.shape(), op)?;
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = tensor(a.shape().to_vec(), data);
        let (ia, ib) = (self.id, other.id);
        Ok(self.tape.record(out, &[ia, ib], move |g, sink| {
            let pairs = a.data().iter().zip(b.data());
            if sink.needs(ia) {
                let d = g.iter().zip(pairs.clone()).map(|(&g, (&x, &y))| g * da(x, y));
                sink.add_owned(ia, d.collect());
            }
            if sink.needs(ib) {
                let d = g.iter().zip(pairs).map(|(&g, (&x, &y))| g * db(x, y));
                sink.add_owned(ib, d.collect());
            }
            Ok(())
        }))
    }

    pub fn add(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(other, "add", |a, b| a + b, |_, _| T::one(), |_, _| T::one())
    }

    pub fn sub(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(other, "sub", |a, b| a - b, |_, _| T::one(), |_, _| -T::one())
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(other, "mul", |a, b| a * b, |_, b| b, |a, _| a)
    }

    pub fn sum(self) -> Var<'t, T> {
        let x = self.value();
        let total = x.data().iter().copied().sum();
        let n = x.numel();
        let id = self.id;
        self.unary(Tensor::scalar(total), move |g, sink| {
            sink.add_owned(id, vec![g[0]; n]);
            Ok(())
        })
    }

    pub fn mean(self) -> Var<'t, T> {
        let n = T::from_usize(self.value().numel().max(1)).unwrap();
        self.sum().scale(T::one() / n)
    }

    /// `sum(x * weights)` for a constant weight tensor.
    pub fn weighted_sum(self, weights: &Tensor<T>) -> Result<Var<'t, T>> {
        let x = self.value();
        same_shape(x.shape(), weights.shape(), "weighted_sum")?;
        let total = x.data().iter().zip(weights.data()).map(|(&a, &b)| a * b).sum();
        let w = weights.data().to_vec();
        let id = self.id;
        Ok(self.unary(Tensor::scalar(total), move |g, sink| {
            sink.add_owned(id, w.iter().map(|&w| w * g[0]).collect());
            Ok(())
        }))
    }

    pub fn reshape(self, shape: impl Into<Vec<usize>>) -> Result<Var<'t, T>> {
        let out = self.value().reshape(shape)?;
        let id = self.id;
        Ok(self.unary(out, move |g, sink| {
            sink.add(id, g);
            Ok(())
        }))
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(self, axes: &[usize]) -> Result<Var<'t, T>> {
        let x = self.value();
        let rank = x.rank();
        let mut seen = vec![false; rank];
        if axes.len() != rank || axes.iter().any(|&a| a >= rank || std::mem::replace(&mut seen[a], true)) {
            return Err(Error::invalid(format!(
                "permutation {axes:?} is invalid for rank {rank}"
            )));
        }
        let in_shape = x.shape().to_vec();
        let out_shape: Vec<usize> = axes.iter().map(|&a| in_shape[a]).collect();
        let index = permute_index(&in_shape, axes);
        let data = index.iter().map(|&i| x.data()[i]).collect();
        let id = self.id;
        Ok(self.unary(tensor(out_shape, data), move |g, sink| {
            let mut dx = vec![T::zero(); g.len()];
            for (&src, &gv) in index.iter().zip(g) {
                dx[src] = gv;
            }
            sink.add_owned(id, dx);
            Ok(())
        }))
    }

    /// Mean over one axis, which is removed from the shape.
    pub fn mean_axis(self, axis: usize) -> Result<Var<'t, T>> {
        let x = self.value();
        let shape = x.shape().to_vec();
        if axis >= shape.len() || shape[axis] == 0 {
            return Err(Error::shape(format!(
                "cannot average axis {axis} of shape {shape:?}"
            )));
        }
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let inv = T::one() / T::from_usize(len).unwrap();
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for a in 0..len {
                let src = &x.data()[(o * len + a) * inner..][..inner];
                for (dst, &v) in out[o * inner..][..inner].iter_mut().zip(src) {
                    *dst += v;
                }
            }
        }
        out.iter_mut().for_each(|v| *v *= inv);
        let mut out_shape = shape.clone();
        out_shape.remove(axis);
        let id = self.id;
        Ok(self.unary(tensor(out_shape, out), move |g, sink| {
            let mut dx = vec![T::zero(); outer * len * inner];
            for o in 0..outer {
                for a in 0..len {
                    let dst = &mut dx[(o * len + a) * inner..][..inner];
                    for (d, &gv) in dst.iter_mut().zip(&g[o * inner..][..inner]) {
                        *d = gv * inv;
                    }
                }
            }
            sink.add_owned(id, dx);
            Ok(())
        }))
    }

    /// Softmax along `axis`.
    pub fn softmax(self, axis: usize) -> Result<Var<'t, T>> {
        let x = self.value();
        let shape = x.shape().to_vec();
        if axis >= shape.len() {
            return Err(Error::shape(format!("softmax axis {axis} for shape {shape:?}")));
        }
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let mut y = vec![T::zero(); x.numel()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |a: usize| (o * len + a) * inner + i;
                let max = (0..len).map(|a| x.data()[at(a)]).fold(T::neg_infinity(), T::max);
                let mut total = T::zero();
                for a in 0..len {
                    let e = (x.data()[at(a)] - max).exp();
                    y[at(a)] = e;
                    total += e;
                }
                for a in 0..len {
                    y[at(a)] /= total;
                }
            }
        }
        let out = tensor(shape, y.clone());
        let id = self.id;
        Ok(self.unary(out, move |g, sink| {
            let mut dx = vec![T::zero(); g.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |a: usize| (o * len + a) * inner + i;
                    let dot: T = (0..len).map(|a| g[at(a)] * y[at(a)]).sum();
                    for a in 0..len {
                        dx[at(a)] = y[at(a)] * (g[at(a)] - dot);
                    }
                }
            }
            sink.add_owned(id, dx);
            Ok(())
        }))
    }

    /// `x[N, F] · weight[F, K] + bias[K]`.
    pub fn linear(self, weight: Var<'t, T>, bias: Option<Var<'t, T>>) -> Result<Var<'t, T>> {
        self.same_tape(&weight)?;
        let x = self.value();
        let w = weight.value();
        if x.rank() != 2 || w.rank() != 2 || x.shape()[1] != w.shape()[0] {
            return Err(Error::shape(format!(
                "linear: input {:?} against weight {:?}",
                x.shape(),
                w.shape()
            )));
        }
        let (n, f, k) = (x.shape()[0], x.shape()[1], w.shape()[1]);
        let b = match bias {
            Some(b) => {
                let bv = b.value();
                if bv.shape() != [k] {
                    return Err(Error::shape(format!(
                        "linear: bias {:?} for {k} outputs",
                        bv.shape()
                    )));
                }
                Some((b.id, bv))
            }
            None => None,
        };
        let mut out = vec![T::zero(); n * k];
        if let Some((_, bv)) = &b {
            for row in out.chunks_mut(k) {
                row.copy_from_slice(bv.data());
            }
        }
        T::gemm(n, f, k, T::one(), x.data(), (f as isize, 1), w.data(), (k as isize, 1), T::one(), &mut out, (k as isize, 1));
        let (ix, iw) = (self.id, weight.id);
        let ib = b.as_ref().map(|(id, _)| *id);
        let mut parents = vec![ix, iw];
        parents.extend(ib);
        Ok(self.tape.record(tensor(vec![n, k], out), &parents, move |g, sink| {
            if sink.needs(ix) {
                let mut dx = vec![T::zero(); n * f];
                T::gemm(n, k, f, T::one(), g, (k as isize, 1), w.data(), (1, k as isize), T::zero(), &mut dx, (f as isize, 1));
                sink.add_owned(ix, dx);
            }
            if sink.needs(iw) {
                let mut dw = vec![T::zero(); f * k];
                T::gemm(f, n, k, T::one(), x.data(), (1, f as isize), g, (k as isize, 1), T::zero(), &mut dw, (k as isize, 1));
                sink.add_owned(iw, dw);
            }
            if let Some(ib) = ib {
                let mut db = vec![T::zero(); k];
                for row in g.chunks(k) {
                    db.iter_mut().zip(row).for_each(|(d, &v)| *d += v);
                }
                sink.add_owned(ib, db);
            }
            Ok(())
        }))
    }

    /// Mean cross-entropy of `self` (logits `[N, K]`) against soft targets `[N, K]`.
    ///
    /// Each target row is a distribution over classes (one-hot or mixed).
    pub fn cross_entropy(self, targets: &Tensor<T>) -> Result<Var<'t, T>> {
        let z = self.value();
        if z.rank() != 2 || z.shape() != targets.shape() {
            return Err(Error::shape(format!(
                "cross_entropy: logits {:?} against targets {:?}",
                z.shape(),
                targets.shape()
            )));
        }
        let (n, k) = (z.shape()[0], z.shape()[1]);
        let mut probs = vec![T::zero(); n * k];
        let mut loss = T::zero();
        for ((zr, yr), pr) in z.data().chunks(k).zip(targets.data().chunks(k)).zip(probs.chunks_mut(k)) {
            let max = zr.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = max + zr.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
            for ((p, &zv), &yv) in pr.iter_mut().zip(zr).zip(yr) {
                let logp = zv - lse;
                *p = logp.exp();
                loss -= yv * logp;
            }
        }
        let inv_n = T::one() / T::from_usize(n.max(1)).unwrap();
        let y = targets.data().to_vec();
        let id = self.id;
        Ok(self.unary(Tensor::scalar(loss * inv_n), move |g, sink| {
            let scale = g[0] * inv_n;
            let mut dz = vec![T::zero(); n * k];
            for ((dr, pr), yr) in dz.chunks_mut(k).zip(probs.chunks(k)).zip(y.chunks(k)) {
                let mass: T = yr.iter().copied().sum();
                for ((d, &p), &yv) in dr.iter_mut().zip(pr).zip(yr) {
                    *d = scale * (mass * p - yv);
                }
            }
            sink.add_owned(id, dz);
            Ok(())
        }))
    }

    /// Inverted dropout: zeroes each element with probability `p` and rescales survivors.
    pub fn dropout(self, p: f64, rng: &mut impl Rng) -> Result<Var<'t, T>> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::invalid(format!("dropout rate {p} outside [0, 1)")));
        }
        if p == 0.0 {
            return Ok(self);
        }
        let x = self.value();
        let keep = T::from_f64_lossy(1.0 / (1.0 - p));
        let mask: Vec<T> = (0..x.numel())
            .map(|_| if rng.random::<f64>() < p { T::zero() } else { keep })
            .collect();
        let data = x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let id = self.id;
        Ok(self.unary(tensor(x.shape().to_vec(), data), move |g, sink| {
            sink.add_owned(id, g.iter().zip(&mask).map(|(&g, &m)| g * m).collect());
            Ok(())
        }))
    }

    pub fn conv(
        self,
        desc: &ConvDescriptor,
        weight: Var<'t, T>,
        bias: Option<Var<'t, T>>,
    ) -> Result<Var<'t, T>> {
        self.conv_with(desc, weight, bias, ConvAlgorithm::Auto)
    }

    pub fn conv_with(
        self,
        desc: &ConvDescriptor,
        weight: Var<'t, T>,
        bias: Option<Var<'t, T>>,
        algorithm: ConvAlgorithm,
    ) -> Result<Var<'t, T>> {
        self.same_tape(&weight)?;
        let x = self.value();
        let w = weight.value();
        if w.shape() != desc.weight_shape().as_slice() {
            return Err(Error::shape(format!(
                "convolution weight shape {:?}, descriptor expects {:?}",
                w.shape(),
                desc.weight_shape()
            )));
        }
        let bv = bias.map(|b| b.value());
        let (data, shape) = conv_forward(
            desc,
            x.shape(),
            x.data(),
            w.data(),
            bv.as_deref().map(Tensor::data),
            algorithm,
        )?;
        let (ix, iw) = (self.id, weight.id);
        let ib = bias.map(|b| b.id);
        let mut parents = vec![ix, iw];
        parents.extend(ib);
        let desc = desc.clone();
        Ok(self.tape.record(tensor(shape, data), &parents, move |g, sink| {
            let grads = conv_backward(&desc, x.shape(), x.data(), w.data(), g, algorithm)?;
            sink.add_owned(ix, grads.input);
            sink.add_owned(iw, grads.weight);
            if let Some(ib) = ib {
                sink.add_owned(ib, grads.bias);
            }
            Ok(())
        }))
    }

    /// Batch normalization over every axis except the channel axis 1.
    ///
    /// In training mode the batch statistics normalize the input and the
    /// running statistics are updated in place with [`BN_MOMENTUM`]; the running
    /// variance uses the unbiased estimate. In evaluation mode the running
    /// statistics are used as-is.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm(
        self,
        gamma: Var<'t, T>,
        beta: Var<'t, T>,
        running_mean: &mut [T],
        running_var: &mut [T],
        train: bool,
        momentum: f64,
        epsilon: f64,
    ) -> Result<Var<'t, T>> {
        let x = self.value();
        let (n, c, inner) = channel_view(x.shape())?;
        let g = gamma.value();
        let b = beta.value();
        if g.shape() != [c] || b.shape() != [c] || running_mean.len() != c || running_var.len() != c {
            return Err(Error::shape(format!(
                "batch norm over {c} channels got affine {:?}/{:?} and running stats {}/{}",
                g.shape(),
                b.shape(),
                running_mean.len(),
                running_var.len()
            )));
        }
        let count = n * inner;
        if train && count < 2 {
            return Err(Error::shape(format!(
                "batch norm in train mode needs more than one value per channel, got shape {:?}",
                x.shape()
            )));
        }
        let eps = T::from_f64_lossy(epsilon);
        let m = T::from_usize(count).unwrap();
        let at = move |s: usize, ch: usize| (s * c + ch) * inner;
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        if train {
            for ch in 0..c {
                let mut total = T::zero();
                for s in 0..n {
                    total += x.data()[at(s, ch)..][..inner].iter().copied().sum::<T>();
                }
                let mu = total / m;
                let mut sq = T::zero();
                for s in 0..n {
                    sq += x.data()[at(s, ch)..][..inner].iter().map(|&v| (v - mu) * (v - mu)).sum::<T>();
                }
                mean[ch] = mu;
                var[ch] = sq / m;
            }
            let mom = T::from_f64_lossy(momentum);
            let unbias = m / (m - T::one());
            for ch in 0..c {
                running_mean[ch] = (T::one() - mom) * running_mean[ch] + mom * mean[ch];
                running_var[ch] = (T::one() - mom) * running_var[ch] + mom * var[ch] * unbias;
            }
        } else {
            mean.copy_from_slice(running_mean);
            var.copy_from_slice(running_var);
        }
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut xhat = vec![T::zero(); x.numel()];
        let mut out = vec![T::zero(); x.numel()];
        for s in 0..n {
            for ch in 0..c {
                let o = at(s, ch);
                for i in o..o + inner {
                    let h = (x.data()[i] - mean[ch]) * inv_std[ch];
                    xhat[i] = h;
                    out[i] = g.data()[ch] * h + b.data()[ch];
                }
            }
        }
        let (ix, ig, ib) = (self.id, gamma.id, beta.id);
        Ok(self.tape.record(tensor(x.shape().to_vec(), out), &[ix, ig, ib], move |gy, sink| {
            let mut dgamma = vec![T::zero(); c];
            let mut dbeta = vec![T::zero(); c];
            for s in 0..n {
                for ch in 0..c {
                    let o = at(s, ch);
                    for i in o..o + inner {
                        dbeta[ch] += gy[i];
                        dgamma[ch] += gy[i] * xhat[i];
                    }
                }
            }
            if sink.needs(ix) {
                let mut dx = vec![T::zero(); gy.len()];
                for ch in 0..c {
                    let scale = g.data()[ch] * inv_std[ch];
                    for s in 0..n {
                        let o = at(s, ch);
                        for i in o..o + inner {
                            dx[i] = if train {
                                scale * (gy[i] - dbeta[ch] / m - xhat[i] * dgamma[ch] / m)
                            } else {
                                scale * gy[i]
                            };
                        }
                    }
                }
                sink.add_owned(ix, dx);
            }
            sink.add_owned(ig, dgamma);
            sink.add_owned(ib, dbeta);
            Ok(())
        }))
    }

    /// Average pooling over the last two axes of `[N, C, H, W]`, no padding.
    pub fn avg_pool2d(self, window: usize, stride: usize) -> Result<Var<'t, T>> {
        let x = self.value();
        let shape = x.shape().to_vec();
        if shape.len() != 4 || window == 0 || stride == 0 || window > shape[2] || window > shape[3] {
            return Err(Error::shape(format!(
                "avg_pool2d window {window} stride {stride} on shape {shape:?}"
            )));
        }
        let (h, w) = (shape[2], shape[3]);
        let (oh, ow) = ((h - window) / stride + 1, (w - window) / stride + 1);
        let planes = shape[0] * shape[1];
        let inv = T::one() / T::from_usize(window * window).unwrap();
        let mut out = vec![T::zero(); planes * oh * ow];
        for p in 0..planes {
            let src = &x.data()[p * h * w..][..h * w];
            for y in 0..oh {
                for xx in 0..ow {
                    let mut acc = T::zero();
                    for dy in 0..window {
                        for dx in 0..window {
                            acc += src[(y * stride + dy) * w + xx * stride + dx];
                        }
                    }
                    out[(p * oh + y) * ow + xx] = acc * inv;
                }
            }
        }
        let id = self.id;
        Ok(self.unary(tensor(vec![shape[0], shape[1], oh, ow], out), move |g, sink| {
            let mut dx = vec![T::zero(); planes * h * w];
            for p in 0..planes {
                for y in 0..oh {
                    for xx in 0..ow {
                        let gv = g[(p * oh + y) * ow + xx] * inv;
                        for dy in 0..window {
                            for ddx in 0..window {
                                dx[p * h * w + (y * stride + dy) * w + xx * stride + ddx] += gv;
                            }
                        }
                    }
                }
            }
            sink.add_owned(id, dx);
            Ok(())
        }))
    }

    /// Max pooling over the last two axes of `[N, C, H, W]` with implicit -inf padding.
    pub fn max_pool2d(self, kernel: usize, stride: usize, padding: usize) -> Result<Var<'t, T>> {
        let x = self.value();
        let shape = x.shape().to_vec();
        if shape.len() != 4 || kernel == 0 || stride == 0 || padding > kernel / 2 {
            return Err(Error::shape(format!(
                "max_pool2d kernel {kernel} stride {stride} padding {padding} on shape {shape:?}"
            )));
        }
        let (h, w) = (shape[2], shape[3]);
        if h + 2 * padding < kernel || w + 2 * padding < kernel {
            return Err(Error::shape(format!("max_pool2d kernel {kernel} larger than input {shape:?}")));
        }
        let (oh, ow) = ((h + 2 * padding - kernel) / stride + 1, (w + 2 * padding - kernel) / stride + 1);
        let planes = shape[0] * shape[1];
        let mut out = vec![T::zero(); planes * oh * ow];
        let mut argmax = vec![0usize; planes * oh * ow];
        for p in 0..planes {
            let src = &x.data()[p * h * w..][..h * w];
            for y in 0..oh {
                for xx in 0..ow {
                    let mut best = T::neg_infinity();
                    let mut best_at = usize::MAX;
                    for dy in 0..kernel {
                        let sy = (y * stride + dy) as isize - padding as isize;
                        if sy < 0 || sy as usize >= h {
                            continue;
                        }
                        for dx in 0..kernel {
                            let sx = (xx * stride + dx) as isize - padding as isize;
                            if sx < 0 || sx as usize >= w {
                                continue;
                            }
                            let i = sy as usize * w + sx as usize;
                            if best_at == usize::MAX || src[i] > best {
                                best = src[i];
                                best_at = i;
                            }
                        }
                    }
                    let o = (p * oh + y) * ow + xx;
                    out[o] = best;
                    argmax[o] = p * h * w + best_at;
                }
            }
        }
        let id = self.id;
        Ok(self.unary(tensor(vec![shape[0], shape[1], oh, ow], out), move |g, sink| {
            let mut dx = vec![T::zero(); planes * h * w];
            for (&src, &gv) in argmax.iter().zip(g) {
                dx[src] += gv;
            }
            sink.add_owned(id, dx);
            Ok(())
        }))
    }

    /// Mean over all axes after the channel axis: `[N, C, ...] -> [N, C]`.
    pub fn global_avg_pool(self) -> Result<Var<'t, T>> {
        let x = self.value();
        let (n, c, inner) = channel_view(x.shape())?;
        if x.rank() < 3 || inner == 0 {
            return Err(Error::shape(format!(
                "global average pooling needs spatial axes, got shape {:?}",
                x.shape()
            )));
        }
        let inv = T::one() / T::from_usize(inner).unwrap();
        let out: Vec<T> = x
            .data()
            .chunks(inner)
            .map(|plane| plane.iter().copied().sum::<T>() * inv)
            .collect();
        let id = self.id;
        Ok(self.unary(tensor(vec![n, c], out), move |g, sink| {
            let dx = g.iter().flat_map(|&gv| std::iter::repeat_n(gv * inv, inner)).collect();
            sink.add_owned(id, dx);
            Ok(())
        }))
    }

    /// Nearest-neighbour upsampling of `[N, C, H, W]` to `[N, C, target.0, target.1]`.
    pub fn upsample_nearest(self, target: (usize, usize)) -> Result<Var<'t, T>> {
        let x = self.value();
        let shape = x.shape().to_vec();
        if shape.len() != 4 {
            return Err(Error::shape(format!("upsample expects [N, C, H, W], got {shape:?}")));
        }
        let (h, w) = (shape[2], shape[3]);
        let (th, tw) = target;
        if th < h || tw < w {
            return Err(Error::shape(format!(
                "upsample target {target:?} is smaller than input {h}x{w}"
            )));
        }
        let planes = shape[0] * shape[1];
        let index: Vec<usize> = (0..th)
            .flat_map(|y| (0..tw).map(move |xx| (y * h / th) * w + xx * w / tw))
            .collect();
        let mut out = Vec::with_capacity(planes * th * tw);
        for p in 0..planes {
            let src = &x.data()[p * h * w..][..h * w];
            out.extend(index.iter().map(|&i| src[i]));
        }
        let id = self.id;
        Ok(self.unary(tensor(vec![shape[0], shape[1], th, tw], out), move |g, sink| {
            let mut dx = vec![T::zero(); planes * h * w];
            for p in 0..planes {
                for (&i, &gv) in index.iter().zip(&g[p * th * tw..][..th * tw]) {
                    dx[p * h * w + i] += gv;
                }
            }
            sink.add_owned(id, dx);
            Ok(())
        }))
    }

    /// Channels `[start, start + len)` of a `[N, C, ...]` tensor.
    pub fn narrow_channels(self, start: usize, len: usize) -> Result<Var<'t, T>> {
        let x = self.value();
        let (n, c, inner) = channel_view(x.shape())?;
        if len == 0 || start + len > c {
            return Err(Error::shape(format!(
                "channel range {start}..{} outside {c} channels",
                start + len
            )));
        }
        let mut out = Vec::with_capacity(n * len * inner);
        for s in 0..n {
            out.extend_from_slice(&x.data()[(s * c + start) * inner..][..len * inner]);
        }
        let mut shape = x.shape().to_vec();
        shape[1] = len;
        let id = self.id;
        Ok(self.unary(tensor(shape, out), move |g, sink| {
            let mut dx = vec![T::zero(); n * c * inner];
            for s in 0..n {
                dx[(s * c + start) * inner..][..len * inner]
                    .copy_from_slice(&g[s * len * inner..][..len * inner]);
            }
            sink.add_owned(id, dx);
            Ok(())
        }))
    }

    /// Splits channels into the first `floor(ratio * C)` and the rest.
    pub fn split_channels(self, ratio: f64) -> Result<(Var<'t, T>, Var<'t, T>)> {
        let c = self.shape().get(1).copied().unwrap_or(0);
        let (first, second) = split_sizes(c, ratio)?;
        if second == 0 {
            return Err(Error::invalid(
                "split with ratio 1.0 has no second part; use the input directly",
            ));
        }
        Ok((self.narrow_channels(0, first)?, self.narrow_channels(first, second)?))
    }

    /// Channel shuffle with `groups` groups (see [`shuffle_source`]).
    pub fn channel_shuffle(self, groups: usize) -> Result<Var<'t, T>> {
        let x = self.value();
        let (n, c, inner) = channel_view(x.shape())?;
        if groups == 0 || c % groups != 0 {
            return Err(Error::invalid(format!(
                "{c} channels are not divisible into {groups} shuffle groups"
            )));
        }
        let mut out = Vec::with_capacity(x.numel());
        for s in 0..n {
            for oc in 0..c {
                let src = shuffle_source(oc, c, groups);
                out.extend_from_slice(&x.data()[(s * c + src) * inner..][..inner]);
            }
        }
        let id = self.id;
        Ok(self.unary(tensor(x.shape().to_vec(), out), move |g, sink| {
            let mut dx = vec![T::zero(); g.len()];
            for s in 0..n {
                for oc in 0..c {
                    let src = shuffle_source(oc, c, groups);
                    dx[(s * c + src) * inner..][..inner]
                        .copy_from_slice(&g[(s * c + oc) * inner..][..inner]);
                }
            }
            sink.add_owned(id, dx);
            Ok(())
        }))
    }
}

/// Concatenates `[N, C_i, rest...]` tensors along the channel axis.
pub fn concat_channels<'t, T: Scalar>(parts: &[Var<'t, T>]) -> Result<Var<'t, T>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::invalid("concat of an empty list"))?;
    let values: Vec<Rc<Tensor<T>>> = parts.iter().map(|p| p.value()).collect();
    let (n, _, inner) = channel_view(values[0].shape())?;
    let mut widths = Vec::with_capacity(parts.len());
    for (p, v) in parts.iter().zip(&values) {
        first.same_tape(p)?;
        let (pn, pc, pi) = channel_view(v.shape())?;
        if pn != n || pi != inner || v.shape()[2..] != values[0].shape()[2..] {
            return Err(Error::shape(format!(
                "concat: shape {:?} does not line up with {:?}",
                v.shape(),
                values[0].shape()
            )));
        }
        widths.push(pc);
    }
    let total: usize = widths.iter().sum();
    let mut out = Vec::with_capacity(n * total * inner);
    for s in 0..n {
        for (v, &wc) in values.iter().zip(&widths) {
            out.extend_from_slice(&v.data()[s * wc * inner..][..wc * inner]);
        }
    }
    let mut shape = values[0].shape().to_vec();
    shape[1] = total;
    let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
    let parents = ids.clone();
    Ok(first.tape.record(tensor(shape, out), &parents, move |g, sink| {
        let mut offset = 0;
        for (&id, &wc) in ids.iter().zip(&widths) {
            if sink.needs(id) {
                let mut d = Vec::with_capacity(n * wc * inner);
                for s in 0..n {
                    d.extend_from_slice(&g[(s * total + offset) * inner..][..wc * inner]);
                }
                sink.add_owned(id, d);
            }
            offset += wc;
        }
        Ok(())
    }))
}

/// For each output element (row-major), the flat input index it reads.
fn permute_index(in_shape: &[usize], axes: &[usize]) -> Vec<usize> {
    let rank = in_shape.len();
    let mut in_strides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * in_shape[i + 1];
    }
    let out_shape: Vec<usize> = axes.iter().map(|&a| in_shape[a]).collect();
    let strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let numel: usize = in_shape.iter().product();
    let mut index = Vec::with_capacity(numel);
    let mut counter = vec![0usize; rank];
    for _ in 0..numel {
        index.push(counter.iter().zip(&strides).map(|(c, s)| c * s).sum());
        for ax in (0..rank).rev() {
            counter[ax] += 1;
            if counter[ax] < out_shape[ax] {
                break;
            }
            counter[ax] = 0;
        }
    }
    index
}

/// One-hot rows for integer labels.
pub fn one_hot<T: Scalar>(labels: &[usize], classes: usize) -> Result<Tensor<T>> {
    let mut data = vec![T::zero(); labels.len() * classes];
    for (row, &label) in labels.iter().enumerate() {
        if label >= classes {
            return Err(Error::invalid(format!("label {label} outside {classes} classes")));
        }
        data[row * classes + label] = T::one();
    }
    Tensor::new(vec![labels.len(), classes], data)
}
