//! N-dimensional (1-D, 2-D, 3-D) grouped convolution.
//!
//! Two independent implementations are provided: straightforward direct loops
//! and an im2col + gemm lowering. [`ConvAlgorithm::Auto`] picks direct loops for
//! depthwise-style convolutions (one input channel per group) and im2col for
//! everything else.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PaddingMode {
    /// `floor(dilation * (kernel - 1) / 2)` zeros on both sides of every spatial axis.
    Symmetric,
    /// `dilation * (kernel - 1)` zeros on the left of the (single) time axis only.
    CausalLeft,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ConvAlgorithm {
    #[default]
    Auto,
    Direct,
    Im2col,
}

/// Static description of a convolution layer.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConvDescriptor {
    pub kernel: Vec<usize>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: Vec<usize>,
    pub dilation: Vec<usize>,
    pub groups: usize,
    pub padding: PaddingMode,
}

impl ConvDescriptor {
    /// Stride 1, dilation 1, one group, symmetric padding.
    pub fn new(kernel: impl Into<Vec<usize>>, in_channels: usize, out_channels: usize) -> Self {
        let kernel = kernel.into();
        let rank = kernel.len();
        Self {
            kernel,
            in_channels,
            out_channels,
            stride: vec![1; rank],
            dilation: vec![1; rank],
            groups: 1,
            padding: PaddingMode::Symmetric,
        }
    }

    /// A kernel-1 convolution over `rank` spatial axes.
    pub fn pointwise(rank: usize, in_channels: usize, out_channels: usize) -> Self {
        Self::new(vec![1; rank], in_channels, out_channels)
    }

    /// Causal 1-D convolution.
    pub fn causal(kernel: usize, dilation: usize, in_channels: usize, out_channels: usize) -> Self {
        Self::new([kernel], in_channels, out_channels)
            .with_dilation([dilation])
            .with_padding(PaddingMode::CausalLeft)
    }

    pub fn with_stride(mut self, stride: impl Into<Vec<usize>>) -> Self {
        self.stride = stride.into();
        self
    }

    pub fn with_dilation(mut self, dilation: impl Into<Vec<usize>>) -> Self {
        self.dilation = dilation.into();
        self
    }

    pub fn with_groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    pub fn with_padding(mut self, padding: PaddingMode) -> Self {
        self.padding = padding;
        self
    }

    pub fn rank(&self) -> usize {
        self.kernel.len()
    }

    pub fn kernel_volume(&self) -> usize {
        self.kernel.iter().product()
    }

    pub fn is_pointwise(&self) -> bool {
        self.kernel.iter().all(|&k| k == 1)
    }

    pub fn in_per_group(&self) -> usize {
        self.in_channels / self.groups
    }

    pub fn out_per_group(&self) -> usize {
        self.out_channels / self.groups
    }

    /// `[out_channels, in_channels / groups, kernel...]`
    pub fn weight_shape(&self) -> Vec<usize> {
        let mut shape = vec![self.out_channels, self.in_per_group()];
        shape.extend_from_slice(&self.kernel);
        shape
    }

    pub fn weight_len(&self) -> usize {
        self.out_channels * self.in_per_group() * self.kernel_volume()
    }

    pub fn validate(&self) -> Result<()> {
        let rank = self.rank();
        if !(1..=3).contains(&rank) {
            return Err(Error::invalid(format!(
                "convolution kernels must have 1 to 3 dims, got {:?}",
                self.kernel
            )));
        }
        if self.stride.len() != rank || self.dilation.len() != rank {
            return Err(Error::invalid(format!(
                "stride {:?} and dilation {:?} must match kernel rank {rank}",
                self.stride, self.dilation
            )));
        }
        let all_positive = self
            .kernel
            .iter()
            .chain(&self.stride)
            .chain(&self.dilation)
            .all(|&v| v > 0);
        if !all_positive || self.in_channels == 0 || self.out_channels == 0 || self.groups == 0 {
            return Err(Error::invalid(format!(
                "convolution sizes must be positive: {self:?}"
            )));
        }
        if self.in_channels % self.groups != 0 || self.out_channels % self.groups != 0 {
            return Err(Error::invalid(format!(
                "channels {}->{} are not divisible by groups {}",
                self.in_channels, self.out_channels, self.groups
            )));
        }
        if self.padding == PaddingMode::CausalLeft && rank != 1 {
            return Err(Error::invalid(
                "causal-left padding is only defined for 1-D kernels",
            ));
        }
        Ok(())
    }

    /// Zero padding `(before, after)` per spatial axis.
    pub fn pads(&self) -> Vec<(usize, usize)> {
        self.kernel
            .iter()
            .zip(&self.dilation)
            .map(|(&k, &d)| {
                let span = d * (k - 1);
                match self.padding {
                    PaddingMode::Symmetric => (span / 2, span / 2),
                    PaddingMode::CausalLeft => (span, 0),
                }
            })
            .collect()
    }

    pub fn output_spatial(&self, input_spatial: &[usize]) -> Result<Vec<usize>> {
        if input_spatial.len() != self.rank() {
            return Err(Error::shape(format!(
                "{}-D convolution applied to spatial dims {input_spatial:?}",
                self.rank()
            )));
        }
        if input_spatial.contains(&0) {
            return Err(Error::shape(format!(
                "zero-size spatial dim in convolution input {input_spatial:?}"
            )));
        }
        let mut out = Vec::with_capacity(self.rank());
        for (axis, ((&len, (before, after)), (&k, (&d, &s)))) in input_spatial
            .iter()
            .zip(self.pads())
            .zip(self.kernel.iter().zip(self.dilation.iter().zip(&self.stride)))
            .enumerate()
        {
            let padded = len + before + after;
            let span = d * (k - 1) + 1;
            if padded < span {
                return Err(Error::shape(format!(
                    "spatial axis {axis} of length {len} is shorter than the dilated kernel span {span}"
                )));
            }
            out.push((padded - span) / s + 1);
        }
        Ok(out)
    }

    /// Full output shape for an `[N, C, spatial...]` input.
    pub fn output_shape(&self, input_shape: &[usize]) -> Result<Vec<usize>> {
        self.validate()?;
        if input_shape.len() != self.rank() + 2 {
            return Err(Error::shape(format!(
                "{}-D convolution expects a rank-{} input, got shape {input_shape:?}",
                self.rank(),
                self.rank() + 2
            )));
        }
        if input_shape[1] != self.in_channels {
            return Err(Error::shape(format!(
                "convolution expects {} input channels, got shape {input_shape:?}",
                self.in_channels
            )));
        }
        let mut shape = vec![input_shape[0], self.out_channels];
        shape.extend(self.output_spatial(&input_shape[2..])?);
        Ok(shape)
    }
}

/// Geometry with spatial axes left-padded to three dims.
#[derive(Clone, Debug)]
struct Geometry {
    batch: usize,
    groups: usize,
    cin_g: usize,
    cout_g: usize,
    input: [usize; 3],
    output: [usize; 3],
    kernel: [usize; 3],
    stride: [usize; 3],
    dilation: [usize; 3],
    pad: [usize; 3],
}

fn lift3(values: &[usize], fill: usize) -> [usize; 3] {
    let mut out = [fill; 3];
    let offset = 3 - values.len();
    out[offset..].copy_from_slice(values);
    out
}

impl Geometry {
    fn new(desc: &ConvDescriptor, input_shape: &[usize]) -> Result<(Self, Vec<usize>)> {
        let out_shape = desc.output_shape(input_shape)?;
        let pads: Vec<usize> = desc.pads().iter().map(|p| p.0).collect();
        Ok((
            Self {
                batch: input_shape[0],
                groups: desc.groups,
                cin_g: desc.in_per_group(),
                cout_g: desc.out_per_group(),
                input: lift3(&input_shape[2..], 1),
                output: lift3(&out_shape[2..], 1),
                kernel: lift3(&desc.kernel, 1),
                stride: lift3(&desc.stride, 1),
                dilation: lift3(&desc.dilation, 1),
                pad: lift3(&pads, 0),
            },
            out_shape,
        ))
    }

    fn in_plane(&self) -> usize {
        self.input.iter().product()
    }

    fn out_plane(&self) -> usize {
        self.output.iter().product()
    }

    fn kernel_volume(&self) -> usize {
        self.kernel.iter().product()
    }

    /// Outputs `[lo, hi)` along `axis` whose tap `k` reads inside the input, and the first input read.
    #[inline]
    fn valid(&self, axis: usize, k: usize) -> (usize, usize, usize) {
        let (s, p, n) = (self.stride[axis], self.pad[axis] as isize, self.input[axis] as isize);
        let shift = (k * self.dilation[axis]) as isize - p;
        let lo = if shift >= 0 { 0 } else { ((-shift) as usize).div_ceil(s) };
        let hi = if n - 1 - shift < 0 { 0 } else { ((n - 1 - shift) as usize / s + 1).min(self.output[axis]) };
        let first = (lo as isize * s as isize + shift).max(0) as usize;
        (lo, hi.max(lo), first)
    }

    /// Calls `f(kernel_offset, output_offset, input_offset, len)` for every in-bounds run of a
    /// tap along the last axis; successive outputs read inputs `stride[2]` apart.
    #[inline]
    fn for_each_run(&self, mut f: impl FnMut(usize, usize, usize, usize)) {
        let [kd, kh, kw] = self.kernel;
        let [_, oh, ow] = self.output;
        let [_, ih, iw] = self.input;
        for a in 0..kd {
            let (z0, z1, sz0) = self.valid(0, a);
            for b in 0..kh {
                let (y0, y1, sy0) = self.valid(1, b);
                for c in 0..kw {
                    let (x0, x1, sx0) = self.valid(2, c);
                    if x0 == x1 {
                        continue;
                    }
                    let k_off = (a * kh + b) * kw + c;
                    for (zi, z) in (z0..z1).enumerate() {
                        let sz = sz0 + zi * self.stride[0];
                        for (yi, y) in (y0..y1).enumerate() {
                            let sy = sy0 + yi * self.stride[1];
                            f(k_off, (z * oh + y) * ow + x0, (sz * ih + sy) * iw + sx0, x1 - x0);
                        }
                    }
                }
            }
        }
    }

    /// `cols[(ic * kvol + k) * stride + offset + o] = x[ic, source(o, k)]` for one group of one sample.
    ///
    /// Entries for padded taps are left untouched; callers zero `cols` first.
    fn im2col<T: Scalar>(&self, x_group: &[T], cols: &mut [T], stride: usize, offset: usize) {
        let kvol = self.kernel_volume();
        let plane = self.in_plane();
        for ic in 0..self.cin_g {
            let x_plane = &x_group[ic * plane..(ic + 1) * plane];
            let base = ic * kvol * stride + offset;
            let step = self.stride[2];
            self.for_each_run(|k, o, i, len| {
                let dst = &mut cols[base + k * stride + o..][..len];
                if step == 1 {
                    dst.copy_from_slice(&x_plane[i..i + len]);
                } else {
                    dst.iter_mut().enumerate().for_each(|(j, d)| *d = x_plane[i + j * step]);
                }
            });
        }
    }

    fn col2im<T: Scalar>(&self, cols: &[T], dx_group: &mut [T], stride: usize, offset: usize) {
        let kvol = self.kernel_volume();
        let plane = self.in_plane();
        for ic in 0..self.cin_g {
            let dx_plane = &mut dx_group[ic * plane..(ic + 1) * plane];
            let base = ic * kvol * stride + offset;
            let step = self.stride[2];
            self.for_each_run(|k, o, i, len| {
                let src = &cols[base + k * stride + o..][..len];
                for (j, &v) in src.iter().enumerate() {
                    dx_plane[i + j * step] += v;
                }
            });
        }
    }

    /// Samples per im2col chunk, keeping the column buffer around `COL_BUDGET` elements.
    fn chunk(&self) -> usize {
        let per_sample = self.cin_g * self.kernel_volume() * self.out_plane();
        (COL_BUDGET / per_sample.max(1)).clamp(1, self.batch.max(1))
    }
}

const COL_BUDGET: usize = 1 << 21;

fn choose(algorithm: ConvAlgorithm, geom: &Geometry) -> ConvAlgorithm {
    match algorithm {
        ConvAlgorithm::Auto if geom.cin_g == 1 && geom.groups > 1 => ConvAlgorithm::Direct,
        ConvAlgorithm::Auto => ConvAlgorithm::Im2col,
        other => other,
    }
}

fn check_params<T>(desc: &ConvDescriptor, weight: &[T], bias: Option<&[T]>) -> Result<()> {
    if weight.len() != desc.weight_len() {
        return Err(Error::shape(format!(
            "convolution weight has {} elements, descriptor {:?} needs shape {:?}",
            weight.len(),
            desc.kernel,
            desc.weight_shape()
        )));
    }
    if let Some(b) = bias {
        if b.len() != desc.out_channels {
            return Err(Error::shape(format!(
                "convolution bias has {} elements for {} output channels",
                b.len(),
                desc.out_channels
            )));
        }
    }
    Ok(())
}

/// Forward convolution. Returns the output data and its shape.
pub fn conv_forward<T: Scalar>(
    desc: &ConvDescriptor,
    input_shape: &[usize],
    x: &[T],
    weight: &[T],
    bias: Option<&[T]>,
    algorithm: ConvAlgorithm,
) -> Result<(Vec<T>, Vec<usize>)> {
    let (geom, out_shape) = Geometry::new(desc, input_shape)?;
    check_params(desc, weight, bias)?;
    if x.len() != input_shape.iter().product::<usize>() {
        return Err(Error::shape("convolution input length disagrees with its shape"));
    }
    let mut out = vec![T::zero(); out_shape.iter().product()];
    match choose(algorithm, &geom) {
        ConvAlgorithm::Direct => direct_forward(&geom, x, weight, &mut out),
        _ => im2col_forward(&geom, x, weight, &mut out),
    }
    if let Some(b) = bias {
        let l = geom.out_plane();
        for sample in out.chunks_mut(desc.out_channels * l) {
            for (plane, &bv) in sample.chunks_mut(l).zip(b) {
                plane.iter_mut().for_each(|v| *v += bv);
            }
        }
    }
    Ok((out, out_shape))
}

/// Gradients of a convolution with respect to input, weight and bias.
pub struct ConvGrads<T> {
    pub input: Vec<T>,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

pub fn conv_backward<T: Scalar>(
    desc: &ConvDescriptor,
    input_shape: &[usize],
    x: &[T],
    weight: &[T],
    grad_out: &[T],
    algorithm: ConvAlgorithm,
) -> Result<ConvGrads<T>> {
    let (geom, out_shape) = Geometry::new(desc, input_shape)?;
    check_params(desc, weight, None)?;
    if grad_out.len() != out_shape.iter().product::<usize>() {
        return Err(Error::shape("convolution output gradient has the wrong length"));
    }
    let mut grads = ConvGrads {
        input: vec![T::zero(); x.len()],
        weight: vec![T::zero(); weight.len()],
        bias: vec![T::zero(); desc.out_channels],
    };
    match choose(algorithm, &geom) {
        ConvAlgorithm::Direct => direct_backward(&geom, x, weight, grad_out, &mut grads),
        _ => im2col_backward(&geom, x, weight, grad_out, &mut grads),
    }
    let l = geom.out_plane();
    for sample in grad_out.chunks(desc.out_channels * l) {
        for (plane, gb) in sample.chunks(l).zip(grads.bias.iter_mut()) {
            *gb += plane.iter().copied().sum::<T>();
        }
    }
    Ok(grads)
}

fn direct_forward<T: Scalar>(geom: &Geometry, x: &[T], weight: &[T], out: &mut [T]) {
    let in_plane = geom.in_plane();
    let out_plane = geom.out_plane();
    let kvol = geom.kernel_volume();
    let cin = geom.groups * geom.cin_g;
    let cout = geom.groups * geom.cout_g;
    for n in 0..geom.batch {
        for g in 0..geom.groups {
            for ocg in 0..geom.cout_g {
                let oc = g * geom.cout_g + ocg;
                let o_plane = &mut out[(n * cout + oc) * out_plane..][..out_plane];
                for icg in 0..geom.cin_g {
                    let ic = g * geom.cin_g + icg;
                    let x_plane = &x[(n * cin + ic) * in_plane..][..in_plane];
                    let w = &weight[(oc * geom.cin_g + icg) * kvol..][..kvol];
                    let step = geom.stride[2];
                    geom.for_each_run(|k, o, i, len| {
                        for (j, out) in o_plane[o..o + len].iter_mut().enumerate() {
                            *out += w[k] * x_plane[i + j * step];
                        }
                    });
                }
            }
        }
    }
}

fn direct_backward<T: Scalar>(
    geom: &Geometry,
    x: &[T],
    weight: &[T],
    grad_out: &[T],
    grads: &mut ConvGrads<T>,
) {
    let in_plane = geom.in_plane();
    let out_plane = geom.out_plane();
    let kvol = geom.kernel_volume();
    let cin = geom.groups * geom.cin_g;
    let cout = geom.groups * geom.cout_g;
    for n in 0..geom.batch {
        for g in 0..geom.groups {
            for ocg in 0..geom.cout_g {
                let oc = g * geom.cout_g + ocg;
                let go = &grad_out[(n * cout + oc) * out_plane..][..out_plane];
                for icg in 0..geom.cin_g {
                    let ic = g * geom.cin_g + icg;
                    let x_off = (n * cin + ic) * in_plane;
                    let w_off = (oc * geom.cin_g + icg) * kvol;
                    let x_plane = &x[x_off..][..in_plane];
                    let w = &weight[w_off..][..kvol];
                    let dx = &mut grads.input[x_off..][..in_plane];
                    let dw = &mut grads.weight[w_off..][..kvol];
                    let step = geom.stride[2];
                    geom.for_each_run(|k, o, i, len| {
                        let mut acc = T::zero();
                        for (j, &g) in go[o..o + len].iter().enumerate() {
                            dx[i + j * step] += w[k] * g;
                            acc += x_plane[i + j * step] * g;
                        }
                        dw[k] += acc;
                    });
                }
            }
        }
    }
}

fn im2col_forward<T: Scalar>(geom: &Geometry, x: &[T], weight: &[T], out: &mut [T]) {
    let in_plane = geom.in_plane();
    let l = geom.out_plane();
    let rows = geom.cin_g * geom.kernel_volume();
    let chunk = geom.chunk();
    let mut cols = vec![T::zero(); rows * chunk * l];
    let mut prod = vec![T::zero(); geom.cout_g * chunk * l];
    let cin = geom.groups * geom.cin_g;
    let cout = geom.groups * geom.cout_g;
    for n0 in (0..geom.batch).step_by(chunk) {
        let nb = chunk.min(geom.batch - n0);
        let width = nb * l;
        for g in 0..geom.groups {
            cols[..rows * width].iter_mut().for_each(|v| *v = T::zero());
            for s in 0..nb {
                let x_group = &x[((n0 + s) * cin + g * geom.cin_g) * in_plane..][..geom.cin_g * in_plane];
                geom.im2col(x_group, &mut cols, width, s * l);
            }
            let w_group = &weight[g * geom.cout_g * rows..][..geom.cout_g * rows];
            T::gemm(
                geom.cout_g,
                rows,
                width,
                T::one(),
                w_group,
                (rows as isize, 1),
                &cols,
                (width as isize, 1),
                T::zero(),
                &mut prod,
                (width as isize, 1),
            );
            for s in 0..nb {
                for oc in 0..geom.cout_g {
                    let dst = ((n0 + s) * cout + g * geom.cout_g + oc) * l;
                    out[dst..dst + l].copy_from_slice(&prod[oc * width + s * l..][..l]);
                }
            }
        }
    }
}

fn im2col_backward<T: Scalar>(
    geom: &Geometry,
    x: &[T],
    weight: &[T],
    grad_out: &[T],
    grads: &mut ConvGrads<T>,
) {
    let in_plane = geom.in_plane();
    let l = geom.out_plane();
    let rows = geom.cin_g * geom.kernel_volume();
    let chunk = geom.chunk();
    let mut cols = vec![T::zero(); rows * chunk * l];
    let mut dcols = vec![T::zero(); rows * chunk * l];
    let mut go = vec![T::zero(); geom.cout_g * chunk * l];
    let cin = geom.groups * geom.cin_g;
    let cout = geom.groups * geom.cout_g;
    for n0 in (0..geom.batch).step_by(chunk) {
        let nb = chunk.min(geom.batch - n0);
        let width = nb * l;
        for g in 0..geom.groups {
            cols[..rows * width].iter_mut().for_each(|v| *v = T::zero());
            for s in 0..nb {
                let x_off = ((n0 + s) * cin + g * geom.cin_g) * in_plane;
                geom.im2col(&x[x_off..][..geom.cin_g * in_plane], &mut cols, width, s * l);
                for oc in 0..geom.cout_g {
                    let src = ((n0 + s) * cout + g * geom.cout_g + oc) * l;
                    go[oc * width + s * l..][..l].copy_from_slice(&grad_out[src..src + l]);
                }
            }
            let w_group = &weight[g * geom.cout_g * rows..][..geom.cout_g * rows];
            // dW_g += dOut_g · colsᵀ
            T::gemm(
                geom.cout_g,
                width,
                rows,
                T::one(),
                &go,
                (width as isize, 1),
                &cols,
                (1, width as isize),
                T::one(),
                &mut grads.weight[g * geom.cout_g * rows..][..geom.cout_g * rows],
                (rows as isize, 1),
            );
            // dcols = W_gᵀ · dOut_g
            T::gemm(
                rows,
                geom.cout_g,
                width,
                T::one(),
                w_group,
                (1, rows as isize),
                &go,
                (width as isize, 1),
                T::zero(),
                &mut dcols,
                (width as isize, 1),
            );
            for s in 0..nb {
                let x_off = ((n0 + s) * cin + g * geom.cin_g) * in_plane;
                geom.col2im(&dcols, &mut grads.input[x_off..][..geom.cin_g * in_plane], width, s * l);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(desc: &ConvDescriptor, shape: &[usize], x: &[f64], w: &[f64]) -> Vec<f64> {
        conv_forward(desc, shape, x, w, None, ConvAlgorithm::Auto).unwrap().0
    }

    #[test]
    fn causal_identity_tap() {
        let desc = ConvDescriptor::causal(3, 1, 1, 1);
        let x = [0.5, -1.0, 2.0, 4.0];
        assert_eq!(run(&desc, &[1, 1, 4], &x, &[0.0, 0.0, 1.0]), x);
    }

    #[test]
    fn causal_two_tap_sum() {
        let desc = ConvDescriptor::causal(2, 1, 1, 1);
        assert_eq!(run(&desc, &[1, 1, 3], &[1.0, 2.0, 3.0], &[1.0, 1.0]), [1.0, 3.0, 5.0]);
    }

    #[test]
    fn pointwise_channel_identity() {
        let desc = ConvDescriptor::pointwise(2, 3, 3);
        let w = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        let x: Vec<f64> = (0..3 * 4).map(f64::from).collect();
        assert_eq!(run(&desc, &[1, 3, 2, 2], &x, &w), x);
    }

    #[test]
    fn rejects_bad_descriptors() {
        assert!(ConvDescriptor::new([3], 3, 4).with_groups(2).validate().is_err());
        assert!(ConvDescriptor::new([3, 3], 2, 2)
            .with_padding(PaddingMode::CausalLeft)
            .validate()
            .is_err());
        let desc = ConvDescriptor::new([3, 3], 2, 2);
        assert!(matches!(desc.output_shape(&[1, 2, 0, 4]), Err(Error::Shape(_))));
        assert!(matches!(desc.output_shape(&[1, 3, 4, 4]), Err(Error::Shape(_))));
    }

    #[test]
    fn output_sizes() {
        let stem = ConvDescriptor::new([5, 7, 7], 1, 64).with_stride([1, 2, 2]);
        assert_eq!(stem.output_shape(&[1, 1, 29, 88, 88]).unwrap(), [1, 64, 29, 44, 44]);
        let down = ConvDescriptor::new([3, 3], 64, 128).with_stride([2, 2]);
        assert_eq!(down.output_shape(&[1, 64, 11, 11]).unwrap(), [1, 128, 6, 6]);
        assert_eq!(ConvDescriptor::causal(3, 4, 8, 8).output_spatial(&[29]).unwrap(), [29]);
    }
}
