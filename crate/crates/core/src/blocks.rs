//! Composite blocks: Ghost modules, DFC attention, GhostV2 and the partial temporal block.

use serde::{Deserialize, Serialize};

use crate::autograd::Var;
use crate::conv::{ConvDescriptor, PaddingMode};
use crate::cost::CostCounter;
use crate::error::{Error, Result};
use crate::nn::{join, Activation, Context, Conv, ConvBnAct, Dropout, Init, Module, Param};
use crate::ops::{concat_channels, split_sizes};
use crate::scalar::Scalar;

/// Kernel of the Ghost module's primary convolution.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PrimaryKernel {
    /// 1×1, as in the original Ghost module.
    #[default]
    Pointwise,
    /// Same kernel, stride and dilation as the convolution being replaced.
    Inherit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GhostConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    /// Fraction of output channels produced by the primary convolution.
    pub ratio: f64,
    pub cheap_kernel: usize,
    /// 1 (temporal, causal padding) or 2 (spatial, symmetric padding).
    pub rank: usize,
    pub primary_kernel: usize,
    pub stride: usize,
    /// Dilation of a non-pointwise primary convolution (1-D only).
    pub dilation: usize,
    pub activation: Activation,
}

impl Default for GhostConfig {
    fn default() -> Self {
        Self {
            in_channels: 1,
            out_channels: 2,
            ratio: 0.5,
            cheap_kernel: 3,
            rank: 2,
            primary_kernel: 1,
            stride: 1,
            dilation: 1,
            activation: Activation::Relu,
        }
    }
}

impl GhostConfig {
    pub fn new(rank: usize, in_channels: usize, out_channels: usize) -> Self {
        Self {
            rank,
            in_channels,
            out_channels,
            ..Self::default()
        }
    }

    /// `(primary, cheap)` output channel counts.
    pub fn widths(&self) -> Result<(usize, usize)> {
        if !(self.ratio > 0.0 && self.ratio < 1.0) {
            return Err(Error::invalid(format!("ghost ratio {} outside (0, 1)", self.ratio)));
        }
        let (primary, cheap) = split_sizes(self.out_channels, self.ratio)?;
        if cheap % primary != 0 {
            return Err(Error::invalid(format!(
                "ghost module with {} outputs at ratio {}: {cheap} cheap channels are not a multiple of {primary} primary channels",
                self.out_channels, self.ratio
            )));
        }
        Ok((primary, cheap))
    }

    fn padding(&self) -> PaddingMode {
        if self.rank == 1 {
            PaddingMode::CausalLeft
        } else {
            PaddingMode::Symmetric
        }
    }

    pub fn primary_desc(&self) -> Result<ConvDescriptor> {
        let (primary, _) = self.widths()?;
        let rank = self.rank;
        if rank != 1 && rank != 2 {
            return Err(Error::invalid(format!("ghost modules are 1-D or 2-D, got rank {rank}")));
        }
        let dilation = if self.primary_kernel > 1 { self.dilation } else { 1 };
        Ok(ConvDescriptor::new(vec![self.primary_kernel; rank], self.in_channels, primary)
            .with_stride(vec![self.stride; rank])
            .with_dilation(vec![dilation; rank])
            .with_padding(self.padding()))
    }

    /// Depthwise (channel-multiplier) convolution producing the cheap features.
    pub fn cheap_desc(&self) -> Result<ConvDescriptor> {
        let (primary, cheap) = self.widths()?;
        Ok(ConvDescriptor::new(vec![self.cheap_kernel; self.rank], primary, cheap)
            .with_groups(primary)
            .with_padding(self.padding()))
    }
}

/// `X1 = act(BN(conv(x)))`, `X2 = act(BN(dwconv(X1)))`, output `[X1, X2]`.
#[derive(Clone, Debug)]
pub struct Ghost<T> {
    pub path: String,
    pub cfg: GhostConfig,
    pub primary: ConvBnAct<T>,
    pub cheap: ConvBnAct<T>,
}

impl<T: Scalar> Ghost<T> {
    pub fn new(path: &str, cfg: GhostConfig, init: &mut Init) -> Result<Self> {
        let primary = ConvBnAct::new(&join(path, "primary"), cfg.primary_desc()?, cfg.activation, init)?;
        let cheap = ConvBnAct::new(&join(path, "cheap"), cfg.cheap_desc()?, cfg.activation, init)?;
        Ok(Self {
            path: path.to_string(),
            cfg,
            primary,
            cheap,
        })
    }
}

impl<T: Scalar> Module<T> for Ghost<T> {
    fn forward<'t>(&mut self, x: Var<'t, T>, ctx: &mut Context) -> Result<Var<'t, T>> {
        check_channels(&self.path, &x.shape(), self.cfg.in_channels)?;
        let x1 = self.primary.forward(x, ctx)?;
        let x2 = self.cheap.forward(x1, ctx)?;
        concat_channels(&[x1, x2])
    }

    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.primary.visit(f);
        self.cheap.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.primary.visit_mut(f);
        self.cheap.visit_mut(f);
    }

    fn cost(&self, input: &[usize], counter: &mut CostCounter) -> Result<Vec<usize>> {
        check_channels(&self.path, input, self.cfg.in_channels)?;
        let mut out = self.primary.cost(input, counter)?;
        self.cheap.cost(&out, counter)?;
        out[1] = self.cfg.out_channels;
        Ok(out)
    }
}

/// Grouping of the DFC directional convolutions.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Directional {
    #[default]
    Depthwise,
    Full,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DfcConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    /// Length of the 1×k and k×1 convolutions.
    pub kernel: usize,
    pub downsample: usize,
    pub directional: Directional,
}

impl Default for DfcConfig {
    fn default() -> Self {
        Self {
            in_channels: 1,
            out_channels: 1,
            kernel: 5,
            downsample: 2,
            directional: Directional::Depthwise,
        }
    }
}

/// Decoupled fully-connected attention producing a gate in `(0, 1)`.
#[derive(Clone, Debug)]
pub struct Dfc<T> {
    pub path: String,
    pub cfg: DfcConfig,
    pub reduce: ConvBnAct<T>,
    pub horizontal: ConvBnAct<T>,
    pub vertical: ConvBnAct<T>,
}

impl<T: Scalar> Dfc<T> {
    pub fn new(path: &str, cfg: DfcConfig, init: &mut Init) -> Result<Self> {
        if cfg.downsample == 0 || cfg.kernel == 0 {
            return Err(Error::invalid("DFC kernel and downsample factor must be positive"));
        }
        let c = cfg.out_channels;
        let groups = match cfg.directional {
            Directional::Depthwise => c,
            Directional::Full => 1,
        };
        let none = Activation::Identity;
        let reduce = ConvBnAct::new(&join(path, "reduce"), ConvDescriptor::pointwise(2, cfg.in_channels, c), none, init)?;
        let horizontal = ConvBnAct::new(
            &join(path, "horizontal"),
            ConvDescriptor::new([1, cfg.kernel], c, c).with_groups(groups),
            none,
            init,
        )?;
        let vertical = ConvBnAct::new(
            &join(path, "vertical"),
            ConvDescriptor::new([cfg.kernel, 1], c, c).with_groups(groups),
            none,
            init,
        )?;
        Ok(Self {
            path: path.to_string(),
            cfg,
            reduce,
            horizontal,
            vertical,
        })
    }

    fn pooled_size(&self, shape: &[usize]) -> Result<(usize, usize)> {
        let f = self.cfg.downsample;
        if shape.len() != 4 || shape[2] < f || shape[3] < f {
            return Err(Error::shape(format!(
                "{}: DFC attention needs [N, C, H, W] with H, W >= {f}, got {shape:?}",
                self.path
            )));
        }
        Ok((shape[2] / f, shape[3] / f))
    }

    /// Attention map for `x`, upsampled to `target` spatial size.
    pub fn attend<'t>(&mut self, x: Var<'t, T>, target: (usize, usize), ctx: &mut Context) -> Result<Var<'t, T>> {
        let shape = x.shape();
        check_channels(&self.path, &shape, self.cfg.in_channels)?;
        self.pooled_size(&shape)?;
        let f = self.cfg.downsample;
        let y = x.avg_pool2d(f, f)?;
        let y = self.reduce.forward(y, ctx)?;
        let y = self.horizontal.forward(y, ctx)?;
        let y = self.vertical.forward(y, ctx)?;
        y.sigmoid().upsample_nearest(target)
    }

    pub fn attend_cost(&self, input: &[usize], target: (usize, usize), counter: &mut CostCounter) -> Result<Vec<usize>> {
        check_channels(&self.path, input, self.cfg.in_channels)?;
        let (h, w) = self.pooled_size(input)?;
        if target.0 < h || target.1 < w {
            return Err(Error::shape(format!(
                "{}: attention target {target:?} smaller than pooled map {h}x{w}",
                self.path
            )));
        }
        let f = self.cfg.downsample;
        let pooled = vec![input[0], input[1], h, w];
        counter.elementwise(&join(&self.path, "pool"), pooled.iter().product::<usize>() * f * f);
        let y = self.reduce.cost(&pooled, counter)?;
        let y = self.horizontal.cost(&y, counter)?;
        let y = self.vertical.cost(&y, counter)?;
        counter.elementwise(&join(&self.path, "sigmoid"), y.iter().product());
        Ok(vec![y[0], y[1], target.0, target.1])
    }
}

impl<T: Scalar> Module<T> for Dfc<T> {
    fn forward<'t>(&mut self, x: Var<'t, T>, ctx: &mut Context) -> Result<Var<'t, T>> {
        let shape = x.shape();
        let target = (shape.get(2).copied().unwrap_or(0), shape.get(3).copied().unwrap_or(0));
        self.attend(x, target, ctx)
    }

    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.reduce.visit(f);
        self.horizontal.visit(f);
        self.vertical.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.reduce.visit_mut(f);
        self.horizontal.visit_mut(f);
        self.vertical.visit_mut(f);
    }

    fn cost(&self, input: &[usize], counter: &mut CostCounter) -> Result<Vec<usize>> {
        let target = (input.get(2).copied().unwrap_or(0), input.get(3).copied().unwrap_or(0));
        self.attend_cost(input, target, counter)
    }
}

/// Ghost module whose whole output is gated by DFC attention computed on the module input.
#[derive(Clone, Debug)]
pub struct GhostV2<T> {
    pub path: String,
    pub ghost: Ghost<T>,
    pub dfc: Dfc<T>,
}

impl<T: Scalar> GhostV2<T> {
    pub fn new(path: &str, ghost: GhostConfig, directional: Directional, init: &mut Init) -> Result<Self> {
        if ghost.rank != 2 {
            return Err(Error::invalid("DFC attention is only defined for 2-D ghost modules"));
        }
        let dfc = DfcConfig {
            in_channels: ghost.in_channels,
            out_channels: ghost.out_channels,
            directional,
            ..DfcConfig::default()
        };
        Ok(Self {
            path: path.to_string(),
            ghost: Ghost::new(&join(path, "ghost"), ghost, init)?,
            dfc: Dfc::new(&join(path, "dfc"), dfc, init)?,
        })
    }
}

impl<T: Scalar> Module<T> for GhostV2<T> {
    fn forward<'t>(&mut self, x: Var<'t, T>, ctx: &mut Context) -> Result<Var<'t, T>> {
        let g = self.ghost.forward(x, ctx)?;
        let shape = g.shape();
        let a = self.dfc.attend(x, (shape[2], shape[3]), ctx)?;
        g.mul(a)
    }

    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.ghost.visit(f);
        self.dfc.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.ghost.visit_mut(f);
        self.dfc.visit_mut(f);
    }

    fn cost(&self, input: &[usize], counter: &mut CostCounter) -> Result<Vec<usize>> {
        let out = self.ghost.cost(input, counter)?;
        let att = self.dfc.attend_cost(input, (out[2], out[3]), counter)?;
        if att != out {
            return Err(Error::shape(format!(
                "{}: attention shape {att:?} does not match ghost output {out:?}",
                self.path
            )));
        }
        counter.elementwise(&join(&self.path, "gate"), out.iter().product());
        Ok(out)
    }
}

/// Operation applied to the compute branch of a partial block.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoreKind {
    #[default]
    Temporal,
    Shuffle,
    Faster,
    /// No operation; useful for ablations.
    Identity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PartialBlockConfig {
    pub channels: usize,
    pub ratio: f64,
    pub core: CoreKind,
    pub kernel: usize,
    pub dilation: usize,
    pub dropout: f64,
    pub activation: Activation,
    /// Hidden width of the Faster core's MLP as a multiple of `channels`.
    pub mlp_expand: usize,
    pub shuffle_groups: usize,
}

impl Default for PartialBlockConfig {
    fn default() -> Self {
        Self {
            channels: 512,
            ratio: 0.75,
            core: CoreKind::Temporal,
            kernel: 3,
            dilation: 1,
            dropout: 0.2,
            activation: Activation::Relu,
            mlp_expand: 2,
            shuffle_groups: 2,
        }
    }
}

impl PartialBlockConfig {
    /// `(compute, passthrough)` channel counts.
    pub fn widths(&self) -> Result<(usize, usize)> {
        split_sizes(self.channels, self.ratio)
    }

    fn validate(&self) -> Result<()> {
        self.widths()?;
        if self.kernel == 0 || self.kernel % 2 == 0 {
            return Err(Error::invalid(format!("partial block kernel {} must be odd", self.kernel)));
        }
        if self.dilation == 0 {
            return Err(Error::invalid("dilation must be positive"));
        }
        Dropout::new(self.dropout)?;
        if self.core == CoreKind::Faster && self.mlp_expand == 0 {
            return Err(Error::invalid("MLP expansion must be positive"));
        }
        if self.core == CoreKind::Shuffle && (self.shuffle_groups == 0 || self.channels % self.shuffle_groups != 0) {
            return Err(Error::invalid(format!(
                "{} channels cannot be shuffled in {} groups",
                self.channels, self.shuffle_groups
            )));
        }
        Ok(())
    }
}

/// Two rounds of causal conv, batch norm, activation and dropout.
#[derive(Clone, Debug)]
pub struct TemporalCore<T> {
    pub layers: [ConvBnAct<T>; 2],
    pub dropout: Dropout,
}

impl<T: Scalar> TemporalCore<T> {
    pub fn new(path: &str, channels: usize, kernel: usize, dilation: usize, act: Activation, dropout: f64, init: &mut Init) -> Result<Self> {
        let desc = ConvDescriptor::causal(kernel, dilation, channels, channels);
        Ok(Self {
            layers: [
                ConvBnAct::new(&join(path, "0"), desc.clone(), act, init)?,
                ConvBnAct::new(&join(path, "1"), desc, act, init)?,
            ],
            dropout: Dropout::new(dropout)?,
        })
    }
}

impl<T: Scalar> Module<T> for TemporalCore<T> {
    fn forward<'t>(&mut self, mut x: Var<'t, T>, ctx: &mut Context) -> Result<Var<'t, T>> {
        for layer in &mut self.layers {
            x = layer.forward(x, ctx)?;
            x = self.dropout.apply(x, ctx)?;
        }
        Ok(x)
    }

    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.layers.iter().for_each(|l| l.visit(f));
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.layers.iter_mut().for_each(|l| l.visit_mut(f));
    }

    fn cost(&self, input: &[usize], counter: &mut CostCounter) -> Result<Vec<usize>> {
        let mid = self.layers[0].cost(input, counter)?;
        self.layers[1].cost(&mid, counter)
    }
}

/// Pointwise, depthwise causal and pointwise convolutions, each followed by batch norm.
#[derive(Clone, Debug)]
pub struct ShuffleCore<T> {
    pub expand: ConvBnAct<T>,
    pub depthwise: ConvBnAct<T>,
    pub project: ConvBnAct<T>,
}

impl<T: Scalar> ShuffleCore<T> {
    pub fn new(path: &str, channels: usize, kernel: usize, dilation: usize, act: Activation, init: &mut Init) -> Result<Self> {
        let pw = ConvDescriptor::pointwise(1, channels, channels);
        Ok(Self {
            expand: ConvBnAct::new(&join(path, "pw1"), pw.clone(), act, init)?,
            depthwise: ConvBnAct::new(
                &join(path, "dw"),
                ConvDescriptor::causal(kernel, dilation, channels, channels).with_groups(channels),
                Activation::Identity,
                init,
            )?,
            project: ConvBnAct::new(&join(path, "pw2"), pw, act, init)?,
        })
    }
}

impl<T: Scalar> Module<T> for ShuffleCore<T> {
    fn forward<'t>(&mut self, x: Var<'t, T>, ctx: &mut Context) -> Result<Var<'t, T>> {
        let x = self.expand.forward(x, ctx)?;
        let x = self.depthwise.forward(x, ctx)?;
        self.project.forward(x, ctx)
    }

    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.expand.visit(f);
        self.depthwise.visit(f);
        self.project.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.expand.visit_mut(f);
        self.depthwise.visit_mut(f);
        self.project.visit_mut(f);
    }

    fn cost(&self, input: &[usize], counter: &mut CostCounter) -> Result<Vec<usize>> {
        let x = self.expand.cost(input, counter)?;
        let x = self.depthwise.cost(&x, counter)?;
        self.project.cost(&x, counter)
    }
}

/// Pointwise expansion, batch norm, activation and pointwise projection.
#[derive(Clone, Debug)]
pub struct Mlp<T> {
    pub expand: ConvBnAct<T>,
    pub project: Conv<T>,
}

impl<T: Scalar> Mlp<T> {
    pub fn new(path: &str, channels: usize, expand: usize, act: Activation, init: &mut Init) -> Result<Self> {
        let hidden = channels * expand;
        Ok(Self {
            expand: ConvBnAct::new(&join(path, "fc1"), ConvDescriptor::pointwise(1, channels, hidden), act, init)?,
            project: Conv::new(join(path, "fc2"), ConvDescriptor::pointwise(1, hidden, channels), false, init)?,
        })
    }
}

impl<T: Scalar> Module<T> for Mlp<T> {
    fn forward<'t>(&mut self, x: Var<'t, T>, ctx: &mut Context) -> Result<Var<'t, T>> {
        let h = self.expand.forward(x, ctx)?;
        self.project.forward(h, ctx)
    }

    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.expand.visit(f);
        self.project.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.expand.visit_mut(f);
        self.project.visit_mut(f);
    }

    fn cost(&self, input: &[usize], counter: &mut CostCounter) -> Result<Vec<usize>> {
        let h = self.expand.cost(input, counter)?;
        self.project.cost(&h, counter)
    }
}

#[derive(Clone, Debug)]
pub enum Core<T> {
    Temporal(TemporalCore<T>),
    Shuffle(ShuffleCore<T>),
    /// A single causal convolution; the MLP runs after the merge.
    Faster(Conv<T>),
    Identity,
}

impl<T: Scalar> Core<T> {
    fn as_module(&self) -> Option<&dyn Module<T>> {
        match self {
            Core::Temporal(c) => Some(c),
            Core::Shuffle(c) => Some(c),
            Core::Faster(c) => Some(c),
            Core::Identity => None,
        }
    }

    fn as_module_mut(&mut self) -> Option<&mut dyn Module<T>> {
        match self {
            Core::Temporal(c) => Some(c),
            Core::Shuffle(c) => Some(c),
            Core::Faster(c) => Some(c),
            Core::Identity => None,
        }
    }
}

/// Split channels, transform the first part, concatenate and add the input.
#[derive(Clone, Debug)]
pub struct PartialBlock<T> {
    pub path: String,
    pub cfg: PartialBlockConfig,
    pub core: Core<T>,
    pub mlp: Option<Mlp<T>>,
}

impl<T: Scalar> PartialBlock<T> {
    pub fn new(path: &str, cfg: PartialBlockConfig, init: &mut Init) -> Result<Self> {
        cfg.validate()?;
        let (c, _) = cfg.widths()?;
        let core_path = join(path, "core");
        let core = match cfg.core {
            CoreKind::Temporal => Core::Temporal(TemporalCore::new(
                &core_path,
                c,
                cfg.kernel,
                cfg.dilation,
                cfg.activation,
                cfg.dropout,
                init,
            )?),
            CoreKind::Shuffle => Core::Shuffle(ShuffleCore::new(&core_path, c, cfg.kernel, cfg.dilation, cfg.activation, init)?),
            CoreKind::Faster => Core::Faster(Conv::new(
                join(&core_path, "conv"),
                ConvDescriptor::causal(cfg.kernel, cfg.dilation, c, c),
                false,
                init,
            )?),
            CoreKind::Identity => Core::Identity,
        };
        let mlp = match cfg.core {
            CoreKind::Faster => Some(Mlp::new(&join(path, "mlp"), cfg.channels, cfg.mlp_expand, cfg.activation, init)?),
            _ => None,
        };
        Ok(Self {
            path: path.to_string(),
            cfg,
            core,
            mlp,
        })
    }
}

impl<T: Scalar> Module<T> for PartialBlock<T> {
    fn forward<'t>(&mut self, x: Var<'t, T>, ctx: &mut Context) -> Result<Var<'t, T>> {
        check_channels(&self.path, &x.shape(), self.cfg.channels)?;
        let (c, rest) = self.cfg.widths()?;
        let x1 = if rest == 0 { x } else { x.narrow_channels(0, c)? };
        let x3 = match self.core.as_module_mut() {
            Some(core) => core.forward(x1, ctx)?,
            None => x1,
        };
        let mut merged = if rest == 0 {
            x3
        } else {
            concat_channels(&[x3, x.narrow_channels(c, rest)?])?
        };
        if let Some(mlp) = &mut self.mlp {
            merged = mlp.forward(merged, ctx)?;
        }
        let out = merged.add(x)?;
        if self.cfg.core == CoreKind::Shuffle {
            return out.channel_shuffle(self.cfg.shuffle_groups);
        }
        Ok(out)
    }

    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        if let Some(core) = self.core.as_module() {
            core.visit(f);
        }
        if let Some(mlp) = &self.mlp {
            mlp.visit(f);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        if let Some(core) = self.core.as_module_mut() {
            core.visit_mut(f);
        }
        if let Some(mlp) = &mut self.mlp {
            mlp.visit_mut(f);
        }
    }

    fn cost(&self, input: &[usize], counter: &mut CostCounter) -> Result<Vec<usize>> {
        check_channels(&self.path, input, self.cfg.channels)?;
        let (c, _) = self.cfg.widths()?;
        if let Some(core) = self.core.as_module() {
            let mut branch = input.to_vec();
            branch[1] = c;
            core.cost(&branch, counter)?;
        }
        if let Some(mlp) = &self.mlp {
            mlp.cost(input, counter)?;
        }
        counter.elementwise(&join(&self.path, "residual"), input.iter().product());
        Ok(input.to_vec())
    }
}

pub(crate) fn check_channels(path: &str, shape: &[usize], expected: usize) -> Result<()> {
    if shape.get(1) != Some(&expected) {
        return Err(Error::shape(format!(
            "{path}: expected {expected} input channels, got shape {shape:?}"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Tape;
    use crate::cost::{CountingConvention, InputSpec};
    use crate::nn::{count_trainable, run};
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn randn(shape: &[usize], seed: u64) -> Tensor<f64> {
        Tensor::randn(shape.to_vec(), 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    fn cost_of<M: Module<f64>>(m: &M, input: &[usize]) -> (u64, u64) {
        let mut counter = CostCounter::new(CountingConvention::default());
        m.cost(input, &mut counter).unwrap();
        let r = counter.finish(InputSpec::default());
        (r.total_params, r.total_macs)
    }

    #[test]
    fn ghost_shape_and_primary_prefix() {
        let mut g = Ghost::<f64>::new("g", GhostConfig::new(2, 64, 64), &mut Init::seeded(3)).unwrap();
        let x = randn(&[1, 64, 8, 8], 1);
        let tape = Tape::new();
        let xv = tape.constant(x);
        let mut ctx = Context::eval();
        let out = g.forward(xv, &mut ctx).unwrap();
        assert_eq!(out.shape(), vec![1, 64, 8, 8]);
        let x1 = g.primary.forward(xv, &mut ctx).unwrap();
        assert_eq!(&out.value().data()[..32 * 64], x1.value().data());
    }

    #[test]
    fn ghost_param_count_by_enumeration() {
        let g = Ghost::<f64>::new("g", GhostConfig::new(2, 64, 64), &mut Init::zeros()).unwrap();
        // primary 1x1: 64*32, BN 2*32; cheap depthwise 3x3: 32*9, BN 2*32
        let expected = 64 * 32 + 64 + 32 * 9 + 64;
        assert_eq!(count_trainable(&g), expected);
        assert_eq!(cost_of(&g, &[1, 64, 8, 8]).0 as usize, expected);
    }

    #[test]
    fn ghost_rejects_uneven_cheap_split() {
        let cfg = GhostConfig {
            ratio: 0.4,
            ..GhostConfig::new(2, 4, 10)
        };
        assert!(cfg.widths().is_err());
        let mut g = Ghost::<f64>::new("g", GhostConfig::new(2, 4, 8), &mut Init::zeros()).unwrap();
        let tape = Tape::new();
        assert!(g.forward(tape.constant(Tensor::zeros([1, 3, 4, 4])), &mut Context::eval()).is_err());
    }

    #[test]
    fn dfc_range_and_zero_weights() {
        let mut dfc = Dfc::<f64>::new("a", DfcConfig { in_channels: 3, out_channels: 3, ..Default::default() }, &mut Init::seeded(4)).unwrap();
        let y = run(&mut dfc, &randn(&[2, 3, 6, 7], 2), &mut Context::eval()).unwrap();
        assert_eq!(y.shape(), &[2, 3, 6, 7]);
        assert!(y.data().iter().all(|&v| v > 0.0 && v < 1.0));
        let mut zero = Dfc::<f64>::new("a", DfcConfig { in_channels: 3, out_channels: 3, ..Default::default() }, &mut Init::zeros()).unwrap();
        let y = run(&mut zero, &randn(&[1, 3, 4, 4], 3), &mut Context::eval()).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.5));
        assert!(run(&mut zero, &randn(&[1, 3, 1, 4], 3), &mut Context::eval()).is_err());
    }

    #[test]
    fn ghostv2_is_contraction_of_ghost() {
        let mut v2 = GhostV2::<f64>::new("v", GhostConfig::new(2, 4, 8), Directional::Depthwise, &mut Init::seeded(5)).unwrap();
        let x = randn(&[1, 4, 6, 6], 9);
        let mut ctx = Context::eval();
        let out = run(&mut v2, &x, &mut ctx).unwrap();
        let ghost = run(&mut v2.ghost, &x, &mut ctx).unwrap();
        for (o, g) in out.data().iter().zip(ghost.data()) {
            assert!(o.abs() <= g.abs());
        }
    }

    #[test]
    fn partial_widths() {
        let cfg = PartialBlockConfig::default();
        assert_eq!(cfg.widths().unwrap(), (384, 128));
        for core in [CoreKind::Temporal, CoreKind::Shuffle, CoreKind::Faster, CoreKind::Identity] {
            let cfg = PartialBlockConfig { channels: 8, core, dropout: 0.0, ..Default::default() };
            let mut b = PartialBlock::<f64>::new("b", cfg, &mut Init::seeded(1)).unwrap();
            let y = run(&mut b, &randn(&[2, 8, 5], 1), &mut Context::train(0)).unwrap();
            assert_eq!(y.shape(), &[2, 8, 5]);
        }
    }

    #[test]
    fn identity_core_doubles_input() {
        for ratio in [0.25, 0.5, 0.75, 1.0] {
            let cfg = PartialBlockConfig { channels: 8, ratio, core: CoreKind::Identity, ..Default::default() };
            let mut b = PartialBlock::<f64>::new("b", cfg, &mut Init::zeros()).unwrap();
            let x = randn(&[1, 8, 4], 7);
            let y = run(&mut b, &x, &mut Context::eval()).unwrap();
            let doubled: Vec<f64> = x.data().iter().map(|v| 2.0 * v).collect();
            assert_eq!(y.data(), doubled.as_slice());
        }
    }

    #[test]
    fn shuffle_depthwise_params_grow_per_tap() {
        let count = |k| {
            let cfg = PartialBlockConfig { channels: 16, core: CoreKind::Shuffle, kernel: k, ..Default::default() };
            count_trainable(&PartialBlock::<f64>::new("b", cfg, &mut Init::zeros()).unwrap())
        };
        assert_eq!(count(5) - count(3), 2 * 12);
    }
}
