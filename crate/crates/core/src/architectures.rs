//! Full models: 3-D stem and ResNet-18 frontend, temporal sequence models and the classifier head.
//!
//! Input clips are `[N, C, T, H, W]`. The frontend folds time into the batch
//! axis after the stem, so the residual trunk never mixes frames; the sequence
//! models see `[N, F, T]` and are causal along `T`.

use serde::{Deserialize, Serialize};

use crate::autograd::Var;
use crate::blocks::{CoreKind, Directional, Ghost, GhostConfig, GhostV2, PartialBlock, PartialBlockConfig, PrimaryKernel};
use crate::conv::ConvDescriptor;
use crate::cost::{CostCounter, CostReport, CountingConvention, InputSpec};
use crate::error::{Error, Result};
use crate::nn::{join, Activation, Context, Conv, ConvBnAct, Dropout, Init, Linear, Module, Param, Sequential};
use crate::ops::concat_channels;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrontendVariant {
    #[default]
    Standard,
    Ghost,
    GhostV2,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeqModel {
    Mstcn,
    Dctcn,
    #[default]
    Partial,
}

/// How convolutions are turned into Ghost modules.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GhostKnobs {
    pub ratio: f64,
    pub primary: PrimaryKernel,
    pub cheap_kernel: usize,
    /// Also replace strided convolutions (frontend stage entries).
    pub replace_strided: bool,
}

impl Default for GhostKnobs {
    fn default() -> Self {
        Self {
            ratio: 0.5,
            primary: PrimaryKernel::Pointwise,
            cheap_kernel: 3,
            replace_strided: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DcTcnKnobs {
    /// Channels appended by each dense unit.
    pub growth: usize,
    /// Dense units per block.
    pub units: usize,
}

impl Default for DcTcnKnobs {
    fn default() -> Self {
        Self { growth: 192, units: 3 }
    }
}

/// Declarative description of a full model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub frontend_variant: FrontendVariant,
    pub seq_model: SeqModel,
    pub seq_ghost: bool,
    pub partial_core: CoreKind,
    pub ratio: f64,
    pub kernel: usize,
    pub dilations: Vec<usize>,
    /// Sequence model width: total MS-TCN width, DC-TCN transition width, or the
    /// partial block width (which must equal the frontend feature width).
    pub hidden_width: usize,
    pub num_classes: usize,
    pub input: InputSpec,
    /// Width of the stem and the first residual stage; features are 8x wider.
    pub frontend_width: usize,
    pub frontend_ghost: GhostKnobs,
    pub seq_ghost_knobs: GhostKnobs,
    pub dfc_directional: Directional,
    /// Branch kernels of the multi-scale and dense TCNs.
    pub branch_kernels: Vec<usize>,
    pub dctcn: DcTcnKnobs,
    pub mlp_expand: usize,
    pub dropout: f64,
    pub activation: Activation,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            frontend_variant: FrontendVariant::Standard,
            seq_model: SeqModel::Partial,
            seq_ghost: false,
            partial_core: CoreKind::Faster,
            ratio: 0.75,
            kernel: 3,
            dilations: vec![1, 2, 4, 8],
            hidden_width: 512,
            num_classes: 500,
            input: InputSpec::default(),
            frontend_width: 64,
            frontend_ghost: GhostKnobs::default(),
            seq_ghost_knobs: GhostKnobs {
                primary: PrimaryKernel::Inherit,
                ..GhostKnobs::default()
            },
            dfc_directional: Directional::Depthwise,
            branch_kernels: vec![3, 5, 7],
            dctcn: DcTcnKnobs::default(),
            mlp_expand: 2,
            dropout: 0.2,
            activation: Activation::Relu,
        }
    }
}

impl ModelSpec {
    pub fn feature_width(&self) -> usize {
        8 * self.frontend_width
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::invalid(msg));
        if self.num_classes < 2 {
            return bad(format!("num_classes must be at least 2, got {}", self.num_classes));
        }
        let InputSpec { frames, height, width, channels } = self.input;
        if frames == 0 || channels == 0 {
            return bad(format!("input needs at least one frame and channel, got {:?}", self.input));
        }
        if height < 32 || width < 32 {
            return bad(format!("frontend needs an input of at least 32x32, got {height}x{width}"));
        }
        if self.frontend_variant == FrontendVariant::GhostV2 {
            // stem 7/2/3, max pool 3/2/1, then three stride-2 stages with 3x3 kernels.
            let down = |s: usize, k: usize, p: usize| (s + 2 * p - k) / 2 + 1;
            let last = |s: usize| (0..3).fold(down(down(s, 7, 3), 3, 1), |s, _| down(s, 3, 1));
            if last(height) < 2 || last(width) < 2 {
                return bad(format!("DFC attention needs a final feature map of at least 2x2; {height}x{width} input is too small"));
            }
        }
        if self.frontend_width == 0 || self.hidden_width == 0 {
            return bad("widths must be positive".into());
        }
        if self.dilations.is_empty() || self.dilations.contains(&0) {
            return bad(format!("dilations {:?} must be non-empty and positive", self.dilations));
        }
        Dropout::new(self.dropout)?;
        match self.seq_model {
            SeqModel::Partial => {
                if self.dilations.len() != 4 {
                    return bad(format!("the partial TCN has four stages, got dilations {:?}", self.dilations));
                }
                if self.dilations.windows(2).any(|w| w[0] >= w[1]) {
                    return bad(format!("partial TCN dilations {:?} must be strictly increasing", self.dilations));
                }
                if self.hidden_width != self.feature_width() {
                    return bad(format!(
                        "partial TCN width {} must equal the frontend feature width {}",
                        self.hidden_width,
                        self.feature_width()
                    ));
                }
            }
            SeqModel::Mstcn | SeqModel::Dctcn => {
                let k = self.branch_kernels.len();
                if k == 0 || self.branch_kernels.contains(&0) {
                    return bad(format!("branch kernels {:?} must be non-empty and positive", self.branch_kernels));
                }
                if self.seq_model == SeqModel::Mstcn && self.hidden_width % k != 0 {
                    return bad(format!("MS-TCN width {} is not divisible by {k} branches", self.hidden_width));
                }
                if self.seq_model == SeqModel::Dctcn && (self.dctcn.units == 0 || self.dctcn.growth % k != 0 || self.dctcn.growth == 0) {
                    return bad(format!(
                        "DC-TCN needs at least one unit and a growth divisible by {k}, got {:?}",
                        self.dctcn
                    ));
                }
            }
        }
        Ok(())
    }
}

/// A convolution that may be swapped for a Ghost or GhostV2 module.
pub enum ConvUnit<T> {
    Standard(ConvBnAct<T>),
    Ghost(Ghost<T>),
    GhostV2(GhostV2<T>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnitKind {
    Standard,
    Ghost,
    GhostV2,
}

impl<T: Scalar> ConvUnit<T> {
    /// `desc` followed by batch norm and `act`, or its Ghost replacement.
    pub fn build(path: &str, kind: UnitKind, desc: ConvDescriptor, act: Activation, knobs: &GhostKnobs, directional: Directional, init: &mut Init) -> Result<Self> {
        if kind == UnitKind::Standard {
            return Ok(ConvUnit::Standard(ConvBnAct::new(path, desc, act, init)?));
        }
        let cfg = GhostConfig {
            in_channels: desc.in_channels,
            out_channels: desc.out_channels,
            ratio: knobs.ratio,
            cheap_kernel: knobs.cheap_kernel,
            rank: desc.rank(),
            primary_kernel: match knobs.primary {
                PrimaryKernel::Pointwise => 1,
                PrimaryKernel::Inherit => desc.kernel[0],
            },
            stride: desc.stride[0],
            dilation: desc.dilation[0],
            activation: act,
        };
        Ok(match kind {
            UnitKind::Ghost => ConvUnit::Ghost(Ghost::new(path, cfg, init)?),
            _ => ConvUnit::GhostV2(GhostV2::new(path, cfg, directional, init)?),
        })
    }

    fn inner(&self) -> &dyn Module<T> {
        match self {
            ConvUnit::Standard(m) => m,
            ConvUnit::Ghost(m) => m,
            ConvUnit::GhostV2(m) => m,
        }
    }

    fn inner_mut(&mut self) -> &mut dyn Module<T> {
        match self {
            ConvUnit::Standard(m) => m,
            ConvUnit::Ghost(m) => m,
            ConvUnit::GhostV2(m) => m,
        }
    }
}

impl<T: Scalar> Module<T> for ConvUnit<T> {
    fn forward<'t>(&mut self, x: Var<'t, T>, ctx: &mut Context) -> Result<Var<'t, T>> {
        self.inner_mut().forward(x, ctx)
    }

    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.inner().visit(f)
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.inner_mut().visit_mut(f)
    }

    fn cost(&self, input: &[usize], counter: &mut CostCounter) -> Result<Vec<usize>> {
        self.inner().cost(input, counter)
    }
}

/// ResNet basic block: two 3×3 units and an identity or projection shortcut.
pub struct BasicBlock<T> {
    pub path: String,
    pub conv1: ConvUnit<T>,
    pub conv2: ConvUnit<T>,
    pub shortcut: Option<ConvBnAct<T>>,
}

impl<T: Scalar> BasicBlock<T> {
    pub fn new(path: &str, in_ch: usize, out_ch: usize, stride: usize, kind: UnitKind, knobs: &GhostKnobs, directional: Directional, init: &mut Init) -> Result<Self> {
        let first_kind = if stride > 1 && !knobs.replace_strided { UnitKind::Standard } else { kind };
        let conv1 = ConvUnit::build(
            &join(path, "conv1"),
            first_kind,
            ConvDescriptor::new([3, 3], in_ch, out_ch).with_stride([stride, stride]),
            Activation::Relu,
            knobs,
            directional,
            init,
        )?;
        let conv2 = ConvUnit::build(
            &join(path, "conv2"),
            kind,
            ConvDescriptor::new([3, 3], out_ch, out_ch),
            Activation::Identity,
            knobs,
            directional,
            init,
        )?;
        let shortcut = if stride != 1 || in_ch != out_ch {
            let desc = ConvDescriptor::pointwise(2, in_ch, out_ch).with_stride([stride, stride]);
            Some(ConvBnAct::new(&join(path, "downsample"), desc, Activation::Identity, init)?)
        } else {
            None
        };
        Ok(Self {
            path: path.to_string(),
            conv1,
            conv2,
            shortcut,
        })
    }
}

impl<T: Scalar> Module<T> for BasicBlock<T> {
    fn forward<'t>(&mut self, x: Var<'t, T>, ctx: &mut Context) -> Result<Var<'t, T>> {
        let y = self.conv1.forward(x, ctx)?;
        let y = self.conv2.forward(y, ctx)?;
        let skip = match &mut self.shortcut {
            Some(s) => s.forward(x, ctx)?,
            None => x,
        };
        let out = y.add(skip)?.relu();
        ctx.observe(&self.path, &out);
        Ok(out)
    }

    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.conv1.visit(f);
        self.conv2.visit(f);
        if let Some(s) = &self.shortcut {
            s.visit(f);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.conv1.visit_mut(f);
        self.conv2.visit_mut(f);
        if let Some(s) = &mut self.shortcut {
            s.visit_mut(f);
        }
    }

    fn cost(&self, input: &[usize], counter: &mut CostCounter) -> Result<Vec<usize>> {
        let y = self.conv1.cost(input, counter)?;
        let y = self.conv2.cost(&y, counter)?;
        if let Some(s) = &self.shortcut {
            s.cost(input, counter)?;
        }
        counter.elementwise(&join(&self.path, "residual"), 2 * y.iter().product::<usize>());
        Ok(y)
    }
}

/// 3-D stem, max-pool, per-frame residual trunk and spatial average pool.
pub struct Frontend<T> {
    pub path: String,
    pub stem: ConvBnAct<T>,
    pub trunk: Vec<BasicBlock<T>>,
    pub width: usize,
}

impl<T: Scalar> Frontend<T> {
    pub fn new(path: &str, spec: &ModelSpec, init: &mut Init) -> Result<Self> {
        let w = spec.frontend_width;
        let stem_desc = ConvDescriptor::new([5, 7, 7], spec.input.channels, w).with_stride([1, 2, 2]);
        let stem = ConvBnAct::new(&join(path, "stem"), stem_desc, Activation::Relu, init)?;
        let kind = match spec.frontend_variant {
            FrontendVariant::Standard => UnitKind::Standard,
            FrontendVariant::Ghost => UnitKind::Ghost,
            FrontendVariant::GhostV2 => UnitKind::GhostV2,
        };
        let trunk_path = join(path, "trunk");
        let mut trunk = Vec::new();
        let mut in_ch = w;
        for stage in 0..4 {
            let out_ch = w << stage;
            for index in 0..2 {
                let stride = if stage > 0 && index == 0 { 2 } else { 1 };
                let block_path = join(&trunk_path, &format!("layer{}.{index}", stage + 1));
                trunk.push(BasicBlock::new(&block_path, in_ch, out_ch, stride, kind, &spec.frontend_ghost, spec.dfc_directional, init)?);
                in_ch = out_ch;
            }
        }
        Ok(Self {
            path: path.to_string(),
            stem,
            trunk,
            width: w,
        })
    }

    pub fn feature_width(&self) -> usize {
        8 * self.width
    }

    fn check_input(&self, shape: &[usize]) -> Result<(usize, usize)> {
        if shape.len() != 5 || shape[2] == 0 {
            return Err(Error::shape(format!(
                "{}: expected a clip [N, C, T, H, W] with T > 0, got {shape:?}",
                self.path
            )));
        }
        Ok((shape[0], shape[2]))
    }
}

impl<T: Scalar> Module<T> for Frontend<T> {
    fn forward<'t>(&mut self, x: Var<'t, T>, ctx: &mut Context) -> Result<Var<'t, T>> {
        let (n, t) = self.check_input(&x.shape())?;
        let y = self.stem.forward(x, ctx)?;
        let s = y.shape();
        let (c, h, w) = (s[1], s[3], s[4]);
        let y = y.reshape([n, c * t, h, w])?.max_pool2d(3, 2, 1)?;
        let (h, w) = (y.shape()[2], y.shape()[3]);
        let mut y = y.reshape([n, c, t, h, w])?.permute(&[0, 2, 1, 3, 4])?.reshape([n * t, c, h, w])?;
        for block in &mut self.trunk {
            y = block.forward(y, ctx)?;
        }
        let f = y.shape()[1];
        y.global_avg_pool()?.reshape([n, t, f])?.permute(&[0, 2, 1])
    }

    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.stem.visit(f);
        self.trunk.iter().for_each(|b| b.visit(f));
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.stem.visit_mut(f);
        self.trunk.iter_mut().for_each(|b| b.visit_mut(f));
    }

    fn cost(&self, input: &[usize], counter: &mut CostCounter) -> Result<Vec<usize>> {
        let (n, t) = self.check_input(input)?;
        let s = self.stem.cost(input, counter)?;
        let (h, w) = ((s[3] + 2 - 3) / 2 + 1, (s[4] + 2 - 3) / 2 + 1);
        counter.elementwise(&join(&self.path, "stem.pool"), n * s[1] * t * h * w * 9);
        let mut y = vec![n * t, s[1], h, w];
        for block in &self.trunk {
            y = block.cost(&y, counter)?;
        }
        counter.elementwise(&join(&self.path, "pool"), y.iter().product());
        Ok(vec![n, y[1], t])
    }
}

/// Causal 1-D convolution unit (standard or Ghost) used by the TCN baselines.
fn temporal_unit<T: Scalar>(path: &str, spec: &ModelSpec, k: usize, d: usize, in_ch: usize, out_ch: usize, init: &mut Init) -> Result<ConvUnit<T>> {
    let kind = if spec.seq_ghost { UnitKind::Ghost } else { UnitKind::Standard };
    let desc = ConvDescriptor::causal(k, d, in_ch, out_ch);
    ConvUnit::build(path, kind, desc, spec.activation, &spec.seq_ghost_knobs, Directional::Depthwise, init)
}

/// Parallel causal branches with different kernels, concatenated.
pub struct MultiBranch<T> {
    pub branches: Vec<ConvUnit<T>>,
}

impl<T: Scalar> MultiBranch<T> {
    fn new(path: &str, spec: &ModelSpec, d: usize, in_ch: usize, out_ch: usize, init: &mut Init) -> Result<Self> {
        let per = out_ch / spec.branch_kernels.len();
        let branches = spec
            .branch_kernels
            .iter()
            .map(|&k| temporal_unit(&join(path, &format!("k{k}")), spec, k, d, in_ch, per, init))
            .collect::<Result<_>>()?;
        Ok(Self { branches })
    }
}

impl<T: Scalar> Module<T> for MultiBranch<T> {
    fn forward<'t>(&mut self, x: Var<'t, T>, ctx: &mut Context) -> Result<Var<'t, T>> {
        let outs = self.branches.iter_mut().map(|b| b.forward(x, ctx)).collect::<Result<Vec<_>>>()?;
        concat_channels(&outs)
    }

    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.branches.iter().for_each(|b| b.visit(f));
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.branches.iter_mut().for_each(|b| b.visit_mut(f));
    }

    fn cost(&self, input: &[usize], counter: &mut CostCounter) -> Result<Vec<usize>> {
        let mut out = input.to_vec();
        out[1] = 0;
        for b in &self.branches {
            let o = b.cost(input, counter)?;
            out[1] += o[1];
            out[2] = o[2];
        }
        Ok(out)
    }
}

/// Multi-scale temporal block: two multi-branch layers and a residual connection.
pub struct MsTcnBlock<T> {
    pub path: String,
    pub layers: [MultiBranch<T>; 2],
    pub downsample: Option<Conv<T>>,
    pub dropout: Dropout,
}

impl<T: Scalar> MsTcnBlock<T> {
    pub fn new(path: &str, spec: &ModelSpec, d: usize, in_ch: usize, init: &mut Init) -> Result<Self> {
        let h = spec.hidden_width;
        Ok(Self {
            path: path.to_string(),
            layers: [
                MultiBranch::new(&join(path, "conv1"), spec, d, in_ch, h, init)?,
                MultiBranch::new(&join(path, "conv2"), spec, d, h, h, init)?,
            ],
            downsample: (in_ch != h)
                .then(|| Conv::new(join(path, "downsample"), ConvDescriptor::pointwise(1, in_ch, h), true, init))
                .transpose()?,
            dropout: Dropout::new(spec.dropout)?,
        })
    }
}

impl<T: Scalar> Module<T> for MsTcnBlock<T> {
    fn forward<'t>(&mut self, x: Var<'t, T>, ctx: &mut Context) -> Result<Var<'t, T>> {
        let mut y = x;
        for layer in &mut self.layers {
            y = layer.forward(y, ctx)?;
            y = self.dropout.apply(y, ctx)?;
        }
        let skip = match &mut self.downsample {
            Some(ds) => ds.forward(x, ctx)?,
            None => x,
        };
        let out = y.add(skip)?.relu();
        ctx.observe(&self.path, &out);
        Ok(out)
    }

    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.layers.iter().for_each(|l| l.visit(f));
        if let Some(ds) = &self.downsample {
            ds.visit(f);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.layers.iter_mut().for_each(|l| l.visit_mut(f));
        if let Some(ds) = &mut self.downsample {
            ds.visit_mut(f);
        }
    }

    fn cost(&self, input: &[usize], counter: &mut CostCounter) -> Result<Vec<usize>> {
        let y = self.layers[0].cost(input, counter)?;
        let y = self.layers[1].cost(&y, counter)?;
        if let Some(ds) = &self.downsample {
            ds.cost(input, counter)?;
        }
        counter.elementwise(&join(&self.path, "residual"), 2 * y.iter().product::<usize>());
        Ok(y)
    }
}

/// Densely connected block: every unit appends `growth` channels to its input.
pub struct DenseBlock<T> {
    pub path: String,
    pub units: Vec<[MultiBranch<T>; 2]>,
    pub transition: ConvBnAct<T>,
    pub dropout: Dropout,
}

impl<T: Scalar> DenseBlock<T> {
    pub fn new(path: &str, spec: &ModelSpec, d: usize, in_ch: usize, init: &mut Init) -> Result<Self> {
        let g = spec.dctcn.growth;
        let mut units = Vec::new();
        let mut width = in_ch;
        for u in 0..spec.dctcn.units {
            let unit_path = join(path, &format!("unit{u}"));
            units.push([
                MultiBranch::new(&join(&unit_path, "conv1"), spec, d, width, g, init)?,
                MultiBranch::new(&join(&unit_path, "conv2"), spec, d, g, g, init)?,
            ]);
            width += g;
        }
        let transition = ConvBnAct::new(
            &join(path, "transition"),
            ConvDescriptor::pointwise(1, width, spec.hidden_width),
            spec.activation,
            init,
        )?;
        Ok(Self {
            path: path.to_string(),
            units,
            transition,
            dropout: Dropout::new(spec.dropout)?,
        })
    }
}

impl<T: Scalar> Module<T> for DenseBlock<T> {
    fn forward<'t>(&mut self, x: Var<'t, T>, ctx: &mut Context) -> Result<Var<'t, T>> {
        let mut features = x;
        for unit in &mut self.units {
            let mut y = features;
            for layer in unit.iter_mut() {
                y = layer.forward(y, ctx)?;
                y = self.dropout.apply(y, ctx)?;
            }
            features = concat_channels(&[features, y])?;
        }
        let out = self.transition.forward(features, ctx)?;
        ctx.observe(&self.path, &out);
        Ok(out)
    }

    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        for unit in &self.units {
            unit.iter().for_each(|l| l.visit(f));
        }
        self.transition.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        for unit in &mut self.units {
            unit.iter_mut().for_each(|l| l.visit_mut(f));
        }
        self.transition.visit_mut(f);
    }

    fn cost(&self, input: &[usize], counter: &mut CostCounter) -> Result<Vec<usize>> {
        let mut features = input.to_vec();
        for unit in &self.units {
            let y = unit[0].cost(&features, counter)?;
            let y = unit[1].cost(&y, counter)?;
            features[1] += y[1];
        }
        self.transition.cost(&features, counter)
    }
}

/// Builds the sequence model named by `spec.seq_model`; returns it with its output width.
pub fn build_sequence<T: Scalar>(path: &str, spec: &ModelSpec, init: &mut Init) -> Result<(Sequential<T>, usize)> {
    spec.validate()?;
    let mut seq = Sequential::new();
    let mut width = spec.feature_width();
    for (i, &d) in spec.dilations.iter().enumerate() {
        let block_path = join(path, &format!("block{i}"));
        match spec.seq_model {
            SeqModel::Mstcn => seq.push(MsTcnBlock::new(&block_path, spec, d, width, init)?),
            SeqModel::Dctcn => seq.push(DenseBlock::new(&block_path, spec, d, width, init)?),
            SeqModel::Partial => {
                let cfg = PartialBlockConfig {
                    channels: width,
                    ratio: spec.ratio,
                    core: spec.partial_core,
                    kernel: spec.kernel,
                    dilation: d,
                    dropout: spec.dropout,
                    activation: spec.activation,
                    mlp_expand: spec.mlp_expand,
                    shuffle_groups: 2,
                };
                seq.push(PartialBlock::new(&block_path, cfg, init)?);
            }
        }
        width = spec.hidden_width;
    }
    Ok((seq, width))
}

/// Frontend, sequence model, temporal mean and linear classifier.
pub struct VsrModel<T> {
    pub spec: ModelSpec,
    pub frontend: Frontend<T>,
    pub sequence: Sequential<T>,
    pub head: Linear<T>,
}

impl<T: Scalar> VsrModel<T> {
    pub fn build(spec: &ModelSpec, init: &mut Init) -> Result<Self> {
        spec.validate()?;
        let frontend = Frontend::new("frontend", spec, init)?;
        let (sequence, width) = build_sequence("sequence", spec, init)?;
        let head = Linear::new("head.fc".into(), width, spec.num_classes, init);
        let model = Self {
            spec: spec.clone(),
            frontend,
            sequence,
            head,
        };
        // Shape-checks every layer against the configured input.
        model.cost_report(CountingConvention::default())?;
        Ok(model)
    }

    /// Costs per clip for `spec.input`.
    pub fn cost_report(&self, convention: CountingConvention) -> Result<CostReport> {
        let mut counter = CostCounter::new(convention);
        self.cost(&self.spec.input.clip_shape(), &mut counter)?;
        Ok(counter.finish(self.spec.input))
    }

    /// Class probabilities `[N, num_classes]`.
    pub fn forward_vsr<'t>(&mut self, clip: Var<'t, T>, ctx: &mut Context) -> Result<Var<'t, T>> {
        self.forward(clip, ctx)?.softmax(1)
    }

    /// Features of the frontend alone, `[N, F, T]`.
    pub fn features<'t>(&mut self, clip: Var<'t, T>, ctx: &mut Context) -> Result<Var<'t, T>> {
        self.frontend.forward(clip, ctx)
    }
}

impl<T: Scalar> Module<T> for VsrModel<T> {
    /// Logits `[N, num_classes]`.
    fn forward<'t>(&mut self, x: Var<'t, T>, ctx: &mut Context) -> Result<Var<'t, T>> {
        let f = self.frontend.forward(x, ctx)?;
        let s = self.sequence.forward(f, ctx)?;
        let pooled = s.mean_axis(2)?;
        self.head.forward(pooled, ctx)
    }

    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.frontend.visit(f);
        self.sequence.visit(f);
        self.head.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.frontend.visit_mut(f);
        self.sequence.visit_mut(f);
        self.head.visit_mut(f);
    }

    fn cost(&self, input: &[usize], counter: &mut CostCounter) -> Result<Vec<usize>> {
        let f = self.frontend.cost(input, counter)?;
        let s = self.sequence.cost(&f, counter)?;
        counter.elementwise("head.pool", s.iter().product());
        self.head.cost(&[s[0], s[1]], counter)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::count_trainable;

    fn report(spec: &ModelSpec) -> CostReport {
        VsrModel::<f32>::build(spec, &mut Init::zeros()).unwrap().cost_report(CountingConvention::default()).unwrap()
    }

    #[test]
    fn standard_trunk_costs() {
        let r = report(&ModelSpec::default());
        let (p, m) = r.subtotal("frontend.trunk");
        assert!((p as f64 / 1e6 - 11.17).abs() < 0.01, "{p}");
        assert!((m as f64 / 1e9 - 8.29).abs() < 0.01, "{m}");
    }

    #[test]
    fn registry_matches_cost_model() {
        for seq_model in [SeqModel::Mstcn, SeqModel::Dctcn, SeqModel::Partial] {
            let spec = ModelSpec {
                seq_model,
                hidden_width: if seq_model == SeqModel::Partial { 512 } else { 96 },
                dctcn: DcTcnKnobs { growth: 24, units: 2 },
                seq_ghost: true,
                frontend_variant: FrontendVariant::Ghost,
                ..Default::default()
            };
            let model = VsrModel::<f32>::build(&spec, &mut Init::zeros()).unwrap();
            let r = model.cost_report(CountingConvention::default()).unwrap();
            assert_eq!(r.total_params as usize, count_trainable(&model));
        }
    }

    #[test]
    fn rejects_bad_specs() {
        let bad = [
            ModelSpec { num_classes: 1, ..Default::default() },
            ModelSpec { dilations: vec![1, 2, 2, 4], ..Default::default() },
            ModelSpec { dilations: vec![1, 2, 4], ..Default::default() },
            ModelSpec { seq_model: SeqModel::Mstcn, hidden_width: 100, ..Default::default() },
            ModelSpec { input: InputSpec { height: 16, ..Default::default() }, ..Default::default() },
        ];
        for spec in bad {
            assert!(VsrModel::<f32>::build(&spec, &mut Init::zeros()).is_err(), "{spec:?}");
        }
    }

    #[test]
    fn ghostv2_needs_room_for_attention() {
        let at = |side| ModelSpec {
            frontend_variant: FrontendVariant::GhostV2,
            frontend_width: 4,
            hidden_width: 32,
            input: InputSpec { height: side, width: side, ..Default::default() },
            ..Default::default()
        };
        assert!(matches!(at(32).validate(), Err(Error::InvalidArgument(_))));
        VsrModel::<f32>::build(&at(33), &mut Init::zeros()).unwrap();
    }
}
