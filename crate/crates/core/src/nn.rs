//! Parameter containers and leaf layers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{ParamId, Tape, Var};
use crate::conv::{ConvAlgorithm, ConvDescriptor};
use crate::cost::CostCounter;
use crate::error::{Error, Result};
use crate::ops::{BN_EPSILON, BN_MOMENTUM};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Trainable,
    /// Non-trainable state such as batch-norm running statistics.
    Buffer,
}

/// A named tensor owned by a layer.
#[derive(Clone, Debug)]
pub struct Param<T> {
    pub id: ParamId,
    pub name: String,
    pub kind: ParamKind,
    pub tensor: Tensor<T>,
}

impl<T: Scalar> Param<T> {
    pub fn is_trainable(&self) -> bool {
        self.kind == ParamKind::Trainable
    }

    pub fn bind<'t>(&self, tape: &'t Tape<T>) -> Var<'t, T> {
        tape.param(self.id, &self.tensor)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Train,
    Eval,
}

/// Per-evaluation state: mode, dropout randomness and diagnostics.
pub struct Context {
    pub mode: Mode,
    pub algorithm: ConvAlgorithm,
    rng: ChaCha8Rng,
    check_finite: bool,
    first_non_finite: Option<String>,
}

impl Context {
    pub fn new(mode: Mode, seed: u64) -> Self {
        Self {
            mode,
            algorithm: ConvAlgorithm::Auto,
            rng: ChaCha8Rng::seed_from_u64(seed),
            check_finite: false,
            first_non_finite: None,
        }
    }

    pub fn train(seed: u64) -> Self {
        Self::new(Mode::Train, seed)
    }

    pub fn eval() -> Self {
        Self::new(Mode::Eval, 0)
    }

    pub fn is_train(&self) -> bool {
        self.mode == Mode::Train
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    /// Records the first layer whose output contains a non-finite value.
    pub fn with_finite_checks(mut self) -> Self {
        self.check_finite = true;
        self
    }

    pub fn first_non_finite(&self) -> Option<&str> {
        self.first_non_finite.as_deref()
    }

    pub(crate) fn observe<T: Scalar>(&mut self, path: &str, out: &Var<'_, T>) {
        if self.check_finite && self.first_non_finite.is_none() && !out.value().is_finite() {
            self.first_non_finite = Some(path.to_string());
        }
    }
}

/// Anything that owns parameters, runs forward and can be costed.
pub trait Module<T: Scalar> {
    fn forward<'t>(&mut self, x: Var<'t, T>, ctx: &mut Context) -> Result<Var<'t, T>>;

    fn visit(&self, f: &mut dyn FnMut(&Param<T>));

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>));

    /// Records per-layer cost rows for an input of `input` shape and returns the output shape.
    fn cost(&self, input: &[usize], counter: &mut CostCounter) -> Result<Vec<usize>>;
}

/// Creates named parameters with sequential ids.
pub struct Init {
    rng: ChaCha8Rng,
    next_id: usize,
    zeros: bool,
}

impl Init {
    /// Kaiming-normal convolutions, unit batch-norm scales.
    pub fn seeded(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            next_id: 0,
            zeros: false,
        }
    }

    /// All weights zero (and BN scales one); fast, used for shape and cost analysis.
    pub fn zeros() -> Self {
        Self {
            zeros: true,
            ..Self::seeded(0)
        }
    }

    fn make<T: Scalar>(&mut self, name: String, kind: ParamKind, tensor: Tensor<T>) -> Param<T> {
        let id = ParamId(self.next_id);
        self.next_id += 1;
        Param {
            id,
            name,
            kind,
            tensor: tensor.with_requires_grad(kind == ParamKind::Trainable),
        }
    }

    pub fn normal<T: Scalar>(&mut self, name: String, shape: Vec<usize>, std: f64) -> Param<T> {
        let tensor = if self.zeros {
            Tensor::zeros(shape)
        } else {
            Tensor::randn(shape, std, &mut self.rng)
        };
        self.make(name, ParamKind::Trainable, tensor)
    }

    pub fn constant<T: Scalar>(&mut self, name: String, shape: Vec<usize>, value: f64, kind: ParamKind) -> Param<T> {
        self.make(name, kind, Tensor::full(shape, T::from_f64_lossy(value)))
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Elementwise nonlinearity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
    Sigmoid,
    Identity,
}

impl Activation {
    pub fn apply<'t, T: Scalar>(self, x: Var<'t, T>) -> Var<'t, T> {
        match self {
            Activation::Relu => x.relu(),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => x.sigmoid(),
            Activation::Identity => x,
        }
    }

    pub(crate) fn cost(self, path: &str, shape: &[usize], counter: &mut CostCounter) {
        if self != Activation::Identity {
            counter.elementwise(path, shape.iter().product());
        }
    }
}

#[derive(Clone, Debug)]
pub struct Conv<T> {
    pub path: String,
    pub desc: ConvDescriptor,
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
}

impl<T: Scalar> Conv<T> {
    pub fn new(path: String, desc: ConvDescriptor, bias: bool, init: &mut Init) -> Result<Self> {
        desc.validate()?;
        let fan_in = (desc.in_per_group() * desc.kernel_volume()) as f64;
        let weight = init.normal(join(&path, "weight"), desc.weight_shape(), (2.0 / fan_in).sqrt());
        let bias = bias.then(|| init.constant(join(&path, "bias"), vec![desc.out_channels], 0.0, ParamKind::Trainable));
        Ok(Self { path, desc, weight, bias })
    }
}

impl<T: Scalar> Module<T> for Conv<T> {
    fn forward<'t>(&mut self, x: Var<'t, T>, ctx: &mut Context) -> Result<Var<'t, T>> {
        let tape = x.tape();
        let w = self.weight.bind(tape);
        let b = self.bias.as_ref().map(|b| b.bind(tape));
        let out = x.conv_with(&self.desc, w, b, ctx.algorithm).map_err(|e| annotate(e, &self.path))?;
        ctx.observe(&self.path, &out);
        Ok(out)
    }

    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        f(&self.weight);
        if let Some(b) = &self.bias {
            f(b);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.weight);
        if let Some(b) = &mut self.bias {
            f(b);
        }
    }

    fn cost(&self, input: &[usize], counter: &mut CostCounter) -> Result<Vec<usize>> {
        let out = self.desc.output_shape(input).map_err(|e| annotate(e, &self.path))?;
        counter.conv(&self.path, &self.desc, self.bias.is_some(), &out);
        Ok(out)
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm<T> {
    pub path: String,
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Param<T>,
    pub running_var: Param<T>,
}

impl<T: Scalar> BatchNorm<T> {
    pub fn new(path: String, channels: usize, init: &mut Init) -> Self {
        Self {
            gamma: init.constant(join(&path, "weight"), vec![channels], 1.0, ParamKind::Trainable),
            beta: init.constant(join(&path, "bias"), vec![channels], 0.0, ParamKind::Trainable),
            running_mean: init.constant(join(&path, "running_mean"), vec![channels], 0.0, ParamKind::Buffer),
            running_var: init.constant(join(&path, "running_var"), vec![channels], 1.0, ParamKind::Buffer),
            path,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.tensor.numel()
    }
}

impl<T: Scalar> Module<T> for BatchNorm<T> {
    fn forward<'t>(&mut self, x: Var<'t, T>, ctx: &mut Context) -> Result<Var<'t, T>> {
        let tape = x.tape();
        let (g, b) = (self.gamma.bind(tape), self.beta.bind(tape));
        let out = x
            .batch_norm(
                g,
                b,
                self.running_mean.tensor.data_mut(),
                self.running_var.tensor.data_mut(),
                ctx.is_train(),
                BN_MOMENTUM,
                BN_EPSILON,
            )
            .map_err(|e| annotate(e, &self.path))?;
        ctx.observe(&self.path, &out);
        Ok(out)
    }

    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        f(&self.gamma);
        f(&self.beta);
        f(&self.running_mean);
        f(&self.running_var);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.gamma);
        f(&mut self.beta);
        f(&mut self.running_mean);
        f(&mut self.running_var);
    }

    fn cost(&self, input: &[usize], counter: &mut CostCounter) -> Result<Vec<usize>> {
        if input.get(1) != Some(&self.channels()) {
            return Err(Error::shape(format!(
                "{}: batch norm over {} channels got input {input:?}",
                self.path,
                self.channels()
            )));
        }
        counter.batch_norm(&self.path, self.channels(), input.iter().product());
        Ok(input.to_vec())
    }
}

/// `x[N, F] -> x · W[F, K] + b[K]`.
#[derive(Clone, Debug)]
pub struct Linear<T> {
    pub path: String,
    pub weight: Param<T>,
    pub bias: Param<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn new(path: String, in_features: usize, out_features: usize, init: &mut Init) -> Self {
        Self {
            weight: init.normal(join(&path, "weight"), vec![in_features, out_features], (1.0 / in_features as f64).sqrt()),
            bias: init.constant(join(&path, "bias"), vec![out_features], 0.0, ParamKind::Trainable),
            path,
        }
    }

    pub fn in_features(&self) -> usize {
        self.weight.tensor.shape()[0]
    }

    pub fn out_features(&self) -> usize {
        self.weight.tensor.shape()[1]
    }
}

impl<T: Scalar> Module<T> for Linear<T> {
    fn forward<'t>(&mut self, x: Var<'t, T>, ctx: &mut Context) -> Result<Var<'t, T>> {
        let tape = x.tape();
        let out = x
            .linear(self.weight.bind(tape), Some(self.bias.bind(tape)))
            .map_err(|e| annotate(e, &self.path))?;
        ctx.observe(&self.path, &out);
        Ok(out)
    }

    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        f(&self.weight);
        f(&self.bias);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }

    fn cost(&self, input: &[usize], counter: &mut CostCounter) -> Result<Vec<usize>> {
        if input.len() != 2 || input[1] != self.in_features() {
            return Err(Error::shape(format!(
                "{}: linear layer with {} inputs got shape {input:?}",
                self.path,
                self.in_features()
            )));
        }
        counter.linear(&self.path, self.in_features(), self.out_features(), input[0]);
        Ok(vec![input[0], self.out_features()])
    }
}

pub(crate) fn annotate(err: Error, path: &str) -> Error {
    match err {
        Error::Shape(msg) => Error::Shape(format!("{path}: {msg}")),
        Error::InvalidArgument(msg) => Error::InvalidArgument(format!("{path}: {msg}")),
        other => other,
    }
}

/// Total element count of trainable tensors, by walking the registry.
pub fn count_trainable<T: Scalar, M: Module<T> + ?Sized>(module: &M) -> usize {
    let mut total = 0;
    module.visit(&mut |p| {
        if p.is_trainable() {
            total += p.tensor.numel();
        }
    });
    total
}

pub fn zero_grad<T: Scalar, M: Module<T> + ?Sized>(module: &mut M) {
    module.visit_mut(&mut |p| p.tensor.zero_grad());
}

/// Adds the gradients of one backward pass into every parameter's grad buffer.
pub fn accumulate_grads<T: Scalar, M: Module<T> + ?Sized>(
    module: &mut M,
    grads: &crate::autograd::Gradients<T>,
) -> Result<()> {
    let mut result = Ok(());
    module.visit_mut(&mut |p| {
        if let Some(g) = grads.param(p.id) {
            if let Err(e) = p.tensor.accumulate_grad(g) {
                result = Err(e);
            }
        }
    });
    result
}

/// Convolution, batch norm and activation.
#[derive(Clone, Debug)]
pub struct ConvBnAct<T> {
    pub conv: Conv<T>,
    pub bn: BatchNorm<T>,
    pub act: Activation,
}

impl<T: Scalar> ConvBnAct<T> {
    /// Layers are named `{path}.conv` and `{path}.bn`; the convolution has no bias.
    pub fn new(path: &str, desc: ConvDescriptor, act: Activation, init: &mut Init) -> Result<Self> {
        let channels = desc.out_channels;
        Ok(Self {
            conv: Conv::new(join(path, "conv"), desc, false, init)?,
            bn: BatchNorm::new(join(path, "bn"), channels, init),
            act,
        })
    }
}

impl<T: Scalar> Module<T> for ConvBnAct<T> {
    fn forward<'t>(&mut self, x: Var<'t, T>, ctx: &mut Context) -> Result<Var<'t, T>> {
        let y = self.conv.forward(x, ctx)?;
        let y = self.bn.forward(y, ctx)?;
        Ok(self.act.apply(y))
    }

    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.conv.visit(f);
        self.bn.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.conv.visit_mut(f);
        self.bn.visit_mut(f);
    }

    fn cost(&self, input: &[usize], counter: &mut CostCounter) -> Result<Vec<usize>> {
        let out = self.conv.cost(input, counter)?;
        let out = self.bn.cost(&out, counter)?;
        self.act.cost(&self.bn.path, &out, counter);
        Ok(out)
    }
}

/// Inverted dropout, active only in training mode.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dropout {
    pub p: f64,
}

impl Dropout {
    pub fn new(p: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::invalid(format!("dropout rate {p} outside [0, 1)")));
        }
        Ok(Self { p })
    }

    pub fn apply<'t, T: Scalar>(&self, x: Var<'t, T>, ctx: &mut Context) -> Result<Var<'t, T>> {
        if ctx.is_train() && self.p > 0.0 {
            x.dropout(self.p, ctx.rng())
        } else {
            Ok(x)
        }
    }
}

/// Modules applied in order.
#[derive(Default)]
pub struct Sequential<T> {
    pub layers: Vec<Box<dyn Module<T>>>,
}

impl<T: Scalar> Sequential<T> {
    pub fn new() -> Self {
        Self { layers: Vec::new() }
    }

    pub fn push(&mut self, layer: impl Module<T> + 'static) {
        self.layers.push(Box::new(layer));
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }
}

impl<T: Scalar> Module<T> for Sequential<T> {
    fn forward<'t>(&mut self, mut x: Var<'t, T>, ctx: &mut Context) -> Result<Var<'t, T>> {
        for layer in &mut self.layers {
            x = layer.forward(x, ctx)?;
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
        let mut shape = input.to_vec();
        for layer in &self.layers {
            shape = layer.cost(&shape, counter)?;
        }
        Ok(shape)
    }
}

/// Runs `module` once on a batch and returns the output value; convenient for inference and tests.
pub fn run<T: Scalar, M: Module<T> + ?Sized>(
    module: &mut M,
    input: &Tensor<T>,
    ctx: &mut Context,
) -> Result<Tensor<T>> {
    let tape = Tape::new();
    let x = tape.constant(input.clone());
    let y = module.forward(x, ctx)?;
    Ok((*y.value()).clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn param_ids_are_sequential_and_unique() {
        let mut init = Init::seeded(1);
        let c: ConvBnAct<f64> =
            ConvBnAct::new("block", ConvDescriptor::new([3, 3], 2, 4), Activation::Relu, &mut init).unwrap();
        let mut ids = Vec::new();
        let mut names = Vec::new();
        c.visit(&mut |p| {
            ids.push(p.id.0);
            names.push(p.name.clone());
        });
        assert_eq!(ids, vec![0, 1, 2, 3, 4]);
        assert_eq!(names[0], "block.conv.weight");
        assert_eq!(names[4], "block.bn.running_var");
        assert_eq!(count_trainable(&c), 2 * 4 * 9 + 8);
    }

    #[test]
    fn registry_count_matches_cost_model() {
        let mut init = Init::zeros();
        let mut seq = Sequential::<f32>::new();
        seq.push(ConvBnAct::new("a", ConvDescriptor::new([3, 3], 3, 8), Activation::Relu, &mut init).unwrap());
        seq.push(Conv::new("b".into(), ConvDescriptor::pointwise(2, 8, 4), true, &mut init).unwrap());
        let mut counter = CostCounter::new(Default::default());
        let out = seq.cost(&[1, 3, 6, 6], &mut counter).unwrap();
        assert_eq!(out, vec![1, 4, 6, 6]);
        let report = counter.finish(Default::default());
        assert_eq!(report.total_params as usize, count_trainable(&seq));
    }

    #[test]
    fn dropout_is_identity_in_eval() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::ones([4]));
        let mut ctx = Context::eval();
        let y = Dropout::new(0.5).unwrap().apply(x, &mut ctx).unwrap();
        assert_eq!(y.value().data(), &[1.0; 4]);
    }
}
