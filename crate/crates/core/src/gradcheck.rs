//! Central-difference gradient checks for modules.
//!
//! The loss is `sum(output * R)` for a fixed random `R`. Every trainable tensor
//! and the input are checked; large tensors are sampled. The error of a tensor
//! is `||analytic - numeric|| / max(||analytic||, ||numeric||, floor)`, where the
//! floor keeps gradients that are zero by construction (for instance a bias
//! followed by batch normalization) from turning finite-difference noise into
//! a large relative error.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::architectures::{BasicBlock, DcTcnKnobs, DenseBlock, GhostKnobs, ModelSpec, MsTcnBlock, UnitKind};
use crate::autograd::Tape;
use crate::blocks::{CoreKind, Dfc, DfcConfig, Directional, Ghost, GhostConfig, GhostV2, PartialBlock, PartialBlockConfig, PrimaryKernel};
use crate::error::Result;
use crate::conv::ConvDescriptor;
use crate::nn::{BatchNorm, Context, Conv, Init, Linear, Module};
use crate::scalar::{Precision, Scalar};
use crate::tensor::Tensor;

/// Elements checked per tensor at most.
pub const MAX_CHECKED: usize = 24;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub name: String,
    /// Worst per-tensor relative error.
    pub max_error: f64,
    /// Tensor with the worst error.
    pub worst: String,
    pub checked: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_error < self.tolerance
    }
}

fn floor<T: Scalar>() -> f64 {
    match T::PRECISION {
        Precision::High => 1e-3,
        Precision::Standard => 1e-1,
    }
}

fn loss<T: Scalar, M: Module<T> + ?Sized>(module: &mut M, input: &Tensor<T>, weights: &Tensor<T>) -> Result<f64> {
    let tape = Tape::new();
    let x = tape.constant(input.clone());
    let y = module.forward(x, &mut Context::train(0))?;
    // Accumulated in f64 so the f32 path is not dominated by summation error.
    Ok(y.value().data().iter().zip(weights.data()).map(|(a, b)| a.to_f64_lossy() * b.to_f64_lossy()).sum())
}

/// Checks `module` (with dropout disabled) on `input`, in training mode.
pub fn check_module<T: Scalar, M: Module<T> + ?Sized>(
    name: &str,
    module: &mut M,
    input: &Tensor<T>,
    tolerance: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tape = Tape::new();
    let x = tape.var(input.clone());
    let y = module.forward(x, &mut Context::train(0))?;
    let weights = Tensor::randn(y.shape(), 1.0, &mut rng);
    let grads = tape.backward(y.weighted_sum(&weights)?)?;

    let mut targets: Vec<(String, Vec<f64>, Option<crate::autograd::ParamId>)> = Vec::new();
    let input_grad = grads.wrt(x).map(|g| g.iter().map(|v| v.to_f64_lossy()).collect()).unwrap_or_else(|| vec![0.0; input.numel()]);
    targets.push(("input".into(), input_grad, None));
    module.visit(&mut |p| {
        if p.is_trainable() {
            let g = grads
                .param(p.id)
                .map(|g| g.iter().map(|v| v.to_f64_lossy()).collect())
                .unwrap_or_else(|| vec![0.0; p.tensor.numel()]);
            targets.push((p.name.clone(), g, Some(p.id)));
        }
    });

    let h = T::FD_STEP;
    let mut report = GradCheckReport {
        name: name.to_string(),
        max_error: 0.0,
        worst: String::new(),
        checked: 0,
        tolerance,
    };
    let mut probe = input.clone();
    for (tensor_name, analytic, id) in targets {
        let picks: Vec<usize> = if analytic.len() <= MAX_CHECKED {
            (0..analytic.len()).collect()
        } else {
            let mut v = sample(&mut rng, analytic.len(), MAX_CHECKED).into_vec();
            v.sort_unstable();
            v
        };
        let (mut diff, mut a_norm, mut n_norm) = (0.0f64, 0.0f64, 0.0f64);
        for &i in &picks {
            let mut eval = |delta: f64| -> Result<f64> {
                match id {
                    None => {
                        let orig = probe.data()[i];
                        probe.data_mut()[i] = orig + T::from_f64_lossy(delta);
                        let l = loss(module, &probe, &weights);
                        probe.data_mut()[i] = orig;
                        l
                    }
                    Some(pid) => {
                        let mut orig = None;
                        module.visit_mut(&mut |p| {
                            if p.id == pid {
                                let v = p.tensor.data()[i];
                                orig = Some(v);
                                p.tensor.data_mut()[i] = v + T::from_f64_lossy(delta);
                            }
                        });
                        let l = loss(module, input, &weights);
                        module.visit_mut(&mut |p| {
                            if p.id == pid {
                                p.tensor.data_mut()[i] = orig.unwrap();
                            }
                        });
                        l
                    }
                }
            };
            let hv = h.to_f64_lossy();
            let numeric = (eval(hv)? - eval(-hv)?) / (2.0 * hv);
            diff += (analytic[i] - numeric).powi(2);
            a_norm += analytic[i].powi(2);
            n_norm += numeric.powi(2);
            report.checked += 1;
        }
        let err = diff.sqrt() / a_norm.sqrt().max(n_norm.sqrt()).max(floor::<T>());
        if err > report.max_error || report.worst.is_empty() {
            report.max_error = report.max_error.max(err);
            if err >= report.max_error {
                report.worst = tensor_name;
            }
        }
    }
    Ok(report)
}

/// A named module together with an input to check it on.
pub struct Case<T> {
    pub name: &'static str,
    pub module: Box<dyn Module<T>>,
    pub input: Tensor<T>,
}

fn tiny_tcn_spec() -> ModelSpec {
    ModelSpec {
        hidden_width: 6,
        dropout: 0.0,
        dctcn: DcTcnKnobs { growth: 6, units: 2 },
        ..ModelSpec::default()
    }
}

/// Which modules to check.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    /// Single parametrised layers without kinks; meaningful in both precisions.
    Ops,
    /// Every composite block; requires high precision.
    Blocks,
}

/// Each parametrised layer kind on small random shapes.
pub fn op_suite<T: Scalar>(seed: u64) -> Result<Vec<Case<T>>> {
    let mut init = Init::seeded(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut input = |shape: &[usize]| Tensor::<T>::randn(shape.to_vec(), 1.0, &mut rng);
    let conv2d = ConvDescriptor::new([3, 3], 4, 6).with_stride([2, 1]);
    let conv3d = ConvDescriptor::new([3, 3, 3], 2, 3).with_stride([1, 2, 2]);
    let grouped = ConvDescriptor::new([3, 3], 4, 4).with_groups(4).with_dilation([2, 1]);
    let causal = ConvDescriptor::causal(3, 2, 4, 5);
    Ok(vec![
        Case { name: "conv2d", module: Box::new(Conv::new("conv".into(), conv2d, true, &mut init)?), input: input(&[2, 4, 5, 5]) },
        Case { name: "conv3d", module: Box::new(Conv::new("conv".into(), conv3d, false, &mut init)?), input: input(&[1, 2, 3, 5, 5]) },
        Case { name: "conv-depthwise", module: Box::new(Conv::new("conv".into(), grouped, false, &mut init)?), input: input(&[2, 4, 6, 4]) },
        Case { name: "conv-causal", module: Box::new(Conv::new("conv".into(), causal, true, &mut init)?), input: input(&[2, 4, 7]) },
        Case { name: "batch-norm", module: Box::new(BatchNorm::new("bn".into(), 3, &mut init)), input: input(&[4, 3, 5]) },
        Case { name: "linear", module: Box::new(Linear::new("fc".into(), 5, 3, &mut init)), input: input(&[4, 5]) },
    ])
}

/// Every block of the library on small random shapes, dropout disabled.
pub fn block_suite<T: Scalar>(seed: u64) -> Result<Vec<Case<T>>> {
    let mut init = Init::seeded(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut input = |shape: &[usize]| Tensor::<T>::randn(shape.to_vec(), 1.0, &mut rng);
    let partial = |core| PartialBlockConfig {
        channels: 8,
        ratio: 0.75,
        core,
        kernel: 3,
        dilation: 2,
        dropout: 0.0,
        ..Default::default()
    };
    let ghost1d = GhostConfig {
        primary_kernel: 3,
        dilation: 2,
        ..GhostConfig::new(1, 4, 8)
    };
    let ghost_knobs = GhostKnobs {
        ratio: 0.25,
        primary: PrimaryKernel::Inherit,
        ..Default::default()
    };
    let tcn = tiny_tcn_spec();
    let ghost_tcn = ModelSpec { seq_ghost: true, ..tcn.clone() };
    let dfc = DfcConfig { in_channels: 3, out_channels: 4, ..Default::default() };
    let std_knobs = GhostKnobs::default();
    let mut cases: Vec<Case<T>> = Vec::new();
    let mut push = |name, module: Box<dyn Module<T>>, input| cases.push(Case { name, module, input });
    push("ghost-2d", Box::new(Ghost::new("ghost", GhostConfig::new(2, 4, 8), &mut init)?), input(&[2, 4, 5, 5]));
    push("ghost-1d", Box::new(Ghost::new("ghost", ghost1d, &mut init)?), input(&[2, 4, 7]));
    push("dfc", Box::new(Dfc::new("dfc", dfc, &mut init)?), input(&[2, 3, 6, 6]));
    push(
        "ghostv2",
        Box::new(GhostV2::new("ghostv2", GhostConfig::new(2, 4, 8), Directional::Full, &mut init)?),
        input(&[2, 4, 6, 6]),
    );
    push("partial-temporal", Box::new(PartialBlock::new("p", partial(CoreKind::Temporal), &mut init)?), input(&[2, 8, 7]));
    push("partial-shuffle", Box::new(PartialBlock::new("p", partial(CoreKind::Shuffle), &mut init)?), input(&[2, 8, 7]));
    push("partial-faster", Box::new(PartialBlock::new("p", partial(CoreKind::Faster), &mut init)?), input(&[2, 8, 7]));
    push("mstcn-block", Box::new(MsTcnBlock::new("ms", &tcn, 2, 4, &mut init)?), input(&[2, 4, 8]));
    push("mstcn-block-ghost", Box::new(MsTcnBlock::new("ms", &ghost_tcn, 2, 4, &mut init)?), input(&[2, 4, 8]));
    push("dctcn-block", Box::new(DenseBlock::new("dc", &tcn, 1, 4, &mut init)?), input(&[2, 4, 8]));
    push("dctcn-block-ghost", Box::new(DenseBlock::new("dc", &ghost_tcn, 1, 4, &mut init)?), input(&[2, 4, 8]));
    push(
        "resnet-block",
        Box::new(BasicBlock::new("rb", 4, 8, 2, UnitKind::Standard, &std_knobs, Directional::Depthwise, &mut init)?),
        input(&[2, 4, 6, 6]),
    );
    push(
        "resnet-block-ghost",
        Box::new(BasicBlock::new("rb", 4, 8, 2, UnitKind::Ghost, &ghost_knobs, Directional::Depthwise, &mut init)?),
        input(&[2, 4, 6, 6]),
    );
    Ok(cases)
}

/// Runs a suite and returns one report per case.
pub fn run_suite<T: Scalar>(suite: Suite, tolerance: f64, seed: u64) -> Result<Vec<GradCheckReport>> {
    let cases = match suite {
        Suite::Ops => op_suite::<T>(seed)?,
        Suite::Blocks => block_suite::<T>(seed)?,
    };
    cases
        .into_iter()
        .map(|mut case| check_module(case.name, case.module.as_mut(), &case.input, tolerance, seed))
        .collect()
}
