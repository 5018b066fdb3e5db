//! Desk-scale training on synthetic motion clips.
//!
//! Each class is a diagonal bar oscillating across the frame at `class + 1`
//! cycles per clip with a random phase. When the frame count is prime every
//! class visits the same set of positions, so the time-averaged frame carries
//! no class information and only temporal modelling can separate the classes.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autograd::{ParamId, Tape};
use crate::checkpoint;
use crate::error::{Error, Result};
use crate::nn::{accumulate_grads, zero_grad, Context, Module};
use crate::ops::one_hot;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticDatasetSpec {
    pub num_classes: usize,
    pub samples_per_class: usize,
    pub val_samples_per_class: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SyntheticDatasetSpec {
    fn default() -> Self {
        Self {
            num_classes: 10,
            samples_per_class: 40,
            val_samples_per_class: 20,
            frames: 29,
            height: 32,
            width: 32,
            noise_std: 0.3,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

fn config_err(path: &str, message: impl Into<String>) -> Error {
    Error::Config {
        path: path.into(),
        message: message.into(),
    }
}

impl SyntheticDatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(config_err("data.num_classes", "need at least 2 classes"));
        }
        if self.samples_per_class == 0 {
            return Err(config_err("data.samples_per_class", "must be positive"));
        }
        if self.frames < 2 {
            return Err(config_err("data.frames", "need at least 2 frames"));
        }
        if self.height < 8 || self.width < 8 {
            return Err(config_err("data.height", "frames must be at least 8x8"));
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return Err(config_err("data.noise_std", "must be finite and non-negative"));
        }
        Ok(())
    }

    pub fn len(&self, split: Split) -> usize {
        self.num_classes
            * match split {
                Split::Train => self.samples_per_class,
                Split::Val => self.val_samples_per_class,
            }
    }

    pub fn clip_shape(&self) -> [usize; 4] {
        [1, self.frames, self.height, self.width]
    }

    /// The clip and label at `index`; a pure function of the spec, split and index.
    pub fn sample(&self, split: Split, index: usize) -> (Tensor<f32>, usize) {
        let label = index % self.num_classes;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(2 * index as u64 + (split == Split::Val) as u64);
        let phase = rng.random::<f64>() * 2.0 * PI;
        (self.render(label, phase, &mut rng), label)
    }

    /// Bar position `amplitude * sin(2 pi (label + 1) t / frames + phase)` along the diagonal.
    fn render(&self, label: usize, phase: f64, rng: &mut ChaCha8Rng) -> Tensor<f32> {
        let (t_len, h, w) = (self.frames, self.height, self.width);
        let side = h.min(w) as f64;
        let amplitude = 0.25 * side;
        let sigma = (side / 16.0).max(1.0);
        let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
        let noise = Normal::new(0.0, self.noise_std).expect("validated noise_std");
        let mut data = Vec::with_capacity(t_len * h * w);
        for t in 0..t_len {
            let offset = amplitude * (2.0 * PI * (label + 1) as f64 * t as f64 / t_len as f64 + phase).sin();
            for y in 0..h {
                for x in 0..w {
                    let d = ((x as f64 - cx) + (y as f64 - cy)) / 2f64.sqrt() - offset;
                    let mut v = (-d * d / (2.0 * sigma * sigma)).exp();
                    if self.noise_std > 0.0 {
                        v += noise.sample(rng);
                    }
                    data.push(v);
                }
            }
        }
        normalize(&mut data);
        let data = data.into_iter().map(|v| v as f32).collect();
        Tensor::new(self.clip_shape().to_vec(), data).expect("shape matches data")
    }
}

/// Zero mean, unit variance (left at zero mean when constant).
fn normalize(data: &mut [f64]) {
    let n = data.len() as f64;
    let mean = data.iter().sum::<f64>() / n;
    let var = data.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let inv = if var > 0.0 { 1.0 / var.sqrt() } else { 1.0 };
    data.iter_mut().for_each(|v| *v = (*v - mean) * inv);
}

/// Materialised clips `[1, T, H, W]` with labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub clips: Vec<Tensor<f32>>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn generate(spec: &SyntheticDatasetSpec, split: Split) -> Result<Self> {
        spec.validate()?;
        let (clips, labels) = (0..spec.len(split)).map(|i| spec.sample(split, i)).unzip();
        Ok(Self {
            clips,
            labels,
            num_classes: spec.num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    /// Stacks the selected clips into `[N, 1, T, H, W]`.
    pub fn batch<T: Scalar>(&self, indices: &[usize]) -> Result<(Tensor<T>, Vec<usize>)> {
        let first = self.clips.get(*indices.first().ok_or_else(|| Error::invalid("empty batch"))?);
        let clip_shape = first.ok_or_else(|| Error::invalid("batch index out of range"))?.shape().to_vec();
        let mut data = Vec::with_capacity(indices.len() * clip_shape.iter().product::<usize>());
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            let clip = self.clips.get(i).ok_or_else(|| Error::invalid(format!("batch index {i} out of range")))?;
            if clip.shape() != clip_shape.as_slice() {
                return Err(Error::shape(format!("clip {i} has shape {:?}, expected {clip_shape:?}", clip.shape())));
            }
            data.extend(clip.data().iter().map(|&v| T::from_f64_lossy(v as f64)));
            labels.push(self.labels[i]);
        }
        let mut shape = vec![indices.len()];
        shape.extend(clip_shape);
        Ok((Tensor::new(shape, data)?, labels))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr_init: f64,
    pub weight_decay: f64,
    pub momentum: f64,
    /// Applied to the model's dropout layers when training.
    pub dropout: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Beta parameter for mixup; 0 disables mixup.
    pub mixup_alpha: f64,
    pub var_len_min_keep: f64,
    /// Maximum crop offset in pixels.
    pub crop_jitter: usize,
    pub flip: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_init: 0.01,
            weight_decay: 0.01,
            momentum: 0.9,
            dropout: 0.2,
            epochs: 20,
            batch_size: 32,
            mixup_alpha: 0.4,
            var_len_min_keep: 0.5,
            crop_jitter: 4,
            flip: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let finite_nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if !(finite_nonneg(self.lr_init) && self.lr_init > 0.0) {
            return Err(config_err("train.lr_init", "must be positive"));
        }
        if !finite_nonneg(self.weight_decay) {
            return Err(config_err("train.weight_decay", "must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(config_err("train.momentum", "must lie in [0, 1)"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(config_err("train.dropout", "must lie in [0, 1)"));
        }
        if self.epochs == 0 {
            return Err(config_err("train.epochs", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(config_err("train.batch_size", "must be positive"));
        }
        if !finite_nonneg(self.mixup_alpha) {
            return Err(config_err("train.mixup_alpha", "must be non-negative"));
        }
        if !(self.var_len_min_keep > 0.0 && self.var_len_min_keep <= 1.0) {
            return Err(config_err("train.var_len_min_keep", "must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// `lr_init * (1 + cos(pi * epoch / total_epochs)) / 2`.
pub fn cosine_lr(epoch: usize, total_epochs: usize, lr_init: f64) -> f64 {
    debug_assert!(epoch <= total_epochs);
    if total_epochs == 0 {
        return lr_init;
    }
    lr_init * (1.0 + (PI * epoch as f64 / total_epochs as f64).cos()) / 2.0
}

/// Mixes every sample with `perm[i]` using weight `lambda`.
pub fn mixup_with<T: Scalar>(
    batch: &Tensor<T>,
    targets: &Tensor<T>,
    lambda: f64,
    perm: &[usize],
) -> Result<(Tensor<T>, Tensor<T>)> {
    let n = batch.shape().first().copied().unwrap_or(0);
    if perm.len() != n || targets.shape().first() != Some(&n) {
        return Err(Error::shape(format!(
            "mixup of batch {:?} with targets {:?} and permutation of {}",
            batch.shape(),
            targets.shape(),
            perm.len()
        )));
    }
    let mix = |t: &Tensor<T>| -> Result<Tensor<T>> {
        let row = t.numel() / n;
        let (l, r) = (T::from_f64_lossy(lambda), T::from_f64_lossy(1.0 - lambda));
        let d = t.data();
        let data = (0..n)
            .flat_map(|i| (0..row).map(move |j| (i, j)))
            .map(|(i, j)| l * d[i * row + j] + r * d[perm[i] * row + j])
            .collect();
        Tensor::new(t.shape().to_vec(), data)
    };
    Ok((mix(batch)?, mix(targets)?))
}

/// Mixup with `lambda ~ Beta(alpha, alpha)` and a random pairing; returns `lambda` too.
pub fn mixup<T: Scalar>(
    batch: &Tensor<T>,
    targets: &Tensor<T>,
    alpha: f64,
    rng: &mut impl Rng,
) -> Result<(Tensor<T>, Tensor<T>, f64)> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::invalid(format!("mixup alpha must be positive, got {alpha}")));
    }
    let n = batch.shape().first().copied().unwrap_or(0);
    if n < 2 {
        return Err(Error::invalid("mixup needs a batch of at least 2"));
    }
    let lambda = Beta::new(alpha, alpha).map_err(|e| Error::invalid(e.to_string()))?.sample(rng);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    let (x, y) = mixup_with(batch, targets, lambda, &perm)?;
    Ok((x, y, lambda))
}

/// Keeps a random contiguous window of `[ceil(min_keep * T), T]` frames, moved to the
/// start and zero-padded back to `T`. `clip` is `[C, T, H, W]`.
pub fn variable_length_augment<T: Scalar>(clip: &Tensor<T>, min_keep: f64, rng: &mut impl Rng) -> Result<Tensor<T>> {
    if clip.rank() != 4 {
        return Err(Error::shape(format!("expected a [C, T, H, W] clip, got {:?}", clip.shape())));
    }
    let [c, t, h, w] = [clip.shape()[0], clip.shape()[1], clip.shape()[2], clip.shape()[3]];
    let min_len = (min_keep * t as f64).ceil() as usize;
    if min_len < 1 || min_len > t {
        return Err(Error::invalid(format!("min_keep {min_keep} keeps no frames of {t}")));
    }
    let len = rng.random_range(min_len..=t);
    let start = rng.random_range(0..=t - len);
    let frame = h * w;
    let mut out = Tensor::zeros(clip.shape().to_vec());
    for ch in 0..c {
        let base = ch * t * frame;
        let src = &clip.data()[base + start * frame..base + (start + len) * frame];
        out.data_mut()[base..base + len * frame].copy_from_slice(src);
    }
    Ok(out)
}

/// Shifts the clip by up to `jitter` pixels (zero fill) and flips it horizontally with probability 1/2.
pub fn crop_flip<T: Scalar>(clip: &Tensor<T>, jitter: usize, flip: bool, rng: &mut impl Rng) -> Result<Tensor<T>> {
    if clip.rank() != 4 {
        return Err(Error::shape(format!("expected a [C, T, H, W] clip, got {:?}", clip.shape())));
    }
    let (h, w) = (clip.shape()[2], clip.shape()[3]);
    let j = jitter as i64;
    let dy = rng.random_range(-j..=j) as isize;
    let dx = rng.random_range(-j..=j) as isize;
    let mirror = flip && rng.random::<bool>();
    let mut out = Tensor::zeros(clip.shape().to_vec());
    let frames = clip.numel() / (h * w);
    for f in 0..frames {
        let base = f * h * w;
        for y in 0..h {
            let sy = y as isize + dy;
            if sy < 0 || sy >= h as isize {
                continue;
            }
            for x in 0..w {
                let mut sx = x as isize + dx;
                if mirror {
                    sx = w as isize - 1 - sx;
                }
                if sx >= 0 && sx < w as isize {
                    out.data_mut()[base + y * w + x] = clip.data()[base + sy as usize * w + sx as usize];
                }
            }
        }
    }
    Ok(out)
}

/// SGD with momentum and decoupled weight decay.
pub struct Sgd<T> {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: HashMap<ParamId, Vec<T>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Self {
            momentum,
            weight_decay,
            velocity: HashMap::new(),
        }
    }

    /// `p *= 1 - lr * wd; v = momentum * v + g; p -= lr * v` for every trainable tensor with a gradient.
    pub fn step<M: Module<T> + ?Sized>(&mut self, module: &mut M, lr: f64) {
        let mu = T::from_f64_lossy(self.momentum);
        let lr_t = T::from_f64_lossy(lr);
        let decay = T::from_f64_lossy(1.0 - lr * self.weight_decay);
        let velocity = &mut self.velocity;
        module.visit_mut(&mut |p| {
            if !p.is_trainable() {
                return;
            }
            let Some(g) = p.tensor.grad().map(<[T]>::to_vec) else {
                return;
            };
            let v = velocity.entry(p.id).or_insert_with(|| vec![T::zero(); g.len()]);
            for ((w, v), g) in p.tensor.data_mut().iter_mut().zip(v.iter_mut()).zip(g) {
                *v = mu * *v + g;
                *w = *w * decay - lr_t * *v;
            }
        });
    }
}

/// One forward/backward/update on a prepared batch; returns the mean loss.
pub fn train_step<T: Scalar, M: Module<T> + ?Sized>(
    model: &mut M,
    opt: &mut Sgd<T>,
    batch: &Tensor<T>,
    targets: &Tensor<T>,
    lr: f64,
    ctx: &mut Context,
) -> Result<f64> {
    zero_grad(model);
    let tape = Tape::new();
    let x = tape.constant(batch.clone());
    let logits = model.forward(x, ctx)?;
    if logits.shape() != targets.shape() {
        return Err(Error::shape(format!(
            "model produces {:?} logits for {:?} targets",
            logits.shape(),
            targets.shape()
        )));
    }
    let loss = logits.cross_entropy(targets)?;
    let value = loss.value().data()[0].to_f64_lossy();
    if !value.is_finite() {
        let layer = ctx.first_non_finite().unwrap_or("loss").to_string();
        return Err(Error::NonFinite {
            layer,
            detail: format!("training loss is {value}"),
        });
    }
    let grads = tape.backward(loss)?;
    accumulate_grads(model, &grads)?;
    opt.step(model, lr);
    Ok(value)
}

/// Top-1 accuracy in eval mode.
pub fn evaluate<T: Scalar, M: Module<T> + ?Sized>(model: &mut M, data: &Dataset, batch_size: usize) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::invalid("cannot evaluate on an empty dataset"));
    }
    let mut correct = 0usize;
    let indices: Vec<usize> = (0..data.len()).collect();
    for chunk in indices.chunks(batch_size.max(1)) {
        let (x, labels) = data.batch::<T>(chunk)?;
        let tape = Tape::new();
        let logits = model.forward(tape.constant(x), &mut Context::eval())?.value();
        let classes = logits.shape()[1];
        for (row, &label) in logits.data().chunks(classes).zip(&labels) {
            let best = row
                .iter()
                .enumerate()
                .fold(0, |best, (i, v)| if *v > row[best] { i } else { best });
            correct += (best == label) as usize;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_acc: f64,
    /// Accuracy on the unaugmented training set; not part of the CSV log.
    pub train_acc: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_acc: f64,
    /// Highest per-epoch accuracy on the unaugmented training set.
    pub best_train_acc: f64,
    pub checkpoint: Option<PathBuf>,
}

pub const LOG_FILE: &str = "train_log.csv";
pub const BEST_CHECKPOINT: &str = "best.ckpt";

fn augment<T: Scalar>(data: &Dataset, indices: &[usize], cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<Tensor<T>> {
    let (x, _) = data.batch::<T>(indices)?;
    let clip_len = x.numel() / indices.len();
    let clip_shape = x.shape()[1..].to_vec();
    let mut out = Vec::with_capacity(x.numel());
    for clip in x.data().chunks(clip_len) {
        let clip = Tensor::new(clip_shape.clone(), clip.to_vec())?;
        let clip = crop_flip(&clip, cfg.crop_jitter, cfg.flip, rng)?;
        let clip = variable_length_augment(&clip, cfg.var_len_min_keep, rng)?;
        out.extend_from_slice(clip.data());
    }
    Tensor::new(x.shape().to_vec(), out)
}

/// Trains with SGD on a cosine schedule, validating every epoch.
///
/// With a checkpoint directory, the log is written to [`LOG_FILE`] and the best
/// validation model to [`BEST_CHECKPOINT`]. The log's `epoch` column is 0-based
/// and `lr` is the rate used during that epoch.
pub fn train<T: Scalar, M: Module<T> + ?Sized>(
    model: &mut M,
    train_set: &Dataset,
    val_set: &Dataset,
    cfg: &TrainConfig,
    ckpt_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    let mut log_file = match ckpt_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let path = dir.join(LOG_FILE);
            let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            writeln!(f, "epoch,lr,train_loss,val_acc").map_err(|e| Error::io(&path, e))?;
            Some((f, path))
        }
        None => None,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Sgd::new(cfg.momentum, cfg.weight_decay);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut outcome = TrainOutcome {
        log: Vec::new(),
        best_epoch: 0,
        best_val_acc: f64::NEG_INFINITY,
        best_train_acc: 0.0,
        checkpoint: None,
    };
    for epoch in 0..cfg.epochs {
        let lr = cosine_lr(epoch, cfg.epochs, cfg.lr_init);
        order.shuffle(&mut rng);
        let (mut loss_sum, mut seen) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let x = augment::<T>(train_set, chunk, cfg, &mut rng)?;
            let labels: Vec<usize> = chunk.iter().map(|&i| train_set.labels[i]).collect();
            let y = one_hot::<T>(&labels, train_set.num_classes)?;
            let (x, y) = if cfg.mixup_alpha > 0.0 && chunk.len() >= 2 {
                let (x, y, _) = mixup(&x, &y, cfg.mixup_alpha, &mut rng)?;
                (x, y)
            } else {
                (x, y)
            };
            let mut ctx = Context::train(rng.random()).with_finite_checks();
            loss_sum += train_step(model, &mut opt, &x, &y, lr, &mut ctx)? * chunk.len() as f64;
            seen += chunk.len();
        }
        let val_acc = if val_set.is_empty() { 0.0 } else { evaluate(model, val_set, cfg.batch_size)? };
        let train_acc = evaluate(model, train_set, cfg.batch_size)?;
        outcome.best_train_acc = outcome.best_train_acc.max(train_acc);
        let row = EpochLog {
            epoch,
            lr,
            train_loss: loss_sum / seen as f64,
            val_acc,
            train_acc,
        };
        if let Some((f, path)) = log_file.as_mut() {
            writeln!(f, "{},{},{},{}", row.epoch, row.lr, row.train_loss, row.val_acc).map_err(|e| Error::io(&*path, e))?;
        }
        if val_acc > outcome.best_val_acc {
            outcome.best_val_acc = val_acc;
            outcome.best_epoch = epoch;
            if let Some(dir) = ckpt_dir {
                let path = dir.join(BEST_CHECKPOINT);
                checkpoint::save(model, &path)?;
                outcome.checkpoint = Some(path);
            }
        }
        outcome.log.push(row);
    }
    Ok(outcome)
}

/// JSON sidecar of an exported dataset blob.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSidecar {
    pub version: u32,
    pub dtype: String,
    pub count: usize,
    pub clip_shape: Vec<usize>,
    pub num_classes: usize,
    pub labels: Vec<usize>,
    pub blob: String,
}

/// Writes `<name>.f32` (little-endian clips, back to back) and `<name>.json`.
pub fn export_dataset(data: &Dataset, dir: &Path, name: &str) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let blob_name = format!("{name}.f32");
    let mut bytes = Vec::with_capacity(4 * data.clips.iter().map(Tensor::numel).sum::<usize>());
    for clip in &data.clips {
        for v in clip.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let blob = dir.join(&blob_name);
    fs::write(&blob, bytes).map_err(|e| Error::io(&blob, e))?;
    let sidecar = DatasetSidecar {
        version: 1,
        dtype: "f32le".into(),
        count: data.len(),
        clip_shape: data.clips.first().map(|c| c.shape().to_vec()).unwrap_or_default(),
        num_classes: data.num_classes,
        labels: data.labels.clone(),
        blob: blob_name,
    };
    let json = serde_json::to_string_pretty(&sidecar).map_err(|e| Error::Format(e.to_string()))?;
    let path = dir.join(format!("{name}.json"));
    fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))
}

pub fn import_dataset(dir: &Path, name: &str) -> Result<Dataset> {
    let path = dir.join(format!("{name}.json"));
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let side: DatasetSidecar = serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    if side.dtype != "f32le" || side.labels.len() != side.count {
        return Err(Error::Format(format!("{}: inconsistent sidecar", path.display())));
    }
    let blob = dir.join(&side.blob);
    let bytes = fs::read(&blob).map_err(|e| Error::io(&blob, e))?;
    let clip_len: usize = side.clip_shape.iter().product();
    if bytes.len() != 4 * clip_len * side.count {
        return Err(Error::Format(format!("{}: expected {} clips of {clip_len} values", blob.display(), side.count)));
    }
    let clips = bytes
        .chunks(4 * clip_len.max(1))
        .take(side.count)
        .map(|c| {
            let data = c.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
            Tensor::new(side.clip_shape.clone(), data)
        })
        .collect::<Result<_>>()?;
    Ok(Dataset {
        clips,
        labels: side.labels,
        num_classes: side.num_classes,
    })
}
