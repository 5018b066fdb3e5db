use std::f64::consts::PI;
use std::fs;

use lite_vsr::architectures::{FrontendVariant, ModelSpec, VsrModel};
use lite_vsr::checkpoint;
use lite_vsr::cost::InputSpec;
use lite_vsr::nn::{Context, Init, Linear};
use lite_vsr::ops::one_hot;
use lite_vsr::train::{cosine_lr, evaluate, train, train_step, Dataset, Sgd, Split, SyntheticDatasetSpec, TrainConfig};
use lite_vsr::{Error, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tiny_data() -> SyntheticDatasetSpec {
    SyntheticDatasetSpec {
        num_classes: 3,
        samples_per_class: 4,
        val_samples_per_class: 2,
        frames: 9,
        height: 32,
        width: 32,
        ..Default::default()
    }
}

fn tiny_model(data: &SyntheticDatasetSpec) -> ModelSpec {
    ModelSpec {
        frontend_variant: FrontendVariant::Ghost,
        frontend_width: 4,
        hidden_width: 32,
        num_classes: data.num_classes,
        input: InputSpec { frames: data.frames, height: data.height, width: data.width, channels: 1 },
        ..Default::default()
    }
}

fn tiny_config(epochs: usize) -> TrainConfig {
    TrainConfig { epochs, batch_size: 4, ..Default::default() }
}

fn sets(spec: &SyntheticDatasetSpec) -> (Dataset, Dataset) {
    (Dataset::generate(spec, Split::Train).unwrap(), Dataset::generate(spec, Split::Val).unwrap())
}

#[test]
fn same_seed_gives_identical_logs_and_checkpoints() {
    let data = tiny_data();
    let (tr, va) = sets(&data);
    let dir = tempfile::tempdir().unwrap();
    let mut files = Vec::new();
    for name in ["a", "b"] {
        let mut model = VsrModel::<f32>::build(&tiny_model(&data), &mut Init::seeded(1)).unwrap();
        let out = train(&mut model, &tr, &va, &tiny_config(2), Some(&dir.path().join(name))).unwrap();
        assert_eq!(out.log.len(), 2);
        files.push((
            fs::read(dir.path().join(name).join("train_log.csv")).unwrap(),
            fs::read(dir.path().join(name).join("best.ckpt")).unwrap(),
        ));
    }
    assert_eq!(files[0], files[1]);

    let mut model = VsrModel::<f32>::build(&tiny_model(&data), &mut Init::seeded(1)).unwrap();
    let other = train(&mut model, &tr, &va, &TrainConfig { seed: 9, ..tiny_config(2) }, None).unwrap();
    let first = String::from_utf8(files[0].0.clone()).unwrap();
    assert!(!first.contains(&format!("{}", other.log[1].train_loss)));
}

#[test]
fn log_records_the_cosine_rate() {
    let data = tiny_data();
    let (tr, va) = sets(&data);
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(3);
    let mut model = VsrModel::<f32>::build(&tiny_model(&data), &mut Init::seeded(2)).unwrap();
    train(&mut model, &tr, &va, &cfg, Some(dir.path())).unwrap();
    let text = fs::read_to_string(dir.path().join("train_log.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("epoch,lr,train_loss,val_acc"));
    for (epoch, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields[0].parse::<usize>().unwrap(), epoch);
        assert_eq!(fields[1].parse::<f64>().unwrap(), cosine_lr(epoch, 3, cfg.lr_init));
    }
}

#[test]
fn plain_step_matches_reference_sgd() {
    let (n, d, k) = (4, 5, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = Tensor::<f64>::randn([n, d], 1.0, &mut rng);
    let labels = [0usize, 2, 1, 2];
    let y = one_hot::<f64>(&labels, k).unwrap();
    let mut layer = Linear::<f64>::new("fc".into(), d, k, &mut Init::seeded(5));
    let w0 = layer.weight.tensor.data().to_vec();
    let b0 = layer.bias.tensor.data().to_vec();
    let lr = 0.3;

    // Reference: softmax cross-entropy gradient (p - y) / n, written out by hand.
    let mut gw = vec![0.0; d * k];
    let mut gb = vec![0.0; k];
    for i in 0..n {
        let logits: Vec<f64> = (0..k).map(|j| b0[j] + (0..d).map(|a| x.data()[i * d + a] * w0[a * k + j]).sum::<f64>()).collect();
        let m = logits.iter().cloned().fold(f64::MIN, f64::max);
        let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
        for j in 0..k {
            let g = ((logits[j] - m).exp() / z - y.data()[i * k + j]) / n as f64;
            gb[j] += g;
            for a in 0..d {
                gw[a * k + j] += g * x.data()[i * d + a];
            }
        }
    }

    let mut opt = Sgd::new(0.0, 0.0);
    train_step(&mut layer, &mut opt, &x, &y, lr, &mut Context::train(0)).unwrap();
    for ((w, w0), g) in layer.weight.tensor.data().iter().zip(&w0).zip(&gw) {
        assert!((w - (w0 - lr * g)).abs() < 1e-12);
    }
    for ((b, b0), g) in layer.bias.tensor.data().iter().zip(&b0).zip(&gb) {
        assert!((b - (b0 - lr * g)).abs() < 1e-12);
    }
}

#[test]
fn checkpoint_round_trip_preserves_accuracy() {
    let data = tiny_data();
    let (tr, va) = sets(&data);
    let dir = tempfile::tempdir().unwrap();
    let spec = tiny_model(&data);
    let mut model = VsrModel::<f32>::build(&spec, &mut Init::seeded(3)).unwrap();
    train(&mut model, &tr, &va, &tiny_config(1), None).unwrap();
    let path = dir.path().join("m.ckpt");
    checkpoint::save(&model, &path).unwrap();
    let mut restored = VsrModel::<f32>::build(&spec, &mut Init::zeros()).unwrap();
    checkpoint::load(&mut restored, &path).unwrap();
    assert_eq!(evaluate(&mut model, &va, 4).unwrap(), evaluate(&mut restored, &va, 4).unwrap());
    assert_eq!(evaluate(&mut model, &tr, 3).unwrap(), evaluate(&mut restored, &tr, 5).unwrap());
}

#[test]
fn huge_learning_rate_reports_non_finite() {
    let data = tiny_data();
    let (tr, va) = sets(&data);
    let mut model = VsrModel::<f32>::build(&tiny_model(&data), &mut Init::seeded(3)).unwrap();
    let cfg = TrainConfig { lr_init: 1e30, ..tiny_config(3) };
    assert!(matches!(train(&mut model, &tr, &va, &cfg, None), Err(Error::NonFinite { .. })));
}

#[test]
fn duplicated_dataset_has_identical_accuracy() {
    let data = tiny_data();
    let (_, va) = sets(&data);
    let mut twice = va.clone();
    twice.clips.extend(va.clips.iter().cloned());
    twice.labels.extend(va.labels.iter().cloned());
    let mut model = VsrModel::<f32>::build(&tiny_model(&data), &mut Init::seeded(6)).unwrap();
    assert_eq!(evaluate(&mut model, &va, 4).unwrap(), evaluate(&mut model, &twice, 4).unwrap());
}

/// Nearest-centroid accuracy of `features` learned on the train split.
fn centroid_accuracy(spec: &SyntheticDatasetSpec, features: impl Fn(&Tensor<f32>) -> Vec<f64>) -> f64 {
    let k = spec.num_classes;
    let mut sums: Vec<Vec<f64>> = vec![Vec::new(); k];
    let mut counts = vec![0.0; k];
    for i in 0..spec.len(Split::Train) {
        let (clip, label) = spec.sample(Split::Train, i);
        let f = features(&clip);
        if sums[label].is_empty() {
            sums[label] = vec![0.0; f.len()];
        }
        sums[label].iter_mut().zip(&f).for_each(|(s, v)| *s += v);
        counts[label] += 1.0;
    }
    let centroids: Vec<Vec<f64>> = sums.iter().zip(&counts).map(|(s, c)| s.iter().map(|v| v / c).collect()).collect();
    let n = spec.len(Split::Val);
    let correct = (0..n)
        .filter(|&i| {
            let (clip, label) = spec.sample(Split::Val, i);
            let f = features(&clip);
            let dist = |c: &Vec<f64>| c.iter().zip(&f).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            let best = (0..k).min_by(|&a, &b| dist(&centroids[a]).total_cmp(&dist(&centroids[b]))).unwrap();
            best == label
        })
        .count();
    correct as f64 / n as f64
}

/// Position of the bar along the diagonal in every frame.
fn trajectory(clip: &Tensor<f32>) -> Vec<f64> {
    let s = clip.shape();
    let (t, h, w) = (s[1], s[2], s[3]);
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    clip.data()
        .chunks(h * w)
        .take(t)
        .map(|frame| {
            let mut acc = 0.0;
            for (i, v) in frame.iter().enumerate() {
                let (y, x) = ((i / w) as f64, (i % w) as f64);
                acc += f64::from(*v) * ((x - cx) + (y - cy));
            }
            acc
        })
        .collect()
}

#[test]
fn class_lives_in_motion_not_appearance() {
    let spec = SyntheticDatasetSpec { samples_per_class: 30, val_samples_per_class: 20, ..Default::default() };
    let chance = 1.0 / spec.num_classes as f64;
    let sigma = (chance * (1.0 - chance) / spec.len(Split::Val) as f64).sqrt();

    let mean_frame = |clip: &Tensor<f32>| {
        let s = clip.shape();
        let plane = s[2] * s[3];
        let mut m = vec![0.0; plane];
        for frame in clip.data().chunks(plane) {
            m.iter_mut().zip(frame).for_each(|(a, v)| *a += f64::from(*v) / s[1] as f64);
        }
        m
    };
    let static_acc = centroid_accuracy(&spec, mean_frame);
    assert!(static_acc < chance + 4.0 * sigma, "static accuracy {static_acc}");

    // Magnitude spectrum of the trajectory: invariant to the random phase.
    let spectrum = |clip: &Tensor<f32>| {
        let traj = trajectory(clip);
        let n = traj.len() as f64;
        (1..=spec.num_classes)
            .map(|f| {
                let (re, im) = traj.iter().enumerate().fold((0.0, 0.0), |(re, im), (t, v)| {
                    let a = 2.0 * PI * f as f64 * t as f64 / n;
                    (re + v * a.cos(), im + v * a.sin())
                });
                (re * re + im * im).sqrt()
            })
            .collect::<Vec<f64>>()
    };
    let normalized = |clip: &Tensor<f32>| {
        let s = spectrum(clip);
        let norm = s.iter().map(|v| v * v).sum::<f64>().sqrt();
        s.into_iter().map(|v| v / norm).collect()
    };
    let temporal_acc = centroid_accuracy(&spec, normalized);
    assert!(temporal_acc > 0.9, "temporal accuracy {temporal_acc}");
}
