use lite_vsr::blocks::{CoreKind, PartialBlock, PartialBlockConfig};
use lite_vsr::conv::{conv_backward, conv_forward};
use lite_vsr::cost::{CostCounter, CountingConvention, InputSpec};
use lite_vsr::nn::{count_trainable, run, Context, Init, Module};
use lite_vsr::ops::concat_channels;
use lite_vsr::train::{mixup_with, variable_length_augment};
use lite_vsr::{ConvAlgorithm, ConvDescriptor, PaddingMode, Tape, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn randn(shape: &[usize], seed: u64) -> Tensor<f64> {
    Tensor::randn(shape.to_vec(), 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn close(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-9 * (1.0 + x.abs().max(y.abs())))
}

fn descriptor() -> impl Strategy<Value = (ConvDescriptor, Vec<usize>)> {
    (1usize..=3, 1usize..=3, 1usize..=3, prop::sample::select(vec![1usize, 2, 3]), 1usize..=2, 1usize..=2, any::<bool>()).prop_flat_map(
        |(rank, cin_g, cout_g, groups, stride, dilation, causal)| {
            let kernels = prop::collection::vec(1usize..=3, rank);
            let spatial = prop::collection::vec(5usize..=7, rank);
            (kernels, spatial, 1usize..=2).prop_map(move |(kernel, spatial, n)| {
                let causal = causal && rank == 1;
                let mut desc = ConvDescriptor::new(kernel, cin_g * groups, cout_g * groups)
                    .with_groups(groups)
                    .with_stride(vec![stride; rank])
                    .with_dilation(vec![dilation; rank]);
                if causal {
                    desc = desc.with_padding(PaddingMode::CausalLeft);
                }
                let mut shape = vec![n, cin_g * groups];
                shape.extend(spatial);
                (desc, shape)
            })
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn direct_and_im2col_agree((desc, shape) in descriptor(), seed in 0u64..1000) {
        let x = randn(&shape, seed);
        let w = randn(&desc.weight_shape(), seed + 1);
        let b = randn(&[desc.out_channels], seed + 2);
        let (direct, out_shape) = conv_forward(&desc, &shape, x.data(), w.data(), Some(b.data()), ConvAlgorithm::Direct).unwrap();
        let (im2col, _) = conv_forward(&desc, &shape, x.data(), w.data(), Some(b.data()), ConvAlgorithm::Im2col).unwrap();
        prop_assert!(close(&direct, &im2col));

        let g = randn(&out_shape, seed + 3);
        let gd = conv_backward(&desc, &shape, x.data(), w.data(), g.data(), ConvAlgorithm::Direct).unwrap();
        let gi = conv_backward(&desc, &shape, x.data(), w.data(), g.data(), ConvAlgorithm::Im2col).unwrap();
        prop_assert!(close(&gd.input, &gi.input));
        prop_assert!(close(&gd.weight, &gi.weight));
        prop_assert!(close(&gd.bias, &gi.bias));
    }

    #[test]
    fn causal_conv_ignores_the_future(kernel in 1usize..=4, dilation in 1usize..=3, steps in 4usize..=10, t0 in 1usize..4, seed in 0u64..1000) {
        let desc = ConvDescriptor::causal(kernel, dilation, 2, 3);
        let shape = [1, 2, steps];
        let w = randn(&desc.weight_shape(), seed);
        let x = randn(&shape, seed + 1);
        let mut x2 = x.clone();
        for (i, v) in x2.data_mut().iter_mut().enumerate() {
            if i % steps >= t0 {
                *v -= 5.0;
            }
        }
        let (a, _) = conv_forward(&desc, &shape, x.data(), w.data(), None, ConvAlgorithm::Auto).unwrap();
        let (b, _) = conv_forward(&desc, &shape, x2.data(), w.data(), None, ConvAlgorithm::Auto).unwrap();
        for (i, (a, b)) in a.iter().zip(&b).enumerate() {
            if i % steps < t0 {
                prop_assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn split_concat_round_trip(c in 2usize..=16, steps in 1usize..=5, ratio in 0.05f64..0.95, seed in 0u64..1000) {
        let x = randn(&[2, c, steps], seed);
        let tape = Tape::new();
        let xv = tape.constant(x.clone());
        if let Ok((a, b)) = xv.split_channels(ratio) {
            prop_assert_eq!(a.shape()[1] + b.shape()[1], c);
            let y = concat_channels(&[a, b]).unwrap();
            prop_assert_eq!(y.value().data().to_vec(), x.data().to_vec());
        }
    }

    #[test]
    fn channel_shuffle_is_a_bijection(groups in 1usize..=6, per_group in 1usize..=5) {
        let c = groups * per_group;
        let ids: Vec<f64> = (0..c).map(|i| i as f64).collect();
        let tape = Tape::new();
        let x = tape.constant(Tensor::from_f64([1, c, 1], &ids).unwrap());
        let y = x.channel_shuffle(groups).unwrap();
        let mut sorted = y.value().data().to_vec();
        sorted.sort_by(f64::total_cmp);
        prop_assert_eq!(&sorted, &ids);
        let back = y.channel_shuffle(per_group).unwrap();
        prop_assert_eq!(back.value().data().to_vec(), ids);
    }

    #[test]
    fn softmax_rows_sum_to_one(rows in 1usize..=4, cols in 1usize..=12, seed in 0u64..1000) {
        let x = randn(&[rows, cols], seed).map(|v| 30.0 * v);
        let tape = Tape::new();
        let p = tape.constant(x).softmax(1).unwrap();
        for row in p.value().data().chunks(cols) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn identity_partial_block_doubles(channels in 2usize..=12, ratio in 0.1f64..=1.0, seed in 0u64..1000) {
        let cfg = PartialBlockConfig { channels, ratio, core: CoreKind::Identity, ..Default::default() };
        if let Ok(mut block) = PartialBlock::<f64>::new("p", cfg, &mut Init::zeros()) {
            let x = randn(&[1, channels, 4], seed);
            let y = run(&mut block, &x, &mut Context::eval()).unwrap();
            prop_assert!(y.data().iter().zip(x.data()).all(|(y, x)| *y == 2.0 * x));
        }
    }

    #[test]
    fn partial_cost_matches_registry(
        channels in prop::sample::select(vec![8usize, 12, 16]),
        ratio in prop::sample::select(vec![0.25f64, 0.5, 0.75, 1.0]),
        core in prop::sample::select(vec![CoreKind::Temporal, CoreKind::Shuffle, CoreKind::Faster]),
        kernel in 1usize..=5,
    ) {
        let cfg = PartialBlockConfig { channels, ratio, core, kernel, ..Default::default() };
        if let Ok(block) = PartialBlock::<f64>::new("p", cfg, &mut Init::zeros()) {
            let mut counter = CostCounter::new(CountingConvention::default());
            block.cost(&[1, channels, 10], &mut counter).unwrap();
            let report = counter.finish(InputSpec::default());
            prop_assert_eq!(report.total_params as usize, count_trainable(&block));
        }
    }

    #[test]
    fn mixup_is_a_convex_combination(lambda in 0.0f64..=1.0, seed in 0u64..1000) {
        let x = randn(&[3, 4], seed);
        let y = randn(&[3, 2], seed + 1);
        let perm = [2usize, 0, 1];
        let (mx, my) = mixup_with(&x, &y, lambda, &perm).unwrap();
        for (out, src) in [(&mx, &x), (&my, &y)] {
            let width = src.shape()[1];
            for (i, v) in out.data().iter().enumerate() {
                let (r, c) = (i / width, i % width);
                let expected = lambda * src.data()[i] + (1.0 - lambda) * src.data()[perm[r] * width + c];
                prop_assert!((v - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn variable_length_keeps_a_prefix_window(keep in 0.1f64..=1.0, seed in 0u64..1000) {
        let clip = randn(&[1, 12, 2, 2], seed);
        let out = variable_length_augment(&clip, keep, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(out.shape(), clip.shape());
        let frames: Vec<&[f64]> = out.data().chunks(4).collect();
        let kept = frames.iter().take_while(|f| f.iter().any(|v| *v != 0.0)).count();
        prop_assert!(kept as f64 >= (keep * 12.0).floor());
        prop_assert!(frames[kept..].iter().all(|f| f.iter().all(|v| *v == 0.0)));
        let src: Vec<&[f64]> = clip.data().chunks(4).collect();
        let start = src.iter().position(|f| *f == frames[0]).unwrap();
        for (k, f) in frames[..kept].iter().enumerate() {
            prop_assert_eq!(*f, src[start + k]);
        }
    }
}
