use lite_vsr::gradcheck::{run_suite, Suite};

#[test]
fn every_block_passes_in_high_precision() {
    let reports = run_suite::<f64>(Suite::Blocks, 1e-4, 7).unwrap();
    assert_eq!(reports.len(), 13);
    for r in &reports {
        assert!(r.passed(), "{r:?}");
    }
}

#[test]
fn parametrised_ops_pass_in_both_precisions() {
    for r in run_suite::<f64>(Suite::Ops, 1e-4, 3).unwrap() {
        assert!(r.passed(), "{r:?}");
    }
    for r in run_suite::<f32>(Suite::Ops, 1e-2, 3).unwrap() {
        assert!(r.passed(), "{r:?}");
    }
}

#[test]
fn blocks_pass_across_seeds() {
    for seed in [11, 12] {
        for r in run_suite::<f64>(Suite::Blocks, 1e-4, seed).unwrap() {
            assert!(r.passed(), "seed {seed}: {r:?}");
        }
    }
}
