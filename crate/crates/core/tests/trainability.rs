//! Every shipped training config keeps learning: the epoch-mean training loss
//! strictly decreases over its first five epochs. Configs shorter than five
//! epochs (the smoke run) are skipped.

use std::fs;
use std::path::Path;

use lite_vsr::architectures::VsrModel;
use lite_vsr::config::RunConfig;
use lite_vsr::nn::Init;
use lite_vsr::train::{train, Dataset, Split, TrainConfig};

const EPOCHS: usize = 5;

#[test]
fn shipped_configs_reduce_loss_for_five_epochs() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut checked = Vec::new();
    let mut paths: Vec<_> = fs::read_dir(&dir).unwrap().map(|e| e.unwrap().path()).collect();
    paths.sort();
    for path in paths {
        let cfg = RunConfig::load(&path).unwrap();
        if cfg.train.epochs < EPOCHS {
            continue;
        }
        let spec = cfg.training_spec().unwrap();
        let train_set = Dataset::generate(&cfg.data, Split::Train).unwrap();
        let val_set = Dataset::generate(&cfg.data, Split::Val).unwrap();
        let mut model = VsrModel::<f32>::build(&spec, &mut Init::seeded(cfg.train.seed)).unwrap();
        // A five-epoch run, so the cosine schedule spans those five epochs.
        let short = TrainConfig { epochs: EPOCHS, ..cfg.train.clone() };
        let losses: Vec<f64> = train(&mut model, &train_set, &val_set, &short, None)
            .unwrap()
            .log
            .iter()
            .map(|r| r.train_loss)
            .collect();
        assert!(losses.windows(2).all(|w| w[1] < w[0]), "{}: {losses:?}", path.display());
        checked.push(path);
    }
    assert!(checked.len() >= 3, "{checked:?}");
}
