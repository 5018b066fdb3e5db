use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use lite_vsr::architectures::VsrModel;
use lite_vsr::checkpoint;
use lite_vsr::config::RunConfig;
use lite_vsr::cost::CostReport;
use lite_vsr::gradcheck::{run_suite, Suite};
use lite_vsr::nn::Init;
use lite_vsr::tables::{build_table_threaded, Table, TableEntry};
use lite_vsr::train::{self, Dataset, Split};
use lite_vsr::{Error, Precision, Result, Scalar};

#[derive(Parser)]
#[command(name = "lite-vsr", version, about = "Cost analysis, training and gradient checks for lightweight lipreading models")]
struct Cli {
    /// Numeric precision (default: standard, except high for gradcheck).
    #[arg(long, global = true, value_enum)]
    precision: Option<PrecisionArg>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum PrecisionArg {
    Standard,
    High,
}

#[derive(Subcommand)]
enum Command {
    /// Print a cost table for the config's table rows, or a per-component breakdown of its model.
    Analyze {
        #[arg(long)]
        config: PathBuf,
        /// `md` or `csv` for stdout, or a file path (CSV when it ends in .csv).
        #[arg(long)]
        out: Option<String>,
    },
    /// Train on the synthetic dataset, writing the log and best checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "checkpoints")]
        ckpt_dir: PathBuf,
    },
    /// Validation accuracy of a checkpoint.
    Eval {
        #[arg(long)]
        config: PathBuf,
        /// Checkpoint file; defaults to best.ckpt inside --ckpt-dir.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "checkpoints")]
        ckpt_dir: PathBuf,
    },
    /// Finite-difference gradient checks of every block.
    Gradcheck {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        tolerance: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Export the synthetic dataset as f32 blobs with JSON sidecars.
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print every config section with its defaults.
    Schema,
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config { .. } | Error::InvalidArgument(_) => 2,
        Error::Io { .. } | Error::Format(_) => 3,
        Error::NonFinite { .. } => 4,
        Error::Shape(_) | Error::CheckpointMismatch { .. } => 5,
    }
}

fn threads() -> usize {
    std::env::var("LITE_VSR_THREADS").ok().and_then(|v| v.parse().ok()).filter(|&n| n > 0).unwrap_or(1)
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
}

/// Per-component rows of a single model, plus the total.
fn breakdown(report: &CostReport) -> Vec<TableEntry> {
    let mut groups: Vec<String> = Vec::new();
    for row in &report.rows {
        let mut parts = row.path.split('.');
        let first = parts.next().unwrap_or_default();
        let key = match (first, parts.next()) {
            ("frontend", Some(second)) => format!("frontend.{second}"),
            _ => first.to_string(),
        };
        if !groups.contains(&key) {
            groups.push(key);
        }
    }
    let mut entries: Vec<TableEntry> = groups
        .iter()
        .map(|g| {
            let (params, macs) = report.subtotal(g);
            TableEntry { model: g.clone(), variant: String::new(), params, macs, change: None }
        })
        .collect();
    entries.push(TableEntry {
        model: "total".into(),
        variant: String::new(),
        params: report.total_params,
        macs: report.total_macs,
        change: None,
    });
    entries
}

fn analyze(config: &Path, out: Option<&str>) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    let table = if cfg.rows.is_empty() && cfg.title.is_empty() {
        let report = VsrModel::<f32>::build(&cfg.model, &mut Init::zeros())?.cost_report(cfg.cost)?;
        Table { title: String::new(), convention: cfg.cost, entries: breakdown(&report) }
    } else {
        build_table_threaded(&cfg.title, &cfg.rows, cfg.cost, threads())?
    };
    match out {
        None | Some("md") => print!("{}", table.to_markdown()),
        Some("csv") => print!("{}", table.to_csv()?),
        Some(path) => {
            let path = Path::new(path);
            let text = if path.extension().is_some_and(|e| e == "csv") { table.to_csv()? } else { table.to_markdown() };
            write_file(path, &text)?;
            println!("table={}", path.display());
            println!("rows={}", table.entries.len());
        }
    }
    Ok(())
}

fn run_train<T: Scalar>(config: &Path, seed: Option<u64>, ckpt_dir: &Path) -> Result<()> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(seed) = seed {
        cfg.train.seed = seed;
    }
    let spec = cfg.training_spec()?;
    let train_set = Dataset::generate(&cfg.data, Split::Train)?;
    let val_set = Dataset::generate(&cfg.data, Split::Val)?;
    let mut model = VsrModel::<T>::build(&spec, &mut Init::seeded(cfg.train.seed))?;
    let outcome = train::train(&mut model, &train_set, &val_set, &cfg.train, Some(ckpt_dir))?;
    for row in &outcome.log {
        println!(
            "epoch={} lr={} train_loss={} val_acc={} train_acc={}",
            row.epoch, row.lr, row.train_loss, row.val_acc, row.train_acc
        );
    }
    println!("best_epoch={}", outcome.best_epoch);
    println!("best_val_acc={}", outcome.best_val_acc);
    println!("best_train_acc={}", outcome.best_train_acc);
    println!("log={}", ckpt_dir.join(train::LOG_FILE).display());
    if let Some(path) = outcome.checkpoint {
        println!("checkpoint={}", path.display());
    }
    Ok(())
}

fn run_eval<T: Scalar>(config: &Path, checkpoint_path: &Path) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    let spec = cfg.training_spec()?;
    let mut model = VsrModel::<T>::build(&spec, &mut Init::zeros())?;
    checkpoint::load(&mut model, checkpoint_path)?;
    let val_set = Dataset::generate(&cfg.data, Split::Val)?;
    let acc = train::evaluate(&mut model, &val_set, cfg.train.batch_size)?;
    println!("acc={acc}");
    Ok(())
}

fn run_gradcheck<T: Scalar>(suites: &[Suite], tolerance: f64, seed: u64) -> Result<bool> {
    let mut failed = 0;
    for &suite in suites {
        for r in run_suite::<T>(suite, tolerance, seed)? {
            let status = if r.passed() { "pass" } else { "fail" };
            failed += usize::from(!r.passed());
            println!("block={} status={status} max_error={:.3e} worst={} checked={}", r.name, r.max_error, r.worst, r.checked);
        }
    }
    println!("tolerance={tolerance}");
    println!("failed={failed}");
    Ok(failed == 0)
}

fn gen_data(config: &Path, out: &Path) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    for (split, name) in [(Split::Train, "train"), (Split::Val, "val")] {
        let data = Dataset::generate(&cfg.data, split)?;
        train::export_dataset(&data, out, name)?;
        println!("{name}={} count={}", out.join(format!("{name}.f32")).display(), data.len());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    let precision = |default| match cli.precision {
        Some(PrecisionArg::Standard) => Precision::Standard,
        Some(PrecisionArg::High) => Precision::High,
        None => default,
    };
    match cli.command {
        Command::Analyze { ref config, ref out } => analyze(config, out.as_deref())?,
        Command::Train { ref config, seed, ref ckpt_dir } => match precision(Precision::Standard) {
            Precision::Standard => run_train::<f32>(config, seed, ckpt_dir)?,
            Precision::High => run_train::<f64>(config, seed, ckpt_dir)?,
        },
        Command::Eval { ref config, ref checkpoint, ref ckpt_dir } => {
            let path = checkpoint.clone().unwrap_or_else(|| ckpt_dir.join(train::BEST_CHECKPOINT));
            match precision(Precision::Standard) {
                Precision::Standard => run_eval::<f32>(config, &path)?,
                Precision::High => run_eval::<f64>(config, &path)?,
            }
        }
        Command::Gradcheck { ref config, tolerance, seed } => {
            let cfg_seed = match config {
                Some(path) => RunConfig::load(path)?.train.seed,
                None => 0,
            };
            let seed = seed.unwrap_or(cfg_seed);
            // Composite blocks have activation kinks that f32 differences cannot resolve,
            // so standard precision checks the parametrised layers only.
            return match precision(Precision::High) {
                Precision::High => run_gradcheck::<f64>(&[Suite::Ops, Suite::Blocks], tolerance.unwrap_or(1e-4), seed),
                Precision::Standard => run_gradcheck::<f32>(&[Suite::Ops], tolerance.unwrap_or(1e-2), seed),
            };
        }
        Command::GenData { ref config, ref out } => gen_data(config, out)?,
        Command::Schema => print!("{}", RunConfig::defaults_json()),
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(4),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
