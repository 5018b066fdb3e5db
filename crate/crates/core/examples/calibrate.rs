//! Searches the reconstructed TCN hyperparameters and ghost knobs against reference totals.
//!
//! Usage: `cargo run --release --example calibrate -p lite-vsr`

use lite_vsr::architectures::{DcTcnKnobs, FrontendVariant, GhostKnobs, ModelSpec, SeqModel, VsrModel};
use lite_vsr::blocks::{CoreKind, Directional, PrimaryKernel};
use lite_vsr::cost::{reduction, CostReport, CountingConvention};
use lite_vsr::nn::Init;

fn convention() -> CountingConvention {
    CountingConvention {
        count_causal_padding: true,
        ..Default::default()
    }
}

fn report(spec: &ModelSpec) -> Option<CostReport> {
    let model = VsrModel::<f32>::build(spec, &mut Init::zeros()).ok()?;
    model.cost_report(convention()).ok()
}

fn millions(report: &CostReport, prefixes: &[&str]) -> (f64, f64) {
    let r = report.restrict(prefixes);
    (r.total_params as f64 / 1e6, r.total_macs as f64 / 1e9)
}

fn frontend() {
    println!("# frontend (trunk only)");
    for primary in [PrimaryKernel::Pointwise, PrimaryKernel::Inherit] {
        for ratio in [0.25, 0.5] {
            for replace_strided in [true, false] {
                let spec = ModelSpec {
                    frontend_variant: FrontendVariant::Ghost,
                    frontend_ghost: GhostKnobs { ratio, primary, cheap_kernel: 3, replace_strided },
                    ..Default::default()
                };
                let Some(r) = report(&spec) else { continue };
                let (p, m) = millions(&r, &["frontend.trunk"]);
                println!("ghost primary={primary:?} ratio={ratio} strided={replace_strided}: {p:.2}M {m:.2}G");
            }
        }
    }
    for directional in [Directional::Depthwise, Directional::Full] {
        for primary in [PrimaryKernel::Pointwise, PrimaryKernel::Inherit] {
            for ratio in [0.25, 0.5] {
                let spec = ModelSpec {
                    frontend_variant: FrontendVariant::GhostV2,
                    frontend_ghost: GhostKnobs { ratio, primary, cheap_kernel: 3, replace_strided: true },
                    dfc_directional: directional,
                    ..Default::default()
                };
                let Some(r) = report(&spec) else { continue };
                let (p, m) = millions(&r, &["frontend.trunk"]);
                println!("ghostv2 {directional:?} primary={primary:?} ratio={ratio}: {p:.2}M {m:.2}G");
            }
        }
    }
}

fn seq_pair(base: &ModelSpec) -> Option<(f64, f64, f64, f64)> {
    let std = report(base)?;
    let ghost = report(&ModelSpec { seq_ghost: true, ..base.clone() })?;
    let (p0, m0) = millions(&std, &["sequence", "head"]);
    let (p1, m1) = millions(&ghost, &["sequence", "head"]);
    Some((p0, m0, reduction(p0, p1).ok()?, reduction(m0, m1).ok()?))
}

fn mstcn() {
    println!("# MS-TCN: target 25.17M 1.12G, ghost -44.8% params -47.3% MACs");
    for hidden in (720..=900).step_by(24) {
        let spec = ModelSpec { seq_model: SeqModel::Mstcn, hidden_width: hidden, ..Default::default() };
        if let Some((p, m, dp, dm)) = seq_pair(&spec) {
            println!("hidden={hidden}: {p:.2}M {m:.3}G ghost {dp:.1}% {dm:.1}%");
        }
    }
}

fn dctcn() {
    println!("# DC-TCN: target 41.36M 1.47G, ghost -35.6% params -42.8% MACs");
    let mut best: Vec<(f64, String)> = Vec::new();
    for units in 2..=6 {
        for growth in (96..=384).step_by(48) {
            for hidden in (512..=1792).step_by(64) {
                let spec = ModelSpec {
                    seq_model: SeqModel::Dctcn,
                    hidden_width: hidden,
                    dctcn: DcTcnKnobs { growth, units },
                    ..Default::default()
                };
                let Some((p, m, dp, dm)) = seq_pair(&spec) else { continue };
                let score = ((p - 41.36) / 41.36).powi(2) + ((m - 1.47) / 1.47).powi(2) + ((dp - 35.6) / 35.6).powi(2) + ((dm - 42.8) / 42.8).powi(2);
                best.push((score, format!("units={units} growth={growth} hidden={hidden}: {p:.2}M {m:.3}G ghost {dp:.1}% {dm:.1}%")));
            }
        }
    }
    best.sort_by(|a, b| a.0.total_cmp(&b.0));
    for (_, line) in best.iter().take(8) {
        println!("{line}");
    }
}

fn partial() {
    println!("# partial TCN (sequence + head)");
    for core in [CoreKind::Temporal, CoreKind::Shuffle, CoreKind::Faster] {
        for ratio in [0.25, 0.5, 0.75] {
            for kernel in [3, 5, 7, 9] {
                let spec = ModelSpec { partial_core: core, ratio, kernel, ..Default::default() };
                let Some(r) = report(&spec) else { continue };
                let (p, m) = millions(&r, &["sequence", "head"]);
                let (ps, ms) = millions(&r, &["sequence"]);
                println!("{core:?} ratio={ratio} k={kernel}: {p:.2}M {m:.3}G (no head {ps:.2}M {ms:.3}G)");
            }
        }
    }
}

fn main() {
    let which = std::env::args().nth(1).unwrap_or_default();
    match which.as_str() {
        "frontend" => frontend(),
        "mstcn" => mstcn(),
        "dctcn" => dctcn(),
        "partial" => partial(),
        _ => {
            frontend();
            mstcn();
            dctcn();
            partial();
        }
    }
}
