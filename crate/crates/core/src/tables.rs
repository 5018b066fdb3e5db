//! Cost tables over lists of model specifications, as markdown or CSV.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::architectures::{ModelSpec, VsrModel};
use crate::cost::{reduction, CostReport, CountingConvention};
use crate::error::{Error, Result};
use crate::nn::Init;

/// One requested table row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableRow {
    pub model: String,
    #[serde(default)]
    pub variant: String,
    /// Report path prefixes to sum, e.g. `frontend.trunk`; empty means the whole model.
    #[serde(default)]
    pub components: Vec<String>,
    /// Index of an earlier row to print percentage changes against.
    #[serde(default)]
    pub baseline: Option<usize>,
    pub spec: ModelSpec,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TableEntry {
    pub model: String,
    pub variant: String,
    pub params: u64,
    pub macs: u64,
    /// Percentage change `(params, macs)` relative to the baseline row.
    pub change: Option<(f64, f64)>,
}

impl TableEntry {
    pub fn params_millions(&self) -> f64 {
        self.params as f64 / 1e6
    }

    pub fn gmacs(&self) -> f64 {
        self.macs as f64 / 1e9
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub title: String,
    pub convention: CountingConvention,
    pub entries: Vec<TableEntry>,
}

/// Full cost report of the model described by `spec`.
pub fn model_report(spec: &ModelSpec, convention: CountingConvention) -> Result<CostReport> {
    VsrModel::<f32>::build(spec, &mut Init::zeros())?.cost_report(convention)
}

/// Restricts a report to the given components (all rows when empty).
pub fn component_report(report: &CostReport, components: &[String]) -> CostReport {
    if components.is_empty() {
        return report.clone();
    }
    let prefixes: Vec<&str> = components.iter().map(String::as_str).collect();
    report.restrict(&prefixes)
}

/// Computes every row in order.
pub fn build_table(title: &str, rows: &[TableRow], convention: CountingConvention) -> Result<Table> {
    build_table_threaded(title, rows, convention, 1)
}

/// Like [`build_table`], costing rows on up to `threads` threads. The result
/// does not depend on the thread count.
pub fn build_table_threaded(title: &str, rows: &[TableRow], convention: CountingConvention, threads: usize) -> Result<Table> {
    let per_thread = rows.len().div_ceil(threads.max(1)).max(1);
    let reports: Vec<Result<CostReport>> = std::thread::scope(|scope| {
        let handles: Vec<_> = rows
            .chunks(per_thread)
            .map(|chunk| scope.spawn(move || chunk.iter().map(|r| model_report(&r.spec, convention)).collect::<Vec<_>>()))
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("cost worker panicked")).collect()
    });
    let mut entries: Vec<TableEntry> = Vec::with_capacity(rows.len());
    for (i, (row, report)) in rows.iter().zip(reports).enumerate() {
        let report = report.map_err(|e| Error::Config {
            path: format!("tables.rows[{i}].spec"),
            message: e.to_string(),
        })?;
        let part = component_report(&report, &row.components);
        if !row.components.is_empty() && part.rows.is_empty() {
            return Err(Error::Config {
                path: format!("tables.rows[{i}].components"),
                message: format!("no layers under {:?}", row.components),
            });
        }
        let change = match row.baseline {
            None => None,
            Some(b) if b < i => {
                let base = &entries[b];
                Some((
                    -reduction(base.params as f64, part.total_params as f64)?,
                    -reduction(base.macs as f64, part.total_macs as f64)?,
                ))
            }
            Some(b) => {
                return Err(Error::Config {
                    path: format!("tables.rows[{i}].baseline"),
                    message: format!("baseline {b} must refer to an earlier row"),
                })
            }
        };
        entries.push(TableEntry {
            model: row.model.clone(),
            variant: row.variant.clone(),
            params: part.total_params,
            macs: part.total_macs,
            change,
        });
    }
    Ok(Table {
        title: title.to_string(),
        convention,
        entries,
    })
}

fn with_change(value: f64, change: Option<f64>) -> String {
    match change {
        Some(c) => format!("{value:.2} ({c:+.1}%)"),
        None => format!("{value:.2}"),
    }
}

impl Table {
    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        if !self.title.is_empty() {
            let _ = writeln!(out, "### {}\n", self.title);
        }
        out.push_str("| Model | Variant | FLOPs (GMACs) | Params (M) |\n");
        out.push_str("|---|---|---:|---:|\n");
        for e in &self.entries {
            let _ = writeln!(
                out,
                "| {} | {} | {} | {} |",
                e.model,
                e.variant,
                with_change(e.gmacs(), e.change.map(|c| c.1)),
                with_change(e.params_millions(), e.change.map(|c| c.0)),
            );
        }
        let _ = writeln!(out, "\nCounting convention: `{}`.", self.convention.label());
        out
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::Format(e.to_string());
        writer
            .write_record(["model", "variant", "params_millions", "flops_gigamacs", "convention"])
            .map_err(csv_err)?;
        let label = self.convention.label();
        for e in &self.entries {
            writer
                .write_record([
                    e.model.as_str(),
                    e.variant.as_str(),
                    &format!("{:.2}", e.params_millions()),
                    &format!("{:.2}", e.gmacs()),
                    &label,
                ])
                .map_err(csv_err)?;
        }
        let bytes = writer.into_inner().map_err(|e| Error::Format(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::architectures::FrontendVariant;

    fn row(model: &str, spec: ModelSpec, baseline: Option<usize>) -> TableRow {
        TableRow {
            model: model.into(),
            variant: String::new(),
            components: vec!["frontend.trunk".into()],
            baseline,
            spec,
        }
    }

    #[test]
    fn header_only_when_empty() {
        let t = build_table("", &[], CountingConvention::default()).unwrap();
        assert_eq!(t.to_csv().unwrap(), "model,variant,params_millions,flops_gigamacs,convention\n");
        assert!(t.to_markdown().starts_with("| Model |"));
    }

    #[test]
    fn deltas_against_baseline() {
        let rows = [
            row("ResNet-18", ModelSpec::default(), None),
            row("ResNet-18, ghost", ModelSpec { frontend_variant: FrontendVariant::Ghost, ..Default::default() }, Some(0)),
        ];
        let t = build_table("t", &rows, CountingConvention::default()).unwrap();
        let (dp, dm) = t.entries[1].change.unwrap();
        assert!(dp < 0.0 && dm < 0.0);
        let csv = t.to_csv().unwrap();
        assert!(csv.contains("\"ResNet-18, ghost\""));
        assert!(t.to_markdown().contains("8.29"));
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let rows: Vec<TableRow> = [0.25, 0.5, 0.75]
            .iter()
            .map(|&ratio| TableRow { components: vec![], ..row("p", ModelSpec { ratio, ..Default::default() }, None) })
            .collect();
        let one = build_table("", &rows, CountingConvention::default()).unwrap();
        assert_eq!(build_table_threaded("", &rows, CountingConvention::default(), 3).unwrap(), one);
    }

    #[test]
    fn forward_baseline_is_rejected() {
        let rows = [row("a", ModelSpec::default(), Some(0))];
        assert!(matches!(build_table("", &rows, CountingConvention::default()), Err(Error::Config { .. })));
    }
}
