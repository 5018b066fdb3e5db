//! Analytical parameter and multiply-accumulate (MAC) counting.
//!
//! "FLOPs" throughout the reports means MACs: one multiply-accumulate per
//! weight tap per output element. Counts are per clip (batch size 1).

use serde::{Deserialize, Serialize};

use crate::conv::{ConvDescriptor, PaddingMode};
use crate::error::{Error, Result};

/// What the counter includes. Recorded inside every [`CostReport`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CountingConvention {
    /// Add one MAC per output element for layers with a bias.
    pub macs_count_bias: bool,
    /// Count batch-norm scale/shift pairs as parameters.
    pub count_bn_affine_params: bool,
    /// Charge one MAC per element for batch norm, activations, residual adds,
    /// attention products, and one per window tap for pooling.
    pub count_elementwise_macs: bool,
    /// Charge causal convolutions for the `(kernel - 1) * dilation` extra output
    /// positions that a pad-both-sides-then-trim implementation computes.
    pub count_causal_padding: bool,
}

impl Default for CountingConvention {
    fn default() -> Self {
        Self {
            macs_count_bias: false,
            count_bn_affine_params: true,
            count_elementwise_macs: false,
            count_causal_padding: false,
        }
    }
}

impl CountingConvention {
    /// Short stable label, used in the CSV `convention` column.
    pub fn label(&self) -> String {
        let mut parts = vec!["macs"];
        if self.macs_count_bias {
            parts.push("bias");
        }
        if !self.count_bn_affine_params {
            parts.push("no-bn-params");
        }
        if self.count_elementwise_macs {
            parts.push("elementwise");
        }
        if self.count_causal_padding {
            parts.push("causal-pad");
        }
        parts.join("+")
    }
}

/// Frames, spatial size and channels of one input clip.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputSpec {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl Default for InputSpec {
    fn default() -> Self {
        Self {
            frames: 29,
            height: 88,
            width: 88,
            channels: 1,
        }
    }
}

impl InputSpec {
    /// `[1, channels, frames, height, width]`
    pub fn clip_shape(&self) -> Vec<usize> {
        vec![1, self.channels, self.frames, self.height, self.width]
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostRow {
    pub path: String,
    pub params: u64,
    pub macs: u64,
}

/// Per-layer and total costs.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostReport {
    pub rows: Vec<CostRow>,
    pub total_params: u64,
    pub total_macs: u64,
    pub input: InputSpec,
    pub convention: CountingConvention,
}

impl CostReport {
    pub fn params_millions(&self) -> f64 {
        self.total_params as f64 / 1e6
    }

    pub fn gmacs(&self) -> f64 {
        self.total_macs as f64 / 1e9
    }

    /// Totals over rows whose path starts with `prefix` (a whole dotted component).
    pub fn subtotal(&self, prefix: &str) -> (u64, u64) {
        self.rows
            .iter()
            .filter(|r| r.path == prefix || r.path.starts_with(&format!("{prefix}.")))
            .fold((0, 0), |(p, m), r| (p + r.params, m + r.macs))
    }

    /// Restricts the report to rows under any of `prefixes`.
    pub fn restrict(&self, prefixes: &[&str]) -> CostReport {
        let rows: Vec<CostRow> = self
            .rows
            .iter()
            .filter(|r| {
                prefixes
                    .iter()
                    .any(|p| r.path == *p || r.path.starts_with(&format!("{p}.")))
            })
            .cloned()
            .collect();
        Self::from_rows(rows, self.input, self.convention)
    }

    pub fn from_rows(rows: Vec<CostRow>, input: InputSpec, convention: CountingConvention) -> Self {
        let total_params = rows.iter().map(|r| r.params).sum();
        let total_macs = rows.iter().map(|r| r.macs).sum();
        Self {
            rows,
            total_params,
            total_macs,
            input,
            convention,
        }
    }

    /// Concatenates two reports measured under the same input and convention.
    pub fn compose(&self, other: &CostReport) -> Result<CostReport> {
        if self.input != other.input || self.convention != other.convention {
            return Err(Error::invalid(
                "cannot compose cost reports with different inputs or conventions",
            ));
        }
        let mut rows = self.rows.clone();
        rows.extend(other.rows.iter().cloned());
        Ok(Self::from_rows(rows, self.input, self.convention))
    }
}

/// `100 * (1 - variant / base)` for parameters and MACs.
pub fn percent_reduction(base: &CostReport, variant: &CostReport) -> Result<(f64, f64)> {
    if base.input != variant.input {
        return Err(Error::invalid(
            "percent reduction needs reports measured on the same input",
        ));
    }
    Ok((
        reduction(base.total_params as f64, variant.total_params as f64)?,
        reduction(base.total_macs as f64, variant.total_macs as f64)?,
    ))
}

/// `100 * (1 - variant / base)`.
pub fn reduction(base: f64, variant: f64) -> Result<f64> {
    if base == 0.0 {
        return Err(Error::invalid("percent reduction against a zero baseline"));
    }
    Ok(100.0 * (1.0 - variant / base))
}

/// Accumulates rows while walking a module tree.
#[derive(Clone, Debug)]
pub struct CostCounter {
    pub convention: CountingConvention,
    rows: Vec<CostRow>,
}

impl CostCounter {
    pub fn new(convention: CountingConvention) -> Self {
        Self {
            convention,
            rows: Vec::new(),
        }
    }

    fn push(&mut self, path: &str, params: u64, macs: u64) {
        if params == 0 && macs == 0 {
            return;
        }
        self.rows.push(CostRow {
            path: path.to_string(),
            params,
            macs,
        });
    }

    /// `out` is the convolution's output shape `[N, C_out, spatial...]`.
    pub fn conv(&mut self, path: &str, desc: &ConvDescriptor, bias: bool, out: &[usize]) {
        let mut positions: u64 = out[2..].iter().map(|&v| v as u64).product();
        if self.convention.count_causal_padding && desc.padding == PaddingMode::CausalLeft {
            let extra = (desc.dilation[0] * (desc.kernel[0] - 1)) as u64;
            positions += extra;
        }
        let outputs = out[0] as u64 * out[1] as u64 * positions;
        let per_output = (desc.kernel_volume() * desc.in_per_group()) as u64;
        let mut macs = outputs * per_output;
        let mut params = desc.weight_len() as u64;
        if bias {
            params += desc.out_channels as u64;
            if self.convention.macs_count_bias {
                macs += outputs;
            }
        }
        self.push(path, params, macs);
    }

    pub fn batch_norm(&mut self, path: &str, channels: usize, numel: usize) {
        let params = if self.convention.count_bn_affine_params {
            2 * channels as u64
        } else {
            0
        };
        let macs = if self.convention.count_elementwise_macs {
            numel as u64
        } else {
            0
        };
        self.push(path, params, macs);
    }

    pub fn linear(&mut self, path: &str, in_features: usize, out_features: usize, rows: usize) {
        let mut macs = (rows * in_features * out_features) as u64;
        if self.convention.macs_count_bias {
            macs += (rows * out_features) as u64;
        }
        self.push(path, (in_features * out_features + out_features) as u64, macs);
    }

    /// Parameter-free elementwise work (activations, adds, products, pooling taps).
    pub fn elementwise(&mut self, path: &str, ops: usize) {
        if self.convention.count_elementwise_macs {
            self.push(path, 0, ops as u64);
        }
    }

    pub fn finish(self, input: InputSpec) -> CostReport {
        CostReport::from_rows(self.rows, input, self.convention)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv3x3_params_and_macs() {
        let mut c = CostCounter::new(CountingConvention::default());
        let desc = ConvDescriptor::new([3, 3], 64, 64);
        c.conv("conv", &desc, false, &[1, 64, 8, 8]);
        let r = c.finish(InputSpec::default());
        assert_eq!(r.total_params, 36_864);
        assert_eq!(r.total_macs, 36_864 * 64);
    }

    #[test]
    fn pointwise_sequence_macs() {
        let (t, ch) = (29usize, 512usize);
        let mut c = CostCounter::new(CountingConvention::default());
        c.conv("pw", &ConvDescriptor::pointwise(1, ch, ch), false, &[1, ch, t]);
        assert_eq!(c.finish(InputSpec::default()).total_macs, (t * ch * ch) as u64);
    }

    #[test]
    fn reductions() {
        assert!((reduction(8.29, 2.13).unwrap() - 74.3).abs() < 0.05);
        assert!((reduction(25.17, 13.88).unwrap() - 44.8).abs() < 0.1);
        assert_eq!(reduction(3.0, 3.0).unwrap(), 0.0);
        assert!(reduction(0.0, 1.0).is_err());
    }

    #[test]
    fn causal_padding_convention() {
        let desc = ConvDescriptor::causal(3, 4, 2, 2);
        let mut plain = CostCounter::new(CountingConvention::default());
        plain.conv("c", &desc, false, &[1, 2, 10]);
        let mut padded = CostCounter::new(CountingConvention {
            count_causal_padding: true,
            ..Default::default()
        });
        padded.conv("c", &desc, false, &[1, 2, 10]);
        assert_eq!(plain.finish(InputSpec::default()).total_macs, 2 * 10 * 6);
        assert_eq!(padded.finish(InputSpec::default()).total_macs, 2 * 18 * 6);
    }
}
