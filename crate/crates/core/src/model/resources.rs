//! Multiply-accumulate and parameter accounting.
//!
//! Biases are counted as parameters but not as mult-adds; batch-norm
//! scale/shift pairs are kept out of the per-layer rows and reported as a
//! separate total.

use std::fmt;

use super::config::{ExtractorLayer, ModelConfig};
use super::trace::{first_violation, shape_trace, Stage};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResourceRow {
    pub name: String,
    pub kind: &'static str,
    /// Per frame for extractor rows, per segment otherwise.
    pub mult_adds: u64,
    /// Per-segment mult-adds (extractor rows scaled by the frame count).
    pub segment_mult_adds: u64,
    pub parameters: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResourceReport {
    pub rows: Vec<ResourceRow>,
    pub total_mult_adds: u64,
    pub total_segment_mult_adds: u64,
    pub total_parameters: u64,
    pub batchnorm_parameters: u64,
    /// Pointwise mult-adds over all depthwise + pointwise mult-adds.
    pub pointwise_mult_add_share: f64,
    /// Pointwise parameters over all depthwise + pointwise parameters.
    pub pointwise_parameter_share: f64,
}

impl ResourceReport {
    pub fn row(&self, name: &str) -> Option<&ResourceRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    /// Learnable parameters including batch norm: what a built model stores.
    pub fn parameters_with_batchnorm(&self) -> u64 {
        self.total_parameters + self.batchnorm_parameters
    }

    /// Rows of one kind, in order.
    pub fn rows_of<'a>(&'a self, kind: &'a str) -> impl Iterator<Item = &'a ResourceRow> + 'a {
        self.rows.iter().filter(move |r| r.kind == kind)
    }

    /// Comma-separated table with a header row and trailing totals.
    pub fn to_delimited(&self) -> String {
        let mut out = String::from("layer,kind,mult_adds,segment_mult_adds,parameters\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.name, r.kind, r.mult_adds, r.segment_mult_adds, r.parameters
            ));
        }
        out.push_str(&format!(
            "total,,{},{},{}\n",
            self.total_mult_adds, self.total_segment_mult_adds, self.total_parameters
        ));
        out.push_str(&format!("batchnorm,,0,0,{}\n", self.batchnorm_parameters));
        out.push_str(&format!("pointwise_mult_add_share,,{:.4},,\n", self.pointwise_mult_add_share));
        out.push_str(&format!("pointwise_parameter_share,,{:.4},,\n", self.pointwise_parameter_share));
        out
    }
}

impl fmt::Display for ResourceReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<16} {:<15} {:>12} {:>16} {:>11}", "layer", "kind", "mult-adds", "per segment", "parameters")?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<16} {:<15} {:>12} {:>16} {:>11}",
                r.name, r.kind, r.mult_adds, r.segment_mult_adds, r.parameters
            )?;
        }
        writeln!(
            f,
            "{:<16} {:<15} {:>12} {:>16} {:>11}",
            "total", "", self.total_mult_adds, self.total_segment_mult_adds, self.total_parameters
        )?;
        writeln!(f, "batch norm parameters: {}", self.batchnorm_parameters)?;
        writeln!(
            f,
            "pointwise share of depthwise-separable layers: {:.1}% mult-adds, {:.1}% parameters",
            100.0 * self.pointwise_mult_add_share,
            100.0 * self.pointwise_parameter_share
        )
    }
}

/// Counts every layer of a closed configuration.
pub fn count_resources(config: &ModelConfig) -> Result<ResourceReport> {
    let trace = shape_trace(config);
    if let Some(bad) = first_violation(&trace) {
        return Err(Error::config(bad.label(), bad.error.clone().unwrap_or_default()));
    }
    let frames = config.frames_per_segment as u64;
    let mut rows = Vec::new();
    let mut bn = 0u64;

    let extractor = trace.iter().filter(|e| e.stage == Stage::Extractor);
    for (entry, layer) in extractor.zip(&config.extractor) {
        let (c_in, out) = (entry.input[1] as u64, entry.output.as_ref().expect("closed trace"));
        let (l_out, c_out) = (out[0] as u64, out[1] as u64);
        let (kind, macs, params) = match *layer {
            ExtractorLayer::Conv { kernel, .. } => {
                let k = kernel as u64;
                ("conv1d", c_in * k * c_out * l_out, c_in * k * c_out + c_out)
            }
            ExtractorLayer::Depthwise { kernel, .. } => {
                let k = kernel as u64;
                ("depthwise", c_in * k * l_out, c_in * k + c_in)
            }
            ExtractorLayer::Pointwise { .. } => ("pointwise", c_in * c_out * l_out, c_in * c_out + c_out),
        };
        bn += 2 * c_out;
        rows.push(ResourceRow {
            name: format!("extractor.{}", entry.index),
            kind,
            mult_adds: macs,
            segment_mult_adds: macs * frames,
            parameters: params,
        });
    }

    let dilated = trace
        .iter()
        .filter(|e| e.stage == Stage::Dilated && e.layer == "dilated_conv2d");
    for (entry, block) in dilated.zip(&config.dilated) {
        let c_in = entry.input[2] as u64;
        let out = entry.output.as_ref().expect("closed trace");
        let (h, w, c_out) = (out[0] as u64, out[1] as u64, out[2] as u64);
        let taps = (block.kernel_h * block.kernel_w) as u64;
        let macs = c_in * taps * c_out * h * w;
        bn += 2 * c_out;
        rows.push(ResourceRow {
            name: format!("dilated.{}", entry.index),
            kind: "dilated_conv2d",
            mult_adds: macs,
            segment_mult_adds: macs,
            parameters: c_in * taps * c_out + c_out,
        });
    }

    let cls = trace.last().expect("trace has a classifier entry");
    let (f, c) = (cls.input[0] as u64, config.class_count as u64);
    rows.push(ResourceRow {
        name: "classifier".into(),
        kind: "linear",
        mult_adds: f * c,
        segment_mult_adds: f * c,
        parameters: f * c + c,
    });

    let share = |field: fn(&ResourceRow) -> u64| {
        let pw: u64 = rows.iter().filter(|r| r.kind == "pointwise").map(field).sum();
        let dw: u64 = rows.iter().filter(|r| r.kind == "depthwise").map(field).sum();
        if pw + dw == 0 {
            0.0
        } else {
            pw as f64 / (pw + dw) as f64
        }
    };
    let pointwise_mult_add_share = share(|r| r.mult_adds);
    let pointwise_parameter_share = share(|r| r.parameters);
    Ok(ResourceReport {
        total_mult_adds: rows.iter().map(|r| r.mult_adds).sum(),
        total_segment_mult_adds: rows.iter().map(|r| r.segment_mult_adds).sum(),
        total_parameters: rows.iter().map(|r| r.parameters).sum(),
        batchnorm_parameters: bn,
        pointwise_mult_add_share,
        pointwise_parameter_share,
        rows,
    })
}

/// Cost of a depthwise-separable pair relative to the standard convolution it
/// replaces: `1/out_channels + 1/(kernel_h·kernel_w)`.
pub fn complexity_decline_ratio(out_channels: usize, kernel_h: usize, kernel_w: usize) -> Result<f64> {
    if out_channels == 0 || kernel_h == 0 || kernel_w == 0 {
        return Err(Error::InvalidArgument(format!(
            "complexity ratio needs positive arguments, got ({out_channels}, {kernel_h}, {kernel_w})"
        )));
    }
    Ok(1.0 / out_channels as f64 + 1.0 / (kernel_h * kernel_w) as f64)
}

/// One depthwise → pointwise pair in a report, with the mult-adds an
/// equivalent standard convolution would need.
#[derive(Debug, Clone, PartialEq)]
pub struct SeparablePair {
    pub depthwise: String,
    pub pointwise: String,
    pub kernel: usize,
    pub out_channels: usize,
    pub separable_mult_adds: u64,
    pub standard_mult_adds: u64,
}

impl SeparablePair {
    pub fn counted_ratio(&self) -> f64 {
        self.separable_mult_adds as f64 / self.standard_mult_adds as f64
    }
}

/// Every depthwise layer immediately followed by a pointwise layer.
pub fn separable_pairs(config: &ModelConfig) -> Result<Vec<SeparablePair>> {
    let report = count_resources(config)?;
    let trace = shape_trace(config);
    let ext: Vec<_> = trace.iter().filter(|e| e.stage == Stage::Extractor).collect();
    let mut pairs = Vec::new();
    for i in 1..config.extractor.len() {
        if let (ExtractorLayer::Depthwise { kernel, .. }, ExtractorLayer::Pointwise { channels }) =
            (config.extractor[i - 1], config.extractor[i])
        {
            let dw = &report.rows[i - 1];
            let pw = &report.rows[i];
            let c_in = ext[i - 1].input[1] as u64;
            let l_out = ext[i].output.as_ref().expect("closed trace")[0] as u64;
            pairs.push(SeparablePair {
                depthwise: dw.name.clone(),
                pointwise: pw.name.clone(),
                kernel,
                out_channels: channels,
                separable_mult_adds: dw.mult_adds + pw.mult_adds,
                standard_mult_adds: c_in * kernel as u64 * channels as u64 * l_out,
            });
        }
    }
    Ok(pairs)
}
