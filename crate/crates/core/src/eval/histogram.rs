use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_BINS: usize = 20;

/// Per-class counts for one feature dimension over shared bin edges.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureHistogram {
    pub feature: usize,
    /// `bins + 1` edges, or two equal edges for a constant feature.
    pub edges: Vec<f64>,
    /// `counts[class][bin]`
    pub counts: Vec<Vec<u64>>,
}

impl FeatureHistogram {
    pub fn degenerate(&self) -> bool {
        self.edges.len() == 2 && self.edges[0] == self.edges[1]
    }
}

/// Histograms of every column of a `[samples, F]` matrix, split by label.
/// Edges span each feature's global range; a constant feature gets a
/// single degenerate bin holding every sample.
pub fn feature_histograms(features: &Tensor, labels: &[usize], classes: usize, bins: usize) -> Result<Vec<FeatureHistogram>> {
    if bins < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 bins, got {bins}")));
    }
    features.expect_rank(2, "feature matrix")?;
    let (n, f) = (features.shape()[0], features.shape()[1]);
    if labels.len() != n {
        return Err(Error::shape(format!("{} labels for {n} samples", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::InvalidLabel(format!("label {bad} with {classes} classes")));
    }
    let x = features.data();
    let mut out = Vec::with_capacity(f);
    for j in 0..f {
        let column = (0..n).map(|i| x[i * f + j]);
        let (lo, hi) = column.clone().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        if lo == hi {
            let mut counts = vec![vec![0u64; 1]; classes];
            labels.iter().for_each(|&l| counts[l][0] += 1);
            out.push(FeatureHistogram {
                feature: j,
                edges: vec![lo, hi],
                counts,
            });
            continue;
        }
        let width = (hi - lo) / bins as f64;
        let edges: Vec<f64> = (0..=bins).map(|b| if b == bins { hi } else { lo + b as f64 * width }).collect();
        let mut counts = vec![vec![0u64; bins]; classes];
        for (v, &l) in column.zip(labels) {
            let b = (((v - lo) / width) as usize).min(bins - 1);
            counts[l][b] += 1;
        }
        out.push(FeatureHistogram { feature: j, edges, counts });
    }
    Ok(out)
}

/// `feature,class,bin,lower,upper,count` rows.
pub fn histograms_to_delimited(hists: &[FeatureHistogram], class_names: &[String]) -> String {
    let mut out = String::from("feature,class,bin,lower,upper,count\n");
    for h in hists {
        for (c, row) in h.counts.iter().enumerate() {
            let name = class_names.get(c).map_or_else(|| c.to_string(), Clone::clone);
            for (b, &count) in row.iter().enumerate() {
                let (lo, hi) = if h.degenerate() { (h.edges[0], h.edges[1]) } else { (h.edges[b], h.edges[b + 1]) };
                writeln!(out, "{},{name},{b},{lo},{hi},{count}", h.feature).unwrap();
            }
        }
    }
    out
}

/// Convenience: histograms straight to delimited text.
pub fn export_feature_histograms(features: &Tensor, labels: &[usize], class_names: &[String], bins: usize) -> Result<String> {
    let h = feature_histograms(features, labels, class_names.len(), bins)?;
    Ok(histograms_to_delimited(&h, class_names))
}
