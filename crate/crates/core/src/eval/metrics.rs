use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
    pub class_names: Vec<String>,
}

impl ConfusionMatrix {
    pub fn from_counts(counts: Vec<Vec<u64>>, class_names: Vec<String>) -> Result<Self> {
        let c = counts.len();
        if c == 0 || counts.iter().any(|r| r.len() != c) {
            return Err(Error::shape("confusion matrix must be square and nonempty"));
        }
        if class_names.len() != c {
            return Err(Error::shape(format!("{} class names for {c} classes", class_names.len())));
        }
        Ok(Self { counts, class_names })
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes()).map(|i| self.counts[i][i]).sum()
    }

    pub fn to_delimited(&self) -> String {
        let mut out = String::from("true\\predicted");
        for n in &self.class_names {
            write!(out, ",{n}").unwrap();
        }
        out.push('\n');
        for (n, row) in self.class_names.iter().zip(&self.counts) {
            out.push_str(n);
            for v in row {
                write!(out, ",{v}").unwrap();
            }
            out.push('\n');
        }
        out
    }
}

/// Tallies `(true, predicted)` pairs.
pub fn confusion(predicted: &[usize], truth: &[usize], class_names: &[String]) -> Result<ConfusionMatrix> {
    let c = class_names.len();
    if predicted.len() != truth.len() {
        return Err(Error::shape(format!(
            "{} predictions for {} labels",
            predicted.len(),
            truth.len()
        )));
    }
    let mut counts = vec![vec![0u64; c]; c];
    for (&p, &t) in predicted.iter().zip(truth) {
        if p >= c || t >= c {
            return Err(Error::InvalidLabel(format!("label pair ({t}, {p}) outside 0..{c}")));
        }
        counts[t][p] += 1;
    }
    ConfusionMatrix::from_counts(counts, class_names.to_vec())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassMetrics {
    pub name: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
    /// Set when a rate was 0/0 and reported as 0.
    pub undefined: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Averages {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub per_class: Vec<ClassMetrics>,
    pub accuracy: f64,
    pub macro_avg: Averages,
    pub micro_avg: Averages,
    pub weighted_avg: Averages,
    pub total: u64,
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

pub fn metrics(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::InvalidArgument("confusion matrix is empty".into()));
    }
    let c = cm.classes();
    let (mut tp_all, mut fp_all, mut fn_all) = (0u64, 0u64, 0u64);
    let mut per_class = Vec::with_capacity(c);
    for k in 0..c {
        let tp = cm.counts[k][k];
        let support: u64 = cm.counts[k].iter().sum();
        let predicted: u64 = (0..c).map(|t| cm.counts[t][k]).sum();
        tp_all += tp;
        fp_all += predicted - tp;
        fn_all += support - tp;
        let (precision, p_undef) = ratio(tp, predicted);
        let (recall, r_undef) = ratio(tp, support);
        per_class.push(ClassMetrics {
            name: cm.class_names[k].clone(),
            precision,
            recall,
            f1: f1_score(precision, recall),
            support,
            undefined: p_undef || r_undef,
        });
    }
    let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / c as f64;
    let weighted = |f: fn(&ClassMetrics) -> f64| {
        per_class.iter().map(|m| f(m) * m.support as f64).sum::<f64>() / total as f64
    };
    let micro_p = ratio(tp_all, tp_all + fp_all).0;
    let micro_r = ratio(tp_all, tp_all + fn_all).0;
    Ok(MetricsReport {
        accuracy: cm.trace() as f64 / total as f64,
        macro_avg: Averages {
            precision: mean(|m| m.precision),
            recall: mean(|m| m.recall),
            f1: mean(|m| m.f1),
        },
        micro_avg: Averages {
            precision: micro_p,
            recall: micro_r,
            f1: f1_score(micro_p, micro_r),
        },
        weighted_avg: Averages {
            precision: weighted(|m| m.precision),
            recall: weighted(|m| m.recall),
            f1: weighted(|m| m.f1),
        },
        per_class,
        total,
    })
}

impl MetricsReport {
    /// One row per class, then accuracy and the three averages.
    pub fn to_delimited(&self) -> String {
        let mut out = String::from("class,precision,recall,f1,support,undefined\n");
        for m in &self.per_class {
            writeln!(
                out,
                "{},{:.4},{:.4},{:.4},{},{}",
                m.name, m.precision, m.recall, m.f1, m.support, m.undefined
            )
            .unwrap();
        }
        writeln!(out, "accuracy,,,{:.4},{},", self.accuracy, self.total).unwrap();
        for (name, a) in [
            ("macro avg", self.macro_avg),
            ("micro avg", self.micro_avg),
            ("weighted avg", self.weighted_avg),
        ] {
            writeln!(out, "{name},{:.4},{:.4},{:.4},{},", a.precision, a.recall, a.f1, self.total).unwrap();
        }
        out
    }

    /// `key = value` lines for scripts.
    pub fn to_key_values(&self) -> String {
        let mut out = String::new();
        writeln!(out, "accuracy = {}", self.accuracy).unwrap();
        writeln!(out, "total = {}", self.total).unwrap();
        for (name, a) in [
            ("macro", self.macro_avg),
            ("micro", self.micro_avg),
            ("weighted", self.weighted_avg),
        ] {
            writeln!(out, "{name}_precision = {}", a.precision).unwrap();
            writeln!(out, "{name}_recall = {}", a.recall).unwrap();
            writeln!(out, "{name}_f1 = {}", a.f1).unwrap();
        }
        for (i, m) in self.per_class.iter().enumerate() {
            writeln!(out, "class{i}_precision = {}", m.precision).unwrap();
            writeln!(out, "class{i}_recall = {}", m.recall).unwrap();
            writeln!(out, "class{i}_f1 = {}", m.f1).unwrap();
            writeln!(out, "class{i}_support = {}", m.support).unwrap();
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn names(c: usize) -> Vec<String> {
        (0..c).map(|i| format!("c{i}")).collect()
    }

    #[test]
    fn perfect_is_diagonal() {
        let cm = confusion(&[0, 1, 2, 1], &[0, 1, 2, 1], &names(3)).unwrap();
        assert_eq!(cm.counts, vec![vec![1, 0, 0], vec![0, 2, 0], vec![0, 0, 1]]);
        let m = metrics(&cm).unwrap();
        assert_eq!(m.accuracy, 1.0);
        assert!(m.per_class.iter().all(|c| c.precision == 1.0 && c.recall == 1.0 && c.f1 == 1.0));
    }

    #[test]
    fn constant_predictor() {
        let cm = confusion(&[0, 0, 0], &[0, 1, 2], &names(3)).unwrap();
        for row in &cm.counts {
            assert!(row[1] == 0 && row[2] == 0);
        }
        let m = metrics(&cm).unwrap();
        assert!(m.per_class[1].undefined);
        assert_eq!(m.per_class[1].precision, 0.0);
    }

    #[test]
    fn hand_tally() {
        let cm = confusion(&[0, 1, 1, 2], &[0, 1, 2, 2], &names(3)).unwrap();
        assert_eq!(cm.counts[2][1], 1);
        assert_eq!(cm.trace(), 3);
    }

    #[test]
    fn out_of_range() {
        assert!(matches!(confusion(&[3], &[0], &names(3)), Err(Error::InvalidLabel(_))));
    }

    #[test]
    fn empty_rejected() {
        let cm = ConfusionMatrix::from_counts(vec![vec![0, 0], vec![0, 0]], names(2)).unwrap();
        assert!(metrics(&cm).is_err());
    }

    #[test]
    fn f1_of_table_row() {
        assert!((f1_score(0.76, 0.83) - 0.7935).abs() < 5e-4);
    }

    fn matrix() -> impl Strategy<Value = Vec<Vec<u64>>> {
        (2usize..5).prop_flat_map(|c| prop::collection::vec(prop::collection::vec(0u64..50, c), c))
    }

    proptest! {
        #[test]
        fn micro_equals_accuracy(counts in matrix()) {
            let c = counts.len();
            let cm = ConfusionMatrix::from_counts(counts, names(c)).unwrap();
            prop_assume!(cm.total() > 0);
            let m = metrics(&cm).unwrap();
            prop_assert!((m.micro_avg.f1 - m.accuracy).abs() <= 1e-12);
            prop_assert!((m.micro_avg.precision - m.micro_avg.recall).abs() <= 1e-12);
            prop_assert_eq!(m.per_class.iter().map(|c| c.support).sum::<u64>(), cm.total());
        }

        #[test]
        fn relabeling_is_equivariant(counts in matrix(), rot in 1usize..4) {
            let c = counts.len();
            let cm = ConfusionMatrix::from_counts(counts.clone(), names(c)).unwrap();
            prop_assume!(cm.total() > 0);
            let perm: Vec<usize> = (0..c).map(|i| (i + rot) % c).collect();
            let mut permuted = vec![vec![0u64; c]; c];
            for t in 0..c {
                for p in 0..c {
                    permuted[perm[t]][perm[p]] = counts[t][p];
                }
            }
            let a = metrics(&cm).unwrap();
            let b = metrics(&ConfusionMatrix::from_counts(permuted, names(c)).unwrap()).unwrap();
            for k in 0..c {
                prop_assert!((a.per_class[k].f1 - b.per_class[perm[k]].f1).abs() < 1e-12);
            }
            prop_assert!((a.macro_avg.f1 - b.macro_avg.f1).abs() < 1e-12);
            prop_assert!((a.micro_avg.f1 - b.micro_avg.f1).abs() < 1e-12);
            prop_assert_eq!(a.accuracy, b.accuracy);
        }
    }
}
