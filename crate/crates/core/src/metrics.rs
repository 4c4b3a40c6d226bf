//! Confusion matrices, Cohen's kappa and per-class precision/recall/F1.

use std::fmt::Write as _;
use std::io::Write;

use crate::error::{Error, Result};

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
    pub class_names: Vec<String>,
}

impl ConfusionMatrix {
    pub fn zeros(class_names: &[&str]) -> Self {
        let k = class_names.len();
        ConfusionMatrix {
            counts: vec![vec![0; k]; k],
            class_names: class_names.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn k(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k()).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sum(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    pub fn col_sum(&self, j: usize) -> u64 {
        self.counts.iter().map(|r| r[j]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        let n = self.total();
        if n == 0 {
            0.0
        } else {
            self.trace() as f64 / n as f64
        }
    }

    pub fn record(&mut self, truth: usize, predicted: usize) -> Result<()> {
        let k = self.k();
        if truth >= k || predicted >= k {
            return Err(Error::Data(format!("label pair ({truth}, {predicted}) outside [0, {k})")));
        }
        self.counts[truth][predicted] += 1;
        Ok(())
    }

    /// Same matrix with classes reordered: new class `i` is old class `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> ConfusionMatrix {
        ConfusionMatrix {
            counts: perm.iter().map(|&i| perm.iter().map(|&j| self.counts[i][j]).collect()).collect(),
            class_names: perm.iter().map(|&i| self.class_names[i].clone()).collect(),
        }
    }
}

fn default_names(k: usize) -> Vec<String> {
    if k == crate::data::CLASS_NAMES.len() {
        crate::data::CLASS_NAMES.iter().map(|s| s.to_string()).collect()
    } else {
        (0..k).map(|i| i.to_string()).collect()
    }
}

/// Class names default to the three diagnosis classes when `k` is 3 and
/// to the indices otherwise.
pub fn confusion_matrix(truth: &[usize], predicted: &[usize], k: usize) -> Result<ConfusionMatrix> {
    if truth.len() != predicted.len() {
        return Err(Error::Shape(format!(
            "{} true labels vs {} predictions",
            truth.len(),
            predicted.len()
        )));
    }
    let mut cm = ConfusionMatrix {
        counts: vec![vec![0; k]; k],
        class_names: default_names(k),
    };
    for (&t, &p) in truth.iter().zip(predicted) {
        cm.record(t, p)?;
    }
    Ok(cm)
}

/// Each row divided by its sum.
pub fn normalize_rows(cm: &ConfusionMatrix) -> Result<Vec<Vec<f64>>> {
    (0..cm.k())
        .map(|i| {
            let s = cm.row_sum(i);
            if s == 0 {
                return Err(Error::Data(format!("class {} has no samples", cm.class_names[i])));
            }
            Ok(cm.counts[i].iter().map(|&c| c as f64 / s as f64).collect())
        })
        .collect()
}

/// κ = (p_o − p_e)/(1 − p_e). Perfect agreement with p_e = 1 gives 1; an
/// empty matrix gives 0.
pub fn cohens_kappa(cm: &ConfusionMatrix) -> f64 {
    let n = cm.total() as f64;
    if n == 0.0 {
        return 0.0;
    }
    let p_o = cm.trace() as f64 / n;
    let p_e: f64 = (0..cm.k())
        .map(|k| cm.row_sum(k) as f64 * cm.col_sum(k) as f64)
        .sum::<f64>()
        / (n * n);
    if p_e >= 1.0 {
        return if p_o >= 1.0 { 1.0 } else { 0.0 };
    }
    ((p_o - p_e) / (1.0 - p_e)).clamp(-1.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationReport {
    pub class_names: Vec<String>,
    pub per_class: Vec<ClassScores>,
    pub accuracy: f64,
    pub macro_avg: ClassScores,
    pub weighted_avg: ClassScores,
    pub kappa: f64,
    /// Mean of the per-sample losses, if any were given.
    pub mean_loss: Option<f64>,
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

pub fn classification_report(cm: &ConfusionMatrix, per_sample_losses: &[f64]) -> ClassificationReport {
    let total = cm.total();
    let per_class: Vec<ClassScores> = (0..cm.k())
        .map(|k| {
            let tp = cm.counts[k][k];
            let precision = ratio(tp, cm.col_sum(k));
            let recall = ratio(tp, cm.row_sum(k));
            ClassScores {
                precision,
                recall,
                f1: f1_score(precision, recall),
                support: cm.row_sum(k),
            }
        })
        .collect();
    let k = per_class.len().max(1) as f64;
    let avg = |weight: &dyn Fn(&ClassScores) -> f64, norm: f64| {
        let f = |get: fn(&ClassScores) -> f64| per_class.iter().map(|c| weight(c) * get(c)).sum::<f64>() / norm;
        ClassScores {
            precision: f(|c| c.precision),
            recall: f(|c| c.recall),
            f1: f(|c| c.f1),
            support: total,
        }
    };
    let macro_avg = avg(&|_| 1.0, k);
    let weighted_avg = if total == 0 {
        ClassScores {
            precision: 0.0,
            recall: 0.0,
            f1: 0.0,
            support: 0,
        }
    } else {
        avg(&|c| c.support as f64, total as f64)
    };
    let mean_loss = (!per_sample_losses.is_empty())
        .then(|| per_sample_losses.iter().sum::<f64>() / per_sample_losses.len() as f64);
    ClassificationReport {
        class_names: cm.class_names.clone(),
        per_class,
        accuracy: cm.accuracy(),
        macro_avg,
        weighted_avg,
        kappa: cohens_kappa(cm),
        mean_loss,
    }
}

/// `class,precision,recall,f1,support` at full precision, then rows for
/// accuracy, macro avg, weighted avg, kappa and loss.
pub fn write_report_csv<W: Write>(report: &ClassificationReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["class", "precision", "recall", "f1", "support"])?;
    let total = report.weighted_avg.support.to_string();
    let mut row = |name: &str, s: &ClassScores| {
        w.write_record([
            name.to_string(),
            s.precision.to_string(),
            s.recall.to_string(),
            s.f1.to_string(),
            s.support.to_string(),
        ])
    };
    for (name, s) in report.class_names.iter().zip(&report.per_class) {
        row(name, s)?;
    }
    row("macro avg", &report.macro_avg)?;
    row("weighted avg", &report.weighted_avg)?;
    let acc = report.accuracy.to_string();
    w.write_record(["accuracy", "", "", acc.as_str(), total.as_str()])?;
    w.flush().map_err(|e| Error::io("writing report", e))
}

/// `metric,value` rows: accuracy, kappa and, when known, the mean loss.
pub fn write_summary_csv<W: Write>(report: &ClassificationReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["metric", "value"])?;
    w.write_record(["accuracy".to_string(), report.accuracy.to_string()])?;
    w.write_record(["kappa".to_string(), report.kappa.to_string()])?;
    if let Some(loss) = report.mean_loss {
        w.write_record(["loss".to_string(), loss.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("writing summary", e))
}

/// Aligned table with two decimals.
pub fn format_report(report: &ClassificationReport) -> String {
    let width = report
        .class_names
        .iter()
        .map(|n| n.chars().count())
        .chain([12])
        .max()
        .unwrap_or(12);
    let mut s = String::new();
    let _ = writeln!(s, "{:>width$} {:>9} {:>9} {:>9} {:>9}", "", "precision", "recall", "f1-score", "support");
    let line = |s: &mut String, name: &str, c: &ClassScores| {
        let _ = writeln!(
            s,
            "{name:>width$} {:>9.2} {:>9.2} {:>9.2} {:>9}",
            c.precision, c.recall, c.f1, c.support
        );
    };
    for (name, c) in report.class_names.iter().zip(&report.per_class) {
        line(&mut s, name, c);
    }
    s.push('\n');
    let total = report.weighted_avg.support;
    let _ = writeln!(s, "{:>width$} {:>9} {:>9} {:>9.2} {:>9}", "accuracy", "", "", report.accuracy, total);
    line(&mut s, "macro avg", &report.macro_avg);
    line(&mut s, "weighted avg", &report.weighted_avg);
    let _ = writeln!(s, "\nkappa {:.4}", report.kappa);
    if let Some(loss) = report.mean_loss {
        let _ = writeln!(s, "loss  {loss:.4}");
    }
    s
}

/// Header `true\predicted,<names>` followed by one row per true class.
pub fn write_confusion_csv<W: Write>(cm: &ConfusionMatrix, out: W) -> Result<()> {
    let rows: Vec<Vec<String>> = cm.counts.iter().map(|r| r.iter().map(u64::to_string).collect()).collect();
    write_matrix(&cm.class_names, &rows, out)
}

pub fn write_normalized_csv<W: Write>(cm: &ConfusionMatrix, out: W) -> Result<()> {
    let rows: Vec<Vec<String>> = normalize_rows(cm)?
        .iter()
        .map(|r| r.iter().map(f64::to_string).collect())
        .collect();
    write_matrix(&cm.class_names, &rows, out)
}

fn write_matrix<W: Write>(names: &[String], rows: &[Vec<String>], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["true\\predicted".to_string()];
    header.extend(names.iter().cloned());
    w.write_record(&header)?;
    for (name, row) in names.iter().zip(rows) {
        let mut rec = vec![name.clone()];
        rec.extend(row.iter().cloned());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("writing confusion matrix", e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cm(rows: Vec<Vec<u64>>) -> ConfusionMatrix {
        let k = rows.len();
        ConfusionMatrix {
            counts: rows,
            class_names: default_names(k),
        }
    }

    #[test]
    fn perfect_and_single() {
        let m = confusion_matrix(&[0, 1, 2, 2], &[0, 1, 2, 2], 3).unwrap();
        assert_eq!(m.counts, vec![vec![1, 0, 0], vec![0, 1, 0], vec![0, 0, 2]]);
        let m = confusion_matrix(&[1], &[2], 3).unwrap();
        assert_eq!(m.counts[1][2], 1);
        assert_eq!(m.total(), 1);
        assert!(confusion_matrix(&[0, 1], &[0], 3).is_err());
        assert!(confusion_matrix(&[3], &[0], 3).is_err());
    }

    #[test]
    fn thirty_pairs_against_tally() {
        let t = [0, 1, 2, 2, 1, 0, 0, 2, 1, 1, 2, 0, 1, 2, 0, 0, 1, 2, 2, 1, 0, 1, 0, 2, 2, 1, 0, 0, 1, 2];
        let p = [0, 1, 1, 2, 1, 2, 0, 2, 0, 1, 2, 0, 2, 2, 0, 1, 1, 2, 0, 1, 0, 1, 0, 2, 1, 1, 0, 2, 1, 2];
        let mut tally = [[0u64; 3]; 3];
        for i in 0..30 {
            tally[t[i]][p[i]] += 1;
        }
        let m = confusion_matrix(&t, &p, 3).unwrap();
        assert_eq!(m.counts, tally.iter().map(|r| r.to_vec()).collect::<Vec<_>>());
        assert_eq!(m.total(), 30);
    }

    #[test]
    fn normalization() {
        let id = normalize_rows(&cm(vec![vec![3, 0, 0], vec![0, 5, 0], vec![0, 0, 1]])).unwrap();
        assert_eq!(id, vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]);
        let r = normalize_rows(&cm(vec![vec![98, 0, 2], vec![0, 1, 0], vec![0, 0, 1]])).unwrap();
        assert_eq!(r[0], vec![0.98, 0.0, 0.02]);
        let err = normalize_rows(&cm(vec![vec![1, 0, 0], vec![0, 0, 0], vec![0, 0, 1]])).unwrap_err();
        assert!(err.to_string().contains("Pneumonia"));
    }

    #[test]
    fn pneumonia_to_covid_rate() {
        // 1000 pneumonia images, 12 of them called COVID-19
        let m = cm(vec![vec![990, 10, 0], vec![3, 985, 12], vec![0, 4, 996]]);
        assert!((normalize_rows(&m).unwrap()[1][2] - 0.012).abs() < 1e-15);
    }

    #[test]
    fn kappa_values() {
        assert_eq!(cohens_kappa(&cm(vec![vec![4, 0], vec![0, 6]])), 1.0);
        assert_eq!(cohens_kappa(&cm(vec![vec![5, 0], vec![0, 0]])), 1.0);
        assert_eq!(cohens_kappa(&cm(vec![vec![2, 2], vec![2, 2]])), 0.0);
        // accuracy 0.984 with uniform marginals: 984 right and 8 + 8 wrong per row
        let m = cm(vec![vec![984, 8, 8], vec![8, 984, 8], vec![8, 8, 984]]);
        assert!((m.accuracy() - 0.984).abs() < 1e-15);
        let k = cohens_kappa(&m);
        assert!((k - 0.976).abs() < 1e-12, "{k}");
        assert!((k - 0.9759).abs() < 5e-4);
    }

    #[test]
    fn report_conventions() {
        // precision = recall = 0.98 for class 2
        let m = cm(vec![vec![50, 0, 0], vec![0, 48, 1], vec![0, 1, 49]]);
        let r = classification_report(&m, &[]);
        assert!((r.per_class[2].precision - 0.98).abs() < 1e-15);
        assert!((r.per_class[2].recall - 0.98).abs() < 1e-15);
        assert!((r.per_class[2].f1 - 0.98).abs() < 1e-15);
        assert_eq!(r.mean_loss, None);

        let absent = cm(vec![vec![3, 1, 0], vec![2, 4, 0], vec![0, 0, 0]]);
        let r = classification_report(&absent, &[1.0, 3.0]);
        assert_eq!((r.per_class[2].precision, r.per_class[2].recall, r.per_class[2].f1), (0.0, 0.0, 0.0));
        assert_eq!(r.mean_loss, Some(2.0));
    }

    #[test]
    fn report_matches_scalar_computation() {
        let m = cm(vec![vec![17, 3, 5], vec![4, 21, 2], vec![6, 1, 30]]);
        let r = classification_report(&m, &[]);
        // columns: 27, 25, 37; rows: 25, 27, 37; n = 89
        let p = [17.0 / 27.0, 21.0 / 25.0, 30.0 / 37.0];
        let rc = [17.0 / 25.0, 21.0 / 27.0, 30.0 / 37.0];
        for k in 0..3 {
            let f = 2.0 * p[k] * rc[k] / (p[k] + rc[k]);
            assert!((r.per_class[k].precision - p[k]).abs() < 1e-12);
            assert!((r.per_class[k].recall - rc[k]).abs() < 1e-12);
            assert!((r.per_class[k].f1 - f).abs() < 1e-12);
        }
        assert!((r.accuracy - 68.0 / 89.0).abs() < 1e-12);
        assert!((r.macro_avg.precision - p.iter().sum::<f64>() / 3.0).abs() < 1e-12);
        let wp = (25.0 * p[0] + 27.0 * p[1] + 37.0 * p[2]) / 89.0;
        assert!((r.weighted_avg.precision - wp).abs() < 1e-12);
        let pe = (25.0 * 27.0 + 27.0 * 25.0 + 37.0 * 37.0) / (89.0 * 89.0);
        assert!((r.kappa - (68.0 / 89.0 - pe) / (1.0 - pe)).abs() < 1e-12);
    }

    #[test]
    fn writers() {
        let m = cm(vec![vec![2, 0, 0], vec![0, 1, 1], vec![0, 0, 2]]);
        let mut buf = Vec::new();
        write_confusion_csv(&m, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "true\\predicted,Normal,Pneumonia,COVID-19\nNormal,2,0,0\nPneumonia,0,1,1\nCOVID-19,0,0,2\n"
        );
        let r = classification_report(&m, &[0.5]);
        let mut buf = Vec::new();
        write_report_csv(&r, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("class,precision,recall,f1,support\nNormal,1,1,1,2\n"));
        assert!(text.ends_with("\naccuracy,,,0.8333333333333334,6\n"));
        assert_eq!(text.lines().count(), 7);
        let mut buf = Vec::new();
        write_summary_csv(&r, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("metric,value\naccuracy,0.8333333333333334\nkappa,"));
        assert!(text.ends_with("loss,0.5\n"));
        let table = format_report(&r);
        assert!(table.contains("0.83"));
        assert!(table.contains("weighted avg"));
    }

    fn matrix() -> impl Strategy<Value = Vec<Vec<u64>>> {
        (2usize..6).prop_flat_map(|k| prop::collection::vec(prop::collection::vec(0u64..50, k), k))
    }

    proptest! {
        #[test]
        fn kappa_in_range(rows in matrix()) {
            let m = cm(rows);
            prop_assume!(m.total() > 0);
            let k = cohens_kappa(&m);
            prop_assert!((-1.0..=1.0).contains(&k));
        }

        #[test]
        fn permutation_invariance(rows in matrix(), seed in any::<u64>()) {
            let m = cm(rows);
            prop_assume!(m.total() > 0);
            let perm = crate::rng::SeededRng::new(seed).permutation(m.k());
            let p = m.permuted(&perm);
            let (a, b) = (classification_report(&m, &[]), classification_report(&p, &[]));
            prop_assert!((a.accuracy - b.accuracy).abs() < 1e-12);
            prop_assert!((a.kappa - b.kappa).abs() < 1e-12);
            prop_assert!((a.macro_avg.f1 - b.macro_avg.f1).abs() < 1e-12);
        }

        #[test]
        fn rows_sum_to_one(rows in matrix()) {
            let m = cm(rows);
            prop_assume!((0..m.k()).all(|i| m.row_sum(i) > 0));
            for row in normalize_rows(&m).unwrap() {
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }

        #[test]
        fn weighted_recall_is_accuracy(rows in matrix()) {
            let m = cm(rows);
            prop_assume!(m.total() > 0);
            let r = classification_report(&m, &[]);
            prop_assert!((r.weighted_avg.recall - r.accuracy).abs() < 1e-12);
        }

        #[test]
        fn balanced_uniform_kappa_formula(k in 2usize..6, n in 1u64..40, wrong in 0u64..5) {
            // constant diagonal and off-diagonal: all row and column sums are equal
            let diag = n + wrong;
            let rows: Vec<Vec<u64>> = (0..k)
                .map(|i| (0..k).map(|j| if i == j { diag } else { wrong }).collect())
                .collect();
            let m = cm(rows);
            let acc = m.accuracy();
            let kk = k as f64;
            prop_assert!((cohens_kappa(&m) - (acc - 1.0 / kk) / (1.0 - 1.0 / kk)).abs() < 1e-12);
        }
    }
}
