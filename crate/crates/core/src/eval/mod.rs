//! Evaluation suite: confusion matrices, per-class and averaged metrics,
//! inter-annotator agreement, reconstruction of confusion matrices from
//! published metric tables, and the model-lifecycle gate.

mod agreement;
mod lifecycle;
pub mod published;
mod reconstruct;

pub use agreement::{krippendorff_alpha, AgreementReport};
pub use lifecycle::{lifecycle_decide, GateVerdict, LifecycleGate, ModelLifecycle};
pub use reconstruct::{
    reconstruct_from_table, Candidate, ReconstructOptions, Reconstruction, ReportedRow,
    ReportedTable, Reported, Triple,
};

use serde::{Deserialize, Serialize};

use crate::domain::TaskKind;
use crate::error::{Error, Result};

/// Rows are gold labels, columns are predictions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<TaskKind>,
    pub labels: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn zeros(labels: Vec<String>) -> Self {
        let n = labels.len();
        ConfusionMatrix {
            task: None,
            labels,
            counts: vec![vec![0; n]; n],
        }
    }

    pub fn for_task(task: TaskKind) -> Self {
        let mut m = Self::zeros(task.labels().iter().map(|l| l.to_string()).collect());
        m.task = Some(task);
        m
    }

    pub fn from_rows(labels: &[&str], rows: &[&[u64]]) -> Result<Self> {
        if rows.len() != labels.len() || rows.iter().any(|r| r.len() != labels.len()) {
            return Err(Error::validation("confusion matrix must be square over its labels"));
        }
        Ok(ConfusionMatrix {
            task: None,
            labels: labels.iter().map(|l| l.to_string()).collect(),
            counts: rows.iter().map(|r| r.to_vec()).collect(),
        })
    }

    pub fn with_task(mut self, task: TaskKind) -> Self {
        self.task = Some(task);
        self
    }

    pub fn n(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn support(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    pub fn predicted(&self, j: usize) -> u64 {
        self.counts.iter().map(|r| r[j]).sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.labels.len()).map(|i| self.counts[i][i]).sum()
    }

    pub fn index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// Same matrix with labels (rows and columns) reordered by `perm`,
    /// where new position `i` holds old label `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        ConfusionMatrix {
            task: None,
            labels: perm.iter().map(|&i| self.labels[i].clone()).collect(),
            counts: perm
                .iter()
                .map(|&i| perm.iter().map(|&j| self.counts[i][j]).collect())
                .collect(),
        }
    }
}

/// Tallies (gold, predicted) pairs over the task's closed label set.
pub fn confusion<G, P>(pairs: impl IntoIterator<Item = (G, P)>, task: TaskKind) -> Result<ConfusionMatrix>
where
    G: AsRef<str>,
    P: AsRef<str>,
{
    let mut m = ConfusionMatrix::for_task(task);
    for (gold, pred) in pairs {
        let (gold, pred) = (gold.as_ref(), pred.as_ref());
        let g = task
            .label_index(gold)
            .ok_or_else(|| Error::validation(format!("gold label {gold:?} is not a {task} label")))?;
        let p = task
            .label_index(pred)
            .ok_or_else(|| Error::validation(format!("predicted label {pred:?} is not a {task} label")))?;
        m.counts[g][p] += 1;
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Averages {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<TaskKind>,
    pub per_class: Vec<ClassMetrics>,
    pub accuracy: f64,
    pub macro_avg: Averages,
    pub weighted_avg: Averages,
    pub n: u64,
}

/// `num / den`, or 0 when the denominator is 0.
fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

pub fn evaluate(matrix: &ConfusionMatrix) -> Result<EvaluationReport> {
    let n = matrix.n();
    if n == 0 {
        return Err(Error::validation("cannot evaluate an empty confusion matrix"));
    }
    let per_class: Vec<ClassMetrics> = matrix
        .labels
        .iter()
        .enumerate()
        .map(|(i, label)| {
            let tp = matrix.counts[i][i] as f64;
            let support = matrix.support(i);
            let predicted = matrix.predicted(i) as f64;
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, support as f64);
            let f1 = ratio(2.0 * precision * recall, precision + recall);
            ClassMetrics {
                label: label.clone(),
                precision,
                recall,
                f1,
                support,
            }
        })
        .collect();
    let k = per_class.len() as f64;
    let nf = n as f64;
    let macro_avg = Averages {
        precision: per_class.iter().map(|c| c.precision).sum::<f64>() / k,
        recall: per_class.iter().map(|c| c.recall).sum::<f64>() / k,
        f1: per_class.iter().map(|c| c.f1).sum::<f64>() / k,
    };
    let weighted = |f: fn(&ClassMetrics) -> f64| {
        per_class.iter().map(|c| f(c) * c.support as f64).sum::<f64>() / nf
    };
    let weighted_avg = Averages {
        precision: weighted(|c| c.precision),
        recall: weighted(|c| c.recall),
        f1: weighted(|c| c.f1),
    };
    Ok(EvaluationReport {
        task: matrix.task,
        per_class,
        accuracy: matrix.trace() as f64 / nf,
        macro_avg,
        weighted_avg,
        n,
    })
}

/// Half-up rounding to `decimals` places. The small nudge keeps exact
/// ties such as 0.895 from falling below the boundary in binary.
pub fn round_half_up(x: f64, decimals: u32) -> f64 {
    let scale = 10f64.powi(decimals as i32);
    ((x * scale) + 0.5 + 1e-9).floor() / scale
}

pub fn round2(x: f64) -> f64 {
    round_half_up(x, 2)
}

impl EvaluationReport {
    /// Display copy with every metric rounded to 2 decimals.
    pub fn rounded(&self) -> EvaluationReport {
        let avg = |a: &Averages| Averages {
            precision: round2(a.precision),
            recall: round2(a.recall),
            f1: round2(a.f1),
        };
        EvaluationReport {
            task: self.task,
            per_class: self
                .per_class
                .iter()
                .map(|c| ClassMetrics {
                    label: c.label.clone(),
                    precision: round2(c.precision),
                    recall: round2(c.recall),
                    f1: round2(c.f1),
                    support: c.support,
                })
                .collect(),
            accuracy: round2(self.accuracy),
            macro_avg: avg(&self.macro_avg),
            weighted_avg: avg(&self.weighted_avg),
            n: self.n,
        }
    }

    pub fn class(&self, label: &str) -> Option<&ClassMetrics> {
        self.per_class.iter().find(|c| c.label == label)
    }

    /// Tab-separated table in the familiar classification-report layout.
    pub fn to_table(&self) -> String {
        let r = self.rounded();
        let mut out = String::from("label\tprecision\trecall\tf1\tsupport\n");
        for c in &r.per_class {
            out.push_str(&format!(
                "{}\t{:.2}\t{:.2}\t{:.2}\t{}\n",
                c.label, c.precision, c.recall, c.f1, c.support
            ));
        }
        out.push_str(&format!("accuracy\t\t\t{:.2}\t{}\n", r.accuracy, r.n));
        for (name, a) in [("macro avg", r.macro_avg), ("weighted avg", r.weighted_avg)] {
            out.push_str(&format!(
                "{name}\t{:.2}\t{:.2}\t{:.2}\t{}\n",
                a.precision, a.recall, a.f1, r.n
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_pairs_give_zero_matrix() {
        let m = confusion(Vec::<(&str, &str)>::new(), TaskKind::Intent).unwrap();
        assert_eq!(m.n(), 0);
        assert!(evaluate(&m).is_err());
    }

    #[test]
    fn pairs_fill_rows_by_gold() {
        let m = confusion([("crypto", "crypto"), ("crypto", "fan")], TaskKind::Intent).unwrap();
        assert_eq!(m.counts[0], vec![1, 1, 0]);
    }

    #[test]
    fn foreign_label_rejected() {
        assert!(confusion([("crypto", "meme")], TaskKind::Intent).is_err());
    }

    #[test]
    fn perfect_diagonal() {
        let m = ConfusionMatrix::from_rows(&["a", "b"], &[&[4, 0], &[0, 6]]).unwrap();
        let r = evaluate(&m).unwrap();
        assert!(r.per_class.iter().all(|c| c.precision == 1.0 && c.recall == 1.0 && c.f1 == 1.0));
        assert_eq!(r.accuracy, 1.0);
    }

    #[test]
    fn never_predicted_class_scores_zero() {
        let m = ConfusionMatrix::from_rows(&["a", "b"], &[&[5, 0], &[1, 0]]).unwrap();
        let r = evaluate(&m).unwrap();
        let b = r.class("b").unwrap();
        assert_eq!((b.precision, b.recall, b.f1, b.support), (0.0, 0.0, 0.0, 1));
    }

    #[test]
    fn rounding_is_half_up() {
        assert_eq!(round2(0.895), 0.9);
        assert_eq!(round2(0.8949), 0.89);
        assert_eq!(round2(0.125), 0.13);
        assert_eq!(round_half_up(0.97745, 4), 0.9775);
    }

    #[test]
    fn table_layout() {
        let m = ConfusionMatrix::from_rows(&["a", "b"], &[&[1, 0], &[0, 1]]).unwrap();
        let t = evaluate(&m).unwrap().to_table();
        assert!(t.starts_with("label\tprecision"));
        assert!(t.contains("accuracy\t\t\t1.00\t2"));
    }
}
