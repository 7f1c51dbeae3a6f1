//! Recovers integer confusion matrices from rounded, published metric tables.
//!
//! Every metric of a class depends only on its true positives `tp`, its
//! support `s` and its predicted count `p`: precision `tp/p`, recall `tp/s`
//! and F1 `2tp/(s+p)`. The search therefore enumerates `(tp, p)` per class,
//! combines them under the global constraints (predicted counts sum to N,
//! accuracy, macro and weighted averages), and only then realises an
//! off-diagonal filling. All matrices sharing a diagonal and column totals
//! reproduce the table identically.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::{round_half_up, ConfusionMatrix, EvaluationReport};
use crate::error::{Error, Result};

/// A printed metric value and the number of decimals it is compared at
/// (never fewer than two).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Reported {
    pub value: f64,
    pub decimals: u32,
}

impl Reported {
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        let value: f64 = s
            .parse()
            .map_err(|_| Error::validation(format!("{s:?} is not a number")))?;
        let written = s.split_once('.').map_or(0, |(_, frac)| frac.len() as u32);
        Ok(Reported {
            value,
            decimals: written.max(2),
        })
    }

    pub fn matches(&self, x: f64) -> bool {
        (round_half_up(x, self.decimals) - self.value).abs() < 1e-9
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportedRow {
    pub label: String,
    pub precision: Reported,
    pub recall: Reported,
    #[serde(default)]
    pub f1: Option<Reported>,
    pub support: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Triple {
    pub precision: Option<Reported>,
    pub recall: Option<Reported>,
    pub f1: Option<Reported>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportedTable {
    pub rows: Vec<ReportedRow>,
    #[serde(default)]
    pub accuracy: Option<Reported>,
    #[serde(default)]
    pub macro_avg: Option<Triple>,
    #[serde(default)]
    pub weighted_avg: Option<Triple>,
}

impl ReportedTable {
    pub fn n(&self) -> u64 {
        self.rows.iter().map(|r| r.support).sum()
    }

    pub fn labels(&self) -> Vec<String> {
        self.rows.iter().map(|r| r.label.clone()).collect()
    }

    /// Builds a table from `(label, precision, recall, f1, support)` cells
    /// written exactly as printed.
    pub fn from_cells(
        rows: &[(&str, &str, &str, &str, u64)],
        accuracy: Option<&str>,
        macro_avg: Option<[&str; 3]>,
        weighted_avg: Option<[&str; 3]>,
    ) -> Result<Self> {
        let triple = |t: Option<[&str; 3]>| -> Result<Option<Triple>> {
            t.map(|[p, r, f]| {
                Ok(Triple {
                    precision: Some(Reported::parse(p)?),
                    recall: Some(Reported::parse(r)?),
                    f1: Some(Reported::parse(f)?),
                })
            })
            .transpose()
        };
        Ok(ReportedTable {
            rows: rows
                .iter()
                .map(|(label, p, r, f, s)| {
                    Ok(ReportedRow {
                        label: label.to_string(),
                        precision: Reported::parse(p)?,
                        recall: Reported::parse(r)?,
                        f1: Some(Reported::parse(f)?),
                        support: *s,
                    })
                })
                .collect::<Result<_>>()?,
            accuracy: accuracy.map(Reported::parse).transpose()?,
            macro_avg: triple(macro_avg)?,
            weighted_avg: triple(weighted_avg)?,
        })
    }
}

impl ReportedTable {
    /// Cells where `report`, rounded half-up at each cell's printed
    /// precision, differs from the table. Labels in `skip_f1` have their F1
    /// column ignored. Empty means the report reproduces the table.
    pub fn mismatches(&self, report: &EvaluationReport, skip_f1: &[&str]) -> Vec<String> {
        let mut out = Vec::new();
        let mut cell = |what: String, printed: Option<&Reported>, actual: f64| {
            if let Some(r) = printed {
                if !r.matches(actual) {
                    out.push(format!("{what}: printed {:.*}, computed {actual:.4}", r.decimals as usize, r.value));
                }
            }
        };
        for row in &self.rows {
            let Some(c) = report.class(&row.label) else {
                cell(format!("{} missing", row.label), Some(&row.precision), f64::NAN);
                continue;
            };
            cell(format!("{} precision", row.label), Some(&row.precision), c.precision);
            cell(format!("{} recall", row.label), Some(&row.recall), c.recall);
            if !skip_f1.contains(&row.label.as_str()) {
                cell(format!("{} f1", row.label), row.f1.as_ref(), c.f1);
            }
            if c.support != row.support {
                cell(format!("{} support", row.label), Some(&Reported { value: row.support as f64, decimals: 0 }), c.support as f64);
            }
        }
        cell("accuracy".into(), self.accuracy.as_ref(), report.accuracy);
        for (name, printed, actual) in [("macro", &self.macro_avg, &report.macro_avg), ("weighted", &self.weighted_avg, &report.weighted_avg)] {
            if let Some(t) = printed {
                cell(format!("{name} precision"), t.precision.as_ref(), actual.precision);
                cell(format!("{name} recall"), t.recall.as_ref(), actual.recall);
                cell(format!("{name} f1"), t.f1.as_ref(), actual.f1);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructOptions {
    /// Labels whose printed F1 is ignored; their F1 follows from P and R.
    pub relax_f1: Vec<String>,
    pub max_candidates: usize,
}

impl Default for ReconstructOptions {
    fn default() -> Self {
        ReconstructOptions {
            relax_f1: Vec::new(),
            max_candidates: 10_000,
        }
    }
}

/// One consistent `(diagonal, predicted totals)` profile plus a concrete
/// matrix realising it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub diagonal: Vec<u64>,
    pub predicted: Vec<u64>,
    pub matrix: ConfusionMatrix,
}

impl Candidate {
    /// Enumerates up to `limit` distinct matrices with this candidate's
    /// diagonal and margins.
    pub fn realizations(&self, limit: usize) -> Vec<ConfusionMatrix> {
        let n = self.diagonal.len();
        let support: Vec<u64> = (0..n).map(|i| self.matrix.support(i)).collect();
        let row_rem: Vec<u64> = (0..n).map(|i| support[i] - self.diagonal[i]).collect();
        let col_rem: Vec<u64> = (0..n).map(|j| self.predicted[j] - self.diagonal[j]).collect();
        let mut base = vec![vec![0u64; n]; n];
        for i in 0..n {
            base[i][i] = self.diagonal[i];
        }
        let mut out = Vec::new();
        fill_rows(0, 0, &mut base, row_rem, col_rem, limit, &mut out);
        out.into_iter()
            .map(|counts| ConfusionMatrix {
                task: None,
                labels: self.matrix.labels.clone(),
                counts,
            })
            .collect()
    }
}

fn fill_rows(
    row: usize,
    col: usize,
    m: &mut Vec<Vec<u64>>,
    mut row_rem: Vec<u64>,
    col_rem: Vec<u64>,
    limit: usize,
    out: &mut Vec<Vec<Vec<u64>>>,
) {
    let n = m.len();
    if out.len() >= limit {
        return;
    }
    if row == n {
        if col_rem.iter().all(|&c| c == 0) {
            out.push(m.clone());
        }
        return;
    }
    if col == n {
        if row_rem[row] == 0 {
            fill_rows(row + 1, 0, m, row_rem, col_rem, limit, out);
        }
        return;
    }
    if col == row {
        fill_rows(row, col + 1, m, row_rem, col_rem, limit, out);
        return;
    }
    let cap = row_rem[row].min(col_rem[col]);
    // Whatever this row cannot place in later columns must go here.
    let later: u64 = (col + 1..n).filter(|&j| j != row).map(|j| col_rem[j]).sum();
    let floor = row_rem[row].saturating_sub(later);
    for v in floor..=cap {
        m[row][col] = v;
        let mut cr = col_rem.clone();
        cr[col] -= v;
        row_rem[row] -= v;
        fill_rows(row, col + 1, m, row_rem.clone(), cr, limit, out);
        row_rem[row] += v;
        if out.len() >= limit {
            break;
        }
    }
    m[row][col] = 0;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reconstruction {
    pub candidates: Vec<Candidate>,
    /// True when the search stopped at `max_candidates`.
    pub truncated: bool,
    /// Why no candidate exists, per offending class or constraint.
    pub inconsistencies: Vec<String>,
}

impl Reconstruction {
    pub fn is_consistent(&self) -> bool {
        !self.candidates.is_empty()
    }

    /// The candidate whose realisation equals `matrix`, if any.
    pub fn find(&self, matrix: &ConfusionMatrix) -> Option<&Candidate> {
        let n = matrix.labels.len();
        self.candidates.iter().find(|c| {
            (0..n).all(|i| c.diagonal[i] == matrix.counts[i][i] && c.predicted[i] == matrix.predicted(i))
        })
    }
}

#[derive(Debug, Clone, Copy)]
struct ClassOption {
    tp: u64,
    predicted: u64,
}

fn frac(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn class_options(row: &ReportedRow, n: u64, use_f1: bool) -> Vec<ClassOption> {
    let s = row.support;
    let mut out = Vec::new();
    for tp in 0..=s {
        if !row.recall.matches(frac(tp, s)) {
            continue;
        }
        for p in tp..=n {
            if !row.precision.matches(frac(tp, p)) {
                continue;
            }
            if use_f1 {
                if let Some(f1) = row.f1 {
                    if !f1.matches(frac(2 * tp, s + p)) {
                        continue;
                    }
                }
            }
            out.push(ClassOption { tp, predicted: p });
        }
    }
    out
}

struct Search<'a> {
    table: &'a ReportedTable,
    n: u64,
    order: Vec<usize>,
    options: Vec<Vec<ClassOption>>,
    // min/max predicted and tp over classes order[depth..]
    suffix_p: Vec<(u64, u64)>,
    suffix_tp: Vec<(u64, u64)>,
    chosen: Vec<ClassOption>,
    limit: usize,
    found: Vec<Vec<ClassOption>>,
    truncated: bool,
}

impl Search<'_> {
    fn run(&mut self, depth: usize, sum_p: u64, sum_tp: u64) {
        if self.found.len() >= self.limit {
            self.truncated = true;
            return;
        }
        if depth == self.order.len() {
            if sum_p == self.n && self.leaf_ok() {
                let mut by_class = vec![ClassOption { tp: 0, predicted: 0 }; self.order.len()];
                for (d, &c) in self.order.iter().enumerate() {
                    by_class[c] = self.chosen[d];
                }
                self.found.push(by_class);
            }
            return;
        }
        let (min_p, max_p) = self.suffix_p[depth];
        if sum_p + min_p > self.n || sum_p + max_p < self.n {
            return;
        }
        if let Some(acc) = self.table.accuracy {
            let (min_tp, max_tp) = self.suffix_tp[depth];
            let lo = frac(sum_tp + min_tp, self.n);
            let hi = frac(sum_tp + max_tp, self.n);
            let half = 0.5 * 10f64.powi(-(acc.decimals as i32)) + 1e-9;
            if hi < acc.value - half || lo >= acc.value + half {
                return;
            }
        }
        let class = self.order[depth];
        for i in 0..self.options[class].len() {
            let opt = self.options[class][i];
            if sum_p + opt.predicted > self.n {
                continue;
            }
            self.chosen.push(opt);
            self.run(depth + 1, sum_p + opt.predicted, sum_tp + opt.tp);
            self.chosen.pop();
            if self.truncated {
                return;
            }
        }
    }

    fn leaf_ok(&self) -> bool {
        let k = self.order.len();
        let mut picked = vec![ClassOption { tp: 0, predicted: 0 }; k];
        for (d, &c) in self.order.iter().enumerate() {
            picked[c] = self.chosen[d];
        }
        let n = self.n as f64;
        let rows = &self.table.rows;
        let sum_tp: u64 = picked.iter().map(|o| o.tp).sum();
        if let Some(acc) = self.table.accuracy {
            if !acc.matches(sum_tp as f64 / n) {
                return false;
            }
        }
        let metrics: Vec<[f64; 3]> = picked
            .iter()
            .zip(rows)
            .map(|(o, r)| {
                [
                    frac(o.tp, o.predicted),
                    frac(o.tp, r.support),
                    frac(2 * o.tp, r.support + o.predicted),
                ]
            })
            .collect();
        let check = |triple: &Option<Triple>, weight: &dyn Fn(usize) -> f64, denom: f64| -> bool {
            let Some(t) = triple else { return true };
            [t.precision, t.recall, t.f1].iter().enumerate().all(|(m, rep)| {
                rep.map_or(true, |rep| {
                    let v: f64 = (0..k).map(|c| weight(c) * metrics[c][m]).sum::<f64>() / denom;
                    rep.matches(v)
                })
            })
        };
        if !check(&self.table.macro_avg, &|_| 1.0, k as f64) {
            return false;
        }
        if !check(&self.table.weighted_avg, &|c| rows[c].support as f64, n) {
            return false;
        }
        off_diagonal_feasible(&picked, rows)
    }
}

/// A zero-diagonal non-negative integer matrix with row sums `r` and
/// column sums `q` (equal totals T) exists iff `r_i + q_i <= T` for all i.
fn off_diagonal_feasible(picked: &[ClassOption], rows: &[ReportedRow]) -> bool {
    let r: Vec<u64> = picked.iter().zip(rows).map(|(o, row)| row.support - o.tp).collect();
    let q: Vec<u64> = picked.iter().map(|o| o.predicted - o.tp).collect();
    let total: u64 = r.iter().sum();
    total == q.iter().sum::<u64>() && r.iter().zip(&q).all(|(a, b)| a + b <= total)
}

/// Fills the off-diagonal cells by max-flow from row residuals to column
/// residuals.
fn realize(labels: &[String], picked: &[ClassOption], rows: &[ReportedRow]) -> Option<ConfusionMatrix> {
    let k = picked.len();
    let source = 2 * k;
    let sink = 2 * k + 1;
    let nodes = 2 * k + 2;
    let mut cap = vec![vec![0i64; nodes]; nodes];
    let mut need = 0i64;
    for i in 0..k {
        let r = (rows[i].support - picked[i].tp) as i64;
        let q = (picked[i].predicted - picked[i].tp) as i64;
        cap[source][i] = r;
        cap[k + i][sink] = q;
        need += r;
        for j in 0..k {
            if i != j {
                cap[i][k + j] = i64::MAX / 4;
            }
        }
    }
    let mut flow = vec![vec![0i64; nodes]; nodes];
    let mut total = 0i64;
    loop {
        let mut parent = vec![usize::MAX; nodes];
        parent[source] = source;
        let mut queue = VecDeque::from([source]);
        while let Some(u) = queue.pop_front() {
            for v in 0..nodes {
                if parent[v] == usize::MAX && cap[u][v] - flow[u][v] > 0 {
                    parent[v] = u;
                    queue.push_back(v);
                }
            }
        }
        if parent[sink] == usize::MAX {
            break;
        }
        let mut bottleneck = i64::MAX;
        let mut v = sink;
        while v != source {
            let u = parent[v];
            bottleneck = bottleneck.min(cap[u][v] - flow[u][v]);
            v = u;
        }
        let mut v = sink;
        while v != source {
            let u = parent[v];
            flow[u][v] += bottleneck;
            flow[v][u] -= bottleneck;
            v = u;
        }
        total += bottleneck;
    }
    if total != need {
        return None;
    }
    let mut counts = vec![vec![0u64; k]; k];
    for i in 0..k {
        counts[i][i] = picked[i].tp;
        for j in 0..k {
            if i != j {
                counts[i][j] = flow[i][k + j].max(0) as u64;
            }
        }
    }
    Some(ConfusionMatrix {
        task: None,
        labels: labels.to_vec(),
        counts,
    })
}

/// Exhaustive integer search for confusion matrices consistent with a
/// rounded metric table.
pub fn reconstruct_from_table(table: &ReportedTable, opts: &ReconstructOptions) -> Reconstruction {
    let n = table.n();
    let labels = table.labels();
    let mut inconsistencies = Vec::new();
    let options: Vec<Vec<ClassOption>> = table
        .rows
        .iter()
        .map(|row| {
            let use_f1 = !opts.relax_f1.iter().any(|l| *l == row.label);
            let opts_for_row = class_options(row, n, use_f1);
            if opts_for_row.is_empty() {
                let loose = if use_f1 { class_options(row, n, false) } else { Vec::new() };
                match (row.f1, loose.first()) {
                    (Some(f1), Some(o)) => inconsistencies.push(format!(
                        "{}: printed F1 {} contradicts P {} and R {}; those force F1 = {:.4}",
                        row.label,
                        f1.value,
                        row.precision.value,
                        row.recall.value,
                        frac(2 * o.tp, row.support + o.predicted)
                    )),
                    _ => inconsistencies.push(format!(
                        "{}: no integer (TP, predicted) pair reproduces P {} and R {} at support {}",
                        row.label, row.precision.value, row.recall.value, row.support
                    )),
                }
            }
            opts_for_row
        })
        .collect();

    if !inconsistencies.is_empty() {
        return Reconstruction {
            candidates: Vec::new(),
            truncated: false,
            inconsistencies,
        };
    }

    let mut order: Vec<usize> = (0..options.len()).collect();
    order.sort_by_key(|&c| options[c].len());
    let mut suffix_p = vec![(0u64, 0u64); order.len() + 1];
    let mut suffix_tp = vec![(0u64, 0u64); order.len() + 1];
    for d in (0..order.len()).rev() {
        let o = &options[order[d]];
        let (lo_p, hi_p) = o.iter().fold((u64::MAX, 0), |(lo, hi), x| (lo.min(x.predicted), hi.max(x.predicted)));
        let (lo_t, hi_t) = o.iter().fold((u64::MAX, 0), |(lo, hi), x| (lo.min(x.tp), hi.max(x.tp)));
        suffix_p[d] = (suffix_p[d + 1].0 + lo_p, suffix_p[d + 1].1 + hi_p);
        suffix_tp[d] = (suffix_tp[d + 1].0 + lo_t, suffix_tp[d + 1].1 + hi_t);
    }
    let mut search = Search {
        table,
        n,
        order,
        options,
        suffix_p,
        suffix_tp,
        chosen: Vec::new(),
        limit: opts.max_candidates.max(1),
        found: Vec::new(),
        truncated: false,
    };
    search.run(0, 0, 0);

    let candidates: Vec<Candidate> = search
        .found
        .iter()
        .filter_map(|picked| {
            realize(&labels, picked, &table.rows).map(|matrix| Candidate {
                diagonal: picked.iter().map(|o| o.tp).collect(),
                predicted: picked.iter().map(|o| o.predicted).collect(),
                matrix,
            })
        })
        .collect();
    if candidates.is_empty() {
        inconsistencies.push(
            "every class is individually consistent, but no combination reproduces the accuracy and averaged rows"
                .to_string(),
        );
    }
    Reconstruction {
        candidates,
        truncated: search.truncated,
        inconsistencies,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::evaluate;

    #[test]
    fn single_class_table_is_unique() {
        let t = ReportedTable::from_cells(&[("only", "1", "1", "1", 5)], Some("1"), None, None).unwrap();
        let r = reconstruct_from_table(&t, &ReconstructOptions::default());
        assert_eq!(r.candidates.len(), 1);
        assert_eq!(r.candidates[0].matrix.counts, vec![vec![5]]);
    }

    #[test]
    fn parse_keeps_written_precision() {
        let r = Reported::parse("0.9775").unwrap();
        assert_eq!(r.decimals, 4);
        assert!(Reported::parse("0.9").unwrap().matches(0.9));
        assert_eq!(Reported::parse("0.9").unwrap().decimals, 2);
        assert!(Reported::parse("x").is_err());
    }

    #[test]
    fn two_class_round_trip() {
        let m = ConfusionMatrix::from_rows(&["a", "b"], &[&[7, 3], &[2, 8]]).unwrap();
        let rep = evaluate(&m).unwrap().rounded();
        let fmt = |x: f64| format!("{x:.2}");
        let cells: Vec<(String, String, String, String, u64)> = rep
            .per_class
            .iter()
            .map(|c| (c.label.clone(), fmt(c.precision), fmt(c.recall), fmt(c.f1), c.support))
            .collect();
        let refs: Vec<(&str, &str, &str, &str, u64)> = cells
            .iter()
            .map(|(a, b, c, d, e)| (a.as_str(), b.as_str(), c.as_str(), d.as_str(), *e))
            .collect();
        let t = ReportedTable::from_cells(&refs, Some(&fmt(rep.accuracy)), None, None).unwrap();
        let r = reconstruct_from_table(&t, &ReconstructOptions::default());
        assert!(r.find(&m).is_some());
        let all = r.find(&m).unwrap().realizations(10);
        assert!(all.contains(&m));
    }

    #[test]
    fn realizations_enumerate_all_fillings() {
        let c = Candidate {
            diagonal: vec![0, 0, 0],
            predicted: vec![1, 1, 1],
            matrix: ConfusionMatrix::from_rows(&["a", "b", "c"], &[&[0, 1, 0], &[0, 0, 1], &[1, 0, 0]]).unwrap(),
        };
        // Zero-diagonal 3x3 permutations: the two 3-cycles.
        assert_eq!(c.realizations(100).len(), 2);
    }

    #[test]
    fn infeasible_off_diagonal_rejected() {
        let picked = [ClassOption { tp: 0, predicted: 2 }, ClassOption { tp: 1, predicted: 1 }];
        let rows: Vec<ReportedRow> = ["a", "b"]
            .iter()
            .zip([1u64, 2])
            .map(|(l, s)| ReportedRow {
                label: l.to_string(),
                precision: Reported::parse("0").unwrap(),
                recall: Reported::parse("0").unwrap(),
                f1: None,
                support: s,
            })
            .collect();
        // a: r=1, q=2, total r = 2 → r_a + q_a = 3 > 2
        assert!(!off_diagonal_feasible(&picked, &rows));
    }
}
