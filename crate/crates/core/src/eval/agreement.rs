use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Krippendorff's alpha for nominal data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    /// Number of pairable values (ratings in units with at least two ratings).
    pub n: u64,
    pub labels: Vec<String>,
    /// `coincidence[c][k]`, indexed like `labels`.
    pub coincidence: Vec<Vec<f64>>,
    pub observed_disagreement: f64,
    pub expected_disagreement: f64,
    pub alpha: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

/// Computes nominal alpha over a units × annotators grid; `None` marks a
/// missing rating. Units with fewer than two ratings carry no pairable
/// information and are skipped.
pub fn krippendorff_alpha<S: AsRef<str>>(grid: &[Vec<Option<S>>]) -> Result<AgreementReport> {
    let mut index: BTreeMap<String, usize> = BTreeMap::new();
    for rating in grid.iter().flatten().flatten() {
        let next = index.len();
        index.entry(rating.as_ref().to_string()).or_insert(next);
    }
    // Stable alphabetical label order for the report.
    let labels: Vec<String> = index.keys().cloned().collect();
    let pos: BTreeMap<&str, usize> = labels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
    let k = labels.len();

    let mut coincidence = vec![vec![0.0; k]; k];
    let mut n = 0u64;
    for unit in grid {
        let values: Vec<usize> = unit.iter().flatten().map(|v| pos[v.as_ref()]).collect();
        let m = values.len();
        if m < 2 {
            continue;
        }
        n += m as u64;
        let mut tally = vec![0u64; k];
        for &v in &values {
            tally[v] += 1;
        }
        let w = 1.0 / (m as f64 - 1.0);
        for c in 0..k {
            if tally[c] == 0 {
                continue;
            }
            for d in 0..k {
                let pairs = if c == d {
                    tally[c] * (tally[c] - 1)
                } else {
                    tally[c] * tally[d]
                };
                coincidence[c][d] += pairs as f64 * w;
            }
        }
    }
    if n == 0 {
        return Err(Error::validation(
            "no unit carries two or more ratings; alpha is undefined",
        ));
    }

    let marginals: Vec<f64> = coincidence.iter().map(|row| row.iter().sum()).collect();
    let mut observed = 0.0;
    let mut expected = 0.0;
    for c in 0..k {
        for d in 0..k {
            if c != d {
                observed += coincidence[c][d];
                expected += marginals[c] * marginals[d];
            }
        }
    }
    expected /= n as f64 - 1.0;

    let (alpha, warning) = if expected == 0.0 {
        (
            1.0,
            Some("all pairable ratings share one category; expected disagreement is zero".to_string()),
        )
    } else {
        (1.0 - observed / expected, None)
    };
    Ok(AgreementReport {
        n,
        labels,
        coincidence,
        observed_disagreement: observed,
        expected_disagreement: expected,
        alpha,
        warning,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(units: &[&[&str]]) -> Vec<Vec<Option<String>>> {
        units
            .iter()
            .map(|u| {
                u.iter()
                    .map(|v| (!v.is_empty()).then(|| v.to_string()))
                    .collect()
            })
            .collect()
    }

    #[test]
    fn perfect_agreement_is_one() {
        let r = krippendorff_alpha(&grid(&[&["a", "a"], &["b", "b"], &["c", "c"]])).unwrap();
        assert_eq!(r.alpha, 1.0);
        assert!(r.warning.is_none());
    }

    #[test]
    fn four_unit_example() {
        let r = krippendorff_alpha(&grid(&[&["a", "a"], &["a", "b"], &["b", "b"], &["b", "b"]])).unwrap();
        assert!((r.alpha - 8.0 / 15.0).abs() < 1e-12);
        assert_eq!(r.n, 8);
        assert!((r.observed_disagreement - 2.0).abs() < 1e-12);
    }

    #[test]
    fn lone_disagreeing_unit_is_chance_level() {
        let r = krippendorff_alpha(&grid(&[&["a", "b"]])).unwrap();
        assert!(r.alpha.abs() < 1e-12);
    }

    #[test]
    fn systematic_disagreement_goes_negative() {
        let r = krippendorff_alpha(&grid(&[&["a", "b"], &["b", "a"]])).unwrap();
        assert!((r.alpha + 0.5).abs() < 1e-12);
    }

    #[test]
    fn missing_values_and_singletons_are_skipped() {
        let r = krippendorff_alpha(&grid(&[&["a", "a", ""], &["b", "", ""]])).unwrap();
        assert_eq!(r.n, 2);
        assert_eq!(r.alpha, 1.0);
        assert!(r.warning.is_some());
    }

    #[test]
    fn unpairable_grid_is_error() {
        assert!(krippendorff_alpha(&grid(&[&["a", ""], &["", "b"]])).is_err());
        assert!(krippendorff_alpha::<String>(&[]).is_err());
    }
}
