//! Reference implementations shared by the property and acceptance suites.
#![allow(dead_code)]

use rand::Rng;

/// Nominal alpha straight from the pairwise definition: disagreement among
/// all ordered value pairs within units (each unit weighted by 1/(m-1))
/// against disagreement among all ordered pairs of pairable values.
pub fn alpha_oracle(grid: &[Vec<Option<String>>]) -> Option<f64> {
    let units: Vec<Vec<&str>> = grid
        .iter()
        .map(|u| u.iter().flatten().map(String::as_str).collect::<Vec<_>>())
        .filter(|u| u.len() >= 2)
        .collect();
    let all: Vec<&str> = units.iter().flatten().copied().collect();
    let n = all.len() as f64;
    if all.is_empty() {
        return None;
    }
    let mut within = 0.0;
    for u in &units {
        let mut d = 0.0;
        for (i, a) in u.iter().enumerate() {
            for (j, b) in u.iter().enumerate() {
                if i != j && a != b {
                    d += 1.0;
                }
            }
        }
        within += d / (u.len() as f64 - 1.0);
    }
    let mut between = 0.0;
    for (i, a) in all.iter().enumerate() {
        for (j, b) in all.iter().enumerate() {
            if i != j && a != b {
                between += 1.0;
            }
        }
    }
    if between == 0.0 {
        return Some(1.0);
    }
    Some(1.0 - (n - 1.0) * within / between)
}

/// Units × annotators grid of labels drawn uniformly from `labels`
/// choices, each rating missing with probability `missing`.
pub fn random_grid(rng: &mut impl Rng, units: usize, annotators: usize, labels: usize, missing: f64) -> Vec<Vec<Option<String>>> {
    (0..units)
        .map(|_| {
            (0..annotators)
                .map(|_| (!rng.gen_bool(missing)).then(|| format!("l{}", rng.gen_range(0..labels))))
                .collect()
        })
        .collect()
}
