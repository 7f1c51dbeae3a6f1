//! Recovers the integer confusion matrices behind rounded metric tables,
//! and shows how an internally inconsistent table is reported.

use hypermod::domain::TaskKind;
use hypermod::eval::{published, reconstruct_from_table, ReconstructOptions, Reconstruction};

pub fn run() -> Vec<(TaskKind, Reconstruction, Reconstruction)> {
    TaskKind::ALL
        .into_iter()
        .map(|task| {
            let table = published::results(task);
            let strict = reconstruct_from_table(&table, &ReconstructOptions::default());
            let relaxed = reconstruct_from_table(
                &table,
                &ReconstructOptions { relax_f1: table.labels(), ..ReconstructOptions::default() },
            );
            (task, strict, relaxed)
        })
        .collect()
}

fn main() {
    for (task, strict, relaxed) in run() {
        println!("== {task}");
        if strict.is_consistent() {
            println!("{} candidate diagonal/margin profile(s)", strict.candidates.len());
        } else {
            println!("no integer matrix reproduces every printed cell:");
            for why in &strict.inconsistencies {
                println!("  {why}");
            }
            println!("ignoring printed F1 values: {} candidate(s)", relaxed.candidates.len());
        }
        let best = strict.candidates.first().or(relaxed.candidates.first());
        if let Some(c) = best {
            for (label, row) in c.matrix.labels.iter().zip(&c.matrix.counts) {
                println!("  {label:<20}{row:?}");
            }
        }
    }
}
