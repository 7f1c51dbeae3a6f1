//! Evaluates the offline backend on each bundled labeled test set, compares
//! the rounded report with the reference figures and applies the release
//! gate.

use hypermod::domain::TaskKind;
use hypermod::eval::{lifecycle_decide, published, EvaluationReport, GateVerdict, LifecycleGate};
use hypermod::fixtures::published_fixture;
use hypermod::gateway::Gateway;
use hypermod::pipeline::evaluate_examples;

pub struct TaskResult {
    pub task: TaskKind,
    pub report: EvaluationReport,
    pub mismatches: Vec<String>,
    pub gate: GateVerdict,
}

pub fn run() -> hypermod::Result<Vec<TaskResult>> {
    let gateway = Gateway::stub();
    TaskKind::ALL
        .into_iter()
        .map(|task| {
            let record = evaluate_examples(task, &published_fixture(task), &gateway)?;
            let skip: &[&str] = if task == TaskKind::Sentiment { &["positive"] } else { &[] };
            let mismatches = published::results(task).mismatches(&record.report, skip);
            let gate = lifecycle_decide(&record.report, None, &LifecycleGate::new(task));
            Ok(TaskResult { task, report: record.report.rounded(), mismatches, gate })
        })
        .collect()
}

fn main() -> hypermod::Result<()> {
    for r in run()? {
        println!("== {} (n = {}) gate: {:?}", r.task, r.report.n, r.gate);
        print!("{}", r.report.to_table());
        for m in &r.mismatches {
            println!("  differs from reference: {m}");
        }
        println!();
    }
    Ok(())
}
