use serde::{Deserialize, Serialize};

use super::{AgreementReport, EvaluationReport};
use crate::domain::TaskKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateVerdict {
    /// Good enough for production.
    Accept,
    /// Curate more examples and retrain.
    Iterate,
    /// Repeated iterations failed; have several people label the same data.
    CheckAgreement,
    /// Humans cannot agree either; the task is not a classification problem.
    Abandon,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LifecycleGate {
    pub task: TaskKind,
    pub f1_threshold: f64,
    pub alpha_threshold: f64,
    /// Failed iterations after which agreement must be measured.
    pub max_iterations: u32,
}

impl LifecycleGate {
    pub fn new(task: TaskKind) -> Self {
        LifecycleGate {
            task,
            f1_threshold: 0.75,
            alpha_threshold: 0.667,
            max_iterations: 3,
        }
    }
}

/// Gate decision for a held-out evaluation.
pub fn lifecycle_decide(
    report: &EvaluationReport,
    agreement: Option<&AgreementReport>,
    gate: &LifecycleGate,
) -> GateVerdict {
    if report.macro_avg.f1 >= gate.f1_threshold {
        return GateVerdict::Accept;
    }
    match agreement {
        None => GateVerdict::Iterate,
        Some(a) if a.alpha >= gate.alpha_threshold => GateVerdict::Iterate,
        Some(_) => GateVerdict::Abandon,
    }
}

/// Tracks successive evaluations of one model and escalates to an
/// agreement check once `max_iterations` have failed without one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelLifecycle {
    pub gate: LifecycleGate,
    pub failed_iterations: u32,
    pub history: Vec<GateVerdict>,
}

impl ModelLifecycle {
    pub fn new(gate: LifecycleGate) -> Self {
        ModelLifecycle {
            gate,
            failed_iterations: 0,
            history: Vec::new(),
        }
    }

    pub fn record(&mut self, report: &EvaluationReport, agreement: Option<&AgreementReport>) -> GateVerdict {
        let mut verdict = lifecycle_decide(report, agreement, &self.gate);
        if verdict == GateVerdict::Iterate {
            self.failed_iterations += 1;
            if agreement.is_none() && self.failed_iterations >= self.gate.max_iterations {
                verdict = GateVerdict::CheckAgreement;
            }
        }
        self.history.push(verdict);
        verdict
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{Averages, EvaluationReport};

    fn report(macro_f1: f64) -> EvaluationReport {
        let avg = Averages {
            precision: macro_f1,
            recall: macro_f1,
            f1: macro_f1,
        };
        EvaluationReport {
            task: Some(TaskKind::Intent),
            per_class: Vec::new(),
            accuracy: macro_f1,
            macro_avg: avg,
            weighted_avg: avg,
            n: 1,
        }
    }

    fn agreement(alpha: f64) -> AgreementReport {
        AgreementReport {
            n: 2,
            labels: Vec::new(),
            coincidence: Vec::new(),
            observed_disagreement: 0.0,
            expected_disagreement: 1.0,
            alpha,
            warning: None,
        }
    }

    #[test]
    fn gate_rules() {
        let gate = LifecycleGate::new(TaskKind::Intent);
        assert_eq!(lifecycle_decide(&report(0.90), None, &gate), GateVerdict::Accept);
        assert_eq!(lifecycle_decide(&report(0.60), None, &gate), GateVerdict::Iterate);
        assert_eq!(lifecycle_decide(&report(0.40), Some(&agreement(0.254)), &gate), GateVerdict::Abandon);
        assert_eq!(lifecycle_decide(&report(0.40), Some(&agreement(0.80)), &gate), GateVerdict::Iterate);
    }

    #[test]
    fn repeated_failures_escalate() {
        let mut lc = ModelLifecycle::new(LifecycleGate::new(TaskKind::Contribution));
        assert_eq!(lc.record(&report(0.5), None), GateVerdict::Iterate);
        assert_eq!(lc.record(&report(0.5), None), GateVerdict::Iterate);
        assert_eq!(lc.record(&report(0.5), None), GateVerdict::CheckAgreement);
        assert_eq!(lc.record(&report(0.5), Some(&agreement(0.254))), GateVerdict::Abandon);
    }
}
