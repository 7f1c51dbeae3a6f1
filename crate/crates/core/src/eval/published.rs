//! The four published result tables, cell for cell as printed, and the
//! confusion matrices reconstructed from them.

use super::{ConfusionMatrix, ReportedTable};
use crate::domain::TaskKind;

pub fn intent_results() -> ReportedTable {
    ReportedTable::from_cells(
        &[
            ("crypto", "0.92", "0.80", "0.86", 41),
            ("fan", "0.93", "1.00", "0.96", 40),
            ("casual", "0.86", "0.91", "0.89", 35),
        ],
        Some("0.91"),
        Some(["0.90", "0.91", "0.90"]),
        Some(["0.91", "0.91", "0.90"]),
    )
    .expect("static table")
}

pub fn moderation_results() -> ReportedTable {
    ReportedTable::from_cells(
        &[
            ("toxic", "0.95", "0.99", "0.97", 106),
            ("spam", "1.00", "0.89", "0.94", 9),
            ("not_toxic_not_spam", "0.99", "0.98", "0.99", 268),
        ],
        Some("0.98"),
        Some(["0.98", "0.95", "0.97"]),
        Some(["0.98", "0.98", "0.98"]),
    )
    .expect("static table")
}

pub fn contribution_results() -> ReportedTable {
    ReportedTable::from_cells(
        &[
            ("na", "0.89", "0.93", "0.91", 156),
            ("onboarding", "0.75", "0.9", "0.82", 10),
            ("knowledge_tcg", "0.57", "0.5", "0.53", 16),
            ("knowledge_fan", "0.67", "0.6", "0.63", 10),
            ("knowledge_crypto", "0.5", "0.25", "0.33", 4),
            ("content", "0.71", "0.71", "0.71", 7),
            ("moderation", "0", "0", "0", 1),
            ("suggestion", "0.5", "0.29", "0.36", 7),
        ],
        Some("0.83"),
        Some(["0.57", "0.52", "0.54"]),
        Some(["0.82", "0.83", "0.82"]),
    )
    .expect("static table")
}

/// Printed with a positive-class F1 of 0.9775, which P = R = 0.75 rules out.
pub fn sentiment_results() -> ReportedTable {
    ReportedTable::from_cells(
        &[
            ("positive", "0.75", "0.75", "0.9775", 32),
            ("neutral", "0.69", "0.71", "0.70", 28),
            ("negative", "1.00", "0.93", "0.97", 15),
        ],
        Some("0.77"),
        Some(["0.81", "0.80", "0.81"]),
        Some(["0.78", "0.77", "0.78"]),
    )
    .expect("static table")
}

/// Intent matrix found by integer search against the intent table.
pub fn intent_matrix() -> ConfusionMatrix {
    ConfusionMatrix::from_rows(
        TaskKind::Intent.labels(),
        &[&[33, 3, 5], &[0, 40, 0], &[3, 0, 32]],
    )
    .expect("square")
    .with_task(TaskKind::Intent)
}

/// Moderation matrix consistent with the moderation table.
pub fn moderation_matrix() -> ConfusionMatrix {
    ConfusionMatrix::from_rows(
        TaskKind::Moderation.labels(),
        &[&[105, 0, 1], &[0, 8, 1], &[5, 0, 263]],
    )
    .expect("square")
    .with_task(TaskKind::Moderation)
}

/// The single contribution matrix profile the contribution table admits.
pub fn contribution_matrix() -> ConfusionMatrix {
    ConfusionMatrix::from_rows(
        TaskKind::Contribution.labels(),
        &[
            &[145, 3, 6, 2, 0, 0, 0, 0],
            &[0, 9, 0, 0, 0, 0, 0, 1],
            &[7, 0, 8, 0, 0, 0, 0, 1],
            &[4, 0, 0, 6, 0, 0, 0, 0],
            &[3, 0, 0, 0, 1, 0, 0, 0],
            &[2, 0, 0, 0, 0, 5, 0, 0],
            &[0, 0, 0, 1, 0, 0, 0, 0],
            &[2, 0, 0, 0, 1, 2, 0, 2],
        ],
    )
    .expect("square")
    .with_task(TaskKind::Contribution)
}

/// Sentiment matrix reproducing every printed cell except the positive F1.
pub fn sentiment_matrix() -> ConfusionMatrix {
    ConfusionMatrix::from_rows(
        TaskKind::Sentiment.labels(),
        &[&[24, 8, 0], &[8, 20, 0], &[0, 1, 14]],
    )
    .expect("square")
    .with_task(TaskKind::Sentiment)
}

pub fn matrix(task: TaskKind) -> ConfusionMatrix {
    match task {
        TaskKind::Intent => intent_matrix(),
        TaskKind::Moderation => moderation_matrix(),
        TaskKind::Contribution => contribution_matrix(),
        TaskKind::Sentiment => sentiment_matrix(),
    }
}

pub fn results(task: TaskKind) -> ReportedTable {
    match task {
        TaskKind::Intent => intent_results(),
        TaskKind::Moderation => moderation_results(),
        TaskKind::Contribution => contribution_results(),
        TaskKind::Sentiment => sentiment_results(),
    }
}
