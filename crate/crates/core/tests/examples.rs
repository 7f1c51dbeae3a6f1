//! Runs every example's `run` so the documentation cannot rot.

#[allow(dead_code)]
#[path = "../examples/ingest.rs"]
mod ingest;
#[allow(dead_code)]
#[path = "../examples/classify.rs"]
mod classify;
#[allow(dead_code)]
#[path = "../examples/personas.rs"]
mod personas;
#[allow(dead_code)]
#[path = "../examples/moderation.rs"]
mod moderation;
#[allow(dead_code)]
#[path = "../examples/contributions.rs"]
mod contributions;
#[allow(dead_code)]
#[path = "../examples/sentiment.rs"]
mod sentiment;
#[allow(dead_code)]
#[path = "../examples/evaluate.rs"]
mod evaluate;
#[allow(dead_code)]
#[path = "../examples/reconstruct.rs"]
mod reconstruct;
#[allow(dead_code)]
#[path = "../examples/agreement.rs"]
mod agreement;
#[allow(dead_code)]
#[path = "../examples/cost.rs"]
mod cost;
#[allow(dead_code)]
#[path = "../examples/http_api.rs"]
mod http_api;
#[allow(dead_code)]
#[path = "../examples/end_to_end.rs"]
mod end_to_end;
#[allow(dead_code)]
#[path = "../examples/generate_fixtures.rs"]
mod generate_fixtures;

use hypermod::domain::TaskKind;

#[test]
fn ingest_filters_the_sample() {
    let r = ingest::run().unwrap();
    assert_eq!((r.total_read, r.retained, r.empty_dropped, r.bot_dropped, r.duplicates_dropped), (1050, 1000, 20, 20, 10));
    assert_eq!((r.channels, r.active_users), (3, 40));
}

#[test]
fn classify_rerun_is_served_from_cache() {
    let runs = classify::run().unwrap();
    assert_eq!(runs.first.classified, 1000);
    assert_eq!(runs.rerun_cache_hits, 1000);
    assert_eq!(runs.rerun_backend_calls, 0);
}

#[test]
fn persona_mix_of_the_sample() {
    let (r, crypto) = personas::run().unwrap();
    assert_eq!((r.active_users, r.n_crypto, r.n_fan, r.n_casual, r.n_crypto_and_fan), (40, 11, 9, 26, 6));
    assert_eq!(crypto.len(), 11);
}

#[test]
fn every_moderation_verdict_is_curated() {
    let r = moderation::run().unwrap();
    assert!(r.raised > 0);
    assert_eq!(r.upheld + r.overturned, r.raised);
    assert_eq!(r.audited, 5);
    assert_eq!(r.curated, r.raised);
}

#[test]
fn leaderboard_and_rewards() {
    let o = contributions::run().unwrap();
    assert_eq!(o.leaderboard.len(), 5);
    assert!(o.leaderboard.windows(2).all(|w| w[0].score >= w[1].score));
    assert!(o.pending > 0);
    assert!(o.approved.is_some());
}

#[test]
fn sentiment_buckets_partition_the_labels() {
    let buckets = sentiment::run().unwrap();
    assert_eq!(buckets.len(), 7);
    assert_eq!(buckets.iter().map(|b| b.total()).sum::<u64>(), 1000);
}

#[test]
fn stub_reproduces_reference_scores_on_fixtures() {
    for r in evaluate::run().unwrap() {
        assert!(r.mismatches.is_empty(), "{}: {:?}", r.task, r.mismatches);
    }
}

#[test]
fn reconstruction_finds_one_profile_per_table() {
    for (task, strict, relaxed) in reconstruct::run() {
        if task == TaskKind::Sentiment {
            assert!(!strict.is_consistent());
            assert_eq!(relaxed.candidates.len(), 1);
        } else {
            assert_eq!(strict.candidates.len(), 1, "{task}");
        }
    }
}

#[test]
fn worked_agreement_example() {
    let (worked, sparse) = agreement::run().unwrap();
    assert!((worked.alpha - 8.0 / 15.0).abs() < 1e-12);
    assert!(sparse.alpha > 0.0 && sparse.alpha < 1.0);
}

#[test]
fn cost_preset_and_variant() {
    let (preset, custom) = cost::run().unwrap();
    assert!((preset.system_daily - 66.10).abs() < 0.005);
    assert!((custom.system_daily - 61.10).abs() < 0.005);
}

#[test]
fn http_walkthrough_statuses() {
    let log = http_api::run().unwrap();
    let statuses: Vec<u16> = log.iter().map(|(_, s, _)| s.as_u16()).collect();
    assert_eq!(statuses, [200, 200, 200, 200, 200, 422, 200, 404]);
    assert_eq!(log[3].2, log[4].2, "idempotent replay returns the stored decision");
    assert_eq!(log[7].2["code"], "not_found");
}

#[test]
fn end_to_end_small_run_replays() {
    let dir = tempfile::tempdir().unwrap();
    let r = end_to_end::run(dir.path(), &hypermod::fixtures::ExportSpec::small()).unwrap();
    assert!(r.replay_matches);
    assert_eq!(r.report.active_users, 40);
    assert!(r.flags > 0 && r.rewards > 0 && r.events > 1000);
}

#[test]
fn shipped_fixture_files_match_the_generator() {
    let dir = tempfile::tempdir().unwrap();
    let shipped = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("data/fixtures");
    for path in generate_fixtures::run(dir.path()).unwrap() {
        let name = path.file_name().unwrap();
        let expected = std::fs::read(shipped.join(name)).unwrap_or_default();
        assert!(std::fs::read(&path).unwrap() == expected, "{name:?} is stale; rerun the generate_fixtures example");
    }
}
