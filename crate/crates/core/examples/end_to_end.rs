//! The full offline pipeline against an on-disk store: ingest, all four
//! classification tasks, personas and moderation, then a reopen that must
//! reproduce the same state from the event log.

use hypermod::domain::TaskKind;
use hypermod::fixtures::{fixture_config, generate_export, write_export, ExportSpec};
use hypermod::gateway::{BatchOptions, Gateway};
use hypermod::persona::CompositionReport;
use hypermod::pipeline::Community;
use hypermod::store::Store;

pub struct Run {
    pub report: CompositionReport,
    pub flags: usize,
    pub rewards: usize,
    pub events: u64,
    pub replay_matches: bool,
}

pub fn run(dir: &std::path::Path, spec: &ExportSpec) -> hypermod::Result<Run> {
    let export = dir.join("export.jsonl");
    let mut out = std::io::BufWriter::new(std::fs::File::create(&export)?);
    write_export(&generate_export(spec)?, &mut out)?;
    drop(out);

    let store_dir = dir.join("store");
    let config = fixture_config();
    let mut community = Community::open(&store_dir, &config)?;
    community.ingest_file(&export)?;
    let gateway = Gateway::stub();
    for task in TaskKind::ALL {
        community.classify(task, &gateway, &BatchOptions::default())?;
    }
    let report = community.personas(None, 0, None).report;
    let flags = community.state().moderation.flags().len();
    let rewards = community.state().contributions.rewards().len();
    let events = community.store().seq();
    let live = community.state().clone();
    drop(community);

    let replayed = Store::replay(&store_dir)?;
    let reopened = Community::open(&store_dir, &config)?;
    let replay_matches = replayed == live && *reopened.state() == live;
    Ok(Run { report, flags, rewards, events, replay_matches })
}

fn main() -> hypermod::Result<()> {
    let spec = if std::env::args().any(|a| a == "--full") { ExportSpec::paper() } else { ExportSpec::small() };
    let dir = tempfile::tempdir()?;
    let r = run(dir.path(), &spec)?;
    let p = &r.report;
    println!("active users {}", p.active_users);
    println!("personas: crypto {} ({}%), fan {} ({}%), casual {} ({}%), crypto and fan {}",
        p.n_crypto, p.pct_crypto, p.n_fan, p.pct_fan, p.n_casual, p.pct_casual, p.n_crypto_and_fan);
    println!("{} flags raised, {} reward recommendations, {} events logged", r.flags, r.rewards, r.events);
    println!("replay reproduces live state: {}", r.replay_matches);
    Ok(())
}
