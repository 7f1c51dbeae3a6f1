//! Batch command-line surface. [`run`] returns the process exit code:
//! 0 on success, 1 on a validation, lookup or conflict error, 2 on I/O or
//! backend failure.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::{AppConfig, BackendKind, API_TOKEN_ENV};
use crate::contribution::{RewardState, RewardVerdict};
use crate::cost::{compute, CostScenario};
use crate::domain::{ExampleSource, TaskKind};
use crate::error::{ApiError, Error, ErrorCode};
use crate::eval::krippendorff_alpha;
use crate::fixtures::named_fixture;
use crate::moderation::{FlagState, Verdict};
use crate::persona::Persona;
use crate::pipeline::{evaluate_examples, read_examples, Community, ExportFilter, FlagDecision, RewardDecision};
use crate::sentiment::parse_window;

#[derive(Debug, Parser)]
#[command(name = "hypermod", version, about = "Moderation and culture analytics for chat communities")]
pub struct Cli {
    /// Configuration file (TOML).
    #[arg(long, global = true, env = "HYPERMOD_CONFIG")]
    pub config: Option<PathBuf>,
    /// Print machine-readable JSON.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Ingest a line-delimited chat export.
    Ingest { file: PathBuf },
    /// Classify every pending message for one task.
    Classify {
        #[arg(long)]
        task: TaskKind,
        #[arg(long, default_value = "stub")]
        backend: BackendKind,
        #[arg(long)]
        parallelism: Option<usize>,
        #[arg(long)]
        rate_limit: Option<f64>,
    },
    /// Community composition by persona.
    Personas {
        #[arg(long)]
        persona: Option<Persona>,
        #[arg(long, default_value_t = 20)]
        limit: usize,
    },
    /// Review moderation flags.
    #[command(subcommand)]
    Flags(FlagsCommand),
    /// Queue a seeded sample of unflagged messages for a spot check.
    Audit {
        #[arg(long)]
        sample: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Review reward recommendations.
    #[command(subcommand)]
    Rewards(RewardsCommand),
    /// Contribution leaderboard.
    Leaderboard {
        #[arg(long, default_value_t = 20)]
        limit: usize,
    },
    /// Sentiment counts per window.
    Sentiment {
        #[arg(long, default_value = "daily")]
        window: String,
        #[arg(long)]
        channel: Option<String>,
        #[arg(long)]
        from: Option<DateTime<Utc>>,
        #[arg(long)]
        to: Option<DateTime<Utc>>,
    },
    /// Evaluate a backend on a labeled test set (a file or a built-in fixture name).
    Evaluate {
        #[arg(long)]
        task: TaskKind,
        #[arg(long)]
        test: String,
        #[arg(long, default_value = "stub")]
        backend: BackendKind,
    },
    /// Krippendorff's alpha over a JSON grid of units × annotators.
    Agreement { grid_file: PathBuf },
    /// Agency-cost comparison.
    Cost {
        #[arg(long, conflicts_with = "scenario")]
        preset: Option<String>,
        /// Scenario file (TOML or JSON).
        #[arg(long)]
        scenario: Option<PathBuf>,
    },
    /// Write curated examples for retraining.
    ExportRetraining {
        #[arg(long)]
        task: TaskKind,
        /// curation, human, bootstrap or all
        #[arg(long, default_value = "curation")]
        source: String,
        #[arg(long)]
        from: Option<DateTime<Utc>>,
        #[arg(long)]
        to: Option<DateTime<Utc>>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
    },
}

#[derive(Debug, Subcommand)]
pub enum FlagsCommand {
    List {
        #[arg(long)]
        state: Option<FlagState>,
        #[arg(long, default_value_t = 50)]
        limit: usize,
        #[arg(long)]
        cursor: Option<u64>,
    },
    Decide {
        flag_id: String,
        #[arg(long)]
        verdict: Verdict,
        #[command(flatten)]
        who: Moderator,
        #[arg(long)]
        note: Option<String>,
        /// Gold label when upholding a needs_label flag.
        #[arg(long)]
        label: Option<String>,
        #[arg(long)]
        idempotency_key: Option<String>,
    },
}

#[derive(Debug, Subcommand)]
pub enum RewardsCommand {
    List {
        #[arg(long)]
        state: Option<RewardState>,
    },
    Decide {
        reward_id: String,
        #[arg(long)]
        verdict: RewardVerdict,
        #[command(flatten)]
        who: Moderator,
        #[arg(long)]
        idempotency_key: Option<String>,
    },
}

#[derive(Debug, Args)]
pub struct Moderator {
    #[arg(long = "moderator", env = "HYPERMOD_MODERATOR", default_value = "cli")]
    pub id: String,
}

pub fn exit_code(e: &Error) -> i32 {
    match e.code() {
        ErrorCode::NotFound | ErrorCode::Conflict | ErrorCode::Validation => 1,
        ErrorCode::BackendUnavailable | ErrorCode::Internal => 2,
    }
}

/// Parses `args` (program name first) and executes the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = if e.use_stderr() {
                write!(err, "{e}")
            } else {
                write!(out, "{e}")
            };
            return code;
        }
    };
    let json = cli.json;
    match execute(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            if json {
                let _ = writeln!(err, "{}", serde_json::to_string(&ApiError::from(&e)).unwrap_or_default());
            } else {
                let _ = writeln!(err, "error: {e}");
            }
            exit_code(&e)
        }
    }
}

fn emit<T: Serialize>(out: &mut dyn Write, json: bool, value: &T, text: impl FnOnce() -> String) -> Result<(), Error> {
    if json {
        serde_json::to_writer_pretty(&mut *out, value)?;
        writeln!(out)?;
    } else {
        write!(out, "{}", text())?;
    }
    Ok(())
}

fn open(config: &AppConfig) -> Result<Community, Error> {
    Community::open(&config.store_dir, &config.community)
}

fn parse_source(s: &str) -> Result<Option<ExampleSource>, Error> {
    match s {
        "all" => Ok(None),
        "curation" => Ok(Some(ExampleSource::Curation)),
        "human" => Ok(Some(ExampleSource::Human)),
        "bootstrap" => Ok(Some(ExampleSource::Bootstrap)),
        other => Err(Error::validation(format!("unknown source {other:?}"))),
    }
}

fn execute(cli: Cli, out: &mut dyn Write) -> Result<(), Error> {
    let json = cli.json;
    let config = || AppConfig::locate(cli.config.as_deref());
    match cli.command {
        Command::Ingest { file } => {
            let mut c = open(&config()?)?;
            let r = c.ingest_file(&file)?;
            emit(out, json, &r, || {
                format!(
                    "read {}  retained {}  empty {}  bot {}  duplicate {}  malformed {}\nchannels {}  active users {}\n",
                    r.total_read, r.retained, r.empty_dropped, r.bot_dropped, r.duplicates_dropped, r.malformed, r.channels, r.active_users
                )
            })
        }
        Command::Classify { task, backend, parallelism, rate_limit } => {
            let cfg = config()?;
            let mut c = open(&cfg)?;
            let gateway = cfg.gateway(backend)?;
            let mut opts = cfg.backend.batch_options();
            if let Some(p) = parallelism {
                opts.parallelism = p;
            }
            if rate_limit.is_some() {
                opts.rate_limit = rate_limit;
            }
            let s = c.classify(task, &gateway, &opts)?;
            emit(out, json, &s, || {
                let mut t = format!(
                    "{} {} via {} ({}): {} classified, {} abstained, {} tokens, est. cost {:.4}\n",
                    s.run_id, s.task, s.backend_id, s.model_version, s.classified, s.abstained, s.token_usage, s.estimated_cost
                );
                for (label, n) in &s.label_counts {
                    t.push_str(&format!("  {label}\t{n}\n"));
                }
                t
            })
        }
        Command::Personas { persona, limit } => {
            let c = open(&config()?)?;
            let page = c.personas(persona, limit, None);
            emit(out, json, &page, || {
                let r = &page.report;
                format!(
                    "active users {}\ncrypto enthusiasts {} ({}%)\nfans {} ({}%)\ncasual {} ({}%)\ncrypto and fan {}\n",
                    r.active_users, r.n_crypto, r.pct_crypto, r.n_fan, r.pct_fan, r.n_casual, r.pct_casual, r.n_crypto_and_fan
                )
            })
        }
        Command::Flags(FlagsCommand::List { state, limit, cursor }) => {
            let c = open(&config()?)?;
            let page = c.flags(state, limit, cursor);
            let st = c.state();
            emit(out, json, &page, || {
                let mut t = String::new();
                for f in &page.items {
                    let text = st.messages.get(&f.message_id).map_or("", |m| m.content.as_str());
                    t.push_str(&format!("{}\t{:?}\t{}\t{}\t{text}\n", f.flag_id, f.state, f.predicted_label, f.message_id));
                }
                if let Some(n) = page.next {
                    t.push_str(&format!("next cursor: {n}\n"));
                }
                t
            })
        }
        Command::Flags(FlagsCommand::Decide { flag_id, verdict, who, note, label, idempotency_key }) => {
            let mut c = open(&config()?)?;
            let f = c.decide_flag(&flag_id, FlagDecision { verdict, moderator_id: who.id, note, label }, idempotency_key.as_deref())?;
            emit(out, json, &f, || format!("{} {:?} (gold {})\n", f.flag_id, f.state, f.gold_label.as_deref().unwrap_or("-")))
        }
        Command::Audit { sample, seed } => {
            let mut c = open(&config()?)?;
            let flags = c.false_negative_audit(sample, seed)?;
            emit(out, json, &flags, || format!("queued {} messages for review\n", flags.len()))
        }
        Command::Rewards(RewardsCommand::List { state }) => {
            let c = open(&config()?)?;
            let rewards = c.rewards(state);
            emit(out, json, &rewards, || {
                rewards
                    .iter()
                    .map(|r| format!("{}\t{:?}\t{}\tx{}\t{:.2}\n", r.reward_id, r.state, r.author_id, r.multiple, r.trigger_score))
                    .collect()
            })
        }
        Command::Rewards(RewardsCommand::Decide { reward_id, verdict, who, idempotency_key }) => {
            let mut c = open(&config()?)?;
            let r = c.decide_reward(&reward_id, RewardDecision { verdict, moderator_id: who.id }, idempotency_key.as_deref())?;
            emit(out, json, &r, || format!("{} {:?}\n", r.reward_id, r.state))
        }
        Command::Leaderboard { limit } => {
            let c = open(&config()?)?;
            let board = c.leaderboard(limit);
            emit(out, json, &board, || {
                board
                    .iter()
                    .enumerate()
                    .map(|(i, e)| format!("{:>3}. {}\t{:.2}\t{}\n", i + 1, e.author_id, e.score, e.personas.join(",")))
                    .collect()
            })
        }
        Command::Sentiment { window, channel, from, to } => {
            let c = open(&config()?)?;
            let buckets = c.sentiment(channel.as_deref(), from, to, parse_window(&window)?)?;
            emit(out, json, &buckets, || {
                buckets
                    .iter()
                    .map(|b| {
                        let score = b.mean_score.map_or("-".to_string(), |s| format!("{s:+.3}"));
                        format!("{}\t{}\t+{} ={} -{}\t{score}\n", b.window_start.format("%Y-%m-%d %H:%M"), b.channel_id, b.n_pos, b.n_neu, b.n_neg)
                    })
                    .collect()
            })
        }
        Command::Evaluate { task, test, backend } => {
            let examples = if Path::new(&test).exists() {
                read_examples(Path::new(&test))?
            } else if let Some((fixture_task, examples)) = named_fixture(&test) {
                if fixture_task != task {
                    return Err(Error::validation(format!("fixture {test} is a {fixture_task} test set")));
                }
                examples
            } else {
                return Err(Error::Io(std::io::Error::new(
                    std::io::ErrorKind::NotFound,
                    format!("{test}: no such file or built-in fixture"),
                )));
            };
            let cfg = config();
            let gateway = match &cfg {
                Ok(cfg) => cfg.gateway(backend)?,
                Err(_) => AppConfig::default().gateway(backend)?,
            };
            let record = evaluate_examples(task, &examples, &gateway)?;
            if let Ok(cfg) = &cfg {
                open(cfg)?.record_evaluation(record.clone())?;
            }
            let report = record.report.rounded();
            emit(out, json, &report, || report.to_table())
        }
        Command::Agreement { grid_file } => {
            let text = std::fs::read_to_string(&grid_file)?;
            let grid = parse_grid(&text)?;
            let r = krippendorff_alpha(&grid)?;
            emit(out, json, &r, || {
                let mut t = format!(
                    "alpha {:.4}  (pairable values {}, D_o {:.4}, D_e {:.4})\n",
                    r.alpha, r.n, r.observed_disagreement, r.expected_disagreement
                );
                if let Some(w) = &r.warning {
                    t.push_str(&format!("warning: {w}\n"));
                }
                t
            })
        }
        Command::Cost { preset, scenario } => {
            let s = match (preset, scenario) {
                (_, Some(path)) => CostScenario::load(&path)?,
                (Some(name), None) => CostScenario::preset(&name)?,
                (None, None) => CostScenario::paper(),
            };
            let r = compute(&s)?;
            emit(out, json, &r, || r.render())
        }
        Command::ExportRetraining { task, source, from, to, out_dir } => {
            let cfg = config()?;
            let c = open(&cfg)?;
            let filter = ExportFilter { task, source: parse_source(&source)?, from, to };
            let dir = out_dir.unwrap_or_else(|| cfg.export_dir());
            let e = c.export_retraining(&filter, &dir)?;
            emit(out, json, &e, || format!("{} examples written to {}\n", e.examples, e.path.display()))
        }
        Command::Serve { port } => {
            let cfg = config()?;
            let c = open(&cfg)?;
            let token = std::env::var(API_TOKEN_ENV).ok().filter(|t| !t.is_empty());
            let state = crate::service::AppState::new(c, cfg, token);
            let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
            writeln!(out, "listening on 0.0.0.0:{port}")?;
            out.flush()?;
            rt.block_on(crate::service::serve(state, port))
        }
    }
}

/// Accepts `[[..], ..]` or `{"grid": [[..], ..]}`, with `null` for a
/// missing rating.
pub fn parse_grid(text: &str) -> Result<Vec<Vec<Option<String>>>, Error> {
    #[derive(serde::Deserialize)]
    #[serde(untagged)]
    enum GridFile {
        Bare(Vec<Vec<Option<String>>>),
        Wrapped { grid: Vec<Vec<Option<String>>> },
    }
    let parsed: GridFile = serde_json::from_str(text).map_err(|e| Error::validation(format!("grid file: {e}")))?;
    Ok(match parsed {
        GridFile::Bare(g) | GridFile::Wrapped { grid: g } => g,
    })
}
