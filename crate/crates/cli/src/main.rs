use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use tolmach_core::catalog::{load_catalog, serialize_schema_for_prompt, Catalog};
use tolmach_core::cleaning::{flag_report, read_jsonl, write_jsonl, CleanRecord, RawRecord};
use tolmach_core::guard::Guard;
use tolmach_core::retrieval::{sample_index, ExamplePair, VectorIndex};
use tolmach_core::service::{
    compute_metrics, http, parse_window, FileAuditSink, QueryJob, ServiceConfig, SessionPermission,
};
use tolmach_core::sync::{FileCursorStore, JsonlSource, Scheduler, SyncEngine};
use tolmach_core::table::ResultTable;
use tolmach_core::text::Language;

const CLI_SESSION: &str = "cli";

#[derive(Parser)]
#[command(
    name = "tolmach",
    version,
    about = "Governed natural-language queries over ERP data"
)]
struct Cli {
    /// Service configuration file. Environment variables `TOLMACH_<SECTION>_<KEY>` override it.
    #[arg(long, global = true, env = "TOLMACH_CONFIG")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    #[command(subcommand)]
    Catalog(CatalogCmd),
    #[command(subcommand)]
    Clean(CleanCmd),
    #[command(subcommand)]
    Sync(SyncCmd),
    #[command(subcommand)]
    Corpus(CorpusCmd),
    #[command(subcommand)]
    Guard(GuardCmd),
    /// Run the HTTP API (and the sync scheduler when enabled).
    Serve {
        #[arg(long)]
        bind: Option<String>,
    },
    /// Answer one question and print the table.
    Ask {
        question: String,
        #[arg(long, value_parser = parse_lang)]
        lang: Option<Language>,
        /// Also print the generated statement.
        #[arg(long)]
        show_sql: bool,
    },
    /// Summarize the audit trail.
    Metrics {
        #[arg(long, default_value = "7d")]
        window: String,
        /// Audit file; defaults to `[audit] path`.
        #[arg(long)]
        audit: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum CatalogCmd {
    /// Load, check and round-trip a catalog document.
    Validate { path: PathBuf },
    /// Print the schema block the generator sees.
    RenderPrompt { path: PathBuf },
}

#[derive(Subcommand)]
enum CleanCmd {
    /// Clean a JSON-lines file of raw records.
    Run {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// List near-duplicate clusters in a JSON-lines file.
    Dedupe {
        #[arg(long = "in")]
        input: PathBuf,
    },
}

#[derive(Subcommand)]
enum SyncCmd {
    RunOnce,
    Status,
}

#[derive(Subcommand)]
enum CorpusCmd {
    /// Validate and append one example.
    Add {
        #[arg(long)]
        id: String,
        #[arg(long)]
        question: String,
        #[arg(long)]
        sql: String,
        #[arg(long, value_parser = parse_lang, default_value = "en")]
        lang: Language,
    },
    Search {
        question: String,
        #[arg(long, default_value_t = 5)]
        k: usize,
    },
    /// Re-run the guard over every stored statement.
    Verify,
}

#[derive(Subcommand)]
enum GuardCmd {
    /// Exit code 0 pass, 1 syntax, 2 schema, 3 policy.
    Check {
        #[arg(long)]
        catalog: Option<PathBuf>,
        sql: String,
    },
}

fn parse_lang(s: &str) -> Result<Language, String> {
    Language::parse(s).ok_or_else(|| format!("unknown language `{s}` (en, tr, ru)"))
}

fn main() -> ExitCode {
    // Exit quietly when piped into `head` and friends.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(64)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let cfg = ServiceConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Catalog(CatalogCmd::Validate { path }) => catalog_validate(&path),
        Command::Catalog(CatalogCmd::RenderPrompt { path }) => {
            let catalog = load_catalog(&path).with_context(|| path.display().to_string())?;
            print!("{}", serialize_schema_for_prompt(&catalog));
            Ok(ExitCode::SUCCESS)
        }
        Command::Clean(cmd) => clean(&cfg, cmd),
        Command::Sync(cmd) => sync(&cfg, cmd),
        Command::Corpus(cmd) => corpus(&cfg, cmd),
        Command::Guard(GuardCmd::Check { catalog, sql }) => {
            let catalog = match catalog {
                Some(p) => load_catalog(&p).with_context(|| p.display().to_string())?,
                None => cfg.load_catalog()?,
            };
            let outcome = Guard::new(&catalog).check(&sql, None);
            println!("{}", outcome.verdict.to_json());
            Ok(ExitCode::from(outcome.verdict.status.exit_code() as u8))
        }
        Command::Serve { bind } => serve(&cfg, bind),
        Command::Ask {
            question,
            lang,
            show_sql,
        } => ask(&cfg, &question, lang, show_sql),
        Command::Metrics { window, audit } => metrics(&cfg, &window, audit),
    }
}

fn catalog_validate(path: &Path) -> Result<ExitCode> {
    let catalog = load_catalog(path).with_context(|| path.display().to_string())?;
    let again =
        Catalog::from_toml(&catalog.to_toml()).context("re-reading the serialized catalog")?;
    if again != catalog {
        bail!("catalog does not survive a serialize/load round trip");
    }
    let columns: usize = catalog.schema.tables.iter().map(|t| t.columns.len()).sum();
    println!(
        "ok: {} tables, {} columns, version {}",
        catalog.schema.tables.len(),
        columns,
        catalog.version()
    );
    Ok(ExitCode::SUCCESS)
}

fn read_records<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).with_context(|| path.display().to_string())?;
    Ok(read_jsonl(BufReader::new(file))?)
}

fn write_records<T: serde::Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let file = File::create(path).with_context(|| path.display().to_string())?;
    write_jsonl(BufWriter::new(file), items)?;
    Ok(())
}

fn clean(cfg: &ServiceConfig, cmd: CleanCmd) -> Result<ExitCode> {
    let pipeline = cfg.pipeline(Arc::new(cfg.load_catalog()?))?;
    match cmd {
        CleanCmd::Run { input, out, report } => {
            let raw: Vec<RawRecord> = read_records(&input)?;
            let cleaned = pipeline.clean_batch(&raw);
            write_records(&out, &cleaned)?;
            let flags = flag_report(&cleaned);
            if let Some(path) = report {
                write_records(&path, &flags)?;
            }
            let rejected = cleaned.iter().filter(|r| r.is_rejected()).count();
            let changed: usize = cleaned.iter().map(CleanRecord::provenance_len).sum();
            println!(
                "{} records, {changed} field changes, {} flags, {rejected} rejected",
                cleaned.len(),
                flags.len()
            );
        }
        CleanCmd::Dedupe { input } => {
            let raw: Vec<RawRecord> = read_records(&input)?;
            let cleaned = pipeline.clean_batch(&raw);
            for cluster in pipeline.dedupe(&cleaned)? {
                println!("{}", serde_json::to_string(&cluster)?);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn cursor_store(cfg: &ServiceConfig) -> FileCursorStore {
    FileCursorStore::new(
        cfg.sync
            .cursor
            .clone()
            .unwrap_or_else(|| PathBuf::from("sync_cursor.json")),
    )
}

fn sync_engine(
    cfg: &ServiceConfig,
    catalog: Arc<Catalog>,
    store: Arc<tolmach_core::store::AnalyticsStore>,
) -> Result<SyncEngine> {
    let Some(source) = &cfg.sync.source else {
        bail!("sync.source is not configured (set [sync] source or TOLMACH_SYNC_SOURCE)");
    };
    let pipeline = Arc::new(cfg.pipeline(catalog)?);
    let mut engine = SyncEngine::new(
        Arc::new(JsonlSource::new(source)),
        store,
        pipeline,
        Arc::new(cursor_store(cfg)),
    );
    if let Some(report) = &cfg.sync.report {
        engine = engine.with_report(report);
    }
    Ok(engine)
}

fn sync(cfg: &ServiceConfig, cmd: SyncCmd) -> Result<ExitCode> {
    match cmd {
        SyncCmd::RunOnce => {
            let catalog = Arc::new(cfg.load_catalog()?);
            let store = Arc::new(cfg.open_store(&catalog)?);
            let report = sync_engine(cfg, catalog, store)?.run_cycle()?;
            println!("{}", serde_json::to_string_pretty(&report.cursor)?);
        }
        SyncCmd::Status => {
            use tolmach_core::sync::CursorStore;
            let store = cursor_store(cfg);
            let cursor = store.load()?;
            let next =
                cursor.last_successful_sync + chrono::Duration::from_std(cfg.sync_interval())?;
            println!("cursor file: {}", store.path().display());
            println!(
                "last successful sync: {}",
                cursor.last_successful_sync.to_rfc3339()
            );
            println!("next due: {}", next.to_rfc3339());
            println!(
                "last batch: {}",
                serde_json::to_string(&cursor.last_batch_stats)?
            );
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn corpus(cfg: &ServiceConfig, cmd: CorpusCmd) -> Result<ExitCode> {
    let catalog = cfg.load_catalog()?;
    let guard = Guard::new(&catalog);
    let embedder = cfg.embedder();
    let path = cfg.corpus.path.clone();
    let mut index = match &path {
        Some(p) if p.exists() => VectorIndex::load(p)?,
        _ => sample_index(embedder.as_ref(), &guard),
    };
    match cmd {
        CorpusCmd::Add {
            id,
            question,
            sql,
            lang,
        } => {
            let Some(path) = path else {
                bail!("corpus.path is not configured (set [corpus] path or TOLMACH_CORPUS_PATH)");
            };
            index.add(
                ExamplePair::new(id, question, sql, lang, embedder.as_ref())?,
                &guard,
            )?;
            index.persist(&path)?;
            println!("{} examples in {}", index.len(), path.display());
        }
        CorpusCmd::Search { question, k } => {
            let query = embedder.embed(&question)?;
            for hit in index.retrieve_topk(&query, k)? {
                println!(
                    "{:.4}\t{}\t{}\t{}",
                    hit.similarity, hit.pair.example_id, hit.pair.question, hit.pair.sql
                );
            }
        }
        CorpusCmd::Verify => {
            let failures: Vec<_> = index
                .verify(&guard)
                .into_iter()
                .filter(|(_, v)| !v.is_pass())
                .collect();
            for (id, verdict) in &failures {
                println!("{id}\t{}", verdict.summary());
            }
            println!(
                "{} of {} examples pass",
                index.len() - failures.len(),
                index.len()
            );
            if !failures.is_empty() {
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn serve(cfg: &ServiceConfig, bind: Option<String>) -> Result<ExitCode> {
    let catalog = Arc::new(cfg.load_catalog()?);
    let store = Arc::new(cfg.open_store(&catalog)?);
    let svc = cfg.build_service(catalog.clone(), store.clone())?;
    if cfg.sessions.is_empty() {
        tracing::warn!("no [[sessions]] configured; every request will be refused");
    }
    let scheduler = if cfg.sync.enabled {
        Some(Scheduler::spawn(
            Arc::new(sync_engine(cfg, catalog, store)?),
            cfg.sync_interval(),
        ))
    } else {
        None
    };
    let bind = bind.unwrap_or_else(|| cfg.server.bind.clone());
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(http::serve(svc, &bind))
        .with_context(|| format!("serving on {bind}"))?;
    if let Some(s) = scheduler {
        s.stop();
    }
    Ok(ExitCode::SUCCESS)
}

fn print_table(table: &ResultTable) {
    let rows: Vec<Vec<String>> = table
        .rows
        .iter()
        .map(|r| r.iter().map(ToString::to_string).collect())
        .collect();
    let mut widths: Vec<usize> = table
        .headers
        .iter()
        .map(|h| h.label.chars().count())
        .collect();
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: Vec<&str>| {
        let padded: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect();
        println!("{}", padded.join(" | ").trim_end());
    };
    line(table.headers.iter().map(|h| h.label.as_str()).collect());
    println!(
        "{}",
        widths
            .iter()
            .map(|w| "-".repeat(*w))
            .collect::<Vec<_>>()
            .join("-+-")
    );
    for row in &rows {
        line(row.iter().map(String::as_str).collect());
    }
    println!(
        "({} rows{})",
        table.row_count,
        if table.truncated { ", truncated" } else { "" }
    );
}

fn ask(
    cfg: &ServiceConfig,
    question: &str,
    lang: Option<Language>,
    show_sql: bool,
) -> Result<ExitCode> {
    let catalog = Arc::new(cfg.load_catalog()?);
    let store = Arc::new(cfg.open_store(&catalog)?);
    let svc = cfg.build_service(catalog.clone(), store)?;
    svc.register_session(SessionPermission::full(CLI_SESSION, &catalog.schema))?;
    let job: QueryJob = svc.run_blocking(CLI_SESSION, question, lang)?;
    if show_sql {
        if let Some(sql) = &job.generated_sql {
            println!("{sql}\n");
        }
    }
    if let Some(refusal) = &job.refusal {
        println!("{refusal}");
        return Ok(ExitCode::from(3));
    }
    if let Some(err) = &job.error {
        println!("{}: {}", err.category.as_str(), err.message);
        return Ok(ExitCode::FAILURE);
    }
    if let Some(table) = &job.result {
        print_table(table);
    }
    if job.translation_warning {
        eprintln!("warning: some values were left untranslated");
    }
    Ok(ExitCode::SUCCESS)
}

fn metrics(cfg: &ServiceConfig, window: &str, audit: Option<PathBuf>) -> Result<ExitCode> {
    let Some(path) = audit.or_else(|| cfg.audit.path.clone()) else {
        bail!("no audit file: pass --audit or set [audit] path");
    };
    let span = parse_window(window)
        .with_context(|| format!("bad window `{window}` (use 7d, 24h, 30m, 45s)"))?;
    let events = FileAuditSink::read(&path).with_context(|| path.display().to_string())?;
    let now = chrono::Utc::now();
    print!(
        "{}",
        compute_metrics(&events, Some((now - span, now)), None)
    );
    Ok(ExitCode::SUCCESS)
}
