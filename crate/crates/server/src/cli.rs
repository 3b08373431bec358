//! Command-line front end. Exit codes: 0 success, 1 domain error, 2 usage error.

use std::collections::HashMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chatbi_core::db::Cell;
use chatbi_core::dialogue::ReplyKind;
use chatbi_core::engine::{Engine, EngineConfig, MessageResponse, CONFIG_PATH_VAR};
use chatbi_core::eval::{load_dataset, run_eval, EvalOptions, Metric, Timing};
use chatbi_core::knowledge::{parse_jsonl, validate_entries, KnowledgeStore};
use chatbi_core::pipeline::{parse_demonstrations, parse_sql_log, parse_veto, run_pipeline, PipelineInputs};
use chatbi_core::tables::{SchemaSource, TableIndex};
use chatbi_core::{Error, Result};
use clap::{Parser, Subcommand, ValueEnum};

pub const EXIT_OK: i32 = 0;
pub const EXIT_DOMAIN: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "chatbi", version, about = "Conversational BI engine")]
pub struct Cli {
    /// Engine configuration file.
    #[arg(long, global = true, env = CONFIG_PATH_VAR, default_value = "chatbi.toml")]
    pub config: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Serve the HTTP API on the configured listen address.
    Serve {
        /// Overrides the configured listen address.
        #[arg(long)]
        listen: Option<String>,
    },
    /// Validate a knowledge file and a schema file and print their sizes.
    Ingest {
        #[arg(long)]
        knowledge: PathBuf,
        #[arg(long)]
        schema: PathBuf,
    },
    /// Ask one question in a fresh session and print the SQL and rows.
    Ask {
        question: String,
        /// Reply to a clarification; an option label or id, or free text. Repeatable.
        #[arg(long = "answer")]
        answers: Vec<String>,
        /// Run the insight agent on the answer.
        #[arg(long)]
        insight: bool,
    },
    /// Evaluate a dataset and write the report as JSON.
    Eval {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "ex")]
        metrics: Vec<MetricArg>,
        #[arg(long, default_value = "eval_report.json")]
        out: PathBuf,
        /// JSON object of recorded seconds per SQL text; timings are measured otherwise.
        #[arg(long)]
        timings: Option<PathBuf>,
    },
    /// Build a training set from a SQL log.
    Pipeline {
        #[arg(long)]
        sql_log: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// File of pair ids to drop, one per line.
        #[arg(long)]
        veto: Option<PathBuf>,
        /// Also generate questions from the schema.
        #[arg(long)]
        schema_questions: bool,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MetricArg {
    Ex,
    Ves,
    Uex,
}

impl From<MetricArg> for Metric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::Ex => Metric::Ex,
            MetricArg::Ves => Metric::Ves,
            MetricArg::Uex => Metric::Uex,
        }
    }
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(err, "{}", e.render());
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_DOMAIN
        }
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Validation(format!("cannot read {}: {e}", path.display())))
}

fn execute(cli: Cli, out: &mut dyn Write) -> Result<i32> {
    match cli.command {
        Command::Ingest { knowledge, schema } => ingest(&cli.config, &knowledge, &schema, out),
        Command::Serve { listen } => serve(&cli.config, listen),
        Command::Ask { question, answers, insight } => ask(&cli.config, &question, &answers, insight, out),
        Command::Eval { dataset, metrics, out: report, timings } => eval(
            &cli.config,
            &dataset,
            metrics.into_iter().map(Metric::from).collect(),
            &report,
            timings.as_deref(),
            out,
        ),
        Command::Pipeline { sql_log, out: dir, veto, schema_questions } => {
            pipeline(&cli.config, &sql_log, &dir, veto.as_deref(), schema_questions, out)
        }
    }
}

fn ingest(config: &Path, knowledge: &Path, schema: &Path, out: &mut dyn Write) -> Result<i32> {
    let cfg = EngineConfig::load(config)?;
    let gateway = Arc::new(cfg.gateway()?);
    let entries = parse_jsonl(&read(knowledge)?)?;
    validate_entries(&entries)?;
    let store = KnowledgeStore::new(gateway.clone());
    let n = store.ingest(entries)?;
    let schema = SchemaSource::parse(&read(schema)?)?;
    TableIndex::build(&schema, &gateway)?;
    writeln!(out, "knowledge entries: {n}")?;
    writeln!(out, "tables: {}", schema.tables.len())?;
    writeln!(out, "fields: {}", schema.tables.iter().map(|t| t.columns.len()).sum::<usize>())?;
    Ok(EXIT_OK)
}

fn serve(config: &Path, listen: Option<String>) -> Result<i32> {
    let cfg = EngineConfig::load(config)?;
    let addr = listen.unwrap_or_else(|| cfg.listen.clone());
    let engine = Arc::new(Engine::from_config(cfg)?);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&addr).await?;
        tracing::info!(%addr, "listening");
        axum::serve(listener, crate::router(engine))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
    })?;
    Ok(EXIT_OK)
}

fn cell_text(c: &Cell) -> String {
    match c {
        Cell::Null => "NULL".into(),
        Cell::Integer(i) => i.to_string(),
        Cell::Real(r) => r.to_string(),
        Cell::Text(t) => t.clone(),
    }
}

fn print_reply(r: &MessageResponse, out: &mut dyn Write) -> std::io::Result<()> {
    if let Some(sql) = &r.sql {
        writeln!(out, "{sql}")?;
    }
    if let (Some(cols), Some(rows)) = (&r.columns, &r.rows) {
        writeln!(out, "{}", cols.join("\t"))?;
        for row in rows {
            writeln!(out, "{}", row.iter().map(cell_text).collect::<Vec<_>>().join("\t"))?;
        }
        if r.truncated {
            writeln!(out, "(truncated)")?;
        }
    }
    if r.kind != ReplyKind::Answer {
        writeln!(out, "{}", r.message)?;
    }
    for o in r.options.iter().flatten() {
        writeln!(out, "  [{}] {} {}", o.option_id, o.label, o.description)?;
    }
    if let Some(i) = &r.insight {
        writeln!(out, "{}", serde_json::to_string_pretty(i)?)?;
    }
    Ok(())
}

fn ask(config: &Path, question: &str, answers: &[String], insight: bool, out: &mut dyn Write) -> Result<i32> {
    let engine = Engine::from_config(EngineConfig::load(config)?)?;
    let sid = engine.create_session()?;
    let mut reply = engine.handle_message(&sid, question, insight)?;
    let mut answers = answers.iter();
    while reply.kind == ReplyKind::Clarify {
        let Some(a) = answers.next() else { break };
        // a label is accepted in place of the option id
        let choice = reply
            .options
            .iter()
            .flatten()
            .find(|o| o.label == *a)
            .map_or(a.as_str(), |o| o.option_id.as_str())
            .to_string();
        reply = engine.handle_message(&sid, &choice, insight)?;
    }
    print_reply(&reply, out)?;
    Ok(if reply.kind == ReplyKind::Reject { EXIT_DOMAIN } else { EXIT_OK })
}

fn eval(
    config: &Path,
    dataset: &Path,
    metrics: Vec<Metric>,
    report_path: &Path,
    timings: Option<&Path>,
    out: &mut dyn Write,
) -> Result<i32> {
    let engine = Engine::from_config(EngineConfig::load(config)?)?;
    let items = load_dataset(dataset)?;
    let timing = match timings {
        Some(p) => Timing::Recorded(serde_json::from_str::<HashMap<String, f64>>(&read(p)?)?),
        None => Timing::default(),
    };
    let opts = EvalOptions { db_dir: engine.config().resolve(&engine.config().database_dir), metrics, timing };
    let report = run_eval(&items, &engine, &opts, engine.gateway())?;
    std::fs::write(report_path, serde_json::to_string_pretty(&report)?)?;
    write!(out, "{}", report.render())?;
    writeln!(out, "report: {}", report_path.display())?;
    Ok(EXIT_OK)
}

fn pipeline(
    config: &Path,
    sql_log: &Path,
    dir: &Path,
    veto: Option<&Path>,
    schema_questions: bool,
    out: &mut dyn Write,
) -> Result<i32> {
    let cfg = EngineConfig::load(config)?;
    cfg.validate()?;
    let gateway = cfg.gateway()?;
    let knowledge_dir = cfg.resolve(&cfg.knowledge_dir);
    let mut files: Vec<PathBuf> = std::fs::read_dir(&knowledge_dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    files.sort();
    let mut knowledge = Vec::new();
    for f in files {
        knowledge.extend(parse_jsonl(&read(&f)?)?.iter().map(|e| e.render()));
    }
    let inputs = PipelineInputs {
        sql_log: parse_sql_log(&read(sql_log)?)?,
        schema: SchemaSource::load(&cfg.resolve(&cfg.schema_file))?,
        knowledge,
        demonstrations: match &cfg.demonstrations_file {
            Some(p) => parse_demonstrations(&read(&cfg.resolve(p))?)?,
            None => Vec::new(),
        },
        veto: match veto {
            Some(p) => parse_veto(&read(p)?),
            None => Default::default(),
        },
        schema_questions,
    };
    let output = run_pipeline(&cfg.pipeline, &inputs, &gateway)?;
    output.write(dir)?;
    for (stage, n) in &output.report.stage_counts {
        writeln!(out, "{stage}: {n}")?;
    }
    writeln!(out, "skipped: {}", output.report.skipped.len())?;
    writeln!(out, "output: {}", dir.display())?;
    Ok(EXIT_OK)
}
