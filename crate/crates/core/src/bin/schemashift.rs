//! Command-line surface: ingest a seed benchmark, run perturbation
//! batches, compute statistics, mix training data, populate databases and
//! score predictions.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use schemashift::corpus::{
    compute_stats, emit_training_mix, ingest_bird, read_jsonl, render_stats_table, run_perturb,
    score_corpus, write_jsonl, CorpusRecord, DatabaseDump, ScoreOptions,
};
use schemashift::metrics::render_report_table;
use schemashift::perturb::{PType, PerturbOptions};
use schemashift::schema::{ci, parse_ddl, validate, Schema};
use schemashift::synth::{RemoteBackend, RemoteConfig, Synthesizer};
use schemashift::values::{dump_sql, populate, PopulateOptions};

#[derive(Parser)]
#[command(name = "schemashift", version, about = "Schema-evolution engine and text-to-SQL evaluation toolkit")]
struct Cli {
    /// Random seed for every stochastic stage.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Proposal backend. Remote credentials come from the environment
    /// (SCHEMASHIFT_API_KEY).
    #[arg(long, global = true, value_enum, default_value_t = Backend::Mock)]
    backend: Backend,

    /// Comma-separated perturbation types, or `all`.
    #[arg(long, global = true, default_value = "all")]
    types: String,

    /// Output path (meaning depends on the command).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Backend {
    Mock,
    Remote,
}

#[derive(Subcommand)]
enum Command {
    /// Build a corpus from a questions JSON plus a tables manifest or a
    /// directory of DDL dumps.
    Ingest {
        #[arg(long)]
        questions: PathBuf,
        #[arg(long)]
        schemas: PathBuf,
        /// FK-adjacency closure depth for the relevant schema.
        #[arg(long, default_value_t = 1)]
        closure_depth: usize,
        /// Where to write full-database DDL dumps (JSONL).
        #[arg(long)]
        dbs_out: Option<PathBuf>,
        /// Where to write reject records (JSONL).
        #[arg(long)]
        rejects_out: Option<PathBuf>,
    },
    /// Apply perturbation types to a corpus.
    Perturb {
        #[arg(long, value_name = "CORPUS")]
        input: PathBuf,
        /// Full-database dumps from `ingest` (enables add_tables).
        #[arg(long)]
        dbs: Option<PathBuf>,
        /// Where to write skip records (defaults to <out>.skips.jsonl).
        #[arg(long)]
        skips_out: Option<PathBuf>,
    },
    /// Per-type statistics over train/eval corpora.
    Stats {
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        eval: Option<PathBuf>,
        /// Skip the executable filter (Eval* column).
        #[arg(long)]
        no_exec_filter: bool,
        /// Where to write the JSON rows next to the text table.
        #[arg(long)]
        json_out: Option<PathBuf>,
    },
    /// Concatenate original and perturbed corpora and shuffle.
    EmitTrain {
        #[arg(long)]
        original: PathBuf,
        /// Perturbed corpora, repeatable.
        #[arg(long = "perturbed")]
        perturbed: Vec<PathBuf>,
    },
    /// Populate a schema with synthetic rows and write a SQL dump.
    Populate {
        #[arg(long)]
        ddl: PathBuf,
        #[arg(long, default_value_t = 16)]
        rows: usize,
    },
    /// Score a predictions file against a corpus.
    Score {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        predictions: PathBuf,
        /// Also compute execution accuracy on populated databases.
        #[arg(long)]
        exec: bool,
    },
    /// Re-validate a corpus file or a DDL file.
    Validate {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        ddl: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Io(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Config(msg)) => {
            eprintln!("invalid configuration: {msg}");
            ExitCode::from(2)
        }
    }
}

enum Failure {
    Io(String),
    Config(String),
}

impl From<schemashift::corpus::CorpusError> for Failure {
    fn from(e: schemashift::corpus::CorpusError) -> Self {
        Failure::Io(e.to_string())
    }
}

fn parse_types(spec: &str) -> Result<Vec<PType>, Failure> {
    if spec.trim() == "all" {
        return Ok(PType::ALL.to_vec());
    }
    spec.split(',')
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<PType>()
                .map_err(Failure::Config)
        })
        .collect()
}

fn build_synth(backend: Backend) -> Result<Synthesizer, Failure> {
    match backend {
        Backend::Mock => Ok(Synthesizer::mock(0)),
        Backend::Remote => {
            let config = RemoteConfig {
                base_url: std::env::var("SCHEMASHIFT_API_BASE")
                    .unwrap_or_else(|_| RemoteConfig::default().base_url),
                model: std::env::var("SCHEMASHIFT_MODEL")
                    .unwrap_or_else(|_| RemoteConfig::default().model),
                ..RemoteConfig::default()
            };
            let backend = RemoteBackend::new(config).map_err(|e| Failure::Config(e.to_string()))?;
            Ok(Synthesizer::new(Box::new(backend)))
        }
    }
}

fn required_out(out: &Option<PathBuf>) -> Result<&Path, Failure> {
    out.as_deref()
        .ok_or_else(|| Failure::Config("--out is required for this command".into()))
}

fn run(cli: Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Ingest {
            questions,
            schemas,
            closure_depth,
            dbs_out,
            rejects_out,
        } => {
            let out = required_out(&cli.out)?;
            let outcome = ingest_bird(questions, schemas, *closure_depth)?;
            let records: Vec<CorpusRecord> =
                outcome.instances.iter().map(CorpusRecord::original).collect();
            write_jsonl(out, &records)?;
            if let Some(path) = dbs_out {
                write_jsonl(path, &outcome.databases)?;
            }
            if let Some(path) = rejects_out {
                write_jsonl(path, &outcome.rejects)?;
            }
            eprintln!(
                "ingested {} instances ({} rejected, {} databases)",
                records.len(),
                outcome.rejects.len(),
                outcome.databases.len()
            );
            Ok(())
        }
        Command::Perturb {
            input,
            dbs,
            skips_out,
        } => {
            let out = required_out(&cli.out)?;
            let types = parse_types(&cli.types)?;
            let synth = build_synth(cli.backend)?;
            let corpus: Vec<CorpusRecord> = read_jsonl(input)?;
            let mut pools: BTreeMap<String, Schema> = BTreeMap::new();
            if let Some(path) = dbs {
                let dumps: Vec<DatabaseDump> = read_jsonl(path)?;
                for dump in dumps {
                    let mut schema = parse_ddl(&dump.ddl)
                        .map_err(|e| Failure::Io(format!("{}: {e}", dump.db_id)))?;
                    schema.db_id = dump.db_id.clone();
                    pools.insert(ci(&dump.db_id), schema);
                }
            }
            let run = run_perturb(
                &corpus,
                &types,
                &PerturbOptions::default(),
                &synth,
                &pools,
                cli.seed,
            );
            write_jsonl(out, &run.records)?;
            let skips_path = skips_out.clone().unwrap_or_else(|| {
                let mut p = out.as_os_str().to_owned();
                p.push(".skips.jsonl");
                PathBuf::from(p)
            });
            write_jsonl(&skips_path, &run.skips)?;
            eprintln!(
                "perturbed: {} records, {} skips ({} inputs x {} types)",
                run.records.len(),
                run.skips.len(),
                corpus.len(),
                types.len()
            );
            Ok(())
        }
        Command::Stats {
            train,
            eval,
            no_exec_filter,
            json_out,
        } => {
            if train.is_none() && eval.is_none() {
                return Err(Failure::Config("stats needs --train and/or --eval".into()));
            }
            let train_records: Vec<CorpusRecord> = match train {
                Some(p) => read_jsonl(p)?,
                None => Vec::new(),
            };
            let eval_records: Vec<CorpusRecord> = match eval {
                Some(p) => read_jsonl(p)?,
                None => Vec::new(),
            };
            let exec_seed = if *no_exec_filter { None } else { Some(cli.seed) };
            let rows = compute_stats(&train_records, &eval_records, exec_seed);
            let table = render_stats_table(&rows);
            match &cli.out {
                Some(path) => std::fs::write(path, &table)
                    .map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?,
                None => print!("{table}"),
            }
            if let Some(path) = json_out {
                write_jsonl(path, &rows)?;
            }
            Ok(())
        }
        Command::EmitTrain {
            original,
            perturbed,
        } => {
            let out = required_out(&cli.out)?;
            let original_records: Vec<CorpusRecord> = read_jsonl(original)?;
            let mut perturbed_sets = Vec::new();
            for path in perturbed {
                perturbed_sets.push(read_jsonl::<CorpusRecord>(path)?);
            }
            let mixed = emit_training_mix(&original_records, &perturbed_sets, cli.seed);
            write_jsonl(out, &mixed)?;
            eprintln!("training mix: {} records", mixed.len());
            Ok(())
        }
        Command::Populate { ddl, rows } => {
            let out = required_out(&cli.out)?;
            let text = std::fs::read_to_string(ddl)
                .map_err(|e| Failure::Io(format!("{}: {e}", ddl.display())))?;
            let schema =
                parse_ddl(&text).map_err(|e| Failure::Config(format!("bad DDL: {e}")))?;
            let db = populate(
                &schema,
                &PopulateOptions {
                    rows_per_table: *rows,
                    seed: cli.seed,
                },
            )
            .map_err(|e| Failure::Config(e.to_string()))?;
            std::fs::write(out, dump_sql(&db))
                .map_err(|e| Failure::Io(format!("{}: {e}", out.display())))?;
            Ok(())
        }
        Command::Score {
            corpus,
            predictions,
            exec,
        } => {
            let out = required_out(&cli.out)?;
            let records: Vec<CorpusRecord> = read_jsonl(corpus)?;
            let preds = load_predictions(predictions)?;
            let opts = ScoreOptions {
                with_execution: *exec,
                populate_seed: cli.seed,
                ..ScoreOptions::default()
            };
            let (reports, scores) = score_corpus(&records, &preds, &opts);
            write_jsonl(&out.with_extension("jsonl"), &reports)?;
            write_jsonl(&out.with_extension("scores.jsonl"), &scores)?;
            let table = render_report_table(&reports);
            std::fs::write(out.with_extension("txt"), &table)
                .map_err(|e| Failure::Io(format!("{}: {e}", out.display())))?;
            print!("{table}");
            Ok(())
        }
        Command::Validate { corpus, ddl } => {
            match (corpus, ddl) {
                (Some(path), _) => {
                    let records: Vec<CorpusRecord> = read_jsonl(path)?;
                    let mut bad = 0;
                    for record in &records {
                        if let Err(e) = record.check() {
                            eprintln!("{e}");
                            bad += 1;
                        }
                    }
                    if bad > 0 {
                        return Err(Failure::Io(format!("{bad} invalid records")));
                    }
                    eprintln!("{} records valid", records.len());
                    Ok(())
                }
                (None, Some(path)) => {
                    let text = std::fs::read_to_string(path)
                        .map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
                    let schema =
                        parse_ddl(&text).map_err(|e| Failure::Io(format!("invalid DDL: {e}")))?;
                    let violations = validate(&schema);
                    if violations.is_empty() {
                        eprintln!("schema valid ({} tables)", schema.tables.len());
                        Ok(())
                    } else {
                        for v in &violations {
                            eprintln!("{}: {} ({})", v.code, v.path, v.message);
                        }
                        Err(Failure::Io(format!("{} violations", violations.len())))
                    }
                }
                (None, None) => Err(Failure::Config("validate needs --corpus or --ddl".into())),
            }
        }
    }
}

/// Predictions: a JSON object mapping instance id (or `id#ptype`) to text,
/// or JSONL records with instance_id / ptype / prediction fields.
fn load_predictions(path: &Path) -> Result<BTreeMap<String, String>, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
    let trimmed = text.trim_start();
    let mut out = BTreeMap::new();
    if trimmed.starts_with('{') && serde_json::from_str::<serde_json::Value>(&text).is_ok() {
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| Failure::Io(e.to_string()))?;
        let object = value
            .as_object()
            .ok_or_else(|| Failure::Io("predictions JSON must be an object".into()))?;
        for (k, v) in object {
            if let Some(s) = v.as_str() {
                out.insert(k.clone(), s.to_string());
            }
        }
        return Ok(out);
    }
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(line)
            .map_err(|e| Failure::Io(format!("{}:{}: {e}", path.display(), i + 1)))?;
        let id = value
            .get("instance_id")
            .and_then(|v| v.as_str())
            .ok_or_else(|| Failure::Io(format!("{}:{}: missing instance_id", path.display(), i + 1)))?;
        let prediction = value
            .get("prediction")
            .and_then(|v| v.as_str())
            .unwrap_or_default();
        match value.get("ptype").and_then(|v| v.as_str()) {
            Some(ptype) => {
                out.insert(format!("{id}#{ptype}"), prediction.to_string());
            }
            None => {
                out.insert(id.to_string(), prediction.to_string());
            }
        }
    }
    Ok(out)
}
