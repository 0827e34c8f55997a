//! Corpus records, JSONL persistence, benchmark ingestion, statistics and
//! the batch perturbation/scoring pipelines behind the CLI.

mod ingest;
mod pipeline;
mod stats;

pub use ingest::{ingest_bird, DatabaseDump, IngestOutcome, RejectRecord};
pub use pipeline::{emit_training_mix, run_perturb, score_corpus, PerturbRun, ScoreOptions};
pub use stats::{compute_stats, render_stats_table, StatsRow, Summary};

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::perturb::{EvolutionRecord, Gold, Instance};
use crate::schema::parse_ddl;
use crate::sql::extract_refs;

/// Perturbation type tag of unperturbed records.
pub const ORIGINAL_PTYPE: &str = "original";

/// One corpus line: the full evolved instance plus its provenance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub instance_id: String,
    pub db_id: String,
    pub nlq: String,
    pub schema_ddl: String,
    /// SQL text or one of the refusal sentinels, byte-exact.
    pub gold: String,
    pub ptype: String,
    /// Machine-readable diff; null for original records.
    pub evolution: Option<EvolutionRecord>,
    pub needs_review: bool,
}

impl CorpusRecord {
    pub fn original(instance: &Instance) -> CorpusRecord {
        CorpusRecord {
            instance_id: instance.instance_id.clone(),
            db_id: instance.db_id.clone(),
            nlq: instance.nlq.clone(),
            schema_ddl: crate::schema::render_ddl(&instance.schema),
            gold: instance.gold.as_text().to_string(),
            ptype: ORIGINAL_PTYPE.to_string(),
            evolution: None,
            needs_review: false,
        }
    }

    pub fn gold(&self) -> Gold {
        Gold::from_text(&self.gold)
    }

    pub fn to_instance(&self) -> Result<Instance, CorpusError> {
        let mut schema = parse_ddl(&self.schema_ddl).map_err(|e| CorpusError::BadRecord {
            instance_id: self.instance_id.clone(),
            reason: e.to_string(),
        })?;
        schema.db_id = self.db_id.clone();
        Ok(Instance {
            instance_id: self.instance_id.clone(),
            db_id: self.db_id.clone(),
            nlq: self.nlq.clone(),
            schema,
            gold: self.gold(),
        })
    }

    /// Re-check the record invariants: the DDL reparses and SQL gold parses
    /// against it.
    pub fn check(&self) -> Result<(), CorpusError> {
        let instance = self.to_instance()?;
        if self.ptype == ORIGINAL_PTYPE && self.evolution.is_some() {
            return Err(CorpusError::BadRecord {
                instance_id: self.instance_id.clone(),
                reason: "original records must carry an empty evolution".into(),
            });
        }
        if let Gold::Sql(sql) = &instance.gold {
            extract_refs(sql, &instance.schema).map_err(|e| CorpusError::BadRecord {
                instance_id: self.instance_id.clone(),
                reason: format!("gold does not resolve against schema: {e}"),
            })?;
        }
        Ok(())
    }
}

/// First-class skip: the instance/type combination that produced no
/// record, with a typed reason.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SkipRecord {
    pub instance_id: String,
    pub db_id: String,
    pub ptype: String,
    pub reason: String,
    pub detail: String,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("format error at {path}:{line}: {reason}")]
    Format {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("invalid record `{instance_id}`: {reason}")]
    BadRecord { instance_id: String, reason: String },
}

pub fn io_err(path: &Path, source: std::io::Error) -> CorpusError {
    CorpusError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Read a JSONL file of any deserializable record type.
pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, CorpusError> {
    let file = std::fs::File::open(path).map_err(|e| io_err(path, e))?;
    let reader = std::io::BufReader::new(file);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| CorpusError::Format {
            path: path.display().to_string(),
            line: i + 1,
            reason: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}

/// Write records as JSONL with a trailing newline per record.
pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), CorpusError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| io_err(path, e))?;
        }
    }
    let file = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| CorpusError::Format {
            path: path.display().to_string(),
            line: 0,
            reason: e.to_string(),
        })?;
        w.write_all(line.as_bytes()).map_err(|e| io_err(path, e))?;
        w.write_all(b"\n").map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))?;
    Ok(())
}
