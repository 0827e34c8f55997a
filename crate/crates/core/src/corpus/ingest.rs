//! Seed-benchmark ingestion: a questions JSON plus either a tables
//! manifest (Spider/BIRD layout) or a directory of per-database DDL dumps.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value as Json;

use super::{io_err, CorpusError};
use crate::perturb::{Gold, Instance};
use crate::schema::{ci, parse_ddl, render_ddl, Column, ForeignKey, Schema, Table};
use crate::sql::extract_refs;

/// A question whose gold could not be turned into an instance, with the
/// file coordinates and reason.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RejectRecord {
    pub index: usize,
    pub instance_id: String,
    pub db_id: String,
    pub reason: String,
}

/// Full-database schema, serialized as DDL for the perturbation stage.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatabaseDump {
    pub db_id: String,
    pub ddl: String,
}

#[derive(Debug)]
pub struct IngestOutcome {
    pub instances: Vec<Instance>,
    pub rejects: Vec<RejectRecord>,
    pub databases: Vec<DatabaseDump>,
}

/// Load questions plus a schema source and build instances whose relevant
/// schema is the gold-referenced tables closed over FK adjacency.
pub fn ingest_bird(
    questions_path: &Path,
    schema_source: &Path,
    closure_depth: usize,
) -> Result<IngestOutcome, CorpusError> {
    let databases = load_schemas(schema_source)?;
    let questions = load_questions(questions_path)?;

    let mut instances = Vec::new();
    let mut rejects = Vec::new();
    for (index, q) in questions.iter().enumerate() {
        let Some(full) = databases.get(&ci(&q.db_id)) else {
            rejects.push(RejectRecord {
                index,
                instance_id: q.instance_id.clone(),
                db_id: q.db_id.clone(),
                reason: format!("unknown database `{}`", q.db_id),
            });
            continue;
        };
        match build_instance(q, full, closure_depth) {
            Ok(instance) => instances.push(instance),
            Err(reason) => rejects.push(RejectRecord {
                index,
                instance_id: q.instance_id.clone(),
                db_id: q.db_id.clone(),
                reason,
            }),
        }
    }

    let dumps = databases
        .into_values()
        .map(|schema| DatabaseDump {
            db_id: schema.db_id.clone(),
            ddl: render_ddl(&schema),
        })
        .collect();

    Ok(IngestOutcome {
        instances,
        rejects,
        databases: dumps,
    })
}

struct Question {
    instance_id: String,
    db_id: String,
    question: String,
    sql: String,
}

/// Field mapping: `question_id`/`id` (defaulting to the index), `db_id`,
/// `question`, and `SQL`/`query`/`sql` for the gold.
fn load_questions(path: &Path) -> Result<Vec<Question>, CorpusError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let parsed: Json = serde_json::from_str(&text).map_err(|e| CorpusError::Format {
        path: path.display().to_string(),
        line: 0,
        reason: e.to_string(),
    })?;
    let items = parsed.as_array().ok_or_else(|| CorpusError::Format {
        path: path.display().to_string(),
        line: 0,
        reason: "questions file must be a JSON array".into(),
    })?;
    let mut out = Vec::new();
    for (i, item) in items.iter().enumerate() {
        let get = |keys: &[&str]| -> Option<String> {
            keys.iter().find_map(|k| {
                item.get(*k).and_then(|v| match v {
                    Json::String(s) => Some(s.clone()),
                    Json::Number(n) => Some(n.to_string()),
                    _ => None,
                })
            })
        };
        let db_id = get(&["db_id"]).ok_or_else(|| CorpusError::Format {
            path: path.display().to_string(),
            line: i + 1,
            reason: "missing db_id".into(),
        })?;
        let question = get(&["question", "Question"]).ok_or_else(|| CorpusError::Format {
            path: path.display().to_string(),
            line: i + 1,
            reason: "missing question".into(),
        })?;
        let sql = get(&["SQL", "query", "sql"]).ok_or_else(|| CorpusError::Format {
            path: path.display().to_string(),
            line: i + 1,
            reason: "missing SQL".into(),
        })?;
        let instance_id = get(&["question_id", "id"]).unwrap_or_else(|| i.to_string());
        out.push(Question {
            instance_id,
            db_id,
            question,
            sql,
        });
    }
    Ok(out)
}

fn load_schemas(source: &Path) -> Result<BTreeMap<String, Schema>, CorpusError> {
    if source.is_dir() {
        let mut out = BTreeMap::new();
        let mut entries: Vec<_> = std::fs::read_dir(source)
            .map_err(|e| io_err(source, e))?
            .collect::<Result<_, _>>()
            .map_err(|e| io_err(source, e))?;
        entries.sort_by_key(|e| e.file_name());
        for entry in entries {
            let path = entry.path();
            if path.extension().and_then(|s| s.to_str()) != Some("sql") {
                continue;
            }
            let db_id = path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or_default()
                .to_string();
            let text = std::fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
            let mut schema = parse_ddl(&text).map_err(|e| CorpusError::Format {
                path: path.display().to_string(),
                line: 0,
                reason: e.to_string(),
            })?;
            schema.db_id = db_id.clone();
            out.insert(ci(&db_id), schema);
        }
        return Ok(out);
    }
    load_tables_manifest(source)
}

#[derive(Deserialize)]
struct ManifestEntry {
    db_id: String,
    table_names_original: Vec<String>,
    column_names_original: Vec<(i64, String)>,
    column_types: Vec<String>,
    #[serde(default)]
    primary_keys: Vec<Json>,
    #[serde(default)]
    foreign_keys: Vec<(usize, usize)>,
}

fn map_type(t: &str) -> String {
    let l = t.to_lowercase();
    if l.starts_with("int") || l == "boolean" || l == "bool" {
        "INTEGER".into()
    } else if l.starts_with("real")
        || l.starts_with("float")
        || l.starts_with("double")
        || l.starts_with("num")
        || l == "number"
    {
        "REAL".into()
    } else if l.starts_with("date") || l.starts_with("time") {
        "DATE".into()
    } else {
        "TEXT".into()
    }
}

/// Spider/BIRD tables.json: per database, table and column name lists with
/// global column indices, primary keys (possibly composite) and FK index
/// pairs.
fn load_tables_manifest(path: &Path) -> Result<BTreeMap<String, Schema>, CorpusError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let entries: Vec<ManifestEntry> =
        serde_json::from_str(&text).map_err(|e| CorpusError::Format {
            path: path.display().to_string(),
            line: 0,
            reason: e.to_string(),
        })?;

    let mut out = BTreeMap::new();
    for entry in entries {
        let mut schema = Schema::new(entry.db_id.clone());
        for name in &entry.table_names_original {
            schema.tables.push(Table::new(name.clone()));
        }
        // Global column index -> (table index, name).
        let mut col_owner: Vec<Option<(usize, String)>> = Vec::new();
        for (i, (t_idx, name)) in entry.column_names_original.iter().enumerate() {
            if *t_idx < 0 {
                col_owner.push(None);
                continue;
            }
            let t_idx = *t_idx as usize;
            let ty = entry
                .column_types
                .get(i)
                .map(|t| map_type(t))
                .unwrap_or_else(|| "TEXT".into());
            if let Some(table) = schema.tables.get_mut(t_idx) {
                table.columns.push(Column::new(name.clone(), ty));
                col_owner.push(Some((t_idx, name.clone())));
            } else {
                col_owner.push(None);
            }
        }
        for pk in &entry.primary_keys {
            let idxs: Vec<usize> = match pk {
                Json::Number(n) => n.as_u64().map(|n| vec![n as usize]).unwrap_or_default(),
                Json::Array(items) => items
                    .iter()
                    .filter_map(|v| v.as_u64().map(|n| n as usize))
                    .collect(),
                _ => Vec::new(),
            };
            for idx in idxs {
                if let Some(Some((t_idx, name))) = col_owner.get(idx) {
                    let table = &mut schema.tables[*t_idx];
                    if !table.primary_key.iter().any(|p| ci(p) == ci(name)) {
                        table.primary_key.push(name.clone());
                    }
                }
            }
        }
        for (child_idx, parent_idx) in &entry.foreign_keys {
            let (Some(Some((ct, cc))), Some(Some((pt, pc)))) =
                (col_owner.get(*child_idx), col_owner.get(*parent_idx))
            else {
                continue;
            };
            schema.foreign_keys.push(ForeignKey {
                child_table: schema.tables[*ct].name.clone(),
                child_column: cc.clone(),
                parent_table: schema.tables[*pt].name.clone(),
                parent_column: pc.clone(),
            });
        }
        out.insert(ci(&entry.db_id), schema);
    }
    Ok(out)
}

fn build_instance(
    q: &Question,
    full: &Schema,
    closure_depth: usize,
) -> Result<Instance, String> {
    let refs = extract_refs(&q.sql, full).map_err(|e| e.to_string())?;

    let mut keep: std::collections::BTreeSet<String> = refs.tables.clone();
    for _ in 0..closure_depth {
        let mut frontier = Vec::new();
        for fk in &full.foreign_keys {
            let c = ci(&fk.child_table);
            let p = ci(&fk.parent_table);
            if keep.contains(&c) && !keep.contains(&p) {
                frontier.push(p);
            } else if keep.contains(&p) && !keep.contains(&c) {
                frontier.push(c);
            }
        }
        if frontier.is_empty() {
            break;
        }
        keep.extend(frontier);
    }

    let mut schema = Schema::new(full.db_id.clone());
    for table in &full.tables {
        if keep.contains(&ci(&table.name)) {
            schema.tables.push(table.clone());
        }
    }
    schema.foreign_keys = full
        .foreign_keys
        .iter()
        .filter(|fk| keep.contains(&ci(&fk.child_table)) && keep.contains(&ci(&fk.parent_table)))
        .cloned()
        .collect();

    Ok(Instance {
        instance_id: q.instance_id.clone(),
        db_id: q.db_id.clone(),
        nlq: q.question.clone(),
        schema,
        gold: Gold::Sql(q.sql.clone()),
    })
}
