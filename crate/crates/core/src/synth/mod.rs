//! Pluggable proposal generator for open-ended choices: new column/table
//! names, renames, split and merge plans. Backends answer prompts with a
//! structured block; the engine validates every proposal before use.

mod mock;
mod remote;

pub use mock::MockBackend;
pub use remote::{RemoteBackend, RemoteConfig};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schema::ForeignKey;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthKind {
    NewColumns,
    NewTableName,
    ColumnRename,
    TableRename,
    SplitPlan,
    MergePlan,
}

impl SynthKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            SynthKind::NewColumns => "new_columns",
            SynthKind::NewTableName => "new_table_name",
            SynthKind::ColumnRename => "column_rename",
            SynthKind::TableRename => "table_rename",
            SynthKind::SplitPlan => "split_plan",
            SynthKind::MergePlan => "merge_plan",
        }
    }
}

/// One proposal request. `context` is rendered DDL of the tables in scope;
/// `subject` names the object(s) the request is about (table, column, or a
/// merge pair); `forbidden` names may not be proposed (case-insensitive).
#[derive(Debug, Clone)]
pub struct SynthRequest {
    pub kind: SynthKind,
    pub context: String,
    pub subject: Vec<String>,
    pub forbidden: Vec<String>,
    pub count: usize,
    /// For merge plans: the FK link aligning the pair.
    pub link: Option<ForeignKey>,
}

impl SynthRequest {
    pub fn new(kind: SynthKind, context: impl Into<String>) -> Self {
        SynthRequest {
            kind,
            context: context.into(),
            subject: Vec::new(),
            forbidden: Vec::new(),
            count: 1,
            link: None,
        }
    }

    fn dedup(&mut self) {
        let mut seen = std::collections::BTreeSet::new();
        self.forbidden.retain(|f| seen.insert(f.to_lowercase()));
    }
}

/// Kind-matched payload parsed from the backend's structured block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Proposals {
    /// (name, data type) pairs.
    NewColumns(Vec<(String, String)>),
    /// Proposed names, in order (renames, new table names).
    Names(Vec<String>),
    /// (part name, columns) assignments for a table split.
    SplitParts(Vec<(String, Vec<String>)>),
    /// Merged table name plus (table, old, new) clash renames.
    Merge {
        merged_name: String,
        renames: Vec<(String, String, String)>,
    },
}

#[derive(Debug, Clone)]
pub struct SynthResponse {
    pub proposals: Proposals,
    /// Verbatim backend output, kept for audit.
    pub raw: String,
}

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("malformed proposal: {detail}")]
    MalformedProposal { detail: String, raw: String },
    #[error("backend timed out after {0:?}")]
    Timeout(std::time::Duration),
}

/// A completion backend: prompt in, text out. Implementations must be safe
/// for concurrent calls.
pub trait SynthBackend: Send + Sync {
    fn complete(&self, prompt: &str) -> Result<String, SynthError>;
    fn name(&self) -> &str;
}

/// Template-driven proposal engine over an arbitrary backend.
pub struct Synthesizer {
    backend: Box<dyn SynthBackend>,
}

impl Synthesizer {
    pub fn new(backend: Box<dyn SynthBackend>) -> Self {
        Synthesizer { backend }
    }

    pub fn mock(seed: u64) -> Self {
        Synthesizer::new(Box::new(MockBackend::new(seed)))
    }

    pub fn backend_name(&self) -> &str {
        self.backend.name()
    }

    /// Render the request prompt, query the backend, and parse the fenced
    /// proposal block. A malformed answer is retried once with the parse
    /// failure appended to the prompt.
    pub fn propose(&self, request: &SynthRequest) -> Result<SynthResponse, SynthError> {
        let mut request = request.clone();
        request.dedup();
        let prompt = render_prompt(&request);
        let raw = self.backend.complete(&prompt)?;
        match parse_response(&request, &raw) {
            Ok(proposals) => Ok(SynthResponse { proposals, raw }),
            Err(detail) => {
                let retry_prompt = format!(
                    "{prompt}\n\nThe previous answer could not be used: {detail}\n\
                     Answer again, strictly inside the fenced block."
                );
                let raw = self.backend.complete(&retry_prompt)?;
                match parse_response(&request, &raw) {
                    Ok(proposals) => Ok(SynthResponse { proposals, raw }),
                    Err(detail) => Err(SynthError::MalformedProposal { detail, raw }),
                }
            }
        }
    }
}

const TEMPLATE_NEW_COLUMNS: &str = include_str!("templates/new_columns.txt");
const TEMPLATE_NEW_TABLE_NAME: &str = include_str!("templates/new_table_name.txt");
const TEMPLATE_COLUMN_RENAME: &str = include_str!("templates/column_rename.txt");
const TEMPLATE_TABLE_RENAME: &str = include_str!("templates/table_rename.txt");
const TEMPLATE_SPLIT_PLAN: &str = include_str!("templates/split_plan.txt");
const TEMPLATE_MERGE_PLAN: &str = include_str!("templates/merge_plan.txt");

/// Fill the per-kind template. Every prompt ends with a machine-readable
/// request section so deterministic backends can answer without natural
/// language understanding.
pub fn render_prompt(request: &SynthRequest) -> String {
    let template = match request.kind {
        SynthKind::NewColumns => TEMPLATE_NEW_COLUMNS,
        SynthKind::NewTableName => TEMPLATE_NEW_TABLE_NAME,
        SynthKind::ColumnRename => TEMPLATE_COLUMN_RENAME,
        SynthKind::TableRename => TEMPLATE_TABLE_RENAME,
        SynthKind::SplitPlan => TEMPLATE_SPLIT_PLAN,
        SynthKind::MergePlan => TEMPLATE_MERGE_PLAN,
    };
    let link = request
        .link
        .as_ref()
        .map(|l| {
            format!(
                "{}.{} -> {}.{}",
                l.child_table, l.child_column, l.parent_table, l.parent_column
            )
        })
        .unwrap_or_default();
    template
        .replace("{context}", &request.context)
        .replace("{subject}", &request.subject.join(", "))
        .replace("{count}", &request.count.to_string())
        .replace("{forbidden}", &request.forbidden.join(", "))
        .replace("{kind}", request.kind.as_str())
        .replace("{link}", &link)
}

/// Pull the fenced proposal block out of a backend answer and parse its
/// line-oriented payload for the request kind.
pub fn parse_response(request: &SynthRequest, raw: &str) -> Result<Proposals, String> {
    let block = extract_block(raw).ok_or_else(|| "no ```proposal block found".to_string())?;
    let lines: Vec<&str> = block
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .collect();

    match request.kind {
        SynthKind::NewColumns => {
            let mut out = Vec::new();
            for line in lines {
                let rest = line
                    .strip_prefix("column:")
                    .ok_or_else(|| format!("expected `column:` line, got `{line}`"))?;
                let (name, ty) = rest
                    .split_once('|')
                    .ok_or_else(|| format!("expected `name | type` in `{line}`"))?;
                let (name, ty) = (name.trim(), ty.trim());
                if name.is_empty() || ty.is_empty() {
                    return Err(format!("empty name or type in `{line}`"));
                }
                out.push((name.to_string(), ty.to_string()));
            }
            if out.is_empty() {
                return Err("no columns proposed".into());
            }
            Ok(Proposals::NewColumns(out))
        }
        SynthKind::ColumnRename | SynthKind::TableRename | SynthKind::NewTableName => {
            let prefix = match request.kind {
                SynthKind::ColumnRename => "column:",
                _ => "table:",
            };
            let mut out = Vec::new();
            for line in lines {
                let name = line
                    .strip_prefix(prefix)
                    .ok_or_else(|| format!("expected `{prefix}` line, got `{line}`"))?
                    .trim();
                if name.is_empty() {
                    return Err("empty name proposed".into());
                }
                out.push(name.to_string());
            }
            if out.is_empty() {
                return Err("no names proposed".into());
            }
            Ok(Proposals::Names(out))
        }
        SynthKind::SplitPlan => {
            let mut out = Vec::new();
            for line in lines {
                let rest = line
                    .strip_prefix("part:")
                    .ok_or_else(|| format!("expected `part:` line, got `{line}`"))?;
                let (name, cols) = rest
                    .split_once('=')
                    .ok_or_else(|| format!("expected `part: name = cols` in `{line}`"))?;
                let name = name.trim().to_string();
                let cols: Vec<String> = cols
                    .split(',')
                    .map(|c| c.trim().to_string())
                    .filter(|c| !c.is_empty())
                    .collect();
                if name.is_empty() {
                    return Err("empty part name".into());
                }
                out.push((name, cols));
            }
            if out.len() < 2 {
                return Err("a split needs at least two parts".into());
            }
            Ok(Proposals::SplitParts(out))
        }
        SynthKind::MergePlan => {
            let mut merged_name = None;
            let mut renames = Vec::new();
            for line in lines {
                if let Some(name) = line.strip_prefix("merged:") {
                    merged_name = Some(name.trim().to_string());
                } else if let Some(rest) = line.strip_prefix("rename:") {
                    let (old, new) = rest
                        .split_once("->")
                        .ok_or_else(|| format!("expected `rename: t.c -> new` in `{line}`"))?;
                    let (table, column) = old
                        .trim()
                        .split_once('.')
                        .ok_or_else(|| format!("expected `table.column` in `{line}`"))?;
                    renames.push((
                        table.trim().to_string(),
                        column.trim().to_string(),
                        new.trim().to_string(),
                    ));
                } else {
                    return Err(format!("unexpected line `{line}`"));
                }
            }
            let merged_name = merged_name.ok_or_else(|| "missing `merged:` line".to_string())?;
            if merged_name.is_empty() {
                return Err("empty merged name".into());
            }
            Ok(Proposals::Merge {
                merged_name,
                renames,
            })
        }
    }
}

fn extract_block(raw: &str) -> Option<String> {
    let start = raw.find("```proposal")?;
    let rest = &raw[start + "```proposal".len()..];
    let end = rest.find("```")?;
    Some(rest[..end].trim().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prose_answer_is_malformed() {
        let req = SynthRequest::new(SynthKind::NewColumns, "CREATE TABLE t(a INT);");
        let err = parse_response(&req, "Sure! How about adding a `status` column?")
            .unwrap_err();
        assert!(err.contains("no ```proposal block"));
    }

    #[test]
    fn new_columns_payload_parses() {
        let req = SynthRequest::new(SynthKind::NewColumns, "");
        let raw = "```proposal\ncolumn: status | TEXT\ncolumn: priority | INTEGER\n```";
        let got = parse_response(&req, raw).unwrap();
        assert_eq!(
            got,
            Proposals::NewColumns(vec![
                ("status".into(), "TEXT".into()),
                ("priority".into(), "INTEGER".into())
            ])
        );
    }

    #[test]
    fn merge_payload_parses() {
        let req = SynthRequest::new(SynthKind::MergePlan, "");
        let raw = "```proposal\nmerged: patient_record\nrename: patient.name -> patient_name\n```";
        match parse_response(&req, raw).unwrap() {
            Proposals::Merge {
                merged_name,
                renames,
            } => {
                assert_eq!(merged_name, "patient_record");
                assert_eq!(
                    renames,
                    vec![("patient".into(), "name".into(), "patient_name".into())]
                );
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_then_valid_is_rescued_by_retry() {
        struct Flaky(std::sync::atomic::AtomicU32);
        impl SynthBackend for Flaky {
            fn complete(&self, _prompt: &str) -> Result<String, SynthError> {
                let n = self.0.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                if n == 0 {
                    Ok("here is prose".into())
                } else {
                    Ok("```proposal\ntable: person\n```".into())
                }
            }
            fn name(&self) -> &str {
                "flaky"
            }
        }
        let synth = Synthesizer::new(Box::new(Flaky(Default::default())));
        let req = SynthRequest::new(SynthKind::TableRename, "");
        let got = synth.propose(&req).unwrap();
        assert_eq!(got.proposals, Proposals::Names(vec!["person".into()]));
    }
}
