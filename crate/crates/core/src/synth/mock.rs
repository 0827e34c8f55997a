//! Deterministic offline backend. It reads the machine-readable request
//! section every prompt template ends with and answers from fixed pools
//! and a synonym lexicon, so whole pipelines replay byte-identically.

use std::collections::BTreeSet;

use super::{SynthBackend, SynthError};
use crate::schema::parse_ddl;

pub struct MockBackend {
    seed: u64,
}

impl MockBackend {
    pub fn new(seed: u64) -> Self {
        MockBackend { seed }
    }

    fn hash(&self, parts: &[&str]) -> u64 {
        // FNV-1a over the seed and labels; stable across platforms.
        let mut h: u64 = 0xcbf29ce484222325 ^ self.seed;
        for part in parts {
            for b in part.as_bytes() {
                h ^= u64::from(*b);
                h = h.wrapping_mul(0x100000001b3);
            }
            h ^= 0xff;
            h = h.wrapping_mul(0x100000001b3);
        }
        h
    }
}

/// Themed pool of plausible additions, cycled per table.
const COLUMN_POOL: &[(&str, &str)] = &[
    ("created_at", "DATE"),
    ("updated_at", "DATE"),
    ("status", "TEXT"),
    ("notes", "TEXT"),
    ("priority", "INTEGER"),
    ("category", "TEXT"),
    ("is_active", "INTEGER"),
    ("external_ref", "TEXT"),
    ("source_system", "TEXT"),
    ("review_count", "INTEGER"),
    ("last_checked", "DATE"),
    ("severity_level", "INTEGER"),
    ("comments", "TEXT"),
    ("batch_number", "INTEGER"),
    ("verified_flag", "INTEGER"),
    ("audit_tag", "TEXT"),
];

/// Synonyms keyed by the final underscore-separated token of a name.
const LEXICON: &[(&str, &[&str])] = &[
    ("id", &["identifier", "key", "ref"]),
    ("name", &["label", "title", "designation"]),
    ("date", &["day", "timestamp", "when"]),
    ("city", &["town", "municipality", "locality"]),
    ("code", &["symbol", "tag", "marker"]),
    ("severity", &["intensity", "grade", "level"]),
    ("status", &["state", "condition", "phase"]),
    ("amount", &["total", "sum", "value"]),
    ("quantity", &["count", "units", "volume"]),
    ("price", &["cost", "rate", "charge"]),
    ("patient", &["person", "individual", "client"]),
    ("diagnosis", &["finding", "assessment", "condition_record"]),
    ("customer", &["client", "buyer", "account_holder"]),
    ("order", &["purchase", "request", "transaction"]),
    ("product", &["item", "good", "article"]),
    ("employee", &["staff_member", "worker", "personnel"]),
    ("invoice", &["bill", "statement", "receipt"]),
    ("score", &["rating", "points", "mark"]),
    ("notes", &["remarks", "comments", "annotations"]),
    ("address", &["location", "residence", "whereabouts"]),
];

#[derive(Default)]
struct Request {
    kind: String,
    subject: Vec<String>,
    count: usize,
    forbidden: BTreeSet<String>,
    context: String,
}

fn parse_request(prompt: &str) -> Request {
    let mut req = Request {
        count: 1,
        ..Default::default()
    };
    if let Some(start) = prompt.find("Schema:\n") {
        if let Some(end) = prompt[start..].find("\nRequest:") {
            req.context = prompt[start + "Schema:\n".len()..start + end].to_string();
        }
    }
    let section = match prompt.rfind("Request:") {
        Some(at) => &prompt[at..],
        None => return req,
    };
    for line in section.lines().skip(1) {
        let Some((key, value)) = line.split_once(':') else {
            break;
        };
        let value = value.trim();
        match key.trim() {
            "kind" => req.kind = value.to_string(),
            "table" | "column" | "tables" => {
                req.subject = value
                    .split(',')
                    .map(|s| s.trim().to_string())
                    .filter(|s| !s.is_empty())
                    .collect();
            }
            "link" => {}
            "count" => req.count = value.parse().unwrap_or(1),
            "forbidden" => {
                req.forbidden = value
                    .split(',')
                    .map(|s| s.trim().to_lowercase())
                    .filter(|s| !s.is_empty())
                    .collect();
            }
            _ => break,
        }
    }
    req
}

/// Synonym candidates for a name: lexicon entries for its final token with
/// the original prefix kept, then `_alt` fallbacks.
fn rename_candidates(name: &str) -> Vec<String> {
    let mut out = Vec::new();
    let lower = name.to_lowercase();
    let (prefix, last) = match lower.rsplit_once('_') {
        Some((p, l)) => (format!("{p}_"), l.to_string()),
        None => (String::new(), lower.clone()),
    };
    if let Some((_, synonyms)) = LEXICON.iter().find(|(k, _)| *k == last) {
        for s in *synonyms {
            out.push(format!("{prefix}{s}"));
        }
    }
    for k in 0..8 {
        if k == 0 {
            out.push(format!("{name}_alt"));
        } else {
            out.push(format!("{name}_alt{}", k + 1));
        }
    }
    out
}

impl SynthBackend for MockBackend {
    fn name(&self) -> &str {
        "mock"
    }

    fn complete(&self, prompt: &str) -> Result<String, SynthError> {
        let req = parse_request(prompt);
        let mut lines: Vec<String> = Vec::new();

        match req.kind.as_str() {
            "new_columns" => {
                let table = req.subject.first().cloned().unwrap_or_default();
                let start = (self.hash(&["cols", &table]) as usize) % COLUMN_POOL.len();
                let mut picked = 0;
                let mut offset = 0;
                while picked < req.count && offset < COLUMN_POOL.len() * 2 {
                    let (name, ty) = COLUMN_POOL[(start + offset) % COLUMN_POOL.len()];
                    offset += 1;
                    let candidate = if offset <= COLUMN_POOL.len() {
                        name.to_string()
                    } else {
                        format!("{name}_{}", offset - COLUMN_POOL.len())
                    };
                    if req.forbidden.contains(&candidate.to_lowercase()) {
                        continue;
                    }
                    lines.push(format!("column: {candidate} | {ty}"));
                    picked += 1;
                }
            }
            "column_rename" | "table_rename" | "new_table_name" => {
                let subject = req.subject.last().cloned().unwrap_or_default();
                let label = if req.kind == "column_rename" { "column" } else { "table" };
                let candidate = rename_candidates(&subject)
                    .into_iter()
                    .find(|c| !req.forbidden.contains(&c.to_lowercase()))
                    .unwrap_or_else(|| format!("{subject}_renamed"));
                lines.push(format!("{label}: {candidate}"));
            }
            "split_plan" => {
                let source = req.subject.first().cloned().unwrap_or_default();
                let schema = parse_ddl(&req.context).unwrap_or_default();
                let non_pk: Vec<String> = schema
                    .table(&source)
                    .map(|t| t.non_pk_columns().iter().map(|c| c.name.clone()).collect())
                    .unwrap_or_default();
                // Two halves by original order.
                let mid = non_pk.len().div_ceil(2);
                let suffixes = ["info", "details"];
                for (i, chunk) in [&non_pk[..mid.min(non_pk.len())], &non_pk[mid.min(non_pk.len())..]]
                    .iter()
                    .enumerate()
                {
                    let mut name = format!("{source}_{}", suffixes[i]);
                    let mut k = 2;
                    while req.forbidden.contains(&name.to_lowercase()) {
                        name = format!("{source}_{}_alt{k}", suffixes[i]);
                        k += 1;
                    }
                    lines.push(format!("part: {name} = {}", chunk.join(", ")));
                }
            }
            "merge_plan" => {
                let (a, b) = (
                    req.subject.first().cloned().unwrap_or_default(),
                    req.subject.get(1).cloned().unwrap_or_default(),
                );
                let mut merged = format!("{a}_{b}");
                let mut k = 2;
                while req.forbidden.contains(&merged.to_lowercase()) {
                    merged = format!("{a}_{b}_{k}");
                    k += 1;
                }
                lines.push(format!("merged: {merged}"));
                // Same-named non-key columns of the second source get a
                // table-prefixed name.
                if let Ok(schema) = parse_ddl(&req.context) {
                    if let (Some(ta), Some(tb)) = (schema.table(&a), schema.table(&b)) {
                        for col in &tb.columns {
                            let clash = ta.has_column(&col.name);
                            let is_link = schema.foreign_keys.iter().any(|fk| {
                                fk.touches_column(&b, &col.name) && fk.touches_table(&a)
                            });
                            if clash && !is_link {
                                lines.push(format!(
                                    "rename: {b}.{} -> {}_{}",
                                    col.name, b, col.name
                                ));
                            }
                        }
                    }
                }
            }
            other => {
                return Err(SynthError::BackendUnavailable(format!(
                    "mock cannot answer kind `{other}`"
                )))
            }
        }

        Ok(format!("```proposal\n{}\n```", lines.join("\n")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{Proposals, SynthKind, SynthRequest, Synthesizer};

    #[test]
    fn same_seed_same_request_identical() {
        let a = MockBackend::new(7);
        let b = MockBackend::new(7);
        let prompt = "Schema:\nCREATE TABLE t(x INT);\nRequest:\nkind: new_columns\ntable: t\ncount: 2\nforbidden: x";
        assert_eq!(a.complete(prompt).unwrap(), b.complete(prompt).unwrap());
    }

    #[test]
    fn forbidden_names_never_proposed() {
        let synth = Synthesizer::mock(3);
        let mut req = SynthRequest::new(SynthKind::ColumnRename, "");
        req.subject = vec!["patient".into(), "patient_id".into()];
        req.forbidden = vec!["patient_identifier".into()];
        let got = synth.propose(&req).unwrap();
        match got.proposals {
            Proposals::Names(names) => {
                assert_eq!(names.len(), 1);
                assert_ne!(names[0].to_lowercase(), "patient_identifier");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn split_halves_non_pk_columns_in_order() {
        let synth = Synthesizer::mock(1);
        let ddl = "CREATE TABLE w (id INTEGER PRIMARY KEY, a TEXT, b TEXT, c TEXT, d TEXT, e TEXT);";
        let mut req = SynthRequest::new(SynthKind::SplitPlan, ddl);
        req.subject = vec!["w".into()];
        let got = synth.propose(&req).unwrap();
        match got.proposals {
            Proposals::SplitParts(parts) => {
                assert_eq!(parts.len(), 2);
                assert_eq!(parts[0].1, vec!["a", "b", "c"]);
                assert_eq!(parts[1].1, vec!["d", "e"]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn lexicon_rename_keeps_prefix() {
        let c = rename_candidates("patient_id");
        assert_eq!(c[0], "patient_identifier");
    }

    #[test]
    fn exhausted_lexicon_falls_back_to_alt_suffix() {
        let c = rename_candidates("zzz");
        assert_eq!(c[0], "zzz_alt");
    }
}
