//! Corpus statistics: per-type record counts and four-number summaries of
//! manipulated items, rendered in the benchmark's table layout.

use serde::{Deserialize, Serialize};

use super::{CorpusRecord, ORIGINAL_PTYPE};
use crate::perturb::PType;
use crate::schema::parse_ddl;
use crate::values::{execute, populate, PopulateOptions};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub min: f64,
    pub mean: f64,
    pub median: f64,
    pub max: f64,
}

impl Summary {
    fn of(values: &[u32]) -> Option<Summary> {
        if values.is_empty() {
            return None;
        }
        let mut sorted: Vec<u32> = values.to_vec();
        sorted.sort_unstable();
        let n = sorted.len();
        let median = if n % 2 == 1 {
            sorted[n / 2] as f64
        } else {
            (sorted[n / 2 - 1] as f64 + sorted[n / 2] as f64) / 2.0
        };
        Some(Summary {
            min: sorted[0] as f64,
            mean: sorted.iter().map(|v| *v as f64).sum::<f64>() / n as f64,
            median,
            max: sorted[n - 1] as f64,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StatsRow {
    pub ptype: String,
    pub train_count: usize,
    pub eval_count: usize,
    /// Eval records surviving the executable filter; absent for refusal
    /// types whose gold cannot execute by construction.
    pub eval_exec_count: Option<usize>,
    pub per_table: Option<Summary>,
    pub per_query: Option<Summary>,
}

/// Compute per-type statistics over a train and an eval corpus. When
/// `exec_seed` is set, eval records are counted as executable if their
/// gold runs on a freshly populated copy of their evolved schema.
pub fn compute_stats(
    train: &[CorpusRecord],
    eval: &[CorpusRecord],
    exec_seed: Option<u64>,
) -> Vec<StatsRow> {
    let mut order: Vec<String> = vec![ORIGINAL_PTYPE.to_string()];
    order.extend(PType::ALL.iter().map(|p| p.as_str().to_string()));

    let mut out = Vec::new();
    for ptype in order {
        let train_rows: Vec<&CorpusRecord> =
            train.iter().filter(|r| r.ptype == ptype).collect();
        let eval_rows: Vec<&CorpusRecord> = eval.iter().filter(|r| r.ptype == ptype).collect();
        if train_rows.is_empty() && eval_rows.is_empty() {
            continue;
        }

        let parsed: Option<PType> = ptype.parse().ok();
        let is_refusal = parsed.map(|p| p.is_out_of_scope()).unwrap_or(false);

        let eval_exec_count = if is_refusal {
            None
        } else {
            exec_seed.map(|seed| {
                eval_rows
                    .iter()
                    .filter(|r| gold_is_executable(r, seed))
                    .count()
            })
        };

        let mut per_table_values: Vec<u32> = Vec::new();
        let mut per_query_values: Vec<u32> = Vec::new();
        for record in train_rows.iter().chain(eval_rows.iter()) {
            if let Some(evolution) = &record.evolution {
                per_query_values.push(evolution.manipulated_count);
                if let Some(counts) = evolution.per_table_counts() {
                    per_table_values.extend(counts);
                }
            }
        }

        out.push(StatsRow {
            ptype: parsed
                .map(|p| p.display_name().to_string())
                .unwrap_or_else(|| "Original".to_string()),
            train_count: train_rows.len(),
            eval_count: eval_rows.len(),
            eval_exec_count,
            per_table: Summary::of(&per_table_values),
            per_query: Summary::of(&per_query_values),
        });
    }
    out
}

fn gold_is_executable(record: &CorpusRecord, seed: u64) -> bool {
    let Ok(mut schema) = parse_ddl(&record.schema_ddl) else {
        return false;
    };
    schema.db_id = record.db_id.clone();
    let Ok(db) = populate(&schema, &PopulateOptions { rows_per_table: 16, seed }) else {
        return false;
    };
    match record.gold() {
        crate::perturb::Gold::Sql(sql) => execute(&sql, &db).is_ok(),
        crate::perturb::Gold::Refusal(_) => false,
    }
}

fn fmt_count(v: f64) -> String {
    if v.fract() == 0.0 {
        format!("{}", v as i64)
    } else {
        format!("{v:.1}")
    }
}

fn fmt_summary(s: Option<Summary>) -> [String; 4] {
    match s {
        Some(s) => [
            fmt_count(s.min),
            fmt_count(s.mean),
            fmt_count(s.median),
            fmt_count(s.max),
        ],
        None => ["-".into(), "-".into(), "-".into(), "-".into()],
    }
}

/// Render the statistics table: counts, then the per-table and per-query
/// min/mean/median/max blocks, with column-level and table-level sections.
pub fn render_stats_table(rows: &[StatsRow]) -> String {
    let mut out = String::new();
    let header = format!(
        "{:<18} | {:>6} {:>6} {:>6} | {:>6} {:>6} {:>6} {:>6} | {:>6} {:>6} {:>6} {:>6}\n",
        "Perturbation Type",
        "Train",
        "Eval",
        "Eval*",
        "Min",
        "Mean",
        "Median",
        "Max",
        "Min",
        "Mean",
        "Median",
        "Max"
    );
    let rule = "-".repeat(header.len() - 1);
    out.push_str(&format!(
        "{:<18} | {:>6} {:>6} {:>6} | {:^27} | {:^27}\n",
        "", "", "", "", "Manipulated Items/Table", "Manipulated Items/Query"
    ));
    out.push_str(&header);
    out.push_str(&rule);
    out.push('\n');

    let column_level = [
        "Add Columns",
        "Remove Columns",
        "Remove Col in SQL",
        "Rename Columns",
        "Split Columns",
        "Merge Columns",
    ];
    let table_level = [
        "Add Tables",
        "Remove Tables",
        "Rename Tables",
        "Split Tables",
        "Merge Tables",
    ];

    let mut render_row = |row: &StatsRow, out: &mut String| {
        let table = fmt_summary(row.per_table);
        let query = fmt_summary(row.per_query);
        out.push_str(&format!(
            "{:<18} | {:>6} {:>6} {:>6} | {:>6} {:>6} {:>6} {:>6} | {:>6} {:>6} {:>6} {:>6}\n",
            row.ptype,
            row.train_count,
            row.eval_count,
            row.eval_exec_count
                .map(|c| c.to_string())
                .unwrap_or_else(|| "-".into()),
            table[0],
            table[1],
            table[2],
            table[3],
            query[0],
            query[1],
            query[2],
            query[3],
        ));
    };

    if let Some(row) = rows.iter().find(|r| r.ptype == "Original") {
        render_row(row, &mut out);
    }
    let section = |names: &[&str], title: &str, out: &mut String, rows: &[StatsRow]| -> bool {
        let present: Vec<&StatsRow> = names
            .iter()
            .filter_map(|n| rows.iter().find(|r| r.ptype == *n))
            .collect();
        !present.is_empty() && {
            out.push_str(&format!("[{title}]\n"));
            true
        }
    };
    if section(&column_level, "Column Manipulation", &mut out, rows) {
        for name in column_level {
            if let Some(row) = rows.iter().find(|r| r.ptype == name) {
                render_row(row, &mut out);
            }
        }
    }
    if section(&table_level, "Table Manipulation", &mut out, rows) {
        for name in table_level {
            if let Some(row) = rows.iter().find(|r| r.ptype == name) {
                render_row(row, &mut out);
            }
        }
    }
    out
}
