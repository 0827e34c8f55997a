//! SQL query analysis and rewriting: alias-resolved reference extraction
//! and the identifier / join-path rewrites the perturbation operators need.
//!
//! Everything here is a pure function over parsed ASTs; callers hold the
//! schema the query is evaluated against.

mod ast_util;
mod column_ops;
mod extract;
mod resolve;
mod rewrite;
mod table_ops;

pub use column_ops::{rewrite_for_column_merge, rewrite_for_column_split, ColumnRewrite};
pub use extract::extract_refs;
pub use rewrite::rewrite_identifiers;
pub use table_ops::{rewrite_for_merge, rewrite_for_split, MergeRewrite, SplitRewrite};

use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use thiserror::Error;

use crate::schema::{ci, ForeignKey, Schema};

#[derive(Debug, Error)]
pub enum SqlError {
    #[error("SQL syntax error: {0}")]
    Syntax(String),
    #[error("unresolved identifier `{0}`")]
    Unresolved(String),
    /// The query uses a shape the rewriter does not handle (set operations,
    /// outer joins around the rewrite target).
    #[error("unsupported query shape: {0}")]
    UnsupportedShape(String),
    /// A rewrite exists but is not semantics-guaranteed; the instance must
    /// be flagged for review instead of trusted.
    #[error("rewrite needs review: {0}")]
    NeedsReview(String),
}

/// Alias-resolved references of one query: base tables and (table, column)
/// pairs, stored lowercase with quoting stripped.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SqlRefs {
    pub tables: BTreeSet<String>,
    pub columns: BTreeSet<(String, String)>,
}

impl SqlRefs {
    /// Map these refs through a rename map (image under the renaming).
    pub fn renamed(&self, map: &RenameMap) -> SqlRefs {
        let mut out = SqlRefs::default();
        for t in &self.tables {
            let new = map.new_table(t).map(ci).unwrap_or_else(|| t.clone());
            out.tables.insert(new);
        }
        for (t, c) in &self.columns {
            let nt = map.new_table(t).map(ci).unwrap_or_else(|| t.clone());
            let nc = map.new_column(t, c).map(ci).unwrap_or_else(|| c.clone());
            out.columns.insert((nt, nc));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableRename {
    pub old: String,
    pub new: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnRename {
    /// Table name before any table rename in the same map.
    pub table: String,
    pub old: String,
    pub new: String,
}

/// A batch of table and column renames applied as one step. Column renames
/// are keyed by the pre-rename table name.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RenameMap {
    pub table_renames: Vec<TableRename>,
    pub column_renames: Vec<ColumnRename>,
}

impl RenameMap {
    pub fn is_empty(&self) -> bool {
        self.table_renames.is_empty() && self.column_renames.is_empty()
    }

    pub fn rename_table(mut self, old: impl Into<String>, new: impl Into<String>) -> Self {
        self.table_renames.push(TableRename { old: old.into(), new: new.into() });
        self
    }

    pub fn rename_column(
        mut self,
        table: impl Into<String>,
        old: impl Into<String>,
        new: impl Into<String>,
    ) -> Self {
        self.column_renames.push(ColumnRename {
            table: table.into(),
            old: old.into(),
            new: new.into(),
        });
        self
    }

    pub fn new_table(&self, old: &str) -> Option<&str> {
        let key = ci(old);
        self.table_renames
            .iter()
            .find(|r| ci(&r.old) == key)
            .map(|r| r.new.as_str())
    }

    pub fn new_column(&self, table: &str, old: &str) -> Option<&str> {
        let (t, c) = (ci(table), ci(old));
        self.column_renames
            .iter()
            .find(|r| ci(&r.table) == t && ci(&r.old) == c)
            .map(|r| r.new.as_str())
    }

    /// Check injectivity per scope and that targets do not collide with
    /// untouched existing names in `schema`.
    pub fn check_against(&self, schema: &Schema) -> Result<(), String> {
        let mut table_targets = BTreeSet::new();
        for r in &self.table_renames {
            if !table_targets.insert(ci(&r.new)) {
                return Err(format!("two tables renamed to `{}`", r.new));
            }
        }
        for r in &self.table_renames {
            if schema.has_table(&r.new) && self.new_table(&r.new).is_none() {
                return Err(format!("table rename target `{}` already exists", r.new));
            }
        }
        let mut column_targets = BTreeSet::new();
        for r in &self.column_renames {
            if !column_targets.insert((ci(&r.table), ci(&r.new))) {
                return Err(format!(
                    "two columns of `{}` renamed to `{}`",
                    r.table, r.new
                ));
            }
        }
        for r in &self.column_renames {
            if let Some(t) = schema.table(&r.table) {
                if t.has_column(&r.new) && self.new_column(&r.table, &r.new).is_none() {
                    return Err(format!(
                        "column rename target `{}.{}` already exists",
                        r.table, r.new
                    ));
                }
            }
        }
        Ok(())
    }

    /// The map undoing this one. Column renames are re-keyed against the
    /// post-rename table names so the inverse applies to the renamed schema.
    pub fn inverse(&self) -> RenameMap {
        let mut out = RenameMap::default();
        for r in &self.table_renames {
            out.table_renames.push(TableRename { old: r.new.clone(), new: r.old.clone() });
        }
        for r in &self.column_renames {
            let table_after = self
                .new_table(&r.table)
                .unwrap_or(r.table.as_str())
                .to_string();
            out.column_renames.push(ColumnRename {
                table: table_after,
                old: r.new.clone(),
                new: r.old.clone(),
            });
        }
        out
    }
}

/// Plan for splitting one table into parts that each carry the source's
/// primary key. Parts partition the non-PK columns; the first part is the
/// anchor that PK-only references and PK-referencing foreign keys target.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub source_table: String,
    /// (new table name, non-PK columns it owns).
    pub parts: Vec<(String, Vec<String>)>,
    /// The source primary key, copied into every part.
    pub pk: Vec<String>,
}

impl SplitPlan {
    pub fn anchor(&self) -> &str {
        &self.parts[0].0
    }

    /// Part owning `column`; PK members resolve to the anchor.
    pub fn part_owning(&self, column: &str) -> Option<&str> {
        let key = ci(column);
        if self.pk.iter().any(|p| ci(p) == key) {
            return Some(self.anchor());
        }
        self.parts
            .iter()
            .find(|(_, cols)| cols.iter().any(|c| ci(c) == key))
            .map(|(name, _)| name.as_str())
    }

    pub fn check_against(&self, schema: &Schema) -> Result<(), String> {
        let source = schema
            .table(&self.source_table)
            .ok_or_else(|| format!("split source `{}` not found", self.source_table))?;
        if self.parts.len() < 2 {
            return Err("split plan needs at least two parts".into());
        }
        if ci_set(self.pk.iter()) != ci_set(source.primary_key.iter()) {
            return Err("split plan PK differs from source PK".into());
        }
        let mut part_names = BTreeSet::new();
        for (name, _) in &self.parts {
            if !part_names.insert(ci(name)) {
                return Err(format!("duplicate part name `{name}`"));
            }
            if schema.has_table(name) {
                return Err(format!("part name `{name}` collides with an existing table"));
            }
        }
        let mut assigned = BTreeSet::new();
        for (_, cols) in &self.parts {
            for c in cols {
                if !source.has_column(c) || source.is_pk_member(c) {
                    return Err(format!("part assigns `{c}` which is not a non-PK source column"));
                }
                if !assigned.insert(ci(c)) {
                    return Err(format!("column `{c}` assigned to two parts"));
                }
            }
        }
        let expected: BTreeSet<String> =
            source.non_pk_columns().iter().map(|c| ci(&c.name)).collect();
        if assigned != expected {
            return Err("parts do not partition the source's non-PK columns".into());
        }
        Ok(())
    }
}

/// Plan for merging FK-connected (or PK-identical) tables into one.
/// `column_renames` maps (source table, source column) to the merged
/// column name for every column whose name changes; join-link column pairs
/// collapse into the parent-side column.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergePlan {
    pub source_tables: Vec<String>,
    pub merged_name: String,
    /// (source table, its PK columns) designating which PK survives.
    pub kept_pk: (String, Vec<String>),
    pub column_renames: Vec<ColumnRename>,
    /// FK links among the sources used to align rows.
    pub join_links: Vec<ForeignKey>,
    /// True when the sources are aligned on identical primary keys rather
    /// than a real foreign key.
    #[serde(default)]
    pub pk_aligned: bool,
}

impl MergePlan {
    pub fn new_column(&self, table: &str, old: &str) -> Option<&str> {
        let (t, c) = (ci(table), ci(old));
        self.column_renames
            .iter()
            .find(|r| ci(&r.table) == t && ci(&r.old) == c)
            .map(|r| r.new.as_str())
    }

    pub fn is_source(&self, table: &str) -> bool {
        let key = ci(table);
        self.source_tables.iter().any(|t| ci(t) == key)
    }

    /// Merged column for a source column, falling back to the original name.
    pub fn merged_column(&self, table: &str, column: &str) -> String {
        self.new_column(table, column)
            .map(str::to_string)
            .unwrap_or_else(|| column.to_string())
    }

    pub fn check_against(&self, schema: &Schema) -> Result<(), String> {
        if self.source_tables.len() < 2 {
            return Err("merge plan needs at least two sources".into());
        }
        for t in &self.source_tables {
            if schema.table(t).is_none() {
                return Err(format!("merge source `{t}` not found"));
            }
        }
        if schema.has_table(&self.merged_name) && !self.is_source(&self.merged_name) {
            return Err(format!(
                "merged name `{}` collides with an existing table",
                self.merged_name
            ));
        }
        if !self.is_source(&self.kept_pk.0) {
            return Err("kept PK does not belong to a source".into());
        }
        // All sources pairwise connected through the links.
        let mut reached: BTreeSet<String> = BTreeSet::new();
        reached.insert(ci(&self.source_tables[0]));
        let mut changed = true;
        while changed {
            changed = false;
            for link in &self.join_links {
                let (c, p) = (ci(&link.child_table), ci(&link.parent_table));
                if reached.contains(&c) && reached.insert(p.clone()) {
                    changed = true;
                }
                if reached.contains(&p) && reached.insert(c) {
                    changed = true;
                }
            }
        }
        for t in &self.source_tables {
            if !reached.contains(&ci(t)) {
                return Err(format!("source `{t}` not connected through join links"));
            }
        }
        // Merged column names unique after renames.
        let mut seen = BTreeSet::new();
        for (table, column, merged) in self.merged_layout(schema) {
            if !seen.insert(ci(&merged)) {
                return Err(format!(
                    "merged column `{merged}` (from {table}.{column}) collides"
                ));
            }
        }
        Ok(())
    }

    /// The merged table's columns in order as (source table, source column,
    /// merged name) triples. Join-link column pairs appear once, at the
    /// child column's position, under the parent-side name (or its rename).
    pub fn merged_layout(&self, schema: &Schema) -> Vec<(String, String, String)> {
        let mut out: Vec<(String, String, String)> = Vec::new();
        let mut collapsed: BTreeSet<(String, String)> = BTreeSet::new();
        for (idx, source) in self.source_tables.iter().enumerate() {
            let Some(table) = schema.table(source) else { continue };
            for col in &table.columns {
                // A link child column takes the parent column's place.
                if let Some(link) = self.join_links.iter().find(|l| {
                    ci(&l.child_table) == ci(source) && ci(&l.child_column) == ci(&col.name)
                }) {
                    if self.is_source(&link.parent_table) {
                        let merged = self.merged_column(&link.parent_table, &link.parent_column);
                        collapsed.insert((ci(&link.parent_table), ci(&link.parent_column)));
                        out.push((source.clone(), col.name.clone(), merged));
                        continue;
                    }
                }
                if idx > 0 && collapsed.contains(&(ci(source), ci(&col.name))) {
                    continue;
                }
                out.push((
                    source.clone(),
                    col.name.clone(),
                    self.merged_column(source, &col.name),
                ));
            }
        }
        out
    }
}

/// Description of one column split into ordered components.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSplit {
    pub table: String,
    pub column: String,
    pub components: Vec<String>,
    pub delimiter: String,
    /// Fixed component widths for formats like dates, enabling substring
    /// extraction when the direction is reversed.
    pub fixed_widths: Option<Vec<usize>>,
}

/// Description of co-located columns merged into one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMerge {
    pub table: String,
    pub components: Vec<String>,
    pub merged: String,
    pub delimiter: String,
    pub fixed_widths: Option<Vec<usize>>,
}

impl ColumnMerge {
    /// 1-based substring range of `component` in the merged value, when the
    /// format is fixed-width.
    pub fn component_range(&self, component: &str) -> Option<(usize, usize)> {
        let widths = self.fixed_widths.as_ref()?;
        let key = ci(component);
        let mut start = 1usize;
        for (name, width) in self.components.iter().zip(widths) {
            if ci(name) == key {
                return Some((start, *width));
            }
            start += width + self.delimiter.len();
        }
        None
    }
}

fn ci_set<'a>(names: impl Iterator<Item = &'a String>) -> BTreeSet<String> {
    names.map(|n| ci(n)).collect()
}

pub(crate) fn parse_query(sql: &str) -> Result<sqlparser::ast::Query, SqlError> {
    use sqlparser::ast::Statement;
    use sqlparser::dialect::SQLiteDialect;
    let mut statements = sqlparser::parser::Parser::parse_sql(&SQLiteDialect {}, sql)
        .map_err(|e| SqlError::Syntax(e.to_string()))?;
    if statements.len() != 1 {
        return Err(SqlError::Syntax(format!(
            "expected one statement, found {}",
            statements.len()
        )));
    }
    match statements.remove(0) {
        Statement::Query(q) => Ok(*q),
        other => Err(SqlError::Syntax(format!("expected SELECT, found: {other}"))),
    }
}
