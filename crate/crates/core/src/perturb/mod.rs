//! Perturbation operators over ⟨NLQ, relevant schema, gold SQL⟩ instances:
//! ten schema-evolution types plus the two out-of-scope refusal variants,
//! each enforcing referential-integrity and gold-consistency heuristics.

mod ops;
pub mod patterns;

pub use ops::{perturb, PerturbOptions};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schema::{ci, Column, ForeignKey, Schema, Table};
use crate::sql::{ColumnMerge, ColumnSplit, MergePlan, RenameMap, SplitPlan, SqlError};

/// Gold answer for the column-removal refusal case, byte-exact.
pub const COLUMN_SENTINEL: &str =
    "The given column information is insufficient to generate an SQL query to answer the question";
/// Gold answer for the table-removal refusal case, byte-exact.
pub const TABLE_SENTINEL: &str =
    "The given table information is insufficient to generate an SQL query to answer the question";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefusalKind {
    Column,
    Table,
}

/// Gold label: an SQL query or one of the two refusal sentences.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Gold {
    Sql(String),
    Refusal(RefusalKind),
}

impl Gold {
    pub fn as_text(&self) -> &str {
        match self {
            Gold::Sql(s) => s,
            Gold::Refusal(RefusalKind::Column) => COLUMN_SENTINEL,
            Gold::Refusal(RefusalKind::Table) => TABLE_SENTINEL,
        }
    }

    /// Classify stored gold text; the sentinels are matched byte-exactly.
    pub fn from_text(text: &str) -> Gold {
        match text {
            COLUMN_SENTINEL => Gold::Refusal(RefusalKind::Column),
            TABLE_SENTINEL => Gold::Refusal(RefusalKind::Table),
            other => Gold::Sql(other.to_string()),
        }
    }

    pub fn is_sql(&self) -> bool {
        matches!(self, Gold::Sql(_))
    }

    pub fn sql(&self) -> Option<&str> {
        match self {
            Gold::Sql(s) => Some(s),
            Gold::Refusal(_) => None,
        }
    }
}

/// One benchmark unit: a question, its relevant schema and the gold answer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instance {
    pub instance_id: String,
    pub db_id: String,
    pub nlq: String,
    pub schema: Schema,
    pub gold: Gold,
}

/// The eleven perturbation types.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PType {
    AddColumns,
    RemoveColumns,
    RemoveColumnsInSql,
    RenameColumns,
    SplitColumns,
    MergeColumns,
    AddTables,
    RemoveTables,
    RenameTables,
    SplitTables,
    MergeTables,
}

impl PType {
    pub const ALL: [PType; 11] = [
        PType::AddColumns,
        PType::RemoveColumns,
        PType::RemoveColumnsInSql,
        PType::RenameColumns,
        PType::SplitColumns,
        PType::MergeColumns,
        PType::AddTables,
        PType::RemoveTables,
        PType::RenameTables,
        PType::SplitTables,
        PType::MergeTables,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            PType::AddColumns => "add_columns",
            PType::RemoveColumns => "remove_columns",
            PType::RemoveColumnsInSql => "remove_columns_in_sql",
            PType::RenameColumns => "rename_columns",
            PType::SplitColumns => "split_columns",
            PType::MergeColumns => "merge_columns",
            PType::AddTables => "add_tables",
            PType::RemoveTables => "remove_tables",
            PType::RenameTables => "rename_tables",
            PType::SplitTables => "split_tables",
            PType::MergeTables => "merge_tables",
        }
    }

    /// Display name matching the benchmark's statistics table rows.
    pub fn display_name(&self) -> &'static str {
        match self {
            PType::AddColumns => "Add Columns",
            PType::RemoveColumns => "Remove Columns",
            PType::RemoveColumnsInSql => "Remove Col in SQL",
            PType::RenameColumns => "Rename Columns",
            PType::SplitColumns => "Split Columns",
            PType::MergeColumns => "Merge Columns",
            PType::AddTables => "Add Tables",
            PType::RemoveTables => "Remove Tables",
            PType::RenameTables => "Rename Tables",
            PType::SplitTables => "Split Tables",
            PType::MergeTables => "Merge Tables",
        }
    }

    /// Whether the perturbation turns gold into a refusal sentinel.
    pub fn is_out_of_scope(&self) -> bool {
        matches!(self, PType::RemoveColumnsInSql | PType::RemoveTables)
    }

    /// Whether the gold SQL must stay byte-identical.
    pub fn keeps_gold_fixed(&self) -> bool {
        matches!(
            self,
            PType::AddColumns | PType::RemoveColumns | PType::AddTables
        )
    }
}

impl std::str::FromStr for PType {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PType::ALL
            .iter()
            .find(|p| p.as_str() == s)
            .copied()
            .ok_or_else(|| format!("unknown perturbation type `{s}`"))
    }
}

impl std::fmt::Display for PType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AddedItem {
    Column {
        table: String,
        column: Column,
        /// Insertion index at apply time, applied in list order.
        position: usize,
    },
    Table {
        table: Table,
        foreign_keys: Vec<ForeignKey>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RemovedItem {
    Column { table: String, column: String },
    Table { name: String },
}

/// Machine-readable diff of one perturbation; drives SQL rewriting and
/// data migration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvolutionRecord {
    pub ptype: PType,
    #[serde(default, skip_serializing_if = "RenameMap::is_empty")]
    pub renames: RenameMap,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split_plan: Option<SplitPlan>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub merge_plan: Option<MergePlan>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub column_split: Option<ColumnSplit>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub column_merge: Option<ColumnMerge>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub added: Vec<AddedItem>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub removed: Vec<RemovedItem>,
    pub manipulated_count: u32,
}

impl EvolutionRecord {
    pub fn empty(ptype: PType) -> Self {
        EvolutionRecord {
            ptype,
            renames: RenameMap::default(),
            split_plan: None,
            merge_plan: None,
            column_split: None,
            column_merge: None,
            added: Vec::new(),
            removed: Vec::new(),
            manipulated_count: 0,
        }
    }

    /// Manipulated-item counts grouped by affected table, for column-level
    /// perturbations; table-level types report none.
    pub fn per_table_counts(&self) -> Option<Vec<u32>> {
        use std::collections::BTreeMap;
        let mut by_table: BTreeMap<String, u32> = BTreeMap::new();
        match self.ptype {
            PType::AddColumns => {
                for item in &self.added {
                    if let AddedItem::Column { table, .. } = item {
                        *by_table.entry(ci(table)).or_default() += 1;
                    }
                }
            }
            PType::RemoveColumns | PType::RemoveColumnsInSql => {
                for item in &self.removed {
                    if let RemovedItem::Column { table, .. } = item {
                        *by_table.entry(ci(table)).or_default() += 1;
                    }
                }
            }
            PType::RenameColumns => {
                for r in &self.renames.column_renames {
                    *by_table.entry(ci(&r.table)).or_default() += 1;
                }
            }
            PType::SplitColumns | PType::MergeColumns => {
                return Some(vec![self.manipulated_count]);
            }
            _ => return None,
        }
        Some(by_table.into_values().collect())
    }

    /// Derive the evolved schema by applying this record to the base.
    pub fn apply_to_schema(&self, base: &Schema) -> Result<Schema, PerturbError> {
        apply_record(self, base)
    }
}

/// A perturbed instance: the original, its evolved form and the diff.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PerturbedInstance {
    pub base: Instance,
    pub evolved: Instance,
    pub record: EvolutionRecord,
    pub needs_review: bool,
}

#[derive(Debug, Error)]
pub enum PerturbError {
    #[error("no eligible columns: {0}")]
    NoEligibleColumns(String),
    #[error("no eligible tables: {0}")]
    NoEligibleTables(String),
    #[error("synthesizer exhausted its retry budget: {0}")]
    SynthesisExhausted(String),
    #[error("unsupported query shape: {0}")]
    UnsupportedShape(String),
    #[error("gold is a refusal sentinel, not SQL")]
    GoldNotSql,
    #[error("schema invariant broken: {0}")]
    Integrity(String),
    #[error(transparent)]
    Sql(#[from] SqlError),
}

impl PerturbError {
    /// Stable machine-readable code for skip records.
    pub fn code(&self) -> &'static str {
        match self {
            PerturbError::NoEligibleColumns(_) => "NO_ELIGIBLE_COLUMNS",
            PerturbError::NoEligibleTables(_) => "NO_ELIGIBLE_TABLES",
            PerturbError::SynthesisExhausted(_) => "SYNTHESIS_EXHAUSTED",
            PerturbError::UnsupportedShape(_) => "UNSUPPORTED_SHAPE",
            PerturbError::GoldNotSql => "GOLD_NOT_SQL",
            PerturbError::Integrity(_) => "INTEGRITY",
            PerturbError::Sql(_) => "SQL_ERROR",
        }
    }
}

/// Rename tables and columns across a schema, updating primary keys and
/// both endpoints of every foreign key.
pub fn apply_renames_to_schema(schema: &mut Schema, map: &RenameMap) {
    for fk in &mut schema.foreign_keys {
        if let Some(new) = map.new_column(&fk.child_table, &fk.child_column) {
            fk.child_column = new.to_string();
        }
        if let Some(new) = map.new_column(&fk.parent_table, &fk.parent_column) {
            fk.parent_column = new.to_string();
        }
        if let Some(new) = map.new_table(&fk.child_table) {
            fk.child_table = new.to_string();
        }
        if let Some(new) = map.new_table(&fk.parent_table) {
            fk.parent_table = new.to_string();
        }
    }
    for table in &mut schema.tables {
        let original = table.name.clone();
        for col in &mut table.columns {
            if let Some(new) = map.new_column(&original, &col.name) {
                col.name = new.to_string();
            }
        }
        for pk in &mut table.primary_key {
            if let Some(new) = map.new_column(&original, pk) {
                *pk = new.to_string();
            }
        }
        if let Some(new) = map.new_table(&original) {
            table.name = new.to_string();
        }
    }
}

/// Apply an evolution record to a schema. Shared by the operators (which
/// construct records first) and data migration.
pub fn apply_record(record: &EvolutionRecord, base: &Schema) -> Result<Schema, PerturbError> {
    let mut schema = base.clone();
    match record.ptype {
        PType::AddColumns => {
            for item in &record.added {
                let AddedItem::Column {
                    table,
                    column,
                    position,
                } = item
                else {
                    continue;
                };
                let t = schema
                    .table_mut(table)
                    .ok_or_else(|| PerturbError::Integrity(format!("missing table `{table}`")))?;
                let at = (*position).min(t.columns.len());
                t.columns.insert(at, column.clone());
            }
        }
        PType::RemoveColumns | PType::RemoveColumnsInSql => {
            let targets: Vec<(String, String)> = record
                .removed
                .iter()
                .filter_map(|r| match r {
                    RemovedItem::Column { table, column } => {
                        Some((table.clone(), column.clone()))
                    }
                    RemovedItem::Table { .. } => None,
                })
                .collect();
            schema = schema.drop_columns_cascade(&targets);
        }
        PType::RenameColumns | PType::RenameTables => {
            apply_renames_to_schema(&mut schema, &record.renames);
        }
        PType::SplitColumns => {
            let split = record
                .column_split
                .as_ref()
                .ok_or_else(|| PerturbError::Integrity("missing column split".into()))?;
            let table = schema
                .table_mut(&split.table)
                .ok_or_else(|| PerturbError::Integrity("missing split table".into()))?;
            let idx = table
                .column_index(&split.column)
                .ok_or_else(|| PerturbError::Integrity("missing split column".into()))?;
            let nullable = table.columns[idx].nullable;
            table.columns.remove(idx);
            for (k, comp) in split.components.iter().enumerate() {
                let mut c = Column::new(comp.clone(), "TEXT");
                c.nullable = nullable;
                table.columns.insert(idx + k, c);
            }
        }
        PType::MergeColumns => {
            let merge = record
                .column_merge
                .as_ref()
                .ok_or_else(|| PerturbError::Integrity("missing column merge".into()))?;
            let table = schema
                .table_mut(&merge.table)
                .ok_or_else(|| PerturbError::Integrity("missing merge table".into()))?;
            let first = table
                .column_index(&merge.components[0])
                .ok_or_else(|| PerturbError::Integrity("missing merge component".into()))?;
            let nullable = merge
                .components
                .iter()
                .any(|c| table.column(c).map(|c| c.nullable).unwrap_or(true));
            let data_type = if merge.fixed_widths.is_some() { "DATE" } else { "TEXT" };
            for comp in &merge.components {
                if let Some(i) = table.column_index(comp) {
                    table.columns.remove(i);
                }
            }
            let mut merged = Column::new(merge.merged.clone(), data_type);
            merged.nullable = nullable;
            let at = first.min(table.columns.len());
            table.columns.insert(at, merged);
        }
        PType::AddTables => {
            for item in &record.added {
                let AddedItem::Table {
                    table,
                    foreign_keys,
                } = item
                else {
                    continue;
                };
                schema.tables.push(table.clone());
                schema.foreign_keys.extend(foreign_keys.iter().cloned());
            }
        }
        PType::RemoveTables => {
            let targets: Vec<String> = record
                .removed
                .iter()
                .filter_map(|r| match r {
                    RemovedItem::Table { name } => Some(name.clone()),
                    RemovedItem::Column { .. } => None,
                })
                .collect();
            schema = schema.drop_tables_cascade(&targets);
        }
        PType::SplitTables => {
            let plan = record
                .split_plan
                .as_ref()
                .ok_or_else(|| PerturbError::Integrity("missing split plan".into()))?;
            schema = apply_table_split(&schema, plan)?;
        }
        PType::MergeTables => {
            let plan = record
                .merge_plan
                .as_ref()
                .ok_or_else(|| PerturbError::Integrity("missing merge plan".into()))?;
            schema = apply_table_merge(&schema, plan)?;
        }
    }
    Ok(schema)
}

fn apply_table_split(base: &Schema, plan: &SplitPlan) -> Result<Schema, PerturbError> {
    let source = base
        .table(&plan.source_table)
        .ok_or_else(|| PerturbError::Integrity("missing split source".into()))?
        .clone();
    let source_idx = base.table_index(&plan.source_table).unwrap();

    let mut parts: Vec<Table> = Vec::new();
    for (name, cols) in &plan.parts {
        let mut t = Table::new(name.clone());
        for pk in &source.primary_key {
            let col = source
                .column(pk)
                .ok_or_else(|| PerturbError::Integrity("split source PK missing".into()))?;
            t.columns.push(col.clone());
        }
        for c in cols {
            let col = source
                .column(c)
                .ok_or_else(|| PerturbError::Integrity("split column missing".into()))?;
            t.columns.push(col.clone());
        }
        t.primary_key = source.primary_key.clone();
        parts.push(t);
    }

    let mut schema = base.clone();
    schema.tables.remove(source_idx);
    for (k, part) in parts.into_iter().enumerate() {
        schema.tables.insert(source_idx + k, part);
    }

    let source_key = ci(&plan.source_table);
    for fk in &mut schema.foreign_keys {
        if ci(&fk.parent_table) == source_key {
            let owner = plan
                .part_owning(&fk.parent_column)
                .unwrap_or(plan.anchor())
                .to_string();
            fk.parent_table = owner;
        }
        if ci(&fk.child_table) == source_key {
            let owner = plan
                .part_owning(&fk.child_column)
                .unwrap_or(plan.anchor())
                .to_string();
            fk.child_table = owner;
        }
    }
    Ok(schema)
}

fn apply_table_merge(base: &Schema, plan: &MergePlan) -> Result<Schema, PerturbError> {
    let layout = plan.merged_layout(base);
    let mut merged = Table::new(plan.merged_name.clone());
    for (src_table, src_col, merged_name) in &layout {
        let col = base
            .table(src_table)
            .and_then(|t| t.column(src_col))
            .ok_or_else(|| PerturbError::Integrity("merge column missing".into()))?;
        let mut c = col.clone();
        c.name = merged_name.clone();
        merged.columns.push(c);
    }
    let kept = base
        .table(&plan.kept_pk.0)
        .ok_or_else(|| PerturbError::Integrity("kept PK table missing".into()))?;
    merged.primary_key = kept
        .primary_key
        .iter()
        .map(|pk| plan.merged_column(&kept.name, pk))
        .collect();

    let first_idx = plan
        .source_tables
        .iter()
        .filter_map(|t| base.table_index(t))
        .min()
        .ok_or_else(|| PerturbError::Integrity("merge sources missing".into()))?;

    let mut schema = base.clone();
    let source_keys: Vec<String> = plan.source_tables.iter().map(|t| ci(t)).collect();
    schema.tables.retain(|t| !source_keys.contains(&ci(&t.name)));
    let at = first_idx.min(schema.tables.len());
    schema.tables.insert(at, merged);

    // Link FKs vanish with the merge; everything else retargets.
    schema.foreign_keys.retain(|fk| {
        !plan.join_links.iter().any(|l| {
            ci(&l.child_table) == ci(&fk.child_table)
                && ci(&l.child_column) == ci(&fk.child_column)
                && ci(&l.parent_table) == ci(&fk.parent_table)
                && ci(&l.parent_column) == ci(&fk.parent_column)
        })
    });
    for fk in &mut schema.foreign_keys {
        if source_keys.contains(&ci(&fk.child_table)) {
            fk.child_column = plan.merged_column(&fk.child_table, &fk.child_column);
            fk.child_table = plan.merged_name.clone();
        }
        if source_keys.contains(&ci(&fk.parent_table)) {
            fk.parent_column = plan.merged_column(&fk.parent_table, &fk.parent_column);
            fk.parent_table = plan.merged_name.clone();
        }
    }
    Ok(schema)
}
