//! Typed relational schema model: tables, columns, primary keys and the
//! foreign-key graph, with DDL parsing/rendering and integrity validation.
//!
//! Every transformation in this crate consumes and produces [`Schema`]
//! values; nothing mutates a schema in place.

mod parse;
mod render;

pub use parse::parse_ddl;
pub use render::{needs_quoting, quote_ident, render_ddl};

use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use thiserror::Error;

/// Case-insensitive identifier key. Original casing is preserved on the
/// owning value; comparisons and lookups go through this.
pub fn ci(name: &str) -> String {
    name.to_lowercase()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub data_type: String,
    pub nullable: bool,
}

impl Column {
    pub fn new(name: impl Into<String>, data_type: impl Into<String>) -> Self {
        Column {
            name: name.into(),
            data_type: data_type.into(),
            nullable: true,
        }
    }

    pub fn not_null(mut self) -> Self {
        self.nullable = false;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    /// Column order is significant: perturbations insert at positions.
    pub columns: Vec<Column>,
    /// Possibly empty, possibly composite. Entries name columns of this table.
    pub primary_key: Vec<String>,
}

impl Table {
    pub fn new(name: impl Into<String>) -> Self {
        Table {
            name: name.into(),
            columns: Vec::new(),
            primary_key: Vec::new(),
        }
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        let key = ci(name);
        self.columns.iter().find(|c| ci(&c.name) == key)
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        let key = ci(name);
        self.columns.iter().position(|c| ci(&c.name) == key)
    }

    pub fn has_column(&self, name: &str) -> bool {
        self.column(name).is_some()
    }

    pub fn is_pk_member(&self, name: &str) -> bool {
        let key = ci(name);
        self.primary_key.iter().any(|p| ci(p) == key)
    }

    /// Columns that are not part of the primary key, in declaration order.
    pub fn non_pk_columns(&self) -> Vec<&Column> {
        self.columns
            .iter()
            .filter(|c| !self.is_pk_member(&c.name))
            .collect()
    }
}

/// A single-column foreign-key edge: `child_table.child_column`
/// references `parent_table.parent_column`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ForeignKey {
    pub child_table: String,
    pub child_column: String,
    pub parent_table: String,
    pub parent_column: String,
}

impl ForeignKey {
    pub fn touches_column(&self, table: &str, column: &str) -> bool {
        let (t, c) = (ci(table), ci(column));
        (ci(&self.child_table) == t && ci(&self.child_column) == c)
            || (ci(&self.parent_table) == t && ci(&self.parent_column) == c)
    }

    pub fn touches_table(&self, table: &str) -> bool {
        let t = ci(table);
        ci(&self.child_table) == t || ci(&self.parent_table) == t
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Schema {
    pub db_id: String,
    pub tables: Vec<Table>,
    pub foreign_keys: Vec<ForeignKey>,
}

impl Schema {
    pub fn new(db_id: impl Into<String>) -> Self {
        Schema {
            db_id: db_id.into(),
            tables: Vec::new(),
            foreign_keys: Vec::new(),
        }
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        let key = ci(name);
        self.tables.iter().find(|t| ci(&t.name) == key)
    }

    pub fn table_mut(&mut self, name: &str) -> Option<&mut Table> {
        let key = ci(name);
        self.tables.iter_mut().find(|t| ci(&t.name) == key)
    }

    pub fn has_table(&self, name: &str) -> bool {
        self.table(name).is_some()
    }

    pub fn table_index(&self, name: &str) -> Option<usize> {
        let key = ci(name);
        self.tables.iter().position(|t| ci(&t.name) == key)
    }

    /// All identifiers already taken by tables, lowercased.
    pub fn table_name_keys(&self) -> BTreeSet<String> {
        self.tables.iter().map(|t| ci(&t.name)).collect()
    }

    /// Foreign keys whose child side lives in `table`.
    pub fn outbound_fks(&self, table: &str) -> Vec<&ForeignKey> {
        let key = ci(table);
        self.foreign_keys
            .iter()
            .filter(|fk| ci(&fk.child_table) == key)
            .collect()
    }

    /// Foreign keys whose parent side lives in `table`.
    pub fn inbound_fks(&self, table: &str) -> Vec<&ForeignKey> {
        let key = ci(table);
        self.foreign_keys
            .iter()
            .filter(|fk| ci(&fk.parent_table) == key)
            .collect()
    }

    /// Drop the named columns and cascade-remove every foreign key that
    /// touches one of them. `targets` are (table, column) pairs.
    pub fn drop_columns_cascade(&self, targets: &[(String, String)]) -> Schema {
        let mut out = self.clone();
        for (table, column) in targets {
            if let Some(t) = out.table_mut(table) {
                let key = ci(column);
                t.columns.retain(|c| ci(&c.name) != key);
                t.primary_key.retain(|p| ci(p) != key);
            }
            out.foreign_keys.retain(|fk| !fk.touches_column(table, column));
        }
        out
    }

    /// Drop whole tables and cascade-remove foreign keys touching them.
    pub fn drop_tables_cascade(&self, targets: &[String]) -> Schema {
        let keys: BTreeSet<String> = targets.iter().map(|t| ci(t)).collect();
        let mut out = self.clone();
        out.tables.retain(|t| !keys.contains(&ci(&t.name)));
        out.foreign_keys.retain(|fk| {
            !keys.contains(&ci(&fk.child_table)) && !keys.contains(&ci(&fk.parent_table))
        });
        out
    }
}

/// Machine-readable integrity violation. Violations are data, not failures.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub code: ViolationCode,
    /// Dotted path of the offending object, e.g. `patient.city`.
    pub path: String,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ViolationCode {
    DupTable,
    DupColumn,
    EmptyName,
    BadPrimaryKey,
    DanglingFk,
    SelfFk,
}

impl std::fmt::Display for ViolationCode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ViolationCode::DupTable => "DUP_TABLE",
            ViolationCode::DupColumn => "DUP_COLUMN",
            ViolationCode::EmptyName => "EMPTY_NAME",
            ViolationCode::BadPrimaryKey => "BAD_PK",
            ViolationCode::DanglingFk => "DANGLING_FK",
            ViolationCode::SelfFk => "SELF_FK",
        };
        f.write_str(s)
    }
}

fn violation(code: ViolationCode, path: impl Into<String>, message: impl Into<String>) -> Violation {
    Violation {
        code,
        path: path.into(),
        message: message.into(),
    }
}

/// Check every schema invariant. Returns an empty list iff the schema is
/// well-formed: unique table/column names (case-insensitive), primary keys
/// naming real columns, no dangling or degenerate foreign keys.
pub fn validate(schema: &Schema) -> Vec<Violation> {
    let mut out = Vec::new();

    let mut seen_tables: BTreeSet<String> = BTreeSet::new();
    for table in &schema.tables {
        if table.name.is_empty() {
            out.push(violation(ViolationCode::EmptyName, "<table>", "table with empty name"));
        }
        if !seen_tables.insert(ci(&table.name)) {
            out.push(violation(
                ViolationCode::DupTable,
                &table.name,
                format!("duplicate table name `{}`", table.name),
            ));
        }

        let mut seen_cols: BTreeSet<String> = BTreeSet::new();
        for col in &table.columns {
            if col.name.is_empty() {
                out.push(violation(
                    ViolationCode::EmptyName,
                    format!("{}.<column>", table.name),
                    "column with empty name",
                ));
            }
            if !seen_cols.insert(ci(&col.name)) {
                out.push(violation(
                    ViolationCode::DupColumn,
                    format!("{}.{}", table.name, col.name),
                    format!("duplicate column `{}` in table `{}`", col.name, table.name),
                ));
            }
        }

        for pk in &table.primary_key {
            if !table.has_column(pk) {
                out.push(violation(
                    ViolationCode::BadPrimaryKey,
                    format!("{}.{}", table.name, pk),
                    format!("primary key names missing column `{}`", pk),
                ));
            }
        }
    }

    for fk in &schema.foreign_keys {
        let path = format!(
            "{}.{} -> {}.{}",
            fk.child_table, fk.child_column, fk.parent_table, fk.parent_column
        );
        let child_ok = schema
            .table(&fk.child_table)
            .is_some_and(|t| t.has_column(&fk.child_column));
        let parent_ok = schema
            .table(&fk.parent_table)
            .is_some_and(|t| t.has_column(&fk.parent_column));
        if !child_ok || !parent_ok {
            let missing = if !child_ok {
                format!("{}.{}", fk.child_table, fk.child_column)
            } else {
                format!("{}.{}", fk.parent_table, fk.parent_column)
            };
            out.push(violation(
                ViolationCode::DanglingFk,
                path.clone(),
                format!("foreign key endpoint `{missing}` does not exist"),
            ));
        }
        if ci(&fk.child_table) == ci(&fk.parent_table)
            && ci(&fk.child_column) == ci(&fk.parent_column)
        {
            out.push(violation(
                ViolationCode::SelfFk,
                path,
                "foreign key references its own endpoint",
            ));
        }
    }

    out
}

#[derive(Debug, Error)]
pub enum SchemaError {
    /// Unparseable DDL. The message carries the tokenizer/parser position.
    #[error("DDL syntax error: {message}")]
    Syntax {
        message: String,
        line: Option<u64>,
        column: Option<u64>,
    },
    /// Structurally parseable DDL that breaks a schema invariant.
    #[error("schema integrity error on `{identifier}`: {}", violations[0].message)]
    Integrity {
        identifier: String,
        violations: Vec<Violation>,
    },
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clinic() -> Schema {
        crate::testkit::clinic_schema()
    }

    #[test]
    fn clinic_fixture_is_valid() {
        assert_eq!(validate(&clinic()), Vec::new());
    }

    #[test]
    fn duplicate_table_names_case_insensitive() {
        let mut s = clinic();
        let mut dup = s.tables[0].clone();
        dup.name = "Patient".into();
        s.tables.push(dup);
        let v = validate(&s);
        assert!(v.iter().any(|v| v.code == ViolationCode::DupTable), "{v:?}");
    }

    #[test]
    fn deleting_fk_parent_column_without_cascade_dangles() {
        let mut s = clinic();
        let t = s.table_mut("patient").unwrap();
        t.columns.retain(|c| c.name != "patient_id");
        t.primary_key.clear();
        let v = validate(&s);
        assert!(v.iter().any(|v| v.code == ViolationCode::DanglingFk), "{v:?}");
    }

    #[test]
    fn cascade_drop_removes_touching_fks() {
        let s = clinic();
        let dropped = s.drop_columns_cascade(&[("patient".into(), "patient_id".into())]);
        assert!(dropped.foreign_keys.is_empty());
        assert!(!dropped.table("patient").unwrap().has_column("patient_id"));
        assert_eq!(validate(&dropped), Vec::new());
    }

    #[test]
    fn drop_table_cascades() {
        let s = clinic();
        let dropped = s.drop_tables_cascade(&["patient".into()]);
        assert!(dropped.table("patient").is_none());
        assert!(dropped.foreign_keys.is_empty());
    }

    #[test]
    fn self_referential_fk_same_endpoint_rejected() {
        let mut s = clinic();
        s.foreign_keys.push(ForeignKey {
            child_table: "patient".into(),
            child_column: "patient_id".into(),
            parent_table: "Patient".into(),
            parent_column: "PATIENT_ID".into(),
        });
        let v = validate(&s);
        assert!(v.iter().any(|v| v.code == ViolationCode::SelfFk), "{v:?}");
    }

    #[test]
    fn composite_pk_members_checked() {
        let mut s = Schema::new("x");
        let mut t = Table::new("t");
        t.columns.push(Column::new("a", "INTEGER"));
        t.primary_key = vec!["a".into(), "ghost".into()];
        s.tables.push(t);
        let v = validate(&s);
        assert!(v.iter().any(|v| v.code == ViolationCode::BadPrimaryKey));
    }
}
