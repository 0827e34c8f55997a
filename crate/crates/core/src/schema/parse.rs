//! DDL ingestion for the seed benchmark's SQLite-style CREATE TABLE grammar.

use sqlparser::ast::{ColumnOption, Statement, TableConstraint};
use sqlparser::dialect::SQLiteDialect;
use sqlparser::parser::Parser;

use super::{ci, validate, Column, ForeignKey, Schema, SchemaError, Table};

/// Parse zero or more CREATE TABLE statements into a [`Schema`].
///
/// Accepts double-quoted and backtick-quoted identifiers, inline and
/// table-level PRIMARY KEY / FOREIGN KEY clauses. The returned schema
/// satisfies every invariant checked by [`validate`]; column order matches
/// source order.
pub fn parse_ddl(text: &str) -> Result<Schema, SchemaError> {
    let statements = Parser::parse_sql(&SQLiteDialect {}, text).map_err(|e| {
        let message = e.to_string();
        let (line, column) = position_from_message(&message);
        SchemaError::Syntax { message, line, column }
    })?;

    let mut schema = Schema::new("");
    for stmt in statements {
        let create = match stmt {
            Statement::CreateTable(create) => create,
            other => {
                return Err(SchemaError::Syntax {
                    message: format!("expected CREATE TABLE, found: {other}"),
                    line: None,
                    column: None,
                })
            }
        };

        let table_name = object_name_tail(&create.name);
        let mut table = Table::new(table_name.clone());

        for col in &create.columns {
            let mut column = Column::new(col.name.value.clone(), col.data_type.to_string());
            for opt in &col.options {
                match &opt.option {
                    ColumnOption::NotNull => column.nullable = false,
                    ColumnOption::Unique { is_primary: true, .. } => {
                        table.primary_key.push(col.name.value.clone());
                        column.nullable = false;
                    }
                    ColumnOption::ForeignKey {
                        foreign_table,
                        referred_columns,
                        ..
                    } => {
                        let parent_column = referred_columns
                            .first()
                            .map(|c| c.value.clone())
                            .unwrap_or_else(|| col.name.value.clone());
                        schema.foreign_keys.push(ForeignKey {
                            child_table: table_name.clone(),
                            child_column: col.name.value.clone(),
                            parent_table: object_name_tail(foreign_table),
                            parent_column,
                        });
                    }
                    _ => {}
                }
            }
            table.columns.push(column);
        }

        for constraint in &create.constraints {
            match constraint {
                TableConstraint::PrimaryKey { columns, .. } => {
                    for c in columns {
                        if !table.primary_key.iter().any(|p| ci(p) == ci(&c.value)) {
                            table.primary_key.push(c.value.clone());
                        }
                    }
                }
                TableConstraint::ForeignKey {
                    columns,
                    foreign_table,
                    referred_columns,
                    ..
                } => {
                    // BIRD foreign keys are single-column; composite clauses
                    // decompose into positional pairs.
                    for (i, child) in columns.iter().enumerate() {
                        let parent_column = referred_columns
                            .get(i)
                            .or_else(|| referred_columns.first())
                            .map(|c| c.value.clone())
                            .unwrap_or_else(|| child.value.clone());
                        schema.foreign_keys.push(ForeignKey {
                            child_table: table_name.clone(),
                            child_column: child.value.clone(),
                            parent_table: object_name_tail(foreign_table),
                            parent_column,
                        });
                    }
                }
                _ => {}
            }
        }

        schema.tables.push(table);
    }

    let violations = validate(&schema);
    if let Some(first) = violations.first() {
        return Err(SchemaError::Integrity {
            identifier: offending_identifier(first),
            violations,
        });
    }
    Ok(schema)
}

fn object_name_tail(name: &sqlparser::ast::ObjectName) -> String {
    name.0
        .last()
        .map(|i| i.value.clone())
        .unwrap_or_default()
}

fn offending_identifier(v: &super::Violation) -> String {
    // For dangling FKs name the missing endpoint's table, which is the most
    // useful identifier for the caller.
    match v.code {
        super::ViolationCode::DanglingFk => {
            let missing = v
                .message
                .split('`')
                .nth(1)
                .unwrap_or(v.path.as_str());
            missing.split('.').next().unwrap_or(missing).to_string()
        }
        _ => v.path.clone(),
    }
}

fn position_from_message(message: &str) -> (Option<u64>, Option<u64>) {
    let line = message
        .split("Line: ")
        .nth(1)
        .and_then(|rest| rest.split(|c: char| !c.is_ascii_digit()).next()?.parse().ok());
    let column = message
        .split("Column: ")
        .nth(1)
        .and_then(|rest| rest.split(|c: char| !c.is_ascii_digit()).next()?.parse().ok());
    (line, column)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_create_table() {
        let s = parse_ddl("CREATE TABLE t(a INTEGER PRIMARY KEY)").unwrap();
        assert_eq!(s.tables.len(), 1);
        assert_eq!(s.tables[0].name, "t");
        assert_eq!(s.tables[0].primary_key, vec!["a".to_string()]);
        assert!(!s.tables[0].columns[0].nullable);
    }

    #[test]
    fn clinic_fixture_parses() {
        let s = parse_ddl(crate::testkit::CLINIC_DDL).unwrap();
        assert_eq!(s.tables.len(), 2);
        let patient = s.table("patient").unwrap();
        assert_eq!(patient.columns.len(), 4);
        assert_eq!(patient.primary_key, vec!["patient_id".to_string()]);
        let diagnosis = s.table("diagnosis").unwrap();
        assert_eq!(diagnosis.primary_key, vec!["diag_id".to_string()]);
        assert_eq!(
            s.foreign_keys,
            vec![ForeignKey {
                child_table: "diagnosis".into(),
                child_column: "patient_id".into(),
                parent_table: "patient".into(),
                parent_column: "patient_id".into(),
            }]
        );
    }

    #[test]
    fn dangling_fk_is_integrity_error() {
        let err = parse_ddl("CREATE TABLE t(a INT, FOREIGN KEY(a) REFERENCES missing(x))")
            .unwrap_err();
        match err {
            SchemaError::Integrity { identifier, .. } => assert_eq!(identifier, "missing"),
            other => panic!("expected integrity error, got {other:?}"),
        }
    }

    #[test]
    fn syntax_error_reports_position() {
        let err = parse_ddl("CREATE TABLE t(").unwrap_err();
        match err {
            SchemaError::Syntax { line, .. } => assert!(line.is_some()),
            other => panic!("expected syntax error, got {other:?}"),
        }
    }

    #[test]
    fn backtick_quoting_accepted() {
        let s = parse_ddl("CREATE TABLE `order line`(`the key` INTEGER NOT NULL)").unwrap();
        assert_eq!(s.tables[0].name, "order line");
        assert_eq!(s.tables[0].columns[0].name, "the key");
        assert!(!s.tables[0].columns[0].nullable);
    }

    #[test]
    fn duplicate_columns_rejected() {
        let err = parse_ddl("CREATE TABLE t(a INT, A TEXT)").unwrap_err();
        assert!(matches!(err, SchemaError::Integrity { .. }));
    }
}
