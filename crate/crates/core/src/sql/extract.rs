//! Alias-resolved reference extraction.

use sqlparser::ast::{Expr, ObjectName, TableFactor};

use super::resolve::{walk_query, Clause, Handler, Occurrence, Resolution};
use super::{parse_query, SqlError, SqlRefs};
use crate::schema::{ci, Schema};

struct Extract {
    refs: SqlRefs,
    /// Occurrence id -> canonical table name, for column resolution.
    occ_tables: Vec<String>,
}

impl Handler for Extract {
    fn table_factor(
        &mut self,
        occ: &Occurrence,
        _factor: &mut TableFactor,
    ) -> Result<(), SqlError> {
        debug_assert_eq!(occ.id, self.occ_tables.len());
        self.occ_tables.push(occ.table.clone());
        self.refs.tables.insert(ci(&occ.table));
        Ok(())
    }

    fn column_site(
        &mut self,
        _site: usize,
        resolution: &Resolution,
        _expr: &mut Expr,
        _clause: Clause,
    ) -> Result<(), SqlError> {
        if let Resolution::Base { occurrence, column } = resolution {
            let table = &self.occ_tables[*occurrence];
            self.refs.columns.insert((ci(table), ci(column)));
        }
        Ok(())
    }

    fn qualified_wildcard(
        &mut self,
        _occ: Option<&Occurrence>,
        _name: &mut ObjectName,
    ) -> Result<(), SqlError> {
        // Stars contribute tables only, never column pairs.
        Ok(())
    }
}

/// Extract the base tables and alias-resolved (table, column) pairs a query
/// references, at any nesting depth. `SELECT *` contributes no column pairs.
pub fn extract_refs(sql: &str, schema: &Schema) -> Result<SqlRefs, SqlError> {
    let mut query = parse_query(sql)?;
    let mut handler = Extract {
        refs: SqlRefs::default(),
        occ_tables: Vec::new(),
    };
    walk_query(&mut query, schema, &mut handler)?;
    Ok(handler.refs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testkit::{clinic_schema, CLINIC_GOLD};

    fn pairs(items: &[(&str, &str)]) -> std::collections::BTreeSet<(String, String)> {
        items
            .iter()
            .map(|(t, c)| (t.to_string(), c.to_string()))
            .collect()
    }

    #[test]
    fn clinic_gold_refs() {
        let refs = extract_refs(CLINIC_GOLD, &clinic_schema()).unwrap();
        assert_eq!(
            refs.tables,
            ["patient", "diagnosis"]
                .iter()
                .map(|s| s.to_string())
                .collect()
        );
        assert_eq!(
            refs.columns,
            pairs(&[
                ("patient", "patient_id"),
                ("diagnosis", "patient_id"),
                ("diagnosis", "severity"),
            ])
        );
    }

    #[test]
    fn star_contributes_tables_only() {
        let refs = extract_refs("SELECT * FROM patient", &clinic_schema()).unwrap();
        assert_eq!(refs.tables.len(), 1);
        assert!(refs.tables.contains("patient"));
        assert!(refs.columns.is_empty());
    }

    #[test]
    fn unknown_column_is_unresolved() {
        let err = extract_refs("SELECT x FROM patient", &clinic_schema()).unwrap_err();
        match err {
            SqlError::Unresolved(name) => assert_eq!(name, "x"),
            other => panic!("expected unresolved, got {other:?}"),
        }
    }

    #[test]
    fn unqualified_ambiguity_goes_to_first_from_table() {
        // patient_id exists in both; patient is listed first.
        let refs = extract_refs(
            "SELECT patient_id FROM patient, diagnosis WHERE severity > 1",
            &clinic_schema(),
        )
        .unwrap();
        assert!(refs.columns.contains(&("patient".into(), "patient_id".into())));
        assert!(refs.columns.contains(&("diagnosis".into(), "severity".into())));
    }

    #[test]
    fn subquery_refs_included() {
        let sql = "SELECT full_name FROM patient WHERE patient_id IN (SELECT patient_id FROM diagnosis WHERE severity > 2)";
        let refs = extract_refs(sql, &clinic_schema()).unwrap();
        assert!(refs.tables.contains("diagnosis"));
        assert!(refs.columns.contains(&("diagnosis".into(), "patient_id".into())));
        assert!(refs.columns.contains(&("patient".into(), "patient_id".into())));
    }

    #[test]
    fn set_operations_supported() {
        let sql = "SELECT city FROM patient UNION SELECT code FROM diagnosis";
        let refs = extract_refs(sql, &clinic_schema()).unwrap();
        assert!(refs.tables.contains("patient") && refs.tables.contains("diagnosis"));
        assert!(refs.columns.contains(&("diagnosis".into(), "code".into())));
    }

    #[test]
    fn alias_spelling_does_not_matter() {
        let a = extract_refs(CLINIC_GOLD, &clinic_schema()).unwrap();
        let swapped = CLINIC_GOLD.replace("T1", "TX").replace("T2", "T1").replace("TX", "T2");
        let b = extract_refs(&swapped, &clinic_schema()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn order_by_and_alias_refs() {
        let sql = "SELECT city AS c, COUNT(*) FROM patient GROUP BY c ORDER BY c";
        let refs = extract_refs(sql, &clinic_schema()).unwrap();
        assert!(refs.columns.contains(&("patient".into(), "city".into())));
    }

    #[test]
    fn case_insensitive_resolution_canonicalizes() {
        let refs = extract_refs("SELECT CITY FROM Patient", &clinic_schema()).unwrap();
        assert!(refs.columns.contains(&("patient".into(), "city".into())));
    }
}
