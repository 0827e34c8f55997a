//! Identifier-level rewriting for table and column renames.

use sqlparser::ast::{Expr, ObjectName, TableFactor};

use super::ast_util::mk_ident;
use super::resolve::{walk_query, Clause, Handler, Occurrence, Resolution};
use super::{parse_query, RenameMap, SqlError};
use crate::schema::Schema;

struct Rename<'m> {
    map: &'m RenameMap,
    /// Occurrence id -> (canonical table, had alias).
    occs: Vec<(String, bool)>,
    edits: usize,
}

impl Rename<'_> {
    fn rename_object_name(&mut self, name: &mut ObjectName, new: &str) {
        if let Some(last) = name.0.last_mut() {
            *last = mk_ident(new);
            self.edits += 1;
        }
    }
}

impl Handler for Rename<'_> {
    fn table_factor(
        &mut self,
        occ: &Occurrence,
        factor: &mut TableFactor,
    ) -> Result<(), SqlError> {
        debug_assert_eq!(occ.id, self.occs.len());
        self.occs.push((occ.table.clone(), occ.alias.is_some()));
        if let Some(new) = self.map.new_table(&occ.table) {
            let new = new.to_string();
            if let TableFactor::Table { name, .. } = factor {
                self.rename_object_name(name, &new);
            }
        }
        Ok(())
    }

    fn column_site(
        &mut self,
        _site: usize,
        resolution: &Resolution,
        expr: &mut Expr,
        _clause: Clause,
    ) -> Result<(), SqlError> {
        let Resolution::Base { occurrence, column } = resolution else {
            return Ok(());
        };
        let (table, aliased) = self.occs[*occurrence].clone();
        let new_column = self.map.new_column(&table, column).map(str::to_string);
        let new_table = self.map.new_table(&table).map(str::to_string);
        match expr {
            Expr::Identifier(ident) => {
                if let Some(new) = new_column {
                    *ident = mk_ident(&new);
                    self.edits += 1;
                }
            }
            Expr::CompoundIdentifier(parts) => {
                let n = parts.len();
                if let Some(new) = new_column {
                    parts[n - 1] = mk_ident(&new);
                    self.edits += 1;
                }
                // The qualifier is the table name itself only when the
                // occurrence carries no alias.
                if !aliased {
                    if let Some(new) = new_table {
                        parts[n - 2] = mk_ident(&new);
                        self.edits += 1;
                    }
                }
            }
            _ => {}
        }
        Ok(())
    }

    fn qualified_wildcard(
        &mut self,
        occ: Option<&Occurrence>,
        name: &mut ObjectName,
    ) -> Result<(), SqlError> {
        if let Some(occ) = occ {
            if occ.alias.is_none() {
                if let Some(new) = self.map.new_table(&occ.table) {
                    let new = new.to_string();
                    self.rename_object_name(name, &new);
                }
            }
        }
        Ok(())
    }
}

/// Replace every reference to a renamed table or column, including
/// alias-qualified ones. String literals are untouched; queries with no
/// occurrence of any renamed identifier come back byte-identical.
pub fn rewrite_identifiers(
    sql: &str,
    renames: &RenameMap,
    schema: &Schema,
) -> Result<String, SqlError> {
    if renames.is_empty() {
        return Ok(sql.to_string());
    }
    let mut query = parse_query(sql)?;
    let mut handler = Rename {
        map: renames,
        occs: Vec::new(),
        edits: 0,
    };
    walk_query(&mut query, schema, &mut handler)?;
    if handler.edits == 0 {
        return Ok(sql.to_string());
    }
    Ok(query.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sql::extract_refs;
    use crate::testkit::{clinic_schema, CLINIC_GOLD};

    #[test]
    fn empty_map_is_byte_identity() {
        let out =
            rewrite_identifiers(CLINIC_GOLD, &RenameMap::default(), &clinic_schema()).unwrap();
        assert_eq!(out, CLINIC_GOLD);
    }

    #[test]
    fn column_rename_tracks_owning_table() {
        let schema = clinic_schema();
        let map = RenameMap::default().rename_column("patient", "patient_id", "person_id");
        let out = rewrite_identifiers(CLINIC_GOLD, &map, &schema).unwrap();
        // T1.patient_id (both in SELECT and ON) renamed; T2.patient_id kept.
        assert!(out.contains("T1.person_id"));
        assert!(out.contains("T2.patient_id"));
        assert!(!out.contains("T1.patient_id"));
    }

    #[test]
    fn rename_both_sides_of_fk_pair() {
        let schema = clinic_schema();
        let map = RenameMap::default()
            .rename_column("patient", "patient_id", "person_id")
            .rename_column("diagnosis", "patient_id", "person_ref");
        let out = rewrite_identifiers(CLINIC_GOLD, &map, &schema).unwrap();
        assert!(out.contains("T1.person_id = T2.person_ref"));

        let mut renamed_schema = schema.clone();
        crate::perturb::apply_renames_to_schema(&mut renamed_schema, &map);
        let refs = extract_refs(&out, &renamed_schema).unwrap();
        let original = extract_refs(CLINIC_GOLD, &schema).unwrap();
        assert_eq!(refs, original.renamed(&map));
    }

    #[test]
    fn table_rename_leaves_aliases_and_where_alone() {
        let schema = clinic_schema();
        let map = RenameMap::default().rename_table("patient", "person");
        let out = rewrite_identifiers(CLINIC_GOLD, &map, &schema).unwrap();
        assert!(out.contains("FROM person AS T1"));
        assert!(out.contains("T1.patient_id"));
        assert!(out.contains("T2.severity > 3"));
    }

    #[test]
    fn unaliased_qualifier_renamed_with_table() {
        let schema = clinic_schema();
        let map = RenameMap::default().rename_table("patient", "person");
        let sql = "SELECT patient.city FROM patient WHERE patient.city = 'patient'";
        let out = rewrite_identifiers(sql, &map, &schema).unwrap();
        assert!(out.contains("person.city"));
        // The string literal stays as written.
        assert!(out.contains("'patient'"));
    }

    #[test]
    fn untouched_queries_come_back_byte_identical() {
        let schema = clinic_schema();
        let map = RenameMap::default().rename_column("patient", "city", "town");
        let sql = "SELECT severity   FROM diagnosis";
        let out = rewrite_identifiers(sql, &map, &schema).unwrap();
        assert_eq!(out, sql);
    }

    #[test]
    fn awkward_new_names_are_quoted() {
        let schema = clinic_schema();
        let map = RenameMap::default().rename_column("diagnosis", "severity", "severity level");
        let out = rewrite_identifiers(CLINIC_GOLD, &map, &schema).unwrap();
        assert!(out.contains("T2.\"severity level\""));
    }
}
