//! Matchers for splittable columns and mergeable column groups: names,
//! dates and addresses, the composite attributes real databases store at
//! varying granularity.

use crate::schema::{ci, Schema, Table};
use crate::sql::{ColumnMerge, ColumnSplit};

fn is_constrained(schema: &Schema, table: &str, column: &str) -> bool {
    let t = match schema.table(table) {
        Some(t) => t,
        None => return true,
    };
    t.is_pk_member(column)
        || schema
            .foreign_keys
            .iter()
            .any(|fk| fk.touches_column(table, column))
}

fn name_taken(table: &Table, name: &str) -> bool {
    table.has_column(name)
}

/// Candidate column splits in a table, in column order.
pub fn split_candidates(schema: &Schema, table: &Table) -> Vec<ColumnSplit> {
    let mut out = Vec::new();
    for col in &table.columns {
        if is_constrained(schema, &table.name, &col.name) {
            continue;
        }
        let lname = ci(&col.name);
        let ltype = col.data_type.to_uppercase();

        let candidate = if ltype.starts_with("DATE")
            || ltype.starts_with("TIME")
            || lname.contains("date")
        {
            Some(ColumnSplit {
                table: table.name.clone(),
                column: col.name.clone(),
                components: vec![
                    format!("{}_year", col.name),
                    format!("{}_month", col.name),
                    format!("{}_day", col.name),
                ],
                delimiter: "-".into(),
                fixed_widths: Some(vec![4, 2, 2]),
            })
        } else if lname.contains("address") {
            Some(ColumnSplit {
                table: table.name.clone(),
                column: col.name.clone(),
                components: vec![
                    format!("{}_state", col.name),
                    format!("{}_city", col.name),
                    format!("{}_street", col.name),
                ],
                delimiter: " ".into(),
                fixed_widths: None,
            })
        } else if lname.contains("name")
            && !lname.contains("first")
            && !lname.contains("last")
            && ltype.starts_with("TEXT")
        {
            Some(ColumnSplit {
                table: table.name.clone(),
                column: col.name.clone(),
                components: vec![
                    format!("{}_first", col.name),
                    format!("{}_last", col.name),
                ],
                delimiter: " ".into(),
                fixed_widths: None,
            })
        } else {
            None
        };

        if let Some(split) = candidate {
            if split.components.iter().all(|c| !name_taken(table, c)) {
                out.push(split);
            }
        }
    }
    out
}

/// Candidate co-located column merges in a table.
pub fn merge_candidates(schema: &Schema, table: &Table) -> Vec<ColumnMerge> {
    let mut out = Vec::new();
    let free = |c: &str| !is_constrained(schema, &table.name, c);

    // Year/month/day triples sharing a stem (including a bare triple).
    let mut stems: Vec<String> = Vec::new();
    for col in &table.columns {
        let l = ci(&col.name);
        if let Some(stem) = l.strip_suffix("year") {
            let stem = stem.strip_suffix('_').unwrap_or(stem).to_string();
            if !stems.contains(&stem) {
                stems.push(stem);
            }
        }
    }
    for stem in stems {
        let join = |part: &str| {
            if stem.is_empty() {
                part.to_string()
            } else {
                format!("{stem}_{part}")
            }
        };
        let (y, m, d) = (join("year"), join("month"), join("day"));
        if [&y, &m, &d].iter().all(|c| table.has_column(c) && free(c)) {
            let merged = if stem.is_empty() {
                "date".to_string()
            } else if stem.contains("date") {
                stem.clone()
            } else {
                format!("{stem}_date")
            };
            if !name_taken(table, &merged) {
                let canonical = |c: &str| table.column(c).unwrap().name.clone();
                out.push(ColumnMerge {
                    table: table.name.clone(),
                    components: vec![canonical(&y), canonical(&m), canonical(&d)],
                    merged,
                    delimiter: "-".into(),
                    fixed_widths: Some(vec![4, 2, 2]),
                });
            }
        }
    }

    // first/last name pairs.
    let pairs: [(&str, &str, &str); 1] = [("first_name", "last_name", "full_name")];
    for (a, b, merged) in pairs {
        if table.has_column(a) && table.has_column(b) && free(a) && free(b) && !name_taken(table, merged)
        {
            let canonical = |c: &str| table.column(c).unwrap().name.clone();
            out.push(ColumnMerge {
                table: table.name.clone(),
                components: vec![canonical(a), canonical(b)],
                merged: merged.to_string(),
                delimiter: " ".into(),
                fixed_widths: None,
            });
        }
    }

    // Suffix pairs produced by earlier splits: X_first + X_last -> X.
    for col in &table.columns {
        let l = ci(&col.name);
        if let Some(stem) = l.strip_suffix("_first") {
            let last = format!("{stem}_last");
            if table.has_column(&last)
                && free(&col.name)
                && free(&last)
                && !name_taken(table, stem)
                && !stem.is_empty()
            {
                let canonical = |c: &str| table.column(c).unwrap().name.clone();
                out.push(ColumnMerge {
                    table: table.name.clone(),
                    components: vec![col.name.clone(), canonical(&last)],
                    merged: stem.to_string(),
                    delimiter: " ".into(),
                    fixed_widths: None,
                });
            }
        }
        if let Some(stem) = l.strip_suffix("_state") {
            let city = format!("{stem}_city");
            let street = format!("{stem}_street");
            if table.has_column(&city)
                && table.has_column(&street)
                && free(&col.name)
                && free(&city)
                && free(&street)
                && !name_taken(table, stem)
                && !stem.is_empty()
            {
                let canonical = |c: &str| table.column(c).unwrap().name.clone();
                out.push(ColumnMerge {
                    table: table.name.clone(),
                    components: vec![col.name.clone(), canonical(&city), canonical(&street)],
                    merged: stem.to_string(),
                    delimiter: " ".into(),
                    fixed_widths: None,
                });
            }
        }
    }

    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clinic_patient_offers_name_and_date_splits() {
        let schema = crate::testkit::clinic_schema();
        let patient = schema.table("patient").unwrap();
        let splits = split_candidates(&schema, patient);
        let columns: Vec<&str> = splits.iter().map(|s| s.column.as_str()).collect();
        assert!(columns.contains(&"full_name"));
        assert!(columns.contains(&"birth_date"));
        // patient_id is the PK, city matches nothing.
        assert!(!columns.contains(&"patient_id"));
        assert!(!columns.contains(&"city"));
    }

    #[test]
    fn merge_finds_planted_triples() {
        let ddl = "CREATE TABLE t(id INTEGER PRIMARY KEY, birth_year TEXT, birth_month TEXT, birth_day TEXT, first_name TEXT, last_name TEXT)";
        let schema = crate::schema::parse_ddl(ddl).unwrap();
        let merges = merge_candidates(&schema, schema.table("t").unwrap());
        let names: Vec<&str> = merges.iter().map(|m| m.merged.as_str()).collect();
        assert!(names.contains(&"birth_date"));
        assert!(names.contains(&"full_name"));
    }

    #[test]
    fn fk_endpoints_are_not_eligible() {
        let schema = crate::testkit::clinic_schema();
        let diagnosis = schema.table("diagnosis").unwrap();
        let splits = split_candidates(&schema, diagnosis);
        assert!(splits.iter().all(|s| ci(&s.column) != "patient_id"));
    }
}
