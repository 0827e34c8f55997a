//! Data migration across an evolution record: the row-level counterpart of
//! the schema transformation, keeping base and evolved databases
//! executable for the same question.

use std::collections::BTreeMap;

use super::{generate_value, Database, PopulateOptions, Value, ValueError};
use crate::perturb::{apply_record, AddedItem, EvolutionRecord, PType, RemovedItem};
use crate::rng::derive_stream;
use crate::schema::ci;

/// Transform a database to fit the evolved schema described by `record`.
pub fn migrate(db: &Database, record: &EvolutionRecord) -> Result<Database, ValueError> {
    let evolved_schema = apply_record(record, &db.schema)
        .map_err(|e| ValueError::MigrationUnsupported(e.to_string()))?;
    let mut out = Database::new(evolved_schema.clone());

    match record.ptype {
        PType::AddColumns => {
            let mut inserted: BTreeMap<String, Vec<(usize, &crate::schema::Column)>> =
                BTreeMap::new();
            for item in &record.added {
                if let AddedItem::Column {
                    table,
                    column,
                    position,
                } = item
                {
                    inserted.entry(ci(table)).or_default().push((*position, column));
                }
            }
            for table in &db.schema.tables {
                let mut rows = db.rows(&table.name).cloned().unwrap_or_default();
                if let Some(additions) = inserted.get(&ci(&table.name)) {
                    let mut rng = derive_stream(
                        record.manipulated_count as u64,
                        &["migrate-add", &table.name],
                    );
                    for (position, column) in additions {
                        for row in rows.iter_mut() {
                            let at = (*position).min(row.len());
                            row.insert(at, generate_value(&mut rng, column));
                        }
                    }
                }
                out.set_rows(&table.name, rows);
            }
        }
        PType::RemoveColumns | PType::RemoveColumnsInSql => {
            let mut dropped: BTreeMap<String, Vec<String>> = BTreeMap::new();
            for item in &record.removed {
                if let RemovedItem::Column { table, column } = item {
                    dropped.entry(ci(table)).or_default().push(ci(column));
                }
            }
            for table in &db.schema.tables {
                let rows = db.rows(&table.name).cloned().unwrap_or_default();
                let gone = dropped.get(&ci(&table.name));
                let keep: Vec<usize> = table
                    .columns
                    .iter()
                    .enumerate()
                    .filter(|(_, c)| {
                        gone.map(|g| !g.contains(&ci(&c.name))).unwrap_or(true)
                    })
                    .map(|(i, _)| i)
                    .collect();
                let rows = rows
                    .into_iter()
                    .map(|row| keep.iter().map(|i| row[*i].clone()).collect())
                    .collect();
                out.set_rows(&table.name, rows);
            }
        }
        PType::RenameColumns | PType::RenameTables => {
            for table in &db.schema.tables {
                let new_name = record
                    .renames
                    .new_table(&table.name)
                    .unwrap_or(&table.name)
                    .to_string();
                out.set_rows(&new_name, db.rows(&table.name).cloned().unwrap_or_default());
            }
        }
        PType::SplitColumns => {
            let split = record
                .column_split
                .as_ref()
                .ok_or_else(|| ValueError::MigrationUnsupported("missing column split".into()))?;
            for table in &db.schema.tables {
                let mut rows = db.rows(&table.name).cloned().unwrap_or_default();
                if ci(&table.name) == ci(&split.table) {
                    let idx = table.column_index(&split.column).ok_or_else(|| {
                        ValueError::MigrationUnsupported("split column missing".into())
                    })?;
                    let n = split.components.len();
                    for row in rows.iter_mut() {
                        let source = row.remove(idx);
                        let pieces = split_value(&source, &split.delimiter, n);
                        for (k, piece) in pieces.into_iter().enumerate() {
                            row.insert(idx + k, piece);
                        }
                    }
                }
                out.set_rows(&table.name, rows);
            }
        }
        PType::MergeColumns => {
            let merge = record
                .column_merge
                .as_ref()
                .ok_or_else(|| ValueError::MigrationUnsupported("missing column merge".into()))?;
            for table in &db.schema.tables {
                let mut rows = db.rows(&table.name).cloned().unwrap_or_default();
                if ci(&table.name) == ci(&merge.table) {
                    let idx: Vec<usize> = merge
                        .components
                        .iter()
                        .map(|c| {
                            table.column_index(c).ok_or_else(|| {
                                ValueError::MigrationUnsupported("merge component missing".into())
                            })
                        })
                        .collect::<Result<_, _>>()?;
                    let first = idx[0];
                    for row in rows.iter_mut() {
                        let parts: Vec<Value> = idx.iter().map(|i| row[*i].clone()).collect();
                        let joined = if parts.iter().any(Value::is_null) {
                            Value::Null
                        } else {
                            Value::Text(
                                parts
                                    .iter()
                                    .map(Value::render_text)
                                    .collect::<Vec<_>>()
                                    .join(&merge.delimiter),
                            )
                        };
                        // Remove components from the right, then place the
                        // merged value at the first component's slot.
                        let mut sorted = idx.clone();
                        sorted.sort_unstable_by(|a, b| b.cmp(a));
                        for i in sorted {
                            row.remove(i);
                        }
                        let at = first.min(row.len());
                        row.insert(at, joined);
                    }
                }
                out.set_rows(&table.name, rows);
            }
        }
        PType::AddTables => {
            for table in &db.schema.tables {
                out.set_rows(&table.name, db.rows(&table.name).cloned().unwrap_or_default());
            }
            // Added tables are populated fresh against the current data so
            // their FK values land in real parent pools.
            let added: Vec<String> = record
                .added
                .iter()
                .filter_map(|a| match a {
                    AddedItem::Table { table, .. } => Some(table.name.clone()),
                    _ => None,
                })
                .collect();
            let opts = PopulateOptions {
                rows_per_table: db
                    .schema
                    .tables
                    .first()
                    .and_then(|t| db.rows(&t.name))
                    .map(|r| r.len())
                    .unwrap_or(16)
                    .max(1),
                seed: 0x5eed_add,
            };
            let mut remaining = added;
            let mut guard = 0;
            while !remaining.is_empty() {
                let mut next = Vec::new();
                for name in remaining.drain(..) {
                    let table = evolved_schema.table(&name).unwrap().clone();
                    let ready = evolved_schema
                        .foreign_keys
                        .iter()
                        .filter(|fk| ci(&fk.child_table) == ci(&name))
                        .all(|fk| {
                            ci(&fk.parent_table) == ci(&name)
                                || !out.rows(&fk.parent_table).map(Vec::is_empty).unwrap_or(true)
                                || db.schema.table(&fk.parent_table).is_some()
                        });
                    if ready {
                        let rows = super::fill_table(&out, &table, &evolved_schema, &opts)?;
                        out.set_rows(&name, rows);
                    } else {
                        next.push(name);
                    }
                }
                guard += 1;
                if guard > 64 && !next.is_empty() {
                    return Err(ValueError::MigrationUnsupported(
                        "added tables form an unsatisfiable dependency cycle".into(),
                    ));
                }
                remaining = next;
            }
        }
        PType::RemoveTables => {
            for table in &evolved_schema.tables {
                out.set_rows(&table.name, db.rows(&table.name).cloned().unwrap_or_default());
            }
        }
        PType::SplitTables => {
            let plan = record
                .split_plan
                .as_ref()
                .ok_or_else(|| ValueError::MigrationUnsupported("missing split plan".into()))?;
            let source = db.schema.table(&plan.source_table).ok_or_else(|| {
                ValueError::MigrationUnsupported("split source missing".into())
            })?;
            let source_rows = db.rows(&source.name).cloned().unwrap_or_default();
            for table in &db.schema.tables {
                if ci(&table.name) != ci(&plan.source_table) {
                    out.set_rows(&table.name, db.rows(&table.name).cloned().unwrap_or_default());
                }
            }
            for (part_name, cols) in &plan.parts {
                let mut idx: Vec<usize> = Vec::new();
                for pk in &plan.pk {
                    idx.push(source.column_index(pk).ok_or_else(|| {
                        ValueError::MigrationUnsupported("split PK missing".into())
                    })?);
                }
                for c in cols {
                    idx.push(source.column_index(c).ok_or_else(|| {
                        ValueError::MigrationUnsupported("split column missing".into())
                    })?);
                }
                let rows: Vec<Vec<Value>> = source_rows
                    .iter()
                    .map(|row| idx.iter().map(|i| row[*i].clone()).collect())
                    .collect();
                out.set_rows(part_name, rows);
            }
        }
        PType::MergeTables => {
            let plan = record
                .merge_plan
                .as_ref()
                .ok_or_else(|| ValueError::MigrationUnsupported("missing merge plan".into()))?;
            for table in &db.schema.tables {
                if !plan.is_source(&table.name) {
                    out.set_rows(&table.name, db.rows(&table.name).cloned().unwrap_or_default());
                }
            }
            let layout = plan.merged_layout(&db.schema);
            let link = plan.join_links.first().ok_or_else(|| {
                ValueError::MigrationUnsupported("merge plan has no join link".into())
            })?;
            let child = db.schema.table(&link.child_table).ok_or_else(|| {
                ValueError::MigrationUnsupported("merge child missing".into())
            })?;
            let parent = db.schema.table(&link.parent_table).ok_or_else(|| {
                ValueError::MigrationUnsupported("merge parent missing".into())
            })?;
            let child_link = child.column_index(&link.child_column).unwrap();
            let parent_link = parent.column_index(&link.parent_column).unwrap();

            let child_rows = db.rows(&child.name).cloned().unwrap_or_default();
            let parent_rows = db.rows(&parent.name).cloned().unwrap_or_default();

            // Inner join: child rows without a partner (NULL or dangling
            // link) are dropped.
            let mut merged_rows = Vec::new();
            for crow in &child_rows {
                let key = &crow[child_link];
                if key.is_null() {
                    continue;
                }
                for prow in parent_rows.iter().filter(|p| &p[parent_link] == key) {
                    let mut row = Vec::with_capacity(layout.len());
                    for (src_table, src_col, _) in &layout {
                        let (table, source_row) = if ci(src_table) == ci(&child.name) {
                            (child, crow)
                        } else {
                            (parent, prow)
                        };
                        let i = table.column_index(src_col).ok_or_else(|| {
                            ValueError::MigrationUnsupported("merge column missing".into())
                        })?;
                        row.push(source_row[i].clone());
                    }
                    merged_rows.push(row);
                }
            }
            out.set_rows(&plan.merged_name, merged_rows);
        }
    }

    Ok(out)
}

/// Split a stored value by the delimiter into exactly `n` components, the
/// remainder staying in the last piece and missing pieces padding as NULL.
fn split_value(value: &Value, delimiter: &str, n: usize) -> Vec<Value> {
    match value {
        Value::Null => vec![Value::Null; n],
        other => {
            let text = other.render_text();
            let mut pieces: Vec<Value> = text
                .splitn(n, delimiter)
                .map(|p| Value::Text(p.to_string()))
                .collect();
            while pieces.len() < n {
                pieces.push(Value::Null);
            }
            pieces
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perturb::{perturb, PType, PerturbOptions};
    use crate::synth::Synthesizer;
    use crate::testkit::clinic_instance;
    use crate::values::populate;

    fn migrated(ptype: PType, seed: u64) -> (Database, Database, EvolutionRecord) {
        let instance = clinic_instance();
        let synth = Synthesizer::mock(seed);
        let opts = PerturbOptions::default();
        let out = perturb(&instance, ptype, &opts, &synth, None, seed).unwrap();
        let db = populate(&instance.schema, &PopulateOptions { rows_per_table: 12, seed }).unwrap();
        let migrated = migrate(&db, &out.record).unwrap();
        (db, migrated, out.record)
    }

    #[test]
    fn rename_migration_preserves_values() {
        let (base, evolved, record) = migrated(PType::RenameColumns, 3);
        let renamed = record
            .renames
            .column_renames
            .first()
            .expect("at least one rename");
        let table_after = record
            .renames
            .new_table(&renamed.table)
            .unwrap_or(&renamed.table);
        let before = base.rows(&renamed.table).unwrap();
        let after = evolved.rows(table_after).unwrap();
        assert_eq!(before, after);
    }

    #[test]
    fn split_then_rejoin_recovers_source_rows() {
        let (base, evolved, record) = migrated(PType::SplitTables, 5);
        let plan = record.split_plan.as_ref().unwrap();
        let source = base.schema.table(&plan.source_table).unwrap();

        // Natural-join all parts on the PK and project source column order.
        let anchor_rows = evolved.rows(plan.anchor()).unwrap();
        let mut rebuilt: Vec<Vec<Value>> = Vec::new();
        for arow in anchor_rows {
            let mut by_col: std::collections::BTreeMap<String, Value> = Default::default();
            let anchor_table = evolved.schema.table(plan.anchor()).unwrap();
            for (i, c) in anchor_table.columns.iter().enumerate() {
                by_col.insert(ci(&c.name), arow[i].clone());
            }
            let key: Vec<Value> = plan
                .pk
                .iter()
                .map(|p| by_col.get(&ci(p)).cloned().unwrap())
                .collect();
            for (part, _) in &plan.parts[1..] {
                let pt = evolved.schema.table(part).unwrap();
                let pk_idx: Vec<usize> =
                    plan.pk.iter().map(|p| pt.column_index(p).unwrap()).collect();
                let prow = evolved
                    .rows(part)
                    .unwrap()
                    .iter()
                    .find(|r| pk_idx.iter().map(|i| r[*i].clone()).collect::<Vec<_>>() == key)
                    .expect("every part carries every key");
                for (i, c) in pt.columns.iter().enumerate() {
                    by_col.entry(ci(&c.name)).or_insert_with(|| prow[i].clone());
                }
            }
            rebuilt.push(
                source
                    .columns
                    .iter()
                    .map(|c| by_col.get(&ci(&c.name)).cloned().unwrap())
                    .collect(),
            );
        }
        let mut expected = base.rows(&source.name).unwrap().clone();
        let mut got = rebuilt;
        expected.sort();
        got.sort();
        assert_eq!(expected, got);
    }

    #[test]
    fn merge_migration_bounded_by_child_rows() {
        let (base, evolved, record) = migrated(PType::MergeTables, 7);
        let plan = record.merge_plan.as_ref().unwrap();
        let link = &plan.join_links[0];
        let child_rows = base.rows(&link.child_table).unwrap().len();
        let merged_rows = evolved.rows(&plan.merged_name).unwrap().len();
        // FK targets are unique parent keys, so the inner join is 1:1 per
        // non-null child link.
        assert!(merged_rows <= child_rows);
        assert_eq!(evolved.check(), Ok(()));
    }
}
