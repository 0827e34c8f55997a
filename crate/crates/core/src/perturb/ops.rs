//! The eleven perturbation operators. Each builds an [`EvolutionRecord`]
//! first, derives the evolved schema by applying it, rewrites the gold
//! query consistently, and re-validates everything before returning.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::patterns::{merge_candidates, split_candidates};
use super::{
    apply_record, AddedItem, EvolutionRecord, Gold, Instance, PType, PerturbError,
    PerturbedInstance, RefusalKind, RemovedItem,
};
use crate::rng::derive_stream;
use crate::schema::{ci, render_ddl, validate, Column, ForeignKey, Schema, Table};
use crate::sql::{
    extract_refs, rewrite_for_column_merge, rewrite_for_column_split, rewrite_for_merge,
    rewrite_for_split, rewrite_identifiers, ColumnRename, MergePlan, RenameMap, SplitPlan,
    SqlError, SqlRefs,
};
use crate::synth::{Proposals, SynthKind, SynthRequest, Synthesizer};

/// Per-type knobs; counts are clamped to the eligibility pool.
#[derive(Debug, Clone)]
pub struct PerturbOptions {
    pub add_columns_per_table: (u32, u32),
    pub remove_columns_count: (u32, u32),
    pub remove_in_sql_count: (u32, u32),
    pub rename_columns_count: (u32, u32),
    pub rename_tables_count: (u32, u32),
    pub add_tables_count: (u32, u32),
    /// Synthesizer attempts per request before giving up.
    pub retry_budget: u32,
}

impl Default for PerturbOptions {
    fn default() -> Self {
        PerturbOptions {
            add_columns_per_table: (1, 3),
            remove_columns_count: (1, 3),
            remove_in_sql_count: (1, 2),
            rename_columns_count: (1, 4),
            rename_tables_count: (1, 2),
            add_tables_count: (1, 3),
            retry_budget: 5,
        }
    }
}

/// Apply one perturbation type to an instance. Deterministic for a fixed
/// (instance, type, options, synthesizer transcript, seed): the random
/// stream is derived per (seed, instance, type) so batches parallelize.
pub fn perturb(
    instance: &Instance,
    ptype: PType,
    opts: &PerturbOptions,
    synth: &Synthesizer,
    db_pool: Option<&Schema>,
    seed: u64,
) -> Result<PerturbedInstance, PerturbError> {
    let violations = validate(&instance.schema);
    if !violations.is_empty() {
        return Err(PerturbError::Integrity(format!(
            "base schema invalid: {}",
            violations[0].message
        )));
    }
    let gold = instance.gold.sql().ok_or(PerturbError::GoldNotSql)?.to_string();
    let mut rng = derive_stream(seed, &[&instance.instance_id, ptype.as_str()]);

    let out = match ptype {
        PType::AddColumns => add_columns(instance, &gold, opts, synth, &mut rng)?,
        PType::RemoveColumns => remove_columns(instance, &gold, opts, &mut rng)?,
        PType::RemoveColumnsInSql => remove_columns_in_sql(instance, &gold, opts, &mut rng)?,
        PType::RenameColumns => rename_columns(instance, &gold, opts, synth, &mut rng)?,
        PType::SplitColumns => split_columns(instance, &gold, &mut rng)?,
        PType::MergeColumns => merge_columns(instance, &gold, &mut rng)?,
        PType::AddTables => add_tables(instance, &gold, opts, db_pool, &mut rng)?,
        PType::RemoveTables => remove_tables(instance, &gold, &mut rng)?,
        PType::RenameTables => rename_tables(instance, &gold, opts, synth, &mut rng)?,
        PType::SplitTables => split_tables(instance, &gold, opts, synth, &mut rng)?,
        PType::MergeTables => merge_tables(instance, &gold, opts, synth, &mut rng)?,
    };

    let violations = validate(&out.evolved.schema);
    if !violations.is_empty() {
        return Err(PerturbError::Integrity(format!(
            "evolved schema invalid after {}: {}",
            ptype, violations[0].message
        )));
    }
    if let Gold::Sql(sql) = &out.evolved.gold {
        extract_refs(sql, &out.evolved.schema).map_err(|e| {
            PerturbError::Integrity(format!("evolved gold inconsistent after {ptype}: {e}"))
        })?;
    }
    Ok(out)
}

fn assemble(
    base: &Instance,
    record: EvolutionRecord,
    gold: Gold,
    needs_review: bool,
) -> Result<PerturbedInstance, PerturbError> {
    let evolved_schema = apply_record(&record, &base.schema)?;
    Ok(PerturbedInstance {
        base: base.clone(),
        evolved: Instance {
            instance_id: base.instance_id.clone(),
            db_id: base.db_id.clone(),
            nlq: base.nlq.clone(),
            schema: evolved_schema,
            gold,
        },
        record,
        needs_review,
    })
}

fn sample_count(rng: &mut ChaCha8Rng, range: (u32, u32), pool: usize) -> usize {
    let (lo, hi) = (range.0.min(range.1), range.0.max(range.1));
    let want = if lo == hi { lo } else { rng.gen_range(lo..=hi) } as usize;
    want.min(pool)
}

/// Partial Fisher-Yates: distinct indices in draw order.
fn sample_indices(rng: &mut ChaCha8Rng, n: usize, len: usize) -> Vec<usize> {
    let mut indices: Vec<usize> = (0..len).collect();
    let n = n.min(len);
    for i in 0..n {
        let j = rng.gen_range(i..len);
        indices.swap(i, j);
    }
    indices.truncate(n);
    indices
}

fn refs_of(gold: &str, schema: &Schema) -> Result<SqlRefs, PerturbError> {
    extract_refs(gold, schema).map_err(PerturbError::Sql)
}

fn synth_error(e: crate::synth::SynthError) -> PerturbError {
    PerturbError::SynthesisExhausted(e.to_string())
}

// ---------------------------------------------------------------------------

fn add_columns(
    instance: &Instance,
    gold: &str,
    opts: &PerturbOptions,
    synth: &Synthesizer,
    rng: &mut ChaCha8Rng,
) -> Result<PerturbedInstance, PerturbError> {
    let schema = &instance.schema;
    let mut record = EvolutionRecord::empty(PType::AddColumns);
    let mut working = schema.clone();

    for table in &schema.tables {
        let original_width = table.columns.len() as u32;
        let want = sample_count(rng, opts.add_columns_per_table, original_width as usize);
        if want == 0 {
            continue;
        }

        let mut collected: Vec<(String, String)> = Vec::new();
        let mut attempts = 0;
        while collected.len() < want {
            if attempts >= opts.retry_budget {
                return Err(PerturbError::SynthesisExhausted(format!(
                    "could not obtain {want} non-conflicting columns for `{}`",
                    table.name
                )));
            }
            attempts += 1;

            let current = working.table(&table.name).unwrap();
            let mut forbidden: Vec<String> =
                current.columns.iter().map(|c| c.name.clone()).collect();
            forbidden.extend(collected.iter().map(|(n, _)| n.clone()));
            let mut request = SynthRequest::new(
                SynthKind::NewColumns,
                render_ddl(&table_only(&working, &table.name)),
            );
            request.subject = vec![table.name.clone()];
            request.count = want - collected.len();
            request.forbidden = forbidden.clone();

            let response = synth.propose(&request).map_err(synth_error)?;
            let Proposals::NewColumns(pairs) = response.proposals else {
                return Err(PerturbError::SynthesisExhausted("wrong payload kind".into()));
            };
            // Filter out redundant proposals: clashes with existing names
            // or duplicates within the batch.
            for (name, ty) in pairs {
                if collected.len() >= want {
                    break;
                }
                let clash = forbidden.iter().any(|f| ci(f) == ci(&name))
                    || collected.iter().any(|(n, _)| ci(n) == ci(&name));
                if !clash && !name.is_empty() {
                    collected.push((name, ty));
                }
            }
        }

        for (name, ty) in collected {
            let width = working.table(&table.name).unwrap().columns.len();
            let position = rng.gen_range(0..=width);
            let column = Column::new(name, ty);
            record.added.push(AddedItem::Column {
                table: table.name.clone(),
                column: column.clone(),
                position,
            });
            working
                .table_mut(&table.name)
                .unwrap()
                .columns
                .insert(position, column);
            record.manipulated_count += 1;
        }
    }

    assemble(instance, record, Gold::Sql(gold.to_string()), false)
}

fn table_only(schema: &Schema, table: &str) -> Schema {
    let mut out = Schema::new(schema.db_id.clone());
    if let Some(t) = schema.table(table) {
        out.tables.push(t.clone());
    }
    out
}

fn remove_columns(
    instance: &Instance,
    gold: &str,
    opts: &PerturbOptions,
    rng: &mut ChaCha8Rng,
) -> Result<PerturbedInstance, PerturbError> {
    let schema = &instance.schema;
    let refs = refs_of(gold, schema)?;

    let pool: Vec<(String, String)> = schema
        .tables
        .iter()
        .flat_map(|t| {
            t.columns.iter().filter_map(|c| {
                let in_gold = refs.columns.contains(&(ci(&t.name), ci(&c.name)));
                if in_gold || t.is_pk_member(&c.name) {
                    None
                } else {
                    Some((t.name.clone(), c.name.clone()))
                }
            })
        })
        .collect();
    if pool.is_empty() {
        return Err(PerturbError::NoEligibleColumns(
            "every column is referenced by gold or is a primary key member".into(),
        ));
    }

    let want = sample_count(rng, opts.remove_columns_count, pool.len()).max(1);
    let chosen = pick_removals(rng, schema, &pool, want);
    if chosen.is_empty() {
        return Err(PerturbError::NoEligibleColumns(
            "removals would leave a table without columns".into(),
        ));
    }

    let mut record = EvolutionRecord::empty(PType::RemoveColumns);
    for (table, column) in chosen {
        record.removed.push(RemovedItem::Column { table, column });
        record.manipulated_count += 1;
    }
    assemble(instance, record, Gold::Sql(gold.to_string()), false)
}

/// Sample removals while keeping at least one column in every table.
fn pick_removals(
    rng: &mut ChaCha8Rng,
    schema: &Schema,
    pool: &[(String, String)],
    want: usize,
) -> Vec<(String, String)> {
    let mut remaining: std::collections::BTreeMap<String, usize> = schema
        .tables
        .iter()
        .map(|t| (ci(&t.name), t.columns.len()))
        .collect();
    let mut chosen = Vec::new();
    for idx in sample_indices(rng, pool.len(), pool.len()) {
        if chosen.len() >= want {
            break;
        }
        let (table, column) = &pool[idx];
        let left = remaining.get_mut(&ci(table)).unwrap();
        if *left <= 1 {
            continue;
        }
        *left -= 1;
        chosen.push((table.clone(), column.clone()));
    }
    chosen
}

fn remove_columns_in_sql(
    instance: &Instance,
    gold: &str,
    opts: &PerturbOptions,
    rng: &mut ChaCha8Rng,
) -> Result<PerturbedInstance, PerturbError> {
    let schema = &instance.schema;
    let refs = refs_of(gold, schema)?;

    // Only referenced, non-PK columns are eligible; canonical spelling
    // comes from the schema.
    let pool: Vec<(String, String)> = refs
        .columns
        .iter()
        .filter_map(|(t, c)| {
            let table = schema.table(t)?;
            let column = table.column(c)?;
            if table.is_pk_member(&column.name) {
                None
            } else {
                Some((table.name.clone(), column.name.clone()))
            }
        })
        .collect();
    if pool.is_empty() {
        return Err(PerturbError::NoEligibleColumns(
            "gold references no removable column".into(),
        ));
    }

    let want = sample_count(rng, opts.remove_in_sql_count, pool.len()).max(1);
    let chosen = pick_removals(rng, schema, &pool, want);
    if chosen.is_empty() {
        return Err(PerturbError::NoEligibleColumns(
            "removals would leave a table without columns".into(),
        ));
    }

    let mut record = EvolutionRecord::empty(PType::RemoveColumnsInSql);
    for (table, column) in chosen {
        record.removed.push(RemovedItem::Column { table, column });
        record.manipulated_count += 1;
    }
    assemble(instance, record, Gold::Refusal(RefusalKind::Column), false)
}

fn rename_columns(
    instance: &Instance,
    gold: &str,
    opts: &PerturbOptions,
    synth: &Synthesizer,
    rng: &mut ChaCha8Rng,
) -> Result<PerturbedInstance, PerturbError> {
    let schema = &instance.schema;
    let all: Vec<(String, String)> = schema
        .tables
        .iter()
        .flat_map(|t| t.columns.iter().map(|c| (t.name.clone(), c.name.clone())))
        .collect();
    if all.is_empty() {
        return Err(PerturbError::NoEligibleColumns("schema has no columns".into()));
    }
    let want = sample_count(rng, opts.rename_columns_count, all.len()).max(1);
    let chosen: Vec<(String, String)> = sample_indices(rng, want, all.len())
        .into_iter()
        .map(|i| all[i].clone())
        .collect();

    let mut map = RenameMap::default();
    for (table, column) in &chosen {
        let owner = schema.table(table).unwrap();
        let mut forbidden: Vec<String> = owner.columns.iter().map(|c| c.name.clone()).collect();
        forbidden.extend(
            map.column_renames
                .iter()
                .filter(|r| ci(&r.table) == ci(table))
                .map(|r| r.new.clone()),
        );

        let mut accepted = None;
        for _ in 0..opts.retry_budget {
            let mut request =
                SynthRequest::new(SynthKind::ColumnRename, render_ddl(&table_only(schema, table)));
            request.subject = vec![table.clone(), column.clone()];
            request.forbidden = forbidden.clone();
            let response = synth.propose(&request).map_err(synth_error)?;
            let Proposals::Names(names) = response.proposals else {
                continue;
            };
            let candidate = match names.first() {
                Some(n) => n.clone(),
                None => continue,
            };
            if forbidden.iter().any(|f| ci(f) == ci(&candidate)) {
                forbidden.push(candidate);
                continue;
            }
            accepted = Some(candidate);
            break;
        }
        let new = accepted.ok_or_else(|| {
            PerturbError::SynthesisExhausted(format!(
                "no non-conflicting rename for `{table}.{column}`"
            ))
        })?;
        map.column_renames.push(ColumnRename {
            table: table.clone(),
            old: column.clone(),
            new,
        });
    }

    map.check_against(schema)
        .map_err(PerturbError::SynthesisExhausted)?;
    let new_gold = rewrite_identifiers(gold, &map, schema)?;
    let mut record = EvolutionRecord::empty(PType::RenameColumns);
    record.manipulated_count = map.column_renames.len() as u32;
    record.renames = map;
    assemble(instance, record, Gold::Sql(new_gold), false)
}

fn split_columns(
    instance: &Instance,
    gold: &str,
    rng: &mut ChaCha8Rng,
) -> Result<PerturbedInstance, PerturbError> {
    let schema = &instance.schema;
    let candidates: Vec<_> = schema
        .tables
        .iter()
        .flat_map(|t| split_candidates(schema, t))
        .collect();
    if candidates.is_empty() {
        return Err(PerturbError::NoEligibleColumns(
            "no column matches a split pattern".into(),
        ));
    }
    let split = candidates[rng.gen_range(0..candidates.len())].clone();
    let rewrite = rewrite_for_column_split(gold, &split, schema)?;

    let mut record = EvolutionRecord::empty(PType::SplitColumns);
    record.manipulated_count = split.components.len() as u32;
    record.column_split = Some(split);
    assemble(instance, record, Gold::Sql(rewrite.sql), rewrite.needs_review)
}

fn merge_columns(
    instance: &Instance,
    gold: &str,
    rng: &mut ChaCha8Rng,
) -> Result<PerturbedInstance, PerturbError> {
    let schema = &instance.schema;
    let candidates: Vec<_> = schema
        .tables
        .iter()
        .flat_map(|t| merge_candidates(schema, t))
        .collect();
    if candidates.is_empty() {
        return Err(PerturbError::NoEligibleColumns(
            "no co-located column group matches a merge pattern".into(),
        ));
    }
    let merge = candidates[rng.gen_range(0..candidates.len())].clone();
    let rewrite = rewrite_for_column_merge(gold, &merge, schema)?;

    let mut record = EvolutionRecord::empty(PType::MergeColumns);
    record.manipulated_count = merge.components.len() as u32;
    record.column_merge = Some(merge);
    assemble(instance, record, Gold::Sql(rewrite.sql), rewrite.needs_review)
}

fn add_tables(
    instance: &Instance,
    gold: &str,
    opts: &PerturbOptions,
    db_pool: Option<&Schema>,
    rng: &mut ChaCha8Rng,
) -> Result<PerturbedInstance, PerturbError> {
    let schema = &instance.schema;
    let pool_schema = db_pool.ok_or_else(|| {
        PerturbError::NoEligibleTables("no full-database pool supplied".into())
    })?;

    let present = schema.table_name_keys();
    let extras: Vec<&Table> = pool_schema
        .tables
        .iter()
        .filter(|t| !present.contains(&ci(&t.name)))
        .collect();
    if extras.is_empty() {
        return Err(PerturbError::NoEligibleTables(
            "database has no tables beyond the relevant schema".into(),
        ));
    }

    let capped = (
        opts.add_tables_count.0.clamp(1, 3),
        opts.add_tables_count.1.clamp(1, 3),
    );
    let want = sample_count(rng, capped, extras.len()).max(1);
    let chosen: Vec<&Table> = sample_indices(rng, want, extras.len())
        .into_iter()
        .map(|i| extras[i])
        .collect();

    let mut record = EvolutionRecord::empty(PType::AddTables);
    let mut included: std::collections::BTreeSet<String> = present;
    for t in &chosen {
        included.insert(ci(&t.name));
    }
    for table in chosen {
        // Keep FK edges from the full database whose endpoints are both
        // present after the addition and that touch this table.
        let fks: Vec<ForeignKey> = pool_schema
            .foreign_keys
            .iter()
            .filter(|fk| {
                fk.touches_table(&table.name)
                    && included.contains(&ci(&fk.child_table))
                    && included.contains(&ci(&fk.parent_table))
            })
            .filter(|fk| {
                // The partner endpoint's column must exist in the relevant
                // (possibly pruned) schema image.
                let endpoint_ok = |t: &str, c: &str| {
                    if ci(t) == ci(&table.name) {
                        table.has_column(c)
                    } else {
                        schema
                            .table(t)
                            .map(|rt| rt.has_column(c))
                            .unwrap_or(false)
                    }
                };
                endpoint_ok(&fk.child_table, &fk.child_column)
                    && endpoint_ok(&fk.parent_table, &fk.parent_column)
            })
            .cloned()
            .collect();
        record.added.push(AddedItem::Table {
            table: table.clone(),
            foreign_keys: dedup_fks(fks, &record),
        });
        record.manipulated_count += 1;
    }

    assemble(instance, record, Gold::Sql(gold.to_string()), false)
}

fn dedup_fks(fks: Vec<ForeignKey>, record: &EvolutionRecord) -> Vec<ForeignKey> {
    let mut seen: std::collections::BTreeSet<ForeignKey> = record
        .added
        .iter()
        .filter_map(|a| match a {
            AddedItem::Table { foreign_keys, .. } => Some(foreign_keys.clone()),
            _ => None,
        })
        .flatten()
        .collect();
    fks.into_iter().filter(|fk| seen.insert(fk.clone())).collect()
}

fn remove_tables(
    instance: &Instance,
    gold: &str,
    rng: &mut ChaCha8Rng,
) -> Result<PerturbedInstance, PerturbError> {
    let schema = &instance.schema;
    let refs = refs_of(gold, schema)?;
    let referenced: Vec<String> = refs
        .tables
        .iter()
        .filter_map(|t| schema.table(t).map(|t| t.name.clone()))
        .collect();
    if referenced.is_empty() {
        return Err(PerturbError::NoEligibleTables(
            "gold references no table".into(),
        ));
    }
    let victim = referenced[rng.gen_range(0..referenced.len())].clone();

    let mut record = EvolutionRecord::empty(PType::RemoveTables);
    record.removed.push(RemovedItem::Table { name: victim });
    record.manipulated_count = 1;
    assemble(instance, record, Gold::Refusal(RefusalKind::Table), false)
}

fn rename_tables(
    instance: &Instance,
    gold: &str,
    opts: &PerturbOptions,
    synth: &Synthesizer,
    rng: &mut ChaCha8Rng,
) -> Result<PerturbedInstance, PerturbError> {
    let schema = &instance.schema;
    if schema.tables.is_empty() {
        return Err(PerturbError::NoEligibleTables("schema has no tables".into()));
    }
    let want = sample_count(rng, opts.rename_tables_count, schema.tables.len()).max(1);
    let chosen: Vec<String> = sample_indices(rng, want, schema.tables.len())
        .into_iter()
        .map(|i| schema.tables[i].name.clone())
        .collect();

    let mut map = RenameMap::default();
    for table in &chosen {
        let mut forbidden: Vec<String> = schema.tables.iter().map(|t| t.name.clone()).collect();
        forbidden.extend(map.table_renames.iter().map(|r| r.new.clone()));

        let mut accepted = None;
        for _ in 0..opts.retry_budget {
            let mut request =
                SynthRequest::new(SynthKind::TableRename, render_ddl(&table_only(schema, table)));
            request.subject = vec![table.clone()];
            request.forbidden = forbidden.clone();
            let response = synth.propose(&request).map_err(synth_error)?;
            let Proposals::Names(names) = response.proposals else {
                continue;
            };
            let candidate = match names.first() {
                Some(n) => n.clone(),
                None => continue,
            };
            if forbidden.iter().any(|f| ci(f) == ci(&candidate)) {
                forbidden.push(candidate);
                continue;
            }
            accepted = Some(candidate);
            break;
        }
        let new = accepted.ok_or_else(|| {
            PerturbError::SynthesisExhausted(format!("no non-conflicting rename for `{table}`"))
        })?;
        map.table_renames.push(crate::sql::TableRename {
            old: table.clone(),
            new,
        });
    }

    map.check_against(schema)
        .map_err(PerturbError::SynthesisExhausted)?;
    let new_gold = rewrite_identifiers(gold, &map, schema)?;
    let mut record = EvolutionRecord::empty(PType::RenameTables);
    record.manipulated_count = map.table_renames.len() as u32;
    record.renames = map;
    assemble(instance, record, Gold::Sql(new_gold), false)
}

fn split_tables(
    instance: &Instance,
    gold: &str,
    opts: &PerturbOptions,
    synth: &Synthesizer,
    rng: &mut ChaCha8Rng,
) -> Result<PerturbedInstance, PerturbError> {
    let schema = &instance.schema;
    let eligible: Vec<&Table> = schema
        .tables
        .iter()
        .filter(|t| !t.primary_key.is_empty() && t.non_pk_columns().len() >= 2)
        .collect();
    if eligible.is_empty() {
        return Err(PerturbError::NoEligibleTables(
            "no table has a primary key and at least two non-key columns".into(),
        ));
    }

    let order = sample_indices(rng, eligible.len(), eligible.len());
    let mut last_err = PerturbError::NoEligibleTables("split candidates exhausted".into());
    for idx in order {
        let source = eligible[idx];
        let plan = match propose_split_plan(schema, source, opts, synth) {
            Ok(plan) => plan,
            Err(e) => {
                last_err = e;
                continue;
            }
        };
        match rewrite_for_split(gold, &plan, schema) {
            Ok(rewrite) => {
                let mut record = EvolutionRecord::empty(PType::SplitTables);
                record.manipulated_count = plan.parts.len() as u32;
                record.split_plan = Some(plan);
                return assemble(
                    instance,
                    record,
                    Gold::Sql(rewrite.sql),
                    rewrite.needs_review,
                );
            }
            Err(SqlError::UnsupportedShape(detail)) => {
                last_err = PerturbError::UnsupportedShape(detail);
                continue;
            }
            Err(e) => return Err(e.into()),
        }
    }
    Err(last_err)
}

fn propose_split_plan(
    schema: &Schema,
    source: &Table,
    opts: &PerturbOptions,
    synth: &Synthesizer,
) -> Result<SplitPlan, PerturbError> {
    let mut forbidden: Vec<String> = schema.tables.iter().map(|t| t.name.clone()).collect();
    for _ in 0..opts.retry_budget {
        let mut request = SynthRequest::new(
            SynthKind::SplitPlan,
            render_ddl(&table_only(schema, &source.name)),
        );
        request.subject = vec![source.name.clone()];
        request.forbidden = forbidden.clone();
        let response = synth.propose(&request).map_err(synth_error)?;
        let Proposals::SplitParts(parts) = response.proposals else {
            continue;
        };
        let plan = SplitPlan {
            source_table: source.name.clone(),
            parts,
            pk: source.primary_key.clone(),
        };
        match plan.check_against(schema) {
            Ok(()) => return Ok(plan),
            Err(_) => {
                // Proposals are never trusted: reject and re-ask with the
                // used names added to the forbidden list.
                for (name, _) in &plan.parts {
                    if !forbidden.iter().any(|f| ci(f) == ci(name)) {
                        forbidden.push(name.clone());
                    }
                }
            }
        }
    }
    Err(PerturbError::SynthesisExhausted(format!(
        "no valid split plan for `{}`",
        source.name
    )))
}

fn merge_tables(
    instance: &Instance,
    gold: &str,
    opts: &PerturbOptions,
    synth: &Synthesizer,
    rng: &mut ChaCha8Rng,
) -> Result<PerturbedInstance, PerturbError> {
    let schema = &instance.schema;
    let pairs = mergeable_pairs(schema);
    if pairs.is_empty() {
        return Err(PerturbError::NoEligibleTables(
            "no FK-connected or PK-aligned table pair is safely mergeable".into(),
        ));
    }
    let pair = pairs[rng.gen_range(0..pairs.len())].clone();
    let plan = propose_merge_plan(schema, &pair, opts, synth)?;

    let refs = refs_of(gold, schema)?;
    let rewrite = rewrite_for_merge(gold, &plan, schema)?;

    // Preservation judgement: rows of the merged table correspond to rows
    // of the FK child; parent-only references lose or duplicate rows.
    let child_key = ci(&pair.link.child_table);
    let referenced: std::collections::BTreeSet<String> = plan
        .source_tables
        .iter()
        .map(|t| ci(t))
        .filter(|t| refs.tables.contains(t))
        .collect();
    let needs_review = if !rewrite.clean {
        true
    } else if referenced.is_empty() {
        false
    } else if referenced.len() == plan.source_tables.len() {
        false
    } else {
        !(referenced.len() == 1 && referenced.contains(&child_key) && !pair.pk_aligned)
    };

    let mut record = EvolutionRecord::empty(PType::MergeTables);
    record.manipulated_count = plan.source_tables.len() as u32;
    record.merge_plan = Some(plan);
    assemble(instance, record, Gold::Sql(rewrite.sql), needs_review)
}

#[derive(Debug, Clone)]
struct MergePair {
    link: ForeignKey,
    pk_aligned: bool,
}

/// FK-connected pairs where the merge cannot strand third-party rows:
/// exactly one FK between the two tables and no other inbound reference on
/// the row-dropping side. PK-aligned pairs require both sides unreferenced.
fn mergeable_pairs(schema: &Schema) -> Vec<MergePair> {
    let mut out = Vec::new();
    for fk in &schema.foreign_keys {
        if ci(&fk.child_table) == ci(&fk.parent_table) {
            continue;
        }
        let (child, parent) = (&fk.child_table, &fk.parent_table);
        let (Some(child_t), Some(parent_t)) = (schema.table(child), schema.table(parent)) else {
            continue;
        };
        if child_t.primary_key.is_empty() || parent_t.primary_key.is_empty() {
            continue;
        }
        let between = schema
            .foreign_keys
            .iter()
            .filter(|f| {
                (ci(&f.child_table) == ci(child) && ci(&f.parent_table) == ci(parent))
                    || (ci(&f.child_table) == ci(parent) && ci(&f.parent_table) == ci(child))
            })
            .count();
        if between != 1 {
            continue;
        }
        // Rows of the parent without children are dropped by the merge;
        // any other table referencing the parent could dangle.
        let parent_inbound = schema.inbound_fks(parent).len();
        if parent_inbound != 1 {
            continue;
        }
        out.push(MergePair {
            link: fk.clone(),
            pk_aligned: false,
        });
    }

    // Identical-PK pairs without an FK between them.
    for (i, a) in schema.tables.iter().enumerate() {
        for b in schema.tables.iter().skip(i + 1) {
            if a.primary_key.len() != 1 || b.primary_key.len() != 1 {
                continue;
            }
            if ci(&a.primary_key[0]) != ci(&b.primary_key[0]) {
                continue;
            }
            let any_fk_between = schema.foreign_keys.iter().any(|f| {
                f.touches_table(&a.name) && f.touches_table(&b.name)
            });
            if any_fk_between {
                continue;
            }
            if !schema.inbound_fks(&a.name).is_empty()
                || !schema.inbound_fks(&b.name).is_empty()
            {
                continue;
            }
            out.push(MergePair {
                link: ForeignKey {
                    child_table: a.name.clone(),
                    child_column: a.primary_key[0].clone(),
                    parent_table: b.name.clone(),
                    parent_column: b.primary_key[0].clone(),
                },
                pk_aligned: true,
            });
        }
    }
    out
}

fn propose_merge_plan(
    schema: &Schema,
    pair: &MergePair,
    opts: &PerturbOptions,
    synth: &Synthesizer,
) -> Result<MergePlan, PerturbError> {
    let child = pair.link.child_table.clone();
    let parent = pair.link.parent_table.clone();
    let mut context_schema = Schema::new(schema.db_id.clone());
    context_schema.tables.push(schema.table(&child).unwrap().clone());
    context_schema.tables.push(schema.table(&parent).unwrap().clone());
    context_schema.foreign_keys = vec![pair.link.clone()];

    let mut forbidden: Vec<String> = schema.tables.iter().map(|t| t.name.clone()).collect();
    for _ in 0..opts.retry_budget {
        let mut request = SynthRequest::new(SynthKind::MergePlan, render_ddl(&context_schema));
        request.subject = vec![child.clone(), parent.clone()];
        request.forbidden = forbidden.clone();
        request.link = Some(pair.link.clone());
        let response = synth.propose(&request).map_err(synth_error)?;
        let Proposals::Merge {
            merged_name,
            renames,
        } = response.proposals
        else {
            continue;
        };

        let mut column_renames: Vec<ColumnRename> = renames
            .into_iter()
            .map(|(table, old, new)| ColumnRename { table, old, new })
            .collect();
        // The link child column collapses into the parent column; record
        // the mapping when the spellings differ so query rewriting and
        // migration agree.
        let parent_link_final = column_renames
            .iter()
            .find(|r| {
                ci(&r.table) == ci(&parent) && ci(&r.old) == ci(&pair.link.parent_column)
            })
            .map(|r| r.new.clone())
            .unwrap_or_else(|| pair.link.parent_column.clone());
        if ci(&pair.link.child_column) != ci(&parent_link_final) {
            column_renames.push(ColumnRename {
                table: child.clone(),
                old: pair.link.child_column.clone(),
                new: parent_link_final,
            });
        }

        // Kept PK: the child side keeps row multiplicity, so its key stays
        // unique in the merged table.
        let kept = (
            child.clone(),
            schema.table(&child).unwrap().primary_key.clone(),
        );
        let plan = MergePlan {
            source_tables: vec![child.clone(), parent.clone()],
            merged_name: merged_name.clone(),
            kept_pk: kept,
            column_renames,
            join_links: vec![pair.link.clone()],
            pk_aligned: pair.pk_aligned,
        };
        match plan.check_against(schema) {
            Ok(()) => return Ok(plan),
            Err(_) => {
                if !forbidden.iter().any(|f| ci(f) == ci(&merged_name)) {
                    forbidden.push(merged_name);
                }
            }
        }
    }
    Err(PerturbError::SynthesisExhausted(format!(
        "no valid merge plan for `{child}`+`{parent}`"
    )))
}
