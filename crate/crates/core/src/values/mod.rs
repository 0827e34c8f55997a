//! Synthetic databases: populate a schema with typed rows that respect
//! primary keys and foreign keys, migrate data across an evolution record,
//! and execute the supported SELECT dialect over the rows in memory.

mod engine;
mod migrate;

pub use engine::{execute, ExecError};
pub use migrate::migrate;

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::rng::derive_stream;
use crate::schema::{ci, quote_ident, render_ddl, Column, Schema};

/// A stored or computed SQL value. Ordering follows storage classes:
/// NULL, then numbers, then text.
#[derive(Debug, Clone)]
pub enum Value {
    Null,
    Int(i64),
    Real(f64),
    Text(String),
}

impl Value {
    fn class(&self) -> u8 {
        match self {
            Value::Null => 0,
            Value::Int(_) | Value::Real(_) => 1,
            Value::Text(_) => 2,
        }
    }

    pub fn is_null(&self) -> bool {
        matches!(self, Value::Null)
    }

    /// Text rendering used by concatenation and dumps.
    pub fn render_text(&self) -> String {
        match self {
            Value::Null => String::new(),
            Value::Int(i) => i.to_string(),
            Value::Real(r) => {
                if r.fract() == 0.0 && r.is_finite() {
                    format!("{r:.1}")
                } else {
                    format!("{r}")
                }
            }
            Value::Text(s) => s.clone(),
        }
    }
}

impl PartialEq for Value {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == std::cmp::Ordering::Equal
    }
}

impl Eq for Value {}

impl PartialOrd for Value {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Value {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        use std::cmp::Ordering;
        match (self, other) {
            (Value::Null, Value::Null) => Ordering::Equal,
            (Value::Int(a), Value::Int(b)) => a.cmp(b),
            (Value::Real(a), Value::Real(b)) => a.partial_cmp(b).unwrap_or(Ordering::Equal),
            (Value::Int(a), Value::Real(b)) => {
                (*a as f64).partial_cmp(b).unwrap_or(Ordering::Equal)
            }
            (Value::Real(a), Value::Int(b)) => {
                a.partial_cmp(&(*b as f64)).unwrap_or(Ordering::Equal)
            }
            (Value::Text(a), Value::Text(b)) => a.cmp(b),
            (a, b) => a.class().cmp(&b.class()),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Null => f.write_str("NULL"),
            other => f.write_str(&other.render_text()),
        }
    }
}

/// Rows per table, keyed case-insensitively.
#[derive(Debug, Clone, PartialEq)]
pub struct Database {
    pub schema: Schema,
    rows: BTreeMap<String, Vec<Vec<Value>>>,
}

impl Database {
    pub fn new(schema: Schema) -> Self {
        let rows = schema.tables.iter().map(|t| (ci(&t.name), Vec::new())).collect();
        Database { schema, rows }
    }

    pub fn rows(&self, table: &str) -> Option<&Vec<Vec<Value>>> {
        self.rows.get(&ci(table))
    }

    pub fn set_rows(&mut self, table: &str, rows: Vec<Vec<Value>>) {
        self.rows.insert(ci(table), rows);
    }

    /// Check data-level invariants: arity, PK uniqueness, FK containment.
    pub fn check(&self) -> Result<(), String> {
        for table in &self.schema.tables {
            let rows = self
                .rows(&table.name)
                .ok_or_else(|| format!("missing rows for `{}`", table.name))?;
            for row in rows {
                if row.len() != table.columns.len() {
                    return Err(format!(
                        "arity mismatch in `{}`: {} != {}",
                        table.name,
                        row.len(),
                        table.columns.len()
                    ));
                }
            }
            if !table.primary_key.is_empty() {
                let idx: Vec<usize> = table
                    .primary_key
                    .iter()
                    .filter_map(|p| table.column_index(p))
                    .collect();
                let mut seen = std::collections::BTreeSet::new();
                for row in rows {
                    let key: Vec<Value> = idx.iter().map(|i| row[*i].clone()).collect();
                    if !seen.insert(key) {
                        return Err(format!("duplicate primary key in `{}`", table.name));
                    }
                }
            }
        }
        for fk in &self.schema.foreign_keys {
            let parent = self.schema.table(&fk.parent_table).unwrap();
            let pi = parent.column_index(&fk.parent_column).unwrap();
            let pool: std::collections::BTreeSet<Value> = self
                .rows(&fk.parent_table)
                .map(|rows| rows.iter().map(|r| r[pi].clone()).collect())
                .unwrap_or_default();
            let child = self.schema.table(&fk.child_table).unwrap();
            let cix = child.column_index(&fk.child_column).unwrap();
            for row in self.rows(&fk.child_table).into_iter().flatten() {
                let v = &row[cix];
                if !v.is_null() && !pool.contains(v) {
                    return Err(format!(
                        "dangling FK value {v} in {}.{}",
                        fk.child_table, fk.child_column
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Query output: labels plus rows compared as multisets downstream unless
/// the query carries a top-level ORDER BY.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultSet {
    pub column_labels: Vec<String>,
    pub rows: Vec<Vec<Value>>,
}

impl ResultSet {
    /// Multiset equality, ignoring labels and row order.
    pub fn multiset_eq(&self, other: &ResultSet) -> bool {
        if self.rows.len() != other.rows.len() {
            return false;
        }
        let mut a = self.rows.clone();
        let mut b = other.rows.clone();
        a.sort();
        b.sort();
        a == b
    }
}

#[derive(Debug, Error)]
pub enum ValueError {
    #[error("foreign-key cycle cannot be satisfied: {0}")]
    CyclicFkUnsatisfiable(String),
    #[error("cannot generate data: {0}")]
    Unsatisfiable(String),
    #[error("record cannot drive this migration: {0}")]
    MigrationUnsupported(String),
}

#[derive(Debug, Clone)]
pub struct PopulateOptions {
    pub rows_per_table: usize,
    pub seed: u64,
}

impl Default for PopulateOptions {
    fn default() -> Self {
        PopulateOptions {
            rows_per_table: 16,
            seed: 0,
        }
    }
}

const WORDS: &[&str] = &[
    "alpha", "bravo", "cedar", "delta", "ember", "frost", "grove", "harbor", "iris", "jade",
    "koral", "lumen", "maple", "north", "ocean", "pine", "quartz", "ridge", "sable", "tundra",
    "umber", "violet", "willow", "zephyr",
];

const FIRST_NAMES: &[&str] = &[
    "Alice", "Bruno", "Carmen", "Dmitri", "Elena", "Farid", "Greta", "Hugo", "Ines", "Jonas",
    "Kira", "Luis", "Mona", "Nils", "Oda", "Pavel",
];

const LAST_NAMES: &[&str] = &[
    "Abara", "Berg", "Castro", "Duran", "Eklund", "Farkas", "Gruber", "Haas", "Ito", "Jansen",
    "Kovac", "Lindt", "Moreau", "Novak", "Olsen", "Petit",
];

const PLACES: &[&str] = &[
    "Arden", "Brookfield", "Calder", "Dunmore", "Eastvale", "Fairview", "Glenholm", "Hartley",
    "Irwell", "Jurmala", "Kentfield", "Lindholm",
];

fn kind_of(column: &Column) -> ValueKind {
    let ty = column.data_type.to_uppercase();
    let name = ci(&column.name);
    if name.contains("year") {
        ValueKind::Year
    } else if name.contains("month") {
        ValueKind::Month
    } else if name.contains("day") {
        ValueKind::Day
    } else if ty.starts_with("INT") {
        ValueKind::Int
    } else if ty.starts_with("REAL")
        || ty.starts_with("FLOAT")
        || ty.starts_with("DOUBLE")
        || ty.starts_with("NUM")
        || ty.starts_with("DEC")
    {
        ValueKind::Real
    } else if ty.starts_with("DATE") || ty.starts_with("TIME") || name.contains("date") {
        ValueKind::Date
    } else if name.contains("address") {
        ValueKind::Address
    } else if name.contains("first") {
        ValueKind::FirstName
    } else if name.contains("last") {
        ValueKind::LastName
    } else if name.contains("name") {
        ValueKind::FullName
    } else if name.contains("city") || name.contains("state") || name.contains("street") {
        ValueKind::Place
    } else {
        ValueKind::Word
    }
}

enum ValueKind {
    Int,
    Real,
    Date,
    Year,
    Month,
    Day,
    FullName,
    FirstName,
    LastName,
    Address,
    Place,
    Word,
}

fn generate_value<R: Rng + ?Sized>(rng: &mut R, column: &Column) -> Value {
    match kind_of(column) {
        ValueKind::Int => Value::Int(rng.gen_range(0..=20)),
        // Quarters are exact in binary and round-trip through text.
        ValueKind::Real => Value::Real(rng.gen_range(0..=400) as f64 * 0.25),
        ValueKind::Date => Value::Text(format!(
            "{:04}-{:02}-{:02}",
            rng.gen_range(1990..=2020),
            rng.gen_range(1..=12),
            rng.gen_range(1..=28)
        )),
        ValueKind::Year => Value::Text(format!("{:04}", rng.gen_range(1990..=2020))),
        ValueKind::Month => Value::Text(format!("{:02}", rng.gen_range(1..=12))),
        ValueKind::Day => Value::Text(format!("{:02}", rng.gen_range(1..=28))),
        ValueKind::FullName => Value::Text(format!(
            "{} {}",
            FIRST_NAMES[rng.gen_range(0..FIRST_NAMES.len())],
            LAST_NAMES[rng.gen_range(0..LAST_NAMES.len())]
        )),
        ValueKind::FirstName => {
            Value::Text(FIRST_NAMES[rng.gen_range(0..FIRST_NAMES.len())].to_string())
        }
        ValueKind::LastName => {
            Value::Text(LAST_NAMES[rng.gen_range(0..LAST_NAMES.len())].to_string())
        }
        ValueKind::Address => Value::Text(format!(
            "{} {} {}",
            PLACES[rng.gen_range(0..PLACES.len())],
            PLACES[rng.gen_range(0..PLACES.len())],
            PLACES[rng.gen_range(0..PLACES.len())]
        )),
        ValueKind::Place => Value::Text(PLACES[rng.gen_range(0..PLACES.len())].to_string()),
        ValueKind::Word => Value::Text(WORDS[rng.gen_range(0..WORDS.len())].to_string()),
    }
}

/// Literal SQL text drawn from the same pools `populate` fills columns
/// from, so generated predicates are selective on generated data.
pub fn sample_literal(rng: &mut dyn rand::RngCore, column: &Column) -> String {
    match generate_value(rng, column) {
        Value::Int(i) => i.to_string(),
        Value::Real(r) => Value::Real(r).render_text(),
        Value::Text(s) => format!("'{}'", s.replace('\'', "''")),
        Value::Null => "NULL".into(),
    }
}

/// Fill a schema with synthetic rows: parents before children, FK values
/// sampled from parent pools, primary keys unique, deterministic per seed.
pub fn populate(schema: &Schema, opts: &PopulateOptions) -> Result<Database, ValueError> {
    let order = fill_order(schema)?;
    let mut db = Database::new(schema.clone());
    for table_name in order {
        let table = schema.table(&table_name).unwrap().clone();
        let rows = fill_table(&db, &table, schema, opts)?;
        db.set_rows(&table.name, rows);
    }
    debug_assert_eq!(db.check(), Ok(()));
    Ok(db)
}

/// Topological order over the FK graph (parents first). Cycles are broken
/// at nullable FK columns; a cycle of non-nullable links is an error.
fn fill_order(schema: &Schema) -> Result<Vec<String>, ValueError> {
    let keys: Vec<String> = schema.tables.iter().map(|t| ci(&t.name)).collect();
    let mut pending: Vec<String> = keys.clone();
    let mut done: std::collections::BTreeSet<String> = Default::default();
    let mut out = Vec::new();
    // Null-broken edges are skipped when deciding readiness.
    let mut broken: std::collections::BTreeSet<(String, String)> = Default::default();

    while !pending.is_empty() {
        let mut progressed = false;
        let mut next_pending = Vec::new();
        for key in pending.drain(..) {
            let ready = schema
                .foreign_keys
                .iter()
                .filter(|fk| ci(&fk.child_table) == key && ci(&fk.parent_table) != key)
                .all(|fk| {
                    done.contains(&ci(&fk.parent_table))
                        || broken.contains(&(ci(&fk.child_table), ci(&fk.child_column)))
                });
            if ready {
                done.insert(key.clone());
                out.push(key);
                progressed = true;
            } else {
                next_pending.push(key);
            }
        }
        if !progressed {
            // Break the cycle at some nullable FK column among the stuck
            // tables; otherwise the data cannot exist.
            let mut broke = false;
            'outer: for key in &next_pending {
                for fk in &schema.foreign_keys {
                    if ci(&fk.child_table) != *key {
                        continue;
                    }
                    if done.contains(&ci(&fk.parent_table)) {
                        continue;
                    }
                    let nullable = schema
                        .table(&fk.child_table)
                        .and_then(|t| t.column(&fk.child_column))
                        .map(|c| c.nullable)
                        .unwrap_or(false);
                    if nullable {
                        broken.insert((ci(&fk.child_table), ci(&fk.child_column)));
                        broke = true;
                        break 'outer;
                    }
                }
            }
            if !broke {
                return Err(ValueError::CyclicFkUnsatisfiable(format!(
                    "tables {:?} form a non-nullable FK cycle",
                    next_pending
                )));
            }
        }
        pending = next_pending;
    }
    // Map keys back to declared names in schema order for determinism.
    Ok(out
        .into_iter()
        .map(|k| schema.tables.iter().find(|t| ci(&t.name) == k).unwrap().name.clone())
        .collect())
}

fn fill_table(
    db: &Database,
    table: &crate::schema::Table,
    schema: &Schema,
    opts: &PopulateOptions,
) -> Result<Vec<Vec<Value>>, ValueError> {
    use rand::seq::SliceRandom;
    let mut rng = derive_stream(opts.seed, &["populate", &schema.db_id, &table.name]);
    let n = opts.rows_per_table;

    // Column generators decided up front.
    let mut columns: Vec<Vec<Value>> = Vec::with_capacity(table.columns.len());
    for (idx, column) in table.columns.iter().enumerate() {
        let is_pk = table.is_pk_member(&column.name);
        let fk = schema.foreign_keys.iter().find(|fk| {
            ci(&fk.child_table) == ci(&table.name) && ci(&fk.child_column) == ci(&column.name)
        });

        let mut values: Vec<Value> = Vec::with_capacity(n);
        if let Some(fk) = fk {
            let parent_rows = db.rows(&fk.parent_table);
            let pool: Vec<Value> = match parent_rows {
                Some(rows) => {
                    let parent = schema.table(&fk.parent_table).unwrap();
                    let pi = parent.column_index(&fk.parent_column).ok_or_else(|| {
                        ValueError::Unsatisfiable(format!(
                            "FK parent column `{}` missing",
                            fk.parent_column
                        ))
                    })?;
                    rows.iter()
                        .map(|r| r[pi].clone())
                        .filter(|v| !v.is_null())
                        .collect()
                }
                None => Vec::new(),
            };
            if pool.is_empty() {
                // Cycle edge broken earlier, or empty parent: nullable
                // columns take NULL, otherwise the data cannot exist.
                if column.nullable {
                    values = vec![Value::Null; n];
                } else {
                    return Err(ValueError::CyclicFkUnsatisfiable(format!(
                        "no parent values for non-nullable {}.{}",
                        table.name, column.name
                    )));
                }
            } else if is_pk {
                // Unique draw to keep composite/primary keys collision-free.
                let mut shuffled = pool.clone();
                shuffled.shuffle(&mut rng);
                shuffled.dedup();
                if shuffled.len() < n {
                    return Err(ValueError::Unsatisfiable(format!(
                        "parent pool too small for unique FK PK {}.{}",
                        table.name, column.name
                    )));
                }
                values = shuffled.into_iter().take(n).collect();
            } else {
                for _ in 0..n {
                    values.push(pool[rng.gen_range(0..pool.len())].clone());
                }
            }
        } else if is_pk {
            values = unique_values(&mut rng, column, n);
        } else {
            for _ in 0..n {
                if column.nullable && rng.gen_ratio(1, 8) {
                    values.push(Value::Null);
                } else {
                    values.push(generate_value(&mut rng, column));
                }
            }
        }
        debug_assert_eq!(values.len(), n, "column {idx} generated wrong count");
        columns.push(values);
    }

    let mut rows: Vec<Vec<Value>> = (0..n)
        .map(|r| columns.iter().map(|c| c[r].clone()).collect())
        .collect();

    // Composite PK tuples could still collide when two PK columns draw the
    // same pairs; regenerate offending non-FK integer members.
    if table.primary_key.len() > 1 {
        let idx: Vec<usize> = table
            .primary_key
            .iter()
            .filter_map(|p| table.column_index(p))
            .collect();
        let mut seen = std::collections::BTreeSet::new();
        for row in &mut rows {
            let mut key: Vec<Value> = idx.iter().map(|i| row[*i].clone()).collect();
            let mut guard = 0;
            while !seen.insert(key.clone()) {
                for i in &idx {
                    if let Value::Int(v) = row[*i] {
                        row[*i] = Value::Int(v + 1 + guard as i64);
                        break;
                    }
                }
                key = idx.iter().map(|i| row[*i].clone()).collect();
                guard += 1;
                if guard > 10_000 {
                    return Err(ValueError::Unsatisfiable(format!(
                        "cannot make composite PK of `{}` unique",
                        table.name
                    )));
                }
            }
        }
    }
    Ok(rows)
}

/// Distinct values for a primary-key column.
fn unique_values(rng: &mut ChaCha8Rng, column: &Column, n: usize) -> Vec<Value> {
    use rand::seq::SliceRandom;
    let ty = column.data_type.to_uppercase();
    if ty.starts_with("INT") {
        let mut ids: Vec<i64> = (1..=n as i64).collect();
        ids.shuffle(rng);
        return ids.into_iter().map(Value::Int).collect();
    }
    if ty.starts_with("REAL") || ty.starts_with("FLOAT") || ty.starts_with("DOUBLE") {
        let mut ids: Vec<i64> = (1..=n as i64).collect();
        ids.shuffle(rng);
        return ids.into_iter().map(|i| Value::Real(i as f64 * 0.25)).collect();
    }
    // Text-ish keys: word + counter keeps them unique and stable.
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let word = WORDS[rng.gen_range(0..WORDS.len())];
        out.push(Value::Text(format!("{word}_{i:03}")));
    }
    out
}

/// SQLite-compatible dump: the schema's CREATE TABLE statements followed
/// by INSERTs, for cross-checking against a real engine.
pub fn dump_sql(db: &Database) -> String {
    let mut out = render_ddl(&db.schema);
    for table in &db.schema.tables {
        let Some(rows) = db.rows(&table.name) else { continue };
        for row in rows {
            let rendered: Vec<String> = row.iter().map(sql_literal).collect();
            out.push_str(&format!(
                "INSERT INTO {} VALUES ({});\n",
                quote_ident(&table.name),
                rendered.join(", ")
            ));
        }
    }
    out
}

fn sql_literal(v: &Value) -> String {
    match v {
        Value::Null => "NULL".into(),
        Value::Int(i) => i.to_string(),
        Value::Real(r) => Value::Real(*r).render_text(),
        Value::Text(s) => format!("'{}'", s.replace('\'', "''")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::parse_ddl;

    #[test]
    fn clinic_populates_with_valid_invariants() {
        let schema = crate::testkit::clinic_schema();
        let db = populate(&schema, &PopulateOptions { rows_per_table: 10, seed: 1 }).unwrap();
        assert_eq!(db.check(), Ok(()));
        assert_eq!(db.rows("patient").unwrap().len(), 10);
        assert_eq!(db.rows("diagnosis").unwrap().len(), 10);
    }

    #[test]
    fn empty_schema_gives_empty_database() {
        let db = populate(&Schema::new("x"), &PopulateOptions::default()).unwrap();
        assert!(db.schema.tables.is_empty());
    }

    #[test]
    fn nonnullable_fk_cycle_is_rejected() {
        let ddl = "CREATE TABLE a(x INTEGER NOT NULL PRIMARY KEY, b_ref INTEGER NOT NULL, FOREIGN KEY (b_ref) REFERENCES b(y));
                   CREATE TABLE b(y INTEGER NOT NULL PRIMARY KEY, a_ref INTEGER NOT NULL, FOREIGN KEY (a_ref) REFERENCES a(x));";
        let schema = parse_ddl(ddl).unwrap();
        let err = populate(&schema, &PopulateOptions::default()).unwrap_err();
        assert!(matches!(err, ValueError::CyclicFkUnsatisfiable(_)));
    }

    #[test]
    fn nullable_cycle_breaks_with_nulls() {
        let ddl = "CREATE TABLE a(x INTEGER NOT NULL PRIMARY KEY, b_ref INTEGER, FOREIGN KEY (b_ref) REFERENCES b(y));
                   CREATE TABLE b(y INTEGER NOT NULL PRIMARY KEY, a_ref INTEGER, FOREIGN KEY (a_ref) REFERENCES a(x));";
        let schema = parse_ddl(ddl).unwrap();
        let db = populate(&schema, &PopulateOptions::default()).unwrap();
        assert_eq!(db.check(), Ok(()));
    }

    #[test]
    fn populate_is_deterministic() {
        let schema = crate::testkit::clinic_schema();
        let opts = PopulateOptions { rows_per_table: 16, seed: 9 };
        let a = populate(&schema, &opts).unwrap();
        let b = populate(&schema, &opts).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn date_columns_are_fixed_width() {
        let schema = crate::testkit::clinic_schema();
        let db = populate(&schema, &PopulateOptions::default()).unwrap();
        let patient = db.schema.table("patient").unwrap();
        let di = patient.column_index("birth_date").unwrap();
        for row in db.rows("patient").unwrap() {
            if let Value::Text(s) = &row[di] {
                assert_eq!(s.len(), 10, "date `{s}` is not YYYY-MM-DD");
            }
        }
    }
}
