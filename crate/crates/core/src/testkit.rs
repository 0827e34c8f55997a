//! Generators and fixtures shared by property tests, the acceptance suite
//! and downstream experiments: a small clinic schema with a known gold
//! query, plus random schema / query / instance generators.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::perturb::{Gold, Instance};
use crate::schema::{ci, Column, ForeignKey, Schema, Table};

/// Two-table fixture used across the test suite.
pub const CLINIC_DDL: &str = "\
CREATE TABLE patient (
  patient_id INTEGER NOT NULL,
  full_name TEXT,
  birth_date DATE,
  city TEXT,
  PRIMARY KEY (patient_id)
);
CREATE TABLE diagnosis (
  diag_id INTEGER NOT NULL,
  patient_id INTEGER,
  severity INTEGER,
  code TEXT,
  PRIMARY KEY (diag_id),
  FOREIGN KEY (patient_id) REFERENCES patient (patient_id)
);
";

/// Gold query for the clinic fixture.
pub const CLINIC_GOLD: &str = "SELECT COUNT(DISTINCT T1.patient_id) FROM patient AS T1 JOIN diagnosis AS T2 ON T1.patient_id = T2.patient_id WHERE T2.severity > 3";

pub fn clinic_schema() -> Schema {
    let mut s = crate::schema::parse_ddl(CLINIC_DDL).expect("fixture DDL parses");
    s.db_id = "clinic".into();
    s
}

pub fn clinic_instance() -> Instance {
    Instance {
        instance_id: "clinic-0".into(),
        db_id: "clinic".into(),
        nlq: "How many distinct patients have a diagnosis of severity above 3?".into(),
        schema: clinic_schema(),
        gold: Gold::Sql(CLINIC_GOLD.into()),
    }
}

const TABLE_STEMS: &[&str] = &[
    "customer", "invoice", "product", "shipment", "account", "region", "employee", "vendor",
    "ticket", "order_item", "session", "review", "payment", "store", "category", "device",
];

const COLUMN_STEMS: &[&str] = &[
    "code", "status", "amount", "quantity", "score", "label", "city", "notes", "price",
    "weight", "rank", "level", "title", "balance", "count", "grade",
];

/// Options controlling [`random_schema`].
#[derive(Debug, Clone)]
pub struct SchemaGenOptions {
    pub max_tables: usize,
    pub max_columns: usize,
    /// Plant splittable/mergeable column groups (full_name, *_date,
    /// year/month/day triples) so column-level operators have material.
    pub pattern_columns: bool,
    /// Probability that an identifier gets an awkward spelling that forces
    /// quoted rendering.
    pub quoted_ident_rate: f64,
}

impl Default for SchemaGenOptions {
    fn default() -> Self {
        SchemaGenOptions {
            max_tables: 8,
            max_columns: 12,
            pattern_columns: true,
            quoted_ident_rate: 0.0,
        }
    }
}

/// Generate a random valid schema: up to `max_tables` tables of up to
/// `max_columns` columns with random primary keys and a random acyclic
/// foreign-key graph. The result always passes `validate`.
pub fn random_schema(rng: &mut impl Rng, opts: &SchemaGenOptions) -> Schema {
    let mut schema = Schema::new(format!("db{}", rng.gen_range(0..100000)));
    let n_tables = rng.gen_range(1..=opts.max_tables.max(1));

    let mut table_names: Vec<String> = Vec::new();
    for i in 0..n_tables {
        let stem = TABLE_STEMS[rng.gen_range(0..TABLE_STEMS.len())];
        let mut name = if i < TABLE_STEMS.len() && !table_names.iter().any(|n| ci(n) == ci(stem)) {
            stem.to_string()
        } else {
            format!("{stem}_{i}")
        };
        if rng.gen_bool(opts.quoted_ident_rate) {
            name = format!("{name} x");
        }
        table_names.push(name);
    }

    for name in &table_names {
        let mut table = Table::new(name.clone());
        let mut used: Vec<String> = Vec::new();

        let id_col = format!("{}_id", name.replace(' ', "_"));
        table.columns.push(Column::new(id_col.clone(), "INTEGER").not_null());
        used.push(ci(&id_col));

        let n_cols = rng.gen_range(2..=opts.max_columns.max(3));
        let mut remaining = n_cols.saturating_sub(1);

        if opts.pattern_columns && remaining >= 2 && rng.gen_bool(0.4) {
            match rng.gen_range(0..3) {
                0 => {
                    for c in ["full_name", "address"] {
                        if !used.contains(&ci(c)) {
                            table.columns.push(Column::new(c, "TEXT"));
                            used.push(ci(c));
                            remaining = remaining.saturating_sub(1);
                        }
                    }
                }
                1 => {
                    if !used.contains(&ci("start_date")) {
                        table.columns.push(Column::new("start_date", "DATE"));
                        used.push(ci("start_date"));
                        remaining = remaining.saturating_sub(1);
                    }
                }
                _ => {
                    if remaining >= 3 {
                        for c in ["birth_year", "birth_month", "birth_day"] {
                            table.columns.push(Column::new(c, "TEXT"));
                            used.push(ci(c));
                        }
                        remaining = remaining.saturating_sub(3);
                    }
                }
            }
        }

        for _ in 0..remaining {
            let stem = COLUMN_STEMS[rng.gen_range(0..COLUMN_STEMS.len())];
            let mut col = stem.to_string();
            let mut k = 2;
            while used.contains(&ci(&col)) {
                col = format!("{stem}_{k}");
                k += 1;
            }
            if rng.gen_bool(opts.quoted_ident_rate) {
                col = format!("{col} y");
            }
            used.push(ci(&col));
            let ty = match rng.gen_range(0..5) {
                0 => "INTEGER",
                1 => "REAL",
                2 => "DATE",
                _ => "TEXT",
            };
            let mut c = Column::new(col, ty);
            if rng.gen_bool(0.2) {
                c = c.not_null();
            }
            table.columns.push(c);
        }

        // Most tables get the id column as PK; some get none so operators
        // that require a PK see ineligible tables too.
        if rng.gen_bool(0.85) {
            table.primary_key = vec![id_col];
        }
        schema.tables.push(table);
    }

    // Random acyclic FK edges: child table index > parent table index, child
    // column is a fresh INTEGER column referencing the parent PK.
    let n_fks = if schema.tables.len() < 2 {
        0
    } else {
        rng.gen_range(0..=schema.tables.len())
    };
    for _ in 0..n_fks {
        let child_idx = rng.gen_range(1..schema.tables.len());
        let parent_idx = rng.gen_range(0..child_idx);
        let parent = &schema.tables[parent_idx];
        if parent.primary_key.len() != 1 {
            continue;
        }
        let parent_table = parent.name.clone();
        let parent_column = parent.primary_key[0].clone();
        let child = &mut schema.tables[child_idx];
        let base = format!("{}_ref", parent_table.replace(' ', "_"));
        let mut col = base.clone();
        let mut k = 2;
        while child.has_column(&col) {
            col = format!("{base}_{k}");
            k += 1;
        }
        child.columns.push(Column::new(col.clone(), "INTEGER"));
        let child_table = child.name.clone();
        let duplicate = schema.foreign_keys.iter().any(|fk| {
            ci(&fk.child_table) == ci(&child_table) && ci(&fk.child_column) == ci(&col)
        });
        if !duplicate {
            schema.foreign_keys.push(ForeignKey {
                child_table,
                child_column: col,
                parent_table,
                parent_column,
            });
        }
    }

    debug_assert_eq!(crate::schema::validate(&schema), Vec::new());
    schema
}

/// Kinds of gold queries [`random_query`] can emit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum QueryShape {
    SingleTable,
    Join,
    Aggregate,
    GroupBy,
}

/// Generate a query against `schema` that parses, resolves and executes:
/// single-table filters, FK joins, aggregates and GROUP BY over typed
/// literals drawn from the same pools `populate` fills columns from.
pub fn random_query(rng: &mut impl Rng, schema: &Schema) -> String {
    use crate::schema::quote_ident as q;

    let shapes = [
        QueryShape::SingleTable,
        QueryShape::SingleTable,
        QueryShape::Join,
        QueryShape::Aggregate,
        QueryShape::GroupBy,
    ];
    let mut shape = *shapes.choose(rng).unwrap();
    let fk = schema
        .foreign_keys
        .choose(rng)
        .filter(|fk| ci(&fk.child_table) != ci(&fk.parent_table))
        .cloned();
    if shape == QueryShape::Join && fk.is_none() {
        shape = QueryShape::SingleTable;
    }

    let table = schema.tables[rng.gen_range(0..schema.tables.len())].clone();

    let literal = |rng: &mut dyn rand::RngCore, col: &Column| -> String {
        crate::values::sample_literal(rng, col)
    };

    match shape {
        QueryShape::Join => {
            let fk = fk.unwrap();
            let child = schema.table(&fk.child_table).unwrap();
            let parent = schema.table(&fk.parent_table).unwrap();
            let pick = |rng: &mut dyn rand::RngCore, t: &Table| -> Column {
                t.columns[rng.gen_range(0..t.columns.len())].clone()
            };
            let c1 = pick(rng, child);
            let c2 = pick(rng, parent);
            let filter_col = pick(rng, parent);
            format!(
                "SELECT T1.{}, T2.{} FROM {} AS T1 JOIN {} AS T2 ON T1.{} = T2.{} WHERE T2.{} = {}",
                q(&c1.name),
                q(&c2.name),
                q(&child.name),
                q(&parent.name),
                q(&fk.child_column),
                q(&fk.parent_column),
                q(&filter_col.name),
                literal(rng, &filter_col),
            )
        }
        QueryShape::Aggregate => {
            let col = table.columns[rng.gen_range(0..table.columns.len())].clone();
            let filter = &table.columns[rng.gen_range(0..table.columns.len())];
            let agg = if col.data_type.to_uppercase().starts_with("INT")
                || col.data_type.to_uppercase().starts_with("REAL")
            {
                *["COUNT", "SUM", "AVG", "MIN", "MAX"].choose(rng).unwrap()
            } else {
                *["COUNT", "MIN", "MAX"].choose(rng).unwrap()
            };
            format!(
                "SELECT {}({}) FROM {} WHERE {} <> {}",
                agg,
                q(&col.name),
                q(&table.name),
                q(&filter.name),
                literal(rng, filter),
            )
        }
        QueryShape::GroupBy => {
            let key = table.columns[rng.gen_range(0..table.columns.len())].clone();
            format!(
                "SELECT {}, COUNT(*) FROM {} GROUP BY {}",
                q(&key.name),
                q(&table.name),
                q(&key.name)
            )
        }
        QueryShape::SingleTable => {
            if rng.gen_bool(0.15) && !table.primary_key.is_empty() {
                // PK-only reference; exercises the anchor-part path on splits.
                let pk = table.primary_key[0].clone();
                return format!(
                    "SELECT COUNT(DISTINCT {}) FROM {}",
                    q(&pk),
                    q(&table.name)
                );
            }
            let n = rng.gen_range(1..=table.columns.len().min(3));
            let mut cols: Vec<String> = Vec::new();
            for _ in 0..n {
                let c = &table.columns[rng.gen_range(0..table.columns.len())];
                let rendered = q(&c.name);
                if !cols.contains(&rendered) {
                    cols.push(rendered);
                }
            }
            let filter = &table.columns[rng.gen_range(0..table.columns.len())];
            let op = *["=", "<>", ">", "<="].choose(rng).unwrap();
            let op = if filter.data_type.to_uppercase().starts_with("INT")
                || filter.data_type.to_uppercase().starts_with("REAL")
            {
                op
            } else {
                "="
            };
            format!(
                "SELECT {} FROM {} WHERE {} {} {}",
                cols.join(", "),
                q(&table.name),
                q(&filter.name),
                op,
                literal(rng, filter),
            )
        }
    }
}

/// Generate a full instance: random schema plus a gold query it satisfies.
pub fn random_instance(rng: &mut impl Rng, id: usize, opts: &SchemaGenOptions) -> Instance {
    let schema = random_schema(rng, opts);
    let gold = random_query(rng, &schema);
    Instance {
        instance_id: format!("gen-{id}"),
        db_id: schema.db_id.clone(),
        nlq: format!("generated question {id}"),
        schema,
        gold: Gold::Sql(gold),
    }
}
