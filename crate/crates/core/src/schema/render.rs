//! Deterministic DDL rendering. Output reparses to a structurally equal
//! schema: one statement per table, columns in order, foreign keys as
//! table-level clauses.

use super::Schema;

/// Keywords that would be misparsed as syntax when used bare as identifiers.
const RESERVED: &[&str] = &[
    "all", "and", "as", "between", "by", "case", "check", "constraint", "create", "cross",
    "default", "distinct", "else", "end", "except", "exists", "foreign", "from", "group",
    "having", "in", "inner", "intersect", "into", "is", "join", "key", "left", "like", "limit",
    "not", "null", "on", "or", "order", "outer", "primary", "references", "right", "select",
    "set", "table", "then", "to", "union", "unique", "values", "when", "where",
];

/// Whether an identifier must be double-quoted to survive a round trip.
pub fn needs_quoting(name: &str) -> bool {
    let plain = !name.is_empty()
        && !name.starts_with(|c: char| c.is_ascii_digit())
        && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_');
    !plain || RESERVED.contains(&name.to_lowercase().as_str())
}

/// Render an identifier, double-quoting only when required.
pub fn quote_ident(name: &str) -> String {
    if needs_quoting(name) {
        format!("\"{}\"", name.replace('"', "\"\""))
    } else {
        name.to_string()
    }
}

/// Render a schema as CREATE TABLE statements in table order.
pub fn render_ddl(schema: &Schema) -> String {
    let mut out = String::new();
    for table in &schema.tables {
        let mut lines: Vec<String> = Vec::new();
        for col in &table.columns {
            let mut line = format!("  {} {}", quote_ident(&col.name), col.data_type);
            if !col.nullable {
                line.push_str(" NOT NULL");
            }
            lines.push(line);
        }
        if !table.primary_key.is_empty() {
            let cols: Vec<String> = table.primary_key.iter().map(|c| quote_ident(c)).collect();
            lines.push(format!("  PRIMARY KEY ({})", cols.join(", ")));
        }
        for fk in schema.outbound_fks(&table.name) {
            lines.push(format!(
                "  FOREIGN KEY ({}) REFERENCES {} ({})",
                quote_ident(&fk.child_column),
                quote_ident(&fk.parent_table),
                quote_ident(&fk.parent_column)
            ));
        }
        out.push_str(&format!(
            "CREATE TABLE {} (\n{}\n);\n",
            quote_ident(&table.name),
            lines.join(",\n")
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::parse_ddl;

    #[test]
    fn clinic_round_trips() {
        let s = crate::testkit::clinic_schema();
        let rendered = render_ddl(&s);
        let mut reparsed = parse_ddl(&rendered).unwrap();
        reparsed.db_id = s.db_id.clone();
        assert_eq!(reparsed, s);
    }

    #[test]
    fn empty_schema_renders_empty() {
        assert_eq!(render_ddl(&Schema::new("x")), "");
    }

    #[test]
    fn awkward_identifiers_round_trip() {
        let ddl = "CREATE TABLE \"order\"(\"group\" INTEGER, \"two words\" TEXT)";
        let s = parse_ddl(ddl).unwrap();
        let mut reparsed = parse_ddl(&render_ddl(&s)).unwrap();
        reparsed.db_id = s.db_id.clone();
        assert_eq!(reparsed, s);
    }
}
