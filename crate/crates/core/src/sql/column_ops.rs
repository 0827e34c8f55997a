//! Rewrites for column splits and merges. Both are total: every reference
//! to an affected column is replaced by an equivalent expression over the
//! evolved columns, and a review flag reports whether the result is
//! semantics-guaranteed or mirrors the benchmark's manual-revision cases.

use sqlparser::ast::{BinaryOperator, Expr, SelectItem, TableFactor, Value};

use super::ast_util::{
    and_chain, call, column_ref, flatten_and, mk_ident, number_lit, string_lit,
    concat_with_delimiter, token_expr,
};
use super::resolve::{
    walk_query_with, Clause, ExprAction, Handler, Occurrence, ResolveCtx, Resolution,
};
use super::{parse_query, ColumnMerge, ColumnSplit, SqlError};
use crate::schema::{ci, Schema};

/// Rewrite plus the review flag shared by both column rewriters.
#[derive(Debug, Clone)]
pub struct ColumnRewrite {
    pub sql: String,
    pub needs_review: bool,
}

// ---------------------------------------------------------------------------
// Split
// ---------------------------------------------------------------------------

struct SplitRw<'p> {
    split: &'p ColumnSplit,
    occ_tables: Vec<String>,
    needs_review: bool,
    edits: usize,
}

impl SplitRw<'_> {
    fn is_target(&self, e: &Expr, ctx: &ResolveCtx<'_>) -> Option<Option<String>> {
        let Some(Resolution::Base { occurrence, column }) = ctx.resolve(e) else {
            return None;
        };
        let table = self.occ_tables.get(occurrence)?;
        if ci(table) == ci(&self.split.table) && ci(&column) == ci(&self.split.column) {
            Some(ctx.qualifier_of(e))
        } else {
            None
        }
    }

    fn concat(&self, qualifier: Option<&str>) -> Expr {
        let parts = self
            .split
            .components
            .iter()
            .map(|c| column_ref(qualifier, c))
            .collect();
        concat_with_delimiter(parts, &self.split.delimiter)
    }
}

impl Handler for SplitRw<'_> {
    fn table_factor(
        &mut self,
        occ: &Occurrence,
        _factor: &mut TableFactor,
    ) -> Result<(), SqlError> {
        debug_assert_eq!(occ.id, self.occ_tables.len());
        self.occ_tables.push(occ.table.clone());
        Ok(())
    }

    fn expr_node(
        &mut self,
        expr: &mut Expr,
        _clause: Clause,
        ctx: &ResolveCtx<'_>,
    ) -> Result<ExprAction, SqlError> {
        // Equality against a literal that splits into exactly the component
        // count becomes a conjunction of component equalities.
        if let Expr::BinaryOp {
            left,
            op: BinaryOperator::Eq,
            right,
        } = expr
        {
            let sides = [(&**left, &**right), (&**right, &**left)];
            for (colside, litside) in sides {
                let Some(qualifier) = self.is_target(colside, ctx) else {
                    continue;
                };
                let Expr::Value(Value::SingleQuotedString(lit)) = litside else {
                    continue;
                };
                let pieces: Vec<&str> = lit.split(self.split.delimiter.as_str()).collect();
                if pieces.len() != self.split.components.len() {
                    continue;
                }
                let conj = and_chain(
                    self.split
                        .components
                        .iter()
                        .zip(&pieces)
                        .map(|(comp, piece)| Expr::BinaryOp {
                            left: Box::new(column_ref(qualifier.as_deref(), comp)),
                            op: BinaryOperator::Eq,
                            right: Box::new(string_lit(piece)),
                        })
                        .collect(),
                );
                *expr = Expr::Nested(Box::new(conj));
                self.edits += 1;
                return Ok(ExprAction::Replaced);
            }
        }
        // Any other appearance: substitute the delimiter-joined
        // concatenation and flag for review.
        if let Some(qualifier) = self.is_target(expr, ctx) {
            *expr = self.concat(qualifier.as_deref());
            self.needs_review = true;
            self.edits += 1;
            return Ok(ExprAction::Replaced);
        }
        Ok(ExprAction::Descend)
    }

    fn projection_item(
        &mut self,
        item: &mut SelectItem,
        ctx: &ResolveCtx<'_>,
    ) -> Result<bool, SqlError> {
        // A bare projection keeps its arity and values; label it with the
        // original column name.
        let (expr, alias) = match item {
            SelectItem::UnnamedExpr(e) => (e, None),
            SelectItem::ExprWithAlias { expr, alias } => (expr, Some(alias.clone())),
            _ => return Ok(false),
        };
        if let Some(qualifier) = self.is_target(expr, ctx) {
            let concat = self.concat(qualifier.as_deref());
            let alias = alias.unwrap_or_else(|| mk_ident(&self.split.column));
            *item = SelectItem::ExprWithAlias { expr: concat, alias };
            self.edits += 1;
            return Ok(true);
        }
        Ok(false)
    }
}

/// Rewrite a query for a column split.
pub fn rewrite_for_column_split(
    sql: &str,
    split: &ColumnSplit,
    schema: &Schema,
) -> Result<ColumnRewrite, SqlError> {
    let mut query = parse_query(sql)?;
    let mut handler = SplitRw {
        split,
        occ_tables: Vec::new(),
        needs_review: false,
        edits: 0,
    };
    walk_query_with(&mut query, schema, &mut handler, &[])?;
    if handler.edits == 0 {
        return Ok(ColumnRewrite {
            sql: sql.to_string(),
            needs_review: false,
        });
    }
    Ok(ColumnRewrite {
        sql: query.to_string(),
        needs_review: handler.needs_review,
    })
}

// ---------------------------------------------------------------------------
// Merge
// ---------------------------------------------------------------------------

struct MergeRw<'p> {
    merge: &'p ColumnMerge,
    occ_tables: Vec<String>,
    needs_review: bool,
    edits: usize,
}

impl MergeRw<'_> {
    /// Component index if the expression references one of the merged
    /// components; returns (index, qualifier).
    fn target_component(&self, e: &Expr, ctx: &ResolveCtx<'_>) -> Option<(usize, Option<String>)> {
        let Some(Resolution::Base { occurrence, column }) = ctx.resolve(e) else {
            return None;
        };
        let table = self.occ_tables.get(occurrence)?;
        if ci(table) != ci(&self.merge.table) {
            return None;
        }
        let idx = self
            .merge
            .components
            .iter()
            .position(|c| ci(c) == ci(&column))?;
        Some((idx, ctx.qualifier_of(e)))
    }

    /// Expression recovering component `idx` from the merged column.
    fn extraction(&self, idx: usize, qualifier: Option<&str>) -> (Expr, bool) {
        let base = column_ref(qualifier, &self.merge.merged);
        if let Some((start, len)) = self
            .merge
            .component_range(&self.merge.components[idx])
        {
            let e = call(
                "SUBSTR",
                vec![base, number_lit(start as i64), number_lit(len as i64)],
            );
            (e, true)
        } else {
            let e = token_expr(
                base,
                idx,
                self.merge.components.len(),
                &self.merge.delimiter,
            );
            (e, false)
        }
    }
}

impl Handler for MergeRw<'_> {
    fn table_factor(
        &mut self,
        occ: &Occurrence,
        _factor: &mut TableFactor,
    ) -> Result<(), SqlError> {
        debug_assert_eq!(occ.id, self.occ_tables.len());
        self.occ_tables.push(occ.table.clone());
        Ok(())
    }

    fn expr_node(
        &mut self,
        expr: &mut Expr,
        _clause: Clause,
        ctx: &ResolveCtx<'_>,
    ) -> Result<ExprAction, SqlError> {
        // Conjunctions equating every component collapse into one equality
        // on the delimiter-joined literal.
        if matches!(
            expr,
            Expr::BinaryOp {
                op: BinaryOperator::And,
                ..
            }
        ) {
            let mut conjuncts = Vec::new();
            flatten_and(expr, &mut conjuncts);

            // (conjunct position, component index, literal, qualifier).
            let mut found: Vec<(usize, usize, String, Option<String>)> = Vec::new();
            for (pos, conj) in conjuncts.iter().enumerate() {
                if let Expr::BinaryOp {
                    left,
                    op: BinaryOperator::Eq,
                    right,
                } = conj
                {
                    let sides = [(&**left, &**right), (&**right, &**left)];
                    for (colside, litside) in sides {
                        if let Some((idx, q)) = self.target_component(colside, ctx) {
                            if let Expr::Value(Value::SingleQuotedString(lit)) = litside {
                                found.push((pos, idx, lit.clone(), q));
                                break;
                            }
                        }
                    }
                }
            }
            let covered: std::collections::BTreeSet<usize> =
                found.iter().map(|(_, idx, _, _)| *idx).collect();
            if covered.len() == self.merge.components.len() && !found.is_empty() {
                let mut literals = vec![String::new(); self.merge.components.len()];
                for (_, idx, lit, _) in &found {
                    literals[*idx] = lit.clone();
                }
                let joined = literals.join(&self.merge.delimiter);
                let qualifier = found[0].3.clone();
                let merged_eq = Expr::BinaryOp {
                    left: Box::new(column_ref(qualifier.as_deref(), &self.merge.merged)),
                    op: BinaryOperator::Eq,
                    right: Box::new(string_lit(&joined)),
                };
                let drop_positions: std::collections::BTreeSet<usize> =
                    found.iter().map(|(pos, _, _, _)| *pos).collect();
                let first = *drop_positions.iter().next().unwrap();
                let mut rebuilt = Vec::new();
                for (pos, conj) in conjuncts.into_iter().enumerate() {
                    if pos == first {
                        rebuilt.push(merged_eq.clone());
                    } else if !drop_positions.contains(&pos) {
                        rebuilt.push(conj);
                    }
                }
                *expr = and_chain(rebuilt);
                self.edits += 1;
                // Descend so leftover conjuncts still get rewritten; the
                // merged column resolves via the synthetic registration.
                return Ok(ExprAction::Descend);
            }
            return Ok(ExprAction::Descend);
        }

        // Single-component equality: extraction on the merged column.
        if let Expr::BinaryOp {
            left,
            op: BinaryOperator::Eq,
            right,
        } = expr
        {
            let sides = [(&**left, &**right), (&**right, &**left)];
            for (colside, litside) in sides {
                let Some((idx, qualifier)) = self.target_component(colside, ctx) else {
                    continue;
                };
                if !matches!(litside, Expr::Value(_)) {
                    continue;
                }
                let (extraction, fixed) = self.extraction(idx, qualifier.as_deref());
                let lit = litside.clone();
                *expr = Expr::BinaryOp {
                    left: Box::new(extraction),
                    op: BinaryOperator::Eq,
                    right: Box::new(lit),
                };
                if !fixed {
                    self.needs_review = true;
                }
                self.edits += 1;
                return Ok(ExprAction::Replaced);
            }
        }

        // Any other appearance of a component.
        if let Some((idx, qualifier)) = self.target_component(expr, ctx) {
            let (extraction, _) = self.extraction(idx, qualifier.as_deref());
            *expr = extraction;
            self.needs_review = true;
            self.edits += 1;
            return Ok(ExprAction::Replaced);
        }
        Ok(ExprAction::Descend)
    }

    fn projection_item(
        &mut self,
        item: &mut SelectItem,
        ctx: &ResolveCtx<'_>,
    ) -> Result<bool, SqlError> {
        let (expr, alias) = match item {
            SelectItem::UnnamedExpr(e) => (e, None),
            SelectItem::ExprWithAlias { expr, alias } => (expr, Some(alias.clone())),
            _ => return Ok(false),
        };
        if let Some((idx, qualifier)) = self.target_component(expr, ctx) {
            let (extraction, fixed) = self.extraction(idx, qualifier.as_deref());
            let alias = alias.unwrap_or_else(|| mk_ident(&self.merge.components[idx]));
            *item = SelectItem::ExprWithAlias {
                expr: extraction,
                alias,
            };
            if !fixed {
                self.needs_review = true;
            }
            self.edits += 1;
            return Ok(true);
        }
        Ok(false)
    }
}

/// Rewrite a query for a column merge.
pub fn rewrite_for_column_merge(
    sql: &str,
    merge: &ColumnMerge,
    schema: &Schema,
) -> Result<ColumnRewrite, SqlError> {
    let mut query = parse_query(sql)?;
    let mut handler = MergeRw {
        merge,
        occ_tables: Vec::new(),
        needs_review: false,
        edits: 0,
    };
    let synthetic = vec![(merge.table.clone(), merge.merged.clone())];
    walk_query_with(&mut query, schema, &mut handler, &synthetic)?;
    if handler.edits == 0 {
        return Ok(ColumnRewrite {
            sql: sql.to_string(),
            needs_review: false,
        });
    }
    Ok(ColumnRewrite {
        sql: query.to_string(),
        needs_review: handler.needs_review,
    })
}
