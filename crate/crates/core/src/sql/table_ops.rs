//! Join-path rewriting for table splits and merges.
//!
//! Split: occurrences of the source table are replaced by the minimal set
//! of parts owning the referenced columns, inner-joined pairwise on the
//! copied primary key. Merge: occurrences of the sources become the merged
//! table; joins that equate the plan's link columns collapse.

use std::collections::{BTreeMap, BTreeSet};

use sqlparser::ast::{
    BinaryOperator, Expr, Join, JoinConstraint, JoinOperator, ObjectName, TableFactor,
    TableWithJoins,
};

use super::ast_util::{and_chain, flatten_and, mk_ident, qualified, table_factor};
use super::resolve::{
    factor_at, remove_join_at, splice_joins_after, walk_query, Clause, FactorPath,
    FactorPosition, Handler, Occurrence, Resolution,
};
use super::{parse_query, MergePlan, SplitPlan, SqlError};
use crate::schema::{ci, Schema};

/// Outcome of a split rewrite: the new SQL and whether the result needs
/// human review (star projections over the split source change shape).
#[derive(Debug, Clone)]
pub struct SplitRewrite {
    pub sql: String,
    pub needs_review: bool,
}

/// Outcome of a merge rewrite. `clean` means every multi-source select
/// collapsed along the plan's join links and no shape-changing construct
/// (stars, self-joins, outer joins over a source) was involved.
#[derive(Debug, Clone)]
pub struct MergeRewrite {
    pub sql: String,
    pub clean: bool,
}

// ---------------------------------------------------------------------------
// Shared analysis pass
// ---------------------------------------------------------------------------

#[derive(Default)]
struct Analysis {
    occs: Vec<Occurrence>,
    /// Referenced columns per occurrence (canonical schema spelling).
    refs: BTreeMap<usize, BTreeSet<String>>,
    /// Qualifiers already taken anywhere in the query, lowercase.
    taken: BTreeSet<String>,
    set_op: bool,
    /// Select ids whose projection contains a bare `*`.
    bare_star_selects: BTreeSet<usize>,
    /// Occurrences hit by a qualified wildcard.
    star_occs: BTreeSet<usize>,
    /// ON condition per join-node occurrence, cloned for link matching.
    on_exprs: BTreeMap<usize, Expr>,
    /// Factor path per occurrence.
    paths: BTreeMap<usize, (usize, FactorPath)>,
    /// For lead occurrences, how many joins trail in their FROM entry.
    lead_joins: BTreeMap<usize, usize>,
}

impl Handler for Analysis {
    fn table_factor(
        &mut self,
        occ: &Occurrence,
        _factor: &mut TableFactor,
    ) -> Result<(), SqlError> {
        self.occs.push(occ.clone());
        self.taken.insert(ci(occ.qualifier()));
        self.taken.insert(ci(&occ.as_written));
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
            self.refs.entry(*occurrence).or_default().insert(column.clone());
        }
        Ok(())
    }

    fn qualified_wildcard(
        &mut self,
        occ: Option<&Occurrence>,
        _name: &mut ObjectName,
    ) -> Result<(), SqlError> {
        if let Some(occ) = occ {
            self.star_occs.insert(occ.id);
        }
        Ok(())
    }

    fn bare_wildcard(
        &mut self,
        select_id: usize,
        _scope: &super::resolve::Scope,
    ) -> Result<(), SqlError> {
        self.bare_star_selects.insert(select_id);
        Ok(())
    }

    fn from_list(
        &mut self,
        select_id: usize,
        from: &mut Vec<TableWithJoins>,
        paths: &[(usize, FactorPath)],
    ) -> Result<(), SqlError> {
        for (occ, path) in paths {
            self.paths.insert(*occ, (select_id, path.clone()));
            if path.steps == vec![0] {
                self.lead_joins.insert(*occ, from[path.entry].joins.len());
            }
            if let Some(on) = join_on_at(from, path) {
                self.on_exprs.insert(*occ, on.clone());
            }
        }
        Ok(())
    }

    fn set_operation(&mut self) -> Result<(), SqlError> {
        self.set_op = true;
        Ok(())
    }
}

fn join_on_at<'a>(from: &'a mut [TableWithJoins], path: &FactorPath) -> Option<&'a Expr> {
    let twj = from.get_mut(path.entry)?;
    let mut owner: &mut TableWithJoins = twj;
    for step in &path.steps[..path.steps.len() - 1] {
        let relation = if *step == 0 {
            &mut owner.relation
        } else {
            &mut owner.joins.get_mut(step - 1)?.relation
        };
        let TableFactor::NestedJoin {
            table_with_joins, ..
        } = relation
        else {
            return None;
        };
        owner = table_with_joins;
    }
    let last = *path.steps.last()?;
    if last == 0 {
        return None;
    }
    let join = owner.joins.get(last - 1)?;
    match &join.join_operator {
        JoinOperator::Inner(JoinConstraint::On(e))
        | JoinOperator::LeftOuter(JoinConstraint::On(e))
        | JoinOperator::RightOuter(JoinConstraint::On(e))
        | JoinOperator::FullOuter(JoinConstraint::On(e)) => Some(e),
        _ => None,
    }
}

fn analyze(sql: &str, schema: &Schema) -> Result<(sqlparser::ast::Query, Analysis), SqlError> {
    let mut query = parse_query(sql)?;
    let mut analysis = Analysis::default();
    walk_query(&mut query, schema, &mut analysis)?;
    Ok((query, analysis))
}

fn fresh_qualifier(base: &str, taken: &mut BTreeSet<String>) -> String {
    if taken.insert(ci(base)) {
        return base.to_string();
    }
    let mut k = 2;
    loop {
        let cand = format!("{base}_{k}");
        if taken.insert(ci(&cand)) {
            return cand;
        }
        k += 1;
    }
}

// ---------------------------------------------------------------------------
// Split
// ---------------------------------------------------------------------------

struct SplitEdit {
    /// Qualifier per part name (lowercase part key -> qualifier string).
    part_qualifiers: BTreeMap<String, String>,
    /// Part each referenced column routes to (lowercase column -> part key).
    column_part: BTreeMap<String, String>,
    primary_part: String,
    primary_alias: Option<String>,
    /// Parts beyond the primary, in plan order.
    extra_parts: Vec<String>,
    wrap_nested: bool,
}

struct SplitApply<'p> {
    plan: &'p SplitPlan,
    edits: BTreeMap<usize, SplitEdit>,
    edit_count: usize,
}

impl SplitApply<'_> {
    fn build_joins(&self, edit: &SplitEdit) -> Vec<Join> {
        let primary_q = edit
            .primary_alias
            .clone()
            .unwrap_or_else(|| edit.primary_part.clone());
        edit.extra_parts
            .iter()
            .map(|part| {
                let part_q = edit.part_qualifiers[&ci(part)].clone();
                let on = and_chain(
                    self.plan
                        .pk
                        .iter()
                        .map(|pk| Expr::BinaryOp {
                            left: Box::new(qualified(&primary_q, pk)),
                            op: BinaryOperator::Eq,
                            right: Box::new(qualified(&part_q, pk)),
                        })
                        .collect(),
                );
                let alias = if ci(&part_q) == ci(part) {
                    None
                } else {
                    Some(part_q.as_str())
                };
                Join {
                    relation: table_factor(part, alias),
                    global: false,
                    join_operator: JoinOperator::Inner(JoinConstraint::On(on)),
                }
            })
            .collect()
    }
}

impl Handler for SplitApply<'_> {
    fn table_factor(
        &mut self,
        occ: &Occurrence,
        factor: &mut TableFactor,
    ) -> Result<(), SqlError> {
        if let Some(edit) = self.edits.get(&occ.id) {
            *factor = table_factor(&edit.primary_part, edit.primary_alias.as_deref());
            self.edit_count += 1;
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
        if let Some(edit) = self.edits.get(occurrence) {
            let part = edit
                .column_part
                .get(&ci(column))
                .cloned()
                .unwrap_or_else(|| ci(&edit.primary_part));
            let qualifier = edit.part_qualifiers[&part].clone();
            *expr = qualified(&qualifier, column);
            self.edit_count += 1;
        }
        Ok(())
    }

    fn qualified_wildcard(
        &mut self,
        occ: Option<&Occurrence>,
        name: &mut ObjectName,
    ) -> Result<(), SqlError> {
        if let Some(occ) = occ {
            if let Some(edit) = self.edits.get(&occ.id) {
                let primary_q = edit
                    .primary_alias
                    .clone()
                    .unwrap_or_else(|| edit.primary_part.clone());
                *name = ObjectName(vec![mk_ident(&primary_q)]);
                self.edit_count += 1;
            }
        }
        Ok(())
    }

    fn from_list(
        &mut self,
        _select_id: usize,
        from: &mut Vec<TableWithJoins>,
        paths: &[(usize, FactorPath)],
    ) -> Result<(), SqlError> {
        // Splice deepest-last so earlier indices stay valid.
        let mut work: Vec<(usize, FactorPath)> = paths
            .iter()
            .filter(|(occ, _)| self.edits.contains_key(occ))
            .cloned()
            .collect();
        work.sort_by(|a, b| b.1.entry.cmp(&a.1.entry).then(b.1.steps.cmp(&a.1.steps)));
        for (occ, path) in work {
            let edit = &self.edits[&occ];
            if edit.extra_parts.is_empty() {
                continue;
            }
            let joins = self.build_joins(edit);
            if edit.wrap_nested {
                if let Some(factor) = factor_at(from, &path) {
                    let inner = std::mem::replace(factor, table_factor("placeholder", None));
                    *factor = TableFactor::NestedJoin {
                        table_with_joins: Box::new(TableWithJoins {
                            relation: inner,
                            joins,
                        }),
                        alias: None,
                    };
                }
            } else {
                splice_joins_after(from, &path, joins);
            }
        }
        Ok(())
    }
}

/// Rewrite the given query for a table split. Queries not referencing the
/// source come back unchanged; set operations over the source are
/// unsupported in this version.
pub fn rewrite_for_split(
    sql: &str,
    plan: &SplitPlan,
    schema: &Schema,
) -> Result<SplitRewrite, SqlError> {
    let (_, mut analysis) = analyze(sql, schema)?;
    let source_key = ci(&plan.source_table);
    let src_occs: Vec<Occurrence> = analysis
        .occs
        .iter()
        .filter(|o| ci(&o.table) == source_key)
        .cloned()
        .collect();
    if src_occs.is_empty() {
        return Ok(SplitRewrite {
            sql: sql.to_string(),
            needs_review: false,
        });
    }
    if analysis.set_op {
        return Err(SqlError::UnsupportedShape(
            "split source under a set operation".into(),
        ));
    }

    let mut needs_review = false;
    let mut edits: BTreeMap<usize, SplitEdit> = BTreeMap::new();
    for occ in &src_occs {
        let starred = analysis.star_occs.contains(&occ.id)
            || analysis.bare_star_selects.contains(&occ.select_id);
        let referenced = analysis.refs.get(&occ.id).cloned().unwrap_or_default();
        let mut needed: Vec<String> = Vec::new();
        if starred {
            needs_review = true;
            needed = plan.parts.iter().map(|(n, _)| n.clone()).collect();
        } else {
            for (name, cols) in &plan.parts {
                if referenced.iter().any(|r| cols.iter().any(|c| ci(c) == ci(r))) {
                    needed.push(name.clone());
                }
            }
            if needed.is_empty() {
                needed.push(plan.anchor().to_string());
            }
        }

        let primary_part = needed[0].clone();
        let primary_alias = occ.alias.clone();
        let mut part_qualifiers = BTreeMap::new();
        if let Some(alias) = &primary_alias {
            part_qualifiers.insert(ci(&primary_part), alias.clone());
        } else {
            let q = fresh_qualifier(&primary_part, &mut analysis.taken);
            part_qualifiers.insert(ci(&primary_part), q);
        }
        for part in &needed[1..] {
            let base = match &primary_alias {
                Some(alias) => format!("{alias}_{part}"),
                None => part.clone(),
            };
            let q = fresh_qualifier(&base, &mut analysis.taken);
            part_qualifiers.insert(ci(part), q);
        }

        let mut column_part = BTreeMap::new();
        for col in &referenced {
            let owner = plan
                .part_owning(col)
                .unwrap_or(plan.anchor())
                .to_string();
            // Route PK references through the primary part, which always
            // carries the key.
            let owner = if needed.iter().any(|n| ci(n) == ci(&owner)) {
                owner
            } else {
                primary_part.clone()
            };
            column_part.insert(ci(col), ci(&owner));
        }

        edits.insert(
            occ.id,
            SplitEdit {
                part_qualifiers,
                column_part,
                primary_part,
                primary_alias,
                extra_parts: needed[1..].to_vec(),
                wrap_nested: occ.position == FactorPosition::OuterJoin,
            },
        );
    }

    let mut query = parse_query(sql)?;
    let mut apply = SplitApply {
        plan,
        edits,
        edit_count: 0,
    };
    walk_query(&mut query, schema, &mut apply)?;
    Ok(SplitRewrite {
        sql: query.to_string(),
        needs_review,
    })
}

// ---------------------------------------------------------------------------
// Merge
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
enum MergeAction {
    /// Rewrite this occurrence to the merged table under the qualifier.
    Keep { qualifier: String, set_alias: bool },
    /// Drop this occurrence's join node; refs retarget to the kept
    /// occurrence's qualifier.
    Collapse { into_qualifier: String },
}

struct MergeApply<'p> {
    plan: &'p MergePlan,
    actions: BTreeMap<usize, MergeAction>,
    /// Extra non-link conjuncts from collapsed ON clauses, keyed by select.
    extras: BTreeMap<usize, Vec<Expr>>,
    /// Occurrence table names for column remapping.
    occ_tables: BTreeMap<usize, String>,
    edit_count: usize,
}

impl Handler for MergeApply<'_> {
    fn table_factor(
        &mut self,
        occ: &Occurrence,
        factor: &mut TableFactor,
    ) -> Result<(), SqlError> {
        self.occ_tables.insert(occ.id, occ.table.clone());
        if let Some(MergeAction::Keep {
            qualifier,
            set_alias,
        }) = self.actions.get(&occ.id)
        {
            let alias = if *set_alias { Some(qualifier.as_str()) } else { occ.alias.as_deref() };
            *factor = table_factor(&self.plan.merged_name, alias);
            self.edit_count += 1;
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
        let Some(action) = self.actions.get(occurrence) else {
            return Ok(());
        };
        let table = &self.occ_tables[occurrence];
        let merged_col = self.plan.merged_column(table, column);
        let qualifier = match action {
            MergeAction::Keep { qualifier, .. } => qualifier,
            MergeAction::Collapse { into_qualifier } => into_qualifier,
        };
        match expr {
            Expr::Identifier(_) => {
                if ci(&merged_col) != ci(column) {
                    *expr = Expr::Identifier(mk_ident(&merged_col));
                    self.edit_count += 1;
                }
            }
            _ => {
                *expr = qualified(qualifier, &merged_col);
                self.edit_count += 1;
            }
        }
        Ok(())
    }

    fn qualified_wildcard(
        &mut self,
        occ: Option<&Occurrence>,
        name: &mut ObjectName,
    ) -> Result<(), SqlError> {
        if let Some(occ) = occ {
            if let Some(action) = self.actions.get(&occ.id) {
                let qualifier = match action {
                    MergeAction::Keep { qualifier, .. } => qualifier,
                    MergeAction::Collapse { into_qualifier } => into_qualifier,
                };
                *name = ObjectName(vec![mk_ident(qualifier)]);
                self.edit_count += 1;
            }
        }
        Ok(())
    }

    fn from_list(
        &mut self,
        _select_id: usize,
        from: &mut Vec<TableWithJoins>,
        paths: &[(usize, FactorPath)],
    ) -> Result<(), SqlError> {
        let mut drops: Vec<(usize, FactorPath)> = paths
            .iter()
            .filter(|(occ, _)| matches!(self.actions.get(occ), Some(MergeAction::Collapse { .. })))
            .cloned()
            .collect();
        drops.sort_by(|a, b| b.1.entry.cmp(&a.1.entry).then(b.1.steps.cmp(&a.1.steps)));
        for (_, path) in &drops {
            if path.steps.len() == 1 && path.steps[0] == 0 {
                if from[path.entry].joins.is_empty() {
                    from.remove(path.entry);
                    self.edit_count += 1;
                }
            } else if remove_join_at(from, path) {
                self.edit_count += 1;
            }
        }
        Ok(())
    }

    fn where_clause(
        &mut self,
        select_id: usize,
        selection: &mut Option<Expr>,
    ) -> Result<(), SqlError> {
        // Non-link conjuncts salvaged from collapsed ON clauses move into
        // WHERE; the walker resolves and retargets their references next.
        if let Some(extras) = self.extras.remove(&select_id) {
            let mut conjuncts = Vec::new();
            if let Some(existing) = selection.take() {
                conjuncts.push(existing);
            }
            conjuncts.extend(extras);
            *selection = Some(and_chain(conjuncts));
            self.edit_count += 1;
        }
        Ok(())
    }
}

/// Rewrite the given query for a table merge. Queries referencing no source
/// come back unchanged; set operations over a source are unsupported.
pub fn rewrite_for_merge(
    sql: &str,
    plan: &MergePlan,
    schema: &Schema,
) -> Result<MergeRewrite, SqlError> {
    let (_, analysis) = analyze(sql, schema)?;
    let src_occs: Vec<Occurrence> = analysis
        .occs
        .iter()
        .filter(|o| plan.is_source(&o.table))
        .cloned()
        .collect();
    if src_occs.is_empty() {
        return Ok(MergeRewrite {
            sql: sql.to_string(),
            clean: true,
        });
    }
    if analysis.set_op {
        return Err(SqlError::UnsupportedShape(
            "merge source under a set operation".into(),
        ));
    }

    let mut clean = true;
    let mut actions: BTreeMap<usize, MergeAction> = BTreeMap::new();
    let mut extras: BTreeMap<usize, Vec<Expr>> = BTreeMap::new();
    let mut taken = analysis.taken.clone();

    let mut by_select: BTreeMap<usize, Vec<&Occurrence>> = BTreeMap::new();
    for occ in &src_occs {
        by_select.entry(occ.select_id).or_default().push(occ);
        if analysis.star_occs.contains(&occ.id)
            || analysis.bare_star_selects.contains(&occ.select_id)
        {
            clean = false;
        }
    }

    for (select_id, occs) in &by_select {
        let kept = occs[0];
        let kept_qualifier = kept
            .alias
            .clone()
            .unwrap_or_else(|| plan.merged_name.clone());
        actions.insert(
            kept.id,
            MergeAction::Keep {
                qualifier: kept_qualifier.clone(),
                set_alias: false,
            },
        );
        if kept.position == FactorPosition::OuterJoin && occs.len() > 1 {
            clean = false;
        }

        let mut merged_tables: BTreeSet<String> = BTreeSet::new();
        merged_tables.insert(ci(&kept.table));

        for occ in &occs[1..] {
            // A second occurrence of an already-merged source is a
            // self-join: keep it separate under its own alias.
            if merged_tables.contains(&ci(&occ.table)) {
                let q = occ
                    .alias
                    .clone()
                    .unwrap_or_else(|| fresh_qualifier(&plan.merged_name, &mut taken));
                let set_alias = occ.alias.is_none();
                actions.insert(occ.id, MergeAction::Keep { qualifier: q, set_alias });
                clean = false;
                continue;
            }
            let is_bare_lead = analysis
                .paths
                .get(&occ.id)
                .is_some_and(|(_, p)| p.steps == vec![0])
                && analysis.lead_joins.get(&occ.id).copied() == Some(0);
            let droppable = occ.position == FactorPosition::InnerJoin || is_bare_lead;
            let link_match = match analysis.on_exprs.get(&occ.id) {
                Some(on) => match_links(on, occs, plan),
                // Comma-FROM entries align through WHERE; collapse and let
                // the link equality become a tautology on merged rows.
                None => is_bare_lead.then(Vec::new),
            };
            match (droppable, link_match) {
                (true, Some(extra)) => {
                    actions.insert(
                        occ.id,
                        MergeAction::Collapse {
                            into_qualifier: kept_qualifier.clone(),
                        },
                    );
                    merged_tables.insert(ci(&occ.table));
                    if !extra.is_empty() {
                        extras.entry(*select_id).or_default().extend(extra);
                    }
                }
                _ => {
                    let q = occ
                        .alias
                        .clone()
                        .unwrap_or_else(|| fresh_qualifier(&plan.merged_name, &mut taken));
                    let set_alias = occ.alias.is_none();
                    actions.insert(occ.id, MergeAction::Keep { qualifier: q, set_alias });
                    clean = false;
                }
            }
        }
    }

    let mut query = parse_query(sql)?;
    let mut apply = MergeApply {
        plan,
        actions,
        extras,
        occ_tables: BTreeMap::new(),
        edit_count: 0,
    };
    walk_query(&mut query, schema, &mut apply)?;
    Ok(MergeRewrite {
        sql: query.to_string(),
        clean,
    })
}

/// Decompose an ON condition into conjuncts and match them against the
/// plan's join links among the select's source occurrences. Returns the
/// leftover non-link conjuncts, or None when no link equality is present
/// (the join is not the merge alignment).
fn match_links(on: &Expr, select_occs: &[&Occurrence], plan: &MergePlan) -> Option<Vec<Expr>> {
    let mut conjuncts = Vec::new();
    flatten_and(on, &mut conjuncts);

    let resolve = |qualifier: &str, column: &str| -> Option<(String, String)> {
        let key = ci(qualifier);
        select_occs
            .iter()
            .find(|o| ci(o.qualifier()) == key)
            .map(|o| (ci(&o.table), ci(column)))
    };

    let mut matched_any = false;
    let mut extras = Vec::new();
    for conj in conjuncts {
        let is_link = match &conj {
            Expr::BinaryOp {
                left,
                op: BinaryOperator::Eq,
                right,
            } => {
                let side = |e: &Expr| -> Option<(String, String)> {
                    match e {
                        Expr::CompoundIdentifier(parts) if parts.len() >= 2 => resolve(
                            &parts[parts.len() - 2].value,
                            &parts[parts.len() - 1].value,
                        ),
                        _ => None,
                    }
                };
                match (side(left), side(right)) {
                    (Some(a), Some(b)) => plan.join_links.iter().any(|l| {
                        let child = (ci(&l.child_table), ci(&l.child_column));
                        let parent = (ci(&l.parent_table), ci(&l.parent_column));
                        (a == child && b == parent) || (a == parent && b == child)
                    }),
                    _ => false,
                }
            }
            _ => false,
        };
        if is_link {
            matched_any = true;
        } else {
            extras.push(conj);
        }
    }
    matched_any.then_some(extras)
}
