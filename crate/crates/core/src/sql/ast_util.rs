//! Small builders for AST nodes the rewriters synthesize.

use sqlparser::ast::{
    BinaryOperator, Expr, Function, FunctionArg, FunctionArgExpr, FunctionArgumentList,
    FunctionArguments, Ident, ObjectName, TableFactor, Value,
};

use crate::schema::needs_quoting;

pub(crate) fn mk_ident(name: &str) -> Ident {
    if needs_quoting(name) {
        Ident::with_quote('"', name)
    } else {
        Ident::new(name)
    }
}

pub(crate) fn table_factor(name: &str, alias: Option<&str>) -> TableFactor {
    TableFactor::Table {
        name: ObjectName(vec![mk_ident(name)]),
        alias: alias.map(|a| sqlparser::ast::TableAlias {
            name: mk_ident(a),
            columns: vec![],
        }),
        args: None,
        with_hints: vec![],
        version: None,
        with_ordinality: false,
        partitions: vec![],
    }
}

/// Column reference, qualified when a qualifier is given.
pub(crate) fn column_ref(qualifier: Option<&str>, column: &str) -> Expr {
    match qualifier {
        Some(q) => Expr::CompoundIdentifier(vec![mk_ident(q), mk_ident(column)]),
        None => Expr::Identifier(mk_ident(column)),
    }
}

pub(crate) fn qualified(qualifier: &str, column: &str) -> Expr {
    column_ref(Some(qualifier), column)
}

pub(crate) fn string_lit(s: &str) -> Expr {
    Expr::Value(Value::SingleQuotedString(s.to_string()))
}

pub(crate) fn number_lit(n: i64) -> Expr {
    Expr::Value(Value::Number(n.to_string(), false))
}

pub(crate) fn binop(left: Expr, op: BinaryOperator, right: Expr) -> Expr {
    Expr::BinaryOp {
        left: Box::new(left),
        op,
        right: Box::new(right),
    }
}

pub(crate) fn and_chain(exprs: Vec<Expr>) -> Expr {
    let mut it = exprs.into_iter();
    let first = it.next().expect("non-empty conjunction");
    it.fold(first, |acc, e| binop(acc, BinaryOperator::And, e))
}

pub(crate) fn flatten_and(e: &Expr, out: &mut Vec<Expr>) {
    match e {
        Expr::BinaryOp {
            left,
            op: BinaryOperator::And,
            right,
        } => {
            flatten_and(left, out);
            flatten_and(right, out);
        }
        Expr::Nested(inner) => flatten_and(inner, out),
        other => out.push(other.clone()),
    }
}

pub(crate) fn call(name: &str, args: Vec<Expr>) -> Expr {
    Expr::Function(Function {
        name: ObjectName(vec![Ident::new(name)]),
        parameters: FunctionArguments::None,
        args: FunctionArguments::List(FunctionArgumentList {
            duplicate_treatment: None,
            args: args
                .into_iter()
                .map(|e| FunctionArg::Unnamed(FunctionArgExpr::Expr(e)))
                .collect(),
            clauses: vec![],
        }),
        filter: None,
        null_treatment: None,
        over: None,
        within_group: vec![],
    })
}

/// Concatenation of expressions with a literal delimiter between them.
pub(crate) fn concat_with_delimiter(parts: Vec<Expr>, delimiter: &str) -> Expr {
    let mut it = parts.into_iter();
    let first = it.next().expect("non-empty concatenation");
    it.fold(first, |acc, e| {
        binop(
            binop(acc, BinaryOperator::StringConcat, string_lit(delimiter)),
            BinaryOperator::StringConcat,
            e,
        )
    })
}

/// Expression extracting the `index`-th of `count` delimiter-separated
/// tokens from `base`, peeling one delimiter per recursion level. The last
/// token keeps any remainder.
pub(crate) fn token_expr(base: Expr, index: usize, count: usize, delimiter: &str) -> Expr {
    if count <= 1 {
        return base;
    }
    if index == 0 {
        // SUBSTR(base, 1, INSTR(base, d) - 1)
        return call(
            "SUBSTR",
            vec![
                base.clone(),
                number_lit(1),
                binop(
                    call("INSTR", vec![base, string_lit(delimiter)]),
                    BinaryOperator::Minus,
                    number_lit(1),
                ),
            ],
        );
    }
    // SUBSTR(base, INSTR(base, d) + len(d)) peels the first token.
    let rest = call(
        "SUBSTR",
        vec![
            base.clone(),
            binop(
                call("INSTR", vec![base, string_lit(delimiter)]),
                BinaryOperator::Plus,
                number_lit(delimiter.len() as i64),
            ),
        ],
    );
    token_expr(rest, index - 1, count - 1, delimiter)
}
