//! Scoring: table/column match F1 over alias-resolved reference sets,
//! execution accuracy over synthesized databases, and refusal rates for
//! the out-of-scope perturbation types.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::perturb::{Gold, PType, COLUMN_SENTINEL, TABLE_SENTINEL};
use crate::schema::Schema;
use crate::sql::{extract_refs, SqlError};
use crate::values::{execute, has_top_level_order_by, Database, ExecError};

/// Precision/recall/F1 triple. F1 is the harmonic mean, zero when both
/// components are zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    pub fn zero() -> Prf {
        Prf {
            precision: 0.0,
            recall: 0.0,
            f1: 0.0,
        }
    }
}

/// Set-overlap precision/recall/F1. Both empty scores perfect; exactly one
/// empty scores zero.
pub fn set_prf<T: Ord>(pred: &BTreeSet<T>, gold: &BTreeSet<T>) -> Prf {
    if pred.is_empty() && gold.is_empty() {
        return Prf {
            precision: 1.0,
            recall: 1.0,
            f1: 1.0,
        };
    }
    if pred.is_empty() || gold.is_empty() {
        return Prf::zero();
    }
    let hits = pred.intersection(gold).count() as f64;
    let precision = hits / pred.len() as f64;
    let recall = hits / gold.len() as f64;
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Prf {
        precision,
        recall,
        f1,
    }
}

/// Score of one prediction against one gold query.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchScore {
    pub prf: Prf,
    /// The prediction failed to parse/resolve and was scored zero.
    pub parse_failure: bool,
}

/// Table Match F1 for a predicted query: overlap of referenced base-table
/// sets. An unparseable prediction scores zero and is tallied, not raised.
pub fn table_match_f1(
    pred_sql: &str,
    gold_sql: &str,
    schema: &Schema,
) -> Result<MatchScore, SqlError> {
    let gold = extract_refs(gold_sql, schema)?;
    match extract_refs(pred_sql, schema) {
        Ok(pred) => Ok(MatchScore {
            prf: set_prf(&pred.tables, &gold.tables),
            parse_failure: false,
        }),
        Err(_) => Ok(MatchScore {
            prf: Prf::zero(),
            parse_failure: true,
        }),
    }
}

/// Column Match F1: overlap of alias-resolved (table, column) pair sets.
pub fn column_match_f1(
    pred_sql: &str,
    gold_sql: &str,
    schema: &Schema,
) -> Result<MatchScore, SqlError> {
    let gold = extract_refs(gold_sql, schema)?;
    match extract_refs(pred_sql, schema) {
        Ok(pred) => Ok(MatchScore {
            prf: set_prf(&pred.columns, &gold.columns),
            parse_failure: false,
        }),
        Err(_) => Ok(MatchScore {
            prf: Prf::zero(),
            parse_failure: true,
        }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecVerdict {
    Correct,
    Incorrect,
    Error,
}

/// Execution accuracy verdict: result multisets must match (ordered when
/// the gold query sorts its output). Prediction execution errors count as
/// incorrect, not as failures of the harness.
pub fn execution_accuracy(
    pred_sql: &str,
    gold_sql: &str,
    db: &Database,
) -> Result<ExecVerdict, ExecError> {
    let gold = execute(gold_sql, db)?;
    let pred = match execute(pred_sql, db) {
        Ok(r) => r,
        Err(_) => return Ok(ExecVerdict::Error),
    };
    let equal = if has_top_level_order_by(gold_sql) {
        gold.rows == pred.rows
    } else {
        gold.multiset_eq(&pred)
    };
    Ok(if equal {
        ExecVerdict::Correct
    } else {
        ExecVerdict::Incorrect
    })
}

/// Refusal detection: the prediction contains a sentinel sentence verbatim,
/// or matches a configured marker.
pub fn is_refusal(prediction: &str, extra_markers: &[String]) -> bool {
    prediction.contains(COLUMN_SENTINEL)
        || prediction.contains(TABLE_SENTINEL)
        || extra_markers.iter().any(|m| prediction.contains(m))
}

/// Refusal rates over a scored pool: FP among SQL-gold instances, TP among
/// sentinel-gold instances. `None` when the pool is empty.
pub fn refusal_rates(pairs: &[(bool, bool)]) -> (Option<f64>, Option<f64>) {
    // (refused, gold_is_sentinel)
    let sql_pool: Vec<bool> = pairs.iter().filter(|(_, s)| !s).map(|(r, _)| *r).collect();
    let sentinel_pool: Vec<bool> = pairs.iter().filter(|(_, s)| *s).map(|(r, _)| *r).collect();
    let rate = |pool: &[bool]| {
        if pool.is_empty() {
            None
        } else {
            Some(pool.iter().filter(|r| **r).count() as f64 / pool.len() as f64)
        }
    };
    (rate(&sql_pool), rate(&sentinel_pool))
}

/// One instance's scores, ready for aggregation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstanceScore {
    pub instance_id: String,
    pub ptype: PType,
    pub gold_is_sentinel: bool,
    pub refused: bool,
    /// Present for SQL-gold instances only.
    pub table: Option<MatchScore>,
    pub column: Option<MatchScore>,
    pub exec: Option<ExecVerdict>,
}

/// Aggregated report row for one perturbation type (or the macro average).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub ptype: String,
    pub instances: usize,
    pub table_precision: Option<f64>,
    pub table_recall: Option<f64>,
    pub table_f1: Option<f64>,
    pub column_precision: Option<f64>,
    pub column_recall: Option<f64>,
    pub column_f1: Option<f64>,
    /// Fraction correct over the executable pool.
    pub exec_accuracy: Option<f64>,
    pub exec_pool: usize,
    pub refusal_fp: Option<f64>,
    pub refusal_tp: Option<f64>,
    pub parse_failures: usize,
}

/// Group per-instance scores by perturbation type and append the macro
/// average (unweighted mean over types with F1 pools).
pub fn aggregate(scores: &[InstanceScore]) -> Vec<MetricReport> {
    let mut by_type: BTreeMap<PType, Vec<&InstanceScore>> = BTreeMap::new();
    for s in scores {
        by_type.entry(s.ptype).or_default().push(s);
    }

    let mut out = Vec::new();
    for ptype in PType::ALL {
        let Some(rows) = by_type.get(&ptype) else { continue };
        out.push(report_for(ptype.display_name(), rows));
    }
    // An "original" pseudo-type may exist when scoring the unperturbed
    // corpus; it is not part of PType and rides along via its own row.

    let f1_rows: Vec<&MetricReport> = out.iter().filter(|r| r.table_f1.is_some()).collect();
    if !f1_rows.is_empty() {
        let mean = |get: fn(&MetricReport) -> Option<f64>| {
            let vals: Vec<f64> = f1_rows.iter().filter_map(|r| get(r)).collect();
            if vals.is_empty() {
                None
            } else {
                Some(vals.iter().sum::<f64>() / vals.len() as f64)
            }
        };
        out.push(MetricReport {
            ptype: "MacroAvg".into(),
            instances: f1_rows.iter().map(|r| r.instances).sum(),
            table_precision: mean(|r| r.table_precision),
            table_recall: mean(|r| r.table_recall),
            table_f1: mean(|r| r.table_f1),
            column_precision: mean(|r| r.column_precision),
            column_recall: mean(|r| r.column_recall),
            column_f1: mean(|r| r.column_f1),
            exec_accuracy: mean(|r| r.exec_accuracy),
            exec_pool: f1_rows.iter().map(|r| r.exec_pool).sum(),
            refusal_fp: None,
            refusal_tp: None,
            parse_failures: f1_rows.iter().map(|r| r.parse_failures).sum(),
        });
    }
    out
}

fn report_for(name: &str, rows: &[&InstanceScore]) -> MetricReport {
    let f1_pool: Vec<&&InstanceScore> = rows.iter().filter(|s| !s.gold_is_sentinel).collect();
    let mean_of = |get: fn(&InstanceScore) -> Option<f64>| {
        let vals: Vec<f64> = f1_pool.iter().filter_map(|s| get(s)).collect();
        if vals.is_empty() {
            None
        } else {
            Some(vals.iter().sum::<f64>() / vals.len() as f64)
        }
    };

    let exec_pool: Vec<ExecVerdict> = f1_pool.iter().filter_map(|s| s.exec).collect();
    let exec_accuracy = if exec_pool.is_empty() {
        None
    } else {
        Some(
            exec_pool.iter().filter(|v| **v == ExecVerdict::Correct).count() as f64
                / exec_pool.len() as f64,
        )
    };

    let refusal_pairs: Vec<(bool, bool)> =
        rows.iter().map(|s| (s.refused, s.gold_is_sentinel)).collect();
    let (refusal_fp, refusal_tp) = refusal_rates(&refusal_pairs);

    MetricReport {
        ptype: name.to_string(),
        instances: rows.len(),
        table_precision: mean_of(|s| s.table.map(|m| m.prf.precision)),
        table_recall: mean_of(|s| s.table.map(|m| m.prf.recall)),
        table_f1: mean_of(|s| s.table.map(|m| m.prf.f1)),
        column_precision: mean_of(|s| s.column.map(|m| m.prf.precision)),
        column_recall: mean_of(|s| s.column.map(|m| m.prf.recall)),
        column_f1: mean_of(|s| s.column.map(|m| m.prf.f1)),
        exec_accuracy,
        exec_pool: exec_pool.len(),
        refusal_fp,
        refusal_tp,
        parse_failures: f1_pool
            .iter()
            .filter(|s| s.table.map(|m| m.parse_failure).unwrap_or(false))
            .count(),
    }
}

/// Aggregate rows that may include non-PType groups (e.g. "original").
pub fn aggregate_named(groups: &BTreeMap<String, Vec<InstanceScore>>) -> Vec<MetricReport> {
    let mut out = Vec::new();
    for (name, scores) in groups {
        let refs: Vec<&InstanceScore> = scores.iter().collect();
        let display = PType::ALL
            .iter()
            .find(|p| p.as_str() == name)
            .map(|p| p.display_name().to_string())
            .unwrap_or_else(|| name.clone());
        out.push(report_for(&display, &refs));
    }
    let f1_rows: Vec<MetricReport> = out.iter().filter(|r| r.table_f1.is_some()).cloned().collect();
    if !f1_rows.is_empty() {
        let mean = |get: fn(&MetricReport) -> Option<f64>| {
            let vals: Vec<f64> = f1_rows.iter().filter_map(get).collect();
            if vals.is_empty() {
                None
            } else {
                Some(vals.iter().sum::<f64>() / vals.len() as f64)
            }
        };
        out.push(MetricReport {
            ptype: "MacroAvg".into(),
            instances: f1_rows.iter().map(|r| r.instances).sum(),
            table_precision: mean(|r| r.table_precision),
            table_recall: mean(|r| r.table_recall),
            table_f1: mean(|r| r.table_f1),
            column_precision: mean(|r| r.column_precision),
            column_recall: mean(|r| r.column_recall),
            column_f1: mean(|r| r.column_f1),
            exec_accuracy: mean(|r| r.exec_accuracy),
            exec_pool: f1_rows.iter().map(|r| r.exec_pool).sum(),
            refusal_fp: None,
            refusal_tp: None,
            parse_failures: f1_rows.iter().map(|r| r.parse_failures).sum(),
        });
    }
    out
}

/// Render reports as a fixed-width text table.
pub fn render_report_table(reports: &[MetricReport]) -> String {
    let fmt = |v: Option<f64>| match v {
        Some(x) => format!("{:.2}", x * 100.0),
        None => "-".to_string(),
    };
    let mut out = String::new();
    out.push_str(&format!(
        "{:<18} {:>6} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}\n",
        "Perturbation Type",
        "N",
        "Tab P",
        "Tab R",
        "Tab F1",
        "Col P",
        "Col R",
        "Col F1",
        "Exec",
        "Ref FP",
        "Ref TP"
    ));
    for r in reports {
        out.push_str(&format!(
            "{:<18} {:>6} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}\n",
            r.ptype,
            r.instances,
            fmt(r.table_precision),
            fmt(r.table_recall),
            fmt(r.table_f1),
            fmt(r.column_precision),
            fmt(r.column_recall),
            fmt(r.column_f1),
            fmt(r.exec_accuracy),
            fmt(r.refusal_fp),
            fmt(r.refusal_tp),
        ));
    }
    out
}

/// Convenience: score one (prediction, gold) pair end to end.
pub fn score_pair(
    instance_id: &str,
    ptype: PType,
    prediction: &str,
    gold: &Gold,
    schema: &Schema,
    db: Option<&Database>,
    extra_markers: &[String],
) -> Result<InstanceScore, SqlError> {
    let refused = is_refusal(prediction, extra_markers);
    match gold {
        Gold::Refusal(_) => Ok(InstanceScore {
            instance_id: instance_id.to_string(),
            ptype,
            gold_is_sentinel: true,
            refused,
            table: None,
            column: None,
            exec: None,
        }),
        Gold::Sql(gold_sql) => {
            let (table, column) = if refused {
                // A refusal where SQL was expected scores zero.
                (
                    MatchScore { prf: Prf::zero(), parse_failure: true },
                    MatchScore { prf: Prf::zero(), parse_failure: true },
                )
            } else {
                (
                    table_match_f1(prediction, gold_sql, schema)?,
                    column_match_f1(prediction, gold_sql, schema)?,
                )
            };
            let exec = match db {
                Some(db) => match execute(gold_sql, db) {
                    Ok(_) => Some(if refused {
                        ExecVerdict::Error
                    } else {
                        execution_accuracy(prediction, gold_sql, db)
                            .unwrap_or(ExecVerdict::Error)
                    }),
                    // Gold not executable: instance excluded from the pool.
                    Err(_) => None,
                },
                None => None,
            };
            Ok(InstanceScore {
                instance_id: instance_id.to_string(),
                ptype,
                gold_is_sentinel: false,
                refused,
                table: Some(table),
                column: Some(column),
                exec,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testkit::{clinic_schema, CLINIC_GOLD};

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-9
    }

    #[test]
    fn partial_table_overlap() {
        let schema = clinic_schema();
        let pred = "SELECT city FROM patient";
        let m = table_match_f1(pred, CLINIC_GOLD, &schema).unwrap();
        assert!(close(m.prf.precision, 1.0));
        assert!(close(m.prf.recall, 0.5));
        assert!(close(m.prf.f1, 2.0 / 3.0));
    }

    #[test]
    fn identical_pred_scores_one() {
        let schema = clinic_schema();
        let m = table_match_f1(CLINIC_GOLD, CLINIC_GOLD, &schema).unwrap();
        assert_eq!(m.prf, Prf { precision: 1.0, recall: 1.0, f1: 1.0 });
        let m = column_match_f1(CLINIC_GOLD, CLINIC_GOLD, &schema).unwrap();
        assert_eq!(m.prf, Prf { precision: 1.0, recall: 1.0, f1: 1.0 });
    }

    #[test]
    fn disjoint_tables_score_zero() {
        let schema = clinic_schema();
        let m = table_match_f1(
            "SELECT severity FROM diagnosis",
            "SELECT city FROM patient",
            &schema,
        )
        .unwrap();
        assert_eq!(m.prf, Prf::zero());
    }

    #[test]
    fn column_pairs_are_table_qualified() {
        let schema = clinic_schema();
        // patient_id exists in both tables; predicting the wrong owner gets
        // no credit.
        let m = column_match_f1(
            "SELECT patient_id FROM diagnosis",
            "SELECT patient_id FROM patient",
            &schema,
        )
        .unwrap();
        assert!(close(m.prf.f1, 0.0));
    }

    #[test]
    fn both_star_scores_perfect_via_empty_rule() {
        let schema = clinic_schema();
        let m = column_match_f1("SELECT * FROM patient", "SELECT * FROM patient", &schema)
            .unwrap();
        assert_eq!(m.prf, Prf { precision: 1.0, recall: 1.0, f1: 1.0 });
    }

    #[test]
    fn unparseable_prediction_is_tallied_not_raised() {
        let schema = clinic_schema();
        let m = table_match_f1("not sql at all", CLINIC_GOLD, &schema).unwrap();
        assert!(m.parse_failure);
        assert_eq!(m.prf, Prf::zero());
    }

    #[test]
    fn refusal_rates_by_pool() {
        // (refused, sentinel-gold)
        let pairs = vec![
            (false, false),
            (true, false),
            (false, false),
            (true, true),
            (true, true),
            (false, true),
        ];
        let (fp, tp) = refusal_rates(&pairs);
        assert!(close(fp.unwrap(), 1.0 / 3.0));
        assert!(close(tp.unwrap(), 2.0 / 3.0));
    }

    #[test]
    fn empty_pool_reports_absent() {
        let (fp, tp) = refusal_rates(&[(false, false)]);
        assert!(fp.is_some());
        assert!(tp.is_none());
    }

    #[test]
    fn macro_average_is_unweighted() {
        let mk = |ptype: PType, f1: f64, n: usize| {
            (0..n)
                .map(|i| InstanceScore {
                    instance_id: format!("i{i}"),
                    ptype,
                    gold_is_sentinel: false,
                    refused: false,
                    table: Some(MatchScore {
                        prf: Prf { precision: f1, recall: f1, f1 },
                        parse_failure: false,
                    }),
                    column: Some(MatchScore {
                        prf: Prf { precision: f1, recall: f1, f1 },
                        parse_failure: false,
                    }),
                    exec: None,
                })
                .collect::<Vec<_>>()
        };
        let mut scores = mk(PType::AddColumns, 0.8, 10);
        scores.extend(mk(PType::RenameTables, 0.6, 2));
        let reports = aggregate(&scores);
        let macro_row = reports.iter().find(|r| r.ptype == "MacroAvg").unwrap();
        assert!(close(macro_row.table_f1.unwrap(), 0.7));
    }

    #[test]
    fn sentinel_instances_never_enter_f1_pools() {
        let scores = vec![InstanceScore {
            instance_id: "a".into(),
            ptype: PType::RemoveTables,
            gold_is_sentinel: true,
            refused: true,
            table: None,
            column: None,
            exec: None,
        }];
        let reports = aggregate(&scores);
        let row = reports.iter().find(|r| r.ptype == "Remove Tables").unwrap();
        assert!(row.table_f1.is_none());
        assert_eq!(row.refusal_tp, Some(1.0));
        assert!(!reports.iter().any(|r| r.ptype == "MacroAvg"));
    }
}
