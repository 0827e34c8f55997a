//! Schema-evolution engine and evaluation toolkit for text-to-SQL corpora:
//! perturb ⟨question, schema, gold SQL⟩ triples through ten schema-change
//! types while preserving referential integrity, rewrite the gold SQL
//! consistently, synthesize data to execute against, and score predictions
//! with table/column match F1, execution accuracy and refusal rates.

pub mod corpus;
pub mod metrics;
pub mod perturb;
pub mod rng;
pub mod schema;
pub mod sql;
pub mod synth;
pub mod testkit;
pub mod values;
