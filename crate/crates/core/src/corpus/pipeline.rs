//! Batch stages: perturb a corpus, mix training data, score predictions.
//! Instances run in a worker pool; outputs are canonicalized by id so
//! parallelism never changes bytes.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::{CorpusRecord, SkipRecord};
use crate::metrics::{aggregate_named, score_pair, InstanceScore, MetricReport};
use crate::perturb::{perturb, Gold, PType, PerturbOptions};
use crate::rng::derive_stream;
use crate::schema::{parse_ddl, render_ddl, Schema};
use crate::synth::Synthesizer;
use crate::values::{populate, Database, PopulateOptions};

/// Output of a perturbation batch. The skip accounting invariant holds:
/// |input| x |types| = |records| + |skips|.
#[derive(Debug)]
pub struct PerturbRun {
    pub records: Vec<CorpusRecord>,
    pub skips: Vec<SkipRecord>,
}

/// Apply every requested type to every instance. Deterministic under a
/// fixed seed and backend transcript; per-instance streams are derived
/// from (seed, instance, type).
pub fn run_perturb(
    corpus: &[CorpusRecord],
    types: &[PType],
    opts: &PerturbOptions,
    synth: &Synthesizer,
    db_pools: &BTreeMap<String, Schema>,
    seed: u64,
) -> PerturbRun {
    let mut units: Vec<(&CorpusRecord, PType)> = Vec::new();
    for record in corpus {
        for ptype in types {
            units.push((record, *ptype));
        }
    }

    let results: Vec<Result<CorpusRecord, SkipRecord>> = units
        .par_iter()
        .map(|(record, ptype)| {
            let instance = record.to_instance().map_err(|e| SkipRecord {
                instance_id: record.instance_id.clone(),
                db_id: record.db_id.clone(),
                ptype: ptype.as_str().to_string(),
                reason: "BAD_RECORD".into(),
                detail: e.to_string(),
            })?;
            let pool = db_pools.get(&crate::schema::ci(&record.db_id));
            match perturb(&instance, *ptype, opts, synth, pool, seed) {
                Ok(out) => Ok(CorpusRecord {
                    instance_id: out.evolved.instance_id.clone(),
                    db_id: out.evolved.db_id.clone(),
                    nlq: out.evolved.nlq.clone(),
                    schema_ddl: render_ddl(&out.evolved.schema),
                    gold: out.evolved.gold.as_text().to_string(),
                    ptype: ptype.as_str().to_string(),
                    evolution: Some(out.record),
                    needs_review: out.needs_review,
                }),
                Err(e) => Err(SkipRecord {
                    instance_id: record.instance_id.clone(),
                    db_id: record.db_id.clone(),
                    ptype: ptype.as_str().to_string(),
                    reason: e.code().to_string(),
                    detail: e.to_string(),
                }),
            }
        })
        .collect();

    let mut records = Vec::new();
    let mut skips = Vec::new();
    for result in results {
        match result {
            Ok(r) => records.push(r),
            Err(s) => skips.push(s),
        }
    }
    let type_index = |p: &str| PType::ALL.iter().position(|t| t.as_str() == p).unwrap_or(99);
    records.sort_by(|a, b| {
        (a.instance_id.as_str(), type_index(&a.ptype))
            .cmp(&(b.instance_id.as_str(), type_index(&b.ptype)))
    });
    skips.sort_by(|a, b| {
        (a.instance_id.as_str(), type_index(&a.ptype))
            .cmp(&(b.instance_id.as_str(), type_index(&b.ptype)))
    });
    PerturbRun { records, skips }
}

/// Concatenate the original corpus with perturbed corpora and shuffle
/// deterministically. Per-record provenance (ptype, evolution) rides along.
pub fn emit_training_mix(
    original: &[CorpusRecord],
    perturbed: &[Vec<CorpusRecord>],
    seed: u64,
) -> Vec<CorpusRecord> {
    let mut mixed: Vec<CorpusRecord> = original.to_vec();
    for set in perturbed {
        mixed.extend(set.iter().cloned());
    }
    let mut rng = derive_stream(seed, &["train-mix"]);
    mixed.shuffle(&mut rng);
    mixed
}

#[derive(Debug, Clone)]
pub struct ScoreOptions {
    /// Populate each record's schema and compare execution results.
    pub with_execution: bool,
    pub populate_seed: u64,
    pub rows_per_table: usize,
    /// Additional refusal markers beyond the two sentinels.
    pub refusal_markers: Vec<String>,
}

impl Default for ScoreOptions {
    fn default() -> Self {
        ScoreOptions {
            with_execution: false,
            populate_seed: 0,
            rows_per_table: 16,
            refusal_markers: Vec::new(),
        }
    }
}

/// Score a predictions map against a corpus. Missing predictions count as
/// parse failures. Returns per-type reports plus the per-instance scores.
pub fn score_corpus(
    corpus: &[CorpusRecord],
    predictions: &BTreeMap<String, String>,
    opts: &ScoreOptions,
) -> (Vec<MetricReport>, Vec<InstanceScore>) {
    // Database cache keyed by schema DDL: records of the same evolved
    // schema share one populated database.
    let mut db_cache: BTreeMap<String, Option<Database>> = BTreeMap::new();

    let mut scores: Vec<InstanceScore> = Vec::new();
    let mut groups: BTreeMap<String, Vec<InstanceScore>> = BTreeMap::new();
    for record in corpus {
        let Ok(instance) = record.to_instance() else {
            continue;
        };
        let key = prediction_key(record);
        let prediction = predictions
            .get(&key)
            .or_else(|| predictions.get(&record.instance_id))
            .cloned()
            .unwrap_or_default();

        let ptype: PType = record
            .ptype
            .parse()
            .unwrap_or(PType::AddColumns);

        let db = if opts.with_execution && matches!(instance.gold, Gold::Sql(_)) {
            db_cache
                .entry(record.schema_ddl.clone())
                .or_insert_with(|| {
                    parse_ddl(&record.schema_ddl).ok().and_then(|mut s| {
                        s.db_id = record.db_id.clone();
                        populate(
                            &s,
                            &PopulateOptions {
                                rows_per_table: opts.rows_per_table,
                                seed: opts.populate_seed,
                            },
                        )
                        .ok()
                    })
                })
                .as_ref()
        } else {
            None
        };

        if let Ok(score) = score_pair(
            &record.instance_id,
            ptype,
            &prediction,
            &instance.gold,
            &instance.schema,
            db,
            &opts.refusal_markers,
        ) {
            groups
                .entry(record.ptype.clone())
                .or_default()
                .push(score.clone());
            scores.push(score);
        }
    }
    (aggregate_named(&groups), scores)
}

/// Composite prediction key for corpora holding several types per
/// instance id.
pub fn prediction_key(record: &CorpusRecord) -> String {
    format!("{}#{}", record.instance_id, record.ptype)
}
