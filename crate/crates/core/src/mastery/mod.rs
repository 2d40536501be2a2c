//! Mastery estimation from attention.
//!
//! A per-student CFA prediction model is trained on opportunity sequences
//! built from the curriculum structure (for each unit, the first problem
//! the student worked in each section). Mastery α(S, P, K) is the share
//! of encoder-decoder attention mass on K's positions (within problem P)
//! that lands on steps the model predicts the student gets right.

mod model;

pub use model::{
    train_cfa_model, AttentionParams, CfaModel, CfaPrediction, TrainReport,
};

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use thiserror::Error;

use crate::corpus::{InteractionRecord, KcIdx, ProblemIdx, StudentIdx, UnitIdx, Vocabulary};
use crate::nn::NnError;

#[derive(Debug, Error)]
pub enum MasteryError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("table parse error at line {0}: {1}")]
    Table(usize, String),
}

/// One opportunity to apply a KC: a step of some problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OppToken {
    pub kc: KcIdx,
    pub problem: ProblemIdx,
    pub step_index: usize,
}

/// Chronological KC opportunities for one student (one window).
#[derive(Debug, Clone)]
pub struct OpportunitySequence {
    pub student: StudentIdx,
    pub unit: UnitIdx,
    pub tokens: Vec<OppToken>,
    pub targets: Vec<bool>,
}

/// Mastery scores α(S, P, K) ∈ [0, 1] plus opportunity counts n(S, K).
#[derive(Debug, Clone, Default)]
pub struct MasteryTable {
    pub alpha: BTreeMap<(StudentIdx, ProblemIdx, KcIdx), f64>,
    pub opportunities: BTreeMap<(StudentIdx, KcIdx), usize>,
}

impl MasteryTable {
    pub fn alpha_for(&self, s: StudentIdx, p: ProblemIdx, k: KcIdx) -> Option<f64> {
        self.alpha.get(&(s, p, k)).copied()
    }

    /// TSV export: `student\tproblem\tkc\talpha\tn`.
    pub fn write_tsv<W: Write>(&self, vocab: &Vocabulary, mut out: W) -> Result<(), MasteryError> {
        writeln!(out, "student\tproblem\tkc\talpha\tn")?;
        for (&(s, p, k), &alpha) in &self.alpha {
            let n = self.opportunities.get(&(s, k)).copied().unwrap_or(0);
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}",
                vocab.students.name(s.0),
                vocab.problems.name(p.0),
                vocab.kcs.name(k.0),
                alpha,
                n
            )?;
        }
        Ok(())
    }

    pub fn read_tsv<R: BufRead>(source: R, vocab: &Vocabulary) -> Result<Self, MasteryError> {
        let mut table = MasteryTable::default();
        for (i, line) in source.lines().enumerate() {
            let line = line?;
            if i == 0 || line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 5 {
                return Err(MasteryError::Table(i + 1, "expected 5 columns".into()));
            }
            let lookup = |table: &crate::corpus::NameTable, name: &str| {
                table.lookup(name).ok_or_else(|| {
                    MasteryError::Table(i + 1, format!("unknown identifier {name:?}"))
                })
            };
            let s = StudentIdx(lookup(&vocab.students, fields[0])?);
            let p = ProblemIdx(lookup(&vocab.problems, fields[1])?);
            let k = KcIdx(lookup(&vocab.kcs, fields[2])?);
            let alpha: f64 = fields[3]
                .parse()
                .map_err(|e| MasteryError::Table(i + 1, format!("bad alpha: {e}")))?;
            let n: usize = fields[4]
                .parse()
                .map_err(|e| MasteryError::Table(i + 1, format!("bad n: {e}")))?;
            table.alpha.insert((s, p, k), alpha);
            table.opportunities.insert((s, k), n);
        }
        Ok(table)
    }
}

/// A maximal chronological run of one student's records on one problem.
struct AttemptRun<'a> {
    records: &'a [InteractionRecord],
}

fn attempt_runs(records: &[InteractionRecord]) -> Vec<AttemptRun<'_>> {
    let mut runs = Vec::new();
    let mut start = 0;
    for i in 0..records.len() {
        let boundary = i > 0
            && (records[i].student != records[i - 1].student || records[i].step_index == 0);
        if boundary {
            runs.push(AttemptRun { records: &records[start..i] });
            start = i;
        }
    }
    if start < records.len() {
        runs.push(AttemptRun { records: &records[start..] });
    }
    runs
}

fn window_into_sequences(
    student: StudentIdx,
    unit: UnitIdx,
    tokens: Vec<OppToken>,
    targets: Vec<bool>,
    max_seq_len: usize,
    out: &mut Vec<OpportunitySequence>,
) {
    let mut offset = 0;
    while offset < tokens.len() {
        let end = (offset + max_seq_len).min(tokens.len());
        out.push(OpportunitySequence {
            student,
            unit,
            tokens: tokens[offset..end].to_vec(),
            targets: targets[offset..end].to_vec(),
        });
        offset = end;
    }
}

/// Training sequences: per (student, unit), the first problem the student
/// worked in each section, steps concatenated chronologically and split
/// into `max_seq_len` windows.
pub fn build_opportunity_sequences(
    records: &[InteractionRecord],
    max_seq_len: usize,
) -> Vec<OpportunitySequence> {
    build_sequences(records, max_seq_len, true)
}

/// Coverage sequences for mastery extraction: every first-attempt run, so
/// the resulting table has an α entry for every corpus (S, P, K) triple.
pub fn build_extraction_sequences(
    records: &[InteractionRecord],
    max_seq_len: usize,
) -> Vec<OpportunitySequence> {
    build_sequences(records, max_seq_len, false)
}

fn build_sequences(
    records: &[InteractionRecord],
    max_seq_len: usize,
    first_problem_per_section_only: bool,
) -> Vec<OpportunitySequence> {
    let mut out = Vec::new();
    let runs = attempt_runs(records);

    // group runs per student, preserving chronological order
    let mut by_student: Vec<(StudentIdx, Vec<&AttemptRun>)> = Vec::new();
    for run in &runs {
        let student = run.records[0].student;
        match by_student.last_mut() {
            Some((s, list)) if *s == student => list.push(run),
            _ => by_student.push((student, vec![run])),
        }
    }

    for (student, runs) in by_student {
        // units in first-appearance order; per unit, accumulated tokens
        let mut units: Vec<UnitIdx> = Vec::new();
        let mut per_unit: BTreeMap<UnitIdx, (Vec<OppToken>, Vec<bool>)> = BTreeMap::new();
        let mut section_taken: BTreeMap<(UnitIdx, usize), ProblemIdx> = BTreeMap::new();
        let mut attempted: std::collections::HashSet<ProblemIdx> = Default::default();

        for run in runs {
            let first = &run.records[0];
            let unit = first.unit;
            if !per_unit.contains_key(&unit) {
                units.push(unit);
                per_unit.insert(unit, (Vec::new(), Vec::new()));
            }
            if !attempted.insert(first.problem) {
                continue; // re-attempt of an already-seen problem
            }
            if first_problem_per_section_only {
                let key = (unit, first.section.0);
                if let Some(&chosen) = section_taken.get(&key) {
                    if chosen != first.problem {
                        continue;
                    }
                } else {
                    section_taken.insert(key, first.problem);
                }
            }
            let (tokens, targets) = per_unit.get_mut(&unit).expect("inserted above");
            for r in run.records {
                tokens.push(OppToken { kc: r.kc, problem: r.problem, step_index: r.step_index });
                targets.push(r.cfa);
            }
        }

        for unit in units {
            let (tokens, targets) = per_unit.remove(&unit).expect("populated");
            if !tokens.is_empty() {
                window_into_sequences(student, unit, tokens, targets, max_seq_len, &mut out);
            }
        }
    }
    out
}

/// Distill mastery scores from the model's encoder-decoder attention.
///
/// For every (problem, KC) a student touched in `sequences`: α is the
/// attention mass (final decoder layer, mean over heads, summed over
/// decoder steps) received by that KC's positions predicted correct,
/// divided by the total mass received by those positions.
pub fn mastery_score(
    model: &CfaModel,
    sequences: &[OpportunitySequence],
) -> Result<MasteryTable, MasteryError> {
    let mut numer: BTreeMap<(StudentIdx, ProblemIdx, KcIdx), f64> = BTreeMap::new();
    let mut denom: BTreeMap<(StudentIdx, ProblemIdx, KcIdx), f64> = BTreeMap::new();
    let mut table = MasteryTable::default();

    for seq in sequences {
        let prediction = model.predict(seq)?;
        let last_layer = prediction.attention.last().expect("≥1 decoder layer");
        let heads = last_layer.len() as f64;
        // column mass: total attention received by each encoder position,
        // averaged over heads and summed over decoder steps
        let len = seq.tokens.len();
        let mut mass = vec![0.0f64; len];
        for head in last_layer {
            for row in head.rows() {
                for (j, m) in mass.iter_mut().enumerate() {
                    *m += row[j];
                }
            }
        }
        for m in &mut mass {
            *m /= heads;
        }
        for (j, token) in seq.tokens.iter().enumerate() {
            let key = (seq.student, token.problem, token.kc);
            *denom.entry(key).or_insert(0.0) += mass[j];
            if prediction.predictions[j] {
                *numer.entry(key).or_insert(0.0) += mass[j];
            }
            *table.opportunities.entry((seq.student, token.kc)).or_insert(0) += 1;
        }
    }

    for (key, d) in denom {
        let n = numer.get(&key).copied().unwrap_or(0.0);
        let alpha = if d > 0.0 { (n / d).clamp(0.0, 1.0) } else { 0.0 };
        table.alpha.insert(key, alpha);
    }
    Ok(table)
}
