//! Evaluation manager: dispatches validation requests to evaluators, caches
//! results per `(evaluator, genotype)` and persists them as an append-only
//! JSON Lines log.

mod external;
mod synthetic;
mod table;

pub use external::{protocol, ExternalEvaluator, DEFAULT_TIMEOUT};
pub use synthetic::{AccuracyParams, Interaction, LatencyParams, SyntheticEvaluator, SyntheticSurface, SURFACE_PRESETS};
pub use table::TableEvaluator;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::objectives::{ObjectiveSpec, ObjectiveVector};
use crate::space::{FeatureScheme, Genotype, SearchSpace};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("evaluation failed: {0}")]
    EvaluationFailed(String),
    #[error("evaluation timed out after {0:.1} s")]
    EvaluationTimeout(f64),
    #[error("protocol error: {detail} (payload: {raw})")]
    ProtocolError { detail: String, raw: String },
    #[error("objective mismatch: {0}")]
    ObjectiveMismatch(String),
    #[error("evaluator handshake failed: {0}")]
    HandshakeFailed(String),
    #[error("result store: {0}")]
    Store(String),
}

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Validation,
    Predicted,
}

impl Source {
    pub fn as_str(&self) -> &'static str {
        match self {
            Source::Validation => "validation",
            Source::Predicted => "predicted",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    pub genotype: Genotype,
    pub objectives: ObjectiveVector,
    pub source: Source,
    pub evaluator_id: String,
    pub sequence_number: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FailureRecord {
    pub genotype: Genotype,
    pub evaluator_id: String,
    pub error: String,
    pub sequence_number: u64,
    pub gen: u32,
}

/// Anything that can measure objectives for a batch of canonical genotypes.
///
/// Implementations return one result per input, aligned by position, with
/// values ordered like [`Evaluator::objectives`].
pub trait Evaluator {
    fn id(&self) -> &str;
    fn objectives(&self) -> &[ObjectiveSpec];
    fn evaluate_many(&mut self, batch: &[Genotype]) -> Vec<Result<ObjectiveVector, EvalError>>;
}

/// Picks the named objectives out of an evaluator's output map.
pub(crate) fn select_objectives(
    named: &BTreeMap<String, f64>,
    specs: &[ObjectiveSpec],
) -> Result<ObjectiveVector, EvalError> {
    let values = specs
        .iter()
        .map(|s| {
            named
                .get(&s.name)
                .copied()
                .ok_or_else(|| EvalError::ObjectiveMismatch(format!("missing objective `{}`", s.name)))
        })
        .collect::<Result<Vec<f64>, _>>()?;
    ObjectiveVector::new(values, specs).map_err(|e| EvalError::ObjectiveMismatch(e.to_string()))
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum LogLine {
    Record {
        seq: u64,
        gen: u32,
        genotype: Genotype,
        objectives_raw: serde_json::Map<String, serde_json::Value>,
        source: Source,
        evaluator: String,
    },
    Failure {
        seq: u64,
        gen: u32,
        genotype: Genotype,
        evaluator: String,
        error: String,
    },
}

/// Append-only collection of evaluation records with a validation index.
///
/// Every appended record is assigned the next sequence number. When opened
/// on a file, each append is written through as one JSON line, and
/// reopening replays the file into an identical store.
pub struct ResultStore {
    specs: Vec<ObjectiveSpec>,
    records: Vec<EvaluationRecord>,
    generations: Vec<u32>,
    failures: Vec<FailureRecord>,
    index: HashMap<(String, Genotype), usize>,
    validated: HashSet<Genotype>,
    next_seq: u64,
    log: Option<BufWriter<File>>,
}

impl std::fmt::Debug for ResultStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ResultStore")
            .field("records", &self.records.len())
            .field("failures", &self.failures.len())
            .field("persistent", &self.log.is_some())
            .finish()
    }
}

impl ResultStore {
    pub fn in_memory(specs: Vec<ObjectiveSpec>) -> Self {
        ResultStore {
            specs,
            records: Vec::new(),
            generations: Vec::new(),
            failures: Vec::new(),
            index: HashMap::new(),
            validated: HashSet::new(),
            next_seq: 0,
            log: None,
        }
    }

    /// Opens (or creates) a log file, replaying existing lines.
    pub fn open(path: &Path, specs: Vec<ObjectiveSpec>) -> Result<Self, EvalError> {
        let mut store = Self::in_memory(specs);
        if path.exists() {
            let file = File::open(path).map_err(|e| EvalError::Store(e.to_string()))?;
            for (n, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| EvalError::Store(e.to_string()))?;
                if line.trim().is_empty() {
                    continue;
                }
                store.replay_line(&line).map_err(|e| EvalError::Store(format!("line {}: {e}", n + 1)))?;
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| EvalError::Store(e.to_string()))?;
        store.log = Some(BufWriter::new(file));
        Ok(store)
    }

    /// Rebuilds an in-memory store from JSON Lines text.
    pub fn from_jsonl(text: &str, specs: Vec<ObjectiveSpec>) -> Result<Self, EvalError> {
        let mut store = Self::in_memory(specs);
        for (n, line) in text.lines().enumerate() {
            if !line.trim().is_empty() {
                store.replay_line(line).map_err(|e| EvalError::Store(format!("line {}: {e}", n + 1)))?;
            }
        }
        Ok(store)
    }

    fn replay_line(&mut self, line: &str) -> Result<(), String> {
        match serde_json::from_str::<LogLine>(line).map_err(|e| e.to_string())? {
            LogLine::Record { seq, gen, genotype, objectives_raw, source, evaluator } => {
                let named: BTreeMap<String, f64> = objectives_raw
                    .into_iter()
                    .map(|(k, v)| v.as_f64().map(|x| (k.clone(), x)).ok_or(format!("objective `{k}` is not a number")))
                    .collect::<Result<_, _>>()?;
                let objectives = select_objectives(&named, &self.specs).map_err(|e| e.to_string())?;
                self.insert(EvaluationRecord { genotype, objectives, source, evaluator_id: evaluator, sequence_number: seq }, gen);
            }
            LogLine::Failure { seq, gen, genotype, evaluator, error } => {
                self.failures.push(FailureRecord { genotype, evaluator_id: evaluator, error, sequence_number: seq, gen });
                self.next_seq = self.next_seq.max(seq + 1);
            }
        }
        Ok(())
    }

    fn insert(&mut self, record: EvaluationRecord, gen: u32) {
        self.next_seq = self.next_seq.max(record.sequence_number + 1);
        if record.source == Source::Validation {
            self.validated.insert(record.genotype.clone());
            self.index
                .entry((record.evaluator_id.clone(), record.genotype.clone()))
                .or_insert(self.records.len());
        }
        self.records.push(record);
        self.generations.push(gen);
    }

    fn line_for(&self, idx: usize) -> String {
        let r = &self.records[idx];
        let objectives_raw = self
            .specs
            .iter()
            .zip(r.objectives.values())
            .map(|(s, &v)| (s.name.clone(), serde_json::Value::from(v)))
            .collect();
        let line = LogLine::Record {
            seq: r.sequence_number,
            gen: self.generations[idx],
            genotype: r.genotype.clone(),
            objectives_raw,
            source: r.source,
            evaluator: r.evaluator_id.clone(),
        };
        serde_json::to_string(&line).expect("record serializes")
    }

    fn write_line(&mut self, line: &str) -> Result<(), EvalError> {
        if let Some(log) = self.log.as_mut() {
            writeln!(log, "{line}").and_then(|_| log.flush()).map_err(|e| EvalError::Store(e.to_string()))?;
        }
        Ok(())
    }

    /// Appends a record, assigning the next sequence number. Validation
    /// records for an already indexed `(evaluator, genotype)` are rejected.
    pub fn append(
        &mut self,
        genotype: Genotype,
        objectives: ObjectiveVector,
        source: Source,
        evaluator_id: &str,
        gen: u32,
    ) -> Result<&EvaluationRecord, EvalError> {
        if objectives.len() != self.specs.len() {
            return Err(EvalError::ObjectiveMismatch(format!(
                "{} values for {} objectives",
                objectives.len(),
                self.specs.len()
            )));
        }
        if source == Source::Validation && self.index.contains_key(&(evaluator_id.to_string(), genotype.clone())) {
            return Err(EvalError::Store(format!("duplicate validation record for {}", genotype.id())));
        }
        let record = EvaluationRecord {
            genotype,
            objectives,
            source,
            evaluator_id: evaluator_id.to_string(),
            sequence_number: self.next_seq,
        };
        self.insert(record, gen);
        let idx = self.records.len() - 1;
        let line = self.line_for(idx);
        self.write_line(&line)?;
        Ok(&self.records[idx])
    }

    pub fn record_failure(&mut self, genotype: Genotype, evaluator_id: &str, error: &EvalError, gen: u32) -> Result<(), EvalError> {
        let seq = self.next_seq;
        self.next_seq += 1;
        let line = serde_json::to_string(&LogLine::Failure {
            seq,
            gen,
            genotype: genotype.clone(),
            evaluator: evaluator_id.to_string(),
            error: error.to_string(),
        })
        .expect("failure serializes");
        self.failures.push(FailureRecord {
            genotype,
            evaluator_id: evaluator_id.to_string(),
            error: error.to_string(),
            sequence_number: seq,
            gen,
        });
        self.write_line(&line)
    }

    pub fn specs(&self) -> &[ObjectiveSpec] {
        &self.specs
    }

    pub fn records(&self) -> &[EvaluationRecord] {
        &self.records
    }

    pub fn generation_of(&self, idx: usize) -> u32 {
        self.generations[idx]
    }

    pub fn failures(&self) -> &[FailureRecord] {
        &self.failures
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn lookup(&self, evaluator_id: &str, genotype: &Genotype) -> Option<&EvaluationRecord> {
        self.index.get(&(evaluator_id.to_string(), genotype.clone())).map(|&i| &self.records[i])
    }

    pub fn is_validated(&self, genotype: &Genotype) -> bool {
        self.validated.contains(genotype)
    }

    pub fn validation_records(&self) -> impl Iterator<Item = &EvaluationRecord> {
        self.records.iter().filter(|r| r.source == Source::Validation)
    }

    pub fn validation_count(&self) -> usize {
        self.validation_records().count()
    }

    /// The full log (records and failures) as JSON Lines, ordered by sequence number.
    pub fn to_jsonl(&self) -> String {
        let mut lines: Vec<(u64, String)> = (0..self.records.len()).map(|i| (self.records[i].sequence_number, self.line_for(i))).collect();
        for f in &self.failures {
            let line = serde_json::to_string(&LogLine::Failure {
                seq: f.sequence_number,
                gen: f.gen,
                genotype: f.genotype.clone(),
                evaluator: f.evaluator_id.clone(),
                error: f.error.clone(),
            })
            .expect("failure serializes");
            lines.push((f.sequence_number, line));
        }
        lines.sort_by_key(|(s, _)| *s);
        let mut out = String::new();
        for (_, l) in lines {
            out.push_str(&l);
            out.push('\n');
        }
        out
    }
}

/// Returns cached validation records where present and dispatches the rest
/// to `evaluator` in one call. Output order matches input order; repeated
/// genotypes in a batch are dispatched once. Failures are logged in the
/// store and reported per genotype.
pub fn evaluate_batch(
    genotypes: &[Genotype],
    evaluator: &mut dyn Evaluator,
    store: &mut ResultStore,
    gen: u32,
) -> Vec<Result<EvaluationRecord, EvalError>> {
    let id = evaluator.id().to_string();
    let mut pending: Vec<Genotype> = Vec::new();
    let mut queued = HashSet::new();
    for g in genotypes {
        if store.lookup(&id, g).is_none() && queued.insert(g.clone()) {
            pending.push(g.clone());
        }
    }
    let mut failed: HashMap<Genotype, EvalError> = HashMap::new();
    if !pending.is_empty() {
        let mut results = evaluator.evaluate_many(&pending);
        if results.len() != pending.len() {
            let err = EvalError::EvaluationFailed(format!("evaluator returned {} results for {} requests", results.len(), pending.len()));
            results = vec![Err(err); pending.len()];
        }
        for (g, res) in pending.into_iter().zip(results) {
            let outcome = res.and_then(|ov| store.append(g.clone(), ov, Source::Validation, &id, gen).map(|_| ()));
            if let Err(e) = outcome {
                if let Err(store_err) = store.record_failure(g.clone(), &id, &e, gen) {
                    log::warn!("could not log failure for {}: {store_err}", g.id());
                }
                failed.insert(g, e);
            }
        }
    }
    genotypes
        .iter()
        .map(|g| match failed.get(g) {
            Some(e) => Err(e.clone()),
            None => Ok(store.lookup(&id, g).expect("evaluated or cached").clone()),
        })
        .collect()
}

/// Feature matrix and targets for one objective from validation records,
/// first record per genotype, in sequence order. `evaluator` restricts the
/// records to one evaluator id.
pub fn training_set(
    store: &ResultStore,
    objective: &str,
    scheme: FeatureScheme,
    space: &SearchSpace,
    evaluator: Option<&str>,
) -> Result<(Vec<Vec<f64>>, Vec<f64>), EvalError> {
    let k = store
        .specs()
        .iter()
        .position(|s| s.name == objective)
        .ok_or_else(|| EvalError::ObjectiveMismatch(format!("unknown objective `{objective}`")))?;
    let mut seen = HashSet::new();
    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut records: Vec<&EvaluationRecord> = store
        .validation_records()
        .filter(|r| evaluator.is_none_or(|e| r.evaluator_id == e))
        .collect();
    records.sort_by_key(|r| r.sequence_number);
    for r in records {
        if !seen.insert(&r.genotype) {
            continue;
        }
        let f = space.encode_features(&r.genotype, scheme).map_err(|e| EvalError::EvaluationFailed(e.to_string()))?;
        x.push(f);
        y.push(r.objectives.values()[k]);
    }
    if x.is_empty() {
        return Err(EvalError::ObjectiveMismatch(format!("no validation records for `{objective}`")));
    }
    Ok((x, y))
}
