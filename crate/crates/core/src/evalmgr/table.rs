//! Static lookup-table evaluator.
//!
//! The table is a JSON Lines file, one entry per line:
//! `{"genes":[...],"objectives":{"top1":76.1,"latency_ms":9.8}}`.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::Deserialize;

use super::{select_objectives, EvalError, Evaluator};
use crate::objectives::{ObjectiveSpec, ObjectiveVector};
use crate::space::Genotype;

#[derive(Deserialize)]
struct TableRow {
    genes: Vec<i64>,
    objectives: BTreeMap<String, f64>,
}

pub struct TableEvaluator {
    id: String,
    specs: Vec<ObjectiveSpec>,
    rows: HashMap<Genotype, BTreeMap<String, f64>>,
}

impl TableEvaluator {
    pub fn from_jsonl(text: &str, specs: Vec<ObjectiveSpec>, id: impl Into<String>) -> Result<Self, EvalError> {
        let mut rows = HashMap::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let row: TableRow = serde_json::from_str(line).map_err(|e| EvalError::ProtocolError {
                detail: format!("table line {}: {e}", n + 1),
                raw: line.to_string(),
            })?;
            rows.insert(Genotype::new(row.genes), row.objectives);
        }
        Ok(TableEvaluator { id: id.into(), specs, rows })
    }

    pub fn load(path: &Path, specs: Vec<ObjectiveSpec>) -> Result<Self, EvalError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| EvalError::EvaluationFailed(format!("{}: {e}", path.display())))?;
        Self::from_jsonl(&text, specs, format!("table:{}", path.display()))
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

impl Evaluator for TableEvaluator {
    fn id(&self) -> &str {
        &self.id
    }

    fn objectives(&self) -> &[ObjectiveSpec] {
        &self.specs
    }

    fn evaluate_many(&mut self, batch: &[Genotype]) -> Vec<Result<ObjectiveVector, EvalError>> {
        batch
            .iter()
            .map(|g| match self.rows.get(g) {
                Some(named) => select_objectives(named, &self.specs),
                None => Err(EvalError::EvaluationFailed(format!("genotype {} not in table", g.id()))),
            })
            .collect()
    }
}
