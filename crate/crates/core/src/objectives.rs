//! Objective vectors, dominance, Pareto fronts and 2-D hypervolume.
//!
//! All comparisons happen in the *canonical* minimization space where
//! maximized objectives are negated.

use serde::{Deserialize, Serialize};

use crate::evalmgr::EvaluationRecord;
use crate::space::Genotype;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum ObjectiveError {
    #[error("objective mismatch: {0}")]
    ObjectiveMismatch(String),
    #[error("empty input")]
    EmptyInput,
    #[error("latency normalizer has l_max = 0")]
    DegenerateNormalizer,
    #[error("point {point:?} is not strictly inside the reference box {reference:?}")]
    ReferenceViolation { point: Vec<f64>, reference: Vec<f64> },
    #[error("hypervolume is only implemented for 2 objectives, got {0}")]
    Unsupported2DOnly(usize),
    #[error("non-finite objective value {0}")]
    NonFinite(f64),
}

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Minimize,
    Maximize,
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct ObjectiveSpec {
    pub name: String,
    pub direction: Direction,
    #[serde(default)]
    pub unit: String,
}

impl ObjectiveSpec {
    pub fn new(name: impl Into<String>, direction: Direction, unit: impl Into<String>) -> Self {
        ObjectiveSpec { name: name.into(), direction, unit: unit.into() }
    }

    pub fn maximize(name: impl Into<String>) -> Self {
        Self::new(name, Direction::Maximize, "")
    }

    pub fn minimize(name: impl Into<String>) -> Self {
        Self::new(name, Direction::Minimize, "")
    }

    fn to_canonical(&self, v: f64) -> f64 {
        match self.direction {
            Direction::Minimize => v,
            Direction::Maximize => -v,
        }
    }
}

/// `top1` maximized and `latency_ms` minimized, the usual pair.
pub fn default_objectives() -> Vec<ObjectiveSpec> {
    vec![ObjectiveSpec::new("top1", Direction::Maximize, "%"), ObjectiveSpec::new("latency_ms", Direction::Minimize, "ms")]
}

/// Rejects empty or duplicate-named objective lists.
pub fn validate_specs(specs: &[ObjectiveSpec]) -> Result<(), ObjectiveError> {
    if specs.is_empty() {
        return Err(ObjectiveError::ObjectiveMismatch("no objectives".into()));
    }
    for (i, s) in specs.iter().enumerate() {
        if specs[..i].iter().any(|o| o.name == s.name) {
            return Err(ObjectiveError::ObjectiveMismatch(format!("duplicate objective `{}`", s.name)));
        }
    }
    Ok(())
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct ObjectiveVector {
    values: Vec<f64>,
    canonical: Vec<f64>,
}

impl ObjectiveVector {
    pub fn new(values: Vec<f64>, specs: &[ObjectiveSpec]) -> Result<Self, ObjectiveError> {
        if values.len() != specs.len() {
            return Err(ObjectiveError::ObjectiveMismatch(format!(
                "{} values for {} objectives",
                values.len(),
                specs.len()
            )));
        }
        if let Some(&bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(ObjectiveError::NonFinite(bad));
        }
        let canonical = values.iter().zip(specs).map(|(&v, s)| s.to_canonical(v)).collect();
        Ok(ObjectiveVector { values, canonical })
    }

    /// Values as measured.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Values in minimization space.
    pub fn canonical(&self) -> &[f64] {
        &self.canonical
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Raw-slice dominance in minimization space. Callers guarantee equal arity.
pub fn dominates_min(a: &[f64], b: &[f64]) -> bool {
    let mut strict = false;
    for (x, y) in a.iter().zip(b) {
        if x > y {
            return false;
        }
        if x < y {
            strict = true;
        }
    }
    strict
}

pub fn dominates(a: &ObjectiveVector, b: &ObjectiveVector) -> Result<bool, ObjectiveError> {
    if a.len() != b.len() {
        return Err(ObjectiveError::ObjectiveMismatch(format!("arity {} vs {}", a.len(), b.len())));
    }
    Ok(dominates_min(a.canonical(), b.canonical()))
}

/// Indices of the non-dominated points (minimization), in input order.
/// Identical points are all kept.
pub fn non_dominated_indices<P: AsRef<[f64]>>(points: &[P]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&i, &j| lex_cmp(points[i].as_ref(), points[j].as_ref()).then(i.cmp(&j)));
    // A dominator always sorts strictly before the point it dominates, and
    // dominance is transitive, so checking against kept points suffices.
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        let p = points[i].as_ref();
        if !kept.iter().any(|&k| dominates_min(points[k].as_ref(), p)) {
            kept.push(i);
        }
    }
    kept.sort_unstable();
    kept
}

pub(crate) fn lex_cmp(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            std::cmp::Ordering::Equal => continue,
            other => return other,
        }
    }
    std::cmp::Ordering::Equal
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct ParetoFront {
    pub members: Vec<EvaluationRecord>,
}

impl ParetoFront {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn genotypes(&self) -> Vec<Genotype> {
        self.members.iter().map(|r| r.genotype.clone()).collect()
    }

    pub fn canonical_points(&self) -> Vec<Vec<f64>> {
        self.members.iter().map(|r| r.objectives.canonical().to_vec()).collect()
    }

    pub fn hypervolume_2d(&self, reference: &[f64]) -> Result<f64, ObjectiveError> {
        hypervolume_2d(&self.canonical_points(), reference)
    }
}

/// Non-dominated subset of `records`. Later records repeating an earlier
/// genotype are dropped first, so ties resolve to the earliest record.
pub fn pareto_front(records: &[EvaluationRecord]) -> Result<ParetoFront, ObjectiveError> {
    let first = records.first().ok_or(ObjectiveError::EmptyInput)?;
    let arity = first.objectives.len();
    if let Some(r) = records.iter().find(|r| r.objectives.len() != arity) {
        return Err(ObjectiveError::ObjectiveMismatch(format!(
            "record {} has {} objectives, expected {arity}",
            r.genotype.id(),
            r.objectives.len()
        )));
    }
    let mut seen = std::collections::HashSet::new();
    let unique: Vec<&EvaluationRecord> = records.iter().filter(|r| seen.insert(&r.genotype)).collect();
    let points: Vec<&[f64]> = unique.iter().map(|r| r.objectives.canonical()).collect();
    let members = non_dominated_indices(&points).into_iter().map(|i| unique[i].clone()).collect();
    Ok(ParetoFront { members })
}

/// Latency normalization `(l - l_min) / l_max`.
///
/// The result is not clamped and only spans `[0, 1]` when `l_min = 0`.
#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq)]
pub struct LatencyNormalizer {
    pub l_min: f64,
    pub l_max: f64,
}

impl LatencyNormalizer {
    pub fn new(l_min: f64, l_max: f64) -> Result<Self, ObjectiveError> {
        if !l_min.is_finite() || !l_max.is_finite() || l_min > l_max || l_min < 0.0 {
            return Err(ObjectiveError::ObjectiveMismatch(format!("invalid latency bounds [{l_min}, {l_max}]")));
        }
        Ok(LatencyNormalizer { l_min, l_max })
    }

    /// Bounds taken from observed latencies.
    pub fn observed(latencies: &[f64]) -> Result<Self, ObjectiveError> {
        if latencies.is_empty() {
            return Err(ObjectiveError::EmptyInput);
        }
        let lo = latencies.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = latencies.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Self::new(lo, hi)
    }
}

pub fn normalize_latency(l: f64, n: &LatencyNormalizer) -> Result<f64, ObjectiveError> {
    if n.l_max == 0.0 {
        return Err(ObjectiveError::DegenerateNormalizer);
    }
    if !l.is_finite() {
        return Err(ObjectiveError::NonFinite(l));
    }
    Ok((l - n.l_min) / n.l_max)
}

/// Area dominated by `points` (minimization space) inside the box bounded
/// by `reference`. Dominated points may be included; they add nothing.
pub fn hypervolume_2d<P: AsRef<[f64]>>(points: &[P], reference: &[f64]) -> Result<f64, ObjectiveError> {
    if reference.len() != 2 {
        return Err(ObjectiveError::Unsupported2DOnly(reference.len()));
    }
    let mut pts: Vec<[f64; 2]> = Vec::with_capacity(points.len());
    for p in points {
        let p = p.as_ref();
        if p.len() != 2 {
            return Err(ObjectiveError::Unsupported2DOnly(p.len()));
        }
        if !(p[0] < reference[0] && p[1] < reference[1]) {
            return Err(ObjectiveError::ReferenceViolation { point: p.to_vec(), reference: reference.to_vec() });
        }
        pts.push([p[0], p[1]]);
    }
    Ok(strip_sum(&mut pts, [reference[0], reference[1]]))
}

/// Sorts by the first coordinate and sums the horizontal strips of the
/// staircase. Assumes every point lies inside the reference box.
fn strip_sum(pts: &mut [[f64; 2]], reference: [f64; 2]) -> f64 {
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    let mut area = 0.0;
    let mut level = reference[1];
    for p in pts.iter() {
        if p[1] < level {
            area += (reference[0] - p[0]) * (level - p[1]);
            level = p[1];
        }
    }
    area
}

/// Fixed hypervolume reference: the worst canonical value per objective,
/// pushed 5% of its magnitude further away.
pub fn reference_point<P: AsRef<[f64]>>(points: &[P]) -> Result<Vec<f64>, ObjectiveError> {
    let first = points.first().ok_or(ObjectiveError::EmptyInput)?.as_ref();
    let m = first.len();
    let mut worst = vec![f64::NEG_INFINITY; m];
    let mut best = vec![f64::INFINITY; m];
    for p in points {
        let p = p.as_ref();
        if p.len() != m {
            return Err(ObjectiveError::ObjectiveMismatch("ragged points".into()));
        }
        for k in 0..m {
            worst[k] = worst[k].max(p[k]);
            best[k] = best[k].min(p[k]);
        }
    }
    Ok((0..m)
        .map(|k| {
            let mut margin = 0.05 * worst[k].abs();
            if margin == 0.0 {
                margin = 0.05 * (worst[k] - best[k]);
            }
            if margin == 0.0 {
                margin = 1e-9;
            }
            worst[k] + margin
        })
        .collect())
}
