//! Search tactics: predictor-backed full search, validation-only search and
//! ConcurrentNAS, plus hypervolume-versus-evaluations tracking and report
//! export.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::evalmgr::{evaluate_batch, training_set, EvalError, EvaluationRecord, Evaluator, ResultStore, Source};
use crate::evolver::{crowding_distance, evolve, non_dominated_sort, select_best, EvolverConfig, EvolverError, Scored, SearchTrace};
use crate::objectives::{dominates_min, hypervolume_2d, pareto_front, reference_point, ObjectiveError, ObjectiveSpec, ObjectiveVector, ParetoFront};
use crate::predict::{encode_all, PredictError, Predictor, PredictorSpec};
use crate::seed::sub_seed;
use crate::space::{FeatureScheme, Genotype, SearchSpace};

#[derive(Debug, thiserror::Error)]
pub enum DriverError {
    #[error("invalid search configuration: {0}")]
    InvalidConfig(String),
    #[error("predictor training for `{objective}` failed: {source}")]
    Training { objective: String, source: PredictError },
    #[error(transparent)]
    Predict(#[from] PredictError),
    #[error(transparent)]
    Evolver(#[from] EvolverError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error("no genotype could be validated")]
    NoValidations,
    #[error("writing report: {0}")]
    Io(String),
}

/// Where the search gets values for one objective.
#[derive(Clone)]
pub enum Surrogate {
    /// A predictor retrained on the validation data.
    Trained(PredictorSpec),
    /// An exact objective function, used to isolate predictor error.
    Oracle(Arc<dyn Fn(&Genotype) -> f64 + Send + Sync>),
}

impl fmt::Debug for Surrogate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Surrogate::Trained(s) => f.debug_tuple("Trained").field(s).finish(),
            Surrogate::Oracle(_) => f.write_str("Oracle"),
        }
    }
}

/// Ridge with default settings for every objective.
pub fn default_surrogates(specs: &[ObjectiveSpec]) -> Vec<Surrogate> {
    specs.iter().map(|_| Surrogate::Trained(PredictorSpec::ridge_default())).collect()
}

#[derive(Clone, Debug)]
pub struct FullSearchConfig {
    pub n_train: usize,
    /// Its `seed` is replaced by a sub-seed of `seed`.
    pub evolver: EvolverConfig,
    /// One per objective; empty means ridge for all.
    pub surrogates: Vec<Surrogate>,
    pub validation_only: Vec<String>,
    pub warm_start: Option<Vec<Vec<i64>>>,
    pub reference: Option<Vec<f64>>,
    pub hv_stride: usize,
    pub seed: u64,
}

impl Default for FullSearchConfig {
    fn default() -> Self {
        FullSearchConfig {
            n_train: 1000,
            evolver: EvolverConfig::default(),
            surrogates: Vec::new(),
            validation_only: Vec::new(),
            warm_start: None,
            reference: None,
            hv_stride: 1,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ValidationSearchConfig {
    /// Its `seed` is replaced by a sub-seed of `seed`.
    pub evolver: EvolverConfig,
    pub warm_start: Option<Vec<Vec<i64>>>,
    pub reference: Option<Vec<f64>>,
    pub hv_stride: usize,
    pub seed: u64,
}

impl Default for ValidationSearchConfig {
    fn default() -> Self {
        ValidationSearchConfig { evolver: EvolverConfig::default(), warm_start: None, reference: None, hv_stride: 1, seed: 0 }
    }
}

#[derive(Clone, Debug)]
pub struct ConcurrentConfig {
    pub population_size: usize,
    pub iterations: usize,
    pub inner_generations: usize,
    pub crossover_rate: f64,
    pub mutation_rate: Option<f64>,
    /// One per objective; empty means ridge for all.
    pub surrogates: Vec<Surrogate>,
    /// Objectives measured by the evaluator inside the inner search.
    pub validation_only: Vec<String>,
    pub warm_start: Option<Vec<Vec<i64>>>,
    pub reference: Option<Vec<f64>>,
    pub hv_stride: usize,
    pub seed: u64,
}

impl Default for ConcurrentConfig {
    fn default() -> Self {
        ConcurrentConfig {
            population_size: 50,
            iterations: 2,
            inner_generations: 250,
            crossover_rate: 0.9,
            mutation_rate: None,
            surrogates: Vec::new(),
            validation_only: Vec::new(),
            warm_start: None,
            reference: None,
            hv_stride: 1,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictedPoint {
    pub genotype: Genotype,
    pub objectives: ObjectiveVector,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IterationSummary {
    pub iteration: usize,
    pub validated: usize,
    pub failed: usize,
    pub training_samples: usize,
    pub inner_evaluations: usize,
    pub duplicates_accepted: usize,
    /// Evaluator calls made for validation-only objectives inside the
    /// inner search; not part of the validation log.
    pub auxiliary_measurements: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SearchReport {
    pub tactic: String,
    pub specs: Vec<ObjectiveSpec>,
    /// Validated populations in order (ConcurrentNAS populations, or the
    /// per-generation populations of a validation search).
    pub populations: Vec<Vec<Genotype>>,
    /// Front of the last predictor-backed search, with predicted values.
    pub predicted_front: Vec<PredictedPoint>,
    /// Non-dominated validation records.
    pub validated_front: ParetoFront,
    pub reference: Option<Vec<f64>>,
    pub hv_trace: Vec<(usize, f64)>,
    pub phase_seconds: Vec<(String, f64)>,
    pub iterations: Vec<IterationSummary>,
    pub validation_count: usize,
    pub failure_count: usize,
}

impl SearchReport {
    pub fn final_hypervolume(&self) -> Option<f64> {
        self.hv_trace.last().map(|&(_, hv)| hv)
    }

    /// Fewest validations after which the trace reaches `target`.
    pub fn validations_to_reach(&self, target: f64) -> Option<usize> {
        self.hv_trace.iter().find(|&&(_, hv)| hv >= target).map(|&(k, _)| k)
    }
}

/// Hypervolume of the front of the first `k` validation records (sequence
/// order) for `k = stride, 2 stride, ...` and the final count. Points not
/// strictly inside the reference box are left out with a warning.
pub fn hypervolume_trace(store: &ResultStore, reference: &[f64], stride: usize) -> Result<Vec<(usize, f64)>, DriverError> {
    if reference.len() != 2 {
        return Err(ObjectiveError::Unsupported2DOnly(reference.len()).into());
    }
    let stride = stride.max(1);
    let mut records: Vec<&EvaluationRecord> = store.validation_records().collect();
    records.sort_by_key(|r| r.sequence_number);
    let mut front: Vec<[f64; 2]> = Vec::new();
    let mut trace = Vec::new();
    let mut outside = 0usize;
    let n = records.len();
    for (k, r) in records.iter().enumerate() {
        let p = r.objectives.canonical();
        if p[0] < reference[0] && p[1] < reference[1] {
            if !front.iter().any(|q| dominates_min(q, p) || q.as_slice() == p) {
                front.retain(|q| !dominates_min(p, q));
                front.push([p[0], p[1]]);
            }
        } else {
            outside += 1;
        }
        let count = k + 1;
        if count % stride == 0 || count == n {
            trace.push((count, hypervolume_2d(&front, reference)?));
        }
    }
    if outside > 0 {
        log::warn!("{outside} validation records lie outside the hypervolume reference box and were left out");
    }
    Ok(trace)
}

struct Clock {
    phases: Vec<(String, f64)>,
}

impl Clock {
    fn time<T>(&mut self, name: &str, f: impl FnOnce() -> T) -> T {
        let t = Instant::now();
        let out = f();
        let secs = t.elapsed().as_secs_f64();
        match self.phases.iter_mut().find(|(n, _)| n == name) {
            Some((_, s)) => *s += secs,
            None => self.phases.push((name.to_string(), secs)),
        }
        out
    }
}

fn check_specs(store: &ResultStore, evaluator: &dyn Evaluator) -> Result<Vec<ObjectiveSpec>, DriverError> {
    let specs = store.specs().to_vec();
    let names: Vec<&str> = specs.iter().map(|s| s.name.as_str()).collect();
    let ev: Vec<&str> = evaluator.objectives().iter().map(|s| s.name.as_str()).collect();
    if names != ev {
        return Err(EvalError::ObjectiveMismatch(format!("store has {names:?}, evaluator provides {ev:?}")).into());
    }
    Ok(specs)
}

fn resolve_surrogates(specs: &[ObjectiveSpec], given: &[Surrogate], validation_only: &[String]) -> Result<Vec<Option<Surrogate>>, DriverError> {
    for name in validation_only {
        if !specs.iter().any(|s| &s.name == name) {
            return Err(DriverError::InvalidConfig(format!("validation-only objective `{name}` is not an objective")));
        }
    }
    let given = if given.is_empty() { default_surrogates(specs) } else { given.to_vec() };
    if given.len() != specs.len() {
        return Err(DriverError::InvalidConfig(format!("{} predictors for {} objectives", given.len(), specs.len())));
    }
    Ok(specs
        .iter()
        .zip(given)
        .map(|(s, g)| if validation_only.contains(&s.name) { None } else { Some(g) })
        .collect())
}

enum Fitted {
    Model(Predictor),
    Oracle(Arc<dyn Fn(&Genotype) -> f64 + Send + Sync>),
    Measured,
}

/// Trains one predictor per surrogate objective on the store's validation
/// data, in parallel across objectives.
fn train(
    space: &SearchSpace,
    store: &ResultStore,
    specs: &[ObjectiveSpec],
    surrogates: &[Option<Surrogate>],
    evaluator_id: &str,
) -> Result<(Vec<Fitted>, usize), DriverError> {
    let mut jobs = Vec::new();
    let mut samples = 0;
    for (k, s) in surrogates.iter().enumerate() {
        if let Some(Surrogate::Trained(spec)) = s {
            let (x, y) = training_set(store, &specs[k].name, spec.encoding(), space, Some(evaluator_id))?;
            samples = samples.max(x.len());
            jobs.push((k, *spec, x, y));
        }
    }
    let fitted: Vec<(usize, Result<Predictor, PredictError>)> =
        jobs.into_par_iter().map(|(k, spec, x, y)| (k, Predictor::fit_features(&spec, &x, &y))).collect();
    let mut out: Vec<Fitted> = surrogates
        .iter()
        .map(|s| match s {
            Some(Surrogate::Oracle(f)) => Fitted::Oracle(f.clone()),
            _ => Fitted::Measured,
        })
        .collect();
    for (k, res) in fitted {
        let p = res.map_err(|source| DriverError::Training { objective: specs[k].name.clone(), source })?;
        out[k] = Fitted::Model(p);
    }
    Ok((out, samples))
}

/// Scores a batch with the fitted surrogates, asking the evaluator only for
/// measured objectives (cached per genotype).
struct PredictiveObjective<'a> {
    space: &'a SearchSpace,
    specs: &'a [ObjectiveSpec],
    fitted: &'a [Fitted],
    evaluator: &'a mut dyn Evaluator,
    measured: HashMap<Genotype, Result<ObjectiveVector, EvalError>>,
    calls: usize,
}

impl PredictiveObjective<'_> {
    fn score(&mut self, batch: &[Genotype]) -> Vec<Result<Scored, EvalError>> {
        let needs_measure = self.fitted.iter().any(|f| matches!(f, Fitted::Measured));
        if needs_measure {
            let fresh: Vec<Genotype> = batch.iter().filter(|g| !self.measured.contains_key(*g)).cloned().collect();
            if !fresh.is_empty() {
                self.calls += fresh.len();
                for (g, r) in fresh.iter().zip(self.evaluator.evaluate_many(&fresh)) {
                    self.measured.insert(g.clone(), r);
                }
            }
        }
        let mut columns: Vec<Option<Vec<f64>>> = Vec::with_capacity(self.fitted.len());
        let mut encoded: HashMap<FeatureScheme, Vec<Vec<f64>>> = HashMap::new();
        for f in self.fitted {
            columns.push(match f {
                Fitted::Model(p) => {
                    let scheme = p.spec.encoding();
                    if !encoded.contains_key(&scheme) {
                        match encode_all(self.space, batch, scheme) {
                            Ok(x) => {
                                encoded.insert(scheme, x);
                            }
                            Err(e) => {
                                let err = EvalError::EvaluationFailed(e.to_string());
                                return batch.iter().map(|_| Err(err.clone())).collect();
                            }
                        }
                    }
                    match p.predict(&encoded[&scheme]) {
                        Ok(v) => Some(v),
                        Err(e) => {
                            let err = EvalError::EvaluationFailed(e.to_string());
                            return batch.iter().map(|_| Err(err.clone())).collect();
                        }
                    }
                }
                Fitted::Oracle(f) => Some(batch.iter().map(|g| f(g)).collect()),
                Fitted::Measured => None,
            });
        }
        let all_measured = self.fitted.iter().all(|f| matches!(f, Fitted::Measured));
        batch
            .iter()
            .enumerate()
            .map(|(i, g)| {
                let measured = if needs_measure { Some(self.measured[g].clone()?) } else { None };
                let values: Vec<f64> = columns
                    .iter()
                    .enumerate()
                    .map(|(k, c)| match c {
                        Some(col) => col[i],
                        None => measured.as_ref().expect("measured").values()[k],
                    })
                    .collect();
                let objectives = ObjectiveVector::new(values, self.specs).map_err(|e| EvalError::EvaluationFailed(e.to_string()))?;
                let source = if all_measured { Source::Validation } else { Source::Predicted };
                Ok(Scored { objectives, source })
            })
            .collect()
    }
}

/// Runs the evolver against fitted surrogates. Returns the trace and the
/// number of evaluator calls for measured objectives.
#[allow(clippy::too_many_arguments)]
fn predictor_search(
    space: &SearchSpace,
    specs: &[ObjectiveSpec],
    fitted: &[Fitted],
    evaluator: &mut dyn Evaluator,
    cfg: &EvolverConfig,
    seeds: &[Vec<i64>],
) -> Result<(SearchTrace, usize), DriverError> {
    let mut po = PredictiveObjective { space, specs, fitted, evaluator, measured: HashMap::new(), calls: 0 };
    let trace = {
        let mut f = |batch: &[Genotype], _gen: u32| po.score(batch);
        evolve(space, specs, cfg, &mut f, Some(seeds))?
    };
    Ok((trace, po.calls))
}

/// The best `c` validated genotypes by front and crowding, in log order.
fn best_validated(store: &ResultStore, evaluator_id: &str, c: usize) -> Vec<Vec<i64>> {
    let mut seen = HashSet::new();
    let mut recs: Vec<&EvaluationRecord> = store
        .validation_records()
        .filter(|r| r.evaluator_id == evaluator_id)
        .collect();
    recs.sort_by_key(|r| r.sequence_number);
    recs.retain(|r| seen.insert(r.genotype.clone()));
    let pts: Vec<&[f64]> = recs.iter().map(|r| r.objectives.canonical()).collect();
    let mut keep = select_best(&pts, c);
    keep.sort_unstable();
    keep.into_iter().map(|i| recs[i].genotype.genes().to_vec()).collect()
}

fn log_predictions(store: &mut ResultStore, trace: &SearchTrace, evaluator_id: &str) -> Result<(), DriverError> {
    for r in &trace.evaluations {
        if r.source == Source::Predicted {
            store.append(r.genotype.clone(), r.objectives.clone(), Source::Predicted, evaluator_id, r.gen)?;
        }
    }
    Ok(())
}

fn frozen_reference(given: &Option<Vec<f64>>, first: &[&EvaluationRecord]) -> Result<Option<Vec<f64>>, DriverError> {
    if let Some(r) = given {
        return Ok(Some(r.clone()));
    }
    if first.is_empty() || first[0].objectives.len() != 2 {
        return Ok(None);
    }
    let pts: Vec<&[f64]> = first.iter().map(|r| r.objectives.canonical()).collect();
    Ok(Some(reference_point(&pts)?))
}

fn finish_report(
    tactic: &str,
    store: &ResultStore,
    populations: Vec<Vec<Genotype>>,
    predicted_front: Vec<PredictedPoint>,
    reference: Option<Vec<f64>>,
    hv_stride: usize,
    clock: Clock,
    iterations: Vec<IterationSummary>,
) -> Result<SearchReport, DriverError> {
    let validated: Vec<EvaluationRecord> = store.validation_records().cloned().collect();
    if validated.is_empty() {
        return Err(DriverError::NoValidations);
    }
    let hv_trace = match &reference {
        Some(r) => hypervolume_trace(store, r, hv_stride)?,
        None => Vec::new(),
    };
    Ok(SearchReport {
        tactic: tactic.to_string(),
        specs: store.specs().to_vec(),
        populations,
        predicted_front,
        validated_front: pareto_front(&validated)?,
        reference,
        hv_trace,
        phase_seconds: clock.phases,
        iterations,
        validation_count: validated.len(),
        failure_count: store.failures().len(),
    })
}

fn initial_population(space: &SearchSpace, warm: Option<&[Vec<i64>]>, c: usize, store: &ResultStore, seed: u64) -> Vec<Genotype> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for genes in warm.unwrap_or_default() {
        match space.repair(genes) {
            Some(g) if out.len() < c => {
                if seen.insert(g.clone()) {
                    out.push(g);
                }
            }
            Some(_) => {}
            None => log::warn!("skipping warm-start genotype of length {}", genes.len()),
        }
    }
    if out.len() < c {
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, "sampling"));
        let exclude: HashSet<Genotype> = seen.into_iter().chain(store.validation_records().map(|r| r.genotype.clone())).collect();
        out.extend(space.sample_distinct(c - out.len(), &mut rng, &exclude));
    }
    out
}

/// Evolutionary search where every evaluation is a validation.
pub fn validation_search(
    space: &SearchSpace,
    evaluator: &mut dyn Evaluator,
    store: &mut ResultStore,
    cfg: &ValidationSearchConfig,
) -> Result<SearchReport, DriverError> {
    check_specs(store, evaluator)?;
    let specs = store.specs().to_vec();
    let mut clock = Clock { phases: Vec::new() };
    let ecfg = EvolverConfig { seed: sub_seed(cfg.seed, "evolver"), ..cfg.evolver.clone() };
    let trace = clock.time("search", || {
        let mut f = |batch: &[Genotype], gen: u32| {
            evaluate_batch(batch, evaluator, store, gen)
                .into_iter()
                .map(|r| r.map(|rec| Scored { objectives: rec.objectives, source: Source::Validation }))
                .collect()
        };
        evolve(space, &specs, &ecfg, &mut f, cfg.warm_start.as_deref())
    })?;
    let first: Vec<&EvaluationRecord> = trace.populations[0]
        .iter()
        .filter_map(|&i| store.lookup(evaluator.id(), &trace.evaluations[i].genotype))
        .collect();
    let reference = frozen_reference(&cfg.reference, &first)?;
    let populations = trace
        .populations
        .iter()
        .map(|p| p.iter().map(|&i| trace.evaluations[i].genotype.clone()).collect())
        .collect();
    let summary = IterationSummary {
        iteration: 0,
        validated: trace.evaluations.len(),
        failed: trace.failures.len(),
        inner_evaluations: trace.evaluations.len(),
        duplicates_accepted: trace.duplicates_accepted,
        ..Default::default()
    };
    finish_report("validation", store, populations, Vec::new(), reference, cfg.hv_stride, clock, vec![summary])
}

/// Samples and validates a training set, trains one predictor per
/// objective, searches against the predictors and validates the predicted
/// front.
pub fn full_search(
    space: &SearchSpace,
    evaluator: &mut dyn Evaluator,
    store: &mut ResultStore,
    cfg: &FullSearchConfig,
) -> Result<SearchReport, DriverError> {
    let specs = check_specs(store, evaluator)?;
    let surrogates = resolve_surrogates(&specs, &cfg.surrogates, &cfg.validation_only)?;
    if cfg.n_train < 100 {
        log::warn!("training predictors on only {} samples", cfg.n_train);
    }
    let id = evaluator.id().to_string();
    let mut clock = Clock { phases: Vec::new() };
    let sample = initial_population(space, None, cfg.n_train, store, cfg.seed);
    let results = clock.time("validate-training", || evaluate_batch(&sample, evaluator, store, 0));
    let first: Vec<EvaluationRecord> = results.into_iter().filter_map(Result::ok).collect();
    if first.is_empty() {
        return Err(DriverError::NoValidations);
    }
    let reference = frozen_reference(&cfg.reference, &first.iter().collect::<Vec<_>>())?;
    let (fitted, samples) = clock.time("train", || train(space, store, &specs, &surrogates, &id))?;
    let mut seeds = cfg.warm_start.clone().unwrap_or_default();
    seeds.extend(best_validated(store, &id, cfg.evolver.population_size.saturating_sub(seeds.len())));
    let ecfg = EvolverConfig { seed: sub_seed(cfg.seed, "evolver"), ..cfg.evolver.clone() };
    let (trace, calls) = clock.time("search", || predictor_search(space, &specs, &fitted, evaluator, &ecfg, &seeds))?;
    log_predictions(store, &trace, "predictor")?;
    let front: Vec<PredictedPoint> =
        trace.front().into_iter().map(|r| PredictedPoint { genotype: r.genotype.clone(), objectives: r.objectives.clone() }).collect();
    let front_genotypes: Vec<Genotype> = front.iter().map(|p| p.genotype.clone()).collect();
    let validated = clock.time("validate-front", || evaluate_batch(&front_genotypes, evaluator, store, 1));
    let summary = IterationSummary {
        iteration: 0,
        validated: first.len() + validated.iter().filter(|r| r.is_ok()).count(),
        failed: store.failures().len(),
        training_samples: samples,
        inner_evaluations: trace.evaluations.len(),
        duplicates_accepted: trace.duplicates_accepted,
        auxiliary_measurements: calls,
    };
    let populations = vec![sample, front_genotypes];
    finish_report("full", store, populations, front, reference, cfg.hv_stride, clock, vec![summary])
}

/// Picks up to `c` genotypes from an inner search: fronts in order, each
/// by crowding (largest first), skipping anything already validated.
fn next_population(trace: &SearchTrace, store: &ResultStore, c: usize) -> Vec<Genotype> {
    let pts: Vec<&[f64]> = trace.evaluations.iter().map(|r| r.objectives.canonical()).collect();
    let mut out = Vec::with_capacity(c);
    for front in non_dominated_sort(&pts) {
        let d = crowding_distance(&pts, &front);
        let mut order: Vec<usize> = (0..front.len()).collect();
        order.sort_by(|&a, &b| d[b].total_cmp(&d[a]).then(front[a].cmp(&front[b])));
        for w in order {
            let g = &trace.evaluations[front[w]].genotype;
            if !store.is_validated(g) {
                out.push(g.clone());
                if out.len() == c {
                    return out;
                }
            }
        }
    }
    out
}

/// ConcurrentNAS: alternate validating a small population, retraining
/// predictors on all validation data, and a long predictor-backed search
/// whose best unvalidated individuals form the next population.
pub fn concurrent_search(
    space: &SearchSpace,
    evaluator: &mut dyn Evaluator,
    store: &mut ResultStore,
    cfg: &ConcurrentConfig,
) -> Result<SearchReport, DriverError> {
    let specs = check_specs(store, evaluator)?;
    let surrogates = resolve_surrogates(&specs, &cfg.surrogates, &cfg.validation_only)?;
    if cfg.population_size == 0 || cfg.iterations == 0 {
        return Err(DriverError::InvalidConfig("population size and iterations must be positive".into()));
    }
    if cfg.inner_generations <= 200 {
        log::warn!("inner search runs only {} generations; more than 200 is recommended", cfg.inner_generations);
    }
    let id = evaluator.id().to_string();
    let c = cfg.population_size;
    let mut clock = Clock { phases: Vec::new() };
    let mut current = initial_population(space, cfg.warm_start.as_deref(), c, store, cfg.seed);
    let mut reference = cfg.reference.clone();
    let mut populations = Vec::new();
    let mut predicted_front = Vec::new();
    let mut summaries = Vec::new();
    for i in 0..cfg.iterations {
        if current.is_empty() {
            log::warn!("no unvalidated candidates left after {i} iterations");
            break;
        }
        let results = clock.time("validate", || evaluate_batch(&current, evaluator, store, i as u32));
        let ok: Vec<EvaluationRecord> = results.iter().filter_map(|r| r.as_ref().ok().cloned()).collect();
        let failed = results.len() - ok.len();
        if failed > 0 {
            log::warn!("iteration {i}: {failed} of {} validations failed", results.len());
        }
        if i == 0 {
            reference = frozen_reference(&reference, &ok.iter().collect::<Vec<_>>())?;
        }
        populations.push(current.clone());
        let (fitted, samples) = clock.time("train", || train(space, store, &specs, &surrogates, &id))?;
        let seeds = best_validated(store, &id, c);
        let seed_label = if i == 0 { "evolver".to_string() } else { format!("evolver-{i}") };
        let ecfg = EvolverConfig {
            population_size: c,
            generations: cfg.inner_generations,
            crossover_rate: cfg.crossover_rate,
            mutation_rate: cfg.mutation_rate,
            seed: sub_seed(cfg.seed, &seed_label),
            retry_factor: 10,
        };
        let (trace, calls) = clock.time("search", || predictor_search(space, &specs, &fitted, evaluator, &ecfg, &seeds))?;
        log_predictions(store, &trace, &format!("predictor-{i}"))?;
        predicted_front =
            trace.front().into_iter().map(|r| PredictedPoint { genotype: r.genotype.clone(), objectives: r.objectives.clone() }).collect();
        summaries.push(IterationSummary {
            iteration: i,
            validated: ok.len(),
            failed,
            training_samples: samples,
            inner_evaluations: trace.evaluations.len(),
            duplicates_accepted: trace.duplicates_accepted,
            auxiliary_measurements: calls,
        });
        current = next_population(&trace, store, c);
    }
    finish_report("concurrent", store, populations, predicted_front, reference, cfg.hv_stride, clock, summaries)
}

/// Writes `front.csv`, `predicted_front.csv`, `hv_trace.csv`,
/// `evals.jsonl`, `summary.json` and `config.json` into `dir`.
pub fn write_report(dir: &Path, report: &SearchReport, store: &ResultStore, config: &serde_json::Value) -> Result<(), DriverError> {
    let io = |e: std::io::Error| DriverError::Io(format!("{}: {e}", dir.display()));
    std::fs::create_dir_all(dir).map_err(io)?;
    let records: Vec<(Genotype, ObjectiveVector)> =
        report.validated_front.members.iter().map(|r| (r.genotype.clone(), r.objectives.clone())).collect();
    write_front_csv(&dir.join("front.csv"), &report.specs, &records)?;
    if !report.predicted_front.is_empty() {
        let pred: Vec<(Genotype, ObjectiveVector)> =
            report.predicted_front.iter().map(|p| (p.genotype.clone(), p.objectives.clone())).collect();
        write_front_csv(&dir.join("predicted_front.csv"), &report.specs, &pred)?;
    }
    write_hv_csv(&dir.join("hv_trace.csv"), &report.hv_trace)?;
    std::fs::write(dir.join("evals.jsonl"), store.to_jsonl()).map_err(io)?;
    let summary = serde_json::json!({
        "tactic": report.tactic,
        "validation_count": report.validation_count,
        "failure_count": report.failure_count,
        "reference": report.reference,
        "final_hypervolume": report.final_hypervolume(),
        "phase_seconds": report.phase_seconds,
        "iterations": report.iterations,
    });
    std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary).expect("json")).map_err(io)?;
    std::fs::write(dir.join("config.json"), serde_json::to_string_pretty(config).expect("json")).map_err(io)?;
    Ok(())
}

/// Front CSV: `genotype_id`, then `<name>_raw` and `<name>_canonical` per
/// objective.
pub fn write_front_csv(path: &Path, specs: &[ObjectiveSpec], rows: &[(Genotype, ObjectiveVector)]) -> Result<(), DriverError> {
    let err = |e: csv::Error| DriverError::Io(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    let mut header = vec!["genotype_id".to_string()];
    header.extend(specs.iter().map(|s| format!("{}_raw", s.name)));
    header.extend(specs.iter().map(|s| format!("{}_canonical", s.name)));
    w.write_record(&header).map_err(err)?;
    for (g, ov) in rows {
        let mut row = vec![g.id()];
        row.extend(ov.values().iter().map(|v| v.to_string()));
        row.extend(ov.canonical().iter().map(|v| v.to_string()));
        w.write_record(&row).map_err(err)?;
    }
    w.flush().map_err(|e| DriverError::Io(e.to_string()))
}

pub fn write_hv_csv(path: &Path, trace: &[(usize, f64)]) -> Result<(), DriverError> {
    let err = |e: csv::Error| DriverError::Io(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record(["evaluation_count", "hypervolume"]).map_err(err)?;
    for (k, hv) in trace {
        w.write_record([k.to_string(), hv.to_string()]).map_err(err)?;
    }
    w.flush().map_err(|e| DriverError::Io(e.to_string()))
}
