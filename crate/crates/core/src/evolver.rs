//! NSGA-II over genotypes with duplicate prevention under canonicalization.

use std::collections::{HashMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::evalmgr::{EvalError, Source};
use crate::objectives::{dominates_min, lex_cmp, ObjectiveSpec, ObjectiveVector};
use crate::seed::stable_hash;
use crate::space::{Genotype, SearchSpace, SpaceError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvolverError {
    #[error("individual {0} has not been evaluated")]
    Unevaluated(usize),
    #[error("invalid evolver configuration: {0}")]
    InvalidConfig(String),
    #[error("no individual of the initial population could be evaluated")]
    EmptyPopulation,
    #[error(transparent)]
    Space(#[from] SpaceError),
}

#[derive(Clone, Debug, PartialEq, Serialize, serde::Deserialize)]
pub struct EvolverConfig {
    pub population_size: usize,
    pub generations: usize,
    pub crossover_rate: f64,
    /// Per-gene mutation probability; `None` means `1 / population_size`.
    pub mutation_rate: Option<f64>,
    pub seed: u64,
    /// Duplicate-rejection retries per generation, as a multiple of the
    /// population size.
    pub retry_factor: usize,
}

impl Default for EvolverConfig {
    fn default() -> Self {
        EvolverConfig { population_size: 50, generations: 100, crossover_rate: 0.9, mutation_rate: None, seed: 0, retry_factor: 10 }
    }
}

impl EvolverConfig {
    pub fn mutation_rate(&self) -> f64 {
        self.mutation_rate.unwrap_or(1.0 / self.population_size as f64)
    }

    fn validate(&self) -> Result<(), EvolverError> {
        if self.population_size == 0 {
            return Err(EvolverError::InvalidConfig("population_size must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.crossover_rate) {
            return Err(EvolverError::InvalidConfig(format!("crossover_rate {} outside [0, 1]", self.crossover_rate)));
        }
        let m = self.mutation_rate();
        if !(m > 0.0 && m <= 1.0) {
            return Err(EvolverError::InvalidConfig(format!("mutation_rate {m} outside (0, 1]")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Individual {
    pub genotype: Genotype,
    pub objectives: Option<ObjectiveVector>,
    pub rank: Option<usize>,
    pub crowding: f64,
}

impl Individual {
    pub fn new(genotype: Genotype, objectives: Option<ObjectiveVector>) -> Self {
        Individual { genotype, objectives, rank: None, crowding: 0.0 }
    }
}

/// Objective values for one genotype plus where they came from.
#[derive(Clone, Debug, PartialEq)]
pub struct Scored {
    pub objectives: ObjectiveVector,
    pub source: Source,
}

/// Batch objective function: one result per genotype, aligned by position.
/// The second argument is the generation being evaluated.
pub type BatchObjective<'a> = dyn FnMut(&[Genotype], u32) -> Vec<Result<Scored, EvalError>> + 'a;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceRecord {
    pub gen: u32,
    pub genotype: Genotype,
    pub objectives: ObjectiveVector,
    pub source: Source,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceFailure {
    pub gen: u32,
    pub genotype: Genotype,
    pub error: String,
}

/// Everything a run produced. Populations hold indices into `evaluations`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SearchTrace {
    pub specs: Vec<ObjectiveSpec>,
    pub evaluations: Vec<TraceRecord>,
    pub failures: Vec<TraceFailure>,
    /// Population after each generation; entry 0 is the initial population.
    pub populations: Vec<Vec<usize>>,
    /// Children accepted as duplicates because the retry budget ran out.
    pub duplicates_accepted: usize,
}

impl SearchTrace {
    pub fn final_population(&self) -> Vec<&TraceRecord> {
        self.populations.last().map(|p| p.iter().map(|&i| &self.evaluations[i]).collect()).unwrap_or_default()
    }

    /// Indices of the non-dominated evaluations among the first `k`.
    pub fn front_of_prefix(&self, k: usize) -> Vec<usize> {
        let pts: Vec<&[f64]> = self.evaluations[..k.min(self.evaluations.len())].iter().map(|r| r.objectives.canonical()).collect();
        crate::objectives::non_dominated_indices(&pts)
    }

    /// Non-dominated subset of every evaluation in the run.
    pub fn front(&self) -> Vec<&TraceRecord> {
        self.front_of_prefix(self.evaluations.len()).into_iter().map(|i| &self.evaluations[i]).collect()
    }

    /// One JSON line per evaluation, in evaluation order.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.evaluations {
            let mut raw = serde_json::Map::new();
            for (s, v) in self.specs.iter().zip(r.objectives.values()) {
                raw.insert(s.name.clone(), serde_json::json!(v));
            }
            let line = serde_json::json!({
                "gen": r.gen,
                "genotype": r.genotype,
                "objectives_raw": raw,
                "source": r.source,
            });
            out.push_str(&line.to_string());
            out.push('\n');
        }
        out
    }
}

/// Fronts of points in canonical (minimization) space, best first. Each
/// front lists indices in ascending order.
pub fn non_dominated_sort<P: AsRef<[f64]>>(points: &[P]) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&i, &j| lex_cmp(points[i].as_ref(), points[j].as_ref()).then(i.cmp(&j)));
    // Efficient non-dominated sort, sequential search: in lexicographic
    // order nothing is dominated by a later point, so each point goes to
    // the first front with no member dominating it.
    let mut fronts: Vec<Vec<usize>> = Vec::new();
    for i in order {
        let p = points[i].as_ref();
        let slot = fronts.iter().position(|f| !f.iter().any(|&k| dominates_min(points[k].as_ref(), p)));
        match slot {
            Some(s) => fronts[s].push(i),
            None => fronts.push(vec![i]),
        }
    }
    for f in fronts.iter_mut() {
        f.sort_unstable();
    }
    fronts
}

/// Crowding distance for each member of one front, aligned with `front`.
pub fn crowding_distance<P: AsRef<[f64]>>(points: &[P], front: &[usize]) -> Vec<f64> {
    let n = front.len();
    if n <= 2 {
        return vec![f64::INFINITY; n];
    }
    let m = points[front[0]].as_ref().len();
    let mut dist = vec![0.0; n];
    let mut order: Vec<usize> = (0..n).collect();
    for k in 0..m {
        order.sort_by(|&a, &b| {
            let (pa, pb) = (points[front[a]].as_ref(), points[front[b]].as_ref());
            pa[k].total_cmp(&pb[k]).then_with(|| lex_cmp(pa, pb))
        });
        let lo = points[front[order[0]]].as_ref()[k];
        let hi = points[front[order[n - 1]]].as_ref()[k];
        dist[order[0]] = f64::INFINITY;
        dist[order[n - 1]] = f64::INFINITY;
        let range = hi - lo;
        if range <= 0.0 {
            continue;
        }
        for w in 1..n - 1 {
            let above = points[front[order[w + 1]]].as_ref()[k];
            let below = points[front[order[w - 1]]].as_ref()[k];
            dist[order[w]] += (above - below) / range;
        }
    }
    dist
}

/// Sets `rank` and `crowding` on every individual.
pub fn assign_rank_and_crowding(pop: &mut [Individual]) -> Result<(), EvolverError> {
    let mut pts = Vec::with_capacity(pop.len());
    for (i, ind) in pop.iter().enumerate() {
        pts.push(ind.objectives.as_ref().ok_or(EvolverError::Unevaluated(i))?.canonical().to_vec());
    }
    for (rank, front) in non_dominated_sort(&pts).iter().enumerate() {
        for (&i, d) in front.iter().zip(crowding_distance(&pts, front)) {
            pop[i].rank = Some(rank);
            pop[i].crowding = d;
        }
    }
    Ok(())
}

/// Picks `k` of `candidates` by front, breaking the last front by crowding
/// (largest first). Returns positions into `candidates`.
pub fn select_best<P: AsRef<[f64]>>(points: &[P], k: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(k.min(points.len()));
    for front in non_dominated_sort(points) {
        if out.len() + front.len() <= k {
            out.extend(front);
            continue;
        }
        let d = crowding_distance(points, &front);
        let mut order: Vec<usize> = (0..front.len()).collect();
        order.sort_by(|&a, &b| d[b].total_cmp(&d[a]).then(front[a].cmp(&front[b])));
        out.extend(order.into_iter().take(k - out.len()).map(|w| front[w]));
        break;
    }
    out
}

struct Run<'s, 'f, 'g> {
    space: &'s SearchSpace,
    cfg: EvolverConfig,
    evaluate: &'f mut BatchObjective<'g>,
    rng: ChaCha8Rng,
    trace: SearchTrace,
    /// First evaluation index per genotype.
    index: HashMap<Genotype, usize>,
    failed: HashSet<Genotype>,
}

impl Run<'_, '_, '_> {
    fn seen(&self, g: &Genotype) -> bool {
        self.index.contains_key(g) || self.failed.contains(g)
    }

    /// Evaluates the genotypes not seen before and returns evaluation
    /// indices for every input that has objectives (failures are dropped).
    fn evaluate(&mut self, batch: &[Genotype], gen: u32) -> Vec<usize> {
        let mut fresh = Vec::new();
        let mut queued = HashSet::new();
        for g in batch {
            if !self.seen(g) && queued.insert(g.clone()) {
                fresh.push(g.clone());
            }
        }
        if !fresh.is_empty() {
            let results = (self.evaluate)(&fresh, gen);
            assert_eq!(results.len(), fresh.len(), "objective function must return one result per genotype");
            for (g, r) in fresh.into_iter().zip(results) {
                match r {
                    Ok(s) => {
                        self.index.insert(g.clone(), self.trace.evaluations.len());
                        self.trace.evaluations.push(TraceRecord { gen, genotype: g, objectives: s.objectives, source: s.source });
                    }
                    Err(e) => {
                        log::warn!("evaluation of {} failed: {e}", g.id());
                        self.failed.insert(g.clone());
                        self.trace.failures.push(TraceFailure { gen, genotype: g, error: e.to_string() });
                    }
                }
            }
        }
        batch.iter().filter_map(|g| self.index.get(g).copied()).collect()
    }

    fn points(&self, idx: &[usize]) -> Vec<Vec<f64>> {
        idx.iter().map(|&i| self.trace.evaluations[i].objectives.canonical().to_vec()).collect()
    }

    fn initial(&mut self, warm_start: Option<&[Vec<i64>]>) -> Vec<usize> {
        let pop = self.cfg.population_size;
        let mut seeds: Vec<Genotype> = Vec::new();
        let mut unique = HashSet::new();
        for genes in warm_start.unwrap_or_default() {
            match self.space.repair(genes) {
                Some(g) => {
                    if unique.insert(g.clone()) {
                        seeds.push(g);
                    }
                }
                None => log::warn!("skipping warm-start genotype of length {}", genes.len()),
            }
        }
        if seeds.len() < pop {
            let pad = self.space.sample_distinct(pop - seeds.len(), &mut self.rng, &unique);
            seeds.extend(pad);
        }
        let idx = self.evaluate(&seeds, 0);
        if idx.len() <= pop {
            return idx;
        }
        let pts = self.points(&idx);
        let mut keep = select_best(&pts, pop);
        keep.sort_unstable();
        keep.into_iter().map(|k| idx[k]).collect()
    }

    fn tournament(&mut self, pop: &[Individual]) -> usize {
        let a = self.rng.gen_range(0..pop.len());
        let b = self.rng.gen_range(0..pop.len());
        let (x, y) = (&pop[a], &pop[b]);
        let by_rank = x.rank.cmp(&y.rank);
        let by_crowd = y.crowding.total_cmp(&x.crowding);
        match by_rank.then(by_crowd) {
            std::cmp::Ordering::Less => a,
            std::cmp::Ordering::Greater => b,
            std::cmp::Ordering::Equal => {
                let hx = stable_hash(x.genotype.genes(), self.cfg.seed);
                let hy = stable_hash(y.genotype.genes(), self.cfg.seed);
                if hx <= hy {
                    a
                } else {
                    b
                }
            }
        }
    }

    fn crossover(&mut self, p1: &[i64], p2: &[i64]) -> (Vec<i64>, Vec<i64>) {
        let (mut c1, mut c2) = (p1.to_vec(), p2.to_vec());
        if self.rng.gen::<f64>() < self.cfg.crossover_rate {
            let n = c1.len();
            let mut a = self.rng.gen_range(0..=n);
            let mut b = self.rng.gen_range(0..=n);
            if a > b {
                std::mem::swap(&mut a, &mut b);
            }
            c1[a..b].swap_with_slice(&mut c2[a..b]);
        }
        (c1, c2)
    }

    fn mutate(&mut self, genes: &mut [i64]) {
        let rate = self.cfg.mutation_rate();
        for (i, v) in genes.iter_mut().enumerate() {
            if self.rng.gen::<f64>() < rate {
                let allowed = self.space.allowed(i);
                if allowed.len() < 2 {
                    continue;
                }
                let cur = allowed.iter().position(|a| a == v).unwrap_or(0);
                let mut pick = self.rng.gen_range(0..allowed.len() - 1);
                if pick >= cur {
                    pick += 1;
                }
                *v = allowed[pick];
            }
        }
    }

    fn offspring(&mut self, current: &[usize]) -> Vec<Genotype> {
        let pop_n = self.cfg.population_size;
        let mut inds: Vec<Individual> = current
            .iter()
            .map(|&i| {
                let r = &self.trace.evaluations[i];
                Individual::new(r.genotype.clone(), Some(r.objectives.clone()))
            })
            .collect();
        assign_rank_and_crowding(&mut inds).expect("population is evaluated");
        let mut budget = self.cfg.retry_factor * pop_n;
        let mut children: Vec<Genotype> = Vec::with_capacity(pop_n);
        let mut in_batch = HashSet::new();
        while children.len() < pop_n {
            let a = self.tournament(&inds);
            let b = self.tournament(&inds);
            let (mut c1, mut c2) = self.crossover(inds[a].genotype.genes(), inds[b].genotype.genes());
            self.mutate(&mut c1);
            self.mutate(&mut c2);
            for genes in [c1, c2] {
                if children.len() == pop_n {
                    break;
                }
                let child = self.space.canonicalize(&Genotype::new(genes)).expect("operators keep genes allowed");
                if self.seen(&child) || in_batch.contains(&child) {
                    if budget > 0 {
                        budget -= 1;
                        continue;
                    }
                    self.trace.duplicates_accepted += 1;
                }
                in_batch.insert(child.clone());
                children.push(child);
            }
        }
        children
    }
}

/// Runs NSGA-II. `warm_start` entries are repaired to the nearest allowed
/// values; entries of the wrong length are skipped.
pub fn evolve(
    space: &SearchSpace,
    specs: &[ObjectiveSpec],
    cfg: &EvolverConfig,
    evaluate: &mut BatchObjective<'_>,
    warm_start: Option<&[Vec<i64>]>,
) -> Result<SearchTrace, EvolverError> {
    cfg.validate()?;
    let mut run = Run {
        space,
        cfg: cfg.clone(),
        evaluate,
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        trace: SearchTrace {
            specs: specs.to_vec(),
            evaluations: Vec::new(),
            failures: Vec::new(),
            populations: Vec::new(),
            duplicates_accepted: 0,
        },
        index: HashMap::new(),
        failed: HashSet::new(),
    };
    let mut current = run.initial(warm_start);
    if current.is_empty() {
        return Err(EvolverError::EmptyPopulation);
    }
    run.trace.populations.push(current.clone());
    for gen in 1..=cfg.generations {
        let children = run.offspring(&current);
        let child_idx = run.evaluate(&children, gen as u32);
        let mut pool = current.clone();
        let mut member: HashSet<usize> = pool.iter().copied().collect();
        for i in child_idx {
            if member.insert(i) {
                pool.push(i);
            }
        }
        let pts = run.points(&pool);
        let mut keep = select_best(&pts, cfg.population_size);
        keep.sort_unstable();
        current = keep.into_iter().map(|k| pool[k]).collect();
        run.trace.populations.push(current.clone());
    }
    if run.trace.duplicates_accepted > 0 {
        log::warn!("duplicate-retry budget exhausted; accepted {} duplicate children", run.trace.duplicates_accepted);
    }
    Ok(run.trace)
}
