//! Analytic stand-ins for super-network objectives.
//!
//! Accuracy saturates exponentially in a weighted sum of active-gene
//! features; latency is additive over active genes plus pairwise
//! interaction terms. Both can carry deterministic pseudo-noise derived from
//! a hash of the genotype, so a surface is a pure function of its inputs.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{select_objectives, EvalError, Evaluator};
use crate::objectives::{ObjectiveSpec, ObjectiveVector};
use crate::seed::{stable_hash, unit_interval};
use crate::space::{Genotype, ParamRole, SearchSpace};

/// Names accepted by [`SyntheticSurface::preset`].
pub const SURFACE_PRESETS: [&str; 2] = ["clx-like", "v100-like"];

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct AccuracyParams {
    pub a_max: f64,
    pub a_span: f64,
    pub temperature: f64,
    /// One weight per gene.
    pub weights: Vec<f64>,
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct Interaction {
    pub a: usize,
    pub b: usize,
    pub coef: f64,
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct LatencyParams {
    pub base: f64,
    /// `costs[gene][rank]`; depth genes contribute only through the layers
    /// they activate, so their rows are ignored.
    pub costs: Vec<Vec<f64>>,
    pub interactions: Vec<Interaction>,
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct SyntheticSurface {
    pub space: SearchSpace,
    pub accuracy: AccuracyParams,
    pub latency: LatencyParams,
    pub noise_seed: u64,
    pub noise_scale: f64,
}

const ACCURACY_SALT: u64 = 0x5EED_0001;
const LATENCY_SALT: u64 = 0x5EED_0002;

impl SyntheticSurface {
    /// Hardware-flavoured presets. Accuracy parameters depend only on the
    /// space; latency cost structure differs per preset.
    ///
    /// * `clx-like`: wide/large-kernel layers are expensive, early blocks
    ///   (high resolution) dominate, strong in-layer interactions.
    /// * `v100-like`: every extra layer costs a roughly fixed overhead,
    ///   width matters less, later blocks slightly dearer.
    pub fn preset(space: &SearchSpace, name: &str) -> Result<Self, EvalError> {
        let (base, layer_cost, slope, interaction, block_profile, seed): (f64, f64, [f64; 3], f64, fn(f64) -> f64, u64) = match name {
            "clx-like" => (4.0, 1.0, [0.9, 1.4, 1.1], 0.8, |t| 1.5 - 0.7 * t, 101),
            "v100-like" => (1.5, 1.1, [0.25, 0.45, 0.35], 0.15, |t| 0.9 + 0.3 * t, 202),
            other => return Err(EvalError::EvaluationFailed(format!("unknown surface preset `{other}`"))),
        };
        let accuracy = default_accuracy(space);
        let n_blocks = space.blocks().len().max(1);
        let block_t = |b: usize| if n_blocks > 1 { b as f64 / (n_blocks - 1) as f64 } else { 0.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let costs = (0..space.genome_len())
            .map(|i| {
                let n = space.allowed(i).len();
                let jitter = 1.0 + rng.gen_range(-0.15..0.15);
                let (scale, k) = match (space.role(i), space.layer_slot(i)) {
                    (ParamRole::BlockDepth, _) => return vec![0.0; n],
                    (ParamRole::PerLayer, Some((b, _))) => {
                        (layer_cost * block_profile(block_t(b)), param_position(space, i) % 2)
                    }
                    _ => (0.6 * layer_cost, 2),
                };
                (0..n)
                    .map(|r| {
                        let rn = if n > 1 { r as f64 / (n - 1) as f64 } else { 0.0 };
                        scale * jitter * (0.5 + slope[k] * rn)
                    })
                    .collect()
            })
            .collect();
        let mut interactions = Vec::new();
        for (b, block) in space.blocks().iter().enumerate() {
            let per = block.genes_per_layer();
            for slot in 0..block.max_layers {
                let genes = &block.governed_genes[slot * per..(slot + 1) * per];
                for x in 0..per {
                    for y in x + 1..per {
                        let coef = interaction * block_profile(block_t(b)) * (1.0 + rng.gen_range(-0.15..0.15));
                        interactions.push(Interaction { a: genes[x], b: genes[y], coef });
                    }
                }
            }
        }
        Ok(SyntheticSurface {
            space: space.clone(),
            accuracy,
            latency: LatencyParams { base, costs, interactions },
            noise_seed: 0,
            noise_scale: 0.0,
        })
    }

    pub fn with_noise(mut self, seed: u64, scale: f64) -> Self {
        self.noise_seed = seed;
        self.noise_scale = scale;
        self
    }

    /// Accuracy feature of gene `i`: `(rank + 1) / n` when active, else 0.
    fn accuracy_feature(&self, genes: &[i64], i: usize) -> f64 {
        if !self.space.is_active(genes, i) {
            return 0.0;
        }
        let n = self.space.allowed(i).len();
        let rank = self.space.rank_of(i, genes[i]).expect("valid genotype");
        (rank + 1) as f64 / n as f64
    }

    fn normalized_rank(&self, genes: &[i64], i: usize) -> f64 {
        let n = self.space.allowed(i).len();
        if n < 2 {
            return 0.0;
        }
        self.space.rank_of(i, genes[i]).expect("valid genotype") as f64 / (n - 1) as f64
    }

    fn noise(&self, genes: &[i64], salt: u64) -> f64 {
        if self.noise_scale == 0.0 {
            return 0.0;
        }
        let u = unit_interval(stable_hash(genes, self.noise_seed ^ salt));
        (2.0 * u - 1.0) * self.noise_scale
    }

    pub fn accuracy(&self, g: &Genotype) -> f64 {
        let genes = g.genes();
        let p = &self.accuracy;
        let score: f64 = (0..genes.len()).map(|i| p.weights[i] * self.accuracy_feature(genes, i)).sum();
        p.a_max - p.a_span * (-score / p.temperature).exp() + self.noise(genes, ACCURACY_SALT)
    }

    pub fn latency(&self, g: &Genotype) -> f64 {
        let genes = g.genes();
        let p = &self.latency;
        let mut total = p.base;
        for i in 0..genes.len() {
            if self.space.role(i) != ParamRole::BlockDepth && self.space.is_active(genes, i) {
                let rank = self.space.rank_of(i, genes[i]).expect("valid genotype");
                total += p.costs[i][rank];
            }
        }
        for t in &p.interactions {
            if self.space.is_active(genes, t.a) && self.space.is_active(genes, t.b) {
                total += t.coef * self.normalized_rank(genes, t.a) * self.normalized_rank(genes, t.b);
            }
        }
        total + self.noise(genes, LATENCY_SALT)
    }

    /// Named outputs: `top1` and `latency_ms`.
    pub fn evaluate(&self, g: &Genotype) -> BTreeMap<String, f64> {
        BTreeMap::from([("top1".to_string(), self.accuracy(g)), ("latency_ms".to_string(), self.latency(g))])
    }
}

/// Position of gene `i` within its layer slot's gene group.
fn param_position(space: &SearchSpace, i: usize) -> usize {
    let (b, slot) = space.layer_slot(i).expect("per-layer gene");
    let block = &space.blocks()[b];
    let per = block.genes_per_layer();
    block.governed_genes[slot * per..(slot + 1) * per].iter().position(|&g| g == i).expect("governed")
}

/// Accuracy model shared by all hardware presets of a space: depth genes
/// weigh most, then global genes, then per-layer genes. Temperature puts
/// the fully maxed configuration at `exp(-2.5)` of the span.
fn default_accuracy(space: &SearchSpace) -> AccuracyParams {
    let mut rng = ChaCha8Rng::seed_from_u64(0xACC);
    let weights: Vec<f64> = (0..space.genome_len())
        .map(|i| {
            let base = match space.role(i) {
                ParamRole::BlockDepth => 1.2,
                ParamRole::Global => 0.8,
                ParamRole::PerLayer => {
                    if param_position(space, i) % 2 == 0 {
                        0.35
                    } else {
                        0.5
                    }
                }
            };
            base * (1.0 + rng.gen_range(-0.2..0.2))
        })
        .collect();
    let max_score: f64 = weights.iter().sum();
    AccuracyParams { a_max: 80.0, a_span: 20.0, temperature: max_score / 2.5, weights }
}

/// [`Evaluator`] over a [`SyntheticSurface`], optionally fanning out over
/// a rayon pool.
pub struct SyntheticEvaluator {
    surface: SyntheticSurface,
    specs: Vec<ObjectiveSpec>,
    id: String,
    pool: Option<rayon::ThreadPool>,
}

impl SyntheticEvaluator {
    pub fn new(surface: SyntheticSurface, specs: Vec<ObjectiveSpec>, id: impl Into<String>) -> Self {
        SyntheticEvaluator { surface, specs, id: id.into(), pool: None }
    }

    pub fn with_jobs(mut self, jobs: usize) -> Self {
        self.pool = if jobs > 1 { rayon::ThreadPoolBuilder::new().num_threads(jobs).build().ok() } else { None };
        self
    }

    pub fn surface(&self) -> &SyntheticSurface {
        &self.surface
    }
}

impl Evaluator for SyntheticEvaluator {
    fn id(&self) -> &str {
        &self.id
    }

    fn objectives(&self) -> &[ObjectiveSpec] {
        &self.specs
    }

    fn evaluate_many(&mut self, batch: &[Genotype]) -> Vec<Result<ObjectiveVector, EvalError>> {
        let one = |g: &Genotype| -> Result<ObjectiveVector, EvalError> {
            self.surface.space.validate(g).map_err(|e| EvalError::EvaluationFailed(e.to_string()))?;
            select_objectives(&self.surface.evaluate(g), &self.specs)
        };
        match &self.pool {
            Some(pool) => pool.install(|| batch.par_iter().map(one).collect()),
            None => batch.iter().map(one).collect(),
        }
    }
}
