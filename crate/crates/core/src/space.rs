//! Discrete elastic-parameter search spaces.
//!
//! A [`SearchSpace`] lays out a fixed-length integer genome. Parameters
//! occupy contiguous gene ranges in declaration order. Blocks tie a depth
//! gene to a list of per-layer genes; a per-layer gene is *active* only when
//! its layer slot is below the block's current depth. Inactive genes carry
//! no architectural meaning, so [`SearchSpace::canonicalize`] pins them to
//! the parameter's first allowed value.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use num_bigint::BigUint;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum SpaceError {
    #[error("invalid genotype: {0}")]
    InvalidGenotype(String),
    #[error("genotype is not in canonical form")]
    NonCanonicalInput,
    #[error("invalid search space: {0}")]
    InvalidSpace(String),
    #[error("unknown space preset `{0}`")]
    UnknownPreset(String),
    #[error("cannot read space definition: {0}")]
    Io(String),
}

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum ParamRole {
    BlockDepth,
    PerLayer,
    Global,
}

impl fmt::Display for ParamRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ParamRole::BlockDepth => "block_depth",
            ParamRole::PerLayer => "per_layer",
            ParamRole::Global => "global",
        })
    }
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct ElasticParamSpec {
    pub name: String,
    pub role: ParamRole,
    pub allowed_values: Vec<i64>,
    pub position_count: usize,
}

impl ElasticParamSpec {
    pub fn new(name: impl Into<String>, role: ParamRole, allowed_values: Vec<i64>, position_count: usize) -> Self {
        ElasticParamSpec { name: name.into(), role, allowed_values, position_count }
    }
}

/// Activity rule for one block.
///
/// `governed_genes` is listed layer-major: the first `len / max_layers`
/// entries belong to layer slot 0, the next group to slot 1, and so on.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct BlockRule {
    pub depth_gene: usize,
    pub governed_genes: Vec<usize>,
    pub max_layers: usize,
}

impl BlockRule {
    pub fn genes_per_layer(&self) -> usize {
        self.governed_genes.len() / self.max_layers
    }
}

/// Fixed-length integer encoding of one sub-network configuration.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[serde(transparent)]
pub struct Genotype(Vec<i64>);

impl Genotype {
    pub fn new(genes: Vec<i64>) -> Self {
        Genotype(genes)
    }

    pub fn genes(&self) -> &[i64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_genes(self) -> Vec<i64> {
        self.0
    }

    /// Human-readable stable identifier, genes joined by `_`.
    pub fn id(&self) -> String {
        let parts: Vec<String> = self.0.iter().map(|g| g.to_string()).collect();
        parts.join("_")
    }

    pub fn parse_id(id: &str) -> Option<Genotype> {
        if id.is_empty() {
            return Some(Genotype(Vec::new()));
        }
        id.split('_').map(|p| p.parse().ok()).collect::<Option<Vec<i64>>>().map(Genotype)
    }
}

impl From<Vec<i64>> for Genotype {
    fn from(genes: Vec<i64>) -> Self {
        Genotype(genes)
    }
}

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[serde(rename_all = "snake_case")]
pub enum FeatureScheme {
    OneHot,
    OrdinalNormalized,
}

impl std::str::FromStr for FeatureScheme {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "one_hot" | "one-hot" => Ok(FeatureScheme::OneHot),
            "ordinal_normalized" | "ordinal" => Ok(FeatureScheme::OrdinalNormalized),
            other => Err(format!("unknown feature scheme `{other}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
struct GeneInfo {
    param: usize,
    /// (block index, layer slot) for per-layer genes.
    slot: Option<(usize, usize)>,
    /// Set for depth genes.
    depth_of_block: Option<usize>,
    one_hot_offset: usize,
}

#[derive(Serialize, Deserialize)]
struct SpaceDocument {
    name: String,
    params: Vec<ElasticParamSpec>,
    blocks: Vec<BlockDocument>,
}

#[derive(Serialize, Deserialize)]
struct BlockDocument {
    depth_gene: usize,
    governed_genes: Vec<usize>,
    max_layers: usize,
}

/// Schema of elastic parameters plus block activity rules. Immutable after
/// construction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SpaceDocument", into = "SpaceDocument")]
pub struct SearchSpace {
    name: String,
    params: Vec<ElasticParamSpec>,
    blocks: Vec<BlockRule>,
    genes: Vec<GeneInfo>,
    one_hot_dim: usize,
}

impl TryFrom<SpaceDocument> for SearchSpace {
    type Error = SpaceError;
    fn try_from(doc: SpaceDocument) -> Result<Self, SpaceError> {
        let blocks = doc
            .blocks
            .into_iter()
            .map(|b| BlockRule { depth_gene: b.depth_gene, governed_genes: b.governed_genes, max_layers: b.max_layers })
            .collect();
        SearchSpace::new(doc.name, doc.params, blocks)
    }
}

impl From<SearchSpace> for SpaceDocument {
    fn from(s: SearchSpace) -> Self {
        SpaceDocument {
            name: s.name,
            params: s.params,
            blocks: s
                .blocks
                .into_iter()
                .map(|b| BlockDocument { depth_gene: b.depth_gene, governed_genes: b.governed_genes, max_layers: b.max_layers })
                .collect(),
        }
    }
}

fn invalid(msg: impl Into<String>) -> SpaceError {
    SpaceError::InvalidSpace(msg.into())
}

impl SearchSpace {
    pub fn new(name: impl Into<String>, params: Vec<ElasticParamSpec>, blocks: Vec<BlockRule>) -> Result<Self, SpaceError> {
        let name = name.into();
        let mut genes = Vec::new();
        let mut one_hot_dim = 0;
        for (p, spec) in params.iter().enumerate() {
            if spec.position_count == 0 {
                return Err(invalid(format!("parameter `{}` has position_count 0", spec.name)));
            }
            if spec.allowed_values.is_empty() {
                return Err(invalid(format!("parameter `{}` has no allowed values", spec.name)));
            }
            if spec.allowed_values.windows(2).any(|w| w[0] >= w[1]) {
                return Err(invalid(format!("allowed values of `{}` must be strictly ascending", spec.name)));
            }
            for _ in 0..spec.position_count {
                genes.push(GeneInfo { param: p, slot: None, depth_of_block: None, one_hot_offset: one_hot_dim });
                one_hot_dim += spec.allowed_values.len();
            }
        }
        let len = genes.len();
        for (b, block) in blocks.iter().enumerate() {
            if block.max_layers == 0 {
                return Err(invalid(format!("block {b} has max_layers 0")));
            }
            if block.governed_genes.len() % block.max_layers != 0 {
                return Err(invalid(format!("block {b}: governed gene count is not a multiple of max_layers")));
            }
            let d = block.depth_gene;
            if d >= len {
                return Err(invalid(format!("block {b}: depth gene {d} out of range")));
            }
            let dspec = &params[genes[d].param];
            if dspec.role != ParamRole::BlockDepth {
                return Err(invalid(format!("block {b}: depth gene {d} is not a block_depth parameter")));
            }
            if genes[d].depth_of_block.is_some() {
                return Err(invalid(format!("gene {d} is the depth gene of more than one block")));
            }
            if dspec.allowed_values.iter().any(|&v| v < 0 || v as usize > block.max_layers) {
                return Err(invalid(format!("block {b}: depth values must lie in 0..={}", block.max_layers)));
            }
            genes[d].depth_of_block = Some(b);
            let per_layer = block.genes_per_layer();
            for (j, &g) in block.governed_genes.iter().enumerate() {
                if g >= len {
                    return Err(invalid(format!("block {b}: governed gene {g} out of range")));
                }
                if params[genes[g].param].role != ParamRole::PerLayer {
                    return Err(invalid(format!("block {b}: governed gene {g} is not a per_layer parameter")));
                }
                if genes[g].slot.is_some() {
                    return Err(invalid(format!("gene {g} is governed by more than one block")));
                }
                genes[g].slot = Some((b, j / per_layer));
            }
        }
        for (i, g) in genes.iter().enumerate() {
            let role = params[g.param].role;
            if role == ParamRole::PerLayer && g.slot.is_none() {
                return Err(invalid(format!("per_layer gene {i} is not governed by any block")));
            }
            if role == ParamRole::BlockDepth && g.depth_of_block.is_none() {
                return Err(invalid(format!("block_depth gene {i} is not referenced by any block")));
            }
        }
        Ok(SearchSpace { name, params, blocks, genes, one_hot_dim })
    }

    pub fn from_json(text: &str) -> Result<Self, SpaceError> {
        serde_json::from_str(text).map_err(|e| invalid(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("space serializes")
    }

    pub fn load(path: &Path) -> Result<Self, SpaceError> {
        let text = std::fs::read_to_string(path).map_err(|e| SpaceError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Resolves a preset name or, failing that, a path to a definition file.
    pub fn resolve(name_or_path: &str) -> Result<Self, SpaceError> {
        match presets::by_name(name_or_path) {
            Ok(s) => Ok(s),
            Err(SpaceError::UnknownPreset(_)) if Path::new(name_or_path).exists() => Self::load(Path::new(name_or_path)),
            Err(e) => Err(e),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn params(&self) -> &[ElasticParamSpec] {
        &self.params
    }

    pub fn blocks(&self) -> &[BlockRule] {
        &self.blocks
    }

    pub fn genome_len(&self) -> usize {
        self.genes.len()
    }

    pub fn param_of(&self, gene: usize) -> &ElasticParamSpec {
        &self.params[self.genes[gene].param]
    }

    pub fn allowed(&self, gene: usize) -> &[i64] {
        &self.param_of(gene).allowed_values
    }

    pub fn role(&self, gene: usize) -> ParamRole {
        self.param_of(gene).role
    }

    /// `(block, layer_slot)` for per-layer genes.
    pub fn layer_slot(&self, gene: usize) -> Option<(usize, usize)> {
        self.genes[gene].slot
    }

    pub fn rank_of(&self, gene: usize, value: i64) -> Option<usize> {
        self.allowed(gene).binary_search(&value).ok()
    }

    pub fn validate(&self, g: &Genotype) -> Result<(), SpaceError> {
        if g.len() != self.genome_len() {
            return Err(SpaceError::InvalidGenotype(format!(
                "length {} does not match genome length {}",
                g.len(),
                self.genome_len()
            )));
        }
        for (i, &v) in g.genes().iter().enumerate() {
            if self.rank_of(i, v).is_none() {
                return Err(SpaceError::InvalidGenotype(format!(
                    "gene {i} (`{}`) has value {v}, allowed {:?}",
                    self.param_of(i).name,
                    self.allowed(i)
                )));
            }
        }
        Ok(())
    }

    /// Whether gene `i` influences the architecture described by `genes`.
    pub fn is_active(&self, genes: &[i64], i: usize) -> bool {
        match self.genes[i].slot {
            None => true,
            Some((b, slot)) => (slot as i64) < genes[self.blocks[b].depth_gene],
        }
    }

    pub fn canonicalize(&self, g: &Genotype) -> Result<Genotype, SpaceError> {
        self.validate(g)?;
        let mut genes = g.genes().to_vec();
        for i in 0..genes.len() {
            if !self.is_active(g.genes(), i) {
                genes[i] = self.allowed(i)[0];
            }
        }
        Ok(Genotype(genes))
    }

    pub fn is_canonical(&self, g: &Genotype) -> bool {
        self.validate(g).is_ok()
            && (0..g.len()).all(|i| self.is_active(g.genes(), i) || g.genes()[i] == self.allowed(i)[0])
    }

    /// Number of distinct canonical genotypes.
    pub fn cardinality(&self) -> BigUint {
        let mut total = BigUint::from(1u32);
        for (i, info) in self.genes.iter().enumerate() {
            if info.slot.is_none() && info.depth_of_block.is_none() {
                total *= BigUint::from(self.allowed(i).len());
            }
        }
        for block in &self.blocks {
            let per_layer = block.genes_per_layer();
            // prefix[k] = combinations of the first k layer slots
            let mut prefix = vec![BigUint::from(1u32)];
            for slot in 0..block.max_layers {
                let mut combos = BigUint::from(1u32);
                for &g in &block.governed_genes[slot * per_layer..(slot + 1) * per_layer] {
                    combos *= BigUint::from(self.allowed(g).len());
                }
                let next = &prefix[slot] * combos;
                prefix.push(next);
            }
            let sum: BigUint = self.allowed(block.depth_gene).iter().map(|&d| prefix[d as usize].clone()).sum();
            total *= sum;
        }
        total
    }

    /// Every canonical genotype, or `None` when there are more than `limit`.
    pub fn enumerate(&self, limit: usize) -> Option<Vec<Genotype>> {
        if self.cardinality() > BigUint::from(limit) {
            return None;
        }
        // depth genes first so activity is known when the rest are chosen
        let mut order: Vec<usize> = self.blocks.iter().map(|b| b.depth_gene).collect();
        order.extend((0..self.genome_len()).filter(|&i| self.genes[i].depth_of_block.is_none()));
        let mut genes: Vec<i64> = (0..self.genome_len()).map(|i| self.allowed(i)[0]).collect();
        let mut out = Vec::new();
        self.enumerate_from(&order, 0, &mut genes, &mut out);
        Some(out)
    }

    fn enumerate_from(&self, order: &[usize], k: usize, genes: &mut Vec<i64>, out: &mut Vec<Genotype>) {
        let Some(&i) = order.get(k) else {
            out.push(Genotype(genes.clone()));
            return;
        };
        if !self.is_active(genes, i) {
            genes[i] = self.allowed(i)[0];
            self.enumerate_from(order, k + 1, genes, out);
            return;
        }
        for &v in self.allowed(i) {
            genes[i] = v;
            self.enumerate_from(order, k + 1, genes, out);
        }
        genes[i] = self.allowed(i)[0];
    }

    pub fn sample_one<R: Rng>(&self, rng: &mut R) -> Genotype {
        let raw: Vec<i64> = (0..self.genome_len())
            .map(|i| {
                let allowed = self.allowed(i);
                allowed[rng.gen_range(0..allowed.len())]
            })
            .collect();
        self.canonicalize(&Genotype(raw)).expect("sampled genes are valid")
    }

    /// `n` canonical genotypes, each gene drawn uniformly before
    /// canonicalization. Deterministic for a fixed seed.
    pub fn sample_uniform(&self, n: usize, seed: u64) -> Vec<Genotype> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| self.sample_one(&mut rng)).collect()
    }

    /// Like [`sample_uniform`](Self::sample_uniform) but without repeats and
    /// skipping anything in `exclude`. Stops early if the space runs dry.
    pub fn sample_distinct<R: Rng>(&self, n: usize, rng: &mut R, exclude: &HashSet<Genotype>) -> Vec<Genotype> {
        let mut seen = HashSet::new();
        let mut out = Vec::with_capacity(n);
        let mut misses = 0usize;
        let budget = 100 * n.max(1) + 1000;
        while out.len() < n && misses < budget {
            let g = self.sample_one(rng);
            if exclude.contains(&g) || !seen.insert(g.clone()) {
                misses += 1;
                continue;
            }
            out.push(g);
        }
        out
    }

    pub fn feature_dim(&self, scheme: FeatureScheme) -> usize {
        match scheme {
            FeatureScheme::OneHot => self.one_hot_dim,
            FeatureScheme::OrdinalNormalized => self.genome_len(),
        }
    }

    pub fn encode_features(&self, g: &Genotype, scheme: FeatureScheme) -> Result<Vec<f64>, SpaceError> {
        if !self.is_canonical(g) {
            return Err(SpaceError::NonCanonicalInput);
        }
        let mut out = vec![0.0; self.feature_dim(scheme)];
        for (i, &v) in g.genes().iter().enumerate() {
            let rank = self.rank_of(i, v).expect("validated");
            match scheme {
                FeatureScheme::OneHot => out[self.genes[i].one_hot_offset + rank] = 1.0,
                FeatureScheme::OrdinalNormalized => {
                    let n = self.allowed(i).len();
                    out[i] = if n > 1 { rank as f64 / (n - 1) as f64 } else { 0.0 };
                }
            }
        }
        Ok(out)
    }

    /// Inverse of one-hot encoding: argmax of each indicator block.
    pub fn decode_one_hot(&self, features: &[f64]) -> Result<Genotype, SpaceError> {
        if features.len() != self.one_hot_dim {
            return Err(SpaceError::InvalidGenotype(format!(
                "feature length {} does not match one-hot dimension {}",
                features.len(),
                self.one_hot_dim
            )));
        }
        let genes = (0..self.genome_len())
            .map(|i| {
                let off = self.genes[i].one_hot_offset;
                let allowed = self.allowed(i);
                let block = &features[off..off + allowed.len()];
                let best = block
                    .iter()
                    .enumerate()
                    .fold(0, |best, (k, &x)| if x > block[best] { k } else { best });
                allowed[best]
            })
            .collect();
        Ok(Genotype(genes))
    }

    /// Maps every gene to the nearest allowed value (ties toward the smaller
    /// value) and canonicalizes. Returns `None` for a length mismatch.
    pub fn repair(&self, genes: &[i64]) -> Option<Genotype> {
        if genes.len() != self.genome_len() {
            return None;
        }
        let fixed = genes
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let allowed = self.allowed(i);
                *allowed.iter().min_by_key(|&&a| ((a - v).unsigned_abs(), a)).expect("non-empty")
            })
            .collect();
        Some(self.canonicalize(&Genotype(fixed)).expect("repaired genes are valid"))
    }

    /// Same structure with a different per-gene allowed set. Parameters
    /// whose positions end up with differing sets are split into
    /// single-position parameters named `name[k]`.
    pub fn with_allowed(&self, allowed: &[Vec<i64>]) -> Result<SearchSpace, SpaceError> {
        if allowed.len() != self.genome_len() {
            return Err(invalid("allowed-set list does not match genome length"));
        }
        let mut params = Vec::new();
        let mut gene = 0;
        for spec in &self.params {
            let sets = &allowed[gene..gene + spec.position_count];
            if sets.iter().all(|s| s == &sets[0]) {
                params.push(ElasticParamSpec { allowed_values: sets[0].clone(), ..spec.clone() });
            } else {
                for (k, set) in sets.iter().enumerate() {
                    params.push(ElasticParamSpec::new(format!("{}[{k}]", spec.name), spec.role, set.clone(), 1));
                }
            }
            gene += spec.position_count;
        }
        SearchSpace::new(self.name.clone(), params, self.blocks.clone())
    }
}

/// Built-in spaces approximating OFA MobileNetV3, OFA ResNet50 and HAT
/// Transformer layouts. The value sets are approximations; real OFA/HAT
/// genomes are richer.
pub mod presets {
    use super::*;

    pub const NAMES: [&str; 3] = ["mobilenetv3-like", "resnet50-like", "transformer-like"];

    pub fn by_name(name: &str) -> Result<SearchSpace, SpaceError> {
        match name {
            "mobilenetv3-like" => Ok(mobilenetv3_like()),
            "resnet50-like" => Ok(resnet50_like()),
            "transformer-like" => Ok(transformer_like()),
            other => Err(SpaceError::UnknownPreset(other.to_string())),
        }
    }

    /// Appends a block (depth gene + per-layer params) and returns its rule.
    fn push_block(
        params: &mut Vec<ElasticParamSpec>,
        next_gene: &mut usize,
        prefix: &str,
        depths: Vec<i64>,
        max_layers: usize,
        per_layer: &[(&str, Vec<i64>)],
    ) -> BlockRule {
        let depth_gene = *next_gene;
        params.push(ElasticParamSpec::new(format!("{prefix}.depth"), ParamRole::BlockDepth, depths, 1));
        *next_gene += 1;
        let starts: Vec<usize> = per_layer
            .iter()
            .map(|(name, values)| {
                params.push(ElasticParamSpec::new(format!("{prefix}.{name}"), ParamRole::PerLayer, values.clone(), max_layers));
                let start = *next_gene;
                *next_gene += max_layers;
                start
            })
            .collect();
        let governed_genes = (0..max_layers).flat_map(|layer| starts.iter().map(move |s| s + layer)).collect();
        BlockRule { depth_gene, governed_genes, max_layers }
    }

    fn push_global(params: &mut Vec<ElasticParamSpec>, next_gene: &mut usize, name: &str, values: Vec<i64>, count: usize) {
        params.push(ElasticParamSpec::new(name, ParamRole::Global, values, count));
        *next_gene += count;
    }

    /// 5 blocks, depth {2,3,4}, kernel {3,5,7}, expansion {3,4,6}.
    pub fn mobilenetv3_like() -> SearchSpace {
        let mut params = Vec::new();
        let mut next = 0;
        let blocks = (0..5)
            .map(|b| {
                push_block(
                    &mut params,
                    &mut next,
                    &format!("b{b}"),
                    vec![2, 3, 4],
                    4,
                    &[("kernel", vec![3, 5, 7]), ("expand", vec![3, 4, 6])],
                )
            })
            .collect();
        SearchSpace::new("mobilenetv3-like", params, blocks).expect("valid preset")
    }

    /// Global width multiplier rank (0.65, 0.8, 1.0) followed by 5 stages,
    /// each with two always-present base layers and up to two optional
    /// layers (depth {0,1,2}). Expansion ranks 0,1,2 stand for 0.2, 0.25, 0.35.
    pub fn resnet50_like() -> SearchSpace {
        let mut params = Vec::new();
        let mut next = 0;
        push_global(&mut params, &mut next, "width_mult", vec![0, 1, 2], 1);
        let blocks = (0..5)
            .map(|b| {
                push_global(&mut params, &mut next, &format!("s{b}.base_expand"), vec![0, 1, 2], 2);
                push_block(&mut params, &mut next, &format!("s{b}"), vec![0, 1, 2], 2, &[("expand", vec![0, 1, 2])])
            })
            .collect();
        SearchSpace::new("resnet50-like", params, blocks).expect("valid preset")
    }

    /// Encoder with 6 fixed layers and a decoder with 1..=6 layers. Per-layer
    /// FFN width and head count; decoder layers also pick how many of the
    /// last encoder layers they attend to.
    pub fn transformer_like() -> SearchSpace {
        let mut params = Vec::new();
        let mut next = 0;
        push_global(&mut params, &mut next, "enc.embed", vec![512, 640], 1);
        push_global(&mut params, &mut next, "dec.embed", vec![512, 640], 1);
        let enc = push_block(
            &mut params,
            &mut next,
            "enc",
            vec![6],
            6,
            &[("ffn", vec![1024, 2048, 3072]), ("heads", vec![4, 8])],
        );
        let dec = push_block(
            &mut params,
            &mut next,
            "dec",
            vec![1, 2, 3, 4, 5, 6],
            6,
            &[("ffn", vec![1024, 2048, 3072]), ("heads", vec![4, 8]), ("arbitrary", vec![1, 2, 3])],
        );
        SearchSpace::new("transformer-like", params, vec![enc, dec]).expect("valid preset")
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use std::collections::BTreeSet;

    /// One block, max 4 layers, depth {2,4}, kernel {3,5,7} per layer.
    fn kernel_block() -> SearchSpace {
        let params = vec![
            ElasticParamSpec::new("depth", ParamRole::BlockDepth, vec![2, 4], 1),
            ElasticParamSpec::new("kernel", ParamRole::PerLayer, vec![3, 5, 7], 4),
        ];
        let blocks = vec![BlockRule { depth_gene: 0, governed_genes: vec![1, 2, 3, 4], max_layers: 4 }];
        SearchSpace::new("kernel-block", params, blocks).unwrap()
    }

    /// 2 blocks, depth {1,2}, one per-layer parameter with 2 values.
    pub(crate) fn toy_space() -> SearchSpace {
        let params = vec![
            ElasticParamSpec::new("b0.depth", ParamRole::BlockDepth, vec![1, 2], 1),
            ElasticParamSpec::new("b0.k", ParamRole::PerLayer, vec![0, 1], 2),
            ElasticParamSpec::new("b1.depth", ParamRole::BlockDepth, vec![1, 2], 1),
            ElasticParamSpec::new("b1.k", ParamRole::PerLayer, vec![0, 1], 2),
        ];
        let blocks = vec![
            BlockRule { depth_gene: 0, governed_genes: vec![1, 2], max_layers: 2 },
            BlockRule { depth_gene: 3, governed_genes: vec![4, 5], max_layers: 2 },
        ];
        SearchSpace::new("toy", params, blocks).unwrap()
    }

    fn all_raw(space: &SearchSpace) -> Vec<Genotype> {
        let mut out = vec![Vec::new()];
        for i in 0..space.genome_len() {
            out = out
                .into_iter()
                .flat_map(|prefix: Vec<i64>| {
                    space.allowed(i).iter().map(move |&v| {
                        let mut p = prefix.clone();
                        p.push(v);
                        p
                    })
                })
                .collect();
        }
        out.into_iter().map(Genotype::new).collect()
    }

    #[test]
    fn inactive_kernels_reset_to_smallest() {
        let s = kernel_block();
        let g = Genotype::new(vec![2, 7, 5, 3, 5]);
        assert_eq!(s.canonicalize(&g).unwrap().genes(), &[2, 7, 5, 3, 3]);
    }

    #[test]
    fn full_depth_is_identity() {
        let s = kernel_block();
        let g = Genotype::new(vec![4, 7, 5, 3, 5]);
        assert_eq!(s.canonicalize(&g).unwrap(), g);
    }

    #[test]
    fn out_of_set_gene_is_rejected() {
        let s = kernel_block();
        let err = s.canonicalize(&Genotype::new(vec![2, 4, 5, 3, 5])).unwrap_err();
        assert!(matches!(err, SpaceError::InvalidGenotype(_)));
        assert!(s.canonicalize(&Genotype::new(vec![2, 3])).is_err());
    }

    #[test]
    fn canonical_form_is_unique_per_architecture() {
        // group raw genotypes by the architecture they decode to: depth plus
        // the active kernel values
        let s = toy_space();
        let mut by_arch: std::collections::BTreeMap<Vec<i64>, BTreeSet<Genotype>> = Default::default();
        for g in all_raw(&s) {
            let genes = g.genes();
            let mut arch = Vec::new();
            for (d, ks) in [(0usize, [1usize, 2]), (3, [4, 5])] {
                arch.push(genes[d]);
                arch.extend(ks.iter().take(genes[d] as usize).map(|&k| genes[k]));
                arch.push(-1);
            }
            by_arch.entry(arch).or_default().insert(s.canonicalize(&g).unwrap());
        }
        assert_eq!(by_arch.len(), 36);
        assert!(by_arch.values().all(|forms| forms.len() == 1));
    }

    #[test]
    fn enumeration_matches_canonicalized_raw_product() {
        for s in [toy_space(), kernel_block()] {
            let want: BTreeSet<Genotype> = all_raw(&s).iter().map(|g| s.canonicalize(g).unwrap()).collect();
            let got = s.enumerate(10_000).unwrap();
            assert_eq!(got.len(), want.len());
            assert_eq!(got.into_iter().collect::<BTreeSet<_>>(), want);
        }
        assert!(presets::mobilenetv3_like().enumerate(1_000_000).is_none());
    }

    #[test]
    fn cardinality_of_mobilenet_preset() {
        let s = presets::mobilenetv3_like();
        assert_eq!(s.genome_len(), 45);
        let per_block = BigUint::from(7371u32);
        assert_eq!(s.cardinality(), per_block.pow(5));
        assert_eq!(s.cardinality().to_string(), "21758655492572485851");
    }

    #[test]
    fn cardinality_single_block_single_layer() {
        let params = vec![
            ElasticParamSpec::new("d", ParamRole::BlockDepth, vec![1], 1),
            ElasticParamSpec::new("k", ParamRole::PerLayer, vec![3, 5, 7], 1),
        ];
        let s = SearchSpace::new("one", params, vec![BlockRule { depth_gene: 0, governed_genes: vec![1], max_layers: 1 }]).unwrap();
        assert_eq!(s.cardinality(), BigUint::from(3u32));
    }

    #[test]
    fn cardinality_matches_enumeration() {
        for s in [toy_space(), kernel_block()] {
            let distinct: BTreeSet<Genotype> = all_raw(&s).iter().map(|g| s.canonicalize(g).unwrap()).collect();
            assert_eq!(s.cardinality(), BigUint::from(distinct.len()));
        }
        assert_eq!(toy_space().cardinality(), BigUint::from(36u32));
    }

    #[test]
    fn preset_cardinalities() {
        // 3 width ranks x (9 base combos x (1 + 3 + 9))^5
        assert_eq!(presets::resnet50_like().cardinality(), BigUint::from(3u64 * 117u64.pow(5)));
        let dec: u64 = (1..=6).map(|d| 18u64.pow(d)).sum();
        assert_eq!(presets::transformer_like().cardinality(), BigUint::from(4 * 6u64.pow(6) * dec));
    }

    #[test]
    fn sampling_is_deterministic_and_canonical() {
        let s = presets::mobilenetv3_like();
        let a = s.sample_uniform(50, 3);
        assert_eq!(a, s.sample_uniform(50, 3));
        assert_ne!(a, s.sample_uniform(50, 4));
        assert!(a.iter().all(|g| s.is_canonical(g)));
    }

    #[test]
    fn sampled_active_genes_are_uniform() {
        let s = presets::mobilenetv3_like();
        let samples = s.sample_uniform(1000, 11);
        for i in 0..s.genome_len() {
            let n_values = s.allowed(i).len();
            let active: Vec<i64> = samples.iter().filter(|g| s.is_active(g.genes(), i)).map(|g| g.genes()[i]).collect();
            let n = active.len() as f64;
            let p = 1.0 / n_values as f64;
            let sd = (n * p * (1.0 - p)).sqrt();
            for &v in s.allowed(i) {
                let count = active.iter().filter(|&&x| x == v).count() as f64;
                assert!((count - n * p).abs() <= 5.0 * sd, "gene {i} value {v}: {count} of {n}");
            }
        }
    }

    #[test]
    fn one_hot_and_ordinal_examples() {
        let params = vec![ElasticParamSpec::new("k", ParamRole::Global, vec![3, 5, 7], 1)];
        let s = SearchSpace::new("g", params, vec![]).unwrap();
        assert_eq!(s.encode_features(&Genotype::new(vec![5]), FeatureScheme::OneHot).unwrap(), vec![0.0, 1.0, 0.0]);
        assert_eq!(s.encode_features(&Genotype::new(vec![7]), FeatureScheme::OrdinalNormalized).unwrap(), vec![1.0]);
    }

    #[test]
    fn encoding_rejects_non_canonical() {
        let s = kernel_block();
        let err = s.encode_features(&Genotype::new(vec![2, 7, 5, 3, 5]), FeatureScheme::OneHot).unwrap_err();
        assert_eq!(err, SpaceError::NonCanonicalInput);
    }

    #[test]
    fn one_hot_round_trips_and_is_injective() {
        let s = toy_space();
        let canon: BTreeSet<Genotype> = all_raw(&s).iter().map(|g| s.canonicalize(g).unwrap()).collect();
        let mut encodings = BTreeSet::new();
        for g in &canon {
            let f = s.encode_features(g, FeatureScheme::OneHot).unwrap();
            assert_eq!(&s.decode_one_hot(&f).unwrap(), g);
            encodings.insert(f.iter().map(|x| *x as u8).collect::<Vec<_>>());
        }
        assert_eq!(encodings.len(), canon.len());
    }

    #[test]
    fn invalid_spaces_are_rejected() {
        let params = vec![ElasticParamSpec::new("k", ParamRole::PerLayer, vec![3, 5], 2)];
        assert!(SearchSpace::new("x", params, vec![]).is_err());
        let params = vec![ElasticParamSpec::new("k", ParamRole::Global, vec![5, 3], 1)];
        assert!(SearchSpace::new("x", params, vec![]).is_err());
        let params = vec![
            ElasticParamSpec::new("d", ParamRole::BlockDepth, vec![1, 3], 1),
            ElasticParamSpec::new("k", ParamRole::PerLayer, vec![3, 5], 2),
        ];
        let blocks = vec![BlockRule { depth_gene: 0, governed_genes: vec![1, 2], max_layers: 2 }];
        assert!(SearchSpace::new("x", params, blocks).is_err());
    }

    #[test]
    fn json_schema_round_trip() {
        let s = presets::transformer_like();
        let text = s.to_json();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert!(v["params"][0]["position_count"].is_number());
        assert!(v["blocks"][0]["depth_gene"].is_number());
        assert_eq!(SearchSpace::from_json(&text).unwrap(), s);
    }

    #[test]
    fn with_allowed_splits_heterogeneous_params() {
        let s = kernel_block();
        let mut allowed: Vec<Vec<i64>> = (0..s.genome_len()).map(|i| s.allowed(i).to_vec()).collect();
        allowed[2] = vec![5, 7];
        let c = s.with_allowed(&allowed).unwrap();
        assert_eq!(c.genome_len(), s.genome_len());
        assert_eq!(c.allowed(2), &[5, 7]);
        assert_eq!(c.allowed(1), &[3, 5, 7]);
        assert_eq!(c.param_of(2).name, "kernel[1]");
    }

    #[test]
    fn repair_snaps_to_nearest() {
        let s = kernel_block();
        assert_eq!(s.repair(&[4, 4, 6, 9, 1]).unwrap().genes(), &[4, 3, 5, 7, 3]);
        // depth 3 ties between 2 and 4; the smaller wins and deactivates two layers
        assert_eq!(s.repair(&[3, 4, 6, 9, 1]).unwrap().genes(), &[2, 3, 5, 3, 3]);
        assert!(s.repair(&[2]).is_none());
    }

    #[test]
    fn genotype_ids_round_trip() {
        let g = Genotype::new(vec![4, -1, 7]);
        assert_eq!(g.id(), "4_-1_7");
        assert_eq!(Genotype::parse_id(&g.id()).unwrap(), g);
    }

    proptest::proptest! {
        #[test]
        fn canonicalize_is_idempotent(seed in 0u64..u64::MAX) {
            use rand::Rng;
            let s = presets::transformer_like();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let raw = Genotype::new((0..s.genome_len()).map(|i| {
                let a = s.allowed(i);
                a[rng.gen_range(0..a.len())]
            }).collect());
            let once = s.canonicalize(&raw).unwrap();
            proptest::prop_assert_eq!(s.canonicalize(&once).unwrap(), once.clone());
            proptest::prop_assert!(s.is_canonical(&once));
        }
    }
}
