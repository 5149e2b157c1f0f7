//! PopDB: cluster a search history with HDBSCAN, count how often each
//! elastic value shows up inside non-noise clusters, and drop the rare
//! values to get a smaller space.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::seed::sub_seed;
use crate::space::{FeatureScheme, Genotype, ParamRole, SearchSpace, SpaceError};

/// Distances below this are treated as this, so lambdas stay finite.
const MIN_DISTANCE: f64 = 1e-12;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum PopDbError {
    #[error("no point was assigned to a cluster")]
    EmptyClusterSet,
    #[error("constraint set does not match the space: {0}")]
    ConstraintMismatch(String),
    #[error("labeling has {labels} entries for {points} points")]
    DimensionMismatch { labels: usize, points: usize },
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error("constraint file: {0}")]
    Io(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterLabeling {
    /// `-1` is noise.
    pub labels: Vec<i64>,
    pub probabilities: Vec<f64>,
}

impl ClusterLabeling {
    pub fn all_noise(n: usize) -> Self {
        ClusterLabeling { labels: vec![-1; n], probabilities: vec![0.0; n] }
    }

    pub fn cluster_count(&self) -> usize {
        self.labels.iter().copied().max().map_or(0, |m| (m + 1).max(0) as usize)
    }

    pub fn noise_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l < 0).count()
    }
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Flat exact HDBSCAN with the Euclidean metric. Fewer points than
/// `min_cluster_size` gives an all-noise labeling.
pub fn hdbscan(points: &[Vec<f64>], min_cluster_size: usize, min_samples: usize) -> ClusterLabeling {
    let n = points.len();
    let min_cluster_size = min_cluster_size.max(2);
    if n < min_cluster_size || n < 2 {
        return ClusterLabeling::all_noise(n);
    }
    let core = core_distances(points, min_samples.clamp(1, n));
    let mst = prim_mst(points, &core);
    let tree = single_linkage(n, mst);
    let condensed = condense(&tree, n, min_cluster_size);
    let selected = select_eom(&condensed, n);
    label_points(&condensed, &selected, n)
}

/// Distance to the `k`-th nearest neighbour, counting the point itself.
fn core_distances(points: &[Vec<f64>], k: usize) -> Vec<f64> {
    points
        .par_iter()
        .map(|p| {
            let mut d: Vec<f64> = points.iter().map(|q| euclidean(p, q)).collect();
            let (_, kth, _) = d.select_nth_unstable_by(k - 1, f64::total_cmp);
            *kth
        })
        .collect()
}

/// Prim's algorithm on the dense mutual-reachability graph.
/// Returns `(a, b, weight)` edges.
fn prim_mst(points: &[Vec<f64>], core: &[f64]) -> Vec<(usize, usize, f64)> {
    let n = points.len();
    let mut in_tree = vec![false; n];
    let mut best = vec![f64::INFINITY; n];
    let mut from = vec![0usize; n];
    let mut edges = Vec::with_capacity(n - 1);
    let mut current = 0;
    in_tree[0] = true;
    for _ in 1..n {
        let p = &points[current];
        let cp = core[current];
        best.par_iter_mut().zip(from.par_iter_mut()).enumerate().for_each(|(j, (b, f))| {
            if !in_tree[j] {
                let d = euclidean(p, &points[j]).max(cp).max(core[j]);
                if d < *b {
                    *b = d;
                    *f = current;
                }
            }
        });
        let mut next = usize::MAX;
        let mut next_d = f64::INFINITY;
        for j in 0..n {
            if !in_tree[j] && (next == usize::MAX || best[j] < next_d) {
                next = j;
                next_d = best[j];
            }
        }
        in_tree[next] = true;
        edges.push((from[next], next, next_d));
        current = next;
    }
    edges
}

struct Merge {
    left: usize,
    right: usize,
    distance: f64,
    size: usize,
}

/// Dendrogram from MST edges; node `n + i` is the `i`-th merge.
fn single_linkage(n: usize, mut edges: Vec<(usize, usize, f64)>) -> Vec<Merge> {
    edges.sort_by(|a, b| a.2.total_cmp(&b.2));
    let mut parent: Vec<usize> = (0..2 * n - 1).collect();
    let mut size = vec![1usize; 2 * n - 1];
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let mut merges = Vec::with_capacity(n - 1);
    for (a, b, d) in edges {
        let ra = find(&mut parent, a);
        let rb = find(&mut parent, b);
        let node = n + merges.len();
        size[node] = size[ra] + size[rb];
        parent[ra] = node;
        parent[rb] = node;
        merges.push(Merge { left: ra, right: rb, distance: d, size: size[node] });
    }
    merges
}

/// One row of the condensed tree: `child` left `parent` at `lambda`.
/// Clusters are numbered from `n` (the root); points keep their index.
#[derive(Clone, Copy, Debug)]
struct Condensed {
    parent: usize,
    child: usize,
    lambda: f64,
    size: usize,
}

fn condense(tree: &[Merge], n: usize, min_cluster_size: usize) -> Vec<Condensed> {
    let root = 2 * n - 2;
    let node_size = |x: usize| if x < n { 1 } else { tree[x - n].size };
    let mut out = Vec::new();
    let mut next_label = n + 1;
    // (dendrogram node, condensed cluster it belongs to)
    let mut stack = vec![(root, n)];
    while let Some((node, label)) = stack.pop() {
        if node < n {
            continue;
        }
        let m = &tree[node - n];
        let lambda = 1.0 / m.distance.max(MIN_DISTANCE);
        let (l, r) = (m.left, m.right);
        let (ls, rs) = (node_size(l), node_size(r));
        match (ls >= min_cluster_size, rs >= min_cluster_size) {
            (true, true) => {
                for (child, size) in [(l, ls), (r, rs)] {
                    out.push(Condensed { parent: label, child: next_label, lambda, size });
                    stack.push((child, next_label));
                    next_label += 1;
                }
            }
            (true, false) => {
                fall_out(tree, n, r, label, lambda, &mut out);
                stack.push((l, label));
            }
            (false, true) => {
                fall_out(tree, n, l, label, lambda, &mut out);
                stack.push((r, label));
            }
            (false, false) => {
                fall_out(tree, n, l, label, lambda, &mut out);
                fall_out(tree, n, r, label, lambda, &mut out);
            }
        }
    }
    out
}

/// Every point under `node` leaves `label` at `lambda`.
fn fall_out(tree: &[Merge], n: usize, node: usize, label: usize, lambda: f64, out: &mut Vec<Condensed>) {
    let mut stack = vec![node];
    while let Some(x) = stack.pop() {
        if x < n {
            out.push(Condensed { parent: label, child: x, lambda, size: 1 });
        } else {
            stack.push(tree[x - n].left);
            stack.push(tree[x - n].right);
        }
    }
}

/// Excess-of-mass selection; the root is never selected.
fn select_eom(condensed: &[Condensed], n: usize) -> Vec<usize> {
    let n_clusters = condensed.iter().map(|c| c.parent.max(if c.size > 1 { c.child } else { 0 })).max().map_or(1, |m| m - n + 1);
    let mut birth = vec![0.0; n_clusters];
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); n_clusters];
    for c in condensed.iter().filter(|c| c.size > 1) {
        birth[c.child - n] = c.lambda;
        children[c.parent - n].push(c.child - n);
    }
    let mut stability = vec![0.0; n_clusters];
    for c in condensed {
        stability[c.parent - n] += (c.lambda - birth[c.parent - n]) * c.size as f64;
    }
    let mut selected = vec![false; n_clusters];
    // Children always carry larger ids than their parent.
    for id in (1..n_clusters).rev() {
        let child_sum: f64 = children[id].iter().map(|&k| stability[k]).sum();
        if children[id].is_empty() || stability[id] > child_sum {
            selected[id] = true;
            let mut stack = children[id].clone();
            while let Some(k) = stack.pop() {
                selected[k] = false;
                stack.extend(children[k].iter().copied());
            }
        } else {
            stability[id] = child_sum;
        }
    }
    (1..n_clusters).filter(|&id| selected[id]).map(|id| id + n).collect()
}

fn label_points(condensed: &[Condensed], selected: &[usize], n: usize) -> ClusterLabeling {
    let n_clusters = condensed.iter().filter(|c| c.size > 1).map(|c| c.child - n + 1).max().unwrap_or(1);
    let mut parent_of = vec![usize::MAX; n_clusters];
    for c in condensed.iter().filter(|c| c.size > 1) {
        parent_of[c.child - n] = c.parent - n;
    }
    let mut label_of = vec![-1i64; n_clusters];
    for (k, &s) in selected.iter().enumerate() {
        label_of[s - n] = k as i64;
    }
    // Nearest selected ancestor of every cluster (itself included).
    let mut owner = vec![-1i64; n_clusters];
    for id in 0..n_clusters {
        let mut x = id;
        loop {
            if label_of[x] >= 0 {
                owner[id] = label_of[x];
                break;
            }
            if parent_of[x] == usize::MAX {
                break;
            }
            x = parent_of[x];
        }
    }
    let mut labels = vec![-1i64; n];
    let mut point_lambda = vec![0.0; n];
    for c in condensed.iter().filter(|c| c.size == 1) {
        labels[c.child] = owner[c.parent - n];
        point_lambda[c.child] = c.lambda;
    }
    let mut max_lambda = vec![0.0f64; selected.len()];
    for p in 0..n {
        if labels[p] >= 0 {
            let k = labels[p] as usize;
            max_lambda[k] = max_lambda[k].max(point_lambda[p]);
        }
    }
    let probabilities = (0..n)
        .map(|p| {
            if labels[p] < 0 {
                0.0
            } else {
                let m = max_lambda[labels[p] as usize];
                if m > 0.0 {
                    point_lambda[p].min(m) / m
                } else {
                    1.0
                }
            }
        })
        .collect();
    ClusterLabeling { labels, probabilities }
}

/// Relative frequency of each allowed value per genome position, over
/// active genes of non-noise points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrequencyTable {
    /// `counts[gene][rank]`.
    pub counts: Vec<Vec<u64>>,
}

impl FrequencyTable {
    pub fn observations(&self, gene: usize) -> u64 {
        self.counts[gene].iter().sum()
    }

    /// `None` when the position was never observed active.
    pub fn frequency(&self, gene: usize, rank: usize) -> Option<f64> {
        let total = self.observations(gene);
        (total > 0).then(|| self.counts[gene][rank] as f64 / total as f64)
    }
}

pub fn elastic_frequencies(labeling: &ClusterLabeling, genotypes: &[Genotype], space: &SearchSpace) -> Result<FrequencyTable, PopDbError> {
    if labeling.labels.len() != genotypes.len() {
        return Err(PopDbError::DimensionMismatch { labels: labeling.labels.len(), points: genotypes.len() });
    }
    let mut counts: Vec<Vec<u64>> = (0..space.genome_len()).map(|i| vec![0; space.allowed(i).len()]).collect();
    let mut members = 0;
    for (g, &label) in genotypes.iter().zip(&labeling.labels) {
        if label < 0 {
            continue;
        }
        space.validate(g)?;
        members += 1;
        let genes = g.genes();
        for (i, row) in counts.iter_mut().enumerate() {
            if space.is_active(genes, i) {
                row[space.rank_of(i, genes[i]).expect("validated")] += 1;
            }
        }
    }
    if members == 0 {
        return Err(PopDbError::EmptyClusterSet);
    }
    Ok(FrequencyTable { counts })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoleElimination {
    pub role: ParamRole,
    pub values_eliminated: usize,
    pub values_total: usize,
    pub positions_constrained: usize,
    pub positions_total: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSet {
    pub space: String,
    pub source_run: String,
    pub threshold: f64,
    /// Allowed values per genome position.
    pub allowed: Vec<Vec<i64>>,
    pub eliminations: Vec<RoleElimination>,
}

impl ConstraintSet {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("constraint set serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, PopDbError> {
        serde_json::from_str(text).map_err(|e| PopDbError::Io(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<(), PopDbError> {
        std::fs::write(path, self.to_json()).map_err(|e| PopDbError::Io(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, PopDbError> {
        let text = std::fs::read_to_string(path).map_err(|e| PopDbError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

/// Drops values whose frequency is below `threshold`. A position that
/// would lose every value keeps its most frequent one; a position never
/// observed active keeps everything.
pub fn build_constraints(freqs: &FrequencyTable, threshold: f64, space: &SearchSpace, source_run: &str) -> ConstraintSet {
    let mut allowed = Vec::with_capacity(space.genome_len());
    let mut per_role: BTreeMap<ParamRole, RoleElimination> = BTreeMap::new();
    for i in 0..space.genome_len() {
        let values = space.allowed(i);
        let kept: Vec<i64> = match freqs.observations(i) {
            0 => values.to_vec(),
            _ => {
                let kept: Vec<i64> = values
                    .iter()
                    .enumerate()
                    .filter(|&(r, _)| freqs.frequency(i, r).unwrap() >= threshold)
                    .map(|(_, &v)| v)
                    .collect();
                if kept.is_empty() {
                    let top = (0..values.len()).max_by_key(|&r| (freqs.counts[i][r], std::cmp::Reverse(r))).unwrap();
                    vec![values[top]]
                } else {
                    kept
                }
            }
        };
        let e = per_role.entry(space.role(i)).or_insert(RoleElimination {
            role: space.role(i),
            values_eliminated: 0,
            values_total: 0,
            positions_constrained: 0,
            positions_total: 0,
        });
        e.values_total += values.len();
        e.values_eliminated += values.len() - kept.len();
        e.positions_total += 1;
        e.positions_constrained += usize::from(kept.len() < values.len());
        allowed.push(kept);
    }
    ConstraintSet {
        space: space.name().to_string(),
        source_run: source_run.to_string(),
        threshold,
        allowed,
        eliminations: per_role.into_values().collect(),
    }
}

pub fn constrain_space(space: &SearchSpace, c: &ConstraintSet) -> Result<SearchSpace, PopDbError> {
    if c.allowed.len() != space.genome_len() {
        return Err(PopDbError::ConstraintMismatch(format!(
            "{} positions in constraints, {} in space",
            c.allowed.len(),
            space.genome_len()
        )));
    }
    for (i, set) in c.allowed.iter().enumerate() {
        if set.is_empty() {
            return Err(PopDbError::ConstraintMismatch(format!("position {i} has no allowed value")));
        }
        if let Some(v) = set.iter().find(|v| !space.allowed(i).contains(v)) {
            return Err(PopDbError::ConstraintMismatch(format!("value {v} is not allowed at position {i}")));
        }
    }
    Ok(space.with_allowed(&c.allowed)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PopDbConfig {
    pub min_cluster_size: usize,
    pub min_samples: usize,
    pub threshold: f64,
    /// Larger histories are uniformly subsampled to this size.
    pub max_points: usize,
    /// Append min-max normalized objective coordinates to the features.
    pub joint: bool,
    pub seed: u64,
}

impl Default for PopDbConfig {
    fn default() -> Self {
        PopDbConfig { min_cluster_size: 50, min_samples: 10, threshold: 0.01, max_points: 20_000, joint: false, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PopDbOutcome {
    /// Indices into the history that were clustered.
    pub used: Vec<usize>,
    pub labeling: ClusterLabeling,
    pub frequencies: FrequencyTable,
    pub constraints: ConstraintSet,
}

/// Clustering features: ordinal genotype encoding, optionally followed by
/// objective coordinates scaled to `[0, 1]` over the given points.
pub fn clustering_features(space: &SearchSpace, genotypes: &[Genotype], objectives: Option<&[Vec<f64>]>) -> Result<Vec<Vec<f64>>, PopDbError> {
    let mut features = genotypes
        .iter()
        .map(|g| space.encode_features(g, FeatureScheme::OrdinalNormalized))
        .collect::<Result<Vec<_>, _>>()?;
    if let Some(obj) = objectives {
        if obj.len() != genotypes.len() {
            return Err(PopDbError::DimensionMismatch { labels: obj.len(), points: genotypes.len() });
        }
        let m = obj.first().map_or(0, Vec::len);
        for j in 0..m {
            let lo = obj.iter().map(|o| o[j]).fold(f64::INFINITY, f64::min);
            let hi = obj.iter().map(|o| o[j]).fold(f64::NEG_INFINITY, f64::max);
            let span = if hi > lo { hi - lo } else { 1.0 };
            for (f, o) in features.iter_mut().zip(obj) {
                f.push((o[j] - lo) / span);
            }
        }
    }
    Ok(features)
}

/// The whole pipeline on a search history.
pub fn run_popdb(
    space: &SearchSpace,
    genotypes: &[Genotype],
    objectives: Option<&[Vec<f64>]>,
    cfg: &PopDbConfig,
    source_run: &str,
) -> Result<PopDbOutcome, PopDbError> {
    let used: Vec<usize> = if genotypes.len() > cfg.max_points {
        log::info!("subsampling {} history points to {}", genotypes.len(), cfg.max_points);
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed, "popdb-subsample"));
        let mut idx = index::sample(&mut rng, genotypes.len(), cfg.max_points).into_vec();
        idx.sort_unstable();
        idx
    } else {
        (0..genotypes.len()).collect()
    };
    let picked: Vec<Genotype> = used.iter().map(|&i| genotypes[i].clone()).collect();
    let picked_obj: Option<Vec<Vec<f64>>> = match (cfg.joint, objectives) {
        (true, Some(o)) => Some(used.iter().map(|&i| o[i].clone()).collect()),
        _ => None,
    };
    let features = clustering_features(space, &picked, picked_obj.as_deref())?;
    let labeling = hdbscan(&features, cfg.min_cluster_size, cfg.min_samples);
    log::info!("{} clusters, {} of {} points noise", labeling.cluster_count(), labeling.noise_count(), picked.len());
    let frequencies = elastic_frequencies(&labeling, &picked, space)?;
    let constraints = build_constraints(&frequencies, cfg.threshold, space, source_run);
    Ok(PopDbOutcome { used, labeling, frequencies, constraints })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::presets;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    fn blobs(n: usize, centers: &[[f64; 2]], sigma: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, sigma).unwrap();
        let mut pts = Vec::new();
        let mut truth = Vec::new();
        for (k, c) in centers.iter().enumerate() {
            for _ in 0..n {
                pts.push(vec![c[0] + normal.sample(&mut rng), c[1] + normal.sample(&mut rng)]);
                truth.push(k);
            }
        }
        (pts, truth)
    }

    #[test]
    fn two_blobs_give_two_clusters() {
        let centers = [[0.0, 0.0], [10.0, 0.0]];
        let (pts, truth) = blobs(200, &centers, 1.0, 3);
        let lab = hdbscan(&pts, 50, 10);
        assert_eq!(lab.cluster_count(), 2);
        // Map cluster ids to blobs by majority, then check points far
        // from the other blob.
        let mut votes = [[0usize; 2]; 2];
        for (&l, &t) in lab.labels.iter().zip(&truth) {
            if l >= 0 {
                votes[l as usize][t] += 1;
            }
        }
        let blob_of = |l: usize| if votes[l][0] >= votes[l][1] { 0 } else { 1 };
        assert_ne!(blob_of(0), blob_of(1));
        for ((p, &l), &t) in pts.iter().zip(&lab.labels).zip(&truth) {
            let other = centers[1 - t];
            let far = ((p[0] - other[0]).powi(2) + (p[1] - other[1]).powi(2)).sqrt() >= 3.0;
            if far && l >= 0 {
                assert_eq!(blob_of(l as usize), t);
            }
        }
        assert!(lab.noise_count() < 80, "{} noise", lab.noise_count());
    }

    #[test]
    fn uniform_noise_is_mostly_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pts: Vec<Vec<f64>> = (0..100).map(|_| vec![rng.gen::<f64>(), rng.gen::<f64>()]).collect();
        let lab = hdbscan(&pts, 50, 10);
        assert!(lab.noise_count() >= 90, "{} noise", lab.noise_count());
    }

    #[test]
    fn too_few_points_is_all_noise() {
        let pts = vec![vec![0.0], vec![1.0], vec![2.0]];
        assert_eq!(hdbscan(&pts, 50, 10), ClusterLabeling::all_noise(3));
    }

    #[test]
    fn duplicating_points_keeps_cluster_count() {
        let (pts, _) = blobs(150, &[[0.0, 0.0], [8.0, 8.0], [-8.0, 8.0]], 1.0, 5);
        let once = hdbscan(&pts, 50, 10);
        let twice: Vec<Vec<f64>> = pts.iter().flat_map(|p| [p.clone(), p.clone()]).collect();
        let again = hdbscan(&twice, 50, 10);
        assert_eq!(once.cluster_count(), 3);
        assert_eq!(again.cluster_count(), once.cluster_count());
    }

    #[test]
    fn labels_name_large_clusters_and_probabilities_are_bounded() {
        let (pts, _) = blobs(120, &[[0.0, 0.0], [6.0, 0.0], [0.0, 6.0]], 0.8, 6);
        let lab = hdbscan(&pts, 30, 5);
        for k in 0..lab.cluster_count() as i64 {
            assert!(lab.labels.iter().filter(|&&l| l == k).count() >= 30);
        }
        for (&l, &p) in lab.labels.iter().zip(&lab.probabilities) {
            assert!((0.0..=1.0).contains(&p));
            if l < 0 {
                assert_eq!(p, 0.0);
            }
        }
        assert!(lab.probabilities.iter().any(|&p| p == 1.0));
    }

    /// Prim's tree has the same total weight as Kruskal on all pairs.
    #[test]
    fn mst_weight_matches_kruskal() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pts: Vec<Vec<f64>> = (0..60).map(|_| vec![rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()]).collect();
        let core = core_distances(&pts, 4);
        let prim: f64 = prim_mst(&pts, &core).iter().map(|e| e.2).sum();

        let mut pairs = Vec::new();
        for i in 0..60 {
            for j in i + 1..60 {
                pairs.push((i, j, euclidean(&pts[i], &pts[j]).max(core[i]).max(core[j])));
            }
        }
        pairs.sort_by(|a, b| a.2.total_cmp(&b.2));
        let mut comp: Vec<usize> = (0..60).collect();
        let mut total = 0.0;
        for (i, j, w) in pairs {
            let (ci, cj) = (comp[i], comp[j]);
            if ci != cj {
                total += w;
                for c in comp.iter_mut() {
                    if *c == cj {
                        *c = ci;
                    }
                }
            }
        }
        assert!((prim - total).abs() < 1e-9);
    }

    #[test]
    fn core_distance_counts_self() {
        let pts = vec![vec![0.0], vec![1.0], vec![3.0]];
        assert_eq!(core_distances(&pts, 1), vec![0.0, 0.0, 0.0]);
        assert_eq!(core_distances(&pts, 2), vec![1.0, 1.0, 2.0]);
    }

    fn toy() -> SearchSpace {
        crate::space::tests::toy_space()
    }

    #[test]
    fn hand_counted_frequencies() {
        let space = toy();
        // Genome: [depth0, k0a, k0b, depth1, k1a, k1b] as in toy_space.
        let genos: Vec<Genotype> = [
            vec![2, 1, 1, 1, 0, 0],
            vec![2, 1, 0, 2, 1, 1],
            vec![1, 0, 0, 2, 1, 0],
            vec![1, 1, 0, 1, 1, 0],
            vec![2, 0, 1, 2, 0, 1],
            vec![1, 1, 0, 1, 0, 0],
        ]
        .into_iter()
        .map(Genotype::new)
        .collect();
        for g in &genos {
            assert!(space.is_canonical(g), "{g:?}");
        }
        let lab = ClusterLabeling { labels: vec![0, 0, 1, 1, -1, -1], probabilities: vec![1.0; 6] };
        let t = elastic_frequencies(&lab, &genos, &space).unwrap();
        // Points 0..4: depth0 = 2,2,1,1 ; k0a = 1,1,0,1 ; k0b active only when depth0 = 2: 1,0.
        assert_eq!(t.counts[0], vec![2, 2]);
        assert_eq!(t.counts[1], vec![1, 3]);
        assert_eq!(t.counts[2], vec![1, 1]);
        assert_eq!(t.counts[3], vec![2, 2]);
        assert_eq!(t.counts[4], vec![1, 3]);
        assert_eq!(t.counts[5], vec![1, 1]);
        for i in 0..space.genome_len() {
            let s: f64 = (0..space.allowed(i).len()).map(|r| t.frequency(i, r).unwrap()).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn single_value_cluster_has_unit_frequency() {
        let space = toy();
        let g = Genotype::new(vec![2, 1, 0, 1, 0, 0]);
        let lab = ClusterLabeling { labels: vec![0; 5], probabilities: vec![1.0; 5] };
        let t = elastic_frequencies(&lab, &vec![g; 5], &space).unwrap();
        assert_eq!(t.frequency(1, 1), Some(1.0));
        assert_eq!(t.frequency(5, 0), None);
    }

    #[test]
    fn all_noise_is_an_error() {
        let space = toy();
        let g = Genotype::new(vec![2, 1, 0, 1, 0, 0]);
        assert_eq!(elastic_frequencies(&ClusterLabeling::all_noise(1), &[g], &space), Err(PopDbError::EmptyClusterSet));
    }

    fn kernel_space() -> SearchSpace {
        SearchSpace::new("k", vec![crate::space::ElasticParamSpec::new("kernel", ParamRole::Global, vec![3, 5, 7], 2)], vec![]).unwrap()
    }

    #[test]
    fn threshold_rule_and_fallback() {
        let space = kernel_space();
        let t = FrequencyTable { counts: vec![vec![5, 495, 500], vec![0, 0, 0]] };
        let c = build_constraints(&t, 0.01, &space, "run");
        assert_eq!(c.allowed, vec![vec![5, 7], vec![3, 5, 7]]);
        assert_eq!(c.eliminations[0].values_eliminated, 1);
        assert_eq!(c.eliminations[0].positions_constrained, 1);

        let none = build_constraints(&t, 0.0, &space, "run");
        assert_eq!(none.allowed, vec![vec![3, 5, 7]; 2]);

        let t = FrequencyTable { counts: vec![vec![1, 2, 3], vec![3, 3, 1]] };
        let c = build_constraints(&t, 0.9, &space, "run");
        assert_eq!(c.allowed, vec![vec![7], vec![3]]);
    }

    #[test]
    fn raising_threshold_never_enlarges_sets() {
        let space = presets::mobilenetv3_like();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let t = FrequencyTable {
            counts: (0..space.genome_len()).map(|i| (0..space.allowed(i).len()).map(|_| rng.gen_range(0..50)).collect()).collect(),
        };
        let mut prev: Option<ConstraintSet> = None;
        for th in [0.0, 0.05, 0.1, 0.2, 0.3, 0.5, 0.9] {
            let c = build_constraints(&t, th, &space, "r");
            if let Some(p) = &prev {
                for (a, b) in c.allowed.iter().zip(&p.allowed) {
                    assert!(a.iter().all(|v| b.contains(v)));
                }
            }
            prev = Some(c);
        }
    }

    #[test]
    fn constrained_cardinality_drops_by_combinatorial_factor() {
        let space = presets::mobilenetv3_like();
        let all: Vec<Vec<i64>> = (0..space.genome_len()).map(|i| space.allowed(i).to_vec()).collect();
        let same = ConstraintSet { space: "m".into(), source_run: "r".into(), threshold: 0.0, allowed: all.clone(), eliminations: vec![] };
        assert_eq!(constrain_space(&space, &same).unwrap().cardinality(), space.cardinality());

        // Drop the largest kernel everywhere: each active layer has one
        // fewer kernel choice.
        let kernel_genes: Vec<usize> = (0..space.genome_len()).filter(|&i| space.param_of(i).name.contains("kernel")).collect();
        assert!(!kernel_genes.is_empty());
        let mut allowed = all.clone();
        for &i in &kernel_genes {
            allowed[i].pop();
        }
        let c = ConstraintSet { allowed, ..same.clone() };
        let small = constrain_space(&space, &c).unwrap();
        assert!(small.cardinality() < space.cardinality());

        // Oracle: per-block sum over depths of (layer choices)^depth.
        let per_block = |sp: &SearchSpace| -> num_bigint::BigUint {
            let mut total = num_bigint::BigUint::from(1u32);
            for b in sp.blocks() {
                let per = b.genes_per_layer();
                let layer: u64 = b.governed_genes[..per].iter().map(|&g| sp.allowed(g).len() as u64).product();
                let depths = sp.allowed(b.depth_gene);
                let s: u64 = depths.iter().map(|&d| layer.pow(d as u32)).sum();
                total *= s;
            }
            total
        };
        assert_eq!(per_block(&space), space.cardinality());
        assert_eq!(per_block(&small), small.cardinality());

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let g = small.sample_one(&mut rng);
            for &i in &kernel_genes {
                assert!(c.allowed[i].contains(&g.genes()[i]));
            }
            space.validate(&g).unwrap();
        }
    }

    #[test]
    fn mismatched_constraints_are_rejected() {
        let space = kernel_space();
        let bad = ConstraintSet { space: "k".into(), source_run: "r".into(), threshold: 0.0, allowed: vec![vec![3]], eliminations: vec![] };
        assert!(matches!(constrain_space(&space, &bad), Err(PopDbError::ConstraintMismatch(_))));
        let bad = ConstraintSet { allowed: vec![vec![4], vec![3]], ..bad };
        assert!(matches!(constrain_space(&space, &bad), Err(PopDbError::ConstraintMismatch(_))));
    }

    #[test]
    fn constraint_set_round_trips() {
        let space = kernel_space();
        let t = FrequencyTable { counts: vec![vec![5, 495, 500], vec![1, 1, 1]] };
        let c = build_constraints(&t, 0.01, &space, "run-7");
        assert_eq!(ConstraintSet::from_json(&c.to_json()).unwrap(), c);
    }

    #[test]
    fn pipeline_on_clustered_history_removes_rare_values() {
        let space = presets::mobilenetv3_like();
        // History concentrated around two genotypes with small kernels.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let seeds = space.sample_uniform(2, 9);
        let mut history = Vec::new();
        for k in 0..400 {
            let mut genes = seeds[k % 2].genes().to_vec();
            let i = rng.gen_range(0..genes.len());
            let allowed = space.allowed(i);
            if space.param_of(i).name.contains("kernel") {
                genes[i] = allowed[0];
            } else {
                genes[i] = allowed[rng.gen_range(0..allowed.len())];
            }
            history.push(space.canonicalize(&Genotype::new(genes)).unwrap());
        }
        let out = run_popdb(&space, &history, None, &PopDbConfig { min_cluster_size: 20, min_samples: 5, ..Default::default() }, "h").unwrap();
        assert!(out.labeling.cluster_count() >= 1);
        let reduced = constrain_space(&space, &out.constraints).unwrap();
        assert!(reduced.cardinality() < space.cardinality());
        for (i, set) in out.constraints.allowed.iter().enumerate() {
            assert!(set.iter().all(|v| space.allowed(i).contains(v)));
            assert!(!set.is_empty());
        }
    }

    #[test]
    fn subsampling_is_deterministic() {
        let space = crate::space::tests::toy_space();
        let history = space.sample_uniform(300, 1);
        let cfg = PopDbConfig { min_cluster_size: 10, min_samples: 3, max_points: 100, ..Default::default() };
        let a = run_popdb(&space, &history, None, &cfg, "r");
        let b = run_popdb(&space, &history, None, &cfg, "r");
        assert_eq!(a, b);
        if let Ok(a) = a {
            assert_eq!(a.used.len(), 100);
        }
    }
}
