//! Surrogate objective predictors and predictor-quality metrics.

mod metrics;
mod ridge;
mod svr;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::seed::{stable_hash, sub_seed};
use crate::space::{FeatureScheme, Genotype, SearchSpace};

pub use metrics::{kendall_tau, mape};
pub use ridge::{fit_ridge, RidgeModel};
pub use svr::{fit_svr, fit_svr_with, Kernel, SvrDiagnostics, SvrModel, SvrOptions};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PredictError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("singular system; use lambda > 0")]
    SingularSystem,
    #[error("SVR did not converge after {iterations} iterations")]
    ConvergenceFailure { iterations: usize, best: Box<SvrModel> },
    #[error("invalid hyperparameter: {0}")]
    InvalidHyperparameter(String),
    #[error("not enough samples")]
    EmptyInput,
    #[error("actual value of zero in MAPE")]
    ZeroDenominator,
    #[error("correlation undefined for constant input")]
    UndefinedCorrelation,
    #[error("encoding failed: {0}")]
    Encoding(String),
    #[error("model document: {0}")]
    Format(String),
    #[error("io: {0}")]
    Io(String),
}

/// Checks a feature matrix against its targets and returns the feature
/// dimension.
pub(crate) fn check_matrix(x: &[Vec<f64>], y: &[f64], min_rows: usize) -> Result<usize, PredictError> {
    if x.len() != y.len() {
        return Err(PredictError::DimensionMismatch { expected: x.len(), got: y.len() });
    }
    if x.len() < min_rows || x.is_empty() {
        return Err(PredictError::EmptyInput);
    }
    let d = x[0].len();
    for row in x {
        if row.len() != d {
            return Err(PredictError::DimensionMismatch { expected: d, got: row.len() });
        }
    }
    Ok(d)
}

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum KernelSpec {
    /// `gamma = None` resolves to `1 / feature_dim`.
    Rbf { gamma: Option<f64> },
    Linear,
}

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum PredictorSpec {
    Ridge { lambda: f64, encoding: FeatureScheme },
    Svr { c: f64, epsilon: f64, kernel: KernelSpec, encoding: FeatureScheme },
}

impl PredictorSpec {
    pub fn ridge_default() -> Self {
        PredictorSpec::Ridge { lambda: 1.0, encoding: FeatureScheme::OneHot }
    }

    pub fn svr_default() -> Self {
        PredictorSpec::Svr { c: 1.0, epsilon: 0.01, kernel: KernelSpec::Rbf { gamma: None }, encoding: FeatureScheme::OneHot }
    }

    pub fn encoding(&self) -> FeatureScheme {
        match *self {
            PredictorSpec::Ridge { encoding, .. } | PredictorSpec::Svr { encoding, .. } => encoding,
        }
    }

    pub fn family(&self) -> &'static str {
        match self {
            PredictorSpec::Ridge { .. } => "ridge",
            PredictorSpec::Svr { .. } => "svr",
        }
    }
}

impl std::str::FromStr for PredictorSpec {
    type Err = String;

    /// `ridge`, `ridge:<lambda>`, `svr`, `svr:linear`, `svr:rbf`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (family, arg) = s.split_once(':').map_or((s, None), |(a, b)| (a, Some(b)));
        match (family, arg) {
            ("ridge", None) => Ok(Self::ridge_default()),
            ("ridge", Some(l)) => {
                let lambda: f64 = l.parse().map_err(|_| format!("bad lambda `{l}`"))?;
                Ok(PredictorSpec::Ridge { lambda, encoding: FeatureScheme::OneHot })
            }
            ("svr", None) | ("svr", Some("rbf")) => Ok(Self::svr_default()),
            ("svr", Some("linear")) => {
                Ok(PredictorSpec::Svr { c: 1.0, epsilon: 0.01, kernel: KernelSpec::Linear, encoding: FeatureScheme::OneHot })
            }
            _ => Err(format!("unknown predictor `{s}` (expected ridge[:lambda] or svr[:rbf|linear])")),
        }
    }
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(tag = "family", content = "model", rename_all = "snake_case")]
pub enum Model {
    Ridge(RidgeModel),
    /// Trained on standardized targets; `y = offset + scale * f(x)`.
    Svr { svr: SvrModel, offset: f64, scale: f64 },
}

/// A trained predictor for one objective. Immutable once fitted.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct Predictor {
    pub spec: PredictorSpec,
    pub model: Model,
    pub feature_dim: usize,
    pub training_samples: usize,
    /// Hash of the training matrix and targets.
    pub training_fingerprint: String,
}

impl Predictor {
    /// Fits on a prepared feature matrix.
    pub fn fit_features(spec: &PredictorSpec, x: &[Vec<f64>], y: &[f64]) -> Result<Self, PredictError> {
        let d = check_matrix(x, y, 1)?;
        let model = match *spec {
            PredictorSpec::Ridge { lambda, .. } => Model::Ridge(fit_ridge(x, y, lambda)?),
            PredictorSpec::Svr { c, epsilon, kernel, .. } => {
                let kernel = match kernel {
                    KernelSpec::Linear => Kernel::Linear,
                    KernelSpec::Rbf { gamma } => Kernel::Rbf { gamma: gamma.unwrap_or(1.0 / d.max(1) as f64) },
                };
                let n = y.len() as f64;
                let offset = y.iter().sum::<f64>() / n;
                let var = y.iter().map(|v| (v - offset).powi(2)).sum::<f64>() / n;
                let scale = if var > 0.0 { var.sqrt() } else { 1.0 };
                let ys: Vec<f64> = y.iter().map(|v| (v - offset) / scale).collect();
                Model::Svr { svr: fit_svr(x, &ys, c, epsilon, kernel)?, offset, scale }
            }
        };
        Ok(Predictor {
            spec: *spec,
            model,
            feature_dim: d,
            training_samples: x.len(),
            training_fingerprint: fingerprint(x, y),
        })
    }

    /// Encodes genotypes with the spec's scheme, then fits.
    pub fn fit(spec: &PredictorSpec, space: &SearchSpace, genotypes: &[Genotype], y: &[f64]) -> Result<Self, PredictError> {
        let x = encode_all(space, genotypes, spec.encoding())?;
        Self::fit_features(spec, &x, y)
    }

    pub fn predict_one(&self, x: &[f64]) -> Result<f64, PredictError> {
        if x.len() != self.feature_dim {
            return Err(PredictError::DimensionMismatch { expected: self.feature_dim, got: x.len() });
        }
        match &self.model {
            Model::Ridge(m) => m.predict_one(x),
            Model::Svr { svr, offset, scale } => Ok(offset + scale * svr.predict_one(x)?),
        }
    }

    pub fn predict(&self, x: &[Vec<f64>]) -> Result<Vec<f64>, PredictError> {
        x.iter().map(|row| self.predict_one(row)).collect()
    }

    pub fn predict_genotypes(&self, space: &SearchSpace, genotypes: &[Genotype]) -> Result<Vec<f64>, PredictError> {
        self.predict(&encode_all(space, genotypes, self.spec.encoding())?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("predictor serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, PredictError> {
        serde_json::from_str(text).map_err(|e| PredictError::Format(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<(), PredictError> {
        std::fs::write(path, self.to_json()).map_err(|e| PredictError::Io(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, PredictError> {
        let text = std::fs::read_to_string(path).map_err(|e| PredictError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

pub fn encode_all(space: &SearchSpace, genotypes: &[Genotype], scheme: FeatureScheme) -> Result<Vec<Vec<f64>>, PredictError> {
    genotypes
        .iter()
        .map(|g| space.encode_features(g, scheme).map_err(|e| PredictError::Encoding(e.to_string())))
        .collect()
}

fn fingerprint(x: &[Vec<f64>], y: &[f64]) -> String {
    let mut h = stable_hash(&[x.len() as i64], 0);
    for (row, t) in x.iter().zip(y) {
        let mut vals: Vec<i64> = row.iter().map(|v| v.to_bits() as i64).collect();
        vals.push(t.to_bits() as i64);
        h = stable_hash(&vals, h);
    }
    format!("{h:016x}")
}

/// Quality of one training-set size, aggregated over trials.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub n_train: usize,
    pub mape_mean: f64,
    pub mape_std: f64,
    pub tau_mean: f64,
    pub tau_std: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchConfig {
    pub train_sizes: Vec<usize>,
    pub test_size: usize,
    pub trials: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig { train_sizes: (1..=10).map(|k| 100 * k).collect(), test_size: 500, trials: 10, seed: 0 }
    }
}

/// Trial protocol for predictor quality: per trial, draw a fixed test set
/// and a disjoint training pool, fit on growing prefixes of the pool and
/// score MAPE and Kendall tau on the test set.
pub fn benchmark(
    space: &SearchSpace,
    target: &(dyn Fn(&Genotype) -> f64 + Sync),
    spec: &PredictorSpec,
    cfg: &BenchConfig,
) -> Result<Vec<BenchRow>, PredictError> {
    let max_train = cfg.train_sizes.iter().copied().max().ok_or(PredictError::EmptyInput)?;
    let per_trial: Vec<Vec<(f64, f64)>> = (0..cfg.trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed, &format!("bench-trial-{trial}")));
            let pool = space.sample_distinct(cfg.test_size + max_train, &mut rng, &Default::default());
            if pool.len() < cfg.test_size + max_train {
                return Err(PredictError::InvalidHyperparameter(format!(
                    "space has fewer than {} distinct genotypes",
                    cfg.test_size + max_train
                )));
            }
            let (test, train) = pool.split_at(cfg.test_size);
            let x_test = encode_all(space, test, spec.encoding())?;
            let y_test: Vec<f64> = test.iter().map(target).collect();
            let x_train = encode_all(space, train, spec.encoding())?;
            let y_train: Vec<f64> = train.iter().map(target).collect();
            cfg.train_sizes
                .iter()
                .map(|&n| {
                    let p = Predictor::fit_features(spec, &x_train[..n], &y_train[..n])?;
                    let pred = p.predict(&x_test)?;
                    Ok((mape(&y_test, &pred)?, kendall_tau(&y_test, &pred)?))
                })
                .collect()
        })
        .collect::<Result<_, _>>()?;
    Ok(cfg
        .train_sizes
        .iter()
        .enumerate()
        .map(|(k, &n)| {
            let mapes: Vec<f64> = per_trial.iter().map(|t| t[k].0).collect();
            let taus: Vec<f64> = per_trial.iter().map(|t| t[k].1).collect();
            let (mape_mean, mape_std) = mean_std(&mapes);
            let (tau_mean, tau_std) = mean_std(&taus);
            BenchRow { n_train: n, mape_mean, mape_std, tau_mean, tau_std }
        })
        .collect())
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evalmgr::SyntheticSurface;
    use crate::space::presets;

    #[test]
    fn spec_parsing_and_defaults() {
        assert_eq!("ridge".parse::<PredictorSpec>().unwrap(), PredictorSpec::ridge_default());
        assert_eq!(
            "ridge:0.5".parse::<PredictorSpec>().unwrap(),
            PredictorSpec::Ridge { lambda: 0.5, encoding: FeatureScheme::OneHot }
        );
        assert_eq!("svr".parse::<PredictorSpec>().unwrap(), PredictorSpec::svr_default());
        assert!("mlp".parse::<PredictorSpec>().is_err());
    }

    #[test]
    fn default_gamma_is_inverse_dimension() {
        let x: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64 / 10.0, 1.0 - i as f64 / 10.0, 0.5, 0.0]).collect();
        let y: Vec<f64> = (0..10).map(|i| 1.0 + i as f64).collect();
        let p = Predictor::fit_features(&PredictorSpec::svr_default(), &x, &y).unwrap();
        match p.model {
            Model::Svr { svr, .. } => assert_eq!(svr.kernel, Kernel::Rbf { gamma: 0.25 }),
            _ => panic!("expected svr"),
        }
    }

    #[test]
    fn save_load_round_trip() {
        let space = presets::mobilenetv3_like();
        let surface = SyntheticSurface::preset(&space, "clx-like").unwrap();
        let gs = space.sample_uniform(60, 3);
        let y: Vec<f64> = gs.iter().map(|g| surface.accuracy(g)).collect();
        let dir = tempfile::tempdir().unwrap();
        for spec in [PredictorSpec::ridge_default(), PredictorSpec::svr_default()] {
            let p = Predictor::fit(&spec, &space, &gs, &y).unwrap();
            let path = dir.path().join(format!("{}.json", spec.family()));
            p.save(&path).unwrap();
            let back = Predictor::load(&path).unwrap();
            assert_eq!(back, p);
            assert_eq!(back.predict_genotypes(&space, &gs).unwrap(), p.predict_genotypes(&space, &gs).unwrap());
            let doc: serde_json::Value = serde_json::from_str(&p.to_json()).unwrap();
            assert_eq!(doc["spec"]["family"], spec.family());
            assert_eq!(doc["spec"]["encoding"], "one_hot");
            assert_eq!(doc["training_fingerprint"].as_str().unwrap().len(), 16);
        }
    }

    #[test]
    fn fingerprint_tracks_training_data() {
        let x = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]];
        let a = Predictor::fit_features(&PredictorSpec::ridge_default(), &x, &[1.0, 2.0, 3.0]).unwrap();
        let b = Predictor::fit_features(&PredictorSpec::ridge_default(), &x, &[1.0, 2.0, 3.5]).unwrap();
        assert_ne!(a.training_fingerprint, b.training_fingerprint);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let x = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let p = Predictor::fit_features(&PredictorSpec::ridge_default(), &x, &[1.0, 2.0]).unwrap();
        assert_eq!(p.predict_one(&[1.0]), Err(PredictError::DimensionMismatch { expected: 2, got: 1 }));
    }

    #[test]
    fn toy_space_exhaustive_ridge_interpolates() {
        // per-gene additive target on one-hot features is exactly representable
        let space = crate::space::tests::toy_space();
        let mut all = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        while all.len() < 36 {
            all.extend(space.sample_distinct(36 - all.len(), &mut rng, &all.iter().cloned().collect()));
        }
        let target = |g: &Genotype| 10.0 + g.genes().iter().enumerate().map(|(i, v)| (i as f64 + 1.0) * *v as f64).sum::<f64>();
        let y: Vec<f64> = all.iter().map(target).collect();
        let p = Predictor::fit(&PredictorSpec::Ridge { lambda: 1e-9, encoding: FeatureScheme::OneHot }, &space, &all, &y).unwrap();
        for (g, t) in all.iter().zip(&y) {
            assert!((p.predict_genotypes(&space, std::slice::from_ref(g)).unwrap()[0] - t).abs() < 1e-5);
        }
    }

    #[test]
    fn ridge_mape_falls_with_training_size() {
        let space = presets::mobilenetv3_like();
        let surface = SyntheticSurface::preset(&space, "clx-like").unwrap();
        let cfg = BenchConfig { train_sizes: vec![100, 400, 1000], test_size: 500, trials: 3, seed: 5 };
        let rows = benchmark(&space, &|g| surface.accuracy(g), &PredictorSpec::ridge_default(), &cfg).unwrap();
        assert!(rows[1].mape_mean < rows[0].mape_mean * 1.2);
        assert!(rows[2].mape_mean < rows[1].mape_mean * 1.2);
        assert!(rows[2].mape_mean < rows[0].mape_mean);
        assert!(rows[2].tau_mean > 0.5);
    }
}
