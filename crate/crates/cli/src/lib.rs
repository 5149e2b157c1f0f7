//! Run configuration, tactic dispatch and analytics export behind the
//! `subnas` binary.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use subnas_core::driver::{
    self, hypervolume_trace, ConcurrentConfig, DriverError, FullSearchConfig, SearchReport, Surrogate, ValidationSearchConfig,
};
use subnas_core::evalmgr::{EvalError, Evaluator, ExternalEvaluator, ResultStore, Source, SyntheticEvaluator, SyntheticSurface, TableEvaluator};
use subnas_core::evolver::EvolverConfig;
use subnas_core::objectives::{default_objectives, normalize_latency, validate_specs, Direction, LatencyNormalizer, ObjectiveSpec};
use subnas_core::popdb::{constrain_space, run_popdb, ConstraintSet, PopDbConfig, PopDbOutcome};
use subnas_core::predict::{benchmark, BenchConfig, BenchRow, PredictorSpec};
use subnas_core::seed::sub_seed;
use subnas_core::space::{Genotype, SearchSpace};

pub const OUTPUT_DIR_ENV: &str = "SUBNAS_OUTPUT_DIR";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("evaluator error: {0}")]
    Evaluator(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Evaluator(_) => 3,
            CliError::Internal(_) => 4,
        }
    }
}

impl From<DriverError> for CliError {
    fn from(e: DriverError) -> Self {
        match e {
            DriverError::InvalidConfig(m) => CliError::Config(m),
            DriverError::Eval(e) => CliError::Evaluator(e.to_string()),
            DriverError::NoValidations => CliError::Evaluator(e.to_string()),
            other => CliError::Internal(other.to_string()),
        }
    }
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Tactic {
    Full {
        #[serde(default = "default_n_train")]
        n_train: usize,
        #[serde(default = "default_pop")]
        population_size: usize,
        #[serde(default = "default_generations")]
        generations: usize,
    },
    Concurrent {
        #[serde(default = "default_pop")]
        population_size: usize,
        #[serde(default = "default_iterations")]
        iterations: usize,
        #[serde(default = "default_inner_generations")]
        inner_generations: usize,
    },
    /// Every individual is measured; no predictors.
    Validation {
        #[serde(default = "default_pop")]
        population_size: usize,
        #[serde(default = "default_generations")]
        generations: usize,
    },
}

impl Tactic {
    pub fn name(&self) -> &'static str {
        match self {
            Tactic::Full { .. } => "full",
            Tactic::Concurrent { .. } => "concurrent",
            Tactic::Validation { .. } => "validation",
        }
    }
}

fn default_n_train() -> usize {
    1000
}
fn default_pop() -> usize {
    50
}
fn default_generations() -> usize {
    100
}
fn default_iterations() -> usize {
    2
}
fn default_inner_generations() -> usize {
    250
}
fn default_space() -> String {
    "mobilenetv3-like".into()
}
fn default_evaluator() -> String {
    "synthetic:clx-like".into()
}
fn default_stride() -> usize {
    1
}
fn default_jobs() -> usize {
    1
}
fn default_timeout() -> f64 {
    600.0
}
fn default_crossover() -> f64 {
    0.9
}

/// A run description. After [`RunConfig::resolve`] every default is
/// written out, and that form is persisted as `config.json`.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Preset name or path to a space JSON file.
    #[serde(default = "default_space")]
    pub space: String,
    #[serde(default = "default_objectives")]
    pub objectives: Vec<ObjectiveSpec>,
    /// `synthetic:<preset>`, `table:<path>` or `external:<command line>`.
    #[serde(default = "default_evaluator")]
    pub evaluator: String,
    /// Pseudo-noise amplitude for synthetic evaluators.
    #[serde(default)]
    pub noise: f64,
    pub tactic: Tactic,
    #[serde(default = "default_crossover")]
    pub crossover_rate: f64,
    #[serde(default)]
    pub mutation_rate: Option<f64>,
    /// One per objective; empty means the defaults.
    #[serde(default)]
    pub predictors: Vec<PredictorSpec>,
    #[serde(default)]
    pub validation_only: Vec<String>,
    /// Genotype file: JSON list of gene lists, or a `front.csv`.
    #[serde(default)]
    pub warm_start: Option<PathBuf>,
    /// PopDB constraint file applied to the space before searching.
    #[serde(default)]
    pub constraints: Option<PathBuf>,
    #[serde(default)]
    pub reference: Option<Vec<f64>>,
    #[serde(default = "default_stride")]
    pub hv_stride: usize,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_jobs")]
    pub jobs: usize,
    /// Per-response timeout for external evaluators, seconds.
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
}

impl RunConfig {
    pub fn new(tactic: Tactic) -> Self {
        RunConfig {
            space: default_space(),
            objectives: default_objectives(),
            evaluator: default_evaluator(),
            noise: 0.0,
            tactic,
            crossover_rate: default_crossover(),
            mutation_rate: None,
            predictors: Vec::new(),
            validation_only: Vec::new(),
            warm_start: None,
            constraints: None,
            reference: None,
            hv_stride: 1,
            output_dir: None,
            seed: 0,
            jobs: 1,
            timeout_secs: default_timeout(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(format!("line {}, column {}: {e}", e.line(), e.column())))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Fills defaults that depend on other fields and checks consistency.
    pub fn resolve(mut self) -> Result<Self, CliError> {
        validate_specs(&self.objectives).map_err(|e| CliError::Config(e.to_string()))?;
        if self.predictors.is_empty() {
            self.predictors = self.objectives.iter().map(|_| PredictorSpec::ridge_default()).collect();
        }
        if self.predictors.len() != self.objectives.len() {
            return Err(CliError::Config(format!(
                "{} predictors for {} objectives",
                self.predictors.len(),
                self.objectives.len()
            )));
        }
        for name in &self.validation_only {
            if !self.objectives.iter().any(|o| &o.name == name) {
                return Err(CliError::Config(format!("validation-only objective `{name}` is not an objective")));
            }
        }
        if self.output_dir.is_none() {
            self.output_dir = Some(match std::env::var_os(OUTPUT_DIR_ENV) {
                Some(d) => PathBuf::from(d),
                None => PathBuf::from("runs").join(format!("{}-seed{}", self.tactic.name(), self.seed)),
            });
        }
        if self.jobs == 0 {
            return Err(CliError::Config("jobs must be at least 1".into()));
        }
        if !(self.timeout_secs > 0.0) {
            return Err(CliError::Config("timeout_secs must be positive".into()));
        }
        let ok = match self.tactic {
            Tactic::Full { population_size, n_train, .. } => population_size > 0 && n_train > 0,
            Tactic::Concurrent { population_size, iterations, .. } => population_size > 0 && iterations > 0,
            Tactic::Validation { population_size, .. } => population_size > 0,
        };
        if !ok {
            return Err(CliError::Config("population size, iterations and n_train must be positive".into()));
        }
        Ok(self)
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output_dir.clone().unwrap_or_else(|| PathBuf::from("runs"))
    }
}

fn config_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

/// Loads the space and applies the constraint file, if any.
pub fn load_space(cfg: &RunConfig) -> Result<SearchSpace, CliError> {
    let space = SearchSpace::resolve(&cfg.space).map_err(config_err)?;
    match &cfg.constraints {
        None => Ok(space),
        Some(path) => {
            let c = ConstraintSet::load(path).map_err(config_err)?;
            constrain_space(&space, &c).map_err(config_err)
        }
    }
}

/// Builds the evaluator named by `spec`.
pub fn make_evaluator(
    spec: &str,
    space: &SearchSpace,
    specs: &[ObjectiveSpec],
    noise: f64,
    seed: u64,
    jobs: usize,
    timeout: Duration,
) -> Result<Box<dyn Evaluator>, CliError> {
    let (kind, arg) = spec.split_once(':').ok_or_else(|| CliError::Config(format!("evaluator `{spec}` has no `kind:` prefix")))?;
    match kind {
        "synthetic" => {
            let surface = SyntheticSurface::preset(space, arg).map_err(config_err)?.with_noise(sub_seed(seed, "noise"), noise);
            Ok(Box::new(SyntheticEvaluator::new(surface, specs.to_vec(), spec).with_jobs(jobs)))
        }
        "table" => {
            let t = TableEvaluator::load(Path::new(arg), specs.to_vec()).map_err(config_err)?;
            Ok(Box::new(t))
        }
        "external" => {
            let ev = ExternalEvaluator::spawn_command_line(arg, specs.to_vec(), space.name(), timeout)
                .map_err(|e| CliError::Evaluator(e.to_string()))?;
            Ok(Box::new(ev.with_id(spec)))
        }
        other => Err(CliError::Config(format!("unknown evaluator kind `{other}` (expected synthetic, table or external)"))),
    }
}

/// Reads genotypes from a JSON list of gene lists, or from the
/// `genotype_id` column of a front CSV.
pub fn read_genotypes(path: &Path) -> Result<Vec<Vec<i64>>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    if path.extension().is_some_and(|e| e == "csv") {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let headers = r.headers().map_err(config_err)?.clone();
        let col = headers
            .iter()
            .position(|h| h == "genotype_id")
            .ok_or_else(|| CliError::Config(format!("{}: no genotype_id column", path.display())))?;
        let mut out = Vec::new();
        for row in r.records() {
            let row = row.map_err(config_err)?;
            let g = Genotype::parse_id(&row[col]).ok_or_else(|| CliError::Config(format!("{}: bad genotype id `{}`", path.display(), &row[col])))?;
            out.push(g.into_genes());
        }
        Ok(out)
    } else {
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub report: SearchReport,
    pub seconds: f64,
}

impl RunOutcome {
    pub fn summary_line(&self) -> String {
        format!(
            "tactic={} front={} validations={} failures={} hv={} elapsed={:.2}s dir={}",
            self.report.tactic,
            self.report.validated_front.len(),
            self.report.validation_count,
            self.report.failure_count,
            self.report.final_hypervolume().map_or("n/a".to_string(), |h| format!("{h:.6}")),
            self.seconds,
            self.dir.display()
        )
    }
}

/// Executes a resolved configuration and writes its artifacts.
pub fn run(cfg: &RunConfig) -> Result<RunOutcome, CliError> {
    let cfg = cfg.clone().resolve()?;
    let start = Instant::now();
    let space = load_space(&cfg)?;
    let warm_start = cfg.warm_start.as_deref().map(read_genotypes).transpose()?;
    let timeout = Duration::from_secs_f64(cfg.timeout_secs);
    let mut evaluator = make_evaluator(&cfg.evaluator, &space, &cfg.objectives, cfg.noise, cfg.seed, cfg.jobs, timeout)?;
    let mut store = ResultStore::in_memory(cfg.objectives.clone());
    let surrogates: Vec<Surrogate> = cfg.predictors.iter().cloned().map(Surrogate::Trained).collect();
    let evolver = |population_size: usize, generations: usize| EvolverConfig {
        population_size,
        generations,
        crossover_rate: cfg.crossover_rate,
        mutation_rate: cfg.mutation_rate,
        ..EvolverConfig::default()
    };
    let report = match cfg.tactic {
        Tactic::Full { n_train, population_size, generations } => driver::full_search(
            &space,
            evaluator.as_mut(),
            &mut store,
            &FullSearchConfig {
                n_train,
                evolver: evolver(population_size, generations),
                surrogates,
                validation_only: cfg.validation_only.clone(),
                warm_start,
                reference: cfg.reference.clone(),
                hv_stride: cfg.hv_stride,
                seed: cfg.seed,
            },
        )?,
        Tactic::Concurrent { population_size, iterations, inner_generations } => driver::concurrent_search(
            &space,
            evaluator.as_mut(),
            &mut store,
            &ConcurrentConfig {
                population_size,
                iterations,
                inner_generations,
                crossover_rate: cfg.crossover_rate,
                mutation_rate: cfg.mutation_rate,
                surrogates,
                validation_only: cfg.validation_only.clone(),
                warm_start,
                reference: cfg.reference.clone(),
                hv_stride: cfg.hv_stride,
                seed: cfg.seed,
            },
        )?,
        Tactic::Validation { population_size, generations } => driver::validation_search(
            &space,
            evaluator.as_mut(),
            &mut store,
            &ValidationSearchConfig {
                evolver: evolver(population_size, generations),
                warm_start,
                reference: cfg.reference.clone(),
                hv_stride: cfg.hv_stride,
                seed: cfg.seed,
            },
        )?,
    };
    drop(evaluator);
    let dir = cfg.output_dir();
    let config_json = serde_json::to_value(&cfg).map_err(|e| CliError::Internal(e.to_string()))?;
    driver::write_report(&dir, &report, &store, &config_json)?;
    Ok(RunOutcome { dir, report, seconds: start.elapsed().as_secs_f64() })
}

fn read_artifact(dir: &Path, name: &str) -> Result<String, CliError> {
    let path = dir.join(name);
    std::fs::read_to_string(&path).map_err(|e| CliError::Config(format!("missing or unreadable artifact {}: {e}", path.display())))
}

/// Index of the latency-like objective: the first name containing
/// `latency`, else the last minimized objective.
pub fn latency_objective(specs: &[ObjectiveSpec]) -> Option<usize> {
    specs
        .iter()
        .position(|s| s.name.contains("latency"))
        .or_else(|| specs.iter().rposition(|s| s.direction == Direction::Minimize))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisOutcome {
    pub dir: PathBuf,
    pub files: Vec<PathBuf>,
}

/// Plot-ready exports under `<run>/analysis/`. Run artifacts are only
/// read; nothing is written until every input has been loaded.
pub fn analyze(run_dir: &Path) -> Result<AnalysisOutcome, CliError> {
    let config = RunConfig::from_json(&read_artifact(run_dir, "config.json")?)?;
    let evals = read_artifact(run_dir, "evals.jsonl")?;
    let summary: serde_json::Value = serde_json::from_str(&read_artifact(run_dir, "summary.json")?).map_err(config_err)?;
    let store = ResultStore::from_jsonl(&evals, config.objectives.clone()).map_err(config_err)?;
    let specs = store.specs().to_vec();
    if store.validation_count() == 0 {
        return Err(CliError::Config(format!("{} holds no validation records", run_dir.join("evals.jsonl").display())));
    }
    let reference: Option<Vec<f64>> = serde_json::from_value(summary["reference"].clone()).map_err(config_err)?;

    let validated: Vec<(usize, &subnas_core::evalmgr::EvaluationRecord)> =
        store.records().iter().enumerate().filter(|(_, r)| r.source == Source::Validation).collect();
    let lat = latency_objective(&specs);
    let normalizer = match lat {
        Some(j) => Some(
            LatencyNormalizer::observed(&validated.iter().map(|(_, r)| r.objectives.values()[j]).collect::<Vec<_>>())
                .map_err(config_err)?,
        ),
        None => None,
    };
    let records: Vec<subnas_core::evalmgr::EvaluationRecord> = validated.iter().map(|(_, r)| (*r).clone()).collect();
    let front = subnas_core::objectives::pareto_front(&records).map_err(|e| CliError::Internal(e.to_string()))?;
    let trace = match &reference {
        Some(r) if r.len() == 2 => Some(hypervolume_trace(&store, r, config.hv_stride)?),
        _ => None,
    };

    let out = run_dir.join("analysis");
    let io = |e: std::io::Error| CliError::Internal(format!("{}: {e}", out.display()));
    std::fs::create_dir_all(out.join("populations")).map_err(io)?;
    let mut files = Vec::new();
    let csv_err = |e: csv::Error| CliError::Internal(e.to_string());

    let path = out.join("front_normalized.csv");
    let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
    let mut header = vec!["genotype_id".to_string()];
    header.extend(specs.iter().map(|s| s.name.clone()));
    if let Some(j) = lat {
        header.push(format!("{}_normalized", specs[j].name));
    }
    w.write_record(&header).map_err(csv_err)?;
    for m in &front.members {
        let mut row = vec![m.genotype.id()];
        row.extend(m.objectives.values().iter().map(|v| v.to_string()));
        if let (Some(j), Some(n)) = (lat, &normalizer) {
            let v = normalize_latency(m.objectives.values()[j], n).map_err(|e| CliError::Internal(e.to_string()))?;
            row.push(v.to_string());
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(io)?;
    files.push(path);

    if let Some(t) = &trace {
        let path = out.join("hv_trace.csv");
        driver::write_hv_csv(&path, t)?;
        files.push(path);
    }

    let mut by_gen: BTreeMap<u32, Vec<&subnas_core::evalmgr::EvaluationRecord>> = BTreeMap::new();
    for (idx, r) in &validated {
        by_gen.entry(store.generation_of(*idx)).or_default().push(r);
    }
    for (gen, rows) in &by_gen {
        let path = out.join("populations").join(format!("gen_{gen:04}.csv"));
        let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
        let mut header = vec!["genotype_id".to_string()];
        header.extend(specs.iter().map(|s| s.name.clone()));
        w.write_record(&header).map_err(csv_err)?;
        for r in rows {
            let mut row = vec![r.genotype.id()];
            row.extend(r.objectives.values().iter().map(|v| v.to_string()));
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush().map_err(io)?;
        files.push(path);
    }

    let mut text = String::new();
    text.push_str(&format!("tactic: {}\n", config.tactic.name()));
    text.push_str(&format!("validations: {}\n", store.validation_count()));
    text.push_str(&format!("predicted records: {}\n", store.len() - store.validation_count()));
    text.push_str(&format!("failures: {}\n", store.failures().len()));
    text.push_str(&format!("front size: {}\n", front.len()));
    text.push_str(&format!("generations: {}\n", by_gen.len()));
    if let Some(t) = &trace {
        if let Some(&(k, hv)) = t.last() {
            text.push_str(&format!("final hypervolume: {hv} after {k} validations\n"));
        }
    }
    if let Some(n) = &normalizer {
        text.push_str(&format!("latency bounds: l_min={} l_max={}\n", n.l_min, n.l_max));
    }
    for (j, s) in specs.iter().enumerate() {
        let v: Vec<f64> = validated.iter().map(|(_, r)| r.objectives.values()[j]).collect();
        let st = describe(&v);
        text.push_str(&format!(
            "{}: n={} mean={} std={} min={} median={} max={}\n",
            s.name, st.n, st.mean, st.std, st.min, st.median, st.max
        ));
    }
    let path = out.join("summary.txt");
    std::fs::write(&path, text).map_err(io)?;
    files.push(path);
    Ok(AnalysisOutcome { dir: out, files })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Describe {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation; zero for one value.
    pub std: f64,
    pub min: f64,
    pub median: f64,
    pub max: f64,
}

pub fn describe(v: &[f64]) -> Describe {
    let n = v.len();
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let mean = s.iter().sum::<f64>() / n as f64;
    let var = if n > 1 { s.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64 } else { 0.0 };
    let median = if n % 2 == 1 { s[n / 2] } else { 0.5 * (s[n / 2 - 1] + s[n / 2]) };
    Describe { n, mean, std: var.sqrt(), min: s[0], median, max: s[n - 1] }
}

#[derive(Debug, Clone)]
pub struct PopDbArgs {
    pub history: PathBuf,
    /// Defaults to the `space` of the run's `config.json`.
    pub space: Option<String>,
    pub objectives: Option<Vec<ObjectiveSpec>>,
    pub include_predicted: bool,
    pub config: PopDbConfig,
    pub out: Option<PathBuf>,
}

/// Builds a constraint file from a run's evaluation log.
pub fn popdb(args: &PopDbArgs) -> Result<(PathBuf, PopDbOutcome, SearchSpace), CliError> {
    let run_dir = args.history.parent().unwrap_or(Path::new("."));
    let run_cfg = std::fs::read_to_string(run_dir.join("config.json")).ok().and_then(|t| RunConfig::from_json(&t).ok());
    let space_name = args
        .space
        .clone()
        .or_else(|| run_cfg.as_ref().map(|c| c.space.clone()))
        .ok_or_else(|| CliError::Config("no --space given and no config.json next to the history".into()))?;
    let space = SearchSpace::resolve(&space_name).map_err(config_err)?;
    let specs = args
        .objectives
        .clone()
        .or_else(|| run_cfg.as_ref().map(|c| c.objectives.clone()))
        .unwrap_or_else(default_objectives);
    let text = std::fs::read_to_string(&args.history).map_err(|e| CliError::Config(format!("{}: {e}", args.history.display())))?;
    let store = ResultStore::from_jsonl(&text, specs).map_err(config_err)?;
    let picked: Vec<_> = store.records().iter().filter(|r| args.include_predicted || r.source == Source::Validation).collect();
    let genotypes: Vec<Genotype> = picked.iter().map(|r| r.genotype.clone()).collect();
    let objectives: Vec<Vec<f64>> = picked.iter().map(|r| r.objectives.canonical().to_vec()).collect();
    let outcome = run_popdb(&space, &genotypes, Some(&objectives), &args.config, &args.history.display().to_string())
        .map_err(|e| CliError::Internal(e.to_string()))?;
    let out = args.out.clone().unwrap_or_else(|| run_dir.join("constraints.json"));
    outcome.constraints.save(&out).map_err(|e| CliError::Internal(e.to_string()))?;
    Ok((out, outcome, space))
}

#[derive(Debug, Clone)]
pub struct BenchArgs {
    pub space: String,
    pub surface: String,
    pub objective: String,
    pub predictor: PredictorSpec,
    pub config: BenchConfig,
}

/// Predictor-quality protocol against a synthetic surface.
pub fn bench(args: &BenchArgs) -> Result<Vec<BenchRow>, CliError> {
    let space = SearchSpace::resolve(&args.space).map_err(config_err)?;
    let surface = SyntheticSurface::preset(&space, &args.surface).map_err(config_err)?;
    let target: Box<dyn Fn(&Genotype) -> f64 + Sync> = match args.objective.as_str() {
        "top1" | "accuracy" => Box::new(|g: &Genotype| surface.accuracy(g)),
        "latency_ms" | "latency" => Box::new(|g: &Genotype| surface.latency(g)),
        other => return Err(CliError::Config(format!("unknown objective `{other}` (expected top1 or latency_ms)"))),
    };
    benchmark(&space, target.as_ref(), &args.predictor, &args.config).map_err(|e| CliError::Internal(e.to_string()))
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut s = String::from("n_train,mape_mean,mape_std,tau_mean,tau_std\n");
    for r in rows {
        s.push_str(&format!("{},{},{},{},{}\n", r.n_train, r.mape_mean, r.mape_std, r.tau_mean, r.tau_std));
    }
    s
}

/// Human-readable space description.
pub fn space_info(space: &SearchSpace) -> String {
    let mut s = format!("space: {}\ngenome length: {}\ncardinality: {}\n", space.name(), space.genome_len(), space.cardinality());
    let mut gene = 0;
    for p in space.params() {
        s.push_str(&format!(
            "  genes {}..{} {} ({}) values {:?}\n",
            gene,
            gene + p.position_count,
            p.name,
            p.role,
            p.allowed_values
        ));
        gene += p.position_count;
    }
    for (b, rule) in space.blocks().iter().enumerate() {
        s.push_str(&format!("  block {b}: depth gene {}, {} layer slots\n", rule.depth_gene, rule.max_layers));
    }
    s
}

/// Maps evaluator errors surfaced before a run starts.
pub fn evaluator_error(e: EvalError) -> CliError {
    CliError::Evaluator(e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resolve_materializes_defaults() {
        let cfg = RunConfig::from_json(r#"{"tactic":{"kind":"concurrent"},"seed":3,"output_dir":"x"}"#).unwrap().resolve().unwrap();
        assert_eq!(cfg.predictors.len(), 2);
        assert_eq!(cfg.tactic, Tactic::Concurrent { population_size: 50, iterations: 2, inner_generations: 250 });
        let again = RunConfig::from_json(&serde_json::to_string(&cfg).unwrap()).unwrap().resolve().unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn schema_errors_name_the_field() {
        let e = RunConfig::from_json(r#"{"tactic":{"kind":"full"},"sed":3}"#).unwrap_err();
        assert!(e.to_string().contains("sed"), "{e}");
        assert_eq!(e.exit_code(), 2);
        let e = RunConfig::from_json("{\n\"tactic\": {\"kind\": \"full\", \"n_train\": \"x\"}}").unwrap_err();
        assert!(e.to_string().contains("line 2"), "{e}");
    }

    #[test]
    fn bad_validation_only_name_is_rejected() {
        let mut cfg = RunConfig::new(Tactic::Full { n_train: 100, population_size: 10, generations: 1 });
        cfg.validation_only = vec!["bleu".into()];
        assert!(matches!(cfg.resolve(), Err(CliError::Config(_))));
    }

    #[test]
    fn describe_matches_hand_values() {
        let d = describe(&[4.0, 1.0, 3.0, 2.0]);
        assert_eq!((d.n, d.mean, d.min, d.median, d.max), (4, 2.5, 1.0, 2.5, 4.0));
        assert!((d.std - (5.0f64 / 3.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn latency_objective_lookup() {
        assert_eq!(latency_objective(&default_objectives()), Some(1));
        let specs = vec![ObjectiveSpec::maximize("bleu"), ObjectiveSpec::minimize("flops")];
        assert_eq!(latency_objective(&specs), Some(1));
        assert_eq!(latency_objective(&[ObjectiveSpec::maximize("bleu")]), None);
    }

    #[test]
    fn unknown_evaluator_kind_is_a_config_error() {
        let space = subnas_core::space::presets::mobilenetv3_like();
        let e = make_evaluator("gpu:foo", &space, &default_objectives(), 0.0, 0, 1, Duration::from_secs(1)).err().unwrap();
        assert_eq!(e.exit_code(), 2);
        let e = make_evaluator("external:/no/such/binary", &space, &default_objectives(), 0.0, 0, 1, Duration::from_secs(1)).err().unwrap();
        assert_eq!(e.exit_code(), 3);
    }
}
