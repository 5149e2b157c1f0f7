use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use subnas_cli::{analyze, bench, bench_csv, popdb, run, space_info, BenchArgs, CliError, PopDbArgs, RunConfig, Tactic};
use subnas_core::popdb::PopDbConfig;
use subnas_core::predict::{BenchConfig, PredictorSpec};
use subnas_core::space::SearchSpace;

#[derive(Parser)]
#[command(name = "subnas", version, about = "Multi-objective sub-network search over elastic super-network spaces")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a search tactic.
    #[command(subcommand)]
    Search(SearchCmd),
    /// Run from a JSON configuration file (e.g. a saved config.json).
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the configured output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build a constrained space from a search history.
    Popdb {
        /// An evals.jsonl file.
        #[arg(long)]
        history: PathBuf,
        #[arg(long)]
        space: Option<String>,
        #[arg(long, default_value_t = 0.01)]
        threshold: f64,
        #[arg(long, default_value_t = 50)]
        min_cluster_size: usize,
        #[arg(long, default_value_t = 10)]
        min_samples: usize,
        #[arg(long, default_value_t = 20_000)]
        max_points: usize,
        /// Cluster on genotype plus normalized objectives.
        #[arg(long)]
        joint: bool,
        /// Only use validated records.
        #[arg(long)]
        validated_only: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Defaults to constraints.json next to the history.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Predictor utilities.
    #[command(subcommand)]
    Predict(PredictCmd),
    /// Write plot-ready exports for a run directory.
    Analyze { dir: PathBuf },
    /// Space utilities.
    #[command(subcommand)]
    Space(SpaceCmd),
}

#[derive(Subcommand)]
enum SearchCmd {
    /// Train predictors on a sample, then search against them.
    Full {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1000)]
        n_train: usize,
        #[arg(long, default_value_t = 50)]
        pop: usize,
        #[arg(long, default_value_t = 100)]
        generations: usize,
        /// Measure every individual; no predictors.
        #[arg(long)]
        validation_only: bool,
    },
    /// ConcurrentNAS: alternate validation and predictor-backed search.
    Concurrent {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 50)]
        pop: usize,
        #[arg(long, default_value_t = 2)]
        iters: usize,
        #[arg(long, default_value_t = 250)]
        inner_generations: usize,
        /// Objectives measured instead of predicted in the inner search.
        #[arg(long, value_delimiter = ',')]
        measure: Vec<String>,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long, default_value = "mobilenetv3-like")]
    space: String,
    /// synthetic:<preset>, table:<path> or external:<command>
    #[arg(long, default_value = "synthetic:clx-like")]
    evaluator: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Predictor per objective, e.g. `ridge,svr`.
    #[arg(long, value_delimiter = ',')]
    predictors: Vec<PredictorSpec>,
    #[arg(long)]
    warm_start: Option<PathBuf>,
    /// PopDB constraint file.
    #[arg(long)]
    constraints: Option<PathBuf>,
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 1)]
    hv_stride: usize,
    /// Caps evaluation fan-out.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long, default_value_t = 600.0)]
    timeout: f64,
    /// Output directory; falls back to $SUBNAS_OUTPUT_DIR.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum PredictCmd {
    /// MAPE and Kendall tau versus training-set size.
    Bench {
        #[arg(long, default_value = "mobilenetv3-like")]
        space: String,
        #[arg(long, default_value = "clx-like")]
        surface: String,
        #[arg(long, default_value = "top1")]
        objective: String,
        #[arg(long, default_value = "ridge")]
        predictor: PredictorSpec,
        #[arg(long, default_value_t = 10)]
        trials: usize,
        #[arg(long, default_value_t = 500)]
        test_size: usize,
        #[arg(long, value_delimiter = ',', default_value = "100,200,300,400,500,600,700,800,900,1000")]
        train_sizes: Vec<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Subcommand)]
enum SpaceCmd {
    /// Cardinality and genome layout.
    Info {
        #[arg(long, default_value = "mobilenetv3-like")]
        space: String,
    },
}

fn apply_common(mut cfg: RunConfig, c: Common) -> RunConfig {
    cfg.space = c.space;
    cfg.evaluator = c.evaluator;
    cfg.seed = c.seed;
    cfg.predictors = c.predictors;
    cfg.warm_start = c.warm_start;
    cfg.constraints = c.constraints;
    cfg.noise = c.noise;
    cfg.hv_stride = c.hv_stride;
    cfg.jobs = c.jobs;
    cfg.timeout_secs = c.timeout;
    cfg.output_dir = c.out;
    cfg
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Search(SearchCmd::Full { common, n_train, pop, generations, validation_only }) => {
            let tactic = if validation_only {
                Tactic::Validation { population_size: pop, generations }
            } else {
                Tactic::Full { n_train, population_size: pop, generations }
            };
            let out = run(&apply_common(RunConfig::new(tactic), common))?;
            println!("{}", out.summary_line());
        }
        Command::Search(SearchCmd::Concurrent { common, pop, iters, inner_generations, measure }) => {
            let mut cfg = apply_common(
                RunConfig::new(Tactic::Concurrent { population_size: pop, iterations: iters, inner_generations }),
                common,
            );
            cfg.validation_only = measure;
            let out = run(&cfg)?;
            println!("{}", out.summary_line());
        }
        Command::Run { config, out } => {
            let mut cfg = RunConfig::load(&config)?;
            if out.is_some() {
                cfg.output_dir = out;
            }
            let out = run(&cfg)?;
            println!("{}", out.summary_line());
        }
        Command::Popdb { history, space, threshold, min_cluster_size, min_samples, max_points, joint, validated_only, seed, out } => {
            let args = PopDbArgs {
                history,
                space,
                objectives: None,
                include_predicted: !validated_only,
                config: PopDbConfig { min_cluster_size, min_samples, threshold, max_points, joint, seed },
                out,
            };
            let (path, outcome, space) = popdb(&args)?;
            let reduced = subnas_core::popdb::constrain_space(&space, &outcome.constraints).map_err(|e| CliError::Internal(e.to_string()))?;
            println!(
                "clusters={} noise={} points={} cardinality {} -> {} constraints={}",
                outcome.labeling.cluster_count(),
                outcome.labeling.noise_count(),
                outcome.used.len(),
                space.cardinality(),
                reduced.cardinality(),
                path.display()
            );
            for e in &outcome.constraints.eliminations {
                println!(
                    "  {}: {} of {} values eliminated, {} of {} positions constrained",
                    e.role, e.values_eliminated, e.values_total, e.positions_constrained, e.positions_total
                );
            }
        }
        Command::Predict(PredictCmd::Bench { space, surface, objective, predictor, trials, test_size, train_sizes, seed }) => {
            let rows = bench(&BenchArgs {
                space,
                surface,
                objective,
                predictor,
                config: BenchConfig { train_sizes, test_size, trials, seed },
            })?;
            print!("{}", bench_csv(&rows));
        }
        Command::Analyze { dir } => {
            let out = analyze(&dir)?;
            for f in &out.files {
                println!("{}", f.display());
            }
        }
        Command::Space(SpaceCmd::Info { space }) => {
            let s = SearchSpace::resolve(&space).map_err(|e| CliError::Config(e.to_string()))?;
            print!("{}", space_info(&s));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
