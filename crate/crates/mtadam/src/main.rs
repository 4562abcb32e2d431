use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mtadam::error::Error;
use mtadam::harness::{
    run_ablation_suite, run_experiment, run_lambda_search, run_repeated, ExperimentConfig,
};
use mtadam::search::SearchSpec;

#[derive(Parser)]
#[command(
    name = "mtadam",
    version,
    about = "Multi-term optimizer experiments: MTAdam vs Adam/RMSProp/SGD baselines"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a single training experiment.
    Train(RunArgs),
    /// Run the same experiment across consecutive seeds and aggregate.
    Repeat {
        #[command(flatten)]
        args: RunArgs,
        /// Number of seeds (base seed, base+1, ...).
        #[arg(long, default_value_t = 5)]
        seeds: usize,
    },
    /// Run all six MTAdam variants on the same task and seeds.
    Ablate {
        #[command(flatten)]
        args: RunArgs,
        #[arg(long, default_value_t = 5)]
        seeds: usize,
    },
    /// Successive-halving search over the non-anchor loss weight lambda.
    Search {
        #[command(flatten)]
        args: RunArgs,
        #[arg(long, default_value_t = 16)]
        n_trials: usize,
        /// Comma-separated epoch budgets per rung, strictly increasing.
        #[arg(long, default_value = "1,2,4")]
        rungs: String,
        /// Sampling range `low,high`, log-uniform.
        #[arg(long, default_value = "1e-4,1e4")]
        lambda_range: String,
        /// Seed for the lambda sampler (defaults to the experiment seed).
        #[arg(long)]
        search_seed: Option<u64>,
        /// error_rate | validation_loss
        #[arg(long, default_value = "error_rate")]
        metric: String,
    },
}

/// Flags mirror the config-file keys; `--config` loads a file first and
/// explicit flags override it.
#[derive(Args)]
struct RunArgs {
    /// Flat key=value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// mnist | synthetic
    #[arg(long)]
    task: Option<String>,
    /// mtadam | adam | rmsprop | sgd_momentum
    #[arg(long)]
    optimizer: Option<String>,
    /// full | no_layer_norm | global_norm | no_anchor_scale |
    /// per_term_variance | mean_variance
    #[arg(long)]
    variant: Option<String>,
    /// balanced | unbalanced | w1,w2,...
    #[arg(long)]
    weighting: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    init_seed: Option<u64>,
    #[arg(long)]
    shuffle_seed: Option<u64>,
    #[arg(long)]
    weight_seed: Option<u64>,
    /// Directory containing the MNIST IDX files.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Directory for CSV records and JSON summaries.
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Comma-separated hidden layer sizes, e.g. 128,64.
    #[arg(long)]
    hidden_sizes: Option<String>,
    /// relu | tanh
    #[arg(long)]
    activation: Option<String>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta1: Option<f64>,
    #[arg(long)]
    beta2: Option<f64>,
    #[arg(long)]
    beta3: Option<f64>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    eps_norm: Option<f64>,
    /// Index of the anchor loss term.
    #[arg(long)]
    anchor: Option<usize>,
    #[arg(long)]
    smoothing: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    synthetic_terms: Option<usize>,
    #[arg(long)]
    synthetic_dims: Option<usize>,
    #[arg(long)]
    synthetic_steps: Option<usize>,
    /// Curvature range `low,high` for the synthetic quadratics.
    #[arg(long)]
    synthetic_condition: Option<String>,
}

impl RunArgs {
    fn build_config(&self) -> Result<ExperimentConfig, Error> {
        let mut cfg = ExperimentConfig::default();
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
                path: path.clone(),
                source: e,
            })?;
            cfg.apply_config_text(&text)?;
        }
        let overrides: Vec<(&str, Option<String>)> = vec![
            ("task", self.task.clone()),
            ("optimizer", self.optimizer.clone()),
            ("variant", self.variant.clone()),
            ("weighting", self.weighting.clone()),
            ("epochs", self.epochs.map(|v| v.to_string())),
            ("batch_size", self.batch_size.map(|v| v.to_string())),
            ("seed", self.seed.map(|v| v.to_string())),
            ("init_seed", self.init_seed.map(|v| v.to_string())),
            ("shuffle_seed", self.shuffle_seed.map(|v| v.to_string())),
            ("weight_seed", self.weight_seed.map(|v| v.to_string())),
            (
                "data_dir",
                self.data_dir.as_ref().map(|p| p.display().to_string()),
            ),
            (
                "output_dir",
                self.output_dir.as_ref().map(|p| p.display().to_string()),
            ),
            ("hidden_sizes", self.hidden_sizes.clone()),
            ("activation", self.activation.clone()),
            ("alpha", self.alpha.map(|v| v.to_string())),
            ("beta1", self.beta1.map(|v| v.to_string())),
            ("beta2", self.beta2.map(|v| v.to_string())),
            ("beta3", self.beta3.map(|v| v.to_string())),
            ("eps", self.eps.map(|v| v.to_string())),
            ("eps_norm", self.eps_norm.map(|v| v.to_string())),
            ("anchor", self.anchor.map(|v| v.to_string())),
            ("smoothing", self.smoothing.map(|v| v.to_string())),
            ("momentum", self.momentum.map(|v| v.to_string())),
            (
                "synthetic_terms",
                self.synthetic_terms.map(|v| v.to_string()),
            ),
            ("synthetic_dims", self.synthetic_dims.map(|v| v.to_string())),
            (
                "synthetic_steps",
                self.synthetic_steps.map(|v| v.to_string()),
            ),
            ("synthetic_condition", self.synthetic_condition.clone()),
        ];
        for (key, value) in overrides {
            if let Some(v) = value {
                cfg.apply_key(key, &v)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Diverged { .. } | Error::AllTrialsFailed(_) => 2,
        Error::Io { .. } | Error::IdxFormat { .. } | Error::Checkpoint(_) => 3,
        _ => 1,
    }
}

fn run(cli: Cli) -> Result<u8, Error> {
    match cli.command {
        Command::Train(args) => {
            let cfg = args.build_config()?;
            let outcome = run_experiment(&cfg)?;
            println!(
                "task={} optimizer={} weighting={} seed={}",
                cfg.task, cfg.optimizer, cfg.weighting, cfg.seed
            );
            println!("term weights: {:?}", outcome.term_weights);
            for (epoch, metric) in outcome.epoch_metrics.iter().enumerate() {
                println!("epoch {epoch}: test metric {metric:.4}");
            }
            if outcome.diverged {
                println!(
                    "run diverged after {} steps; last records retained",
                    outcome.steps_taken
                );
                return Ok(2);
            }
            println!(
                "final metric {:.4} after {} steps in {:.1}s",
                outcome.final_metric, outcome.steps_taken, outcome.elapsed_secs
            );
            Ok(0)
        }
        Command::Repeat { args, seeds } => {
            let cfg = args.build_config()?;
            let summary = run_repeated(&cfg, seeds)?;
            for (seed, metric) in &summary.per_seed {
                match metric {
                    Some(m) => println!("seed {seed}: {m:.4}"),
                    None => println!("seed {seed}: diverged"),
                }
            }
            println!(
                "mean {:.4} +- {:.4} over {} seeds ({} diverged)",
                summary.mean,
                summary.sd,
                seeds,
                summary.diverged_count
            );
            Ok(0)
        }
        Command::Ablate { args, seeds } => {
            let cfg = args.build_config()?;
            let table = run_ablation_suite(&cfg, seeds)?;
            println!("{:<20} {:>10} {:>10}", "variant", "mean", "sd");
            for (variant, summary) in &table {
                println!(
                    "{:<20} {:>10.4} {:>10.4}",
                    variant.to_string(),
                    summary.mean,
                    summary.sd
                );
            }
            Ok(0)
        }
        Command::Search {
            args,
            n_trials,
            rungs,
            lambda_range,
            search_seed,
            metric,
        } => {
            let cfg = args.build_config()?;
            let rung_budgets: Result<Vec<usize>, _> =
                rungs.split(',').map(|p| p.trim().parse()).collect();
            let rung_budgets = rung_budgets
                .map_err(|_| Error::InvalidConfig(format!("bad rungs '{rungs}'")))?;
            let parts: Vec<&str> = lambda_range.split(',').map(str::trim).collect();
            if parts.len() != 2 {
                return Err(Error::InvalidConfig(format!(
                    "bad lambda range '{lambda_range}'"
                )));
            }
            let lo: f64 = parts[0]
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("bad lambda '{}'", parts[0])))?;
            let hi: f64 = parts[1]
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("bad lambda '{}'", parts[1])))?;
            let spec = SearchSpec {
                lambda_range: (lo, hi),
                n_trials,
                rung_budgets,
                metric: metric.parse()?,
                seed: search_seed.unwrap_or(cfg.seed),
            };
            let outcome = run_lambda_search(&cfg, &spec)?;
            println!("{:<12} {:>12} {:>12} {:>6}", "lambda", "final", "eliminated", "fail");
            for t in &outcome.trials {
                let last = t
                    .rung_metrics
                    .iter()
                    .rev()
                    .find_map(|m| *m)
                    .map(|m| format!("{m:.5}"))
                    .unwrap_or_default();
                println!(
                    "{:<12.5e} {:>12} {:>12} {:>6}",
                    t.lambda,
                    last,
                    t.eliminated_at
                        .map(|r| format!("rung {r}"))
                        .unwrap_or_else(|| "-".into()),
                    t.failed
                );
            }
            println!(
                "best lambda {:.6e} (metric {:.6}); total budget {} epochs",
                outcome.best_lambda, outcome.best_metric, outcome.total_budget
            );
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
