//! Deterministic training runs and their aggregation.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::json;

use crate::data::{load_mnist_pair, make_unbalanced_quadratics, Dataset, Split};
use crate::error::{Error, Result};
use crate::harness::record::{RecordRow, RunRecord};
use crate::harness::{ExperimentConfig, OptimizerKind, TaskKind, WeightingKind};
use crate::model::{
    accuracy, evaluate_batch, forward, init_weights, mean_cross_entropy, MlpSpec, TermWeights,
};
use crate::optim::{
    adam_step, mtadam_step, rmsprop_step, sgd_momentum_step, AdamState, MtAdamState,
    MtAdamVariant, ParameterGroups, RmsPropState, SgdMomentumState, TermGradients,
};
use crate::search::{successive_halving, SearchMetric, SearchOutcome, SearchSpec};

/// Everything one run produces.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub record: RunRecord,
    /// Test accuracy in percent for mnist; unweighted total loss for the
    /// synthetic task.
    pub final_metric: f64,
    /// Mean test cross-entropy (mnist) or unweighted total loss
    /// (synthetic) at the final epoch; absent when diverged.
    pub final_test_loss: Option<f64>,
    pub epoch_metrics: Vec<f64>,
    pub diverged: bool,
    pub steps_taken: u64,
    pub term_weights: Vec<f64>,
    pub elapsed_secs: f64,
}

enum OptimizerDriver {
    MtAdam(MtAdamState),
    Adam(AdamState),
    RmsProp(RmsPropState),
    SgdMomentum(SgdMomentumState),
}

impl OptimizerDriver {
    fn new(kind: OptimizerKind, num_terms: usize, params: &ParameterGroups) -> Result<Self> {
        let layout = params.layout();
        Ok(match kind {
            OptimizerKind::MtAdam => OptimizerDriver::MtAdam(MtAdamState::new(num_terms, &layout)?),
            OptimizerKind::Adam => OptimizerDriver::Adam(AdamState::new(&layout)),
            OptimizerKind::RmsProp => OptimizerDriver::RmsProp(RmsPropState::new(&layout)),
            OptimizerKind::SgdMomentum => {
                OptimizerDriver::SgdMomentum(SgdMomentumState::new(&layout))
            }
        })
    }

    /// Applies one step; returns MTAdam diagnostics when available.
    fn step(
        &mut self,
        params: &mut ParameterGroups,
        grads: TermGradients,
        cfg: &ExperimentConfig,
    ) -> Result<Option<crate::optim::StepDiagnostics>> {
        match self {
            OptimizerDriver::MtAdam(state) => {
                let diag = mtadam_step(params, grads, state, &cfg.optim)?;
                Ok(Some(diag))
            }
            driver => {
                // single-objective baselines act on the summed gradient
                let layout = params.layout();
                let mut total: Vec<Vec<f64>> = (0..layout.num_groups())
                    .map(|g| vec![0.0; layout.len_of(g)])
                    .collect();
                for term in grads.terms() {
                    for (acc, g) in total.iter_mut().zip(term) {
                        for (a, &x) in acc.iter_mut().zip(g) {
                            *a += x;
                        }
                    }
                }
                match driver {
                    OptimizerDriver::Adam(state) => adam_step(params, &total, state, &cfg.optim)?,
                    OptimizerDriver::RmsProp(state) => {
                        rmsprop_step(params, &total, state, &cfg.optim)?
                    }
                    OptimizerDriver::SgdMomentum(state) => {
                        sgd_momentum_step(params, &total, state, &cfg.optim)?
                    }
                    OptimizerDriver::MtAdam(_) => unreachable!(),
                }
                Ok(None)
            }
        }
    }
}

fn resolve_weights(cfg: &ExperimentConfig, num_terms: usize) -> Result<TermWeights> {
    match &cfg.weighting {
        WeightingKind::Balanced => Ok(TermWeights::balanced(num_terms)),
        WeightingKind::Unbalanced => Ok(TermWeights::unbalanced_uniform(
            num_terms,
            cfg.effective_weight_seed(),
        )),
        WeightingKind::Explicit(w) => TermWeights::new(w.clone()),
    }
}

struct CsvSink {
    file: fs::File,
    path: PathBuf,
}

impl CsvSink {
    fn create(path: &Path, header: &str) -> Result<Self> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(header.as_bytes())
            .map_err(|e| Error::io(path, e))?;
        Ok(CsvSink {
            file,
            path: path.to_owned(),
        })
    }

    fn write_row(&mut self, row: &str) -> Result<()> {
        self.file
            .write_all(row.as_bytes())
            .map_err(|e| Error::io(&self.path, e))
    }
}

/// Runs one experiment end to end: seeded shuffling, per-batch per-term
/// gradients, one optimizer step per batch, per-epoch evaluation. Writes
/// the CSV incrementally when an output directory is configured. A
/// non-finite loss aborts the run, keeping rows recorded so far and setting
/// the `diverged` flag.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    match cfg.task {
        TaskKind::Mnist => run_mnist(cfg),
        TaskKind::Synthetic => run_synthetic(cfg),
    }
}

fn mnist_paths(dir: &Path) -> [(PathBuf, PathBuf); 2] {
    [
        (
            dir.join("train-images-idx3-ubyte"),
            dir.join("train-labels-idx1-ubyte"),
        ),
        (
            dir.join("t10k-images-idx3-ubyte"),
            dir.join("t10k-labels-idx1-ubyte"),
        ),
    ]
}

fn run_mnist(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    let start = Instant::now();
    let dir = cfg.data_dir.as_ref().ok_or_else(|| {
        Error::InvalidConfig("task=mnist requires data_dir pointing at IDX files".into())
    })?;
    let [(train_x, train_y), (test_x, test_y)] = mnist_paths(dir);
    let train = load_mnist_pair(&train_x, &train_y, Split::Train)?;
    let test = load_mnist_pair(&test_x, &test_y, Split::Test)?;

    let num_terms = 10usize;
    let weights = resolve_weights(cfg, num_terms)?;
    let mut layer_sizes = vec![train.feature_dim()];
    layer_sizes.extend_from_slice(&cfg.hidden_sizes);
    layer_sizes.push(num_terms);
    let spec = MlpSpec::new(layer_sizes, cfg.activation, cfg.effective_init_seed())?;
    let mut params = init_weights(&spec)?;

    let mut driver = OptimizerDriver::new(cfg.optimizer, num_terms, &params)?;
    let with_norms = matches!(cfg.optimizer, OptimizerKind::MtAdam);
    let mut record = RunRecord::new(num_terms, &params.layout(), with_norms);
    let mut sink = match &cfg.output_dir {
        Some(out) => Some(CsvSink::create(
            &out.join(run_file_stem(cfg, "csv")),
            &record.csv_header(),
        )?),
        None => None,
    };

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.effective_shuffle_seed());
    let mut indices: Vec<usize> = (0..train.len()).collect();
    let mut step: u64 = 0;
    let mut diverged = false;
    let mut epoch_metrics = Vec::with_capacity(cfg.epochs);
    let mut last_test_loss = None;

    'epochs: for epoch in 0..cfg.epochs {
        indices.shuffle(&mut shuffle_rng);
        for chunk in indices.chunks(cfg.batch_size) {
            let batch = train.inputs.gather_rows(chunk);
            let labels: Vec<usize> = chunk.iter().map(|&i| train.labels[i]).collect();
            let result = evaluate_batch(&spec, &params, &batch, &labels, &weights)?;
            if result.losses.iter().any(|l| !l.is_finite()) {
                diverged = true;
                break 'epochs;
            }
            step += 1;
            let diag = driver.step(&mut params, result.grads, cfg)?;
            let row = RecordRow::Step {
                step,
                epoch,
                term_losses: result.losses,
                pre_norms: diag.as_ref().map(|d| d.pre_norms.clone()),
                post_norms: diag.as_ref().map(|d| d.post_norms.clone()),
                denom_min: diag.as_ref().map(|d| d.denom_min),
                denom_max: diag.as_ref().map(|d| d.denom_max),
                denom_mean: diag.as_ref().map(|d| d.denom_mean),
            };
            if let Some(sink) = &mut sink {
                sink.write_row(&record.csv_row(&row))?;
            }
            record.push(row);
        }
        let (acc, ce) = evaluate_test(&spec, &params, &test)?;
        epoch_metrics.push(acc);
        last_test_loss = Some(ce);
        let row = RecordRow::Epoch {
            step,
            epoch,
            test_metric: acc,
        };
        if let Some(sink) = &mut sink {
            sink.write_row(&record.csv_row(&row))?;
        }
        record.push(row);
    }

    let final_metric = if diverged {
        f64::NAN
    } else {
        *epoch_metrics.last().unwrap()
    };
    let outcome = RunOutcome {
        record,
        final_metric,
        final_test_loss: if diverged { None } else { last_test_loss },
        epoch_metrics,
        diverged,
        steps_taken: step,
        term_weights: weights.values().to_vec(),
        elapsed_secs: start.elapsed().as_secs_f64(),
    };
    write_summary(cfg, &outcome)?;
    Ok(outcome)
}

fn evaluate_test(spec: &MlpSpec, params: &ParameterGroups, test: &Dataset) -> Result<(f64, f64)> {
    let cache = forward(spec, params, &test.inputs)?;
    Ok((
        accuracy(cache.scores(), &test.labels),
        mean_cross_entropy(cache.scores(), &test.labels),
    ))
}

fn run_synthetic(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    let start = Instant::now();
    let task = make_unbalanced_quadratics(
        cfg.synthetic_terms,
        cfg.synthetic_dims,
        cfg.effective_task_seed(),
        cfg.synthetic_condition,
    )?;
    let num_terms = task.num_terms();
    let weights = resolve_weights(cfg, num_terms)?;

    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.effective_init_seed());
    let theta0: Vec<f64> = (0..cfg.synthetic_dims)
        .map(|_| init_rng.gen_range(-1.0..1.0))
        .collect();
    // Two groups when possible so per-layer and whole-network
    // normalization are genuinely different code paths.
    let split = cfg.synthetic_dims / 2;
    let mut params = if split > 0 && split < cfg.synthetic_dims {
        ParameterGroups::new(vec![
            ("theta.head".into(), theta0[..split].to_vec()),
            ("theta.tail".into(), theta0[split..].to_vec()),
        ])?
    } else {
        ParameterGroups::new(vec![("theta".into(), theta0)])?
    };
    let layout = params.layout();

    let mut driver = OptimizerDriver::new(cfg.optimizer, num_terms, &params)?;
    let with_norms = matches!(cfg.optimizer, OptimizerKind::MtAdam);
    let mut record = RunRecord::new(num_terms, &layout, with_norms);
    let mut sink = match &cfg.output_dir {
        Some(out) => Some(CsvSink::create(
            &out.join(run_file_stem(cfg, "csv")),
            &record.csv_header(),
        )?),
        None => None,
    };

    let mut step: u64 = 0;
    let mut diverged = false;
    let mut epoch_metrics = Vec::with_capacity(cfg.epochs);

    let flat_theta = |params: &ParameterGroups| -> Vec<f64> {
        params.iter().flat_map(|(_, g)| g.to_vec()).collect()
    };
    let split_like_layout = |flat: Vec<f64>| -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(layout.num_groups());
        let mut offset = 0;
        for g in 0..layout.num_groups() {
            let len = layout.len_of(g);
            out.push(flat[offset..offset + len].to_vec());
            offset += len;
        }
        out
    };

    'epochs: for epoch in 0..cfg.epochs {
        for _ in 0..cfg.synthetic_steps {
            let theta = flat_theta(&params);
            let losses: Vec<f64> = (0..num_terms)
                .map(|i| weights.values()[i] * task.term_loss(i, &theta))
                .collect();
            if losses.iter().any(|l| !l.is_finite()) {
                diverged = true;
                break 'epochs;
            }
            let terms: Vec<Vec<Vec<f64>>> = (0..num_terms)
                .map(|i| {
                    let mut g = task.term_gradient(i, &theta);
                    for x in &mut g {
                        *x *= weights.values()[i];
                    }
                    split_like_layout(g)
                })
                .collect();
            let grads = TermGradients::new(terms, &layout)?;
            step += 1;
            let diag = driver.step(&mut params, grads, cfg)?;
            let row = RecordRow::Step {
                step,
                epoch,
                term_losses: losses,
                pre_norms: diag.as_ref().map(|d| d.pre_norms.clone()),
                post_norms: diag.as_ref().map(|d| d.post_norms.clone()),
                denom_min: diag.as_ref().map(|d| d.denom_min),
                denom_max: diag.as_ref().map(|d| d.denom_max),
                denom_mean: diag.as_ref().map(|d| d.denom_mean),
            };
            if let Some(sink) = &mut sink {
                sink.write_row(&record.csv_row(&row))?;
            }
            record.push(row);
        }
        let metric = task.total_loss(&flat_theta(&params));
        epoch_metrics.push(metric);
        let row = RecordRow::Epoch {
            step,
            epoch,
            test_metric: metric,
        };
        if let Some(sink) = &mut sink {
            sink.write_row(&record.csv_row(&row))?;
        }
        record.push(row);
    }

    let final_metric = if diverged {
        f64::NAN
    } else {
        *epoch_metrics.last().unwrap()
    };
    let outcome = RunOutcome {
        record,
        final_metric,
        final_test_loss: if diverged { None } else { Some(final_metric) },
        epoch_metrics,
        diverged,
        steps_taken: step,
        term_weights: weights.values().to_vec(),
        elapsed_secs: start.elapsed().as_secs_f64(),
    };
    write_summary(cfg, &outcome)?;
    Ok(outcome)
}

fn run_file_stem(cfg: &ExperimentConfig, ext: &str) -> String {
    let variant = match cfg.optimizer {
        OptimizerKind::MtAdam => format!("-{}", cfg.optim.variant),
        _ => String::new(),
    };
    format!(
        "{}-{}{}-seed{}.{ext}",
        cfg.task, cfg.optimizer, variant, cfg.seed
    )
}

fn write_summary(cfg: &ExperimentConfig, outcome: &RunOutcome) -> Result<()> {
    let Some(out) = &cfg.output_dir else {
        return Ok(());
    };
    let path = out.join(run_file_stem(cfg, "json"));
    let summary = json!({
        "library_version": crate::VERSION,
        "config": cfg,
        "final_metric": if outcome.final_metric.is_nan() {
            serde_json::Value::Null
        } else {
            json!(outcome.final_metric)
        },
        "epoch_metrics": outcome.epoch_metrics,
        "diverged": outcome.diverged,
        "steps_taken": outcome.steps_taken,
        "term_weights": outcome.term_weights,
        "elapsed_secs": outcome.elapsed_secs,
    });
    let text = serde_json::to_string_pretty(&summary)
        .map_err(|e| Error::InvalidConfig(format!("summary serialization: {e}")))?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

/// Sample mean and standard deviation (n-1 divisor; 0 for a single value).
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

#[derive(Clone, Debug)]
pub struct RepeatSummary {
    pub mean: f64,
    pub sd: f64,
    /// (seed, final metric); `None` marks a diverged run.
    pub per_seed: Vec<(u64, Option<f64>)>,
    pub diverged_count: usize,
}

/// Runs `n_seeds` independent seeds (base seed, base+1, ...) in parallel and
/// aggregates the final metrics. Diverged runs are excluded from the
/// aggregate and counted.
pub fn run_repeated(cfg: &ExperimentConfig, n_seeds: usize) -> Result<RepeatSummary> {
    if n_seeds < 2 {
        return Err(Error::InvalidConfig("n_seeds must be at least 2".into()));
    }
    cfg.validate()?;
    let outcomes: Vec<Result<(u64, RunOutcome)>> = (0..n_seeds as u64)
        .into_par_iter()
        .map(|i| {
            let mut run_cfg = cfg.clone();
            run_cfg.seed = cfg.seed + i;
            run_experiment(&run_cfg).map(|o| (run_cfg.seed, o))
        })
        .collect();

    let mut per_seed = Vec::with_capacity(n_seeds);
    let mut valid = Vec::new();
    let mut diverged_count = 0usize;
    for res in outcomes {
        let (seed, outcome) = res?;
        if outcome.diverged {
            diverged_count += 1;
            per_seed.push((seed, None));
        } else {
            valid.push(outcome.final_metric);
            per_seed.push((seed, Some(outcome.final_metric)));
        }
    }
    if valid.is_empty() {
        return Err(Error::Diverged {
            step: 0,
            reason: format!("all {n_seeds} runs diverged"),
        });
    }
    let (mean, sd) = mean_sd(&valid);
    Ok(RepeatSummary {
        mean,
        sd,
        per_seed,
        diverged_count,
    })
}

/// Runs all six MTAdam variants on the same task and seeds.
pub fn run_ablation_suite(
    cfg: &ExperimentConfig,
    n_seeds: usize,
) -> Result<Vec<(MtAdamVariant, RepeatSummary)>> {
    if cfg.optimizer != OptimizerKind::MtAdam {
        return Err(Error::InvalidConfig(
            "ablation suite requires optimizer=mtadam".into(),
        ));
    }
    MtAdamVariant::ALL
        .iter()
        .map(|&variant| {
            let mut run_cfg = cfg.clone();
            run_cfg.optim.variant = variant;
            run_repeated(&run_cfg, n_seeds).map(|s| (variant, s))
        })
        .collect()
}

/// Lambda search: trains with term weights `[1, lambda, lambda, ...]` at
/// each rung budget and minimizes the spec's metric — test error rate or
/// validation loss for mnist; the synthetic task's metric is its
/// unweighted total loss either way. Returns the successive-halving
/// outcome.
pub fn run_lambda_search(cfg: &ExperimentConfig, spec: &SearchSpec) -> Result<SearchOutcome> {
    cfg.validate()?;
    let num_terms = cfg.num_terms();
    successive_halving(spec, |lambda, budget_epochs, seed| {
        let mut run_cfg = cfg.clone();
        run_cfg.seed = seed;
        run_cfg.epochs = budget_epochs;
        run_cfg.output_dir = None;
        let mut weights = vec![lambda; num_terms];
        weights[run_cfg.optim.anchor] = 1.0;
        run_cfg.weighting = WeightingKind::Explicit(weights);
        let outcome = run_experiment(&run_cfg)?;
        if outcome.diverged {
            return Err(Error::Diverged {
                step: outcome.steps_taken,
                reason: "trial diverged".into(),
            });
        }
        Ok(match (run_cfg.task, spec.metric) {
            (TaskKind::Mnist, SearchMetric::ErrorRate) => 100.0 - outcome.final_metric,
            (TaskKind::Mnist, SearchMetric::ValidationLoss) => {
                outcome.final_test_loss.expect("finished run has a test loss")
            }
            (TaskKind::Synthetic, _) => outcome.final_metric,
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synth_cfg() -> ExperimentConfig {
        ExperimentConfig {
            task: TaskKind::Synthetic,
            optimizer: OptimizerKind::MtAdam,
            weighting: WeightingKind::Unbalanced,
            epochs: 2,
            synthetic_terms: 3,
            synthetic_dims: 4,
            synthetic_steps: 25,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn mean_sd_closed_form() {
        let (m, s) = mean_sd(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert_eq!(s, 1.0);
        let (m, s) = mean_sd(&[4.5]);
        assert_eq!(m, 4.5);
        assert_eq!(s, 0.0);
    }

    #[test]
    fn synthetic_run_is_deterministic() {
        let cfg = synth_cfg();
        let a = run_experiment(&cfg).unwrap();
        let b = run_experiment(&cfg).unwrap();
        assert_eq!(a.final_metric, b.final_metric);
        assert_eq!(a.record.to_csv(), b.record.to_csv());
        assert_eq!(a.steps_taken, 50);
        assert_eq!(a.record.step_row_count(), 50);
    }

    #[test]
    fn single_term_objective_mtadam_equals_adam_end_to_end() {
        // All terms share the anchor's scale when their weights are equal
        // and gradients identical; instead use an explicit single-term-like
        // comparison: synthetic task with 2 terms but identical configs run
        // under mtadam vs adam differ; true degeneracy needs I=1, which the
        // synthetic task forbids (>=2 terms). Covered in the acceptance
        // suite with quadratics driven directly through the optimizer API.
        let cfg = synth_cfg();
        let out = run_experiment(&cfg).unwrap();
        assert!(out.final_metric.is_finite());
    }

    #[test]
    fn repeated_runs_aggregate_mean_and_sd() {
        let cfg = synth_cfg();
        let summary = run_repeated(&cfg, 3).unwrap();
        assert_eq!(summary.per_seed.len(), 3);
        assert_eq!(summary.diverged_count, 0);
        assert!(summary.sd >= 0.0);
        // seeds differ, so metrics should not all coincide
        let metrics: Vec<f64> = summary.per_seed.iter().map(|(_, m)| m.unwrap()).collect();
        assert!(metrics.windows(2).any(|w| w[0] != w[1]));
    }

    #[test]
    fn ablation_suite_covers_all_variants_with_distinct_trajectories() {
        let cfg = synth_cfg();
        let table = run_ablation_suite(&cfg, 2).unwrap();
        assert_eq!(table.len(), 6);
        let finals: Vec<f64> = table.iter().map(|(_, s)| s.mean).collect();
        for i in 0..finals.len() {
            for j in i + 1..finals.len() {
                assert_ne!(
                    finals[i], finals[j],
                    "variants {:?} and {:?} coincided",
                    table[i].0, table[j].0
                );
            }
        }
        let mut bad = cfg;
        bad.optimizer = OptimizerKind::Adam;
        assert!(run_ablation_suite(&bad, 2).is_err());
    }

    #[test]
    fn explicit_weights_flow_through() {
        let mut cfg = synth_cfg();
        cfg.weighting = WeightingKind::Explicit(vec![1.0, 5.0, 25.0]);
        let out = run_experiment(&cfg).unwrap();
        assert_eq!(out.term_weights, vec![1.0, 5.0, 25.0]);
    }

    #[test]
    fn lambda_search_on_synthetic_runs() {
        let cfg = ExperimentConfig {
            epochs: 1,
            synthetic_steps: 10,
            ..synth_cfg()
        };
        let spec = SearchSpec {
            lambda_range: (1e-2, 1e2),
            n_trials: 4,
            rung_budgets: vec![1, 2],
            metric: SearchMetric::ValidationLoss,
            seed: 3,
        };
        let outcome = run_lambda_search(&cfg, &spec).unwrap();
        assert_eq!(outcome.total_budget, 4 + 2 * 2);
        assert!(outcome.best_metric.is_finite());
    }
}
