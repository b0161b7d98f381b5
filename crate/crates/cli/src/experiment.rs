//! Method × seed training runs, executed in parallel, collected in a fixed
//! order.

use anyhow::{Context, Result};
use orient_core::metrics::{EvalConfig, Evaluation};
use orient_core::train::{self, TrainOutcome};
use orient_core::{Dataset, Method};
use rayon::prelude::*;

use crate::config::ExperimentConfig;

#[derive(Clone, Debug)]
pub struct Run {
    pub method: Method,
    pub seed: u64,
    pub outcome: TrainOutcome,
}

#[derive(Clone, Debug)]
pub struct EvaluatedRun {
    pub run: Run,
    pub evaluation: Evaluation,
}

pub fn run_name(method: Method, seed: u64) -> String {
    format!("{method}/seed-{seed}")
}

/// Trains every (method, seed) pair on the training split.
pub fn train_all(cfg: &ExperimentConfig, data: &Dataset) -> Result<Vec<Run>> {
    let train_set = data.train();
    let jobs: Vec<(Method, u64)> = cfg
        .methods
        .iter()
        .flat_map(|&m| cfg.seeds.iter().map(move |&s| (m, s)))
        .collect();
    jobs.par_iter()
        .map(|&(method, seed)| {
            let outcome = train::train(&cfg.run_config(method, seed), &train_set)
                .with_context(|| format!("training {}", run_name(method, seed)))?;
            Ok(Run {
                method,
                seed,
                outcome,
            })
        })
        .collect()
}

/// Scores each run on the validation split.
pub fn evaluate_all(runs: Vec<Run>, data: &Dataset, eval: &EvalConfig) -> Result<Vec<EvaluatedRun>> {
    let val = data.val();
    runs.into_par_iter()
        .map(|run| {
            let mut evaluation = train::evaluate(&run.outcome.params, &val, eval)
                .with_context(|| format!("evaluating {}", run_name(run.method, run.seed)))?;
            evaluation.report.label = run.method.to_string();
            Ok(EvaluatedRun { run, evaluation })
        })
        .collect()
}

pub fn train_and_evaluate(cfg: &ExperimentConfig, data: &Dataset) -> Result<Vec<EvaluatedRun>> {
    evaluate_all(train_all(cfg, data)?, data, &cfg.eval.metrics)
}
