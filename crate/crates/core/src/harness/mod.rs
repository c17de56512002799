//! Experiment protocols: seeded trial grids, parallel execution and
//! aggregation into per-cell means with 95% intervals.
//!
//! Every trial's seed is derived from the master seed before anything runs,
//! so serial and parallel execution give identical results.

mod protocols;
mod spec;
mod store;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::fitness::wald_interval;
use crate::linalg::Matrix;
use crate::modmlp::{init_params, train};
use crate::par::{try_map_indexed, Execution};
use crate::Result;

pub use protocols::{
    run_ablate_circles, run_baseline, run_construct, run_fitness_stats, run_forced_circles, run_freeze_sweep,
    run_ode_fit, run_perturb, run_sweep, FitnessReport, OdeTrialReport, FREEZE_CHECKPOINTS,
};
pub use spec::{ExperimentSpec, ForcedVariant, Protocol};
pub use store::{matrix_csv, trajectory_csv, RunKey, RunSummary, Store, TrialManifest};

/// How a trial's initial parameters are produced. Serialized into manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Setup {
    /// Everything drawn from the model seed.
    Fresh,
    /// Embedding from its own seed, MLP and split from the model seed.
    FixedEmbedding { embedding_seed: u64 },
    Perturbed { embedding_seed: u64, freq: usize, scale: f64 },
    Constructed {
        k1: usize,
        k2: usize,
        signal: f64,
        ratio: f64,
        eps: f64,
        construct_seed: u64,
    },
    /// Trained embedding of the run with `source_seed`, reduced to `keep`.
    Ablated { source_seed: u64, keep: Vec<usize> },
    /// Initial embedding of the model seed, reduced to `keep`.
    Forced { keep: Vec<usize> },
}

/// One training run to perform (or reload).
#[derive(Debug, Clone)]
pub struct TrialPlan {
    pub protocol: Protocol,
    pub cell: String,
    pub trial: usize,
    pub key: RunKey,
    /// Initial embedding replacing the one drawn from the model seed.
    pub embedding: Option<Matrix>,
}

impl TrialPlan {
    pub fn seed(&self) -> u64 {
        self.key.model.seed
    }
}

fn execute(plan: &TrialPlan, store: &Store) -> Result<RunSummary> {
    let dir = plan.protocol.name();
    if let Some(run) = store.load(dir, &plan.cell, plan.trial, &plan.key)? {
        log::debug!("reusing {dir}/{}/trial_{:03}", plan.cell, plan.trial);
        return Ok(run);
    }
    let mut params = init_params(&plan.key.model)?;
    if let Some(e) = &plan.embedding {
        params = params.with_embedding(e.clone())?;
    }
    let initial = params.embedding.clone();
    log::info!("training {dir}/{}/trial_{:03}", plan.cell, plan.trial);
    let log = train(&plan.key.model, &plan.key.train, Some(params))?;
    let mut run = RunSummary::from_log(plan.key.clone(), initial, log)?;
    run.survival.trial = plan.trial as u64;
    store.save(dir, &plan.cell, plan.trial, &run)?;
    Ok(run)
}

/// Run (or reload) every plan; output order follows `plans`.
pub fn execute_plans(plans: &[TrialPlan], store: &Store, exec: Execution) -> Result<Vec<RunSummary>> {
    try_map_indexed(plans.len(), exec, |i| execute(&plans[i], store))
}

/// Per-trial raw metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub cell: String,
    pub trial: usize,
    pub seed: u64,
    pub metrics: BTreeMap<String, f64>,
}

/// Mean of one metric over a cell's trials with a normal-approximation 95%
/// interval `mean ± 1.96·σ/√n` (σ the population standard deviation, so
/// 0/1 metrics get the Wald interval). Non-finite values are excluded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub cell: String,
    pub metric: String,
    pub n: usize,
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

pub fn aggregate(rows: &[TrialRow]) -> Vec<Aggregate> {
    let mut cells: Vec<&str> = Vec::new();
    for r in rows {
        if !cells.contains(&r.cell.as_str()) {
            cells.push(&r.cell);
        }
    }
    let mut out = Vec::new();
    for cell in cells {
        let in_cell: Vec<&TrialRow> = rows.iter().filter(|r| r.cell == cell).collect();
        let mut names: Vec<&String> = in_cell.iter().flat_map(|r| r.metrics.keys()).collect();
        names.sort();
        names.dedup();
        for name in names {
            let vals: Vec<f64> = in_cell
                .iter()
                .filter_map(|r| r.metrics.get(name))
                .copied()
                .filter(|v| v.is_finite())
                .collect();
            let n = vals.len();
            let (mean, lo, hi) = if n == 0 {
                (f64::NAN, f64::NAN, f64::NAN)
            } else if vals.iter().all(|&v| v == 0.0 || v == 1.0) {
                wald_interval(vals.iter().filter(|&&v| v == 1.0).count(), n)
            } else {
                let mean = vals.iter().sum::<f64>() / n as f64;
                let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
                let half = 1.96 * (var / n as f64).sqrt();
                (mean, mean - half, mean + half)
            };
            out.push(Aggregate {
                cell: cell.to_string(),
                metric: name.clone(),
                n,
                mean,
                ci_low: lo,
                ci_high: hi,
            });
        }
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub spec: ExperimentSpec,
    pub cells: Vec<String>,
    pub rows: Vec<TrialRow>,
    pub aggregates: Vec<Aggregate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fitness: Option<FitnessReport>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub ode: Vec<OdeTrialReport>,
    /// Training runs in row order.
    #[serde(skip)]
    pub runs: Vec<RunSummary>,
}

impl ExperimentResult {
    pub fn aggregate_of(&self, cell: &str, metric: &str) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| a.cell == cell && a.metric == metric)
    }

    /// Values of `metric` in one cell, in trial order.
    pub fn values(&self, cell: &str, metric: &str) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.cell == cell)
            .filter_map(|r| r.metrics.get(metric).copied())
            .collect()
    }

    pub fn rows_in<'a>(&'a self, cell: &'a str) -> impl Iterator<Item = (&'a TrialRow, &'a RunSummary)> + 'a {
        self.rows.iter().zip(&self.runs).filter(move |(r, _)| r.cell == cell)
    }

    /// `cell,metric,n,mean,ci_low,ci_high`.
    pub fn summary_csv(&self) -> String {
        let mut out = String::from("cell,metric,n,mean,ci_low,ci_high\n");
        for a in &self.aggregates {
            let _ = writeln!(out, "{},{},{},{:e},{:e},{:e}", a.cell, a.metric, a.n, a.mean, a.ci_low, a.ci_high);
        }
        out
    }

    /// `cell,trial,seed,metric,value`.
    pub fn trials_csv(&self) -> String {
        let mut out = String::from("cell,trial,seed,metric,value\n");
        for r in &self.rows {
            for (m, v) in &r.metrics {
                let _ = writeln!(out, "{},{},{},{m},{v:e}", r.cell, r.trial, r.seed);
            }
        }
        out
    }

    fn write(&self, store: &Store) -> Result<()> {
        let Some(dir) = store.protocol_dir(self.spec.protocol.name()) else {
            return Ok(());
        };
        let json = serde_json::to_string_pretty(self).expect("result is serializable");
        for (name, body) in [("summary.csv", self.summary_csv()), ("trials.csv", self.trials_csv()), ("result.json", json)] {
            store::write_once(&dir.join(name), &body)?;
        }
        Ok(())
    }
}

/// Dispatch on `spec.protocol`.
pub fn run(spec: &ExperimentSpec, store: &Store, exec: Execution) -> Result<ExperimentResult> {
    spec.validate()?;
    let result = match spec.protocol {
        Protocol::Baseline => run_baseline(spec, store, exec),
        Protocol::FreezeSweep => run_freeze_sweep(spec, store, exec),
        Protocol::PSweep | Protocol::DSweep | Protocol::WdSweep => run_sweep(spec, store, exec),
        Protocol::Perturb => run_perturb(spec, store, exec),
        Protocol::Construct => run_construct(spec, store, exec),
        Protocol::AblateCircles => run_ablate_circles(spec, store, exec),
        Protocol::ForcedCircles => run_forced_circles(spec, store, exec),
        Protocol::OdeFit => run_ode_fit(spec, store, exec),
        Protocol::FitnessStats => run_fitness_stats(spec, store, exec),
    }?;
    result.write(store)?;
    Ok(result)
}
