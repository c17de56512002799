use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dynamics::{
    analytic_solution, fit_lasso_ode, fit_linear_ode, fit_quadratic_ode, simulate_ode, OdeFit, Window,
};
use crate::fitness::{
    initial_gradient_signal, pearson, survival_rates, survival_summary_csv,
    train_linear_svm, Pearson,
};
use crate::modmlp::init_embedding;
use crate::par::{try_map_indexed, Execution};
use crate::rng::{derive_path, derive_seed, SplitMix64};
use crate::spectral::{ablate_to_frequencies, construct_embedding, frequencies_by_signal, n_freq, perturb_frequency};
use crate::{Error, Result};

use super::store::write_once as write;
use super::{
    aggregate, execute_plans, ExperimentResult, ExperimentSpec, ForcedVariant, Protocol, RunKey, RunSummary, Setup,
    Store, TrialPlan, TrialRow,
};

// Seed-derivation domains, kept apart from cell indices.
const EMBEDDING_DOMAIN: u64 = 0xE3B0_0000_0000;
const PAIRED_DOMAIN: u64 = 0x9A1E_0000_0000;
const CHOICE_DOMAIN: u64 = 0xC401_0000_0000;
const ABLATE_DOMAIN: u64 = 0xAB1A_0000_0000;

/// Test-loss snapshot steps recorded by the freeze sweep.
pub const FREEZE_CHECKPOINTS: [usize; 4] = [1000, 3000, 10_000, 30_000];

fn grid_cell_name(p: usize, d: usize, wd: f64) -> String {
    format!("p{p}_d{d}_wd{wd}")
}

fn grid(spec: &ExperimentSpec) -> Vec<(usize, usize, f64)> {
    let mut cells = Vec::new();
    for &p in &spec.p {
        for &d in &spec.d {
            for &wd in &spec.weight_decay {
                cells.push((p, d, wd));
            }
        }
    }
    cells
}

/// Baseline training plans over the `p × d × wd` grid.
fn grid_plans(spec: &ExperimentSpec, frozen: bool, protocol: Protocol) -> Vec<TrialPlan> {
    let mut plans = Vec::new();
    for (c, (p, d, wd)) in grid(spec).into_iter().enumerate() {
        for t in 0..spec.trials {
            let seed = derive_path(spec.seed, &[c as u64, t as u64]);
            let mut train = spec.train_config(wd);
            train.freeze_embedding = frozen;
            plans.push(TrialPlan {
                protocol,
                cell: grid_cell_name(p, d, wd),
                trial: t,
                key: RunKey {
                    model: spec.model_config(p, d, seed),
                    train,
                    setup: Setup::Fresh,
                },
                embedding: None,
            });
        }
    }
    plans
}

/// Baseline runs of the first grid cell, used as sources by derived protocols.
fn source_runs(spec: &ExperimentSpec, store: &Store, exec: Execution) -> Result<Vec<RunSummary>> {
    let mut base = spec.clone();
    base.p.truncate(1);
    base.d.truncate(1);
    base.weight_decay.truncate(1);
    base.record_gradients = false;
    execute_plans(&grid_plans(&base, false, Protocol::Baseline), store, exec)
}

fn common_metrics(run: &RunSummary) -> BTreeMap<String, f64> {
    let mut m = BTreeMap::new();
    let s = &run.survival;
    let last = run.final_loss();
    m.insert("n_survivors".into(), s.n_survivors() as f64);
    m.insert("final_train_loss".into(), last.train_loss);
    m.insert("final_test_loss".into(), last.test_loss);
    m.insert("gap_decades".into(), s.gap_decades);
    let signals = run.final_signals();
    let min_alive = s.survivors().iter().map(|&k| signals[k - 1]).fold(f64::INFINITY, f64::min);
    let max_dead = s.dead().iter().map(|&k| signals[k - 1]).fold(f64::NEG_INFINITY, f64::max);
    if max_dead.is_finite() && min_alive.is_finite() {
        m.insert("separation_ratio".into(), max_dead / min_alive);
    }
    m
}

fn finish(
    spec: &ExperimentSpec,
    plans: &[TrialPlan],
    runs: Vec<RunSummary>,
    mut extra: impl FnMut(&TrialPlan, &RunSummary, &mut BTreeMap<String, f64>) -> Result<()>,
) -> Result<ExperimentResult> {
    let mut rows = Vec::with_capacity(plans.len());
    let mut cells: Vec<String> = Vec::new();
    for (plan, run) in plans.iter().zip(&runs) {
        let mut metrics = common_metrics(run);
        extra(plan, run, &mut metrics)?;
        if !cells.contains(&plan.cell) {
            cells.push(plan.cell.clone());
        }
        rows.push(TrialRow {
            cell: plan.cell.clone(),
            trial: plan.trial,
            seed: plan.seed(),
            metrics,
        });
    }
    Ok(ExperimentResult {
        spec: spec.clone(),
        cells,
        aggregates: aggregate(&rows),
        rows,
        fitness: None,
        ode: Vec::new(),
        runs,
    })
}

fn check_protocol(spec: &ExperimentSpec, allowed: &[Protocol]) -> Result<()> {
    if !allowed.contains(&spec.protocol) {
        return Err(Error::domain(format!(
            "spec names protocol `{}`, expected one of {:?}",
            spec.protocol,
            allowed.iter().map(|p| p.name()).collect::<Vec<_>>()
        )));
    }
    spec.validate()
}

/// Default training over the grid: trajectories, survival and circle projections.
pub fn run_baseline(spec: &ExperimentSpec, store: &Store, exec: Execution) -> Result<ExperimentResult> {
    check_protocol(spec, &[Protocol::Baseline])?;
    let plans = grid_plans(spec, false, Protocol::Baseline);
    let runs = execute_plans(&plans, store, exec)?;
    finish(spec, &plans, runs, |_, _, _| Ok(()))
}

/// Survivor counts over a p, d or weight-decay grid.
pub fn run_sweep(spec: &ExperimentSpec, store: &Store, exec: Execution) -> Result<ExperimentResult> {
    check_protocol(spec, &[Protocol::PSweep, Protocol::DSweep, Protocol::WdSweep])?;
    let plans = grid_plans(spec, false, spec.protocol);
    let runs = execute_plans(&plans, store, exec)?;
    finish(spec, &plans, runs, |_, run, m| {
        m.insert("survivor_fraction".into(), run.survival.n_survivors() as f64 / run.survival.n_freq() as f64);
        Ok(())
    })
}

/// Frozen-embedding training per grid cell with test-loss snapshots.
pub fn run_freeze_sweep(spec: &ExperimentSpec, store: &Store, exec: Execution) -> Result<ExperimentResult> {
    check_protocol(spec, &[Protocol::FreezeSweep])?;
    let plans = grid_plans(spec, true, Protocol::FreezeSweep);
    let runs = execute_plans(&plans, store, exec)?;
    finish(spec, &plans, runs, |_, run, m| {
        for step in FREEZE_CHECKPOINTS {
            if let Some(l) = run.loss_at(step) {
                m.insert(format!("test_loss_at_{step}"), l.test_loss);
            }
        }
        Ok(())
    })
}

fn base_embedding_seed(spec: &ExperimentSpec, index: usize) -> u64 {
    derive_path(spec.seed, &[EMBEDDING_DOMAIN, index as u64])
}

/// MLP/split seed shared by the same trial index across cells (paired design).
fn paired_seed(spec: &ExperimentSpec, trial: usize) -> u64 {
    derive_path(spec.seed, &[PAIRED_DOMAIN, trial as u64])
}

fn choose_distinct(rng: &mut SplitMix64, n_freq: usize, count: usize) -> Vec<usize> {
    let mut ks: Vec<usize> = (1..=n_freq).collect();
    rng.shuffle(&mut ks);
    ks.truncate(count);
    ks
}

/// Rescale one frequency of the initial embedding and measure its survival.
pub fn run_perturb(spec: &ExperimentSpec, store: &Store, exec: Execution) -> Result<ExperimentResult> {
    check_protocol(spec, &[Protocol::Perturb])?;
    let (p, d, wd) = (spec.p[0], spec.d[0], spec.weight_decay[0]);
    let nf = n_freq(p);
    let mut plans = Vec::new();
    let mut targets = Vec::new();
    for &scale in &spec.scales {
        for t in 0..spec.trials {
            let emb_seed = base_embedding_seed(spec, t % spec.embeddings);
            let freq = spec.frequency.unwrap_or_else(|| {
                1 + SplitMix64::new(derive_seed(emb_seed, CHOICE_DOMAIN)).below(nf as u64) as usize
            });
            let embedding = perturb_frequency(&init_embedding(p, d, emb_seed), freq, scale)?;
            targets.push((freq, embedding_relative_signal(&embedding, freq)));
            plans.push(TrialPlan {
                protocol: Protocol::Perturb,
                cell: format!("scale{scale}"),
                trial: t,
                key: RunKey {
                    model: spec.model_config(p, d, paired_seed(spec, t)),
                    train: spec.train_config(wd),
                    setup: Setup::Perturbed {
                        embedding_seed: emb_seed,
                        freq,
                        scale,
                    },
                },
                embedding: Some(embedding),
            });
        }
    }
    let runs = execute_plans(&plans, store, exec)?;
    let mut i = 0;
    finish(spec, &plans, runs, |_, run, m| {
        let (freq, rel) = targets[i];
        i += 1;
        m.insert("target_freq".into(), freq as f64);
        m.insert("target_survived".into(), f64::from(u8::from(run.survival.survived[freq - 1])));
        m.insert("target_relative_signal".into(), rel);
        Ok(())
    })
}

/// Initial signal of `k` relative to the mean signal of the other frequencies.
fn embedding_relative_signal(e: &crate::linalg::Matrix, k: usize) -> f64 {
    let s = crate::spectral::dft_embedding(e).signals();
    let others: f64 = s.iter().enumerate().filter(|(i, _)| i + 1 != k).map(|(_, v)| v).sum::<f64>()
        / (s.len() - 1) as f64;
    s[k - 1] / others
}

/// Two-frequency constructed embeddings over the ratio grid.
pub fn run_construct(spec: &ExperimentSpec, store: &Store, exec: Execution) -> Result<ExperimentResult> {
    check_protocol(spec, &[Protocol::Construct])?;
    let (p, d, wd) = (spec.p[0], spec.d[0], spec.weight_decay[0]);
    let nf = n_freq(p);
    if nf < 2 {
        return Err(Error::domain("construction needs at least two frequencies"));
    }
    let signal = spec.construct_signal.unwrap_or((p * d) as f64);
    let mut plans = Vec::new();
    let mut pairs = Vec::new();
    for &ratio in &spec.ratios {
        for t in 0..spec.trials {
            let construct_seed = derive_path(spec.seed, &[CHOICE_DOMAIN, t as u64]);
            let ks = choose_distinct(&mut SplitMix64::new(construct_seed), nf, 2);
            let (k1, k2) = (ks[0], ks[1]);
            let embedding = construct_embedding(p, d, k1, k2, signal, ratio, spec.construct_eps, construct_seed)?;
            pairs.push((k1, k2));
            plans.push(TrialPlan {
                protocol: Protocol::Construct,
                cell: format!("r{ratio}"),
                trial: t,
                key: RunKey {
                    model: spec.model_config(p, d, paired_seed(spec, t)),
                    train: spec.train_config(wd),
                    setup: Setup::Constructed {
                        k1,
                        k2,
                        signal,
                        ratio,
                        eps: spec.construct_eps,
                        construct_seed,
                    },
                },
                embedding: Some(embedding),
            });
        }
    }
    let runs = execute_plans(&plans, store, exec)?;
    let mut i = 0;
    finish(spec, &plans, runs, |_, run, m| {
        let (k1, k2) = pairs[i];
        i += 1;
        let alive = &run.survival.survived;
        m.insert("k1_survived".into(), f64::from(u8::from(alive[k1 - 1])));
        m.insert("k2_survived".into(), f64::from(u8::from(alive[k2 - 1])));
        let revived = run.survival.survivors().iter().filter(|&&k| k != k1 && k != k2).count();
        m.insert("revived".into(), revived as f64);
        Ok(())
    })
}

/// Keep the top-n trained circles of each baseline run, freeze the embedding
/// and retrain a fresh MLP.
pub fn run_ablate_circles(spec: &ExperimentSpec, store: &Store, exec: Execution) -> Result<ExperimentResult> {
    check_protocol(spec, &[Protocol::AblateCircles])?;
    let sources = source_runs(spec, store, exec)?;
    let (p, d, wd) = (spec.p[0], spec.d[0], spec.weight_decay[0]);
    let mut plans = Vec::new();
    for &n in &spec.n_circles {
        for (t, src) in sources.iter().enumerate() {
            let keep: Vec<usize> = frequencies_by_signal(src.final_signals()).into_iter().take(n).collect();
            let embedding = ablate_to_frequencies(&src.final_embedding, &keep)?;
            let seed = derive_path(spec.seed, &[ABLATE_DOMAIN, t as u64]);
            let mut train = spec.train_config(wd);
            train.freeze_embedding = true;
            plans.push(TrialPlan {
                protocol: Protocol::AblateCircles,
                cell: format!("n{n}"),
                trial: t,
                key: RunKey {
                    model: spec.model_config(p, d, seed),
                    train,
                    setup: Setup::Ablated {
                        source_seed: src.key.model.seed,
                        keep,
                    },
                },
                embedding: Some(embedding),
            });
        }
    }
    let runs = execute_plans(&plans, store, exec)?;
    finish(spec, &plans, runs, |plan, _, m| {
        if let Setup::Ablated { keep, .. } = &plan.key.setup {
            m.insert("n_kept".into(), keep.len() as f64);
        }
        Ok(())
    })
}

/// Suppress all but one or two frequencies at initialization and train fully.
pub fn run_forced_circles(spec: &ExperimentSpec, store: &Store, exec: Execution) -> Result<ExperimentResult> {
    check_protocol(spec, &[Protocol::ForcedCircles])?;
    let sources = source_runs(spec, store, exec)?;
    let (p, d, wd) = (spec.p[0], spec.d[0], spec.weight_decay[0]);
    let nf = n_freq(p);
    let mut plans = Vec::new();
    for &variant in &spec.variants {
        for (t, src) in sources.iter().enumerate() {
            let keep = match variant {
                ForcedVariant::A | ForcedVariant::B => frequencies_by_signal(src.final_signals())
                    .into_iter()
                    .take(variant.n_kept())
                    .collect(),
                ForcedVariant::C | ForcedVariant::D => {
                    let mut rng = SplitMix64::new(derive_path(spec.seed, &[CHOICE_DOMAIN, 0xF0, t as u64]));
                    choose_distinct(&mut rng, nf, variant.n_kept())
                }
            };
            let embedding = ablate_to_frequencies(&src.initial_embedding, &keep)?;
            plans.push(TrialPlan {
                protocol: Protocol::ForcedCircles,
                cell: format!("variant{variant}"),
                trial: t,
                key: RunKey {
                    model: spec.model_config(p, d, src.key.model.seed),
                    train: spec.train_config(wd),
                    setup: Setup::Forced { keep },
                },
                embedding: Some(embedding),
            });
        }
    }
    let runs = execute_plans(&plans, store, exec)?;
    finish(spec, &plans, runs, |plan, run, m| {
        let Setup::Forced { keep } = &plan.key.setup else {
            return Ok(());
        };
        let survivors = run.survival.survivors();
        let kept_alive = keep.iter().filter(|k| survivors.contains(k)).count();
        m.insert("kept_survived".into(), kept_alive as f64);
        let mut sorted = keep.clone();
        sorted.sort_unstable();
        m.insert("only_kept_survive".into(), f64::from(u8::from(survivors == sorted)));
        Ok(())
    })
}

/// Pooled fitness statistics of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitnessReport {
    pub gradient_step: usize,
    /// Correlation of each (embedding, frequency)'s initial signal with its survival rate.
    pub signal_rate: Pearson,
    /// Correlation of mean step-`i` gradient with survival rate.
    pub gradient_rate: Pearson,
    pub svm_cv_accuracy: f64,
    pub svm_weights: Vec<f64>,
    pub svm_bias: f64,
    pub n_samples: usize,
    pub survived_fraction: f64,
    pub mean_gradient_survived: f64,
    pub mean_gradient_dead: f64,
}

/// Fixed embeddings × random MLPs/splits; relates initial signal and initial
/// gradient to survival.
pub fn run_fitness_stats(spec: &ExperimentSpec, store: &Store, exec: Execution) -> Result<ExperimentResult> {
    check_protocol(spec, &[Protocol::FitnessStats])?;
    if spec.trials < 2 {
        return Err(Error::domain(
            "fitness statistics need at least 2 trials per embedding (survival rates and classifier folds)",
        ));
    }
    let (p, d, wd) = (spec.p[0], spec.d[0], spec.weight_decay[0]);
    let mut plans = Vec::new();
    for e in 0..spec.embeddings {
        let emb_seed = base_embedding_seed(spec, e);
        let embedding = init_embedding(p, d, emb_seed);
        for t in 0..spec.trials {
            plans.push(TrialPlan {
                protocol: Protocol::FitnessStats,
                cell: format!("embedding{e:02}"),
                trial: t,
                key: RunKey {
                    model: spec.model_config(p, d, derive_path(spec.seed, &[e as u64, t as u64])),
                    train: spec.train_config(wd),
                    setup: Setup::FixedEmbedding { embedding_seed: emb_seed },
                },
                embedding: Some(embedding.clone()),
            });
        }
    }
    let runs = execute_plans(&plans, store, exec)?;
    let mut result = finish(spec, &plans, runs, |_, _, _| Ok(()))?;

    let gstep = spec.gradient_step;
    let nf = n_freq(p);
    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut scatter = String::from("embedding,trial,freq,initial_signal,initial_gradient,survived\n");
    let (mut xs, mut ys, mut gs) = (Vec::new(), Vec::new(), Vec::new());
    for cell in result.cells.clone() {
        let members: Vec<&RunSummary> = result.rows_in(&cell).map(|(_, r)| r).collect();
        let records: Vec<_> = members.iter().map(|r| r.survival.clone()).collect();
        let rates = survival_rates(&records)?;
        let init = members[0].initial_signals().to_vec();
        let mut grad_mean = vec![0.0; nf];
        for (t, run) in members.iter().enumerate() {
            let g = initial_gradient_signal(&run.trajectory, gstep)?;
            for k in 0..nf {
                grad_mean[k] += g[k] / members.len() as f64;
                features.push(vec![run.initial_signals()[k], g[k]]);
                labels.push(run.survival.survived[k]);
                let _ = writeln!(
                    scatter,
                    "{cell},{t},{},{:e},{:e},{}",
                    k + 1,
                    run.initial_signals()[k],
                    g[k],
                    u8::from(run.survival.survived[k])
                );
            }
        }
        for k in 0..nf {
            xs.push(init[k]);
            ys.push(rates[k].rate);
            gs.push(grad_mean[k]);
        }
        if let Some(dir) = store.protocol_dir(Protocol::FitnessStats.name()) {
            write(&dir.join(&cell).join("survival_summary.csv"), &survival_summary_csv(&rates, &init, &grad_mean))?;
        }
    }
    if let Some(dir) = store.protocol_dir(Protocol::FitnessStats.name()) {
        write(&dir.join("scatter.csv"), &scatter)?;
    }
    let signal_rate = pearson(&xs, &ys)?;
    let gradient_rate = pearson(&gs, &ys)?;
    let svm = train_linear_svm(&features, &labels)?;
    let mean_of = |alive: bool| {
        let v: Vec<f64> = features.iter().zip(&labels).filter(|(_, &l)| l == alive).map(|(f, _)| f[1]).collect();
        v.iter().sum::<f64>() / v.len().max(1) as f64
    };
    result.fitness = Some(FitnessReport {
        gradient_step: gstep,
        signal_rate,
        gradient_rate,
        svm_cv_accuracy: svm.cv_accuracy,
        svm_weights: svm.weights.clone(),
        svm_bias: svm.bias,
        n_samples: features.len(),
        survived_fraction: labels.iter().filter(|&&l| l).count() as f64 / labels.len() as f64,
        mean_gradient_survived: mean_of(true),
        mean_gradient_dead: mean_of(false),
    });
    Ok(result)
}

/// ODE fits of one baseline trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdeTrialReport {
    pub cell: String,
    pub trial: usize,
    pub dense: OdeFit,
    pub lasso: OdeFit,
    pub quadratic: OdeFit,
    /// Nonzero share of the Lasso `A`.
    pub lasso_nonzero_fraction: f64,
    /// Max over the window of `‖analytic − RK4‖∞ / ‖analytic‖∞`, over the dense and Lasso fits.
    pub analytic_rk4_rel_err: f64,
    /// Step at which the quadratic model's forward simulation diverged, if it did.
    pub quadratic_diverged_at: Option<usize>,
    /// Max relative deviation of the quadratic simulation from the recording.
    pub quadratic_max_rel_err: f64,
}

/// RK4 sub-steps per training step when cross-checking the analytic solution.
const RK4_SUBSTEPS: usize = 10;

fn compare_solvers(fit: &OdeFit, x0: &[f64], span: usize) -> Result<(f64, Vec<Vec<f64>>)> {
    let sim = simulate_ode(fit, x0, span * RK4_SUBSTEPS, 1.0 / RK4_SUBSTEPS as f64)?;
    let mut worst: f64 = 0.0;
    let mut analytic = Vec::with_capacity(span + 1);
    for t in 0..=span {
        let a = analytic_solution(fit, x0, t as f64)?;
        let r = sim.row(t * RK4_SUBSTEPS);
        let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        let diff = a.iter().zip(r).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        worst = worst.max(diff / scale);
        analytic.push(a);
    }
    Ok((worst, analytic))
}

/// Dense, Lasso and quadratic ODE fits on each baseline trajectory's window.
pub fn run_ode_fit(spec: &ExperimentSpec, store: &Store, exec: Execution) -> Result<ExperimentResult> {
    check_protocol(spec, &[Protocol::OdeFit])?;
    let mut base = spec.clone();
    base.record_gradients = false;
    let plans = grid_plans(&base, false, Protocol::Baseline);
    let runs = execute_plans(&plans, store, exec)?;
    let window = Window::new(spec.window.0, spec.window.1);
    let reports = try_map_indexed(plans.len(), exec, |i| {
        let run = &runs[i];
        let dense = fit_linear_ode(&run.trajectory, window)?;
        let lasso = fit_lasso_ode(&run.trajectory, window, spec.lambda)?;
        let quadratic = fit_quadratic_ode(&run.trajectory, window)?;
        let n = dense.n_freq();
        let nonzero = lasso.a.as_slice().iter().filter(|&&v| v != 0.0).count() as f64 / (n * n) as f64;
        let w = run.trajectory.window(window.lo, window.hi);
        let x0 = w.row(0).to_vec();
        let span = w.steps().last().copied().unwrap_or(window.lo) - w.steps()[0];
        let rel_err = compare_solvers(&dense, &x0, span)?.0.max(compare_solvers(&lasso, &x0, span)?.0);
        let (diverged_at, max_rel) = match simulate_ode(&quadratic, &x0, span, 1.0) {
            Ok(sim) => {
                let mut worst: f64 = 0.0;
                for t in 0..w.len() {
                    let step = w.steps()[t] - w.steps()[0];
                    let actual = w.row(t);
                    let scale = actual.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
                    let diff = sim.row(step).iter().zip(actual).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
                    worst = worst.max(diff / scale);
                }
                (None, worst)
            }
            Err(Error::Numeric(msg)) => {
                let at = msg.rsplit(' ').next().and_then(|s| s.parse().ok());
                (at.or(Some(span)), f64::INFINITY)
            }
            Err(e) => return Err(e),
        };
        Ok::<_, Error>(OdeTrialReport {
            cell: plans[i].cell.clone(),
            trial: plans[i].trial,
            dense,
            lasso,
            quadratic,
            lasso_nonzero_fraction: nonzero,
            analytic_rk4_rel_err: rel_err,
            quadratic_diverged_at: diverged_at,
            quadratic_max_rel_err: max_rel,
        })
    })?;
    let mut i = 0;
    let mut result = finish(spec, &plans, runs.clone(), |_, _, m| {
        let r = &reports[i];
        i += 1;
        m.insert("r2_dense".into(), r.dense.mean_r2);
        m.insert("r2_lasso".into(), r.lasso.mean_r2);
        m.insert("r2_quadratic".into(), r.quadratic.mean_r2);
        if let Some(h) = r.quadratic.heldout_mean_r2() {
            m.insert("r2_quadratic_heldout".into(), h);
        }
        m.insert("lasso_nonzero_fraction".into(), r.lasso_nonzero_fraction);
        m.insert("analytic_rk4_rel_err".into(), r.analytic_rk4_rel_err);
        m.insert("quadratic_diverged".into(), f64::from(u8::from(r.quadratic_diverged_at.is_some())));
        Ok(())
    })?;
    if let Some(dir) = store.protocol_dir(Protocol::OdeFit.name()) {
        for (r, run) in reports.iter().zip(&runs) {
            let tdir = dir.join(&r.cell).join(format!("trial_{:03}", r.trial));
            write(&tdir.join("fit_dense.json"), &r.dense.to_json()?)?;
            write(&tdir.join("fit_lasso.json"), &r.lasso.to_json()?)?;
            write(&tdir.join("fit_quadratic.json"), &r.quadratic.to_json()?)?;
            write(&tdir.join("heatmap_dense.csv"), &r.dense.heatmap_csv())?;
            write(&tdir.join("heatmap_lasso.csv"), &r.lasso.heatmap_csv())?;
            write(&tdir.join("estimated.csv"), &estimated_csv(run, r, window)?)?;
        }
    }
    result.ode = reports;
    Ok(result)
}

/// Recorded vs analytically propagated signals: `step,freq,actual,dense,lasso`.
fn estimated_csv(run: &RunSummary, r: &OdeTrialReport, window: Window) -> Result<String> {
    let w = run.trajectory.window(window.lo, window.hi);
    let x0 = w.row(0).to_vec();
    let t0 = w.steps()[0];
    let mut out = String::from("step,freq,actual,dense,lasso\n");
    for (t, &step) in w.steps().iter().enumerate() {
        let dense = analytic_solution(&r.dense, &x0, (step - t0) as f64)?;
        let lasso = analytic_solution(&r.lasso, &x0, (step - t0) as f64)?;
        for (k, actual) in w.row(t).iter().enumerate() {
            let _ = writeln!(out, "{step},{},{actual:e},{:e},{:e}", k + 1, dense[k], lasso[k]);
        }
    }
    Ok(out)
}
