//! Property checks shared by the proptest suite and the acceptance run.
#![allow(dead_code)]

use csl_core::dynamics::{lasso_regression, matrix_exponential};
use csl_core::fitness::survival_detect;
use csl_core::harness::{run, ExperimentSpec, Protocol, Store};
use csl_core::linalg::Matrix;
use csl_core::modmlp::{init_params, loss_and_grads, Batch, InitScheme, ModelConfig};
use csl_core::par::Execution;
use csl_core::rng::SplitMix64;
use csl_core::spectral::{dft_embedding, inverse_dft};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};

pub type Check = std::result::Result<(), TestCaseError>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(TestCaseError::fail(format!($($fmt)+)));
        }
    };
}

fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = SplitMix64::new(seed);
    Matrix::from_fn(rows, cols, |_, _| rng.normal())
}

/// Analytic gradients of a random small model vs central differences.
///
/// Coordinates whose step and half-step estimates disagree straddle a ReLU kink,
/// where no derivative exists; those are skipped, but at least 90% of the
/// probed coordinates must be smooth.
pub fn gradient_matches_fd(p: usize, d: usize, h: usize, seed: u64) -> Check {
    let cfg = ModelConfig::new(p, d, seed).with_hidden_width(h).with_init(InitScheme::Unit);
    let mut params = init_params(&cfg).unwrap();
    for (_, t) in params.tensors_mut() {
        for x in t.iter_mut() {
            *x *= 0.5;
        }
    }
    let mut pairs = Vec::new();
    for a in 0..p {
        for b in 0..p {
            pairs.push((a, b));
        }
    }
    let batch = Batch::from_pairs(&pairs, p);
    let loss = |q: &csl_core::modmlp::ModelParams| loss_and_grads(q, &batch).unwrap().0;
    let (_, g) = loss_and_grads(&params, &batch).unwrap();
    let central = |ti: usize, j: usize, h: f64| {
        let mut plus = params.clone();
        plus.tensors_mut()[ti].1[j] += h;
        let mut minus = params.clone();
        minus.tensors_mut()[ti].1[j] -= h;
        (loss(&plus) - loss(&minus)) / (2.0 * h)
    };
    let step = 1e-5;
    let mut rng = SplitMix64::new(seed ^ 0xfd);
    let (mut probed, mut smooth) = (0, 0);
    for ti in 0..7 {
        let len = params.tensors()[ti].1.len();
        for _ in 0..4 {
            let j = rng.below(len as u64) as usize;
            let fd = central(ti, j, step);
            probed += 1;
            // Smooth coordinates agree with the half-step estimate to O(h²).
            if (fd - central(ti, j, step / 2.0)).abs() > 1e-6 * fd.abs().max(1e-3) {
                continue;
            }
            smooth += 1;
            let an = g.tensors()[ti].1[j];
            let err = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
            ensure!(err < 1e-4, "tensor {ti}[{j}]: analytic {an} vs fd {fd} (rel {err:e})");
        }
    }
    ensure!(smooth * 10 >= probed * 9, "only {smooth}/{probed} probed coordinates were smooth");
    Ok(())
}

/// Inverse DFT restores the embedding and the spectrum preserves energy.
pub fn dft_round_trip_and_parseval(p: usize, d: usize, seed: u64) -> Check {
    let e = random_matrix(p, d, seed);
    let spec = dft_embedding(&e);
    let back = inverse_dft(&spec);
    let scale = e.max_abs().max(1.0);
    for (a, b) in back.as_slice().iter().zip(e.as_slice()) {
        ensure!((a - b).abs() <= 1e-9 * scale, "round trip {a} vs {b}");
    }
    let energy: f64 = e.as_slice().iter().map(|x| x * x).sum();
    let dc: f64 = spec.dc().iter().map(|x| x * x).sum();
    let nyq: f64 = spec.nyquist().map_or(0.0, |v| v.iter().map(|x| x * x).sum());
    let spectral = (dc + 2.0 * spec.signals().iter().sum::<f64>() + nyq) / p as f64;
    ensure!((energy - spectral).abs() <= 1e-9 * energy, "Parseval {energy} vs {spectral}");
    Ok(())
}

/// Per-sweep objective never increases.
pub fn lasso_objective_monotone(t: usize, n: usize, lambda_frac: f64, seed: u64) -> Check {
    let x = random_matrix(t, n, seed);
    let mut rng = SplitMix64::new(seed ^ 0x1a55);
    let w: Vec<f64> = (0..n).map(|j| if j % 3 == 0 { rng.normal() } else { 0.0 }).collect();
    let y: Vec<f64> = (0..t).map(|i| x.row(i).iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + 0.1 * rng.normal()).collect();
    let lambda = lambda_frac * csl_core::dynamics::lasso_lambda_max(&x, &y);
    let path = lasso_regression(&x, &y, lambda).unwrap();
    for pair in path.objective.windows(2) {
        ensure!(pair[1] <= pair[0] * (1.0 + 1e-10) + 1e-300, "objective rose {} -> {}", pair[0], pair[1]);
    }
    Ok(())
}

/// Gaussian elimination with partial pivoting on the centered normal equations.
fn ols_oracle(x: &Matrix, y: &[f64]) -> (Vec<f64>, f64) {
    let (t, n) = x.shape();
    let xm: Vec<f64> = (0..n).map(|j| (0..t).map(|i| x[(i, j)]).sum::<f64>() / t as f64).collect();
    let ym = y.iter().sum::<f64>() / t as f64;
    let mut a = vec![vec![0.0; n + 1]; n];
    for r in 0..n {
        for c in 0..n {
            a[r][c] = (0..t).map(|i| (x[(i, r)] - xm[r]) * (x[(i, c)] - xm[c])).sum();
        }
        a[r][n] = (0..t).map(|i| (x[(i, r)] - xm[r]) * (y[i] - ym)).sum();
    }
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            for c in col..=n {
                a[r][c] -= f * a[col][c];
            }
        }
    }
    let mut w = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * w[c]).sum();
        w[r] = (a[r][n] - s) / a[r][r];
    }
    let b = ym - xm.iter().zip(&w).map(|(m, v)| m * v).sum::<f64>();
    (w, b)
}

/// Unpenalized Lasso equals least squares.
pub fn lasso_zero_penalty_is_ols(t: usize, n: usize, seed: u64) -> Check {
    let x = random_matrix(t, n, seed);
    let mut rng = SplitMix64::new(seed ^ 0x0150);
    let y: Vec<f64> = (0..t).map(|i| x.row(i).iter().sum::<f64>() + rng.normal()).collect();
    let path = lasso_regression(&x, &y, 0.0).unwrap();
    let (w, b) = ols_oracle(&x, &y);
    for (a, o) in path.weights.iter().zip(&w) {
        ensure!((a - o).abs() <= 1e-6 * o.abs().max(1.0), "weight {a} vs OLS {o}");
    }
    ensure!((path.intercept - b).abs() <= 1e-6 * b.abs().max(1.0), "intercept {} vs {b}", path.intercept);
    Ok(())
}

fn rel_close(a: &Matrix, b: &Matrix, tol: f64) -> Check {
    let scale = b.max_abs().max(f64::MIN_POSITIVE);
    let diff = a.sub(b).max_abs();
    ensure!(diff <= tol * scale, "max diff {diff:e} vs scale {scale:e}");
    Ok(())
}

/// Identity, diagonal, nilpotent and semigroup oracles for `exp(At)`.
pub fn expm_oracles(n: usize, t: f64, s: f64, seed: u64) -> Check {
    let i = Matrix::identity(n);
    rel_close(&matrix_exponential(&Matrix::zeros(n, n), t).unwrap(), &i, 1e-8)?;
    rel_close(&matrix_exponential(&i, t).unwrap(), &i.scale(t.exp()), 1e-8)?;

    let mut rng = SplitMix64::new(seed);
    let diag: Vec<f64> = (0..n).map(|_| 2.0 * rng.normal()).collect();
    let want = Matrix::diag(&diag.iter().map(|v| (v * t).exp()).collect::<Vec<_>>());
    rel_close(&matrix_exponential(&Matrix::diag(&diag), t).unwrap(), &want, 1e-8)?;

    // Strictly upper triangular: the series terminates after n terms.
    let nil = Matrix::from_fn(n, n, |r, c| if c > r { rng.normal() } else { 0.0 });
    let mut want = Matrix::identity(n);
    let mut term = Matrix::identity(n);
    for k in 1..n {
        term = term.matmul(&nil).scale(t / k as f64);
        want = want.add(&term);
    }
    rel_close(&matrix_exponential(&nil, t).unwrap(), &want, 1e-8)?;

    let a = random_matrix(n, n, seed ^ 0xe4).scale(0.5);
    let split = matrix_exponential(&a, s).unwrap().matmul(&matrix_exponential(&a, t).unwrap());
    rel_close(&matrix_exponential(&a, s + t).unwrap(), &split, 1e-8)
}

/// Verdicts do not depend on the overall signal scale.
pub fn survival_scale_invariant(signals: &[f64], c: f64) -> Check {
    let base = survival_detect(signals).unwrap();
    let scaled: Vec<f64> = signals.iter().map(|s| s * c).collect();
    let other = survival_detect(&scaled).unwrap();
    ensure!(base.survived == other.survived, "scale {c:e} changed verdicts");
    Ok(())
}

/// Serial and parallel execution give bit-identical rows and trajectories.
pub fn harness_parallel_matches_serial(seed: u64, trials: usize, wd: f64) -> Check {
    let mut spec = ExperimentSpec::new(Protocol::WdSweep);
    spec.seed = seed;
    spec.trials = trials;
    spec.p = vec![7];
    spec.d = vec![6];
    spec.weight_decay = vec![wd, 0.0];
    spec.hidden_width = 10;
    spec.steps = 25;
    let serial = run(&spec, &Store::in_memory(), Execution::Serial).unwrap();
    let parallel = run(&spec, &Store::in_memory(), Execution::Workers(4)).unwrap();
    ensure!(serial.rows == parallel.rows, "rows differ");
    for (a, b) in serial.runs.iter().zip(&parallel.runs) {
        ensure!(a.trajectory == b.trajectory && a.final_embedding == b.final_embedding, "runs differ");
    }
    Ok(())
}

pub fn signals_strategy() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop_oneof![1e-8..1e-3f64, 1.0..1e3f64], 2..40)
}

/// Named suite of (check name, case count, runner).
pub fn suites() -> Vec<(&'static str, u32, fn(u32) -> std::result::Result<(), String>)> {
    fn go<S: Strategy>(cases: u32, s: S, f: impl Fn(S::Value) -> Check) -> std::result::Result<(), String> {
        let mut runner = TestRunner::new(Config { cases, failure_persistence: None, ..Config::default() });
        runner.run(&s, f).map_err(|e| e.to_string())
    }
    vec![
        ("gradient vs finite differences", 100, |n| {
            go(n, (3usize..10, 2usize..6, 2usize..7, any::<u64>()), |(p, d, h, s)| gradient_matches_fd(p, d, h, s))
        }),
        ("DFT round trip and Parseval", 200, |n| {
            go(n, (3usize..40, 1usize..8, any::<u64>()), |(p, d, s)| dft_round_trip_and_parseval(p, d, s))
        }),
        ("Lasso objective monotone", 64, |n| {
            go(n, (20usize..60, 2usize..10, 0.0..1.2f64, any::<u64>()), |(t, k, l, s)| lasso_objective_monotone(t, k, l, s))
        }),
        ("Lasso lambda=0 equals OLS", 64, |n| {
            go(n, (30usize..80, 1usize..8, any::<u64>()), |(t, k, s)| lasso_zero_penalty_is_ols(t, k, s))
        }),
        ("matrix exponential oracles", 64, |n| {
            go(n, (1usize..8, -2.0..2.0f64, -2.0..2.0f64, any::<u64>()), |(k, t, s, seed)| expm_oracles(k, t, s, seed))
        }),
        ("survival_detect scale invariance", 256, |n| {
            go(n, (signals_strategy(), -12.0..12.0f64), |(v, e)| survival_scale_invariant(&v, 10f64.powf(e)))
        }),
        ("harness parallel/serial equivalence", 8, |n| {
            go(n, (any::<u64>(), 1usize..4, 0.0..1.0f64), |(s, t, wd)| harness_parallel_matches_serial(s, t, wd))
        }),
    ]
}
