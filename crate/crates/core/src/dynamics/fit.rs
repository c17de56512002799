use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::linalg::{Cholesky, Matrix};
use crate::par::{try_map_indexed, Execution};
use crate::{Error, Result};

use super::SignalTrajectory;

/// Ridge added to the (column-equilibrated) normal equations.
pub const RIDGE_JITTER: f64 = 1e-12;
pub const LASSO_TOL: f64 = 1e-10;
pub const LASSO_MAX_SWEEPS: usize = 100_000;
/// Default Lasso penalty as a fraction of the per-target `max|Xᵀy|`.
pub const LASSO_DEFAULT_FRACTION: f64 = 1e-3;
/// Chronological share of the window held out when scoring quadratic fits.
pub const QUADRATIC_HOLDOUT: f64 = 0.2;

/// Inclusive step range `[lo, hi]` used for fitting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub lo: usize,
    pub hi: usize,
}

impl Window {
    pub const fn new(lo: usize, hi: usize) -> Self {
        Window { lo, hi }
    }
}

impl Default for Window {
    fn default() -> Self {
        Window { lo: 0, hi: 1000 }
    }
}

/// Forward-difference samples: row `t` of `dxdt` is `(x[t+1] − x[t]) / Δstep`,
/// paired with row `t` of `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct Derivatives {
    pub steps: Vec<usize>,
    pub x: Matrix,
    pub dxdt: Matrix,
}

impl Derivatives {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    fn rows(&self, range: std::ops::Range<usize>) -> Derivatives {
        let n = self.x.cols();
        let pick = |m: &Matrix| {
            Matrix::from_vec(range.len(), n, m.as_slice()[range.start * n..range.end * n].to_vec())
        };
        Derivatives {
            steps: self.steps[range.clone()].to_vec(),
            x: pick(&self.x),
            dxdt: pick(&self.dxdt),
        }
    }
}

pub fn trajectory_derivatives(traj: &SignalTrajectory, window: Window) -> Result<Derivatives> {
    let w = traj.window(window.lo, window.hi);
    if w.len() < 3 {
        return Err(Error::domain(format!(
            "window [{}, {}] covers {} recorded steps; need at least 3",
            window.lo,
            window.hi,
            w.len()
        )));
    }
    let steps = w.steps();
    let dt = steps[1] - steps[0];
    if let Some(pair) = steps.windows(2).find(|p| p[1] - p[0] != dt) {
        return Err(Error::domain(format!(
            "non-uniform step spacing in window: {} -> {} (expected spacing {dt})",
            pair[0], pair[1]
        )));
    }
    let n = w.n_freq();
    let t = w.len() - 1;
    let mut x = Matrix::zeros(t, n);
    let mut dxdt = Matrix::zeros(t, n);
    for i in 0..t {
        let (cur, next) = (w.row(i), w.row(i + 1));
        x.row_mut(i).copy_from_slice(cur);
        for (d, (a, b)) in dxdt.row_mut(i).iter_mut().zip(next.iter().zip(cur)) {
            *d = (a - b) / dt as f64;
        }
    }
    Ok(Derivatives {
        steps: steps[..t].to_vec(),
        x,
        dxdt,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OdeMethod {
    Dense,
    Lasso,
    Quadratic,
}

/// Fitted vector field `dx_i/dt = b_i + Σ_j α_ij x_j (+ xᵀ Q_i x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdeFit {
    pub method: OdeMethod,
    /// `α`: `N_c × N_c`, row `i` drives frequency `i + 1`.
    pub a: Matrix,
    pub b: Vec<f64>,
    /// Penalty per target (zeros for unpenalized fits).
    pub lambda: Vec<f64>,
    #[serde(with = "r2_serde")]
    pub r2: Vec<f64>,
    #[serde(with = "r2_serde::scalar")]
    pub mean_r2: f64,
    /// Quadratic fits: symmetric `Q_i` per target, so the two-body term is `xᵀ Q_i x`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<Vec<Matrix>>,
    #[serde(default, skip_serializing_if = "Option::is_none", with = "r2_serde::option")]
    pub heldout_r2: Option<Vec<f64>>,
    pub window: Window,
}

impl OdeFit {
    /// A linear field with given coefficients and no fit statistics.
    pub fn linear(a: Matrix, b: Vec<f64>) -> Result<Self> {
        if !a.is_square() || a.rows() != b.len() {
            return Err(Error::domain(format!(
                "A is {}x{} but b has {} entries",
                a.rows(),
                a.cols(),
                b.len()
            )));
        }
        let n = b.len();
        Ok(OdeFit {
            method: OdeMethod::Dense,
            a,
            b,
            lambda: vec![0.0; n],
            r2: vec![1.0; n],
            mean_r2: 1.0,
            beta: None,
            heldout_r2: None,
            window: Window::default(),
        })
    }

    pub fn n_freq(&self) -> usize {
        self.b.len()
    }

    pub fn is_linear(&self) -> bool {
        self.method != OdeMethod::Quadratic
    }

    /// `dx/dt` at `x`.
    pub fn field(&self, x: &[f64], out: &mut [f64]) {
        let n = self.n_freq();
        for i in 0..n {
            let mut v = self.b[i] + self.a.row(i).iter().zip(x).map(|(a, x)| a * x).sum::<f64>();
            if let Some(beta) = &self.beta {
                let q = &beta[i];
                for j in 0..n {
                    v += x[j] * q.row(j).iter().zip(x).map(|(a, x)| a * x).sum::<f64>();
                }
            }
            out[i] = v;
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::numeric(format!("serializing fit: {e}")))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::domain(format!("parsing fit: {e}")))
    }

    /// Coefficient heatmap CSV `i,j,alpha` with 1-based frequency indices.
    pub fn heatmap_csv(&self) -> String {
        let mut out = String::from("i,j,alpha\n");
        for i in 0..self.a.rows() {
            for j in 0..self.a.cols() {
                let _ = writeln!(out, "{},{},{:e}", i + 1, j + 1, self.a[(i, j)]);
            }
        }
        out
    }
}

/// R² values that may be the `−∞` "undefined" sentinel; serialized as the
/// string `"undefined"`.
mod r2_serde {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum R2 {
        Value(f64),
        Undefined(String),
    }

    fn wrap(x: f64) -> R2 {
        if x.is_finite() {
            R2::Value(x)
        } else {
            R2::Undefined("undefined".into())
        }
    }

    fn unwrap(r: R2) -> f64 {
        match r {
            R2::Value(x) => x,
            R2::Undefined(_) => f64::NEG_INFINITY,
        }
    }

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        v.iter().map(|&x| wrap(x)).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        Ok(Vec::<R2>::deserialize(d)?.into_iter().map(unwrap).collect())
    }

    pub mod scalar {
        use super::*;

        pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
            wrap(*v).serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
            Ok(unwrap(R2::deserialize(d)?))
        }
    }

    pub mod option {
        use super::*;

        pub fn serialize<S: Serializer>(v: &Option<Vec<f64>>, s: S) -> Result<S::Ok, S::Error> {
            v.as_ref().map(|v| v.iter().map(|&x| wrap(x)).collect::<Vec<_>>()).serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Vec<f64>>, D::Error> {
            Ok(Option::<Vec<R2>>::deserialize(d)?.map(|v| v.into_iter().map(unwrap).collect()))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RSquared {
    pub per_series: Vec<f64>,
    /// Mean over series whose R² is defined; `−∞` if none is.
    pub mean: f64,
}

/// `1 − SSR/SST` per column. A zero-variance column scores 1 when matched
/// exactly and `−∞` ("undefined") otherwise.
pub fn r_squared(pred: &Matrix, actual: &Matrix) -> RSquared {
    assert_eq!(pred.shape(), actual.shape(), "r_squared shape mismatch");
    let (t, n) = actual.shape();
    let per_series: Vec<f64> = (0..n)
        .map(|j| {
            let mean = (0..t).map(|i| actual[(i, j)]).sum::<f64>() / t as f64;
            let sst: f64 = (0..t).map(|i| (actual[(i, j)] - mean).powi(2)).sum();
            let ssr: f64 = (0..t).map(|i| (pred[(i, j)] - actual[(i, j)]).powi(2)).sum();
            if sst > 0.0 {
                1.0 - ssr / sst
            } else if ssr == 0.0 {
                1.0
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect();
    RSquared {
        mean: defined_mean(&per_series),
        per_series,
    }
}

fn defined_mean(v: &[f64]) -> f64 {
    let defined: Vec<f64> = v.iter().copied().filter(|x| x.is_finite()).collect();
    if defined.is_empty() {
        f64::NEG_INFINITY
    } else {
        defined.iter().sum::<f64>() / defined.len() as f64
    }
}

/// Least squares of every column of `y` on the columns of `design`, sharing
/// one factorization. Columns are equilibrated before forming the normal
/// equations.
fn least_squares(design: &Matrix, y: &Matrix) -> Result<Matrix> {
    let (t, m) = design.shape();
    let scale: Vec<f64> = (0..m)
        .map(|j| {
            let rms = ((0..t).map(|i| design[(i, j)].powi(2)).sum::<f64>() / t as f64).sqrt();
            if rms > 0.0 {
                rms
            } else {
                1.0
            }
        })
        .collect();
    let d = Matrix::from_fn(t, m, |i, j| design[(i, j)] / scale[j]);
    let dt = d.transpose();
    let g = dt.matmul(&d).scale(1.0 / t as f64);
    let chol = Cholesky::factor(&g, RIDGE_JITTER)?;
    let rhs = dt.matmul(y).scale(1.0 / t as f64);
    let mut coef = Matrix::zeros(m, y.cols());
    for k in 0..y.cols() {
        let sol = chol.solve(&rhs.column(k));
        for j in 0..m {
            coef[(j, k)] = sol[j] / scale[j];
        }
    }
    Ok(coef)
}

fn with_intercept(x: &Matrix) -> Matrix {
    let (t, n) = x.shape();
    Matrix::from_fn(t, n + 1, |i, j| if j < n { x[(i, j)] } else { 1.0 })
}

fn check_samples(d: &Derivatives, features: usize) -> Result<()> {
    if d.len() <= features {
        return Err(Error::domain(format!(
            "{} derivative samples for {} unknowns per target; the fit is underdetermined",
            d.len(),
            features
        )));
    }
    Ok(())
}

/// Dense linear fit `dx/dt = Ax + b` by ordinary least squares per target.
pub fn fit_linear_ode(traj: &SignalTrajectory, window: Window) -> Result<OdeFit> {
    let d = trajectory_derivatives(traj, window)?;
    let n = d.x.cols();
    check_samples(&d, n + 1)?;
    let design = with_intercept(&d.x);
    let coef = least_squares(&design, &d.dxdt)?;
    let a = Matrix::from_fn(n, n, |i, j| coef[(j, i)]);
    let b: Vec<f64> = (0..n).map(|i| coef[(n, i)]).collect();
    let r2 = r_squared(&design.matmul(&coef), &d.dxdt);
    Ok(OdeFit {
        method: OdeMethod::Dense,
        a,
        b,
        lambda: vec![0.0; n],
        r2: r2.per_series,
        mean_r2: r2.mean,
        beta: None,
        heldout_r2: None,
        window,
    })
}

/// Result of one coordinate-descent solve.
#[derive(Debug, Clone)]
pub struct LassoPath {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub sweeps: usize,
    /// False when the sweep cap stopped the solve before the tolerance.
    pub converged: bool,
    /// Objective `½‖y − Xw − b‖² + λ‖w‖₁` after every sweep.
    pub objective: Vec<f64>,
}

fn column_stats(x: &Matrix) -> (Vec<f64>, Vec<f64>) {
    let (t, n) = x.shape();
    let mean: Vec<f64> = (0..n).map(|j| (0..t).map(|i| x[(i, j)]).sum::<f64>() / t as f64).collect();
    let std = (0..n)
        .map(|j| ((0..t).map(|i| (x[(i, j)] - mean[j]).powi(2)).sum::<f64>() / t as f64).sqrt())
        .collect();
    (mean, std)
}

/// `max_j |x_jᵀ(y − ȳ)|`: the smallest penalty that zeroes every coefficient.
pub fn lasso_lambda_max(x: &Matrix, y: &[f64]) -> f64 {
    let t = y.len() as f64;
    let ybar = y.iter().sum::<f64>() / t;
    (0..x.cols())
        .map(|j| {
            y.iter()
                .enumerate()
                .map(|(i, yi)| x[(i, j)] * (yi - ybar))
                .sum::<f64>()
                .abs()
        })
        .fold(0.0, f64::max)
}

/// Default penalty `LASSO_DEFAULT_FRACTION · max_j |x_jᵀy|` on the raw data.
pub fn default_lasso_lambda(x: &Matrix, y: &[f64]) -> f64 {
    let raw = (0..x.cols())
        .map(|j| y.iter().enumerate().map(|(i, yi)| x[(i, j)] * yi).sum::<f64>().abs())
        .fold(0.0, f64::max);
    LASSO_DEFAULT_FRACTION * raw
}

/// Cyclic coordinate descent for `½‖y − Xw − b‖² + λ‖w‖₁` (intercept free).
///
/// Works on standardized columns and target; the penalty is mapped so that the
/// returned weights solve the problem as stated in raw units.
pub fn lasso_regression(x: &Matrix, y: &[f64], lambda: f64) -> Result<LassoPath> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::domain(format!("lambda must be finite and >= 0 (got {lambda})")));
    }
    let (t, n) = x.shape();
    assert_eq!(t, y.len());
    let tf = t as f64;
    let (mu, sigma) = column_stats(x);
    let ybar = y.iter().sum::<f64>() / tf;
    let sy = (y.iter().map(|v| (v - ybar).powi(2)).sum::<f64>() / tf).sqrt();
    if sy == 0.0 {
        return Ok(LassoPath {
            weights: vec![0.0; n],
            intercept: ybar,
            sweeps: 0,
            converged: true,
            objective: vec![0.0],
        });
    }
    let active: Vec<usize> = (0..n).filter(|&j| sigma[j] > 0.0).collect();
    let z = |i: usize, j: usize| (x[(i, j)] - mu[j]) / sigma[j];
    let m = active.len();
    // Gram form: G = X̃ᵀX̃/t, c = X̃ᵀỹ/t.
    let mut g = Matrix::zeros(m, m);
    let mut c = vec![0.0; m];
    for i in 0..t {
        let row: Vec<f64> = active.iter().map(|&j| z(i, j)).collect();
        let yi = (y[i] - ybar) / sy;
        for a in 0..m {
            c[a] += row[a] * yi;
            for b in a..m {
                g[(a, b)] += row[a] * row[b];
            }
        }
    }
    for a in 0..m {
        c[a] /= tf;
        for b in a..m {
            g[(a, b)] /= tf;
            g[(b, a)] = g[(a, b)];
        }
    }
    let pen: Vec<f64> = active.iter().map(|&j| lambda / (tf * sy * sigma[j])).collect();
    // Raw objective = t·σ_y² · scaled objective.
    let raw = t as f64 * sy * sy;
    let objective_of = |w: &[f64]| {
        let quad: f64 = (0..m).map(|a| w[a] * (0..m).map(|b| g[(a, b)] * w[b]).sum::<f64>()).sum();
        let lin: f64 = w.iter().zip(&c).map(|(a, b)| a * b).sum();
        let l1: f64 = w.iter().zip(&pen).map(|(a, p)| a.abs() * p).sum();
        raw * (0.5 * (1.0 - 2.0 * lin + quad) + l1)
    };

    let mut w = vec![0.0; m];
    let mut objective = Vec::new();
    let mut sweeps = 0;
    let mut converged = m == 0;
    if m == 0 {
        objective.push(objective_of(&w));
    }
    while !converged && sweeps < LASSO_MAX_SWEEPS {
        sweeps += 1;
        let mut max_change: f64 = 0.0;
        for a in 0..m {
            let rho = c[a] - (0..m).filter(|&b| b != a).map(|b| g[(a, b)] * w[b]).sum::<f64>();
            let new = if rho.abs() <= pen[a] * (1.0 + 1e-12) {
                0.0
            } else {
                (rho - pen[a] * rho.signum()) / g[(a, a)]
            };
            max_change = max_change.max((new - w[a]).abs());
            w[a] = new;
        }
        let f = objective_of(&w);
        if let Some(&prev) = objective.last() {
            debug_assert!(
                f <= prev + 1e-10 * raw,
                "lasso objective increased at sweep {sweeps}: {prev} -> {f}"
            );
        }
        objective.push(f);
        converged = max_change < LASSO_TOL;
    }
    if !converged {
        log::warn!("lasso coordinate descent stopped at the {sweeps}-sweep cap before reaching tolerance");
    }
    let mut weights = vec![0.0; n];
    for (a, &j) in active.iter().enumerate() {
        weights[j] = w[a] * sy / sigma[j];
    }
    let intercept = ybar - weights.iter().zip(&mu).map(|(w, m)| w * m).sum::<f64>();
    Ok(LassoPath {
        weights,
        intercept,
        sweeps,
        converged,
        objective,
    })
}

/// Sparse linear fit by Lasso per target. `lambda = None` uses
/// `1e-3 · max_j |x_jᵀ dx_i/dt|` for each target `i`.
pub fn fit_lasso_ode(traj: &SignalTrajectory, window: Window, lambda: Option<f64>) -> Result<OdeFit> {
    fit_lasso_ode_with(traj, window, lambda, Execution::default())
}

pub fn fit_lasso_ode_with(
    traj: &SignalTrajectory,
    window: Window,
    lambda: Option<f64>,
    exec: Execution,
) -> Result<OdeFit> {
    let d = trajectory_derivatives(traj, window)?;
    let n = d.x.cols();
    check_samples(&d, n + 1)?;
    let paths = try_map_indexed(n, exec, |i| {
        let y = d.dxdt.column(i);
        let lam = lambda.unwrap_or_else(|| default_lasso_lambda(&d.x, &y));
        lasso_regression(&d.x, &y, lam).map(|p| (lam, p))
    })?;
    let mut a = Matrix::zeros(n, n);
    let mut b = vec![0.0; n];
    let mut lambdas = vec![0.0; n];
    for (i, (lam, path)) in paths.into_iter().enumerate() {
        a.row_mut(i).copy_from_slice(&path.weights);
        b[i] = path.intercept;
        lambdas[i] = lam;
    }
    let pred = Matrix::from_fn(d.len(), n, |t, i| {
        b[i] + a.row(i).iter().zip(d.x.row(t)).map(|(c, x)| c * x).sum::<f64>()
    });
    let r2 = r_squared(&pred, &d.dxdt);
    Ok(OdeFit {
        method: OdeMethod::Lasso,
        a,
        b,
        lambda: lambdas,
        r2: r2.per_series,
        mean_r2: r2.mean,
        beta: None,
        heldout_r2: None,
        window,
    })
}

fn quadratic_design(x: &Matrix) -> Matrix {
    let (t, n) = x.shape();
    let m = n + n * (n + 1) / 2 + 1;
    let mut out = Matrix::zeros(t, m);
    for i in 0..t {
        let row = x.row(i);
        let dst = out.row_mut(i);
        dst[..n].copy_from_slice(row);
        let mut col = n;
        for j in 0..n {
            for k in j..n {
                dst[col] = row[j] * row[k];
                col += 1;
            }
        }
        dst[m - 1] = 1.0;
    }
    out
}

/// Linear plus pairwise-product least squares. The fit uses the first 80% of
/// the window's derivative samples; the rest scores out-of-window R².
pub fn fit_quadratic_ode(traj: &SignalTrajectory, window: Window) -> Result<OdeFit> {
    let d = trajectory_derivatives(traj, window)?;
    let n = d.x.cols();
    let n_fit = ((d.len() as f64) * (1.0 - QUADRATIC_HOLDOUT)).round() as usize;
    let fit = d.rows(0..n_fit.max(1));
    let held = d.rows(n_fit.min(d.len())..d.len());
    let unknowns = n + n * (n + 1) / 2 + 1;
    if fit.len() <= unknowns {
        log::warn!(
            "quadratic fit is underdetermined: {} samples for {} unknowns per target",
            fit.len(),
            unknowns
        );
    }
    let design = quadratic_design(&fit.x);
    let coef = least_squares(&design, &fit.dxdt)?;
    let a = Matrix::from_fn(n, n, |i, j| coef[(j, i)]);
    let b: Vec<f64> = (0..n).map(|i| coef[(unknowns - 1, i)]).collect();
    let beta: Vec<Matrix> = (0..n)
        .map(|i| {
            let mut q = Matrix::zeros(n, n);
            let mut col = n;
            for j in 0..n {
                for k in j..n {
                    let c = coef[(col, i)];
                    if j == k {
                        q[(j, j)] = c;
                    } else {
                        q[(j, k)] = c / 2.0;
                        q[(k, j)] = c / 2.0;
                    }
                    col += 1;
                }
            }
            q
        })
        .collect();
    let r2 = r_squared(&design.matmul(&coef), &fit.dxdt);
    let heldout_r2 = (held.len() >= 2).then(|| {
        let pred = quadratic_design(&held.x).matmul(&coef);
        r_squared(&pred, &held.dxdt).per_series
    });
    Ok(OdeFit {
        method: OdeMethod::Quadratic,
        a,
        b,
        lambda: vec![0.0; n],
        r2: r2.per_series,
        mean_r2: r2.mean,
        beta: Some(beta),
        heldout_r2,
        window,
    })
}

impl OdeFit {
    pub fn heldout_mean_r2(&self) -> Option<f64> {
        self.heldout_r2.as_deref().map(defined_mean)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::matrix_exponential;
    use crate::rng::SplitMix64;

    fn traj_from(steps: impl IntoIterator<Item = usize>, f: impl Fn(usize) -> Vec<f64>) -> SignalTrajectory {
        let steps: Vec<usize> = steps.into_iter().collect();
        let mut t = SignalTrajectory::new(f(steps[0]).len());
        for s in steps {
            t.push(s, &f(s)).unwrap();
        }
        t
    }

    #[test]
    fn derivative_examples() {
        let flat = traj_from(0..=10, |_| vec![2.0, 5.0]);
        let d = trajectory_derivatives(&flat, Window::new(0, 10)).unwrap();
        assert_eq!(d.len(), 10);
        assert!(d.dxdt.as_slice().iter().all(|&v| v == 0.0));

        let ramp = traj_from(0..=20, |t| vec![3.0 * t as f64]);
        let d = trajectory_derivatives(&ramp, Window::new(0, 20)).unwrap();
        assert!(d.dxdt.as_slice().iter().all(|&v| v == 3.0));

        let decay = traj_from(0..=1000, |t| vec![(-0.01 * t as f64).exp()]);
        let d = trajectory_derivatives(&decay, Window::default()).unwrap();
        for i in 0..d.len() {
            let want = -0.01 * d.x[(i, 0)];
            assert!((d.dxdt[(i, 0)] - want).abs() <= 1e-2 * want.abs());
        }

        let sparse = traj_from([0, 1, 2, 4, 5], |t| vec![t as f64]);
        assert!(trajectory_derivatives(&sparse, Window::new(0, 5)).unwrap_err().is_domain());
        // Uniform coarse spacing is fine and scaled by the step.
        let coarse = traj_from((0..=5).map(|i| 100 * i), |t| vec![2.0 * t as f64]);
        let d = trajectory_derivatives(&coarse, Window::new(0, 500)).unwrap();
        assert!(d.dxdt.as_slice().iter().all(|&v| (v - 2.0).abs() < 1e-12));
        assert!(trajectory_derivatives(&coarse, Window::new(0, 100)).is_err());
    }

    #[test]
    fn r_squared_examples() {
        let actual = Matrix::from_vec(3, 1, vec![1.0, 2.0, 6.0]);
        assert_eq!(r_squared(&actual, &actual).mean, 1.0);
        let mean = Matrix::from_vec(3, 1, vec![3.0; 3]);
        assert_eq!(r_squared(&mean, &actual).per_series[0], 0.0);
        // Offset by c = 0.5: SST = 4 + 1 + 9 = 14, R² = 1 − 3·0.25/14.
        let off = Matrix::from_vec(3, 1, vec![1.5, 2.5, 6.5]);
        assert!((r_squared(&off, &actual).per_series[0] - (1.0 - 0.75 / 14.0)).abs() < 1e-15);

        let flat = Matrix::from_vec(2, 2, vec![1.0, 4.0, 1.0, 5.0]);
        let exact = r_squared(&flat, &flat);
        assert_eq!(exact.per_series[0], 1.0);
        let miss = Matrix::from_vec(2, 2, vec![2.0, 4.0, 2.0, 5.0]);
        let r = r_squared(&miss, &flat);
        assert_eq!(r.per_series[0], f64::NEG_INFINITY);
        assert_eq!(r.mean, 1.0);
    }

    /// `A*` with small entries and a stable diagonal.
    fn synthetic_system(n: usize, seed: u64) -> (Matrix, Vec<f64>) {
        let mut rng = SplitMix64::new(seed);
        let a = Matrix::from_fn(n, n, |i, j| {
            let v = 0.004 * rng.normal();
            if i == j {
                v - 0.02
            } else {
                v
            }
        });
        let b: Vec<f64> = (0..n).map(|_| 0.05 * rng.normal().abs()).collect();
        (a, b)
    }

    /// Exact propagation `x(t+1) = e^{A}x(t) + (e^{A} − I)A⁻¹b`.
    fn propagate(a: &Matrix, b: &[f64], x0: &[f64], steps: usize) -> SignalTrajectory {
        let n = b.len();
        let e = matrix_exponential(a, 1.0).unwrap();
        let ainv_b = crate::linalg::Lu::factor(a).unwrap().solve(b);
        let mut x = x0.to_vec();
        let mut traj = SignalTrajectory::new(n);
        for s in 0..=steps {
            traj.push(s, &x).unwrap();
            let ex = e.matvec(&x);
            let eb = e.matvec(&ainv_b);
            x = (0..n).map(|i| ex[i] + eb[i] - ainv_b[i]).collect();
        }
        traj
    }

    #[test]
    fn linear_fit_recovers_synthetic_system() {
        let (a, b) = synthetic_system(5, 3);
        let x0 = [5.0, 1.0, 3.0, 0.5, 2.0];
        let traj = propagate(&a, &b, &x0, 400);
        let fit = fit_linear_ode(&traj, Window::new(0, 400)).unwrap();
        assert!(fit.a.sub(&a).max_abs() < 1e-3, "gap {}", fit.a.sub(&a).max_abs());
        assert!(fit.mean_r2 > 0.999);
        assert_eq!(fit.method, OdeMethod::Dense);
    }

    #[test]
    fn linear_fit_of_static_trajectory() {
        let traj = traj_from(0..=50, |t| vec![1.0 + (t as f64 * 0.3).sin(), 2.0 + (t as f64 * 0.7).cos()]);
        let stat = traj_from(0..=50, |_| vec![1.0, 2.0]);
        assert!(fit_linear_ode(&traj, Window::new(0, 50)).is_ok());
        // Constant columns are collinear with the intercept; the jitter keeps it solvable.
        let fit = fit_linear_ode(&stat, Window::new(0, 50)).unwrap();
        assert!(fit.a.max_abs() < 1e-9 && fit.b.iter().all(|v| v.abs() < 1e-9));
        assert_eq!(fit.r2, vec![1.0, 1.0]);
    }

    #[test]
    fn too_few_samples_is_a_domain_error() {
        let traj = traj_from(0..=4, |t| vec![t as f64, 1.0, 2.0, (t * t) as f64]);
        assert!(fit_linear_ode(&traj, Window::new(0, 4)).unwrap_err().is_domain());
    }

    fn random_design(t: usize, n: usize, seed: u64) -> (Matrix, Vec<f64>) {
        let mut rng = SplitMix64::new(seed);
        let x = Matrix::from_fn(t, n, |_, j| rng.normal() * (1.0 + j as f64) + j as f64);
        let w: Vec<f64> = (0..n).map(|j| if j % 3 == 0 { 1.5 } else { -0.25 }).collect();
        let y = (0..t)
            .map(|i| 0.7 + x.row(i).iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + 0.1 * rng.normal())
            .collect();
        (x, y)
    }

    #[test]
    fn lasso_without_penalty_matches_least_squares() {
        let (x, y) = random_design(200, 6, 9);
        let path = lasso_regression(&x, &y, 0.0).unwrap();
        let coef = least_squares(&with_intercept(&x), &Matrix::from_vec(200, 1, y.clone())).unwrap();
        for j in 0..6 {
            assert!((path.weights[j] - coef[(j, 0)]).abs() < 1e-6);
        }
        assert!((path.intercept - coef[(6, 0)]).abs() < 1e-6);
        assert!(path.objective.windows(2).all(|w| w[1] <= w[0] + 1e-9 * w[0].abs()));
    }

    #[test]
    fn lasso_full_shrinkage_threshold() {
        let (x, y) = random_design(100, 4, 2);
        let lam = lasso_lambda_max(&x, &y);
        let path = lasso_regression(&x, &y, lam).unwrap();
        assert!(path.weights.iter().all(|&w| w == 0.0));
        let ybar = y.iter().sum::<f64>() / y.len() as f64;
        assert!((path.intercept - ybar).abs() < 1e-12);
        let below = lasso_regression(&x, &y, 0.9 * lam).unwrap();
        assert!(below.weights.iter().any(|&w| w != 0.0));
        assert!(lasso_regression(&x, &y, -1.0).unwrap_err().is_domain());
    }

    #[test]
    fn lasso_recovers_sparse_support() {
        let n = 20;
        let t = 400;
        let mut rng = SplitMix64::new(77);
        let x = Matrix::from_fn(t, n, |_, _| rng.normal());
        let support = [2usize, 9, 15];
        let y: Vec<f64> = (0..t)
            .map(|i| support.iter().map(|&j| 2.0 * x[(i, j)]).sum::<f64>() + 0.5 + 0.01 * rng.normal())
            .collect();
        let lam_max = lasso_lambda_max(&x, &y);
        let mut found = false;
        for k in 0..10 {
            let lam = lam_max * 10f64.powf(-3.0 + 2.5 * k as f64 / 9.0);
            let path = lasso_regression(&x, &y, lam).unwrap();
            assert!(path.objective.windows(2).all(|w| w[1] <= w[0] + 1e-9 * w[0].abs()));
            let nz: Vec<usize> = (0..n).filter(|&j| path.weights[j] != 0.0).collect();
            found |= nz == support;
        }
        assert!(found, "support never recovered on the grid");
    }

    #[test]
    fn lasso_ode_default_penalty_is_data_scaled() {
        let (a, b) = synthetic_system(4, 8);
        let traj = propagate(&a, &b, &[4.0, 1.0, 2.0, 3.0], 300);
        let fit = fit_lasso_ode(&traj, Window::new(0, 300), None).unwrap();
        let d = trajectory_derivatives(&traj, Window::new(0, 300)).unwrap();
        for i in 0..4 {
            let y = d.dxdt.column(i);
            let raw = (0..4).map(|j| (0..y.len()).map(|r| d.x[(r, j)] * y[r]).sum::<f64>().abs()).fold(0.0, f64::max);
            let want = 1e-3 * raw;
            assert!((fit.lambda[i] - want).abs() <= 1e-12 * want);
        }
        assert_eq!(fit.method, OdeMethod::Lasso);
        assert!(fit.mean_r2 > 0.9);
        let serial = fit_lasso_ode_with(&traj, Window::new(0, 300), None, Execution::Serial).unwrap();
        assert_eq!(serial, fit);
    }

    /// Lotka-Volterra pair integrated with RK4 at dt = 1e-3 and sampled at unit steps.
    fn lotka_volterra(alpha: [f64; 2], beta: [f64; 2], steps: usize) -> SignalTrajectory {
        let field = |x: [f64; 2]| {
            [
                alpha[0] * x[0] + beta[0] * x[0] * x[1],
                alpha[1] * x[1] + beta[1] * x[0] * x[1],
            ]
        };
        let mut x = [4.0, 2.0];
        let mut traj = SignalTrajectory::new(2);
        let h = 1e-3;
        for s in 0..=steps {
            traj.push(s, &x).unwrap();
            for _ in 0..1000 {
                let k1 = field(x);
                let k2 = field([x[0] + 0.5 * h * k1[0], x[1] + 0.5 * h * k1[1]]);
                let k3 = field([x[0] + 0.5 * h * k2[0], x[1] + 0.5 * h * k2[1]]);
                let k4 = field([x[0] + h * k3[0], x[1] + h * k3[1]]);
                for i in 0..2 {
                    x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
                }
            }
        }
        traj
    }

    #[test]
    fn quadratic_fit_recovers_lotka_volterra() {
        let (alpha, beta) = ([0.002, -0.003], [-0.0005, 0.0006]);
        let traj = lotka_volterra(alpha, beta, 600);
        let fit = fit_quadratic_ode(&traj, Window::new(0, 600)).unwrap();
        let q = fit.beta.as_ref().unwrap();
        let rel = |got: f64, want: f64| (got - want).abs() / want.abs();
        assert!(rel(fit.a[(0, 0)], alpha[0]) < 1e-2, "{}", fit.a[(0, 0)]);
        assert!(rel(fit.a[(1, 1)], alpha[1]) < 1e-2, "{}", fit.a[(1, 1)]);
        // xᵀQx puts half the cross coefficient on each off-diagonal entry.
        assert!(rel(2.0 * q[0][(0, 1)], beta[0]) < 1e-2, "{}", q[0][(0, 1)]);
        assert!(rel(2.0 * q[1][(0, 1)], beta[1]) < 1e-2, "{}", q[1][(0, 1)]);
        assert!(fit.heldout_r2.is_some());
    }

    #[test]
    fn quadratic_terms_vanish_on_linear_data() {
        // A slowly decaying spiral excites the product features well.
        let a = Matrix::from_rows(&[
            vec![-0.004, 0.03, 0.0],
            vec![-0.03, -0.004, 0.01],
            vec![0.0, -0.01, -0.006],
        ]);
        let traj = propagate(&a, &[0.06, 0.03, 0.02], &[6.0, 1.0, 2.0], 800);
        let fit = fit_quadratic_ode(&traj, Window::new(0, 800)).unwrap();
        for q in fit.beta.as_ref().unwrap() {
            assert!(q.max_abs() < 1e-3, "{}", q.max_abs());
        }
    }

    #[test]
    fn json_round_trip_and_heatmap() {
        let mut fit = OdeFit::linear(Matrix::from_rows(&[vec![-1.0, 0.5], vec![0.0, -2.0]]), vec![0.1, 0.2]).unwrap();
        fit.r2 = vec![0.5, f64::NEG_INFINITY];
        let json = fit.to_json().unwrap();
        assert!(json.contains("\"undefined\""));
        let back = OdeFit::from_json(&json).unwrap();
        assert_eq!(back, fit);
        let csv = fit.heatmap_csv();
        assert_eq!(csv.lines().next(), Some("i,j,alpha"));
        assert_eq!(csv.lines().count(), 5);
        assert!(csv.contains("1,2,5e-1"));
    }
}
