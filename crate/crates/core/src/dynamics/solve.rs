use crate::linalg::{condition_estimate, Lu, Matrix};
use crate::{Error, Result};

use super::OdeFit;

/// Above this condition estimate `A⁻¹b` is not formed.
pub const ANALYTIC_COND_LIMIT: f64 = 1e12;
const DIVERGENCE_LIMIT: f64 = 1e300;
/// Scaled matrices are brought below this 1-norm before the Padé step.
const PADE_THETA: f64 = 0.5;

/// Degree-6 diagonal Padé coefficients `c_k = (12−k)!·6! / (12!·k!·(6−k)!)`.
fn pade6_coefficients() -> [f64; 7] {
    let fact = |n: u32| (1..=n).map(f64::from).product::<f64>();
    std::array::from_fn(|k| {
        let k = k as u32;
        fact(12 - k) * fact(6) / (fact(12) * fact(k) * fact(6 - k))
    })
}

/// `e^{At}` by scaling and squaring with a degree-6 Padé approximant.
pub fn matrix_exponential(a: &Matrix, t: f64) -> Result<Matrix> {
    if !a.is_square() {
        return Err(Error::domain(format!("matrix exponential of a {}x{} matrix", a.rows(), a.cols())));
    }
    if !a.is_finite() || !t.is_finite() {
        return Err(Error::domain("matrix exponential needs finite entries"));
    }
    let n = a.rows();
    let x = a.scale(t);
    let norm = x.norm_1();
    let s = if norm > PADE_THETA {
        (norm / PADE_THETA).log2().ceil() as i32
    } else {
        0
    };
    let x = x.scale(0.5f64.powi(s));
    let c = pade6_coefficients();
    let mut num = Matrix::identity(n).scale(c[0]);
    let mut den = num.clone();
    let mut power = Matrix::identity(n);
    for (k, &ck) in c.iter().enumerate().skip(1) {
        power = power.matmul(&x);
        num = num.add(&power.scale(ck));
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        den = den.add(&power.scale(sign * ck));
    }
    let mut e = Lu::factor(&den)?.solve_matrix(&num);
    for _ in 0..s {
        e = e.matmul(&e);
    }
    if !e.is_finite() {
        return Err(Error::numeric("matrix exponential overflowed"));
    }
    Ok(e)
}

/// `x(t) = e^{At}x0 + (e^{At} − I)A⁻¹b`.
///
/// When `A` is singular or its condition estimate exceeds 1e12 (Lasso fits
/// routinely zero whole rows), `∫₀ᵗ e^{As}ds·b` is read off the exponential
/// of the augmented matrix `[[A, b], [0, 0]]` instead. Regularizing with
/// `A + εI` makes `A⁻¹b` of order `b/ε` and the subtraction then cancels
/// most of the digits.
pub fn analytic_solution(fit: &OdeFit, x0: &[f64], t: f64) -> Result<Vec<f64>> {
    if !fit.is_linear() {
        return Err(Error::domain("analytic solution needs a linear (dense or lasso) fit"));
    }
    let n = fit.n_freq();
    if x0.len() != n {
        return Err(Error::domain(format!("x0 has {} entries, fit has {n}", x0.len())));
    }
    let out: Vec<f64> = if condition_estimate(&fit.a) <= ANALYTIC_COND_LIMIT {
        let lu = Lu::factor(&fit.a).map_err(|e| Error::numeric(format!("solve failed: {e}")))?;
        let ainv_b = lu.solve(&fit.b);
        let e = matrix_exponential(&fit.a, t)?;
        let ex0 = e.matvec(x0);
        let eb = e.matvec(&ainv_b);
        (0..n).map(|i| ex0[i] + eb[i] - ainv_b[i]).collect()
    } else {
        let mut aug = Matrix::zeros(n + 1, n + 1);
        for i in 0..n {
            for j in 0..n {
                aug[(i, j)] = fit.a[(i, j)];
            }
            aug[(i, n)] = fit.b[i];
        }
        let e = matrix_exponential(&aug, t)?;
        (0..n).map(|i| (0..n).map(|j| e[(i, j)] * x0[j]).sum::<f64>() + e[(i, n)]).collect()
    };
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("analytic solution is not finite"));
    }
    Ok(out)
}

/// Classical RK4 integration of the fitted field. Row `s` of the result is
/// the state after `s` steps (row 0 is `x0`).
pub fn simulate_ode(fit: &OdeFit, x0: &[f64], steps: usize, dt: f64) -> Result<Matrix> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::domain(format!("dt must be > 0 (got {dt})")));
    }
    let n = fit.n_freq();
    if x0.len() != n {
        return Err(Error::domain(format!("x0 has {} entries, fit has {n}", x0.len())));
    }
    let mut out = Matrix::zeros(steps + 1, n);
    out.row_mut(0).copy_from_slice(x0);
    let mut x = x0.to_vec();
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut tmp = vec![0.0; n];
    for s in 1..=steps {
        fit.field(&x, &mut k1);
        axpy(&x, 0.5 * dt, &k1, &mut tmp);
        fit.field(&tmp, &mut k2);
        axpy(&x, 0.5 * dt, &k2, &mut tmp);
        fit.field(&tmp, &mut k3);
        axpy(&x, dt, &k3, &mut tmp);
        fit.field(&tmp, &mut k4);
        for i in 0..n {
            x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if x.iter().any(|v| !(v.abs() <= DIVERGENCE_LIMIT)) {
            return Err(Error::numeric(format!("trajectory diverged at step {s}")));
        }
        out.row_mut(s).copy_from_slice(&x);
    }
    Ok(out)
}

fn axpy(x: &[f64], a: f64, y: &[f64], out: &mut [f64]) {
    for ((o, x), y) in out.iter_mut().zip(x).zip(y) {
        *o = x + a * y;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel_err(a: &Matrix, b: &Matrix) -> f64 {
        a.sub(b).max_abs() / b.max_abs()
    }

    #[test]
    fn exponential_oracles() {
        let z = matrix_exponential(&Matrix::zeros(3, 3), 1.0).unwrap();
        assert_eq!(z, Matrix::identity(3));
        let d = matrix_exponential(&Matrix::diag(&[2f64.ln(), -1.0]), 1.0).unwrap();
        assert!(rel_err(&d, &Matrix::diag(&[2.0, (-1f64).exp()])) < 1e-12);
        let nil = matrix_exponential(&Matrix::from_rows(&[vec![0.0, 1.0], vec![0.0, 0.0]]), 1.0).unwrap();
        assert!(nil.sub(&Matrix::from_rows(&[vec![1.0, 1.0], vec![0.0, 1.0]])).max_abs() < 1e-15);
        // Large norm: rotation by 40 radians.
        let rot = matrix_exponential(&Matrix::from_rows(&[vec![0.0, -40.0], vec![40.0, 0.0]]), 1.0).unwrap();
        let want = Matrix::from_rows(&[vec![40f64.cos(), -40f64.sin()], vec![40f64.sin(), 40f64.cos()]]);
        assert!(rel_err(&rot, &want) < 1e-9);
        let bad = Matrix::from_rows(&[vec![f64::NAN]]);
        assert!(matrix_exponential(&bad, 1.0).unwrap_err().is_domain());
    }

    #[test]
    fn analytic_examples() {
        let zero = OdeFit::linear(Matrix::zeros(2, 2), vec![0.0, 0.0]).unwrap();
        let x = analytic_solution(&zero, &[1.5, -2.0], 7.0).unwrap();
        assert!((x[0] - 1.5).abs() < 1e-6 && (x[1] + 2.0).abs() < 1e-6);

        let neg = OdeFit::linear(Matrix::identity(3).scale(-1.0), vec![0.0; 3]).unwrap();
        let x0 = [2.0, -1.0, 0.5];
        let x = analytic_solution(&neg, &x0, 3.0).unwrap();
        for (got, x0) in x.iter().zip(x0) {
            assert!((got - x0 * (-3f64).exp()).abs() < 1e-9);
        }
        let at0 = analytic_solution(&neg, &x0, 0.0).unwrap();
        assert!(at0.iter().zip(x0).all(|(a, b)| (a - b).abs() < 1e-12));

        // b ≠ 0 on a singular A: x(t) ≈ x0 + t·b.
        let drift = OdeFit::linear(Matrix::zeros(1, 1), vec![0.25]).unwrap();
        let x = analytic_solution(&drift, &[1.0], 4.0).unwrap();
        assert!((x[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn singular_systems_are_exact() {
        // x1' = 1, x2' = x1: x1 = x1₀ + t, x2 = x2₀ + x1₀·t + t²/2.
        let fit = OdeFit::linear(Matrix::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.0]]), vec![1.0, 0.0]).unwrap();
        for t in [0.0, 1.0, 37.5, 1000.0] {
            let x = analytic_solution(&fit, &[2.0, -3.0], t).unwrap();
            let want = [2.0 + t, -3.0 + 2.0 * t + 0.5 * t * t];
            for (g, w) in x.iter().zip(want) {
                assert!((g - w).abs() <= 1e-10 * w.abs().max(1.0), "t={t}: {g} vs {w}");
            }
        }
        // A zero row coupled into a decaying block, against RK4.
        let a = Matrix::from_rows(&[vec![-0.5, 0.2, 0.0], vec![0.1, -0.3, 0.4], vec![0.0, 0.0, 0.0]]);
        let fit = OdeFit::linear(a, vec![0.3, -0.1, 0.05]).unwrap();
        let x0 = [1.0, 2.0, 3.0];
        let sim = simulate_ode(&fit, &x0, 20_000, 0.05).unwrap();
        let x = analytic_solution(&fit, &x0, 1000.0).unwrap();
        let r = sim.row(20_000);
        let scale = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(x.iter().zip(r).all(|(g, w)| (g - w).abs() <= 1e-8 * scale));
    }

    #[test]
    fn rk4_scalar_decay_and_order() {
        let fit = OdeFit::linear(Matrix::from_rows(&[vec![-0.1]]), vec![0.0]).unwrap();
        let traj = simulate_ode(&fit, &[1.0], 1000, 0.01).unwrap();
        let want = (-1f64).exp();
        assert!((traj[(1000, 0)] - want).abs() <= 1e-8 * want);

        let err = |dt: f64| {
            let steps = (10.0 / dt).round() as usize;
            let fit = OdeFit::linear(Matrix::from_rows(&[vec![-1.3]]), vec![0.0]).unwrap();
            (simulate_ode(&fit, &[1.0], steps, dt).unwrap()[(steps, 0)] - (-13f64).exp()).abs()
        };
        let ratio = err(0.2) / err(0.1);
        assert!((8.0..=32.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn simulation_errors() {
        let zero = OdeFit::linear(Matrix::zeros(2, 2), vec![0.0; 2]).unwrap();
        let t = simulate_ode(&zero, &[1.0, 2.0], 5, 0.5).unwrap();
        assert!((0..6).all(|s| t.row(s) == [1.0, 2.0]));
        assert!(simulate_ode(&zero, &[1.0, 2.0], 5, 0.0).unwrap_err().is_domain());
        let blow = OdeFit::linear(Matrix::from_rows(&[vec![50.0]]), vec![0.0]).unwrap();
        let err = simulate_ode(&blow, &[1.0], 10_000, 1.0).unwrap_err();
        assert!(err.to_string().contains("trajectory diverged at step"));
    }

    #[test]
    fn analytic_agrees_with_rk4_on_stable_system() {
        let mut rng = crate::rng::SplitMix64::new(31);
        let n = 6;
        let a = Matrix::from_fn(n, n, |i, j| 0.01 * rng.normal() - if i == j { 0.03 } else { 0.0 });
        let b: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let fit = OdeFit::linear(a, b).unwrap();
        let x0: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let exact = analytic_solution(&fit, &x0, 1000.0).unwrap();
        let sim = simulate_ode(&fit, &x0, 1000, 1.0).unwrap();
        for i in 0..n {
            assert!((exact[i] - sim[(1000, i)]).abs() <= 1e-3 * exact[i].abs().max(1e-12));
        }
    }
}
