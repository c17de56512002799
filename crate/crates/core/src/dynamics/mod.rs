//! ODE system identification on per-frequency signal trajectories.

mod fit;
mod solve;
mod trajectory;

pub use fit::{
    default_lasso_lambda, fit_lasso_ode, fit_lasso_ode_with, fit_linear_ode, fit_quadratic_ode, lasso_lambda_max, lasso_regression,
    r_squared, trajectory_derivatives, Derivatives, LassoPath, OdeFit, OdeMethod, RSquared, Window,
    LASSO_DEFAULT_FRACTION, LASSO_MAX_SWEEPS, LASSO_TOL, QUADRATIC_HOLDOUT, RIDGE_JITTER,
};
pub use solve::{analytic_solution, matrix_exponential, simulate_ode, ANALYTIC_COND_LIMIT};
pub use trajectory::SignalTrajectory;
