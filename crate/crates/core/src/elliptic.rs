//! Zero-mean Neumann Poisson solves and the constants derived from them.
//!
//! The dual potential of a density deviation is the zero-mean solution of
//!
//! ```text
//! -laplacian(P) = u - mean(u),    <P> = 0,
//! ```
//!
//! computed with conjugate gradients projected onto the zero-mean subspace
//! at every iteration; the operator needs no assembled matrix. The discrete
//! Poincare constant comes from the smallest nonzero eigenvalue of the
//! zero-flux Laplacian on a tensor grid, which separates per axis:
//!
//! ```text
//! lambda_1 = min_k (4 / h_k^2) sin^2(pi / (2 N_k)),    c_1 = lambda_1^(-1/2),
//! ```
//!
//! making `l2(z - <z>) <= c_1 * grad_l2(z)` an exact discrete inequality.

use std::sync::Arc;

use crate::error::Error;
use crate::grid::{self, Field, Grid};
use crate::linsolve;
use crate::motility::Motility;

/// Relative slack allowed between `mean(rhs)` and zero before a pure
/// Neumann solve is rejected as incompatible.
const MEAN_COMPAT_REL: f64 = 1e-10;

/// Reusable context for zero-mean Poisson solves on one grid.
///
/// Keeps the tolerance, the iteration budget, and the previous solution,
/// which seeds the next solve; along a smooth trajectory that warm start
/// cuts the iteration count by an order of magnitude. A seed that fails
/// to converge is retried once from zero, so a stale cache can slow a
/// solve down but not sink it. One workspace must not be shared between
/// concurrent solves.
#[derive(Debug, Clone)]
pub struct PoissonWorkspace {
    grid: Arc<Grid>,
    tol: f64,
    max_iter: usize,
    warm: Option<Vec<f64>>,
}

impl PoissonWorkspace {
    pub fn new(grid: &Arc<Grid>) -> Self {
        PoissonWorkspace {
            grid: Arc::clone(grid),
            tol: 1e-12,
            max_iter: 10 * grid.n_cells() + 200,
            warm: None,
        }
    }

    /// Relative residual tolerance (default 1e-12).
    pub fn with_tolerance(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    /// Iteration budget (default `10 n + 200`).
    pub fn with_max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }

    pub fn tolerance(&self) -> f64 {
        self.tol
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    /// Forget the cached previous solution.
    pub fn clear_cache(&mut self) {
        self.warm = None;
    }

    /// Solve `-laplacian(K) = z` with zero-flux walls and `<K> = 0`.
    ///
    /// `z` must have zero mean up to `1e-10 * linf(z)`; the residual of the
    /// returned solution satisfies `l2(residual) <= tol * l2(z)`.
    pub fn solve(&mut self, z: &Field) -> Result<Field, Error> {
        let linf = z.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let zmean = grid::mean(z);
        if linf > 0.0 && zmean.abs() > MEAN_COMPAT_REL * linf {
            return Err(Error::IncompatibleRhs {
                mean: zmean,
                limit: MEAN_COMPAT_REL * linf,
            });
        }
        self.solve_projected(z, zmean)
    }

    /// The solve behind [`PoissonWorkspace::solve`], minus the mean
    /// precheck: for a right-hand side that is compatible by construction
    /// (a field minus its own mean), the precheck cannot distinguish
    /// summation dust from a real defect once the field is flat to
    /// rounding, so internal callers skip it and rely on the projection.
    pub(crate) fn solve_projected(&mut self, z: &Field, zmean: f64) -> Result<Field, Error> {
        assert!(
            z.grid().as_ref() == self.grid.as_ref(),
            "workspace and right-hand side grids differ"
        );
        let n = self.grid.n_cells();
        if z.values().iter().all(|&v| v == 0.0) {
            return Ok(Field::zeros(&self.grid));
        }

        // Project the right-hand side onto the zero-mean subspace, where
        // the operator is positive definite.
        let b: Vec<f64> = z.values().iter().map(|v| v - zmean).collect();

        let mut x = match self.warm.take() {
            Some(w) if w.len() == n => w,
            _ => vec![0.0; n],
        };

        let mut arg = Field::zeros(&self.grid);
        let mut lap = Field::zeros(&self.grid);
        let apply = |p: &[f64], out: &mut [f64]| {
            // out = -laplacian(p), matrix-free.
            arg.values_mut().copy_from_slice(p);
            grid::laplacian_into(&arg, &mut lap);
            for (o, l) in out.iter_mut().zip(lap.values()) {
                *o = -l;
            }
        };
        let project = |v: &mut [f64]| {
            let m: f64 = v.iter().sum::<f64>() / v.len() as f64;
            for e in v {
                *e -= m;
            }
        };
        linsolve::cg_with_cold_restart(apply, &b, &mut x, self.tol, self.max_iter, project)?;

        // Exact recentering: the iterates stay near zero mean; this pins it.
        let m: f64 = x.iter().sum::<f64>() / n as f64;
        for e in &mut x {
            *e -= m;
        }
        self.warm = Some(x.clone());
        Field::from_values(&self.grid, x)
    }
}

/// Discrete Poincare constant `c_1 = 1 / sqrt(lambda_1)` of the grid.
///
/// On an axis with one cell the per-axis factor degenerates to `4 / h^2`,
/// which only enlarges the constant; the inequality stays valid because
/// such an axis carries no nonconstant mode at all.
pub fn poincare_constant(grid: &Grid) -> f64 {
    let mut lambda1 = f64::INFINITY;
    for k in 0..grid.dim() {
        let h = grid.spacing()[k];
        let n = grid.cells()[k];
        let s = (std::f64::consts::PI / (2.0 * n as f64)).sin();
        lambda1 = lambda1.min(4.0 / (h * h) * s * s);
    }
    1.0 / lambda1.sqrt()
}

/// Dual potential of the deviation `u - m`: the zero-mean solution of
/// `-laplacian(P) = u - m`. Fails when `mean(u)` strays from `m` by more
/// than `1e-10 * m`.
///
/// The right-hand side actually solved is `u - mean(u)`: once the drift
/// check has tied `mean(u)` to `m`, centering on the realized mean keeps
/// the system compatible even when `u` is flat to rounding and the
/// deviation field is nothing but dust.
pub fn dual_potential(ws: &mut PoissonWorkspace, u: &Field, m: f64) -> Result<Field, Error> {
    let umean = grid::mean(u);
    let drift = (umean - m).abs();
    if drift > MEAN_COMPAT_REL * m.abs() {
        return Err(Error::IncompatibleRhs { mean: drift, limit: MEAN_COMPAT_REL * m.abs() });
    }
    let mut dev = u.clone();
    for v in dev.values_mut() {
        *v -= umean;
    }
    let dust = grid::mean(&dev);
    ws.solve_projected(&dev, dust)
}

/// Scalars fixed by the initial data that parameterize every decay
/// estimate the diagnostics check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivedConstants {
    /// Mean of the initial density; conserved by the scheme.
    pub u_mean: f64,
    /// Sup of the initial signal; an upper barrier for all later times.
    pub v_sup: f64,
    /// Discrete Poincare constant of the grid.
    pub c1: f64,
    /// Minimum of the motility over `[0, v_sup]`.
    pub gamma_min: f64,
    /// Supremum of `|gamma'|` over `[0, v_sup]`.
    pub gamma_deriv_sup: f64,
    /// Weight of the signal term in the composite functional
    /// `grad_p^2 + c2 * l2(v)^2`. Zero when the motility range minimum
    /// vanishes: the composite decay estimate needs a positive minimum,
    /// and such runs are flagged instead of weighted.
    pub c2: f64,
    /// Decay rate constant `2 gamma_min / c1^2` of the potential gradient.
    pub c4: f64,
    /// Forcing coefficient `2 u_mean c1 gamma_deriv_sup` that couples the
    /// signal gradient into the potential-gradient decay.
    pub c5: f64,
}

impl DerivedConstants {
    pub fn new(
        grid: &Grid,
        motility: &Motility,
        u_in: &Field,
        v_in: &Field,
    ) -> Result<Self, Error> {
        let u_mean = grid::mean(u_in);
        let v_sup = v_in.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let c1 = poincare_constant(grid);
        let gamma_min = motility.min_on(v_sup)?;
        let gamma_deriv_sup = motility.derivative_sup_on(v_sup)?;
        let c2 = if gamma_min > 0.0 {
            let a = u_mean * c1 * gamma_deriv_sup;
            a * a / gamma_min
        } else {
            0.0
        };
        Ok(DerivedConstants {
            u_mean,
            v_sup,
            c1,
            gamma_min,
            gamma_deriv_sup,
            c2,
            c4: 2.0 * gamma_min / (c1 * c1),
            c5: 2.0 * u_mean * c1 * gamma_deriv_sup,
        })
    }

    /// Checks the assumptions of the decay theory: positive mean density
    /// and a motility bounded away from zero on the reachable range.
    pub fn validate_positivity(&self) -> Result<(), Error> {
        if !(self.u_mean > 0.0) {
            return Err(Error::Assumption(format!(
                "mean density must be positive, got {}",
                self.u_mean
            )));
        }
        if !(self.gamma_min > 0.0) {
            return Err(Error::Assumption(format!(
                "motility must stay positive on [0, {}], range minimum is {}",
                self.v_sup, self.gamma_min
            )));
        }
        Ok(())
    }
}
