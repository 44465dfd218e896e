//! Semi-implicit time stepping for the density/signal pair.
//!
//! One step of size `tau` advances the state in two stages, density first:
//!
//! ```text
//! (I - tau * laplacian . diag(gamma(v_k))) u_next = u_k
//! (I - tau * laplacian + tau * diag(u_next)) v_next = v_k
//! ```
//!
//! Both matrices are M-matrices, so each stage maps nonnegative data to
//! nonnegative data and the signal obeys a discrete maximum principle.
//! The density matrix has unit column sums; to push mass conservation
//! down to summation rounding, the stage is finished in flux form: after
//! solving for `w = gamma(v_k) .* u_next`, the update is recomputed as
//! `u_next = u_k + tau * laplacian(w)`, whose stencil telescopes exactly.
//!
//! In one dimension with a strictly positive motility the density system
//! is tridiagonal and solved directly; elimination without pivoting is
//! stable here because the matrix is diagonally dominant by columns. In
//! every other case (two dimensions, or a motility that vanishes where
//! the signal does) the stage is reduced to a symmetric positive definite
//! system for `w` on the cells where the motility is positive and solved
//! by masked conjugate gradients:
//!
//! ```text
//! (diag(1/gamma) - tau * laplacian) w = u_k    on  S = { gamma > 0 },
//! w = 0                                        off S.
//! ```
//!
//! Cells off `S` exchange no mass and are updated explicitly by the same
//! flux form, which is exact there.

use std::sync::Arc;

use crate::diagnostics;
use crate::elliptic::{DerivedConstants, PoissonWorkspace};
use crate::error::Error;
use crate::grid::{self, Field, Grid};
use crate::linsolve;
use crate::motility::Motility;

/// Relative size of the negative undershoot tolerated before positivity
/// counts as violated. Direct and iterative solves land within a few ulps
/// of the nonnegative exact solution; anything past this is a real defect.
const NEGATIVITY_REL: f64 = 1e-12;

/// Relative drift allowed in the conserved density mean.
const MASS_DRIFT_REL: f64 = 1e-10;

/// Time step parameters shared by both stages.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepConfig {
    /// Step size.
    pub tau: f64,
    /// Relative residual tolerance of the iterative solves.
    pub lin_tol: f64,
    /// Iteration budget; `0` selects `10 n + 200` for an `n`-cell grid.
    pub max_iter: usize,
}

impl StepConfig {
    pub fn new(tau: f64) -> Result<Self, Error> {
        if !tau.is_finite() || tau <= 0.0 {
            return Err(Error::Config(format!(
                "time step must be positive and finite, got {tau}"
            )));
        }
        Ok(StepConfig { tau, lin_tol: 1e-12, max_iter: 0 })
    }

    fn budget(&self, n: usize) -> usize {
        if self.max_iter == 0 { 10 * n + 200 } else { self.max_iter }
    }
}

/// What one step certifies about the discrete energy of the signal.
///
/// The inequality `lhs <= rhs` holds for the exact stage solution; the
/// reported values carry solver residuals of relative size at most the
/// linear tolerance, so the runner checks `lhs - rhs` against that scale.
#[derive(Debug, Clone, Copy)]
pub struct StepReport {
    /// Time reached by the step.
    pub t: f64,
    /// `l2(v_next)^2 + 2 tau grad_l2(v_next)^2 + 2 tau sum(u_next v_next^2) vol`.
    pub dissipation_lhs: f64,
    /// `l2(v_k)^2`.
    pub dissipation_rhs: f64,
}

/// Evolving pair of fields plus everything fixed at setup time.
#[derive(Debug, Clone)]
pub struct SimState {
    u: Field,
    v: Field,
    t: f64,
    motility: Motility,
    constants: DerivedConstants,
    cfg: StepConfig,
    poisson: PoissonWorkspace,
}

impl SimState {
    /// Validates the initial data and freezes the derived constants.
    ///
    /// Requires both fields on the same grid, finite and nonnegative. The
    /// motility only has to be evaluable on `[0, max(v)]` here; whether it
    /// must stay positive is the caller's policy.
    pub fn new(
        u: Field,
        v: Field,
        motility: Motility,
        cfg: StepConfig,
    ) -> Result<Self, Error> {
        if u.grid().as_ref() != v.grid().as_ref() {
            return Err(Error::Domain(
                "density and signal live on different grids".into(),
            ));
        }
        if !u.is_finite() || !v.is_finite() {
            return Err(Error::Domain("initial data must be finite".into()));
        }
        if u.min() < 0.0 {
            return Err(Error::Domain(format!(
                "initial density must be nonnegative, min is {}",
                u.min()
            )));
        }
        if v.min() < 0.0 {
            return Err(Error::Domain(format!(
                "initial signal must be nonnegative, min is {}",
                v.min()
            )));
        }
        let constants = DerivedConstants::new(u.grid(), &motility, &u, &v)?;
        let poisson = PoissonWorkspace::new(u.grid()).with_tolerance(cfg.lin_tol);
        Ok(SimState { u, v, t: 0.0, motility, constants, cfg, poisson })
    }

    pub fn u(&self) -> &Field {
        &self.u
    }

    pub fn v(&self) -> &Field {
        &self.v
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    /// Pins the clock, so a driver can re-anchor `t` to `k * tau` instead
    /// of accumulating additions.
    pub fn set_time(&mut self, t: f64) {
        self.t = t;
    }

    pub fn grid(&self) -> &Arc<Grid> {
        self.u.grid()
    }

    pub fn constants(&self) -> &DerivedConstants {
        &self.constants
    }

    pub fn motility(&self) -> &Motility {
        &self.motility
    }

    pub fn config(&self) -> &StepConfig {
        &self.cfg
    }

    /// Zero-mean potential of the current density deviation, warm-started
    /// from the previous call.
    pub fn dual_potential(&mut self) -> Result<Field, Error> {
        crate::elliptic::dual_potential(&mut self.poisson, &self.u, self.constants.u_mean)
    }

    /// Advances one step. On error the state may hold a half-updated pair
    /// and must be discarded.
    pub fn advance(&mut self) -> Result<StepReport, Error> {
        let v_old_sq = grid::inner(&self.v, &self.v);
        self.step_u()?;
        self.step_v()?;
        self.t += self.cfg.tau;
        let (lhs, _) = diagnostics::dissipation_terms(&self.v, &self.u, self.cfg.tau);
        Ok(StepReport { t: self.t, dissipation_lhs: lhs, dissipation_rhs: v_old_sq })
    }

    /// Checks the invariants every step must preserve.
    pub fn validate(&self) -> Result<(), Error> {
        validate_fields(&self.u, &self.v, &self.constants)
    }

    fn step_u(&mut self) -> Result<(), Error> {
        let g = self.grid().clone();
        let n = g.n_cells();
        let tau = self.cfg.tau;

        // Motility weights from the current signal; tiny solver undershoots
        // below zero are clamped before evaluation.
        let mut gam = vec![0.0f64; n];
        for (gi, vi) in gam.iter_mut().zip(self.v.values()) {
            *gi = self.motility.eval(vi.max(0.0))?;
        }
        // Zero motility freezes a cell; a negative one has no meaning here
        // and would silently be treated as frozen, so reject it instead.
        if let Some(bad) = gam.iter().find(|&&x| x < 0.0) {
            return Err(Error::Domain(format!(
                "motility evaluated to a negative value ({bad}); it must be nonnegative"
            )));
        }

        let all_positive = gam.iter().all(|&x| x > 0.0);
        let w = if g.dim() == 1 && all_positive {
            let u_sol = solve_u_direct(&g, &gam, self.u.values(), tau)?;
            u_sol.iter().zip(&gam).map(|(u, g)| u * g).collect::<Vec<_>>()
        } else {
            solve_u_masked(
                &g,
                &gam,
                self.u.values(),
                tau,
                self.cfg.lin_tol,
                self.cfg.budget(n),
            )?
        };

        // Flux-form finish: mass moves only through the telescoping stencil.
        let w = Field::from_values(&g, w)?;
        let lap = grid::laplacian(&w);
        for (ui, li) in self.u.values_mut().iter_mut().zip(lap.values()) {
            *ui += tau * li;
        }
        Ok(())
    }

    fn step_v(&mut self) -> Result<(), Error> {
        let g = self.grid().clone();
        let n = g.n_cells();
        let tau = self.cfg.tau;

        if g.dim() == 1 {
            let h2 = g.spacing()[0] * g.spacing()[0];
            let off = -tau / h2;
            let mut sub = vec![off; n];
            let mut sup = vec![off; n];
            sub[0] = 0.0;
            sup[n - 1] = 0.0;
            let mut diag = vec![0.0f64; n];
            for i in 0..n {
                let neighbors = if n == 1 {
                    0.0
                } else if i == 0 || i == n - 1 {
                    1.0
                } else {
                    2.0
                };
                diag[i] = 1.0 + neighbors * tau / h2 + tau * self.u.values()[i];
            }
            linsolve::tridiagonal_solve(&sub, &mut diag, &sup, self.v.values_mut())?;
            return Ok(());
        }

        let b = self.v.values().to_vec();
        let mut x = b.clone();
        let u_vals = self.u.values().to_vec();
        let mut arg = Field::zeros(&g);
        let mut lap = Field::zeros(&g);
        let apply = |p: &[f64], out: &mut [f64]| {
            arg.values_mut().copy_from_slice(p);
            grid::laplacian_into(&arg, &mut lap);
            for i in 0..p.len() {
                out[i] = p[i] - tau * lap.values()[i] + tau * u_vals[i] * p[i];
            }
        };
        linsolve::cg_with_cold_restart(
            apply,
            &b,
            &mut x,
            self.cfg.lin_tol,
            self.cfg.budget(n),
            |_| {},
        )?;
        self.v.values_mut().copy_from_slice(&x);
        Ok(())
    }
}

/// Direct tridiagonal solve of the density stage in one dimension.
fn solve_u_direct(g: &Grid, gam: &[f64], u: &[f64], tau: f64) -> Result<Vec<f64>, Error> {
    let n = g.cells()[0];
    let h2 = g.spacing()[0] * g.spacing()[0];
    let r = tau / h2;
    let mut sub = vec![0.0f64; n];
    let mut sup = vec![0.0f64; n];
    let mut diag = vec![0.0f64; n];
    for i in 0..n {
        let mut neighbors = 0.0;
        if i > 0 {
            sub[i] = -r * gam[i - 1];
            neighbors += 1.0;
        }
        if i + 1 < n {
            sup[i] = -r * gam[i + 1];
            neighbors += 1.0;
        }
        diag[i] = 1.0 + neighbors * r * gam[i];
    }
    let mut sol = u.to_vec();
    linsolve::tridiagonal_solve(&sub, &mut diag, &sup, &mut sol)?;
    Ok(sol)
}

/// Conjugate-gradient solve of the density stage through the substitution
/// `w = gamma .* u_next`, restricted to the cells where `gamma > 0`.
/// Returns `w` on the full grid, zero where the motility vanishes.
fn solve_u_masked(
    g: &Arc<Grid>,
    gam: &[f64],
    u: &[f64],
    tau: f64,
    tol: f64,
    budget: usize,
) -> Result<Vec<f64>, Error> {
    let n = g.n_cells();
    let active: Vec<bool> = gam.iter().map(|&x| x > 0.0).collect();
    if !active.iter().any(|&a| a) {
        // Nothing moves: w = 0 keeps the density frozen.
        return Ok(vec![0.0; n]);
    }

    let mut b = vec![0.0f64; n];
    let mut x = vec![0.0f64; n];
    for i in 0..n {
        if active[i] {
            b[i] = u[i];
            x[i] = gam[i] * u[i];
        }
    }

    let mut arg = Field::zeros(g);
    let mut lap = Field::zeros(g);
    let apply = |p: &[f64], out: &mut [f64]| {
        arg.values_mut().copy_from_slice(p);
        grid::laplacian_into(&arg, &mut lap);
        for i in 0..p.len() {
            out[i] = if active[i] {
                p[i] / gam[i] - tau * lap.values()[i]
            } else {
                0.0
            };
        }
    };
    let mask = |v: &mut [f64]| {
        for i in 0..v.len() {
            if !active[i] {
                v[i] = 0.0;
            }
        }
    };
    linsolve::cg_with_cold_restart(apply, &b, &mut x, tol, budget, mask)?;
    Ok(x)
}

/// Invariants of the scheme, checked against the setup-time constants:
/// finite fields, conserved density mean, nonnegativity up to solver
/// rounding, and the signal barrier `max(v) <= max(v_initial)`.
pub(crate) fn validate_fields(
    u: &Field,
    v: &Field,
    k: &DerivedConstants,
) -> Result<(), Error> {
    if !u.is_finite() {
        return Err(Error::Invariant("density field is not finite".into()));
    }
    if !v.is_finite() {
        return Err(Error::Invariant("signal field is not finite".into()));
    }
    let mean = grid::mean(u);
    let scale = k.u_mean.abs().max(f64::MIN_POSITIVE);
    if (mean - k.u_mean).abs() > MASS_DRIFT_REL * scale {
        return Err(Error::Invariant(format!(
            "mass conservation violated: mean density {mean} drifted from {}",
            k.u_mean
        )));
    }
    let u_floor = -NEGATIVITY_REL * u.max().abs().max(1.0);
    if u.min() < u_floor {
        return Err(Error::Invariant(format!(
            "density positivity violated: min {} below {u_floor}",
            u.min()
        )));
    }
    let v_floor = -NEGATIVITY_REL * k.v_sup.max(1.0);
    if v.min() < v_floor {
        return Err(Error::Invariant(format!(
            "signal positivity violated: min {} below {v_floor}",
            v.min()
        )));
    }
    let v_cap = k.v_sup * (1.0 + NEGATIVITY_REL);
    if v.max() > v_cap {
        return Err(Error::Invariant(format!(
            "signal maximum principle violated: max {} above {v_cap}",
            v.max()
        )));
    }
    Ok(())
}
