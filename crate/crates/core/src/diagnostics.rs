//! Trajectory instrumentation: norms, identity residuals, decay slacks.
//!
//! Every inequality the scheme is supposed to honor is reported as a
//! signed slack, left side minus right side, so a negative value means
//! the bound holds with room to spare and a positive value measures the
//! violation. Strict continuum inequalities pick up discretization error
//! of order `tau + h^2`; the callers decide what size is acceptable.
//!
//! Identity residuals work the same way but against exact balance laws:
//!
//! ```text
//! energy:  d/dt l2(v)^2 + 2 grad_l2(v)^2 + 2 sum(u v^2) vol = 0
//! duality: d/dt grad_l2(P)^2 + 2 sum(gamma(v) (u - M)^2) vol
//!                            + 2 M sum(gamma(v) (u - M)) vol = 0
//! ```
//!
//! with `P` the zero-mean potential of `u - M`. Their forward-difference
//! residuals shrink at first order in the step size on smooth data.
//!
//! All integrals use the same cell quadrature as the norms, which keeps
//! the residuals at the solver-noise floor whenever the balance law is
//! exact for the scheme.

use std::io::Write;

use crate::elliptic::DerivedConstants;
use crate::error::Error;
use crate::fmt::sci17;
use crate::grid::{self, Field};
use crate::motility::Motility;
use crate::stepper::SimState;

/// Column names of [`write_csv`] output, fixed as a wire format.
pub const CSV_HEADER: &str = "t,massMean,vLinf,vL1,vL2,vGradL2,vH1,vH2,uMinusM_L2,\
gradP_L2,liapunov,energyIdentityResidual,dualityIdentityResidual,compositeDecaySlack,\
gradientDecaySlack,vGradDecaySlack,vL1DecaySlack,gradPBoundSlack";

/// One sampled instant of a trajectory.
///
/// The norm fields come straight from the state; the residual and slack
/// fields describe the step or the record pair that landed here, and stay
/// zero until a driver fills them. `liapunov` is always recomputable from
/// the record itself: it equals `grad_p_l2^2 + c2 * v_l2^2` bit for bit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagnosticsRecord {
    pub t: f64,
    pub mass_mean: f64,
    pub v_linf: f64,
    pub v_l1: f64,
    pub v_l2: f64,
    pub v_grad_l2: f64,
    pub v_h1: f64,
    pub v_h2: f64,
    pub u_dev_l2: f64,
    pub grad_p_l2: f64,
    pub liapunov: f64,
    pub energy_identity_residual: f64,
    pub duality_identity_residual: f64,
    pub composite_decay_slack: f64,
    pub gradient_decay_slack: f64,
    pub v_grad_decay_slack: f64,
    pub v_l1_decay_slack: f64,
    pub grad_p_bound_slack: f64,
}

impl DiagnosticsRecord {
    /// One CSV row in header order, 17 significant digits per value.
    pub fn csv_row(&self) -> String {
        [
            self.t,
            self.mass_mean,
            self.v_linf,
            self.v_l1,
            self.v_l2,
            self.v_grad_l2,
            self.v_h1,
            self.v_h2,
            self.u_dev_l2,
            self.grad_p_l2,
            self.liapunov,
            self.energy_identity_residual,
            self.duality_identity_residual,
            self.composite_decay_slack,
            self.gradient_decay_slack,
            self.v_grad_decay_slack,
            self.v_l1_decay_slack,
            self.grad_p_bound_slack,
        ]
        .map(sci17)
        .join(",")
    }
}

/// Windowed integrals over `[t_start, t_start + 1]`, the unit-window
/// averages whose decay signals homogenization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowIntegrals {
    pub t_start: f64,
    /// Integral of `l2(u - M)^2` over the window.
    pub u_dev_integral: f64,
    /// Integral of `h2(v)^2` over the window.
    pub v_h2_integral: f64,
}

/// Snapshot of the state's norms; residual and slack fields are zeroed.
/// `p` must be the dual potential of the current density.
pub fn record(state: &SimState, p: &Field) -> DiagnosticsRecord {
    let k = state.constants();
    let vn = grid::norms(state.v());
    let mut dev = state.u().clone();
    for x in dev.values_mut() {
        *x -= k.u_mean;
    }
    let u_dev_l2 = {
        let vol = state.grid().cell_volume();
        let s: f64 = dev.values().iter().map(|x| x * x).sum();
        (s * vol).sqrt()
    };
    let grad_p_l2 = grid::grad_sq(p).sqrt();
    DiagnosticsRecord {
        t: state.t(),
        mass_mean: grid::mean(state.u()),
        v_linf: vn.linf,
        v_l1: vn.l1,
        v_l2: vn.l2,
        v_grad_l2: vn.grad_l2,
        v_h1: vn.h1,
        v_h2: vn.h2,
        u_dev_l2,
        grad_p_l2,
        liapunov: grad_p_l2 * grad_p_l2 + k.c2 * (vn.l2 * vn.l2),
        energy_identity_residual: 0.0,
        duality_identity_residual: 0.0,
        composite_decay_slack: 0.0,
        gradient_decay_slack: 0.0,
        v_grad_decay_slack: 0.0,
        v_l1_decay_slack: 0.0,
        grad_p_bound_slack: grad_p_l2 - k.c1 * u_dev_l2,
    }
}

/// Left-hand side of the per-step dissipation inequality and the
/// consumption integral it contains:
///
/// ```text
/// lhs = l2(v_new)^2 + 2 tau grad_l2(v_new)^2 + 2 tau sum(u_new v_new^2) vol
/// ```
///
/// The implicit signal stage guarantees `lhs <= l2(v_old)^2` up to the
/// linear-solver residual.
pub fn dissipation_terms(v_new: &Field, u_new: &Field, tau: f64) -> (f64, f64) {
    let vol = v_new.grid().cell_volume();
    let mut l2sq = 0.0;
    let mut consumption = 0.0;
    for (&v, &u) in v_new.values().iter().zip(u_new.values()) {
        l2sq += v * v;
        consumption += u * v * v;
    }
    l2sq *= vol;
    consumption *= vol;
    let lhs = l2sq + 2.0 * tau * grid::grad_sq(v_new) + 2.0 * tau * consumption;
    (lhs, consumption)
}

/// Forward-difference residual of the signal energy balance over one
/// accepted step; first order in `tau` on smooth data.
pub fn energy_identity_residual(
    v_old: &Field,
    v_new: &Field,
    u_new: &Field,
    tau: f64,
) -> f64 {
    let old_sq = grid::inner(v_old, v_old);
    let (lhs, _) = dissipation_terms(v_new, u_new, tau);
    // lhs = new_sq + 2 tau (grad + consumption), so the balance residual
    // (new_sq - old_sq)/tau + 2 grad + 2 consumption collapses to:
    ((lhs - old_sq) / tau).abs()
}

/// Forward-difference residual of the potential-gradient balance over one
/// accepted density stage; first order in `tau`.
///
/// Solves for both dual potentials, so it costs two elliptic solves; the
/// workspace warm start makes the second one cheap.
pub fn duality_identity_residual(
    u_old: &Field,
    u_new: &Field,
    v_old: &Field,
    motility: &Motility,
    m: f64,
    tau: f64,
    ws: &mut crate::elliptic::PoissonWorkspace,
) -> Result<f64, Error> {
    let p_old = crate::elliptic::dual_potential(ws, u_old, m)?;
    let p_new = crate::elliptic::dual_potential(ws, u_new, m)?;
    let q_old = grid::grad_sq(&p_old);
    let q_new = grid::grad_sq(&p_new);

    let vol = u_new.grid().cell_volume();
    let mut quad = 0.0;
    let mut lin = 0.0;
    for (&u, &v) in u_new.values().iter().zip(v_old.values()) {
        let g = motility.eval(v.max(0.0))?;
        let d = u - m;
        quad += g * d * d;
        lin += g * d;
    }
    quad *= vol;
    lin *= vol;
    Ok(((q_new - q_old) / tau + 2.0 * quad + 2.0 * m * lin).abs())
}

/// Signed slack of the composite decay estimate between two consecutive
/// outputs: with `L = grad_p_l2^2 + c2 * v_l2^2`,
///
/// ```text
/// (L(next) - L(prev)) / delta + gamma_min * u_dev^2 + c2 * v_grad^2 <= 0
/// ```
///
/// with the quadratic terms evaluated at `next`.
pub fn composite_decay_slack(
    prev: &DiagnosticsRecord,
    next: &DiagnosticsRecord,
    k: &DerivedConstants,
) -> f64 {
    let delta = next.t - prev.t;
    assert!(delta > 0.0, "records must be in increasing time order");
    (next.liapunov - prev.liapunov) / delta
        + k.gamma_min * next.u_dev_l2 * next.u_dev_l2
        + k.c2 * next.v_grad_l2 * next.v_grad_l2
}

/// Signed slack of the signal-gradient decay estimate between two
/// consecutive outputs:
///
/// ```text
/// d/dt grad_l2(v)^2 + 2 M grad_l2(v)^2 + l2(lap v)^2 <= V^2 l2(u - M)^2
/// ```
///
/// using `l2(lap v)^2 = h2(v)^2 - h1(v)^2` from the stored norms.
pub fn gradient_decay_slack(
    prev: &DiagnosticsRecord,
    next: &DiagnosticsRecord,
    k: &DerivedConstants,
) -> f64 {
    let delta = next.t - prev.t;
    assert!(delta > 0.0, "records must be in increasing time order");
    let grad_sq_prev = prev.v_grad_l2 * prev.v_grad_l2;
    let grad_sq_next = next.v_grad_l2 * next.v_grad_l2;
    let lap_sq = next.v_h2 * next.v_h2 - next.v_h1 * next.v_h1;
    (grad_sq_next - grad_sq_prev) / delta + 2.0 * k.u_mean * grad_sq_next + lap_sq
        - k.v_sup * k.v_sup * next.u_dev_l2 * next.u_dev_l2
}

/// Signed slacks of the two integral decay bounds along a uniformly
/// sampled trajectory, anchored at the first record:
///
/// ```text
/// gradient: grad_l2(v(t))^2 <= grad_l2(v(0))^2 e^(-2Mt)
///                              + V^2 int_0^t e^(2M(s-t)) l2(u(s)-M)^2 ds
/// mass:     l1(v(t))        <= l1(v(0)) e^(-Mt)
///                              + c1 int_0^t e^(M(s-t)) l2(u(s)-M) grad_l2(v(s)) ds
/// ```
///
/// Returns one `(gradient, mass)` slack pair per record; both are exactly
/// zero at the anchor. The convolution integrals use trapezoidal
/// quadrature in the incremental form
/// `I_k = e^(-a d) (I_(k-1) + d/2 f_(k-1)) + d/2 f_k`, which never forms
/// a large exponential.
pub fn gronwall_slacks(
    records: &[DiagnosticsRecord],
    k: &DerivedConstants,
) -> Result<Vec<(f64, f64)>, Error> {
    if records.is_empty() {
        return Err(Error::InsufficientHistory(
            "integral decay bounds need at least one record".into(),
        ));
    }
    let delta = uniform_spacing(records)?;
    let m = k.u_mean;
    let g0 = records[0].v_grad_l2 * records[0].v_grad_l2;
    let l0 = records[0].v_l1;

    let mut out = Vec::with_capacity(records.len());
    out.push((0.0, 0.0));
    let mut conv_grad = 0.0f64; // convolution with rate 2M against u_dev^2
    let mut conv_mass = 0.0f64; // convolution with rate M against u_dev * v_grad
    let force_grad = |r: &DiagnosticsRecord| r.u_dev_l2 * r.u_dev_l2;
    let force_mass = |r: &DiagnosticsRecord| r.u_dev_l2 * r.v_grad_l2;
    for j in 1..records.len() {
        let (prev, cur) = (&records[j - 1], &records[j]);
        conv_grad = (-2.0 * m * delta).exp() * (conv_grad + 0.5 * delta * force_grad(prev))
            + 0.5 * delta * force_grad(cur);
        conv_mass = (-m * delta).exp() * (conv_mass + 0.5 * delta * force_mass(prev))
            + 0.5 * delta * force_mass(cur);
        let t = cur.t - records[0].t;
        let grad_slack = cur.v_grad_l2 * cur.v_grad_l2
            - (g0 * (-2.0 * m * t).exp() + k.v_sup * k.v_sup * conv_grad);
        let mass_slack = cur.v_l1 - (l0 * (-m * t).exp() + k.c1 * conv_mass);
        out.push((grad_slack, mass_slack));
    }
    Ok(out)
}

/// Pointwise slack of the elliptic duality bound `grad_l2(P) <= c1 l2(u-M)`,
/// an exact discrete inequality up to solver residual.
pub fn grad_p_bound_slack(rec: &DiagnosticsRecord, k: &DerivedConstants) -> f64 {
    rec.grad_p_l2 - k.c1 * rec.u_dev_l2
}

/// Trapezoidal integrals of `l2(u-M)^2` and `h2(v)^2` over the unit
/// window starting at `t`. The window ends must land on stored outputs
/// within half a spacing.
pub fn window_integrals(
    records: &[DiagnosticsRecord],
    t: f64,
) -> Result<WindowIntegrals, Error> {
    if records.len() < 2 {
        return Err(Error::InsufficientHistory(
            "window integrals need at least two records".into(),
        ));
    }
    let delta = uniform_spacing(records)?;
    let locate = |target: f64| -> Result<usize, Error> {
        let idx = ((target - records[0].t) / delta).round();
        if idx < 0.0 || idx as usize >= records.len() {
            return Err(Error::InsufficientHistory(format!(
                "history does not cover time {target}"
            )));
        }
        let idx = idx as usize;
        if (records[idx].t - target).abs() > 0.5 * delta {
            return Err(Error::InsufficientHistory(format!(
                "no stored output near time {target}"
            )));
        }
        Ok(idx)
    };
    let a = locate(t)?;
    let b = locate(t + 1.0)?;
    if b <= a {
        return Err(Error::InsufficientHistory(
            "window must span at least one output interval".into(),
        ));
    }
    let mut u_dev = 0.0;
    let mut v_h2 = 0.0;
    for j in a..b {
        let (p, q) = (&records[j], &records[j + 1]);
        u_dev += 0.5 * delta * (p.u_dev_l2 * p.u_dev_l2 + q.u_dev_l2 * q.u_dev_l2);
        v_h2 += 0.5 * delta * (p.v_h2 * p.v_h2 + q.v_h2 * q.v_h2);
    }
    Ok(WindowIntegrals { t_start: records[a].t, u_dev_integral: u_dev, v_h2_integral: v_h2 })
}

/// Whether `linf(v)` never increases along the records, within a relative
/// jitter of 1e-12.
pub fn linf_monotone(records: &[DiagnosticsRecord]) -> bool {
    records.windows(2).all(|w| {
        w[1].v_linf <= w[0].v_linf + 1e-12 * w[0].v_linf.max(1.0)
    })
}

/// Writes the header and one row per record.
pub fn write_csv(w: &mut impl Write, records: &[DiagnosticsRecord]) -> std::io::Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for r in records {
        writeln!(w, "{}", r.csv_row())?;
    }
    Ok(())
}

/// Common spacing of the records, enforcing uniformity to 1e-9 relative.
fn uniform_spacing(records: &[DiagnosticsRecord]) -> Result<f64, Error> {
    if records.len() < 2 {
        // A single record has no spacing; callers that need one interval
        // check the length themselves. Zero is a safe "unused" value.
        return Ok(0.0);
    }
    let delta = records[1].t - records[0].t;
    if !(delta > 0.0) {
        return Err(Error::Domain(format!(
            "records must advance in time, first spacing is {delta}"
        )));
    }
    for w in records.windows(2) {
        let d = w[1].t - w[0].t;
        if (d - delta).abs() > 1e-9 * delta {
            return Err(Error::Domain(format!(
                "records are not uniformly spaced: {d} vs {delta}"
            )));
        }
    }
    Ok(delta)
}
