//! Internal linear-solver kernels.
//!
//! Two tools cover every system in the crate: preconditioner-free conjugate
//! gradients with a caller-supplied correction applied after each update
//! (zero-mean projection for the singular Neumann solve, a subspace mask
//! for degenerate diffusivities), and a tridiagonal elimination for the 1D
//! step systems, which are M-matrices and therefore stable to eliminate in
//! natural order without pivoting.

use crate::error::Error;

// The outcome is informational; production callers only propagate errors,
// so outside of tests the fields go unread.
#[cfg_attr(not(test), allow(dead_code))]
#[derive(Debug)]
pub(crate) struct CgOutcome {
    pub iterations: usize,
    /// Final residual norm relative to the right-hand side norm.
    pub residual: f64,
}

/// [`conjugate_gradient`] with one retry from a zero start.
///
/// When the caller seeds `x` with a guess that is already close to the
/// solution, the first residual is small and partly rounding noise; in
/// finite precision the iteration can then lose conjugacy and wander
/// above the tolerance even though the system is easy. Restarting from
/// zero replays the full residual sweep, which converges long before
/// noise accumulates, so a failed guessed solve gets exactly one cold
/// retry. A failure from a zero start would only repeat and is returned
/// as is.
pub(crate) fn cg_with_cold_restart(
    mut apply: impl FnMut(&[f64], &mut [f64]),
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    max_iter: usize,
    mut post: impl FnMut(&mut [f64]),
) -> Result<CgOutcome, Error> {
    let guessed = x.iter().any(|&v| v != 0.0);
    match conjugate_gradient(&mut apply, b, x, tol, max_iter, &mut post) {
        Err(Error::NoConvergence { .. }) if guessed => {
            x.fill(0.0);
            conjugate_gradient(&mut apply, b, x, tol, max_iter, &mut post)
        }
        other => other,
    }
}

/// Conjugate gradients for a symmetric positive (semi)definite operator.
///
/// `apply` writes `A x` into its second argument. `post` re-imposes the
/// subspace constraint (projection or mask) on every updated vector; it
/// must be the identity on the subspace where `A` is definite. Iterates
/// stop when the Euclidean residual drops to `tol * ||b||`.
pub(crate) fn conjugate_gradient(
    mut apply: impl FnMut(&[f64], &mut [f64]),
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    max_iter: usize,
    mut post: impl FnMut(&mut [f64]),
) -> Result<CgOutcome, Error> {
    let n = b.len();
    assert_eq!(x.len(), n, "guess length must match the right-hand side");
    let b_norm = norm(b);
    if b_norm == 0.0 {
        x.fill(0.0);
        return Ok(CgOutcome { iterations: 0, residual: 0.0 });
    }

    post(x);
    let mut r = vec![0.0; n];
    let mut ap = vec![0.0; n];
    apply(x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    post(&mut r);

    let mut rho = dot(&r, &r);
    let mut p = r.clone();
    let mut iterations = 0;
    loop {
        let res = rho.sqrt();
        if res <= tol * b_norm {
            return Ok(CgOutcome { iterations, residual: res / b_norm });
        }
        if iterations >= max_iter {
            return Err(Error::NoConvergence { iterations, residual: res / b_norm });
        }
        apply(&p, &mut ap);
        let denom = dot(&p, &ap);
        if !(denom > 0.0) || !denom.is_finite() {
            return Err(Error::NoConvergence { iterations, residual: res / b_norm });
        }
        let alpha = rho / denom;
        for i in 0..n {
            x[i] += alpha * p[i];
        }
        post(x);
        iterations += 1;
        if iterations % 64 == 0 {
            // Recompute the residual from scratch to cancel update drift.
            apply(x, &mut r);
            for i in 0..n {
                r[i] = b[i] - r[i];
            }
        } else {
            for i in 0..n {
                r[i] -= alpha * ap[i];
            }
        }
        post(&mut r);
        let rho_next = dot(&r, &r);
        let beta = rho_next / rho;
        rho = rho_next;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
    }
}

/// Solve a tridiagonal system by elimination in natural order, in place.
/// `sub[i]` multiplies `x[i-1]` in row `i` (`sub[0]` unused), `sup[i]`
/// multiplies `x[i+1]` (`sup[n-1]` unused). `diag` and `rhs` are consumed;
/// the solution lands in `rhs`.
pub(crate) fn tridiagonal_solve(
    sub: &[f64],
    diag: &mut [f64],
    sup: &[f64],
    rhs: &mut [f64],
) -> Result<(), Error> {
    let n = diag.len();
    assert!(sub.len() == n && sup.len() == n && rhs.len() == n);
    for i in 1..n {
        let w = sub[i] / diag[i - 1];
        if !w.is_finite() {
            return Err(Error::NoConvergence { iterations: i, residual: f64::INFINITY });
        }
        diag[i] -= w * sup[i - 1];
        rhs[i] -= w * rhs[i - 1];
    }
    if diag[n - 1] == 0.0 {
        return Err(Error::NoConvergence { iterations: n, residual: f64::INFINITY });
    }
    rhs[n - 1] /= diag[n - 1];
    for i in (0..n - 1).rev() {
        rhs[i] = (rhs[i] - sup[i] * rhs[i + 1]) / diag[i];
    }
    Ok(())
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
