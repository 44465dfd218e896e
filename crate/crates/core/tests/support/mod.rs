//! Dense linear-algebra oracles for the equivalence tests.
//!
//! Everything here is built from first principles on purpose: explicit
//! matrix assembly, LU with partial pivoting plus iterative refinement,
//! and shift-inverted power iteration. The production crate must agree
//! with these slow references, not the other way around.

// Every test binary compiles its own copy and uses a subset.
#![allow(dead_code)]

use std::sync::Arc;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use chemsim_core::grid::Field;
use chemsim_core::Grid;

/// Row-major dense square matrix.
pub struct Dense {
    pub n: usize,
    pub a: Vec<f64>,
}

impl Dense {
    pub fn zeros(n: usize) -> Self {
        Dense { n, a: vec![0.0; n * n] }
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.a[i * self.n + j]
    }

    pub fn at_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        &mut self.a[i * self.n + j]
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        let mut y = vec![0.0; self.n];
        for i in 0..self.n {
            let row = &self.a[i * self.n..(i + 1) * self.n];
            let mut s = 0.0;
            for (a, b) in row.iter().zip(x) {
                s += a * b;
            }
            y[i] = s;
        }
        y
    }
}

/// The zero-flux Laplacian as an explicit matrix, assembled from the grid
/// geometry alone: every interior face contributes `1/h^2` off-diagonal
/// and `-1/h^2` to both diagonals; walls contribute nothing.
pub fn dense_laplacian(grid: &Grid) -> Dense {
    let n0 = grid.cells()[0];
    let n1 = if grid.dim() == 2 { grid.cells()[1] } else { 1 };
    let n = grid.n_cells();
    let mut m = Dense::zeros(n);
    let couple = |m: &mut Dense, i: usize, j: usize, w: f64| {
        *m.at_mut(i, j) += w;
        *m.at_mut(i, i) -= w;
    };
    match grid.dim() {
        1 => {
            let w = 1.0 / (grid.spacing()[0] * grid.spacing()[0]);
            for i in 0..n0 {
                if i > 0 {
                    couple(&mut m, i, i - 1, w);
                }
                if i + 1 < n0 {
                    couple(&mut m, i, i + 1, w);
                }
            }
        }
        2 => {
            let w0 = 1.0 / (grid.spacing()[0] * grid.spacing()[0]);
            let w1 = 1.0 / (grid.spacing()[1] * grid.spacing()[1]);
            for i0 in 0..n0 {
                for i1 in 0..n1 {
                    let idx = i0 * n1 + i1;
                    if i0 > 0 {
                        couple(&mut m, idx, idx - n1, w0);
                    }
                    if i0 + 1 < n0 {
                        couple(&mut m, idx, idx + n1, w0);
                    }
                    if i1 > 0 {
                        couple(&mut m, idx, idx - 1, w1);
                    }
                    if i1 + 1 < n1 {
                        couple(&mut m, idx, idx + 1, w1);
                    }
                }
            }
        }
        _ => unreachable!("grids are one- or two-dimensional"),
    }
    m
}

/// LU factorization with partial pivoting.
pub struct Lu {
    n: usize,
    lu: Vec<f64>,
    piv: Vec<usize>,
}

pub fn lu_factor(mut m: Dense) -> Lu {
    let n = m.n;
    let mut piv = vec![0usize; n];
    for k in 0..n {
        let mut p = k;
        let mut best = m.at(k, k).abs();
        for i in k + 1..n {
            let v = m.at(i, k).abs();
            if v > best {
                best = v;
                p = i;
            }
        }
        assert!(best > 0.0, "oracle matrix is singular at column {k}");
        piv[k] = p;
        if p != k {
            for j in 0..n {
                let a = m.at(k, j);
                let b = m.at(p, j);
                *m.at_mut(k, j) = b;
                *m.at_mut(p, j) = a;
            }
        }
        let d = m.at(k, k);
        for i in k + 1..n {
            let f = m.at(i, k) / d;
            *m.at_mut(i, k) = f;
            if f != 0.0 {
                for j in k + 1..n {
                    let v = m.at(k, j);
                    *m.at_mut(i, j) -= f * v;
                }
            }
        }
    }
    Lu { n, lu: m.a, piv }
}

impl Lu {
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n);
        let n = self.n;
        let mut x = b.to_vec();
        // The factorization swapped whole rows, multipliers included, so
        // the stored triangles factor P * A and every swap applies to the
        // right-hand side before the substitution sweeps.
        for k in 0..n {
            x.swap(k, self.piv[k]);
        }
        for k in 0..n {
            let xk = x[k];
            if xk != 0.0 {
                for i in k + 1..n {
                    x[i] -= self.lu[i * n + k] * xk;
                }
            }
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in i + 1..n {
                s -= self.lu[i * n + j] * x[j];
            }
            x[i] = s / self.lu[i * n + i];
        }
        x
    }

    /// Solve with two passes of iterative refinement against `a`.
    pub fn solve_refined(&self, a: &Dense, b: &[f64]) -> Vec<f64> {
        let mut x = self.solve(b);
        for _ in 0..2 {
            let ax = a.matvec(&x);
            let r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
            let d = self.solve(&r);
            for (xi, di) in x.iter_mut().zip(&d) {
                *xi += di;
            }
        }
        x
    }
}

/// Zero-mean solution of `-laplacian(K) = rhs` by pinning the constant
/// mode: solve `(-A + (s/n) 1 1^T) K = rhs` and recenter. The shift `s`
/// sits inside the spectrum so the pinned matrix stays well conditioned.
pub fn poisson_dense(grid: &Grid, rhs: &[f64]) -> Vec<f64> {
    let lap = dense_laplacian(grid);
    let n = lap.n;
    let mut m = Dense::zeros(n);
    // Placing the pinned constant mode at the top of the spectrum keeps
    // the condition number of the pinned matrix equal to the intrinsic
    // lambda_max / lambda_1 of the problem.
    let shift = 4.0 / grid
        .spacing()
        .iter()
        .map(|h| h * h)
        .fold(f64::INFINITY, f64::min);
    for i in 0..n {
        for j in 0..n {
            *m.at_mut(i, j) = -lap.at(i, j) + shift / n as f64;
        }
    }
    let a_copy = {
        let mut c = Dense::zeros(n);
        c.a.copy_from_slice(&m.a);
        c
    };
    let lu = lu_factor(m);
    let mut x = lu.solve_refined(&a_copy, rhs);
    let mean: f64 = x.iter().sum::<f64>() / n as f64;
    for v in &mut x {
        *v -= mean;
    }
    x
}

/// Quadratic form `x^T (-A) x` of the zero-flux Laplacian, evaluated as
/// a sum of squared face differences. Unlike the raw matvec this form
/// has no cancellation, so its relative rounding error stays near
/// machine precision even when `lambda_max / lambda_1` is large.
pub fn dirichlet_energy(grid: &Grid, x: &[f64]) -> f64 {
    let n0 = grid.cells()[0];
    let n1 = if grid.dim() == 2 { grid.cells()[1] } else { 1 };
    let mut acc = 0.0;
    let w0 = 1.0 / (grid.spacing()[0] * grid.spacing()[0]);
    for i0 in 0..n0.saturating_sub(1) {
        for i1 in 0..n1 {
            let d = x[(i0 + 1) * n1 + i1] - x[i0 * n1 + i1];
            acc += w0 * d * d;
        }
    }
    if grid.dim() == 2 {
        let w1 = 1.0 / (grid.spacing()[1] * grid.spacing()[1]);
        for i0 in 0..n0 {
            for i1 in 0..n1 - 1 {
                let d = x[i0 * n1 + i1 + 1] - x[i0 * n1 + i1];
                acc += w1 * d * d;
            }
        }
    }
    acc
}

/// Smallest nonzero eigenvalue of `-laplacian` by shift-inverted power
/// iteration on the constant-pinned matrix, scored with the Rayleigh
/// quotient of the unpinned operator in face-difference form.
pub fn smallest_positive_eigenvalue(grid: &Grid) -> f64 {
    let lap = dense_laplacian(grid);
    let n = lap.n;
    let mut pinned = Dense::zeros(n);
    // Push the constant mode far above the low end of the spectrum.
    let shift = 4.0 / grid
        .spacing()
        .iter()
        .map(|h| h * h)
        .fold(f64::INFINITY, f64::min);
    for i in 0..n {
        for j in 0..n {
            *pinned.at_mut(i, j) = -lap.at(i, j) + shift / n as f64;
        }
    }
    let lu = lu_factor(pinned);

    let mut rng = ChaCha8Rng::seed_from_u64(0x715EED);
    let mut x: Vec<f64> = (0..n)
        .map(|_| {
            const TWO53: f64 = 9007199254740992.0;
            2.0 * ((rng.next_u64() >> 11) as f64 / TWO53) - 1.0
        })
        .collect();
    center_and_normalize(&mut x);

    let mut lambda = f64::INFINITY;
    for _ in 0..400 {
        x = lu.solve(&x);
        center_and_normalize(&mut x);
        let num = dirichlet_energy(grid, &x);
        let den: f64 = x.iter().map(|a| a * a).sum::<f64>();
        let next = num / den;
        if (next - lambda).abs() <= 1e-14 * next.abs() {
            lambda = next;
            break;
        }
        lambda = next;
    }
    lambda
}

fn center_and_normalize(x: &mut [f64]) {
    let mean: f64 = x.iter().sum::<f64>() / x.len() as f64;
    for v in x.iter_mut() {
        *v -= mean;
    }
    let norm: f64 = x.iter().map(|a| a * a).sum::<f64>().sqrt();
    assert!(norm > 0.0, "iteration vector collapsed");
    for v in x.iter_mut() {
        *v /= norm;
    }
}

/// Dense reference for the density stage: solve
/// `(I - tau A diag(gamma)) u_new = u` directly.
pub fn step_u_dense(grid: &Grid, gamma: &[f64], u: &[f64], tau: f64) -> Vec<f64> {
    let lap = dense_laplacian(grid);
    let n = lap.n;
    let mut m = Dense::zeros(n);
    for i in 0..n {
        for j in 0..n {
            let delta = if i == j { 1.0 } else { 0.0 };
            *m.at_mut(i, j) = delta - tau * lap.at(i, j) * gamma[j];
        }
    }
    let a_copy = {
        let mut c = Dense::zeros(n);
        c.a.copy_from_slice(&m.a);
        c
    };
    lu_factor(m).solve_refined(&a_copy, u)
}

/// Dense reference for the signal stage: solve
/// `(I - tau A + tau diag(u_new)) v_new = v` directly.
pub fn step_v_dense(grid: &Grid, u_new: &[f64], v: &[f64], tau: f64) -> Vec<f64> {
    let lap = dense_laplacian(grid);
    let n = lap.n;
    let mut m = Dense::zeros(n);
    for i in 0..n {
        for j in 0..n {
            let delta = if i == j { 1.0 } else { 0.0 };
            let absorb = if i == j { tau * u_new[i] } else { 0.0 };
            *m.at_mut(i, j) = delta - tau * lap.at(i, j) + absorb;
        }
    }
    let a_copy = {
        let mut c = Dense::zeros(n);
        c.a.copy_from_slice(&m.a);
        c
    };
    lu_factor(m).solve_refined(&a_copy, v)
}

/// Deterministic field with values in `[lo, hi]`.
pub fn random_field(grid: &Arc<Grid>, seed: u64, lo: f64, hi: f64) -> Field {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mid = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    let values = (0..grid.n_cells())
        .map(|_| {
            const TWO53: f64 = 9007199254740992.0;
            let xi = 2.0 * ((rng.next_u64() >> 11) as f64 / TWO53) - 1.0;
            mid + half * xi
        })
        .collect();
    Field::from_values(grid, values).expect("finite by construction")
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
