//! Uniform cell-centered tensor grids with zero-flux boundaries.
//!
//! A grid covers the interval `[0, L0]` or the rectangle `[0, L0] x [0, L1]`
//! with `N_k` equal cells per axis; fields store one value per cell center
//! `x_i = (i + 1/2) h`. The Laplacian is the standard second-order stencil
//! with ghost values reflected across each wall, which encodes zero flux and
//! makes the operator conservative: the entries of `laplacian(z)` sum to
//! zero up to rounding for every `z`.
//!
//! The norm family mirrors the quantities tracked by the decay diagnostics:
//!
//! ```text
//! l1       = sum |z_i| vol          l2  = (sum z_i^2 vol)^(1/2)
//! grad_l2  = <z, -laplacian(z)>^(1/2)   (discrete integration by parts)
//! h1^2     = l2^2 + grad_l2^2
//! h2^2     = l2^2 + grad_l2^2 + l2(laplacian(z))^2
//! ```
//!
//! Defining the gradient norm through the quadratic form keeps summation by
//! parts exact: no separate face-gradient quadrature can drift away from the
//! operator used by the solvers.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use crate::error::Error;

/// Uniform cell-centered grid in one or two space dimensions.
///
/// Unused axis slots are padded with neutral values (`cells = 1`,
/// `spacing = 1`) so volumes and flat indexing work uniformly.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    dim: usize,
    lengths: [f64; 2],
    cells: [usize; 2],
    spacing: [f64; 2],
}

impl Grid {
    /// Grid over a tensor box with the given side lengths and cell counts.
    pub fn new(lengths: &[f64], cells: &[usize]) -> Result<Self, Error> {
        if lengths.len() != cells.len() {
            return Err(Error::Domain(format!(
                "grid axes mismatch: {} lengths vs {} cell counts",
                lengths.len(),
                cells.len()
            )));
        }
        let dim = lengths.len();
        if !(1..=2).contains(&dim) {
            return Err(Error::Domain(format!(
                "grid dimension must be 1 or 2, got {dim}"
            )));
        }
        let mut l = [1.0f64; 2];
        let mut n = [1usize; 2];
        let mut h = [1.0f64; 2];
        for k in 0..dim {
            if !lengths[k].is_finite() || lengths[k] <= 0.0 {
                return Err(Error::Domain(format!(
                    "axis {k} length must be positive and finite, got {}",
                    lengths[k]
                )));
            }
            if cells[k] == 0 {
                return Err(Error::Domain(format!("axis {k} needs at least one cell")));
            }
            l[k] = lengths[k];
            n[k] = cells[k];
            h[k] = lengths[k] / cells[k] as f64;
        }
        Ok(Grid { dim, lengths: l, cells: n, spacing: h })
    }

    /// 1D grid over `[0, length]`.
    pub fn line(length: f64, cells: usize) -> Result<Self, Error> {
        Grid::new(&[length], &[cells])
    }

    /// 2D grid over `[0, lx] x [0, ly]`.
    pub fn rect(lx: f64, ly: f64, nx: usize, ny: usize) -> Result<Self, Error> {
        Grid::new(&[lx, ly], &[nx, ny])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lengths(&self) -> &[f64] {
        &self.lengths[..self.dim]
    }

    pub fn cells(&self) -> &[usize] {
        &self.cells[..self.dim]
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing[..self.dim]
    }

    /// Total number of cells.
    pub fn n_cells(&self) -> usize {
        self.cells[0] * self.cells[1]
    }

    /// Volume of one cell (all cells are congruent).
    pub fn cell_volume(&self) -> f64 {
        self.spacing[0] * self.spacing[1]
    }

    /// Measure of the whole domain.
    pub fn domain_volume(&self) -> f64 {
        self.lengths[..self.dim].iter().product()
    }

    /// Flat row-major index of the cell `(i0, i1)`; `i1` is ignored in 1D.
    #[inline]
    pub fn index(&self, i0: usize, i1: usize) -> usize {
        i0 * self.cells[1] + i1
    }

    /// Center coordinates of the cell with flat index `idx`.
    /// The second entry is 0 for 1D grids.
    pub fn center(&self, idx: usize) -> [f64; 2] {
        let n1 = self.cells[1];
        let i0 = idx / n1;
        let i1 = idx % n1;
        let x = (i0 as f64 + 0.5) * self.spacing[0];
        let y = if self.dim == 2 { (i1 as f64 + 0.5) * self.spacing[1] } else { 0.0 };
        [x, y]
    }
}

/// Scalar field on a [`Grid`], one value per cell, always finite.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: Arc<Grid>,
    values: Vec<f64>,
}

impl Field {
    /// Field filled with one constant.
    pub fn constant(grid: &Arc<Grid>, value: f64) -> Self {
        Field { grid: Arc::clone(grid), values: vec![value; grid.n_cells()] }
    }

    pub fn zeros(grid: &Arc<Grid>) -> Self {
        Field::constant(grid, 0.0)
    }

    /// Field sampled from a function of the cell-center coordinates.
    pub fn from_fn(grid: &Arc<Grid>, f: impl Fn(&[f64]) -> f64) -> Self {
        let values = (0..grid.n_cells())
            .map(|idx| {
                let c = grid.center(idx);
                f(&c[..grid.dim()])
            })
            .collect();
        Field { grid: Arc::clone(grid), values }
    }

    /// Field from raw cell values in row-major order.
    pub fn from_values(grid: &Arc<Grid>, values: Vec<f64>) -> Result<Self, Error> {
        if values.len() != grid.n_cells() {
            return Err(Error::Domain(format!(
                "field length {} does not match grid with {} cells",
                values.len(),
                grid.n_cells()
            )));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("field contains non-finite value {bad}")));
        }
        Ok(Field { grid: Arc::clone(grid), values })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// True when every entry is finite.
    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

fn assert_same_grid(a: &Field, b: &Field) {
    assert!(
        a.grid.as_ref() == b.grid.as_ref(),
        "fields live on different grids"
    );
}

/// Volume-weighted average `(sum z_i vol) / |domain|`; the arithmetic mean
/// of the entries on a uniform grid.
pub fn mean(z: &Field) -> f64 {
    let sum: f64 = z.values.iter().sum();
    sum * z.grid.cell_volume() / z.grid.domain_volume()
}

/// Volume-weighted inner product `sum a_i b_i vol`.
pub fn inner(a: &Field, b: &Field) -> f64 {
    assert_same_grid(a, b);
    let dot: f64 = a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum();
    dot * a.grid.cell_volume()
}

/// Second-order Laplacian with zero-flux walls, written into `out`.
///
/// Each axis contributes `((left - center) + (right - center)) / h^2` with
/// the missing neighbor at a wall replaced by the center value (reflection).
/// The difference-of-differences form makes the result exactly zero on
/// constants and keeps the telescoping sum of the entries at rounding level.
pub fn laplacian_into(z: &Field, out: &mut Field) {
    assert_same_grid(z, out);
    let g = z.grid.as_ref();
    let zv = &z.values;
    let ov = &mut out.values;
    match g.dim {
        1 => {
            let n = g.cells[0];
            let inv_h2 = 1.0 / (g.spacing[0] * g.spacing[0]);
            for i in 0..n {
                let c = zv[i];
                let l = if i > 0 { zv[i - 1] } else { c };
                let r = if i + 1 < n { zv[i + 1] } else { c };
                ov[i] = ((l - c) + (r - c)) * inv_h2;
            }
        }
        2 => {
            let (n0, n1) = (g.cells[0], g.cells[1]);
            let inv_h2_0 = 1.0 / (g.spacing[0] * g.spacing[0]);
            let inv_h2_1 = 1.0 / (g.spacing[1] * g.spacing[1]);
            for i0 in 0..n0 {
                let row = i0 * n1;
                for i1 in 0..n1 {
                    let idx = row + i1;
                    let c = zv[idx];
                    let xl = if i0 > 0 { zv[idx - n1] } else { c };
                    let xr = if i0 + 1 < n0 { zv[idx + n1] } else { c };
                    let yl = if i1 > 0 { zv[idx - 1] } else { c };
                    let yr = if i1 + 1 < n1 { zv[idx + 1] } else { c };
                    ov[idx] =
                        ((xl - c) + (xr - c)) * inv_h2_0 + ((yl - c) + (yr - c)) * inv_h2_1;
                }
            }
        }
        _ => unreachable!("grid dimension is validated at construction"),
    }
}

/// Second-order zero-flux Laplacian of `z` as a new field.
pub fn laplacian(z: &Field) -> Field {
    let mut out = Field::zeros(z.grid());
    laplacian_into(z, &mut out);
    out
}

/// Norm family of one field; see the module docs for definitions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Norms {
    pub l1: f64,
    pub l2: f64,
    pub linf: f64,
    pub grad_l2: f64,
    pub h1: f64,
    pub h2: f64,
}

/// All norms of `z` in one pass (one Laplacian application).
pub fn norms(z: &Field) -> Norms {
    let vol = z.grid.cell_volume();
    let mut l1 = 0.0;
    let mut l2sq = 0.0;
    let mut linf: f64 = 0.0;
    for &v in &z.values {
        l1 += v.abs();
        l2sq += v * v;
        linf = linf.max(v.abs());
    }
    l1 *= vol;
    l2sq *= vol;
    let lap = laplacian(z);
    // Rounding can push the quadratic form of a constant slightly negative.
    let grad_sq = (-inner(z, &lap)).max(0.0);
    let lap_sq = inner(&lap, &lap);
    Norms {
        l1,
        l2: l2sq.sqrt(),
        linf,
        grad_l2: grad_sq.sqrt(),
        h1: (l2sq + grad_sq).sqrt(),
        h2: (l2sq + grad_sq + lap_sq).sqrt(),
    }
}

/// Squared gradient seminorm `<z, -laplacian(z)>`, clamped at zero.
pub fn grad_sq(z: &Field) -> f64 {
    let lap = laplacian(z);
    (-inner(z, &lap)).max(0.0)
}

/// Write a field snapshot: a four-line text header (dim, cells per axis,
/// spacing per axis, time) followed by one value per line, row-major.
/// Floating-point values carry 17 significant digits, enough to restore
/// the exact bit pattern.
pub fn write_snapshot(field: &Field, time: f64, w: &mut impl Write) -> Result<(), Error> {
    let g = field.grid();
    writeln!(w, "dim {}", g.dim())?;
    let cells: Vec<String> = g.cells().iter().map(|c| c.to_string()).collect();
    writeln!(w, "cells {}", cells.join(" "))?;
    let spacing: Vec<String> = g.spacing().iter().map(|&h| crate::fmt::sci17(h)).collect();
    writeln!(w, "spacing {}", spacing.join(" "))?;
    writeln!(w, "time {}", crate::fmt::sci17(time))?;
    for &v in field.values() {
        writeln!(w, "{}", crate::fmt::sci17(v))?;
    }
    Ok(())
}

/// Write a snapshot to a file path; parent directories must exist.
pub fn write_snapshot_file(
    field: &Field,
    time: f64,
    path: impl AsRef<Path>,
) -> Result<(), Error> {
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    write_snapshot(field, time, &mut w)?;
    w.flush()?;
    Ok(())
}

fn header_line(
    line: Option<Result<String, std::io::Error>>,
    key: &str,
) -> Result<String, Error> {
    let line = line
        .ok_or_else(|| Error::Domain(format!("snapshot truncated before '{key}' line")))??;
    let rest = line
        .strip_prefix(key)
        .ok_or_else(|| Error::Domain(format!("snapshot header line must start with '{key}'")))?;
    Ok(rest.trim().to_string())
}

/// Read a snapshot produced by [`write_snapshot`]; returns the field and
/// the stored time.
pub fn read_snapshot(r: impl Read) -> Result<(Field, f64), Error> {
    let mut lines = BufReader::new(r).lines();
    let dim: usize = header_line(lines.next(), "dim")?
        .parse()
        .map_err(|e| Error::Domain(format!("snapshot dim: {e}")))?;
    let cells_text = header_line(lines.next(), "cells")?;
    let cells: Vec<usize> = cells_text
        .split_whitespace()
        .map(|t| t.parse().map_err(|e| Error::Domain(format!("snapshot cells: {e}"))))
        .collect::<Result<_, _>>()?;
    let spacing_text = header_line(lines.next(), "spacing")?;
    let spacing: Vec<f64> = spacing_text
        .split_whitespace()
        .map(|t| t.parse().map_err(|e| Error::Domain(format!("snapshot spacing: {e}"))))
        .collect::<Result<_, _>>()?;
    let time: f64 = header_line(lines.next(), "time")?
        .parse()
        .map_err(|e| Error::Domain(format!("snapshot time: {e}")))?;
    if cells.len() != dim || spacing.len() != dim {
        return Err(Error::Domain(format!(
            "snapshot header inconsistent: dim {dim} with {} cell counts, {} spacings",
            cells.len(),
            spacing.len()
        )));
    }
    let lengths: Vec<f64> =
        cells.iter().zip(&spacing).map(|(&n, &h)| h * n as f64).collect();
    let grid = Arc::new(Grid::new(&lengths, &cells)?);
    let mut values = Vec::with_capacity(grid.n_cells());
    for line in lines {
        let line = line?;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        values.push(
            t.parse::<f64>()
                .map_err(|e| Error::Domain(format!("snapshot value: {e}")))?,
        );
    }
    let field = Field::from_values(&grid, values)?;
    Ok((field, time))
}

/// Read a snapshot from a file path.
pub fn read_snapshot_file(path: impl AsRef<Path>) -> Result<(Field, f64), Error> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| {
        Error::Config(format!("cannot read snapshot file {}: {e}", path.display()))
    })?;
    read_snapshot(file)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_grid(n: usize) -> Arc<Grid> {
        Arc::new(Grid::line(1.0, n).unwrap())
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(Grid::new(&[], &[]).is_err());
        assert!(Grid::new(&[1.0, 1.0, 1.0], &[2, 2, 2]).is_err());
        assert!(Grid::line(0.0, 4).is_err());
        assert!(Grid::line(-1.0, 4).is_err());
        assert!(Grid::line(f64::NAN, 4).is_err());
        assert!(Grid::line(1.0, 0).is_err());
    }

    #[test]
    fn geometry_of_a_rectangle() {
        let g = Grid::rect(2.0, 1.0, 8, 4).unwrap();
        assert_eq!(g.dim(), 2);
        assert_eq!(g.n_cells(), 32);
        assert_eq!(g.spacing(), &[0.25, 0.25]);
        assert!((g.cell_volume() - 0.0625).abs() < 1e-15);
        assert!((g.domain_volume() - 2.0).abs() < 1e-15);
        // Row-major: second axis is contiguous.
        assert_eq!(g.index(1, 0), 4);
        let c = g.center(g.index(1, 2));
        assert!((c[0] - 0.375).abs() < 1e-15);
        assert!((c[1] - 0.625).abs() < 1e-15);
    }

    #[test]
    fn mean_of_a_constant_is_exact() {
        let g = line_grid(7);
        let z = Field::constant(&g, 3.5);
        assert_eq!(mean(&z), 3.5);
    }

    #[test]
    fn mean_matches_quadrature_on_random_values() {
        // Mean must equal the brute-force volume-weighted sum divided by the
        // domain measure; summation order is the only rounding difference.
        let g = Arc::new(Grid::rect(2.0, 0.5, 4, 2).unwrap());
        let vals: Vec<f64> = (0..8).map(|i| ((i * 37 + 11) % 13) as f64 * 0.17 - 0.7).collect();
        let z = Field::from_values(&g, vals.clone()).unwrap();
        let mut quad = 0.0;
        for v in &vals {
            quad += v * g.cell_volume();
        }
        quad /= g.domain_volume();
        assert!((mean(&z) - quad).abs() <= 1e-15 * quad.abs().max(1.0));
    }

    #[test]
    fn laplacian_of_a_constant_is_exactly_zero() {
        let g = line_grid(11);
        let z = Field::constant(&g, 4.0);
        let lap = laplacian(&z);
        assert!(lap.values().iter().all(|&v| v == 0.0));

        let g2 = Arc::new(Grid::rect(1.0, 2.0, 5, 3).unwrap());
        let z2 = Field::constant(&g2, -2.25);
        let lap2 = laplacian(&z2);
        assert!(lap2.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lowest_cosine_mode_is_an_eigenvector() {
        // z_i = cos(pi (i + 1/2) / N) satisfies laplacian(z) = -lambda_1 z
        // exactly under reflection, with lambda_1 = (4/h^2) sin^2(pi / 2N).
        let n = 16;
        let g = line_grid(n);
        let h = g.spacing()[0];
        let z = Field::from_fn(&g, |x| (std::f64::consts::PI * x[0]).cos());
        let lambda1 = 4.0 / (h * h) * (std::f64::consts::PI / (2.0 * n as f64)).sin().powi(2);
        let lap = laplacian(&z);
        for (lv, zv) in lap.values().iter().zip(z.values()) {
            assert!(
                (lv + lambda1 * zv).abs() <= 1e-12 * lambda1,
                "stencil misses the eigenvalue relation: {lv} vs {}",
                -lambda1 * zv
            );
        }
    }

    #[test]
    fn stencil_entries_sum_to_zero() {
        let g = Arc::new(Grid::rect(1.0, 1.0, 6, 6).unwrap());
        let z = Field::from_fn(&g, |x| (3.0 * x[0]).sin() + (2.0 * x[1]).cos() * x[0]);
        let lap = laplacian(&z);
        let total: f64 = lap.values().iter().sum();
        let scale: f64 = z.values().iter().map(|v| v.abs()).sum::<f64>()
            / g.spacing()[0].powi(2).min(g.spacing()[1].powi(2));
        assert!(total.abs() <= 1e-12 * scale.max(1.0));
    }

    #[test]
    fn norms_of_simple_fields() {
        let g = line_grid(4);
        let z = Field::constant(&g, -2.0);
        let n = norms(&z);
        assert!((n.l1 - 2.0).abs() < 1e-14);
        assert!((n.l2 - 2.0).abs() < 1e-14);
        assert_eq!(n.linf, 2.0);
        assert_eq!(n.grad_l2, 0.0);
        assert!((n.h1 - 2.0).abs() < 1e-14);
        assert!((n.h2 - 2.0).abs() < 1e-14);
    }

    #[test]
    fn gradient_norm_vanishes_only_on_constants() {
        let g = line_grid(9);
        let constant = Field::constant(&g, 0.3);
        assert_eq!(norms(&constant).grad_l2, 0.0);

        let mut values = vec![0.3; 9];
        values[4] += 1e-3;
        let bumped = Field::from_values(&g, values).unwrap();
        assert!(norms(&bumped).grad_l2 > 1e-6);
    }

    #[test]
    fn h_norms_nest() {
        let g = line_grid(24);
        let z = Field::from_fn(&g, |x| (7.0 * x[0]).sin());
        let n = norms(&z);
        assert!(n.l2 <= n.h1 && n.h1 <= n.h2);
        // h1 and h2 agree with their defining sums of squares.
        assert!((n.h1.powi(2) - (n.l2.powi(2) + n.grad_l2.powi(2))).abs() <= 1e-13);
    }

    #[test]
    fn field_construction_validates() {
        let g = line_grid(3);
        assert!(Field::from_values(&g, vec![1.0, 2.0]).is_err());
        assert!(Field::from_values(&g, vec![1.0, f64::NAN, 2.0]).is_err());
        assert!(Field::from_values(&g, vec![1.0, f64::INFINITY, 2.0]).is_err());
        assert!(Field::from_values(&g, vec![1.0, 0.0, 2.0]).is_ok());
    }

    #[test]
    fn snapshot_round_trip_1d() {
        let g = line_grid(5);
        let z = Field::from_fn(&g, |x| 1.0 + 0.25 * x[0]);
        let mut buf = Vec::new();
        write_snapshot(&z, 1.25, &mut buf).unwrap();
        let (back, t) = read_snapshot(buf.as_slice()).unwrap();
        assert_eq!(t, 1.25);
        assert_eq!(back.grid().cells(), g.cells());
        for (a, b) in back.values().iter().zip(z.values()) {
            assert!((a - b).abs() <= 1e-15 * b.abs().max(1.0));
        }
        assert!((back.grid().spacing()[0] - g.spacing()[0]).abs() <= 1e-15);
    }

    #[test]
    fn snapshot_round_trip_2d_preserves_row_major_order() {
        let g = Arc::new(Grid::rect(1.0, 3.0, 3, 2).unwrap());
        let vals: Vec<f64> = (0..6).map(|i| i as f64 * 0.5 - 1.0).collect();
        let z = Field::from_values(&g, vals.clone()).unwrap();
        let mut buf = Vec::new();
        write_snapshot(&z, 0.0, &mut buf).unwrap();
        let (back, _) = read_snapshot(buf.as_slice()).unwrap();
        assert_eq!(back.values(), vals.as_slice());
    }

    #[test]
    fn snapshot_rejects_garbage() {
        assert!(read_snapshot("not a header\n".as_bytes()).is_err());
        assert!(read_snapshot("dim 1\ncells 4\nspacing 0.25\n".as_bytes()).is_err());
        let short = "dim 1\ncells 4\nspacing 0.25\ntime 0\n1.0\n2.0\n";
        assert!(read_snapshot(short.as_bytes()).is_err());
    }
}
