//! Scenario configuration, the run loop, and trajectory post-processing.
//!
//! A scenario lives in a plain-text file of `key = value` lines grouped
//! into sections:
//!
//! ```text
//! [grid]
//! lengths = 1.0        # one or two axis lengths
//! cells = 128          # matching cell counts
//!
//! [gamma]
//! law = exp:1.0        # constant:<c> | exp:<chi> | rational:<k> | custom:<file>
//!
//! [initial]
//! u = perturbed:1.0:0.5:42   # constant:<c> | perturbed:<base>:<amp>:<seed>
//!                            # | bump:<center..>:<width>:<mass>
//! v = constant:1.0           # constant:<c> | bump:<center..>:<width>:<peak>
//!
//! [time]
//! tau = 1e-4           # optional; defaults to 0.1 h^2 / max gamma
//! t_end = 20.0
//!
//! [run]
//! cadence = 10         # steps between stored outputs
//! mode = strict        # strict | free
//! lin_tol = 1e-12
//! snapshots = endpoints  # endpoints | none | every:<k>
//! ```
//!
//! Unknown sections or keys are rejected: a misspelled tolerance that
//! silently falls back to a default would defeat the point of the runs.
//!
//! `strict` mode enforces the hypotheses of the decay theory up front
//! (positive mean density, motility positive on the reachable signal
//! range) and refuses to start otherwise; `free` mode runs any admissible
//! data, including motilities that vanish with the signal.
//!
//! The runner advances with a fixed step, validates the scheme invariants
//! after every step, and stores one diagnostics record every `cadence`
//! steps, pinning the record clock to `step * tau` so accumulated
//! addition error never reaches the output. Identity residuals are
//! attached to the record of each landing step; pairwise decay slacks to
//! the later record of each pair; the integral bounds are filled in after
//! the run from the whole history.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::diagnostics::{self, DiagnosticsRecord};
use crate::elliptic::PoissonWorkspace;
use crate::error::Error;
use crate::fmt::sci17;
use crate::grid::{self, Field, Grid};
use crate::motility::Motility;
use crate::stepper::{SimState, StepConfig};

/// Which hypotheses a run enforces before starting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunMode {
    /// Require the decay-theory hypotheses: positive mean density and a
    /// motility bounded away from zero on `[0, max(v_initial)]`.
    Strict,
    /// Run any admissible data; decay verdicts are still reported but
    /// carry no guarantee.
    Free,
}

impl RunMode {
    fn as_str(self) -> &'static str {
        match self {
            RunMode::Strict => "strict",
            RunMode::Free => "free",
        }
    }
}

/// Which stored outputs also get field snapshots on disk.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SnapshotPolicy {
    /// First and last output.
    Endpoints,
    /// No snapshots.
    Never,
    /// Every `k`-th stored output, starting at the first.
    Every(usize),
}

/// One initial field, before it is sampled on a grid.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialData {
    Constant(f64),
    /// `base + amplitude * xi` with `xi` i.i.d. uniform on `[-1, 1)` from
    /// a seeded ChaCha8 stream, cell by cell in row-major order.
    Perturbed { base: f64, amplitude: f64, seed: u64 },
    /// Gaussian profile `exp(-|x - center|^2 / (2 width^2))`. As density
    /// it is scaled to the given total mass; as signal, to the given peak.
    Bump { center: [f64; 2], width: f64, scale: f64 },
}

impl InitialData {
    /// Parses `constant:...`, `perturbed:...`, or `bump:...`; the bump
    /// center takes `dim` coordinates.
    pub fn parse(text: &str, dim: usize) -> Result<Self, Error> {
        let parts: Vec<&str> = text.split(':').collect();
        let num = |s: &str| -> Result<f64, Error> {
            s.trim().parse::<f64>().map_err(|_| {
                Error::Config(format!("expected a number in initial data, got '{s}'"))
            })
        };
        match parts[0].trim() {
            "constant" if parts.len() == 2 => {
                let c = num(parts[1])?;
                if !c.is_finite() || c < 0.0 {
                    return Err(Error::Config(format!(
                        "constant initial level must be finite and nonnegative, got {c}"
                    )));
                }
                Ok(InitialData::Constant(c))
            }
            "perturbed" if parts.len() == 4 => {
                let base = num(parts[1])?;
                let amplitude = num(parts[2])?;
                let seed = parts[3].trim().parse::<u64>().map_err(|_| {
                    Error::Config(format!("perturbation seed must be a u64, got '{}'", parts[3]))
                })?;
                if !base.is_finite() || !amplitude.is_finite() || amplitude < 0.0 {
                    return Err(Error::Config(
                        "perturbation base and amplitude must be finite, amplitude >= 0".into(),
                    ));
                }
                if base < amplitude {
                    return Err(Error::Config(format!(
                        "perturbation can reach {}, below zero; need base >= amplitude",
                        base - amplitude
                    )));
                }
                Ok(InitialData::Perturbed { base, amplitude, seed })
            }
            "bump" if parts.len() == dim + 3 => {
                let mut center = [0.0f64; 2];
                for (k, c) in center.iter_mut().take(dim).enumerate() {
                    *c = num(parts[1 + k])?;
                }
                let width = num(parts[dim + 1])?;
                let scale = num(parts[dim + 2])?;
                if !width.is_finite() || width <= 0.0 {
                    return Err(Error::Config(format!(
                        "bump width must be positive, got {width}"
                    )));
                }
                if !scale.is_finite() || scale < 0.0 {
                    return Err(Error::Config(format!(
                        "bump scale must be nonnegative, got {scale}"
                    )));
                }
                if center.iter().any(|c| !c.is_finite()) {
                    return Err(Error::Config("bump center must be finite".into()));
                }
                Ok(InitialData::Bump { center, width, scale })
            }
            _ => Err(Error::Config(format!(
                "cannot parse initial data '{text}'; expected constant:<c>, \
perturbed:<base>:<amp>:<seed>, or bump:<{dim} center coords>:<width>:<scale>"
            ))),
        }
    }

    /// Samples a density field: bumps are normalized to total mass `scale`.
    pub fn build_density(&self, grid: &Arc<Grid>) -> Result<Field, Error> {
        match self {
            InitialData::Bump { center, width, scale } => {
                let raw = gaussian(grid, *center, *width);
                let total: f64 = raw.values().iter().sum::<f64>() * grid.cell_volume();
                let factor = scale / total;
                let values = raw.values().iter().map(|&r| r * factor).collect();
                Field::from_values(grid, values)
            }
            _ => self.build_plain(grid),
        }
    }

    /// Samples a signal field: bumps keep `scale` as their peak value.
    /// Random perturbations are not supported for the signal.
    pub fn build_signal(&self, grid: &Arc<Grid>) -> Result<Field, Error> {
        match self {
            InitialData::Perturbed { .. } => Err(Error::Config(
                "the signal initial data must be constant or bump".into(),
            )),
            InitialData::Bump { center, width, scale } => {
                let raw = gaussian(grid, *center, *width);
                let values = raw.values().iter().map(|&r| r * scale).collect();
                Field::from_values(grid, values)
            }
            _ => self.build_plain(grid),
        }
    }

    fn build_plain(&self, grid: &Arc<Grid>) -> Result<Field, Error> {
        match *self {
            InitialData::Constant(c) => Ok(Field::constant(grid, c)),
            InitialData::Perturbed { base, amplitude, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let values = (0..grid.n_cells())
                    .map(|_| base + amplitude * unit_noise(&mut rng))
                    .collect();
                Field::from_values(grid, values)
            }
            InitialData::Bump { .. } => unreachable!("bumps are scaled by the caller"),
        }
    }

    pub fn seed(&self) -> Option<u64> {
        match self {
            InitialData::Perturbed { seed, .. } => Some(*seed),
            _ => None,
        }
    }

    pub fn describe(&self) -> String {
        match self {
            InitialData::Constant(c) => format!("constant:{c}"),
            InitialData::Perturbed { base, amplitude, seed } => {
                format!("perturbed:{base}:{amplitude}:{seed}")
            }
            InitialData::Bump { center, width, scale } => {
                format!("bump:{}:{}:{width}:{scale}", center[0], center[1])
            }
        }
    }
}

/// Uniform sample in `[-1, 1)` from the top 53 bits of one draw.
fn unit_noise(rng: &mut ChaCha8Rng) -> f64 {
    const TWO53: f64 = 9007199254740992.0;
    2.0 * ((rng.next_u64() >> 11) as f64 / TWO53) - 1.0
}

fn gaussian(grid: &Arc<Grid>, center: [f64; 2], width: f64) -> Field {
    let dim = grid.dim();
    Field::from_fn(grid, |x| {
        let mut r2 = (x[0] - center[0]) * (x[0] - center[0]);
        if dim == 2 {
            r2 += (x[1] - center[1]) * (x[1] - center[1]);
        }
        (-r2 / (2.0 * width * width)).exp()
    })
}

/// A full run description: geometry, motility, data, clock, and policies.
#[derive(Debug, Clone)]
pub struct ScenarioConfig {
    /// Output label; the file stem when loaded from disk.
    pub name: String,
    pub grid: Grid,
    pub motility: Motility,
    pub u_init: InitialData,
    pub v_init: InitialData,
    /// Step size; `None` picks `0.1 h_min^2 / max gamma` at run time.
    pub tau: Option<f64>,
    pub t_end: f64,
    /// Steps between stored diagnostics records.
    pub cadence: usize,
    pub lin_tol: f64,
    pub mode: RunMode,
    pub snapshots: SnapshotPolicy,
}

/// The repository's canonical scenario: 1D unit interval, 128 cells,
/// exponential motility, noisy density around 1, unit signal.
pub fn default_scenario() -> ScenarioConfig {
    ScenarioConfig {
        name: "default".into(),
        grid: Grid::line(1.0, 128).expect("static geometry"),
        motility: Motility::exponential(1.0).expect("static law"),
        u_init: InitialData::Perturbed { base: 1.0, amplitude: 0.5, seed: 42 },
        v_init: InitialData::Constant(1.0),
        tau: Some(1e-4),
        t_end: 20.0,
        cadence: 10,
        lin_tol: 1e-12,
        mode: RunMode::Strict,
        snapshots: SnapshotPolicy::Endpoints,
    }
}

impl ScenarioConfig {
    pub fn from_file(path: &Path) -> Result<Self, Error> {
        let text = fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read scenario file {}: {e}", path.display()))
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "scenario".into());
        ScenarioConfig::from_str(&text, base, &name)
    }

    /// Parses the section format described in the module docs. `base`
    /// anchors relative paths inside the config (custom motility tables).
    pub fn from_str(text: &str, base: &Path, name: &str) -> Result<Self, Error> {
        let entries = parse_entries(text)?;
        let mut seen = std::collections::BTreeSet::new();
        for (section, key, _) in &entries {
            if !seen.insert((section.clone(), key.clone())) {
                return Err(Error::Config(format!(
                    "duplicate key '{key}' in section [{section}]"
                )));
            }
        }
        let get = |section: &str, key: &str| -> Option<&str> {
            entries
                .iter()
                .find(|(s, k, _)| s == section && k == key)
                .map(|(_, _, v)| v.as_str())
        };
        let require = |section: &str, key: &str| -> Result<&str, Error> {
            get(section, key).ok_or_else(|| {
                Error::Config(format!("missing '{key}' in section [{section}]"))
            })
        };

        for (section, key, _) in &entries {
            let known: &[&str] = match section.as_str() {
                "grid" => &["dim", "lengths", "cells"],
                "gamma" => &["law"],
                "initial" => &["u", "v"],
                "time" => &["tau", "t_end"],
                "run" => &["cadence", "mode", "lin_tol", "snapshots"],
                other => {
                    return Err(Error::Config(format!("unknown section [{other}]")));
                }
            };
            if !known.contains(&key.as_str()) {
                return Err(Error::Config(format!(
                    "unknown key '{key}' in section [{section}]"
                )));
            }
        }

        let lengths = parse_f64_list(require("grid", "lengths")?, "grid.lengths")?;
        let cells = parse_usize_list(require("grid", "cells")?, "grid.cells")?;
        if let Some(d) = get("grid", "dim") {
            let d: usize = d
                .parse()
                .map_err(|_| Error::Config(format!("grid.dim must be an integer, got '{d}'")))?;
            if d != lengths.len() {
                return Err(Error::Config(format!(
                    "grid.dim = {d} disagrees with {} axis lengths",
                    lengths.len()
                )));
            }
        }
        let grid = Grid::new(&lengths, &cells).map_err(config_from)?;

        let motility = Motility::parse(require("gamma", "law")?, base)?;

        let dim = grid.dim();
        let u_init = InitialData::parse(require("initial", "u")?, dim)?;
        let v_init = InitialData::parse(require("initial", "v")?, dim)?;
        if matches!(v_init, InitialData::Perturbed { .. }) {
            return Err(Error::Config(
                "the signal initial data must be constant or bump".into(),
            ));
        }

        let tau = match get("time", "tau") {
            Some(s) => Some(parse_f64(s, "time.tau")?),
            None => None,
        };
        let t_end = parse_f64(require("time", "t_end")?, "time.t_end")?;

        let cadence = match get("run", "cadence") {
            Some(s) => s.parse::<usize>().map_err(|_| {
                Error::Config(format!("run.cadence must be a positive integer, got '{s}'"))
            })?,
            None => 10,
        };
        let mode = match get("run", "mode") {
            Some("strict") | None => RunMode::Strict,
            Some("free") => RunMode::Free,
            Some(other) => {
                return Err(Error::Config(format!(
                    "run.mode must be strict or free, got '{other}'"
                )));
            }
        };
        let lin_tol = match get("run", "lin_tol") {
            Some(s) => parse_f64(s, "run.lin_tol")?,
            None => 1e-12,
        };
        let snapshots = match get("run", "snapshots") {
            Some("endpoints") | None => SnapshotPolicy::Endpoints,
            Some("none") => SnapshotPolicy::Never,
            Some(s) => match s.strip_prefix("every:") {
                Some(k) => {
                    let k: usize = k.parse().map_err(|_| {
                        Error::Config(format!("run.snapshots every:<k> needs an integer, got '{s}'"))
                    })?;
                    if k == 0 {
                        return Err(Error::Config("run.snapshots every:<k> needs k >= 1".into()));
                    }
                    SnapshotPolicy::Every(k)
                }
                None => {
                    return Err(Error::Config(format!(
                        "run.snapshots must be endpoints, none, or every:<k>, got '{s}'"
                    )));
                }
            },
        };

        let cfg = ScenarioConfig {
            name: name.into(),
            grid,
            motility,
            u_init,
            v_init,
            tau,
            t_end,
            cadence,
            lin_tol,
            mode,
            snapshots,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), Error> {
        if !self.t_end.is_finite() || self.t_end <= 0.0 {
            return Err(Error::Config(format!(
                "t_end must be positive and finite, got {}",
                self.t_end
            )));
        }
        if self.cadence == 0 {
            return Err(Error::Config("cadence must be at least 1".into()));
        }
        if let Some(tau) = self.tau {
            if !tau.is_finite() || tau <= 0.0 {
                return Err(Error::Config(format!(
                    "tau must be positive and finite, got {tau}"
                )));
            }
        }
        if !self.lin_tol.is_finite() || self.lin_tol <= 0.0 || self.lin_tol > 1e-2 {
            return Err(Error::Config(format!(
                "lin_tol must lie in (0, 1e-2], got {}",
                self.lin_tol
            )));
        }
        Ok(())
    }

    /// The step size the run will use: the configured one, or
    /// `0.1 h_min^2 / max gamma` over the reachable signal range.
    pub fn effective_tau(&self, v_in: &Field) -> Result<f64, Error> {
        if let Some(tau) = self.tau {
            return Ok(tau);
        }
        let v_sup = v_in.max().max(0.0);
        let mut gamma_max = 0.0f64;
        const POINTS: usize = 2048;
        for i in 0..=POINTS {
            let s = v_sup * (i as f64 / POINTS as f64);
            gamma_max = gamma_max.max(self.motility.eval(s)?);
        }
        let h_min = self
            .grid
            .spacing()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        let tau = 0.1 * h_min * h_min / gamma_max;
        if !tau.is_finite() || tau <= 0.0 {
            return Err(Error::Config(format!(
                "cannot infer a time step (max motility {gamma_max}); set time.tau"
            )));
        }
        Ok(tau)
    }
}

fn config_from(e: Error) -> Error {
    Error::Config(e.to_string())
}

fn parse_entries(text: &str) -> Result<Vec<(String, String, String)>, Error> {
    let mut out = Vec::new();
    let mut section = String::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let name = name.strip_suffix(']').ok_or_else(|| {
                Error::Config(format!("line {}: malformed section header '{line}'", ln + 1))
            })?;
            section = name.trim().to_ascii_lowercase();
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("line {}: expected 'key = value', got '{line}'", ln + 1))
        })?;
        if section.is_empty() {
            return Err(Error::Config(format!(
                "line {}: '{}' appears before any [section]",
                ln + 1,
                key.trim()
            )));
        }
        out.push((
            section.clone(),
            key.trim().to_ascii_lowercase(),
            value.trim().to_string(),
        ));
    }
    Ok(out)
}

fn parse_f64(s: &str, what: &str) -> Result<f64, Error> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| Error::Config(format!("{what} must be a number, got '{s}'")))
}

fn parse_f64_list(s: &str, what: &str) -> Result<Vec<f64>, Error> {
    s.split_whitespace().map(|p| parse_f64(p, what)).collect()
}

fn parse_usize_list(s: &str, what: &str) -> Result<Vec<usize>, Error> {
    s.split_whitespace()
        .map(|p| {
            p.parse::<usize>()
                .map_err(|_| Error::Config(format!("{what} must be integers, got '{p}'")))
        })
        .collect()
}

/// Exponential fit of one recorded quantity over a time window.
#[derive(Debug, Clone, PartialEq)]
pub struct RateFit {
    pub quantity: String,
    /// Decay rate `b` of the least-squares fit `a e^(-b t)`.
    pub rate: f64,
    pub window: (f64, f64),
    /// Coefficient of determination of the log-linear fit.
    pub goodness: f64,
}

/// Least-squares exponential decay rate of `quantity` over `window`.
/// Records within half an output spacing of the window ends count as
/// inside. Every sampled value must be positive.
pub fn fit_rate(
    records: &[DiagnosticsRecord],
    quantity: &str,
    window: (f64, f64),
) -> Result<RateFit, Error> {
    let (t0, t1) = window;
    if !(t1 > t0) {
        return Err(Error::Domain(format!(
            "fit window must satisfy t1 > t0, got ({t0}, {t1})"
        )));
    }
    let extract = quantity_extractor(quantity)?;
    let slop = if records.len() >= 2 {
        0.5 * (records[1].t - records[0].t).abs()
    } else {
        0.0
    };
    let mut ts = Vec::new();
    let mut ys = Vec::new();
    for r in records {
        if r.t >= t0 - slop && r.t <= t1 + slop {
            let q = extract(r);
            if !(q > 0.0) {
                return Err(Error::Domain(format!(
                    "{quantity} is not positive at t = {} (value {q}); cannot fit a rate",
                    r.t
                )));
            }
            ts.push(r.t);
            ys.push(q.ln());
        }
    }
    if ts.len() < 2 {
        return Err(Error::InsufficientHistory(format!(
            "fit window ({t0}, {t1}) covers {} records; need at least 2",
            ts.len()
        )));
    }
    let n = ts.len() as f64;
    let t_mean = ts.iter().sum::<f64>() / n;
    let y_mean = ys.iter().sum::<f64>() / n;
    let mut stt = 0.0;
    let mut sty = 0.0;
    let mut syy = 0.0;
    for (t, y) in ts.iter().zip(&ys) {
        stt += (t - t_mean) * (t - t_mean);
        sty += (t - t_mean) * (y - y_mean);
        syy += (y - y_mean) * (y - y_mean);
    }
    let slope = sty / stt;
    let ss_res = (syy - sty * sty / stt).max(0.0);
    let goodness = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    Ok(RateFit { quantity: quantity.into(), rate: -slope, window, goodness })
}

fn quantity_extractor(name: &str) -> Result<fn(&DiagnosticsRecord) -> f64, Error> {
    Ok(match name {
        "vLinf" => |r: &DiagnosticsRecord| r.v_linf,
        "vL1" => |r: &DiagnosticsRecord| r.v_l1,
        "vL2" => |r: &DiagnosticsRecord| r.v_l2,
        "vGradL2" => |r: &DiagnosticsRecord| r.v_grad_l2,
        "vH1" => |r: &DiagnosticsRecord| r.v_h1,
        "vH2" => |r: &DiagnosticsRecord| r.v_h2,
        "uMinusM_L2" => |r: &DiagnosticsRecord| r.u_dev_l2,
        "gradP_L2" => |r: &DiagnosticsRecord| r.grad_p_l2,
        "liapunov" => |r: &DiagnosticsRecord| r.liapunov,
        other => {
            return Err(Error::Domain(format!(
                "unknown quantity '{other}' for rate fitting"
            )));
        }
    })
}

/// Everything a finished run reports besides the trajectory itself.
#[derive(Debug, Clone)]
pub struct Summary {
    pub mode: RunMode,
    pub grid_desc: String,
    pub gamma_desc: String,
    pub u_init_desc: String,
    pub v_init_desc: String,
    pub seed: Option<u64>,
    pub tau: f64,
    pub t_end_effective: f64,
    pub n_steps: usize,
    pub cadence: usize,
    pub lin_tol: f64,
    pub constants: crate::elliptic::DerivedConstants,
    pub final_record: DiagnosticsRecord,
    pub liapunov_monotone: bool,
    pub linf_monotone: bool,
    pub max_mass_drift_rel: f64,
    pub max_dissipation_slack_rel: f64,
    pub max_energy_residual: f64,
    pub max_duality_residual: f64,
    pub max_composite_decay_slack: f64,
    pub max_gradient_decay_slack: f64,
    pub max_v_grad_decay_slack: f64,
    pub max_v_l1_decay_slack: f64,
    pub max_grad_p_bound_slack: f64,
    pub tail_rate_v_l1: Option<RateFit>,
}

impl Summary {
    /// Deterministic `key = value` text; floats carry full precision, so
    /// identical runs produce identical bytes.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        };
        kv("mode", self.mode.as_str().into());
        kv("grid", self.grid_desc.clone());
        kv("gamma", self.gamma_desc.clone());
        kv("u_init", self.u_init_desc.clone());
        kv("v_init", self.v_init_desc.clone());
        if let Some(seed) = self.seed {
            kv("rng", "chacha8".into());
            kv("seed", seed.to_string());
        }
        kv("tau", sci17(self.tau));
        kv("t_end_effective", sci17(self.t_end_effective));
        kv("n_steps", self.n_steps.to_string());
        kv("cadence", self.cadence.to_string());
        kv("lin_tol", sci17(self.lin_tol));
        let k = &self.constants;
        kv("u_mean", sci17(k.u_mean));
        kv("v_sup", sci17(k.v_sup));
        kv("c1", sci17(k.c1));
        kv("gamma_min", sci17(k.gamma_min));
        kv("gamma_deriv_sup", sci17(k.gamma_deriv_sup));
        kv("c2", sci17(k.c2));
        kv("c4", sci17(k.c4));
        kv("c5", sci17(k.c5));
        let f = &self.final_record;
        kv("final_t", sci17(f.t));
        kv("final_u_dev_l2", sci17(f.u_dev_l2));
        kv("final_v_l1", sci17(f.v_l1));
        kv("final_v_h1", sci17(f.v_h1));
        kv("final_v_linf", sci17(f.v_linf));
        kv("final_liapunov", sci17(f.liapunov));
        kv("liapunov_monotone", self.liapunov_monotone.to_string());
        kv("linf_monotone", self.linf_monotone.to_string());
        kv("max_mass_drift_rel", sci17(self.max_mass_drift_rel));
        kv(
            "max_dissipation_slack_rel",
            sci17(self.max_dissipation_slack_rel),
        );
        kv("max_energy_residual", sci17(self.max_energy_residual));
        kv("max_duality_residual", sci17(self.max_duality_residual));
        kv("max_composite_decay_slack", sci17(self.max_composite_decay_slack));
        kv("max_gradient_decay_slack", sci17(self.max_gradient_decay_slack));
        kv("max_v_grad_decay_slack", sci17(self.max_v_grad_decay_slack));
        kv("max_v_l1_decay_slack", sci17(self.max_v_l1_decay_slack));
        kv("max_grad_p_bound_slack", sci17(self.max_grad_p_bound_slack));
        if let Some(fit) = &self.tail_rate_v_l1 {
            kv("v_l1_tail_rate", sci17(fit.rate));
            kv(
                "v_l1_tail_window",
                format!("{}..{}", sci17(fit.window.0), sci17(fit.window.1)),
            );
            kv("v_l1_tail_r2", sci17(fit.goodness));
        }
        s
    }
}

/// A finished trajectory: records, verdicts, and the final fields.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub records: Vec<DiagnosticsRecord>,
    pub summary: Summary,
    pub u: Field,
    pub v: Field,
}

/// Runs the scenario in memory.
pub fn run(cfg: &ScenarioConfig) -> Result<RunOutput, Error> {
    run_impl(cfg, &mut |_| {}, &mut |_| Ok(()))
}

/// Runs the scenario and writes `diagnostics.csv`, `summary.txt`, and
/// `snapshots/` into `dir`. If an invariant fails mid-run the offending
/// state is dumped as `snapshots/u_abort.field` / `v_abort.field` before
/// the error propagates.
pub fn run_to_dir(cfg: &ScenarioConfig, dir: &Path) -> Result<RunOutput, Error> {
    fs::create_dir_all(dir)?;
    let snap_dir = dir.join("snapshots");

    let mut on_abort = |state: &SimState| {
        // Best effort: the primary error matters more than dump failures.
        let _ = fs::create_dir_all(&snap_dir);
        let _ = grid::write_snapshot_file(state.u(), state.t(), &snap_dir.join("u_abort.field"));
        let _ = grid::write_snapshot_file(state.v(), state.t(), &snap_dir.join("v_abort.field"));
    };

    let policy = cfg.snapshots;
    let snap_dir2 = dir.join("snapshots");
    let mut out_index = 0usize;
    let mut on_output = |state: &SimState| -> Result<(), Error> {
        let write = match policy {
            SnapshotPolicy::Never => false,
            SnapshotPolicy::Endpoints => out_index == 0,
            SnapshotPolicy::Every(k) => out_index % k == 0,
        };
        out_index += 1;
        if write {
            fs::create_dir_all(&snap_dir2)?;
            write_pair(state.u(), state.v(), state.t(), &snap_dir2)?;
        }
        Ok(())
    };

    let out = run_impl(cfg, &mut on_abort, &mut on_output)?;

    if cfg.snapshots == SnapshotPolicy::Endpoints {
        fs::create_dir_all(&snap_dir)?;
        write_pair(&out.u, &out.v, out.summary.final_record.t, &snap_dir)?;
    }

    let mut csv = Vec::new();
    diagnostics::write_csv(&mut csv, &out.records)?;
    fs::write(dir.join("diagnostics.csv"), csv)?;
    fs::write(dir.join("summary.txt"), out.summary.to_text())?;
    Ok(out)
}

fn write_pair(u: &Field, v: &Field, t: f64, snap_dir: &Path) -> Result<(), Error> {
    grid::write_snapshot_file(u, t, &snap_dir.join(format!("u_t_{t:.9}.field")))?;
    grid::write_snapshot_file(v, t, &snap_dir.join(format!("v_t_{t:.9}.field")))?;
    Ok(())
}

fn run_impl(
    cfg: &ScenarioConfig,
    on_abort: &mut dyn FnMut(&SimState),
    on_output: &mut dyn FnMut(&SimState) -> Result<(), Error>,
) -> Result<RunOutput, Error> {
    cfg.validate()?;
    let grid = Arc::new(cfg.grid.clone());
    let u0 = cfg.u_init.build_density(&grid)?;
    let v0 = cfg.v_init.build_signal(&grid)?;
    let tau = cfg.effective_tau(&v0)?;

    let motility = cfg
        .motility
        .clone()
        .with_positivity_required(cfg.mode == RunMode::Strict);
    let mut step_cfg = StepConfig::new(tau)?;
    step_cfg.lin_tol = cfg.lin_tol;

    let mut state = SimState::new(u0, v0, motility.clone(), step_cfg)?;
    if cfg.mode == RunMode::Strict {
        state.constants().validate_positivity().map_err(config_from)?;
    }

    let n_steps = {
        let raw = (cfg.t_end / tau).ceil() as usize;
        let raw = raw.max(1);
        raw.div_ceil(cfg.cadence) * cfg.cadence
    };

    let m = state.constants().u_mean;
    let constants = *state.constants();
    let mut res_ws = PoissonWorkspace::new(&grid).with_tolerance(cfg.lin_tol);

    let mut records: Vec<DiagnosticsRecord> = Vec::with_capacity(n_steps / cfg.cadence + 1);
    let p0 = state.dual_potential()?;
    records.push(diagnostics::record(&state, &p0));
    on_output(&state)?;

    let mut max_dissipation_slack_rel = 0.0f64;
    let mut step = 0usize;
    while step < n_steps {
        step += 1;
        let landing = step % cfg.cadence == 0;
        let (u_old, v_old) = if landing {
            (Some(state.u().clone()), Some(state.v().clone()))
        } else {
            (None, None)
        };

        let report = match state.advance() {
            Ok(r) => r,
            Err(e) => {
                on_abort(&state);
                return Err(e);
            }
        };
        let slack = (report.dissipation_lhs - report.dissipation_rhs)
            / report.dissipation_rhs.max(1e-300);
        max_dissipation_slack_rel = max_dissipation_slack_rel.max(slack);

        if let Err(e) = state.validate() {
            on_abort(&state);
            return Err(e);
        }

        if landing {
            state.set_time(step as f64 * tau);
            let p = state.dual_potential()?;
            let mut rec = diagnostics::record(&state, &p);
            let u_old = u_old.expect("cloned on landing steps");
            let v_old = v_old.expect("cloned on landing steps");
            rec.energy_identity_residual =
                diagnostics::energy_identity_residual(&v_old, state.v(), state.u(), tau);
            rec.duality_identity_residual = diagnostics::duality_identity_residual(
                &u_old,
                state.u(),
                &v_old,
                &motility,
                m,
                tau,
                &mut res_ws,
            )?;
            let prev = *records.last().expect("initial record exists");
            rec.composite_decay_slack = diagnostics::composite_decay_slack(&prev, &rec, &constants);
            rec.gradient_decay_slack = diagnostics::gradient_decay_slack(&prev, &rec, &constants);
            records.push(rec);
            on_output(&state)?;
        }
    }

    let gslacks = diagnostics::gronwall_slacks(&records, &constants)?;
    for (r, (grad_slack, mass_slack)) in records.iter_mut().zip(&gslacks) {
        r.v_grad_decay_slack = *grad_slack;
        r.v_l1_decay_slack = *mass_slack;
    }

    let t_end_effective = n_steps as f64 * tau;
    let l0 = records[0].liapunov;
    let eps = 1e-8 * l0.max(1.0);
    let liapunov_monotone = records
        .windows(2)
        .all(|w| w[1].liapunov <= w[0].liapunov + eps);

    let fold_max = |f: fn(&DiagnosticsRecord) -> f64| {
        records.iter().map(f).fold(f64::NEG_INFINITY, f64::max)
    };
    let tail_window = (0.75 * t_end_effective, t_end_effective);
    let summary = Summary {
        mode: cfg.mode,
        grid_desc: describe_grid(&grid),
        gamma_desc: cfg.motility.describe(),
        u_init_desc: cfg.u_init.describe(),
        v_init_desc: cfg.v_init.describe(),
        seed: cfg.u_init.seed(),
        tau,
        t_end_effective,
        n_steps,
        cadence: cfg.cadence,
        lin_tol: cfg.lin_tol,
        constants,
        final_record: *records.last().expect("at least the initial record"),
        liapunov_monotone,
        linf_monotone: diagnostics::linf_monotone(&records),
        max_mass_drift_rel: records
            .iter()
            .map(|r| (r.mass_mean - m).abs() / m.abs().max(f64::MIN_POSITIVE))
            .fold(0.0, f64::max),
        max_dissipation_slack_rel,
        max_energy_residual: fold_max(|r| r.energy_identity_residual),
        max_duality_residual: fold_max(|r| r.duality_identity_residual),
        max_composite_decay_slack: fold_max(|r| r.composite_decay_slack),
        max_gradient_decay_slack: fold_max(|r| r.gradient_decay_slack),
        max_v_grad_decay_slack: fold_max(|r| r.v_grad_decay_slack),
        max_v_l1_decay_slack: fold_max(|r| r.v_l1_decay_slack),
        max_grad_p_bound_slack: fold_max(|r| r.grad_p_bound_slack),
        tail_rate_v_l1: fit_rate(&records, "vL1", tail_window).ok(),
    };

    Ok(RunOutput {
        records,
        summary,
        u: state.u().clone(),
        v: state.v().clone(),
    })
}

fn describe_grid(grid: &Grid) -> String {
    if grid.dim() == 1 {
        format!("1d, {} cells, length {}", grid.cells()[0], grid.lengths()[0])
    } else {
        format!(
            "2d, {}x{} cells, lengths {}x{}",
            grid.cells()[0],
            grid.cells()[1],
            grid.lengths()[0],
            grid.lengths()[1]
        )
    }
}

/// Runs each scenario into a numbered subdirectory of `out_dir` and
/// aggregates one row per run into `out_dir/summary.csv`. Failures are
/// recorded in their row and do not stop the sweep.
pub fn sweep(
    cfgs: &[ScenarioConfig],
    out_dir: &Path,
) -> Result<Vec<(String, Result<RunOutput, Error>)>, Error> {
    fs::create_dir_all(out_dir)?;
    let mut results = Vec::with_capacity(cfgs.len());
    for (i, cfg) in cfgs.iter().enumerate() {
        let label = format!("{:02}_{}", i, cfg.name);
        let res = run_to_dir(cfg, &out_dir.join(&label));
        results.push((label, res));
    }

    let mut csv = String::from(
        "name,status,finalT,finalUDevL2,finalVH1,finalVL1,liapunovMonotone,linfMonotone,\
maxDissipationSlackRel,maxMassDriftRel,vL1TailRate\n",
    );
    for (label, res) in &results {
        match res {
            Ok(out) => {
                let s = &out.summary;
                let f = &s.final_record;
                csv.push_str(&format!(
                    "{label},ok,{},{},{},{},{},{},{},{},{}\n",
                    sci17(f.t),
                    sci17(f.u_dev_l2),
                    sci17(f.v_h1),
                    sci17(f.v_l1),
                    s.liapunov_monotone,
                    s.linf_monotone,
                    sci17(s.max_dissipation_slack_rel),
                    sci17(s.max_mass_drift_rel),
                    s.tail_rate_v_l1
                        .as_ref()
                        .map(|r| sci17(r.rate))
                        .unwrap_or_default(),
                ));
            }
            Err(e) => {
                let msg = e.to_string().replace([',', '\n'], ";");
                csv.push_str(&format!("{label},failed({}): {msg},,,,,,,,,\n", e.exit_code()));
            }
        }
    }
    let mut file = fs::File::create(out_dir.join("summary.csv"))?;
    file.write_all(csv.as_bytes())?;
    Ok(results)
}

/// Reads a sweep list: one scenario path per line, `#` comments allowed,
/// relative paths anchored at the list's directory.
pub fn read_sweep_list(path: &Path) -> Result<Vec<ScenarioConfig>, Error> {
    let text = fs::read_to_string(path).map_err(|e| {
        Error::Config(format!("cannot read sweep list {}: {e}", path.display()))
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut cfgs = Vec::new();
    for raw in text.lines() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let p = PathBuf::from(line);
        let p = if p.is_absolute() { p } else { base.join(p) };
        cfgs.push(ScenarioConfig::from_file(&p)?);
    }
    Ok(cfgs)
}
