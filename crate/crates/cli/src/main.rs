//! `chemsim`: drive the simulator from scenario files.
//!
//! Subcommands:
//! - `simulate <config>`: run one scenario, write `diagnostics.csv`,
//!   `summary.txt`, and `snapshots/` into the output directory.
//! - `sweep <list>`: run every scenario named in a list file, one output
//!   directory per run plus an aggregate `summary.csv`.
//! - `verify <config>`: check the structural properties of the configured
//!   setup (discrete inequalities, solver duality, one-step invariants)
//!   without running a trajectory; one PASS/FAIL line per property.
//!
//! Exit codes: 0 success, 2 configuration problem, 3 violated invariant
//! or failed property, 4 linear-solver failure.

use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use chemsim_core::elliptic::dual_potential;
use chemsim_core::grid::{self, Field};
use chemsim_core::scenario::{self, ScenarioConfig};
use chemsim_core::{Error, Grid, PoissonWorkspace, SimState, StepConfig};

#[derive(Parser)]
#[command(name = "chemsim", version, about = "Chemotaxis-consumption simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario file and write its outputs.
    Simulate {
        /// Scenario description file.
        config: PathBuf,
        /// Output directory.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Override the steps-per-output cadence.
        #[arg(long)]
        cadence: Option<usize>,
        /// Override the time step.
        #[arg(long)]
        tau: Option<f64>,
    },
    /// Run every scenario listed in a file (one path per line).
    Sweep {
        /// List file; `#` starts a comment line.
        list: PathBuf,
        /// Directory that receives one subdirectory per run.
        #[arg(long, default_value = "sweep_out")]
        out: PathBuf,
    },
    /// Check structural properties of the configured setup; no time loop.
    Verify {
        /// Scenario description file.
        config: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Simulate { config, out, cadence, tau } => simulate(&config, &out, cadence, tau),
        Command::Sweep { list, out } => sweep(&list, &out),
        Command::Verify { config } => {
            return match verify(&config) {
                Ok(true) => ExitCode::SUCCESS,
                Ok(false) => ExitCode::from(3),
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(e.exit_code() as u8)
                }
            };
        }
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn simulate(
    config: &PathBuf,
    out: &PathBuf,
    cadence: Option<usize>,
    tau: Option<f64>,
) -> Result<(), Error> {
    let mut cfg = ScenarioConfig::from_file(config)?;
    if let Some(c) = cadence {
        cfg.cadence = c;
    }
    if let Some(t) = tau {
        cfg.tau = Some(t);
    }
    cfg.validate()?;

    let result = scenario::run_to_dir(&cfg, out)?;
    let s = &result.summary;
    let f = &s.final_record;
    println!(
        "{}: {} | gamma {} | {} mode",
        cfg.name, s.grid_desc, s.gamma_desc, mode_name(s.mode)
    );
    println!(
        "{} steps at tau = {:.3e}, one record per {} steps",
        s.n_steps, s.tau, s.cadence
    );
    println!(
        "final t = {:.6}: |u - M|_2 = {:.6e}, |v|_H1 = {:.6e}, |v|_inf = {:.6e}",
        f.t, f.u_dev_l2, f.v_h1, f.v_linf
    );
    println!(
        "liapunov monotone: {} | sup norm monotone: {} | max mass drift: {:.3e}",
        s.liapunov_monotone, s.linf_monotone, s.max_mass_drift_rel
    );
    if let Some(fit) = &s.tail_rate_v_l1 {
        println!(
            "tail |v|_1 decay rate {:.6} (R^2 = {:.6}) vs mean density {:.6}",
            fit.rate, fit.goodness, s.constants.u_mean
        );
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn sweep(list: &PathBuf, out: &PathBuf) -> Result<(), Error> {
    let cfgs = scenario::read_sweep_list(list)?;
    if cfgs.is_empty() {
        return Err(Error::Config(format!(
            "sweep list {} names no scenarios",
            list.display()
        )));
    }
    let results = scenario::sweep(&cfgs, out)?;
    let mut failures = 0usize;
    for (label, res) in &results {
        match res {
            Ok(run) => {
                let f = &run.summary.final_record;
                println!(
                    "{label}: ok, final |u - M|_2 = {:.3e}, |v|_H1 = {:.3e}",
                    f.u_dev_l2, f.v_h1
                );
            }
            Err(e) => {
                failures += 1;
                println!("{label}: FAILED ({e})");
            }
        }
    }
    println!(
        "{} of {} runs completed; aggregate in {}",
        results.len() - failures,
        results.len(),
        out.join("summary.csv").display()
    );
    Ok(())
}

fn mode_name(mode: scenario::RunMode) -> &'static str {
    match mode {
        scenario::RunMode::Strict => "strict",
        scenario::RunMode::Free => "free",
    }
}

/// Number of random fields for the inequality checks.
const FIELD_SAMPLES: usize = 200;
/// Number of random states advanced one step for the invariant checks.
const STEP_SAMPLES: usize = 20;

fn verify(config: &PathBuf) -> Result<bool, Error> {
    let cfg = ScenarioConfig::from_file(config)?;
    let grid = Arc::new(cfg.grid.clone());
    let u0 = cfg.u_init.build_density(&grid)?;
    let v0 = cfg.v_init.build_signal(&grid)?;
    let tau = cfg.effective_tau(&v0)?;

    let mut all = true;
    let mut check = |name: &str, result: Result<(), String>| {
        match result {
            Ok(()) => println!("PASS {name}"),
            Err(why) => {
                all = false;
                println!("FAIL {name}: {why}");
            }
        }
    };

    let seed = cfg.u_init.seed().unwrap_or(0x0DDB1A5E5);
    check(
        "laplacian conserves the total",
        laplacian_conservative(&grid, seed),
    );
    check(
        "laplacian is self-adjoint",
        laplacian_self_adjoint(&grid, seed ^ 1),
    );
    check(
        "poincare-wirtinger inequality",
        poincare_wirtinger(&grid, seed ^ 2),
    );
    check(
        "potential gradient bound and duality",
        potential_duality(&grid, cfg.lin_tol, seed ^ 3),
    );
    check(
        "one-step invariants from random states",
        step_invariants(&cfg, &grid, &v0, tau, seed ^ 4),
    );
    check("derived constants", constants_sane(&cfg, &u0, &v0));

    println!("{}", if all { "all properties hold" } else { "properties violated" });
    Ok(all)
}

fn unit_noise(rng: &mut ChaCha8Rng) -> f64 {
    const TWO53: f64 = 9007199254740992.0;
    2.0 * ((rng.next_u64() >> 11) as f64 / TWO53) - 1.0
}

fn random_field(grid: &Arc<Grid>, rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Field {
    let mid = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    let values = (0..grid.n_cells())
        .map(|_| mid + half * unit_noise(rng))
        .collect();
    Field::from_values(grid, values).expect("finite by construction")
}

fn laplacian_conservative(grid: &Arc<Grid>, seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for trial in 0..FIELD_SAMPLES {
        let z = random_field(grid, &mut rng, -1.0, 1.0);
        let lap = grid::laplacian(&z);
        let total: f64 = lap.values().iter().sum();
        let scale: f64 = lap.values().iter().map(|x| x.abs()).sum::<f64>() + 1e-300;
        if total.abs() > 1e-12 * scale {
            return Err(format!(
                "trial {trial}: sum of laplacian = {:.3e} against scale {:.3e}",
                total, scale
            ));
        }
    }
    Ok(())
}

fn laplacian_self_adjoint(grid: &Arc<Grid>, seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for trial in 0..FIELD_SAMPLES {
        let a = random_field(grid, &mut rng, -1.0, 1.0);
        let b = random_field(grid, &mut rng, -1.0, 1.0);
        let left = grid::inner(&a, &grid::laplacian(&b));
        let right = grid::inner(&grid::laplacian(&a), &b);
        let scale = left.abs().max(right.abs()).max(1e-300);
        if (left - right).abs() > 1e-11 * scale {
            return Err(format!(
                "trial {trial}: <a, Lb> = {left:.12e} but <La, b> = {right:.12e}"
            ));
        }
    }
    Ok(())
}

fn poincare_wirtinger(grid: &Arc<Grid>, seed: u64) -> Result<(), String> {
    let c1 = chemsim_core::poincare_constant(grid);
    let vol = grid.cell_volume();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for trial in 0..FIELD_SAMPLES {
        let z = random_field(grid, &mut rng, -1.0, 1.0);
        let zbar = grid::mean(&z);
        let dev_sq: f64 = z.values().iter().map(|x| (x - zbar) * (x - zbar)).sum::<f64>() * vol;
        let dev = dev_sq.sqrt();
        let grad = grid::grad_sq(&z).sqrt();
        if dev > c1 * grad * (1.0 + 1e-10) + 1e-14 {
            return Err(format!(
                "trial {trial}: |z - mean|_2 = {dev:.12e} exceeds c1 |grad z|_2 = {:.12e}",
                c1 * grad
            ));
        }
    }
    Ok(())
}

fn potential_duality(grid: &Arc<Grid>, lin_tol: f64, seed: u64) -> Result<(), String> {
    let c1 = chemsim_core::poincare_constant(grid);
    let vol = grid.cell_volume();
    let mut ws = PoissonWorkspace::new(grid).with_tolerance(lin_tol);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for trial in 0..FIELD_SAMPLES {
        let u = random_field(grid, &mut rng, 0.2, 2.0);
        let m = grid::mean(&u);
        let p = dual_potential(&mut ws, &u, m).map_err(|e| format!("trial {trial}: {e}"))?;

        let grad_sq = grid::grad_sq(&p);
        let dev_sq: f64 = u.values().iter().map(|x| (x - m) * (x - m)).sum::<f64>() * vol;
        let dev = dev_sq.sqrt();
        if grad_sq.sqrt() > c1 * dev * (1.0 + 1e-10) + 1e-14 {
            return Err(format!(
                "trial {trial}: |grad P|_2 = {:.12e} exceeds c1 |u - M|_2 = {:.12e}",
                grad_sq.sqrt(),
                c1 * dev
            ));
        }

        // <grad P, grad P> = <u - M, P> up to solver tolerance.
        let mut pairing = 0.0;
        for (&ui, &pi) in u.values().iter().zip(p.values()) {
            pairing += (ui - m) * pi;
        }
        pairing *= vol;
        let scale = grad_sq.abs().max(pairing.abs()).max(1e-300);
        if (grad_sq - pairing).abs() > 10.0 * lin_tol * scale + 1e-14 {
            return Err(format!(
                "trial {trial}: |grad P|^2 = {grad_sq:.12e} but <u - M, P> = {pairing:.12e}"
            ));
        }
    }
    Ok(())
}

fn step_invariants(
    cfg: &ScenarioConfig,
    grid: &Arc<Grid>,
    v0: &Field,
    tau: f64,
    seed: u64,
) -> Result<(), String> {
    let v_cap = v0.max().max(1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for trial in 0..STEP_SAMPLES {
        let u = random_field(grid, &mut rng, 0.0, 2.0);
        let v = random_field(grid, &mut rng, 0.0, v_cap);
        let motility = cfg
            .motility
            .clone()
            .with_positivity_required(cfg.mode == scenario::RunMode::Strict);
        let mut step_cfg =
            StepConfig::new(tau).map_err(|e| format!("trial {trial}: {e}"))?;
        step_cfg.lin_tol = cfg.lin_tol;
        let mut state = SimState::new(u, v, motility, step_cfg)
            .map_err(|e| format!("trial {trial}: {e}"))?;
        let report = state.advance().map_err(|e| format!("trial {trial}: {e}"))?;
        state.validate().map_err(|e| format!("trial {trial}: {e}"))?;
        let slack = report.dissipation_lhs - report.dissipation_rhs;
        if slack > 1e-10 * report.dissipation_rhs.max(1e-300) {
            return Err(format!(
                "trial {trial}: dissipation slack {slack:.3e} above tolerance"
            ));
        }
    }
    Ok(())
}

fn constants_sane(cfg: &ScenarioConfig, u0: &Field, v0: &Field) -> Result<(), String> {
    let k = chemsim_core::DerivedConstants::new(u0.grid(), &cfg.motility, u0, v0)
        .map_err(|e| e.to_string())?;
    if !(k.c1.is_finite() && k.c1 > 0.0) {
        return Err(format!("poincare constant must be positive, got {}", k.c1));
    }
    if !(k.v_sup.is_finite() && k.v_sup >= 0.0) {
        return Err(format!("signal sup must be nonnegative, got {}", k.v_sup));
    }
    if cfg.mode == scenario::RunMode::Strict {
        k.validate_positivity().map_err(|e| e.to_string())?;
    }
    if !(k.c2.is_finite() && k.c2 >= 0.0) {
        return Err(format!("composite weight must be nonnegative, got {}", k.c2));
    }
    Ok(())
}
